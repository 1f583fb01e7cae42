//! Numerical kernel: complex factorizations, null spaces, the Gaussian tail
//! function and its inverse, and reproducible random streams.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::function::erf::erfc;

use crate::error::{invalid, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Relative singular-value threshold used when no tolerance is supplied.
pub fn default_rank_tol(rows: usize, cols: usize) -> f64 {
    1e-10 * rows.max(cols) as f64
}

pub fn ensure_finite(a: &CMatrix) -> Result<()> {
    if a.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        invalid("matrix has non-finite entries")
    }
}

/// Thin singular value decomposition `A = U diag(σ) V†` with
/// `k = min(rows, cols)` singular values in decreasing order; `U` is
/// `rows×k` and `v_t` is `k×cols`, both with orthonormal columns/rows.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: CMatrix,
    pub singular_values: Vec<f64>,
    pub v_t: CMatrix,
}

const JACOBI_SWEEPS: usize = 60;

/// One-sided Jacobi SVD. nalgebra 0.35's bidiagonal SVD returns wrong
/// factors for some rank-deficient inputs (a 3×3 block with a zero column
/// reconstructed to 4e-3), and the matrices here are small, so the
/// slower but uniformly accurate Jacobi iteration is used instead.
pub fn svd(a: &CMatrix) -> Svd {
    let (rows, cols) = a.shape();
    if rows < cols {
        let t = svd(&a.adjoint());
        return Svd { u: t.v_t.adjoint(), singular_values: t.singular_values, v_t: t.u.adjoint() };
    }
    let mut w = a.clone();
    let mut v = CMatrix::identity(cols, cols);
    // Columns below this norm are rounding noise: they cannot be made
    // orthogonal to the others and are treated as null directions.
    let negligible = f64::EPSILON * a.norm();
    for _ in 0..JACOBI_SWEEPS {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let alpha = w.column(p).norm_squared();
                let beta = w.column(q).norm_squared();
                let gamma = w.column(p).dotc(&w.column(q));
                let g = gamma.norm();
                if alpha.sqrt() <= negligible || beta.sqrt() <= negligible || g <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let phase = gamma / g;
                let zeta = (beta - alpha) / (2.0 * g);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for m in [&mut w, &mut v] {
                    for r in 0..m.nrows() {
                        let (xp, xq) = (m[(r, p)], m[(r, q)]);
                        m[(r, p)] = xp * c - xq * phase.conj() * s;
                        m[(r, q)] = xp * phase * s + xq * c;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut order: Vec<usize> = (0..cols).collect();
    let norms: Vec<f64> = (0..cols).map(|j| w.column(j).norm()).collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]));
    let mut u = CMatrix::zeros(rows, cols);
    let mut v_t = CMatrix::zeros(cols, cols);
    let mut sigma = Vec::with_capacity(cols);
    let mut missing = Vec::new();
    for (k, &j) in order.iter().enumerate() {
        sigma.push(norms[j]);
        if norms[j] > negligible {
            u.set_column(k, &w.column(j).unscale(norms[j]));
        } else {
            missing.push(k);
        }
        v_t.set_row(k, &v.column(j).adjoint());
    }
    // Null columns carry no direction; complete U from the standard basis.
    let mut e = 0;
    for k in missing {
        while e < rows {
            let mut x = CVector::zeros(rows);
            x[e] = C64::new(1.0, 0.0);
            e += 1;
            for _ in 0..2 {
                for i in 0..cols {
                    if i != k {
                        let ui = u.column(i).into_owned();
                        x -= &ui * ui.dotc(&x);
                    }
                }
            }
            let n = x.norm();
            if n > 0.5 {
                u.set_column(k, &x.unscale(n));
                break;
            }
        }
    }
    Svd { u, singular_values: sigma, v_t }
}

/// Singular values sorted in decreasing order.
pub fn singular_values(a: &CMatrix) -> Vec<f64> {
    if a.is_empty() {
        return Vec::new();
    }
    svd(a).singular_values
}

pub fn max_singular_value(a: &CMatrix) -> f64 {
    singular_values(a).first().copied().unwrap_or(0.0)
}

/// Number of singular values above `tol * sigma_max`.
pub fn numerical_rank(a: &CMatrix, tol: f64) -> usize {
    let s = singular_values(a);
    match s.first() {
        Some(&smax) if smax > 0.0 => s.iter().filter(|&&x| x > tol * smax).count(),
        _ => 0,
    }
}

/// Orthonormal basis (as columns) of the numerical null space of `a`.
pub fn null_space(a: &CMatrix, tol: f64) -> Result<CMatrix> {
    if a.is_empty() {
        return invalid("null_space of an empty matrix");
    }
    if !(tol > 0.0) {
        return invalid(format!("tolerance must be positive, got {tol}"));
    }
    ensure_finite(a)?;
    let (rows, cols) = a.shape();
    // Pad with zero rows so the SVD returns a full right basis.
    let padded = if rows < cols {
        let mut p = CMatrix::zeros(cols, cols);
        p.view_mut((0, 0), (rows, cols)).copy_from(a);
        p
    } else {
        a.clone()
    };
    let svd = svd(&padded);
    let v_t = svd.v_t;
    let smax = svd.singular_values.first().copied().unwrap_or(0.0);
    let cut = tol * smax;
    let kernel: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| smax == 0.0 || svd.singular_values[i] <= cut)
        .collect();
    let mut basis = CMatrix::zeros(cols, kernel.len());
    for (k, &i) in kernel.iter().enumerate() {
        for r in 0..cols {
            basis[(r, k)] = v_t[(i, r)].conj();
        }
    }
    Ok(basis)
}

/// Eigenvalues of a Hermitian matrix in increasing order.
pub fn hermitian_eigenvalues(h: &CMatrix) -> Vec<f64> {
    let sym = symmetrize(h);
    let mut e: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    e.sort_by(f64::total_cmp);
    e
}

pub fn hermitian_min_eigenvalue(h: &CMatrix) -> f64 {
    hermitian_eigenvalues(h).first().copied().unwrap_or(0.0)
}

/// Cholesky factor `L` (lower, positive real diagonal) of a Hermitian
/// positive-definite matrix, `H = L L†`. Returns `None` as soon as a pivot is
/// not strictly positive. nalgebra's complex Cholesky takes complex square
/// roots of negative pivots and so cannot be used as a definiteness test.
pub fn hermitian_cholesky(h: &CMatrix) -> Option<CMatrix> {
    let n = h.nrows();
    if h.ncols() != n {
        return None;
    }
    let mut l = CMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = h[(j, j)].re;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let d = d.sqrt();
        l[(j, j)] = C64::new(d, 0.0);
        for i in j + 1..n {
            let mut v = h[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = v / d;
        }
    }
    Some(l)
}

/// `ln det H` from a factor returned by [`hermitian_cholesky`].
pub fn cholesky_logdet(l: &CMatrix) -> f64 {
    l.diagonal().iter().map(|d| 2.0 * d.re.ln()).sum()
}

/// `H^{-1}` from a factor returned by [`hermitian_cholesky`].
pub fn cholesky_inverse(l: &CMatrix) -> CMatrix {
    let n = l.nrows();
    let linv = l
        .clone()
        .solve_lower_triangular(&CMatrix::identity(n, n))
        .expect("factor has a positive diagonal");
    linv.adjoint() * linv
}

/// (H + H†)/2.
pub fn symmetrize(h: &CMatrix) -> CMatrix {
    (h + h.adjoint()).scale(0.5)
}

/// Moore-Penrose pseudo-inverse with relative cutoff `rtol`.
pub fn pseudo_inverse(a: &CMatrix, rtol: f64) -> CMatrix {
    let (rows, cols) = a.shape();
    let Svd { u, singular_values, v_t } = svd(a);
    let smax = singular_values.first().copied().unwrap_or(0.0);
    let mut out = CMatrix::zeros(cols, rows);
    for (k, &s) in singular_values.iter().enumerate() {
        if s > rtol * smax && s > 0.0 {
            let vk = v_t.row(k).adjoint();
            let uk = u.column(k).adjoint();
            out += (vk * uk).scale(1.0 / s);
        }
    }
    out
}

/// Max-norm of the entrywise difference between two equally shaped matrices.
pub fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// Gaussian tail probability Q(x) = P[N(0,1) > x].
pub fn q_function(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Inverse of the Gaussian tail function.
///
/// Safeguarded Newton iteration on `Q(x) - epsilon` inside a shrinking
/// bracket; the tail is evaluated through `erfc`, so the result is accurate
/// to well below 1e-9 over the whole open interval.
pub fn inverse_q(epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return invalid(format!("epsilon must lie in (0, 1), got {epsilon}"));
    }
    if epsilon == 0.5 {
        return Ok(0.0);
    }
    let density = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let (mut lo, mut hi) = (-40.0_f64, 40.0_f64);
    let mut x = 0.0_f64;
    for _ in 0..200 {
        let f = q_function(x) - epsilon;
        // Q is decreasing: f > 0 means the root is to the right.
        if f > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let d = density(x);
        let mut next = if d > 0.0 { x + f / d } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-15 * (1.0 + x.abs()) || hi - lo <= 1e-15 {
            return Ok(next);
        }
        x = next;
    }
    Ok(x)
}

/// Seeded random stream; equal `(seed, stream)` pairs reproduce the same draws.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Uniform draw in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        // 53 random mantissa bits.
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Uniform sample from the sphere of the given radius in `dim` real dimensions.
pub fn sample_real_sphere(dim: usize, radius: f64, rng: &mut RngStream) -> Result<Vec<f64>> {
    if dim == 0 {
        return invalid("sphere dimension must be at least 1");
    }
    if !(radius >= 0.0) || !radius.is_finite() {
        return invalid(format!("radius must be finite and non-negative, got {radius}"));
    }
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.standard_normal()).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-300 {
            return Ok(v.into_iter().map(|x| radius * x / norm).collect());
        }
    }
}
