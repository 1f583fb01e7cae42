//! Linear optical passive (LOP) transforms, displacements, on-off click
//! probabilities and the unitary dilation of a contraction.

use crate::constellation::AmplitudeVector;
use crate::error::{invalid, Result, UsdError};
use crate::numerics::{self, CMatrix, CVector, RngStream, C64};

const UNITARY_TOL: f64 = 1e-10;
/// Singular values within this of one are treated as one.
const SIGMA_SNAP: f64 = 1e-10;
/// Contraction slack accepted from round-off.
const SIGMA_TOL: f64 = 1e-8;

/// A square unitary acting on `m + m'` mode amplitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct LopUnitary(CMatrix);

impl LopUnitary {
    pub fn new(u: CMatrix) -> Result<Self> {
        numerics::ensure_finite(&u)?;
        if u.nrows() != u.ncols() || u.nrows() == 0 {
            return invalid(format!("a LOP unitary must be square and nonempty, got {}×{}", u.nrows(), u.ncols()));
        }
        let n = u.nrows();
        let err = numerics::max_abs_diff(&(u.adjoint() * &u), &CMatrix::identity(n, n));
        if err > UNITARY_TOL {
            return invalid(format!("matrix is not unitary (‖U†U - I‖_max = {err:.3e})"));
        }
        Ok(Self(u))
    }

    pub fn identity(n: usize) -> Self {
        Self(CMatrix::identity(n, n))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    /// Top-left `rows × cols` block.
    pub fn block(&self, rows: usize, cols: usize) -> CMatrix {
        self.0.view((0, 0), (rows, cols)).into_owned()
    }
}

/// Haar-random unitary (QR of a complex Ginibre matrix with the phases of
/// `R`'s diagonal divided out).
pub fn random_unitary(n: usize, rng: &mut RngStream) -> Result<LopUnitary> {
    if n == 0 {
        return invalid("unitary dimension must be positive");
    }
    let g = CMatrix::from_fn(n, n, |_, _| C64::new(rng.standard_normal(), rng.standard_normal()));
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..n {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { C64::new(1.0, 0.0) };
        let mut col = q.column_mut(j);
        col *= phase;
    }
    LopUnitary::new(q)
}

/// A unitary whose first column is the unit vector `col`.
pub fn complete_to_unitary(col: &CVector) -> Result<LopUnitary> {
    let n = col.len();
    let norm = col.norm();
    if n == 0 || (norm - 1.0).abs() > UNITARY_TOL {
        return invalid(format!("column must be a unit vector, has norm {norm}"));
    }
    // Gram-Schmidt on [col, e_1, ..., e_n], keeping the first n survivors.
    let mut basis: Vec<CVector> = vec![col.clone()];
    for k in 0..n {
        if basis.len() == n {
            break;
        }
        let mut v = CVector::zeros(n);
        v[k] = C64::new(1.0, 0.0);
        for _ in 0..2 {
            for b in &basis {
                let proj = b.dotc(&v);
                v -= b * proj;
            }
        }
        let len = v.norm();
        if len > 1e-6 {
            basis.push(v / C64::new(len, 0.0));
        }
    }
    LopUnitary::new(CMatrix::from_columns(&basis))
}

/// Per-mode displacement amplitudes, `D(γ)|α⟩ = |α + γ⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct Displacement(Vec<C64>);

impl Displacement {
    pub fn new(gamma: Vec<C64>) -> Result<Self> {
        if gamma.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return invalid("displacement amplitudes must be finite");
        }
        Ok(Self(gamma))
    }

    pub fn zero(n: usize) -> Self {
        Self(vec![C64::new(0.0, 0.0); n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.0
    }
}

/// Output amplitudes `β = U α`. Auxiliary modes must be present in `alpha`
/// (as explicit vacuum entries if unused).
pub fn apply_lop(u: &LopUnitary, alpha: &AmplitudeVector) -> Result<AmplitudeVector> {
    if alpha.modes() != u.dim() {
        return invalid(format!("LOP of dimension {} applied to {} modes", u.dim(), alpha.modes()));
    }
    let out = u.matrix() * CVector::from_column_slice(alpha.as_slice());
    AmplitudeVector::new(out.iter().copied().collect())
}

/// `1 - e^{-x}` without cancellation for small `x`.
pub fn click_probability(mean_photons: f64) -> f64 {
    -(-mean_photons).exp_m1()
}

/// Detected amplitudes `ζ = M α + γ` (the displacement acts after the LOP).
pub fn output_amplitudes(m: &CMatrix, gamma: Option<&Displacement>, alpha: &AmplitudeVector) -> Result<Vec<C64>> {
    if m.ncols() != alpha.modes() {
        return invalid(format!("detection block has {} columns but the state has {} modes", m.ncols(), alpha.modes()));
    }
    let mut zeta: Vec<C64> = (m * CVector::from_column_slice(alpha.as_slice())).iter().copied().collect();
    if let Some(g) = gamma {
        if g.len() != m.nrows() {
            return Err(UsdError::DimensionMismatch { expected: m.nrows(), actual: g.len() });
        }
        for (z, d) in zeta.iter_mut().zip(g.as_slice()) {
            *z += d;
        }
    }
    Ok(zeta)
}

/// On-off click probability of each output mode, `1 - exp(-|M_i·α + γ_i|²)`.
pub fn click_probabilities(m: &CMatrix, gamma: Option<&Displacement>, alpha: &AmplitudeVector) -> Result<Vec<f64>> {
    Ok(output_amplitudes(m, gamma, alpha)?.iter().map(|z| click_probability(z.norm_sqr())).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extension {
    pub unitary: LopUnitary,
    /// Extra modes beyond `max(rows, cols)`.
    pub aux_modes: usize,
}

/// Embeds a contraction `M` as the top-left block of a unitary.
///
/// With `M` zero-padded to `n×n`, `n = max(rows, cols)`, and SVD
/// `M = W D V†`, the unitary is
///
/// ```text
/// [ M         -W S P ]
/// [ Pᵀ S V†    Pᵀ D P ]      S = √(I - D²)
/// ```
///
/// where `P` selects the singular values strictly below one, so one extra
/// mode is used per such value. Singular values within 1e-10 of one, or
/// above one by at most 1e-8 (round-off), are snapped to one, and the block
/// is rebuilt from the snapped values. The result is not unique (SVD gauge).
pub fn extend_to_unitary(m: &CMatrix) -> Result<Extension> {
    numerics::ensure_finite(m)?;
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return invalid("cannot extend an empty matrix");
    }
    let n = rows.max(cols);
    let mut m0 = CMatrix::zeros(n, n);
    m0.view_mut((0, 0), (rows, cols)).copy_from(m);
    let numerics::Svd { u: w, singular_values: sigma, v_t } = numerics::svd(&m0);
    let sigma_max = sigma.iter().copied().fold(0.0, f64::max);
    if sigma_max > 1.0 + SIGMA_TOL {
        return Err(UsdError::InfeasibleExtension { sigma_max });
    }
    let short: Vec<usize> = (0..n).filter(|&i| sigma[i] < 1.0 - SIGMA_SNAP).collect();
    let k = short.len();
    // Rebuild the block from the snapped singular values so the result is
    // unitary to rounding; it moves `M` by at most SIGMA_TOL.
    let snapped = CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        n,
        sigma.iter().map(|&d| C64::new(if d < 1.0 - SIGMA_SNAP { d } else { 1.0 }, 0.0)),
    ));
    let mut u = CMatrix::zeros(n + k, n + k);
    u.view_mut((0, 0), (n, n)).copy_from(&(&w * snapped * &v_t));
    for (col, &i) in short.iter().enumerate() {
        let d = sigma[i];
        let s = (1.0 - d * d).max(0.0).sqrt();
        // -W S P: column `col` is -s_i w_i.
        for r in 0..n {
            u[(r, n + col)] = -w[(r, i)] * s;
        }
        // Pᵀ S V†: row `col` is s_i times row i of V†.
        for c in 0..n {
            u[(n + col, c)] = v_t[(i, c)] * s;
        }
        u[(n + col, n + col)] = C64::new(d, 0.0);
    }
    Ok(Extension { unitary: LopUnitary::new(u)?, aux_modes: k })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::max_abs_diff;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn re(x: f64) -> C64 {
        C64::new(x, 0.0)
    }

    #[test]
    fn rejects_non_unitary() {
        let m = CMatrix::from_element(2, 2, re(1.0));
        assert!(LopUnitary::new(m).is_err());
        assert!(LopUnitary::new(CMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn identity_and_beamsplitter() {
        let a = AmplitudeVector::new(vec![C64::new(0.3, 0.4), re(-1.0)]).unwrap();
        assert_eq!(apply_lop(&LopUnitary::identity(2), &a).unwrap(), a);

        let h = FRAC_1_SQRT_2;
        let bs = LopUnitary::new(CMatrix::from_row_slice(2, 2, &[re(h), re(h), re(h), re(-h)])).unwrap();
        let alpha = C64::new(0.7, -0.2);
        let out = apply_lop(&bs, &AmplitudeVector::new(vec![alpha, re(0.0)]).unwrap()).unwrap();
        assert!((out.as_slice()[0] - alpha * h).norm() < 1e-15);
        assert!((out.as_slice()[1] - alpha * h).norm() < 1e-15);
        assert!(apply_lop(&bs, &AmplitudeVector::real(&[1.0]).unwrap()).is_err());
    }

    #[test]
    fn click_probabilities_examples() {
        let a2: f64 = 0.8;
        let one = CMatrix::identity(1, 1);
        let p = click_probabilities(&one, None, &AmplitudeVector::real(&[a2.sqrt()]).unwrap()).unwrap();
        assert!((p[0] - (1.0 - (-a2).exp())).abs() < 1e-15);

        let vac = AmplitudeVector::real(&[0.0, 0.0]).unwrap();
        let p = click_probabilities(&CMatrix::identity(2, 2), Some(&Displacement::zero(2)), &vac).unwrap();
        assert_eq!(p, vec![0.0, 0.0]);

        // Displacement cancelling the field gives no click.
        let g = Displacement::new(vec![re(-0.5)]).unwrap();
        let p = click_probabilities(&one, Some(&g), &AmplitudeVector::real(&[0.5]).unwrap()).unwrap();
        assert_eq!(p, vec![0.0]);
        assert!(click_probabilities(&one, Some(&Displacement::zero(2)), &AmplitudeVector::real(&[0.5]).unwrap()).is_err());
    }

    #[test]
    fn extension_of_identity_needs_no_aux() {
        let ext = extend_to_unitary(&CMatrix::identity(3, 3)).unwrap();
        assert_eq!(ext.aux_modes, 0);
        assert!(max_abs_diff(ext.unitary.matrix(), &CMatrix::identity(3, 3)) < 1e-15);
    }

    #[test]
    fn extension_of_scalar() {
        let ext = extend_to_unitary(&CMatrix::from_element(1, 1, re(0.6))).unwrap();
        assert_eq!(ext.aux_modes, 1);
        let u = ext.unitary.matrix();
        assert!((u[(0, 0)] - re(0.6)).norm() < 1e-15);
        assert!((u[(1, 1)] - re(0.6)).norm() < 1e-15);
        assert!((u[(0, 1)].norm() - 0.8).abs() < 1e-15);
        assert!((u[(1, 0)].norm() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn extension_of_random_contraction() {
        let mut rng = RngStream::new(3, 1);
        for _ in 0..20 {
            let a = CMatrix::from_fn(2, 3, |_, _| C64::new(rng.standard_normal(), rng.standard_normal()));
            let m = a.scale(0.999 / numerics::max_singular_value(&a));
            let ext = extend_to_unitary(&m).unwrap();
            assert!(max_abs_diff(&ext.unitary.block(2, 3), &m) < 1e-10);
            assert!(ext.aux_modes <= 3);
        }
        let too_big = CMatrix::from_element(1, 1, re(1.1));
        assert!(matches!(extend_to_unitary(&too_big), Err(UsdError::InfeasibleExtension { .. })));
    }

    #[test]
    fn completion_keeps_the_column() {
        let col = CVector::from_vec(vec![re(0.6), C64::new(0.0, 0.48), re(0.64)]);
        let u = complete_to_unitary(&col).unwrap();
        assert!(max_abs_diff(&u.block(3, 1), &CMatrix::from_column_slice(3, 1, col.as_slice())) < 1e-15);
        let e1 = CVector::from_vec(vec![re(1.0), re(0.0)]);
        assert!(max_abs_diff(complete_to_unitary(&e1).unwrap().matrix(), &CMatrix::identity(2, 2)) < 1e-15);
        assert!(complete_to_unitary(&CVector::from_vec(vec![re(2.0)])).is_err());
    }

    #[test]
    fn random_unitaries_are_unitary_and_reproducible() {
        let u = random_unitary(4, &mut RngStream::new(1, 2)).unwrap();
        let v = random_unitary(4, &mut RngStream::new(1, 2)).unwrap();
        assert_eq!(u, v);
        assert!(max_abs_diff(&(u.matrix().adjoint() * u.matrix()), &CMatrix::identity(4, 4)) < 1e-12);
    }
}
