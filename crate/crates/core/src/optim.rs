//! Small dense optimizers used by the receiver and bound solvers.
//!
//! The workhorse is a log-det barrier method for problems of the form
//!
//! ```text
//! minimize   Σ_j f_j(x_j)
//! subject to F(x) = F0 + Σ_j s_j x_j a_j a_j† ⪰ 0,   lo_j ≤ x_j ≤ hi_j
//! ```
//!
//! with separable convex `f_j` and rank-one LMI terms. Every bound in this
//! crate (and the inner problem of the single-detection receivers) has this
//! shape, with matrix sizes of a handful of modes, so dense Newton steps are
//! cheap.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, UsdError};
use crate::numerics::{self, CMatrix, CVector, C64};

/// Hermitian LMI `F(x) = base + Σ_j signs[j] · x_j · a_j a_j†`.
#[derive(Debug, Clone)]
pub(crate) struct RankOneLmi {
    pub base: CMatrix,
    pub vectors: Vec<CVector>,
    pub signs: Vec<f64>,
}

impl RankOneLmi {
    /// `base - diag(x)` for a `c×c` base.
    pub fn minus_diagonal(base: CMatrix) -> Self {
        let n = base.nrows();
        Self::diagonal(base, n, -1.0)
    }

    /// `base + diag(x)` for a `c×c` base.
    pub fn plus_diagonal(base: CMatrix) -> Self {
        let n = base.nrows();
        Self::diagonal(base, n, 1.0)
    }

    fn diagonal(base: CMatrix, n: usize, sign: f64) -> Self {
        let vectors = (0..n)
            .map(|j| {
                let mut e = CVector::zeros(n);
                e[j] = C64::new(1.0, 0.0);
                e
            })
            .collect();
        Self { base, vectors, signs: vec![sign; n] }
    }

    pub fn eval(&self, x: &[f64]) -> CMatrix {
        let mut f = self.base.clone();
        for ((a, &s), &xj) in self.vectors.iter().zip(&self.signs).zip(x) {
            f += (a * a.adjoint()).scale(s * xj);
        }
        f
    }

    fn dim(&self) -> usize {
        self.base.nrows()
    }
}

/// Separable objective.
#[derive(Debug, Clone)]
pub(crate) enum Separable {
    /// Σ w_j x_j
    Linear(Vec<f64>),
    /// Σ w_j exp(-x_j)
    NegExp(Vec<f64>),
}

impl Separable {
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Separable::Linear(w) => w.iter().zip(x).map(|(w, x)| w * x).sum(),
            Separable::NegExp(w) => w.iter().zip(x).map(|(w, x)| w * (-x).exp()).sum(),
        }
    }

    fn d1(&self, j: usize, x: f64) -> f64 {
        match self {
            Separable::Linear(w) => w[j],
            Separable::NegExp(w) => -w[j] * (-x).exp(),
        }
    }

    fn d2(&self, j: usize, x: f64) -> f64 {
        match self {
            Separable::Linear(_) => 0.0,
            Separable::NegExp(w) => w[j] * (-x).exp(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct BarrierOptions {
    /// Stop once the barrier duality-gap bound `count / t` drops below this.
    pub gap_tol: f64,
    pub t0: f64,
    pub mu: f64,
    pub max_newton: usize,
}

impl Default for BarrierOptions {
    fn default() -> Self {
        Self { gap_tol: 1e-12, t0: 1.0, mu: 12.0, max_newton: 4000 }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct BarrierSolution {
    pub x: Vec<f64>,
    /// Approximate dual matrix `(1/t) F(x)^{-1}` for the LMI.
    pub dual: CMatrix,
    /// Barrier objective divided by `t` at the returned point. As a function
    /// of the LMI data it is smooth, and its gradient is given exactly by
    /// `dual`.
    pub barrier_value: f64,
    pub newton_steps: usize,
}

struct Problem<'a> {
    lmi: &'a RankOneLmi,
    obj: &'a Separable,
    lower: &'a [f64],
    upper: &'a [f64],
}

impl Problem<'_> {
    fn in_box(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(self.upper))
            .all(|(&x, (&lo, &hi))| x > lo && x < hi)
    }

    fn barrier_count(&self) -> usize {
        self.lmi.dim()
            + self.lower.iter().filter(|v| v.is_finite()).count()
            + self.upper.iter().filter(|v| v.is_finite()).count()
    }

    /// Barrier objective, or `None` outside the domain.
    fn phi(&self, x: &[f64], t: f64) -> Option<f64> {
        if !self.in_box(x) {
            return None;
        }
        let l = numerics::hermitian_cholesky(&self.lmi.eval(x))?;
        let logdet = numerics::cholesky_logdet(&l);
        if !logdet.is_finite() {
            return None;
        }
        let mut box_term = 0.0;
        for (j, &xj) in x.iter().enumerate() {
            if self.lower[j].is_finite() {
                box_term -= (xj - self.lower[j]).ln();
            }
            if self.upper[j].is_finite() {
                box_term -= (self.upper[j] - xj).ln();
            }
        }
        Some(t * self.obj.value(x) - logdet + box_term)
    }
}

const CENTERING_STEPS: usize = 80;

/// Minimizes a separable objective over a rank-one LMI with box bounds.
/// `x0` must be strictly feasible.
pub(crate) fn solve_lmi(
    lmi: &RankOneLmi,
    obj: &Separable,
    lower: &[f64],
    upper: &[f64],
    x0: &[f64],
    opts: BarrierOptions,
) -> Result<BarrierSolution> {
    let prob = Problem { lmi, obj, lower, upper };
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut t = opts.t0;
    if prob.phi(&x, t).is_none() {
        return Err(UsdError::SolverFailure("barrier start point is not strictly feasible".into()));
    }
    let count = prob.barrier_count() as f64;
    let mut steps = 0usize;
    loop {
        // Centering.
        for _ in 0..CENTERING_STEPS {
            if steps >= opts.max_newton {
                return Err(UsdError::SolverFailure(format!(
                    "barrier method exceeded {} Newton steps (gap bound {:.3e})",
                    opts.max_newton,
                    count / t
                )));
            }
            steps += 1;
            let f = lmi.eval(&x);
            let sinv = match numerics::hermitian_cholesky(&f) {
                Some(l) => numerics::cholesky_inverse(&l),
                None => return Err(UsdError::SolverFailure("lost feasibility".into())),
            };
            let b: Vec<CVector> = lmi.vectors.iter().map(|a| &sinv * a).collect();
            let mut grad = DVector::<f64>::zeros(n);
            let mut hess = DMatrix::<f64>::zeros(n, n);
            for j in 0..n {
                let sj = lmi.signs[j];
                grad[j] = t * obj.d1(j, x[j]) - sj * lmi.vectors[j].dotc(&b[j]).re;
                hess[(j, j)] += t * obj.d2(j, x[j]);
                if lower[j].is_finite() {
                    let d = x[j] - lower[j];
                    grad[j] -= 1.0 / d;
                    hess[(j, j)] += 1.0 / (d * d);
                }
                if upper[j].is_finite() {
                    let d = upper[j] - x[j];
                    grad[j] += 1.0 / d;
                    hess[(j, j)] += 1.0 / (d * d);
                }
                for i in 0..=j {
                    let v = lmi.signs[i] * sj * lmi.vectors[i].dotc(&b[j]).norm_sqr();
                    hess[(i, j)] += v;
                    if i != j {
                        hess[(j, i)] += v;
                    }
                }
            }
            let step = newton_direction(&hess, &grad);
            let decrement = -grad.dot(&step);
            let final_stage = count / t <= opts.gap_tol;
            let tol = if final_stage { 1e-10 } else { 1e-5 };
            if !(decrement > 0.0) || decrement * 0.5 <= tol {
                break;
            }
            let phi0 = prob.phi(&x, t).unwrap_or(f64::INFINITY);
            let mut s = 1.0;
            let mut accepted = false;
            for _ in 0..80 {
                let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, d)| a + s * d).collect();
                if let Some(p) = prob.phi(&trial, t) {
                    if p <= phi0 - 0.25 * s * decrement {
                        // An accepted step that does not lower the barrier
                        // value means rounding noise has been reached.
                        accepted = p < phi0;
                        x = trial;
                        break;
                    }
                }
                s *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if count / t <= opts.gap_tol {
            break;
        }
        t *= opts.mu;
    }
    let f = lmi.eval(&x);
    let dual = numerics::hermitian_cholesky(&f)
        .map(|l| numerics::cholesky_inverse(&l).scale(1.0 / t))
        .ok_or_else(|| UsdError::SolverFailure("final point infeasible".into()))?;
    let barrier_value = prob.phi(&x, t).unwrap_or(f64::INFINITY) / t;
    Ok(BarrierSolution { x, dual, barrier_value, newton_steps: steps })
}

fn newton_direction(hess: &DMatrix<f64>, grad: &DVector<f64>) -> DVector<f64> {
    let rhs = -grad;
    if let Some(ch) = hess.clone().cholesky() {
        return ch.solve(&rhs);
    }
    let scale = hess.diagonal().iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1e-300);
    let mut damped = hess.clone();
    let mut lambda = 1e-12 * scale;
    loop {
        for i in 0..damped.nrows() {
            damped[(i, i)] = hess[(i, i)] + lambda;
        }
        if let Some(ch) = damped.clone().cholesky() {
            return ch.solve(&rhs);
        }
        lambda *= 10.0;
        if lambda > 1e6 * scale {
            return rhs.scale(1.0 / scale);
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct BfgsOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
    /// Stop when the objective improves by less than this over an iteration.
    pub f_tol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self { max_iter: 400, grad_tol: 1e-9, f_tol: 1e-15 }
    }
}

/// Quasi-Newton minimization. `f` returns value and gradient, or `None`
/// outside its domain.
pub(crate) fn bfgs<F>(mut f: F, x0: &[f64], opts: BfgsOptions) -> Option<Minimum>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let mut x = DVector::from_column_slice(x0);
    let (mut fx, g) = f(x.as_slice())?;
    let mut g = DVector::from_vec(g);
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut stalls = 0;
    for it in 0..opts.max_iter {
        if g.norm() <= opts.grad_tol {
            return Some(Minimum { x: x.data.into(), value: fx, iterations: it, converged: true });
        }
        let mut dir = -(&h * &g);
        let mut slope = g.dot(&dir);
        if !(slope < 0.0) {
            h = DMatrix::identity(n, n);
            dir = -g.clone();
            slope = g.dot(&dir);
        }
        let mut step = 1.0;
        let mut next = None;
        let min_step = 1e-13 * (1.0 + x.norm()) / dir.norm().max(1e-300);
        while step >= min_step {
            let trial = &x + dir.scale(step);
            if let Some((ft, gt)) = f(trial.as_slice()) {
                if ft.is_finite() && ft <= fx + 1e-4 * step * slope {
                    next = Some((trial, ft, DVector::from_vec(gt)));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((xn, fn_, gn)) = next else {
            return Some(Minimum { x: x.data.into(), value: fx, iterations: it, converged: false });
        };
        let s = &xn - &x;
        let y = &gn - &g;
        let sy = s.dot(&y);
        if sy > 1e-300 {
            if it == 0 {
                h = DMatrix::identity(n, n).scale(sy / y.dot(&y));
            }
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            // H ← (I - ρ s yᵀ) H (I - ρ y sᵀ) + ρ s sᵀ
            h = &h - (&hy * s.transpose() + &s * hy.transpose()).scale(rho)
                + (&s * s.transpose()).scale(rho * rho * yhy + rho);
        }
        let improvement = fx - fn_;
        x = xn;
        fx = fn_;
        g = gn;
        if improvement <= opts.f_tol * (1.0 + fx.abs()) {
            stalls += 1;
            if stalls >= 3 {
                return Some(Minimum { x: x.data.into(), value: fx, iterations: it + 1, converged: true });
            }
        } else {
            stalls = 0;
        }
    }
    Some(Minimum { x: x.data.into(), value: fx, iterations: opts.max_iter, converged: false })
}

/// Nelder-Mead simplex search; `f` may return +∞ outside its domain.
pub(crate) fn nelder_mead<F>(mut f: F, x0: &[f64], scale: f64, max_evals: usize, x_tol: f64) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] += scale;
        simplex.push(p);
    }
    let mut values: Vec<f64> = simplex.iter().map(|p| f(p)).collect();
    let mut evals = n + 1;
    let mut converged = false;
    while evals < max_evals {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();
        let spread = simplex[1..]
            .iter()
            .map(|p| p.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if spread <= x_tol {
            converged = true;
            break;
        }
        let centroid: Vec<f64> =
            (0..n).map(|k| simplex[..n].iter().map(|p| p[k]).sum::<f64>() / n as f64).collect();
        let along = |t: f64| -> Vec<f64> {
            centroid.iter().zip(&simplex[n]).map(|(c, w)| c + t * (w - c)).collect()
        };
        let reflected = along(-1.0);
        let fr = f(&reflected);
        evals += 1;
        if fr < values[0] {
            let expanded = along(-2.0);
            let fe = f(&expanded);
            evals += 1;
            if fe < fr {
                simplex[n] = expanded;
                values[n] = fe;
            } else {
                simplex[n] = reflected;
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            simplex[n] = reflected;
            values[n] = fr;
        } else {
            let contracted = if fr < values[n] { along(-0.5) } else { along(0.5) };
            let fc = f(&contracted);
            evals += 1;
            if fc < values[n].min(fr) {
                simplex[n] = contracted;
                values[n] = fc;
            } else {
                for i in 1..=n {
                    let shrunk: Vec<f64> =
                        simplex[i].iter().zip(&simplex[0]).map(|(p, b)| b + 0.5 * (p - b)).collect();
                    values[i] = f(&shrunk);
                    simplex[i] = shrunk;
                }
                evals += n;
            }
        }
    }
    let best = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap();
    Minimum { x: simplex[best].clone(), value: values[best], iterations: evals, converged }
}

/// Levenberg-Marquardt for square-summable residuals. `f` returns the
/// residual vector and its Jacobian. Returns the final point and residual norm.
pub(crate) fn levenberg_marquardt<F>(mut f: F, x0: &[f64], max_iter: usize) -> (Vec<f64>, f64)
where
    F: FnMut(&[f64]) -> (DVector<f64>, DMatrix<f64>),
{
    let mut x = DVector::from_column_slice(x0);
    let (mut r, mut j) = f(x.as_slice());
    let mut cost = r.norm_squared();
    let mut lambda = 1e-3;
    for _ in 0..max_iter {
        if cost.sqrt() < 1e-15 {
            break;
        }
        let jt = j.transpose();
        let jtj = &jt * &j;
        let jtr = &jt * &r;
        if jtr.norm() < 1e-30 {
            break;
        }
        let mut improved = false;
        for _ in 0..30 {
            let mut a = jtj.clone();
            for i in 0..a.nrows() {
                a[(i, i)] += lambda * (1.0 + jtj[(i, i)]);
            }
            let Some(ch) = a.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let dx = ch.solve(&(-&jtr));
            let xn = &x + &dx;
            let (rn, jn) = f(xn.as_slice());
            let cn = rn.norm_squared();
            if cn.is_finite() && cn < cost {
                x = xn;
                r = rn;
                j = jn;
                cost = cn;
                lambda = (lambda * 0.3).max(1e-15);
                improved = true;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    (x.data.into(), cost.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn linear_lmi_matches_eigenvalue_solution() {
        // min Σ q_j / 3 s.t. G - I + diag(q) ⪰ 0 with G = (1-s) I + s 11ᵀ:
        // optimum q_j = s (smallest eigenvalue argument).
        let s = 0.3;
        let g = CMatrix::from_fn(3, 3, |i, j| if i == j { c(1.0) } else { c(s) });
        let lmi = RankOneLmi::plus_diagonal(g - CMatrix::identity(3, 3));
        let sol = solve_lmi(
            &lmi,
            &Separable::Linear(vec![1.0 / 3.0; 3]),
            &[f64::NEG_INFINITY; 3],
            &[1.0; 3],
            &[0.9; 3],
            BarrierOptions::default(),
        )
        .unwrap();
        for q in &sol.x {
            assert!((q - s).abs() < 1e-9, "{q}");
        }
    }

    #[test]
    fn exp_objective_with_diagonal_gram() {
        let g = CMatrix::from_diagonal(&CVector::from_vec(vec![c(0.5), c(2.0)]));
        let lmi = RankOneLmi::minus_diagonal(g);
        let sol = solve_lmi(
            &lmi,
            &Separable::NegExp(vec![0.5, 0.5]),
            &[0.0; 2],
            &[f64::INFINITY; 2],
            &[0.1, 0.1],
            BarrierOptions::default(),
        )
        .unwrap();
        assert!((sol.x[0] - 0.5).abs() < 1e-9);
        assert!((sol.x[1] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn bfgs_minimizes_rosenbrock() {
        let f = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
            Some((v, g))
        };
        let m = bfgs(f, &[-1.2, 1.0], BfgsOptions { max_iter: 2000, ..Default::default() }).unwrap();
        assert!((m.x[0] - 1.0).abs() < 1e-6 && (m.x[1] - 1.0).abs() < 1e-6, "{:?}", m.x);
    }

    #[test]
    fn nelder_mead_finds_quadratic_minimum() {
        let m = nelder_mead(|x| (x[0] - 0.3).powi(2) + 2.0 * (x[1] + 0.1).powi(2), &[1.0, 1.0], 0.5, 5000, 1e-12);
        assert!((m.x[0] - 0.3).abs() < 1e-9 && (m.x[1] + 0.1).abs() < 1e-9);
    }

    #[test]
    fn levenberg_marquardt_solves_zero_residual_system() {
        let f = |x: &[f64]| {
            let r = DVector::from_vec(vec![x[0] * x[0] - 2.0, x[0] * x[1] - 1.0]);
            let j = DMatrix::from_row_slice(2, 2, &[2.0 * x[0], 0.0, x[1], x[0]]);
            (r, j)
        };
        let (x, res) = levenberg_marquardt(f, &[1.0, 1.0], 200);
        assert!(res < 1e-12);
        assert!((x[0] - 2f64.sqrt()).abs() < 1e-10);
    }
}
