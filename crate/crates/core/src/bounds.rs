//! Globally optimal USD bounds for pure states.
//!
//! Two independent routes are provided. [`peres_terno_bound`] works with the
//! reciprocal basis of an explicit embedding of the states and optimizes the
//! weights of the conclusive POVM elements. [`bergou_bound`] optimizes the
//! inconclusive probabilities `q_j` directly through the condition
//! `C(q) = G - I + diag(q) ⪰ 0` on the Hilbert Gram matrix `G`, with a closed
//! solution for symmetric three-state codes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::constellation::{hilbert_gram, Constellation};
use crate::error::{invalid, Result, UsdError};
use crate::numerics::{self, CMatrix, CVector};
use crate::optim::{solve_lmi, BarrierOptions, RankOneLmi, Separable};

/// Hilbert Gram matrices with a smaller eigenvalue are treated as singular.
pub const LI_TOL: f64 = 1e-10;
const CERTIFICATE_TOL: f64 = 1e-8;
const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundMethod {
    PeresTerno,
    BergouNumeric,
    BergouAnalyticC3,
    ClosedForm,
}

impl fmt::Display for BoundMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::PeresTerno => "peres-terno",
            Self::BergouNumeric => "bergou-numeric",
            Self::BergouAnalyticC3 => "bergou-analytic-c3",
            Self::ClosedForm => "closed-form",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundResult {
    pub method: BoundMethod,
    pub p0: f64,
    /// Conditional inconclusive probability of each state.
    pub q: Vec<f64>,
    /// Smallest eigenvalue of `C(q)`.
    pub certificate: f64,
    /// `arg(G_12 G_23 G_31)` for three-state codes.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub phase: Option<f64>,
}

fn checked_gram(code: &Constellation) -> Result<CMatrix> {
    let g = hilbert_gram(code);
    let min_eigenvalue = numerics::hermitian_min_eigenvalue(&g);
    if min_eigenvalue <= LI_TOL {
        return Err(UsdError::StatesNotLinearlyIndependent { min_eigenvalue });
    }
    Ok(g)
}

/// `C(q) = G - I + diag(q)`: the matrix of the inconclusive POVM element in
/// the basis of the states.
pub fn c_matrix(gram: &CMatrix, q: &[f64]) -> CMatrix {
    let mut c = gram.clone();
    for (j, qj) in q.iter().enumerate() {
        c[(j, j)] = numerics::C64::new(*qj, 0.0);
    }
    c
}

fn finish(method: BoundMethod, code: &Constellation, gram: &CMatrix, q: Vec<f64>, phase: Option<f64>) -> BoundResult {
    let q: Vec<f64> = q.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let p0 = code.priors().iter().zip(&q).map(|(p, q)| p * q).sum();
    let certificate = numerics::hermitian_min_eigenvalue(&c_matrix(gram, &q));
    BoundResult { method, p0, q, certificate, phase }
}

fn triple_phase(gram: &CMatrix) -> Option<f64> {
    (gram.nrows() == 3).then(|| (gram[(0, 1)] * gram[(1, 2)] * gram[(2, 0)]).arg())
}

/// Peres–Terno route.
///
/// With `G = L L†` the states are embedded as the columns `u_j` of `L†`;
/// the reciprocal vectors `v_j` (columns of `(L†)^{-†}`) satisfy
/// `⟨v_i|u_j⟩ = δ_ij`. The conclusive elements are `w_j |v_j⟩⟨v_j|` and the
/// solver maximizes `Σ p_j w_j` subject to `Σ w_j |v_j⟩⟨v_j| ⪯ I`.
pub fn peres_terno_bound(code: &Constellation) -> Result<BoundResult> {
    let gram = checked_gram(code)?;
    let c = code.len();
    let l = numerics::hermitian_cholesky(&gram).ok_or(UsdError::StatesNotLinearlyIndependent {
        min_eigenvalue: numerics::hermitian_min_eigenvalue(&gram),
    })?;
    // V = (L†)^{-†} = L^{-1}; columns are the reciprocal vectors.
    let v = l
        .clone()
        .solve_lower_triangular(&CMatrix::identity(c, c))
        .ok_or_else(|| UsdError::SolverFailure("singular Cholesky factor".into()))?;
    let vectors: Vec<CVector> = (0..c).map(|j| v.column(j).into_owned()).collect();
    let total: f64 = vectors.iter().map(|v| v.norm_squared()).sum();
    let lmi = RankOneLmi { base: CMatrix::identity(c, c), vectors, signs: vec![-1.0; c] };
    let neg_priors: Vec<f64> = code.priors().iter().map(|p| -p).collect();
    let sol = solve_lmi(
        &lmi,
        &Separable::Linear(neg_priors),
        &vec![0.0; c],
        &vec![f64::INFINITY; c],
        &vec![0.5 / total; c],
        BarrierOptions::default(),
    )?;
    let q = sol.x.iter().map(|w| 1.0 - w).collect();
    let result = finish(BoundMethod::PeresTerno, code, &gram, q, triple_phase(&gram));
    certified(result)
}

fn certified(result: BoundResult) -> Result<BoundResult> {
    if result.certificate < -CERTIFICATE_TOL {
        return Err(UsdError::SolverFailure(format!(
            "{} bound is infeasible: min eigenvalue of C(q) is {:.3e}",
            result.method, result.certificate
        )));
    }
    Ok(result)
}

/// Bergou route: minimize `Σ p_j q_j` subject to `G - I + diag(q) ⪰ 0`,
/// `q_j ≤ 1`.
///
/// Three-state codes with uniform priors, vanishing triple phase and two
/// equal overlaps use the closed-form solution; all other codes go to the
/// log-det barrier solver.
pub fn bergou_bound(code: &Constellation) -> Result<BoundResult> {
    let gram = checked_gram(code)?;
    if let Some(q) = bergou_c3_symmetric(code, &gram) {
        let result = finish(BoundMethod::BergouAnalyticC3, code, &gram, q, triple_phase(&gram));
        if result.certificate >= -CERTIFICATE_TOL {
            return Ok(result);
        }
    }
    bergou_numeric(code)
}

/// Always uses the barrier solver.
pub fn bergou_numeric(code: &Constellation) -> Result<BoundResult> {
    let gram = checked_gram(code)?;
    let c = code.len();
    let lmi = RankOneLmi::plus_diagonal(gram.clone() - CMatrix::identity(c, c));
    // q = 1 - λ/2 is strictly feasible when λ = λ_min(G) > 0.
    let start = 1.0 - 0.5 * numerics::hermitian_min_eigenvalue(&gram);
    let sol = solve_lmi(
        &lmi,
        &Separable::Linear(code.priors().to_vec()),
        &vec![f64::NEG_INFINITY; c],
        &vec![1.0; c],
        &vec![start; c],
        BarrierOptions::default(),
    )?;
    certified(finish(BoundMethod::BergouNumeric, code, &gram, sol.x, triple_phase(&gram)))
}

/// Closed-form optimum for three states with uniform priors, real positive
/// triple product and `|G_ka| = |G_kb|` for some `k`.
///
/// In the rescaled variables `q̃_a = q_a / s_ab` (and `q̃_k = q_k s_ab / s²`)
/// the determinant condition reads `q̃² q̃_k - 2q̃ - q̃_k + 2 ≥ 0`, so on the
/// symmetric face `q̃_k = 2/(q̃ + 1)`. The objective
/// `2 s_ab q̃ + 2 s²/(s_ab (q̃ + 1))` is convex in `q̃`; its stationary point
/// `q̃ + 1 = s / s_ab` is clamped to the interval allowed by `q_j ≤ 1`.
fn bergou_c3_symmetric(code: &Constellation, gram: &CMatrix) -> Option<Vec<f64>> {
    if code.len() != 3 || !code.is_uniform() {
        return None;
    }
    let prod = gram[(0, 1)] * gram[(1, 2)] * gram[(2, 0)];
    if prod.norm() == 0.0 || prod.arg().abs() > SYMMETRY_TOL {
        return None;
    }
    let overlap = |i: usize, j: usize| gram[(i, j)].norm();
    let k = (0..3).find(|&k| {
        let (a, b) = ((k + 1) % 3, (k + 2) % 3);
        let (sa, sb) = (overlap(k, a), overlap(k, b));
        (sa - sb).abs() <= SYMMETRY_TOL * sa.max(sb)
    })?;
    let (a, b) = ((k + 1) % 3, (k + 2) % 3);
    let s = 0.5 * (overlap(k, a) + overlap(k, b));
    let s_ab = overlap(a, b);
    let r = 1.0 / s_ab;
    let r3 = s_ab / (s * s);
    let lo = (2.0 / r3 - 1.0).max(1.0);
    if lo > r {
        return None;
    }
    let qt = (s / s_ab - 1.0).clamp(lo, r);
    let qt3 = 2.0 / (qt + 1.0);
    let mut q = vec![0.0; 3];
    q[a] = qt * s_ab;
    q[b] = qt * s_ab;
    q[k] = qt3 * s * s / s_ab;
    Some(q)
}

/// Families with closed-form global bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnalyticFamily {
    SingleDegenerateGuha,
    DoubleDegenerate,
    Psk3,
}

impl FromStr for AnalyticFamily {
    type Err = UsdError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "single-degenerate-guha" | "guha" | "sd" => Ok(Self::SingleDegenerateGuha),
            "double-degenerate" | "dd" => Ok(Self::DoubleDegenerate),
            "3psk" | "psk3" => Ok(Self::Psk3),
            other => invalid(format!("no closed-form bound for '{other}'")),
        }
    }
}

/// Closed-form global bound for uniform priors.
pub fn analytic_bound(family: AnalyticFamily, alpha_sq: f64) -> Result<f64> {
    if !(alpha_sq >= 0.0) || !alpha_sq.is_finite() {
        return invalid(format!("|α|² must be finite and non-negative, got {alpha_sq}"));
    }
    let a = alpha_sq;
    let e = |x: f64| x.exp();
    Ok(match family {
        AnalyticFamily::SingleDegenerateGuha => {
            if e(a) < std::f64::consts::SQRT_2 {
                (2.0 * e(-4.0 * a) + 1.0) / 3.0
            } else {
                2.0 / 3.0 * (2.0 * e(-2.0 * a) - e(-4.0 * a))
            }
        }
        AnalyticFamily::DoubleDegenerate => {
            if e(a) < 4.0 {
                (4.0 * e(-a) - 2.0 * e(-2.0 * a) + 1.0) / 3.0
            } else {
                2.0 / 3.0 * (2.0 * e(-a / 2.0) - e(-2.0 * a))
            }
        }
        AnalyticFamily::Psk3 => {
            let x = 3f64.sqrt() * a / 2.0;
            let (s, c) = x.sin_cos();
            let best = (-2.0 * c).max(c + 3f64.sqrt() * s).max(c - 3f64.sqrt() * s);
            e(-1.5 * a) * best
        }
    })
}
