//! Channel-level figures of merit for USD receivers: Shannon capacity,
//! dispersion, the normal-approximation finite-length rate and the low-power
//! scaling exponent of `1 - P0`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, UsdError};
use crate::numerics;
use crate::optim::nelder_mead;

const ROW_TOL: f64 = 1e-12;
const UNAMBIGUITY_TOL: f64 = 1e-10;

/// Transition matrix `p(y|x)`, `x = 1..c` (rows), `y = 0..c` (columns) with
/// `y = 0` the inconclusive outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelModel {
    transition: DMatrix<f64>,
}

impl ChannelModel {
    pub fn new(transition: DMatrix<f64>) -> Result<Self> {
        let (c, outs) = transition.shape();
        if c == 0 || outs != c + 1 {
            return invalid(format!("a channel over {c} inputs needs {} outputs, got {outs}", c + 1));
        }
        for (x, row) in transition.row_iter().enumerate() {
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return invalid(format!("row {x} has entries outside [0, 1]"));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_TOL {
                return invalid(format!("row {x} sums to {sum}"));
            }
        }
        Ok(Self { transition })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let c = rows.len();
        if rows.iter().any(|r| r.len() != c + 1) {
            return invalid("every row needs c + 1 entries");
        }
        Self::new(DMatrix::from_fn(c, c + 1, |x, y| rows[x][y]))
    }

    /// USD channel with `p(0|x) = q_x` and `p(x|x) = 1 - q_x`.
    pub fn from_inconclusive(q: &[f64]) -> Result<Self> {
        let c = q.len();
        if q.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return invalid("inconclusive probabilities must lie in [0, 1]");
        }
        Self::new(DMatrix::from_fn(c, c + 1, |x, y| match y {
            0 => q[x],
            y if y == x + 1 => 1.0 - q[x],
            _ => 0.0,
        }))
    }

    pub fn inputs(&self) -> usize {
        self.transition.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.transition.ncols()
    }

    /// `p(y|x)` with zero-based input index and `y = 0` inconclusive.
    pub fn p(&self, x: usize, y: usize) -> f64 {
        self.transition[(x, y)]
    }

    pub fn inconclusive(&self, x: usize) -> f64 {
        self.transition[(x, 0)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.transition.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    /// Largest conclusive probability assigned to a wrong label.
    pub fn max_wrong_conclusive(&self) -> f64 {
        let c = self.inputs();
        let mut worst = 0.0_f64;
        for x in 0..c {
            for y in 1..=c {
                if y != x + 1 {
                    worst = worst.max(self.transition[(x, y)]);
                }
            }
        }
        worst
    }

    pub fn is_usd(&self) -> bool {
        self.max_wrong_conclusive() <= UNAMBIGUITY_TOL
    }

    /// `Σ p_x p(0|x)`.
    pub fn average_inconclusive(&self, px: &[f64]) -> f64 {
        px.iter().enumerate().map(|(x, p)| p * self.inconclusive(x)).sum()
    }

    fn output_distribution(&self, px: &[f64]) -> Vec<f64> {
        (0..self.outputs()).map(|y| (0..self.inputs()).map(|x| px[x] * self.p(x, y)).sum()).collect()
    }

    fn check_input(&self, px: &[f64]) -> Result<()> {
        if px.len() != self.inputs() {
            return Err(UsdError::DimensionMismatch { expected: self.inputs(), actual: px.len() });
        }
        if px.iter().any(|p| !(*p >= 0.0)) || (px.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return invalid("input distribution must be non-negative and sum to 1");
        }
        Ok(())
    }
}

fn xlog2x(x: f64) -> f64 {
    if x > 0.0 {
        x * x.log2()
    } else {
        0.0
    }
}

/// `H(Y) - H(Y|X)` in bits.
pub fn mutual_information(ch: &ChannelModel, px: &[f64]) -> Result<f64> {
    ch.check_input(px)?;
    let h_y: f64 = -ch.output_distribution(px).into_iter().map(xlog2x).sum::<f64>();
    let h_y_x: f64 = -(0..ch.inputs())
        .map(|x| px[x] * (0..ch.outputs()).map(|y| xlog2x(ch.p(x, y))).sum::<f64>())
        .sum::<f64>();
    Ok(h_y - h_y_x)
}

/// Rate of a USD channel written through the inconclusive probabilities,
/// `-P0 log P0 - Σ p_x log p_x + Σ p_x P0(x) log[p_x P0(x)]` in bits.
pub fn usd_rate(p0: &[f64], px: &[f64]) -> Result<f64> {
    if p0.len() != px.len() {
        return Err(UsdError::DimensionMismatch { expected: px.len(), actual: p0.len() });
    }
    let avg: f64 = p0.iter().zip(px).map(|(q, p)| q * p).sum();
    let tail: f64 = p0.iter().zip(px).map(|(q, p)| xlog2x(p * q)).sum();
    Ok(-xlog2x(avg) - px.iter().map(|&p| xlog2x(p)).sum::<f64>() + tail)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityResult {
    /// Bits per channel use.
    pub capacity: f64,
    pub optimal_input: Vec<f64>,
    /// Dispersion at `optimal_input` (bits²).
    pub dispersion: f64,
    pub iterations: usize,
    /// Upper minus lower capacity estimate at termination (bits).
    pub gap: f64,
}

const MAX_BA_ITERATIONS: usize = 1_000_000;

/// Blahut–Arimoto iteration, stopped when the gap between the standard
/// lower bound `log Σ p_x e^{D_x}` and upper bound `max_x D_x` drops below
/// `tol` bits, where `D_x` is the divergence of row `x` from the output law.
pub fn capacity(ch: &ChannelModel, tol: f64) -> Result<CapacityResult> {
    if !(tol > 0.0) {
        return invalid(format!("tolerance must be positive, got {tol}"));
    }
    let c = ch.inputs();
    let mut px = vec![1.0 / c as f64; c];
    let ln2 = std::f64::consts::LN_2;
    for it in 1..=MAX_BA_ITERATIONS {
        let py = ch.output_distribution(&px);
        let d: Vec<f64> = (0..c)
            .map(|x| {
                (0..ch.outputs())
                    .filter(|&y| ch.p(x, y) > 0.0)
                    .map(|y| ch.p(x, y) * (ch.p(x, y) / py[y]).ln())
                    .sum()
            })
            .collect();
        let dmax = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = px.iter().zip(&d).map(|(p, dx)| p * (dx - dmax).exp()).collect();
        let z: f64 = weights.iter().sum();
        let lower = (dmax + z.ln()) / ln2;
        let upper = dmax / ln2;
        if upper - lower <= tol {
            let capacity = mutual_information(ch, &px)?.max(0.0);
            let dispersion = dispersion(ch, &px)?;
            return Ok(CapacityResult { capacity, optimal_input: px, dispersion, iterations: it, gap: upper - lower });
        }
        px = weights.iter().map(|w| w / z).collect();
    }
    Err(UsdError::SolverFailure(format!("Blahut–Arimoto did not reach a gap of {tol:e} bits")))
}

/// Dispersion evaluated literally as
///
/// ```text
/// V  = Σ_{x,y} p_Y(y) p(y|x) (log2[p(y|x) / Σ_z p_Y(z) p(z|x)] - X̄)²
/// X̄ = Σ_{x,y} p_Y(y) p(y|x)  log2[p(y|x) / Σ_z p_Y(z) p(z|x)]
/// ```
///
/// with `p_Y` the output law induced by `px` and `0·log 0 = 0`. The weights
/// `p_Y(y) p(y|x)` do not sum to one in general, so this differs from the
/// textbook dispersion.
pub fn dispersion(ch: &ChannelModel, px: &[f64]) -> Result<f64> {
    ch.check_input(px)?;
    let py = ch.output_distribution(px);
    let mut terms = Vec::new();
    for x in 0..ch.inputs() {
        let denom: f64 = (0..ch.outputs()).map(|z| py[z] * ch.p(x, z)).sum();
        for (y, &pyy) in py.iter().enumerate() {
            let w = pyy * ch.p(x, y);
            if w > 0.0 {
                terms.push((w, (ch.p(x, y) / denom).log2()));
            }
        }
    }
    let mean: f64 = terms.iter().map(|(w, l)| w * l).sum();
    Ok(terms.iter().map(|(w, l)| w * (l - mean).powi(2)).sum())
}

/// Normal approximation `F = C - √(V/L) Q⁻¹(ε)`.
pub fn finite_rate(capacity: f64, dispersion: f64, length: u64, epsilon: f64) -> Result<f64> {
    if length == 0 {
        return invalid("block length must be at least 1");
    }
    if !(dispersion >= 0.0) {
        return invalid(format!("dispersion must be non-negative, got {dispersion}"));
    }
    let qinv = numerics::inverse_q(epsilon)?;
    Ok(capacity - (dispersion / length as f64).sqrt() * qinv)
}

/// Capacity of the best channel in a family of USD receivers indexed by
/// design weights (the priors a receiver is optimized for).
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedCapacity {
    pub weights: Vec<f64>,
    pub channel: ChannelModel,
    pub capacity: CapacityResult,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightSearch {
    /// Design weights the simplex searches start from.
    pub starts: Vec<Vec<f64>>,
    /// A known upper bound on the capacity: the search stops once it is
    /// reached within `tol`.
    pub ceiling: Option<f64>,
    pub evaluations_per_start: usize,
    pub tol: f64,
}

impl WeightSearch {
    /// Uniform weights, then each state in turn nearly ignored.
    pub fn new(c: usize) -> Self {
        let mut starts = vec![vec![1.0 / c as f64; c]];
        for k in 0..c {
            let mut w = vec![1.0; c];
            w[k] = (-8.0_f64).exp();
            starts.push(w);
        }
        Self { starts, ceiling: None, evaluations_per_start: 60, tol: 1e-9 }
    }
}

/// Log-weights relative to the first state are clamped to this range, so
/// every design weight stays positive.
const MAX_LOG_WEIGHT: f64 = 12.0;

fn softmax_weights(z: &[f64]) -> Vec<f64> {
    let e: Vec<f64> =
        std::iter::once(0.0).chain(z.iter().map(|v| v.clamp(-MAX_LOG_WEIGHT, MAX_LOG_WEIGHT))).map(f64::exp).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Maximizes the capacity of `channel_for(w)` over design weights `w` by
/// Nelder–Mead on log-weight ratios. A USD channel only improves when any
/// `P0(x)` drops, so for a convex set of achievable `P0` vectors the optimum
/// lies on the front traced by weighted-P0 designs.
pub fn max_capacity_over_weights<F>(c: usize, mut channel_for: F, search: &WeightSearch) -> Result<WeightedCapacity>
where
    F: FnMut(&[f64]) -> Result<ChannelModel>,
{
    if c < 2 {
        return invalid("need at least two states");
    }
    if search.starts.iter().any(|w| w.len() != c || w.iter().any(|v| !(*v > 0.0))) {
        return invalid("start weights must be positive and match the number of states");
    }
    let mut best: Option<WeightedCapacity> = None;
    let mut last_err = None;
    let mut evaluations = 0;
    let done = std::cell::Cell::new(false);
    let mut objective = |z: &[f64]| -> f64 {
        if done.get() {
            return f64::INFINITY;
        }
        evaluations += 1;
        let w = softmax_weights(z);
        let found = channel_for(&w).and_then(|ch| Ok((capacity(&ch, CAPACITY_SEARCH_TOL)?, ch)));
        match found {
            Ok((cap, ch)) => {
                let value = cap.capacity;
                if best.as_ref().is_none_or(|b| value > b.capacity.capacity) {
                    best = Some(WeightedCapacity { weights: w, channel: ch, capacity: cap, evaluations: 0 });
                }
                if search.ceiling.is_some_and(|top| value >= top - search.tol) {
                    done.set(true);
                }
                -value
            }
            Err(e) => {
                last_err = Some(e);
                f64::INFINITY
            }
        }
    };
    for w in &search.starts {
        let z: Vec<f64> = w[1..].iter().map(|v| (v / w[0]).ln().clamp(-MAX_LOG_WEIGHT, MAX_LOG_WEIGHT)).collect();
        nelder_mead(&mut objective, &z, 1.0, search.evaluations_per_start, 1e-6);
        if done.get() {
            break;
        }
    }
    drop(objective);
    match best {
        Some(mut b) => {
            b.evaluations = evaluations;
            Ok(b)
        }
        None => Err(last_err.unwrap_or_else(|| UsdError::SolverFailure("no design weights were evaluated".into()))),
    }
}

const CAPACITY_SEARCH_TOL: f64 = 1e-10;

/// Least-squares slope of `ln(1 - P0)` against `ln n`.
///
/// Points with `P0 ≥ 1` or `n ≤ 0` carry no information and are skipped.
pub fn scaling_exponent(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 4 {
        return invalid(format!("need at least 4 points, got {}", points.len()));
    }
    let usable: Vec<(f64, f64)> = points
        .iter()
        .filter(|(n, p0)| *n > 0.0 && *p0 < 1.0)
        .map(|(n, p0)| (n.ln(), (1.0 - p0).ln()))
        .collect();
    if usable.len() < 2 {
        return Err(UsdError::UndefinedExponent("fewer than two points with P0 < 1".into()));
    }
    let k = usable.len() as f64;
    let mx = usable.iter().map(|p| p.0).sum::<f64>() / k;
    let my = usable.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = usable.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(UsdError::UndefinedExponent("all usable points share the same n".into()));
    }
    let sxy: f64 = usable.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Ok(sxy / sxx)
}
