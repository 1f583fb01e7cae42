//! Design and evaluation of linear receivers.
//!
//! A receiver applies an input-side displacement (class 2), a LOP block `M`
//! whose rows feed on-off detectors, and an output-side displacement
//! (class 3). The decode map turns an exact click pattern into a codeword;
//! every other pattern is inconclusive.
//!
//! Single-detection receivers (classes 1 and 2) reduce to the convex problem
//!
//! ```text
//! minimize Σ_j p_j e^{-u_j}   subject to   G - diag(u) ⪰ 0,  u ≥ 0
//! ```
//!
//! on the phase-space Gram matrix `G` of the (displaced) amplitudes: with
//! `B` the matrix whose columns are the amplitude vectors, a block with
//! `M_i·β^j = 0` for `i ≠ j` has `M B = diag(z)`, and `M†M ⪯ I` is then
//! equivalent to `diag(|z|²) ⪯ G`. The optimal block is `M = diag(√u) B⁺`,
//! whose rows are the normalized dual vectors scaled by `√k_i`.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::constellation::{classify_default, Constellation, DegeneracyClass};
use crate::error::{invalid, Result, UsdError};
use crate::info::ChannelModel;
use crate::lop::{self, click_probability, LopUnitary};
use crate::numerics::{self, CMatrix, CVector, RngStream, C64};
use crate::optim::{bfgs, nelder_mead, solve_lmi, BarrierOptions, BarrierSolution, BfgsOptions, RankOneLmi, Separable};

const SIGMA_TOL: f64 = 1e-8;
const LEAKAGE_TOL: f64 = 1e-10;
/// States whose optimal `u_j` falls below this are given up (`z_j = 0`).
const SACRIFICE_TOL: f64 = 1e-9;
const IMPROVEMENT_TOL: f64 = 1e-9;
const BUILD_ATTEMPTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ReceiverClass {
    /// Single detection, LOP only.
    One,
    /// Single detection with displacement.
    Two,
    /// Double detection on a single-mode code with two vacuum auxiliary modes.
    Three,
}

impl ReceiverClass {
    pub fn number(self) -> u8 {
        match self {
            Self::One => 1,
            Self::Two => 2,
            Self::Three => 3,
        }
    }

    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(Self::One),
            2 => Ok(Self::Two),
            3 => Ok(Self::Three),
            other => invalid(format!("receiver class must be 1, 2 or 3, got {other}")),
        }
    }
}

impl fmt::Display for ReceiverClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "class {}", self.number())
    }
}

/// Exact click patterns (sorted detector indices) and the codeword each
/// one announces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodeMap(Vec<(Vec<usize>, usize)>);

impl DecodeMap {
    pub fn new(entries: Vec<(Vec<usize>, usize)>) -> Result<Self> {
        let mut seen = Vec::new();
        for (pattern, _) in &entries {
            let mut p = pattern.clone();
            p.sort_unstable();
            p.dedup();
            if p.len() != pattern.len() || p.is_empty() {
                return invalid(format!("invalid click pattern {pattern:?}"));
            }
            if seen.contains(&p) {
                return invalid(format!("click pattern {p:?} decoded twice"));
            }
            seen.push(p);
        }
        let entries = seen.into_iter().zip(entries.into_iter().map(|(_, s)| s)).collect();
        Ok(Self(entries))
    }

    /// Detector `j` alone announces state `j`.
    pub fn single_clicks(c: usize) -> Self {
        Self((0..c).map(|j| (vec![j], j)).collect())
    }

    pub fn entries(&self) -> &[(Vec<usize>, usize)] {
        &self.0
    }

    /// Codeword announced by an exact set of clicked detectors.
    pub fn decode(&self, clicked: &[usize]) -> Option<usize> {
        self.0.iter().find(|(p, _)| p.as_slice() == clicked).map(|(_, s)| *s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearReceiver {
    pub class: ReceiverClass,
    /// Detected rows of the LOP; columns are the code modes, plus one
    /// auxiliary input mode when `input_displacement` is one longer than the
    /// code.
    pub m: CMatrix,
    /// Displacement applied before the LOP (length `m.ncols()`).
    pub input_displacement: Vec<C64>,
    /// Displacement applied to the detected modes after the LOP.
    pub output_displacement: Vec<C64>,
    pub decode: DecodeMap,
    /// Full unitary with `m` as its top-left block, when available.
    pub unitary: Option<LopUnitary>,
}

impl LinearReceiver {
    pub fn new(
        class: ReceiverClass,
        m: CMatrix,
        input_displacement: Vec<C64>,
        output_displacement: Vec<C64>,
        decode: DecodeMap,
    ) -> Result<Self> {
        numerics::ensure_finite(&m)?;
        if input_displacement.len() != m.ncols() {
            return Err(UsdError::DimensionMismatch { expected: m.ncols(), actual: input_displacement.len() });
        }
        if output_displacement.len() != m.nrows() {
            return Err(UsdError::DimensionMismatch { expected: m.nrows(), actual: output_displacement.len() });
        }
        let sigma = numerics::max_singular_value(&m);
        if sigma > 1.0 + SIGMA_TOL {
            return Err(UsdError::InfeasibleExtension { sigma_max: sigma });
        }
        if decode.entries().iter().flat_map(|(p, _)| p).any(|&d| d >= m.nrows()) {
            return invalid("decode map refers to a detector that does not exist");
        }
        Ok(Self { class, m, input_displacement, output_displacement, decode, unitary: None })
    }

    pub fn detectors(&self) -> usize {
        self.m.nrows()
    }

    /// Whether an auxiliary input mode is fed (with its displacement).
    pub fn uses_aux_input(&self, code_modes: usize) -> bool {
        self.m.ncols() > code_modes
    }

    /// Attaches a unitary dilation of `m` (class 1/2).
    pub fn with_extension(mut self) -> Result<Self> {
        self.unitary = Some(lop::extend_to_unitary(&self.m)?.unitary);
        Ok(self)
    }

    /// Detected amplitudes `ζ = M (α ⊕ 0 + γ_in) + γ_out`.
    pub fn detected_amplitudes(&self, alpha: &[C64]) -> Result<Vec<C64>> {
        if alpha.len() > self.m.ncols() {
            return invalid(format!("receiver accepts {} modes, state has {}", self.m.ncols(), alpha.len()));
        }
        let input = CVector::from_fn(self.m.ncols(), |k, _| {
            alpha.get(k).copied().unwrap_or_default() + self.input_displacement[k]
        });
        let out = &self.m * input;
        Ok(out.iter().zip(&self.output_displacement).map(|(z, g)| z + g).collect())
    }

    /// Per-detector click probabilities for one input state.
    pub fn click_probabilities(&self, alpha: &[C64]) -> Result<Vec<f64>> {
        Ok(self.detected_amplitudes(alpha)?.iter().map(|z| click_probability(z.norm_sqr())).collect())
    }
}

/// Probability that exactly the detectors in `pattern` click.
fn pattern_probability(clicks: &[f64], pattern: &[usize]) -> f64 {
    clicks
        .iter()
        .enumerate()
        .map(|(i, &p)| if pattern.contains(&i) { p } else { 1.0 - p })
        .product()
}

/// Exact channel `p(y|x)` of a receiver on a code. Output `y = 0` collects
/// every click pattern outside the decode map.
pub fn evaluate_receiver(r: &LinearReceiver, code: &Constellation) -> Result<ChannelModel> {
    if r.m.ncols() < code.modes() || r.m.ncols() > code.modes() + 1 {
        return invalid(format!("receiver with {} input modes does not fit a {}-mode code", r.m.ncols(), code.modes()));
    }
    let c = code.len();
    if r.decode.entries().iter().any(|(_, s)| *s >= c) {
        return invalid("decode map announces a codeword outside the code");
    }
    let mut rows = Vec::with_capacity(c);
    for state in code.states() {
        let clicks = r.click_probabilities(state.as_slice())?;
        let mut row = vec![0.0; c + 1];
        for (pattern, s) in r.decode.entries() {
            row[s + 1] += pattern_probability(&clicks, pattern);
        }
        let conclusive: f64 = row[1..].iter().sum();
        row[0] = (1.0 - conclusive).max(0.0);
        rows.push(row);
    }
    ChannelModel::from_rows(&rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub restarts: usize,
    /// Iterations of the run that produced the returned receiver.
    pub iterations: usize,
    pub converged: bool,
    /// An auxiliary input mode carries a displacement.
    pub aux_input_mode: bool,
    /// Extra modes used by the unitary dilation of `M`.
    pub extension_modes: usize,
    /// States whose detector row is zero (always inconclusive).
    pub sacrificed_states: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignReport {
    pub receiver: LinearReceiver,
    pub p0_per_state: Vec<f64>,
    pub p0_average: f64,
    pub diagnostics: Diagnostics,
}

fn report(receiver: LinearReceiver, code: &Constellation, diagnostics: Diagnostics) -> Result<DesignReport> {
    let channel = evaluate_receiver(&receiver, code)?;
    let p0_per_state: Vec<f64> = (0..code.len()).map(|x| channel.inconclusive(x)).collect();
    let p0_average = channel.average_inconclusive(code.priors());
    Ok(DesignReport { receiver, p0_per_state, p0_average, diagnostics })
}

/// Optimal `u` of the single-detection problem for a PSD Gram matrix.
fn single_detection_weights(gram: &CMatrix, priors: &[f64], opts: BarrierOptions) -> Result<BarrierSolution> {
    let start = 0.5 * numerics::hermitian_min_eigenvalue(gram);
    if !(start > 0.0) {
        return Err(UsdError::SolverFailure("phase-space Gram matrix is not positive definite".into()));
    }
    single_detection_from(gram, priors, &vec![start.min(1.0); gram.nrows()], opts)
}

fn single_detection_from(gram: &CMatrix, priors: &[f64], u0: &[f64], opts: BarrierOptions) -> Result<BarrierSolution> {
    let c = gram.nrows();
    let lmi = RankOneLmi::minus_diagonal(gram.clone());
    solve_lmi(&lmi, &Separable::NegExp(priors.to_vec()), &vec![0.0; c], &vec![f64::INFINITY; c], u0, opts)
}

fn is_diagonal(g: &CMatrix) -> bool {
    let scale = g.diagonal().iter().map(|d| d.re).fold(0.0, f64::max);
    (0..g.nrows()).all(|i| (0..g.ncols()).all(|j| i == j || g[(i, j)].norm() <= 1e-14 * scale.max(1e-300)))
}

/// Orthogonal projector onto the complement of span{β^l : l in `gone`}.
/// Directions whose weight is below the leakage tolerance are kept, since
/// removing them costs the other states and gains nothing measurable.
fn complement_projector(beta: &CMatrix, gone: &[usize]) -> CMatrix {
    let modes = beta.nrows();
    let mut projector = CMatrix::identity(modes, modes);
    if gone.is_empty() {
        return projector;
    }
    let scale = beta.iter().map(|z| z.norm()).fold(1.0, f64::max);
    let bs = CMatrix::from_columns(&gone.iter().map(|&l| beta.column(l).into_owned()).collect::<Vec<_>>());
    let svd = numerics::svd(&bs);
    let w = svd.u;
    for (k, s) in svd.singular_values.iter().enumerate() {
        if *s > 0.1 * LEAKAGE_TOL * scale {
            let q = w.column(k);
            projector -= &q * q.adjoint();
        }
    }
    projector
}

/// Builds the block `M` with `M β^j = √u_j e_j` for kept states and
/// `M β^l = 0` for sacrificed ones (`u_l = 0`), from the amplitude vectors
/// projected off the sacrificed span.
fn block_from_weights(projected: &CMatrix, kept: &[usize], u: &[f64]) -> CMatrix {
    let (modes, c) = projected.shape();
    let mut m = CMatrix::zeros(c, modes);
    if kept.is_empty() {
        return m;
    }
    let bk = CMatrix::from_columns(&kept.iter().map(|&j| projected.column(j).into_owned()).collect::<Vec<_>>());
    let pinv = numerics::pseudo_inverse(&bk, 1e-13);
    for (row, &j) in kept.iter().enumerate() {
        m.set_row(j, &(pinv.row(row) * C64::new(u[j].sqrt(), 0.0)));
    }
    m
}

/// Largest `|M_i·β^j|` over `i ≠ j`, relative to the largest amplitude.
fn leakage(m: &CMatrix, beta: &CMatrix) -> f64 {
    let mb = m * beta;
    let scale = beta.iter().map(|z| z.norm()).fold(1.0, f64::max);
    let mut worst = 0.0_f64;
    for i in 0..mb.nrows() {
        for j in 0..mb.ncols() {
            if i != j {
                worst = worst.max(mb[(i, j)].norm());
            }
        }
    }
    worst / scale
}

/// Shrinks `m` onto the contraction set if round-off pushed it just past it.
fn enforce_contraction(m: CMatrix) -> Result<CMatrix> {
    let sigma = numerics::max_singular_value(&m);
    if sigma > 1.0 + SIGMA_TOL {
        return Err(UsdError::SolverFailure(format!("designed block has σ_max = {sigma}")));
    }
    Ok(if sigma > 1.0 { m.scale(1.0 / sigma) } else { m })
}

/// Amplitude vectors (after padding and displacement) as columns.
fn displaced_columns(code: &Constellation, gamma: &[C64]) -> CMatrix {
    let modes = gamma.len();
    CMatrix::from_fn(modes, code.len(), |k, j| code.states()[j].as_slice().get(k).copied().unwrap_or_default() + gamma[k])
}

/// Gram matrix of the columns of `beta`, lifted by `1e-12` times the
/// largest codeword energy so that nearly dependent amplitude sets stay
/// strictly feasible. The lift must not grow with the displacement, or the
/// search would be rewarded for running off to large `γ`.
fn regularized_gram(beta: &CMatrix, code: &Constellation) -> CMatrix {
    let mut gram = beta.adjoint() * beta;
    let reg = 1e-12 * code.states().iter().map(|s| s.photons()).fold(1.0, f64::max);
    for i in 0..gram.nrows() {
        gram[(i, i)] += C64::new(reg, 0.0);
    }
    gram
}

fn optimal_weights(gram: &CMatrix, priors: &[f64], opts: BarrierOptions) -> Result<(Vec<f64>, usize)> {
    if is_diagonal(gram) {
        return Ok((gram.diagonal().iter().map(|d| d.re).collect(), 0));
    }
    let sol = single_detection_weights(gram, priors, opts)?;
    Ok((sol.x, sol.newton_steps))
}

/// Single-detection receiver for fixed displacement. States whose optimal
/// weight vanishes are sacrificed: their span is projected out and the
/// weights of the others are solved again on the projected vectors, which
/// is the exact feasible set once those rows are zero.
fn single_detection_receiver(
    class: ReceiverClass,
    code: &Constellation,
    gamma: Vec<C64>,
    opts: BarrierOptions,
) -> Result<(LinearReceiver, Vec<usize>, usize)> {
    let c = code.len();
    let beta = displaced_columns(code, &gamma);
    let (mut u, mut steps) = optimal_weights(&regularized_gram(&beta, code), code.priors(), opts)?;
    let sacrificed: Vec<usize> = (0..c).filter(|&j| u[j] <= SACRIFICE_TOL).collect();
    let kept: Vec<usize> = (0..c).filter(|&j| u[j] > SACRIFICE_TOL).collect();
    let projector = complement_projector(&beta, &sacrificed);
    let projected = &projector * &beta;
    if !sacrificed.is_empty() && !kept.is_empty() {
        let cols: Vec<CVector> = kept.iter().map(|&j| projected.column(j).into_owned()).collect();
        let bk = CMatrix::from_columns(&cols);
        let priors: Vec<f64> = kept.iter().map(|&j| code.priors()[j]).collect();
        let (uk, more) = optimal_weights(&(bk.adjoint() * &bk), &priors, opts)?;
        steps += more;
        u = vec![0.0; c];
        for (i, &j) in kept.iter().enumerate() {
            u[j] = uk[i];
        }
    }
    let m = block_from_weights(&projected, &kept, &u);
    let leak = leakage(&m, &beta);
    if leak > LEAKAGE_TOL {
        return Err(UsdError::SolverFailure(format!("receiver rows leak {leak:.3e} onto other states")));
    }
    let m = enforce_contraction(m)?;
    let receiver = LinearReceiver::new(class, m, gamma, vec![C64::default(); c], DecodeMap::single_clicks(c))?
        .with_extension()?;
    Ok((receiver, sacrificed, steps))
}

fn extension_modes(r: &LinearReceiver) -> usize {
    r.unitary.as_ref().map_or(0, |u| u.dim() - r.m.nrows().max(r.m.ncols()))
}

/// Class 1: LOP plus single detection, no displacement.
pub fn design_class1(code: &Constellation) -> Result<DesignReport> {
    let deg = classify_default(code);
    if deg.class != DegeneracyClass::FullRank {
        return Err(UsdError::RequiresClass2Or3 { rank: deg.rank, states: code.len() });
    }
    let zero = vec![C64::default(); code.modes()];
    let (receiver, sacrificed, steps) =
        single_detection_receiver(ReceiverClass::One, code, zero, BarrierOptions::default())?;
    let diagnostics = Diagnostics {
        restarts: 1,
        iterations: steps,
        converged: true,
        aux_input_mode: false,
        extension_modes: extension_modes(&receiver),
        sacrificed_states: sacrificed,
    };
    report(receiver, code, diagnostics)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuxPolicy {
    /// Only when the code has more states than modes.
    WhenRequired,
    /// Also tried for codes that do not need it; kept only if it lowers P0
    /// by more than 1e-9.
    Allowed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Class2Options {
    /// Starts of the displacement search (per variant).
    pub restarts: usize,
    pub seed: u64,
    pub aux: AuxPolicy,
}

impl Default for Class2Options {
    fn default() -> Self {
        Self { restarts: 32, seed: 0x00C0_FFEE, aux: AuxPolicy::Allowed }
    }
}

/// Inner optimum and its gradient with respect to the displacement
/// parameters `(Re γ, Im γ[, g])`.
///
/// The value is the barrier objective at the last central point, which is
/// within `count/t` of the inner optimum and smooth in `γ`. Its gradient
/// follows from the envelope theorem with `Z = (1/t) S⁻¹`,
/// `S = G - diag(u)`: `∂F/∂θ = -Re tr(Z ∂G/∂θ)`. Pushing `t` much further
/// leaves `S` with eigenvalues below its rounding error, and `Z` degrades. For
/// `G_ij = (β^i, β^j) + g²` and `w_k = Σ_j β^j_k (Z 1)_j` this gives
/// `∂F/∂Re γ_k = -2 Re w_k`, `∂F/∂Im γ_k = -2 Im w_k`, `∂F/∂g = -2g 1ᵀZ1`.
struct DisplacedObjective<'a> {
    code: &'a Constellation,
    modes: usize,
    with_aux: bool,
    opts: BarrierOptions,
    evaluations: usize,
    last_u: Option<Vec<f64>>,
}

const WARM_T0: f64 = 1e3;

impl DisplacedObjective<'_> {
    fn gamma(&self, x: &[f64]) -> Vec<C64> {
        let m = self.modes;
        let mut g: Vec<C64> = (0..m).map(|k| C64::new(x[k], x[m + k])).collect();
        if self.with_aux {
            g.push(C64::new(x[2 * m], 0.0));
        }
        g
    }

    fn eval(&mut self, x: &[f64]) -> Option<(f64, Vec<f64>)> {
        self.evaluations += 1;
        let m = self.modes;
        let gamma = self.gamma(x);
        let beta = displaced_columns(self.code, &gamma);
        let gram = regularized_gram(&beta, self.code);
        let c = gram.nrows();
        // Warm start: the previous optimum pulled slightly inside, if it is
        // still strictly feasible for the new Gram matrix.
        let warm = self.last_u.as_ref().and_then(|u| {
            let u0: Vec<f64> = u.iter().map(|v| (v * (1.0 - 1e-5)).max(1e-300)).collect();
            let mut s = gram.clone();
            for (j, v) in u0.iter().enumerate() {
                s[(j, j)] -= C64::new(*v, 0.0);
            }
            numerics::hermitian_cholesky(&s)?;
            single_detection_from(&gram, self.code.priors(), &u0, BarrierOptions { t0: WARM_T0, ..self.opts }).ok()
        });
        let sol = match warm {
            Some(sol) => sol,
            None => single_detection_weights(&gram, self.code.priors(), self.opts).ok()?,
        };
        self.last_u = Some(sol.x.clone());
        let z1 = sol.dual.column_sum();
        let mut grad = vec![0.0; x.len()];
        for k in 0..m {
            let w: C64 = (0..c).map(|j| beta[(k, j)] * z1[j]).sum();
            grad[k] = -2.0 * w.re;
            grad[m + k] = -2.0 * w.im;
        }
        if self.with_aux {
            let g = x[2 * m];
            grad[2 * m] = -2.0 * g * z1.iter().map(|z| z.re).sum::<f64>();
        }
        Some((sol.barrier_value, grad))
    }
}

struct SearchResult {
    x: Vec<f64>,
    value: f64,
    iterations: usize,
    converged: bool,
}

fn class2_starts(code: &Constellation, with_aux: bool, opts: &Class2Options, stream: u64) -> Vec<Vec<f64>> {
    let m = code.modes();
    let dim = 2 * m + usize::from(with_aux);
    let n = code.states().iter().map(|s| s.photons()).sum::<f64>() / code.len() as f64;
    let spread = (n / m as f64).sqrt().max(1e-3);
    let encode = |gamma: &[C64], g: f64| {
        let mut x = vec![0.0; dim];
        for k in 0..m {
            x[k] = gamma[k].re;
            x[m + k] = gamma[k].im;
        }
        if with_aux {
            x[2 * m] = g;
        }
        x
    };
    let mut starts = vec![encode(&vec![C64::default(); m], 0.0)];
    let mean: Vec<C64> = (0..m)
        .map(|k| -code.states().iter().map(|s| s.as_slice()[k]).sum::<C64>() / code.len() as f64)
        .collect();
    starts.push(encode(&mean, if with_aux { n.sqrt() } else { 0.0 }));
    for s in code.states() {
        let neg: Vec<C64> = s.as_slice().iter().map(|a| -a).collect();
        starts.push(encode(&neg, 0.0));
    }
    let mut rng = RngStream::new(opts.seed, stream);
    while starts.len() < opts.restarts.max(1) {
        let gamma: Vec<C64> = (0..m)
            .map(|_| C64::new(rng.standard_normal() * spread, rng.standard_normal() * spread))
            .collect();
        let g = if with_aux { rng.standard_normal().abs() * n.sqrt() } else { 0.0 };
        starts.push(encode(&gamma, g));
    }
    starts.truncate(opts.restarts.max(1));
    starts
}

/// Local optima of the displacement search, best first.
fn search_displacement(code: &Constellation, with_aux: bool, opts: &Class2Options) -> (Vec<SearchResult>, usize) {
    let mut objective = DisplacedObjective {
        code,
        modes: code.modes(),
        with_aux,
        opts: BarrierOptions { gap_tol: 1e-10, mu: 40.0, ..Default::default() },
        evaluations: 0,
        last_u: None,
    };
    let starts = class2_starts(code, with_aux, opts, u64::from(with_aux));
    let bfgs_opts = BfgsOptions { max_iter: 300, grad_tol: 1e-9, f_tol: 1e-15 };
    let mut found: Vec<SearchResult> = starts
        .iter()
        .filter_map(|x0| bfgs(|x| objective.eval(x), x0, bfgs_opts))
        .map(|r| SearchResult { x: r.x, value: r.value, iterations: r.iterations, converged: r.converged })
        .collect();
    found.sort_by(|a, b| a.value.total_cmp(&b.value));
    (found, starts.len())
}

/// Class 2: displacement, LOP and single detection.
///
/// The displacement is found by quasi-Newton multistart on the exact inner
/// optimum (starts: no displacement, minus the centroid, minus each
/// codeword, then Gaussian draws). When `c = m + 1` an auxiliary input mode
/// with a real displacement `g` is added, which adds `g²` to every Gram
/// entry.
pub fn design_class2(code: &Constellation) -> Result<DesignReport> {
    design_class2_with(code, &Class2Options::default())
}

pub fn design_class2_with(code: &Constellation, opts: &Class2Options) -> Result<DesignReport> {
    let c = code.len();
    let m = code.modes();
    let deg = classify_default(code);
    if deg.class == DegeneracyClass::DoubleOrHigher {
        return Err(UsdError::RequiresClass3 { rank: deg.rank, states: c });
    }
    if c > m + 1 {
        return Err(UsdError::UnsupportedShape { states: c, modes: m });
    }
    let mut variants = Vec::new();
    if c <= m {
        variants.push(false);
    }
    if c == m + 1 || opts.aux == AuxPolicy::Allowed {
        variants.push(true);
    }
    let build_opts = BarrierOptions { gap_tol: 1e-14, ..Default::default() };
    let mut best: Option<DesignReport> = None;
    let mut last_err = None;
    for with_aux in variants {
        let (found, restarts) = search_displacement(code, with_aux, opts);
        let objective = DisplacedObjective { code, modes: m, with_aux, opts: build_opts, evaluations: 0, last_u: None };
        // The best optimum normally builds; later ones are a fallback when
        // its block fails the leakage or contraction checks.
        for candidate in found.iter().take(BUILD_ATTEMPTS) {
            let gamma = objective.gamma(&candidate.x);
            let (receiver, sacrificed, _) = match single_detection_receiver(ReceiverClass::Two, code, gamma, build_opts) {
                Ok(built) => built,
                Err(e) => {
                    last_err = Some(e);
                    continue;
                }
            };
            let diagnostics = Diagnostics {
                restarts,
                iterations: candidate.iterations,
                converged: candidate.converged,
                aux_input_mode: with_aux,
                extension_modes: extension_modes(&receiver),
                sacrificed_states: sacrificed,
            };
            let built = report(receiver, code, diagnostics)?;
            if best.as_ref().is_none_or(|b| built.p0_average < b.p0_average - IMPROVEMENT_TOL) {
                best = Some(built);
            }
            break;
        }
    }
    // Without displacement the class-1 receiver is itself a class-2 candidate.
    if deg.class == DegeneracyClass::FullRank {
        let plain = match design_class1(code) {
            Ok(p) => Some(p),
            Err(e) if best.is_some() => {
                last_err = Some(e);
                None
            }
            Err(e) => return Err(e),
        };
        if let Some(mut plain) = plain.filter(|p| best.as_ref().is_none_or(|b| p.p0_average < b.p0_average)) {
            plain.receiver.class = ReceiverClass::Two;
            best = Some(plain);
        }
    }
    best.ok_or_else(|| match last_err {
        Some(e) => UsdError::SolverFailure(format!("no displacement start produced a feasible receiver: {e}")),
        None => UsdError::SolverFailure("no displacement start produced a feasible receiver".into()),
    })
}

/// Success probability of the double-detection receiver with
/// `x_k = |U_k1|²`: detector `k` is dark for state `k`, and state `j` is
/// announced when the other two detectors click.
fn class3_p0(x: &[f64; 3], distances: &[[f64; 3]; 3], priors: &[f64]) -> f64 {
    let mut success = 0.0;
    for j in 0..3 {
        let mut prob = priors[j];
        for k in 0..3 {
            if k != j {
                prob *= click_probability(x[k] * distances[j][k]);
            }
        }
        success += prob;
    }
    1.0 - success
}

fn sphere_point(theta: f64, phi: f64) -> [f64; 3] {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    [ct * ct, st * st * cp * cp, st * st * sp * sp]
}

const CLASS3_GRID: usize = 200;

/// Class 3: one-mode, three-state codes read out by double detection.
///
/// The code mode is mixed with two vacuum modes by a 3×3 unitary `U`; the
/// output displacement `γ_k = -U_k1 α^k` darkens detector `k` for state
/// `k`. Only `x_k = |U_k1|²` matters, so the search runs over the positive
/// octant of the unit sphere: a 200×200 angle grid followed by Nelder–Mead
/// polishing from the best grid points.
pub fn design_class3(code: &Constellation) -> Result<DesignReport> {
    if code.len() != 3 || code.modes() != 1 {
        return Err(UsdError::UnsupportedShape { states: code.len(), modes: code.modes() });
    }
    let amps: Vec<C64> = code.states().iter().map(|s| s.as_slice()[0]).collect();
    let mut distances = [[0.0; 3]; 3];
    for j in 0..3 {
        for k in 0..3 {
            distances[j][k] = (amps[j] - amps[k]).norm_sqr();
        }
    }
    let priors = code.priors();
    let half_pi = std::f64::consts::FRAC_PI_2;
    let objective = |a: &[f64]| class3_p0(&sphere_point(a[0], a[1]), &distances, priors);

    let mut grid = Vec::with_capacity(CLASS3_GRID * CLASS3_GRID);
    for i in 0..CLASS3_GRID {
        for k in 0..CLASS3_GRID {
            let a = [half_pi * i as f64 / (CLASS3_GRID - 1) as f64, half_pi * k as f64 / (CLASS3_GRID - 1) as f64];
            grid.push((objective(&a), a));
        }
    }
    grid.sort_by(|a, b| a.0.total_cmp(&b.0));
    let step = half_pi / (CLASS3_GRID - 1) as f64;
    let mut best = (grid[0].0, grid[0].1.to_vec(), 0usize);
    let polish_starts = 4;
    for (_, a) in grid.iter().take(polish_starts) {
        let found = nelder_mead(objective, a, step, 4000, 1e-14);
        if found.value < best.0 {
            best = (found.value, found.x, found.iterations);
        }
    }
    let x = sphere_point(best.1[0], best.1[1]);
    let column = CVector::from_iterator(3, x.iter().map(|v| C64::new(v.max(0.0).sqrt(), 0.0)));
    let column = &column / C64::new(column.norm(), 0.0);
    let unitary = lop::complete_to_unitary(&column)?;
    let m = unitary.block(3, 1);
    let gamma_out: Vec<C64> = (0..3).map(|k| -m[(k, 0)] * amps[k]).collect();
    let decode = DecodeMap::new((0..3).map(|j| ((0..3).filter(|&k| k != j).collect(), j)).collect())?;
    let mut receiver = LinearReceiver::new(ReceiverClass::Three, m, vec![C64::default()], gamma_out, decode)?;
    receiver.unitary = Some(unitary);
    let diagnostics = Diagnostics {
        restarts: polish_starts,
        iterations: best.2,
        converged: true,
        aux_input_mode: false,
        extension_modes: 2,
        sacrificed_states: Vec::new(),
    };
    report(receiver, code, diagnostics)
}

/// The two-beam-splitter double-detection receiver for the code
/// `{-α, α, 0}`: inputs are (signal, vacuum, coherent `α/√2`), detectors
/// 1 and 2 click for `-α`, 1 and 3 for `α`, 2 and 3 for vacuum.
pub fn dd_reference_receiver(alpha: C64) -> Result<LinearReceiver> {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let r = |x: f64| C64::new(x, 0.0);
    let u = CMatrix::from_row_slice(3, 3, &[r(h), r(h), r(0.0), r(-0.5), r(0.5), r(h), r(-0.5), r(0.5), r(-h)]);
    let unitary = LopUnitary::new(u)?;
    // The coherent auxiliary input enters as U[:, 2] · α/√2 after the LOP.
    let aux = alpha * h;
    let gamma_out: Vec<C64> = (0..3).map(|k| unitary.matrix()[(k, 2)] * aux).collect();
    let decode = DecodeMap::new(vec![(vec![0, 1], 0), (vec![0, 2], 1), (vec![1, 2], 2)])?;
    let mut receiver = LinearReceiver::new(ReceiverClass::Three, unitary.block(3, 1), vec![C64::default()], gamma_out, decode)?;
    receiver.unitary = Some(unitary);
    Ok(receiver)
}

/// Wire format: `{"class", "M": [[[re, im], ...], ...], "gamma", "gamma_side", "decode"}`
/// with one-based detector and codeword labels in `decode`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReceiverJson {
    pub class: u8,
    #[serde(rename = "M")]
    pub m: Vec<Vec<[f64; 2]>>,
    pub gamma: Vec<[f64; 2]>,
    pub gamma_side: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub input_displacement: Vec<[f64; 2]>,
    pub decode: BTreeMap<String, usize>,
}

fn pairs(v: &[C64]) -> Vec<[f64; 2]> {
    v.iter().map(|z| [z.re, z.im]).collect()
}

fn complexes(v: &[[f64; 2]]) -> Vec<C64> {
    v.iter().map(|[re, im]| C64::new(*re, *im)).collect()
}

impl From<&LinearReceiver> for ReceiverJson {
    fn from(r: &LinearReceiver) -> Self {
        let m = (0..r.m.nrows()).map(|i| (0..r.m.ncols()).map(|k| [r.m[(i, k)].re, r.m[(i, k)].im]).collect()).collect();
        let decode = r
            .decode
            .entries()
            .iter()
            .map(|(p, s)| (p.iter().map(|d| (d + 1).to_string()).collect::<Vec<_>>().join(","), s + 1))
            .collect();
        let (gamma, side, input) = match r.class {
            ReceiverClass::Three => (pairs(&r.output_displacement), "output", pairs(&r.input_displacement)),
            _ => (pairs(&r.input_displacement), "input", Vec::new()),
        };
        let input = if input.iter().all(|z| z == &[0.0, 0.0]) { Vec::new() } else { input };
        Self { class: r.class.number(), m, gamma, gamma_side: side.into(), input_displacement: input, decode }
    }
}

impl TryFrom<ReceiverJson> for LinearReceiver {
    type Error = UsdError;

    fn try_from(j: ReceiverJson) -> Result<Self> {
        let class = ReceiverClass::from_number(j.class)?;
        let rows = j.m.len();
        let cols = j.m.first().map_or(0, Vec::len);
        if rows == 0 || cols == 0 || j.m.iter().any(|r| r.len() != cols) {
            return invalid("M must be a nonempty rectangular matrix");
        }
        let m = CMatrix::from_fn(rows, cols, |i, k| C64::new(j.m[i][k][0], j.m[i][k][1]));
        let (input, output) = match j.gamma_side.as_str() {
            "input" => (complexes(&j.gamma), vec![C64::default(); rows]),
            "output" => {
                let input = if j.input_displacement.is_empty() {
                    vec![C64::default(); cols]
                } else {
                    complexes(&j.input_displacement)
                };
                (input, complexes(&j.gamma))
            }
            other => return invalid(format!("gamma_side must be 'input' or 'output', got '{other}'")),
        };
        let mut entries = Vec::new();
        for (pattern, state) in &j.decode {
            let detectors = pattern
                .split(',')
                .map(|d| d.trim().parse::<usize>().ok().filter(|&d| d >= 1).map(|d| d - 1))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| UsdError::InvalidParameter(format!("bad click pattern '{pattern}'")))?;
            if *state == 0 {
                return invalid("decode labels are one-based");
            }
            entries.push((detectors, state - 1));
        }
        LinearReceiver::new(class, m, input, output, DecodeMap::new(entries)?)
    }
}

/// `P0` of the two-beam-splitter receiver on `{-α, α, 0}` with uniform
/// priors, in closed form.
pub fn dd_reference_p0(alpha_sq: f64) -> f64 {
    let a = alpha_sq;
    (-1.5 * a).exp() * (a.exp() + 2.0 * (0.5 * a).exp() + 2.0 * (1.25 * a).exp() - 2.0) / 3.0
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::{analytic_bound, bergou_bound, AnalyticFamily};
    use crate::constellation::{builtin_code, sample_random_code, AmplitudeVector, BuiltinCode};
    use crate::lop::apply_lop;

    fn real(a: f64) -> C64 {
        C64::new(a, 0.0)
    }

    fn quick() -> Class2Options {
        Class2Options { restarts: 8, ..Default::default() }
    }

    #[test]
    fn ppm_class1_is_photon_counting() {
        let a2: f64 = 0.7;
        let code = builtin_code(BuiltinCode::Ppm { modes: 3 }, real(a2.sqrt())).unwrap();
        let r = design_class1(&code).unwrap();
        assert!((r.p0_average - (-a2).exp()).abs() < 1e-9);
        for i in 0..3 {
            for k in 0..3 {
                let expected = if i == k { 1.0 } else { 0.0 };
                assert!((r.receiver.m[(i, k)].norm() - expected).abs() < 1e-8);
            }
        }
        assert_eq!(r.diagnostics.extension_modes, 0);
    }

    #[test]
    fn class1_rejects_degenerate_codes() {
        let code = builtin_code(BuiltinCode::Guha, real(0.5)).unwrap();
        assert!(matches!(design_class1(&code), Err(UsdError::RequiresClass2Or3 { .. })));
        let dd = builtin_code(BuiltinCode::DoubleDegenerate, real(0.5)).unwrap();
        assert!(matches!(design_class2(&dd), Err(UsdError::RequiresClass3 { .. })));
    }

    #[test]
    fn class2_reaches_the_bound_on_simple_codes() {
        for a2 in [0.3, 1.0] {
            let al = real(f64::sqrt(a2));
            let bpsk = builtin_code(BuiltinCode::Psk { order: 2 }, al).unwrap();
            let r = design_class2_with(&bpsk, &quick()).unwrap();
            assert!((r.p0_average - (-2.0 * a2).exp()).abs() < 1e-7, "bpsk {a2}: {}", r.p0_average);
            assert!(r.diagnostics.aux_input_mode);

            let dual = builtin_code(BuiltinCode::DualPpm { modes: 3 }, al).unwrap();
            let r = design_class2_with(&dual, &quick()).unwrap();
            assert!((r.p0_average - (-a2).exp()).abs() < 1e-7, "dual ppm {a2}: {}", r.p0_average);
        }
    }

    #[test]
    fn class2_matches_guha_bound_at_low_intensity() {
        for a2 in [0.05, 0.2] {
            let code = builtin_code(BuiltinCode::Guha, real(f64::sqrt(a2))).unwrap();
            let r = design_class2_with(&code, &quick()).unwrap();
            let bound = analytic_bound(AnalyticFamily::SingleDegenerateGuha, a2).unwrap();
            assert!((r.p0_average - bound).abs() < 1e-8, "{a2}: {} vs {bound}", r.p0_average);
        }
    }

    #[test]
    fn designs_are_unambiguous_and_respect_the_bound() {
        let mut rng = RngStream::new(3, 1);
        for _ in 0..3 {
            let code = sample_random_code(3, 3, 0.6, &mut rng).unwrap();
            let bound = bergou_bound(&code).unwrap().p0;
            let c1 = design_class1(&code).unwrap();
            let c2 = design_class2_with(&code, &quick()).unwrap();
            for r in [&c1, &c2] {
                let ch = evaluate_receiver(&r.receiver, &code).unwrap();
                assert!(ch.max_wrong_conclusive() < 1e-10);
                assert!(r.p0_average >= bound - 1e-9);
                assert!(numerics::max_singular_value(&r.receiver.m) <= 1.0 + 1e-9);
            }
            assert!(c2.p0_average <= c1.p0_average + 1e-9);
        }
    }

    #[test]
    fn envelope_gradient_matches_finite_differences() {
        let mut rng = RngStream::new(11, 0);
        let code = sample_random_code(3, 2, 0.8, &mut rng).unwrap();
        let mut obj = DisplacedObjective {
            code: &code,
            modes: 2,
            with_aux: true,
            opts: BarrierOptions { gap_tol: 1e-8, ..Default::default() },
            evaluations: 0,
            last_u: None,
        };
        let x = [0.3, -0.2, 0.1, 0.25, 0.4];
        let (_, grad) = obj.eval(&x).unwrap();
        let h = 1e-5;
        for k in 0..x.len() {
            let mut xp = x;
            let mut xm = x;
            xp[k] += h;
            xm[k] -= h;
            obj.last_u = None;
            let fp = obj.eval(&xp).unwrap().0;
            obj.last_u = None;
            let fm = obj.eval(&xm).unwrap().0;
            let fd = (fp - fm) / (2.0 * h);
            assert!((fd - grad[k]).abs() < 1e-6, "component {k}: {fd} vs {}", grad[k]);
        }
    }

    #[test]
    fn psk3_class3_closed_form() {
        for a2 in [0.3, 1.0, 2.0] {
            let code = builtin_code(BuiltinCode::Psk { order: 3 }, real(f64::sqrt(a2))).unwrap();
            let r = design_class3(&code).unwrap();
            let expected = 1.0 - (1.0 - (-a2).exp()).powi(2);
            assert!((r.p0_average - expected).abs() < 1e-8, "{a2}: {} vs {expected}", r.p0_average);
            assert!(evaluate_receiver(&r.receiver, &code).unwrap().is_usd());
        }
    }

    #[test]
    fn class3_at_zero_intensity_never_concludes() {
        let code = builtin_code(BuiltinCode::DoubleDegenerate, real(0.0));
        if let Ok(code) = code {
            let r = design_class3(&code).unwrap();
            assert!((r.p0_average - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dd_reference_receiver_routes_states() {
        let a = 0.9;
        let r = dd_reference_receiver(real(a)).unwrap();
        let u = r.unitary.as_ref().unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let out = apply_lop(u, &AmplitudeVector::real(&[-a, 0.0, a * h]).unwrap()).unwrap();
        let expected = [-a * h, a, 0.0];
        for (z, e) in out.as_slice().iter().zip(expected) {
            assert!((z - real(e)).norm() < 1e-12);
        }
        for a2 in [0.1, 0.5, 1.0, 3.0] {
            let code = builtin_code(BuiltinCode::DoubleDegenerate, real(f64::sqrt(a2))).unwrap();
            let r = dd_reference_receiver(real(f64::sqrt(a2))).unwrap();
            let ch = evaluate_receiver(&r, &code).unwrap();
            assert!(ch.is_usd());
            let p0 = ch.average_inconclusive(code.priors());
            assert!((p0 - dd_reference_p0(a2)).abs() < 1e-12, "{a2}");
            // The optimized double-detection receiver can only do better.
            assert!(design_class3(&code).unwrap().p0_average <= p0 + 1e-12);
        }
    }

    #[test]
    fn receiver_json_round_trip() {
        let code = builtin_code(BuiltinCode::Guha, real(0.6)).unwrap();
        let r = design_class2_with(&code, &quick()).unwrap().receiver;
        let json: ReceiverJson = (&r).into();
        assert_eq!(json.gamma_side, "input");
        let text = serde_json::to_string(&json).unwrap();
        let back = LinearReceiver::try_from(serde_json::from_str::<ReceiverJson>(&text).unwrap()).unwrap();
        assert!(numerics::max_abs_diff(&back.m, &r.m) < 1e-15);
        assert_eq!(back.decode, r.decode);

        let dd = dd_reference_receiver(real(0.8)).unwrap();
        let json: ReceiverJson = (&dd).into();
        assert_eq!(json.decode.get("1,2"), Some(&1));
        let back = LinearReceiver::try_from(json).unwrap();
        assert_eq!(back.output_displacement, dd.output_displacement);
    }

    #[test]
    fn decode_map_validation() {
        assert!(DecodeMap::new(vec![(vec![0, 1], 0), (vec![1, 0], 1)]).is_err());
        assert!(DecodeMap::new(vec![(vec![], 0)]).is_err());
        let map = DecodeMap::new(vec![(vec![2, 0], 1)]).unwrap();
        assert_eq!(map.decode(&[0, 2]), Some(1));
        assert_eq!(map.decode(&[0]), None);
        assert!(ReceiverClass::from_number(4).is_err());
    }

    #[test]
    fn contraction_is_enforced() {
        let m = CMatrix::identity(2, 2).scale(1.5);
        let res = LinearReceiver::new(
            ReceiverClass::One,
            m,
            vec![C64::default(); 2],
            vec![C64::default(); 2],
            DecodeMap::single_clicks(2),
        );
        assert!(matches!(res, Err(UsdError::InfeasibleExtension { .. })));
    }
}
