//! Coherent-state codes: amplitude vectors, Gram matrices in phase space and
//! Hilbert space, degeneracy classification, the named code families and
//! random sampling.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, UsdError};
use crate::numerics::{self, CMatrix, RngStream, C64};
use crate::optim::levenberg_marquardt;

/// Complex amplitudes of one multimode coherent state; `|α_j|²` is the mean
/// photon number in mode `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudeVector(pub Vec<C64>);

impl AmplitudeVector {
    pub fn new(amplitudes: Vec<C64>) -> Result<Self> {
        if amplitudes.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return invalid("amplitudes must be finite");
        }
        Ok(Self(amplitudes))
    }

    pub fn real(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|&x| C64::new(x, 0.0)).collect())
    }

    pub fn modes(&self) -> usize {
        self.0.len()
    }

    /// Total mean photon number.
    pub fn photons(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Phase-space scalar product `(self, other) = Σ conj(self_k) other_k`.
    pub fn scalar(&self, other: &AmplitudeVector) -> C64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a.conj() * b).sum()
    }

    /// Hilbert-space overlap of the two coherent states.
    pub fn overlap(&self, other: &AmplitudeVector) -> C64 {
        (C64::new(-0.5 * self.photons() - 0.5 * other.photons(), 0.0) + self.scalar(other)).exp()
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.0
    }
}

/// A code of `c` coherent states on `m` modes with prior probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    modes: usize,
    states: Vec<AmplitudeVector>,
    priors: Vec<f64>,
}

impl Constellation {
    pub fn new(states: Vec<AmplitudeVector>, priors: Vec<f64>) -> Result<Self> {
        let Some(first) = states.first() else {
            return invalid("a constellation needs at least one state");
        };
        let modes = first.modes();
        if modes == 0 {
            return invalid("states must have at least one mode");
        }
        if let Some(bad) = states.iter().find(|s| s.modes() != modes) {
            return Err(UsdError::DimensionMismatch { expected: modes, actual: bad.modes() });
        }
        if priors.len() != states.len() {
            return Err(UsdError::DimensionMismatch { expected: states.len(), actual: priors.len() });
        }
        if priors.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return invalid("priors must be finite and non-negative");
        }
        let total: f64 = priors.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return invalid(format!("priors must sum to 1, got {total}"));
        }
        Ok(Self { modes, states, priors })
    }

    pub fn uniform(states: Vec<AmplitudeVector>) -> Result<Self> {
        let c = states.len().max(1);
        Self::new(states, vec![1.0 / c as f64; c])
    }

    pub fn with_priors(&self, priors: Vec<f64>) -> Result<Self> {
        Self::new(self.states.clone(), priors)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn states(&self) -> &[AmplitudeVector] {
        &self.states
    }

    pub fn priors(&self) -> &[f64] {
        &self.priors
    }

    pub fn is_uniform(&self) -> bool {
        let u = 1.0 / self.len() as f64;
        self.priors.iter().all(|p| (p - u).abs() <= 1e-12)
    }

    /// The `c×m` matrix whose rows are the amplitude vectors.
    pub fn amplitude_matrix(&self) -> CMatrix {
        CMatrix::from_fn(self.len(), self.modes, |i, k| self.states[i].0[k])
    }

    /// Code displaced by `gamma` (length `m`, or `m + 1` to append an
    /// auxiliary mode that starts in vacuum).
    pub fn displaced(&self, gamma: &[C64]) -> Result<Constellation> {
        if gamma.len() != self.modes && gamma.len() != self.modes + 1 {
            return Err(UsdError::DimensionMismatch { expected: self.modes, actual: gamma.len() });
        }
        let states = self
            .states
            .iter()
            .map(|s| {
                let mut v = s.0.clone();
                v.resize(gamma.len(), C64::new(0.0, 0.0));
                AmplitudeVector::new(v.iter().zip(gamma).map(|(a, g)| a + g).collect())
            })
            .collect::<Result<Vec<_>>>()?;
        Constellation::new(states, self.priors.clone())
    }
}

/// Phase-space Gram matrix, `(i, j) ↦ (α^i, α^j)`.
pub fn phase_space_gram(code: &Constellation) -> CMatrix {
    let c = code.len();
    CMatrix::from_fn(c, c, |i, j| code.states[i].scalar(&code.states[j]))
}

/// Hilbert-space Gram matrix of the coherent states, `(i, j) ↦ ⟨α^i|α^j⟩`.
pub fn hilbert_gram(code: &Constellation) -> CMatrix {
    let c = code.len();
    CMatrix::from_fn(c, c, |i, j| {
        if i == j {
            C64::new(1.0, 0.0)
        } else {
            code.states[i].overlap(&code.states[j])
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DegeneracyClass {
    FullRank,
    Single,
    DoubleOrHigher,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegeneracyReport {
    pub rank: usize,
    /// `min(c, m) - rank`.
    pub degeneracy: usize,
    pub class: DegeneracyClass,
}

/// Numerical rank of the amplitude matrix and the receiver class it admits.
pub fn classify_degeneracy(code: &Constellation, tol: f64) -> Result<DegeneracyReport> {
    if !(tol > 0.0) {
        return invalid(format!("tolerance must be positive, got {tol}"));
    }
    let c = code.len();
    let rank = numerics::numerical_rank(&code.amplitude_matrix(), tol);
    let class = if rank == c {
        DegeneracyClass::FullRank
    } else if rank + 1 == c {
        DegeneracyClass::Single
    } else {
        DegeneracyClass::DoubleOrHigher
    };
    Ok(DegeneracyReport { rank, degeneracy: c.min(code.modes()) - rank, class })
}

pub fn classify_default(code: &Constellation) -> DegeneracyReport {
    let tol = numerics::default_rank_tol(code.len(), code.modes());
    classify_degeneracy(code, tol).expect("default tolerance is positive")
}

/// Named code families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuiltinCode {
    /// Pulse-position modulation: state `j` is `α` in mode `j`, vacuum elsewhere.
    Ppm { modes: usize },
    /// State `j` is vacuum in mode `j` and `α` elsewhere.
    DualPpm { modes: usize },
    /// Two-mode single-degeneracy code {(α, α), (α, -α), (-α, α)}.
    Guha,
    /// Single-mode double-degeneracy code {-α, α, 0}.
    DoubleDegenerate,
    /// Phase-shift keying `α e^{2πij/M}`, `j = 0..M-1`, on one mode.
    Psk { order: usize },
}

impl BuiltinCode {
    /// Parses a family name; `m` fills the mode count (PPM families) or the
    /// order (generic `psk`).
    pub fn from_name(name: &str, m: usize) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "ppm" => Ok(Self::Ppm { modes: m }),
            "dual-ppm" | "dualppm" => Ok(Self::DualPpm { modes: m }),
            "guha" | "single-degenerate" | "sd" => Ok(Self::Guha),
            "dd" | "double-degenerate" => Ok(Self::DoubleDegenerate),
            "bpsk" => Ok(Self::Psk { order: 2 }),
            "3psk" => Ok(Self::Psk { order: 3 }),
            "qpsk" | "4psk" => Ok(Self::Psk { order: 4 }),
            "psk" | "mpsk" => Ok(Self::Psk { order: m }),
            other => invalid(format!("unknown code family '{other}'")),
        }
    }
}

impl FromStr for BuiltinCode {
    type Err = UsdError;

    fn from_str(s: &str) -> Result<Self> {
        Self::from_name(s, 2)
    }
}

impl fmt::Display for BuiltinCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Ppm { modes } => write!(f, "ppm(m={modes})"),
            Self::DualPpm { modes } => write!(f, "dual-ppm(m={modes})"),
            Self::Guha => write!(f, "guha"),
            Self::DoubleDegenerate => write!(f, "dd"),
            Self::Psk { order } => write!(f, "{order}psk"),
        }
    }
}

/// Builds a named code with uniform priors.
pub fn builtin_code(code: BuiltinCode, alpha: C64) -> Result<Constellation> {
    let zero = C64::new(0.0, 0.0);
    let states: Vec<Vec<C64>> = match code {
        BuiltinCode::Ppm { modes } | BuiltinCode::DualPpm { modes } if modes < 2 => {
            return invalid(format!("PPM-type codes need at least 2 modes, got {modes}"));
        }
        BuiltinCode::Ppm { modes } => (0..modes)
            .map(|j| (0..modes).map(|k| if k == j { alpha } else { zero }).collect())
            .collect(),
        BuiltinCode::DualPpm { modes } => (0..modes)
            .map(|j| (0..modes).map(|k| if k == j { zero } else { alpha }).collect())
            .collect(),
        BuiltinCode::Guha => vec![vec![alpha, alpha], vec![alpha, -alpha], vec![-alpha, alpha]],
        BuiltinCode::DoubleDegenerate => vec![vec![-alpha], vec![alpha], vec![zero]],
        BuiltinCode::Psk { order } if order < 2 => {
            return invalid(format!("PSK order must be at least 2, got {order}"));
        }
        BuiltinCode::Psk { order } => (0..order)
            .map(|j| {
                let phase = 2.0 * std::f64::consts::PI * j as f64 / order as f64;
                vec![alpha * C64::from_polar(1.0, phase)]
            })
            .collect(),
    };
    let states = states.into_iter().map(AmplitudeVector::new).collect::<Result<Vec<_>>>()?;
    Constellation::uniform(states)
}

/// `c` independent states with real amplitudes drawn uniformly from the
/// sphere of radius `√n` in `m` dimensions; uniform priors.
pub fn sample_random_code(c: usize, m: usize, n: f64, rng: &mut RngStream) -> Result<Constellation> {
    if c == 0 || m == 0 {
        return invalid("random codes need c ≥ 1 and m ≥ 1");
    }
    if !(n >= 0.0) {
        return invalid(format!("photon number must be non-negative, got {n}"));
    }
    let states = (0..c)
        .map(|_| AmplitudeVector::real(&numerics::sample_real_sphere(m, n.sqrt(), rng)?))
        .collect::<Result<Vec<_>>>()?;
    Constellation::uniform(states)
}

/// A displacement that maps a code onto a PPM-equivalent one.
#[derive(Debug, Clone, PartialEq)]
pub struct PpmReduction {
    /// Length `m`, or `m + 1` when the auxiliary mode is used (the last entry
    /// is then the real auxiliary displacement).
    pub gamma: Vec<C64>,
    /// Diagonal value of the displaced phase-space Gram matrix.
    pub tau: f64,
    pub residual: f64,
}

const PPM_RESIDUAL_TOL: f64 = 1e-8;
const PPM_STARTS: usize = 16;

/// Searches for `γ`, `τ > 0` with displaced Gram `= τ·I`.
///
/// Nonlinear least squares over `(Re γ, Im γ, [g], τ)` from several starts;
/// among solutions with residual ≤ 1e-8 the one with the smallest `‖γ‖` wins.
pub fn ppm_reduction(code: &Constellation, allow_aux: bool) -> Option<PpmReduction> {
    let c = code.len();
    let m = code.modes();
    let nvar = 2 * m + usize::from(allow_aux) + 1;
    let states: Vec<&[C64]> = code.states().iter().map(|s| s.as_slice()).collect();
    let scale = code.states().iter().map(|s| s.photons()).fold(0.0, f64::max).max(1e-12);

    let residuals = |x: &[f64]| -> (DVector<f64>, DMatrix<f64>) {
        let gamma: Vec<C64> = (0..m).map(|k| C64::new(x[k], x[m + k])).collect();
        let aux = if allow_aux { x[2 * m] } else { 0.0 };
        let tau = x[nvar - 1];
        let beta: Vec<Vec<C64>> =
            states.iter().map(|s| s.iter().zip(&gamma).map(|(a, g)| a + g).collect()).collect();
        let rows = c * c;
        let mut r = DVector::zeros(rows);
        let mut jac = DMatrix::zeros(rows, nvar);
        let mut row = 0;
        for i in 0..c {
            for j in i..c {
                let gij: C64 = beta[i].iter().zip(&beta[j]).map(|(a, b)| a.conj() * b).sum::<C64>()
                    + C64::new(aux * aux, 0.0);
                let target = if i == j { tau } else { 0.0 };
                // dG_ij/dRe γ_k = β^j_k + conj β^i_k ; dG_ij/dIm γ_k = i(conj β^i_k - β^j_k)
                let grads: Vec<(C64, C64)> = (0..m)
                    .map(|k| {
                        let re = beta[j][k] + beta[i][k].conj();
                        let im = C64::new(0.0, 1.0) * (beta[i][k].conj() - beta[j][k]);
                        (re, im)
                    })
                    .collect();
                if i == j {
                    r[row] = gij.re - target;
                    for k in 0..m {
                        jac[(row, k)] = grads[k].0.re;
                        jac[(row, m + k)] = grads[k].1.re;
                    }
                    if allow_aux {
                        jac[(row, 2 * m)] = 2.0 * aux;
                    }
                    jac[(row, nvar - 1)] = -1.0;
                    row += 1;
                } else {
                    for (part, pick) in [(0, 0usize), (1, 1usize)] {
                        let take = |z: C64| if pick == 0 { z.re } else { z.im };
                        r[row] = take(gij);
                        for k in 0..m {
                            jac[(row, k)] = take(grads[k].0);
                            jac[(row, m + k)] = take(grads[k].1);
                        }
                        if allow_aux && part == 0 {
                            jac[(row, 2 * m)] = 2.0 * aux;
                        }
                        row += 1;
                    }
                }
            }
        }
        (r, jac)
    };

    let mut rng = RngStream::new(0x5eed, 0);
    let centroid: Vec<C64> = (0..m)
        .map(|k| -states.iter().map(|s| s[k]).sum::<C64>() / c as f64)
        .collect();
    let mut best: Option<PpmReduction> = None;
    for start in 0..PPM_STARTS {
        let mut x0 = vec![0.0; nvar];
        match start {
            0 => {}
            1 => {
                for k in 0..m {
                    x0[k] = centroid[k].re;
                    x0[m + k] = centroid[k].im;
                }
            }
            _ => {
                for v in x0.iter_mut().take(nvar - 1) {
                    *v = rng.standard_normal() * scale.sqrt();
                }
            }
        }
        if allow_aux && start % 2 == 0 {
            x0[2 * m] = scale.sqrt();
        }
        x0[nvar - 1] = scale;
        let (x, res) = levenberg_marquardt(&residuals, &x0, 500);
        let tau = x[nvar - 1];
        let max_entry = residuals(&x).0.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        if !(max_entry <= PPM_RESIDUAL_TOL && tau > PPM_RESIDUAL_TOL) {
            continue;
        }
        let mut gamma: Vec<C64> = (0..m).map(|k| C64::new(x[k], x[m + k])).collect();
        if allow_aux {
            gamma.push(C64::new(x[2 * m].abs(), 0.0));
        }
        let norm = gamma.iter().map(|g| g.norm_sqr()).sum::<f64>();
        let better = match &best {
            None => true,
            Some(b) => norm < b.gamma.iter().map(|g| g.norm_sqr()).sum::<f64>() - 1e-12,
        };
        if better {
            best = Some(PpmReduction { gamma, tau, residual: res.max(max_entry) });
        }
    }
    best
}

/// Wire format for codes: `{"m": int, "states": [[[re, im], ...], ...], "priors": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstellationJson {
    pub m: usize,
    pub states: Vec<Vec<[f64; 2]>>,
    #[serde(default)]
    pub priors: Option<Vec<f64>>,
}

impl From<&Constellation> for ConstellationJson {
    fn from(code: &Constellation) -> Self {
        Self {
            m: code.modes(),
            states: code.states().iter().map(|s| s.0.iter().map(|z| [z.re, z.im]).collect()).collect(),
            priors: Some(code.priors().to_vec()),
        }
    }
}

impl TryFrom<ConstellationJson> for Constellation {
    type Error = UsdError;

    fn try_from(value: ConstellationJson) -> Result<Self> {
        let states = value
            .states
            .iter()
            .map(|s| {
                if s.len() != value.m {
                    return Err(UsdError::DimensionMismatch { expected: value.m, actual: s.len() });
                }
                AmplitudeVector::new(s.iter().map(|[re, im]| C64::new(*re, *im)).collect())
            })
            .collect::<Result<Vec<_>>>()?;
        match value.priors {
            Some(p) => Constellation::new(states, p),
            None => Constellation::uniform(states),
        }
    }
}
