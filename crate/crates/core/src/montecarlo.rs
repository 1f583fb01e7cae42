//! Shot-by-shot simulation of on-off detection behind a linear receiver.
//!
//! Each detector clicks independently with probability `1 - e^{-|ζ|²}`,
//! which is exact for on-off detection of a product coherent state.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::constellation::Constellation;
use crate::error::{invalid, Result};
use crate::info::ChannelModel;
use crate::numerics::RngStream;
use crate::receiver::{evaluate_receiver, LinearReceiver};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stratification {
    /// The same number of shots for every input.
    Equal,
    /// Inputs drawn from the priors shot by shot.
    Priors,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    /// Total number of shots.
    pub shots: u64,
    pub shots_per_input: Vec<u64>,
    /// `counts[x][y]`, with `y = 0` inconclusive and `y = s + 1` for codeword `s`.
    pub counts: Vec<Vec<u64>>,
    pub empirical_channel: Vec<Vec<f64>>,
    /// Prior-weighted inconclusive rate.
    pub p0_hat: f64,
    /// Binomial standard error of each channel entry.
    pub std_err: Vec<Vec<f64>>,
    /// Conclusive outcomes naming the wrong codeword.
    pub wrong_decodes: u64,
    /// Shots with clicks that match no pattern of the decode map (counted
    /// as inconclusive).
    pub undesigned_patterns: u64,
}

#[derive(Debug, Clone)]
struct Tally {
    counts: Vec<Vec<u64>>,
    wrong: u64,
    undesigned: u64,
}

impl Tally {
    fn new(c: usize) -> Self {
        Self { counts: vec![vec![0; c + 1]; c], wrong: 0, undesigned: 0 }
    }

    fn merge(mut self, other: Tally) -> Tally {
        for (a, b) in self.counts.iter_mut().zip(other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        self.wrong += other.wrong;
        self.undesigned += other.undesigned;
        self
    }
}

struct Sampler {
    clicks: Vec<Vec<f64>>,
    decode: HashMap<u64, usize>,
    priors: Vec<f64>,
}

impl Sampler {
    fn new(r: &LinearReceiver, code: &Constellation) -> Result<Self> {
        // Checks that the receiver fits the code.
        evaluate_receiver(r, code)?;
        if r.detectors() > 64 {
            return invalid("simulation supports at most 64 detectors");
        }
        let clicks = code
            .states()
            .iter()
            .map(|s| r.click_probabilities(s.as_slice()))
            .collect::<Result<Vec<_>>>()?;
        let decode = r
            .decode
            .entries()
            .iter()
            .map(|(p, s)| (p.iter().fold(0u64, |m, d| m | (1 << d)), *s))
            .collect();
        Ok(Self { clicks, decode, priors: code.priors().to_vec() })
    }

    fn shot(&self, x: usize, rng: &mut RngStream, tally: &mut Tally) {
        let mut mask = 0u64;
        for (d, &p) in self.clicks[x].iter().enumerate() {
            if rng.uniform() < p {
                mask |= 1 << d;
            }
        }
        let y = match self.decode.get(&mask) {
            Some(&s) => {
                if s != x {
                    tally.wrong += 1;
                }
                s + 1
            }
            None => {
                if mask != 0 {
                    tally.undesigned += 1;
                }
                0
            }
        };
        tally.counts[x][y] += 1;
    }

    fn draw_input(&self, rng: &mut RngStream) -> usize {
        let u = rng.uniform();
        let mut acc = 0.0;
        for (x, p) in self.priors.iter().enumerate() {
            acc += p;
            if u < acc {
                return x;
            }
        }
        self.priors.len() - 1
    }

    fn run(&self, shots: u64, strat: Stratification, rng: &mut RngStream) -> Tally {
        let c = self.clicks.len();
        let mut tally = Tally::new(c);
        match strat {
            Stratification::Equal => {
                for x in 0..c {
                    for _ in 0..shots {
                        self.shot(x, rng, &mut tally);
                    }
                }
            }
            Stratification::Priors => {
                for _ in 0..shots {
                    let x = self.draw_input(rng);
                    self.shot(x, rng, &mut tally);
                }
            }
        }
        tally
    }
}

fn finish(tally: Tally, priors: &[f64]) -> SimReport {
    let shots_per_input: Vec<u64> = tally.counts.iter().map(|row| row.iter().sum()).collect();
    let empirical_channel: Vec<Vec<f64>> = tally
        .counts
        .iter()
        .zip(&shots_per_input)
        .map(|(row, &n)| row.iter().map(|&k| if n == 0 { 0.0 } else { k as f64 / n as f64 }).collect())
        .collect();
    let std_err = empirical_channel
        .iter()
        .zip(&shots_per_input)
        .map(|(row, &n)| row.iter().map(|&p| if n == 0 { 0.0 } else { (p * (1.0 - p) / n as f64).sqrt() }).collect())
        .collect();
    let p0_hat = empirical_channel.iter().zip(priors).map(|(row, p)| p * row[0]).sum();
    SimReport {
        shots: shots_per_input.iter().sum(),
        shots_per_input,
        counts: tally.counts,
        empirical_channel,
        p0_hat,
        std_err,
        wrong_decodes: tally.wrong,
        undesigned_patterns: tally.undesigned,
    }
}

/// Simulates `shots` shots per input on one stream.
pub fn simulate(r: &LinearReceiver, code: &Constellation, shots: u64, rng: &mut RngStream) -> Result<SimReport> {
    simulate_stratified(r, code, shots, Stratification::Equal, rng)
}

/// With `Equal`, `shots` is per input; with `Priors`, it is the total.
pub fn simulate_stratified(
    r: &LinearReceiver,
    code: &Constellation,
    shots: u64,
    strat: Stratification,
    rng: &mut RngStream,
) -> Result<SimReport> {
    if shots == 0 {
        return invalid("shots must be at least 1");
    }
    let sampler = Sampler::new(r, code)?;
    Ok(finish(sampler.run(shots, strat, rng), code.priors()))
}

/// Splits the shots over `workers` tasks, worker `i` drawing from stream
/// `base_stream + i`. The result depends on `(seed, base_stream, workers)`
/// but not on thread scheduling.
pub fn simulate_parallel(
    r: &LinearReceiver,
    code: &Constellation,
    shots: u64,
    strat: Stratification,
    seed: u64,
    base_stream: u64,
    workers: usize,
) -> Result<SimReport> {
    if shots == 0 {
        return invalid("shots must be at least 1");
    }
    if workers == 0 {
        return invalid("at least one worker is required");
    }
    let sampler = Sampler::new(r, code)?;
    let w = workers as u64;
    let tallies: Vec<Tally> = (0..w)
        .into_par_iter()
        .map(|i| {
            let share = shots / w + u64::from(i < shots % w);
            let mut rng = RngStream::new(seed, base_stream + i);
            sampler.run(share, strat, &mut rng)
        })
        .collect();
    let c = code.len();
    let total = tallies.into_iter().fold(Tally::new(c), Tally::merge);
    Ok(finish(total, code.priors()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquaredTest {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Pearson goodness of fit of the simulated counts against an analytic
/// channel, one multinomial per input. Cells with zero analytic
/// probability are left out of the statistic; any count in them gives a
/// p-value of zero.
pub fn chi_squared_test(report: &SimReport, analytic: &ChannelModel) -> Result<ChiSquaredTest> {
    if analytic.inputs() != report.counts.len() || analytic.outputs() != report.counts.first().map_or(0, Vec::len) {
        return invalid("analytic channel does not match the simulated one");
    }
    let mut statistic = 0.0;
    let mut dof = 0usize;
    let mut impossible = false;
    for (x, row) in report.counts.iter().enumerate() {
        let n = report.shots_per_input[x] as f64;
        if n == 0.0 {
            continue;
        }
        let mut cells = 0usize;
        for (y, &k) in row.iter().enumerate() {
            let expected = n * analytic.p(x, y);
            if expected <= 1e-12 {
                impossible |= k > 0;
                continue;
            }
            statistic += (k as f64 - expected).powi(2) / expected;
            cells += 1;
        }
        dof += cells.saturating_sub(1);
    }
    let p_value = if impossible {
        0.0
    } else if dof == 0 {
        1.0
    } else {
        let dist = ChiSquared::new(dof as f64).map_err(|e| crate::error::UsdError::InvalidParameter(e.to_string()))?;
        1.0 - dist.cdf(statistic)
    };
    Ok(ChiSquaredTest { statistic, dof, p_value })
}
