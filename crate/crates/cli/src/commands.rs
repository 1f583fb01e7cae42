use std::path::Path;

use coherent_usd::bounds::{analytic_bound, bergou_bound, bergou_numeric, peres_terno_bound, AnalyticFamily};
use coherent_usd::info::{
    capacity, CapacityResult, finite_rate, max_capacity_over_weights, ChannelModel, WeightSearch, WeightedCapacity,
};
use coherent_usd::montecarlo::{chi_squared_test, simulate_parallel, Stratification};
use coherent_usd::receiver::{
    design_class1, design_class2_with, design_class3, evaluate_receiver, Class2Options, DesignReport, ReceiverJson,
};
use coherent_usd::{
    builtin_code, classify_default, hilbert_gram, phase_space_gram, ppm_reduction, sample_random_code, BuiltinCode,
    CMatrix, Constellation, ConstellationJson, DegeneracyClass, RngStream, C64,
};
use serde_json::{json, Value};

use crate::args::{
    BoundArgs, BoundChoice, ChannelArgs, ChannelChoice, CodeArgs, DesignArgs, FiniteRateArgs, Scale, SimulateArgs,
    Stratify, SweepArgs, SweepParam,
};
use crate::error::RunError;
use crate::output::{Artifact, Table};

/// Capacity tolerance (bits) used throughout the runner.
pub const CAPACITY_TOL: f64 = 1e-10;

pub fn load_code(a: &CodeArgs, seed: u64) -> Result<Constellation, RunError> {
    if a.code.ends_with(".json") || Path::new(&a.code).is_file() {
        let text = std::fs::read_to_string(&a.code)
            .map_err(|e| RunError::Config(format!("cannot read code file '{}': {e}", a.code)))?;
        let parsed: ConstellationJson =
            serde_json::from_str(&text).map_err(|e| RunError::Config(format!("bad code file '{}': {e}", a.code)))?;
        return Ok(Constellation::try_from(parsed)?);
    }
    if a.code == "random" {
        return Ok(sample_random_code(a.c, a.m, a.n, &mut RngStream::new(seed, 0))?);
    }
    if !(a.alpha2 >= 0.0) || !a.alpha2.is_finite() {
        return Err(RunError::Config(format!("--alpha2 must be finite and non-negative, got {}", a.alpha2)));
    }
    let family = BuiltinCode::from_name(&a.code, a.m)?;
    Ok(builtin_code(family, C64::new(a.alpha2.sqrt(), 0.0))?)
}

fn pairs(m: &CMatrix) -> Vec<Vec<[f64; 2]>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|k| [m[(i, k)].re, m[(i, k)].im]).collect()).collect()
}

pub fn design(code: &Constellation, class: u8, restarts: usize, seed: u64) -> Result<DesignReport, RunError> {
    let report = match class {
        1 => design_class1(code),
        2 => design_class2_with(code, &Class2Options { restarts, seed, ..Default::default() }),
        3 => design_class3(code),
        other => return Err(RunError::Config(format!("--class must be 1, 2 or 3, got {other}"))),
    };
    report.map_err(|e| RunError::from(e).context(json!({ "class": class, "code": ConstellationJson::from(code) })))
}

/// Lowest class whose receivers can handle the code: 2 up to single
/// degeneracy, 3 beyond.
pub fn auto_class(code: &Constellation) -> u8 {
    match classify_default(code).class {
        DegeneracyClass::FullRank | DegeneracyClass::Single => 2,
        DegeneracyClass::DoubleOrHigher => 3,
    }
}

/// The channel seen by a receiver class, or by the optimal USD measurement.
pub fn channel(code: &Constellation, choice: ChannelChoice, restarts: usize, seed: u64) -> Result<(ChannelModel, String), RunError> {
    let class = match choice {
        ChannelChoice::Bound => {
            let b = bergou_bound(code)?;
            return Ok((ChannelModel::from_inconclusive(&b.q)?, format!("bound ({})", b.method)));
        }
        ChannelChoice::Auto => auto_class(code),
        ChannelChoice::Class(c) => c,
    };
    let r = design(code, class, restarts, seed)?;
    Ok((evaluate_receiver(&r.receiver, code)?, format!("class {class}")))
}

fn bound_channel(code: &Constellation, weights: &[f64]) -> coherent_usd::Result<ChannelModel> {
    ChannelModel::from_inconclusive(&bergou_bound(&code.with_priors(weights.to_vec())?)?.q)
}

/// Like [`channel`], but the receiver (or the optimal USD measurement) is
/// designed for the weights that maximize capacity rather than for the
/// code's priors. The bound's optimum is found first; it starts the class
/// search and caps it, since no receiver beats the optimal measurement.
pub fn capacity_optimal_channel(
    code: &Constellation,
    choice: ChannelChoice,
    restarts: usize,
    seed: u64,
) -> Result<(WeightedCapacity, String), RunError> {
    let c = code.len();
    let global = max_capacity_over_weights(c, |w| bound_channel(code, w), &WeightSearch::new(c))
        .map_err(|e| RunError::from(e).context(json!({ "code": ConstellationJson::from(code), "channel": "bound" })))?;
    let class = match choice {
        ChannelChoice::Bound => return Ok((global, "bound, capacity-optimal weights".into())),
        ChannelChoice::Auto => auto_class(code),
        ChannelChoice::Class(k) => k,
    };
    let mut search = WeightSearch::new(c);
    search.starts.insert(0, global.weights.clone());
    search.ceiling = Some(global.capacity.capacity);
    let mut failure = None;
    let found = max_capacity_over_weights(
        c,
        |w| {
            let weighted = code.with_priors(w.to_vec())?;
            match design(&weighted, class, restarts, seed) {
                Ok(r) => evaluate_receiver(&r.receiver, &weighted),
                Err(e) => {
                    let message = e.to_string();
                    failure = Some(e);
                    Err(coherent_usd::UsdError::SolverFailure(message))
                }
            }
        },
        &search,
    );
    match (found, failure) {
        (Ok(best), _) => Ok((best, format!("class {class}, capacity-optimal weights"))),
        (Err(_), Some(e)) => Err(e),
        (Err(e), None) => Err(e.into()),
    }
}

fn design_json(code: &Constellation, class: u8, r: &DesignReport) -> Value {
    json!({
        "code": ConstellationJson::from(code),
        "class": class,
        "p0": r.p0_average,
        "p0_per_state": r.p0_per_state,
        "receiver": ReceiverJson::from(&r.receiver),
        "diagnostics": r.diagnostics,
    })
}

pub fn gram(a: &CodeArgs, seed: u64) -> Result<Artifact, RunError> {
    let code = load_code(a, seed)?;
    Ok(Artifact::Json(json!({
        "phase_space": pairs(&phase_space_gram(&code)),
        "hilbert": pairs(&hilbert_gram(&code)),
    })))
}

pub fn classify(a: &CodeArgs, seed: u64) -> Result<Artifact, RunError> {
    let code = load_code(a, seed)?;
    let report = classify_default(&code);
    let reduction = ppm_reduction(&code, false)
        .or_else(|| if code.len() == code.modes() + 1 { ppm_reduction(&code, true) } else { None });
    let reduction = reduction.map(|r| {
        json!({
            "gamma": r.gamma.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>(),
            "tau": r.tau,
            "residual": r.residual,
        })
    });
    Ok(Artifact::Json(json!({
        "states": code.len(),
        "modes": code.modes(),
        "rank": report.rank,
        "degeneracy": report.degeneracy,
        "class": report.class,
        "ppm_reduction": reduction,
    })))
}

pub fn design_cmd(a: &DesignArgs, seed: u64) -> Result<Artifact, RunError> {
    let code = load_code(&a.code, seed)?;
    let r = design(&code, a.class, a.restarts, seed)?;
    Ok(Artifact::Json(design_json(&code, a.class, &r)))
}

fn closed_form_family(name: &str) -> Result<AnalyticFamily, RunError> {
    match name.to_ascii_lowercase().as_str() {
        "guha" | "single-degenerate" | "sd" => Ok(AnalyticFamily::SingleDegenerateGuha),
        "dd" | "double-degenerate" => Ok(AnalyticFamily::DoubleDegenerate),
        "3psk" => Ok(AnalyticFamily::Psk3),
        other => Err(RunError::Config(format!("no closed-form bound for code '{other}'"))),
    }
}

pub fn bound(a: &BoundArgs, seed: u64) -> Result<Artifact, RunError> {
    if a.method == BoundChoice::ClosedForm {
        let family = closed_form_family(&a.code.code)?;
        let p0 = analytic_bound(family, a.code.alpha2)?;
        return Ok(Artifact::Json(json!({ "method": "closed-form", "family": family, "p0": p0 })));
    }
    let code = load_code(&a.code, seed)?;
    let result = match a.method {
        BoundChoice::Auto => bergou_bound(&code),
        BoundChoice::PeresTerno => peres_terno_bound(&code),
        BoundChoice::BergouNumeric => bergou_numeric(&code),
        BoundChoice::ClosedForm => unreachable!(),
    }
    .map_err(|e| RunError::from(e).context(json!({ "code": ConstellationJson::from(&code) })))?;
    Ok(Artifact::Json(serde_json::to_value(result).map_err(|e| RunError::Io(e.to_string()))?))
}

/// Channel, capacity result and provenance for `capacity` and `finite-rate`.
fn analysed_channel(a: &ChannelArgs, code: &Constellation, seed: u64) -> Result<(ChannelModel, CapacityResult, String, Option<Vec<f64>>), RunError> {
    if a.optimize_weights {
        let (best, source) = capacity_optimal_channel(code, a.class, a.restarts, seed)?;
        return Ok((best.channel, best.capacity, source, Some(best.weights)));
    }
    let (ch, source) = channel(code, a.class, a.restarts, seed)?;
    let cap = capacity(&ch, CAPACITY_TOL)?;
    Ok((ch, cap, source, None))
}

pub fn capacity_cmd(a: &ChannelArgs, seed: u64) -> Result<Artifact, RunError> {
    let code = load_code(&a.code, seed)?;
    let (ch, cap, source, weights) = analysed_channel(a, &code, seed)?;
    Ok(Artifact::Json(json!({
        "source": source,
        "design_weights": weights,
        "p0": ch.average_inconclusive(code.priors()),
        "channel": ch.rows(),
        "capacity": cap.capacity,
        "optimal_input": cap.optimal_input,
        "dispersion": cap.dispersion,
        "iterations": cap.iterations,
        "gap": cap.gap,
    })))
}

pub fn finite_rate_cmd(a: &FiniteRateArgs, seed: u64) -> Result<Artifact, RunError> {
    let code = load_code(&a.channel.code, seed)?;
    let (_, cap, source, _) = analysed_channel(&a.channel, &code, seed)?;
    let v = cap.dispersion;
    let mut t = Table::new(&["length", "rate"])
        .meta("command", "finite-rate")
        .meta("code", &a.channel.code.code)
        .meta("alpha2", a.channel.code.alpha2)
        .meta("source", source)
        .meta("epsilon", a.epsilon)
        .meta("capacity", cap.capacity)
        .meta("dispersion", v);
    for &l in &a.length {
        t.push(vec![l as f64, finite_rate(cap.capacity, v, l, a.epsilon)?]);
    }
    Ok(Artifact::Table(t))
}

pub fn simulate_cmd(a: &SimulateArgs, seed: u64) -> Result<Artifact, RunError> {
    let code = load_code(&a.code, seed)?;
    let class = match a.class {
        ChannelChoice::Auto => auto_class(&code),
        ChannelChoice::Class(c) => c,
        ChannelChoice::Bound => return Err(RunError::Config("the bound has no receiver to simulate".into())),
    };
    let r = design(&code, class, a.restarts, seed)?;
    let strat = match a.stratify {
        Stratify::Equal => Stratification::Equal,
        Stratify::Priors => Stratification::Priors,
    };
    let report = simulate_parallel(&r.receiver, &code, a.shots, strat, seed, 1, a.workers)?;
    let analytic = evaluate_receiver(&r.receiver, &code)?;
    let mut max_z = 0.0_f64;
    for (x, row) in report.empirical_channel.iter().enumerate() {
        for (y, p) in row.iter().enumerate() {
            let diff = (p - analytic.p(x, y)).abs();
            let se = report.std_err[x][y];
            if se > 0.0 {
                max_z = max_z.max(diff / se);
            } else if diff > 0.0 {
                max_z = f64::INFINITY;
            }
        }
    }
    let chi2 = chi_squared_test(&report, &analytic)?;
    Ok(Artifact::Json(json!({
        "class": class,
        "p0_analytic": r.p0_average,
        "analytic_channel": analytic.rows(),
        "simulation": report,
        "max_z_score": if max_z.is_finite() { json!(max_z) } else { json!("inf") },
        "chi_squared": chi2,
    })))
}

pub fn grid(min: f64, max: f64, steps: usize, scale: Scale) -> Result<Vec<f64>, RunError> {
    if steps == 0 || !(min <= max) || !min.is_finite() || !max.is_finite() {
        return Err(RunError::Config(format!("invalid range [{min}, {max}] with {steps} steps")));
    }
    if scale == Scale::Log && min <= 0.0 {
        return Err(RunError::Config("log scale needs a positive minimum".into()));
    }
    if steps == 1 {
        return Ok(vec![min]);
    }
    Ok((0..steps)
        .map(|i| {
            let f = i as f64 / (steps - 1) as f64;
            let v = match scale {
                Scale::Linear => min + f * (max - min),
                Scale::Log => (min.ln() + f * (max.ln() - min.ln())).exp(),
            };
            // Twelve significant digits, so 0.05 + 2·0.05 prints as 0.15.
            format!("{v:.11e}").parse::<f64>().unwrap_or(v)
        })
        .collect())
}

pub fn sweep(a: &SweepArgs, seed: u64) -> Result<Artifact, RunError> {
    let values = grid(a.min, a.max, a.steps, a.scale)?;
    let random = a.code.code == "random";
    match (a.param, random) {
        (SweepParam::N, false) => return Err(RunError::Config("--param n applies to --code random".into())),
        (SweepParam::Alpha2, true) => return Err(RunError::Config("random codes are swept with --param n".into())),
        _ => {}
    }
    let name = match a.param {
        SweepParam::Alpha2 => "alpha2",
        SweepParam::N => "n",
    };
    let rows = crate::par_map(&values, |&v| -> Result<Vec<f64>, RunError> {
        let mut args = a.code.clone();
        match a.param {
            SweepParam::Alpha2 => args.alpha2 = v,
            SweepParam::N => args.n = v,
        }
        let code = load_code(&args, seed)?;
        let r = design(&code, a.class, a.restarts, seed)?;
        let b = bergou_bound(&code)?;
        Ok(vec![v, r.p0_average, b.p0])
    })?;
    let mut t = Table::new(&[name, "p0", "p0_bound"])
        .meta("command", "sweep")
        .meta("code", &a.code.code)
        .meta("class", a.class)
        .meta("seed", seed)
        .meta("restarts", a.restarts);
    for r in rows {
        t.push(r);
    }
    Ok(Artifact::Table(t))
}
