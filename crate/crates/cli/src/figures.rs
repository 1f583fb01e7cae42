//! Data behind the figures. Every target is deterministic for a given
//! seed: random code `i` at grid point `k` is drawn from stream
//! `(k << 32) | i`, and rows are emitted in grid order.

use coherent_usd::bounds::{analytic_bound, bergou_bound, AnalyticFamily};
use coherent_usd::info::{capacity, dispersion, finite_rate, CapacityResult, ChannelModel};
use coherent_usd::receiver::{dd_reference_p0, evaluate_receiver};
use coherent_usd::{builtin_code, sample_random_code, BuiltinCode, Constellation, RngStream, C64};

use crate::args::{ChannelChoice, Figure, ReproduceArgs, Scale};
use crate::commands::{capacity_optimal_channel, design, grid, CAPACITY_TOL};
use crate::error::RunError;
use crate::output::{Artifact, Table};
use crate::par_map;

const RANDOM_RESTARTS: usize = 8;
const NAMED_RESTARTS: usize = 32;

pub fn reproduce(a: &ReproduceArgs, seed: u64) -> Result<Artifact, RunError> {
    let table = match a.target {
        Figure::Fig4a => fig4a(a, seed)?,
        Figure::Fig4b => fig4b(a, seed)?,
        Figure::Fig5a => fig5a(a, seed)?,
        Figure::Fig5b => fig5b(a, seed)?,
        Figure::Fig6b => fig6b()?,
        Figure::Fig7 => fig7()?,
        Figure::Fig8 => fig8(a, seed)?,
    };
    Ok(Artifact::Table(table))
}

fn code(family: BuiltinCode, alpha2: f64) -> Result<Constellation, RunError> {
    Ok(builtin_code(family, C64::new(alpha2.sqrt(), 0.0))?)
}

fn intensity_grid() -> Result<Vec<f64>, RunError> {
    grid(0.05, 3.0, 60, Scale::Linear)
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

/// P0 of classes 1 and 2 and of the bound for one random c=3, m=3 code.
fn random_triplet(n: f64, stream: u64, seed: u64, restarts: usize) -> Result<[f64; 3], RunError> {
    let code = sample_random_code(3, 3, n, &mut RngStream::new(seed, stream))?;
    let c1 = design(&code, 1, restarts, seed)?.p0_average;
    let c2 = design(&code, 2, restarts, seed)?.p0_average;
    let b = bergou_bound(&code)?.p0;
    Ok([c1, c2, b])
}

fn fig4a(a: &ReproduceArgs, seed: u64) -> Result<Table, RunError> {
    let samples = a.samples.unwrap_or(100);
    let restarts = a.restarts.unwrap_or(RANDOM_RESTARTS);
    if samples == 0 {
        return Err(RunError::Config("--samples must be at least 1".into()));
    }
    let ns = grid(0.1, 1.0, 10, Scale::Linear)?;
    let jobs: Vec<(usize, usize)> = (0..ns.len()).flat_map(|k| (0..samples).map(move |i| (k, i))).collect();
    let results = par_map(&jobs, |&(k, i)| random_triplet(ns[k], ((k as u64) << 32) | i as u64, seed, restarts))?;
    let mut t = Table::new(&[
        "n",
        "mean_p0_class1",
        "std_p0_class1",
        "mean_p0_class2",
        "std_p0_class2",
        "mean_p0_global",
        "std_p0_global",
    ])
    .meta("command", "reproduce fig4a")
    .meta("seed", seed)
    .meta("samples", samples)
    .meta("restarts", restarts)
    .meta("code", "random c=3 m=3, real amplitudes on the sphere of radius sqrt(n)");
    for (k, n) in ns.iter().enumerate() {
        let chunk = &results[k * samples..(k + 1) * samples];
        let mut row = vec![*n];
        for j in 0..3 {
            let col: Vec<f64> = chunk.iter().map(|r| r[j]).collect();
            let (m, s) = mean_std(&col);
            row.push(m);
            row.push(s);
        }
        t.push(row);
    }
    Ok(t)
}

const HISTOGRAM_BINS: usize = 50;

fn fig4b(a: &ReproduceArgs, seed: u64) -> Result<Table, RunError> {
    let samples = a.samples.unwrap_or(1000);
    let restarts = a.restarts.unwrap_or(RANDOM_RESTARTS);
    if samples == 0 {
        return Err(RunError::Config("--samples must be at least 1".into()));
    }
    let idx: Vec<u64> = (0..samples as u64).collect();
    let results = par_map(&idx, |&i| random_triplet(a.n, i, seed, restarts))?;
    let mut counts = vec![[0u64; 3]; HISTOGRAM_BINS];
    for r in &results {
        for j in 0..3 {
            let bin = ((r[j] * HISTOGRAM_BINS as f64).floor() as usize).min(HISTOGRAM_BINS - 1);
            counts[bin][j] += 1;
        }
    }
    let mut t = Table::new(&["p0_lo", "p0_hi", "count_class1", "count_class2", "count_global"])
        .meta("command", "reproduce fig4b")
        .meta("seed", seed)
        .meta("samples", samples)
        .meta("restarts", restarts)
        .meta("n", a.n);
    for (b, c) in counts.iter().enumerate() {
        let lo = b as f64 / HISTOGRAM_BINS as f64;
        let hi = (b + 1) as f64 / HISTOGRAM_BINS as f64;
        t.push(vec![lo, hi, c[0] as f64, c[1] as f64, c[2] as f64]);
    }
    Ok(t)
}

fn fig5a(a: &ReproduceArgs, seed: u64) -> Result<Table, RunError> {
    let restarts = a.restarts.unwrap_or(NAMED_RESTARTS);
    let xs = intensity_grid()?;
    let rows = par_map(&xs, |&x| -> Result<Vec<f64>, RunError> {
        let c = code(BuiltinCode::Guha, x)?;
        let p2 = design(&c, 2, restarts, seed)?.p0_average;
        let closed = analytic_bound(AnalyticFamily::SingleDegenerateGuha, x)?;
        let numeric = bergou_bound(&c)?.p0;
        Ok(vec![x, p2, closed, numeric])
    })?;
    let mut t = Table::new(&["alpha2", "p0_class2", "p0_global", "p0_global_numeric"])
        .meta("command", "reproduce fig5a")
        .meta("seed", seed)
        .meta("restarts", restarts)
        .meta("code", "guha");
    for r in rows {
        t.push(r);
    }
    Ok(t)
}

/// Class-2 and optimal-measurement channels on the single-degeneracy code,
/// both designed for uniform priors (P0-optimal).
fn guha_channels(x: f64, restarts: usize, seed: u64) -> Result<(ChannelModel, ChannelModel), RunError> {
    let c = code(BuiltinCode::Guha, x)?;
    let r = design(&c, 2, restarts, seed)?;
    let linear = evaluate_receiver(&r.receiver, &c)?;
    let global = ChannelModel::from_inconclusive(&bergou_bound(&c)?.q)?;
    Ok((linear, global))
}

/// The same two families with the design weights chosen for capacity.
fn guha_capacity_optimal(x: f64, restarts: usize, seed: u64) -> Result<(CapacityResult, CapacityResult), RunError> {
    let c = code(BuiltinCode::Guha, x)?;
    let (linear, _) = capacity_optimal_channel(&c, ChannelChoice::Class(2), restarts, seed)?;
    let (global, _) = capacity_optimal_channel(&c, ChannelChoice::Bound, restarts, seed)?;
    Ok((linear.capacity, global.capacity))
}

const CHANNEL_NOTE: &str = "the class2/global columns use receivers designed for uniform priors; \
the _opt columns maximize capacity over the design weights as well";

fn fig5b(a: &ReproduceArgs, seed: u64) -> Result<Table, RunError> {
    let restarts = a.restarts.unwrap_or(NAMED_RESTARTS);
    let xs = intensity_grid()?;
    let rows = par_map(&xs, |&x| -> Result<Vec<f64>, RunError> {
        let (linear, global) = guha_channels(x, restarts, seed)?;
        let cl = capacity(&linear, CAPACITY_TOL)?.capacity;
        let cg = capacity(&global, CAPACITY_TOL)?.capacity;
        let (ol, og) = guha_capacity_optimal(x, restarts, seed)?;
        Ok(vec![x, cl, cg, cg - cl, ol.capacity, og.capacity, og.capacity - ol.capacity])
    })?;
    let mut t = Table::new(&[
        "alpha2",
        "capacity_class2",
        "capacity_global",
        "gap",
        "capacity_class2_opt",
        "capacity_global_opt",
        "gap_opt",
    ])
    .meta("command", "reproduce fig5b")
    .meta("seed", seed)
    .meta("restarts", restarts)
    .meta("code", "guha")
    .meta("channels", CHANNEL_NOTE);
    for r in rows {
        t.push(r);
    }
    Ok(t)
}

fn fig6b() -> Result<Table, RunError> {
    let xs = intensity_grid()?;
    let rows = par_map(&xs, |&x| -> Result<Vec<f64>, RunError> {
        let c = code(BuiltinCode::DoubleDegenerate, x)?;
        let p3 = design(&c, 3, 1, 0)?.p0_average;
        let closed = analytic_bound(AnalyticFamily::DoubleDegenerate, x)?;
        let numeric = bergou_bound(&c)?.p0;
        Ok(vec![x, p3, dd_reference_p0(x), closed, numeric])
    })?;
    let mut t = Table::new(&["alpha2", "p0_class3", "p0_reference_receiver", "p0_global", "p0_global_numeric"])
        .meta("command", "reproduce fig6b")
        .meta("code", "dd");
    for r in rows {
        t.push(r);
    }
    Ok(t)
}

fn fig7() -> Result<Table, RunError> {
    let xs = intensity_grid()?;
    let rows = par_map(&xs, |&x| -> Result<Vec<f64>, RunError> {
        let c = code(BuiltinCode::Psk { order: 3 }, x)?;
        let p3 = design(&c, 3, 1, 0)?.p0_average;
        let linear_closed = 1.0 - (1.0 - (-x).exp()).powi(2);
        let closed = analytic_bound(AnalyticFamily::Psk3, x)?;
        let numeric = bergou_bound(&c)?.p0;
        Ok(vec![x, p3, linear_closed, closed, numeric])
    })?;
    let mut t = Table::new(&["alpha2", "p0_class3", "p0_class3_closed_form", "p0_global", "p0_global_numeric"])
        .meta("command", "reproduce fig7")
        .meta("code", "3psk");
    for r in rows {
        t.push(r);
    }
    Ok(t)
}

fn fig8(a: &ReproduceArgs, seed: u64) -> Result<Table, RunError> {
    let restarts = a.restarts.unwrap_or(NAMED_RESTARTS);
    let (linear, global) = guha_channels(a.alpha2, restarts, seed)?;
    let cl = capacity(&linear, CAPACITY_TOL)?;
    let cg = capacity(&global, CAPACITY_TOL)?;
    let vl = dispersion(&linear, &cl.optimal_input)?;
    let vg = dispersion(&global, &cg.optimal_input)?;
    let (ol, og) = guha_capacity_optimal(a.alpha2, restarts, seed)?;
    let lengths = grid(10.0, 1e5, 25, Scale::Log)?;
    let mut t = Table::new(&[
        "length",
        "rate_class2",
        "rate_global",
        "rate_class2_opt",
        "rate_global_opt",
        "capacity_class2",
        "capacity_global",
        "capacity_class2_opt",
        "capacity_global_opt",
    ])
    .meta("command", "reproduce fig8")
    .meta("seed", seed)
    .meta("restarts", restarts)
    .meta("code", "guha")
    .meta("alpha2", a.alpha2)
    .meta("epsilon", a.epsilon)
    .meta("channels", CHANNEL_NOTE)
    .meta("dispersion_class2", vl)
    .meta("dispersion_global", vg)
    .meta("dispersion_class2_opt", ol.dispersion)
    .meta("dispersion_global_opt", og.dispersion);
    for l in lengths {
        let l = l.round() as u64;
        t.push(vec![
            l as f64,
            finite_rate(cl.capacity, vl, l, a.epsilon)?,
            finite_rate(cg.capacity, vg, l, a.epsilon)?,
            finite_rate(ol.capacity, ol.dispersion, l, a.epsilon)?,
            finite_rate(og.capacity, og.dispersion, l, a.epsilon)?,
            cl.capacity,
            cg.capacity,
            ol.capacity,
            og.capacity,
        ]);
    }
    Ok(t)
}
