use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Clone, Parser)]
#[command(name = "coherent-usd", version, about = "Linear-optics USD receivers for coherent-state codes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Write the result here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Output format; tables default to CSV, everything else to JSON.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,

    /// Seed for random codes, displacement restarts and simulation.
    #[arg(long, global = true, default_value_t = 7)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Phase-space and Hilbert Gram matrices of a code.
    Gram(CodeArgs),
    /// Degeneracy class and PPM reducibility.
    Classify(CodeArgs),
    /// Optimize a receiver of the given class.
    Design(DesignArgs),
    /// Global USD bound.
    Bound(BoundArgs),
    /// Shannon capacity and dispersion of the USD channel.
    Capacity(ChannelArgs),
    /// Normal-approximation finite block-length rate.
    FiniteRate(FiniteRateArgs),
    /// Monte-Carlo check of a designed receiver.
    Simulate(SimulateArgs),
    /// P0 of a receiver class and the bound over a parameter range.
    Sweep(SweepArgs),
    /// Regenerate the data behind a figure.
    Reproduce(ReproduceArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CodeArgs {
    /// Built-in family (ppm, dual-ppm, guha, dd, bpsk, 3psk, qpsk, psk),
    /// `random`, or a path to a JSON constellation.
    #[arg(long, default_value = "ppm")]
    pub code: String,

    /// Mean photon number |α|² of the code amplitude.
    #[arg(long, default_value_t = 1.0)]
    pub alpha2: f64,

    /// Modes for PPM families, order for `psk`, modes for `random`.
    #[arg(long, default_value_t = 3)]
    pub m: usize,

    /// Number of states for `random`.
    #[arg(long, default_value_t = 3)]
    pub c: usize,

    /// Photon number per state for `random`.
    #[arg(long, default_value_t = 0.6)]
    pub n: f64,
}

#[derive(Debug, Clone, Args)]
pub struct DesignArgs {
    #[command(flatten)]
    pub code: CodeArgs,

    /// Receiver class: 1, 2 or 3.
    #[arg(long)]
    pub class: u8,

    /// Displacement-search starts for class 2.
    #[arg(long, default_value_t = 32)]
    pub restarts: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundChoice {
    /// Closed form when one applies to a uniform three-state code, else numeric.
    Auto,
    PeresTerno,
    BergouNumeric,
    /// Closed form (guha, dd and 3psk codes only).
    ClosedForm,
}

#[derive(Debug, Clone, Args)]
pub struct BoundArgs {
    #[command(flatten)]
    pub code: CodeArgs,

    #[arg(long, value_enum, default_value_t = BoundChoice::Auto)]
    pub method: BoundChoice,
}

/// Which channel to analyse: a receiver class or the optimal USD measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelChoice {
    /// Lowest class that applies to the code's degeneracy (2 or 3).
    Auto,
    Class(u8),
    Bound,
}

impl std::str::FromStr for ChannelChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "auto" => Ok(Self::Auto),
            "bound" | "global" => Ok(Self::Bound),
            "1" | "2" | "3" => Ok(Self::Class(s.parse().unwrap())),
            other => Err(format!("expected 1, 2, 3, auto or bound, got '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ChannelArgs {
    #[command(flatten)]
    pub code: CodeArgs,

    /// 1, 2, 3, auto or bound.
    #[arg(long, default_value = "auto")]
    pub class: ChannelChoice,

    #[arg(long, default_value_t = 32)]
    pub restarts: usize,

    /// Design for the weights that maximize capacity instead of for the
    /// code's priors.
    #[arg(long)]
    pub optimize_weights: bool,
}

#[derive(Debug, Clone, Args)]
pub struct FiniteRateArgs {
    #[command(flatten)]
    pub channel: ChannelArgs,

    /// Block error probability.
    #[arg(long, default_value_t = 1e-3)]
    pub epsilon: f64,

    /// Block lengths (comma separated).
    #[arg(long, value_delimiter = ',', default_value = "10,100,1000,10000,100000")]
    pub length: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Stratify {
    Equal,
    Priors,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub code: CodeArgs,

    /// 1, 2, 3 or auto.
    #[arg(long, default_value = "auto")]
    pub class: ChannelChoice,

    #[arg(long, default_value_t = 32)]
    pub restarts: usize,

    /// Shots per input (`equal`) or in total (`priors`).
    #[arg(long, default_value_t = 100_000)]
    pub shots: u64,

    #[arg(long, value_enum, default_value_t = Stratify::Equal)]
    pub stratify: Stratify,

    /// Independent random streams the shots are split over.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    Alpha2,
    N,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Linear,
    Log,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub code: CodeArgs,

    /// 1, 2 or 3.
    #[arg(long)]
    pub class: u8,

    #[arg(long, value_enum, default_value_t = SweepParam::Alpha2)]
    pub param: SweepParam,

    #[arg(long)]
    pub min: f64,

    #[arg(long)]
    pub max: f64,

    #[arg(long, default_value_t = 20)]
    pub steps: usize,

    #[arg(long, value_enum, default_value_t = Scale::Linear)]
    pub scale: Scale,

    #[arg(long, default_value_t = 32)]
    pub restarts: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Figure {
    /// Random codes: mean P0 of classes 1 and 2 and of the bound vs n.
    Fig4a,
    /// Random codes at fixed n: histograms of P0.
    Fig4b,
    /// Single-degeneracy code: class-2 P0 and bound vs |α|².
    Fig5a,
    /// Single-degeneracy code: capacities vs |α|².
    Fig5b,
    /// Double-degeneracy code: class-3 P0, reference receiver and bound.
    Fig6b,
    /// 3PSK: class-3 P0 and bound.
    Fig7,
    /// Single-degeneracy code: finite block-length rates vs length.
    Fig8,
}

#[derive(Debug, Clone, Args)]
pub struct ReproduceArgs {
    #[arg(value_enum)]
    pub target: Figure,

    /// Random codes per point (fig4a, default 100) or in total (fig4b,
    /// default 1000).
    #[arg(long)]
    pub samples: Option<usize>,

    /// Displacement-search starts (default 8 for random codes, 32 otherwise).
    #[arg(long)]
    pub restarts: Option<usize>,

    /// Photon number for fig4b.
    #[arg(long, default_value_t = 0.6)]
    pub n: f64,

    /// Intensity for fig8.
    #[arg(long, default_value_t = 1.0)]
    pub alpha2: f64,

    /// Block error probability for fig8.
    #[arg(long, default_value_t = 1e-3)]
    pub epsilon: f64,
}
