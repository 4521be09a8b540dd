//! Command-line arguments layered over an optional JSON config.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ehaloha::stability::Lyapunov;
use ehaloha::ArrivalLaw;

use crate::config::{parse_harvest_policy, Command, ConfigError, ExperimentConfig, OutputFormat};

#[derive(Debug, Parser)]
#[command(name = "ehaloha", version, about = "Slotted ALOHA with adaptive energy harvesting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Sub,
}

#[derive(Debug, Subcommand)]
pub enum Sub {
    /// Simulate one trajectory of (q, v).
    Simulate(Overrides),
    /// Classify stability over a (lambda, c) grid.
    Sweep(Overrides),
    /// Check the auxiliary chain: stationarity, success rate, convergence lag.
    AuxVerify(Overrides),
    /// Check the W-chain: coupling tail, Poisson marginal, mean bound, monotonicity.
    Lemma1Verify(Overrides),
    /// Estimate the k-step drift of a Lyapunov function.
    Drift(Overrides),
    /// Classify stability under mu(q) = min(c / q^alpha, 1).
    Remark3(Overrides),
}

impl Sub {
    pub fn split(self) -> (Command, Overrides) {
        match self {
            Sub::Simulate(o) => (Command::Simulate, o),
            Sub::Sweep(o) => (Command::Sweep, o),
            Sub::AuxVerify(o) => (Command::AuxVerify, o),
            Sub::Lemma1Verify(o) => (Command::Lemma1Verify, o),
            Sub::Drift(o) => (Command::Drift, o),
            Sub::Remark3(o) => (Command::Remark3, o),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ArrivalArg {
    Poisson,
    Bernoulli,
    Geometric,
}

impl From<ArrivalArg> for ArrivalLaw {
    fn from(a: ArrivalArg) -> Self {
        match a {
            ArrivalArg::Poisson => ArrivalLaw::Poisson,
            ArrivalArg::Bernoulli => ArrivalLaw::Bernoulli,
            ArrivalArg::Geometric => ArrivalLaw::Geometric,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum LyapunovArg {
    QPlusV,
    QOnly,
}

impl From<LyapunovArg> for Lyapunov {
    fn from(a: LyapunovArg) -> Self {
        match a {
            LyapunovArg::QPlusV => Lyapunov::QPlusV,
            LyapunovArg::QOnly => Lyapunov::QOnly,
        }
    }
}

/// Flags shared by every subcommand. Each one, when given, overrides the config file.
#[derive(Clone, Debug, Default, Args)]
pub struct Overrides {
    /// JSON config file; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Print the effective config as JSON and exit.
    #[arg(long)]
    pub dump_config: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Arrival rate; for `sweep`, a grid as in `--lambda-grid`.
    #[arg(long)]
    pub lambda: Option<String>,
    #[arg(long)]
    pub p: Option<f64>,
    /// Harvest constant; for `sweep`, a grid as in `--c-grid`.
    #[arg(long)]
    pub c: Option<String>,
    #[arg(long, value_enum)]
    pub arrival_law: Option<ArrivalArg>,
    /// reciprocal, power:<alpha> or constant:<mu>
    #[arg(long)]
    pub harvest: Option<String>,
    #[arg(long)]
    pub horizon: Option<u64>,
    #[arg(long)]
    pub burn_in: Option<u64>,
    #[arg(long)]
    pub replications: Option<u64>,
    #[arg(long)]
    pub stride: Option<u64>,
    #[arg(long)]
    pub q_ceiling: Option<u64>,
    #[arg(long)]
    pub initial_q: Option<u64>,
    #[arg(long)]
    pub initial_v: Option<u64>,
    /// start:stop:step, a single value or a comma list
    #[arg(long)]
    pub lambda_grid: Option<String>,
    #[arg(long)]
    pub c_grid: Option<String>,
    #[arg(long)]
    pub windows: Option<usize>,
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long, value_enum)]
    pub lyapunov: Option<LyapunovArg>,
    #[arg(long)]
    pub start_q: Option<u64>,
    #[arg(long)]
    pub start_v: Option<u64>,
    #[arg(long)]
    pub horizon_k: Option<u64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub w0: Option<u64>,
    #[arg(long)]
    pub path_horizon: Option<u64>,
    #[arg(long)]
    pub r_max: Option<u64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub lag_cap: Option<usize>,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<OutputFormat>,
    /// Worker threads. Artifacts do not depend on it.
    #[arg(long, env = "EHALOHA_THREADS")]
    pub threads: Option<usize>,
}

macro_rules! overlay {
    ($cfg:ident, $o:ident; $($field:ident),*) => {
        $( if let Some(v) = $o.$field.clone() { $cfg.$field = v.into(); } )*
    };
}

impl Overrides {
    /// Builds the effective config: file (or defaults), then flags, then the subcommand.
    pub fn resolve(&self, command: Command) -> Result<ExperimentConfig, ConfigError> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        cfg.command = command;
        let o = self;
        for (flag, value, grid, scalar) in [
            ("lambda", &self.lambda, &mut cfg.lambda_grid, &mut cfg.lambda),
            ("c", &self.c, &mut cfg.c_grid, &mut cfg.c),
        ] {
            let Some(value) = value else { continue };
            if command == Command::Sweep {
                *grid = value.clone();
            } else {
                *scalar = value
                    .trim()
                    .parse()
                    .map_err(|_| ConfigError::Invalid(format!("--{flag} expects a number, got {value:?}")))?;
            }
        }
        overlay!(cfg, o; seed, p, arrival_law, horizon, burn_in, replications,
            stride, q_ceiling, initial_q, initial_v, lambda_grid, c_grid, windows, margin,
            lyapunov, start_q, start_v, horizon_k, alpha, w0, path_horizon, r_max, delta,
            lag_cap, output, format);
        if let Some(h) = &self.harvest {
            cfg.harvest_policy = parse_harvest_policy(h)?;
        }
        if self.threads.is_some() {
            cfg.threads = self.threads;
        }
        Ok(cfg)
    }
}
