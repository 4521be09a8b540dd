//! Command dispatch and artifact emission.

use std::io::{self, Write};
use std::path::{Path, PathBuf};

use ehaloha::aux_chain::{self, CurvePoint, SuccessEstimate};
use ehaloha::lemma1::{self, Domination, InputLaw, MeanBoundReport, PoissonMarginalReport, TailFit};
use ehaloha::model::{self, SimOptions, SystemState};
use ehaloha::stability::{self, DriftReport, DriftSpec, PhaseTable, StabilityResult, SweepConfig};
use ehaloha::stats::GofReport;
use ehaloha::RandomSource;
use serde::Serialize;
use thiserror::Error;

use crate::config::{Command, ConfigError, ExperimentConfig, OutputFormat, SCHEMA_VERSION};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("runtime: {0}")]
    Runtime(#[from] ehaloha::Error),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 1,
            RunError::Runtime(_) | RunError::Io(_) => 2,
        }
    }
}

/// What a run produced, for the one-line summary.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub artifacts: Vec<PathBuf>,
    pub headline: String,
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    path.with_file_name(format!("{stem}{suffix}"))
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    schema_version: u32,
    command: &'a str,
    seed: u64,
    #[serde(flatten)]
    body: T,
}

fn json_bytes<T: Serialize>(cfg: &ExperimentConfig, body: T) -> Vec<u8> {
    let env = Envelope {
        schema_version: SCHEMA_VERSION,
        command: cfg.command.name(),
        seed: cfg.seed,
        body,
    };
    let mut out = serde_json::to_vec_pretty(&env).expect("report serializes");
    out.push(b'\n');
    out
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> io::Result<()>) -> io::Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

/// Validates `cfg` and runs it on a pool of `cfg.threads` workers (rayon's default when unset).
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutcome, RunError> {
    cfg.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cfg.threads {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| io::Error::other(e.to_string()))?;
    pool.install(|| dispatch(cfg))
}

fn dispatch(cfg: &ExperimentConfig) -> Result<RunOutcome, RunError> {
    let src = RandomSource::new(cfg.seed, 0);
    match cfg.command {
        Command::Simulate => simulate(cfg, &src),
        Command::Sweep => sweep(cfg),
        Command::AuxVerify => aux_verify(cfg, &src),
        Command::Lemma1Verify => lemma1_verify(cfg, &src),
        Command::Drift => drift(cfg, &src),
        Command::Remark3 => remark3(cfg, &src),
    }
}

fn simulate(cfg: &ExperimentConfig, src: &RandomSource) -> Result<RunOutcome, RunError> {
    let params = cfg.model_params()?;
    let initial = SystemState::new(cfg.initial_q, cfg.initial_v)?;
    let opts = SimOptions {
        stride: cfg.stride,
        q_ceiling: cfg.q_ceiling,
    };
    let traj = model::simulate(initial, &params, cfg.horizon, src, &opts)?;
    let headline = format!(
        "mean_q={:.4} final_q={} successes={}",
        traj.summary.mean_q, traj.summary.final_state.q, traj.summary.successes
    );
    let artifacts = match cfg.format {
        OutputFormat::Csv => {
            let summary_path = sibling(&cfg.output, ".summary.json");
            write_atomic(&cfg.output, &csv_bytes(|b| traj.write_csv(b))?)?;
            write_atomic(
                &summary_path,
                &json_bytes(
                    cfg,
                    SimulateSummary {
                        params: &params,
                        initial,
                        horizon: cfg.horizon,
                        stride: cfg.stride,
                        summary: &traj.summary,
                    },
                ),
            )?;
            vec![cfg.output.clone(), summary_path]
        }
        OutputFormat::Json => {
            write_atomic(&cfg.output, &json_bytes(cfg, &traj))?;
            vec![cfg.output.clone()]
        }
    };
    Ok(RunOutcome {
        artifacts,
        headline,
    })
}

#[derive(Serialize)]
struct SimulateSummary<'a> {
    params: &'a ehaloha::ModelParams,
    initial: SystemState,
    horizon: u64,
    stride: u64,
    summary: &'a model::TrajectorySummary,
}

#[derive(Serialize)]
struct SweepReport<'a> {
    p: f64,
    horizon: u64,
    margin: f64,
    scored: usize,
    matched: usize,
    agreement: f64,
    stable_extent: Vec<(f64, Option<f64>)>,
    extent_maximizers: Vec<f64>,
    cells: &'a [stability::PhaseCell],
}

fn sweep(cfg: &ExperimentConfig) -> Result<RunOutcome, RunError> {
    let lambdas = cfg.lambda_values()?;
    let cs = cfg.c_values()?;
    let sweep_cfg = SweepConfig {
        horizon: cfg.horizon,
        windows: cfg.windows,
        margin: cfg.margin,
        arrival_law: cfg.arrival_law,
        harvest_policy: cfg.harvest_policy,
    };
    eprintln!("sweep: {} cells x {} slots", lambdas.len() * cs.len(), cfg.horizon);
    let table: PhaseTable = stability::phase_sweep(&lambdas, &cs, cfg.p, &sweep_cfg, cfg.seed)?;
    let bytes = match cfg.format {
        OutputFormat::Csv => csv_bytes(|b| table.write_csv(b))?,
        OutputFormat::Json => json_bytes(
            cfg,
            SweepReport {
                p: cfg.p,
                horizon: cfg.horizon,
                margin: cfg.margin,
                scored: table.scored,
                matched: table.matched,
                agreement: table.agreement,
                stable_extent: table.stable_extent(),
                extent_maximizers: table.extent_maximizers(),
                cells: &table.cells,
            },
        ),
    };
    write_atomic(&cfg.output, &bytes)?;
    Ok(RunOutcome {
        artifacts: vec![cfg.output.clone()],
        headline: format!(
            "agreement={:.4} ({}/{}) extent_maximizers={:?}",
            table.agreement,
            table.matched,
            table.scored,
            table.extent_maximizers()
        ),
    })
}

#[derive(Serialize)]
struct AuxReport {
    c: f64,
    p: f64,
    limit: f64,
    success_rate: SuccessEstimate,
    convergence_lag: Option<usize>,
    lag_error: Option<String>,
    stationarity: Vec<(u64, GofReport)>,
    curves: Vec<CurvePoint>,
}

fn aux_verify(cfg: &ExperimentConfig, src: &RandomSource) -> Result<RunOutcome, RunError> {
    let (c, p) = (cfg.c, cfg.p);
    let success_rate = aux_chain::empirical_success_rate(c, p, cfg.horizon, cfg.burn_in, &src.substream(0))?;
    let lag = aux_chain::convergence_lag(c, p, cfg.r_max, cfg.delta, cfg.replications, cfg.lag_cap, &src.substream(1));
    let stationarity = aux_chain::stationarity_check(c, p, &[1, 10, 100], cfg.replications, &src.substream(2))?;
    let mut curves = Vec::new();
    for v0 in 0..=cfg.r_max {
        curves.extend(aux_chain::convergence_curve(
            c,
            p,
            v0,
            cfg.lag_cap,
            cfg.replications,
            &src.substream(3).substream(v0),
        )?);
    }
    let (convergence_lag, lag_error) = match lag {
        Ok(l) => (Some(l), None),
        Err(e @ ehaloha::Error::NotConverged { .. }) => (None, Some(e.to_string())),
        Err(e) => return Err(e.into()),
    };
    let headline = format!(
        "success_rate={:.5}±{:.5} limit={:.5} lag={:?}",
        success_rate.estimate,
        success_rate.half_width,
        aux_chain::success_prob_limit(c),
        convergence_lag
    );
    let bytes = match cfg.format {
        OutputFormat::Csv => csv_bytes(|b| aux_chain::write_curve_csv(&curves, b))?,
        OutputFormat::Json => json_bytes(
            cfg,
            AuxReport {
                c,
                p,
                limit: aux_chain::success_prob_limit(c),
                success_rate,
                convergence_lag,
                lag_error,
                stationarity,
                curves,
            },
        ),
    };
    write_atomic(&cfg.output, &bytes)?;
    Ok(RunOutcome {
        artifacts: vec![cfg.output.clone()],
        headline,
    })
}

#[derive(Serialize)]
struct Lemma1Report {
    p: f64,
    c: f64,
    w0: u64,
    coupling_tail: TailFit,
    poisson_marginal: PoissonMarginalReport,
    mean_bound: MeanBoundReport,
    monotone_violations: u64,
}

fn lemma1_verify(cfg: &ExperimentConfig, src: &RandomSource) -> Result<RunOutcome, RunError> {
    let (c, p) = (cfg.c, cfg.p);
    let z = InputLaw::Poisson { rate: c };
    let truncation = lemma1::default_truncation(&z, p);
    let coupling_tail = lemma1::coupling_tail_fit(cfg.w0, p, cfg.replications, &src.substream(0))?;
    let poisson_marginal = lemma1::poisson_marginal_check(c, p, cfg.replications, truncation, &src.substream(1))?;
    let mean_bound = lemma1::mean_bound_check(
        cfg.w0,
        &z,
        p,
        cfg.path_horizon,
        cfg.replications,
        truncation,
        &src.substream(2),
    )?;
    let monotone_violations = lemma1::monotone_couple_paths(
        cfg.w0,
        cfg.w0 / 3,
        &z,
        Domination::Cap { max: 1 },
        p,
        cfg.path_horizon,
        cfg.replications,
        &src.substream(3),
    )?;
    let headline = format!(
        "tail_rate={:.4} gof_p={:.4} mean_bound_ok={} violations={}",
        coupling_tail.rate,
        poisson_marginal.gof.p_value,
        mean_bound.within_bound,
        monotone_violations + mean_bound.pathwise_violations
    );
    let bytes = match cfg.format {
        OutputFormat::Csv => csv_bytes(|b| lemma1::write_survival_csv(&coupling_tail.survival, b))?,
        OutputFormat::Json => json_bytes(
            cfg,
            Lemma1Report {
                p,
                c,
                w0: cfg.w0,
                coupling_tail,
                poisson_marginal,
                mean_bound,
                monotone_violations,
            },
        ),
    };
    write_atomic(&cfg.output, &bytes)?;
    Ok(RunOutcome {
        artifacts: vec![cfg.output.clone()],
        headline,
    })
}

#[derive(Serialize)]
struct DriftOutput<'a> {
    params: &'a ehaloha::ModelParams,
    spec: DriftSpec,
    report: DriftReport,
}

fn drift(cfg: &ExperimentConfig, src: &RandomSource) -> Result<RunOutcome, RunError> {
    let params = cfg.model_params()?;
    let spec = DriftSpec {
        lyapunov: cfg.lyapunov,
        start_state: SystemState::new(cfg.start_q, cfg.start_v)?,
        horizon_k: cfg.horizon_k,
        replications: cfg.replications,
    };
    let report = stability::estimate_drift(&spec, &params, src)?;
    let bytes = match cfg.format {
        OutputFormat::Csv => csv_bytes(|b| {
            writeln!(b, "lyapunov,start_q,start_v,horizon_k,replications,mean_drift,ci_half_width")?;
            writeln!(
                b,
                "{},{},{},{},{},{},{}",
                match cfg.lyapunov {
                    stability::Lyapunov::QPlusV => "q_plus_v",
                    stability::Lyapunov::QOnly => "q_only",
                },
                cfg.start_q,
                cfg.start_v,
                cfg.horizon_k,
                report.replications,
                report.mean_drift,
                report.ci_half_width
            )
        })?,
        OutputFormat::Json => json_bytes(
            cfg,
            DriftOutput {
                params: &params,
                spec,
                report,
            },
        ),
    };
    write_atomic(&cfg.output, &bytes)?;
    Ok(RunOutcome {
        artifacts: vec![cfg.output.clone()],
        headline: format!("mean_drift={:.4}±{:.4}", report.mean_drift, report.ci_half_width),
    })
}

#[derive(Serialize)]
struct Remark3Output {
    alpha: f64,
    lambda: f64,
    c: f64,
    p: f64,
    horizon: u64,
    result: StabilityResult,
}

fn remark3(cfg: &ExperimentConfig, src: &RandomSource) -> Result<RunOutcome, RunError> {
    let result = stability::remark3_experiment(cfg.alpha, cfg.lambda, cfg.c, cfg.p, cfg.horizon, src)?;
    let bytes = match cfg.format {
        OutputFormat::Csv => csv_bytes(|b| {
            writeln!(b, "alpha,lambda,c,p,classification,slope,slope_t,return_freq")?;
            writeln!(
                b,
                "{},{},{},{},{},{},{},{}",
                cfg.alpha,
                cfg.lambda,
                cfg.c,
                cfg.p,
                result.classification.as_str(),
                result.diagnostics.slope,
                result.diagnostics.slope_t,
                result.diagnostics.return_freq
            )
        })?,
        OutputFormat::Json => json_bytes(
            cfg,
            Remark3Output {
                alpha: cfg.alpha,
                lambda: cfg.lambda,
                c: cfg.c,
                p: cfg.p,
                horizon: cfg.horizon,
                result,
            },
        ),
    };
    write_atomic(&cfg.output, &bytes)?;
    Ok(RunOutcome {
        artifacts: vec![cfg.output.clone()],
        headline: format!("classification={}", result.classification.as_str()),
    })
}
