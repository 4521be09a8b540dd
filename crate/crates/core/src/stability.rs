//! Empirical stability analysis of the `(q, v)` chain.
//!
//! The theoretical boundary is `λ = c·e^{-c}`: stable below, unstable above, maximal
//! at `c = 1` and independent of `p`. This module estimates multi-step Lyapunov drifts,
//! classifies long trajectories and sweeps `(λ, c)` grids.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aux_chain::success_prob_limit;
use crate::error::{Error, Result};
use crate::model::{step, ArrivalLaw, HarvestPolicy, ModelParams, SystemState};
use crate::sampling::{derive_seed, RandomSource};
use crate::stats::{self, MeanEstimate};

/// `c·e^{-c}`: the largest arrival rate the system sustains.
pub fn theoretical_boundary(c: f64) -> f64 {
    success_prob_limit(c)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lyapunov {
    /// `L(q, v) = q + v`.
    QPlusV,
    /// `L(q, v) = q`.
    QOnly,
}

impl Lyapunov {
    pub fn eval(self, s: SystemState) -> i64 {
        match self {
            Lyapunov::QPlusV => (s.q + s.v) as i64,
            Lyapunov::QOnly => s.q as i64,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftSpec {
    pub lyapunov: Lyapunov,
    pub start_state: SystemState,
    pub horizon_k: u64,
    pub replications: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub mean_drift: f64,
    pub std_error: f64,
    /// 95% normal half-width.
    pub ci_half_width: f64,
    pub replications: u64,
}

impl DriftReport {
    pub fn significantly_negative(&self) -> bool {
        self.mean_drift + self.ci_half_width < 0.0
    }

    pub fn significantly_positive(&self) -> bool {
        self.mean_drift - self.ci_half_width > 0.0
    }
}

/// Mean of `L(X_k) - L(X_0)` over independent `k`-slot runs from a fixed state.
pub fn estimate_drift(spec: &DriftSpec, params: &ModelParams, src: &RandomSource) -> Result<DriftReport> {
    params.validate()?;
    let start = SystemState::new(spec.start_state.q, spec.start_state.v)?;
    if spec.horizon_k == 0 || spec.replications == 0 {
        return Err(Error::InvalidArgument(
            "drift needs horizon_k >= 1 and replications >= 1".into(),
        ));
    }
    let l0 = spec.lyapunov.eval(start);
    let diffs: Vec<i64> = (0..spec.replications)
        .into_par_iter()
        .map(|r| {
            let path = src.substream(r);
            let mut s = start;
            for n in 0..spec.horizon_k {
                s = step(s, params, &path, n).0;
            }
            spec.lyapunov.eval(s) - l0
        })
        .collect();
    let est = MeanEstimate::from_values(diffs);
    Ok(DriftReport {
        mean_drift: est.mean,
        std_error: est.std_error,
        ci_half_width: est.half_width,
        replications: spec.replications,
    })
}

/// `R = ceil((c + λ + 1) / p)`: above it a single slot already has negative drift of `q + v`.
pub fn energized_threshold(params: &ModelParams) -> u64 {
    ((params.c + params.lambda + 1.0) / params.p).ceil() as u64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Classification {
    Stable,
    Unstable,
    Inconclusive,
}

impl Classification {
    pub fn as_str(self) -> &'static str {
        match self {
            Classification::Stable => "stable",
            Classification::Unstable => "unstable",
            Classification::Inconclusive => "inconclusive",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TheoreticalSign {
    Stable,
    Unstable,
    Boundary,
}

impl TheoreticalSign {
    pub fn as_str(self) -> &'static str {
        match self {
            TheoreticalSign::Stable => "stable",
            TheoreticalSign::Unstable => "unstable",
            TheoreticalSign::Boundary => "boundary",
        }
    }

    pub fn agrees_with(self, c: Classification) -> bool {
        matches!(
            (self, c),
            (TheoreticalSign::Stable, Classification::Stable)
                | (TheoreticalSign::Unstable, Classification::Unstable)
        )
    }
}

/// Side of `λ = c·e^{-c}`, with cells closer than `margin` marked as boundary.
pub fn theoretical_sign(lambda: f64, c: f64, margin: f64) -> TheoreticalSign {
    let gap = theoretical_boundary(c) - lambda;
    if gap.abs() <= margin {
        TheoreticalSign::Boundary
    } else if gap > 0.0 {
        TheoreticalSign::Stable
    } else {
        TheoreticalSign::Unstable
    }
}

/// Thresholds of the trajectory classifier.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    /// Minimum t-statistic of the window-mean slope for a trend.
    pub slope_t: f64,
    /// Minimum ratio of final to first window mean for escape.
    pub growth_ratio: f64,
    pub min_windows: usize,
    pub min_horizon: u64,
    /// Low set `{q ≤ q_low}`; `None` uses [`default_q_low`].
    pub q_low: Option<u64>,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            slope_t: 3.0,
            growth_ratio: 5.0,
            min_windows: 20,
            min_horizon: 10_000,
            q_low: None,
        }
    }
}

/// `max(10, 3λ / (c·e^{-c} − λ))` below the boundary, 10 otherwise.
pub fn default_q_low(params: &ModelParams) -> u64 {
    let gap = theoretical_boundary(params.c) - params.lambda;
    if gap > 0.0 {
        (3.0 * params.lambda / gap).ceil().clamp(10.0, 1e12) as u64
    } else {
        10
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityDiagnostics {
    /// OLS slope of window means of `q` against window index.
    pub slope: f64,
    pub slope_t: f64,
    pub first_window_mean: f64,
    pub final_window_mean: f64,
    /// Fraction of second-half slots with `q ≤ q_low`.
    pub return_freq: f64,
    pub q_low: u64,
    pub final_state: SystemState,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityResult {
    pub classification: Classification,
    pub diagnostics: StabilityDiagnostics,
}

pub fn classify_stability(
    params: &ModelParams,
    horizon: u64,
    windows: usize,
    src: &RandomSource,
) -> Result<StabilityResult> {
    classify_with(params, horizon, windows, &ClassifierConfig::default(), src)
}

/// One trajectory from the empty state, split into `windows` equal windows.
///
/// * Unstable: window-mean slope t-statistic above `slope_t` and final window mean above
///   `growth_ratio` times the first.
/// * Stable: no significant upward trend and at least one visit to `{q ≤ q_low}` in
///   the second half of the run.
/// * Inconclusive otherwise.
pub fn classify_with(
    params: &ModelParams,
    horizon: u64,
    windows: usize,
    cfg: &ClassifierConfig,
    src: &RandomSource,
) -> Result<StabilityResult> {
    params.validate()?;
    if horizon < cfg.min_horizon {
        return Err(Error::InvalidArgument(format!(
            "classification needs horizon >= {}",
            cfg.min_horizon
        )));
    }
    if windows < cfg.min_windows || windows as u64 > horizon {
        return Err(Error::InvalidArgument(format!(
            "classification needs between {} and horizon windows",
            cfg.min_windows
        )));
    }
    let q_low = cfg.q_low.unwrap_or_else(|| default_q_low(params));
    let width = horizon / windows as u64;
    let used = width * windows as u64;
    let half = used / 2;
    let mut sums = vec![0u128; windows];
    let mut low_visits = 0u64;
    let mut state = SystemState::empty();
    for n in 0..used {
        state = step(state, params, src, n).0;
        sums[(n / width) as usize] += state.q as u128;
        if n >= half && state.q <= q_low {
            low_visits += 1;
        }
    }
    let means: Vec<f64> = sums.iter().map(|&s| s as f64 / width as f64).collect();
    let x: Vec<f64> = (0..windows).map(|i| i as f64).collect();
    let fit = stats::linear_fit(&x, &means).expect("at least two windows");
    let slope_t = fit.slope_t();
    let first = means[0];
    let last = means[windows - 1];
    let return_freq = low_visits as f64 / (used - half) as f64;

    let trending = slope_t > cfg.slope_t;
    let classification = if trending && last > cfg.growth_ratio * first {
        Classification::Unstable
    } else if !trending && low_visits > 0 {
        Classification::Stable
    } else {
        Classification::Inconclusive
    };
    Ok(StabilityResult {
        classification,
        diagnostics: StabilityDiagnostics {
            slope: fit.slope,
            slope_t,
            first_window_mean: first,
            final_window_mean: last,
            return_freq,
            q_low,
            final_state: state,
        },
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub horizon: u64,
    pub windows: usize,
    /// Cells with `|λ − c·e^{-c}|` at or below this are not scored.
    pub margin: f64,
    pub arrival_law: ArrivalLaw,
    pub harvest_policy: HarvestPolicy,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            horizon: 1_000_000,
            windows: 20,
            margin: 0.05,
            arrival_law: ArrivalLaw::Poisson,
            harvest_policy: HarvestPolicy::Reciprocal,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseCell {
    pub lambda: f64,
    pub c: f64,
    pub p: f64,
    pub classification: Classification,
    pub theoretical_sign: TheoreticalSign,
    pub diagnostics: StabilityDiagnostics,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseTable {
    pub cells: Vec<PhaseCell>,
    /// Non-boundary cells.
    pub scored: usize,
    pub matched: usize,
    pub agreement: f64,
}

impl PhaseTable {
    pub const CSV_HEADER: &'static str =
        "lambda,c,p,classification,theoretical_sign,slope,slope_t,return_freq,seed";

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for cell in &self.cells {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                cell.lambda,
                cell.c,
                cell.p,
                cell.classification.as_str(),
                cell.theoretical_sign.as_str(),
                cell.diagnostics.slope,
                cell.diagnostics.slope_t,
                cell.diagnostics.return_freq,
                cell.seed
            )?;
        }
        Ok(())
    }

    /// For each `c`, the largest grid `λ` such that every grid `λ' ≤ λ` classified Stable.
    pub fn stable_extent(&self) -> Vec<(f64, Option<f64>)> {
        let mut cs: Vec<f64> = self.cells.iter().map(|c| c.c).collect();
        cs.sort_by(f64::total_cmp);
        cs.dedup();
        cs.into_iter()
            .map(|c| {
                let mut column: Vec<&PhaseCell> = self.cells.iter().filter(|x| x.c == c).collect();
                column.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
                let extent = column
                    .iter()
                    .take_while(|x| x.classification == Classification::Stable)
                    .last()
                    .map(|x| x.lambda);
                (c, extent)
            })
            .collect()
    }

    /// The `c` values attaining the largest stable extent.
    pub fn extent_maximizers(&self) -> Vec<f64> {
        let extents = self.stable_extent();
        let best = extents
            .iter()
            .filter_map(|(_, e)| *e)
            .fold(f64::NEG_INFINITY, f64::max);
        extents
            .into_iter()
            .filter(|(_, e)| *e == Some(best))
            .map(|(c, _)| c)
            .collect()
    }
}

/// Classifies every `(λ, c)` cell on its own seed `derive_seed(master_seed, index)`,
/// index running over `λ` fastest. Output order is the cell index order.
pub fn phase_sweep(
    lambda_grid: &[f64],
    c_grid: &[f64],
    p: f64,
    cfg: &SweepConfig,
    master_seed: u64,
) -> Result<PhaseTable> {
    if lambda_grid.is_empty() || c_grid.is_empty() {
        return Err(Error::InvalidArgument("sweep grids must be non-empty".into()));
    }
    let jobs: Vec<(usize, f64, f64)> = c_grid
        .iter()
        .flat_map(|&c| lambda_grid.iter().map(move |&l| (l, c)))
        .enumerate()
        .map(|(i, (l, c))| (i, l, c))
        .collect();
    let cells: Vec<PhaseCell> = jobs
        .into_par_iter()
        .map(|(index, lambda, c)| -> Result<PhaseCell> {
            let params = ModelParams::new(lambda, p, c)?
                .with_arrival_law(cfg.arrival_law)
                .with_harvest_policy(cfg.harvest_policy);
            let seed = derive_seed(master_seed, index as u64);
            let result = classify_stability(&params, cfg.horizon, cfg.windows, &RandomSource::new(seed, 0))?;
            Ok(PhaseCell {
                lambda,
                c,
                p,
                classification: result.classification,
                theoretical_sign: theoretical_sign(lambda, c, cfg.margin),
                diagnostics: result.diagnostics,
                seed,
            })
        })
        .collect::<Result<_>>()?;
    let scored = cells
        .iter()
        .filter(|c| c.theoretical_sign != TheoreticalSign::Boundary)
        .count();
    let matched = cells
        .iter()
        .filter(|c| c.theoretical_sign.agrees_with(c.classification))
        .count();
    Ok(PhaseTable {
        agreement: if scored > 0 { matched as f64 / scored as f64 } else { 1.0 },
        cells,
        scored,
        matched,
    })
}

/// Classification under `μ(q) = min(c / q^alpha, 1)`; both `alpha < 1` and `alpha > 1`
/// are expected to be unstable.
pub fn remark3_experiment(
    alpha: f64,
    lambda: f64,
    c: f64,
    p: f64,
    horizon: u64,
    src: &RandomSource,
) -> Result<StabilityResult> {
    if alpha == 1.0 {
        return Err(Error::InvalidArgument(
            "alpha = 1 is the reciprocal policy; use classify_stability".into(),
        ));
    }
    let params = ModelParams::new(lambda, p, c)?.with_harvest_policy(HarvestPolicy::PowerLaw { alpha });
    params.validate()?;
    classify_stability(&params, horizon, 20, src)
}
