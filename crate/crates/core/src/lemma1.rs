//! The thinning chain `W' = W - B(W, p) + Z` with a general non-negative integer input.
//!
//! Covered here: ergodicity from any start, the explicit stationary series
//! `W^{(n)} = Z_{n-1} + Σ_{j≥1} D_{(n-j):(n-1)}(Z_{n-1-j})`, the extinction time of the
//! initial population (which bounds the coupling time with the stationary version),
//! pathwise domination under dominated inputs, the mean bound `E W_n ≤ W_0 + E Z / p`,
//! and the Poisson(c/p) marginal for Poisson(c) input.
//!
//! All chains thin with the transmit family and draw inputs from the arrival family.
//! Populations are kept in arrival order (oldest first) on the indicator prefix, so two
//! chains sharing a source are thinned by the same uniforms.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aux_chain::{gof_poisson, histogram};
use crate::error::{Error, Result};
use crate::sampling::{Family, RandomSource};
use crate::stats::{self, GofReport, LinearFit, MeanEstimate};

/// Target for the stationary-series truncation bias.
pub const TRUNCATION_BIAS_TARGET: f64 = 1e-9;

/// Law of the input `Z_n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputLaw {
    Poisson { rate: f64 },
    Bernoulli { prob: f64 },
    Deterministic { value: u64 },
    /// Weighted mixture; weights are normalised.
    Mixture { components: Vec<(f64, InputLaw)> },
}

impl InputLaw {
    pub fn mean(&self) -> f64 {
        match self {
            InputLaw::Poisson { rate } => *rate,
            InputLaw::Bernoulli { prob } => *prob,
            InputLaw::Deterministic { value } => *value as f64,
            InputLaw::Mixture { components } => {
                let total: f64 = components.iter().map(|(w, _)| w).sum();
                components.iter().map(|(w, law)| w * law.mean()).sum::<f64>() / total
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        match self {
            InputLaw::Poisson { rate } if !(*rate >= 0.0 && rate.is_finite()) => {
                bad(format!("poisson input rate {rate}"))
            }
            InputLaw::Bernoulli { prob } if !(0.0..=1.0).contains(prob) => {
                bad(format!("bernoulli input probability {prob}"))
            }
            InputLaw::Mixture { components } => {
                if components.is_empty() {
                    return bad("empty mixture".into());
                }
                if components.iter().any(|(w, _)| !(*w >= 0.0 && w.is_finite())) {
                    return bad("mixture weights must be finite and non-negative".into());
                }
                if components.iter().map(|(w, _)| w).sum::<f64>() <= 0.0 {
                    return bad("mixture weights sum to zero".into());
                }
                components.iter().try_for_each(|(_, law)| law.validate())
            }
            _ => Ok(()),
        }
    }

    /// `Z_slot`. Uses uniform 1 of the arrival family (uniform 2 picks a mixture component).
    pub fn draw(&self, src: &RandomSource, slot: i64) -> u64 {
        let stream = src.family(slot, Family::Arrival);
        match self {
            InputLaw::Poisson { rate } => stream.poisson(*rate),
            InputLaw::Bernoulli { prob } => u64::from(stream.uniform(1) < *prob),
            InputLaw::Deterministic { value } => *value,
            InputLaw::Mixture { components } => {
                let total: f64 = components.iter().map(|(w, _)| w).sum();
                let mut u = stream.uniform(2) * total;
                for (w, law) in components {
                    if u < *w {
                        return law.draw(src, slot);
                    }
                    u -= w;
                }
                components
                    .last()
                    .map(|(_, law)| law.draw(src, slot))
                    .unwrap_or(0)
            }
        }
    }
}

/// How a dominated input `Z̃_n ≤ Z_n` is derived from the same draw of `Z_n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Domination {
    Identical,
    Cap { max: u64 },
    Zero,
    /// Keep each unit independently with probability `keep` (aux-family indicators).
    Thinned { keep: f64 },
}

impl Domination {
    pub fn apply(&self, z: u64, src: &RandomSource, slot: i64) -> u64 {
        match *self {
            Domination::Identical => z,
            Domination::Cap { max } => z.min(max),
            Domination::Zero => 0,
            Domination::Thinned { keep } => {
                src.family(slot, Family::Aux).count_below(0, z, keep.clamp(0.0, 1.0))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WChainState {
    pub w: u64,
    /// Survivors of the initial population; they occupy the indicator prefix.
    pub tagged_initial: u64,
}

impl WChainState {
    pub fn start(w0: u64) -> Self {
        Self {
            w: w0,
            tagged_initial: w0,
        }
    }
}

fn check_p(p: f64) -> Result<()> {
    if p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("p = {p} must lie in (0, 1]")))
    }
}

/// Departure-thinning of the first `k` indicators of slot `slot`.
#[inline]
fn survivors(src: &RandomSource, slot: i64, k: u64, p: f64) -> u64 {
    k - src.family(slot, Family::Transmit).count_below(0, k, p)
}

pub fn step_w(
    state: WChainState,
    p: f64,
    z: &InputLaw,
    src: &RandomSource,
    slot: i64,
) -> WChainState {
    let stream = src.family(slot, Family::Transmit);
    WChainState {
        w: state.w - stream.count_below(0, state.w, p) + z.draw(src, slot),
        tagged_initial: state.tagged_initial - stream.count_below(0, state.tagged_initial, p),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationarySample {
    pub value: u64,
    pub truncation: u32,
    /// `(1 - p)^J · E Z / p`, bounding the mean of the omitted terms.
    pub truncation_bias_bound: f64,
}

pub fn truncation_bias_bound(z: &InputLaw, p: f64, truncation: u32) -> f64 {
    (1.0 - p).powi(truncation as i32) * z.mean() / p
}

/// Smallest `J` whose truncation bias bound is below [`TRUNCATION_BIAS_TARGET`].
pub fn default_truncation(z: &InputLaw, p: f64) -> u32 {
    (1u32..10_000)
        .find(|&j| truncation_bias_bound(z, p, j) < TRUNCATION_BIAS_TARGET)
        .unwrap_or(10_000)
}

/// `W^{(n)}` from the stationary series truncated at `J` terms. Cohort `Z_{n-1-j}` is
/// thinned over slots `n-j ..= n-1`; cohorts are stacked oldest first on the indicators
/// of each slot, so the result coincides with running the recursion from zero at slot
/// `n - 1 - J`.
pub fn stationary_sample(
    z: &InputLaw,
    p: f64,
    truncation: u32,
    src: &RandomSource,
    n: i64,
) -> Result<StationarySample> {
    check_p(p)?;
    if truncation == 0 {
        return Err(Error::InvalidArgument("truncation must be at least 1".into()));
    }
    let first = n - 1 - truncation as i64;
    let mut cohorts: Vec<u64> = Vec::with_capacity(truncation as usize + 1);
    for m in first..n {
        let stream = src.family(m, Family::Transmit);
        let mut offset = 0;
        for size in cohorts.iter_mut() {
            let k = *size;
            *size = k - stream.count_below(offset, k, p);
            offset += k;
        }
        cohorts.push(z.draw(src, m));
    }
    Ok(StationarySample {
        value: cohorts.iter().sum(),
        truncation,
        truncation_bias_bound: truncation_bias_bound(z, p, truncation),
    })
}

/// Slots until all `w0` initial elements have departed (0 when `w0 = 0`).
pub fn coupling_time(w0: u64, p: f64, src: &RandomSource) -> Result<u64> {
    check_p(p)?;
    let mut alive = w0;
    let mut n = 0u64;
    while alive > 0 {
        alive = survivors(src, n as i64, alive, p);
        n += 1;
    }
    Ok(n)
}

/// Empirical `P(T > n)` for `n = 0 ..= max T`, over independent replications.
pub fn coupling_survival(w0: u64, p: f64, replications: u64, src: &RandomSource) -> Result<Vec<f64>> {
    check_p(p)?;
    let times: Vec<u64> = (0..replications)
        .into_par_iter()
        .map(|r| coupling_time(w0, p, &src.substream(r)).expect("validated p"))
        .collect();
    let max_t = times.iter().copied().max().unwrap_or(0) as usize;
    let mut at = vec![0u64; max_t + 1];
    for &t in &times {
        at[t as usize] += 1;
    }
    // P(T > n) = 1 - Σ_{t ≤ n} P(T = t)
    let mut out = Vec::with_capacity(max_t + 1);
    let mut le = 0u64;
    for count in at {
        le += count;
        out.push((replications - le) as f64 / replications as f64);
    }
    Ok(out)
}

pub const SURVIVAL_CSV_HEADER: &str = "n,survival_estimate";

pub fn write_survival_csv<W: Write>(survival: &[f64], mut out: W) -> io::Result<()> {
    writeln!(out, "{SURVIVAL_CSV_HEADER}")?;
    for (n, s) in survival.iter().enumerate() {
        writeln!(out, "{n},{s}")?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    /// Slope of `log P(T > n)` against `n`.
    pub rate: f64,
    pub r_squared: f64,
    pub window: (u64, u64),
    pub survival: Vec<f64>,
}

/// Default fit window on the survival estimate.
pub const TAIL_WINDOW: (f64, f64) = (1e-3, 0.5);

pub fn coupling_tail_fit(w0: u64, p: f64, replications: u64, src: &RandomSource) -> Result<TailFit> {
    coupling_tail_fit_window(w0, p, replications, src, TAIL_WINDOW)
}

/// Log-linear fit of `P(T > n)` over the `n` whose estimate lies in `[lo, hi]`.
pub fn coupling_tail_fit_window(
    w0: u64,
    p: f64,
    replications: u64,
    src: &RandomSource,
    (lo, hi): (f64, f64),
) -> Result<TailFit> {
    if replications < 10_000 {
        return Err(Error::InvalidArgument("tail fit needs at least 10^4 replications".into()));
    }
    let survival = coupling_survival(w0, p, replications, src)?;
    let (x, y): (Vec<f64>, Vec<f64>) = survival
        .iter()
        .enumerate()
        .filter(|(_, &s)| s >= lo && s <= hi)
        .map(|(n, &s)| (n as f64, s.ln()))
        .unzip();
    let fit: LinearFit = stats::linear_fit(&x, &y).ok_or_else(|| {
        Error::InsufficientData(format!(
            "{} survival points inside [{lo}, {hi}] (max T = {})",
            x.len(),
            survival.len().saturating_sub(1)
        ))
    })?;
    Ok(TailFit {
        rate: fit.slope,
        r_squared: fit.r_squared,
        window: (x[0] as u64, x[x.len() - 1] as u64),
        survival,
    })
}

/// Runs `W` (input `z`, start `w0`) and `W̃` (input derived from the same `Z` draws,
/// start `w0_small`) on shared uniforms; returns the number of slots with `W̃_n > W_n`.
#[allow(clippy::too_many_arguments)]
pub fn monotone_couple(
    w0: u64,
    w0_small: u64,
    z: &InputLaw,
    domination: Domination,
    p: f64,
    horizon: u64,
    src: &RandomSource,
) -> Result<u64> {
    check_p(p)?;
    if w0_small > w0 {
        return Err(Error::InvalidArgument("w0_small must not exceed w0".into()));
    }
    let (mut big, mut small) = (w0, w0_small);
    let mut violations = u64::from(small > big);
    for n in 0..horizon as i64 {
        let stream = src.family(n, Family::Transmit);
        let z_n = z.draw(src, n);
        let z_small = domination.apply(z_n, src, n).min(z_n);
        big = big - stream.count_below(0, big, p) + z_n;
        small = small - stream.count_below(0, small, p) + z_small;
        violations += u64::from(small > big);
    }
    Ok(violations)
}

/// [`monotone_couple`] summed over independent paths.
#[allow(clippy::too_many_arguments)]
pub fn monotone_couple_paths(
    w0: u64,
    w0_small: u64,
    z: &InputLaw,
    domination: Domination,
    p: f64,
    horizon: u64,
    paths: u64,
    src: &RandomSource,
) -> Result<u64> {
    (0..paths)
        .into_par_iter()
        .map(|r| monotone_couple(w0, w0_small, z, domination, p, horizon, &src.substream(r)))
        .try_reduce(|| 0, |a, b| Ok(a + b))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanPoint {
    pub n: u64,
    pub mean: f64,
    pub std_error: f64,
    pub limit: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanBoundReport {
    /// `w0 + E Z / p`.
    pub bound: f64,
    /// Slots (over all paths) with `W_n > w0 + W^{(n)}`.
    pub pathwise_violations: u64,
    pub points: Vec<MeanPoint>,
    /// Every sample mean is at most `bound + 3` standard errors.
    pub within_bound: bool,
}

/// Checks `W_n ≤ w0 + W^{(n)}` pathwise and `mean(W_n) ≤ w0 + E Z / p + 3 se`.
///
/// The stationary sequence is the series at slot 0 propagated by the recursion on the
/// same uniforms, which keeps it equal to the series with a growing truncation.
pub fn mean_bound_check(
    w0: u64,
    z: &InputLaw,
    p: f64,
    horizon: u64,
    replications: u64,
    truncation: u32,
    src: &RandomSource,
) -> Result<MeanBoundReport> {
    check_p(p)?;
    z.validate()?;
    let len = horizon as usize + 1;
    let zero = || (vec![0i128; len], vec![0i128; len], 0u64);
    let (sum, sum_sq, pathwise_violations) = (0..replications)
        .into_par_iter()
        .map(|r| -> Result<_> {
            let path = src.substream(r);
            let mut stationary = stationary_sample(z, p, truncation, &path, 0)?.value;
            let mut w = w0;
            let mut values = Vec::with_capacity(len);
            let mut bad = 0u64;
            for n in 0..len as i64 {
                values.push(w);
                bad += u64::from(w > w0 + stationary);
                let stream = path.family(n, Family::Transmit);
                let z_n = z.draw(&path, n);
                w = w - stream.count_below(0, w, p) + z_n;
                stationary = stationary - stream.count_below(0, stationary, p) + z_n;
            }
            Ok((values, bad))
        })
        .try_fold(zero, |(mut s, mut s2, mut v), item| {
            let (values, bad) = item?;
            for (k, &x) in values.iter().enumerate() {
                s[k] += x as i128;
                s2[k] += (x as i128) * (x as i128);
            }
            v += bad;
            Ok((s, s2, v))
        })
        .try_reduce(zero, |(mut a, mut a2, va), (b, b2, vb)| {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
            a2.iter_mut().zip(b2).for_each(|(x, y)| *x += y);
            Ok((a, a2, va + vb))
        })?;
    let bound = w0 as f64 + z.mean() / p;
    let points: Vec<MeanPoint> = (0..len)
        .map(|k| {
            let est = MeanEstimate::from_sums(sum[k], sum_sq[k], replications);
            MeanPoint {
                n: k as u64,
                mean: est.mean,
                std_error: est.std_error,
                limit: bound + 3.0 * est.std_error,
            }
        })
        .collect();
    let within_bound = points.iter().all(|pt| pt.mean <= pt.limit);
    Ok(MeanBoundReport {
        bound,
        pathwise_violations,
        points,
        within_bound,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoissonMarginalReport {
    pub rate: f64,
    pub sample_mean: f64,
    pub truncation: u32,
    pub truncation_bias_bound: f64,
    pub gof: GofReport,
}

/// Samples the stationary series with `Z ~ Poisson(c)` and tests it against Poisson(c/p).
pub fn poisson_marginal_check(
    c: f64,
    p: f64,
    replications: u64,
    truncation: u32,
    src: &RandomSource,
) -> Result<PoissonMarginalReport> {
    check_p(p)?;
    let z = InputLaw::Poisson { rate: c };
    z.validate()?;
    let values = stationary_values(&z, p, truncation, replications, src)?;
    let sample_mean = values.iter().sum::<u64>() as f64 / values.len().max(1) as f64;
    Ok(PoissonMarginalReport {
        rate: c / p,
        sample_mean,
        truncation,
        truncation_bias_bound: truncation_bias_bound(&z, p, truncation),
        gof: gof_poisson(&values, c / p),
    })
}

/// Independent stationary-series samples, one per replication.
pub fn stationary_values(
    z: &InputLaw,
    p: f64,
    truncation: u32,
    replications: u64,
    src: &RandomSource,
) -> Result<Vec<u64>> {
    (0..replications)
        .into_par_iter()
        .map(|r| stationary_sample(z, p, truncation, &src.substream(r), 0).map(|s| s.value))
        .collect()
}

/// Histograms of `W_n` at slot `n` from each start in `starts`, with the homogeneity test
/// across starts.
pub fn ergodicity_check(
    starts: &[u64],
    z: &InputLaw,
    p: f64,
    n: u64,
    replications: u64,
    src: &RandomSource,
) -> Result<(Vec<Vec<u64>>, GofReport)> {
    check_p(p)?;
    let hists: Vec<Vec<u64>> = starts
        .iter()
        .enumerate()
        .map(|(k, &w0)| {
            let base = src.substream(k as u64);
            let values: Vec<u64> = (0..replications)
                .into_par_iter()
                .map(|r| {
                    let path = base.substream(r);
                    let mut s = WChainState::start(w0);
                    for m in 0..n as i64 {
                        s = step_w(s, p, z, &path, m);
                    }
                    s.w
                })
                .collect();
            histogram(&values)
        })
        .collect();
    let report = stats::chi_square_homogeneity(&hists);
    Ok((hists, report))
}
