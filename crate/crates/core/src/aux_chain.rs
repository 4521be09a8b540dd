//! Auxiliary thinning chain `Ṽ' = Ṽ - B(Ṽ, p) + η`, with `η ~ Poisson(c)`.
//!
//! Its stationary law is Poisson(c/p); under it the number of attempts per slot is
//! Poisson(c), so a slot carries exactly one attempt with probability `c·e^{-c}`.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::{Family, RandomSource};
use crate::stats::{self, GofReport, LinearFit, Z95};

/// Poisson tail mass below which the stationary support is truncated.
pub const SUPPORT_TAIL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AuxState {
    pub v_tilde: u64,
}

fn check(p: f64, c: f64) -> Result<()> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidParameter(format!("p = {p} must lie in (0, 1]")));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::InvalidParameter(format!("c = {c} must be positive")));
    }
    Ok(())
}

/// One step, also returning the number of departures `B(Ṽ, p)`.
#[inline]
pub fn step_aux_counted(
    state: AuxState,
    p: f64,
    c: f64,
    src: &RandomSource,
    slot: i64,
) -> (AuxState, u64) {
    let departures = src
        .family(slot, Family::Transmit)
        .count_below(0, state.v_tilde, p);
    let eta = src.family(slot, Family::Aux).poisson(c);
    (
        AuxState {
            v_tilde: state.v_tilde - departures + eta,
        },
        departures,
    )
}

pub fn step_aux(state: AuxState, p: f64, c: f64, src: &RandomSource, slot: i64) -> AuxState {
    step_aux_counted(state, p, c, src, slot).0
}

/// Poisson(c/p) probability of `j`.
pub fn stationary_pmf(j: u64, c: f64, p: f64) -> f64 {
    stats::poisson_pmf(j, c / p)
}

/// Smallest `J` with stationary mass above `J` below [`SUPPORT_TAIL`].
pub fn stationary_support(c: f64, p: f64) -> u64 {
    let mut cdf = 0.0;
    let mut j = 0;
    loop {
        cdf += stationary_pmf(j, c, p);
        if 1.0 - cdf < SUPPORT_TAIL {
            return j;
        }
        j += 1;
    }
}

/// `c·e^{-c}`, the single-attempt probability under the stationary law.
pub fn success_prob_limit(c: f64) -> f64 {
    c * (-c).exp()
}

/// A Poisson(c/p) draw for initialising at stationarity.
pub fn stationary_draw(c: f64, p: f64, src: &RandomSource) -> AuxState {
    AuxState {
        v_tilde: src.family(0, Family::Init).poisson(c / p),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuccessEstimate {
    pub estimate: f64,
    pub half_width: f64,
    pub slots: u64,
}

/// Fraction of post-burn-in slots with exactly one departure, from `Ṽ_0 = 0`.
pub fn empirical_success_rate(
    c: f64,
    p: f64,
    horizon: u64,
    burn_in: u64,
    src: &RandomSource,
) -> Result<SuccessEstimate> {
    check(p, c)?;
    if horizon <= burn_in {
        return Err(Error::InvalidArgument("horizon must exceed burn_in".into()));
    }
    let mut state = AuxState::default();
    let mut hits = 0u64;
    for n in 0..horizon {
        let (next, departures) = step_aux_counted(state, p, c, src, n as i64);
        if n >= burn_in && departures == 1 {
            hits += 1;
        }
        state = next;
    }
    let slots = horizon - burn_in;
    let (estimate, half_width) = stats::proportion(hits, slots);
    Ok(SuccessEstimate {
        estimate,
        half_width,
        slots,
    })
}

/// Per-slot single-departure counts over `replications` paths from `Ṽ_0 = v0`, for
/// slots `0..=horizon`.
fn success_counts(
    c: f64,
    p: f64,
    v0: u64,
    horizon: usize,
    replications: u64,
    src: &RandomSource,
) -> Vec<u64> {
    (0..replications)
        .into_par_iter()
        .fold(
            || vec![0u64; horizon + 1],
            |mut acc, r| {
                let path = src.substream(r);
                let mut state = AuxState { v_tilde: v0 };
                for (n, slot) in acc.iter_mut().enumerate() {
                    let (next, departures) = step_aux_counted(state, p, c, &path, n as i64);
                    *slot += u64::from(departures == 1);
                    state = next;
                }
                acc
            },
        )
        .reduce(
            || vec![0u64; horizon + 1],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        )
}

/// Smallest lag `l` such that, for every `Ṽ_0 ∈ {0..=r_max}` and every slot `n` in
/// `l..=cap`, the estimated single-departure probability lies within `delta / 3` of
/// `c·e^{-c}` after widening the deviation by a 95% sampling half-width.
pub fn convergence_lag(
    c: f64,
    p: f64,
    r_max: u64,
    delta: f64,
    replications: u64,
    cap: usize,
    src: &RandomSource,
) -> Result<usize> {
    check(p, c)?;
    if delta.is_nan() || delta <= 0.0 {
        return Err(Error::InvalidArgument("delta must be positive".into()));
    }
    if replications == 0 {
        return Err(Error::InvalidArgument("replications must be positive".into()));
    }
    let target = success_prob_limit(c);
    let tol = delta / 3.0;
    let mut ok = vec![true; cap + 1];
    for v0 in 0..=r_max {
        let counts = success_counts(c, p, v0, cap, replications, &src.substream(v0));
        for (n, &hits) in counts.iter().enumerate() {
            let (est, _) = stats::proportion(hits, replications);
            let se = (est * (1.0 - est) / replications as f64).sqrt();
            if (est - target).abs() + Z95 * se >= tol {
                ok[n] = false;
            }
        }
    }
    match ok.iter().rposition(|&good| !good) {
        None => Ok(0),
        Some(last_bad) if last_bad < cap => Ok(last_bad + 1),
        Some(_) => Err(Error::NotConverged { cap }),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub n: u64,
    pub initial_v: u64,
    pub estimated_success_prob: f64,
    pub tv_distance: f64,
}

/// Marginal law of `Ṽ_n` from a fixed start, estimated over `replications` paths.
pub fn convergence_curve(
    c: f64,
    p: f64,
    v0: u64,
    horizon: usize,
    replications: u64,
    src: &RandomSource,
) -> Result<Vec<CurvePoint>> {
    check(p, c)?;
    if replications == 0 {
        return Err(Error::InvalidArgument("replications must be positive".into()));
    }
    let support = stationary_support(c, p) as usize;
    // hist[n][j] for j <= support; column support + 1 collects the overflow
    let width = support + 2;
    let zero = || (vec![0u64; (horizon + 1) * width], vec![0u64; horizon + 1]);
    let (hist, hits) = (0..replications)
        .into_par_iter()
        .fold(zero, |(mut hist, mut hits), r| {
            let path = src.substream(r);
            let mut state = AuxState { v_tilde: v0 };
            for n in 0..=horizon {
                let col = (state.v_tilde as usize).min(support + 1);
                hist[n * width + col] += 1;
                let (next, departures) = step_aux_counted(state, p, c, &path, n as i64);
                hits[n] += u64::from(departures == 1);
                state = next;
            }
            (hist, hits)
        })
        .reduce(zero, |(mut ha, mut sa), (hb, sb)| {
            ha.iter_mut().zip(hb).for_each(|(x, y)| *x += y);
            sa.iter_mut().zip(sb).for_each(|(x, y)| *x += y);
            (ha, sa)
        });
    let stationary: Vec<f64> = (0..=support as u64).map(|j| stationary_pmf(j, c, p)).collect();
    let reps = replications as f64;
    Ok((0..=horizon)
        .map(|n| {
            let row = &hist[n * width..n * width + support + 1];
            let empirical: Vec<f64> = row.iter().map(|&h| h as f64 / reps).collect();
            CurvePoint {
                n: n as u64,
                initial_v: v0,
                estimated_success_prob: hits[n] as f64 / reps,
                tv_distance: stats::tv_distance(&empirical, &stationary),
            }
        })
        .collect())
}

pub const CURVE_CSV_HEADER: &str = "n,initial_v,estimated_success_prob,tv_distance";

pub fn write_curve_csv<W: Write>(points: &[CurvePoint], mut out: W) -> io::Result<()> {
    writeln!(out, "{CURVE_CSV_HEADER}")?;
    for pt in points {
        writeln!(
            out,
            "{},{},{},{}",
            pt.n, pt.initial_v, pt.estimated_success_prob, pt.tv_distance
        )?;
    }
    Ok(())
}

/// Log-linear fit of the TV curve over points above twice its noise floor, the floor
/// being the median TV over the last quarter of the curve.
pub fn tv_decay_fit(points: &[CurvePoint]) -> Option<LinearFit> {
    if points.len() < 8 {
        return None;
    }
    let mut tail: Vec<f64> = points[points.len() * 3 / 4..]
        .iter()
        .map(|p| p.tv_distance)
        .collect();
    tail.sort_by(f64::total_cmp);
    let floor = tail[tail.len() / 2];
    let (x, y): (Vec<f64>, Vec<f64>) = points
        .iter()
        .take_while(|p| p.tv_distance > 2.0 * floor)
        .filter(|p| p.tv_distance > 0.0)
        .map(|p| (p.n as f64, p.tv_distance.ln()))
        .unzip();
    stats::linear_fit(&x, &y)
}

/// Goodness-of-fit of `Ṽ_n` against Poisson(c/p) at each requested `n`, starting
/// every path from a Poisson(c/p) draw.
pub fn stationarity_check(
    c: f64,
    p: f64,
    steps: &[u64],
    replications: u64,
    src: &RandomSource,
) -> Result<Vec<(u64, GofReport)>> {
    check(p, c)?;
    let max_n = steps.iter().copied().max().unwrap_or(0);
    let finals: Vec<Vec<u64>> = (0..replications)
        .into_par_iter()
        .map(|r| {
            let path = src.substream(r);
            let mut state = stationary_draw(c, p, &path);
            let mut seen = Vec::with_capacity(steps.len());
            for n in 0..=max_n {
                if steps.contains(&n) {
                    seen.push(state.v_tilde);
                }
                state = step_aux(state, p, c, &path, n as i64);
            }
            seen
        })
        .collect();
    let mut sorted: Vec<u64> = steps.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    Ok(sorted
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let values: Vec<u64> = finals.iter().map(|row| row[k]).collect();
            (n, gof_poisson(&values, c / p))
        })
        .collect())
}

pub(crate) fn histogram(values: &[u64]) -> Vec<u64> {
    let max = values.iter().copied().max().unwrap_or(0) as usize;
    let mut hist = vec![0u64; max + 1];
    for &v in values {
        hist[v as usize] += 1;
    }
    hist
}

pub(crate) fn gof_poisson(values: &[u64], rate: f64) -> GofReport {
    stats::gof_against_pmf(&histogram(values), |j| stats::poisson_pmf(j, rate))
}
