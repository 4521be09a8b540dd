//! Goodness-of-fit, regression and interval helpers.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::gamma::ln_gamma;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Minimum expected count per pooled chi-square bin.
const MIN_EXPECTED: f64 = 5.0;

pub fn poisson_pmf(j: u64, rate: f64) -> f64 {
    if rate == 0.0 {
        return if j == 0 { 1.0 } else { 0.0 };
    }
    let jf = j as f64;
    (jf * rate.ln() - rate - ln_gamma(jf + 1.0)).exp()
}

pub fn binomial_pmf(j: u64, k: u64, prob: f64) -> f64 {
    if j > k {
        return 0.0;
    }
    if prob == 0.0 {
        return if j == 0 { 1.0 } else { 0.0 };
    }
    if prob == 1.0 {
        return if j == k { 1.0 } else { 0.0 };
    }
    let (jf, kf) = (j as f64, k as f64);
    let ln_choose = ln_gamma(kf + 1.0) - ln_gamma(jf + 1.0) - ln_gamma(kf - jf + 1.0);
    (ln_choose + jf * prob.ln() + (kf - jf) * (1.0 - prob).ln()).exp()
}

/// Pearson chi-square result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GofReport {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    pub bins: usize,
    pub samples: u64,
}

impl GofReport {
    pub fn passes(&self, alpha: f64) -> bool {
        self.p_value > alpha
    }
}

fn chi_square_sf(statistic: f64, dof: usize) -> f64 {
    if dof == 0 {
        return 1.0;
    }
    if !statistic.is_finite() {
        return 0.0;
    }
    ChiSquared::new(dof as f64)
        .map(|d| d.sf(statistic))
        .unwrap_or(0.0)
}

/// Merge adjacent bins (left to right) until every bin expects at least five counts.
fn pool(observed: &[u64], expected: &[f64]) -> (Vec<u64>, Vec<f64>) {
    let mut obs = Vec::new();
    let mut exp = Vec::new();
    let (mut o_acc, mut e_acc) = (0u64, 0.0f64);
    for (&o, &e) in observed.iter().zip(expected) {
        o_acc += o;
        e_acc += e;
        if e_acc >= MIN_EXPECTED {
            obs.push(o_acc);
            exp.push(e_acc);
            o_acc = 0;
            e_acc = 0.0;
        }
    }
    if o_acc > 0 || e_acc > 0.0 {
        match (obs.last_mut(), exp.last_mut()) {
            (Some(lo), Some(le)) => {
                *lo += o_acc;
                *le += e_acc;
            }
            _ => {
                obs.push(o_acc);
                exp.push(e_acc);
            }
        }
    }
    (obs, exp)
}

/// Pearson goodness-of-fit of `observed` counts against cell probabilities `probs`.
///
/// `probs` should sum to one; cells are pooled until each expects at least five counts.
pub fn chi_square_gof(observed: &[u64], probs: &[f64]) -> GofReport {
    assert_eq!(observed.len(), probs.len(), "observed/probability length mismatch");
    let n: u64 = observed.iter().sum();
    let expected: Vec<f64> = probs.iter().map(|p| p * n as f64).collect();
    let (obs, exp) = pool(observed, &expected);
    // an observation in a zero-probability cell is a certain mismatch
    if observed.iter().zip(probs).any(|(&o, &p)| o > 0 && p <= 0.0) {
        return GofReport {
            statistic: f64::INFINITY,
            dof: obs.len().saturating_sub(1),
            p_value: 0.0,
            bins: obs.len(),
            samples: n,
        };
    }
    let statistic = obs
        .iter()
        .zip(&exp)
        .map(|(&o, &e)| {
            let d = o as f64 - e;
            if e > 0.0 {
                d * d / e
            } else if o > 0 {
                f64::INFINITY
            } else {
                0.0
            }
        })
        .sum::<f64>();
    let dof = obs.len().saturating_sub(1);
    GofReport {
        statistic,
        dof,
        p_value: chi_square_sf(statistic, dof),
        bins: obs.len(),
        samples: n,
    }
}

/// Joint test over independent samples: statistics and degrees of freedom add.
pub fn combine_gof(reports: &[GofReport]) -> GofReport {
    let statistic = reports.iter().map(|r| r.statistic).sum();
    let dof = reports.iter().map(|r| r.dof).sum();
    GofReport {
        statistic,
        dof,
        p_value: chi_square_sf(statistic, dof),
        bins: reports.iter().map(|r| r.bins).sum(),
        samples: reports.iter().map(|r| r.samples).sum(),
    }
}

/// Goodness-of-fit of a histogram (`hist[j]` = count of value `j`) against a pmf on the
/// non-negative integers. The mass beyond the histogram forms a final tail cell.
pub fn gof_against_pmf(hist: &[u64], pmf: impl Fn(u64) -> f64) -> GofReport {
    let mut probs: Vec<f64> = (0..hist.len() as u64).map(pmf).collect();
    let tail = (1.0 - probs.iter().sum::<f64>()).max(0.0);
    let mut observed = hist.to_vec();
    probs.push(tail);
    observed.push(0);
    chi_square_gof(&observed, &probs)
}

/// Chi-square test that several histograms come from one distribution.
pub fn chi_square_homogeneity(samples: &[Vec<u64>]) -> GofReport {
    let width = samples.iter().map(Vec::len).max().unwrap_or(0);
    let rows: Vec<Vec<u64>> = samples
        .iter()
        .map(|r| {
            let mut r = r.clone();
            r.resize(width, 0);
            r
        })
        .collect();
    let row_totals: Vec<u64> = rows.iter().map(|r| r.iter().sum()).collect();
    let grand: u64 = row_totals.iter().sum();
    let col_totals: Vec<u64> = (0..width).map(|j| rows.iter().map(|r| r[j]).sum()).collect();
    let min_row = row_totals.iter().copied().min().unwrap_or(0) as f64;

    // Pool columns until the smallest row expects at least five counts in each.
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut current = Vec::new();
    let mut acc = 0u64;
    for (j, &ct) in col_totals.iter().enumerate() {
        current.push(j);
        acc += ct;
        if grand > 0 && min_row * acc as f64 / grand as f64 >= MIN_EXPECTED {
            groups.push(std::mem::take(&mut current));
            acc = 0;
        }
    }
    if !current.is_empty() {
        match groups.last_mut() {
            Some(g) => g.extend(current),
            None => groups.push(current),
        }
    }

    let mut statistic = 0.0;
    for (r, row) in rows.iter().enumerate() {
        for g in &groups {
            let o: u64 = g.iter().map(|&j| row[j]).sum();
            let ct: u64 = g.iter().map(|&j| col_totals[j]).sum();
            let e = row_totals[r] as f64 * ct as f64 / grand as f64;
            if e > 0.0 {
                statistic += (o as f64 - e).powi(2) / e;
            }
        }
    }
    let dof = (rows.len().saturating_sub(1)) * (groups.len().saturating_sub(1));
    GofReport {
        statistic,
        dof,
        p_value: chi_square_sf(statistic, dof),
        bins: groups.len(),
        samples: grand,
    }
}

/// Ordinary least squares fit of `y` on `x`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub slope_se: f64,
}

impl LinearFit {
    pub fn slope_t(&self) -> f64 {
        if self.slope_se > 0.0 {
            self.slope / self.slope_se
        } else if self.slope == 0.0 {
            0.0
        } else {
            f64::INFINITY.copysign(self.slope)
        }
    }
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    let n = x.len();
    if n < 2 || n != y.len() {
        return None;
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    let slope_se = if n > 2 {
        (sse / (nf - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Some(LinearFit {
        slope,
        intercept,
        r_squared,
        slope_se,
    })
}

/// Sample mean with a 95% normal half-width, from exact integer moments.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub half_width: f64,
    pub n: u64,
}

impl MeanEstimate {
    pub fn from_sums(sum: i128, sum_sq: i128, n: u64) -> Self {
        if n == 0 {
            return Self {
                mean: 0.0,
                std_error: 0.0,
                half_width: 0.0,
                n,
            };
        }
        let nf = n as f64;
        let mean = sum as f64 / nf;
        let var = if n > 1 {
            // (n Σx² − (Σx)²) / (n (n−1)), exact in integers up to the final division
            let num = n as i128 * sum_sq - sum * sum;
            (num as f64 / (nf * (nf - 1.0))).max(0.0)
        } else {
            0.0
        };
        let std_error = (var / nf).sqrt();
        Self {
            mean,
            std_error,
            half_width: Z95 * std_error,
            n,
        }
    }

    pub fn from_values(values: impl IntoIterator<Item = i64>) -> Self {
        let (mut s, mut s2, mut n) = (0i128, 0i128, 0u64);
        for v in values {
            s += v as i128;
            s2 += (v as i128) * (v as i128);
            n += 1;
        }
        Self::from_sums(s, s2, n)
    }
}

/// Frequency estimate with a normal-approximation 95% half-width.
pub fn proportion(hits: u64, n: u64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 0.0);
    }
    let f = hits as f64 / n as f64;
    (f, Z95 * (f * (1.0 - f) / n as f64).sqrt())
}

/// Total-variation distance between two pmfs given on a common support, with any
/// mass outside the vectors counted as disagreeing.
pub fn tv_distance(a: &[f64], b: &[f64]) -> f64 {
    let len = a.len().max(b.len());
    let get = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(0.0);
    let inside: f64 = (0..len).map(|i| (get(a, i) - get(b, i)).abs()).sum();
    let tail_a = (1.0 - a.iter().sum::<f64>()).max(0.0);
    let tail_b = (1.0 - b.iter().sum::<f64>()).max(0.0);
    0.5 * (inside + (tail_a - tail_b).abs())
}
