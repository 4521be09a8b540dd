//! The `(q, v)` chain: `q` messages in the system, `v` of them holding an energy unit.
//!
//! One slot:
//!
//! ```text
//! q' = q - I(B(v, p) = 1) + ξ
//! v' = v - B(v, p) + B̂(q - v + ξ, μ(q))
//! ```
//!
//! Every attempting message spends its unit whether or not it collides; only the
//! `q - v + ξ` messages with an empty battery can harvest.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::{poisson_inverse, Coupling, Family, RandomSource};

/// Default abort threshold for the queue length.
pub const DEFAULT_Q_CEILING: u64 = 1 << 48;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SystemState {
    pub q: u64,
    pub v: u64,
}

impl SystemState {
    pub fn new(q: u64, v: u64) -> Result<Self> {
        if v > q {
            return Err(Error::InvalidState { q, v });
        }
        Ok(Self { q, v })
    }

    pub fn empty() -> Self {
        Self::default()
    }
}

/// Law of the per-slot arrival count, parameterised by its mean.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArrivalLaw {
    #[default]
    Poisson,
    Bernoulli,
    /// Geometric on `{0, 1, ...}`.
    Geometric,
}

impl ArrivalLaw {
    /// Inverse-CDF draw with mean `mean` from a uniform in (0, 1).
    pub fn sample(self, u: f64, mean: f64) -> u64 {
        match self {
            ArrivalLaw::Poisson => poisson_inverse(u, mean),
            ArrivalLaw::Bernoulli => u64::from(u < mean),
            ArrivalLaw::Geometric => {
                // P(X >= k) = r^k with r / (1 - r) = mean
                let r = mean / (1.0 + mean);
                if r <= 0.0 {
                    0
                } else {
                    (u.ln() / r.ln()).floor() as u64
                }
            }
        }
    }

    pub fn pmf(self, k: u64, mean: f64) -> f64 {
        match self {
            ArrivalLaw::Poisson => crate::stats::poisson_pmf(k, mean),
            ArrivalLaw::Bernoulli => match k {
                0 => 1.0 - mean,
                1 => mean,
                _ => 0.0,
            },
            ArrivalLaw::Geometric => {
                let r = mean / (1.0 + mean);
                (1.0 - r) * r.powi(k as i32)
            }
        }
    }
}

/// Harvest intensity as a function of the queue length.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HarvestPolicy {
    /// `min(c / q, 1)`.
    #[default]
    Reciprocal,
    /// `min(c / q^alpha, 1)`.
    PowerLaw { alpha: f64 },
    /// A fixed `mu`, independent of `q`.
    Constant { mu: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub lambda: f64,
    #[serde(default)]
    pub arrival_law: ArrivalLaw,
    pub p: f64,
    pub c: f64,
    #[serde(default)]
    pub harvest_policy: HarvestPolicy,
    #[serde(default)]
    pub coupling: Coupling,
}

impl ModelParams {
    pub fn new(lambda: f64, p: f64, c: f64) -> Result<Self> {
        let params = Self {
            lambda,
            arrival_law: ArrivalLaw::default(),
            p,
            c,
            harvest_policy: HarvestPolicy::default(),
            coupling: Coupling::default(),
        };
        params.validate()?;
        Ok(params)
    }

    pub fn with_arrival_law(mut self, law: ArrivalLaw) -> Self {
        self.arrival_law = law;
        self
    }

    pub fn with_harvest_policy(mut self, policy: HarvestPolicy) -> Self {
        self.harvest_policy = policy;
        self
    }

    pub fn with_coupling(mut self, coupling: Coupling) -> Self {
        self.coupling = coupling;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return bad(format!("lambda = {} must lie in (0, 1)", self.lambda));
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return bad(format!("p = {} must lie in (0, 1]", self.p));
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return bad(format!("c = {} must be positive and finite", self.c));
        }
        match self.harvest_policy {
            HarvestPolicy::PowerLaw { alpha } if !(alpha > 0.0 && alpha.is_finite()) => {
                bad(format!("power-law exponent {alpha} must be positive and finite"))
            }
            HarvestPolicy::Constant { mu } if !(mu > 0.0 && mu <= 1.0) => {
                bad(format!("constant harvest probability {mu} must lie in (0, 1]"))
            }
            _ => Ok(()),
        }
    }
}

/// `μ(q)`. An empty system harvests at full rate.
pub fn harvest_prob(q: u64, params: &ModelParams) -> f64 {
    match params.harvest_policy {
        HarvestPolicy::Reciprocal if q == 0 => 1.0,
        HarvestPolicy::Reciprocal => (params.c / q as f64).min(1.0),
        HarvestPolicy::PowerLaw { .. } if q == 0 => 1.0,
        HarvestPolicy::PowerLaw { alpha } => (params.c / (q as f64).powf(alpha)).min(1.0),
        HarvestPolicy::Constant { mu } => mu,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotRecord {
    pub slot: u64,
    pub arrivals: u64,
    pub attempts: u64,
    pub success: bool,
    pub collision: bool,
    pub harvested: u64,
    pub state_after: SystemState,
}

/// The arrival count `ξ_n` of slot `slot`.
pub fn draw_arrivals(params: &ModelParams, src: &RandomSource, slot: u64) -> u64 {
    let u = src.uniform(slot as i64, 1, Family::Arrival);
    params.arrival_law.sample(u, params.lambda)
}

/// One slot of the chain with the arrival count drawn from the arrival family.
pub fn step(
    state: SystemState,
    params: &ModelParams,
    src: &RandomSource,
    slot: u64,
) -> (SystemState, SlotRecord) {
    let xi = draw_arrivals(params, src, slot);
    step_with_arrivals(state, params, src, slot, xi)
}

/// One slot of the chain with a given arrival count.
pub fn step_with_arrivals(
    state: SystemState,
    params: &ModelParams,
    src: &RandomSource,
    slot: u64,
    arrivals: u64,
) -> (SystemState, SlotRecord) {
    let n = slot as i64;
    let attempts = src
        .family(n, Family::Transmit)
        .binomial(state.v, params.p, params.coupling);
    let empty = state.q - state.v + arrivals;
    let harvested = src.family(n, Family::Harvest).binomial(
        empty,
        harvest_prob(state.q, params),
        params.coupling,
    );
    let success = attempts == 1;
    let next = SystemState {
        q: state.q - u64::from(success) + arrivals,
        v: state.v - attempts + harvested,
    };
    let record = SlotRecord {
        slot,
        arrivals,
        attempts,
        success,
        collision: attempts >= 2,
        harvested,
        state_after: next,
    };
    (next, record)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimOptions {
    pub stride: u64,
    pub q_ceiling: u64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            stride: 1,
            q_ceiling: DEFAULT_Q_CEILING,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub final_state: SystemState,
    pub slots: u64,
    /// Time average of `q` over the post-slot states.
    pub mean_q: f64,
    pub mean_v: f64,
    pub max_q: u64,
    pub arrivals: u64,
    pub successes: u64,
    pub collisions: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub initial: SystemState,
    pub params: ModelParams,
    pub stride: u64,
    pub records: Vec<SlotRecord>,
    pub summary: TrajectorySummary,
}

impl Trajectory {
    pub const CSV_HEADER: &'static str = "slot,q,v,arrivals,attempts,success,collision,harvested";

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.slot,
                r.state_after.q,
                r.state_after.v,
                r.arrivals,
                r.attempts,
                u8::from(r.success),
                u8::from(r.collision),
                r.harvested
            )?;
        }
        Ok(())
    }
}

/// Runs `horizon` slots from `initial`, keeping every `stride`-th record (slots
/// `0, stride, 2·stride, ...`). Summary statistics cover every slot.
pub fn simulate(
    initial: SystemState,
    params: &ModelParams,
    horizon: u64,
    src: &RandomSource,
    options: &SimOptions,
) -> Result<Trajectory> {
    params.validate()?;
    SystemState::new(initial.q, initial.v)?;
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    if options.stride == 0 {
        return Err(Error::InvalidArgument("stride must be at least 1".into()));
    }
    let mut records = Vec::with_capacity(horizon.div_ceil(options.stride).min(1 << 24) as usize);
    let mut state = initial;
    let (mut sum_q, mut sum_v) = (0u128, 0u128);
    let mut max_q = initial.q;
    let (mut arrivals, mut successes, mut collisions) = (0u64, 0u64, 0u64);
    for slot in 0..horizon {
        let (next, record) = step(state, params, src, slot);
        if next.q > options.q_ceiling {
            return Err(Error::QueueOverflow {
                q: next.q,
                ceiling: options.q_ceiling,
                slot,
            });
        }
        state = next;
        sum_q += state.q as u128;
        sum_v += state.v as u128;
        max_q = max_q.max(state.q);
        arrivals += record.arrivals;
        successes += u64::from(record.success);
        collisions += u64::from(record.collision);
        if slot % options.stride == 0 {
            records.push(record);
        }
    }
    Ok(Trajectory {
        initial,
        params: params.clone(),
        stride: options.stride,
        records,
        summary: TrajectorySummary {
            final_state: state,
            slots: horizon,
            mean_q: sum_q as f64 / horizon as f64,
            mean_v: sum_v as f64 / horizon as f64,
            max_q,
            arrivals,
            successes,
            collisions,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params() -> ModelParams {
        ModelParams::new(0.3, 0.5, 1.0).unwrap()
    }

    #[test]
    fn harvest_prob_policies() {
        let mut p = params();
        assert_eq!(harvest_prob(0, &p), 1.0);
        assert_eq!(harvest_prob(1, &p), 1.0);
        assert!((harvest_prob(10, &p) - 0.1).abs() < 1e-15);
        p.c = 2.5;
        assert_eq!(harvest_prob(2, &p), 1.0);
        let p = params().with_harvest_policy(HarvestPolicy::PowerLaw { alpha: 2.0 });
        assert!((harvest_prob(10, &p) - 0.01).abs() < 1e-15);
        assert_eq!(harvest_prob(0, &p), 1.0);
        let p = params().with_harvest_policy(HarvestPolicy::Constant { mu: 0.2 });
        assert_eq!(harvest_prob(1000, &p), 0.2);
    }

    #[test]
    fn validation() {
        assert!(ModelParams::new(0.0, 0.5, 1.0).is_err());
        assert!(ModelParams::new(1.0, 0.5, 1.0).is_err());
        assert!(ModelParams::new(0.3, 0.0, 1.0).is_err());
        assert!(ModelParams::new(0.3, 1.0, 1.0).is_ok());
        assert!(ModelParams::new(0.3, 0.5, 0.0).is_err());
        assert!(ModelParams::new(f64::NAN, 0.5, 1.0).is_err());
        let bad = params().with_harvest_policy(HarvestPolicy::PowerLaw { alpha: -1.0 });
        assert!(bad.validate().is_err());
        assert!(SystemState::new(2, 3).is_err());
    }

    #[test]
    fn empty_system_without_arrivals_stays_empty() {
        let src = RandomSource::new(1, 0);
        let (next, rec) = step_with_arrivals(SystemState::empty(), &params(), &src, 0, 0);
        assert_eq!(next, SystemState::empty());
        assert_eq!(rec.attempts, 0);
        assert_eq!(rec.harvested, 0);
        assert!(!rec.success && !rec.collision);
    }

    #[test]
    fn success_probability_two_energized() {
        // (q=5, v=2), p=0.5: P(success) = 2 * 0.5 * 0.5 = 0.5
        let p = params();
        let n = 200_000u64;
        let hits = (0..n)
            .filter(|&r| {
                let src = RandomSource::new(9, r);
                step(SystemState::new(5, 2).unwrap(), &p, &src, 0).1.success
            })
            .count();
        let f = hits as f64 / n as f64;
        assert!((f - 0.5).abs() < 4.0 * (0.25 / n as f64).sqrt(), "{f}");
    }

    #[test]
    fn arrival_laws_have_requested_mean() {
        let src = RandomSource::new(5, 0);
        for law in [ArrivalLaw::Poisson, ArrivalLaw::Bernoulli, ArrivalLaw::Geometric] {
            let p = params().with_arrival_law(law);
            let n = 400_000u64;
            let sum: u64 = (0..n).map(|s| draw_arrivals(&p, &src, s)).sum();
            let m = sum as f64 / n as f64;
            assert!((m - 0.3).abs() < 0.006, "{law:?}: {m}");
            let total: f64 = (0..60).map(|k| law.pmf(k, 0.3)).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn simulate_shapes_and_determinism() {
        let p = params();
        let src = RandomSource::new(42, 0);
        let one = simulate(SystemState::empty(), &p, 1, &src, &SimOptions::default()).unwrap();
        assert_eq!(one.records.len(), 1);
        let opts = SimOptions {
            stride: 7,
            ..SimOptions::default()
        };
        let a = simulate(SystemState::new(3, 1).unwrap(), &p, 1000, &src, &opts).unwrap();
        let b = simulate(SystemState::new(3, 1).unwrap(), &p, 1000, &src, &opts).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.records.len(), 143);
        assert!(simulate(SystemState::empty(), &p, 0, &src, &opts).is_err());
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(Trajectory::CSV_HEADER));
        assert_eq!(text.lines().count(), 144);
    }

    #[test]
    fn overflow_guard_aborts() {
        let p = ModelParams::new(0.9, 0.5, 1.0)
            .unwrap()
            .with_harvest_policy(HarvestPolicy::PowerLaw { alpha: 3.0 });
        let opts = SimOptions {
            stride: 1000,
            q_ceiling: 50,
        };
        let err = simulate(SystemState::empty(), &p, 100_000, &RandomSource::new(1, 1), &opts);
        assert!(matches!(err, Err(Error::QueueOverflow { ceiling: 50, .. })));
    }

    #[test]
    fn large_queue_harvest_is_near_poisson() {
        // q = 10^6, v = 0, c = 1: harvest count ~ Binomial(10^6 + ξ, 10^-6) ≈ Poisson(1)
        let p = params();
        let n = 100_000u64;
        let mut hist = vec![0u64; 12];
        for r in 0..n {
            let src = RandomSource::new(3, r);
            let (_, rec) = step(SystemState::new(1_000_000, 0).unwrap(), &p, &src, 0);
            hist[(rec.harvested as usize).min(11)] += 1;
        }
        hist.truncate(11);
        let report = crate::stats::gof_against_pmf(&hist, |j| crate::stats::poisson_pmf(j, 1.0));
        assert!(report.p_value > 0.01, "{report:?}");
    }

    proptest! {
        #[test]
        fn transition_invariants(
            seed: u64,
            q in 0u64..300,
            vfrac in 0.0f64..=1.0,
            lambda in 0.01f64..0.99,
            p in 0.01f64..=1.0,
            c in 0.01f64..5.0,
            slots in 1u64..200,
        ) {
            let v = (q as f64 * vfrac) as u64;
            let params = ModelParams::new(lambda, p, c).unwrap();
            let src = RandomSource::new(seed, 0);
            let mut s = SystemState::new(q, v).unwrap();
            for n in 0..slots {
                let (next, rec) = step(s, &params, &src, n);
                prop_assert!(next.v <= next.q);
                prop_assert!(next.q + 1 >= s.q);
                prop_assert_eq!(next.v as i64 - s.v as i64, rec.harvested as i64 - rec.attempts as i64);
                prop_assert_eq!(rec.success, rec.attempts == 1);
                prop_assert_eq!(rec.collision, rec.attempts >= 2);
                prop_assert!(rec.harvested <= s.q - s.v + rec.arrivals);
                s = next;
            }
        }
    }
}
