//! Counter-based random primitives.
//!
//! Every uniform is a pure function of `(master_seed, stream_id, slot, index, family)`.
//! Chains that share a [`RandomSource`] therefore see the same per-slot uniform
//! families, which is what pathwise coupling and monotone-ordering checks need.
//! Binomial counts are built from indicator prefixes `I(U_{n,1} < p) + ... + I(U_{n,k} < p)`,
//! so a smaller population always sees a subset of the indicators a larger one sees.

use rand::RngCore;
use rand_distr::{Binomial, Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest Poisson rate sampled by single-uniform inversion.
const INVERSION_RATE_LIMIT: f64 = 30.0;

/// Index lane reserved for aggregated samplers so they never reuse indicator uniforms.
const AGGREGATE_LANE: u64 = 1 << 63;

/// Default population size above which an aggregated binomial may be used.
pub const DEFAULT_AGGREGATE_THRESHOLD: u64 = 64;

/// Which mechanism a uniform family drives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// `U_{n,i}`: transmission attempts (and departures in thinning chains).
    Transmit,
    /// `Û_{n,i}`: energy harvesting.
    Harvest,
    /// New arrivals (`ξ_n`, `Z_n`).
    Arrival,
    /// Poisson input of the auxiliary chain and derived thinnings.
    Aux,
    /// Initial-condition draws.
    Init,
}

impl Family {
    fn tag(self) -> u64 {
        match self {
            Family::Transmit => 0x5452_414e_534d_4954,
            Family::Harvest => 0x4841_5256_4553_5421,
            Family::Arrival => 0x4152_5249_5641_4c21,
            Family::Aux => 0x4155_5849_4c49_4152,
            Family::Init => 0x494e_4954_4941_4c21,
        }
    }
}

/// How a binomial count may be produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    /// Always one indicator per element; required by pathwise comparisons.
    Exact,
    /// Above `threshold` elements, draw the count from an aggregated sampler.
    Aggregate { threshold: u64 },
}

impl Default for Coupling {
    fn default() -> Self {
        Coupling::Aggregate {
            threshold: DEFAULT_AGGREGATE_THRESHOLD,
        }
    }
}

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[inline]
fn absorb(h: u64, x: u64, salt: u64) -> u64 {
    mix64(h ^ mix64(x.wrapping_add(salt)))
}

#[inline]
fn to_open_unit(bits: u64) -> f64 {
    ((bits >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

fn check_prob(prob: f64) -> Result<()> {
    if (0.0..=1.0).contains(&prob) {
        Ok(())
    } else {
        Err(Error::InvalidProbability(prob))
    }
}

/// Seed for the `index`-th independent work item (grid cell, run) of an experiment.
pub fn derive_seed(master_seed: u64, index: u64) -> u64 {
    absorb(mix64(master_seed ^ 0x4528_21e6_38d0_1377), index, 0xbe54_66cf_34e9_0c6c)
}

/// Address-keyed source of uniforms for one chain identity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RandomSource {
    master_seed: u64,
    stream_id: u64,
}

impl RandomSource {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        Self {
            master_seed,
            stream_id,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// A source for an independent sub-experiment (replication, grid cell) of this one.
    pub fn substream(&self, id: u64) -> Self {
        Self {
            master_seed: self.master_seed,
            stream_id: absorb(self.stream_id, id, 0x9e37_79b9_7f4a_7c15),
        }
    }

    /// The uniform family for one slot.
    #[inline]
    pub fn family(&self, slot: i64, family: Family) -> SlotStream {
        let mut h = mix64(self.master_seed ^ 0x243f_6a88_85a3_08d3);
        h = absorb(h, self.stream_id, 0x1319_8a2e_0370_7344);
        h = absorb(h, slot as u64, 0xa409_3822_299f_31d0);
        h = absorb(h, family.tag(), 0x082e_fa98_ec4e_6c89);
        SlotStream { key: h }
    }

    /// `U` at address `(slot, index, family)`, strictly inside (0, 1).
    pub fn uniform(&self, slot: i64, index: u64, family: Family) -> f64 {
        self.family(slot, family).uniform(index)
    }

    /// `B_n(k, prob)`: number of indicators `U_{n,i} < prob` among `i = 1..=k`.
    pub fn binomial(&self, slot: i64, family: Family, k: u64, prob: f64) -> Result<u64> {
        self.binomial_with(slot, family, k, prob, Coupling::Exact)
    }

    /// As [`binomial`](Self::binomial), allowing an aggregated sampler above a threshold.
    pub fn binomial_with(
        &self,
        slot: i64,
        family: Family,
        k: u64,
        prob: f64,
        coupling: Coupling,
    ) -> Result<u64> {
        check_prob(prob)?;
        Ok(self.family(slot, family).binomial(k, prob, coupling))
    }

    /// `D_n(k, survive_prob) = k - B_n(k, 1 - survive_prob)` on the same uniforms.
    pub fn thin(&self, slot: i64, family: Family, k: u64, survive_prob: f64) -> Result<u64> {
        check_prob(survive_prob)?;
        Ok(self.family(slot, family).thin_range(0, k, survive_prob))
    }

    /// `D_{m:m+steps-1}(k, survive_prob)`: thinning applied over `steps` consecutive slots
    /// starting at `start_slot`, survivors compacted to the indicator prefix each step.
    pub fn compose_thin(
        &self,
        start_slot: i64,
        family: Family,
        k: u64,
        survive_prob: f64,
        steps: u32,
    ) -> Result<u64> {
        check_prob(survive_prob)?;
        if steps == 0 {
            return Err(Error::InvalidArgument("compose_thin needs steps >= 1".into()));
        }
        let mut alive = k;
        for step in 0..steps as i64 {
            if alive == 0 {
                break;
            }
            alive = self
                .family(start_slot + step, family)
                .thin_range(0, alive, survive_prob);
        }
        Ok(alive)
    }

    /// Poisson(`rate`) count addressed by `(slot, family)`.
    pub fn poisson(&self, slot: i64, family: Family, rate: f64) -> Result<u64> {
        if !(rate >= 0.0 && rate.is_finite()) {
            return Err(Error::InvalidRate(rate));
        }
        Ok(self.family(slot, family).poisson(rate))
    }
}

/// The uniforms `U_{n,1}, U_{n,2}, ...` of one `(slot, family)` address.
#[derive(Clone, Copy, Debug)]
pub struct SlotStream {
    key: u64,
}

impl SlotStream {
    #[inline]
    pub fn bits(&self, index: u64) -> u64 {
        mix64(self.key ^ mix64(index.wrapping_mul(0xd6e8_feb8_6659_fd93) ^ 0x3c6e_f372_fe94_f82b))
    }

    #[inline]
    pub fn uniform(&self, index: u64) -> f64 {
        to_open_unit(self.bits(index))
    }

    /// Count of `U_i < prob` for `i` in `offset+1 ..= offset+k`.
    #[inline]
    pub fn count_below(&self, offset: u64, k: u64, prob: f64) -> u64 {
        if prob <= 0.0 {
            return 0;
        }
        if prob >= 1.0 {
            return k;
        }
        (offset + 1..=offset + k)
            .filter(|&i| self.uniform(i) < prob)
            .count() as u64
    }

    /// Survivors among indicators `offset+1 ..= offset+k`, where element `i` dies iff
    /// `U_i < 1 - survive_prob`.
    #[inline]
    pub fn thin_range(&self, offset: u64, k: u64, survive_prob: f64) -> u64 {
        k - self.count_below(offset, k, 1.0 - survive_prob)
    }

    /// Caller guarantees `prob` is in `[0, 1]`.
    pub fn binomial(&self, k: u64, prob: f64, coupling: Coupling) -> u64 {
        match coupling {
            Coupling::Aggregate { threshold } if k > threshold && prob > 0.0 && prob < 1.0 => {
                let dist = Binomial::new(k, prob).expect("validated binomial parameters");
                dist.sample(&mut self.lane_rng())
            }
            _ => self.count_below(0, k, prob),
        }
    }

    /// Poisson by inversion of `U_1` for moderate rates; aggregated sampler otherwise.
    pub fn poisson(&self, rate: f64) -> u64 {
        if rate <= 0.0 {
            return 0;
        }
        if rate > INVERSION_RATE_LIMIT {
            let dist = Poisson::new(rate).expect("validated poisson rate");
            return dist.sample(&mut self.lane_rng()) as u64;
        }
        poisson_inverse(self.uniform(1), rate)
    }

    /// A sequential generator over this address's aggregate lane.
    pub fn lane_rng(&self) -> LaneRng {
        LaneRng {
            stream: *self,
            counter: AGGREGATE_LANE,
        }
    }
}

/// Smallest `k` with `P(X <= k) >= u` for `X ~ Poisson(rate)`.
pub(crate) fn poisson_inverse(u: f64, rate: f64) -> u64 {
    let mut k = 0u64;
    let mut term = (-rate).exp();
    let mut cdf = term;
    let cap = (rate + 40.0 * rate.sqrt() + 50.0) as u64;
    while u > cdf && k < cap {
        k += 1;
        term *= rate / k as f64;
        cdf += term;
    }
    k
}

/// Adapter exposing one address lane as an `RngCore` for library samplers.
#[derive(Clone, Debug)]
pub struct LaneRng {
    stream: SlotStream,
    counter: u64,
}

impl RngCore for LaneRng {
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        let out = self.stream.bits(self.counter);
        self.counter = self.counter.wrapping_add(1);
        out
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let bytes = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}
