//! Simulation and stability analysis of slotted random multiple access where every
//! message carries a unit battery and harvests energy at a rate that adapts to the
//! number of messages in the system.
//!
//! * [`sampling`]: counter-based uniforms, binomial thinning and Poisson draws.
//! * [`model`]: the `(q, v)` chain, its one-slot transition and trajectories.
//! * [`aux_chain`]: the one-dimensional thinning chain with Poisson input.
//! * [`lemma1`]: the thinning chain with general input, its stationary series,
//!   extinction-time coupling and pathwise domination checks.
//! * [`stability`]: Lyapunov drift estimates, stability classification, phase sweeps.
//! * [`stats`]: goodness-of-fit and regression helpers shared by the above.

pub mod aux_chain;
pub mod error;
pub mod lemma1;
pub mod model;
pub mod sampling;
pub mod stability;
pub mod stats;

pub use error::{Error, Result};
pub use model::{ArrivalLaw, HarvestPolicy, ModelParams, SlotRecord, SystemState, Trajectory};
pub use sampling::{Coupling, Family, RandomSource};
