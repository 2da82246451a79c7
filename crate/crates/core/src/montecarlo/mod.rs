//! Sampling of switching signals and exact trajectories, used to check
//! computed decay rates empirically.

mod estimate;
mod sample;
mod simulate;

pub use estimate::{estimate_decay, DecayEstimate, EstimateOptions, StateNorm};
pub use sample::{ks_statistic, sample_sojourn};
pub use simulate::{simulate, simulate_seeded, trajectory_rng, TrajectorySample};
