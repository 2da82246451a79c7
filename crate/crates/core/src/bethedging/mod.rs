//! Antibiotic dosing of a phenotype-switching population in a fluctuating
//! environment, cast as a parametrized positive switched system.

mod model;
mod sweep;

pub use model::{Antibiotic, BetHedgingParams, REFERENCE_HORIZON, REFERENCE_MEAN_SOJOURN};
pub use sweep::{shape_for_scale, sweep_fig4, sweep_fig5, ScaleConvention, SweepPoint, SweepResult};
