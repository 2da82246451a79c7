// `!(x < y)` is how these modules reject NaN alongside out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bethedging;
pub mod error;
pub mod montecarlo;
pub mod numlin;
pub mod optimizer;
pub mod posy;
pub mod system;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/overview.md")]
    mod overview {}
    #[doc = include_str!("../../../book/src/systems.md")]
    mod systems {}
    #[doc = include_str!("../../../book/src/decay-rate.md")]
    mod decay_rate {}
    #[doc = include_str!("../../../book/src/tuning.md")]
    mod tuning {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/bet-hedging.md")]
    mod bet_hedging {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
