//! Switched positive linear systems driven by a semi-Markov environment.

mod chain;
mod decay;
mod kernel;
mod model;
mod sojourn;

pub use chain::SemiMarkovChain;
pub use decay::{
    decay_rate, decay_rate_from_plan, is_mean_stable, log_rho, log_rho_grad, log_rho_grad_with, log_rho_with,
    DecayOptions, DecayRateReport, LogRhoGrad,
};
pub use kernel::{assemble_kernel, KernelAssembler, KernelMatrix, KernelOptions, KernelPlan};
pub use model::{Constraint, Mode, ParametrizedSystem};
pub use sojourn::{SojournDistribution, SojournKind, SojournNode};
