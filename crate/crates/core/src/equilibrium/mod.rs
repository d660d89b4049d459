//! Invariant measure, mixing, controllability and support experiments.

mod control;
mod gibbs;
mod mixing;
mod probe;

pub use control::{control_experiment, control_to_target, etdrk4_coefficients, ControlProblem, ControlResult};
pub use gibbs::{
    acceptance_ratio, chain_estimate, equilibrium_compare, equilibrium_experiment, gibbs_log_density, metropolis_sample,
    potential, EquilibriumConfig, GibbsChain, GibbsRun, GibbsSpec,
};
pub use mixing::{mixing_experiment, MixingConfig};
pub use probe::{probe_residuals, support_probe, ProbeConfig, ProbeSequence};
