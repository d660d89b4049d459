//! Configuration, dispatch and artifacts for the `sqe` command-line runner.

mod config;
mod experiments;
mod output;

pub use config::{defaults, ExperimentConfig, Value};
pub use experiments::{declared_tolerances, run_experiment};
pub use output::{exit_code, write_artifacts, ExitCode};

use crate::error::{Error, Result};
use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Experiment {
    WickCovariance,
    RestartConsistency,
    Dissipation,
    Moments,
    Linearization,
    Bel,
    Tv,
    GibbsCompare,
    Mixing,
    Control,
    SupportProbe,
    BesovSuite,
    KernelBounds,
}

impl Experiment {
    pub const ALL: [Experiment; 13] = [
        Experiment::WickCovariance,
        Experiment::RestartConsistency,
        Experiment::Dissipation,
        Experiment::Moments,
        Experiment::Linearization,
        Experiment::Bel,
        Experiment::Tv,
        Experiment::GibbsCompare,
        Experiment::Mixing,
        Experiment::Control,
        Experiment::SupportProbe,
        Experiment::BesovSuite,
        Experiment::KernelBounds,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::WickCovariance => "wick-covariance",
            Experiment::RestartConsistency => "restart-consistency",
            Experiment::Dissipation => "dissipation",
            Experiment::Moments => "moments",
            Experiment::Linearization => "linearization",
            Experiment::Bel => "bel",
            Experiment::Tv => "tv",
            Experiment::GibbsCompare => "gibbs-compare",
            Experiment::Mixing => "mixing",
            Experiment::Control => "control",
            Experiment::SupportProbe => "support-probe",
            Experiment::BesovSuite => "besov-suite",
            Experiment::KernelBounds => "kernel-bounds",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment `{s}`")))
    }
}
