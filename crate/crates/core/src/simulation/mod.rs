//! Reference processes, exact oracles and Monte-Carlo experiments.

pub mod dgp;
pub mod experiments;
pub mod oracle;

pub use dgp::{AppendixDgp, DgpVariant, DiscreteDgp, Simulated};
pub use experiments::{
    rate_grid, run_centering, run_coverage, run_experiment, run_mse, run_type1_power, CenteringSummary, CoverageCell,
    Experiment, ExperimentConfig, ExperimentTable, MseCell, MseReplicate, MseRun, RejectionCell,
};
pub use oracle::{enumeration_oracle, enumeration_vcide, quadrature_oracle, quadrature_vcide};
