//! Estimation of conditional effects of incremental propensity-score
//! interventions.
//!
//! The pipeline is: fit (or synthesize) nuisance functions, turn each row into
//! an un-centered efficient-influence-function value (a pseudo-outcome), then
//! regress the pseudo-outcomes on the conditioning covariates with either a
//! parametric working model ([`projection`]) or a linear smoother ([`idr`]).
//! [`vcide`] estimates and tests the variance of the conditional derivative
//! effect; [`simulation`] carries the reference data-generating processes,
//! exact oracles and Monte-Carlo experiments.

pub mod crossfit;
pub mod data;
pub mod effects;
pub mod error;
pub mod nuisance;
pub mod idr;
pub mod projection;
pub mod simulation;
pub mod stats;
pub mod vcide;

pub use data::{Dataset, Observation};
pub use effects::{Delta, EffectKind, NuisanceRow, PseudoOutcomeTable};
pub use error::{Error, Result};
pub use nuisance::NuisanceValues;
