//! Data generators and the Monte Carlo experiment engine for mixed
//! semi-supervised regression.

pub mod config;
pub mod covariance;
pub mod dataset;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod output;
pub mod pairwise;

pub use config::{CovarianceShape, Evaluation, ExperimentConfig, GridSpacing, Preset};
pub use covariance::{gen_sigma, CovarianceSpec};
pub use dataset::{draw_dataset, BetaMode};
pub use error::{Result, SimError};
pub use estimator::{Estimator, Model};
pub use experiment::{run_experiment, CellRecord, ExperimentResult, PairRow, ResultRow};
pub use pairwise::{summarize_pairwise, PairedSummary};
