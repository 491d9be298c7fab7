//! Mixed semi-supervised regression.
//!
//! Supervised and pool-informed (semi-supervised) estimators for linear
//! models, canonical-link GLMs and over-parameterized linear interpolators,
//! together with the risk decompositions used to pick a mixing ratio between
//! them from the data at hand.
//!
//! All covariate expectations are taken over an [`UnlabeledPool`], which is
//! mean-centered once at ingestion (see [`moments::build_moments`]).

pub mod asymptotics;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod glm;
pub mod interp;
pub mod io;
pub mod linalg;
pub mod link;
pub mod moments;
pub mod ols;
pub mod rff;
pub mod rng;
pub mod stats;

pub use data::{LabeledSet, UnlabeledPool};
pub use error::{Error, Result};
pub use link::{Link, LinkKind};
pub use moments::{build_moments, BlockSampler, PopulationMoments, ResampleSpec};

pub use nalgebra::{DMatrix, DVector};
