//! Parametric portfolio policies with Bayesian posterior averaging.
//!
//! The crate covers the policy rule and its feasibility projection, MAP
//! estimation under Gaussian and regularised-horseshoe priors, Laplace
//! posterior weight averaging, an expanding-window backtest, performance
//! analytics and numerical checks of the estimation-risk results.

pub mod analytics;
pub mod backtest;
pub mod data;
pub mod error;
pub mod estimation;
pub mod horseshoe;
pub mod ingestion;
pub mod policy;
pub mod theory;
pub mod utility;

pub use data::{
    align, market_benchmark, AlignedData, ConstraintSet, PolicyMatrix, PosteriorApprox, PriorSpec, ReturnsPanel,
    SignalPanel, Strategy, YearMonth,
};
pub use error::{Error, Result};
