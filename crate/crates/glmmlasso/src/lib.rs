//! L1-penalized estimation for generalized linear mixed models.
//!
//! The crate fits high-dimensional mixed models by coordinate gradient
//! descent on a Laplace approximation of the marginal likelihood. It covers
//! bernoulli (logit), poisson (log) and gaussian (identity) responses,
//! regularization paths with AIC/BIC model selection, two-stage refitting
//! and a simulation engine for benchmarking estimator quality.

pub mod error;
pub mod family;
pub mod glm;
pub mod input;
pub mod linalg;
pub mod model;
pub mod objective;
pub mod optimizer;
pub mod pirls;
pub mod problem;
pub mod report;
pub mod selection;
pub mod simulate;

pub use error::{Error, Result};
pub use family::{FamilyKind, FamilySpec};
pub use model::{
    BlockStructure, CovarianceTemplate, Dataset, GroupingFactor, ParamState, ReTerm,
};
pub use problem::Problem;
