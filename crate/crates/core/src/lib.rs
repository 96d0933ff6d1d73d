//! Streaming Bayesian variable selection for logistic regression.
//!
//! The model space over `p` predictors is enumerated in full. Each model is
//! fitted batch by batch (refitting on all data, or with a second-order
//! online update), scored with a BIC approximation to its marginal
//! likelihood, and combined with one of several model-space priors to give
//! posterior model probabilities, inclusion probabilities and model-averaged
//! coefficients.

pub mod bma;
pub mod cli;
pub mod error;
pub mod linalg;
pub mod logistic;
pub mod model;
pub mod prior;
pub mod sim;
pub mod special;
pub mod stream;

pub use error::{BvsError, Result};
pub use logistic::{Batch, FitOptions, FitResult};
pub use model::ModelIndicator;
pub use prior::{NamedPrior, PriorSpec, PriorTable};
pub use sim::{MetricsRecord, ScenarioConfig};
pub use stream::{MethodKind, ModelFitState};
