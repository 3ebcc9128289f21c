//! Deep latent Gaussian models trained by stochastic backpropagation.
//!
//! A top-down generative network injects Gaussian noise at each stochastic
//! layer; a recognition network amortizes posterior inference with diagonal
//! or rank-one Gaussian posteriors. Both are trained jointly by minimizing
//! the free energy with reparameterized gradients and RMSprop.

// NaN-rejecting checks are written as negated comparisons on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod covariance;
pub mod error;
pub mod estimators;
pub mod eval;
pub mod generative;
pub mod io;
pub mod layer;
pub mod model;
pub mod numcore;
pub mod objective;
pub mod params;
pub mod recognition;
pub mod trainer;

pub use covariance::RankOneGaussian;
pub use error::{Error, ErrorClass, Result};
pub use generative::{GenerativeParams, LayerSpec, ObservationFamily};
pub use layer::Activation;
pub use model::{Architecture, Dlgm};
pub use numcore::{Matrix, RngStream};
pub use objective::{free_energy, grad_free_energy, EpsBundle, FreeEnergyTerms};
pub use params::{GradientSet, Parameterized};
pub use recognition::{CovarianceMode, RecognitionParams};
pub use trainer::{train, TrainConfig, TrainState, Trainer};
