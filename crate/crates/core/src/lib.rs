//! Three-class ROC surfaces, true class fractions and the volume under the
//! surface for a continuous marker when the disease class is verified only
//! for a subset of subjects (missing at random given the marker and
//! covariates).
//!
//! Estimators: full data, full imputation, mean-score imputation, inverse
//! probability weighting and the doubly robust semiparametric estimator.

pub mod asymptotics;
pub mod data;
pub mod error;
pub mod glm;
pub mod model;
pub mod par;
pub mod resampling;
pub mod simlab;
pub mod special;
pub mod tcf;
pub mod vus;

pub use error::{Error, Result};
