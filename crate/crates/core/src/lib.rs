//! Learning from perturbations.
//!
//! Train a classifier, perturb its training inputs toward induced target
//! classes (targeted PGD, Wachter-style counterfactuals, sparse plausible
//! counterfactuals), retrain a fresh classifier on the perturbed inputs with
//! the target labels, and evaluate it on clean inputs with the original
//! labels.

pub mod config;
pub mod container;
pub mod data;
pub mod density;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod perturb;
pub mod protocol;

pub use data::{Dataset, LabelSpace};
pub use density::DensityEstimator;
pub use error::{Error, Result};
pub use model::{Architecture, LossKind, Model};
pub use numerics::{Matrix, Norm, Rng};
pub use perturb::{BoxBounds, PerturbSpec};

/// Class label. Binary problems use `-1`/`+1`, multi-class `0..C`.
pub type Label = i32;
