//! Optimal transport tools for unsupervised domain adaptation: decomposable-cost
//! Wasserstein distances, entanglement estimators, bound certification,
//! synthetic shift scenarios and small differentiable classifiers.

pub mod error;
pub mod measures;
pub mod entangle;
pub mod ot;
pub mod scenarios;
pub mod bounds;
pub mod gaussian;
pub mod train;
pub mod cli;

pub use error::{Error, Result};
