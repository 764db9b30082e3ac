//! Training of small softmax classifiers under source-only and oracle objectives.

pub mod config;
pub mod fit;
pub mod model;
pub mod objective;
pub mod optim;

pub use config::{Objective, OptimizerKind, TrainConfig, TrainLoss};
pub use fit::{fit, fit_from, write_history_csv, EpochRecord, FitResult};
pub use model::{Activation, Model, ModelKind};
pub use objective::{
    accuracy, empirical_risk, freeze_plans, gradient, objective_value, surrogate_gradient, surrogate_objective, value_and_gradient,
    FrozenPlans, ObjectiveTerms,
};
pub use optim::Optimizer;
