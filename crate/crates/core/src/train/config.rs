use serde::{Deserialize, Serialize};

use super::model::ModelKind;
use crate::error::{Error, Result};
use crate::ot::OtMethod;

fn default_feature_weight() -> f64 {
    0.001
}

/// Training objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Objective {
    /// Source risk.
    #[default]
    Erm,
    /// Source risk plus the output-marginal transport term.
    Wrr,
    /// `wrr` plus a weighted transport term between hidden features.
    JdotLite {
        #[serde(default = "default_feature_weight")]
        feature_weight: f64,
    },
    /// Source plus target risk, using target labels.
    LjeOracle,
    /// Source risk plus the largest same-class output transport term, using target labels.
    CcOracle,
}

/// Per-sample loss between a softmax output and a label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TrainLoss {
    /// `|p - e_y|`, a metric on the simplex.
    #[default]
    Euclidean,
    /// `-ln p_y`; not a metric.
    CrossEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerKind {
    Sgd,
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_adam_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_adam_eps() -> f64 {
    1e-8
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_adam_eps(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub objective: Objective,
    pub loss: TrainLoss,
    pub model: ModelKind,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Solver for the transport terms of the objective.
    pub ot_method: OtMethod,
    /// Order of the transport terms: 1 or 2.
    pub wasserstein_order: u8,
    pub class_balanced_sampling: bool,
    /// Multiplier of the output-marginal transport term.
    pub wrr_weight: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            objective: Objective::Erm,
            loss: TrainLoss::Euclidean,
            model: ModelKind::default(),
            optimizer: OptimizerKind::default(),
            lr: 1e-3,
            batch_size: 64,
            epochs: 10,
            ot_method: OtMethod::Sinkhorn { epsilon: 0.05 },
            wasserstein_order: 2,
            class_balanced_sampling: false,
            wrr_weight: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        Ok(config)
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        let bad = |msg: &str| Err(Error::ConfigInvalid(msg.into()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.class_balanced_sampling && self.batch_size < num_classes {
            return bad("class-balanced batches need batch_size >= num_classes");
        }
        if !matches!(self.wasserstein_order, 1 | 2) {
            return bad("wasserstein_order must be 1 or 2");
        }
        if !(self.wrr_weight >= 0.0 && self.wrr_weight.is_finite()) {
            return bad("wrr_weight must be finite and nonnegative");
        }
        if let Objective::JdotLite { feature_weight } = self.objective {
            if !(feature_weight >= 0.0 && feature_weight.is_finite()) {
                return bad("feature_weight must be finite and nonnegative");
            }
        }
        if let OtMethod::Sinkhorn { epsilon } = self.ot_method {
            if !(epsilon > 0.0 && epsilon.is_finite()) {
                return bad("sinkhorn epsilon must be positive");
            }
        }
        if let OptimizerKind::Adam { beta1, beta2, eps } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
                return bad("adam needs beta1, beta2 in [0, 1) and eps > 0");
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_reference_protocol() {
        let c = TrainConfig::default();
        assert_eq!(c.batch_size, 64);
        assert_eq!(c.epochs, 10);
        assert_eq!(c.lr, 1e-3);
        assert_eq!(c.wasserstein_order, 2);
        assert_eq!(c.optimizer, OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 });
    }

    #[test]
    fn json_round_trip_and_unknown_keys() {
        let text = r#"{"objective":{"type":"jdot_lite"},"loss":"cross_entropy","lr":0.01}"#;
        let c = TrainConfig::from_json(text).unwrap();
        assert_eq!(c.objective, Objective::JdotLite { feature_weight: 0.001 });
        assert_eq!(c.loss, TrainLoss::CrossEntropy);
        let back = TrainConfig::from_json(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        assert!(TrainConfig::from_json(r#"{"learning_rate":0.1}"#).is_err());
    }

    #[test]
    fn validation() {
        let mut c = TrainConfig::default();
        assert!(c.validate(3).is_ok());
        c.class_balanced_sampling = true;
        c.batch_size = 2;
        assert!(c.validate(3).is_err());
        let c = TrainConfig {
            lr: 0.0,
            ..TrainConfig::default()
        };
        assert!(c.validate(2).is_err());
    }
}
