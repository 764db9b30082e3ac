use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::{Objective, TrainConfig};
use super::model::Model;
use super::objective::{accuracy, value_and_gradient};
use super::optim::Optimizer;
use crate::entangle::output_terms;
use crate::error::{Error, Result};
use crate::measures::{EmpiricalJoint, LossSpec};
use crate::ot::OtMethod;

/// Attempts at drawing a batch pair that contains every class, for `cc_oracle`.
const MAX_RESAMPLES: usize = 100;

/// Diagnostics of one epoch.
///
/// Accuracies are measured on the full source and target sets. The risk,
/// transport and entanglement columns are averages over the epoch's training
/// batch pairs; the entanglement term is computed with the exact solver and the
/// Euclidean loss on outputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub src_acc: f64,
    pub tgt_acc: f64,
    pub risk_p: f64,
    pub risk_q: f64,
    pub w_marginal: f64,
    pub entangle_y: f64,
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Final model, or the last finite one when training diverged.
    pub model: Model,
    pub history: Vec<EpochRecord>,
    /// Epoch (1-based) in which a non-finite objective or parameter appeared.
    pub diverged: Option<usize>,
}

pub fn write_history_csv(history: &[EpochRecord], mut out: impl Write) -> Result<()> {
    writeln!(out, "epoch,src_acc,tgt_acc,risk_p,risk_q,w_marginal,entangle_y,objective")?;
    for r in history {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.epoch, r.src_acc, r.tgt_acc, r.risk_p, r.risk_q, r.w_marginal, r.entangle_y, r.objective
        )?;
    }
    Ok(())
}

/// Cycles through shuffled permutations of `0..n`.
struct Shuffler {
    order: Vec<usize>,
    pos: usize,
}

impl Shuffler {
    fn new(n: usize, rng: &mut impl Rng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        Self { order, pos: 0 }
    }

    fn take(&mut self, k: usize, rng: &mut impl Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Equal counts per class, drawn with replacement.
fn balanced_indices(by_class: &[Vec<usize>], batch_size: usize, rng: &mut impl Rng) -> Vec<usize> {
    let per_class = batch_size / by_class.len();
    let mut out = Vec::with_capacity(per_class * by_class.len());
    for members in by_class {
        for _ in 0..per_class {
            out.push(members[rng.random_range(0..members.len())]);
        }
    }
    out
}

fn has_every_class(joint: &EmpiricalJoint) -> bool {
    joint.class_masses().iter().all(|&m| m > 0.0)
}

struct Sampler {
    balanced: bool,
    batch_size: usize,
    p_shuffle: Shuffler,
    q_shuffle: Shuffler,
    p_classes: Vec<Vec<usize>>,
    q_classes: Vec<Vec<usize>>,
}

impl Sampler {
    fn new(source: &EmpiricalJoint, target: &EmpiricalJoint, cfg: &TrainConfig, rng: &mut impl Rng) -> Result<Self> {
        let m = source.num_classes();
        let p_classes: Vec<Vec<usize>> = (0..m).map(|y| source.class_indices(y)).collect();
        let q_classes: Vec<Vec<usize>> = (0..m).map(|y| target.class_indices(y)).collect();
        if cfg.class_balanced_sampling {
            for y in 0..m {
                if p_classes[y].is_empty() || q_classes[y].is_empty() {
                    return Err(Error::MissingClass(y));
                }
            }
        }
        Ok(Self {
            balanced: cfg.class_balanced_sampling,
            batch_size: cfg.batch_size,
            p_shuffle: Shuffler::new(source.len(), rng),
            q_shuffle: Shuffler::new(target.len(), rng),
            p_classes,
            q_classes,
        })
    }

    fn draw(&mut self, source: &EmpiricalJoint, target: &EmpiricalJoint, rng: &mut impl Rng) -> Result<(EmpiricalJoint, EmpiricalJoint)> {
        let (ip, iq) = if self.balanced {
            (
                balanced_indices(&self.p_classes, self.batch_size, rng),
                balanced_indices(&self.q_classes, self.batch_size, rng),
            )
        } else {
            (
                self.p_shuffle.take(self.batch_size.min(source.len()), rng),
                self.q_shuffle.take(self.batch_size.min(target.len()), rng),
            )
        };
        Ok((source.subset(&ip)?, target.subset(&iq)?))
    }
}

/// Trains a fresh model from `config.seed`.
pub fn fit(source: &EmpiricalJoint, target: &EmpiricalJoint, config: &TrainConfig) -> Result<FitResult> {
    let m = source.num_classes();
    if target.num_classes() != m {
        return Err(Error::DimensionMismatch("source and target class counts differ".into()));
    }
    if source.dim() != target.dim() {
        return Err(Error::DimensionMismatch("source and target input dimensions differ".into()));
    }
    config.validate(m)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let model = Model::init(config.model, source.dim(), m, &mut rng)?;
    fit_from(model, source, target, config, &mut rng)
}

/// Trains `model` in place of a fresh initialization.
pub fn fit_from(mut model: Model, source: &EmpiricalJoint, target: &EmpiricalJoint, config: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<FitResult> {
    config.validate(model.num_classes)?;
    let mut sampler = Sampler::new(source, target, config, rng)?;
    let mut optimizer = Optimizer::new(config.optimizer, config.lr, model.params.len());
    let steps = source.len().div_ceil(config.batch_size);
    let euclid = LossSpec::euclidean();
    let mut history = Vec::with_capacity(config.epochs);
    let mut last_good = model.clone();

    for epoch in 1..=config.epochs {
        let mut sums = [0.0; 5];
        for _ in 0..steps {
            let (mut bp, mut bq) = sampler.draw(source, target, rng)?;
            if config.objective == Objective::CcOracle {
                let mut tries = 0;
                while !(has_every_class(&bp) && has_every_class(&bq)) {
                    tries += 1;
                    if tries > MAX_RESAMPLES {
                        let missing = (0..model.num_classes)
                            .find(|&y| bp.class_masses()[y] <= 0.0 || bq.class_masses()[y] <= 0.0)
                            .unwrap_or(0);
                        return Err(Error::MissingClass(missing));
                    }
                    (bp, bq) = sampler.draw(source, target, rng)?;
                }
            }
            let (terms, grad) = match value_and_gradient(&model, &bp, &bq, config) {
                Ok(v) => v,
                Err(_) if model_is_degenerate(&model, &bp) || model_is_degenerate(&model, &bq) => return Ok(diverged(last_good, history, epoch)),
                Err(e) => return Err(e),
            };
            if !terms.value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Ok(diverged(last_good, history, epoch));
            }
            let p_out = bp.pushforward(&model);
            let q_out = bq.pushforward(&model);
            let (w, ent) = output_terms(&p_out, &q_out, &euclid, OtMethod::Exact)?;
            let rq = super::objective::empirical_risk(&model, &bq, config.loss);
            for (s, v) in sums.iter_mut().zip([terms.risk_p, rq, w, ent, terms.value]) {
                *s += v;
            }
            optimizer.step(&mut model.params, &grad);
            if model.params.iter().any(|p| !p.is_finite()) {
                return Ok(diverged(last_good, history, epoch));
            }
        }
        last_good = model.clone();
        let k = steps as f64;
        let record = EpochRecord {
            epoch,
            src_acc: accuracy(&model, source),
            tgt_acc: accuracy(&model, target),
            risk_p: sums[0] / k,
            risk_q: sums[1] / k,
            w_marginal: sums[2] / k,
            entangle_y: sums[3] / k,
            objective: sums[4] / k,
        };
        log::info!(
            "epoch {epoch}: src_acc {:.4} tgt_acc {:.4} objective {:.6}",
            record.src_acc,
            record.tgt_acc,
            record.objective
        );
        history.push(record);
    }
    Ok(FitResult {
        model,
        history,
        diverged: None,
    })
}

/// Non-finite outputs make the transport solvers reject their inputs.
fn model_is_degenerate(model: &Model, batch: &EmpiricalJoint) -> bool {
    batch.inputs().iter().any(|x| model.forward(x).probs.iter().any(|p| !p.is_finite()))
}

fn diverged(model: Model, history: Vec<EpochRecord>, epoch: usize) -> FitResult {
    log::warn!("training diverged in epoch {epoch}");
    FitResult {
        model,
        history,
        diverged: Some(epoch),
    }
}
