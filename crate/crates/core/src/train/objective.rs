//! Objective values and analytic gradients.
//!
//! Transport terms are differentiated with their plan held fixed. The functions
//! taking a [`FrozenPlans`] evaluate that plan-fixed surrogate, which coincides
//! with the objective at the parameters where the plans were computed.

use serde::Serialize;

use super::config::{Objective, TrainConfig, TrainLoss};
use super::model::{softmax_backward, Forward, Model};
use crate::error::{Error, Result};
use crate::measures::EmpiricalJoint;
use crate::ot::{transport, CostMatrix, Coupling};

/// Objective value with its parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Default)]
pub struct ObjectiveTerms {
    pub value: f64,
    pub risk_p: f64,
    pub risk_q: Option<f64>,
    /// Output-marginal transport term before `wrr_weight`.
    pub w_marginal: Option<f64>,
    /// Hidden-feature transport term before `feature_weight`.
    pub w_features: Option<f64>,
    /// Class attaining the largest same-class term, and that term.
    pub cc_max: Option<(usize, f64)>,
}

/// Plans of the transport terms at one parameter point.
#[derive(Debug, Clone)]
pub struct FrozenPlans {
    marginal: Option<Coupling>,
    features: Option<Coupling>,
    /// Arg-max class, its source and target batch indices, and its plan.
    cc: Option<(usize, Vec<usize>, Vec<usize>, Coupling)>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Cost raised to the transport order: Euclidean for 1, squared Euclidean for 2.
fn order_cost(a: &[Vec<f64>], b: &[Vec<f64>], order: u8) -> Result<CostMatrix> {
    CostMatrix::from_fn(a.len(), b.len(), |i, j| {
        let d2 = sq_dist(&a[i], &b[j]);
        if order == 1 {
            d2.sqrt()
        } else {
            d2
        }
    })
}

fn solve_plan(a: &[Vec<f64>], wa: &[f64], b: &[Vec<f64>], wb: &[f64], cfg: &TrainConfig) -> Result<Coupling> {
    let cost = order_cost(a, b, cfg.wasserstein_order)?;
    transport(wa, wb, &cost, cfg.ot_method)
}

/// Transport term under a fixed plan, with gradients w.r.t. both point sets.
fn frozen_ot(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    plan: &Coupling,
    order: u8,
    grad: Option<(&mut [Vec<f64>], &mut [Vec<f64>], f64)>,
) -> f64 {
    let mut total = 0.0;
    for (i, j, g) in plan.support() {
        let d2 = sq_dist(&a[i], &b[j]);
        total += g * if order == 1 { d2.sqrt() } else { d2 };
    }
    let value = if order == 1 { total } else { total.max(0.0).sqrt() };
    if let Some((ga, gb, scale)) = grad {
        for (i, j, g) in plan.support() {
            let d2 = sq_dist(&a[i], &b[j]);
            let coef = if order == 1 {
                if d2 > 0.0 {
                    g / d2.sqrt()
                } else {
                    0.0
                }
            } else if value > 0.0 {
                g / value
            } else {
                0.0
            };
            for k in 0..a[i].len() {
                let diff = coef * scale * (a[i][k] - b[j][k]);
                ga[i][k] += diff;
                gb[j][k] -= diff;
            }
        }
    }
    value
}

/// Risk of one output and its gradient w.r.t. the logits.
fn sample_risk(fwd: &Forward, label: usize, loss: TrainLoss) -> (f64, Vec<f64>) {
    match loss {
        TrainLoss::Euclidean => {
            let diff: Vec<f64> = fwd
                .probs
                .iter()
                .enumerate()
                .map(|(k, p)| p - if k == label { 1.0 } else { 0.0 })
                .collect();
            let norm = diff.iter().map(|d| d * d).sum::<f64>().sqrt();
            let d_probs: Vec<f64> = if norm > 0.0 {
                diff.iter().map(|d| d / norm).collect()
            } else {
                vec![0.0; diff.len()]
            };
            (norm, softmax_backward(&fwd.probs, &d_probs))
        }
        TrainLoss::CrossEntropy => {
            let max = fwd.logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + fwd.logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
            let grad = fwd
                .probs
                .iter()
                .enumerate()
                .map(|(k, p)| p - if k == label { 1.0 } else { 0.0 })
                .collect();
            (lse - fwd.logits[label], grad)
        }
    }
}

/// Empirical loss of a model on a joint.
pub fn empirical_risk(model: &Model, joint: &EmpiricalJoint, loss: TrainLoss) -> f64 {
    joint
        .inputs()
        .iter()
        .zip(joint.labels())
        .zip(joint.weights())
        .map(|((x, &y), w)| w * sample_risk(&model.forward(x), y, loss).0)
        .sum()
}

/// Weighted fraction of samples whose arg-max output equals the label.
pub fn accuracy(model: &Model, joint: &EmpiricalJoint) -> f64 {
    joint
        .inputs()
        .iter()
        .zip(joint.labels())
        .zip(joint.weights())
        .filter(|((x, &y), _)| model.predict_class(x) == y)
        .fold(0.0, |acc, (_, w)| acc + w)
        .min(1.0)
}

fn class_slice(batch: &EmpiricalJoint, y: usize) -> (Vec<usize>, Vec<f64>) {
    let idx = batch.class_indices(y);
    let total: f64 = idx.iter().map(|&i| batch.weights()[i]).sum();
    let w = idx.iter().map(|&i| batch.weights()[i] / total).collect();
    (idx, w)
}

fn check_batches(model: &Model, bp: &EmpiricalJoint, bq: &EmpiricalJoint, cfg: &TrainConfig) -> Result<()> {
    if bp.is_empty() || bq.is_empty() {
        return Err(Error::InvalidMeasure("empty batch".into()));
    }
    if bp.dim() != model.input_dim || bq.dim() != model.input_dim {
        return Err(Error::DimensionMismatch("batch inputs do not match the model".into()));
    }
    if matches!(cfg.objective, Objective::JdotLite { .. }) && !model.has_hidden_layer() {
        return Err(Error::FeatureTermUnavailable);
    }
    if cfg.objective == Objective::CcOracle {
        let (pm, qm) = (bp.class_masses(), bq.class_masses());
        if let Some(y) = (0..model.num_classes).find(|&y| pm[y] <= 0.0 || qm[y] <= 0.0) {
            return Err(Error::MissingClass(y));
        }
    }
    Ok(())
}

/// Optimal plans of every transport term at the current parameters.
///
/// For `cc_oracle` the largest same-class term picks the class; ties go to the
/// lowest index.
pub fn freeze_plans(model: &Model, bp: &EmpiricalJoint, bq: &EmpiricalJoint, cfg: &TrainConfig) -> Result<FrozenPlans> {
    check_batches(model, bp, bq, cfg)?;
    let mut plans = FrozenPlans {
        marginal: None,
        features: None,
        cc: None,
    };
    let needs_marginal = matches!(cfg.objective, Objective::Wrr | Objective::JdotLite { .. });
    let fp: Vec<Forward> = bp.inputs().iter().map(|x| model.forward(x)).collect();
    let fq: Vec<Forward> = bq.inputs().iter().map(|x| model.forward(x)).collect();
    if needs_marginal {
        let a: Vec<Vec<f64>> = fp.iter().map(|f| f.probs.clone()).collect();
        let b: Vec<Vec<f64>> = fq.iter().map(|f| f.probs.clone()).collect();
        plans.marginal = Some(solve_plan(&a, bp.weights(), &b, bq.weights(), cfg)?);
    }
    if let Objective::JdotLite { .. } = cfg.objective {
        let a: Vec<Vec<f64>> = fp.iter().map(|f| f.hidden.clone()).collect();
        let b: Vec<Vec<f64>> = fq.iter().map(|f| f.hidden.clone()).collect();
        plans.features = Some(solve_plan(&a, bp.weights(), &b, bq.weights(), cfg)?);
    }
    if cfg.objective == Objective::CcOracle {
        let mut best: Option<(usize, Vec<usize>, Vec<usize>, Coupling, f64)> = None;
        for y in 0..model.num_classes {
            let (ip, wp) = class_slice(bp, y);
            let (iq, wq) = class_slice(bq, y);
            let a: Vec<Vec<f64>> = ip.iter().map(|&i| fp[i].probs.clone()).collect();
            let b: Vec<Vec<f64>> = iq.iter().map(|&j| fq[j].probs.clone()).collect();
            let plan = solve_plan(&a, &wp, &b, &wq, cfg)?;
            let value = frozen_ot(&a, &b, &plan, cfg.wasserstein_order, None);
            if best.as_ref().is_none_or(|b| value > b.4) {
                best = Some((y, ip, iq, plan, value));
            }
        }
        let (y, ip, iq, plan, _) = best.expect("at least two classes");
        plans.cc = Some((y, ip, iq, plan));
    }
    Ok(plans)
}

fn evaluate(
    model: &Model,
    bp: &EmpiricalJoint,
    bq: &EmpiricalJoint,
    cfg: &TrainConfig,
    plans: &FrozenPlans,
    want_grad: bool,
) -> Result<(ObjectiveTerms, Option<Vec<f64>>)> {
    check_batches(model, bp, bq, cfg)?;
    let fp: Vec<Forward> = bp.inputs().iter().map(|x| model.forward(x)).collect();
    let fq: Vec<Forward> = bq.inputs().iter().map(|x| model.forward(x)).collect();
    let m = model.num_classes;
    let h = model.hidden_dim();
    // Gradients w.r.t. logits (risk terms), probabilities (transport on outputs)
    // and hidden features (transport on features), per sample.
    let mut dl_p = vec![vec![0.0; m]; bp.len()];
    let mut dl_q = vec![vec![0.0; m]; bq.len()];
    let mut dp_p = vec![vec![0.0; m]; bp.len()];
    let mut dp_q = vec![vec![0.0; m]; bq.len()];
    let mut dh_p = vec![vec![0.0; h]; bp.len()];
    let mut dh_q = vec![vec![0.0; h]; bq.len()];
    let mut terms = ObjectiveTerms::default();

    for (i, f) in fp.iter().enumerate() {
        let (r, g) = sample_risk(f, bp.labels()[i], cfg.loss);
        let w = bp.weights()[i];
        terms.risk_p += w * r;
        for k in 0..m {
            dl_p[i][k] += w * g[k];
        }
    }
    terms.value = terms.risk_p;

    if cfg.objective == Objective::LjeOracle {
        let mut rq = 0.0;
        for (j, f) in fq.iter().enumerate() {
            let (r, g) = sample_risk(f, bq.labels()[j], cfg.loss);
            let w = bq.weights()[j];
            rq += w * r;
            for k in 0..m {
                dl_q[j][k] += w * g[k];
            }
        }
        terms.risk_q = Some(rq);
        terms.value += rq;
    }

    let probs = |fs: &[Forward]| -> Vec<Vec<f64>> { fs.iter().map(|f| f.probs.clone()).collect() };
    if let Some(plan) = &plans.marginal {
        let (a, b) = (probs(&fp), probs(&fq));
        let grad = want_grad.then_some((&mut dp_p[..], &mut dp_q[..], cfg.wrr_weight));
        let w = frozen_ot(&a, &b, plan, cfg.wasserstein_order, grad);
        terms.w_marginal = Some(w);
        terms.value += cfg.wrr_weight * w;
    }
    if let (Some(plan), Objective::JdotLite { feature_weight }) = (&plans.features, cfg.objective) {
        let a: Vec<Vec<f64>> = fp.iter().map(|f| f.hidden.clone()).collect();
        let b: Vec<Vec<f64>> = fq.iter().map(|f| f.hidden.clone()).collect();
        let grad = want_grad.then_some((&mut dh_p[..], &mut dh_q[..], feature_weight));
        let w = frozen_ot(&a, &b, plan, cfg.wasserstein_order, grad);
        terms.w_features = Some(w);
        terms.value += feature_weight * w;
    }
    if let Some((y, ip, iq, plan)) = &plans.cc {
        let a: Vec<Vec<f64>> = ip.iter().map(|&i| fp[i].probs.clone()).collect();
        let b: Vec<Vec<f64>> = iq.iter().map(|&j| fq[j].probs.clone()).collect();
        let mut ga = vec![vec![0.0; m]; a.len()];
        let mut gb = vec![vec![0.0; m]; b.len()];
        let grad = want_grad.then_some((&mut ga[..], &mut gb[..], 1.0));
        let w = frozen_ot(&a, &b, plan, cfg.wasserstein_order, grad);
        for (r, &i) in ip.iter().enumerate() {
            for k in 0..m {
                dp_p[i][k] += ga[r][k];
            }
        }
        for (r, &j) in iq.iter().enumerate() {
            for k in 0..m {
                dp_q[j][k] += gb[r][k];
            }
        }
        terms.cc_max = Some((*y, w));
        terms.value += w;
    }

    if !want_grad {
        return Ok((terms, None));
    }
    let mut grad = vec![0.0; model.params.len()];
    let mut push = |x: &[f64], f: &Forward, dl: &[f64], dp: &[f64], dh: &[f64]| {
        let mut d_logits = softmax_backward(&f.probs, dp);
        for (a, b) in d_logits.iter_mut().zip(dl) {
            *a += b;
        }
        let extra = (h > 0).then_some(dh);
        model.backward(x, f, &d_logits, extra, &mut grad);
    };
    for (i, f) in fp.iter().enumerate() {
        push(&bp.inputs()[i], f, &dl_p[i], &dp_p[i], &dh_p[i]);
    }
    for (j, f) in fq.iter().enumerate() {
        push(&bq.inputs()[j], f, &dl_q[j], &dp_q[j], &dh_q[j]);
    }
    Ok((terms, Some(grad)))
}

/// Objective with every transport plan held at `plans`.
pub fn surrogate_objective(model: &Model, bp: &EmpiricalJoint, bq: &EmpiricalJoint, cfg: &TrainConfig, plans: &FrozenPlans) -> Result<ObjectiveTerms> {
    Ok(evaluate(model, bp, bq, cfg, plans, false)?.0)
}

/// Gradient of [`surrogate_objective`].
pub fn surrogate_gradient(model: &Model, bp: &EmpiricalJoint, bq: &EmpiricalJoint, cfg: &TrainConfig, plans: &FrozenPlans) -> Result<Vec<f64>> {
    Ok(evaluate(model, bp, bq, cfg, plans, true)?.1.expect("gradient requested"))
}

pub fn objective_value(model: &Model, bp: &EmpiricalJoint, bq: &EmpiricalJoint, cfg: &TrainConfig) -> Result<ObjectiveTerms> {
    let plans = freeze_plans(model, bp, bq, cfg)?;
    surrogate_objective(model, bp, bq, cfg, &plans)
}

/// Plan-frozen gradient at the current parameters.
pub fn gradient(model: &Model, bp: &EmpiricalJoint, bq: &EmpiricalJoint, cfg: &TrainConfig) -> Result<Vec<f64>> {
    value_and_gradient(model, bp, bq, cfg).map(|(_, g)| g)
}

pub fn value_and_gradient(model: &Model, bp: &EmpiricalJoint, bq: &EmpiricalJoint, cfg: &TrainConfig) -> Result<(ObjectiveTerms, Vec<f64>)> {
    let plans = freeze_plans(model, bp, bq, cfg)?;
    let (terms, grad) = evaluate(model, bp, bq, cfg, &plans, true)?;
    Ok((terms, grad.expect("gradient requested")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ot::OtMethod;
    use crate::train::model::{Activation, ModelKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_batch(rng: &mut impl Rng, n: usize, d: usize, m: usize) -> EmpiricalJoint {
        let inputs = (0..n).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let labels = (0..n).map(|i| i % m).collect();
        EmpiricalJoint::uniform(inputs, labels, m).unwrap()
    }

    fn exact(objective: Objective) -> TrainConfig {
        TrainConfig {
            objective,
            ot_method: OtMethod::Exact,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn erm_on_perfect_fit_is_zero_with_zero_gradient() {
        // Saturated logits put the outputs on the label vertices.
        let model = Model {
            kind: ModelKind::LinearSoftmax,
            input_dim: 1,
            num_classes: 2,
            params: vec![-800.0, 800.0, 0.0, 0.0],
        };
        let b = EmpiricalJoint::uniform(vec![vec![1.0], vec![-1.0]], vec![1, 0], 2).unwrap();
        let cfg = exact(Objective::Erm);
        let (t, g) = value_and_gradient(&model, &b, &b, &cfg).unwrap();
        assert_eq!(t.value, 0.0);
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn wrr_on_identical_batches_is_source_risk() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = Model::init(ModelKind::LinearSoftmax, 2, 3, &mut rng).unwrap();
        let b = random_batch(&mut rng, 9, 2, 3);
        let t = objective_value(&model, &b, &b, &exact(Objective::Wrr)).unwrap();
        assert!(t.w_marginal.unwrap().abs() < 1e-12);
        assert!((t.value - t.risk_p).abs() < 1e-12);
    }

    #[test]
    fn lje_is_sum_of_two_risks() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = Model::init(ModelKind::LinearSoftmax, 2, 2, &mut rng).unwrap();
        let bp = random_batch(&mut rng, 7, 2, 2);
        let bq = random_batch(&mut rng, 5, 2, 2);
        let t = objective_value(&model, &bp, &bq, &exact(Objective::LjeOracle)).unwrap();
        let erm = exact(Objective::Erm);
        let rp = objective_value(&model, &bp, &bp, &erm).unwrap().value;
        let rq = objective_value(&model, &bq, &bq, &erm).unwrap().value;
        assert!((t.value - rp - rq).abs() < 1e-12);
    }

    #[test]
    fn jdot_needs_hidden_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = Model::init(ModelKind::LinearSoftmax, 2, 2, &mut rng).unwrap();
        let b = random_batch(&mut rng, 4, 2, 2);
        let cfg = exact(Objective::JdotLite { feature_weight: 0.001 });
        assert!(matches!(objective_value(&model, &b, &b, &cfg), Err(Error::FeatureTermUnavailable)));
    }

    #[test]
    fn cc_oracle_requires_every_class() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = Model::init(ModelKind::LinearSoftmax, 2, 3, &mut rng).unwrap();
        let bp = random_batch(&mut rng, 6, 2, 3);
        let bq = EmpiricalJoint::uniform(vec![vec![0.0, 0.0], vec![1.0, 1.0]], vec![0, 1], 3).unwrap();
        assert!(matches!(
            objective_value(&model, &bp, &bq, &exact(Objective::CcOracle)),
            Err(Error::MissingClass(2))
        ));
    }

    fn finite_difference_check(model: &Model, bp: &EmpiricalJoint, bq: &EmpiricalJoint, cfg: &TrainConfig) -> f64 {
        let plans = freeze_plans(model, bp, bq, cfg).unwrap();
        let g = surrogate_gradient(model, bp, bq, cfg, &plans).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        let scale = g.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-8);
        for k in 0..g.len() {
            let mut up = model.clone();
            let mut dn = model.clone();
            up.params[k] += h;
            dn.params[k] -= h;
            let fu = surrogate_objective(&up, bp, bq, cfg, &plans).unwrap().value;
            let fd = surrogate_objective(&dn, bp, bq, cfg, &plans).unwrap().value;
            worst = worst.max(((fu - fd) / (2.0 * h) - g[k]).abs() / scale);
        }
        worst
    }

    #[test]
    fn linear_erm_gradient_on_twenty_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        // 4 classes x (4 inputs + 1 bias) = 20 parameters.
        let model = Model::init(ModelKind::LinearSoftmax, 4, 4, &mut rng).unwrap();
        assert_eq!(model.params.len(), 20);
        let b = random_batch(&mut rng, 12, 4, 4);
        assert!(finite_difference_check(&model, &b, &b, &exact(Objective::Erm)) < 1e-5);
    }

    #[test]
    fn frozen_plan_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let kind = ModelKind::Mlp {
            hidden: 4,
            activation: Activation::Tanh,
        };
        let objectives = [
            Objective::Wrr,
            Objective::JdotLite { feature_weight: 0.5 },
            Objective::LjeOracle,
            Objective::CcOracle,
        ];
        for objective in objectives {
            for order in [1, 2] {
                for loss in [TrainLoss::Euclidean, TrainLoss::CrossEntropy] {
                    let model = Model::init(kind, 3, 3, &mut rng).unwrap();
                    let bp = random_batch(&mut rng, 9, 3, 3);
                    let bq = random_batch(&mut rng, 6, 3, 3);
                    let cfg = TrainConfig {
                        wasserstein_order: order,
                        loss,
                        ..exact(objective)
                    };
                    let err = finite_difference_check(&model, &bp, &bq, &cfg);
                    assert!(err < 1e-4, "{objective:?} order {order} {loss:?}: {err}");
                }
            }
        }
    }

    #[test]
    fn accuracy_counts_argmax_matches() {
        let model = Model {
            kind: ModelKind::LinearSoftmax,
            input_dim: 1,
            num_classes: 2,
            params: vec![-1.0, 1.0, 0.0, 0.0],
        };
        let b = EmpiricalJoint::uniform(vec![vec![1.0], vec![-1.0], vec![2.0], vec![0.5]], vec![1, 0, 0, 1], 2).unwrap();
        assert!((accuracy(&model, &b) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn perfect_accuracy_is_exactly_one() {
        let model = Model {
            kind: ModelKind::LinearSoftmax,
            input_dim: 1,
            num_classes: 2,
            params: vec![-1.0, 1.0, 0.0, 0.0],
        };
        let inputs: Vec<Vec<f64>> = (1..=500).map(|i| vec![i as f64]).collect();
        let b = EmpiricalJoint::uniform(inputs, vec![1; 500], 2).unwrap();
        assert_eq!(accuracy(&model, &b), 1.0);
    }
}
