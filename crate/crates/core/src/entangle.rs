//! Entanglement estimators, the oracle upper bound and the Wasserstein regularized risk.
//!
//! Label entanglement couples the output marginals optimally and averages the
//! label distance across the coupled pairs. Samples whose outputs coincide exactly
//! are merged into one support point carrying their mixed label distribution, and
//! the label distance between two such points is the label-space Wasserstein
//! distance. With distinct outputs this is the plain average of `l(y_i, y'_j)`.
//!
//! Prediction entanglement couples the label marginals optimally and averages the
//! output-space distance between the matched class conditionals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{EmpiricalJoint, InputAtom, LossSpec, Predictor};
use crate::ot::{transport, transport_exact, CostMatrix, Coupling, OtMethod};

const REPORT_TOLERANCE: f64 = 1e-7;

/// Estimated entanglement terms and the risks around them.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EntanglementReport {
    pub label_entanglement: f64,
    pub prediction_entanglement: f64,
    pub marginal_output_w1: f64,
    pub label_shift_w1: f64,
    pub source_risk: f64,
    pub target_risk: f64,
    pub oub: f64,
    pub wrr: f64,
    /// Set when an entropic solver produced the transport terms.
    #[serde(skip)]
    pub approximate: bool,
}

impl EntanglementReport {
    /// Field-wise mean, used to aggregate minibatch estimates.
    pub fn mean(reports: &[EntanglementReport]) -> EntanglementReport {
        let n = reports.len().max(1) as f64;
        let avg = |g: fn(&EntanglementReport) -> f64| reports.iter().map(g).sum::<f64>() / n;
        let mut out = EntanglementReport {
            label_entanglement: avg(|r| r.label_entanglement),
            prediction_entanglement: avg(|r| r.prediction_entanglement),
            marginal_output_w1: avg(|r| r.marginal_output_w1),
            label_shift_w1: avg(|r| r.label_shift_w1),
            source_risk: avg(|r| r.source_risk),
            target_risk: avg(|r| r.target_risk),
            oub: 0.0,
            wrr: 0.0,
            approximate: reports.iter().any(|r| r.approximate),
        };
        out.wrr = out.source_risk + out.marginal_output_w1;
        out.oub = out.wrr + out.label_entanglement;
        out
    }
}

/// `R(f) = E[l(f(x), y)]`.
pub fn risk<P: Predictor + ?Sized>(joint: &EmpiricalJoint, f: &P, loss: &LossSpec) -> f64 {
    output_risk(&joint.pushforward(f), loss)
}

/// Risk of a joint whose inputs are already predictions.
pub fn output_risk(joint_out: &EmpiricalJoint, loss: &LossSpec) -> f64 {
    joint_out
        .inputs()
        .iter()
        .zip(joint_out.labels())
        .zip(joint_out.weights())
        .map(|((o, &y), &w)| w * loss.to_label(o, y))
        .sum()
}

fn label_cost(loss: &LossSpec, m: usize) -> CostMatrix {
    CostMatrix::from_fn(m, m, |i, j| loss.label_loss(i, j, m)).expect("loss values are finite")
}

/// Label-space `W_1` between two label distributions.
fn label_distance(a: &[f64], b: &[f64], cost: &CostMatrix) -> Result<f64> {
    let single = |d: &[f64]| {
        let mut it = d.iter().enumerate().filter(|(_, &v)| v > 0.0);
        match (it.next(), it.next()) {
            (Some((k, _)), None) => Some(k),
            _ => None,
        }
    };
    if let (Some(i), Some(j)) = (single(a), single(b)) {
        return Ok(cost.get(i, j));
    }
    Ok(transport_exact(a, b, cost)?.objective.max(0.0))
}

/// Optimal plan between grouped output atoms.
fn output_plan(pa: &[InputAtom], qa: &[InputAtom], loss: &LossSpec, method: OtMethod) -> Result<Coupling> {
    let a: Vec<f64> = pa.iter().map(|x| x.mass).collect();
    let b: Vec<f64> = qa.iter().map(|x| x.mass).collect();
    let cost = CostMatrix::from_fn(pa.len(), qa.len(), |i, j| loss.eval(&pa[i].point, &qa[j].point))?;
    transport(&a, &b, &cost, method)
}

fn class_count(p: &EmpiricalJoint, q: &EmpiricalJoint) -> Result<usize> {
    if p.num_classes() != q.num_classes() {
        return Err(Error::DimensionMismatch("joints disagree on the class count".into()));
    }
    Ok(p.num_classes())
}

/// `W_1` between output marginals and label entanglement, sharing one plan.
pub fn output_terms(p_out: &EmpiricalJoint, q_out: &EmpiricalJoint, loss: &LossSpec, method: OtMethod) -> Result<(f64, f64)> {
    let m = class_count(p_out, q_out)?;
    let pa = p_out.group_by_input();
    let qa = q_out.group_by_input();
    let plan = output_plan(&pa, &qa, loss, method)?;
    let lc = label_cost(loss, m);
    let mut ent = 0.0;
    for (i, j, mass) in plan.support() {
        ent += mass * label_distance(&pa[i].label_dist, &qa[j].label_dist, &lc)?;
    }
    Ok((plan.objective.max(0.0), ent))
}

/// Label entanglement for joints already pushed to the output space.
pub fn label_entanglement_out(p_out: &EmpiricalJoint, q_out: &EmpiricalJoint, loss: &LossSpec, method: OtMethod) -> Result<f64> {
    Ok(output_terms(p_out, q_out, loss, method)?.1)
}

/// Label entanglement `E_y(f)`.
pub fn label_entanglement<P: Predictor + ?Sized>(p: &EmpiricalJoint, q: &EmpiricalJoint, f: &P, loss: &LossSpec) -> Result<f64> {
    label_entanglement_out(&p.pushforward(f), &q.pushforward(f), loss, OtMethod::Exact)
}

/// `W_1` between the one-hot label marginals and its optimal plan.
pub fn label_shift_plan(p: &EmpiricalJoint, q: &EmpiricalJoint, loss: &LossSpec) -> Result<Coupling> {
    let m = class_count(p, q)?;
    transport_exact(&p.class_masses(), &q.class_masses(), &label_cost(loss, m))
}

/// `W_1(p_y, q_y)` under the loss on one-hot labels.
pub fn label_shift_w1(p: &EmpiricalJoint, q: &EmpiricalJoint, loss: &LossSpec) -> Result<f64> {
    Ok(label_shift_plan(p, q, loss)?.objective.max(0.0))
}

/// Output-space `W_1` between the class-`y` conditional of `p_out` and class-`y2` conditional of `q_out`.
pub fn conditional_w1(p_out: &EmpiricalJoint, y: usize, q_out: &EmpiricalJoint, y2: usize, loss: &LossSpec, method: OtMethod) -> Result<f64> {
    let pc = p_out.conditional(y)?;
    let qc = q_out.conditional(y2)?;
    let cost = CostMatrix::pairwise(pc.points(), qc.points(), |a, b| loss.eval(a, b))?;
    Ok(transport(pc.weights(), qc.weights(), &cost, method)?.objective.max(0.0))
}

/// Prediction entanglement for joints already pushed to the output space.
pub fn prediction_entanglement_out(p_out: &EmpiricalJoint, q_out: &EmpiricalJoint, loss: &LossSpec, method: OtMethod) -> Result<f64> {
    let plan = label_shift_plan(p_out, q_out, loss)?;
    let mut total = 0.0;
    for (y, y2, mass) in plan.support() {
        total += mass * conditional_w1(p_out, y, q_out, y2, loss, method)?;
    }
    Ok(total)
}

/// Prediction entanglement `E_y_hat(f)`.
pub fn prediction_entanglement<P: Predictor + ?Sized>(p: &EmpiricalJoint, q: &EmpiricalJoint, f: &P, loss: &LossSpec) -> Result<f64> {
    prediction_entanglement_out(&p.pushforward(f), &q.pushforward(f), loss, OtMethod::Exact)
}

/// Full report for joints already pushed to the output space; no bound is asserted.
pub fn entanglement_report_out(p_out: &EmpiricalJoint, q_out: &EmpiricalJoint, loss: &LossSpec, method: OtMethod) -> Result<EntanglementReport> {
    let (w, ent_y) = output_terms(p_out, q_out, loss, method)?;
    let ent_yhat = prediction_entanglement_out(p_out, q_out, loss, method)?;
    let source_risk = output_risk(p_out, loss);
    let target_risk = output_risk(q_out, loss);
    let wrr = source_risk + w;
    Ok(EntanglementReport {
        label_entanglement: ent_y,
        prediction_entanglement: ent_yhat,
        marginal_output_w1: w,
        label_shift_w1: label_shift_w1(p_out, q_out, loss)?,
        source_risk,
        target_risk,
        oub: wrr + ent_y,
        wrr,
        approximate: !method.is_exact(),
    })
}

/// Report with every term, asserting `R_q <= U(f)` for metric losses and the exact solver.
pub fn oracle_upper_bound_with<P: Predictor + ?Sized>(
    p: &EmpiricalJoint,
    q: &EmpiricalJoint,
    f: &P,
    loss: &LossSpec,
    method: OtMethod,
) -> Result<EntanglementReport> {
    let report = entanglement_report_out(&p.pushforward(f), &q.pushforward(f), loss, method)?;
    if loss.is_metric() && method.is_exact() {
        let slack = report.oub - report.target_risk;
        if slack < -REPORT_TOLERANCE {
            return Err(Error::BoundViolated(slack));
        }
    }
    Ok(report)
}

/// [`oracle_upper_bound_with`] using the exact solver.
pub fn oracle_upper_bound<P: Predictor + ?Sized>(p: &EmpiricalJoint, q: &EmpiricalJoint, f: &P, loss: &LossSpec) -> Result<EntanglementReport> {
    oracle_upper_bound_with(p, q, f, loss, OtMethod::Exact)
}

/// Measured close-conditionals level of a hypothesis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CcLevel {
    /// `R_p + max_y W_1(f#p_{x|y}, f#q_{x|y})` over classes present in both domains.
    pub kappa_hat: f64,
    pub source_risk: f64,
    /// Per-class conditional distance; `None` when a domain lacks the class.
    pub per_class: Vec<Option<f64>>,
}

/// Close-conditionals level for joints already pushed to the output space.
pub fn cc_level_out(p_out: &EmpiricalJoint, q_out: &EmpiricalJoint, loss: &LossSpec) -> Result<CcLevel> {
    let m = class_count(p_out, q_out)?;
    let pm = p_out.class_masses();
    let qm = q_out.class_masses();
    let mut per_class = Vec::with_capacity(m);
    for y in 0..m {
        per_class.push(if pm[y] > 0.0 && qm[y] > 0.0 {
            Some(conditional_w1(p_out, y, q_out, y, loss, OtMethod::Exact)?)
        } else {
            None
        });
    }
    let source_risk = output_risk(p_out, loss);
    let worst = per_class.iter().flatten().cloned().fold(0.0, f64::max);
    Ok(CcLevel {
        kappa_hat: source_risk + worst,
        source_risk,
        per_class,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{FnPredictor, Identity};

    fn joint(points: Vec<Vec<f64>>, labels: Vec<usize>, m: usize) -> EmpiricalJoint {
        EmpiricalJoint::uniform(points, labels, m).unwrap()
    }

    #[test]
    fn constant_model_risk_by_hand() {
        let p = joint(vec![vec![0.0], vec![1.0]], vec![0, 1], 2);
        let f = FnPredictor(|_: &[f64]| vec![0.5, 0.5]);
        let r = risk(&p, &f, &LossSpec::euclidean());
        assert!((r - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn perfect_model_has_zero_risk() {
        let p = joint(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0, 1], 2);
        assert_eq!(risk(&p, &Identity, &LossSpec::euclidean()), 0.0);
    }

    #[test]
    fn forced_pair_with_different_labels() {
        let p = joint(vec![vec![0.3, 0.7]], vec![0], 2);
        let q = joint(vec![vec![0.3, 0.7]], vec![1], 2);
        let e = label_entanglement(&p, &q, &Identity, &LossSpec::euclidean()).unwrap();
        assert!((e - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn matching_copy_has_no_entanglement() {
        let pts = vec![vec![0.9, 0.1], vec![0.2, 0.8], vec![0.6, 0.4]];
        let p = joint(pts.clone(), vec![0, 1, 0], 2);
        let loss = LossSpec::euclidean();
        assert_eq!(label_entanglement(&p, &p, &Identity, &loss).unwrap(), 0.0);
        assert_eq!(prediction_entanglement(&p, &p, &Identity, &loss).unwrap(), 0.0);
    }

    #[test]
    fn ties_are_merged_before_transport() {
        // Both domains put all mass on the same output with mixed labels.
        let p = joint(vec![vec![0.5, 0.5], vec![0.5, 0.5]], vec![0, 1], 2);
        let q = joint(vec![vec![0.5, 0.5], vec![0.5, 0.5]], vec![1, 0], 2);
        let e = label_entanglement(&p, &q, &Identity, &LossSpec::euclidean()).unwrap();
        assert_eq!(e, 0.0);
    }

    #[test]
    fn per_class_shift_gives_weighted_distance() {
        let loss = LossSpec::euclidean();
        let p = EmpiricalJoint::new(
            vec![vec![0.9, 0.1], vec![0.8, 0.2], vec![0.3, 0.7]],
            vec![0, 0, 1],
            vec![0.3, 0.3, 0.4],
            2,
        )
        .unwrap();
        let d = [0.05, -0.05];
        let q = p.map_inputs(|o| vec![o[0] + d[0], o[1] + d[1]]).unwrap();
        let e = prediction_entanglement(&p, &q, &Identity, &loss).unwrap();
        let dist = (2.0f64 * 0.05 * 0.05).sqrt();
        assert!((e - dist).abs() < 1e-12);
    }

    #[test]
    fn pure_label_shift_two_by_two() {
        let loss = LossSpec::euclidean();
        let pts = vec![vec![0.9, 0.1], vec![0.1, 0.9]];
        let p = EmpiricalJoint::new(pts.clone(), vec![0, 1], vec![0.5, 0.5], 2).unwrap();
        let q = EmpiricalJoint::new(pts, vec![0, 1], vec![0.25, 0.75], 2).unwrap();
        // Only the plan moving 0.25 from class 0 to class 1 is optimal.
        let cross = (2.0f64 * 0.8 * 0.8).sqrt();
        let e = prediction_entanglement(&p, &q, &Identity, &loss).unwrap();
        assert!((e - 0.25 * cross).abs() < 1e-12);
        let w = label_shift_w1(&p, &q, &loss).unwrap();
        assert!((w - 0.25 * 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn report_identities() {
        let loss = LossSpec::euclidean();
        let p = joint(vec![vec![0.9, 0.1], vec![0.4, 0.6]], vec![0, 1], 2);
        let q = joint(vec![vec![0.7, 0.3], vec![0.2, 0.8], vec![0.5, 0.5]], vec![1, 1, 0], 2);
        let r = oracle_upper_bound(&p, &q, &Identity, &loss).unwrap();
        assert_eq!(r.oub, r.source_risk + r.marginal_output_w1 + r.label_entanglement);
        assert_eq!(r.wrr, r.source_risk + r.marginal_output_w1);
        assert!(r.target_risk <= r.oub + 1e-12);
    }
}
