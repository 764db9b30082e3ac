use serde::Serialize;

use super::{transport_exact, CostMatrix};
use crate::error::{Error, Result};
use crate::measures::EmpiricalJoint;

const SANDWICH_TOLERANCE: f64 = 1e-7;

/// The five terms bracketing a decomposable-cost Wasserstein distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SandwichTerms {
    /// `W_{alpha,c1}` between input marginals.
    pub lower_x: f64,
    /// `W_{alpha,c2}` between label marginals.
    pub lower_y: f64,
    /// `W_{alpha,c1+c2}` between the joints.
    pub joint: f64,
    /// `lower_x` plus the label-conditional term under the optimal input plan.
    pub upper_x: f64,
    /// `lower_y` plus the input-conditional term under the optimal label plan.
    pub upper_y: f64,
}

fn weighted_alpha_cost(a: &[f64], b: &[f64], cost: impl Fn(usize, usize) -> f64, alpha: f64) -> Result<(f64, super::Coupling)> {
    let c = CostMatrix::from_fn(a.len(), b.len(), |i, j| cost(i, j).powf(alpha))?;
    let plan = transport_exact(a, b, &c)?;
    Ok((plan.objective.max(0.0), plan))
}

/// Evaluates both sides of the decomposition for the cost `c1(x,x') + c2(y,y')`.
///
/// Conditionals are taken at distinct support points. The function fails with
/// [`Error::SandwichViolated`] if any bracket breaks by more than `1e-7`.
pub fn sandwich_terms(
    p: &EmpiricalJoint,
    q: &EmpiricalJoint,
    c1: &dyn Fn(&[f64], &[f64]) -> f64,
    c2: &dyn Fn(usize, usize) -> f64,
    alpha: f64,
) -> Result<SandwichTerms> {
    if !(alpha >= 1.0) {
        return Err(Error::InvalidMeasure(format!("alpha must be >= 1, got {alpha}")));
    }
    if p.num_classes() != q.num_classes() {
        return Err(Error::DimensionMismatch("joints disagree on the class count".into()));
    }
    let inv = 1.0 / alpha;

    let (joint_cost, _) = weighted_alpha_cost(
        p.weights(),
        q.weights(),
        |i, j| c1(&p.inputs()[i], &q.inputs()[j]) + c2(p.labels()[i], q.labels()[j]),
        alpha,
    )?;

    let pa = p.group_by_input();
    let qa = q.group_by_input();
    let pw: Vec<f64> = pa.iter().map(|a| a.mass).collect();
    let qw: Vec<f64> = qa.iter().map(|a| a.mass).collect();
    let (lx, gamma_x) = weighted_alpha_cost(&pw, &qw, |i, j| c1(&pa[i].point, &qa[j].point), alpha)?;
    let mut cond_x = 0.0;
    for (i, j, mass) in gamma_x.support() {
        let (inner, _) = weighted_alpha_cost(&pa[i].label_dist, &qa[j].label_dist, c2, alpha)?;
        cond_x += mass * inner;
    }

    let pm = p.class_masses();
    let qm = q.class_masses();
    let (ly, gamma_y) = weighted_alpha_cost(&pm, &qm, c2, alpha)?;
    let mut cond_y = 0.0;
    for (y, y2, mass) in gamma_y.support() {
        let pc = p.conditional(y)?;
        let qc = q.conditional(y2)?;
        let (inner, _) = weighted_alpha_cost(
            pc.weights(),
            qc.weights(),
            |i, j| c1(&pc.points()[i], &qc.points()[j]),
            alpha,
        )?;
        cond_y += mass * inner;
    }

    let terms = SandwichTerms {
        lower_x: lx.powf(inv),
        lower_y: ly.powf(inv),
        joint: joint_cost.powf(inv),
        upper_x: lx.powf(inv) + cond_x.max(0.0).powf(inv),
        upper_y: ly.powf(inv) + cond_y.max(0.0).powf(inv),
    };
    let slack = [
        terms.joint - terms.lower_x,
        terms.joint - terms.lower_y,
        terms.upper_x - terms.joint,
        terms.upper_y - terms.joint,
    ]
    .into_iter()
    .fold(f64::INFINITY, f64::min);
    if slack < -SANDWICH_TOLERANCE {
        return Err(Error::SandwichViolated(slack));
    }
    Ok(terms)
}
