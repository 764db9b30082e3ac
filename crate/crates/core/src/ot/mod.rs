//! Exact and entropic discrete optimal transport.

mod cost;
mod coupling;
mod exact;
mod sandwich;
mod sinkhorn;

pub use cost::{CostKind, CostMatrix};
pub use coupling::Coupling;
pub use exact::transport_exact;
pub use sandwich::{sandwich_terms, SandwichTerms};
pub use sinkhorn::{transport_sinkhorn, SinkhornParams};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{DiscreteMeasure, EmpiricalJoint, LossSpec};

/// Solver choice for Wasserstein evaluations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum OtMethod {
    #[default]
    Exact,
    Sinkhorn { epsilon: f64 },
}

impl OtMethod {
    pub fn is_exact(&self) -> bool {
        matches!(self, OtMethod::Exact)
    }
}

/// Optimal plan between two measures under `cost`.
pub fn solve_exact(mu: &DiscreteMeasure, nu: &DiscreteMeasure, cost: &CostMatrix) -> Result<Coupling> {
    transport_exact(mu.weights(), nu.weights(), cost)
}

/// Entropic plan between two measures under `cost`.
pub fn solve_sinkhorn(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cost: &CostMatrix,
    params: SinkhornParams,
) -> Result<Coupling> {
    transport_sinkhorn(mu.weights(), nu.weights(), cost, params)
}

/// Solves with the requested method on raw weights.
pub fn transport(a: &[f64], b: &[f64], cost: &CostMatrix, method: OtMethod) -> Result<Coupling> {
    match method {
        OtMethod::Exact => transport_exact(a, b, cost),
        OtMethod::Sinkhorn { epsilon } => {
            transport_sinkhorn(a, b, cost, SinkhornParams::with_epsilon(epsilon))
        }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha >= 1.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidMeasure(format!("alpha must be >= 1, got {alpha}")))
    }
}

/// `W_{alpha,c}` on raw weights: entries raised to `alpha`, root taken after the solve.
pub fn wasserstein_weights(a: &[f64], b: &[f64], cost: &CostMatrix, alpha: f64, method: OtMethod) -> Result<f64> {
    check_alpha(alpha)?;
    let plan = transport(a, b, &cost.powf(alpha), method)?;
    Ok(plan.objective.max(0.0).powf(1.0 / alpha))
}

/// `W_{alpha,c}(mu, nu)`.
pub fn wasserstein(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cost: &CostMatrix,
    alpha: f64,
    method: OtMethod,
) -> Result<f64> {
    wasserstein_weights(mu.weights(), nu.weights(), cost, alpha, method)
}

/// `W_{alpha}` between two measures under a ground cost on points.
pub fn wasserstein_ground(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    ground: impl Fn(&[f64], &[f64]) -> f64,
    alpha: f64,
    method: OtMethod,
) -> Result<f64> {
    let cost = CostMatrix::pairwise(mu.points(), nu.points(), ground)?;
    wasserstein(mu, nu, &cost, alpha, method)
}

/// Decomposable cost `l(y_hat, y_hat') + l(y, y')` between two output-space joints.
pub fn decomposable_output_cost(p_out: &EmpiricalJoint, q_out: &EmpiricalJoint, loss: &LossSpec) -> Result<CostMatrix> {
    let m = p_out.num_classes().max(q_out.num_classes());
    let (n1, n2) = (p_out.len(), q_out.len());
    let mut c1 = Vec::with_capacity(n1 * n2);
    let mut c2 = Vec::with_capacity(n1 * n2);
    for i in 0..n1 {
        for j in 0..n2 {
            c1.push(loss.eval(&p_out.inputs()[i], &q_out.inputs()[j]));
            c2.push(loss.label_loss(p_out.labels()[i], q_out.labels()[j], m));
        }
    }
    CostMatrix::decomposable(n1, n2, c1, c2)
}

/// `W_{alpha, l, l}(f#p, f#q)` for joints already pushed to the output space.
pub fn joint_wasserstein_decomposable(
    p_out: &EmpiricalJoint,
    q_out: &EmpiricalJoint,
    loss: &LossSpec,
    alpha: f64,
) -> Result<f64> {
    let cost = decomposable_output_cost(p_out, q_out, loss)?;
    wasserstein_weights(p_out.weights(), q_out.weights(), &cost, alpha, OtMethod::Exact)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line(xs: &[f64]) -> DiscreteMeasure {
        DiscreteMeasure::uniform(xs.iter().map(|&x| vec![x]).collect()).unwrap()
    }

    fn abs(a: &[f64], b: &[f64]) -> f64 {
        (a[0] - b[0]).abs()
    }

    #[test]
    fn point_masses_any_alpha() {
        let w = wasserstein_ground(&line(&[0.0]), &line(&[3.0]), abs, 2.0, OtMethod::Exact).unwrap();
        assert!((w - 3.0).abs() < 1e-12);
    }

    #[test]
    fn self_distance_is_zero() {
        let mu = line(&[0.0, 0.4, 2.0]);
        assert_eq!(wasserstein_ground(&mu, &mu, abs, 1.0, OtMethod::Exact).unwrap(), 0.0);
    }

    #[test]
    fn alpha_below_one_rejected() {
        let mu = line(&[0.0]);
        assert!(wasserstein_ground(&mu, &mu, abs, 0.5, OtMethod::Exact).is_err());
    }

    #[test]
    fn alpha_changes_the_plan() {
        // {0, 2} -> {1, 3}: W1 = 1 by either matching, W2 = 1 by the monotone one.
        let mu = line(&[0.0, 2.0]);
        let nu = line(&[1.0, 3.0]);
        let w1 = wasserstein_ground(&mu, &nu, abs, 1.0, OtMethod::Exact).unwrap();
        let w2 = wasserstein_ground(&mu, &nu, abs, 2.0, OtMethod::Exact).unwrap();
        assert!((w1 - 1.0).abs() < 1e-12);
        assert!((w2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn w1_below_w2_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let n = rng.random_range(1..7);
            let m = rng.random_range(1..7);
            let mu = DiscreteMeasure::new(
                (0..n).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect(),
                (0..n).map(|_| rng.random::<f64>() + 0.01).collect(),
            )
            .unwrap();
            let nu = DiscreteMeasure::new(
                (0..m).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect(),
                (0..m).map(|_| rng.random::<f64>() + 0.01).collect(),
            )
            .unwrap();
            let e = |a: &[f64], b: &[f64]| crate::measures::LossSpec::euclidean().eval(a, b);
            let w1 = wasserstein_ground(&mu, &nu, e, 1.0, OtMethod::Exact).unwrap();
            let w2 = wasserstein_ground(&mu, &nu, e, 2.0, OtMethod::Exact).unwrap();
            assert!(w1 <= w2 + 1e-12);
        }
    }

    #[test]
    fn decomposable_matches_assembled_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let loss = LossSpec::euclidean();
        let simplex = |rng: &mut ChaCha8Rng| {
            let v: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect::<Vec<_>>()
        };
        let p = EmpiricalJoint::uniform((0..3).map(|_| simplex(&mut rng)).collect(), vec![0, 1, 2], 3).unwrap();
        let q = EmpiricalJoint::uniform((0..3).map(|_| simplex(&mut rng)).collect(), vec![2, 2, 0], 3).unwrap();
        let w = joint_wasserstein_decomposable(&p, &q, &loss, 1.0).unwrap();
        let assembled = CostMatrix::from_fn(3, 3, |i, j| {
            loss.eval(&p.inputs()[i], &q.inputs()[j])
                + loss.eval(&crate::measures::one_hot(p.labels()[i], 3), &crate::measures::one_hot(q.labels()[j], 3))
        })
        .unwrap();
        let direct = transport_exact(p.weights(), q.weights(), &assembled).unwrap().objective;
        assert!((w - direct).abs() < 1e-12);
        assert_eq!(joint_wasserstein_decomposable(&p, &p, &loss, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn single_pair_joint_cost_is_forced() {
        let loss = LossSpec::euclidean();
        let p = EmpiricalJoint::uniform(vec![vec![0.7, 0.3]], vec![0], 2).unwrap();
        let q = EmpiricalJoint::uniform(vec![vec![0.2, 0.8]], vec![1], 2).unwrap();
        let w = joint_wasserstein_decomposable(&p, &q, &loss, 1.0).unwrap();
        let expected = (0.5f64 * 0.5 * 2.0).sqrt() + 2f64.sqrt();
        assert!((w - expected).abs() < 1e-12);
    }
}
