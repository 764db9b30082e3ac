//! Log-domain Sinkhorn with epsilon scaling.

use serde::{Deserialize, Serialize};

use super::{CostMatrix, Coupling};
use crate::error::{Error, Result};

/// Entropic solver settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SinkhornParams {
    pub epsilon: f64,
    pub max_iter: usize,
    /// Tolerance on the L1 row-marginal error.
    pub tol: f64,
}

impl Default for SinkhornParams {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            max_iter: 10_000,
            tol: 1e-9,
        }
    }
}

impl SinkhornParams {
    pub fn with_epsilon(epsilon: f64) -> Self {
        Self {
            epsilon,
            ..Self::default()
        }
    }
}

const MAX_RELAXATION: f64 = 1.95;

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Entropic transport. The objective is the unregularized `<plan, cost>`.
///
/// When the marginal error is still above `tol` after `max_iter` sweeps the plan
/// is returned with `converged = false`.
pub fn transport_sinkhorn(a: &[f64], b: &[f64], cost: &CostMatrix, params: SinkhornParams) -> Result<Coupling> {
    if !(params.epsilon > 0.0) || !params.epsilon.is_finite() {
        return Err(Error::InvalidMeasure("sinkhorn epsilon must be positive".into()));
    }
    if cost.rows() != a.len() || cost.cols() != b.len() {
        return Err(Error::DimensionMismatch("cost does not match marginals".into()));
    }
    if a.iter().chain(b).any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidMeasure("bad marginal weight".into()));
    }
    let rows: Vec<usize> = (0..a.len()).filter(|&i| a[i] > 0.0).collect();
    let cols: Vec<usize> = (0..b.len()).filter(|&j| b[j] > 0.0).collect();
    if rows.is_empty() || cols.is_empty() {
        return Err(Error::InvalidMeasure("marginal without mass".into()));
    }
    let (n, m) = (rows.len(), cols.len());
    let c: Vec<f64> = rows
        .iter()
        .flat_map(|&i| cols.iter().map(move |&j| cost.get(i, j)))
        .collect();
    let log_a: Vec<f64> = rows.iter().map(|&i| a[i].ln()).collect();
    let log_b: Vec<f64> = cols.iter().map(|&j| b[j].ln()).collect();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];

    // `omega > 1` over-relaxes the potential updates.
    let update = |f: &mut [f64], g: &mut [f64], eps: f64, omega: f64| {
        for i in 0..n {
            let row = &c[i * m..(i + 1) * m];
            let lse = log_sum_exp((0..m).map(|j| (g[j] - row[j]) / eps));
            f[i] = (1.0 - omega) * f[i] + omega * (eps * log_a[i] - eps * lse);
        }
        for j in 0..m {
            let fr = &*f;
            let lse = log_sum_exp((0..n).map(|i| (fr[i] - c[i * m + j]) / eps));
            g[j] = (1.0 - omega) * g[j] + omega * (eps * log_b[j] - eps * lse);
        }
    };
    let row_error = |f: &[f64], g: &[f64], eps: f64| -> f64 {
        (0..n)
            .map(|i| {
                let s: f64 = (0..m).map(|j| ((f[i] + g[j] - c[i * m + j]) / eps).exp()).sum();
                (s - a[rows[i]]).abs()
            })
            .sum()
    };

    let target = params.epsilon;
    let mut eps = cost.max_entry().max(target);
    let mut iters = 0usize;
    while eps > target && iters < params.max_iter {
        for _ in 0..10 {
            update(&mut f, &mut g, eps, 1.0);
            iters += 1;
        }
        eps = (eps * 0.5).max(target);
    }
    let mut converged = false;
    let mut omega = 1.0;
    let mut last_error = f64::INFINITY;
    let mut best_error = f64::INFINITY;
    let mut relax = true;
    while iters < params.max_iter {
        update(&mut f, &mut g, target, omega);
        iters += 1;
        if iters.is_multiple_of(10) || iters == params.max_iter {
            let err = row_error(&f, &g, target);
            if err <= params.tol {
                converged = true;
                break;
            }
            if relax {
                if !(err < 1e3 * best_error) {
                    // Over-relaxation diverged; continue with plain sweeps.
                    relax = false;
                    omega = 1.0;
                } else if err > 0.5 * last_error {
                    // Slow progress: push the relaxation factor towards its cap.
                    omega += 0.5 * (MAX_RELAXATION - omega);
                }
            }
            last_error = err;
            best_error = best_error.min(err);
        }
    }
    if !converged {
        // A final plain sweep makes the column marginals exact.
        update(&mut f, &mut g, target, 1.0);
        converged = row_error(&f, &g, target) <= params.tol;
    }
    if !converged {
        log::warn!("sinkhorn stopped after {iters} sweeps without reaching tol {}", params.tol);
    }
    let mut plan = vec![0.0; a.len() * b.len()];
    for (ii, &i) in rows.iter().enumerate() {
        for (jj, &j) in cols.iter().enumerate() {
            plan[i * b.len() + j] = ((f[ii] + g[jj] - c[ii * m + jj]) / target).exp();
        }
    }
    let objective = plan.iter().zip(cost.entries()).map(|(p, c)| p * c).sum();
    Ok(Coupling {
        rows: a.len(),
        cols: b.len(),
        plan,
        row_marginal: a.to_vec(),
        col_marginal: b.to_vec(),
        objective,
        dual_row: None,
        dual_col: None,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ot::transport_exact;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_point() {
        let cost = CostMatrix::new(1, 1, vec![0.0]).unwrap();
        let c = transport_sinkhorn(&[1.0], &[1.0], &cost, SinkhornParams::default()).unwrap();
        assert!((c.plan[0] - 1.0).abs() < 1e-12);
        assert_eq!(c.objective, 0.0);
        assert!(c.converged);
    }

    #[test]
    fn large_epsilon_gives_product_coupling() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cost = CostMatrix::from_fn(4, 3, |_, _| rng.random::<f64>()).unwrap();
        let a = [0.1, 0.2, 0.3, 0.4];
        let b = [0.5, 0.25, 0.25];
        let c = transport_sinkhorn(&a, &b, &cost, SinkhornParams::with_epsilon(1e3)).unwrap();
        for i in 0..4 {
            for j in 0..3 {
                assert!((c.get(i, j) - a[i] * b[j]).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn small_epsilon_approaches_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let pa: Vec<[f64; 2]> = (0..5).map(|_| [rng.random(), rng.random()]).collect();
            let pb: Vec<[f64; 2]> = (0..5).map(|_| [rng.random(), rng.random()]).collect();
            let cost = CostMatrix::from_fn(5, 5, |i, j| {
                ((pa[i][0] - pb[j][0]).powi(2) + (pa[i][1] - pb[j][1]).powi(2)).sqrt()
            })
            .unwrap();
            let w = [0.2; 5];
            let exact = transport_exact(&w, &w, &cost).unwrap().objective;
            let s = transport_sinkhorn(&w, &w, &cost, SinkhornParams::with_epsilon(1e-3)).unwrap();
            // Near-degenerate instances converge slowly in the marginals; the objective does not.
            assert!(s.marginal_error() < 1e-6);
            assert!((s.objective - exact).abs() / exact.max(1e-9) < 1e-2);
        }
    }

    #[test]
    fn zero_weights_are_left_empty() {
        let cost = CostMatrix::new(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let c = transport_sinkhorn(&[1.0, 0.0], &[0.5, 0.5], &cost, SinkhornParams::default()).unwrap();
        assert_eq!(c.get(1, 0), 0.0);
        assert!((c.objective - 0.5).abs() < 1e-9);
    }

    #[test]
    fn nonconvergence_is_flagged() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cost = CostMatrix::from_fn(6, 6, |_, _| rng.random::<f64>()).unwrap();
        let w = [1.0 / 6.0; 6];
        let params = SinkhornParams {
            epsilon: 1e-3,
            max_iter: 2,
            tol: 1e-15,
        };
        let c = transport_sinkhorn(&w, &w, &cost, params).unwrap();
        assert!(!c.converged);
    }
}
