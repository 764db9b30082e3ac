use serde::Serialize;

use super::CostMatrix;

/// Transport plan between two weight vectors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Coupling {
    pub rows: usize,
    pub cols: usize,
    /// Row-major plan.
    pub plan: Vec<f64>,
    pub row_marginal: Vec<f64>,
    pub col_marginal: Vec<f64>,
    /// `<plan, cost>` for the cost the plan was solved with.
    pub objective: f64,
    /// Row potentials, exact solver only.
    pub dual_row: Option<Vec<f64>>,
    /// Column potentials, exact solver only.
    pub dual_col: Option<Vec<f64>>,
    pub converged: bool,
}

impl Coupling {
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.plan[i * self.cols + j]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows)
            .map(|i| self.plan[i * self.cols..(i + 1) * self.cols].iter().sum())
            .collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (j, v) in s.iter_mut().enumerate() {
                *v += self.get(i, j);
            }
        }
        s
    }

    /// Largest absolute deviation of row and column sums from the marginals.
    pub fn marginal_error(&self) -> f64 {
        let r = self
            .row_sums()
            .iter()
            .zip(&self.row_marginal)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let c = self
            .col_sums()
            .iter()
            .zip(&self.col_marginal)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        r.max(c)
    }

    pub fn cost_of(&self, cost: &CostMatrix) -> f64 {
        self.plan.iter().zip(cost.entries()).map(|(p, c)| p * c).sum()
    }

    /// Primal minus dual objective; `None` without potentials.
    pub fn duality_gap(&self, cost: &CostMatrix) -> Option<f64> {
        let (u, v) = (self.dual_row.as_ref()?, self.dual_col.as_ref()?);
        let dual: f64 = u.iter().zip(&self.row_marginal).map(|(a, b)| a * b).sum::<f64>()
            + v.iter().zip(&self.col_marginal).map(|(a, b)| a * b).sum::<f64>();
        Some(self.cost_of(cost) - dual)
    }

    /// Largest `u_i + v_j - c_ij`; nonpositive for a feasible dual.
    pub fn max_dual_violation(&self, cost: &CostMatrix) -> Option<f64> {
        let (u, v) = (self.dual_row.as_ref()?, self.dual_col.as_ref()?);
        let mut worst = f64::NEG_INFINITY;
        for i in 0..self.rows {
            for j in 0..self.cols {
                worst = worst.max(u[i] + v[j] - cost.get(i, j));
            }
        }
        Some(worst)
    }

    /// Entries with positive mass as `(i, j, mass)`.
    pub fn support(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.plan
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0.0)
            .map(move |(k, &v)| (k / self.cols, k % self.cols, v))
    }
}
