use serde::{Deserialize, Serialize};

use super::one_hot;
use crate::error::{Error, Result};

/// Shape of the loss between two points of the output simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Euclidean distance.
    EuclideanOnSimplex,
    /// Squared Euclidean distance, an approximate metric with kappa = 2.
    SquaredEuclidean,
    /// 0 for identical vectors, 1 otherwise.
    Kronecker,
    /// `a^T C b`; equals `C[i][j]` on one-hot vertices.
    CustomMatrix(Vec<Vec<f64>>),
}

/// Loss on the output simplex with its certified constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    /// Upper bound on the loss.
    pub upper: f64,
    /// Minimum loss between distinct one-hot labels.
    pub min_separation: f64,
    /// Approximate-triangle constant, 1 for metrics.
    pub kappa: f64,
}

/// Result of sampling the loss axioms.
#[derive(Debug, Clone, PartialEq)]
pub struct LossCertificate {
    pub max_self_loss: f64,
    pub max_asymmetry: f64,
    pub max_triangle_ratio: f64,
    pub max_value: f64,
    pub min_label_separation: f64,
}

impl LossSpec {
    pub fn euclidean() -> Self {
        Self {
            kind: LossKind::EuclideanOnSimplex,
            upper: std::f64::consts::SQRT_2,
            min_separation: std::f64::consts::SQRT_2,
            kappa: 1.0,
        }
    }

    pub fn squared_euclidean() -> Self {
        Self {
            kind: LossKind::SquaredEuclidean,
            upper: 2.0,
            min_separation: 2.0,
            kappa: 2.0,
        }
    }

    pub fn kronecker() -> Self {
        Self {
            kind: LossKind::Kronecker,
            upper: 1.0,
            min_separation: 1.0,
            kappa: 1.0,
        }
    }

    /// Label-cost matrix; constants are read off the vertices.
    pub fn custom(matrix: Vec<Vec<f64>>) -> Result<Self> {
        let m = matrix.len();
        if m == 0 || matrix.iter().any(|r| r.len() != m) {
            return Err(Error::DimensionMismatch("custom loss matrix must be square".into()));
        }
        let mut upper = 0.0f64;
        let mut sep = f64::INFINITY;
        for i in 0..m {
            for j in 0..m {
                let v = matrix[i][j];
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::InvalidMeasure("custom loss entries must be finite and nonnegative".into()));
                }
                if i == j && v != 0.0 {
                    return Err(Error::InvalidMeasure("custom loss needs a zero diagonal".into()));
                }
                if (v - matrix[j][i]).abs() > 1e-12 {
                    return Err(Error::InvalidMeasure("custom loss must be symmetric".into()));
                }
                upper = upper.max(v);
                if i != j {
                    sep = sep.min(v);
                }
            }
        }
        let mut kappa = 1.0f64;
        for i in 0..m {
            for j in 0..m {
                for k in 0..m {
                    let via = matrix[i][k] + matrix[k][j];
                    if matrix[i][j] > 0.0 {
                        kappa = kappa.max(if via > 0.0 { matrix[i][j] / via } else { f64::INFINITY });
                    }
                }
            }
        }
        Ok(Self {
            kind: LossKind::CustomMatrix(matrix),
            upper,
            min_separation: if m > 1 { sep } else { 0.0 },
            kappa,
        })
    }

    pub fn is_metric(&self) -> bool {
        self.kappa <= 1.0
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match &self.kind {
            LossKind::EuclideanOnSimplex => sq_dist(a, b).sqrt(),
            LossKind::SquaredEuclidean => sq_dist(a, b),
            LossKind::Kronecker => {
                if a == b {
                    0.0
                } else {
                    1.0
                }
            }
            LossKind::CustomMatrix(c) => {
                let mut s = 0.0;
                for (i, &ai) in a.iter().enumerate() {
                    if ai == 0.0 {
                        continue;
                    }
                    for (j, &bj) in b.iter().enumerate() {
                        s += ai * c[i][j] * bj;
                    }
                }
                s
            }
        }
    }

    /// Loss between one-hot labels `i` and `j`.
    pub fn label_loss(&self, i: usize, j: usize, num_classes: usize) -> f64 {
        if i == j {
            return 0.0;
        }
        self.eval(&one_hot(i, num_classes), &one_hot(j, num_classes))
    }

    /// Loss between a prediction and a one-hot label.
    pub fn to_label(&self, prediction: &[f64], label: usize) -> f64 {
        self.eval(prediction, &one_hot(label, prediction.len()))
    }

    /// Largest ratio `l(a,c) / (l(a,b) + l(b,c))` over all triples of `points`.
    pub fn measured_kappa(&self, points: &[Vec<f64>]) -> f64 {
        let n = points.len();
        let d: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| self.eval(&points[i], &points[j])).collect())
            .collect();
        let mut kappa = 1.0f64;
        for i in 0..n {
            for j in 0..n {
                if d[i][j] <= 0.0 {
                    continue;
                }
                for k in 0..n {
                    let via = d[i][k] + d[k][j];
                    kappa = kappa.max(if via > 0.0 { d[i][j] / via } else { f64::INFINITY });
                }
            }
        }
        kappa
    }

    /// Checks the axioms on all pairs and triples of `points` and on the one-hot vertices.
    pub fn certify(&self, points: &[Vec<f64>], num_classes: usize) -> LossCertificate {
        let mut all: Vec<Vec<f64>> = points.to_vec();
        all.extend((0..num_classes).map(|k| one_hot(k, num_classes)));
        let mut max_self: f64 = 0.0;
        let mut max_asym: f64 = 0.0;
        let mut max_val: f64 = 0.0;
        for a in &all {
            max_self = max_self.max(self.eval(a, a).abs());
            for b in &all {
                let ab = self.eval(a, b);
                max_asym = max_asym.max((ab - self.eval(b, a)).abs());
                max_val = max_val.max(ab);
            }
        }
        let mut sep = f64::INFINITY;
        for i in 0..num_classes {
            for j in 0..num_classes {
                if i != j {
                    sep = sep.min(self.label_loss(i, j, num_classes));
                }
            }
        }
        LossCertificate {
            max_self_loss: max_self,
            max_asymmetry: max_asym,
            max_triangle_ratio: self.measured_kappa(&all),
            max_value: max_val,
            min_label_separation: sep,
        }
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn euclidean_constants_from_vertices() {
        let loss = LossSpec::euclidean();
        for m in 2..6 {
            let cert = loss.certify(&[], m);
            assert!((cert.max_value - loss.upper).abs() < 1e-15);
            assert!((cert.min_label_separation - loss.min_separation).abs() < 1e-15);
            assert_eq!(cert.max_self_loss, 0.0);
        }
    }

    #[test]
    fn squared_euclidean_needs_kappa_two() {
        let loss = LossSpec::squared_euclidean();
        let pts = vec![vec![1.0, 0.0], vec![0.5, 0.5], vec![0.0, 1.0]];
        let k = loss.measured_kappa(&pts);
        assert!((k - 2.0).abs() < 1e-12);
        assert!(!loss.is_metric());
    }

    #[test]
    fn custom_matrix_constants() {
        let loss = LossSpec::custom(vec![
            vec![0.0, 1.0, 3.0],
            vec![1.0, 0.0, 1.0],
            vec![3.0, 1.0, 0.0],
        ])
        .unwrap();
        assert_eq!(loss.upper, 3.0);
        assert_eq!(loss.min_separation, 1.0);
        assert!((loss.kappa - 1.5).abs() < 1e-15);
        assert_eq!(loss.label_loss(0, 2, 3), 3.0);
        assert!(LossSpec::custom(vec![vec![1.0]]).is_err());
    }

    #[test]
    fn kronecker_is_discrete_metric() {
        let loss = LossSpec::kronecker();
        assert_eq!(loss.eval(&[0.2, 0.8], &[0.2, 0.8]), 0.0);
        assert_eq!(loss.eval(&[0.2, 0.8], &[0.3, 0.7]), 1.0);
    }
}
