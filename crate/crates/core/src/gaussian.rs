//! Wasserstein-2 between Gaussians and the scaled-covariance decomposition.
//!
//! Joint vectors are laid out as `x` first, then `y`; `dim_x` gives the split.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bounds::{BoundId, BoundReport};
use crate::error::{Error, Result};
use crate::ot::{transport_exact, CostMatrix};

const SPD_MIN_EIGENVALUE: f64 = 1e-10;
const EIGEN_CLAMP: f64 = 1e-12;
pub const DEFAULT_MC_SAMPLES: usize = 100_000;

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigen().eigenvalues.min()
}

fn check_spd(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() || m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotSpd);
    }
    let asym = (m - m.transpose()).amax();
    if asym > 1e-9 * m.amax().max(1.0) || min_eigenvalue(m) <= SPD_MIN_EIGENVALUE {
        return Err(Error::NotSpd);
    }
    Ok(())
}

/// Principal square root of a symmetric positive semidefinite matrix.
///
/// Eigenvalues are clamped at `1e-12`; the result is checked by squaring back.
pub fn sqrtm_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::NotSpd);
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.clone().symmetric_eigen();
    if eig.eigenvalues.min() < -1e-9 * eig.eigenvalues.amax().max(1.0) {
        return Err(Error::NotSpd);
    }
    let roots = eig.eigenvalues.map(|v| v.max(EIGEN_CLAMP).sqrt());
    let root = &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose();
    let err = (&root * &root - &sym).amax();
    if err > 1e-9 * sym.amax().max(1.0) {
        return Err(Error::Solver(format!("matrix square root off by {err:e}")));
    }
    Ok(root)
}

/// `||mu - mu'||^2 + tr(S + S' - 2 (S^1/2 S' S^1/2)^1/2)`.
pub fn gaussian_w2_squared(mu: &DVector<f64>, sigma: &DMatrix<f64>, mu_prime: &DVector<f64>, sigma_prime: &DMatrix<f64>) -> Result<f64> {
    if mu.len() != mu_prime.len() || sigma.nrows() != mu.len() || sigma_prime.nrows() != mu.len() {
        return Err(Error::DimensionMismatch("Gaussian parameters disagree in dimension".into()));
    }
    check_spd(sigma)?;
    check_spd(sigma_prime)?;
    let root = sqrtm_spd(sigma)?;
    let cross = sqrtm_spd(&(&root * sigma_prime * &root))?;
    let trace = sigma.trace() + sigma_prime.trace() - 2.0 * cross.trace();
    Ok(((mu - mu_prime).norm_squared() + trace).max(0.0))
}

/// Two Gaussians with `Sigma' = scale^2 Sigma`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianPair {
    pub mu: Vec<f64>,
    pub mu_prime: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
    pub scale: f64,
    pub dim_x: usize,
}

/// Matrices and blocks of a validated pair.
struct Blocks {
    mu: DVector<f64>,
    mu_prime: DVector<f64>,
    sigma: DMatrix<f64>,
    k: usize,
}

impl Blocks {
    fn dim_y(&self) -> usize {
        self.mu.len() - self.k
    }

    fn sigma_x(&self) -> DMatrix<f64> {
        self.sigma.view((0, 0), (self.k, self.k)).into_owned()
    }

    fn sigma_xy(&self) -> DMatrix<f64> {
        self.sigma.view((0, self.k), (self.k, self.dim_y())).into_owned()
    }

    fn sigma_y(&self) -> DMatrix<f64> {
        let m = self.dim_y();
        self.sigma.view((self.k, self.k), (m, m)).into_owned()
    }
}

impl GaussianPair {
    pub fn from_json(text: &str) -> Result<Self> {
        let pair: Self = serde_json::from_str(text)?;
        pair.validate()?;
        Ok(pair)
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn sigma_matrix(&self) -> DMatrix<f64> {
        let n = self.sigma.len();
        DMatrix::from_fn(n, n, |i, j| self.sigma[i][j])
    }

    pub fn sigma_prime_matrix(&self) -> DMatrix<f64> {
        self.sigma_matrix() * (self.scale * self.scale)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.mu.len();
        if n == 0 || self.mu_prime.len() != n || self.sigma.len() != n || self.sigma.iter().any(|r| r.len() != n) {
            return Err(Error::DimensionMismatch("mu, mu_prime and sigma must share one dimension".into()));
        }
        if self.dim_x == 0 || self.dim_x >= n {
            return Err(Error::DimensionMismatch("dim_x must split the joint into two nonempty blocks".into()));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::ConfigInvalid("scale must be positive".into()));
        }
        if self.mu.iter().chain(&self.mu_prime).any(|v| !v.is_finite()) {
            return Err(Error::ConfigInvalid("means must be finite".into()));
        }
        check_spd(&self.sigma_matrix())
    }

    fn blocks(&self) -> Result<Blocks> {
        self.validate()?;
        Ok(Blocks {
            mu: DVector::from_column_slice(&self.mu),
            mu_prime: DVector::from_column_slice(&self.mu_prime),
            sigma: self.sigma_matrix(),
            k: self.dim_x,
        })
    }

    /// Joint `W_2^2` from the Bures formula.
    pub fn joint_w2_squared(&self) -> Result<f64> {
        let b = self.blocks()?;
        gaussian_w2_squared(&b.mu, &b.sigma, &b.mu_prime, &self.sigma_prime_matrix())
    }

    /// Random pair: `Sigma = B B^T + 0.5 I`, standard normal means scaled by 2.
    pub fn random(dim_x: usize, dim_y: usize, scale: f64, rng: &mut impl Rng) -> Self {
        let n = dim_x + dim_y;
        let b = DMatrix::<f64>::from_fn(n, n, |_, _| StandardNormal.sample(rng));
        let sigma = &b * b.transpose() + DMatrix::identity(n, n) * 0.5;
        let mu: Vec<f64> = (0..n).map(|_| { let z: f64 = StandardNormal.sample(rng); 2.0 * z }).collect();
        let mu_prime: Vec<f64> = (0..n).map(|_| { let z: f64 = StandardNormal.sample(rng); 2.0 * z }).collect();
        Self {
            mu,
            mu_prime,
            sigma: (0..n).map(|i| (0..n).map(|j| sigma[(i, j)]).collect()).collect(),
            scale,
            dim_x,
        }
    }
}

/// Marginal and conditional terms of the decomposition, with the Monte Carlo
/// standard error of the conditional term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecompositionTerms {
    pub joint: f64,
    pub marginal: f64,
    pub conditional: f64,
    pub standard_error: f64,
}

/// Evaluates both sides of `W2^2(p, q) = W2^2(p_y, q_y) + E[W2^2(p_{x|y}, q_{x|T(y)})]`.
///
/// The conditional expectation is integrated by Monte Carlo over `y ~ p_y`
/// along the map `T(y) = mu'_y + s (y - mu_y)`.
pub fn decomposition_terms(pair: &GaussianPair, samples: usize, seed: u64) -> Result<DecompositionTerms> {
    if samples < 2 {
        return Err(Error::QuadratureNotConverged);
    }
    let b = pair.blocks()?;
    let s = pair.scale;
    let (k, m) = (b.k, b.dim_y());
    let joint = pair.joint_w2_squared()?;

    let sy = b.sigma_y();
    let mu_y = b.mu.rows(k, m).into_owned();
    let mu_y_prime = b.mu_prime.rows(k, m).into_owned();
    let marginal = gaussian_w2_squared(&mu_y, &sy, &mu_y_prime, &(&sy * (s * s)))?;

    let sy_inv = sy.clone().try_inverse().ok_or(Error::NotSpd)?;
    let gain = b.sigma_xy() * &sy_inv;
    let cond_cov = b.sigma_x() - &gain * b.sigma_xy().transpose();
    let cond_cov = (&cond_cov + cond_cov.transpose()) * 0.5;
    let chol = sy.clone().cholesky().ok_or(Error::NotSpd)?.l();
    let mu_x = b.mu.rows(0, k).into_owned();
    let mu_x_prime = b.mu_prime.rows(0, k).into_owned();
    // Covariance part of the conditional distance does not depend on y.
    let zero = DVector::zeros(k);
    let cov_term = gaussian_w2_squared(&zero, &cond_cov, &zero, &(&cond_cov * (s * s)))?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut z = DVector::zeros(m);
    for _ in 0..samples {
        for v in z.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let y = &mu_y + &chol * &z;
        let ty = &mu_y_prime + (&y - &mu_y) * s;
        let mean_p = &mu_x + &gain * (&y - &mu_y);
        let mean_q = &mu_x_prime + &gain * (&ty - &mu_y_prime);
        let d = (mean_p - mean_q).norm_squared();
        sum += d;
        sum_sq += d * d;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    let standard_error = (var / n).sqrt();
    if !mean.is_finite() {
        return Err(Error::QuadratureNotConverged);
    }
    Ok(DecompositionTerms {
        joint,
        marginal,
        conditional: mean + cov_term,
        standard_error,
    })
}

/// Equality check of the decomposition within `max(1e-6, 3 standard errors)`.
pub fn verify_scaled_decomposition(pair: &GaussianPair, samples: usize, seed: u64) -> Result<BoundReport> {
    let t = decomposition_terms(pair, samples, seed)?;
    let rhs = t.marginal + t.conditional;
    let tolerance = (3.0 * t.standard_error).max(1e-6);
    Ok(BoundReport::equality(
        BoundId::GaussianDecomposition,
        t.joint,
        rhs,
        tolerance,
        format!(
            "marginal={:.6e};conditional={:.6e};se={:.3e};tolerance={tolerance:.3e};scale={}",
            t.marginal, t.conditional, t.standard_error, pair.scale
        ),
    ))
}

/// Decomposable-cost check on `n` samples of `p` pushed through the optimal maps
/// `T_1, T_2`: the empirical `W_2^2` under `(|x - x'| + |y - y'|)^2` against
/// `A + B + 2 sqrt(A B)`, where `A` and `B` are the mean squared displacements
/// of the label and input blocks.
pub fn verify_cross_term(pair: &GaussianPair, n: usize, seed: u64) -> Result<BoundReport> {
    let b = pair.blocks()?;
    if n == 0 {
        return Err(Error::ConfigInvalid("need at least one sample".into()));
    }
    let dim = b.mu.len();
    let k = b.k;
    let s = pair.scale;
    let chol = b.sigma.clone().cholesky().ok_or(Error::NotSpd)?.l();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut src = Vec::with_capacity(n);
    let mut dst = Vec::with_capacity(n);
    for _ in 0..n {
        let z = DVector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng));
        let v = &b.mu + &chol * z;
        let t = &b.mu_prime + (&v - &b.mu) * s;
        src.push(v);
        dst.push(t);
    }
    let split = |a: &DVector<f64>, c: &DVector<f64>| {
        let dx = (a.rows(0, k) - c.rows(0, k)).norm();
        let dy = (a.rows(k, dim - k) - c.rows(k, dim - k)).norm();
        (dx, dy)
    };
    let cost = CostMatrix::from_fn(n, n, |i, j| {
        let (dx, dy) = split(&src[i], &dst[j]);
        (dx + dy).powi(2)
    })?;
    let w = vec![1.0 / n as f64; n];
    let lhs = transport_exact(&w, &w, &cost)?.objective;
    let (mut a, mut bb) = (0.0, 0.0);
    for (u, v) in src.iter().zip(&dst) {
        let (dx, dy) = split(u, v);
        bb += dx * dx / n as f64;
        a += dy * dy / n as f64;
    }
    let rhs = a + bb + 2.0 * (a * bb).sqrt();
    Ok(BoundReport::evaluate(
        BoundId::GaussianCrossTerm,
        lhs,
        rhs,
        crate::bounds::DEFAULT_TOLERANCE,
        format!("marginal={a:.6e};conditional={bb:.6e};n={n}"),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn identical_gaussians_are_zero() {
        let s = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let w = gaussian_w2_squared(&v(&[1.0, 2.0]), &s, &v(&[1.0, 2.0]), &s).unwrap();
        assert!(w.abs() < 1e-12);
    }

    #[test]
    fn mean_only_shift() {
        let i = DMatrix::identity(2, 2);
        let w = gaussian_w2_squared(&v(&[0.0, 0.0]), &i, &v(&[3.0, 4.0]), &i).unwrap();
        assert!((w - 25.0).abs() < 1e-12);
    }

    #[test]
    fn scale_only_shift() {
        let i = DMatrix::identity(2, 2);
        let w = gaussian_w2_squared(&v(&[0.0, 0.0]), &i, &v(&[0.0, 0.0]), &(&i * 4.0)).unwrap();
        assert!((w - 2.0).abs() < 1e-12);
    }

    #[test]
    fn not_spd_is_rejected() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let i = DMatrix::identity(2, 2);
        let z = v(&[0.0, 0.0]);
        assert!(matches!(gaussian_w2_squared(&z, &bad, &z, &i), Err(Error::NotSpd)));
    }

    #[test]
    fn sqrtm_squares_back() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let r = sqrtm_spd(&m).unwrap();
        assert!((&r * &r - &m).amax() < 1e-12);
    }

    #[test]
    fn unit_scale_equal_means_is_zero_on_both_sides() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut pair = GaussianPair::random(2, 2, 1.0, &mut rng);
        pair.mu_prime = pair.mu.clone();
        let r = verify_scaled_decomposition(&pair, 1000, 3).unwrap();
        assert!(r.lhs.abs() < 1e-9 && r.rhs.abs() < 1e-9);
        assert!(r.passed());
    }

    #[test]
    fn diagonal_covariance_scale_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mu: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mu_prime: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let sigma = vec![
            vec![1.5, 0.0, 0.0, 0.0],
            vec![0.0, 0.5, 0.0, 0.0],
            vec![0.0, 0.0, 2.0, 0.0],
            vec![0.0, 0.0, 0.0, 1.0],
        ];
        let pair = GaussianPair {
            mu,
            mu_prime,
            sigma,
            scale: 2.0,
            dim_x: 2,
        };
        // Without cross-covariance the conditional mean term is constant in y.
        let r = verify_scaled_decomposition(&pair, 2000, 5).unwrap();
        assert!((r.lhs - r.rhs).abs() < 1e-6, "{r:?}");
    }

    #[test]
    fn full_covariance_half_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pair = GaussianPair::random(2, 2, 0.5, &mut rng);
        let r = verify_scaled_decomposition(&pair, DEFAULT_MC_SAMPLES, 13).unwrap();
        assert!(r.passed(), "{r:?}");
        let closed = (pair.mu.iter().zip(&pair.mu_prime).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
            + 0.25 * pair.sigma_matrix().trace();
        assert!((r.lhs - closed).abs() < 1e-9);
    }

    #[test]
    fn cross_term_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pair = GaussianPair::random(2, 2, 1.7, &mut rng);
        let r = verify_cross_term(&pair, 40, 4).unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn json_layout() {
        let text = r#"{"mu":[0,0,0],"mu_prime":[1,0,0],"sigma":[[1,0,0],[0,1,0],[0,0,1]],"scale":2,"dim_x":1}"#;
        let pair = GaussianPair::from_json(text).unwrap();
        assert!((pair.joint_w2_squared().unwrap() - 4.0).abs() < 1e-12);
        assert!(GaussianPair::from_json(&text.replace("\"dim_x\":1", "\"dim_x\":3")).is_err());
    }
}
