//! Seeded synthetic shift scenarios with isotropic Gaussian class conditionals.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{DiscreteMeasure, EmpiricalJoint, LossSpec};
use crate::ot::{wasserstein_ground, OtMethod};

/// How the target domain departs from the source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ShiftKind {
    /// Every target point moved by a fixed vector.
    Covariate { translation: Vec<f64> },
    /// Same class conditionals, different class weights.
    LabelShift {
        #[serde(default)]
        source_weights: Option<Vec<f64>>,
        target_weights: Vec<f64>,
    },
    /// Target conditionals are a mixture over an `s`-stage chain of translated
    /// copies of the source conditionals, consecutive stages `0.9 epsilon` apart.
    Gradual {
        a: f64,
        epsilon: f64,
        s: usize,
        /// Mixture weights over stages `1..=s`. Defaults to mass `a` on the
        /// farthest stages first.
        #[serde(default)]
        mixture: Option<Vec<f64>>,
    },
    /// Target class `k` is drawn around the source mean of class `permutation[k]`,
    /// then translated.
    Entangling {
        #[serde(default)]
        permutation: Option<Vec<usize>>,
        #[serde(default)]
        translation: Option<Vec<f64>>,
    },
}

fn default_cov_scale() -> f64 {
    1.0
}

fn default_mean_scale() -> f64 {
    3.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftConfig {
    pub kind: ShiftKind,
    pub classes: usize,
    pub points_per_domain: usize,
    pub input_dim: usize,
    /// Explicit class means; generated on a scaled simplex when absent.
    #[serde(default)]
    pub class_means: Option<Vec<Vec<f64>>>,
    /// Each class conditional has covariance `class_cov_scale * I`.
    #[serde(default = "default_cov_scale")]
    pub class_cov_scale: f64,
    /// Distance of the generated means from the origin.
    #[serde(default = "default_mean_scale")]
    pub mean_scale: f64,
    #[serde(default)]
    pub seed: u64,
}

impl ShiftConfig {
    pub fn new(kind: ShiftKind, classes: usize, points_per_domain: usize, input_dim: usize, seed: u64) -> Self {
        Self {
            kind,
            classes,
            points_per_domain,
            input_dim,
            class_means: None,
            class_cov_scale: default_cov_scale(),
            mean_scale: default_mean_scale(),
            seed,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::ConfigInvalid(msg));
        if self.classes < 2 {
            return bad("need at least two classes".into());
        }
        if self.input_dim == 0 {
            return bad("input_dim must be positive".into());
        }
        if self.points_per_domain < self.classes {
            return bad(format!("points_per_domain {} is below the class count", self.points_per_domain));
        }
        if !(self.class_cov_scale.is_finite() && self.class_cov_scale >= 0.0) {
            return bad("class_cov_scale must be finite and nonnegative".into());
        }
        if !self.mean_scale.is_finite() {
            return bad("mean_scale must be finite".into());
        }
        if let Some(means) = &self.class_means {
            if means.len() != self.classes || means.iter().any(|m| m.len() != self.input_dim) {
                return bad("class_means must hold one input_dim vector per class".into());
            }
        }
        let check_vec = |v: &[f64], name: &str| -> Result<()> {
            if v.len() != self.input_dim || v.iter().any(|x| !x.is_finite()) {
                return Err(Error::ConfigInvalid(format!("{name} must be a finite input_dim vector")));
            }
            Ok(())
        };
        match &self.kind {
            ShiftKind::Covariate { translation } => check_vec(translation, "translation")?,
            ShiftKind::LabelShift {
                source_weights,
                target_weights,
            } => {
                check_class_weights(target_weights, self.classes)?;
                if let Some(w) = source_weights {
                    check_class_weights(w, self.classes)?;
                }
            }
            ShiftKind::Gradual { a, epsilon, s, mixture } => {
                if *s == 0 {
                    return bad("gradual shift needs s >= 1".into());
                }
                if !(*epsilon > 0.0 && epsilon.is_finite()) {
                    return bad("epsilon must be positive".into());
                }
                let lo = 1.0 / *s as f64;
                if *a < lo - 1e-12 || *a > 1.0 + 1e-12 {
                    return bad(format!("a must lie in [1/s, 1], got {a}"));
                }
                if let Some(r) = mixture {
                    if r.len() != *s {
                        return bad("mixture needs one weight per stage".into());
                    }
                    check_class_weights(r, *s)?;
                    if r.iter().any(|&v| v > a + 1e-12) {
                        return bad("mixture weights must not exceed a".into());
                    }
                }
            }
            ShiftKind::Entangling {
                permutation,
                translation,
            } => {
                if let Some(p) = permutation {
                    let mut seen = vec![false; self.classes];
                    if p.len() != self.classes || p.iter().any(|&k| k >= self.classes || std::mem::replace(&mut seen[k], true)) {
                        return bad("permutation must be a permutation of the classes".into());
                    }
                }
                if let Some(t) = translation {
                    check_vec(t, "translation")?;
                }
            }
        }
        Ok(())
    }

    /// Class means, explicit or generated.
    pub fn means(&self) -> Vec<Vec<f64>> {
        match &self.class_means {
            Some(m) => m.clone(),
            None => simplex_means(self.classes, self.input_dim, self.mean_scale),
        }
    }
}

fn check_class_weights(w: &[f64], m: usize) -> Result<()> {
    if w.len() != m || w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::ConfigInvalid(format!("expected {m} nonnegative weights")));
    }
    if (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::ConfigInvalid("weights must sum to 1".into()));
    }
    Ok(())
}

/// Means at distance `scale` from the origin: centred simplex vertices when
/// `dim >= classes`, otherwise a regular polygon in the first two coordinates
/// (evenly spaced points on a line when `dim == 1`).
pub fn simplex_means(classes: usize, dim: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..classes)
        .map(|k| {
            let mut v = vec![0.0; dim];
            if dim >= classes {
                let c = 1.0 / classes as f64;
                let norm = (1.0 - c).sqrt();
                for (j, x) in v.iter_mut().enumerate().take(classes) {
                    *x = scale * ((if j == k { 1.0 } else { 0.0 }) - c) / norm;
                }
            } else if dim >= 2 {
                let angle = 2.0 * std::f64::consts::PI * k as f64 / classes as f64;
                v[0] = scale * angle.cos();
                v[1] = scale * angle.sin();
            } else {
                v[0] = scale * (2.0 * k as f64 / (classes - 1) as f64 - 1.0);
            }
            v
        })
        .collect()
}

/// Largest-remainder split of `n` points across class weights.
pub fn class_counts(n: usize, weights: &[f64]) -> Vec<usize> {
    let raw: Vec<f64> = weights.iter().map(|w| w * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&i, &j| (raw[j] - raw[j].floor()).total_cmp(&(raw[i] - raw[i].floor())).then(i.cmp(&j)));
    let mut missing = n - counts.iter().sum::<usize>();
    for &k in order.iter().cycle() {
        if missing == 0 {
            break;
        }
        counts[k] += 1;
        missing -= 1;
    }
    counts
}

/// Gradual-shift chain: stage 0 is the source, the target mixes stages `1..=s`.
#[derive(Debug, Clone, PartialEq)]
pub struct GsChain {
    pub stages: Vec<EmpiricalJoint>,
    /// Weights `r_1..r_s` of stages `1..=s` in the target conditionals.
    pub mixture: Vec<f64>,
    pub target: EmpiricalJoint,
    pub epsilon: f64,
    pub a: f64,
}

impl GsChain {
    pub fn source(&self) -> &EmpiricalJoint {
        &self.stages[0]
    }

    pub fn len(&self) -> usize {
        self.mixture.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mixture.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub source: EmpiricalJoint,
    pub target: EmpiricalJoint,
    pub chain: Option<GsChain>,
}

struct Sampler {
    means: Vec<Vec<f64>>,
    std: f64,
    rng: ChaCha8Rng,
}

impl Sampler {
    /// Uniform-weight joint with class sizes from `class_weights`; class `k`
    /// points are drawn around `means[mean_of[k]] + shift`.
    fn joint(&mut self, n: usize, class_weights: &[f64], mean_of: &[usize], shift: &[f64]) -> Result<EmpiricalJoint> {
        let counts = class_counts(n, class_weights);
        let mut inputs = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for (k, &count) in counts.iter().enumerate() {
            let mean = &self.means[mean_of[k]];
            for _ in 0..count {
                let x: Vec<f64> = mean
                    .iter()
                    .zip(shift)
                    .map(|(m, t)| {
                        let z: f64 = StandardNormal.sample(&mut self.rng);
                        m + t + self.std * z
                    })
                    .collect();
                inputs.push(x);
                labels.push(k);
            }
        }
        EmpiricalJoint::uniform(inputs, labels, self.means.len())
    }
}

/// Greedy mixture: mass `a` on the farthest stages first.
fn default_mixture(a: f64, s: usize) -> Vec<f64> {
    let mut r = vec![0.0; s];
    let mut left = 1.0;
    for i in (0..s).rev() {
        let take = a.min(left);
        r[i] = take;
        left -= take;
        if left <= 1e-15 {
            break;
        }
    }
    r
}

/// Generates a scenario; identical configs give bit-identical output.
pub fn generate(config: &ShiftConfig) -> Result<Scenario> {
    config.validate()?;
    let m = config.classes;
    let d = config.input_dim;
    let n = config.points_per_domain;
    let mut sampler = Sampler {
        means: config.means(),
        std: config.class_cov_scale.sqrt(),
        rng: ChaCha8Rng::seed_from_u64(config.seed),
    };
    let uniform = vec![1.0 / m as f64; m];
    let same: Vec<usize> = (0..m).collect();
    let zero = vec![0.0; d];
    match &config.kind {
        ShiftKind::Covariate { translation } => {
            let source = sampler.joint(n, &uniform, &same, &zero)?;
            let target = sampler.joint(n, &uniform, &same, translation)?;
            Ok(Scenario { source, target, chain: None })
        }
        ShiftKind::LabelShift {
            source_weights,
            target_weights,
        } => {
            let sw = source_weights.clone().unwrap_or_else(|| uniform.clone());
            let source = sampler.joint(n, &sw, &same, &zero)?;
            let target = sampler.joint(n, target_weights, &same, &zero)?;
            Ok(Scenario { source, target, chain: None })
        }
        ShiftKind::Entangling {
            permutation,
            translation,
        } => {
            let perm = permutation.clone().unwrap_or_else(|| (0..m).map(|k| (k + 1) % m).collect());
            let t = translation.clone().unwrap_or_else(|| zero.clone());
            let source = sampler.joint(n, &uniform, &same, &zero)?;
            let target = sampler.joint(n, &uniform, &perm, &t)?;
            Ok(Scenario { source, target, chain: None })
        }
        ShiftKind::Gradual { a, epsilon, s, mixture } => {
            let source = sampler.joint(n, &uniform, &same, &zero)?;
            let mixture = mixture.clone().unwrap_or_else(|| default_mixture(*a, *s));
            let steps: Vec<Vec<f64>> = (0..m)
                .map(|_| {
                    let dir: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut sampler.rng)).collect();
                    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
                    dir.into_iter().map(|v| 0.9 * epsilon * v / norm).collect()
                })
                .collect();
            let stage = |i: usize| {
                source.map_inputs_labeled(|x, y| x.iter().zip(&steps[y]).map(|(v, t)| v + i as f64 * t).collect())
            };
            let stages: Vec<EmpiricalJoint> = (0..=*s).map(stage).collect::<Result<_>>()?;
            verify_input_links(&stages, *epsilon)?;
            let mut inputs = Vec::with_capacity(n * s);
            let mut labels = Vec::with_capacity(n * s);
            let mut weights = Vec::with_capacity(n * s);
            for (i, r) in mixture.iter().enumerate() {
                if *r <= 0.0 {
                    continue;
                }
                let st = &stages[i + 1];
                inputs.extend(st.inputs().iter().cloned());
                labels.extend_from_slice(st.labels());
                weights.extend(st.weights().iter().map(|w| w * r));
            }
            let target = EmpiricalJoint::new(inputs, labels, weights, m)?;
            Ok(Scenario {
                source: source.clone(),
                target: target.clone(),
                chain: Some(GsChain {
                    stages,
                    mixture,
                    target,
                    epsilon: *epsilon,
                    a: *a,
                }),
            })
        }
    }
}

/// Input-space check that every class-conditional link stays below `epsilon`.
fn verify_input_links(stages: &[EmpiricalJoint], epsilon: f64) -> Result<()> {
    let loss = LossSpec::euclidean();
    for link in 1..stages.len() {
        for y in 0..stages[0].num_classes() {
            let a = stages[link - 1].conditional(y)?;
            let b = stages[link].conditional(y)?;
            let w = wasserstein_ground(&a, &b, |u: &[f64], v: &[f64]| loss.eval(u, v), 1.0, OtMethod::Exact)?;
            if w >= epsilon {
                return Err(Error::ChainGenerationFailed(format!(
                    "class {y} link {link} has W1 {w} >= epsilon {epsilon}"
                )));
            }
        }
    }
    Ok(())
}

/// Two-sample energy distance `2E|X-Y| - E|X-X'| - E|Y-Y'|` (V-statistic).
pub fn energy_distance(a: &DiscreteMeasure, b: &DiscreteMeasure) -> f64 {
    let dist = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let mean_dist = |p: &DiscreteMeasure, q: &DiscreteMeasure| {
        let mut s = 0.0;
        for (x, wx) in p.points().iter().zip(p.weights()) {
            for (y, wy) in q.points().iter().zip(q.weights()) {
                s += wx * wy * dist(x, y);
            }
        }
        s
    };
    (2.0 * mean_dist(a, b) - mean_dist(a, a) - mean_dist(b, b)).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entangle::label_shift_w1;

    #[test]
    fn regeneration_is_bit_identical() {
        let c = ShiftConfig::new(ShiftKind::Covariate { translation: vec![1.0, 0.0] }, 3, 30, 2, 11);
        assert_eq!(generate(&c).unwrap(), generate(&c).unwrap());
    }

    #[test]
    fn zero_translation_gives_close_inputs() {
        let (d, n) = (2, 200);
        let mut c = ShiftConfig::new(ShiftKind::Covariate { translation: vec![0.0; d] }, 2, n, d, 4);
        // Unit-scale law so that the sqrt(d / n) gate is meaningful.
        c.mean_scale = 0.5;
        c.class_cov_scale = 0.25;
        let s = generate(&c).unwrap();
        let loss = LossSpec::euclidean();
        let w = wasserstein_ground(
            &s.source.input_marginal(),
            &s.target.input_marginal(),
            |a: &[f64], b: &[f64]| loss.eval(a, b),
            1.0,
            OtMethod::Exact,
        )
        .unwrap();
        assert!(w < 3.0 * (d as f64 / n as f64).sqrt(), "w = {w}");
    }

    #[test]
    fn label_shift_marginal_distance() {
        let c = ShiftConfig::new(
            ShiftKind::LabelShift {
                source_weights: None,
                target_weights: vec![0.25, 0.75],
            },
            2,
            100,
            2,
            1,
        );
        let s = generate(&c).unwrap();
        let w = label_shift_w1(&s.source, &s.target, &LossSpec::euclidean()).unwrap();
        assert!((w - 0.25 * 2f64.sqrt()).abs() < 1e-12);
        // Same sampler per class: energy distance between conditionals is small.
        for y in 0..2 {
            let e = energy_distance(&s.source.conditional(y).unwrap(), &s.target.conditional(y).unwrap());
            assert!(e < 0.2, "class {y}: {e}");
        }
    }

    #[test]
    fn entangling_swap_pairs_opposite_classes() {
        let mut c = ShiftConfig::new(
            ShiftKind::Entangling {
                permutation: Some(vec![1, 0]),
                translation: None,
            },
            2,
            60,
            2,
            8,
        );
        c.class_means = Some(vec![vec![3.0, 0.0], vec![-3.0, 0.0]]);
        c.class_cov_scale = 0.25;
        let s = generate(&c).unwrap();
        let e = crate::entangle::label_entanglement(&s.source, &s.target, &crate::measures::Identity, &LossSpec::euclidean()).unwrap();
        assert!((e - 2f64.sqrt()).abs() < 1e-9, "{e}");
    }

    #[test]
    fn gradual_chain_structure() {
        let c = ShiftConfig::new(
            ShiftKind::Gradual {
                a: 0.5,
                epsilon: 0.05,
                s: 3,
                mixture: None,
            },
            3,
            30,
            2,
            2,
        );
        let s = generate(&c).unwrap();
        let chain = s.chain.unwrap();
        assert_eq!(chain.stages.len(), 4);
        assert_eq!(chain.source(), &s.source);
        assert_eq!(chain.mixture, vec![0.0, 0.5, 0.5]);
        let loss = LossSpec::euclidean();
        let ground = |u: &[f64], v: &[f64]| loss.eval(u, v);
        for y in 0..3 {
            let a = chain.stages[0].conditional(y).unwrap();
            let b = chain.stages[1].conditional(y).unwrap();
            let w = wasserstein_ground(&a, &b, ground, 1.0, OtMethod::Exact).unwrap();
            assert!((w - 0.045).abs() < 1e-12);
        }
    }

    #[test]
    fn class_counts_sum() {
        assert_eq!(class_counts(10, &[0.2, 0.8]), vec![2, 8]);
        assert_eq!(class_counts(10, &[1.0 / 3.0; 3]), vec![4, 3, 3]);
        assert_eq!(class_counts(7, &[0.5, 0.5]).iter().sum::<usize>(), 7);
    }

    #[test]
    fn simplex_means_are_equidistant() {
        let m = simplex_means(3, 4, 2.0);
        let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        assert!((d(&m[0], &m[1]) - d(&m[1], &m[2])).abs() < 1e-12);
        for v in &m {
            assert!((d(v, &[0.0; 4]) - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn config_rejects_unknown_keys_and_bad_values() {
        let ok = r#"{"kind":{"type":"covariate","translation":[0,0]},"classes":2,"points_per_domain":4,"input_dim":2}"#;
        assert!(ShiftConfig::from_json(ok).is_ok());
        let extra = r#"{"kind":{"type":"covariate","translation":[0,0]},"classes":2,"points_per_domain":4,"input_dim":2,"bogus":1}"#;
        assert!(ShiftConfig::from_json(extra).is_err());
        let few = r#"{"kind":{"type":"covariate","translation":[0,0]},"classes":5,"points_per_domain":4,"input_dim":2}"#;
        assert!(matches!(ShiftConfig::from_json(few), Err(Error::ConfigInvalid(_))));
        let bad_a = r#"{"kind":{"type":"gradual","a":0.1,"epsilon":0.05,"s":2},"classes":2,"points_per_domain":4,"input_dim":2}"#;
        assert!(matches!(ShiftConfig::from_json(bad_a), Err(Error::ConfigInvalid(_))));
    }
}
