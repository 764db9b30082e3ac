//! Discrete measures, labeled empirical joints and their marginals.

mod loss;

pub use loss::{LossCertificate, LossKind, LossSpec};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const NORMALIZATION_DRIFT: f64 = 1e-12;

fn normalize_weights(weights: &[f64]) -> Result<Vec<f64>> {
    if weights.is_empty() {
        return Err(Error::InvalidMeasure("empty weight list".into()));
    }
    for (i, &w) in weights.iter().enumerate() {
        if !w.is_finite() {
            return Err(Error::InvalidMeasure(format!("weight {i} is not finite")));
        }
        if w < 0.0 {
            return Err(Error::InvalidMeasure(format!("weight {i} is negative")));
        }
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidMeasure("weights sum to zero".into()));
    }
    if (total - 1.0).abs() > NORMALIZATION_DRIFT {
        Ok(weights.iter().map(|w| w / total).collect())
    } else {
        Ok(weights.to_vec())
    }
}

fn check_points(points: &[Vec<f64>]) -> Result<usize> {
    let dim = points.first().map_or(0, Vec::len);
    for (i, p) in points.iter().enumerate() {
        if p.len() != dim {
            return Err(Error::DimensionMismatch(format!(
                "point {i} has dimension {} but expected {dim}",
                p.len()
            )));
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidMeasure(format!("point {i} has a non-finite coordinate")));
        }
    }
    Ok(dim)
}

/// One-hot embedding of class `label` among `num_classes`.
pub fn one_hot(label: usize, num_classes: usize) -> Vec<f64> {
    let mut v = vec![0.0; num_classes];
    v[label] = 1.0;
    v
}

/// Weighted point cloud with weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscreteMeasure {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    /// Builds a measure, renormalizing weights if they drift from one.
    pub fn new(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if points.len() != weights.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} points but {} weights",
                points.len(),
                weights.len()
            )));
        }
        check_points(&points)?;
        let weights = normalize_weights(&weights)?;
        Ok(Self { points, weights })
    }

    pub fn uniform(points: Vec<Vec<f64>>) -> Result<Self> {
        let n = points.len();
        Self::new(points, vec![1.0 / n.max(1) as f64; n])
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }
}

/// Anything that maps an input vector to a point of the output simplex.
pub trait Predictor {
    fn predict(&self, x: &[f64]) -> Vec<f64>;
}

/// Adapter turning a closure into a [`Predictor`].
pub struct FnPredictor<F>(pub F);

impl<F: Fn(&[f64]) -> Vec<f64>> Predictor for FnPredictor<F> {
    fn predict(&self, x: &[f64]) -> Vec<f64> {
        (self.0)(x)
    }
}

/// The identity map.
pub struct Identity;

impl Predictor for Identity {
    fn predict(&self, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }
}

impl<P: Predictor + ?Sized> Predictor for &P {
    fn predict(&self, x: &[f64]) -> Vec<f64> {
        (**self).predict(x)
    }
}

/// Weighted labeled sample over inputs × classes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmpiricalJoint {
    inputs: Vec<Vec<f64>>,
    labels: Vec<usize>,
    weights: Vec<f64>,
    num_classes: usize,
}

impl EmpiricalJoint {
    pub fn new(
        inputs: Vec<Vec<f64>>,
        labels: Vec<usize>,
        weights: Vec<f64>,
        num_classes: usize,
    ) -> Result<Self> {
        if inputs.len() != labels.len() || inputs.len() != weights.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} inputs, {} labels, {} weights",
                inputs.len(),
                labels.len(),
                weights.len()
            )));
        }
        if num_classes == 0 {
            return Err(Error::InvalidMeasure("num_classes must be positive".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::InvalidMeasure(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        check_points(&inputs)?;
        let weights = normalize_weights(&weights)?;
        Ok(Self {
            inputs,
            labels,
            weights,
            num_classes,
        })
    }

    pub fn uniform(inputs: Vec<Vec<f64>>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let n = inputs.len();
        Self::new(inputs, labels, vec![1.0 / n.max(1) as f64; n], num_classes)
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs[0].len()
    }

    /// Marginal over inputs, duplicates kept as separate atoms.
    pub fn input_marginal(&self) -> DiscreteMeasure {
        DiscreteMeasure {
            points: self.inputs.clone(),
            weights: self.weights.clone(),
        }
    }

    /// Mass of every class.
    pub fn class_masses(&self) -> Vec<f64> {
        let mut masses = vec![0.0; self.num_classes];
        for (&y, &w) in self.labels.iter().zip(&self.weights) {
            masses[y] += w;
        }
        masses
    }

    /// Label marginal as a measure on the one-hot vertices `e_0..e_{M-1}`.
    pub fn label_marginal(&self) -> DiscreteMeasure {
        let points = (0..self.num_classes)
            .map(|k| one_hot(k, self.num_classes))
            .collect();
        DiscreteMeasure {
            points,
            weights: self.class_masses(),
        }
    }

    /// Indices of the samples carrying `label`.
    pub fn class_indices(&self, label: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == label).collect()
    }

    /// Input distribution given the label, renormalized within the class.
    pub fn conditional(&self, label: usize) -> Result<DiscreteMeasure> {
        let idx = self.class_indices(label);
        let mass: f64 = idx.iter().map(|&i| self.weights[i]).sum();
        if idx.is_empty() || mass <= 0.0 {
            return Err(Error::EmptyClass(label));
        }
        DiscreteMeasure::new(
            idx.iter().map(|&i| self.inputs[i].clone()).collect(),
            idx.iter().map(|&i| self.weights[i] / mass).collect(),
        )
    }

    /// Image of the joint under `(x, y) -> (f(x), y)`.
    pub fn pushforward<P: Predictor + ?Sized>(&self, f: &P) -> EmpiricalJoint {
        EmpiricalJoint {
            inputs: self.inputs.iter().map(|x| f.predict(x)).collect(),
            labels: self.labels.clone(),
            weights: self.weights.clone(),
            num_classes: self.num_classes,
        }
    }

    /// Applies `g` to every input, keeping labels and weights.
    pub fn map_inputs(&self, g: impl Fn(&[f64]) -> Vec<f64>) -> Result<EmpiricalJoint> {
        EmpiricalJoint::new(
            self.inputs.iter().map(|x| g(x)).collect(),
            self.labels.clone(),
            self.weights.clone(),
            self.num_classes,
        )
    }

    /// Applies `g(x, y)` to every input, keeping labels and weights.
    pub fn map_inputs_labeled(&self, g: impl Fn(&[f64], usize) -> Vec<f64>) -> Result<EmpiricalJoint> {
        EmpiricalJoint::new(
            self.inputs.iter().zip(&self.labels).map(|(x, &y)| g(x, y)).collect(),
            self.labels.clone(),
            self.weights.clone(),
            self.num_classes,
        )
    }

    /// Sub-sample at `indices` (repeats allowed) with renormalized weights.
    pub fn subset(&self, indices: &[usize]) -> Result<EmpiricalJoint> {
        EmpiricalJoint::new(
            indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            indices.iter().map(|&i| self.labels[i]).collect(),
            indices.iter().map(|&i| self.weights[i]).collect(),
            self.num_classes,
        )
    }

    /// Same samples with uniform weights.
    pub fn with_uniform_weights(&self) -> EmpiricalJoint {
        let n = self.len();
        EmpiricalJoint {
            weights: vec![1.0 / n as f64; n],
            ..self.clone()
        }
    }

    /// Keeps the class-conditionals of `self` and reweights classes to `class_weights`.
    ///
    /// Fails with [`Error::EmptyClass`] when a class with positive target weight has no sample.
    pub fn reweight_classes(&self, class_weights: &[f64]) -> Result<EmpiricalJoint> {
        if class_weights.len() != self.num_classes {
            return Err(Error::DimensionMismatch("class weight count".into()));
        }
        let masses = self.class_masses();
        let mut weights = vec![0.0; self.len()];
        for (i, w) in weights.iter_mut().enumerate() {
            let y = self.labels[i];
            if masses[y] > 0.0 {
                *w = self.weights[i] * class_weights[y] / masses[y];
            }
        }
        for (y, (&cw, &m)) in class_weights.iter().zip(&masses).enumerate() {
            if cw > 0.0 && m <= 0.0 {
                return Err(Error::EmptyClass(y));
            }
        }
        EmpiricalJoint::new(
            self.inputs.clone(),
            self.labels.clone(),
            weights,
            self.num_classes,
        )
    }
}

/// Distinct input location of a joint with the label distribution found there.
#[derive(Debug, Clone, PartialEq)]
pub struct InputAtom {
    pub point: Vec<f64>,
    pub mass: f64,
    /// Conditional label distribution at this location, length `num_classes`.
    pub label_dist: Vec<f64>,
}

impl EmpiricalJoint {
    /// Merges samples sharing the exact same input vector; zero-weight samples are dropped.
    pub fn group_by_input(&self) -> Vec<InputAtom> {
        let mut index: std::collections::HashMap<Vec<u64>, usize> = std::collections::HashMap::new();
        let mut atoms: Vec<InputAtom> = Vec::new();
        for i in 0..self.len() {
            let w = self.weights[i];
            if w <= 0.0 {
                continue;
            }
            let key: Vec<u64> = self.inputs[i]
                .iter()
                .map(|v| if *v == 0.0 { 0 } else { v.to_bits() })
                .collect();
            let slot = *index.entry(key).or_insert_with(|| {
                atoms.push(InputAtom {
                    point: self.inputs[i].clone(),
                    mass: 0.0,
                    label_dist: vec![0.0; self.num_classes],
                });
                atoms.len() - 1
            });
            atoms[slot].mass += w;
            atoms[slot].label_dist[self.labels[i]] += w;
        }
        for a in &mut atoms {
            for v in &mut a.label_dist {
                *v /= a.mass;
            }
        }
        atoms
    }
}

/// On-disk measure format; `labels` and `num_classes` are present for joints.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureFile {
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
}

impl MeasureFile {
    pub fn from_json(text: &str) -> Result<Self> {
        let file: MeasureFile = serde_json::from_str(text)?;
        Ok(file)
    }

    pub fn into_measure(self) -> Result<DiscreteMeasure> {
        DiscreteMeasure::new(self.points, self.weights)
    }

    pub fn into_joint(self) -> Result<EmpiricalJoint> {
        let labels = self
            .labels
            .ok_or_else(|| Error::InvalidMeasure("missing labels".into()))?;
        let m = match self.num_classes {
            Some(m) => m,
            None => labels.iter().max().map_or(1, |&y| y + 1),
        };
        EmpiricalJoint::new(self.points, labels, self.weights, m)
    }
}

impl From<&EmpiricalJoint> for MeasureFile {
    fn from(j: &EmpiricalJoint) -> Self {
        MeasureFile {
            points: j.inputs.clone(),
            weights: j.weights.clone(),
            labels: Some(j.labels.clone()),
            num_classes: Some(j.num_classes),
        }
    }
}

impl From<&DiscreteMeasure> for MeasureFile {
    fn from(m: &DiscreteMeasure) -> Self {
        MeasureFile {
            points: m.points.clone(),
            weights: m.weights.clone(),
            labels: None,
            num_classes: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn softmax(z: &[f64]) -> Vec<f64> {
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.iter().map(|v| v / s).collect()
    }

    #[test]
    fn label_marginal_sums_class_weights() {
        let j = EmpiricalJoint::new(
            vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]],
            vec![0, 0, 1, 1],
            vec![0.1, 0.2, 0.3, 0.4],
            2,
        )
        .unwrap();
        let m = j.label_marginal();
        assert!((m.weights()[0] - 0.3).abs() < 1e-15);
        assert!((m.weights()[1] - 0.7).abs() < 1e-15);
        assert_eq!(m.points()[1], vec![0.0, 1.0]);
    }

    #[test]
    fn degenerate_label_marginal() {
        let j = EmpiricalJoint::uniform(vec![vec![0.0], vec![1.0]], vec![2, 2], 3).unwrap();
        assert_eq!(j.label_marginal().weights(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn conditional_renormalizes() {
        let j = EmpiricalJoint::new(
            vec![vec![0.0], vec![1.0], vec![2.0]],
            vec![0, 0, 1],
            vec![0.125, 0.125, 0.75],
            2,
        )
        .unwrap();
        assert_eq!(j.conditional(0).unwrap().weights(), &[0.5, 0.5]);
        assert!(matches!(
            EmpiricalJoint::uniform(vec![vec![0.0]], vec![0], 2)
                .unwrap()
                .conditional(1),
            Err(Error::EmptyClass(1))
        ));
    }

    #[test]
    fn single_class_conditional_is_whole_measure() {
        let j = EmpiricalJoint::new(vec![vec![0.0], vec![5.0]], vec![0, 0], vec![0.3, 0.7], 1)
            .unwrap();
        let c = j.conditional(0).unwrap();
        assert_eq!(c.weights(), j.weights());
        assert_eq!(c.points(), j.inputs());
    }

    #[test]
    fn conditional_matches_filter_oracle() {
        let inputs: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let labels = vec![1, 0, 2, 1, 1, 0];
        let weights = vec![0.05, 0.1, 0.15, 0.2, 0.22, 0.28];
        let j = EmpiricalJoint::new(inputs.clone(), labels.clone(), weights.clone(), 3).unwrap();
        for y in 0..3 {
            let mut pts = Vec::new();
            let mut ws = Vec::new();
            for i in 0..6 {
                if labels[i] == y {
                    pts.push(inputs[i].clone());
                    ws.push(weights[i]);
                }
            }
            let total: f64 = ws.iter().sum();
            let c = j.conditional(y).unwrap();
            assert_eq!(c.points(), &pts[..]);
            for (a, b) in c.weights().iter().zip(&ws) {
                assert!((a - b / total).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn identity_and_constant_pushforward() {
        let j = EmpiricalJoint::uniform(vec![vec![0.2, 0.8], vec![0.6, 0.4]], vec![0, 1], 2)
            .unwrap();
        assert_eq!(j.pushforward(&Identity), j);
        let c = j.pushforward(&FnPredictor(|_: &[f64]| vec![0.5, 0.5]));
        assert!(c.inputs().iter().all(|o| o == &vec![0.5, 0.5]));
        assert_eq!(c.weights(), j.weights());
        assert_eq!(c.labels(), j.labels());
    }

    #[test]
    fn linear_softmax_pushforward_by_hand() {
        // logits = W x + b with W = [[1, 0], [0, 2], [1, -1]], b = [0, 0.5, -0.5]
        let f = FnPredictor(|x: &[f64]| {
            softmax(&[x[0], 2.0 * x[1] + 0.5, x[0] - x[1] - 0.5])
        });
        let j = EmpiricalJoint::uniform(
            vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![0, 1, 2],
            3,
        )
        .unwrap();
        let out = j.pushforward(&f);
        let e = |v: f64| v.exp();
        let rows = [
            [e(0.0), e(0.5), e(-0.5)],
            [e(1.0), e(0.5), e(0.5)],
            [e(0.0), e(2.5), e(-1.5)],
        ];
        for (o, r) in out.inputs().iter().zip(rows.iter()) {
            let s: f64 = r.iter().sum();
            for k in 0..3 {
                assert!((o[k] - r[k] / s).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn grouping_merges_ties() {
        let j = EmpiricalJoint::new(
            vec![vec![0.5, 0.5], vec![1.0, 0.0], vec![0.5, 0.5]],
            vec![0, 1, 1],
            vec![0.25, 0.25, 0.5],
            2,
        )
        .unwrap();
        let atoms = j.group_by_input();
        assert_eq!(atoms.len(), 2);
        assert!((atoms[0].mass - 0.75).abs() < 1e-15);
        assert!((atoms[0].label_dist[0] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(atoms[1].label_dist, vec![0.0, 1.0]);
    }

    #[test]
    fn rejects_bad_weights() {
        assert!(DiscreteMeasure::new(vec![vec![0.0]], vec![-1.0]).is_err());
        assert!(DiscreteMeasure::new(vec![vec![0.0]], vec![f64::NAN]).is_err());
        assert!(DiscreteMeasure::new(vec![vec![f64::INFINITY]], vec![1.0]).is_err());
        assert!(DiscreteMeasure::new(vec![vec![0.0], vec![1.0]], vec![1.0]).is_err());
        let m = DiscreteMeasure::new(vec![vec![0.0], vec![1.0]], vec![1.0, 3.0]).unwrap();
        assert_eq!(m.weights(), &[0.25, 0.75]);
    }

    #[test]
    fn json_round_trip() {
        let text = r#"{"points": [[0.0], [1.0]], "weights": [0.5, 0.5], "labels": [0, 1], "num_classes": 2}"#;
        let j = MeasureFile::from_json(text).unwrap().into_joint().unwrap();
        assert_eq!(j.class_masses(), vec![0.5, 0.5]);
        let back = serde_json::to_string(&MeasureFile::from(&j)).unwrap();
        let again = MeasureFile::from_json(&back).unwrap().into_joint().unwrap();
        assert_eq!(j, again);
        assert!(MeasureFile::from_json(r#"{"points": [[0.0]], "weights": [1.0], "extra": 1}"#).is_err());
    }
}
