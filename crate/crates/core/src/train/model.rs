use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::Predictor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
        }
    }

    /// Derivative given the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelKind {
    /// `softmax(W x + b)`.
    LinearSoftmax,
    /// `softmax(W2 act(W1 x + b1) + b2)`.
    Mlp { hidden: usize, activation: Activation },
}

impl Default for ModelKind {
    fn default() -> Self {
        ModelKind::Mlp {
            hidden: 16,
            activation: Activation::Tanh,
        }
    }
}

/// Softmax classifier with a flat parameter vector.
///
/// Layout: linear is `W (M x d)` row-major then `b (M)`; the MLP is
/// `W1 (h x d)`, `b1 (h)`, `W2 (M x h)`, `b2 (M)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Model {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub num_classes: usize,
    pub params: Vec<f64>,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub hidden_pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / s).collect()
}

/// Pulls a gradient with respect to softmax outputs back to the logits.
pub fn softmax_backward(probs: &[f64], d_probs: &[f64]) -> Vec<f64> {
    let dot: f64 = probs.iter().zip(d_probs).map(|(p, d)| p * d).sum();
    probs.iter().zip(d_probs).map(|(p, d)| p * (d - dot)).collect()
}

impl Model {
    pub fn param_count(kind: ModelKind, input_dim: usize, num_classes: usize) -> usize {
        match kind {
            ModelKind::LinearSoftmax => num_classes * input_dim + num_classes,
            ModelKind::Mlp { hidden, .. } => hidden * input_dim + hidden + num_classes * hidden + num_classes,
        }
    }

    /// Weights uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn init(kind: ModelKind, input_dim: usize, num_classes: usize, rng: &mut impl Rng) -> Result<Self> {
        if input_dim == 0 || num_classes < 2 {
            return Err(Error::ConfigInvalid("model needs input_dim >= 1 and at least two classes".into()));
        }
        if let ModelKind::Mlp { hidden: 0, .. } = kind {
            return Err(Error::ConfigInvalid("hidden layer must have at least one unit".into()));
        }
        let mut params = Vec::with_capacity(Self::param_count(kind, input_dim, num_classes));
        let mut layer = |fan_in: usize, count: usize, params: &mut Vec<f64>| {
            let r = 1.0 / (fan_in as f64).sqrt();
            params.extend((0..count).map(|_| rng.random_range(-r..=r)));
        };
        match kind {
            ModelKind::LinearSoftmax => layer(input_dim, num_classes * (input_dim + 1), &mut params),
            ModelKind::Mlp { hidden, .. } => {
                layer(input_dim, hidden * (input_dim + 1), &mut params);
                layer(hidden, num_classes * (hidden + 1), &mut params);
            }
        }
        Ok(Self {
            kind,
            input_dim,
            num_classes,
            params,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(text)?;
        if model.params.len() != Self::param_count(model.kind, model.input_dim, model.num_classes) {
            return Err(Error::ConfigInvalid("parameter count does not match the model shape".into()));
        }
        if model.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::ConfigInvalid("parameters must be finite".into()));
        }
        Ok(model)
    }

    pub fn has_hidden_layer(&self) -> bool {
        matches!(self.kind, ModelKind::Mlp { .. })
    }

    pub fn hidden_dim(&self) -> usize {
        match self.kind {
            ModelKind::LinearSoftmax => 0,
            ModelKind::Mlp { hidden, .. } => hidden,
        }
    }

    fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
        let n_in = x.len();
        b.iter()
            .enumerate()
            .map(|(r, bias)| bias + w[r * n_in..(r + 1) * n_in].iter().zip(x).map(|(a, v)| a * v).sum::<f64>())
            .collect()
    }

    pub fn forward(&self, x: &[f64]) -> Forward {
        let (d, m) = (self.input_dim, self.num_classes);
        let p = &self.params;
        match self.kind {
            ModelKind::LinearSoftmax => {
                let logits = Self::affine(&p[..m * d], &p[m * d..m * d + m], x);
                Forward {
                    hidden_pre: Vec::new(),
                    hidden: Vec::new(),
                    probs: softmax(&logits),
                    logits,
                }
            }
            ModelKind::Mlp { hidden: h, activation } => {
                let o1 = h * d;
                let o2 = o1 + h;
                let o3 = o2 + m * h;
                let hidden_pre = Self::affine(&p[..o1], &p[o1..o2], x);
                let hidden: Vec<f64> = hidden_pre.iter().map(|&z| activation.apply(z)).collect();
                let logits = Self::affine(&p[o2..o3], &p[o3..o3 + m], &hidden);
                Forward {
                    hidden_pre,
                    probs: softmax(&logits),
                    hidden,
                    logits,
                }
            }
        }
    }

    /// Hidden-layer features, empty for the linear model.
    pub fn features(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).hidden
    }

    /// Accumulates into `grad` the parameter gradient of a scalar whose
    /// derivatives are `d_logits` (w.r.t. logits) and `d_hidden` (w.r.t. the
    /// hidden activations, added to the back-propagated signal).
    pub fn backward(&self, x: &[f64], fwd: &Forward, d_logits: &[f64], d_hidden: Option<&[f64]>, grad: &mut [f64]) {
        let (d, m) = (self.input_dim, self.num_classes);
        match self.kind {
            ModelKind::LinearSoftmax => {
                for r in 0..m {
                    for c in 0..d {
                        grad[r * d + c] += d_logits[r] * x[c];
                    }
                    grad[m * d + r] += d_logits[r];
                }
            }
            ModelKind::Mlp { hidden: h, activation } => {
                let o1 = h * d;
                let o2 = o1 + h;
                let o3 = o2 + m * h;
                let w2 = &self.params[o2..o3];
                let mut dh = vec![0.0; h];
                for r in 0..m {
                    for c in 0..h {
                        grad[o2 + r * h + c] += d_logits[r] * fwd.hidden[c];
                        dh[c] += d_logits[r] * w2[r * h + c];
                    }
                    grad[o3 + r] += d_logits[r];
                }
                if let Some(extra) = d_hidden {
                    for (a, b) in dh.iter_mut().zip(extra) {
                        *a += b;
                    }
                }
                for c in 0..h {
                    let dz = dh[c] * activation.derivative(fwd.hidden_pre[c], fwd.hidden[c]);
                    for k in 0..d {
                        grad[c * d + k] += dz * x[k];
                    }
                    grad[o1 + c] += dz;
                }
            }
        }
    }

    /// Index of the largest output; ties go to the lowest index.
    pub fn predict_class(&self, x: &[f64]) -> usize {
        argmax(&self.forward(x).logits)
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

impl Predictor for Model {
    fn predict(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).probs
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn json_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let model = Model::init(ModelKind::default(), 2, 3, &mut rng).unwrap();
            let back = Model::from_json(&serde_json::to_string(&model).unwrap()).unwrap();
            assert_eq!(back, model);
        }
    }

    #[test]
    fn outputs_are_on_the_simplex() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for kind in [
            ModelKind::LinearSoftmax,
            ModelKind::Mlp {
                hidden: 5,
                activation: Activation::Relu,
            },
        ] {
            let mut model = Model::init(kind, 3, 4, &mut rng).unwrap();
            for p in model.params.iter_mut() {
                *p *= 50.0;
            }
            let out = model.predict(&[10.0, -3.0, 7.0]);
            assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(out.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn init_respects_fan_in() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = Model::init(ModelKind::LinearSoftmax, 4, 3, &mut rng).unwrap();
        assert_eq!(m.params.len(), 15);
        assert!(m.params.iter().all(|p| p.abs() <= 0.5));
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }

    #[test]
    fn argmax_is_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut m = Model::init(ModelKind::LinearSoftmax, 2, 3, &mut rng).unwrap();
        let x = [0.3, -1.2];
        let before = m.predict_class(&x);
        for p in m.params.iter_mut() {
            *p *= 7.5;
        }
        assert_eq!(m.predict_class(&x), before);
    }

    #[test]
    fn softmax_backward_matches_finite_differences() {
        let logits = [0.2, -1.0, 0.7];
        let weights = [1.0, -2.0, 0.5];
        let f = |l: &[f64]| softmax(l).iter().zip(&weights).map(|(p, w)| p * w).sum::<f64>();
        let g = softmax_backward(&softmax(&logits), &weights);
        for i in 0..3 {
            let mut a = logits;
            let mut b = logits;
            a[i] += 1e-6;
            b[i] -= 1e-6;
            assert!(((f(&a) - f(&b)) / 2e-6 - g[i]).abs() < 1e-8);
        }
    }
}
