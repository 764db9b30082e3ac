//! Numerical certification of the target-risk bounds.
//!
//! Every check recomputes risks, transport distances and assumption levels from
//! the data it is given and compares the two sides of one inequality. The
//! inequalities hold exactly for empirical measures, so the default tolerance of
//! `1e-7` only absorbs solver round-off. A check whose preconditions fail returns
//! a report with [`Status::NotApplicable`] instead of a verdict.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::entangle::{self, cc_level_out, output_risk, output_terms, prediction_entanglement_out};
use crate::error::{Error, Result};
use crate::measures::{one_hot, EmpiricalJoint, FnPredictor, LossSpec, Predictor};
use crate::ot::{transport_exact, CostMatrix, OtMethod};
use crate::scenarios::GsChain;

pub const DEFAULT_TOLERANCE: f64 = 1e-7;
pub const DEFAULT_KL_BINS: usize = 8;

/// Which inequality a report refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundId {
    /// `R_q <= R_p + W(p, q)` under the cost `l(f(x), f(x')) + l(y, y')`.
    RiskTransfer,
    /// The sample-space transport term against the output-space one.
    PushforwardTransfer,
    /// `R_q <= R_p + W(f#p_x, f#q_x) + E_y`.
    OubBound,
    /// `R_q <= R_p + W(p_y, q_y) + E_yhat`.
    LabelShiftBound,
    /// `E_y <= E_yhat + R_p + R_q + W(p_y, q_y)`.
    ConversionLabel,
    /// `E_yhat <= E_y + R_p + R_q + W(f#p_x, f#q_x)`.
    ConversionPrediction,
    /// `U / 3 <= R_p + W(p_y, q_y) + E_yhat`.
    EquivalenceLower,
    /// `R_p + W(p_y, q_y) + E_yhat <= 3 U`.
    EquivalenceUpper,
    /// `W(p_y, q_y) <= U`.
    LabelShiftLowerBound,
    /// `R_p + R_q <= 2 kappa + (L + l) / l * delta`.
    CcToLje,
    /// `kappa q_y(y_min) <= R_p q_y(y_max) + R_q + R_r`.
    NotCc,
    /// `U <= 3 (kappa + (L + l) / l * delta)`.
    CcOubTightness,
    /// Measured close-conditionals level against the gradual-shift budget.
    GsImpliesCc,
    /// Label entanglement against the gradual-shift cap.
    GsEntanglementCap,
    /// Approximate-triangle version of the output-marginal bound.
    KappaOub,
    /// Approximate-triangle version of the label-marginal bound.
    KappaLabelShift,
    /// Output-marginal bound with the transport term replaced by a KL term.
    KlOub,
    /// Label-marginal bound with the transport term replaced by a KL term.
    KlLabelShift,
    /// Joint Gaussian W2 against marginal plus conditional terms.
    GaussianDecomposition,
    /// Decomposable-cost W2 against marginal, conditional and cross terms.
    GaussianCrossTerm,
}

impl BoundId {
    pub fn as_str(&self) -> &'static str {
        match self {
            BoundId::RiskTransfer => "risk_transfer",
            BoundId::PushforwardTransfer => "pushforward_transfer",
            BoundId::OubBound => "oub_bound",
            BoundId::LabelShiftBound => "label_shift_bound",
            BoundId::ConversionLabel => "conversion_label",
            BoundId::ConversionPrediction => "conversion_prediction",
            BoundId::EquivalenceLower => "equivalence_lower",
            BoundId::EquivalenceUpper => "equivalence_upper",
            BoundId::LabelShiftLowerBound => "label_shift_lower_bound",
            BoundId::CcToLje => "cc_to_lje",
            BoundId::NotCc => "not_cc",
            BoundId::CcOubTightness => "cc_oub_tightness",
            BoundId::GsImpliesCc => "gs_implies_cc",
            BoundId::GsEntanglementCap => "gs_entanglement_cap",
            BoundId::KappaOub => "kappa_oub",
            BoundId::KappaLabelShift => "kappa_label_shift",
            BoundId::KlOub => "kl_oub",
            BoundId::KlLabelShift => "kl_label_shift",
            BoundId::GaussianDecomposition => "gaussian_decomposition",
            BoundId::GaussianCrossTerm => "gaussian_cross_term",
        }
    }
}

impl fmt::Display for BoundId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Passed,
    Failed,
    NotApplicable,
}

/// Both sides of one inequality and the verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub bound_id: BoundId,
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs - lhs`.
    pub slack: f64,
    pub status: Status,
    pub context: String,
}

impl BoundReport {
    pub fn evaluate(bound_id: BoundId, lhs: f64, rhs: f64, tolerance: f64, context: String) -> Self {
        let slack = rhs - lhs;
        let status = if slack >= -tolerance { Status::Passed } else { Status::Failed };
        Self {
            bound_id,
            lhs,
            rhs,
            slack,
            status,
            context,
        }
    }

    pub fn not_applicable(bound_id: BoundId, reason: impl Into<String>) -> Self {
        Self {
            bound_id,
            lhs: f64::NAN,
            rhs: f64::NAN,
            slack: f64::NAN,
            status: Status::NotApplicable,
            context: reason.into(),
        }
    }

    /// Two-sided check `|rhs - lhs| <= tolerance`; `slack` stays `rhs - lhs`.
    pub fn equality(bound_id: BoundId, lhs: f64, rhs: f64, tolerance: f64, context: String) -> Self {
        let slack = rhs - lhs;
        let status = if slack.abs() <= tolerance { Status::Passed } else { Status::Failed };
        Self {
            bound_id,
            lhs,
            rhs,
            slack,
            status,
            context,
        }
    }

    /// Re-evaluates the verdict under another tolerance.
    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        if self.status != Status::NotApplicable {
            let ok = if self.bound_id == BoundId::GaussianDecomposition {
                self.slack.abs() <= tolerance
            } else {
                self.slack >= -tolerance
            };
            self.status = if ok { Status::Passed } else { Status::Failed };
        }
        self
    }

    pub fn passed(&self) -> bool {
        self.status == Status::Passed
    }

    pub fn failed(&self) -> bool {
        self.status == Status::Failed
    }

    pub fn applicable(&self) -> bool {
        self.status != Status::NotApplicable
    }

    /// `passed` column value: `true`, `false` or `n/a`.
    pub fn passed_label(&self) -> &'static str {
        match self.status {
            Status::Passed => "true",
            Status::Failed => "false",
            Status::NotApplicable => "n/a",
        }
    }
}

/// Writes reports as CSV with header `bound_id,lhs,rhs,slack,passed,context`.
pub fn write_reports_csv<W: std::io::Write>(reports: &[BoundReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["bound_id", "lhs", "rhs", "slack", "passed", "context"])?;
    for r in reports {
        w.write_record([
            r.bound_id.as_str().to_string(),
            fmt_num(r.lhs),
            fmt_num(r.rhs),
            fmt_num(r.slack),
            r.passed_label().to_string(),
            r.context.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.12e}")
    }
}

/// Assumption levels and loss constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssumptionParams {
    /// Joint-error level.
    pub lambda: f64,
    /// Close-conditionals level.
    pub kappa: f64,
    /// Label-shift distance.
    pub delta: f64,
    /// Loss upper bound.
    pub upper: f64,
    /// Minimum loss between distinct labels.
    pub min_separation: f64,
    /// Gradual shift: cap on the mixture weights.
    pub a: f64,
    /// Gradual shift: source-risk threshold.
    pub b: f64,
    /// Gradual shift: link distance.
    pub epsilon: f64,
    /// Gradual shift: chain length.
    pub s: usize,
    /// Approximate-triangle constant.
    pub kappa_approx: f64,
}

impl Default for AssumptionParams {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            kappa: 0.0,
            delta: 0.0,
            upper: std::f64::consts::SQRT_2,
            min_separation: std::f64::consts::SQRT_2,
            a: 1.0,
            b: 0.1,
            epsilon: 0.05,
            s: 1,
            kappa_approx: 1.0,
        }
    }
}

impl AssumptionParams {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [self.lambda, self.kappa, self.delta, self.upper, self.min_separation, self.a, self.b, self.epsilon];
        if nonneg.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::ConfigInvalid("assumption parameters must be finite and nonnegative".into()));
        }
        if self.s == 0 {
            return Err(Error::ConfigInvalid("chain length s must be positive".into()));
        }
        let lo = 1.0 / self.s as f64;
        if self.a < lo - 1e-12 || self.a > 1.0 + 1e-12 {
            return Err(Error::ConfigInvalid(format!("a must lie in [1/s, 1], got {}", self.a)));
        }
        if !(self.kappa_approx >= 1.0) {
            return Err(Error::ConfigInvalid("kappa_approx must be >= 1".into()));
        }
        Ok(())
    }

    /// Gradual-shift budget `b + eps * a / 2 * s (s + 1)`.
    pub fn gs_cc_level(&self) -> f64 {
        let s = self.s as f64;
        self.b + self.epsilon * self.a / 2.0 * s * (s + 1.0)
    }
}

/// Pushforwards and the quantities most checks share.
struct Outputs {
    p: EmpiricalJoint,
    q: EmpiricalJoint,
}

impl Outputs {
    fn new<P: Predictor + ?Sized>(p: &EmpiricalJoint, q: &EmpiricalJoint, f: &P) -> Result<Self> {
        if p.num_classes() != q.num_classes() {
            return Err(Error::DimensionMismatch("joints disagree on the class count".into()));
        }
        Ok(Self {
            p: p.pushforward(f),
            q: q.pushforward(f),
        })
    }

    /// Reason why the loss constants do not cover these outputs, if any.
    fn loss_precondition(&self, loss: &LossSpec, need_metric: bool) -> Option<String> {
        if need_metric && !loss.is_metric() {
            return Some(format!("loss is not a metric (kappa = {})", loss.kappa));
        }
        let m = self.p.num_classes();
        if self.p.dim() != m || self.q.dim() != m {
            return Some("outputs do not live in the label simplex".into());
        }
        let mut pts: Vec<&[f64]> = self.p.inputs().iter().map(Vec::as_slice).collect();
        pts.extend(self.q.inputs().iter().map(Vec::as_slice));
        let vertices: Vec<Vec<f64>> = (0..m).map(|k| one_hot(k, m)).collect();
        pts.extend(vertices.iter().map(Vec::as_slice));
        let bound = loss.upper * (1.0 + 1e-12) + 1e-15;
        for (i, a) in pts.iter().enumerate() {
            for b in &pts[i + 1..] {
                if loss.eval(a, b) > bound {
                    return Some(format!("loss exceeds its upper bound {}", loss.upper));
                }
            }
        }
        if !(loss.min_separation > 0.0) {
            return Some("labels are not separated by a positive loss".into());
        }
        None
    }
}

fn na_all(ids: &[BoundId], reason: &str) -> Vec<BoundReport> {
    ids.iter().map(|&id| BoundReport::not_applicable(id, reason)).collect()
}

/// Risk transfer through the sample-space and output-space transport terms.
///
/// Returns the check `R_q <= R_p + W_{l o f, l}(p, q)` followed by the comparison of
/// that right side with `R_p + W_{l, l}(f#p, f#q)`, which is an equality here.
pub fn check_risk_transfer_chain<P: Predictor + ?Sized>(
    p: &EmpiricalJoint,
    q: &EmpiricalJoint,
    f: &P,
    loss: &LossSpec,
) -> Result<[BoundReport; 2]> {
    let out = Outputs::new(p, q, f)?;
    if let Some(reason) = out.loss_precondition(loss, true) {
        return Ok([
            BoundReport::not_applicable(BoundId::RiskTransfer, reason.clone()),
            BoundReport::not_applicable(BoundId::PushforwardTransfer, reason),
        ]);
    }
    let m = p.num_classes();
    let rp = output_risk(&out.p, loss);
    let rq = output_risk(&out.q, loss);
    // Sample-level cost, every sample its own atom.
    let sample_cost = CostMatrix::from_fn(p.len(), q.len(), |i, j| {
        loss.eval(&out.p.inputs()[i], &out.q.inputs()[j]) + loss.label_loss(p.labels()[i], q.labels()[j], m)
    })?;
    let w_sample = transport_exact(p.weights(), q.weights(), &sample_cost)?.objective;
    // Output-space joint with identical (prediction, label) atoms merged.
    let (pa, pw) = merge_output_atoms(&out.p);
    let (qa, qw) = merge_output_atoms(&out.q);
    let out_cost = CostMatrix::from_fn(pa.len(), qa.len(), |i, j| {
        loss.eval(&pa[i].0, &qa[j].0) + loss.label_loss(pa[i].1, qa[j].1, m)
    })?;
    let w_out = transport_exact(&pw, &qw, &out_cost)?.objective;
    let first = BoundReport::evaluate(
        BoundId::RiskTransfer,
        rq,
        rp + w_sample,
        DEFAULT_TOLERANCE,
        format!("R_p={rp:.6e};W_sample={w_sample:.6e}"),
    );
    let second = BoundReport::evaluate(
        BoundId::PushforwardTransfer,
        rp + w_sample,
        rp + w_out,
        DEFAULT_TOLERANCE,
        format!("W_output={w_out:.6e};equality_gap={:.3e}", (w_out - w_sample).abs()),
    );
    Ok([first, second])
}

fn merge_output_atoms(out: &EmpiricalJoint) -> (Vec<(Vec<f64>, usize)>, Vec<f64>) {
    let mut index: HashMap<(Vec<u64>, usize), usize> = HashMap::new();
    let mut atoms = Vec::new();
    let mut weights = Vec::new();
    for i in 0..out.len() {
        let key = (out.inputs()[i].iter().map(|v| v.to_bits()).collect(), out.labels()[i]);
        let slot = *index.entry(key).or_insert_with(|| {
            atoms.push((out.inputs()[i].clone(), out.labels()[i]));
            weights.push(0.0);
            atoms.len() - 1
        });
        weights[slot] += out.weights()[i];
    }
    (atoms, weights)
}

/// Both risk bounds, the conversions between entanglement terms, the equivalence
/// of the two oracle bounds up to a factor 3, and the label-shift lower bound.
pub fn check_oub_bounds<P: Predictor + ?Sized>(
    p: &EmpiricalJoint,
    q: &EmpiricalJoint,
    f: &P,
    loss: &LossSpec,
) -> Result<Vec<BoundReport>> {
    const IDS: [BoundId; 7] = [
        BoundId::OubBound,
        BoundId::LabelShiftBound,
        BoundId::ConversionLabel,
        BoundId::ConversionPrediction,
        BoundId::EquivalenceLower,
        BoundId::EquivalenceUpper,
        BoundId::LabelShiftLowerBound,
    ];
    let out = Outputs::new(p, q, f)?;
    if let Some(reason) = out.loss_precondition(loss, true) {
        return Ok(na_all(&IDS, &reason));
    }
    let r = entangle::entanglement_report_out(&out.p, &out.q, loss, OtMethod::Exact)?;
    let (rp, rq, wf, wy, ey, eyh, u) = (
        r.source_risk,
        r.target_risk,
        r.marginal_output_w1,
        r.label_shift_w1,
        r.label_entanglement,
        r.prediction_entanglement,
        r.oub,
    );
    let v = rp + wy + eyh;
    let ctx = format!("R_p={rp:.6e};R_q={rq:.6e};W_f={wf:.6e};W_y={wy:.6e};E_y={ey:.6e};E_yhat={eyh:.6e}");
    let t = DEFAULT_TOLERANCE;
    Ok(vec![
        BoundReport::evaluate(BoundId::OubBound, rq, u, t, ctx.clone()),
        BoundReport::evaluate(BoundId::LabelShiftBound, rq, v, t, ctx.clone()),
        BoundReport::evaluate(BoundId::ConversionLabel, ey, eyh + rp + rq + wy, t, ctx.clone()),
        BoundReport::evaluate(BoundId::ConversionPrediction, eyh, ey + rp + rq + wf, t, ctx.clone()),
        BoundReport::evaluate(BoundId::EquivalenceLower, u / 3.0, v, t, ctx.clone()),
        BoundReport::evaluate(BoundId::EquivalenceUpper, v, 3.0 * u, t, ctx.clone()),
        BoundReport::evaluate(BoundId::LabelShiftLowerBound, wy, u, t, ctx),
    ])
}

fn separation_ratio(loss: &LossSpec) -> f64 {
    (loss.upper + loss.min_separation) / loss.min_separation
}

/// Joint error of a hypothesis against its measured close-conditionals level
/// `kappa_hat` and label shift `delta_hat`.
pub fn check_cc_to_lje<P: Predictor + ?Sized>(
    p: &EmpiricalJoint,
    q: &EmpiricalJoint,
    f_cc: &P,
    loss: &LossSpec,
) -> Result<BoundReport> {
    let out = Outputs::new(p, q, f_cc)?;
    if let Some(reason) = out.loss_precondition(loss, true) {
        return Ok(BoundReport::not_applicable(BoundId::CcToLje, reason));
    }
    let cc = cc_level_out(&out.p, &out.q, loss)?;
    let delta = entangle::label_shift_w1(&out.p, &out.q, loss)?;
    let rp = cc.source_risk;
    let rq = output_risk(&out.q, loss);
    Ok(BoundReport::evaluate(
        BoundId::CcToLje,
        rp + rq,
        2.0 * cc.kappa_hat + separation_ratio(loss) * delta,
        DEFAULT_TOLERANCE,
        format!("kappa_hat={:.6e};delta_hat={delta:.6e};R_p={rp:.6e};R_q={rq:.6e}", cc.kappa_hat),
    ))
}

/// Oracle bound of a hypothesis against `3 (kappa_hat + (L + l) / l * delta_hat)`.
pub fn check_cc_oub_tightness<P: Predictor + ?Sized>(
    p: &EmpiricalJoint,
    q: &EmpiricalJoint,
    f_cc: &P,
    loss: &LossSpec,
) -> Result<BoundReport> {
    let out = Outputs::new(p, q, f_cc)?;
    if let Some(reason) = out.loss_precondition(loss, true) {
        return Ok(BoundReport::not_applicable(BoundId::CcOubTightness, reason));
    }
    let cc = cc_level_out(&out.p, &out.q, loss)?;
    let r = entangle::entanglement_report_out(&out.p, &out.q, loss, OtMethod::Exact)?;
    let delta = r.label_shift_w1;
    Ok(BoundReport::evaluate(
        BoundId::CcOubTightness,
        r.oub,
        3.0 * (cc.kappa_hat + separation_ratio(loss) * delta),
        DEFAULT_TOLERANCE,
        format!("kappa_hat={:.6e};delta_hat={delta:.6e};U={:.6e}", cc.kappa_hat, r.oub),
    ))
}

/// Risk lower bound for a hypothesis whose close-conditionals level is at least `kappa`.
///
/// `R_r` is the source risk reweighted to the target label marginal. The check is
/// per hypothesis: it applies when `kappa <= kappa_hat(f)`.
pub fn check_not_cc<P: Predictor + ?Sized>(
    p: &EmpiricalJoint,
    q: &EmpiricalJoint,
    f: &P,
    loss: &LossSpec,
    kappa: f64,
) -> Result<BoundReport> {
    let out = Outputs::new(p, q, f)?;
    if let Some(reason) = out.loss_precondition(loss, true) {
        return Ok(BoundReport::not_applicable(BoundId::NotCc, reason));
    }
    let cc = cc_level_out(&out.p, &out.q, loss)?;
    if kappa > cc.kappa_hat {
        return Ok(BoundReport::not_applicable(
            BoundId::NotCc,
            format!("hypothesis meets the level: kappa={kappa:.6e} > kappa_hat={:.6e}", cc.kappa_hat),
        ));
    }
    let pm = out.p.class_masses();
    let qm = out.q.class_masses();
    if let Some(y) = (0..pm.len()).find(|&y| qm[y] > 0.0 && pm[y] <= 0.0) {
        return Ok(BoundReport::not_applicable(
            BoundId::NotCc,
            format!("class {y} has target mass but no source sample"),
        ));
    }
    let r = out.p.reweight_classes(&qm)?;
    let rr = output_risk(&r, loss);
    let rp = cc.source_risk;
    let rq = output_risk(&out.q, loss);
    let q_min = qm.iter().cloned().fold(f64::INFINITY, f64::min);
    let q_max = qm.iter().cloned().fold(0.0, f64::max);
    Ok(BoundReport::evaluate(
        BoundId::NotCc,
        kappa * q_min,
        rp * q_max + rq + rr,
        DEFAULT_TOLERANCE,
        format!("kappa={kappa:.6e};kappa_hat={:.6e};R_p={rp:.6e};R_q={rq:.6e};R_r={rr:.6e};q_min={q_min:.6e};q_max={q_max:.6e}", cc.kappa_hat),
    ))
}

/// Largest output-space distance between consecutive stage conditionals, per class.
fn verify_chain_links<P: Predictor + ?Sized>(chain: &GsChain, f: &P, loss: &LossSpec, epsilon: f64) -> Result<f64> {
    let outs: Vec<EmpiricalJoint> = chain.stages.iter().map(|s| s.pushforward(f)).collect();
    let mut worst: f64 = 0.0;
    for y in 0..chain.source().num_classes() {
        for link in 1..outs.len() {
            let (a, b) = (&outs[link - 1], &outs[link]);
            if a.class_masses()[y] <= 0.0 || b.class_masses()[y] <= 0.0 {
                continue;
            }
            let d = entangle::conditional_w1(a, y, b, y, loss, OtMethod::Exact)?;
            if d >= epsilon {
                return Err(Error::ChainViolation {
                    class: y,
                    link,
                    distance: d,
                    epsilon,
                });
            }
            worst = worst.max(d);
        }
    }
    Ok(worst)
}

fn gs_params_from_chain(chain: &GsChain, params: &AssumptionParams) -> Result<AssumptionParams> {
    let mut params = *params;
    params.s = chain.mixture.len();
    params.validate()?;
    if chain.stages.len() != params.s + 1 {
        return Err(Error::ConfigInvalid("chain needs s + 1 stages".into()));
    }
    let total: f64 = chain.mixture.iter().sum();
    if (total - 1.0).abs() > 1e-9 || chain.mixture.iter().any(|&r| r < 0.0 || r > params.a + 1e-12) {
        return Err(Error::ConfigInvalid("mixture weights must sum to 1 and stay below a".into()));
    }
    Ok(params)
}

/// Measured close-conditionals level against `b + eps * a / 2 * s (s + 1)`.
///
/// Fails with [`Error::ChainViolation`] if a pushed-forward link reaches `epsilon`.
pub fn check_gs_implies_cc<P: Predictor + ?Sized>(
    chain: &GsChain,
    f: &P,
    loss: &LossSpec,
    params: &AssumptionParams,
) -> Result<BoundReport> {
    let params = gs_params_from_chain(chain, params)?;
    let out = Outputs::new(chain.source(), &chain.target, f)?;
    if let Some(reason) = out.loss_precondition(loss, true) {
        return Ok(BoundReport::not_applicable(BoundId::GsImpliesCc, reason));
    }
    let link = verify_chain_links(chain, f, loss, params.epsilon)?;
    let cc = cc_level_out(&out.p, &out.q, loss)?;
    if cc.source_risk >= params.b {
        return Ok(BoundReport::not_applicable(
            BoundId::GsImpliesCc,
            format!("source risk {:.6e} is not below b={}", cc.source_risk, params.b),
        ));
    }
    Ok(BoundReport::evaluate(
        BoundId::GsImpliesCc,
        cc.kappa_hat,
        params.gs_cc_level(),
        DEFAULT_TOLERANCE,
        format!("R_p={:.6e};max_link={link:.6e};s={};a={};eps={}", cc.source_risk, params.s, params.a, params.epsilon),
    ))
}

/// Label entanglement against `2b + eps a s (s + 1) + 2 delta_hat (L + l) / l`.
pub fn check_gs_entanglement_cap<P: Predictor + ?Sized>(
    chain: &GsChain,
    f: &P,
    loss: &LossSpec,
    params: &AssumptionParams,
) -> Result<BoundReport> {
    let params = gs_params_from_chain(chain, params)?;
    let out = Outputs::new(chain.source(), &chain.target, f)?;
    if let Some(reason) = out.loss_precondition(loss, true) {
        return Ok(BoundReport::not_applicable(BoundId::GsEntanglementCap, reason));
    }
    let link = verify_chain_links(chain, f, loss, params.epsilon)?;
    let rp = output_risk(&out.p, loss);
    if rp >= params.b {
        return Ok(BoundReport::not_applicable(
            BoundId::GsEntanglementCap,
            format!("source risk {rp:.6e} is not below b={}", params.b),
        ));
    }
    let (_, ey) = output_terms(&out.p, &out.q, loss, OtMethod::Exact)?;
    let delta = entangle::label_shift_w1(&out.p, &out.q, loss)?;
    let s = params.s as f64;
    let cap = 2.0 * params.b + params.epsilon * params.a * s * (s + 1.0) + 2.0 * delta * separation_ratio(loss);
    Ok(BoundReport::evaluate(
        BoundId::GsEntanglementCap,
        ey,
        cap,
        DEFAULT_TOLERANCE,
        format!("R_p={rp:.6e};delta_hat={delta:.6e};max_link={link:.6e}"),
    ))
}

/// Both risk bounds under a loss that only satisfies the triangle inequality up to
/// a factor `kappa >= 1`, taken as the larger of the declared constant and the worst
/// ratio over all triples of outputs and label vertices.
pub fn check_kappa_variants<P: Predictor + ?Sized>(
    p: &EmpiricalJoint,
    q: &EmpiricalJoint,
    f: &P,
    loss: &LossSpec,
) -> Result<[BoundReport; 2]> {
    let out = Outputs::new(p, q, f)?;
    if let Some(reason) = out.loss_precondition(loss, false) {
        return Ok([
            BoundReport::not_applicable(BoundId::KappaOub, reason.clone()),
            BoundReport::not_applicable(BoundId::KappaLabelShift, reason),
        ]);
    }
    let m = p.num_classes();
    let mut pts: Vec<Vec<f64>> = out.p.inputs().to_vec();
    pts.extend(out.q.inputs().iter().cloned());
    pts.extend((0..m).map(|k| one_hot(k, m)));
    let measured = loss.measured_kappa(&pts);
    let k = loss.kappa.max(measured).max(1.0);
    let r = entangle::entanglement_report_out(&out.p, &out.q, loss, OtMethod::Exact)?;
    let ctx = format!(
        "kappa={k:.6e};measured={measured:.6e};R_p={:.6e};W_f={:.6e};W_y={:.6e};E_y={:.6e};E_yhat={:.6e}",
        r.source_risk, r.marginal_output_w1, r.label_shift_w1, r.label_entanglement, r.prediction_entanglement
    );
    let k2 = k * k;
    Ok([
        BoundReport::evaluate(
            BoundId::KappaOub,
            r.target_risk,
            k2 * r.source_risk + k * r.marginal_output_w1 + k2 * r.label_entanglement,
            DEFAULT_TOLERANCE,
            ctx.clone(),
        ),
        BoundReport::evaluate(
            BoundId::KappaLabelShift,
            r.target_risk,
            k2 * r.source_risk + k2 * r.label_shift_w1 + k * r.prediction_entanglement,
            DEFAULT_TOLERANCE,
            ctx,
        ),
    ])
}

/// Histogram cell of a simplex point with `bins` cells per axis.
fn bin_index(o: &[f64], bins: usize) -> Vec<usize> {
    o.iter()
        .map(|&v| ((v * bins as f64).floor().max(0.0) as usize).min(bins - 1))
        .collect()
}

/// Cell centre projected back onto the simplex.
pub fn quantize_to_bin(o: &[f64], bins: usize) -> Vec<f64> {
    let centre: Vec<f64> = bin_index(o, bins)
        .iter()
        .map(|&i| (i as f64 + 0.5) / bins as f64)
        .collect();
    let s: f64 = centre.iter().sum();
    centre.into_iter().map(|c| c / s).collect()
}

/// `min(KL(a || b), KL(b || a))` over aligned probability vectors.
pub fn symmetric_min_kl(a: &[f64], b: &[f64]) -> f64 {
    let kl = |x: &[f64], y: &[f64]| -> f64 {
        let mut s = 0.0;
        for (&u, &v) in x.iter().zip(y) {
            if u > 0.0 {
                if v <= 0.0 {
                    return f64::INFINITY;
                }
                s += u * (u / v).ln();
            }
        }
        s.max(0.0)
    };
    kl(a, b).min(kl(b, a))
}

fn histograms(p: &EmpiricalJoint, q: &EmpiricalJoint, bins: usize) -> (Vec<f64>, Vec<f64>) {
    let mut cells: HashMap<Vec<usize>, usize> = HashMap::new();
    let mut hp = Vec::new();
    let mut hq = Vec::new();
    for (joint, which) in [(p, 0), (q, 1)] {
        for (o, &w) in joint.inputs().iter().zip(joint.weights()) {
            let key = bin_index(o, bins);
            let slot = *cells.entry(key).or_insert_with(|| {
                hp.push(0.0);
                hq.push(0.0);
                hp.len() - 1
            });
            if which == 0 {
                hp[slot] += w;
            } else {
                hq[slot] += w;
            }
        }
    }
    (hp, hq)
}

/// Both risk bounds with transport terms replaced by `L sqrt(min KL / 2)`.
///
/// The output-marginal form is certified for the predictor that snaps every output
/// to the centre of its histogram cell (renormalized onto the simplex); on that
/// predictor the histogram is exact. The label-marginal form needs no binning.
/// An empty cell on either side makes the KL term infinite.
pub fn check_kl_corollary<P: Predictor + ?Sized>(
    p: &EmpiricalJoint,
    q: &EmpiricalJoint,
    f: &P,
    loss: &LossSpec,
    bins: usize,
) -> Result<[BoundReport; 2]> {
    if bins == 0 {
        return Err(Error::ConfigInvalid("histogram needs at least one bin per axis".into()));
    }
    let out = Outputs::new(p, q, f)?;
    if let Some(reason) = out.loss_precondition(loss, true) {
        return Ok([
            BoundReport::not_applicable(BoundId::KlOub, reason.clone()),
            BoundReport::not_applicable(BoundId::KlLabelShift, reason),
        ]);
    }
    let quantized = FnPredictor(|x: &[f64]| quantize_to_bin(&f.predict(x), bins));
    let qp = p.pushforward(&quantized);
    let qq = q.pushforward(&quantized);
    let (hp, hq) = histograms(&qp, &qq, bins);
    let kl_x = symmetric_min_kl(&hp, &hq);
    let (_, ey) = output_terms(&qp, &qq, loss, OtMethod::Exact)?;
    let rp_q = output_risk(&qp, loss);
    let rq_q = output_risk(&qq, loss);
    let rhs_x = rp_q + loss.upper * (kl_x / 2.0).sqrt() + ey;

    let kl_y = symmetric_min_kl(&out.p.class_masses(), &out.q.class_masses());
    let eyh = prediction_entanglement_out(&out.p, &out.q, loss, OtMethod::Exact)?;
    let rp = output_risk(&out.p, loss);
    let rq = output_risk(&out.q, loss);
    let rhs_y = rp + loss.upper * (kl_y / 2.0).sqrt() + eyh;
    Ok([
        BoundReport::evaluate(
            BoundId::KlOub,
            rq_q,
            rhs_x,
            DEFAULT_TOLERANCE,
            format!("bins={bins};kl={kl_x:.6e};R_p={rp_q:.6e};E_y={ey:.6e}"),
        ),
        BoundReport::evaluate(
            BoundId::KlLabelShift,
            rq,
            rhs_y,
            DEFAULT_TOLERANCE,
            format!("kl={kl_y:.6e};R_p={rp:.6e};E_yhat={eyh:.6e}"),
        ),
    ])
}

/// Every model-level check that needs no chain or assumption level.
pub fn check_all<P: Predictor + ?Sized>(p: &EmpiricalJoint, q: &EmpiricalJoint, f: &P, loss: &LossSpec, kl_bins: usize) -> Result<Vec<BoundReport>> {
    let mut out = Vec::new();
    out.extend(check_risk_transfer_chain(p, q, f, loss)?);
    out.extend(check_oub_bounds(p, q, f, loss)?);
    out.push(check_cc_to_lje(p, q, f, loss)?);
    out.push(check_cc_oub_tightness(p, q, f, loss)?);
    let kappa_hat = cc_level_out(&p.pushforward(f), &q.pushforward(f), loss)?.kappa_hat;
    out.push(check_not_cc(p, q, f, loss, kappa_hat)?);
    out.extend(check_kappa_variants(p, q, f, loss)?);
    out.extend(check_kl_corollary(p, q, f, loss, kl_bins)?);
    Ok(out)
}
