//! The four loss terms of the dual-branch objective, cross-branch
//! pseudo-label correction, and overlap-based importance weights.
//!
//! Every loss returns its value together with the gradient with respect to
//! the logits it consumes. Pseudo-labels, masks and weights are constants
//! as far as differentiation is concerned.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::net::{argmax, log_softmax, softmax};
use crate::prior::ClassPrior;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    /// Pseudo-label correction intensity.
    pub tau1: f64,
    /// Alignment intensity on the standard branch's labeled loss.
    pub tau2: f64,
    /// Post-hoc adjustment intensity at inference.
    pub tau3: f64,
    /// Confidence threshold of the standard-branch consistency mask.
    pub rho: f64,
    /// EMA momentum of both prior estimates.
    pub m: f64,
    /// Labeled batch size.
    pub batch_size: usize,
    /// Unlabeled-to-labeled batch ratio.
    pub mu: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self { tau1: 1.0, tau2: 2.0, tau3: 1.0, rho: 0.95, m: 0.99, batch_size: 32, mu: 2.0 }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau1 >= 0.0 && self.tau2 >= 0.0 && self.tau3 >= 0.0) {
            return Err(invalid("tau1, tau2, tau3 must be >= 0"));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(invalid("rho must lie in (0, 1]"));
        }
        if !(0.0..1.0).contains(&self.m) {
            return Err(invalid("m must lie in [0, 1)"));
        }
        if self.batch_size == 0 || !(self.mu > 0.0) {
            return Err(invalid("batch_size must be >= 1 and mu > 0"));
        }
        Ok(())
    }

    /// Unlabeled batch size `round(mu * B)`, at least one.
    pub fn unlabeled_batch(&self) -> usize {
        ((self.mu * self.batch_size as f64).round() as usize).max(1)
    }
}

/// A scalar loss and its gradient with respect to one logit vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
}

impl LossGrad {
    pub fn zero(c: usize) -> Self {
        Self { loss: 0.0, grad: vec![0.0; c] }
    }

    pub fn scaled(mut self, k: f64) -> Self {
        self.loss *= k;
        self.grad.iter_mut().for_each(|g| *g *= k);
        self
    }
}

fn check_class(y: usize, c: usize) -> Result<()> {
    if y >= c {
        return Err(invalid(format!("class {y} out of range for {c} classes")));
    }
    Ok(())
}

fn check_prior(p: &ClassPrior, c: usize) -> Result<()> {
    if p.num_classes() != c {
        return Err(Error::DimensionMismatch { expected: c, got: p.num_classes() });
    }
    Ok(())
}

/// Cross-entropy of `softmax(logits)` against class `y`.
pub fn cross_entropy(logits: &[f64], y: usize) -> Result<LossGrad> {
    check_class(y, logits.len())?;
    let loss = -log_softmax(logits)[y];
    let mut grad = softmax(logits);
    grad[y] -= 1.0;
    Ok(LossGrad { loss, grad })
}

fn shifted(logits: &[f64], shift: &[f64]) -> Vec<f64> {
    logits.iter().zip(shift).map(|(z, s)| z + s).collect()
}

/// Cross-entropy on `logits + log(pi_labeled)`.
pub fn balanced_softmax_loss(logits_bal: &[f64], y: usize, pi_labeled: &ClassPrior) -> Result<LossGrad> {
    check_prior(pi_labeled, logits_bal.len())?;
    cross_entropy(&shifted(logits_bal, &pi_labeled.log()), y)
}

/// `tau2 * (log pi_labeled - log pi_b)`, the alignment offset.
pub fn alignment_offset(pi_labeled: &ClassPrior, pi_b: &ClassPrior, tau2: f64) -> Vec<f64> {
    pi_labeled.log().iter().zip(pi_b.log()).map(|(a, b)| tau2 * (a - b)).collect()
}

/// Cross-entropy on standard-branch logits shifted towards the balanced
/// branch's prior estimate.
pub fn aligned_labeled_loss(
    logits_std: &[f64],
    y: usize,
    pi_labeled: &ClassPrior,
    pi_b: &ClassPrior,
    tau2: f64,
) -> Result<LossGrad> {
    check_prior(pi_labeled, logits_std.len())?;
    check_prior(pi_b, logits_std.len())?;
    cross_entropy(&shifted(logits_std, &alignment_offset(pi_labeled, pi_b, tau2)), y)
}

/// Thresholded consistency term on the standard branch.
#[derive(Debug, Clone, PartialEq)]
pub struct Consistency {
    pub loss: LossGrad,
    pub mask: bool,
    pub pseudo_label: usize,
    pub confidence: f64,
}

/// Hard pseudo-label from the weak view, cross-entropy on the strong view,
/// masked unless the weak-view confidence reaches `rho`.
pub fn standard_consistency(logits_weak: &[f64], logits_strong: &[f64], rho: f64) -> Result<Consistency> {
    if logits_weak.len() != logits_strong.len() {
        return Err(Error::DimensionMismatch { expected: logits_weak.len(), got: logits_strong.len() });
    }
    let p = softmax(logits_weak);
    let q = argmax(&p);
    let confidence = p[q];
    let mask = confidence >= rho;
    let loss = if mask { cross_entropy(logits_strong, q)? } else { LossGrad::zero(logits_strong.len()) };
    Ok(Consistency { loss, mask, pseudo_label: q, confidence })
}

/// Corrected pseudo-label and distribution: `softmax(f - tau1 * log pi_s)`.
pub fn plc_pseudo_label(logits_std_weak: &[f64], pi_s: &ClassPrior, tau1: f64) -> Result<(usize, Vec<f64>)> {
    check_prior(pi_s, logits_std_weak.len())?;
    let adj: Vec<f64> = logits_std_weak.iter().zip(pi_s.log()).map(|(z, l)| z - tau1 * l).collect();
    Ok((argmax(&adj), softmax(&adj)))
}

/// `eta = max_c p_pre[c] * p_plc[c]` and `psi = gamma_t * eta`.
pub fn overlap_weight(p_pre: &[f64], p_plc: &[f64], gamma_t: f64) -> Result<(f64, f64)> {
    if p_pre.len() != p_plc.len() {
        return Err(Error::DimensionMismatch { expected: p_pre.len(), got: p_plc.len() });
    }
    let eta = p_pre.iter().zip(p_plc).map(|(a, b)| a * b).fold(0.0, f64::max);
    Ok((eta, gamma_t * eta))
}

/// `sum(confidences) / sum(etas)` over one unlabeled batch.
pub fn gamma_scale(confidences: &[f64], etas: &[f64]) -> Result<f64> {
    if confidences.len() != etas.len() {
        return Err(Error::LengthMismatch { left: confidences.len(), right: etas.len() });
    }
    if confidences.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let den: f64 = etas.iter().sum();
    if !(den > 0.0) {
        return Err(Error::DegenerateBatch);
    }
    Ok(confidences.iter().sum::<f64>() / den)
}

/// Per-unlabeled-sample record of the correction step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedPseudoLabel {
    pub p_pre: Vec<f64>,
    pub p_plc: Vec<f64>,
    pub q_tilde: usize,
    pub eta: f64,
    pub psi: f64,
}

/// Correct one batch of standard-branch weak-view logits and weight the
/// corrected labels. A batch whose overlap scores all vanish keeps
/// `prev_gamma`.
pub fn weight_batch<L: AsRef<[f64]>>(
    logits_std_weak: &[L],
    pi_s: &ClassPrior,
    tau1: f64,
    prev_gamma: f64,
) -> Result<(Vec<WeightedPseudoLabel>, f64)> {
    let mut recs = Vec::with_capacity(logits_std_weak.len());
    let mut confs = Vec::with_capacity(logits_std_weak.len());
    for z in logits_std_weak {
        let z = z.as_ref();
        let p_pre = softmax(z);
        let (q_tilde, p_plc) = plc_pseudo_label(z, pi_s, tau1)?;
        let (eta, _) = overlap_weight(&p_pre, &p_plc, 0.0)?;
        confs.push(p_pre[argmax(&p_pre)]);
        recs.push(WeightedPseudoLabel { p_pre, p_plc, q_tilde, eta, psi: 0.0 });
    }
    let etas: Vec<f64> = recs.iter().map(|r| r.eta).collect();
    let gamma = match gamma_scale(&confs, &etas) {
        Ok(g) => g,
        Err(Error::DegenerateBatch) => prev_gamma,
        Err(e) => return Err(e),
    };
    recs.iter_mut().for_each(|r| r.psi = gamma * r.eta);
    Ok((recs, gamma))
}

/// `psi * CE(logits_bal_strong, q_tilde)`.
pub fn balanced_consistency(logits_bal_strong: &[f64], q_tilde: usize, psi: f64) -> Result<LossGrad> {
    if !(psi >= 0.0) {
        return Err(invalid("importance weight must be >= 0"));
    }
    if psi == 0.0 {
        check_class(q_tilde, logits_bal_strong.len())?;
        return Ok(LossGrad::zero(logits_bal_strong.len()));
    }
    Ok(cross_entropy(logits_bal_strong, q_tilde)?.scaled(psi))
}

/// Batch-mean values of the four terms.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_labeled: f64,
    pub l_con: f64,
    pub l_b_labeled: f64,
    pub l_b_con: f64,
}

impl LossBreakdown {
    pub fn total(&self) -> Result<f64> {
        total_loss(self)
    }
}

/// Unweighted sum of the four terms.
pub fn total_loss(parts: &LossBreakdown) -> Result<f64> {
    let terms = [parts.l_labeled, parts.l_con, parts.l_b_labeled, parts.l_b_con];
    if terms.iter().any(|t| !t.is_finite()) {
        return Err(Error::NonFinite("loss term"));
    }
    Ok(terms.iter().sum())
}
