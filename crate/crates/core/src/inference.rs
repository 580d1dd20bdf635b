//! Post-hoc logit adjustment at prediction time.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{argmax, softmax};
use crate::prior::ClassPrior;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub raw_logits: Vec<f64>,
    pub adjusted_scores: Vec<f64>,
    pub label: usize,
    /// Top adjusted score minus the runner-up.
    pub margin: f64,
}

/// Top-1 index (lowest index on ties) and its margin over the runner-up.
pub fn top_with_margin(scores: &[f64]) -> (usize, f64) {
    let top = argmax(scores);
    let runner =
        scores.iter().enumerate().filter(|&(i, _)| i != top).map(|(_, &s)| s).fold(f64::NEG_INFINITY, f64::max);
    (top, scores[top] - runner)
}

/// `scores[c] = logits[c] - tau * log prior[c]`.
pub fn adjusted_scores(logits: &[f64], prior: &ClassPrior, tau: f64) -> Result<Vec<f64>> {
    if prior.num_classes() != logits.len() {
        return Err(Error::DimensionMismatch { expected: logits.len(), got: prior.num_classes() });
    }
    Ok(logits.iter().zip(prior.log()).map(|(z, l)| z - tau * l).collect())
}

pub fn post_hoc_predict(logits_bal: &[f64], pi_b: &ClassPrior, tau3: f64) -> Result<Prediction> {
    let adjusted = adjusted_scores(logits_bal, pi_b, tau3)?;
    let (label, margin) = top_with_margin(&adjusted);
    Ok(Prediction { raw_logits: logits_bal.to_vec(), adjusted_scores: adjusted, label, margin })
}

/// Adjusted class probabilities, computed by reweighting the raw softmax:
/// `p(y|x) * pi_b(y)^-tau3`, renormalized.
pub fn adjusted_probs(logits_bal: &[f64], pi_b: &ClassPrior, tau3: f64) -> Result<Vec<f64>> {
    if pi_b.num_classes() != logits_bal.len() {
        return Err(Error::DimensionMismatch { expected: logits_bal.len(), got: pi_b.num_classes() });
    }
    let p = softmax(logits_bal);
    let mut w: Vec<f64> = p.iter().zip(pi_b.probs()).map(|(pc, pi)| pc * pi.powf(-tau3)).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    Ok(w)
}

/// Outcome of one argmax-robustness check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginCheck {
    pub margin: f64,
    /// `||log prior_a - log prior_b||_inf`.
    pub log_prior_gap: f64,
    /// `margin > 2 * tau * log_prior_gap`.
    pub premise: bool,
    /// Argmax under `prior_a` equals argmax under `prior_b`.
    pub same_argmax: bool,
}

impl MarginCheck {
    /// A violation is a satisfied premise with a flipped argmax.
    pub fn violated(&self) -> bool {
        self.premise && !self.same_argmax
    }
}

/// Compare argmax of `scores - tau * log prior` under two priors.
///
/// Covers both the inference-time adjustment (scores are balanced logits,
/// `tau = tau3`) and the alignment shift (scores are
/// `log p_std + tau2 * log pi_labeled`, `tau = tau2`), since both subtract a
/// scaled log-prior from a fixed score vector.
pub fn margin_robustness_check(
    scores: &[f64],
    prior_a: &ClassPrior,
    prior_b: &ClassPrior,
    tau: f64,
) -> Result<MarginCheck> {
    let sa = adjusted_scores(scores, prior_a, tau)?;
    let sb = adjusted_scores(scores, prior_b, tau)?;
    let (ya, margin) = top_with_margin(&sa);
    let (yb, _) = top_with_margin(&sb);
    let gap = prior_a.log().iter().zip(prior_b.log()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(MarginCheck { margin, log_prior_gap: gap, premise: margin > 2.0 * tau * gap, same_argmax: ya == yb })
}
