//! Evaluation diagnostics: accuracy, per-class and head/tail P/R/F1,
//! pseudo-label accuracy, inter-branch and prior KL, and the weight gap.

use serde::{Deserialize, Serialize};

use crate::datagen::Sample;
use crate::error::{invalid, Error, Result};
use crate::inference::post_hoc_predict;
use crate::losses::weight_batch;
use crate::net::{argmax, softmax, Branch, DualNet};
use crate::prior::ClassPrior;

pub fn pseudo_label_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch { left: pred.len(), right: truth.len() });
    }
    if pred.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// `sum_c p_c ln(p_c / q_c)`; both priors are strictly positive.
pub fn kl_divergence(p: &ClassPrior, q: &ClassPrior) -> f64 {
    p.probs().iter().zip(q.probs()).map(|(a, b)| a * (a / b).ln()).sum::<f64>().max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsiGap {
    pub value: f64,
    /// One of the two sets was empty; `value` is the signed mean of the
    /// other (positive for correct-only, negative for incorrect-only).
    pub degenerate: bool,
}

/// Mean weight on correct pseudo-labels minus mean weight on incorrect ones.
pub fn psi_gap(weights: &[f64], correct: &[bool]) -> Result<PsiGap> {
    if weights.len() != correct.len() {
        return Err(Error::LengthMismatch { left: weights.len(), right: correct.len() });
    }
    let (mut sp, mut np, mut sn, mut nn) = (0.0, 0usize, 0.0, 0usize);
    for (&w, &ok) in weights.iter().zip(correct) {
        if ok {
            sp += w;
            np += 1;
        } else {
            sn += w;
            nn += 1;
        }
    }
    match (np, nn) {
        (0, 0) => Err(Error::BothEmpty),
        (_, 0) => Ok(PsiGap { value: sp / np as f64, degenerate: true }),
        (0, _) => Ok(PsiGap { value: -(sn / nn as f64), degenerate: true }),
        _ => Ok(PsiGap { value: sp / np as f64 - sn / nn as f64, degenerate: false }),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Confusion-matrix summary of hard predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub accuracy: f64,
    /// Mean per-class recall.
    pub balanced_accuracy: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    /// `confusion[truth][pred]`.
    pub confusion: Vec<Vec<usize>>,
}

impl Classification {
    pub fn new(pred: &[usize], truth: &[usize], c: usize) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::LengthMismatch { left: pred.len(), right: truth.len() });
        }
        if pred.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let mut confusion = vec![vec![0usize; c]; c];
        for (&p, &t) in pred.iter().zip(truth) {
            if p >= c || t >= c {
                return Err(invalid(format!("class index out of range for {c} classes")));
            }
            confusion[t][p] += 1;
        }
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let mut precision = Vec::with_capacity(c);
        let mut recall = Vec::with_capacity(c);
        let mut f1 = Vec::with_capacity(c);
        for k in 0..c {
            let tp = confusion[k][k];
            let predicted: usize = (0..c).map(|t| confusion[t][k]).sum();
            let actual: usize = confusion[k].iter().sum();
            let p = ratio(tp, predicted);
            let r = ratio(tp, actual);
            precision.push(p);
            recall.push(r);
            f1.push(if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 });
        }
        let correct: usize = (0..c).map(|k| confusion[k][k]).sum();
        let present: Vec<f64> = (0..c).filter(|&k| confusion[k].iter().sum::<usize>() > 0).map(|k| recall[k]).collect();
        let balanced_accuracy = present.iter().sum::<f64>() / present.len() as f64;
        Ok(Self { accuracy: ratio(correct, pred.len()), balanced_accuracy, precision, recall, f1, confusion })
    }

    pub fn group(&self, classes: &[usize]) -> GroupMetrics {
        if classes.is_empty() {
            return GroupMetrics::default();
        }
        let n = classes.len() as f64;
        let avg = |v: &[f64]| classes.iter().map(|&k| v[k]).sum::<f64>() / n;
        GroupMetrics { precision: avg(&self.precision), recall: avg(&self.recall), f1: avg(&self.f1) }
    }
}

/// Head = the `ceil(C/3)` classes with the most labeled samples, tail = the
/// `ceil(C/3)` with the fewest. Ties keep class order.
pub fn head_tail_groups(labeled_counts: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let c = labeled_counts.len();
    let k = c.div_ceil(3);
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| labeled_counts[b].cmp(&labeled_counts[a]).then(a.cmp(&b)));
    let head = order[..k].to_vec();
    let tail = order[c - k..].to_vec();
    (head, tail)
}

/// How the unlabeled pool's pseudo-labels and weights are formed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PseudoLabelRule {
    /// Corrected standard-branch labels weighted by the overlap score.
    Corrected { tau1: f64 },
    /// Plain standard-branch argmax weighted by confidence.
    Argmax,
}

/// Data the evaluator reads; the unlabeled truth is never seen by training.
#[derive(Debug, Clone, Copy)]
pub struct EvalData<'a> {
    pub test: &'a [Sample],
    pub unlabeled: &'a [Sample],
    pub unlabeled_truth: &'a [usize],
    pub labeled_counts: &'a [usize],
    pub unlabeled_prior: &'a ClassPrior,
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    /// Head whose (adjusted) scores form test predictions.
    pub branch: Branch,
    pub tau3: f64,
    pub pi_b: ClassPrior,
    pub pi_s: ClassPrior,
    pub rule: PseudoLabelRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tau3: f64,
    pub accuracy: f64,
    pub balanced_accuracy: f64,
    /// Accuracy of the same head without adjustment.
    pub accuracy_raw: f64,
    pub per_class_precision: Vec<f64>,
    pub per_class_recall: Vec<f64>,
    pub per_class_f1: Vec<f64>,
    pub head_group: GroupMetrics,
    pub tail_group: GroupMetrics,
    pub pseudo_acc: f64,
    /// KL between the branches' predicted unlabeled marginals, reported model.
    pub branch_kl: f64,
    /// The same statistic on the live network.
    pub branch_kl_live: f64,
    pub prior_kl: f64,
    pub psi_gap: f64,
    pub psi_gap_degenerate: bool,
    /// Predicted unlabeled marginal of each branch (reported model).
    pub marginal_std: Vec<f64>,
    pub marginal_bal: Vec<f64>,
    /// Predicted test marginal of the reported head.
    pub test_marginal: Vec<f64>,
}

/// One row of the prediction dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub id: usize,
    pub truth: Option<usize>,
    pub raw_argmax: usize,
    pub adjusted_argmax: usize,
    pub margin: f64,
}

pub fn predict_test(model: &DualNet, test: &[Sample], opts: &EvalOptions) -> Result<Vec<PredictionRow>> {
    test.iter()
        .enumerate()
        .map(|(id, s)| {
            let out = model.forward(&s.x)?;
            let z = out.logits(opts.branch);
            let p = post_hoc_predict(z, &opts.pi_b, opts.tau3)?;
            Ok(PredictionRow { id, truth: s.label, raw_argmax: argmax(z), adjusted_argmax: p.label, margin: p.margin })
        })
        .collect()
}

/// Mean softmax of each branch over `xs`: `(standard, balanced)`.
pub fn branch_marginals(net: &DualNet, xs: &[&[f64]]) -> Result<(ClassPrior, ClassPrior)> {
    let (outs, _) = net.forward_batch(xs)?;
    let p_std: Vec<Vec<f64>> = outs.iter().map(|o| softmax(&o.logits_std)).collect();
    let p_bal: Vec<Vec<f64>> = outs.iter().map(|o| softmax(&o.logits_bal)).collect();
    Ok((mean_rows(&p_std)?, mean_rows(&p_bal)?))
}

fn mean_rows(rows: &[Vec<f64>]) -> Result<ClassPrior> {
    let c = rows.first().ok_or(Error::EmptyBatch)?.len();
    let mut acc = vec![0.0; c];
    for r in rows {
        acc.iter_mut().zip(r).for_each(|(a, b)| *a += b);
    }
    ClassPrior::new(acc)
}

/// Score `model` on the test set; pseudo-labels come from `live` on the
/// unlabeled pool.
pub fn evaluate(model: &DualNet, live: &DualNet, data: &EvalData<'_>, opts: &EvalOptions) -> Result<EvalReport> {
    if data.test.is_empty() {
        return Err(invalid("empty test set"));
    }
    let c = model.num_classes();
    let rows = predict_test(model, data.test, opts)?;
    let truth: Vec<usize> = rows
        .iter()
        .map(|r| r.truth.ok_or_else(|| Error::Malformed("test sample without label".into())))
        .collect::<Result<_>>()?;
    let adj: Vec<usize> = rows.iter().map(|r| r.adjusted_argmax).collect();
    let raw: Vec<usize> = rows.iter().map(|r| r.raw_argmax).collect();
    let cls = Classification::new(&adj, &truth, c)?;
    let raw_cls = Classification::new(&raw, &truth, c)?;
    let mut test_marginal = vec![0.0; c];
    adj.iter().for_each(|&k| test_marginal[k] += 1.0 / adj.len() as f64);
    let (head, tail) = head_tail_groups(data.labeled_counts);

    let (mut pseudo_acc, mut branch_kl, mut branch_kl_live) = (f64::NAN, f64::NAN, f64::NAN);
    let mut psi = PsiGap { value: f64::NAN, degenerate: true };
    let mut marginal_std = vec![f64::NAN; c];
    let mut marginal_bal = vec![f64::NAN; c];
    if !data.unlabeled.is_empty() {
        let xs: Vec<&[f64]> = data.unlabeled.iter().map(|s| s.x.as_slice()).collect();
        let (outs, _) = live.forward_batch(&xs)?;
        let std_logits: Vec<Vec<f64>> = outs.iter().map(|o| o.logits_std.clone()).collect();
        let p_std: Vec<Vec<f64>> = std_logits.iter().map(|z| softmax(z)).collect();
        let p_bal: Vec<Vec<f64>> = outs.iter().map(|o| softmax(&o.logits_bal)).collect();
        branch_kl_live = kl_divergence(&mean_rows(&p_std)?, &mean_rows(&p_bal)?);
        let (labels, weights): (Vec<usize>, Vec<f64>) = match opts.rule {
            PseudoLabelRule::Corrected { tau1 } => {
                let (recs, _) = weight_batch(&std_logits, &opts.pi_s, tau1, 1.0)?;
                recs.into_iter().map(|r| (r.q_tilde, r.psi)).unzip()
            }
            PseudoLabelRule::Argmax => p_std.iter().map(|p| (argmax(p), p[argmax(p)])).unzip(),
        };
        pseudo_acc = pseudo_label_accuracy(&labels, data.unlabeled_truth)?;
        let correct: Vec<bool> = labels.iter().zip(data.unlabeled_truth).map(|(a, b)| a == b).collect();
        psi = psi_gap(&weights, &correct)?;
        let (ms, mb) = branch_marginals(model, &xs)?;
        branch_kl = kl_divergence(&ms, &mb);
        marginal_std = ms.into_inner();
        marginal_bal = mb.into_inner();
    }
    Ok(EvalReport {
        tau3: opts.tau3,
        accuracy: cls.accuracy,
        balanced_accuracy: cls.balanced_accuracy,
        accuracy_raw: raw_cls.accuracy,
        head_group: cls.group(&head),
        tail_group: cls.group(&tail),
        per_class_precision: cls.precision,
        per_class_recall: cls.recall,
        per_class_f1: cls.f1,
        pseudo_acc,
        branch_kl,
        branch_kl_live,
        prior_kl: kl_divergence(data.unlabeled_prior, &opts.pi_b),
        psi_gap: psi.value,
        psi_gap_degenerate: psi.degenerate,
        marginal_std,
        marginal_bal,
        test_marginal,
    })
}
