//! Exponential-moving-average class-prior estimates.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::prior::ClassPrior;

pub const DEFAULT_HISTORY_CAP: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmaPrior {
    value: ClassPrior,
    momentum: f64,
    step: u64,
    /// Recent batch means, kept only when a cap is set.
    #[serde(skip)]
    history: VecDeque<Vec<f64>>,
    #[serde(skip)]
    history_cap: usize,
}

impl EmaPrior {
    pub fn new(init: ClassPrior, momentum: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(invalid(format!("EMA momentum must lie in [0, 1), got {momentum}")));
        }
        Ok(Self { value: init, momentum, step: 0, history: VecDeque::new(), history_cap: 0 })
    }

    pub fn uniform(c: usize, momentum: f64) -> Result<Self> {
        Self::new(ClassPrior::uniform(c), momentum)
    }

    /// Record up to `cap` most recent batch means.
    pub fn with_history(mut self, cap: usize) -> Self {
        self.history_cap = cap;
        self
    }

    pub fn value(&self) -> &ClassPrior {
        &self.value
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn history(&self) -> impl Iterator<Item = &[f64]> {
        self.history.iter().map(|v| v.as_slice())
    }

    /// `value <- m * value + (1 - m) * batch_mean`.
    pub fn update(&mut self, batch_mean: &ClassPrior) -> Result<()> {
        if batch_mean.num_classes() != self.value.num_classes() {
            return Err(Error::DimensionMismatch { expected: self.value.num_classes(), got: batch_mean.num_classes() });
        }
        let m = self.momentum;
        let next: Vec<f64> =
            self.value.probs().iter().zip(batch_mean.probs()).map(|(v, p)| m * v + (1.0 - m) * p).collect();
        self.value = ClassPrior::new(next)?;
        self.step += 1;
        if self.history_cap > 0 {
            if self.history.len() == self.history_cap {
                self.history.pop_front();
            }
            self.history.push_back(batch_mean.probs().to_vec());
        }
        Ok(())
    }
}

/// Functional form of [`EmaPrior::update`].
pub fn ema_update(prior: &EmaPrior, batch_mean: &ClassPrior) -> Result<EmaPrior> {
    let mut next = prior.clone();
    next.update(batch_mean)?;
    Ok(next)
}

fn mean_of<'a>(vectors: impl IntoIterator<Item = &'a [f64]>) -> Result<ClassPrior> {
    let mut acc: Vec<f64> = Vec::new();
    let mut n = 0usize;
    for v in vectors {
        if acc.is_empty() {
            acc = vec![0.0; v.len()];
        } else if v.len() != acc.len() {
            return Err(Error::DimensionMismatch { expected: acc.len(), got: v.len() });
        }
        acc.iter_mut().zip(v).for_each(|(a, b)| *a += b);
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    acc.iter_mut().for_each(|a| *a /= n as f64);
    ClassPrior::new(acc)
}

/// Mean balanced-branch prediction over the labeled and unlabeled samples
/// of one step, each vector weighted equally.
pub fn batch_mean_balanced<L: AsRef<[f64]>, U: AsRef<[f64]>>(labeled: &[L], unlabeled: &[U]) -> Result<ClassPrior> {
    mean_of(labeled.iter().map(|v| v.as_ref()).chain(unlabeled.iter().map(|v| v.as_ref())))
}

/// Mean standard-branch prediction over the unlabeled samples of one step.
pub fn batch_mean_standard<U: AsRef<[f64]>>(unlabeled: &[U]) -> Result<ClassPrior> {
    mean_of(unlabeled.iter().map(|v| v.as_ref()))
}
