use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Floor applied before renormalizing so that every entry stays strictly
/// inside the simplex and `ln` is always finite.
pub const PROB_FLOOR: f64 = 1e-8;

/// A probability vector over `C` classes with strictly positive entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassPrior(Vec<f64>);

impl ClassPrior {
    /// Floor-clip at [`PROB_FLOOR`] and renormalize. Rejects empty, negative
    /// or non-finite input.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(invalid("class prior needs at least one class"));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(invalid("class prior entries must be finite and nonnegative"));
        }
        let mut v: Vec<f64> = probs.into_iter().map(|p| p.max(PROB_FLOOR)).collect();
        let s: f64 = v.iter().sum();
        v.iter_mut().for_each(|p| *p /= s);
        Ok(Self(v))
    }

    pub fn uniform(c: usize) -> Self {
        Self(vec![1.0 / c as f64; c])
    }

    /// Normalized class frequencies from integer counts.
    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        Self::new(counts.iter().map(|&n| n as f64).collect())
    }

    pub fn num_classes(&self) -> usize {
        self.0.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, c: usize) -> f64 {
        self.0[c]
    }

    /// Elementwise `ln`, clipped at the floor.
    pub fn log(&self) -> Vec<f64> {
        self.0.iter().map(|p| p.max(PROB_FLOOR).ln()).collect()
    }

    pub fn l1_distance(&self, other: &Self) -> f64 {
        l1(&self.0, &other.0)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for ClassPrior {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub(crate) fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}
