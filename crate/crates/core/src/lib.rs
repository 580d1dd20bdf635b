//! Dual-branch long-tailed semi-supervised learning on synthetic Gaussian
//! mixtures.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod datagen;
pub mod error;
pub mod gradcheck;
pub mod inference;
pub mod lemmas;
pub mod losses;
pub mod metrics;
pub mod net;
pub mod oracle;
pub mod prior;
pub mod priorest;
pub mod report;
pub mod rng;
pub mod trainer;

pub use datagen::{DatasetSpec, Datasets, GaussianMixture, Sample, Shape};
pub use error::{Error, Result};
pub use losses::{Hyperparams, LossBreakdown};
pub use metrics::{EvalReport, PseudoLabelRule};
pub use net::{AugmentConfig, Branch, DualNet, NetConfig};
pub use prior::ClassPrior;
pub use priorest::EmaPrior;
pub use report::{Checkpoint, MetricsLine};
pub use trainer::{Algorithm, RunConfig, RunOutput};
