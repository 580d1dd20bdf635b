//! Central finite-difference checks for the loss terms and the composite
//! objective.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::losses::{
    aligned_labeled_loss, balanced_consistency, balanced_softmax_loss, cross_entropy, Hyperparams, LossGrad,
};
use crate::net::{DualNet, NetConfig};
use crate::prior::ClassPrior;
use crate::rng::{self, Rng};
use crate::trainer::{composite_loss, Algorithm, BatchViews, Targets};

pub const FD_STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;

/// `|a - n| / max(|a|, |n|, 1e-5)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-5)
}

/// Largest relative error between `f`'s gradient at `z` and central
/// differences.
pub fn logit_grad_error<F>(f: F, z: &[f64], h: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<LossGrad>,
{
    let g = f(z)?.grad;
    let mut worst = 0.0f64;
    let mut zp = z.to_vec();
    for k in 0..z.len() {
        zp[k] = z[k] + h;
        let up = f(&zp)?.loss;
        zp[k] = z[k] - h;
        let dn = f(&zp)?.loss;
        zp[k] = z[k];
        worst = worst.max(rel_err(g[k], (up - dn) / (2.0 * h)));
    }
    Ok(worst)
}

/// Largest relative error between the composite parameter gradient and
/// central differences over every parameter.
pub fn param_grad_error(
    net: &DualNet,
    algorithm: Algorithm,
    hyper: &Hyperparams,
    batch: &BatchViews,
    targets: &Targets,
    h: f64,
) -> Result<f64> {
    let (_, grads) = composite_loss(net, algorithm, hyper, batch, targets)?;
    let analytic: Vec<f64> = grads.param_slices().into_iter().flatten().copied().collect();
    let mut probe = net.clone();
    let mut worst = 0.0f64;
    let mut idx = 0;
    let n_slices = probe.param_slices().len();
    for s in 0..n_slices {
        let len = probe.param_slices()[s].len();
        for i in 0..len {
            let orig = probe.param_slices()[s][i];
            probe.param_slices_mut()[s][i] = orig + h;
            let up = composite_loss(&probe, algorithm, hyper, batch, targets)?.0.total()?;
            probe.param_slices_mut()[s][i] = orig - h;
            let dn = composite_loss(&probe, algorithm, hyper, batch, targets)?.0.total()?;
            probe.param_slices_mut()[s][i] = orig;
            worst = worst.max(rel_err(analytic[idx], (up - dn) / (2.0 * h)));
            idx += 1;
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub name: String,
    pub instances: usize,
    /// Instances at or above the tolerance.
    pub failures: usize,
    pub max_rel_err: f64,
    pub passed: bool,
}

fn random_prior(c: usize, r: &mut Rng) -> ClassPrior {
    let w: Vec<f64> = (0..c).map(|_| 0.05 + r.random::<f64>()).collect();
    ClassPrior::new(w).expect("positive weights")
}

fn random_logits(c: usize, r: &mut Rng) -> Vec<f64> {
    (0..c).map(|_| 2.0 * r.sample::<f64, _>(StandardNormal)).collect()
}

fn summarize(name: &str, errs: &[f64]) -> GradCheck {
    let max_rel_err = errs.iter().cloned().fold(0.0, f64::max);
    let failures = errs.iter().filter(|&&e| !(e < REL_TOL)).count();
    GradCheck { name: name.into(), instances: errs.len(), failures, max_rel_err, passed: failures == 0 }
}

/// Random small network, batch and frozen targets for the composite check.
pub fn composite_instance(r: &mut Rng) -> Result<(DualNet, BatchViews, Targets)> {
    let c = r.random_range(2..=5);
    let d = r.random_range(2..=4);
    let cfg = NetConfig { hidden: vec![r.random_range(3..=6), r.random_range(3..=6)], leaky_slope: 0.01 };
    let net = DualNet::new(d, c, &cfg, r)?;
    let b = r.random_range(2..=4);
    let u = r.random_range(2..=5);
    let views: Vec<Vec<f64>> = (0..b + 2 * u).map(|_| (0..d).map(|_| r.sample(StandardNormal)).collect()).collect();
    let labels = (0..b).map(|_| r.random_range(0..c)).collect();
    let targets = Targets {
        pi_l: random_prior(c, r),
        pi_b: random_prior(c, r),
        q: (0..u).map(|_| r.random_range(0..c)).collect(),
        mask: (0..u).map(|i| i == 0 || r.random_bool(0.5)).collect(),
        q_tilde: (0..u).map(|_| r.random_range(0..c)).collect(),
        psi: (0..u).map(|_| 2.0 * r.random::<f64>()).collect(),
    };
    Ok((net, BatchViews { views, labels, unlabeled: u }, targets))
}

/// Check each loss term on random logits and the composite objective on
/// random networks, `instances` times each.
pub fn run_gradient_checks(seed: u64, instances: usize) -> Result<Vec<GradCheck>> {
    let mut r = rng::substream(seed, "gradcheck");
    let mut errs: [Vec<f64>; 4] = Default::default();
    for _ in 0..instances {
        let c = r.random_range(2..=8);
        let z = random_logits(c, &mut r);
        let y = r.random_range(0..c);
        let pi_l = random_prior(c, &mut r);
        let pi_b = random_prior(c, &mut r);
        let tau2 = 3.0 * r.random::<f64>();
        let psi = 2.0 * r.random::<f64>();
        errs[0].push(logit_grad_error(|z| cross_entropy(z, y), &z, FD_STEP)?);
        errs[1].push(logit_grad_error(|z| balanced_softmax_loss(z, y, &pi_l), &z, FD_STEP)?);
        errs[2].push(logit_grad_error(|z| aligned_labeled_loss(z, y, &pi_l, &pi_b, tau2), &z, FD_STEP)?);
        errs[3].push(logit_grad_error(|z| balanced_consistency(z, y, psi), &z, FD_STEP)?);
    }
    let mut out = vec![
        summarize("consistency", &errs[0]),
        summarize("balanced_softmax", &errs[1]),
        summarize("aligned_labeled", &errs[2]),
        summarize("balanced_consistency", &errs[3]),
    ];
    let hyper = Hyperparams::default();
    for alg in [Algorithm::Decon, Algorithm::Fixmatch] {
        let mut e = Vec::with_capacity(instances);
        for _ in 0..instances {
            let (net, batch, targets) = composite_instance(&mut r)?;
            e.push(param_grad_error(&net, alg, &hyper, &batch, &targets, FD_STEP)?);
        }
        out.push(summarize(&format!("composite_{}", alg.name()), &e));
    }
    Ok(out)
}
