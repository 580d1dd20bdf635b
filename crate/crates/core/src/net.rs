//! Shared-trunk classifier with a standard head and a balanced head.
//!
//! Backpropagation is hand-written: `forward_batch` records a [`Tape`] of
//! per-sample activations and `backward` consumes it together with the
//! per-head logit gradients produced by the loss functions.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::Rng;

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|z| (z - mx).exp()).collect();
    let s: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= s);
    out
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = mx + logits.iter().map(|z| (z - mx).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Standard,
    Balanced,
}

/// Fully connected layer, weights row-major `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self { in_dim, out_dim, weight: vec![0.0; in_dim * out_dim], bias: vec![0.0; out_dim] }
    }

    /// Uniform in `[-bound, bound]` with `bound = gain / sqrt(fan_in)`; zero bias.
    fn init(in_dim: usize, out_dim: usize, gain: f64, rng: &mut Rng) -> Self {
        let bound = gain / (in_dim as f64).sqrt();
        let weight = (0..in_dim * out_dim).map(|_| rng.random_range(-bound..=bound)).collect();
        Self { in_dim, out_dim, weight, bias: vec![0.0; out_dim] }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        (0..self.out_dim)
            .map(|o| {
                let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
                self.bias[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }

    /// Accumulate parameter gradients into `grad` and return dL/dx.
    fn backward(&self, x: &[f64], dout: &[f64], grad: &mut Dense) -> Vec<f64> {
        let mut dx = vec![0.0; self.in_dim];
        for o in 0..self.out_dim {
            let g = dout[o];
            if g == 0.0 {
                continue;
            }
            grad.bias[o] += g;
            let base = o * self.in_dim;
            for i in 0..self.in_dim {
                grad.weight[base + i] += g * x[i];
                dx[i] += g * self.weight[base + i];
            }
        }
        dx
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub hidden: Vec<usize>,
    pub leaky_slope: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self { hidden: vec![32, 32], leaky_slope: 0.01 }
    }
}

/// Logits of both heads for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchOutputs {
    pub logits_std: Vec<f64>,
    pub logits_bal: Vec<f64>,
}

impl BranchOutputs {
    pub fn logits(&self, branch: Branch) -> &[f64] {
        match branch {
            Branch::Standard => &self.logits_std,
            Branch::Balanced => &self.logits_bal,
        }
    }
}

#[derive(Debug, Clone)]
struct TapeEntry {
    /// Input to each trunk layer, followed by the trunk output.
    acts: Vec<Vec<f64>>,
    /// Pre-activation of each trunk layer.
    pre: Vec<Vec<f64>>,
}

/// Activations cached by [`DualNet::forward_batch`] for one backward pass.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    entries: Vec<TapeEntry>,
}

impl Tape {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Shared leaky-rectifier trunk feeding two linear heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualNet {
    pub trunk: Vec<Dense>,
    pub head_std: Dense,
    pub head_bal: Dense,
    pub leaky_slope: f64,
}

impl DualNet {
    pub fn new(input_dim: usize, num_classes: usize, cfg: &NetConfig, rng: &mut Rng) -> Result<Self> {
        if input_dim == 0 || num_classes < 2 {
            return Err(invalid("net needs input_dim >= 1 and num_classes >= 2"));
        }
        if cfg.hidden.contains(&0) {
            return Err(invalid("hidden widths must be positive"));
        }
        let mut trunk = Vec::with_capacity(cfg.hidden.len());
        let mut prev = input_dim;
        for &h in &cfg.hidden {
            trunk.push(Dense::init(prev, h, 6f64.sqrt(), rng));
            prev = h;
        }
        let head_std = Dense::init(prev, num_classes, 1.0, rng);
        let head_bal = Dense::init(prev, num_classes, 1.0, rng);
        Ok(Self { trunk, head_std, head_bal, leaky_slope: cfg.leaky_slope })
    }

    /// Same architecture, every parameter zero.
    pub fn zeros_like(&self) -> Self {
        let z = |d: &Dense| Dense::zeros(d.in_dim, d.out_dim);
        Self {
            trunk: self.trunk.iter().map(z).collect(),
            head_std: z(&self.head_std),
            head_bal: z(&self.head_bal),
            leaky_slope: self.leaky_slope,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.trunk.first().map_or(self.head_std.in_dim, |l| l.in_dim)
    }

    pub fn num_classes(&self) -> usize {
        self.head_std.out_dim
    }

    fn leaky(&self, z: f64) -> f64 {
        if z > 0.0 {
            z
        } else {
            self.leaky_slope * z
        }
    }

    fn trunk_forward(&self, x: &[f64]) -> TapeEntry {
        let mut acts = Vec::with_capacity(self.trunk.len() + 1);
        let mut pre = Vec::with_capacity(self.trunk.len());
        let mut h = x.to_vec();
        for layer in &self.trunk {
            let z = layer.forward(&h);
            let a = z.iter().map(|&v| self.leaky(v)).collect();
            acts.push(h);
            pre.push(z);
            h = a;
        }
        acts.push(h);
        TapeEntry { acts, pre }
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), got: x.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network input"));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<BranchOutputs> {
        self.check_input(x)?;
        let e = self.trunk_forward(x);
        let feat = e.acts.last().expect("trunk output");
        Ok(BranchOutputs { logits_std: self.head_std.forward(feat), logits_bal: self.head_bal.forward(feat) })
    }

    pub fn forward_batch<X: AsRef<[f64]>>(&self, xs: &[X]) -> Result<(Vec<BranchOutputs>, Tape)> {
        let mut outs = Vec::with_capacity(xs.len());
        let mut entries = Vec::with_capacity(xs.len());
        for x in xs {
            let x = x.as_ref();
            self.check_input(x)?;
            let e = self.trunk_forward(x);
            let feat = e.acts.last().expect("trunk output");
            outs.push(BranchOutputs {
                logits_std: self.head_std.forward(feat),
                logits_bal: self.head_bal.forward(feat),
            });
            entries.push(e);
        }
        Ok((outs, Tape { entries }))
    }

    /// Parameter gradients given dL/dlogits for each head and each taped
    /// sample. Contributions from both heads are summed into the trunk.
    pub fn backward(&self, tape: &Tape, up_std: &[Vec<f64>], up_bal: &[Vec<f64>]) -> Result<DualNet> {
        if tape.is_empty() {
            return Err(Error::BackwardBeforeForward);
        }
        for up in [up_std, up_bal] {
            if up.len() != tape.len() {
                return Err(Error::LengthMismatch { left: up.len(), right: tape.len() });
            }
            if let Some(bad) = up.iter().find(|g| g.len() != self.num_classes()) {
                return Err(Error::DimensionMismatch { expected: self.num_classes(), got: bad.len() });
            }
        }
        let mut grad = self.zeros_like();
        for (k, e) in tape.entries.iter().enumerate() {
            let feat = e.acts.last().expect("trunk output");
            let mut dh = self.head_std.backward(feat, &up_std[k], &mut grad.head_std);
            let dh_bal = self.head_bal.backward(feat, &up_bal[k], &mut grad.head_bal);
            dh.iter_mut().zip(&dh_bal).for_each(|(a, b)| *a += b);
            for l in (0..self.trunk.len()).rev() {
                let dz: Vec<f64> =
                    dh.iter().zip(&e.pre[l]).map(|(g, z)| if *z > 0.0 { *g } else { self.leaky_slope * g }).collect();
                dh = self.trunk[l].backward(&e.acts[l], &dz, &mut grad.trunk[l]);
            }
        }
        Ok(grad)
    }

    fn layers(&self) -> Vec<(String, &Dense)> {
        let mut v: Vec<(String, &Dense)> =
            self.trunk.iter().enumerate().map(|(i, l)| (format!("trunk.{i}"), l)).collect();
        v.push(("head_std".into(), &self.head_std));
        v.push(("head_bal".into(), &self.head_bal));
        v
    }

    fn layers_mut(&mut self) -> Vec<&mut Dense> {
        let mut v: Vec<&mut Dense> = self.trunk.iter_mut().collect();
        v.push(&mut self.head_std);
        v.push(&mut self.head_bal);
        v
    }

    /// Flat parameter slices in a fixed order (weights then bias per layer).
    pub fn param_slices(&self) -> Vec<&[f64]> {
        self.layers().into_iter().flat_map(|(_, l)| [&l.weight[..], &l.bias[..]]).collect()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers_mut().into_iter().flat_map(|l| [&mut l.weight[..], &mut l.bias[..]]).collect()
    }

    pub fn num_params(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    pub fn same_shape(&self, other: &DualNet) -> bool {
        let a = self.layers();
        let b = other.layers();
        a.len() == b.len() && a.iter().zip(&b).all(|((_, x), (_, y))| x.in_dim == y.in_dim && x.out_dim == y.out_dim)
    }

    /// Apply `f(self_param, other_param)` to every aligned coordinate.
    pub fn zip_apply(&mut self, other: &DualNet, mut f: impl FnMut(&mut f64, f64)) -> Result<()> {
        if !self.same_shape(other) {
            return Err(invalid("parameter shapes differ"));
        }
        for (dst, src) in self.param_slices_mut().into_iter().zip(other.param_slices()) {
            dst.iter_mut().zip(src).for_each(|(a, &b)| f(a, b));
        }
        Ok(())
    }

    pub fn to_named_tensors(&self) -> Vec<NamedTensor> {
        let mut out = Vec::new();
        for (name, l) in self.layers() {
            out.push(NamedTensor {
                name: format!("{name}.weight"),
                shape: vec![l.out_dim, l.in_dim],
                data: l.weight.clone(),
            });
            out.push(NamedTensor { name: format!("{name}.bias"), shape: vec![l.out_dim], data: l.bias.clone() });
        }
        out
    }

    pub fn from_named_tensors(tensors: &[NamedTensor], leaky_slope: f64) -> Result<Self> {
        let find = |name: &str| {
            tensors.iter().find(|t| t.name == name).ok_or_else(|| Error::Malformed(format!("missing tensor `{name}`")))
        };
        let layer = |name: &str| -> Result<Dense> {
            let w = find(&format!("{name}.weight"))?;
            let b = find(&format!("{name}.bias"))?;
            let [out_dim, in_dim] = w.shape[..] else {
                return Err(Error::Malformed(format!("`{name}.weight` is not 2-d")));
            };
            if w.data.len() != out_dim * in_dim || b.data.len() != out_dim || b.shape != [out_dim] {
                return Err(Error::Malformed(format!("`{name}` tensor shapes are inconsistent")));
            }
            Ok(Dense { in_dim, out_dim, weight: w.data.clone(), bias: b.data.clone() })
        };
        let n_trunk = tensors.iter().filter(|t| t.name.starts_with("trunk.") && t.name.ends_with(".weight")).count();
        let trunk = (0..n_trunk).map(|i| layer(&format!("trunk.{i}"))).collect::<Result<Vec<_>>>()?;
        let net = Self { trunk, head_std: layer("head_std")?, head_bal: layer("head_bal")?, leaky_slope };
        let mut prev = net.input_dim();
        for l in &net.trunk {
            if l.in_dim != prev {
                return Err(Error::Malformed("trunk layer dimensions do not chain".into()));
            }
            prev = l.out_dim;
        }
        if net.head_std.in_dim != prev || net.head_bal.in_dim != prev || net.head_std.out_dim != net.head_bal.out_dim {
            return Err(Error::Malformed("head dimensions do not match trunk".into()));
        }
        Ok(net)
    }
}

// ---- augmentation -------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strength {
    Weak,
    Strong,
}

/// Vector-space stand-in for weak/strong image augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub sigma_weak: f64,
    pub sigma_strong: f64,
    pub dropout_frac: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { sigma_weak: 0.1, sigma_strong: 0.5, dropout_frac: 0.1 }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        Self { sigma_weak: 0.0, sigma_strong: 0.0, dropout_frac: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_weak >= 0.0) || !(self.sigma_strong >= self.sigma_weak) {
            return Err(invalid("need 0 <= sigma_weak <= sigma_strong"));
        }
        if !(0.0..1.0).contains(&self.dropout_frac) {
            return Err(invalid("dropout_frac must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Weak: additive `N(0, sigma_weak^2)` noise. Strong: `N(0, sigma_strong^2)`
/// noise, then each coordinate is zeroed with probability `dropout_frac`.
pub fn augment(x: &[f64], cfg: &AugmentConfig, strength: Strength, rng: &mut Rng) -> Vec<f64> {
    let sigma = match strength {
        Strength::Weak => cfg.sigma_weak,
        Strength::Strong => cfg.sigma_strong,
    };
    let mut out: Vec<f64> = x
        .iter()
        .map(|&v| {
            if sigma > 0.0 {
                let z: f64 = rng.sample(StandardNormal);
                v + sigma * z
            } else {
                v
            }
        })
        .collect();
    if strength == Strength::Strong && cfg.dropout_frac > 0.0 {
        for v in out.iter_mut() {
            if rng.random::<f64>() < cfg.dropout_frac {
                *v = 0.0;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn small_net(seed: u64) -> DualNet {
        let cfg = NetConfig { hidden: vec![5, 4], leaky_slope: 0.01 };
        DualNet::new(3, 4, &cfg, &mut rng::from_seed(seed)).unwrap()
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0; 4]), vec![0.25; 4]);
        let p = softmax(&[1f64.ln(), 2f64.ln(), 3f64.ln()]);
        for (a, b) in p.iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert!((a - b).abs() < 1e-15);
        }
        let z = [0.3, -1.2, 2.0];
        let shifted: Vec<f64> = z.iter().map(|v| v + 123.0).collect();
        for (a, b) in softmax(&z).iter().zip(softmax(&shifted)) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(softmax(&[1000.0, -1000.0]).iter().all(|p| p.is_finite()));
    }

    #[test]
    fn zero_heads_give_zero_logits() {
        let mut net = small_net(0);
        net.head_std = Dense::zeros(4, 4);
        net.head_bal = Dense::zeros(4, 4);
        let out = net.forward(&[0.5, -1.0, 2.0]).unwrap();
        assert!(out.logits_std.iter().chain(&out.logits_bal).all(|&v| v == 0.0));
    }

    #[test]
    fn forward_deterministic_and_dim_checked() {
        let net = small_net(1);
        let x = [0.1, 0.2, 0.3];
        assert_eq!(net.forward(&x).unwrap(), net.forward(&x).unwrap());
        let s: f64 = softmax(&net.forward(&x).unwrap().logits_std).iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert!(matches!(net.forward(&[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn backward_structure() {
        let net = small_net(2);
        assert!(matches!(net.backward(&Tape::default(), &[], &[]), Err(Error::BackwardBeforeForward)));
        let (_, tape) = net.forward_batch(&[vec![0.3, -0.7, 1.1]]).unwrap();
        let z = vec![vec![0.0; 4]];
        let g = net.backward(&tape, &z, &z).unwrap();
        assert!(g.param_slices().iter().all(|s| s.iter().all(|&v| v == 0.0)));
        let up = vec![vec![0.2, -0.1, 0.4, -0.5]];
        let g = net.backward(&tape, &up, &z).unwrap();
        assert!(g.head_bal.weight.iter().chain(&g.head_bal.bias).all(|&v| v == 0.0));
        assert!(g.trunk[0].weight.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn heads_are_independent() {
        let net = small_net(3);
        let x = [0.4, 0.1, -0.9];
        let base = net.forward(&x).unwrap();
        let mut p = net.clone();
        p.head_bal.weight.iter_mut().for_each(|w| *w += 0.5);
        let out = p.forward(&x).unwrap();
        assert_eq!(out.logits_std, base.logits_std);
        assert_ne!(out.logits_bal, base.logits_bal);
        let mut q = net.clone();
        q.head_std.bias[0] += 1.0;
        assert_eq!(q.forward(&x).unwrap().logits_bal, base.logits_bal);
    }

    #[test]
    fn named_tensor_round_trip_is_exact() {
        let net = small_net(4);
        let json = serde_json::to_string(&net.to_named_tensors()).unwrap();
        let back: Vec<NamedTensor> = serde_json::from_str(&json).unwrap();
        assert_eq!(DualNet::from_named_tensors(&back, net.leaky_slope).unwrap(), net);
    }

    #[test]
    fn augment_identity_and_bounds() {
        let mut r = rng::from_seed(0);
        let x = vec![1.0, -2.0, 3.5];
        assert_eq!(augment(&x, &AugmentConfig::none(), Strength::Strong, &mut r), x);
        let bad = AugmentConfig { dropout_frac: 1.0, ..AugmentConfig::default() };
        assert!(bad.validate().is_err());
        let inverted = AugmentConfig { sigma_weak: 0.5, sigma_strong: 0.1, dropout_frac: 0.0 };
        assert!(inverted.validate().is_err());
    }

    #[test]
    fn weak_noise_std() {
        let mut r = rng::from_seed(11);
        let cfg = AugmentConfig { sigma_weak: 0.1, sigma_strong: 0.1, dropout_frac: 0.0 };
        let n = 10_000;
        let draws: Vec<f64> = (0..n).map(|_| augment(&[0.0], &cfg, Strength::Weak, &mut r)[0]).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let sd = (draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!((sd - 0.1).abs() < 0.005, "sd = {sd}");
    }
}
