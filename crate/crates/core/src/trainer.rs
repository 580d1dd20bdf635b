//! The training loop: batch assembly, prior updates, the four-term loss,
//! SGD with heavy-ball momentum, cosine decay, and a parameter EMA used for
//! the reported model.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::datagen::{DatasetSpec, Datasets};
use crate::error::{invalid, Error, Result};
use crate::losses::{
    aligned_labeled_loss, balanced_consistency, balanced_softmax_loss, cross_entropy, weight_batch, Hyperparams,
    LossBreakdown,
};
use crate::metrics::{evaluate, EvalData, EvalOptions, EvalReport, PseudoLabelRule};
use crate::net::{argmax, augment, softmax, AugmentConfig, Branch, BranchOutputs, DualNet, NetConfig, Strength};
use crate::prior::ClassPrior;
use crate::priorest::{batch_mean_balanced, batch_mean_standard, EmaPrior};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Dual-branch training with cross-branch correction.
    Decon,
    /// Single-head thresholded pseudo-labeling control.
    Fixmatch,
}

impl Algorithm {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "decon" => Ok(Self::Decon),
            "fixmatch" => Ok(Self::Fixmatch),
            other => Err(invalid(format!("unknown algorithm `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Decon => "decon",
            Self::Fixmatch => "fixmatch",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    /// `eta0 * cos(7 pi t / (16 T))`.
    Cosine,
    /// `eta0 / (1 + t)^2`, summable over t.
    InverseSquare,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub eta0: f64,
    pub momentum: f64,
    /// Decay of the parameter EMA shadow.
    pub rho_ema: f64,
    pub schedule: LrSchedule,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self { eta0: 0.05, momentum: 0.9, rho_ema: 0.999, schedule: LrSchedule::Cosine }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    /// Root seed; data, init, augmentation and batch streams derive from it.
    pub seed: u64,
    pub eval_every: usize,
    pub test_per_class: usize,
    pub dataset: DatasetSpec,
    pub augment: AugmentConfig,
    pub hyper: Hyperparams,
    pub optim: OptimConfig,
    pub net: NetConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Decon,
            epochs: 30,
            steps_per_epoch: 100,
            seed: 0,
            eval_every: 1,
            test_per_class: 500,
            dataset: DatasetSpec::default(),
            augment: AugmentConfig::default(),
            hyper: Hyperparams::default(),
            optim: OptimConfig::default(),
            net: NetConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.augment.validate()?;
        self.hyper.validate()?;
        if self.steps_per_epoch == 0 || self.eval_every == 0 || self.test_per_class == 0 {
            return Err(invalid("steps_per_epoch, eval_every and test_per_class must be >= 1"));
        }
        if !(self.optim.eta0 >= 0.0) || !(0.0..1.0).contains(&self.optim.momentum) {
            return Err(invalid("need eta0 >= 0 and momentum in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.optim.rho_ema) {
            return Err(invalid("rho_ema must lie in [0, 1)"));
        }
        Ok(())
    }

    /// The dataset spec with its seed replaced by the run's data substream.
    pub fn resolved_dataset(&self) -> DatasetSpec {
        DatasetSpec { seed: rng::derive_seed(self.seed, rng::DATA), ..self.dataset.clone() }
    }

    pub fn total_steps(&self) -> usize {
        self.epochs * self.steps_per_epoch
    }

    pub fn reported_branch(&self) -> Branch {
        match self.algorithm {
            Algorithm::Decon => Branch::Balanced,
            Algorithm::Fixmatch => Branch::Standard,
        }
    }

    pub fn pseudo_label_rule(&self) -> PseudoLabelRule {
        match self.algorithm {
            Algorithm::Decon => PseudoLabelRule::Corrected { tau1: self.hyper.tau1 },
            Algorithm::Fixmatch => PseudoLabelRule::Argmax,
        }
    }
}

/// Cosine decay that stays strictly positive on `[0, T]`.
pub fn cosine_lr(t: usize, total: usize, eta0: f64) -> Result<f64> {
    if t > total {
        return Err(invalid(format!("step {t} beyond total {total}")));
    }
    if total == 0 {
        return Ok(eta0);
    }
    Ok(eta0 * (7.0 * std::f64::consts::PI * t as f64 / (16.0 * total as f64)).cos())
}

pub fn learning_rate(schedule: LrSchedule, t: usize, total: usize, eta0: f64) -> Result<f64> {
    match schedule {
        LrSchedule::Cosine => cosine_lr(t, total, eta0),
        LrSchedule::InverseSquare => Ok(eta0 / ((1 + t) as f64).powi(2)),
    }
}

/// Heavy-ball step: `v <- momentum * v + g`, `theta <- theta - lr * v`.
pub fn sgd_step(params: &mut DualNet, grads: &DualNet, lr: f64, momentum: f64, velocity: &mut DualNet) -> Result<()> {
    velocity.zip_apply(grads, |v, g| *v = momentum * *v + g)?;
    params.zip_apply(velocity, |p, v| *p -= lr * v)
}

/// `shadow <- rho * shadow + (1 - rho) * params`.
pub fn param_ema_update(shadow: &mut DualNet, params: &DualNet, rho_ema: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rho_ema) {
        return Err(invalid("rho_ema must lie in [0, 1)"));
    }
    shadow.zip_apply(params, |s, p| *s = rho_ema * *s + (1.0 - rho_ema) * p)
}

/// Mutable optimization state carried across steps.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub algorithm: Algorithm,
    pub step: usize,
    pub total_steps: usize,
    pub optim: OptimConfig,
    pub hyper: Hyperparams,
    pub augment: AugmentConfig,
    pub gamma_t: f64,
    pub velocity: DualNet,
    pub param_ema: DualNet,
    /// Empirical labeled prior.
    pub pi_l: ClassPrior,
    pub ema_pi_b: EmaPrior,
    pub ema_pi_s: EmaPrior,
    pub aug_rng: Rng,
}

impl TrainState {
    pub fn new(cfg: &RunConfig, net: &DualNet, labeled_counts: &[usize]) -> Result<Self> {
        let c = net.num_classes();
        Ok(Self {
            algorithm: cfg.algorithm,
            step: 0,
            total_steps: cfg.total_steps(),
            optim: cfg.optim,
            hyper: cfg.hyper,
            augment: cfg.augment,
            gamma_t: 1.0,
            velocity: net.zeros_like(),
            param_ema: net.clone(),
            pi_l: ClassPrior::from_counts(labeled_counts)?,
            ema_pi_b: EmaPrior::uniform(c, cfg.hyper.m)?,
            ema_pi_s: EmaPrior::uniform(c, cfg.hyper.m)?,
            aug_rng: rng::substream(cfg.seed, rng::AUGMENT),
        })
    }

    pub fn pi_b(&self) -> &ClassPrior {
        self.ema_pi_b.value()
    }

    pub fn pi_s(&self) -> &ClassPrior {
        self.ema_pi_s.value()
    }
}

/// What one optimization step reports.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub losses: LossBreakdown,
    pub total: f64,
    pub gamma_t: f64,
    pub mask_rate: f64,
    pub pi_b: Vec<f64>,
    pub pi_s: Vec<f64>,
}

/// Targets for one batch, fixed before the losses are formed and treated as
/// constants by the gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    pub pi_l: ClassPrior,
    pub pi_b: ClassPrior,
    /// Standard-branch hard pseudo-labels and their confidence masks.
    pub q: Vec<usize>,
    pub mask: Vec<bool>,
    /// Corrected labels and importance weights for the balanced branch.
    pub q_tilde: Vec<usize>,
    pub psi: Vec<f64>,
}

/// Augmented views of one batch, in forward order: labeled weak, unlabeled
/// weak, unlabeled strong.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchViews {
    pub views: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub unlabeled: usize,
}

impl BatchViews {
    pub fn build(labeled: &[(&[f64], usize)], unlabeled: &[&[f64]], aug: &AugmentConfig, r: &mut Rng) -> Self {
        let mut views = Vec::with_capacity(labeled.len() + 2 * unlabeled.len());
        for (x, _) in labeled {
            views.push(augment(x, aug, Strength::Weak, r));
        }
        for x in unlabeled {
            views.push(augment(x, aug, Strength::Weak, r));
        }
        for x in unlabeled {
            views.push(augment(x, aug, Strength::Strong, r));
        }
        Self { views, labels: labeled.iter().map(|(_, y)| *y).collect(), unlabeled: unlabeled.len() }
    }

    pub fn labeled(&self) -> usize {
        self.labels.len()
    }
}

/// Update both priors from the weak-view outputs and derive the targets.
pub fn prepare_targets(state: &mut TrainState, outs: &[BranchOutputs], batch: &BatchViews) -> Result<Targets> {
    let (b, u) = (batch.labeled(), batch.unlabeled);
    let lab = &outs[..b];
    let weak = &outs[b..b + u];
    let bal_lab: Vec<Vec<f64>> = lab.iter().map(|o| softmax(&o.logits_bal)).collect();
    let bal_weak: Vec<Vec<f64>> = weak.iter().map(|o| softmax(&o.logits_bal)).collect();
    let std_weak_p: Vec<Vec<f64>> = weak.iter().map(|o| softmax(&o.logits_std)).collect();
    state.ema_pi_b.update(&batch_mean_balanced(&bal_lab, &bal_weak)?)?;
    state.ema_pi_s.update(&batch_mean_standard(&std_weak_p)?)?;

    let rho = state.hyper.rho;
    let q: Vec<usize> = std_weak_p.iter().map(|p| argmax(p)).collect();
    let mask: Vec<bool> = std_weak_p.iter().zip(&q).map(|(p, &k)| p[k] >= rho).collect();
    let (q_tilde, psi) = match state.algorithm {
        Algorithm::Decon => {
            let std_weak: Vec<&[f64]> = weak.iter().map(|o| o.logits_std.as_slice()).collect();
            let (recs, gamma) = weight_batch(&std_weak, state.ema_pi_s.value(), state.hyper.tau1, state.gamma_t)?;
            state.gamma_t = gamma;
            (recs.iter().map(|r| r.q_tilde).collect(), recs.iter().map(|r| r.psi).collect())
        }
        Algorithm::Fixmatch => (q.clone(), vec![0.0; u]),
    };
    Ok(Targets { pi_l: state.pi_l.clone(), pi_b: state.ema_pi_b.value().clone(), q, mask, q_tilde, psi })
}

/// Per-sample logit gradients of one head.
pub type LogitGrads = Vec<Vec<f64>>;

/// Batch-mean loss terms and their logit gradients for fixed targets.
pub fn batch_loss(
    algorithm: Algorithm,
    hyper: &Hyperparams,
    outs: &[BranchOutputs],
    batch: &BatchViews,
    targets: &Targets,
) -> Result<(LossBreakdown, LogitGrads, LogitGrads)> {
    let (b, u) = (batch.labeled(), batch.unlabeled);
    if b == 0 || u == 0 {
        return Err(Error::EmptyBatch);
    }
    if outs.len() != b + 2 * u {
        return Err(Error::LengthMismatch { left: outs.len(), right: b + 2 * u });
    }
    let c = outs[0].logits_std.len();
    let mut up_std = vec![vec![0.0; c]; b + 2 * u];
    let mut up_bal = vec![vec![0.0; c]; b + 2 * u];
    let mut parts = LossBreakdown::default();
    let inv_b = 1.0 / b as f64;
    let inv_u = 1.0 / u as f64;
    for (i, (y, o)) in batch.labels.iter().zip(&outs[..b]).enumerate() {
        let l = match algorithm {
            Algorithm::Decon => aligned_labeled_loss(&o.logits_std, *y, &targets.pi_l, &targets.pi_b, hyper.tau2)?,
            Algorithm::Fixmatch => cross_entropy(&o.logits_std, *y)?,
        }
        .scaled(inv_b);
        parts.l_labeled += l.loss;
        up_std[i] = l.grad;
        if algorithm == Algorithm::Decon {
            let lb = balanced_softmax_loss(&o.logits_bal, *y, &targets.pi_l)?.scaled(inv_b);
            parts.l_b_labeled += lb.loss;
            up_bal[i] = lb.grad;
        }
    }
    for (j, s) in outs[b + u..].iter().enumerate() {
        if targets.mask[j] {
            let con = cross_entropy(&s.logits_std, targets.q[j])?.scaled(inv_u);
            parts.l_con += con.loss;
            up_std[b + u + j] = con.grad;
        }
        if algorithm == Algorithm::Decon {
            let bcon = balanced_consistency(&s.logits_bal, targets.q_tilde[j], targets.psi[j])?.scaled(inv_u);
            parts.l_b_con += bcon.loss;
            up_bal[b + u + j] = bcon.grad;
        }
    }
    Ok((parts, up_std, up_bal))
}

/// Composite loss and parameter gradient of `net` on fixed views and
/// targets.
pub fn composite_loss(
    net: &DualNet,
    algorithm: Algorithm,
    hyper: &Hyperparams,
    batch: &BatchViews,
    targets: &Targets,
) -> Result<(LossBreakdown, DualNet)> {
    let (outs, tape) = net.forward_batch(&batch.views)?;
    let (parts, up_std, up_bal) = batch_loss(algorithm, hyper, &outs, batch, targets)?;
    Ok((parts, net.backward(&tape, &up_std, &up_bal)?))
}

/// Forward pass, priors, pseudo-labels and loss gradients for one batch;
/// returns the parameter gradient without touching the parameters.
///
/// The priors and `gamma_t` in `state` are updated in place.
pub fn compute_step(
    state: &mut TrainState,
    net: &DualNet,
    labeled: &[(&[f64], usize)],
    unlabeled: &[&[f64]],
) -> Result<(LossBreakdown, f64, DualNet)> {
    if labeled.is_empty() || unlabeled.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let batch = BatchViews::build(labeled, unlabeled, &state.augment, &mut state.aug_rng);
    let (outs, tape) = net.forward_batch(&batch.views)?;
    let targets = prepare_targets(state, &outs, &batch)?;
    let (parts, up_std, up_bal) = batch_loss(state.algorithm, &state.hyper, &outs, &batch, &targets)?;
    let grads = net.backward(&tape, &up_std, &up_bal)?;
    let mask_rate = targets.mask.iter().filter(|&&m| m).count() as f64 / batch.unlabeled as f64;
    Ok((parts, mask_rate, grads))
}

/// One full optimization step on the given batches.
pub fn train_step(
    state: &mut TrainState,
    net: &mut DualNet,
    labeled: &[(&[f64], usize)],
    unlabeled: &[&[f64]],
) -> Result<StepRecord> {
    let (losses, mask_rate, grads) = compute_step(state, net, labeled, unlabeled)?;
    let total = losses.total()?;
    let t = state.step.min(state.total_steps);
    let lr = learning_rate(state.optim.schedule, t, state.total_steps, state.optim.eta0)?;
    sgd_step(net, &grads, lr, state.optim.momentum, &mut state.velocity)?;
    param_ema_update(&mut state.param_ema, net, state.optim.rho_ema)?;
    state.step += 1;
    Ok(StepRecord {
        step: state.step,
        lr,
        losses,
        total,
        gamma_t: state.gamma_t,
        mask_rate,
        pi_b: state.pi_b().probs().to_vec(),
        pi_s: state.pi_s().probs().to_vec(),
    })
}

/// Draw `n` indices uniformly with replacement.
fn draw_indices(len: usize, n: usize, r: &mut Rng) -> Vec<usize> {
    (0..n).map(|_| r.random_range(0..len)).collect()
}

/// One row of the metrics log: a step plus, at eval points, a report.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub record: StepRecord,
    pub eval: Option<EvalReport>,
}

/// Passed to the run observer after every evaluation.
pub struct EvalPoint<'a> {
    pub epoch: usize,
    pub report: &'a EvalReport,
    pub net: &'a DualNet,
    pub state: &'a TrainState,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub net: DualNet,
    pub state: TrainState,
    pub rows: Vec<MetricsRow>,
    /// `(epoch, report)` for every evaluation, in order.
    pub evals: Vec<(usize, EvalReport)>,
}

impl RunOutput {
    pub fn final_report(&self) -> Option<&EvalReport> {
        self.evals.last().map(|(_, r)| r)
    }
}

pub fn eval_options(cfg: &RunConfig, state: &TrainState, tau3: f64) -> EvalOptions {
    EvalOptions {
        branch: cfg.reported_branch(),
        tau3,
        pi_b: state.pi_b().clone(),
        pi_s: state.pi_s().clone(),
        rule: cfg.pseudo_label_rule(),
    }
}

/// Default post-hoc intensity of the reported model: `tau3` for the
/// dual-branch method, none for the control.
pub fn reported_tau3(cfg: &RunConfig) -> f64 {
    match cfg.algorithm {
        Algorithm::Decon => cfg.hyper.tau3,
        Algorithm::Fixmatch => 0.0,
    }
}

pub fn evaluate_state(
    cfg: &RunConfig,
    data: &Datasets,
    net: &DualNet,
    state: &TrainState,
    tau3: f64,
) -> Result<EvalReport> {
    let pi_u = ClassPrior::from_counts(&data.unlabeled_counts)?;
    evaluate(&state.param_ema, net, &eval_data(data, &pi_u), &eval_options(cfg, state, tau3))
}

/// Evaluator view of `data`; `pi_u` is the true unlabeled prior.
pub fn eval_data<'a>(data: &'a Datasets, pi_u: &'a ClassPrior) -> EvalData<'a> {
    EvalData {
        test: &data.test,
        unlabeled: &data.unlabeled,
        unlabeled_truth: &data.unlabeled_truth,
        labeled_counts: &data.labeled_counts,
        unlabeled_prior: pi_u,
    }
}

pub fn init_net(cfg: &RunConfig, data: &Datasets) -> Result<DualNet> {
    DualNet::new(data.mixture.dim(), data.num_classes(), &cfg.net, &mut rng::substream(cfg.seed, rng::INIT))
}

/// Run the configured schedule on `data`, calling `observer` after every
/// evaluation.
pub fn run_with<F>(cfg: &RunConfig, data: &Datasets, mut observer: F) -> Result<RunOutput>
where
    F: FnMut(&EvalPoint<'_>) -> Result<()>,
{
    cfg.validate()?;
    if data.labeled.is_empty() || data.unlabeled.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut net = init_net(cfg, data)?;
    let mut state = TrainState::new(cfg, &net, &data.labeled_counts)?;
    let mut batch_rng = rng::substream(cfg.seed, rng::BATCH);
    let b = cfg.hyper.batch_size;
    let u = cfg.hyper.unlabeled_batch();
    let labeled: Vec<(&[f64], usize)> = data
        .labeled
        .iter()
        .map(|s| {
            s.label.map(|y| (s.x.as_slice(), y)).ok_or_else(|| Error::Malformed("unlabeled row in labeled pool".into()))
        })
        .collect::<Result<_>>()?;
    let unlabeled: Vec<&[f64]> = data.unlabeled.iter().map(|s| s.x.as_slice()).collect();

    let mut rows = Vec::with_capacity(cfg.total_steps());
    let mut evals = Vec::new();
    for epoch in 1..=cfg.epochs {
        for _ in 0..cfg.steps_per_epoch {
            let lb: Vec<(&[f64], usize)> =
                draw_indices(labeled.len(), b, &mut batch_rng).into_iter().map(|i| labeled[i]).collect();
            let ub: Vec<&[f64]> =
                draw_indices(unlabeled.len(), u, &mut batch_rng).into_iter().map(|i| unlabeled[i]).collect();
            let record = train_step(&mut state, &mut net, &lb, &ub)?;
            rows.push(MetricsRow { epoch, record, eval: None });
        }
        if epoch % cfg.eval_every == 0 || epoch == cfg.epochs {
            let report = evaluate_state(cfg, data, &net, &state, reported_tau3(cfg))?;
            observer(&EvalPoint { epoch, report: &report, net: &net, state: &state })?;
            if let Some(last) = rows.last_mut() {
                last.eval = Some(report.clone());
            }
            evals.push((epoch, report));
        }
    }
    Ok(RunOutput { net, state, rows, evals })
}

/// Generate the data for `cfg` and run it.
pub fn run(cfg: &RunConfig) -> Result<(Datasets, RunOutput)> {
    cfg.validate()?;
    let data = Datasets::generate(&cfg.resolved_dataset(), cfg.test_per_class)?;
    let out = run_with(cfg, &data, |_| Ok(()))?;
    Ok((data, out))
}

// ---- stationarity probe --------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub seed: u64,
    pub steps: usize,
    pub eta0: f64,
    pub dataset: DatasetSpec,
    pub hyper: Hyperparams,
    pub net: NetConfig,
    /// Probe points whose final corrected-score margin falls below this are
    /// treated as ties and excluded.
    pub tie_tol: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            steps: 1200,
            eta0: 0.5,
            dataset: DatasetSpec {
                n1: 30,
                m1: 40,
                gamma_l: 5.0,
                shape: crate::datagen::Shape::Reversed,
                ..Default::default()
            },
            hyper: Hyperparams::default(),
            net: NetConfig { hidden: vec![16, 16], leaky_slope: 0.01 },
            tie_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub steps: usize,
    pub probe_points: usize,
    pub ties_excluded: usize,
    /// Label changes per step, over all non-tied probe points.
    pub flips_per_step: Vec<usize>,
    pub flips_final_quarter: usize,
    /// First step after which no non-tied label changes.
    pub last_flip_step: usize,
}

fn corrected_scores(net: &DualNet, xs: &[&[f64]], pi_s: &ClassPrior, tau1: f64) -> Result<Vec<Vec<f64>>> {
    let log_pi = pi_s.log();
    xs.iter()
        .map(|x| {
            let z = net.forward(x)?.logits_std;
            let lp = crate::net::log_softmax(&z);
            Ok(lp.iter().zip(&log_pi).map(|(a, l)| a - tau1 * l).collect())
        })
        .collect()
}

/// Full-batch dual-branch training on a fixed mini-pool with summable step
/// sizes and no augmentation, tracking the corrected pseudo-labels of the
/// unlabeled pool after every step.
pub fn stationarity_probe(cfg: &ProbeConfig) -> Result<ProbeReport> {
    let spec = DatasetSpec { seed: rng::derive_seed(cfg.seed, rng::DATA), ..cfg.dataset.clone() };
    let data = Datasets::generate(&spec, 1)?;
    let run_cfg = RunConfig {
        algorithm: Algorithm::Decon,
        epochs: 1,
        steps_per_epoch: cfg.steps,
        seed: cfg.seed,
        dataset: spec,
        augment: AugmentConfig::none(),
        hyper: cfg.hyper,
        optim: OptimConfig { eta0: cfg.eta0, momentum: 0.0, rho_ema: 0.0, schedule: LrSchedule::InverseSquare },
        net: cfg.net.clone(),
        ..Default::default()
    };
    let mut net = init_net(&run_cfg, &data)?;
    let mut state = TrainState::new(&run_cfg, &net, &data.labeled_counts)?;
    let labeled: Vec<(&[f64], usize)> =
        data.labeled.iter().map(|s| (s.x.as_slice(), s.label.expect("labeled pool"))).collect();
    let xs: Vec<&[f64]> = data.unlabeled.iter().map(|s| s.x.as_slice()).collect();

    let mut history: Vec<Vec<usize>> = Vec::with_capacity(cfg.steps);
    let mut final_scores = Vec::new();
    for _ in 0..cfg.steps {
        train_step(&mut state, &mut net, &labeled, &xs)?;
        final_scores = corrected_scores(&net, &xs, state.pi_s(), cfg.hyper.tau1)?;
        history.push(final_scores.iter().map(|s| crate::net::argmax(s)).collect());
    }
    let keep: Vec<usize> = final_scores
        .iter()
        .enumerate()
        .filter(|(_, s)| crate::inference::top_with_margin(s).1 >= cfg.tie_tol)
        .map(|(i, _)| i)
        .collect();
    let mut flips_per_step = vec![0usize; cfg.steps];
    for t in 1..cfg.steps {
        flips_per_step[t] = keep.iter().filter(|&&i| history[t][i] != history[t - 1][i]).count();
    }
    let quarter_start = cfg.steps - cfg.steps / 4;
    let flips_final_quarter = flips_per_step[quarter_start..].iter().sum();
    let last_flip_step = flips_per_step.iter().rposition(|&f| f > 0).unwrap_or(0);
    Ok(ProbeReport {
        steps: cfg.steps,
        probe_points: xs.len(),
        ties_excluded: xs.len() - keep.len(),
        flips_per_step,
        flips_final_quarter,
        last_flip_step,
    })
}
