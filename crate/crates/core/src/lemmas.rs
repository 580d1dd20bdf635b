//! Executable versions of the supporting lemmas. Every check reports trials,
//! failures and the worst excess over its bound; nothing panics.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::datagen::{longtail_counts, make_mixture, DatasetSpec, Shape};
use crate::error::Result;
use crate::gradcheck::run_gradient_checks;
use crate::inference::{adjusted_probs, margin_robustness_check};
use crate::losses::{overlap_weight, plc_pseudo_label};
use crate::net::{argmax, log_softmax, softmax, NetConfig};
use crate::oracle::{decoupled_logits, fit_balanced_softmax, grid_bayes_check};
use crate::prior::{l1, ClassPrior};
use crate::priorest::EmaPrior;
use crate::rng::{self, Rng};
use crate::trainer::{self, stationarity_probe, ProbeConfig, RunConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaEntry {
    pub lemma_name: String,
    pub anchor_quote: String,
    pub trials: usize,
    pub failures: usize,
    /// Largest amount by which a bound or tolerance was exceeded; 0 if none.
    pub worst_violation: f64,
}

impl LemmaEntry {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub seed: u64,
    pub passed: bool,
    pub entries: Vec<LemmaEntry>,
}

impl LemmaReport {
    pub fn entry(&self, name: &str) -> Option<&LemmaEntry> {
        self.entries.iter().find(|e| e.lemma_name == name)
    }
}

/// Deliberate defects used to confirm that the checks can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mutation {
    /// Replace the overlap score by `max_c (p_c + q_c) / 2`.
    CorruptOverlap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteOptions {
    pub mutation: Option<Mutation>,
    /// Random instances for the pointwise identities.
    pub instances: usize,
    /// Instances for each margin-robustness fuzz.
    pub fuzz_instances: usize,
    pub probe_steps: usize,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self { mutation: None, instances: 1000, fuzz_instances: 10_000, probe_steps: 1200 }
    }
}

/// Accumulates one entry.
struct Tally {
    entry: LemmaEntry,
}

impl Tally {
    fn new(name: &str, anchor: &str) -> Self {
        Self {
            entry: LemmaEntry {
                lemma_name: name.into(),
                anchor_quote: anchor.into(),
                trials: 0,
                failures: 0,
                worst_violation: 0.0,
            },
        }
    }

    /// Record one trial whose excess over its bound is `excess`
    /// (non-positive means it held).
    fn excess(&mut self, excess: f64) {
        self.entry.trials += 1;
        if !(excess <= 0.0) {
            self.entry.failures += 1;
            let e = if excess.is_nan() { f64::INFINITY } else { excess };
            self.entry.worst_violation = self.entry.worst_violation.max(e);
        }
    }

    fn holds(&mut self, ok: bool) {
        self.excess(if ok { 0.0 } else { 1.0 });
    }

    fn done(self) -> LemmaEntry {
        self.entry
    }
}

fn random_simplex(c: usize, r: &mut Rng) -> Vec<f64> {
    let w: Vec<f64> = (0..c).map(|_| -r.random::<f64>().max(1e-300).ln()).collect();
    let s: f64 = w.iter().sum();
    // Keep away from the probability floor.
    w.iter().map(|v| 0.9 * v / s + 0.1 / c as f64).collect()
}

fn random_prior(c: usize, r: &mut Rng) -> ClassPrior {
    ClassPrior::new(random_simplex(c, r)).expect("interior point")
}

fn random_logits(c: usize, scale: f64, r: &mut Rng) -> Vec<f64> {
    (0..c).map(|_| scale * r.sample::<f64, _>(StandardNormal)).collect()
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

fn overlap(mutation: Option<Mutation>, p: &[f64], q: &[f64]) -> Result<f64> {
    match mutation {
        None => Ok(overlap_weight(p, q, 1.0)?.0),
        Some(Mutation::CorruptOverlap) => {
            Ok(p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).fold(f64::NEG_INFINITY, f64::max))
        }
    }
}

fn ema_checks(seed: u64, sequences: usize) -> Result<Vec<LemmaEntry>> {
    let mut r = rng::substream(seed, "ema");
    let mut closed = Tally::new("ema_closed_form", "EMA prior equals its unrolled closed form");
    let mut step = Tally::new("ema_step_bound", "EMA step is at most 2(1 - m) in l1");
    let mut track = Tally::new("ema_tracking_bound", "EMA error obeys the discounted drift bound");
    let mut simplex = Tally::new("ema_simplex", "EMA prior stays on the simplex interior");
    for _ in 0..sequences {
        let c = r.random_range(2..=10);
        let m = 0.5 + 0.499 * r.random::<f64>();
        let len = r.random_range(1..=300);
        let smooth = r.random_bool(0.5);
        let pi0 = random_prior(c, &mut r);
        let mut ema = EmaPrior::new(pi0.clone(), m)?;
        let mut drive: Vec<Vec<f64>> = Vec::with_capacity(len);
        let mut cur = random_simplex(c, &mut r);
        let mut prev_pi = pi0.probs().to_vec();
        let mut bound = 0.0;
        for t in 0..len {
            if smooth {
                let next = random_simplex(c, &mut r);
                cur = cur.iter().zip(&next).map(|(a, b)| 0.95 * a + 0.05 * b).collect();
            } else {
                cur = random_simplex(c, &mut r);
            }
            drive.push(cur.clone());
            // Tracking: e_t = pi_t - pbar_t, checked before the update.
            let e_t = l1(ema.value().probs(), &cur);
            bound = if t == 0 { e_t } else { m * bound + l1(&drive[t], &drive[t - 1]) };
            track.excess(e_t - bound - 1e-12);

            ema.update(&ClassPrior::new(cur.clone())?)?;
            let now = ema.value().probs().to_vec();
            step.excess(l1(&now, &prev_pi) - 2.0 * (1.0 - m) - 1e-12);
            let sum: f64 = now.iter().sum();
            simplex.holds((sum - 1.0).abs() < 1e-12 && now.iter().all(|&v| v > 0.0));
            prev_pi = now;
        }
        let t = drive.len() as i32;
        let mut expect: Vec<f64> = pi0.probs().iter().map(|v| m.powi(t) * v).collect();
        for (k, p) in drive.iter().enumerate() {
            let w = (1.0 - m) * m.powi(t - 1 - k as i32);
            expect.iter_mut().zip(p).for_each(|(e, v)| *e += w * v);
        }
        closed.excess(l1(&expect, ema.value().probs()) - 1e-10);
    }

    let mut drive = Tally::new("ema_convergent_drive", "EMA prior follows a convergent drive to its limit");
    for _ in 0..20 {
        let c = r.random_range(2..=8);
        let m = 0.9 + 0.09 * r.random::<f64>();
        let limit = random_simplex(c, &mut r);
        let start = random_simplex(c, &mut r);
        let mut ema = EmaPrior::new(random_prior(c, &mut r), m)?;
        let rate = m.max(0.97);
        let horizon = (10.0 * 1e3f64.ln() / (1.0 - rate)).ceil() as usize;
        let mut hit = None;
        for t in 0..horizon {
            let w = 0.97f64.powi(t as i32);
            let p: Vec<f64> = start.iter().zip(&limit).map(|(s, l)| w * s + (1.0 - w) * l).collect();
            ema.update(&ClassPrior::new(p)?)?;
            if l1(ema.value().probs(), &limit) < 1e-3 {
                hit = Some(t);
                break;
            }
        }
        drive.holds(hit.is_some());
    }
    Ok(vec![closed.done(), step.done(), track.done(), simplex.done(), drive.done()])
}

fn plc_checks(seed: u64, n: usize, mutation: Option<Mutation>) -> Result<Vec<LemmaEntry>> {
    let mut r = rng::substream(seed, "plc");
    let mut logit_form = Tally::new("plc_logit_form", "corrected pseudo-label argmax has a logit form");
    let mut gating = Tally::new("overlap_gating", "overlap score is bounded by the product of confidences");
    let mut disagree = Tally::new("overlap_disagreement", "disagreeing argmaxes force a small overlap");
    for i in 0..n {
        let c = r.random_range(2..=10);
        let z = random_logits(c, 3.0, &mut r);
        let pi_s = random_prior(c, &mut r);
        let tau1 = 3.0 * r.random::<f64>();
        let p_pre = softmax(&z);
        let w: Vec<f64> = p_pre.iter().zip(pi_s.probs()).map(|(p, pi)| p * pi.powf(-tau1)).collect();
        let (q, p_plc) = plc_pseudo_label(&z, &pi_s, tau1)?;
        logit_form.holds(argmax(&w) == q);

        // Alternate realistic pairs with independent ones and constructed
        // agreement cases.
        let other = match i % 3 {
            0 => p_plc.clone(),
            1 => softmax(&random_logits(c, 3.0, &mut r)),
            _ => {
                let mut v = softmax(&random_logits(c, 3.0, &mut r));
                let (a, b) = (argmax(&p_pre), argmax(&v));
                v.swap(a, b);
                v
            }
        };
        let (ap, aq) = (max_of(&p_pre), max_of(&other));
        let eta = overlap(mutation, &p_pre, &other)?;
        let tol = 1e-15;
        gating.excess(eta - ap * aq - tol);
        if argmax(&p_pre) == argmax(&other) {
            gating.excess((eta - ap * aq).abs() - tol);
        }

        let mut dq = softmax(&random_logits(c, 3.0, &mut r));
        if argmax(&dq) == argmax(&p_pre) {
            let k = (argmax(&p_pre) + 1 + r.random_range(0..c - 1)) % c;
            dq.swap(argmax(&p_pre), k);
        }
        let eta = overlap(mutation, &p_pre, &dq)?;
        disagree.excess(eta - (1.0 - ap.min(max_of(&dq))) - tol);
    }
    Ok(vec![logit_form.done(), gating.done(), disagree.done()])
}

fn inference_checks(seed: u64, n: usize, fuzz: usize) -> Result<Vec<LemmaEntry>> {
    let mut r = rng::substream(seed, "inference");
    let mut prob =
        Tally::new("post_hoc_probability_form", "post-hoc adjustment equals prior reweighting of probabilities");
    for _ in 0..n {
        let c = r.random_range(2..=10);
        let z = random_logits(c, 3.0, &mut r);
        let pi = random_prior(c, &mut r);
        let tau = 3.0 * r.random::<f64>();
        let p = softmax(&z);
        let w: Vec<f64> = p.iter().zip(pi.probs()).map(|(a, b)| a * b.powf(-tau)).collect();
        let s: f64 = w.iter().sum();
        let got = adjusted_probs(&z, &pi, tau)?;
        let err = got.iter().zip(&w).map(|(g, v)| (g - v / s).abs()).fold(0.0, f64::max);
        prob.excess(err - 1e-12);
    }

    let mut dda =
        Tally::new("dda_margin_robustness", "alignment argmax survives log-prior error below half the margin");
    let mut post =
        Tally::new("post_hoc_margin_robustness", "post-hoc argmax survives log-prior error below half the margin");
    for (tally, dda_form) in [(&mut dda, true), (&mut post, false)] {
        for _ in 0..fuzz {
            let c = r.random_range(2..=10);
            let z = random_logits(c, 3.0, &mut r);
            let tau = 0.1 + 2.9 * r.random::<f64>();
            let truth = random_prior(c, &mut r);
            let eps = 0.3 * r.random::<f64>();
            let est: Vec<f64> =
                truth.probs().iter().map(|p| p * (eps * r.sample::<f64, _>(StandardNormal)).exp()).collect();
            let est = ClassPrior::new(est)?;
            let scores: Vec<f64> = if dda_form {
                let pi_l = random_prior(c, &mut r);
                log_softmax(&z).iter().zip(pi_l.log()).map(|(a, b)| a + tau * b).collect()
            } else {
                z
            };
            let chk = margin_robustness_check(&scores, &truth, &est, tau)?;
            tally.holds(!chk.violated());
        }
    }
    Ok(vec![prob.done(), dda.done(), post.done()])
}

fn decoupling_checks(seed: u64, n: usize) -> Result<Vec<LemmaEntry>> {
    let mut r = rng::substream(seed, "decoupling");
    let mix = make_mixture(6, 2, 2.5, rng::derive_seed(seed, "mixture"))?;
    let mut unif = Tally::new("uniform_posterior", "decoupled scores give the uniform-prior posterior");
    for _ in 0..n {
        let k = r.random_range(0..6);
        let x: Vec<f64> = mix.means[k].iter().map(|m| m + 2.0 * r.sample::<f64, _>(StandardNormal)).collect();
        let b = 100.0 * r.random::<f64>() - 50.0;
        let got = softmax(&decoupled_logits(&mix, &x, b)?);
        let dens: Vec<f64> = mix
            .means
            .iter()
            .zip(&mix.diag_vars)
            .map(|(mu, var)| {
                x.iter()
                    .zip(mu)
                    .zip(var)
                    .map(|((xi, mi), vi)| {
                        (-(xi - mi).powi(2) / (2.0 * vi)).exp() / (2.0 * std::f64::consts::PI * vi).sqrt()
                    })
                    .product()
            })
            .collect();
        let s: f64 = dens.iter().sum();
        let err = got.iter().zip(&dens).map(|(g, d)| (g - d / s).abs()).fold(0.0, f64::max);
        unif.excess(err - 1e-10);
    }

    let mut grid = Tally::new("prior_adaptable_bayes", "decoupled scores plus any target prior give the Bayes rule");
    let lt = longtail_counts(200, 20.0, 6)?;
    let rev: Vec<usize> = lt.iter().rev().copied().collect();
    for pi in [ClassPrior::uniform(6), ClassPrior::from_counts(&lt)?, ClassPrior::from_counts(&rev)?] {
        let g = grid_bayes_check(&mix, &pi, 50, |x| 7.0 * x[0].sin() + x[1])?;
        for i in 0..g.points {
            grid.holds(i >= g.disagreements);
        }
    }

    let mut fit =
        Tally::new("balanced_softmax_decoupling", "balanced softmax on labeled data recovers class-conditional scores");
    let f = fit_balanced_softmax(&mix, &ClassPrior::from_counts(&lt)?, 0.2, 50, 3.0)?;
    fit.excess(f.max_spread - crate::oracle::DECOUPLING_TOL);
    Ok(vec![unif.done(), grid.done(), fit.done()])
}

fn training_checks(seed: u64, probe_steps: usize) -> Result<Vec<LemmaEntry>> {
    let mut grads = Vec::new();
    for g in run_gradient_checks(seed, 5)? {
        grads.push(LemmaEntry {
            lemma_name: format!("gradient_{}", g.name),
            anchor_quote: "analytic gradient matches central differences".into(),
            trials: g.instances,
            failures: g.failures,
            worst_violation: if g.passed { 0.0 } else { g.max_rel_err - crate::gradcheck::REL_TOL },
        });
    }

    let probe = stationarity_probe(&ProbeConfig { seed, steps: probe_steps, ..Default::default() })?;
    grads.push(LemmaEntry {
        lemma_name: "eventual_stationarity".into(),
        anchor_quote: "corrected pseudo-labels stop changing under summable step sizes".into(),
        trials: probe.probe_points - probe.ties_excluded,
        failures: probe.flips_final_quarter,
        worst_violation: probe.flips_final_quarter as f64,
    });

    let cfg = RunConfig {
        seed,
        epochs: 2,
        steps_per_epoch: 10,
        test_per_class: 20,
        dataset: DatasetSpec { n1: 40, m1: 60, shape: Shape::Reversed, ..Default::default() },
        net: NetConfig { hidden: vec![8, 8], leaky_slope: 0.01 },
        ..Default::default()
    };
    let (_, a) = trainer::run(&cfg)?;
    let (_, b) = trainer::run(&cfg)?;
    let mut rep = Tally::new("reproducibility", "identical configuration and seed reproduce identical metrics");
    rep.holds(a.rows == b.rows && a.evals == b.evals && a.net == b.net);
    grads.push(rep.done());
    Ok(grads)
}

/// Run every check for one seed.
pub fn run_lemma_suite(seed: u64, opts: &SuiteOptions) -> Result<LemmaReport> {
    let mut entries = ema_checks(seed, 200)?;
    entries.extend(plc_checks(seed, opts.instances, opts.mutation)?);
    entries.extend(inference_checks(seed, opts.instances, opts.fuzz_instances)?);
    entries.extend(decoupling_checks(seed, opts.instances)?);
    entries.extend(training_checks(seed, opts.probe_steps)?);
    let passed = entries.iter().all(LemmaEntry::passed);
    Ok(LemmaReport { seed, passed, entries })
}
