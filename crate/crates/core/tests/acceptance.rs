//! End-to-end acceptance checks. Each test prints one `[PASS]`/`[FAIL]`
//! line; run with `--nocapture` to see them.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use decon_core::datagen::make_mixture;
use decon_core::gradcheck::run_gradient_checks;
use decon_core::inference::top_with_margin;
use decon_core::lemmas::{run_lemma_suite, SuiteOptions};
use decon_core::oracle::{
    fit_balanced_softmax, grid_points, log_class_conditional, verify_prior_concentration, BayesOracle, DECOUPLING_TOL,
};
use decon_core::trainer::{evaluate_state, run_with, stationarity_probe, ProbeConfig};
use decon_core::{Algorithm, ClassPrior, Datasets, RunConfig, RunOutput, Shape};

const SEEDS: [u64; 3] = [0, 1, 2];

fn report(n: u32, name: &str, passed: bool, detail: String) {
    println!("[{}] criterion {n} {name}: {detail}", if passed { "PASS" } else { "FAIL" });
}

struct Run {
    cfg: RunConfig,
    data: Datasets,
    out: RunOutput,
}

fn train(cfg: RunConfig) -> Run {
    let data = Datasets::generate(&cfg.resolved_dataset(), cfg.test_per_class).unwrap();
    let out = run_with(&cfg, &data, |_| Ok(())).unwrap();
    Run { cfg, data, out }
}

fn default_run(algorithm: Algorithm, seed: u64, shape: Shape) -> Run {
    let mut cfg = RunConfig { algorithm, seed, ..RunConfig::default() };
    cfg.dataset.shape = shape;
    train(cfg)
}

/// DeCon and FixMatch on the default task, one pair per seed.
struct DefaultTask {
    decon: Vec<Run>,
    fixmatch: Vec<Run>,
    elapsed: Duration,
}

fn default_task() -> &'static DefaultTask {
    static CELL: OnceLock<DefaultTask> = OnceLock::new();
    CELL.get_or_init(|| {
        let start = Instant::now();
        let decon = SEEDS.iter().map(|&s| default_run(Algorithm::Decon, s, Shape::Reversed)).collect();
        let fixmatch = SEEDS.iter().map(|&s| default_run(Algorithm::Fixmatch, s, Shape::Reversed)).collect();
        DefaultTask { decon, fixmatch, elapsed: start.elapsed() }
    })
}

fn balanced_at(run: &Run, tau3: f64) -> f64 {
    evaluate_state(&run.cfg, &run.data, &run.out.net, &run.out.state, tau3).unwrap().balanced_accuracy
}

#[test]
fn criterion_1_lemma_suite() {
    let start = Instant::now();
    let mut failed = Vec::new();
    let mut checks = 0;
    for seed in SEEDS {
        let r = run_lemma_suite(seed, &SuiteOptions::default()).unwrap();
        checks += r.entries.len();
        failed.extend(r.entries.iter().filter(|e| !e.passed()).map(|e| format!("seed {seed}: {}", e.lemma_name)));
    }
    let secs = start.elapsed().as_secs_f64();
    let passed = failed.is_empty() && secs < 60.0;
    report(
        1,
        "lemma suite",
        passed,
        format!("{checks} checks over 3 seeds, failed {failed:?}, {secs:.1}s (limit 60s)"),
    );
    assert!(passed);
}

#[test]
fn criterion_2_gradient_checks() {
    let start = Instant::now();
    let checks = run_gradient_checks(0, 5).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let worst = checks.iter().map(|c| c.max_rel_err).fold(0.0, f64::max);
    let ok = checks.iter().all(|c| c.passed && c.instances >= 5) && checks.len() >= 5;
    let passed = ok && secs < 30.0;
    let names: Vec<&str> = checks.iter().map(|c| c.name.as_str()).collect();
    report(
        2,
        "gradient checks",
        passed,
        format!("{names:?}, worst rel err {worst:.2e} (limit 1e-4), {secs:.1}s (limit 30s)"),
    );
    assert!(passed);
}

#[test]
fn criterion_3_decoupling() {
    let mut worst_spread = 0.0f64;
    let mut disagreements = 0;
    let mut points = 0;
    for seed in SEEDS {
        let mix = make_mixture(6, 2, 2.5, seed).unwrap();
        let lt = decon_core::datagen::longtail_counts(200, 20.0, 6).unwrap();
        let rev: Vec<usize> = lt.iter().rev().copied().collect();
        let pi_l = ClassPrior::from_counts(&lt).unwrap();
        let fit = fit_balanced_softmax(&mix, &pi_l, 0.2, 50, 3.0).unwrap();
        worst_spread = worst_spread.max(fit.max_spread);
        for target in [ClassPrior::uniform(6), pi_l.clone(), ClassPrior::from_counts(&rev).unwrap()] {
            let bayes = BayesOracle::new(mix.clone(), target.clone()).unwrap();
            let lp = target.log();
            for x in grid_points(&mix, 50, 3.0).unwrap() {
                let s: Vec<f64> =
                    fit.scores(&log_class_conditional(&mix, &x).unwrap()).iter().zip(&lp).map(|(a, b)| a + b).collect();
                points += 1;
                disagreements += usize::from(top_with_margin(&s).0 != bayes.predict(&x).unwrap());
            }
        }
    }
    let passed = worst_spread < DECOUPLING_TOL && disagreements == 0;
    report(
        3,
        "decoupling",
        passed,
        format!("max offset spread {worst_spread:.2e} (limit {DECOUPLING_TOL}), {disagreements} disagreements on {points} grid points"),
    );
    assert!(passed);
}

#[test]
fn criterion_4_decon_beats_control() {
    let t = default_task();
    let mut gaps = Vec::new();
    let mut wins = 0;
    for (d, f) in t.decon.iter().zip(&t.fixmatch) {
        let (rd, rf) = (d.out.final_report().unwrap(), f.out.final_report().unwrap());
        gaps.push(rd.balanced_accuracy - rf.balanced_accuracy);
        wins += usize::from(rd.pseudo_acc > rf.pseudo_acc);
    }
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    let secs = t.elapsed.as_secs_f64();
    let passed = mean >= 0.05 && wins == SEEDS.len() && secs < 900.0;
    let pts: Vec<String> = gaps.iter().map(|g| format!("{:.2}", 100.0 * g)).collect();
    report(
        4,
        "decon vs fixmatch",
        passed,
        format!(
            "balanced-accuracy gap {:.2} pts mean (per seed {pts:?}, need >= 5), pseudo-label wins {wins}/3, {secs:.1}s (limit 900s)",
            100.0 * mean
        ),
    );
    assert!(passed);
}

#[test]
fn criterion_5_post_hoc_adjustment() {
    let t = default_task();
    let pairs: Vec<(f64, f64)> = t.decon.iter().map(|r| (balanced_at(r, 1.0), balanced_at(r, 0.0))).collect();
    let passed = pairs.iter().all(|(a, b)| a >= b);
    let txt: Vec<String> = pairs.iter().map(|(a, b)| format!("{a:.4} vs {b:.4}")).collect();
    report(5, "post-hoc adjustment", passed, format!("balanced accuracy tau3=1 vs tau3=0 per seed {txt:?}"));
    assert!(passed);
}

#[test]
fn criterion_6_branch_convergence() {
    let t = default_task();
    let shapes = [
        Shape::Consistent,
        Shape::Uniform,
        Shape::Middle,
        Shape::HeadTail,
        Shape::DirichletRandom { alpha: 1.0, seed: 0 },
        Shape::DirichletRandom { alpha: 1.0, seed: 1 },
    ];
    let mut worst = (0.0f64, String::new());
    let mut failures = Vec::new();
    let mut check = |name: String, run: &Run| {
        let first = run.out.evals.first().unwrap().1.branch_kl;
        let last = run.out.final_report().unwrap().branch_kl;
        let ratio = last / first;
        if ratio > worst.0 {
            worst = (ratio, name.clone());
        }
        let shrank = last < 0.5 * first;
        if !shrank {
            failures.push(format!("{name}: {first:.4} -> {last:.4}"));
        }
    };
    for run in &t.decon {
        check(format!("reversed s{}", run.cfg.seed), run);
    }
    let mut cells = 3;
    for shape in shapes {
        for seed in SEEDS {
            check(format!("{} s{seed}", shape.name()), &default_run(Algorithm::Decon, seed, shape));
            cells += 1;
        }
    }
    let passed = failures.is_empty();
    report(
        6,
        "branch convergence",
        passed,
        format!("{cells} runs, worst final/first KL ratio {:.3} ({}), failures {failures:?}", worst.0, worst.1),
    );
    assert!(passed);
}

#[test]
fn criterion_7_prior_concentration() {
    let mut lines = Vec::new();
    let mut passed = true;
    for seed in SEEDS {
        let mix = make_mixture(2, 2, 2.5, seed).unwrap();
        let pi_u = ClassPrior::new(vec![0.2, 0.8]).unwrap();
        let r = verify_prior_concentration(&mix, &pi_u, 100, 200, 0.05, seed).unwrap();
        passed &= r.passed;
        lines.push(format!("s{seed} {:.3} within", r.pass_fraction));
    }
    report(7, "prior concentration", passed, format!("{lines:?} (need >= 0.95)"));
    assert!(passed);
}

#[test]
fn criterion_8_stationarity_probe() {
    let mut flips = Vec::new();
    for seed in SEEDS {
        let r = stationarity_probe(&ProbeConfig { seed, ..Default::default() }).unwrap();
        flips.push((r.flips_final_quarter, r.last_flip_step, r.steps));
    }
    let passed = flips.iter().all(|f| f.0 == 0);
    let txt: Vec<String> = flips.iter().map(|(f, l, s)| format!("{f} flips, last at {l}/{s}")).collect();
    report(8, "stationarity probe", passed, format!("final-quarter flips per seed {txt:?}"));
    assert!(passed);
}
