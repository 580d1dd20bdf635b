use std::path::Path;

use decon_core::lemmas::{run_lemma_suite, SuiteOptions};
use decon_core::metrics::{evaluate, predict_test, EvalOptions};
use decon_core::report::{
    read_dataset_dir, write_dataset_dir, write_json, write_metrics_csv, write_predictions_csv, Checkpoint,
};
use decon_core::trainer::{eval_data, reported_tau3, run_with};
use decon_core::{ClassPrior, Datasets, EvalReport, MetricsLine, RunConfig};

use crate::args::{EvalArgs, GenArgs, TrainArgs, VerifyArgs};
use crate::failure::{Classify, CliResult, Failure, Kind};
use crate::resolve::{env_seed, prepare_out, resolve, write_resolved, RESOLVED_FILE};

pub fn load_data(cfg: &RunConfig, dir: Option<&Path>) -> CliResult<Datasets> {
    let spec = cfg.resolved_dataset();
    match dir {
        Some(d) => read_dataset_dir(d, cfg.test_per_class, spec.seed)
            .or_fail(Kind::Config, &format!("dataset {}", d.display())),
        None => Datasets::generate(&spec, cfg.test_per_class).or_fail(Kind::Config, "dataset"),
    }
}

pub fn gen(a: &GenArgs) -> CliResult<()> {
    let r = resolve(a.config.config.as_deref(), &a.config.overrides)?;
    prepare_out(&a.out)?;
    write_resolved(&a.out, &r)?;
    let data = load_data(&r.config, None)?;
    write_dataset_dir(&a.out, &data).or_fail(Kind::Usage, "writing dataset")?;
    println!("labeled   {:?}", data.labeled_counts);
    println!("unlabeled {:?}", data.unlabeled_counts);
    Ok(())
}

pub fn summary_line(name: &str, r: &EvalReport) -> String {
    format!(
        "{name}: acc {:.4} bal {:.4} raw {:.4} pseudo {:.4} head {:.4} tail {:.4} kl {:.4} psi_gap {:.4}",
        r.accuracy,
        r.balanced_accuracy,
        r.accuracy_raw,
        r.pseudo_acc,
        r.head_group.recall,
        r.tail_group.recall,
        r.branch_kl,
        r.psi_gap
    )
}

pub fn train(a: &TrainArgs) -> CliResult<()> {
    let mut overrides = a.config.overrides.clone();
    if let Some(alg) = &a.algorithm {
        overrides.push(format!("algorithm={alg}"));
    }
    let r = resolve(a.config.config.as_deref(), &overrides)?;
    prepare_out(&a.out)?;
    write_resolved(&a.out, &r)?;
    let cfg = &r.config;
    let data = load_data(cfg, a.data.as_deref())?;

    let ckpt_dir = a.out.join("checkpoints");
    if a.checkpoint_every > 0 {
        prepare_out(&ckpt_dir)?;
    }
    let every = a.checkpoint_every;
    let out = run_with(cfg, &data, |p| {
        if every > 0 && p.epoch % every == 0 {
            Checkpoint::capture(p.epoch, p.net, p.state).save(&ckpt_dir.join(format!("epoch_{:04}.json", p.epoch)))?;
        }
        eprintln!("{}", summary_line(&format!("epoch {:>3}", p.epoch), p.report));
        Ok(())
    })
    .or_fail(Kind::Usage, "training")?;

    let lines: Vec<MetricsLine> = out.rows.iter().map(MetricsLine::from).collect();
    write_metrics_csv(&a.out.join("metrics.csv"), data.num_classes(), &lines)
        .or_fail(Kind::Usage, "writing metrics")?;
    Checkpoint::capture(cfg.epochs, &out.net, &out.state)
        .save(&a.out.join("checkpoint.json"))
        .or_fail(Kind::Usage, "writing checkpoint")?;
    if let Some(rep) = out.final_report() {
        write_json(&a.out.join("report.json"), rep).or_fail(Kind::Usage, "writing report")?;
        println!("{}", summary_line(cfg.algorithm.name(), rep));
    }
    Ok(())
}

pub fn eval(a: &EvalArgs) -> CliResult<()> {
    let ck =
        Checkpoint::load(&a.checkpoint).or_fail(Kind::Config, &format!("checkpoint {}", a.checkpoint.display()))?;
    let cfg_path =
        a.config.clone().or_else(|| a.checkpoint.parent().map(|d| d.join(RESOLVED_FILE)).filter(|p| p.exists()));
    let r = resolve(cfg_path.as_deref(), &a.overrides)?;
    let cfg = RunConfig { algorithm: ck.algorithm, ..r.config };
    prepare_out(&a.out)?;
    let data = load_data(&cfg, a.data.as_deref())?;

    let bad = |e: decon_core::Error| Failure::new(Kind::Config, format!("checkpoint: {e}"));
    let ema = ck.ema_net().map_err(bad)?;
    let live = ck.live_net().map_err(bad)?;
    let (pi_b, pi_s) = (ck.pi_b().map_err(bad)?, ck.pi_s().map_err(bad)?);
    if ema.input_dim() != data.mixture.dim() || ema.num_classes() != data.num_classes() {
        return Err(Failure::new(Kind::Config, "checkpoint shape does not match the dataset"));
    }
    let pi_u = ClassPrior::from_counts(&data.unlabeled_counts).or_fail(Kind::Config, "dataset")?;
    let ed = eval_data(&data, &pi_u);
    let taus = if a.tau3.is_empty() { vec![reported_tau3(&cfg)] } else { a.tau3.clone() };
    for tau3 in taus {
        if !(tau3 >= 0.0) {
            return Err(Failure::new(Kind::Usage, format!("tau3 must be >= 0, got {tau3}")));
        }
        let opts = EvalOptions {
            branch: cfg.reported_branch(),
            tau3,
            pi_b: pi_b.clone(),
            pi_s: pi_s.clone(),
            rule: cfg.pseudo_label_rule(),
        };
        let rep = evaluate(&ema, &live, &ed, &opts).or_fail(Kind::Usage, "evaluation")?;
        let preds = predict_test(&ema, &data.test, &opts).or_fail(Kind::Usage, "evaluation")?;
        write_json(&a.out.join(format!("report_tau{tau3}.json")), &rep).or_fail(Kind::Usage, "writing report")?;
        write_predictions_csv(&a.out.join(format!("predictions_tau{tau3}.csv")), &preds)
            .or_fail(Kind::Usage, "writing predictions")?;
        println!("{}", summary_line(&format!("tau3={tau3}"), &rep));
    }
    Ok(())
}

pub fn verify(a: &VerifyArgs) -> CliResult<()> {
    let seed = match a.seed {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    };
    prepare_out(&a.out)?;
    let report = run_lemma_suite(seed, &SuiteOptions::default()).or_fail(Kind::Usage, "lemma suite")?;
    write_json(&a.out.join("lemma_report.json"), &report).or_fail(Kind::Usage, "writing lemma report")?;
    for e in &report.entries {
        println!(
            "{:<4} {:<34} {:>6} trials {:>4} failures  worst {:.3e}",
            if e.passed() { "ok" } else { "FAIL" },
            e.lemma_name,
            e.trials,
            e.failures,
            e.worst_violation
        );
    }
    if report.passed {
        println!("seed {seed}: all {} checks passed", report.entries.len());
        Ok(())
    } else {
        let n = report.entries.iter().filter(|e| !e.passed()).count();
        Err(Failure::new(Kind::Verification, format!("seed {seed}: {n} check(s) failed")))
    }
}
