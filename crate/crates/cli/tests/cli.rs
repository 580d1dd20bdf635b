use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use decon_cli::sweep::{mean_std, read_rows};
use decon_core::report::{read_metrics_csv, Checkpoint};
use decon_core::EvalReport;
use serde_json::Value;

const QUICK: [&str; 6] = ["-o", "epochs=2", "-o", "steps_per_epoch=20", "-o", "test_per_class=50"];

fn decon(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_decon"))
        .args(args)
        .current_dir(cwd)
        .env_remove("DECON_SEED")
        .output()
        .expect("spawn decon")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn rows(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count() - 1
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn gen_writes_four_files_with_matching_counts() {
    let t = tempfile::tempdir().unwrap();
    ok(&decon(
        &["gen", "--out", "a", "-o", "dataset.num_classes=2", "-o", "dataset.n1=30", "-o", "dataset.m1=40"],
        t.path(),
    ));
    let d = t.path().join("a");
    for f in ["labeled.csv", "unlabeled.csv", "sidecar.csv", "mixture.json"] {
        assert!(d.join(f).exists(), "{f}");
    }
    // n1=30, gamma 20 over two classes; reversed unlabeled pool mirrors the same ratio from m1=40
    assert_eq!(rows(&d.join("labeled.csv")), 30 + 2);
    assert_eq!(rows(&d.join("unlabeled.csv")), 2 + 40);
    assert_eq!(rows(&d.join("sidecar.csv")), 42);
}

#[test]
fn gen_is_byte_identical_for_a_seed() {
    let t = tempfile::tempdir().unwrap();
    for o in ["a", "b"] {
        ok(&decon(&["gen", "--out", o, "-o", "seed=5"], t.path()));
    }
    for f in ["labeled.csv", "unlabeled.csv", "sidecar.csv", "mixture.json"] {
        assert_eq!(fs::read(t.path().join("a").join(f)).unwrap(), fs::read(t.path().join("b").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn gen_reversed_head_class_count() {
    let t = tempfile::tempdir().unwrap();
    let o = [
        "-o",
        "dataset.num_classes=10",
        "-o",
        "dataset.gamma_l=100",
        "-o",
        "dataset.m1=4000",
        "-o",
        "dataset.shape=reversed",
    ];
    let mut args = vec!["gen", "--out", "r"];
    args.extend(o);
    ok(&decon(&args, t.path()));
    let text = fs::read_to_string(t.path().join("r/sidecar.csv")).unwrap();
    let zeros = text.lines().skip(1).filter(|l| l.ends_with(",0")).count();
    assert_eq!(zeros, 40);
}

#[test]
fn zero_epochs_gives_header_only_metrics() {
    let t = tempfile::tempdir().unwrap();
    ok(&decon(&["train", "--out", "z", "-o", "epochs=0"], t.path()));
    let text = fs::read_to_string(t.path().join("z/metrics.csv")).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("step,epoch,lr,l_labeled,l_con,l_b_labeled,l_b_con,total,gamma_t,pi_b_0"));
}

#[test]
fn both_algorithms_share_the_metrics_schema() {
    let t = tempfile::tempdir().unwrap();
    for alg in ["decon", "fixmatch"] {
        let mut a = vec!["train", "--out", alg, "--algorithm", alg];
        a.extend(QUICK);
        ok(&decon(&a, t.path()));
    }
    let header =
        |d: &str| fs::read_to_string(t.path().join(d).join("metrics.csv")).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header("decon"), header("fixmatch"));
    let m = read_metrics_csv(&t.path().join("fixmatch/metrics.csv")).unwrap();
    assert_eq!(m.len(), 40);
    assert_eq!(m.iter().filter(|l| l.eval.is_some()).count(), 2);
    assert!(m.iter().all(|l| l.losses.l_b_labeled == 0.0 && l.losses.l_b_con == 0.0));
}

#[test]
fn training_from_exported_data_matches_sampling() {
    let t = tempfile::tempdir().unwrap();
    ok(&decon(&["gen", "--out", "data"], t.path()));
    let mut a = vec!["train", "--out", "x"];
    a.extend(QUICK);
    ok(&decon(&a, t.path()));
    let mut b = vec!["train", "--out", "y", "--data", "data"];
    b.extend(QUICK);
    ok(&decon(&b, t.path()));
    assert_eq!(fs::read(t.path().join("x/metrics.csv")).unwrap(), fs::read(t.path().join("y/metrics.csv")).unwrap());
}

#[test]
fn eval_reproduces_the_last_in_loop_report() {
    let t = tempfile::tempdir().unwrap();
    let mut a = vec!["train", "--out", "fm", "--algorithm", "fixmatch"];
    a.extend(QUICK);
    ok(&decon(&a, t.path()));
    ok(&decon(&["eval", "--checkpoint", "fm/checkpoint.json", "--tau3", "0", "--out", "ev"], t.path()));
    let trained: EvalReport = serde_json::from_value(json(&t.path().join("fm/report.json"))).unwrap();
    let again: EvalReport = serde_json::from_value(json(&t.path().join("ev/report_tau0.json"))).unwrap();
    assert_eq!(trained, again);
}

#[test]
fn eval_tau3_sweep_and_version_guard() {
    let t = tempfile::tempdir().unwrap();
    let mut a = vec!["train", "--out", "dc"];
    a.extend(QUICK);
    ok(&decon(&a, t.path()));
    ok(&decon(&["eval", "--checkpoint", "dc/checkpoint.json", "--tau3", "0,1,2", "--out", "ev"], t.path()));
    for tau in ["0", "1", "2"] {
        assert!(t.path().join(format!("ev/report_tau{tau}.json")).exists());
        assert_eq!(rows(&t.path().join(format!("ev/predictions_tau{tau}.csv"))), 6 * 50);
    }
    let ck = Checkpoint::load(&t.path().join("dc/checkpoint.json")).unwrap();
    assert_eq!(ck.step, 40);

    let mut v = json(&t.path().join("dc/checkpoint.json"));
    v["version"] = 7.into();
    fs::write(t.path().join("old.json"), v.to_string()).unwrap();
    let out =
        decon(&["eval", "--checkpoint", "old.json", "--config", "dc/resolved-config.json", "--out", "e2"], t.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("version"));
}

#[test]
fn verify_passes_and_writes_a_report() {
    let t = tempfile::tempdir().unwrap();
    ok(&decon(&["verify", "--seed", "1", "--out", "v"], t.path()));
    let v = json(&t.path().join("v/lemma_report.json"));
    assert_eq!(v["seed"], 1);
    assert_eq!(v["passed"], true);
    let entries = v["entries"].as_array().unwrap();
    assert!(entries.len() >= 10);
    for e in entries {
        for k in ["lemma_name", "anchor_quote", "trials", "failures", "worst_violation"] {
            assert!(e.get(k).is_some(), "missing {k}");
        }
    }
}

#[test]
fn seed_environment_variable_and_override_log() {
    let t = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_decon"))
        .args(["train", "--out", "s", "-o", "epochs=0", "-o", "hyper.tau3=2"])
        .current_dir(t.path())
        .env("DECON_SEED", "42")
        .output()
        .unwrap();
    ok(&out);
    let r = json(&t.path().join("s/resolved-config.json"));
    assert_eq!(r["env_seed"], 42);
    assert_eq!(r["config"]["seed"], 42);
    assert_eq!(r["config"]["hyper"]["tau3"], 2.0);
    assert_eq!(r["overrides"], serde_json::json!(["epochs=0", "hyper.tau3=2"]));
}

#[test]
fn exit_codes() {
    let t = tempfile::tempdir().unwrap();
    assert_eq!(decon(&["train"], t.path()).status.code(), Some(1));
    assert_eq!(decon(&["nonsense"], t.path()).status.code(), Some(1));
    assert_eq!(decon(&["train", "--out", "x", "-o", "no_such_key=1"], t.path()).status.code(), Some(2));
    assert_eq!(decon(&["train", "--out", "x", "-o", "dataset.num_classes=1"], t.path()).status.code(), Some(2));
    fs::write(t.path().join("bad.json"), "{\n  \"epochs\": \"ten\"\n}").unwrap();
    let out = decon(&["gen", "--config", "bad.json", "--out", "x"], t.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
    assert_eq!(decon(&["--help"], t.path()).status.code(), Some(0));
}

#[test]
fn single_cell_sweep() {
    let t = tempfile::tempdir().unwrap();
    let mut a = vec!["sweep", "--out", "sw", "--shapes", "uniform", "--seeds", "1", "--dirichlet", "0"];
    a.extend(QUICK);
    ok(&decon(&a, t.path()));
    let r = read_rows(&t.path().join("sw/summary.csv")).unwrap();
    assert_eq!(r.len(), 1);
    assert_eq!(r[0].shape, "uniform");
    assert!(r[0].ok());
    assert!(t.path().join("sw/cells/decon_uniform_s0/metrics.csv").exists());
}

#[test]
fn sweep_stats_recompute_from_rows() {
    let t = tempfile::tempdir().unwrap();
    let mut a = vec![
        "sweep",
        "--out",
        "sw",
        "--shapes",
        "middle",
        "--seeds",
        "2",
        "--dirichlet",
        "1",
        "--algorithms",
        "decon,fixmatch",
    ];
    a.extend(QUICK);
    ok(&decon(&a, t.path()));
    let r = read_rows(&t.path().join("sw/summary.csv")).unwrap();
    assert_eq!(r.len(), 2 * 2 * 2);
    let mut stats = csv::Reader::from_path(t.path().join("sw/summary_stats.csv")).unwrap();
    let header = stats.headers().unwrap().clone();
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    let recs: Vec<csv::StringRecord> = stats.records().map(|x| x.unwrap()).collect();
    assert_eq!(recs.len(), 4);
    for rec in &recs {
        let group: Vec<f64> = r
            .iter()
            .filter(|x| x.algorithm == rec[0] && x.shape == rec[1])
            .map(|x| x.balanced_accuracy.unwrap())
            .collect();
        assert_eq!(group.len(), 2);
        let (m, s) = mean_std(&group);
        let got_m: f64 = rec[col("balanced_accuracy_mean")].parse().unwrap();
        let got_s: f64 = rec[col("balanced_accuracy_std")].parse().unwrap();
        assert!((got_m - m).abs() < 1e-12 && (got_s - s).abs() < 1e-12);
    }
}

#[test]
fn default_config_decon_pseudo_labels_beat_the_control() {
    let t = tempfile::tempdir().unwrap();
    ok(&decon(&["train", "--out", "d"], t.path()));
    ok(&decon(&["train", "--out", "f", "--algorithm", "fixmatch"], t.path()));
    let last = |d: &str| {
        read_metrics_csv(&t.path().join(d).join("metrics.csv")).unwrap().last().unwrap().eval.clone().unwrap()
    };
    assert!(last("d").pseudo_acc >= last("f").pseudo_acc);
}
