use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use decon_core::report::{write_metrics_csv, MetricsLine};
use decon_core::trainer::{evaluate_state, run_with};
use decon_core::{Algorithm, Datasets, RunConfig, Shape};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::args::SweepArgs;
use crate::failure::{Classify, CliResult, Failure, Kind};
use crate::resolve::{prepare_out, resolve, write_resolved};

/// One (algorithm, shape, seed) cell of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub algorithm: String,
    pub shape: String,
    pub seed: u64,
    pub status: String,
    pub accuracy: Option<f64>,
    pub balanced_accuracy: Option<f64>,
    pub balanced_accuracy_tau0: Option<f64>,
    pub pseudo_acc: Option<f64>,
    pub head_recall: Option<f64>,
    pub tail_recall: Option<f64>,
    pub psi_gap: Option<f64>,
    pub prior_kl: Option<f64>,
    pub branch_kl_first: Option<f64>,
    pub branch_kl_final: Option<f64>,
    pub seconds: f64,
    pub error: String,
}

impl SweepRow {
    fn failed(algorithm: Algorithm, shape: &Shape, seed: u64, seconds: f64, error: String) -> Self {
        Self {
            algorithm: algorithm.name().into(),
            shape: shape.name(),
            seed,
            status: "error".into(),
            accuracy: None,
            balanced_accuracy: None,
            balanced_accuracy_tau0: None,
            pseudo_acc: None,
            head_recall: None,
            tail_recall: None,
            psi_gap: None,
            prior_kl: None,
            branch_kl_first: None,
            branch_kl_final: None,
            seconds,
            error,
        }
    }

    pub fn ok(&self) -> bool {
        self.status == "ok"
    }

    pub fn metrics(&self) -> [(&'static str, Option<f64>); 10] {
        [
            ("accuracy", self.accuracy),
            ("balanced_accuracy", self.balanced_accuracy),
            ("balanced_accuracy_tau0", self.balanced_accuracy_tau0),
            ("pseudo_acc", self.pseudo_acc),
            ("head_recall", self.head_recall),
            ("tail_recall", self.tail_recall),
            ("psi_gap", self.psi_gap),
            ("prior_kl", self.prior_kl),
            ("branch_kl_first", self.branch_kl_first),
            ("branch_kl_final", self.branch_kl_final),
        ]
    }
}

/// Sample mean and standard deviation (n - 1 denominator; 0 for one value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per (algorithm, shape) aggregate over successful cells.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeStats {
    pub algorithm: String,
    pub shape: String,
    pub n: usize,
    pub stats: Vec<(&'static str, f64, f64)>,
}

pub fn aggregate(rows: &[SweepRow]) -> Vec<ShapeStats> {
    let mut keys: Vec<(String, String)> = Vec::new();
    for r in rows.iter().filter(|r| r.ok()) {
        let k = (r.algorithm.clone(), r.shape.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(algorithm, shape)| {
            let group: Vec<&SweepRow> =
                rows.iter().filter(|r| r.ok() && r.algorithm == algorithm && r.shape == shape).collect();
            let names = group[0].metrics().map(|(n, _)| n);
            let stats = names
                .iter()
                .enumerate()
                .map(|(i, name)| {
                    let xs: Vec<f64> =
                        group.iter().filter_map(|r| r.metrics()[i].1).filter(|v| v.is_finite()).collect();
                    let (m, s) = if xs.is_empty() { (f64::NAN, f64::NAN) } else { mean_std(&xs) };
                    (*name, m, s)
                })
                .collect();
            ShapeStats { algorithm, shape, n: group.len(), stats }
        })
        .collect()
}

pub fn write_stats_csv(path: &Path, stats: &[ShapeStats]) -> decon_core::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["algorithm".to_string(), "shape".into(), "n".into()];
    if let Some(s) = stats.first() {
        for (name, _, _) in &s.stats {
            header.push(format!("{name}_mean"));
            header.push(format!("{name}_std"));
        }
    }
    w.write_record(&header)?;
    for s in stats {
        let mut rec = vec![s.algorithm.clone(), s.shape.clone(), s.n.to_string()];
        for (_, m, sd) in &s.stats {
            rec.push(m.to_string());
            rec.push(sd.to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows(path: &Path) -> decon_core::Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|x| x.map_err(decon_core::Error::from)).collect()
}

fn run_cell(cfg: &RunConfig, dir: &Path) -> decon_core::Result<SweepRow> {
    let start = Instant::now();
    let data = Datasets::generate(&cfg.resolved_dataset(), cfg.test_per_class)?;
    let out = run_with(cfg, &data, |_| Ok(()))?;
    std::fs::create_dir_all(dir)?;
    let lines: Vec<MetricsLine> = out.rows.iter().map(MetricsLine::from).collect();
    write_metrics_csv(&dir.join("metrics.csv"), data.num_classes(), &lines)?;
    let last = out.final_report().ok_or(decon_core::Error::EmptyBatch)?;
    let tau0 = evaluate_state(cfg, &data, &out.net, &out.state, 0.0)?;
    Ok(SweepRow {
        algorithm: cfg.algorithm.name().into(),
        shape: cfg.dataset.shape.name(),
        seed: cfg.seed,
        status: "ok".into(),
        accuracy: Some(last.accuracy),
        balanced_accuracy: Some(last.balanced_accuracy),
        balanced_accuracy_tau0: Some(tau0.balanced_accuracy),
        pseudo_acc: Some(last.pseudo_acc),
        head_recall: Some(last.head_group.recall),
        tail_recall: Some(last.tail_group.recall),
        psi_gap: Some(last.psi_gap),
        prior_kl: Some(last.prior_kl),
        branch_kl_first: out.evals.first().map(|(_, r)| r.branch_kl),
        branch_kl_final: Some(last.branch_kl),
        seconds: start.elapsed().as_secs_f64(),
        error: String::new(),
    })
}

pub fn sweep(a: &SweepArgs) -> CliResult<()> {
    let r = resolve(a.config.config.as_deref(), &a.config.overrides)?;
    if r.config.epochs == 0 {
        return Err(Failure::new(Kind::Config, "a sweep needs epochs >= 1"));
    }
    let mut shapes: Vec<Shape> =
        a.shapes.iter().map(|s| Shape::parse(s)).collect::<Result<_, _>>().or_fail(Kind::Usage, "--shapes")?;
    shapes.extend((0..a.dirichlet as u64).map(|seed| Shape::DirichletRandom { alpha: a.alpha, seed }));
    let algorithms: Vec<Algorithm> = if a.algorithms.is_empty() {
        vec![r.config.algorithm]
    } else {
        a.algorithms
            .iter()
            .map(|s| Algorithm::parse(s))
            .collect::<Result<_, _>>()
            .or_fail(Kind::Usage, "--algorithms")?
    };
    prepare_out(&a.out)?;
    write_resolved(&a.out, &r)?;

    let mut cells = Vec::new();
    for alg in &algorithms {
        for shape in &shapes {
            for i in 0..a.seeds {
                let mut cfg = r.config.clone();
                cfg.algorithm = *alg;
                cfg.dataset.shape = *shape;
                cfg.seed = r.config.seed + i;
                cfg.validate().or_fail(Kind::Config, &format!("shape {}", shape.name()))?;
                cells.push(cfg);
            }
        }
    }

    let summary = a.out.join("summary.csv");
    let writer = Mutex::new(csv::Writer::from_path(&summary).or_fail(Kind::Usage, "summary.csv")?);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(a.jobs).build().or_fail(Kind::Usage, "thread pool")?;
    let mut rows: Vec<SweepRow> = pool.install(|| {
        cells
            .par_iter()
            .map(|cfg| {
                let name = format!("{}_{}_s{}", cfg.algorithm.name(), cfg.dataset.shape.name(), cfg.seed);
                let start = Instant::now();
                let row = run_cell(cfg, &a.out.join("cells").join(&name)).unwrap_or_else(|e| {
                    SweepRow::failed(
                        cfg.algorithm,
                        &cfg.dataset.shape,
                        cfg.seed,
                        start.elapsed().as_secs_f64(),
                        e.to_string(),
                    )
                });
                eprintln!("{name}: {} in {:.1}s", row.status, row.seconds);
                let mut w = writer.lock().unwrap_or_else(|p| p.into_inner());
                if w.serialize(&row).and_then(|_| w.flush().map_err(Into::into)).is_err() {
                    eprintln!("{name}: could not append to summary.csv");
                }
                row
            })
            .collect()
    });
    drop(writer);

    let order = |r: &SweepRow| {
        let a = algorithms.iter().position(|x| x.name() == r.algorithm);
        let s = shapes.iter().position(|x| x.name() == r.shape);
        (a, s, r.seed)
    };
    rows.sort_by_key(order);
    let mut w = csv::Writer::from_path(&summary).or_fail(Kind::Usage, "summary.csv")?;
    for row in &rows {
        w.serialize(row).or_fail(Kind::Usage, "summary.csv")?;
    }
    w.flush().or_fail(Kind::Usage, "summary.csv")?;
    let stats = aggregate(&rows);
    write_stats_csv(&a.out.join("summary_stats.csv"), &stats).or_fail(Kind::Usage, "summary_stats.csv")?;
    for s in &stats {
        let get = |n: &str| s.stats.iter().find(|x| x.0 == n).map_or((f64::NAN, f64::NAN), |x| (x.1, x.2));
        let (bm, bs) = get("balanced_accuracy");
        let (pm, ps) = get("pseudo_acc");
        let (km, ks) = get("branch_kl_final");
        println!(
            "{:<8} {:<22} n={} bal {bm:.4}±{bs:.4} pseudo {pm:.4}±{ps:.4} kl {km:.4}±{ks:.4}",
            s.algorithm, s.shape, s.n
        );
    }
    let failed = rows.iter().filter(|r| !r.ok()).count();
    if failed > 0 {
        return Err(Failure::new(
            Kind::Usage,
            format!("{failed} of {} cells failed; see {}", rows.len(), summary.display()),
        ));
    }
    Ok(())
}
