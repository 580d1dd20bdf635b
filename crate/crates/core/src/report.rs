//! On-disk artifacts: checkpoints, the per-step metrics log, evaluation
//! reports and prediction dumps. Every writer has a matching reader.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::{self, Datasets, GaussianMixture};
use crate::error::{Error, Result};
use crate::losses::LossBreakdown;
use crate::metrics::{EvalReport, PredictionRow};
use crate::net::{DualNet, NamedTensor};
use crate::prior::ClassPrior;
use crate::trainer::{Algorithm, MetricsRow, TrainState};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub algorithm: Algorithm,
    pub epoch: usize,
    pub step: usize,
    pub leaky_slope: f64,
    pub live: Vec<NamedTensor>,
    pub ema: Vec<NamedTensor>,
    pub pi_b: Vec<f64>,
    pub pi_s: Vec<f64>,
    pub gamma_t: f64,
}

impl Checkpoint {
    pub fn capture(epoch: usize, net: &DualNet, state: &TrainState) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            algorithm: state.algorithm,
            epoch,
            step: state.step,
            leaky_slope: net.leaky_slope,
            live: net.to_named_tensors(),
            ema: state.param_ema.to_named_tensors(),
            pi_b: state.pi_b().probs().to_vec(),
            pi_s: state.pi_s().probs().to_vec(),
            gamma_t: state.gamma_t,
        }
    }

    pub fn live_net(&self) -> Result<DualNet> {
        DualNet::from_named_tensors(&self.live, self.leaky_slope)
    }

    pub fn ema_net(&self) -> Result<DualNet> {
        DualNet::from_named_tensors(&self.ema, self.leaky_slope)
    }

    pub fn pi_b(&self) -> Result<ClassPrior> {
        ClassPrior::new(self.pi_b.clone())
    }

    pub fn pi_s(&self) -> Result<ClassPrior> {
        ClassPrior::new(self.pi_s.clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    /// Load, rejecting any version other than [`CHECKPOINT_VERSION`].
    pub fn load(path: &Path) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_reader(std::io::BufReader::new(File::open(path)?))?;
        let found = v
            .get("version")
            .and_then(|x| x.as_u64())
            .ok_or_else(|| Error::Malformed("checkpoint has no version".into()))?;
        if found != u64::from(CHECKPOINT_VERSION) {
            return Err(Error::CheckpointVersion { expected: CHECKPOINT_VERSION, found: found as u32 });
        }
        Ok(serde_json::from_value(v)?)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(std::io::BufReader::new(File::open(path)?))?)
}

pub const DATASET_FILES: [&str; 4] = ["labeled.csv", "unlabeled.csv", "sidecar.csv", "mixture.json"];

/// Export both pools, the unlabeled truth and the mixture into `dir`.
pub fn write_dataset_dir(dir: &Path, data: &Datasets) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    datagen::write_samples_csv(&dir.join(DATASET_FILES[0]), &data.labeled, "labeled")?;
    datagen::write_samples_csv(&dir.join(DATASET_FILES[1]), &data.unlabeled, "unlabeled")?;
    datagen::write_sidecar_csv(&dir.join(DATASET_FILES[2]), &data.unlabeled_truth)?;
    write_json(&dir.join(DATASET_FILES[3]), &data.mixture)
}

/// Inverse of [`write_dataset_dir`]. The test set is redrawn from the stored
/// mixture with `seed`.
pub fn read_dataset_dir(dir: &Path, test_per_class: usize, seed: u64) -> Result<Datasets> {
    let mixture: GaussianMixture = read_json(&dir.join(DATASET_FILES[3]))?;
    let labeled = datagen::read_samples_csv(&dir.join(DATASET_FILES[0]))?;
    let unlabeled = datagen::read_samples_csv(&dir.join(DATASET_FILES[1]))?;
    let truth = datagen::read_sidecar_csv(&dir.join(DATASET_FILES[2]))?;
    Datasets::from_parts(mixture, labeled, unlabeled, truth, test_per_class, seed)
}

/// Evaluation columns of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalColumns {
    pub accuracy: f64,
    pub balanced_accuracy: f64,
    pub accuracy_raw: f64,
    pub pseudo_acc: f64,
    pub branch_kl: f64,
    pub branch_kl_live: f64,
    pub prior_kl: f64,
    pub psi_gap: f64,
    pub psi_gap_degenerate: bool,
    pub head_recall: f64,
    pub tail_recall: f64,
}

impl From<&EvalReport> for EvalColumns {
    fn from(r: &EvalReport) -> Self {
        Self {
            accuracy: r.accuracy,
            balanced_accuracy: r.balanced_accuracy,
            accuracy_raw: r.accuracy_raw,
            pseudo_acc: r.pseudo_acc,
            branch_kl: r.branch_kl,
            branch_kl_live: r.branch_kl_live,
            prior_kl: r.prior_kl,
            psi_gap: r.psi_gap,
            psi_gap_degenerate: r.psi_gap_degenerate,
            head_recall: r.head_group.recall,
            tail_recall: r.tail_group.recall,
        }
    }
}

const EVAL_NAMES: [&str; 11] = [
    "accuracy",
    "balanced_accuracy",
    "accuracy_raw",
    "pseudo_acc",
    "branch_kl",
    "branch_kl_live",
    "prior_kl",
    "psi_gap",
    "psi_gap_degenerate",
    "head_recall",
    "tail_recall",
];

/// One parsed line of `metrics.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsLine {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub losses: LossBreakdown,
    pub total: f64,
    pub gamma_t: f64,
    pub pi_b: Vec<f64>,
    pub pi_s: Vec<f64>,
    pub eval: Option<EvalColumns>,
}

impl From<&MetricsRow> for MetricsLine {
    fn from(r: &MetricsRow) -> Self {
        Self {
            step: r.record.step,
            epoch: r.epoch,
            lr: r.record.lr,
            losses: r.record.losses,
            total: r.record.total,
            gamma_t: r.record.gamma_t,
            pi_b: r.record.pi_b.clone(),
            pi_s: r.record.pi_s.clone(),
            eval: r.eval.as_ref().map(EvalColumns::from),
        }
    }
}

/// Fixed column order for `num_classes` classes.
pub fn metrics_header(num_classes: usize) -> Vec<String> {
    let mut h: Vec<String> =
        ["step", "epoch", "lr", "l_labeled", "l_con", "l_b_labeled", "l_b_con", "total", "gamma_t"]
            .iter()
            .map(|s| s.to_string())
            .collect();
    h.extend((0..num_classes).map(|k| format!("pi_b_{k}")));
    h.extend((0..num_classes).map(|k| format!("pi_s_{k}")));
    h.extend(EVAL_NAMES.iter().map(|s| s.to_string()));
    h
}

pub fn write_metrics_csv(path: &Path, num_classes: usize, lines: &[MetricsLine]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(metrics_header(num_classes))?;
    for l in lines {
        if l.pi_b.len() != num_classes || l.pi_s.len() != num_classes {
            return Err(Error::DimensionMismatch { expected: num_classes, got: l.pi_b.len().max(l.pi_s.len()) });
        }
        let mut rec: Vec<String> = vec![l.step.to_string(), l.epoch.to_string()];
        for v in [l.lr, l.losses.l_labeled, l.losses.l_con, l.losses.l_b_labeled, l.losses.l_b_con, l.total, l.gamma_t]
        {
            rec.push(v.to_string());
        }
        rec.extend(l.pi_b.iter().chain(&l.pi_s).map(|v| v.to_string()));
        match &l.eval {
            Some(e) => {
                for v in [
                    e.accuracy,
                    e.balanced_accuracy,
                    e.accuracy_raw,
                    e.pseudo_acc,
                    e.branch_kl,
                    e.branch_kl_live,
                    e.prior_kl,
                    e.psi_gap,
                ] {
                    rec.push(v.to_string());
                }
                rec.push(e.psi_gap_degenerate.to_string());
                rec.push(e.head_recall.to_string());
                rec.push(e.tail_recall.to_string());
            }
            None => rec.extend(std::iter::repeat_n(String::new(), EVAL_NAMES.len())),
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, name: &str) -> Result<T> {
    rec.get(i)
        .ok_or_else(|| Error::Malformed(format!("missing column {name}")))?
        .parse()
        .map_err(|_| Error::Malformed(format!("bad value in column {name}: {:?}", rec.get(i))))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsLine>> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let c = header.iter().filter(|h| h.starts_with("pi_b_")).count();
    let expect = metrics_header(c);
    if header.iter().ne(expect.iter().map(|s| s.as_str())) {
        return Err(Error::Malformed("unexpected metrics.csv header".into()));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let f = |i: usize| field::<f64>(&rec, i, &expect[i]);
        let base = 9 + 2 * c;
        let eval = if rec.get(base).is_some_and(|s| !s.is_empty()) {
            Some(EvalColumns {
                accuracy: f(base)?,
                balanced_accuracy: f(base + 1)?,
                accuracy_raw: f(base + 2)?,
                pseudo_acc: f(base + 3)?,
                branch_kl: f(base + 4)?,
                branch_kl_live: f(base + 5)?,
                prior_kl: f(base + 6)?,
                psi_gap: f(base + 7)?,
                psi_gap_degenerate: field(&rec, base + 8, "psi_gap_degenerate")?,
                head_recall: f(base + 9)?,
                tail_recall: f(base + 10)?,
            })
        } else {
            None
        };
        out.push(MetricsLine {
            step: field(&rec, 0, "step")?,
            epoch: field(&rec, 1, "epoch")?,
            lr: f(2)?,
            losses: LossBreakdown { l_labeled: f(3)?, l_con: f(4)?, l_b_labeled: f(5)?, l_b_con: f(6)? },
            total: f(7)?,
            gamma_t: f(8)?,
            pi_b: (0..c).map(|k| f(9 + k)).collect::<Result<_>>()?,
            pi_s: (0..c).map(|k| f(9 + c + k)).collect::<Result<_>>()?,
            eval,
        });
    }
    Ok(out)
}

pub fn write_predictions_csv(path: &Path, rows: &[PredictionRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions_csv(path: &Path) -> Result<Vec<PredictionRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|x| x.map_err(Error::from)).collect()
}
