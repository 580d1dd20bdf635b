//! Long-tailed labeled/unlabeled pools drawn from one shared Gaussian
//! mixture, so the class-conditionals are identical across pools and only
//! the class priors differ.

use std::f64::consts::PI;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::{self, Rng};

/// Shape of the unlabeled class distribution relative to the labeled long tail.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Consistent,
    Uniform,
    Reversed,
    Middle,
    HeadTail,
    DirichletRandom { alpha: f64, seed: u64 },
}

impl Shape {
    pub fn name(&self) -> String {
        match self {
            Shape::Consistent => "consistent".into(),
            Shape::Uniform => "uniform".into(),
            Shape::Reversed => "reversed".into(),
            Shape::Middle => "middle".into(),
            Shape::HeadTail => "headtail".into(),
            Shape::DirichletRandom { alpha, seed } => format!("dirichlet_a{alpha}_s{seed}"),
        }
    }

    /// Parse the names produced by [`Shape::name`] plus a bare `dirichlet`
    /// (alpha 1, seed 0).
    pub fn parse(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        Ok(match lower.as_str() {
            "consistent" => Shape::Consistent,
            "uniform" => Shape::Uniform,
            "reversed" => Shape::Reversed,
            "middle" => Shape::Middle,
            "headtail" | "head_tail" => Shape::HeadTail,
            "dirichlet" | "dirichlet_random" => Shape::DirichletRandom { alpha: 1.0, seed: 0 },
            other => {
                let rest = other.strip_prefix("dirichlet_a").ok_or_else(|| invalid(format!("unknown shape `{s}`")))?;
                let (a, sd) = rest.split_once("_s").ok_or_else(|| invalid(format!("unknown shape `{s}`")))?;
                let alpha = a.parse().map_err(|_| invalid(format!("bad alpha in `{s}`")))?;
                let seed = sd.parse().map_err(|_| invalid(format!("bad seed in `{s}`")))?;
                Shape::DirichletRandom { alpha, seed }
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub num_classes: usize,
    pub feature_dim: usize,
    /// Largest labeled class count.
    pub n1: usize,
    /// Reference unlabeled class count (largest class for the long-tailed shapes).
    pub m1: usize,
    pub gamma_l: f64,
    /// Imbalance ratio for the middle/headtail shapes.
    pub gamma_u: f64,
    pub shape: Shape,
    /// Minimum pairwise distance between class means.
    pub separation: f64,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            num_classes: 6,
            feature_dim: 2,
            n1: 50,
            m1: 400,
            gamma_l: 20.0,
            gamma_u: 20.0,
            shape: Shape::Reversed,
            separation: 2.5,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(invalid("num_classes must be >= 2"));
        }
        if self.feature_dim < 2 {
            return Err(invalid("feature_dim must be >= 2"));
        }
        if self.n1 < 1 || self.m1 < 1 {
            return Err(invalid("n1 and m1 must be >= 1"));
        }
        if !(self.gamma_l >= 1.0) {
            return Err(invalid("gamma_l must be >= 1"));
        }
        if !(self.gamma_u > 0.0) {
            return Err(invalid("gamma_u must be > 0"));
        }
        if matches!(self.shape, Shape::Middle | Shape::HeadTail) && self.gamma_u < 1.0 {
            return Err(invalid("middle/headtail shapes need gamma_u >= 1"));
        }
        if let Shape::DirichletRandom { alpha, .. } = self.shape {
            if !(alpha > 0.0) {
                return Err(invalid("dirichlet alpha must be > 0"));
            }
        }
        if !(self.separation > 0.0) {
            return Err(invalid("separation must be > 0"));
        }
        Ok(())
    }

    pub fn labeled_counts(&self) -> Result<Vec<usize>> {
        longtail_counts(self.n1, self.gamma_l, self.num_classes)
    }
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor().max(0.0) as usize
}

/// `counts[c] = round(n1 * gamma^(-c/(C-1)))`, clamped to at least one.
pub fn longtail_counts(n1: usize, gamma: f64, c: usize) -> Result<Vec<usize>> {
    if c < 2 {
        return Err(invalid("need at least two classes"));
    }
    if !(gamma >= 1.0) {
        return Err(invalid(format!("imbalance ratio must be >= 1, got {gamma}")));
    }
    if n1 < 1 {
        return Err(invalid("n1 must be >= 1"));
    }
    let last = (c - 1) as f64;
    Ok((0..c).map(|k| round_half_up(n1 as f64 * gamma.powf(-(k as f64) / last)).max(1)).collect())
}

/// Geometric decay `m1 * gamma^(-dist/k)` where `dist` is each class's
/// distance to the nearest peak and `k` the largest such distance.
fn peaked_counts(m1: usize, gamma: f64, dists: &[usize]) -> Vec<usize> {
    let k = dists.iter().copied().max().unwrap_or(0);
    dists
        .iter()
        .map(|&d| {
            let e = if k == 0 { 0.0 } else { d as f64 / k as f64 };
            round_half_up(m1 as f64 * gamma.powf(-e)).max(1)
        })
        .collect()
}

pub fn unlabeled_counts(spec: &DatasetSpec) -> Result<Vec<usize>> {
    spec.validate()?;
    let c = spec.num_classes;
    match spec.shape {
        Shape::Consistent => longtail_counts(spec.m1, spec.gamma_l, c),
        Shape::Uniform => Ok(vec![spec.m1; c]),
        Shape::Reversed => {
            let mut v = longtail_counts(spec.m1, spec.gamma_l, c)?;
            v.reverse();
            Ok(v)
        }
        Shape::Middle => {
            let peak = c / 2;
            let d: Vec<usize> = (0..c).map(|k| k.abs_diff(peak)).collect();
            Ok(peaked_counts(spec.m1, spec.gamma_u, &d))
        }
        Shape::HeadTail => {
            let d: Vec<usize> = (0..c).map(|k| k.min(c - 1 - k)).collect();
            Ok(peaked_counts(spec.m1, spec.gamma_u, &d))
        }
        Shape::DirichletRandom { alpha, seed } => {
            let total: usize = longtail_counts(spec.m1, spec.gamma_l, c)?.iter().sum();
            let mut r = rng::from_seed(seed);
            let gamma = Gamma::new(alpha, 1.0).map_err(|e| invalid(e.to_string()))?;
            let mut w: Vec<f64> = (0..c).map(|_| gamma.sample(&mut r)).collect();
            // Tiny alpha can underflow every draw.
            if w.iter().all(|&x| x <= 0.0) {
                w = vec![1.0; c];
            }
            let idx = WeightedIndex::new(&w).map_err(|e| invalid(e.to_string()))?;
            let mut counts = vec![0usize; c];
            for _ in 0..total {
                counts[idx.sample(&mut r)] += 1;
            }
            counts.iter_mut().for_each(|n| *n = (*n).max(1));
            Ok(counts)
        }
    }
}

/// Per-class diagonal Gaussians sharing one dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    pub means: Vec<Vec<f64>>,
    pub diag_vars: Vec<Vec<f64>>,
}

impl GaussianMixture {
    pub fn new(means: Vec<Vec<f64>>, diag_vars: Vec<Vec<f64>>) -> Result<Self> {
        if means.len() < 2 || means.len() != diag_vars.len() {
            return Err(invalid("mixture needs >= 2 classes with matching variances"));
        }
        let d = means[0].len();
        if d == 0 {
            return Err(invalid("mixture dimension must be >= 1"));
        }
        for (m, v) in means.iter().zip(&diag_vars) {
            if m.len() != d || v.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: m.len().max(v.len()) });
            }
            if v.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
                return Err(invalid("mixture variances must be positive and finite"));
            }
        }
        Ok(Self { means, diag_vars })
    }

    pub fn num_classes(&self) -> usize {
        self.means.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn min_pairwise_distance(&self) -> f64 {
        min_pairwise(&self.means)
    }

    /// One draw from class `c`.
    pub fn draw(&self, c: usize, rng: &mut Rng) -> Vec<f64> {
        self.means[c]
            .iter()
            .zip(&self.diag_vars[c])
            .map(|(m, v)| {
                let z: f64 = rng.sample(StandardNormal);
                m + v.sqrt() * z
            })
            .collect()
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn min_pairwise(points: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            best = best.min(dist(&points[i], &points[j]));
        }
    }
    best
}

/// Largest angular offset of a 2-d mean, as a fraction of the even spacing.
pub const ANGLE_JITTER: f64 = 0.15;

/// Seeded class means with unit variances whose minimum pairwise distance
/// equals `separation` exactly.
///
/// In two dimensions the directions are evenly spaced angles with a random
/// rotation and up to [`ANGLE_JITTER`] of a spacing of jitter each; in higher dimensions
/// the first `min(C, d)` directions are Gram-Schmidt orthogonalized Gaussian
/// draws and any remaining ones are plain random directions.
pub fn make_mixture(c: usize, d: usize, separation: f64, seed: u64) -> Result<GaussianMixture> {
    if c < 2 {
        return Err(invalid("need at least two classes"));
    }
    if d < 2 {
        return Err(invalid("feature_dim must be >= 2"));
    }
    if !(separation > 0.0) {
        return Err(invalid("separation must be > 0"));
    }
    let mut r = rng::from_seed(seed);
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(c);
    if d == 2 {
        let rot = r.random::<f64>() * 2.0 * PI;
        for k in 0..c {
            let jitter = r.random_range(-ANGLE_JITTER..ANGLE_JITTER);
            let a = rot + 2.0 * PI * (k as f64 + jitter) / c as f64;
            dirs.push(vec![a.cos(), a.sin()]);
        }
    } else {
        for k in 0..c {
            loop {
                let mut v: Vec<f64> = (0..d).map(|_| r.sample(StandardNormal)).collect();
                if k < d {
                    for u in &dirs {
                        let p: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                        v.iter_mut().zip(u).for_each(|(a, b)| *a -= p * b);
                    }
                }
                let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
                if n > 1e-6 {
                    v.iter_mut().for_each(|a| *a /= n);
                    // Keep random extras away from existing directions.
                    if k < d || dirs.iter().all(|u| dist(u, &v) > 0.25) {
                        dirs.push(v);
                        break;
                    }
                }
            }
        }
    }
    let scale = separation / min_pairwise(&dirs);
    let means = dirs.into_iter().map(|v| v.into_iter().map(|a| a * scale).collect()).collect();
    GaussianMixture::new(means, vec![vec![1.0; d]; c])
}

/// One feature vector with an optional class label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub label: Option<usize>,
}

/// Exactly `counts[c]` labeled draws per class, shuffled deterministically.
pub fn sample_dataset(mix: &GaussianMixture, counts: &[usize], seed: u64) -> Result<Vec<Sample>> {
    if counts.len() != mix.num_classes() {
        return Err(Error::LengthMismatch { left: counts.len(), right: mix.num_classes() });
    }
    let mut r = rng::from_seed(seed);
    let mut out = Vec::with_capacity(counts.iter().sum());
    for (c, &n) in counts.iter().enumerate() {
        for _ in 0..n {
            out.push(Sample { x: mix.draw(c, &mut r), label: Some(c) });
        }
    }
    out.shuffle(&mut r);
    Ok(out)
}

/// Strip labels, returning the ground truth as an evaluation-only sidecar.
pub fn split_sidecar(samples: Vec<Sample>) -> (Vec<Sample>, Vec<usize>) {
    let mut truth = Vec::with_capacity(samples.len());
    let stripped = samples
        .into_iter()
        .map(|s| {
            truth.push(s.label.expect("sample_dataset attaches labels"));
            Sample { x: s.x, label: None }
        })
        .collect();
    (stripped, truth)
}

/// Everything one training run needs: both pools, the held-out balanced
/// test set, and the evaluation-only unlabeled truth.
#[derive(Debug, Clone)]
pub struct Datasets {
    pub mixture: GaussianMixture,
    pub labeled: Vec<Sample>,
    pub unlabeled: Vec<Sample>,
    pub unlabeled_truth: Vec<usize>,
    pub test: Vec<Sample>,
    pub labeled_counts: Vec<usize>,
    pub unlabeled_counts: Vec<usize>,
}

impl Datasets {
    pub fn generate(spec: &DatasetSpec, test_per_class: usize) -> Result<Self> {
        spec.validate()?;
        let mixture = make_mixture(spec.num_classes, spec.feature_dim, spec.separation, spec.seed)?;
        let labeled_counts = spec.labeled_counts()?;
        let unlabeled_counts = unlabeled_counts(spec)?;
        let labeled = sample_dataset(&mixture, &labeled_counts, rng::derive_seed(spec.seed, "labeled"))?;
        let pool = sample_dataset(&mixture, &unlabeled_counts, rng::derive_seed(spec.seed, "unlabeled"))?;
        let (unlabeled, unlabeled_truth) = split_sidecar(pool);
        let test = test_set(&mixture, test_per_class, spec.seed)?;
        Ok(Self { mixture, labeled, unlabeled, unlabeled_truth, test, labeled_counts, unlabeled_counts })
    }

    /// Rebuild from previously exported pools; the test set is regenerated
    /// from the stored mixture.
    pub fn from_parts(
        mixture: GaussianMixture,
        labeled: Vec<Sample>,
        unlabeled: Vec<Sample>,
        unlabeled_truth: Vec<usize>,
        test_per_class: usize,
        seed: u64,
    ) -> Result<Self> {
        let c = mixture.num_classes();
        if unlabeled.len() != unlabeled_truth.len() {
            return Err(Error::LengthMismatch { left: unlabeled.len(), right: unlabeled_truth.len() });
        }
        let mut labeled_counts = vec![0; c];
        for s in &labeled {
            let y = s.label.ok_or_else(|| Error::Malformed("labeled sample without label".into()))?;
            if y >= c {
                return Err(Error::Malformed(format!("label {y} out of range")));
            }
            labeled_counts[y] += 1;
        }
        let mut unlabeled_counts = vec![0; c];
        for &y in &unlabeled_truth {
            if y >= c {
                return Err(Error::Malformed(format!("label {y} out of range")));
            }
            unlabeled_counts[y] += 1;
        }
        let test = test_set(&mixture, test_per_class, seed)?;
        Ok(Self { mixture, labeled, unlabeled, unlabeled_truth, test, labeled_counts, unlabeled_counts })
    }

    pub fn num_classes(&self) -> usize {
        self.mixture.num_classes()
    }
}

fn test_set(mix: &GaussianMixture, per_class: usize, seed: u64) -> Result<Vec<Sample>> {
    sample_dataset(mix, &vec![per_class; mix.num_classes()], rng::derive_seed(seed, rng::TEST))
}

// ---- CSV / JSON export -------------------------------------------------

/// Write samples as `x0..x{d-1},label,split`; an absent label is an empty cell.
pub fn write_samples_csv(path: &Path, samples: &[Sample], split: &str) -> Result<()> {
    let d = samples.first().map_or(0, |s| s.x.len());
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..d).map(|i| format!("x{i}")).collect();
    header.push("label".into());
    header.push("split".into());
    w.write_record(&header)?;
    for s in samples {
        let mut row: Vec<String> = s.x.iter().map(|v| format!("{v:?}")).collect();
        row.push(s.label.map(|y| y.to_string()).unwrap_or_default());
        row.push(split.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_samples_csv(path: &Path) -> Result<Vec<Sample>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let d = headers.iter().filter(|h| h.starts_with('x')).count();
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != d + 2 {
            return Err(Error::Malformed(format!("{}: row {} has {} fields", path.display(), line + 2, rec.len())));
        }
        let x = (0..d)
            .map(|i| {
                rec[i]
                    .parse::<f64>()
                    .map_err(|e| Error::Malformed(format!("{}: row {}: {e}", path.display(), line + 2)))
            })
            .collect::<Result<Vec<_>>>()?;
        let label = match &rec[d] {
            "" => None,
            s => Some(
                s.parse::<usize>()
                    .map_err(|e| Error::Malformed(format!("{}: row {}: {e}", path.display(), line + 2)))?,
            ),
        };
        out.push(Sample { x, label });
    }
    Ok(out)
}

pub fn write_sidecar_csv(path: &Path, truth: &[usize]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["index", "label"])?;
    for (i, y) in truth.iter().enumerate() {
        w.write_record([i.to_string(), y.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sidecar_csv(path: &Path) -> Result<Vec<usize>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let y = rec
            .get(1)
            .ok_or_else(|| Error::Malformed("sidecar row without label".into()))?
            .parse::<usize>()
            .map_err(|e| Error::Malformed(e.to_string()))?;
        out.push(y);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn longtail_examples() {
        let v = longtail_counts(500, 100.0, 10).unwrap();
        assert_eq!(v[0], 500);
        assert_eq!(v[9], 5);
        assert!(v.windows(2).all(|w| w[0] >= w[1]));
        assert_eq!(longtail_counts(500, 1.0, 10).unwrap(), vec![500; 10]);
        assert_eq!(longtail_counts(100, 4.0, 2).unwrap(), vec![100, 25]);
    }

    #[test]
    fn longtail_rejects_bad_args() {
        assert!(longtail_counts(10, 0.5, 3).is_err());
        assert!(longtail_counts(10, 2.0, 1).is_err());
    }

    #[test]
    fn clamps_to_one() {
        let v = longtail_counts(3, 1000.0, 4).unwrap();
        assert!(v.iter().all(|&n| n >= 1));
    }

    fn spec(shape: Shape, m1: usize, gamma_l: f64, c: usize) -> DatasetSpec {
        DatasetSpec { num_classes: c, m1, gamma_l, shape, ..Default::default() }
    }

    #[test]
    fn unlabeled_shape_examples() {
        assert_eq!(unlabeled_counts(&spec(Shape::Uniform, 400, 100.0, 10)).unwrap(), vec![400; 10]);
        let rev = unlabeled_counts(&spec(Shape::Reversed, 4000, 100.0, 10)).unwrap();
        assert_eq!(rev[0], 40);
        assert_eq!(rev[9], 4000);
        assert!(rev.windows(2).all(|w| w[0] <= w[1]));
        let con = unlabeled_counts(&spec(Shape::Consistent, 4000, 100.0, 10)).unwrap();
        assert_eq!(con[9], 40);
    }

    #[test]
    fn middle_and_headtail_peaks() {
        let mut s = spec(Shape::Middle, 1000, 20.0, 6);
        s.gamma_u = 10.0;
        let mid = unlabeled_counts(&s).unwrap();
        assert_eq!(mid.iter().max(), Some(&mid[3]));
        assert_eq!(mid[0], 100);
        s.shape = Shape::HeadTail;
        let ht = unlabeled_counts(&s).unwrap();
        assert_eq!(ht[0], 1000);
        assert_eq!(ht[5], 1000);
        assert!(ht[2] < ht[1] && ht[2] <= ht[0]);
    }

    #[test]
    fn dirichlet_is_seeded() {
        let s = spec(Shape::DirichletRandom { alpha: 0.5, seed: 3 }, 800, 20.0, 6);
        let a = unlabeled_counts(&s).unwrap();
        assert_eq!(a, unlabeled_counts(&s).unwrap());
        assert!(a.iter().all(|&n| n >= 1));
        let total: usize = longtail_counts(800, 20.0, 6).unwrap().iter().sum();
        assert!(a.iter().sum::<usize>() >= total);
    }

    #[test]
    fn shape_names_round_trip() {
        for sh in [
            Shape::Consistent,
            Shape::Uniform,
            Shape::Reversed,
            Shape::Middle,
            Shape::HeadTail,
            Shape::DirichletRandom { alpha: 0.5, seed: 2 },
        ] {
            assert_eq!(Shape::parse(&sh.name()).unwrap(), sh);
        }
        assert!(Shape::parse("triangle").is_err());
    }

    #[test]
    fn mixture_separation_and_determinism() {
        let m = make_mixture(2, 2, 3.0, 0).unwrap();
        assert!(m.min_pairwise_distance() >= 3.0 - 1e-12);
        assert_eq!(m, make_mixture(2, 2, 3.0, 0).unwrap());
        let hi = make_mixture(12, 5, 2.0, 1).unwrap();
        assert!((hi.min_pairwise_distance() - 2.0).abs() < 1e-9);
        assert!(make_mixture(3, 1, 1.0, 0).is_err());
    }

    #[test]
    fn sample_counts_and_order() {
        let m = make_mixture(2, 2, 3.0, 0).unwrap();
        let s = sample_dataset(&m, &[3, 0], 9).unwrap();
        assert_eq!(s.len(), 3);
        assert!(s.iter().all(|x| x.label == Some(0)));
        assert_eq!(s, sample_dataset(&m, &[3, 0], 9).unwrap());
        let m10 = make_mixture(10, 3, 3.0, 0).unwrap();
        let counts = longtail_counts(500, 100.0, 10).unwrap();
        let all = sample_dataset(&m10, &counts, 1).unwrap();
        assert_eq!(all.len(), counts.iter().sum::<usize>());
    }

    #[test]
    fn spec_json_round_trip() {
        let s = DatasetSpec { shape: Shape::DirichletRandom { alpha: 0.5, seed: 4 }, ..Default::default() };
        let txt = serde_json::to_string(&s).unwrap();
        let back: DatasetSpec = serde_json::from_str(&txt).unwrap();
        assert_eq!(s, back);
        let partial: DatasetSpec = serde_json::from_str(r#"{"shape":"middle","num_classes":4}"#).unwrap();
        assert_eq!(partial.shape, Shape::Middle);
        assert_eq!(partial.num_classes, 4);
    }
}
