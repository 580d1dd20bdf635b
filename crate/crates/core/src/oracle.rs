//! Ground truth from the known mixture: exact class-conditional densities,
//! the Bayes rule under any prior, analytically decoupled scores, and the
//! statistical checks built on them.

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::datagen::GaussianMixture;
use crate::error::{invalid, Error, Result};
use crate::inference::top_with_margin;
use crate::losses::balanced_softmax_loss;
use crate::net::{argmax, softmax};
use crate::prior::{l1, ClassPrior};
use crate::rng;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Allowed spread of per-class score offsets after a balanced fit.
pub const DECOUPLING_TOL: f64 = 0.05;

/// `log N(x; mean_c, diag(vars_c))` for every class.
pub fn log_class_conditional(mix: &GaussianMixture, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != mix.dim() {
        return Err(Error::DimensionMismatch { expected: mix.dim(), got: x.len() });
    }
    Ok(mix
        .means
        .iter()
        .zip(&mix.diag_vars)
        .map(|(mu, var)| {
            x.iter().zip(mu).zip(var).map(|((xi, mi), vi)| -0.5 * (LN_2PI + vi.ln() + (xi - mi).powi(2) / vi)).sum()
        })
        .collect())
}

/// Bayes classifier for a mixture under a class prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesOracle {
    pub mixture: GaussianMixture,
    pub prior: ClassPrior,
}

impl BayesOracle {
    pub fn new(mixture: GaussianMixture, prior: ClassPrior) -> Result<Self> {
        if prior.num_classes() != mixture.num_classes() {
            return Err(Error::DimensionMismatch { expected: mixture.num_classes(), got: prior.num_classes() });
        }
        Ok(Self { mixture, prior })
    }

    /// `log p(x|c) + log prior_c`.
    pub fn scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        let lp = self.prior.log();
        Ok(log_class_conditional(&self.mixture, x)?.iter().zip(lp).map(|(a, b)| a + b).collect())
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.scores(x)?))
    }

    pub fn posterior(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.scores(x)?))
    }
}

pub fn bayes_predict(oracle: &BayesOracle, x: &[f64]) -> Result<usize> {
    oracle.predict(x)
}

/// Exactly decoupled scores `log p(x|y) + b`.
pub fn decoupled_logits(mix: &GaussianMixture, x: &[f64], b: f64) -> Result<Vec<f64>> {
    Ok(log_class_conditional(mix, x)?.into_iter().map(|v| v + b).collect())
}

/// Draw `n` labeled points with labels from `prior`.
pub fn draw_from_prior(
    mix: &GaussianMixture,
    prior: &ClassPrior,
    n: usize,
    r: &mut rng::Rng,
) -> Result<Vec<(Vec<f64>, usize)>> {
    if prior.num_classes() != mix.num_classes() {
        return Err(Error::DimensionMismatch { expected: mix.num_classes(), got: prior.num_classes() });
    }
    let w = WeightedIndex::new(prior.probs()).map_err(|e| invalid(e.to_string()))?;
    Ok((0..n)
        .map(|_| {
            let y = w.sample(r);
            (mix.draw(y, r), y)
        })
        .collect())
}

/// A Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub samples: usize,
}

/// Accuracy of the Bayes rule under `decision_prior` on data drawn from
/// `sampling_prior`.
pub fn bayes_accuracy(
    mix: &GaussianMixture,
    sampling_prior: &ClassPrior,
    decision_prior: &ClassPrior,
    n: usize,
    seed: u64,
) -> Result<McEstimate> {
    if n == 0 {
        return Err(invalid("need at least one sample"));
    }
    let oracle = BayesOracle::new(mix.clone(), decision_prior.clone())?;
    let mut r = rng::from_seed(seed);
    let mut hits = 0usize;
    for (x, y) in draw_from_prior(mix, sampling_prior, n, &mut r)? {
        hits += usize::from(oracle.predict(&x)? == y);
    }
    let p = hits as f64 / n as f64;
    Ok(McEstimate { mean: p, std_err: (p * (1.0 - p) / n as f64).sqrt(), samples: n })
}

/// `E_{x ~ p_u}[p(x|y) / sum_c p(x|c)]`, by Monte Carlo.
pub fn uniform_posterior_marginal(mix: &GaussianMixture, pi_u: &ClassPrior, n: usize, seed: u64) -> Result<ClassPrior> {
    if n == 0 {
        return Err(invalid("need at least one sample"));
    }
    let mut r = rng::from_seed(seed);
    let mut acc = vec![0.0; mix.num_classes()];
    for (x, _) in draw_from_prior(mix, pi_u, n, &mut r)? {
        let p = softmax(&decoupled_logits(mix, &x, 0.0)?);
        acc.iter_mut().zip(p).for_each(|(a, b)| *a += b);
    }
    ClassPrior::new(acc)
}

/// An `n x n` grid over the bounding box of the means, padded by `pad`
/// standard deviations. Needs a 2-D mixture.
pub fn grid_points(mix: &GaussianMixture, n: usize, pad: f64) -> Result<Vec<Vec<f64>>> {
    if mix.dim() != 2 {
        return Err(invalid("grid checks need a 2-D mixture"));
    }
    if n < 2 {
        return Err(invalid("grid needs at least 2 points per axis"));
    }
    let sd = mix.diag_vars.iter().flatten().fold(0.0f64, |a, &v| a.max(v.sqrt()));
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for m in &mix.means {
        for k in 0..2 {
            lo[k] = lo[k].min(m[k] - pad * sd);
            hi[k] = hi[k].max(m[k] + pad * sd);
        }
    }
    let step = |k: usize, i: usize| lo[k] + (hi[k] - lo[k]) * i as f64 / (n - 1) as f64;
    Ok((0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| vec![step(0, i), step(1, j)]).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCheck {
    pub points: usize,
    pub disagreements: usize,
}

/// Compare `argmax(decoupled + log pi_tar)` with the Bayes rule under
/// `pi_tar` on an `n x n` grid; `offset` supplies the shared shift `b(x)`.
pub fn grid_bayes_check<F: Fn(&[f64]) -> f64>(
    mix: &GaussianMixture,
    pi_tar: &ClassPrior,
    n: usize,
    offset: F,
) -> Result<GridCheck> {
    let oracle = BayesOracle::new(mix.clone(), pi_tar.clone())?;
    let lp = pi_tar.log();
    let pts = grid_points(mix, n, 3.0)?;
    let mut disagreements = 0;
    for x in &pts {
        let s: Vec<f64> = decoupled_logits(mix, x, offset(x))?.iter().zip(&lp).map(|(a, b)| a + b).collect();
        disagreements += usize::from(argmax(&s) != oracle.predict(x)?);
    }
    Ok(GridCheck { points: pts.len(), disagreements })
}

/// Balanced-softmax fit of per-class affine scores `a_y * log p(x|y) + b_y`
/// on oracle features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalancedFit {
    pub slope: Vec<f64>,
    pub bias: Vec<f64>,
    /// Support points of the fitted risk (draws or quadrature nodes).
    pub support: usize,
    pub iterations: usize,
    pub final_loss: f64,
    /// Largest spread over classes of `score_y(x) - log p(x|y)` on the grid.
    pub max_spread: f64,
    pub mean_spread: f64,
    pub grid_points: usize,
}

impl BalancedFit {
    pub fn scores(&self, phi: &[f64]) -> Vec<f64> {
        phi.iter().zip(&self.slope).zip(&self.bias).map(|((p, a), b)| a * p + b).collect()
    }
}

/// Risk support: features with a weight per label.
struct Weighted {
    phi: Vec<f64>,
    w: Vec<f64>,
}

fn bs_loss_grad_hess(
    data: &[Weighted],
    pi_l: &ClassPrior,
    a: &[f64],
    b: &[f64],
) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
    let c = a.len();
    let log_pi = pi_l.log();
    let mut mass = 0.0;
    let mut loss = 0.0;
    let mut g = DVector::zeros(2 * c);
    let mut h = DMatrix::zeros(2 * c, 2 * c);
    for Weighted { phi, w } in data {
        let wsum: f64 = w.iter().sum();
        if wsum == 0.0 {
            continue;
        }
        mass += wsum;
        let z: Vec<f64> = (0..c).map(|k| a[k] * phi[k] + b[k]).collect();
        for (y, &wy) in w.iter().enumerate() {
            if wy == 0.0 {
                continue;
            }
            let lg = balanced_softmax_loss(&z, y, pi_l)?;
            loss += wy * lg.loss;
            // d z_k / d a_k = phi_k, d z_k / d b_k = 1.
            for k in 0..c {
                g[k] += wy * lg.grad[k] * phi[k];
                g[c + k] += wy * lg.grad[k];
            }
        }
        let shifted: Vec<f64> = z.iter().zip(&log_pi).map(|(u, v)| u + v).collect();
        let p = softmax(&shifted);
        for k in 0..c {
            for l in 0..c {
                let v = wsum * if k == l { p[k] * (1.0 - p[k]) } else { -p[k] * p[l] };
                h[(k, l)] += v * phi[k] * phi[l];
                h[(k, c + l)] += v * phi[k];
                h[(c + k, l)] += v * phi[l];
                h[(c + k, c + l)] += v;
            }
        }
    }
    Ok((loss / mass, g / mass, h / mass))
}

fn newton_fit(data: &[Weighted], pi_l: &ClassPrior) -> Result<(Vec<f64>, Vec<f64>, f64, usize)> {
    let c = pi_l.num_classes();
    let mut a = vec![0.5; c];
    let mut b = vec![0.0; c];
    let (mut loss, mut g, mut h) = bs_loss_grad_hess(data, pi_l, &a, &b)?;
    let mut iterations = 0;
    for _ in 0..100 {
        iterations += 1;
        // The all-ones direction in `b` is flat; a tiny ridge pins it.
        let mut hr = h.clone();
        for k in 0..2 * c {
            hr[(k, k)] += 1e-10;
        }
        let step = hr.lu().solve(&g).ok_or_else(|| invalid("singular Hessian in balanced fit"))?;
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-8 {
            let na: Vec<f64> = (0..c).map(|k| a[k] - t * step[k]).collect();
            let nb: Vec<f64> = (0..c).map(|k| b[k] - t * step[c + k]).collect();
            let (nl, ng, nh) = bs_loss_grad_hess(data, pi_l, &na, &nb)?;
            if nl <= loss + 1e-4 * t * -g.dot(&step) {
                (a, b, loss, g, h) = (na, nb, nl, ng, nh);
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted || g.norm() < 1e-12 {
            break;
        }
    }
    Ok((a, b, loss, iterations))
}

fn finish_fit(
    mix: &GaussianMixture,
    data: &[Weighted],
    pi_l: &ClassPrior,
    grid_n: usize,
    grid_pad: f64,
) -> Result<BalancedFit> {
    let (slope, bias, final_loss, iterations) = newton_fit(data, pi_l)?;
    let mut fit = BalancedFit {
        slope,
        bias,
        support: data.len(),
        iterations,
        final_loss,
        max_spread: 0.0,
        mean_spread: 0.0,
        grid_points: 0,
    };
    let pts = grid_points(mix, grid_n, grid_pad)?;
    let mut total = 0.0;
    for x in &pts {
        let phi = log_class_conditional(mix, x)?;
        let off: Vec<f64> = fit.scores(&phi).iter().zip(&phi).map(|(s, p)| s - p).collect();
        let spread =
            off.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - off.iter().cloned().fold(f64::INFINITY, f64::min);
        fit.max_spread = fit.max_spread.max(spread);
        total += spread;
    }
    fit.grid_points = pts.len();
    fit.mean_spread = total / pts.len() as f64;
    Ok(fit)
}

/// Minimize the population balanced-softmax risk under `pi_l`, with `x`
/// integrated on a lattice of spacing `step` over the means' bounding box
/// padded by 7 standard deviations, and measure the offset spread on a
/// `grid_n x grid_n` grid. Needs a 2-D mixture.
pub fn fit_balanced_softmax(
    mix: &GaussianMixture,
    pi_l: &ClassPrior,
    step: f64,
    grid_n: usize,
    grid_pad: f64,
) -> Result<BalancedFit> {
    let c = mix.num_classes();
    if pi_l.num_classes() != c {
        return Err(Error::DimensionMismatch { expected: c, got: pi_l.num_classes() });
    }
    if !(step > 0.0) {
        return Err(invalid("quadrature step must be > 0"));
    }
    let n = ((grid_points(mix, 2, 7.0)?[3][0] - grid_points(mix, 2, 7.0)?[0][0]) / step).ceil() as usize;
    let nodes = grid_points(mix, n.max(2), 7.0)?;
    let mut data = Vec::with_capacity(nodes.len());
    for x in nodes {
        let phi = log_class_conditional(mix, &x)?;
        let w: Vec<f64> = phi.iter().zip(pi_l.probs()).map(|(l, p)| p * l.exp()).collect();
        if w.iter().sum::<f64>() > 1e-300 {
            data.push(Weighted { phi, w });
        }
    }
    finish_fit(mix, &data, pi_l, grid_n, grid_pad)
}

/// The same fit on `labeled_counts[y] * scale` draws per class; a finite
/// sample estimate of [`fit_balanced_softmax`].
pub fn fit_balanced_softmax_sampled(
    mix: &GaussianMixture,
    labeled_counts: &[usize],
    scale: usize,
    seed: u64,
    grid_n: usize,
    grid_pad: f64,
) -> Result<BalancedFit> {
    let c = mix.num_classes();
    if labeled_counts.len() != c {
        return Err(Error::DimensionMismatch { expected: c, got: labeled_counts.len() });
    }
    if scale == 0 {
        return Err(invalid("scale must be >= 1"));
    }
    let pi_l = ClassPrior::from_counts(labeled_counts)?;
    let mut r = rng::from_seed(seed);
    let mut data = Vec::new();
    for (y, &n) in labeled_counts.iter().enumerate() {
        for _ in 0..n * scale {
            let x = mix.draw(y, &mut r);
            let mut w = vec![0.0; c];
            w[y] = 1.0;
            data.push(Weighted { phi: log_class_conditional(mix, &x)?, w });
        }
    }
    finish_fit(mix, &data, &pi_l, grid_n, grid_pad)
}

/// Outcome of the prediction-marginal concentration check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport {
    pub classes: usize,
    pub m: usize,
    pub trials: usize,
    pub nu: f64,
    pub pi_unif: Vec<f64>,
    /// `||pi_unif - pi_u||_1`.
    pub bias: f64,
    pub bound: f64,
    pub within: usize,
    pub pass_fraction: f64,
    pub worst_error: f64,
    pub passed: bool,
}

/// Draw `trials` unlabeled sets of size `m` from `pi_u`, estimate the
/// marginal with the exactly decoupled predictor, and count how often the
/// error stays within `bias + 2 sqrt(C/M) + sqrt(2 log(1/nu) / M)`.
pub fn verify_prior_concentration(
    mix: &GaussianMixture,
    pi_u: &ClassPrior,
    m: usize,
    trials: usize,
    nu: f64,
    seed: u64,
) -> Result<ConcentrationReport> {
    if m == 0 || trials == 0 {
        return Err(invalid("need M >= 1 and trials >= 1"));
    }
    if !(nu > 0.0 && nu < 1.0) {
        return Err(invalid("nu must lie in (0, 1)"));
    }
    let c = mix.num_classes();
    let pi_unif = uniform_posterior_marginal(mix, pi_u, 100_000, rng::derive_seed(seed, "pi_unif"))?;
    let bias = pi_unif.l1_distance(pi_u);
    let mf = m as f64;
    let bound = bias + 2.0 * (c as f64 / mf).sqrt() + (2.0 * (1.0 / nu).ln() / mf).sqrt();
    let mut within = 0;
    let mut worst_error = 0.0f64;
    for t in 0..trials {
        let mut r = rng::from_seed(rng::derive_seed(seed, &format!("trial{t}")));
        let mut acc = vec![0.0; c];
        for (x, _) in draw_from_prior(mix, pi_u, m, &mut r)? {
            let p = softmax(&decoupled_logits(mix, &x, 0.0)?);
            acc.iter_mut().zip(p).for_each(|(a, b)| *a += b / mf);
        }
        let err = l1(&acc, pi_u.probs());
        worst_error = worst_error.max(err);
        within += usize::from(err <= bound);
    }
    let pass_fraction = within as f64 / trials as f64;
    Ok(ConcentrationReport {
        classes: c,
        m,
        trials,
        nu,
        pi_unif: pi_unif.into_inner(),
        bias,
        bound,
        within,
        pass_fraction,
        worst_error,
        passed: pass_fraction >= 1.0 - nu,
    })
}

/// Top score and its margin, with the Bayes rule's scores under `prior`.
pub fn bayes_margin(oracle: &BayesOracle, x: &[f64]) -> Result<(usize, f64)> {
    Ok(top_with_margin(&oracle.scores(x)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::make_mixture;

    fn two_class() -> GaussianMixture {
        GaussianMixture::new(vec![vec![-1.0, 0.0], vec![1.0, 0.0]], vec![vec![1.0, 1.0]; 2]).unwrap()
    }

    #[test]
    fn density_at_mean() {
        let mix = two_class();
        let v = log_class_conditional(&mix, &[-1.0, 0.0]).unwrap();
        assert!((v[0] + LN_2PI).abs() < 1e-12);
        let mid = log_class_conditional(&mix, &[0.0, 0.3]).unwrap();
        assert_eq!(mid[0], mid[1]);
        let one = GaussianMixture::new(vec![vec![0.0], vec![3.0]], vec![vec![1.0]; 2]).unwrap();
        let v = log_class_conditional(&one, &[1.0]).unwrap();
        assert!((v[0] - (-0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5)).abs() < 1e-12);
        assert!((v[0] + 1.4189).abs() < 1e-4);
        assert!(log_class_conditional(&mix, &[0.0]).is_err());
    }

    #[test]
    fn bayes_examples() {
        let mix = make_mixture(4, 2, 6.0, 3).unwrap();
        let o = BayesOracle::new(mix.clone(), ClassPrior::uniform(4)).unwrap();
        for k in 0..4 {
            assert_eq!(o.predict(&mix.means[k]).unwrap(), k);
        }
        let skew = BayesOracle::new(mix.clone(), ClassPrior::new(vec![1.0 - 3e-9, 1e-9, 1e-9, 1e-9]).unwrap()).unwrap();
        let mid: Vec<f64> = (0..2).map(|j| 0.5 * (mix.means[0][j] + mix.means[1][j])).collect();
        assert_eq!(skew.predict(&mid).unwrap(), 0);
    }

    #[test]
    fn decoupled_shift_invariance() {
        let mix = make_mixture(3, 2, 2.0, 1).unwrap();
        let x = [0.3, -0.7];
        let a = softmax(&decoupled_logits(&mix, &x, 0.0).unwrap());
        let b = softmax(&decoupled_logits(&mix, &x, 100.0).unwrap());
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-12);
        }
        for pi in [ClassPrior::uniform(3), ClassPrior::new(vec![0.7, 0.2, 0.1]).unwrap()] {
            let g = grid_bayes_check(&mix, &pi, 50, |_| 0.0).unwrap();
            assert_eq!((g.points, g.disagreements), (2500, 0));
        }
    }

    #[test]
    fn bayes_accuracy_between_bounds() {
        let mix = make_mixture(6, 2, 2.5, 7).unwrap();
        let est = bayes_accuracy(&mix, &ClassPrior::uniform(6), &ClassPrior::uniform(6), 100_000, 0).unwrap();
        assert!(est.mean > 0.8 && est.mean < 0.99, "{est:?}");
    }

    #[test]
    fn concentration_small_case() {
        let mix = make_mixture(2, 2, 3.0, 0).unwrap();
        let pi_u = ClassPrior::new(vec![0.3, 0.7]).unwrap();
        let r = verify_prior_concentration(&mix, &pi_u, 100, 50, 0.05, 1).unwrap();
        assert!(r.passed, "{r:?}");
        assert!(verify_prior_concentration(&mix, &pi_u, 0, 5, 0.05, 1).is_err());
        assert!(verify_prior_concentration(&mix, &pi_u, 10, 5, 1.0, 1).is_err());
    }
}
