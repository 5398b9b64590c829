//! Exact 1D mixture scores, product distributions, score-averaged sampling,
//! and the input/output/score sync equivalence checks.

use crate::diffusion::{euler_ancestral_step, DiffusionState};
use crate::error::{Error, Result};
use crate::num::{log_normal_pdf, logsumexp, normal_cdf, softmax};
use crate::rng::rng_for;
use crate::sched::NoiseSchedule;
use crate::stack::{StackShape, ViewStack};

/// Finite Gaussian mixture on the real line.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture1D {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussianMixture1D {
    pub fn new(means: Vec<f64>, stds: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if means.len() != stds.len() || means.len() != weights.len() || means.is_empty() {
            return Err(Error::Structural(
                "mixture components must have equal nonzero length".into(),
            ));
        }
        if stds.iter().any(|&s| s <= 0.0) {
            return Err(Error::Domain("mixture stds must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|&w| w < 0.0) || total <= 0.0 {
            return Err(Error::Domain("mixture weights must be non-negative".into()));
        }
        Ok(Self {
            means,
            stds,
            weights: weights.iter().map(|w| w / total).collect(),
        })
    }

    pub fn single(mean: f64, std: f64) -> Self {
        Self::new(vec![mean], vec![std], vec![1.0]).unwrap()
    }

    /// Symmetric two-component preset: modes at `+-a`.
    pub fn bimodal(a: f64, std: f64) -> Self {
        Self::new(vec![-a, a], vec![std, std], vec![0.5, 0.5]).unwrap()
    }

    pub fn log_pdf(&self, x: f64) -> f64 {
        let terms: Vec<f64> = self
            .means
            .iter()
            .zip(&self.stds)
            .zip(&self.weights)
            .map(|((&m, &s), &w)| w.ln() + log_normal_pdf(x, m, s * s))
            .collect();
        logsumexp(&terms)
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.log_pdf(x).exp()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.means
            .iter()
            .zip(&self.stds)
            .zip(&self.weights)
            .map(|((&m, &s), &w)| w * normal_cdf((x - m) / s))
            .sum()
    }

    /// Exact score d/dx log p(x), in log space.
    pub fn score(&self, x: f64) -> f64 {
        let log_terms: Vec<f64> = self
            .means
            .iter()
            .zip(&self.stds)
            .zip(&self.weights)
            .map(|((&m, &s), &w)| w.ln() + log_normal_pdf(x, m, s * s))
            .collect();
        let resp = softmax(&log_terms);
        resp.iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(&r, (&m, &s))| r * (m - x) / (s * s))
            .sum()
    }

    /// The mixture convolved with the perturbation kernel at time `t`:
    /// each component becomes `N(alpha mu, alpha^2 s^2 + sigma^2)`.
    pub fn perturbed(&self, t: f64, sched: &NoiseSchedule) -> Self {
        let alpha = sched.alpha(t);
        let sigma = sched.sigma(t);
        Self {
            means: self.means.iter().map(|m| alpha * m).collect(),
            stds: self
                .stds
                .iter()
                .map(|s| (alpha * alpha * s * s + sigma * sigma).sqrt())
                .collect(),
            weights: self.weights.clone(),
        }
    }

    /// Mean of the mixture.
    pub fn mean(&self) -> f64 {
        self.means
            .iter()
            .zip(&self.weights)
            .map(|(m, w)| m * w)
            .sum()
    }

    /// Variance of the mixture.
    pub fn variance(&self) -> f64 {
        let mu = self.mean();
        self.means
            .iter()
            .zip(&self.stds)
            .zip(&self.weights)
            .map(|((&m, &s), &w)| w * (s * s + (m - mu) * (m - mu)))
            .sum()
    }
}

/// Score of the perturbed mixture at `(x, t)`.
pub fn perturbed_score_1d(
    m: &GaussianMixture1D,
    x: f64,
    t: f64,
    sched: &NoiseSchedule,
) -> f64 {
    m.perturbed(t, sched).score(x)
}

/// Closed-form normalized product of two mixtures.
///
/// Component pairs `(i, j)` combine with precision addition; pair weights are
/// `w_i w_j N(mu_i; mu_j, s_i^2 + s_j^2)`, renormalized.
pub fn product_mixture_1d(
    m1: &GaussianMixture1D,
    m2: &GaussianMixture1D,
) -> GaussianMixture1D {
    let mut means = Vec::new();
    let mut stds = Vec::new();
    let mut log_w = Vec::new();
    for (i, (&mi, &si)) in m1.means.iter().zip(&m1.stds).enumerate() {
        for (j, (&mj, &sj)) in m2.means.iter().zip(&m2.stds).enumerate() {
            let vi = si * si;
            let vj = sj * sj;
            let var = vi * vj / (vi + vj);
            let mean = var * (mi / vi + mj / vj);
            means.push(mean);
            stds.push(var.sqrt());
            log_w.push(
                m1.weights[i].ln() + m2.weights[j].ln() + log_normal_pdf(mi, mj, vi + vj),
            );
        }
    }
    let weights = softmax(&log_w);
    GaussianMixture1D {
        means,
        stds,
        weights,
    }
}

/// Score source for reverse-diffusion sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreMode {
    /// Exact perturbed score of the normalized product `p1 * p2 / Z`.
    ExactProduct,
    /// Average of the two perturbed conditional scores: `(s1 + s2) / 2`.
    Averaged,
}

/// Options for [`sample_with_score`].
#[derive(Debug, Clone, Copy)]
pub struct SampleOptions {
    pub n_steps: usize,
    pub n_samples: usize,
    pub seed: u64,
    /// Deterministic probability-flow stepping (the default for the 1D
    /// simulations, so that mode collapse is attributable to the score).
    pub deterministic: bool,
}

impl Default for SampleOptions {
    fn default() -> Self {
        Self {
            n_steps: 30,
            n_samples: 10_000,
            seed: 0,
            deterministic: true,
        }
    }
}

/// Reverse-diffusion samples driven by the selected score.
///
/// Sampling starts just inside the terminal time (the denoised-prediction
/// form of the step divides by `alpha_t`, which vanishes at `t = T` on the
/// variance-preserving schedule) from the pure-noise marginal.
pub fn sample_with_score(
    m1: &GaussianMixture1D,
    m2: &GaussianMixture1D,
    sched: &NoiseSchedule,
    opts: &SampleOptions,
    mode: ScoreMode,
) -> Result<Vec<f64>> {
    if opts.n_steps == 0 || opts.n_samples == 0 {
        return Err(Error::Domain("n_steps and n_samples must be > 0".into()));
    }
    let product = product_mixture_1d(m1, m2);
    let score = |x: f64, t: f64| -> f64 {
        match mode {
            ScoreMode::ExactProduct => perturbed_score_1d(&product, x, t, sched),
            ScoreMode::Averaged => {
                0.5 * perturbed_score_1d(m1, x, t, sched)
                    + 0.5 * perturbed_score_1d(m2, x, t, sched)
            }
        }
    };

    let shape = StackShape {
        views: 1,
        channels: 1,
        height: 1,
        width: opts.n_samples,
    };
    let t_start = sched.terminal * (1.0 - 1e-4);
    let mut rng = rng_for(opts.seed, 0);
    let init = ViewStack::noise(shape, &mut rng).scale(sched.sigma(t_start));
    let mut state = DiffusionState {
        x_t: init,
        t: t_start,
        rng_seed: opts.seed,
    };

    let times = sched.sigma_uniform_times(t_start, opts.n_steps);
    for (step, pair) in times.windows(2).enumerate() {
        let (t, t_next) = (pair[0], pair[1]);
        let alpha = sched.alpha(t);
        let sigma2 = sched.sigma(t) * sched.sigma(t);
        let mut x_hat = state.x_t.clone();
        for v in x_hat.data_mut() {
            let s = score(*v, t);
            *v = (*v + sigma2 * s) / alpha;
        }
        let noise = if opts.deterministic {
            ViewStack::zeros(shape)
        } else {
            let mut step_rng = rng_for(opts.seed, 1 + step as u64);
            ViewStack::noise(shape, &mut step_rng)
        };
        state = euler_ancestral_step(&state, &x_hat, t_next, &noise, sched, opts.deterministic)?;
    }
    Ok(state.x_t.data().to_vec())
}

/// Fixed-range histogram with clamp-to-edge binning.
#[derive(Debug, Clone)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
    pub total: u64,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Self {
        Self {
            lo,
            hi,
            counts: vec![0; bins],
            total: 0,
        }
    }

    /// Default binning for the 1D experiments: 128 bins over [-4, 4].
    pub fn standard() -> Self {
        Self::new(-4.0, 4.0, 128)
    }

    pub fn add(&mut self, x: f64) {
        let b = self.counts.len();
        let f = (x - self.lo) / (self.hi - self.lo);
        let i = ((f * b as f64).floor() as i64).clamp(0, b as i64 - 1) as usize;
        self.counts[i] += 1;
        self.total += 1;
    }

    pub fn add_all(&mut self, xs: &[f64]) {
        for &x in xs {
            self.add(x);
        }
    }

    /// Empirical bin probabilities with add-one smoothing.
    pub fn probs_smoothed(&self) -> Vec<f64> {
        let denom = self.total as f64 + self.counts.len() as f64;
        self.counts
            .iter()
            .map(|&c| (c as f64 + 1.0) / denom)
            .collect()
    }

    pub fn bin_centers(&self) -> Vec<f64> {
        let b = self.counts.len();
        let w = (self.hi - self.lo) / b as f64;
        (0..b).map(|i| self.lo + (i as f64 + 0.5) * w).collect()
    }

    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.counts.len() as f64
    }

    /// Fraction of recorded samples within `[-r, r]` of `center`.
    pub fn fraction_near(&self, xs: &[f64], center: f64, r: f64) -> f64 {
        let n = xs.iter().filter(|&&x| (x - center).abs() <= r).count();
        n as f64 / xs.len().max(1) as f64
    }
}

/// Bin-integrated probabilities of a mixture over the histogram's range,
/// renormalized to sum to 1 within the range.
pub fn mixture_bin_probs(m: &GaussianMixture1D, hist: &Histogram) -> Vec<f64> {
    let b = hist.counts.len();
    let w = (hist.hi - hist.lo) / b as f64;
    let mut probs: Vec<f64> = (0..b)
        .map(|i| {
            let a = hist.lo + i as f64 * w;
            (m.cdf(a + w) - m.cdf(a)).max(1e-300)
        })
        .collect();
    let z: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= z;
    }
    probs
}

/// `KL(empirical || reference)` over histogram bins, with add-one smoothing
/// on the empirical side.
pub fn kl_hist_vs_density(hist: &Histogram, reference: &GaussianMixture1D) -> f64 {
    let p_hat = hist.probs_smoothed();
    let p_ref = mixture_bin_probs(reference, hist);
    p_hat
        .iter()
        .zip(&p_ref)
        .map(|(&p, &q)| p * (p / q).ln())
        .sum()
}

/// Deterministic-Euler trajectory comparison between input sync and
/// output+init sync.
///
/// Run (a) applies `sync` to `x_t` before each denoiser call; run (b) applies
/// `sync` to every denoised output and to the initialization. The returned
/// value is the max abs deviation between the two terminal states; it
/// vanishes (to round-off) for linear per-view denoisers with idempotent
/// sync operators such as the uniform averaging matrix.
pub fn sync_equivalence_check<D>(
    sync: &[Vec<f64>],
    init: &ViewStack,
    t_init: f64,
    n_steps: usize,
    sched: &NoiseSchedule,
    denoiser: D,
) -> Result<f64>
where
    D: Fn(&ViewStack, f64) -> Result<ViewStack>,
{
    let v = init.shape().views;
    if sync.len() != v || sync.iter().any(|row| row.len() != v) {
        return Err(Error::Structural(format!(
            "sync matrix must be {v}x{v}"
        )));
    }
    let times = sched.sigma_uniform_times(t_init, n_steps);
    let zero = ViewStack::zeros(init.shape());

    // (a) input sync.
    let mut a = DiffusionState {
        x_t: init.clone(),
        t: t_init,
        rng_seed: 0,
    };
    for pair in times.windows(2) {
        let synced = a.x_t.apply_view_matrix(sync)?;
        let x_hat = denoiser(&synced, pair[0])?;
        a = euler_ancestral_step(&a, &x_hat, pair[1], &zero, sched, true)?;
    }

    // (b) output + init sync.
    let mut b = DiffusionState {
        x_t: init.apply_view_matrix(sync)?,
        t: t_init,
        rng_seed: 0,
    };
    for pair in times.windows(2) {
        let x_hat = denoiser(&b.x_t, pair[0])?.apply_view_matrix(sync)?;
        b = euler_ancestral_step(&b, &x_hat, pair[1], &zero, sched, true)?;
    }

    a.x_t.max_abs_diff(&b.x_t)
}
