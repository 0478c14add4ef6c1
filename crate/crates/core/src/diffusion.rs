//! Cosine noise schedule, forward noising, x-prediction samplers and
//! teacher-forced inputs.
//!
//! Chunks are `(H, D)` arrays. Timesteps are zero-based: `τ ∈ [0, T)`, and
//! stepping from `τ = 0` lands on the clean sample.

use ndarray::{Array2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::scalar::{lit, Scalar};

/// Default number of training timesteps.
pub const DEFAULT_TRAIN_STEPS: usize = 1000;
/// Default number of sampler steps at inference.
pub const DEFAULT_INFERENCE_STEPS: usize = 10;

const COSINE_S: f64 = 0.008;
const MAX_BETA: f64 = 0.999;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DiffusionError {
    #[error("timestep {tau} outside [0, {steps})")]
    TimestepOutOfRange { tau: usize, steps: usize },
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch(Vec<usize>, Vec<usize>),
}

/// Cosine ("squaredcos_cap_v2") schedule tables.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule<T> {
    pub betas: Vec<T>,
    pub alphas: Vec<T>,
    pub alpha_bars: Vec<T>,
}

fn cosine_f(t: f64) -> f64 {
    ((t + COSINE_S) / (1.0 + COSINE_S) * std::f64::consts::FRAC_PI_2).cos().powi(2)
}

impl<T: Scalar> NoiseSchedule<T> {
    /// `beta_i = min(1 - f((i+1)/T) / f(i/T), 0.999)`, `alpha_bar = cumprod(1 - beta)`.
    pub fn cosine(steps: usize) -> Self {
        assert!(steps >= 2, "schedule needs at least two steps");
        let n = steps as f64;
        let mut betas = Vec::with_capacity(steps);
        let mut alphas = Vec::with_capacity(steps);
        let mut alpha_bars = Vec::with_capacity(steps);
        let mut ab = 1.0;
        for i in 0..steps {
            let beta = (1.0 - cosine_f((i + 1) as f64 / n) / cosine_f(i as f64 / n)).min(MAX_BETA);
            ab *= 1.0 - beta;
            betas.push(lit(beta));
            alphas.push(lit(1.0 - beta));
            alpha_bars.push(lit(ab));
        }
        Self {
            betas,
            alphas,
            alpha_bars,
        }
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn alpha_bar(&self, tau: usize) -> Result<T, DiffusionError> {
        self.alpha_bars
            .get(tau)
            .copied()
            .ok_or(DiffusionError::TimestepOutOfRange { tau, steps: self.steps() })
    }

    /// `alpha_bar` one step closer to the data; `1` before the first step.
    pub fn alpha_bar_prev(&self, tau: usize) -> T {
        if tau == 0 {
            T::one()
        } else {
            self.alpha_bars[tau - 1]
        }
    }

    pub fn cast<U: Scalar>(&self) -> NoiseSchedule<U> {
        let c = |v: &Vec<T>| v.iter().map(|x| U::lit(x.as_f64())).collect();
        NoiseSchedule {
            betas: c(&self.betas),
            alphas: c(&self.alphas),
            alpha_bars: c(&self.alpha_bars),
        }
    }
}

pub fn build_cosine_schedule<T: Scalar>(steps: usize) -> NoiseSchedule<T> {
    NoiseSchedule::cosine(steps)
}

fn same_shape<T>(a: &Array2<T>, b: &Array2<T>) -> Result<(), DiffusionError> {
    if a.shape() != b.shape() {
        return Err(DiffusionError::ShapeMismatch(a.shape().to_vec(), b.shape().to_vec()));
    }
    Ok(())
}

/// Standard normal draw of the given shape.
pub fn randn<T: Scalar, R: Rng + ?Sized>(shape: (usize, usize), rng: &mut R) -> Array2<T> {
    Array2::from_shape_simple_fn(shape, || lit(StandardNormal.sample(rng)))
}

/// `x_τ = sqrt(ab_τ)·x0 + sqrt(1 − ab_τ)·eps`.
pub fn add_noise<T: Scalar>(
    schedule: &NoiseSchedule<T>,
    x0: &Array2<T>,
    eps: &Array2<T>,
    tau: usize,
) -> Result<Array2<T>, DiffusionError> {
    same_shape(x0, eps)?;
    let ab = schedule.alpha_bar(tau)?;
    let (a, b) = (ab.sqrt(), (T::one() - ab).sqrt());
    Ok(Zip::from(x0).and(eps).map_collect(|&x, &e| a * x + b * e))
}

/// One posterior step `x_τ → x_{τ−1}`; from `τ = 0` it returns the clean estimate.
pub fn ancestral_step<T: Scalar>(
    schedule: &NoiseSchedule<T>,
    x_tau: &Array2<T>,
    x0_hat: &Array2<T>,
    tau: usize,
    noise: &Array2<T>,
) -> Result<Array2<T>, DiffusionError> {
    same_shape(x_tau, x0_hat)?;
    same_shape(x_tau, noise)?;
    let ab = schedule.alpha_bar(tau)?;
    let ab_prev = schedule.alpha_bar_prev(tau);
    let beta = schedule.betas[tau];
    let alpha = schedule.alphas[tau];
    let denom = T::one() - ab;
    let c0 = ab_prev.sqrt() * beta / denom;
    let ct = alpha.sqrt() * (T::one() - ab_prev) / denom;
    let sigma = (beta * (T::one() - ab_prev) / denom).max(T::zero()).sqrt();
    Ok(Zip::from(x0_hat)
        .and(x_tau)
        .and(noise)
        .map_collect(|&x0, &xt, &z| c0 * x0 + ct * xt + sigma * z))
}

/// Maps `(noisy chunk, observation features, τ)` to an estimate of the clean chunk.
pub trait Denoiser<T> {
    fn denoise(&self, x: &Array2<T>, obs: &[T], tau: usize) -> Array2<T>;
}

impl<T, F> Denoiser<T> for F
where
    F: Fn(&Array2<T>, &[T], usize) -> Array2<T>,
{
    fn denoise(&self, x: &Array2<T>, obs: &[T], tau: usize) -> Array2<T> {
        self(x, obs, tau)
    }
}

/// Hook applied to every clean estimate before the sampler update.
pub trait Guidance<T> {
    fn guide(&mut self, x0_hat: Array2<T>, tau: usize) -> Array2<T>;
}

impl<T, F> Guidance<T> for F
where
    F: FnMut(Array2<T>, usize) -> Array2<T>,
{
    fn guide(&mut self, x0_hat: Array2<T>, tau: usize) -> Array2<T> {
        self(x0_hat, tau)
    }
}

/// Full-length ancestral sampler over every training timestep.
pub fn ancestral_sample<T: Scalar, D: Denoiser<T> + ?Sized, R: Rng + ?Sized>(
    schedule: &NoiseSchedule<T>,
    x_t: Array2<T>,
    denoiser: &D,
    obs: &[T],
    mut guidance: Option<&mut dyn Guidance<T>>,
    rng: &mut R,
) -> Array2<T> {
    let mut x = x_t;
    for tau in (0..schedule.steps()).rev() {
        let mut x0 = denoiser.denoise(&x, obs, tau);
        if let Some(g) = guidance.as_deref_mut() {
            x0 = g.guide(x0, tau);
        }
        let noise = if tau > 0 { randn(x.dim(), rng) } else { Array2::zeros(x.dim()) };
        x = ancestral_step(schedule, &x, &x0, tau, &noise).expect("shapes fixed by the loop");
    }
    x
}

/// `{T−1, T−1−s, …}` with stride `s = T / steps`.
pub fn timestep_ladder(train_steps: usize, steps: usize) -> Vec<usize> {
    let steps = steps.clamp(1, train_steps);
    let stride = train_steps / steps;
    (0..steps).map(|i| train_steps - 1 - i * stride).collect()
}

/// Deterministic (zero-variance) strided sampler.
///
/// Each rung computes `x0_hat`, applies `guidance`, then re-noises toward the
/// next rung with the implied noise estimate. Returns the last `x0_hat`.
pub fn deterministic_denoise<T: Scalar, D: Denoiser<T> + ?Sized>(
    schedule: &NoiseSchedule<T>,
    x_t: Array2<T>,
    denoiser: &D,
    obs: &[T],
    steps: usize,
    mut guidance: Option<&mut dyn Guidance<T>>,
) -> Array2<T> {
    let ladder = timestep_ladder(schedule.steps(), steps);
    let mut x = x_t;
    let mut x0 = x.clone();
    for (i, &tau) in ladder.iter().enumerate() {
        x0 = denoiser.denoise(&x, obs, tau);
        if let Some(g) = guidance.as_deref_mut() {
            x0 = g.guide(x0, tau);
        }
        let Some(&next) = ladder.get(i + 1) else { break };
        let ab = schedule.alpha_bars[tau];
        let ab_next = schedule.alpha_bars[next];
        let (sa, sb) = (ab.sqrt(), (T::one() - ab).sqrt());
        let (na, nb) = (ab_next.sqrt(), (T::one() - ab_next).sqrt());
        Zip::from(&mut x).and(&x0).for_each(|xv, &x0v| {
            let eps = (*xv - sa * x0v) / sb;
            *xv = na * x0v + nb * eps;
        });
    }
    x0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherForcingConfig {
    /// Mean of the Poisson prefix length.
    pub poisson_mean: f64,
    /// Probability that a sample is teacher forced.
    pub ratio: f64,
}

impl Default for TeacherForcingConfig {
    fn default() -> Self {
        Self {
            poisson_mean: 16.0,
            ratio: 0.25,
        }
    }
}

/// Overwrites rows `t < n_prefix` of `x_noise` with `x_gt`.
pub fn force_prefix<T: Scalar>(x_noise: &Array2<T>, x_gt: &Array2<T>, n_prefix: usize) -> Array2<T> {
    let mut out = x_noise.clone();
    let n = n_prefix.min(out.nrows());
    out.slice_mut(ndarray::s![..n, ..]).assign(&x_gt.slice(ndarray::s![..n, ..]));
    out
}

pub fn sample_prefix_len<R: Rng + ?Sized>(mean: f64, horizon: usize, rng: &mut R) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    let n: f64 = Poisson::new(mean).expect("positive mean").sample(rng);
    (n as usize).min(horizon)
}

/// With probability `ratio`, forces a Poisson-length ground-truth prefix.
/// Returns the input, whether forcing applied, and the prefix length.
pub fn teacher_forced_input<T: Scalar, R: Rng + ?Sized>(
    x_noise: &Array2<T>,
    x_gt: &Array2<T>,
    cfg: &TeacherForcingConfig,
    rng: &mut R,
) -> Result<(Array2<T>, bool, usize), DiffusionError> {
    same_shape(x_noise, x_gt)?;
    if !rng.random_bool(cfg.ratio.clamp(0.0, 1.0)) {
        return Ok((x_noise.clone(), false, 0));
    }
    let n = sample_prefix_len(cfg.poisson_mean, x_noise.len_of(Axis(0)), rng);
    Ok((force_prefix(x_noise, x_gt, n), true, n))
}
