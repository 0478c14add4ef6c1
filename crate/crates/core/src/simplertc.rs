//! Gradient-free real-time chunk fusion.
//!
//! The unexecuted remainder of the previous chunk pulls the new chunk's clean
//! estimate toward it at every sampler step. Rows inside the inference delay
//! are copied exactly; the pull then fades out over a fusion window.

use std::str::FromStr;

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::diffusion::{deterministic_denoise, Denoiser, NoiseSchedule};
use crate::scalar::{lit, Scalar};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RtcError {
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch(Vec<usize>, Vec<usize>),
    #[error("weights have length {got}, chunk has {expected} rows")]
    WeightLength { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decay {
    #[default]
    Linear,
    Quadratic,
    #[serde(alias = "exp")]
    Exponential,
}

impl FromStr for Decay {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "linear" | "lin" => Ok(Self::Linear),
            "quadratic" | "quad" => Ok(Self::Quadratic),
            "exp" | "exponential" => Ok(Self::Exponential),
            other => Err(format!("unknown decay '{other}' (linear, quadratic, exp)")),
        }
    }
}

impl std::fmt::Display for Decay {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Linear => "linear",
            Self::Quadratic => "quadratic",
            Self::Exponential => "exp",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RtcConfig {
    /// Inference delay in control steps.
    pub delay: usize,
    /// Fusion window length in control steps.
    pub window: usize,
    pub decay: Decay,
    pub horizon: usize,
    /// Show the denoiser `A_prev` instead of the noisy rows on the `w = 1`
    /// plateau, the regime teacher forcing trains for.
    #[serde(default = "yes")]
    pub clean_prefix_input: bool,
}

fn yes() -> bool {
    true
}

impl Default for RtcConfig {
    fn default() -> Self {
        Self {
            delay: 4,
            window: 8,
            decay: Decay::Linear,
            horizon: 64,
            clean_prefix_input: true,
        }
    }
}

/// Residual influence: `1` on `[0, d]`, linear ramp down over `(d, d+L)`, `0` after.
pub fn compute_rho<T: Scalar>(cfg: &RtcConfig) -> Vec<T> {
    let (d, l) = (cfg.delay, cfg.window.max(1));
    (0..cfg.horizon)
        .map(|t| {
            if t <= d {
                T::one()
            } else if t < d + l {
                T::one() - T::from_count(t - d) / T::from_count(l)
            } else {
                T::zero()
            }
        })
        .collect()
}

pub fn decay_weight<T: Scalar>(rho: T, decay: Decay) -> T {
    match decay {
        Decay::Linear => rho,
        Decay::Quadratic => rho * rho,
        Decay::Exponential => {
            if rho >= T::one() {
                T::one()
            } else {
                let e = lit::<T>(std::f64::consts::E);
                rho * (rho.exp() - T::one()) / (e - T::one())
            }
        }
    }
}

/// Per-row blend weights in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceWeights<T> {
    pub w: Vec<T>,
}

pub fn compute_weights<T: Scalar>(rho: &[T], decay: Decay) -> GuidanceWeights<T> {
    GuidanceWeights {
        w: rho.iter().map(|&r| decay_weight(r, decay)).collect(),
    }
}

/// Previous chunk shifted by the steps already executed.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedPrev<T> {
    /// `(H, D)`; unavailable rows are zero.
    pub rows: Array2<T>,
    pub available: Vec<bool>,
}

impl<T: Scalar> AlignedPrev<T> {
    pub fn n_available(&self) -> usize {
        self.available.iter().filter(|a| **a).count()
    }

    /// Weights with unavailable rows zeroed.
    pub fn mask(&self, w: &GuidanceWeights<T>) -> GuidanceWeights<T> {
        GuidanceWeights {
            w: w
                .w
                .iter()
                .zip(&self.available)
                .map(|(&w, &a)| if a { w } else { T::zero() })
                .collect(),
        }
    }
}

/// `A_prev[t] = prev[executed + t]` for a new chunk of `horizon` rows.
pub fn align_previous_chunk<T: Scalar>(prev: &Array2<T>, executed: usize, horizon: usize) -> AlignedPrev<T> {
    let mut rows = Array2::zeros((horizon, prev.ncols()));
    let mut available = vec![false; horizon];
    for t in 0..horizon {
        if let Some(src) = executed.checked_add(t).filter(|&s| s < prev.nrows()) {
            rows.row_mut(t).assign(&prev.row(src));
            available[t] = true;
        }
    }
    AlignedPrev { rows, available }
}

/// `Ã = w ⊙ A_prev + (1 − w) ⊙ x0_hat`, row-wise.
///
/// Rows with `w = 1` are copied from `A_prev` and rows with `w = 0` from
/// `x0_hat`, so the plateau is exact in floating point.
pub fn blend<T: Scalar>(x0_hat: &Array2<T>, a_prev: &Array2<T>, w: &GuidanceWeights<T>) -> Result<Array2<T>, RtcError> {
    if x0_hat.shape() != a_prev.shape() {
        return Err(RtcError::ShapeMismatch(x0_hat.shape().to_vec(), a_prev.shape().to_vec()));
    }
    if w.w.len() != x0_hat.nrows() {
        return Err(RtcError::WeightLength {
            expected: x0_hat.nrows(),
            got: w.w.len(),
        });
    }
    let mut out = x0_hat.clone();
    for (t, &wt) in w.w.iter().enumerate() {
        if wt == T::zero() {
            continue;
        }
        let mut row = out.row_mut(t);
        if wt == T::one() {
            row.assign(&a_prev.row(t));
        } else {
            Zip::from(&mut row)
                .and(a_prev.row(t))
                .for_each(|x, &a| *x = *x + wt * (a - *x));
        }
    }
    Ok(out)
}

/// Deterministic sampling with the previous chunk blended into every clean
/// estimate. Without `prev` this is plain [`deterministic_denoise`].
pub fn guided_denoise<T: Scalar, D: Denoiser<T> + ?Sized>(
    schedule: &NoiseSchedule<T>,
    x_t: Array2<T>,
    denoiser: &D,
    obs: &[T],
    steps: usize,
    prev: Option<&AlignedPrev<T>>,
    cfg: &RtcConfig,
) -> Result<Array2<T>, RtcError> {
    let Some(prev) = prev else {
        return Ok(deterministic_denoise(schedule, x_t, denoiser, obs, steps, None));
    };
    if prev.rows.shape() != x_t.shape() {
        return Err(RtcError::ShapeMismatch(prev.rows.shape().to_vec(), x_t.shape().to_vec()));
    }
    let cfg = RtcConfig {
        horizon: x_t.nrows(),
        ..*cfg
    };
    let w = prev.mask(&compute_weights(&compute_rho::<T>(&cfg), cfg.decay));
    let mut hook = |x0: Array2<T>, _tau: usize| blend(&x0, &prev.rows, &w).expect("shapes checked above");
    let plateau: Vec<usize> = (0..w.w.len()).filter(|&t| w.w[t] == T::one()).collect();
    if cfg.clean_prefix_input && !plateau.is_empty() {
        let wrapped = PrefixInput {
            inner: denoiser,
            rows: &prev.rows,
            plateau,
        };
        return Ok(deterministic_denoise(schedule, x_t, &wrapped, obs, steps, Some(&mut hook)));
    }
    Ok(deterministic_denoise(schedule, x_t, denoiser, obs, steps, Some(&mut hook)))
}

/// Overwrites the plateau rows of every denoiser input with `A_prev`.
struct PrefixInput<'a, T, D: ?Sized> {
    inner: &'a D,
    rows: &'a Array2<T>,
    plateau: Vec<usize>,
}

impl<T: Scalar, D: Denoiser<T> + ?Sized> Denoiser<T> for PrefixInput<'_, T, D> {
    fn denoise(&self, x: &Array2<T>, obs: &[T], tau: usize) -> Array2<T> {
        let mut x = x.clone();
        for &t in &self.plateau {
            x.row_mut(t).assign(&self.rows.row(t));
        }
        self.inner.denoise(&x, obs, tau)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::randn;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(d: usize, l: usize) -> RtcConfig {
        RtcConfig {
            delay: d,
            window: l,
            decay: Decay::Linear,
            horizon: 64,
            clean_prefix_input: true,
        }
    }

    #[test]
    fn rho_examples() {
        let r: Vec<f64> = compute_rho(&cfg(4, 8));
        assert_eq!(r[2], 1.0);
        assert_eq!(r[4], 1.0);
        assert_eq!(r[8], 0.5);
        assert_eq!(r[12], 0.0);
        assert_eq!(r[20], 0.0);
    }

    #[test]
    fn weight_examples() {
        for d in [Decay::Linear, Decay::Quadratic, Decay::Exponential] {
            assert_eq!(decay_weight(1.0f64, d), 1.0);
            assert_eq!(decay_weight(0.0f64, d), 0.0);
        }
        let e = std::f64::consts::E;
        let w = decay_weight(0.5f64, Decay::Exponential);
        assert!((w - 0.5 * (0.5f64.exp() - 1.0) / (e - 1.0)).abs() < 1e-12);
        assert!((w - 0.18877).abs() < 1e-5);
    }

    #[test]
    fn align_examples() {
        let prev = Array2::from_shape_fn((64, 3), |(t, k)| (t * 10 + k) as f64);
        let a = align_previous_chunk(&prev, 0, 64);
        assert_eq!(a.rows, prev);
        assert_eq!(a.n_available(), 64);
        let a = align_previous_chunk(&prev, 64, 64);
        assert_eq!(a.n_available(), 0);
        let a = align_previous_chunk(&prev, 10, 64);
        assert_eq!(a.n_available(), 54);
        assert_eq!(a.rows.row(0), prev.row(10));
        assert_eq!(a.rows.row(53), prev.row(63));
        assert!(!a.available[54]);
    }

    #[test]
    fn blend_examples() {
        let x = Array2::from_elem((4, 2), 0.0);
        let a = Array2::from_elem((4, 2), 2.0);
        let zero = GuidanceWeights { w: vec![0.0; 4] };
        assert_eq!(blend(&x, &a, &zero).unwrap(), x);
        let one = GuidanceWeights { w: vec![1.0; 4] };
        assert_eq!(blend(&x, &x, &one).unwrap(), x);
        let half = GuidanceWeights { w: vec![0.5; 4] };
        assert!(blend(&x, &a, &half).unwrap().iter().all(|v| *v == 1.0));
        assert!(blend(&x, &Array2::zeros((3, 2)), &half).is_err());
    }

    fn toy_denoiser(x: &Array2<f64>, _: &[f64], tau: usize) -> Array2<f64> {
        x.mapv(|v| (0.6 * v).sin() + 1e-3 * tau as f64)
    }

    #[test]
    fn guided_cases() {
        let s = NoiseSchedule::<f64>::cosine(1000);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let start: Array2<f64> = randn((64, 4), &mut rng);
        let plain = deterministic_denoise(&s, start.clone(), &toy_denoiser, &[], 10, None);
        assert_eq!(guided_denoise(&s, start.clone(), &toy_denoiser, &[], 10, None, &cfg(4, 8)).unwrap(), plain);

        let prev: Array2<f64> = randn((64, 4), &mut rng);
        let aligned = align_previous_chunk(&prev, 0, 64);
        let out = guided_denoise(&s, start.clone(), &toy_denoiser, &[], 10, Some(&aligned), &cfg(4, 8)).unwrap();
        for t in 0..=4 {
            assert_eq!(out.row(t), prev.row(t));
        }

        // a constant clean estimate makes the unguided output a fixed point
        let c: Array2<f64> = randn((64, 4), &mut rng);
        let den = |_: &Array2<f64>, _: &[f64], _| c.clone();
        let own = deterministic_denoise(&s, start.clone(), &den, &[], 10, None);
        let aligned = align_previous_chunk(&own, 0, 64);
        let out = guided_denoise(&s, start, &den, &[], 10, Some(&aligned), &cfg(4, 8)).unwrap();
        assert_eq!(out, own);
    }

    #[test]
    fn plateau_rows_reach_the_denoiser_clean() {
        use std::cell::RefCell;
        let s = NoiseSchedule::<f64>::cosine(1000);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let prev = align_previous_chunk(&randn((64, 4), &mut rng), 2, 64);
        let seen = RefCell::new(Vec::new());
        let spy = |x: &Array2<f64>, _: &[f64], _: usize| {
            seen.borrow_mut().push(x.clone());
            x.clone()
        };
        let start: Array2<f64> = randn((64, 4), &mut rng);
        guided_denoise(&s, start.clone(), &spy, &[], 10, Some(&prev), &cfg(4, 8)).unwrap();
        assert_eq!(seen.borrow().len(), 10);
        for x in seen.borrow().iter() {
            for t in 0..=4 {
                assert_eq!(x.row(t), prev.rows.row(t));
            }
            assert_ne!(x.row(5), prev.rows.row(5));
        }

        seen.borrow_mut().clear();
        let off = RtcConfig {
            clean_prefix_input: false,
            ..cfg(4, 8)
        };
        guided_denoise(&s, start.clone(), &spy, &[], 10, Some(&prev), &off).unwrap();
        assert_eq!(seen.borrow()[0], start);

        // rows past the end of the previous chunk stay noisy
        seen.borrow_mut().clear();
        let short = align_previous_chunk(&prev.rows, 62, 64);
        guided_denoise(&s, start.clone(), &spy, &[], 10, Some(&short), &cfg(4, 8)).unwrap();
        assert_eq!(seen.borrow()[0].row(2), start.row(2));
    }

    proptest! {
        #[test]
        fn weights_non_increasing(d in 0usize..40, l in 1usize..40, h in 1usize..80) {
            for decay in [Decay::Linear, Decay::Quadratic, Decay::Exponential] {
                let c = RtcConfig { delay: d, window: l, decay, horizon: h, clean_prefix_input: true };
                let w = compute_weights(&compute_rho::<f64>(&c), decay).w;
                prop_assert!(w.windows(2).all(|p| p[1] <= p[0]));
                prop_assert!(w.iter().all(|v| (0.0..=1.0).contains(v)));
                for (t, v) in w.iter().enumerate() {
                    if t <= d { prop_assert_eq!(*v, 1.0); }
                    if t >= d + l { prop_assert_eq!(*v, 0.0); }
                }
            }
        }

        #[test]
        fn closed_forms(rho in 0.0f64..1.0) {
            let e = std::f64::consts::E;
            prop_assert!((decay_weight(rho, Decay::Linear) - rho).abs() < 1e-12);
            prop_assert!((decay_weight(rho, Decay::Quadratic) - rho * rho).abs() < 1e-12);
            prop_assert!((decay_weight(rho, Decay::Exponential) - rho * (rho.exp() - 1.0) / (e - 1.0)).abs() < 1e-12);
        }

        #[test]
        fn prefix_exact(seed in 0u64..1000, d in 0usize..20, l in 1usize..20, executed in 0usize..64) {
            let s = NoiseSchedule::<f64>::cosine(1000);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let start: Array2<f64> = randn((64, 3), &mut rng);
            let prev: Array2<f64> = randn((64, 3), &mut rng);
            let aligned = align_previous_chunk(&prev, executed, 64);
            let c = RtcConfig { delay: d, window: l, decay: Decay::Quadratic, horizon: 64, clean_prefix_input: true };
            let out = guided_denoise(&s, start, &toy_denoiser, &[], 10, Some(&aligned), &c).unwrap();
            for t in 0..=d.min(63) {
                if aligned.available[t] {
                    prop_assert_eq!(out.row(t), aligned.rows.row(t));
                }
            }
        }
    }
}
