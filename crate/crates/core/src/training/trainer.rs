use ndarray::{Array2, Axis};
use rand::seq::index::sample as sample_indices;
use rand::Rng;

use super::loss::{losses_and_grad, wtm_weights, LossWeights, WtmConfig};
use super::model::{Dense, ToyDenoiser};
use serde::{Deserialize, Serialize};

use super::optim::{grad_norm, Optimizer, OptimizerConfig};
use super::TrainingError;
use crate::diffusion::{add_noise, randn, teacher_forced_input, NoiseSchedule, TeacherForcingConfig};
use crate::embodiment::RobotState;
use crate::kinematics::KinematicChain;
use crate::scalar::Scalar;

/// One supervised example: observation features, the ground-truth delta chunk
/// `(H, N_j * 8)` and the state the deltas are relative to.
#[derive(Debug, Clone)]
pub struct TrainSample<T> {
    pub obs: Vec<T>,
    pub gt: Array2<T>,
    pub current: RobotState<T>,
}

pub struct TrainContext<'a, T> {
    pub chain: &'a KinematicChain<T>,
    pub schedule: &'a NoiseSchedule<T>,
    pub teacher_forcing: TeacherForcingConfig,
    pub wtm: WtmConfig,
    pub loss: LossWeights,
}

/// Timestep and noisy candidate inputs drawn for one sample.
#[derive(Debug, Clone)]
pub struct CandidateDraw<T> {
    pub tau: usize,
    /// Flattened noisy (possibly teacher-forced) chunks, one per candidate.
    pub inputs: Vec<Vec<T>>,
    pub forced: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub mean_alpha: f64,
    pub grad_norm: f64,
}

/// Shared `τ` per sample, independent noise and teacher forcing per candidate.
pub fn draw_candidates<T: Scalar, R: Rng + ?Sized>(
    samples: &[TrainSample<T>],
    ctx: &TrainContext<T>,
    rng: &mut R,
) -> Result<Vec<CandidateDraw<T>>, TrainingError> {
    let n = ctx.wtm.candidates.max(1);
    samples
        .iter()
        .map(|s| {
            let tau = rng.random_range(0..ctx.schedule.steps());
            let mut inputs = Vec::with_capacity(n);
            let mut forced = Vec::with_capacity(n);
            for _ in 0..n {
                let eps = randn(s.gt.dim(), rng);
                let noisy = add_noise(ctx.schedule, &s.gt, &eps, tau).map_err(|_| TrainingError::TimestepOutOfRange {
                    tau,
                    steps: ctx.schedule.steps(),
                })?;
                let (x, applied, k) =
                    teacher_forced_input(&noisy, &s.gt, &ctx.teacher_forcing, rng).expect("same shape");
                forced.push(if applied { k } else { 0 });
                inputs.push(x.iter().copied().collect());
            }
            Ok(CandidateDraw { tau, inputs, forced })
        })
        .collect()
}

/// Weighted batch loss and, when requested, parameter gradients.
///
/// The batch loss is `mean over samples and candidates of w_n · total_n`,
/// with the winner-takes-more weights held constant.
pub fn loss_and_grad<T: Scalar>(
    model: &ToyDenoiser<T>,
    samples: &[TrainSample<T>],
    draws: &[CandidateDraw<T>],
    ctx: &TrainContext<T>,
    want_grad: bool,
) -> Result<(T, f64, Option<Vec<Dense<T>>>), TrainingError> {
    let chunks: Vec<&[T]> = draws.iter().flat_map(|d| d.inputs.iter().map(|v| &v[..])).collect();
    let obs: Vec<&[T]> = samples
        .iter()
        .zip(draws)
        .flat_map(|(s, d)| std::iter::repeat_n(&s.obs[..], d.inputs.len()))
        .collect();
    let taus: Vec<usize> = draws
        .iter()
        .flat_map(|d| std::iter::repeat_n(d.tau, d.inputs.len()))
        .collect();
    let x = model.assemble_input(&chunks, &obs, &taus);
    let (out, cache) = model.forward(&x);
    let mut grad_out = want_grad.then(|| Array2::zeros(out.dim()));
    let rows = chunks.len();
    let norm = T::from_count(rows);
    let mut total = T::zero();
    let mut alpha_sum = 0.0;
    let mut row = 0;
    for (s, d) in samples.iter().zip(draws) {
        let h = s.gt.nrows();
        let mut totals = Vec::with_capacity(d.inputs.len());
        let mut grads = Vec::with_capacity(d.inputs.len());
        for k in 0..d.inputs.len() {
            let pred = out
                .row(row + k)
                .to_owned()
                .into_shape_with_order((h, s.gt.ncols()))
                .expect("model output matches chunk");
            let (terms, g) = losses_and_grad(&pred, &s.gt, &s.current, ctx.chain, d.tau, &ctx.loss, want_grad)?;
            totals.push(terms.total);
            grads.push(g);
            alpha_sum += terms.alpha.as_f64();
        }
        let w = wtm_weights(&totals, &ctx.wtm);
        for k in 0..d.inputs.len() {
            total += w[k] * totals[k] / norm;
            if let (Some(go), Some(g)) = (grad_out.as_mut(), grads[k].as_ref()) {
                let scale = w[k] / norm;
                go.row_mut(row + k)
                    .assign(&g.view().into_shape_with_order(g.len()).expect("contiguous").mapv(|v| v * scale));
            }
        }
        row += d.inputs.len();
    }
    let grads = grad_out.map(|g| model.backward(&cache, &g));
    Ok((total, alpha_sum / rows.max(1) as f64, grads))
}

/// One optimizer step on a freshly drawn set of candidates.
pub fn train_step<T: Scalar, R: Rng + ?Sized>(
    model: &mut ToyDenoiser<T>,
    samples: &[TrainSample<T>],
    ctx: &TrainContext<T>,
    opt: &mut Optimizer<T>,
    rng: &mut R,
) -> Result<StepStats, TrainingError> {
    let draws = draw_candidates(samples, ctx, rng)?;
    let (loss, mean_alpha, grads) = loss_and_grad(model, samples, &draws, ctx, true)?;
    let grads = grads.expect("requested");
    let gn = grad_norm(&grads);
    let loss = loss.as_f64();
    if !loss.is_finite() || !gn.is_finite() {
        return Err(TrainingError::NonFiniteLoss {
            loss,
            alpha: mean_alpha,
            grad_norm: gn,
        });
    }
    opt.step(model, &grads);
    if !model.is_finite() {
        return Err(TrainingError::NonFiniteLoss {
            loss,
            alpha: mean_alpha,
            grad_norm: gn,
        });
    }
    Ok(StepStats {
        loss,
        mean_alpha,
        grad_norm: gn,
    })
}

/// Largest relative error between analytic and central-difference gradients
/// over `n_params` randomly chosen parameters.
pub fn finite_diff_check<R: Rng + ?Sized>(
    model: &ToyDenoiser<f64>,
    samples: &[TrainSample<f64>],
    draws: &[CandidateDraw<f64>],
    ctx: &TrainContext<f64>,
    n_params: usize,
    h: f64,
    rng: &mut R,
) -> Result<f64, TrainingError> {
    let (_, _, grads) = loss_and_grad(model, samples, draws, ctx, true)?;
    let mut grads = grads.expect("requested");
    let sizes: Vec<usize> = model.layers.iter().flat_map(|l| [l.w.len(), l.b.len()]).collect();
    let total: usize = sizes.iter().sum();
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for flat in sample_indices(rng, total, n_params.min(total)) {
        let (mut slot, mut idx) = (0, flat);
        while idx >= sizes[slot] {
            idx -= sizes[slot];
            slot += 1;
        }
        let (layer, is_bias) = (slot / 2, slot % 2 == 1);
        let analytic = *param_mut(&mut grads[layer], is_bias, idx);
        let orig = *param_mut(&mut probe.layers[layer], is_bias, idx);
        *param_mut(&mut probe.layers[layer], is_bias, idx) = orig + h;
        let (up, _, _) = loss_and_grad(&probe, samples, draws, ctx, false)?;
        *param_mut(&mut probe.layers[layer], is_bias, idx) = orig - h;
        let (down, _, _) = loss_and_grad(&probe, samples, draws, ctx, false)?;
        *param_mut(&mut probe.layers[layer], is_bias, idx) = orig;
        let fd = (up - down) / (2.0 * h);
        let rel = (analytic - fd).abs() / (analytic.abs() + fd.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    Ok(worst)
}

fn param_mut(l: &mut Dense<f64>, is_bias: bool, idx: usize) -> &mut f64 {
    if is_bias {
        &mut l.b[idx]
    } else {
        let cols = l.w.len_of(Axis(1));
        &mut l.w[[idx / cols, idx % cols]]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    pub steps: usize,
    /// Samples per step; each contributes `wtm.candidates` rows.
    pub batch: usize,
    pub optimizer: OptimizerConfig,
    pub clip_norm: Option<f64>,
    /// Fractions of `steps` at which the learning rate is multiplied by `lr_decay`.
    pub lr_milestones: Vec<f64>,
    pub lr_decay: f64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            steps: 60_000,
            batch: 16,
            optimizer: OptimizerConfig::default(),
            clip_norm: Some(1.0),
            lr_milestones: vec![0.6, 0.85],
            lr_decay: 0.3,
        }
    }
}

/// Runs `cfg.steps` optimizer steps on batches drawn by `sampler`.
///
/// `on_step` sees every step's statistics; the returned vector holds the
/// per-step losses.
pub fn fit<T: Scalar, R: Rng + ?Sized>(
    model: &mut ToyDenoiser<T>,
    ctx: &TrainContext<T>,
    cfg: &TrainerConfig,
    mut sampler: impl FnMut(&mut R) -> TrainSample<T>,
    rng: &mut R,
    mut on_step: impl FnMut(usize, &StepStats),
) -> Result<Vec<f64>, TrainingError> {
    let mut opt = Optimizer::new(cfg.optimizer, model);
    opt.clip_norm = cfg.clip_norm;
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let passed = cfg
            .lr_milestones
            .iter()
            .filter(|&&m| step as f64 >= m * cfg.steps as f64)
            .count();
        opt.lr_scale = cfg.lr_decay.powi(passed as i32);
        let batch: Vec<TrainSample<T>> = (0..cfg.batch.max(1)).map(|_| sampler(rng)).collect();
        let stats = train_step(model, &batch, ctx, &mut opt, rng)?;
        on_step(step, &stats);
        losses.push(stats.loss);
    }
    Ok(losses)
}
