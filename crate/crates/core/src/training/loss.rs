use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::embodiment::{RobotState, ACTION_WIDTH};
use crate::kinematics::{forward_kinematics_with_jacobian, KinematicChain};
use crate::scalar::{lit, Scalar};

use super::TrainingError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub joint: f64,
    pub pose: f64,
    pub pose_fk: f64,
    pub smooth_l1_beta: f64,
    /// Number of training timesteps `T` in `α_τ = T / (τ + 1)`.
    pub train_steps: usize,
    /// Upper bound applied to `α_τ`; `None` keeps the raw coefficient.
    #[serde(default)]
    pub alpha_cap: Option<f64>,
}

impl LossWeights {
    /// `α_τ`, capped if configured.
    pub fn alpha<T: Scalar>(&self, tau: usize) -> Result<T, TrainingError> {
        let a = alpha_tau::<T>(tau, self.train_steps)?;
        Ok(match self.alpha_cap {
            Some(cap) => a.min(lit(cap)),
            None => a,
        })
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            joint: 1.0,
            pose: 1.0,
            pose_fk: 1.0,
            smooth_l1_beta: 0.04,
            train_steps: 1000,
            alpha_cap: None,
        }
    }
}

pub fn smooth_l1<T: Scalar>(x: T, beta: T) -> T {
    let a = x.abs();
    if a < beta {
        lit::<T>(0.5) * x * x / beta
    } else {
        a - lit::<T>(0.5) * beta
    }
}

pub fn smooth_l1_grad<T: Scalar>(x: T, beta: T) -> T {
    if x.abs() < beta {
        x / beta
    } else {
        x.signum()
    }
}

/// `α_τ = T / (τ + 1)`.
pub fn alpha_tau<T: Scalar>(tau: usize, train_steps: usize) -> Result<T, TrainingError> {
    if tau >= train_steps {
        return Err(TrainingError::TimestepOutOfRange { tau, steps: train_steps });
    }
    Ok(T::from_count(train_steps) / T::from_count(tau + 1))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms<T> {
    pub joint: T,
    pub pose: T,
    pub pose_fk: T,
    pub alpha: T,
    pub total: T,
}

/// Loss terms on absolute values. `pred` and `gt` are `(H, N_j * 8)` delta
/// chunks relative to `current`.
pub fn compute_losses<T: Scalar>(
    pred: &Array2<T>,
    gt: &Array2<T>,
    current: &RobotState<T>,
    chain: &KinematicChain<T>,
    tau: usize,
    weights: &LossWeights,
) -> Result<LossTerms<T>, TrainingError> {
    losses_and_grad(pred, gt, current, chain, tau, weights, false).map(|(l, _)| l)
}

/// Loss terms and, when `want_grad`, `d total / d pred`.
pub(crate) fn losses_and_grad<T: Scalar>(
    pred: &Array2<T>,
    gt: &Array2<T>,
    current: &RobotState<T>,
    chain: &KinematicChain<T>,
    tau: usize,
    weights: &LossWeights,
    want_grad: bool,
) -> Result<(LossTerms<T>, Option<Array2<T>>), TrainingError> {
    let n_j = current.n_joints();
    let width = n_j * ACTION_WIDTH;
    if pred.shape() != gt.shape() || pred.ncols() != width || chain.dof() != n_j {
        return Err(TrainingError::DimensionMismatch {
            expected: vec![gt.nrows(), width],
            got: pred.shape().to_vec(),
        });
    }
    let h = pred.nrows();
    let beta = lit::<T>(weights.smooth_l1_beta);
    let alpha = weights.alpha::<T>(tau)?;
    let (l1, l2, l3) = (lit::<T>(weights.joint), lit::<T>(weights.pose), lit::<T>(weights.pose_fk));
    let n_joint = T::from_count(h * n_j);
    let n_pose = T::from_count(h * n_j * 7);
    let mut grad = want_grad.then(|| Array2::zeros(pred.dim()));
    let (mut lj, mut lp, mut lf) = (T::zero(), T::zero(), T::zero());
    let base: Vec<[T; 7]> = current.poses.iter().map(|p| p.to_array()).collect();
    let mut q = vec![T::zero(); n_j];

    for t in 0..h {
        for i in 0..n_j {
            let c = i * ACTION_WIDTH;
            let r = (current.q[i] + pred[[t, c]]) - (current.q[i] + gt[[t, c]]);
            lj += smooth_l1(r, beta);
            q[i] = current.q[i] + pred[[t, c]];
            if let Some(g) = grad.as_mut() {
                g[[t, c]] = alpha * l1 * smooth_l1_grad(r, beta) / n_joint;
            }
            for k in 0..7 {
                let r = (base[i][k] + pred[[t, c + 1 + k]]) - (base[i][k] + gt[[t, c + 1 + k]]);
                lp += smooth_l1(r, beta);
                if let Some(g) = grad.as_mut() {
                    g[[t, c + 1 + k]] = alpha * l2 * smooth_l1_grad(r, beta) / n_pose;
                }
            }
        }
        if l3 == T::zero() {
            continue;
        }
        let (poses, jac) = forward_kinematics_with_jacobian(chain, &q)?;
        for (i, pose) in poses.iter().enumerate() {
            let c = i * ACTION_WIDTH;
            let target: [T; 7] = std::array::from_fn(|k| base[i][k] + gt[[t, c + 1 + k]]);
            let fk = pose.to_array();
            let dotq: T = (0..4).map(|k| fk[3 + k] * target[3 + k]).sum();
            let sign = if dotq < T::zero() { -T::one() } else { T::one() };
            for k in 0..7 {
                let s = if k >= 3 { sign } else { T::one() };
                let r = s * fk[k] - target[k];
                lf += smooth_l1(r, beta);
                if let Some(g) = grad.as_mut() {
                    let d = alpha * l3 * smooth_l1_grad(r, beta) * s / n_pose;
                    for (m, row) in jac[i].iter().enumerate() {
                        g[[t, m * ACTION_WIDTH]] += d * row[k];
                    }
                }
            }
        }
    }
    let (lj, lp, lf) = (lj / n_joint, lp / n_pose, lf / n_pose);
    let total = alpha * (l1 * lj + l2 * lp + l3 * lf);
    Ok((
        LossTerms {
            joint: lj,
            pose: lp,
            pose_fk: lf,
            alpha,
            total,
        },
        grad,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WtmConfig {
    pub candidates: usize,
    pub winner_weight: f64,
}

impl Default for WtmConfig {
    fn default() -> Self {
        Self {
            candidates: 4,
            winner_weight: 2.0,
        }
    }
}

impl WtmConfig {
    /// Equal weighting over the same number of candidates.
    pub fn uniform(candidates: usize) -> Self {
        Self {
            candidates,
            winner_weight: 1.0,
        }
    }

    pub fn loser_weight(&self) -> f64 {
        if self.candidates < 2 {
            return 0.0;
        }
        (self.candidates as f64 - self.winner_weight) / (self.candidates as f64 - 1.0)
    }
}

/// Winner gets `winner_weight`, the rest share the remainder so the mean is 1.
pub fn wtm_weights<T: Scalar>(errors: &[T], cfg: &WtmConfig) -> Vec<T> {
    if errors.len() < 2 {
        return vec![T::one(); errors.len()];
    }
    let mut best = 0;
    for (i, e) in errors.iter().enumerate() {
        if *e < errors[best] {
            best = i;
        }
    }
    let n = errors.len() as f64;
    let loser = (n - cfg.winner_weight) / (n - 1.0);
    (0..errors.len())
        .map(|i| lit(if i == best { cfg.winner_weight } else { loser }))
        .collect()
}
