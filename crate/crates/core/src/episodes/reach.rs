//! Synthetic reach demonstrations: random start, random reachable target,
//! minimum-jerk joint motion to an inverse-kinematics solution.

use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::format::{read_episode, write_episode, Episode, EpisodeError, EpisodeHeader, Frame};
use crate::embodiment::{relative_action, ActionSpace, RobotState, ACTION_WIDTH};
use crate::kinematics::{forward_kinematics, forward_kinematics_with_jacobian, JointKind, KinematicChain, Vec3};
use crate::projection::{overhead_camera, synthesize_annotations, CameraModel};
use crate::training::TrainSample;

pub const REACH_TASK: &str = "reach";
const MAX_ATTEMPTS: usize = 100;

/// Normalized minimum-jerk profile `10s³ − 15s⁴ + 6s⁵` on `[0, 1]`.
pub fn min_jerk(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * s * (10.0 + s * (-15.0 + 6.0 * s))
}

pub fn min_jerk_velocity(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    30.0 * s * s * (1.0 - s) * (1.0 - s)
}

pub fn min_jerk_acceleration(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    60.0 * s * (1.0 - s) * (1.0 - 2.0 * s)
}

/// Both closed-form solutions for a planar two-link arm, positive elbow first.
/// `None` when the target is out of reach.
pub fn two_link_ik(l1: f64, l2: f64, target: [f64; 2]) -> Option<[[f64; 2]; 2]> {
    let r2 = target[0] * target[0] + target[1] * target[1];
    let mut c2 = (r2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2);
    if !(-1.0 - 1e-12..=1.0 + 1e-12).contains(&c2) {
        return None;
    }
    c2 = c2.clamp(-1.0, 1.0);
    let t2 = c2.acos();
    let sol = |t2: f64| {
        let t1 = target[1].atan2(target[0]) - (l2 * t2.sin()).atan2(l1 + l2 * t2.cos());
        [t1, t2]
    };
    Some([sol(t2), sol(-t2)])
}

/// Link lengths when `chain` is a two-joint arm rotating about parallel z
/// axes and laid out along +x at zero configuration.
pub fn planar_two_link(chain: &KinematicChain<f64>) -> Option<(f64, f64)> {
    if chain.dof() != 2 {
        return None;
    }
    for k in 0..2 {
        let j = chain.movable_joint(k);
        if j.kind != JointKind::Revolute || j.axis != [0.0, 0.0, 1.0] {
            return None;
        }
    }
    let (poses, _) = forward_kinematics_with_jacobian(chain, &[0.0, 0.0]).ok()?;
    let frames = crate::kinematics::forward_frames(chain, &[0.0, 0.0]).ok()?;
    let base = frames.joint_origin[chain.movable[0]].position;
    let elbow = frames.joint_origin[chain.movable[1]].position;
    let tip = poses[1].position;
    let flat = [base, elbow, tip].iter().all(|p| p[1].abs() < 1e-12 && p[2].abs() < 1e-12);
    let untwisted = chain
        .joints
        .iter()
        .all(|j| (j.origin.orientation.dot(crate::kinematics::UnitQuaternion::identity()).abs() - 1.0).abs() < 1e-12);
    if !flat || !untwisted || base[0].abs() > 1e-12 {
        return None;
    }
    let (l1, l2) = (elbow[0], tip[0] - elbow[0]);
    (l1 > 0.0 && l2 > 0.0).then_some((l1, l2))
}

/// Damped least squares on the end-effector position.
pub fn dls_ik(chain: &KinematicChain<f64>, q0: &[f64], target: Vec3<f64>, iters: usize) -> Option<Vec<f64>> {
    let mut q = q0.to_vec();
    let last = chain.dof().checked_sub(1)?;
    let lambda2 = 1e-4;
    for _ in 0..iters {
        let (poses, jac) = forward_kinematics_with_jacobian(chain, &q).ok()?;
        let p = poses[last].position;
        let e = [target[0] - p[0], target[1] - p[1], target[2] - p[2]];
        if e.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-10 {
            return Some(q);
        }
        // J is 3 x n; solve (J Jᵀ + λ²I) y = e, then dq = Jᵀ y
        let n = q.len();
        let mut a = [[0.0; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                a[r][c] = (0..n).map(|k| jac[last][k][r] * jac[last][k][c]).sum::<f64>() + if r == c { lambda2 } else { 0.0 };
            }
        }
        let y = solve3(a, e)?;
        for k in 0..n {
            q[k] += (0..3).map(|r| jac[last][k][r] * y[r]).sum::<f64>();
        }
    }
    None
}

fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let det = |m: [[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(a);
    if d.abs() < 1e-300 {
        return None;
    }
    let mut x = [0.0; 3];
    for (i, xi) in x.iter_mut().enumerate() {
        let mut m = a;
        for r in 0..3 {
            m[r][i] = b[r];
        }
        *xi = det(m) / d;
    }
    Some(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReachConfig {
    pub episodes: usize,
    pub seed: u64,
    pub control_period_ns: u64,
    /// Joint speed limit in rad/s; expert motions peak at 80% of it.
    pub vmax: f64,
    /// Start fully extended and emit both elbow branches with equal odds.
    pub bimodal: bool,
    pub min_frames: usize,
    pub max_frames: usize,
    pub annotate: bool,
}

impl Default for ReachConfig {
    fn default() -> Self {
        Self {
            episodes: 100,
            seed: 0,
            control_period_ns: 20_000_000,
            vmax: 2.5,
            bimodal: false,
            min_frames: 64,
            max_frames: 128,
            annotate: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    ElbowPositive,
    ElbowNegative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReachParams {
    pub target: [f64; 3],
    pub start: Vec<f64>,
    pub goal: Vec<f64>,
    pub duration_steps: usize,
    #[serde(default)]
    pub branch: Option<Branch>,
}

/// Start state, target and goal joints for one reach episode.
#[derive(Debug, Clone, PartialEq)]
pub struct ReachProblem {
    pub start: Vec<f64>,
    pub goal: Vec<f64>,
    pub target: [f64; 3],
    pub branch: Option<Branch>,
}

fn within_limits(chain: &KinematicChain<f64>, q: &[f64]) -> bool {
    chain.movable.iter().zip(q).all(|(&j, v)| match chain.joints[j].limits {
        Some([lo, hi]) => *v >= lo && *v <= hi,
        None => true,
    })
}

fn wrap_near(angle: f64, reference: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    angle + ((reference - angle) / tau).round() * tau
}

/// Draws a reach problem; retries internally and fails after 100 attempts.
pub fn sample_reach_problem<R: Rng + ?Sized>(
    chain: &KinematicChain<f64>,
    bimodal: bool,
    rng: &mut R,
) -> Result<ReachProblem, EpisodeError> {
    let planar = planar_two_link(chain);
    for _ in 0..MAX_ATTEMPTS {
        if let Some((l1, l2)) = planar {
            let (start, target, branch) = if bimodal {
                let t1: f64 = rng.random_range(-0.3..0.3);
                let r = rng.random_range(0.8..1.4) * (l1 + l2) / 2.0;
                let phi: f64 = t1 + rng.random_range(-0.2..0.2);
                let b = if rng.random_bool(0.5) { Branch::ElbowPositive } else { Branch::ElbowNegative };
                (vec![t1, 0.0], [r * phi.cos(), r * phi.sin()], Some(b))
            } else {
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let start = vec![rng.random_range(-1.0..1.0), sign * rng.random_range(0.4..2.0)];
                let r = rng.random_range(0.3..0.95) * (l1 + l2);
                let phi: f64 = rng.random_range(-1.4..1.4);
                (start, [r * phi.cos(), r * phi.sin()], None)
            };
            let Some(sols) = two_link_ik(l1, l2, target) else { continue };
            let pick = match branch {
                Some(Branch::ElbowPositive) => 0,
                Some(Branch::ElbowNegative) => 1,
                None if start[1] >= 0.0 => 0,
                None => 1,
            };
            let goal = vec![wrap_near(sols[pick][0], start[0]), sols[pick][1]];
            if !within_limits(chain, &start) || !within_limits(chain, &goal) {
                continue;
            }
            return Ok(ReachProblem {
                start,
                goal,
                target: [target[0], target[1], 0.0],
                branch,
            });
        }
        // general serial chain: random start, target from a random nearby configuration
        let start: Vec<f64> = chain
            .movable
            .iter()
            .map(|&j| match chain.joints[j].limits {
                Some([lo, hi]) => rng.random_range(lo..=hi) * 0.8,
                None => rng.random_range(-1.0..1.0),
            })
            .collect();
        let probe: Vec<f64> = start.iter().map(|q| q + rng.random_range(-0.8..0.8)).collect();
        let Ok(poses) = forward_kinematics(chain, &probe) else { continue };
        let Some(last) = poses.last() else { continue };
        let target = last.position;
        let Some(goal) = dls_ik(chain, &start, target, 200) else { continue };
        if within_limits(chain, &goal) {
            return Ok(ReachProblem {
                start,
                goal,
                target,
                branch: None,
            });
        }
    }
    Err(EpisodeError::UnreachableTarget(MAX_ATTEMPTS))
}

/// Expert trajectory duration in control steps so the peak speed stays at 80%
/// of `vmax`, clamped to `[30, 100]`.
pub fn duration_steps(start: &[f64], goal: &[f64], vmax: f64, period_s: f64) -> usize {
    let dq = start.iter().zip(goal).map(|(a, b)| (b - a).abs()).fold(0.0, f64::max);
    ((1.875 * dq / (0.8 * vmax * period_s)).ceil() as usize).clamp(30, 100)
}

/// Joint positions `q_k = start + (goal − start) · min_jerk(k / duration)`.
pub fn min_jerk_trajectory(start: &[f64], goal: &[f64], duration: usize, frames: usize) -> Vec<Vec<f64>> {
    (0..frames)
        .map(|k| {
            let s = min_jerk(k as f64 / duration as f64);
            if k >= duration {
                return goal.to_vec();
            }
            start.iter().zip(goal).map(|(a, b)| a + (b - a) * s).collect()
        })
        .collect()
}

pub fn reach_episode(
    chain: &KinematicChain<f64>,
    problem: &ReachProblem,
    cfg: &ReachConfig,
    cameras: &[CameraModel<f64>],
) -> Result<Episode, EpisodeError> {
    let period_s = cfg.control_period_ns as f64 * 1e-9;
    let dur = duration_steps(&problem.start, &problem.goal, cfg.vmax, period_s);
    let frames = (dur + 24).clamp(cfg.min_frames, cfg.max_frames.max(cfg.min_frames));
    let traj = min_jerk_trajectory(&problem.start, &problem.goal, dur, frames);
    let mut header = EpisodeHeader::new(&chain.name, chain.dof(), &chain.structure_hash(), cfg.control_period_ns, REACH_TASK);
    header.cameras = cameras.to_vec();
    header.task_params = serde_json::to_value(ReachParams {
        target: problem.target,
        start: problem.start.clone(),
        goal: problem.goal.clone(),
        duration_steps: dur,
        branch: problem.branch,
    })
    .expect("plain data");
    let instruction = format!(
        "reach the point ({:.3}, {:.3}, {:.3})",
        problem.target[0], problem.target[1], problem.target[2]
    );
    let mut out = Vec::with_capacity(frames);
    for (k, q) in traj.into_iter().enumerate() {
        let annotations = if cameras.is_empty() {
            None
        } else {
            Some(synthesize_annotations(chain, cameras, &q).map_err(|e| EpisodeError::Invalid(e.to_string()))?)
        };
        out.push(Frame {
            timestamp_ns: (k as u64 * cfg.control_period_ns) as i64,
            q,
            annotations,
            instruction: (k == 0).then(|| instruction.clone()),
        });
    }
    Ok(Episode { header, frames: out })
}

/// Generates `cfg.episodes` episodes deterministically from `cfg.seed`.
pub fn generate_reach_episodes(chain: &KinematicChain<f64>, cfg: &ReachConfig) -> Result<Vec<Episode>, EpisodeError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let cameras = if cfg.annotate { vec![overhead_camera("overhead")] } else { Vec::new() };
    (0..cfg.episodes)
        .map(|_| {
            let p = sample_reach_problem(chain, cfg.bimodal, &mut rng)?;
            reach_episode(chain, &p, cfg, &cameras)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub task: String,
    pub embodiment: String,
    pub chain_hash: String,
    pub config: ReachConfig,
    pub files: Vec<String>,
}

/// Writes `episode_NNNNN.hbe` files and `manifest.json` into `dir`.
pub fn generate_reach_dataset(chain: &KinematicChain<f64>, cfg: &ReachConfig, dir: &Path) -> Result<DatasetManifest, EpisodeError> {
    std::fs::create_dir_all(dir)?;
    let episodes = generate_reach_episodes(chain, cfg)?;
    let mut files = Vec::with_capacity(episodes.len());
    for (i, e) in episodes.iter().enumerate() {
        let name = format!("episode_{i:05}.hbe");
        write_episode(&dir.join(&name), e)?;
        files.push(name);
    }
    let manifest = DatasetManifest {
        task: REACH_TASK.to_string(),
        embodiment: chain.name.clone(),
        chain_hash: chain.structure_hash(),
        config: cfg.clone(),
        files,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("plain data");
    std::fs::write(dir.join("manifest.json"), text + "\n")?;
    Ok(manifest)
}

pub fn load_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<Episode>), EpisodeError> {
    let text = std::fs::read_to_string(dir.join("manifest.json"))?;
    let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| EpisodeError::MalformedHeader(e.to_string()))?;
    let episodes = manifest
        .files
        .iter()
        .map(|f| read_episode(&dir.join(f)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((manifest, episodes))
}

pub fn reach_params(episode: &Episode) -> Result<ReachParams, EpisodeError> {
    serde_json::from_value(episode.header.task_params.clone()).map_err(|e| EpisodeError::MalformedHeader(e.to_string()))
}

/// Observation features: joint vector followed by the target position.
pub fn reach_observation(q: &[f64], target: &[f64; 3]) -> Vec<f64> {
    q.iter().chain(target.iter()).copied().collect()
}

/// Episodes with cached forward kinematics, ready to cut training chunks from.
pub struct ReachDataset {
    pub horizon: usize,
    pub episodes: Vec<CachedEpisode>,
}

pub struct CachedEpisode {
    pub states: Vec<RobotState<f64>>,
    pub params: ReachParams,
}

impl ReachDataset {
    pub fn new(chain: &KinematicChain<f64>, episodes: &[Episode], horizon: usize) -> Result<Self, EpisodeError> {
        let episodes = episodes
            .iter()
            .map(|e| {
                let states = e
                    .frames
                    .iter()
                    .map(|f| RobotState::from_q(chain, f.q.clone(), f.timestamp_ns))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|err| EpisodeError::Invalid(err.to_string()))?;
                Ok(CachedEpisode {
                    states,
                    params: reach_params(e)?,
                })
            })
            .collect::<Result<Vec<_>, EpisodeError>>()?;
        Ok(Self { horizon, episodes })
    }

    pub fn n_frames(&self) -> usize {
        self.episodes.iter().map(|e| e.states.len()).sum()
    }

    /// Chunk row `t` for frame `k` is the delta to frame `min(k + 1 + t, last)`.
    pub fn sample_at(&self, episode: usize, frame: usize) -> TrainSample<f64> {
        let e = &self.episodes[episode];
        let current = e.states[frame].clone();
        let last = e.states.len() - 1;
        let width = current.n_joints() * ACTION_WIDTH;
        let mut gt = Array2::zeros((self.horizon, width));
        for t in 0..self.horizon {
            let target = &e.states[(frame + 1 + t).min(last)];
            let a = relative_action(&current, target, ActionSpace::default()).expect("same chain");
            for (c, v) in a.to_flat().into_iter().enumerate() {
                gt[[t, c]] = v;
            }
        }
        TrainSample {
            obs: reach_observation(&current.q, &e.params.target),
            gt,
            current,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> TrainSample<f64> {
        let ep = rng.random_range(0..self.episodes.len());
        let frame = rng.random_range(0..self.episodes[ep].states.len());
        self.sample_at(ep, frame)
    }
}
