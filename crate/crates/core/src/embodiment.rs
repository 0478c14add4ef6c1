//! Joint-pose state encoding and the hybrid relative action space.
//!
//! Every joint coordinate contributes one 8-wide row to an action:
//! `[dθ, dx, dy, dz, dqw, dqx, dqy, dqz]`. Deltas are taken against a single
//! reference state and are not normalized.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::kinematics::{forward_kinematics, KinematicChain, KinematicsError, Pose6D, UnitQuaternion};
use crate::scalar::{lit, Scalar};

/// Width of one joint's action row.
pub const ACTION_WIDTH: usize = 8;
/// Width of one joint's encoded state row.
pub const STATE_WIDTH: usize = 8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EmbodimentError {
    #[error("expected {expected} joints, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("joint {joint}: quaternion collapsed to near-zero norm")]
    DegenerateQuaternion { joint: usize },
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
}

/// Proprioceptive state: joint coordinates and the per-joint poses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotState<T> {
    pub q: Vec<T>,
    pub poses: Vec<Pose6D<T>>,
    pub timestamp_ns: i64,
    /// Set when poses were moved directly and `q` no longer matches them.
    #[serde(default)]
    pub q_stale: bool,
}

impl<T: Scalar> RobotState<T> {
    /// State whose poses come from forward kinematics of `q`.
    pub fn from_q(chain: &KinematicChain<T>, q: Vec<T>, timestamp_ns: i64) -> Result<Self, EmbodimentError> {
        let poses = forward_kinematics(chain, &q)?;
        Ok(Self {
            q,
            poses,
            timestamp_ns,
            q_stale: false,
        })
    }

    pub fn n_joints(&self) -> usize {
        self.q.len()
    }
}

/// Encoded state rows `[scalar | x, y, z, qw, qx, qy, qz]`; masked rows carry `-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateEncoding<T> {
    pub rows: Vec<[T; STATE_WIDTH]>,
    pub mask: Vec<bool>,
}

impl<T: Scalar> StateEncoding<T> {
    pub fn flatten(&self) -> Vec<T> {
        self.rows.iter().flat_map(|r| r.iter().copied()).collect()
    }
}

pub fn encode_state<T: Scalar>(state: &RobotState<T>, mask: &[bool]) -> Result<StateEncoding<T>, EmbodimentError> {
    let n = state.n_joints();
    if mask.len() != n || state.poses.len() != n {
        return Err(EmbodimentError::DimensionMismatch {
            expected: n,
            got: if mask.len() != n { mask.len() } else { state.poses.len() },
        });
    }
    let rows = (0..n)
        .map(|i| {
            let p = state.poses[i].to_array();
            let scalar = if mask[i] { -T::one() } else { state.q[i] };
            [scalar, p[0], p[1], p[2], p[3], p[4], p[5], p[6]]
        })
        .collect();
    Ok(StateEncoding {
        rows,
        mask: mask.to_vec(),
    })
}

/// How the quaternion part of a delta is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuatDelta {
    /// Componentwise difference after hemisphere alignment.
    #[default]
    Componentwise,
    /// Relative rotation `target * current^-1`, stored minus identity so that
    /// a zero row is the identity rotation.
    RelativeRotation,
}

/// Frame in which position deltas are expressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaFrame {
    #[default]
    Base,
    /// The current joint pose's frame.
    Local,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ActionSpace {
    #[serde(default)]
    pub quat_delta: QuatDelta,
    #[serde(default)]
    pub frame: DeltaFrame,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlMode {
    JointSpace,
    EeSpace,
}

/// One hybrid action: one 8-wide row per joint.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridAction<T> {
    pub joints: Vec<[T; ACTION_WIDTH]>,
}

impl<T: Scalar> HybridAction<T> {
    pub fn zeros(n_joints: usize) -> Self {
        Self {
            joints: vec![[T::zero(); ACTION_WIDTH]; n_joints],
        }
    }

    pub fn from_flat(row: ArrayView1<T>) -> Self {
        let joints = row
            .as_slice()
            .map(|s| s.to_vec())
            .unwrap_or_else(|| row.to_vec())
            .chunks_exact(ACTION_WIDTH)
            .map(|c| {
                let mut a = [T::zero(); ACTION_WIDTH];
                a.copy_from_slice(c);
                a
            })
            .collect();
        Self { joints }
    }

    pub fn to_flat(&self) -> Vec<T> {
        self.joints.iter().flat_map(|r| r.iter().copied()).collect()
    }

    pub fn joint_deltas(&self) -> Vec<T> {
        self.joints.iter().map(|r| r[0]).collect()
    }
}

fn check_same<T: Scalar>(a: &RobotState<T>, b: &RobotState<T>) -> Result<(), EmbodimentError> {
    let n = a.n_joints();
    for got in [b.n_joints(), a.poses.len(), b.poses.len()] {
        if got != n {
            return Err(EmbodimentError::DimensionMismatch { expected: n, got });
        }
    }
    Ok(())
}

/// Delta that carries `current` to `target`.
pub fn relative_action<T: Scalar>(
    current: &RobotState<T>,
    target: &RobotState<T>,
    space: ActionSpace,
) -> Result<HybridAction<T>, EmbodimentError> {
    check_same(current, target)?;
    let joints = (0..current.n_joints())
        .map(|i| {
            let c = &current.poses[i];
            let t = &target.poses[i];
            let mut dp = [
                t.position[0] - c.position[0],
                t.position[1] - c.position[1],
                t.position[2] - c.position[2],
            ];
            if space.frame == DeltaFrame::Local {
                dp = c.orientation.conjugate().rotate(dp);
            }
            let dq = match space.quat_delta {
                QuatDelta::Componentwise => {
                    let ct = c.orientation;
                    let tt = t.orientation.aligned_to(ct);
                    [tt.w - ct.w, tt.x - ct.x, tt.y - ct.y, tt.z - ct.z]
                }
                QuatDelta::RelativeRotation => {
                    let rel = t.orientation.mul(c.orientation.conjugate()).canonical();
                    [rel.w - T::one(), rel.x, rel.y, rel.z]
                }
            };
            [
                target.q[i] - current.q[i],
                dp[0],
                dp[1],
                dp[2],
                dq[0],
                dq[1],
                dq[2],
                dq[3],
            ]
        })
        .collect();
    Ok(HybridAction { joints })
}

/// Applies one action to `current`.
///
/// Joint space adds `dθ` and recomputes poses by forward kinematics. End-effector
/// space moves the poses directly and leaves `q` untouched (marked stale).
pub fn apply_action<T: Scalar>(
    chain: &KinematicChain<T>,
    current: &RobotState<T>,
    action: &HybridAction<T>,
    mode: ControlMode,
    space: ActionSpace,
) -> Result<RobotState<T>, EmbodimentError> {
    let n = current.n_joints();
    if action.joints.len() != n {
        return Err(EmbodimentError::DimensionMismatch {
            expected: n,
            got: action.joints.len(),
        });
    }
    match mode {
        ControlMode::JointSpace => {
            let q: Vec<T> = current
                .q
                .iter()
                .zip(&action.joints)
                .map(|(&q, a)| q + a[0])
                .collect();
            let mut next = RobotState::from_q(chain, q, current.timestamp_ns)?;
            if action.joints.iter().all(|a| a[0] == T::zero()) && !current.q_stale {
                // an all-zero joint delta leaves the state untouched
                next.poses = current.poses.clone();
            }
            Ok(next)
        }
        ControlMode::EeSpace => {
            let mut poses = Vec::with_capacity(n);
            for (i, (pose, a)) in current.poses.iter().zip(&action.joints).enumerate() {
                let mut dp = [a[1], a[2], a[3]];
                if space.frame == DeltaFrame::Local {
                    dp = pose.orientation.rotate(dp);
                }
                let position = [
                    pose.position[0] + dp[0],
                    pose.position[1] + dp[1],
                    pose.position[2] + dp[2],
                ];
                let q = pose.orientation;
                let orientation = match space.quat_delta {
                    QuatDelta::Componentwise => {
                        if a[4..].iter().all(|v| *v == T::zero()) {
                            q
                        } else {
                            UnitQuaternion::try_new_normalize(
                                q.w + a[4],
                                q.x + a[5],
                                q.y + a[6],
                                q.z + a[7],
                                lit(1e-6),
                            )
                            .ok_or(EmbodimentError::DegenerateQuaternion { joint: i })?
                        }
                    }
                    QuatDelta::RelativeRotation => {
                        if a[4..].iter().all(|v| *v == T::zero()) {
                            q
                        } else {
                            let rel = UnitQuaternion::try_new_normalize(
                                T::one() + a[4],
                                a[5],
                                a[6],
                                a[7],
                                lit(1e-6),
                            )
                            .ok_or(EmbodimentError::DegenerateQuaternion { joint: i })?;
                            rel.mul(q)
                        }
                    }
                };
                poses.push(Pose6D::new(position, orientation));
            }
            Ok(RobotState {
                q: current.q.clone(),
                poses,
                timestamp_ns: current.timestamp_ns,
                q_stale: true,
            })
        }
    }
}

/// A horizon of hybrid actions sharing one reference state.
///
/// `deltas` has shape `(H, N_j * 8)`; row `t` is the action for control tick `t`
/// after the reference observation.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionChunk<T> {
    pub deltas: Array2<T>,
    pub reference: RobotState<T>,
}

impl<T: Scalar> ActionChunk<T> {
    pub fn new(deltas: Array2<T>, reference: RobotState<T>) -> Result<Self, EmbodimentError> {
        let expected = reference.n_joints() * ACTION_WIDTH;
        if deltas.ncols() != expected {
            return Err(EmbodimentError::DimensionMismatch {
                expected,
                got: deltas.ncols(),
            });
        }
        Ok(Self { deltas, reference })
    }

    pub fn from_actions(reference: RobotState<T>, actions: &[HybridAction<T>]) -> Result<Self, EmbodimentError> {
        let width = reference.n_joints() * ACTION_WIDTH;
        let mut deltas = Array2::zeros((actions.len(), width));
        for (t, a) in actions.iter().enumerate() {
            let flat = a.to_flat();
            if flat.len() != width {
                return Err(EmbodimentError::DimensionMismatch {
                    expected: width,
                    got: flat.len(),
                });
            }
            deltas.row_mut(t).assign(&ArrayView1::from(&flat[..]));
        }
        Ok(Self { deltas, reference })
    }

    pub fn horizon(&self) -> usize {
        self.deltas.nrows()
    }

    pub fn n_joints(&self) -> usize {
        self.reference.n_joints()
    }

    pub fn action(&self, t: usize) -> HybridAction<T> {
        HybridAction::from_flat(self.deltas.row(t))
    }

    /// Absolute joint command for row `t`.
    pub fn joint_command(&self, t: usize) -> Vec<T> {
        (0..self.n_joints())
            .map(|i| self.reference.q[i] + self.deltas[[t, i * ACTION_WIDTH]])
            .collect()
    }
}

/// Absolute states for every row, each applied to the reference independently.
pub fn chunk_to_absolute<T: Scalar>(
    chain: &KinematicChain<T>,
    chunk: &ActionChunk<T>,
    mode: ControlMode,
    space: ActionSpace,
) -> Result<Vec<RobotState<T>>, EmbodimentError> {
    (0..chunk.horizon())
        .map(|t| apply_action(chain, &chunk.reference, &chunk.action(t), mode, space))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::fixtures::{ARM_WITH_GRIPPER_URDF, ONE_JOINT_URDF, PLANAR2_URDF};
    use crate::kinematics::parse_urdf;
    use proptest::prelude::*;

    fn planar() -> KinematicChain<f64> {
        parse_urdf(PLANAR2_URDF).unwrap()
    }

    const SPACE: ActionSpace = ActionSpace {
        quat_delta: QuatDelta::Componentwise,
        frame: DeltaFrame::Base,
    };

    #[test]
    fn masked_row_carries_minus_one() {
        let c: KinematicChain<f64> = parse_urdf(ONE_JOINT_URDF).unwrap();
        let s = RobotState::from_q(&c, vec![0.5], 0).unwrap();
        let e = encode_state(&s, &[true]).unwrap();
        assert_eq!(e.rows[0][0], -1.0);
        assert_eq!(&e.rows[0][1..], &s.poses[0].to_array()[..]);
    }

    #[test]
    fn gripper_openness_passes_through() {
        let c: KinematicChain<f64> = parse_urdf(ARM_WITH_GRIPPER_URDF).unwrap();
        let s = RobotState::from_q(&c, vec![0.2, 0.03], 0).unwrap();
        let e = encode_state(&s, &c.default_mask()).unwrap();
        assert_eq!(e.rows[0][0], -1.0);
        assert_eq!(e.rows[1][0], 0.03);
        assert_eq!(e.mask, vec![true, false]);
    }

    #[test]
    fn planar_rows_hold_fk_poses() {
        let c = planar();
        let s = RobotState::from_q(&c, vec![0.0, 0.0], 0).unwrap();
        let e = encode_state(&s, &[true, true]).unwrap();
        assert_eq!(&e.rows[0][1..4], &[1.0, 0.0, 0.0]);
        assert_eq!(&e.rows[1][1..4], &[2.0, 0.0, 0.0]);
        assert!(encode_state(&s, &[true]).is_err());
    }

    #[test]
    fn relative_action_cases() {
        let c = planar();
        let cur = RobotState::from_q(&c, vec![0.1, 0.4], 0).unwrap();
        let zero = relative_action(&cur, &cur, SPACE).unwrap();
        assert!(zero.joints.iter().all(|r| r.iter().all(|v| *v == 0.0)));

        let tgt = RobotState::from_q(&c, vec![0.3, 0.4], 0).unwrap();
        let a = relative_action(&cur, &tgt, SPACE).unwrap();
        assert!((a.joints[0][0] - 0.2).abs() < 1e-15);
        assert_eq!(a.joints[1][0], 0.0);
        // FK difference of the elbow point: (cos .3 - cos .1, sin .3 - sin .1)
        assert!((a.joints[0][1] - (0.3f64.cos() - 0.1f64.cos())).abs() < 1e-12);
        assert!((a.joints[0][2] - (0.3f64.sin() - 0.1f64.sin())).abs() < 1e-12);
    }

    #[test]
    fn antipodal_quaternion_gives_zero_rotation_delta() {
        let c = planar();
        let cur = RobotState::from_q(&c, vec![0.1, 0.4], 0).unwrap();
        let mut flipped = cur.clone();
        for p in &mut flipped.poses {
            p.orientation = p.orientation.negated();
        }
        let a = relative_action(&cur, &flipped, SPACE).unwrap();
        assert!(a.joints.iter().all(|r| r[4..].iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn apply_cases() {
        let c = planar();
        let cur = RobotState::from_q(&c, vec![0.1, 0.4], 0).unwrap();
        let zero = HybridAction::zeros(2);
        assert_eq!(apply_action(&c, &cur, &zero, ControlMode::JointSpace, SPACE).unwrap(), cur);

        let one: KinematicChain<f64> = parse_urdf(ONE_JOINT_URDF).unwrap();
        let s0 = RobotState::from_q(&one, vec![0.25], 0).unwrap();
        let mut a = HybridAction::zeros(1);
        a.joints[0][0] = 0.1;
        let s1 = apply_action(&one, &s0, &a, ControlMode::JointSpace, SPACE).unwrap();
        assert!((s1.q[0] - 0.35).abs() < 1e-15);
        let expect = UnitQuaternion::<f64>::from_axis_angle([0.0, 0.0, 1.0], 0.35);
        assert!((s1.poses[0].orientation.dot(expect) - 1.0).abs() < 1e-12);

        let mut a = HybridAction::zeros(2);
        let q = cur.poses[1].orientation.to_array();
        for k in 0..4 {
            a.joints[1][4 + k] = -q[k];
        }
        assert_eq!(
            apply_action(&c, &cur, &a, ControlMode::EeSpace, SPACE),
            Err(EmbodimentError::DegenerateQuaternion { joint: 1 })
        );
    }

    #[test]
    fn ee_space_moves_poses_only() {
        let c = planar();
        let cur = RobotState::from_q(&c, vec![0.1, 0.4], 0).unwrap();
        let mut a = HybridAction::zeros(2);
        a.joints[1][1] = 0.05;
        let next = apply_action(&c, &cur, &a, ControlMode::EeSpace, SPACE).unwrap();
        assert_eq!(next.q, cur.q);
        assert!(next.q_stale);
        assert!((next.poses[1].position[0] - cur.poses[1].position[0] - 0.05).abs() < 1e-15);
    }

    #[test]
    fn chunk_cases() {
        let c = planar();
        let reference = RobotState::from_q(&c, vec![0.2, -0.3], 0).unwrap();
        let zero = ActionChunk::new(Array2::zeros((4, 16)), reference.clone()).unwrap();
        let abs = chunk_to_absolute(&c, &zero, ControlMode::JointSpace, SPACE).unwrap();
        assert!(abs.iter().all(|s| *s == reference));

        let mut ramp = Array2::zeros((8, 16));
        for t in 0..8 {
            ramp[[t, 0]] = 0.01 * t as f64;
        }
        let chunk = ActionChunk::new(ramp, reference.clone()).unwrap();
        let abs = chunk_to_absolute(&c, &chunk, ControlMode::JointSpace, SPACE).unwrap();
        for (t, s) in abs.iter().enumerate() {
            assert!((s.q[0] - (0.2 + 0.01 * t as f64)).abs() < 1e-15);
            assert_eq!(chunk.joint_command(t)[0], s.q[0]);
        }

        let single = ActionChunk::new(chunk.deltas.slice(ndarray::s![3..4, ..]).to_owned(), reference.clone()).unwrap();
        let via_chunk = chunk_to_absolute(&c, &single, ControlMode::JointSpace, SPACE).unwrap();
        let direct = apply_action(&c, &reference, &chunk.action(3), ControlMode::JointSpace, SPACE).unwrap();
        assert_eq!(via_chunk[0], direct);

        assert!(ActionChunk::new(Array2::<f64>::zeros((4, 15)), reference).is_err());
    }

    #[test]
    fn relative_rotation_variant_round_trips() {
        let c = planar();
        let space = ActionSpace {
            quat_delta: QuatDelta::RelativeRotation,
            frame: DeltaFrame::Local,
        };
        let cur = RobotState::from_q(&c, vec![0.1, 0.4], 0).unwrap();
        let tgt = RobotState::from_q(&c, vec![-0.7, 1.1], 0).unwrap();
        let a = relative_action(&cur, &tgt, space).unwrap();
        let moved = apply_action(&c, &cur, &a, ControlMode::EeSpace, space).unwrap();
        for i in 0..2 {
            for k in 0..3 {
                assert!((moved.poses[i].position[k] - tgt.poses[i].position[k]).abs() < 1e-12);
            }
            assert!((moved.poses[i].orientation.dot(tgt.poses[i].orientation).abs() - 1.0).abs() < 1e-12);
        }
        let zero = relative_action(&cur, &cur, space).unwrap();
        assert!(zero.joints.iter().all(|r| r.iter().all(|v| v.abs() < 1e-15)));
    }

    proptest! {
        #[test]
        fn round_trip(a in -3.0f64..3.0, b in -3.0f64..3.0, c0 in -3.0f64..3.0, d in -3.0f64..3.0) {
            let c = planar();
            let cur = RobotState::from_q(&c, vec![a, b], 0).unwrap();
            let tgt = RobotState::from_q(&c, vec![c0, d], 0).unwrap();
            let act = relative_action(&cur, &tgt, SPACE).unwrap();
            let got = apply_action(&c, &cur, &act, ControlMode::JointSpace, SPACE).unwrap();
            for i in 0..2 {
                prop_assert!((got.q[i] - tgt.q[i]).abs() < 1e-12);
                for k in 0..3 {
                    prop_assert!((got.poses[i].position[k] - tgt.poses[i].position[k]).abs() < 1e-9);
                }
            }
            // ee-space reaches the target poses too
            let got = apply_action(&c, &cur, &act, ControlMode::EeSpace, SPACE).unwrap();
            for i in 0..2 {
                prop_assert!((got.poses[i].orientation.dot(tgt.poses[i].orientation).abs() - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn hemisphere_invariance(a in -3.0f64..3.0, b in -3.0f64..3.0, c0 in -3.0f64..3.0, d in -3.0f64..3.0) {
            let c = planar();
            let cur = RobotState::from_q(&c, vec![a, b], 0).unwrap();
            let tgt = RobotState::from_q(&c, vec![c0, d], 0).unwrap();
            let mut neg = tgt.clone();
            for p in &mut neg.poses { p.orientation = p.orientation.negated(); }
            let x = relative_action(&cur, &tgt, SPACE).unwrap();
            let y = relative_action(&cur, &neg, SPACE).unwrap();
            prop_assert_eq!(x, y);
        }

        #[test]
        fn masking(mask in prop::collection::vec(any::<bool>(), 2), a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let c = planar();
            let s = RobotState::from_q(&c, vec![a, b], 0).unwrap();
            let e = encode_state(&s, &mask).unwrap();
            for i in 0..2 {
                prop_assert_eq!(e.rows[i][0] == -1.0, mask[i] || s.q[i] == -1.0);
                if mask[i] { prop_assert_eq!(e.rows[i][0], -1.0); }
                let q = UnitQuaternion { w: e.rows[i][4], x: e.rows[i][5], y: e.rows[i][6], z: e.rows[i][7] };
                prop_assert!((q.norm() - 1.0).abs() < 1e-6);
            }
        }
    }
}
