use super::chain::{JointKind, KinematicChain};
use super::pose::{cross3, sub3, Pose6D, UnitQuaternion, Vec3};
use super::KinematicsError;
use crate::scalar::{lit, Scalar};

/// World frames produced by one forward pass.
#[derive(Debug, Clone)]
pub struct FkFrames<T> {
    /// Joint frame before the joint's own motion, per joint in chain order.
    pub joint_origin: Vec<Pose6D<T>>,
    /// Link frames, indexed like `chain.links`.
    pub link: Vec<Pose6D<T>>,
}

/// Derivative of a pose `[x, y, z, qw, qx, qy, qz]` with respect to one coordinate.
pub type PoseDerivative<T> = [T; 7];

fn check_len<T: Scalar>(chain: &KinematicChain<T>, q: &[T]) -> Result<(), KinematicsError> {
    if q.len() != chain.dof() {
        return Err(KinematicsError::DimensionMismatch {
            expected: chain.dof(),
            got: q.len(),
        });
    }
    Ok(())
}

/// World pose of every joint frame and link frame.
pub fn forward_frames<T: Scalar>(
    chain: &KinematicChain<T>,
    q: &[T],
) -> Result<FkFrames<T>, KinematicsError> {
    check_len(chain, q)?;
    let mut link = vec![Pose6D::identity(); chain.links.len()];
    let mut joint_origin = Vec::with_capacity(chain.joints.len());
    let mut k = 0;
    for joint in &chain.joints {
        let origin = link[joint.parent].compose(&joint.origin);
        let motion = match joint.kind {
            JointKind::Fixed => Pose6D::identity(),
            kind => {
                let v = q[k];
                if let Some([lo, hi]) = joint.limits {
                    if v < lo - lit(1e-9) || v > hi + lit(1e-9) {
                        log::warn!("joint '{}' at {} outside [{}, {}]", joint.name, v, lo, hi);
                    }
                }
                k += 1;
                if kind == JointKind::Revolute {
                    Pose6D::new([T::zero(); 3], UnitQuaternion::from_axis_angle(joint.axis, v))
                } else {
                    Pose6D::from_translation(joint.axis.map(|a| a * v))
                }
            }
        };
        link[joint.child] = origin.compose(&motion);
        joint_origin.push(origin);
    }
    Ok(FkFrames { joint_origin, link })
}

impl<T: Scalar> FkFrames<T> {
    /// Frame at the distal end of movable joint `k`'s child link: the origin of
    /// its single outgoing joint when there is exactly one, otherwise the link frame.
    pub fn distal(&self, chain: &KinematicChain<T>, k: usize) -> Pose6D<T> {
        let child = chain.movable_joint(k).child;
        let mut out = chain.outgoing(child);
        match (out.next(), out.next()) {
            (Some(j), None) => self.joint_origin[j],
            _ => self.link[child],
        }
    }
}

/// One pose per joint coordinate, in the base frame.
///
/// Pose `k` is the distal frame of coordinate `k`'s child link (see
/// [`FkFrames::distal`]); for a serial arm with a tool frame the last pose is
/// the end effector.
pub fn forward_kinematics<T: Scalar>(
    chain: &KinematicChain<T>,
    q: &[T],
) -> Result<Vec<Pose6D<T>>, KinematicsError> {
    let frames = forward_frames(chain, q)?;
    Ok((0..chain.dof()).map(|k| frames.distal(chain, k)).collect())
}

/// Forward kinematics plus `jac[i][k] = d pose_i / d q_k`.
pub fn forward_kinematics_with_jacobian<T: Scalar>(
    chain: &KinematicChain<T>,
    q: &[T],
) -> Result<(Vec<Pose6D<T>>, Vec<Vec<PoseDerivative<T>>>), KinematicsError> {
    let frames = forward_frames(chain, q)?;
    let n = chain.dof();
    let poses: Vec<Pose6D<T>> = (0..n).map(|k| frames.distal(chain, k)).collect();

    // coordinate index of each joint
    let mut coord = vec![None; chain.joints.len()];
    for (k, &j) in chain.movable.iter().enumerate() {
        coord[j] = Some(k);
    }
    let half = lit::<T>(0.5);
    let mut jac = vec![vec![[T::zero(); 7]; n]; n];
    for (i, pose) in poses.iter().enumerate() {
        // walk from coordinate i's joint up to the root
        let mut cursor = Some(chain.movable[i]);
        while let Some(j) = cursor {
            let joint = &chain.joints[j];
            if let Some(k) = coord[j] {
                let frame = frames.joint_origin[j];
                let axis: Vec3<T> = frame.orientation.rotate(joint.axis);
                let d = &mut jac[i][k];
                match joint.kind {
                    JointKind::Revolute => {
                        let dp = cross3(axis, sub3(pose.position, frame.position));
                        let w = UnitQuaternion {
                            w: T::zero(),
                            x: axis[0],
                            y: axis[1],
                            z: axis[2],
                        };
                        let dq = w.mul_raw(pose.orientation);
                        *d = [
                            dp[0],
                            dp[1],
                            dp[2],
                            dq.w * half,
                            dq.x * half,
                            dq.y * half,
                            dq.z * half,
                        ];
                    }
                    JointKind::Prismatic => {
                        d[0] = axis[0];
                        d[1] = axis[1];
                        d[2] = axis[2];
                    }
                    JointKind::Fixed => {}
                }
            }
            cursor = chain.parent_joint(joint.parent);
        }
    }
    Ok((poses, jac))
}

/// Symmetric adjacency over joint coordinates: two coordinates are adjacent
/// when their joints touch a common rigid body. Links joined by fixed joints
/// count as one body.
pub fn joint_graph_adjacency<T: Scalar>(chain: &KinematicChain<T>) -> Vec<Vec<bool>> {
    let mut body: Vec<usize> = (0..chain.links.len()).collect();
    fn find(body: &mut [usize], mut x: usize) -> usize {
        while body[x] != x {
            body[x] = body[body[x]];
            x = body[x];
        }
        x
    }
    for j in chain.joints.iter().filter(|j| j.kind == JointKind::Fixed) {
        let (a, b) = (find(&mut body, j.parent), find(&mut body, j.child));
        body[a] = b;
    }
    let ends: Vec<[usize; 2]> = chain
        .movable
        .iter()
        .map(|&j| {
            let joint = &chain.joints[j];
            [find(&mut body, joint.parent), find(&mut body, joint.child)]
        })
        .collect();
    let n = ends.len();
    let mut adj = vec![vec![false; n]; n];
    for i in 0..n {
        for k in 0..n {
            adj[i][k] = i == k || ends[i].iter().any(|b| ends[k].contains(b));
        }
    }
    adj
}

/// Position of the last coordinate's distal frame.
pub fn end_effector_position<T: Scalar>(
    chain: &KinematicChain<T>,
    q: &[T],
) -> Result<Vec3<T>, KinematicsError> {
    let poses = forward_kinematics(chain, q)?;
    Ok(poses
        .last()
        .map(|p| p.position)
        .unwrap_or([T::zero(); 3]))
}
