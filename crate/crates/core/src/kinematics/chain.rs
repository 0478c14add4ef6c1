use serde::{Deserialize, Serialize};

use super::pose::{norm3, Pose6D, Vec3};
use super::KinematicsError;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointKind {
    Revolute,
    Prismatic,
    Fixed,
}

impl JointKind {
    pub fn is_movable(self) -> bool {
        !matches!(self, JointKind::Fixed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Joint<T> {
    pub name: String,
    pub kind: JointKind,
    /// Set for joints whose name matches the gripper pattern.
    pub gripper: bool,
    /// Unit axis in the joint frame (ignored for fixed joints).
    pub axis: Vec3<T>,
    /// Joint frame relative to the parent link frame.
    pub origin: Pose6D<T>,
    /// `[lo, hi]` in radians or meters; `None` for unlimited (continuous) joints.
    pub limits: Option<[T; 2]>,
    pub parent: usize,
    pub child: usize,
}

/// A kinematic tree parsed from a URDF subset.
///
/// `joints` is in topological order (depth first, siblings sorted by name).
/// Only movable joints carry a coordinate; `dof()` of them make up `N_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KinematicChain<T> {
    pub name: String,
    pub links: Vec<Link>,
    pub joints: Vec<Joint<T>>,
    pub root: usize,
    /// Joint indices of the movable joints, in coordinate order.
    pub movable: Vec<usize>,
    /// Coordinate indices of the gripper joints.
    pub gripper_indices: Vec<usize>,
    /// Elements that were present in the source but not modeled.
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl<T: Scalar> KinematicChain<T> {
    /// Builds a chain from unordered links and joints, validating the tree shape.
    ///
    /// Joint `parent`/`child` fields index into `links`.
    pub fn from_parts(
        name: impl Into<String>,
        links: Vec<Link>,
        joints: Vec<Joint<T>>,
        warnings: Vec<String>,
    ) -> Result<Self, KinematicsError> {
        let n_links = links.len();
        if n_links == 0 {
            return Err(KinematicsError::Empty);
        }
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); n_links];
        let mut parent_of: Vec<Vec<usize>> = vec![Vec::new(); n_links];
        for (j, joint) in joints.iter().enumerate() {
            children[joint.parent].push(j);
            parent_of[joint.child].push(j);
        }
        // Directed cycle search over link -> link edges.
        let mut color = vec![0u8; n_links];
        for start in 0..n_links {
            if color[start] != 0 {
                continue;
            }
            let mut stack = vec![(start, 0usize)];
            color[start] = 1;
            while let Some(&mut (link, ref mut next)) = stack.last_mut() {
                if *next < children[link].len() {
                    let j = children[link][*next];
                    *next += 1;
                    let c = joints[j].child;
                    match color[c] {
                        0 => {
                            color[c] = 1;
                            stack.push((c, 0));
                        }
                        1 => {
                            return Err(KinematicsError::CycleDetected {
                                joint: joints[j].name.clone(),
                            })
                        }
                        _ => {}
                    }
                } else {
                    color[link] = 2;
                    stack.pop();
                }
            }
        }
        if let Some(l) = parent_of.iter().position(|p| p.len() > 1) {
            return Err(KinematicsError::MultipleParents {
                link: links[l].name.clone(),
            });
        }
        let roots: Vec<usize> = (0..n_links).filter(|&l| parent_of[l].is_empty()).collect();
        if roots.len() > 1 {
            return Err(KinematicsError::MultipleRoots {
                roots: roots.iter().map(|&l| links[l].name.clone()).collect(),
            });
        }
        let root = roots[0];

        for joint in &joints {
            if joint.kind.is_movable() {
                let n = norm3(joint.axis);
                if (n - T::one()).abs() > T::lit(1e-9) {
                    return Err(KinematicsError::InvalidAxis {
                        joint: joint.name.clone(),
                    });
                }
            }
        }

        // Depth-first order, siblings by name.
        let sorted_children = |link: usize| {
            let mut kids = children[link].clone();
            kids.sort_by(|&a, &b| joints[a].name.cmp(&joints[b].name));
            kids
        };
        let mut order = Vec::with_capacity(joints.len());
        let mut stack: Vec<usize> = sorted_children(root).into_iter().rev().collect();
        while let Some(j) = stack.pop() {
            order.push(j);
            stack.extend(sorted_children(joints[j].child).into_iter().rev());
        }
        let joints: Vec<Joint<T>> = order.into_iter().map(|j| joints[j].clone()).collect();
        let movable: Vec<usize> = (0..joints.len())
            .filter(|&j| joints[j].kind.is_movable())
            .collect();
        let gripper_indices = movable
            .iter()
            .enumerate()
            .filter(|(_, &j)| joints[j].gripper)
            .map(|(k, _)| k)
            .collect();
        Ok(Self {
            name: name.into(),
            links,
            joints,
            root,
            movable,
            gripper_indices,
            warnings,
        })
    }

    /// Number of joint coordinates, `N_j`.
    pub fn dof(&self) -> usize {
        self.movable.len()
    }

    pub fn movable_joint(&self, k: usize) -> &Joint<T> {
        &self.joints[self.movable[k]]
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    /// Default state mask: every coordinate masked except grippers.
    pub fn default_mask(&self) -> Vec<bool> {
        (0..self.dof())
            .map(|k| !self.gripper_indices.contains(&k))
            .collect()
    }

    /// Joints leaving `link`, in chain order.
    pub fn outgoing(&self, link: usize) -> impl Iterator<Item = usize> + '_ {
        self.joints
            .iter()
            .enumerate()
            .filter(move |(_, j)| j.parent == link)
            .map(|(i, _)| i)
    }

    /// Index of the joint whose child is `link`, if any.
    pub fn parent_joint(&self, link: usize) -> Option<usize> {
        self.joints.iter().position(|j| j.child == link)
    }

    pub fn cast<U: Scalar>(&self) -> KinematicChain<U> {
        KinematicChain {
            name: self.name.clone(),
            links: self.links.clone(),
            joints: self
                .joints
                .iter()
                .map(|j| Joint {
                    name: j.name.clone(),
                    kind: j.kind,
                    gripper: j.gripper,
                    axis: j.axis.map(|v| U::lit(v.as_f64())),
                    origin: j.origin.cast(),
                    limits: j.limits.map(|l| l.map(|v| U::lit(v.as_f64()))),
                    parent: j.parent,
                    child: j.child,
                })
                .collect(),
            root: self.root,
            movable: self.movable.clone(),
            gripper_indices: self.gripper_indices.clone(),
            warnings: self.warnings.clone(),
        }
    }

    /// Compact JSON-friendly description.
    pub fn summary(&self) -> ChainSummary {
        ChainSummary {
            name: self.name.clone(),
            dof: self.dof(),
            root: self.links[self.root].name.clone(),
            joints: self
                .joints
                .iter()
                .map(|j| JointSummary {
                    name: j.name.clone(),
                    kind: j.kind,
                    gripper: j.gripper,
                    parent: self.links[j.parent].name.clone(),
                    child: self.links[j.child].name.clone(),
                    axis: j.axis.map(|v| v.as_f64()),
                    xyz: j.origin.position.map(|v| v.as_f64()),
                    rpy: j.origin.orientation.to_rpy().map(|v| v.as_f64()),
                    limits: j.limits.map(|l| l.map(|v| v.as_f64())),
                })
                .collect(),
            gripper_indices: self.gripper_indices.clone(),
            warnings: self.warnings.clone(),
        }
    }

    /// Stable hex digest of the chain structure.
    pub fn structure_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let text = super::urdf::to_urdf(self);
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSummary {
    pub name: String,
    pub kind: JointKind,
    pub gripper: bool,
    pub parent: String,
    pub child: String,
    pub axis: [f64; 3],
    pub xyz: [f64; 3],
    pub rpy: [f64; 3],
    pub limits: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub name: String,
    pub dof: usize,
    pub root: String,
    pub joints: Vec<JointSummary>,
    pub gripper_indices: Vec<usize>,
    pub warnings: Vec<String>,
}
