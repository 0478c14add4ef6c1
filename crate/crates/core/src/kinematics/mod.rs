//! Pose algebra, URDF-subset parsing, forward kinematics and joint adjacency.

mod chain;
pub mod fixtures;
mod fk;
mod pose;
mod urdf;

pub use chain::{ChainSummary, Joint, JointKind, JointSummary, KinematicChain, Link};
pub use fk::{
    end_effector_position, forward_frames, forward_kinematics, forward_kinematics_with_jacobian,
    joint_graph_adjacency, FkFrames, PoseDerivative,
};
pub use pose::{
    add3, compose_pose, cross3, dot3, invert_pose, norm3, scale3, sub3, Pose6D, UnitQuaternion,
    Vec3,
};
pub use urdf::{parse_urdf, parse_urdf_with, to_urdf, UrdfOptions};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KinematicsError {
    #[error("malformed URDF: {0}")]
    MalformedXml(String),
    #[error("kinematic cycle through joint '{joint}'")]
    CycleDetected { joint: String },
    #[error("multiple root links: {roots:?}")]
    MultipleRoots { roots: Vec<String> },
    #[error("link '{link}' is the child of more than one joint")]
    MultipleParents { link: String },
    #[error("joint '{joint}' references undefined link '{link}'")]
    MissingLink { joint: String, link: String },
    #[error("duplicate name '{0}'")]
    DuplicateName(String),
    #[error("joint '{joint}' has a zero or non-unit axis")]
    InvalidAxis { joint: String },
    #[error("chain has no links")]
    Empty,
    #[error("expected {expected} joint values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[cfg(test)]
mod tests;
