//! Action-chunk streaming runtime: kinematics, guided diffusion sampling,
//! training, episode tooling and a simulated closed-loop benchmark.

pub mod diffusion;
pub mod embodiment;
pub mod episodes;
pub mod kinematics;
pub mod projection;
pub mod runtime;
pub mod scalar;
pub mod simplant;
pub mod simplertc;
pub mod training;

pub use scalar::Scalar;

/// Double-precision aliases for the generic core types.
pub type KinematicChain = kinematics::KinematicChain<f64>;
pub type UnitQuaternion = kinematics::UnitQuaternion<f64>;
pub type Pose6D = kinematics::Pose6D<f64>;
pub type HybridAction = embodiment::HybridAction<f64>;
pub type ActionChunk = embodiment::ActionChunk<f64>;
pub type NoiseSchedule = diffusion::NoiseSchedule<f64>;
pub type CameraModel = projection::CameraModel<f64>;
pub type ToyDenoiser = training::ToyDenoiser<f64>;
