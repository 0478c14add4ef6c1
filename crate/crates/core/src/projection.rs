//! Pinhole projection of joint poses and the reprojection consistency check.

use serde::{Deserialize, Serialize};

use crate::kinematics::{forward_kinematics, KinematicChain, KinematicsError, Pose6D, Vec3};
use crate::scalar::{lit, Scalar};

/// Default mean pixel error above which an episode fails.
pub const DEFAULT_THRESHOLD_PX: f64 = 8.0;
/// Fraction of projected points allowed to fall outside the image.
pub const DEFAULT_MAX_OUTSIDE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProjectionError {
    #[error("point is behind the camera (z = {z})")]
    BehindCamera { z: f64 },
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("{states} states but {annotations} annotated frames")]
    FrameCountMismatch { states: usize, annotations: usize },
    #[error("frame {frame}: expected {expected} cameras x {joints} joints of annotations")]
    AnnotationShape {
        frame: usize,
        expected: usize,
        joints: usize,
    },
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
}

/// Pinhole camera. `extrinsic` maps base-frame points into the camera frame
/// (camera looks along +z, image u to the right along +x, v down along +y).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraModel<T> {
    #[serde(default)]
    pub name: String,
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub width: u32,
    pub height: u32,
    pub extrinsic: Pose6D<T>,
}

impl<T: Scalar> CameraModel<T> {
    pub fn validate(&self) -> Result<(), ProjectionError> {
        if !(self.fx > T::zero() && self.fy > T::zero()) {
            return Err(ProjectionError::InvalidCamera(format!(
                "'{}': focal lengths must be positive",
                self.name
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(ProjectionError::InvalidCamera(format!(
                "'{}': image size must be positive",
                self.name
            )));
        }
        Ok(())
    }

    pub fn contains(&self, uv: [T; 2]) -> bool {
        uv[0] >= T::zero()
            && uv[1] >= T::zero()
            && uv[0] < T::from_u32(self.width).unwrap_or_else(T::max_value)
            && uv[1] < T::from_u32(self.height).unwrap_or_else(T::max_value)
    }

    pub fn cast<U: Scalar>(&self) -> CameraModel<U> {
        CameraModel {
            name: self.name.clone(),
            fx: U::lit(self.fx.as_f64()),
            fy: U::lit(self.fy.as_f64()),
            cx: U::lit(self.cx.as_f64()),
            cy: U::lit(self.cy.as_f64()),
            width: self.width,
            height: self.height,
            extrinsic: self.extrinsic.cast(),
        }
    }
}

pub fn project_point<T: Scalar>(cam: &CameraModel<T>, p: Vec3<T>) -> Result<[T; 2], ProjectionError> {
    let c = cam.extrinsic.transform_point(p);
    if c[2] <= lit(1e-9) {
        return Err(ProjectionError::BehindCamera { z: c[2].as_f64() });
    }
    Ok([cam.fx * c[0] / c[2] + cam.cx, cam.fy * c[1] / c[2] + cam.cy])
}

/// Forward kinematics, then one projection per joint pose.
pub fn project_joint_poses<T: Scalar>(
    cam: &CameraModel<T>,
    chain: &KinematicChain<T>,
    q: &[T],
) -> Result<Vec<Result<[T; 2], ProjectionError>>, ProjectionError> {
    let poses = forward_kinematics(chain, q)?;
    Ok(poses.iter().map(|p| project_point(cam, p.position)).collect())
}

/// Recorded keypoints for one frame, indexed `[camera][joint]`; `None` marks
/// an unlabeled point.
pub type FrameAnnotations<T> = Vec<Vec<Option<[T; 2]>>>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraBreakdown {
    pub camera: String,
    pub mean_error_px: f64,
    pub max_error_px: f64,
    pub points: usize,
    pub outside: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReprojectionReport {
    /// Mean error per frame; `None` when a frame has no comparable point.
    pub frame_mean_px: Vec<Option<f64>>,
    pub mean_error_px: f64,
    pub max_error_px: f64,
    pub cameras: Vec<CameraBreakdown>,
    /// Labeled points whose projection is behind the camera or off the image.
    pub outside_fraction: f64,
    pub threshold_px: f64,
    pub max_outside_fraction: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationConfig {
    pub threshold_px: f64,
    pub max_outside_fraction: f64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            threshold_px: DEFAULT_THRESHOLD_PX,
            max_outside_fraction: DEFAULT_MAX_OUTSIDE,
        }
    }
}

/// Compares projected FK poses with recorded keypoints frame by frame.
///
/// Off-image projections still contribute their pixel error; behind-camera
/// projections count as outside and contribute no error.
pub fn validate_frames<T: Scalar>(
    chain: &KinematicChain<T>,
    cameras: &[CameraModel<T>],
    states: &[Vec<T>],
    annotations: &[FrameAnnotations<T>],
    cfg: ValidationConfig,
) -> Result<ReprojectionReport, ProjectionError> {
    if states.len() != annotations.len() {
        return Err(ProjectionError::FrameCountMismatch {
            states: states.len(),
            annotations: annotations.len(),
        });
    }
    for cam in cameras {
        cam.validate()?;
    }
    let n_j = chain.dof();
    let mut cams: Vec<CameraBreakdown> = cameras
        .iter()
        .map(|c| CameraBreakdown {
            camera: c.name.clone(),
            mean_error_px: 0.0,
            max_error_px: 0.0,
            points: 0,
            outside: 0,
        })
        .collect();
    let mut cam_sum = vec![0.0; cameras.len()];
    let mut cam_count = vec![0usize; cameras.len()];
    let mut frame_mean_px = Vec::with_capacity(states.len());
    let (mut sum, mut count, mut max, mut labeled, mut outside) = (0.0, 0usize, 0.0f64, 0usize, 0usize);

    for (f, (q, ann)) in states.iter().zip(annotations).enumerate() {
        if ann.len() != cameras.len() || ann.iter().any(|a| a.len() != n_j) {
            return Err(ProjectionError::AnnotationShape {
                frame: f,
                expected: cameras.len(),
                joints: n_j,
            });
        }
        let poses = forward_kinematics(chain, q)?;
        let (mut fsum, mut fcount) = (0.0, 0usize);
        for (c, cam) in cameras.iter().enumerate() {
            for (pose, label) in poses.iter().zip(&ann[c]) {
                let Some(label) = label else { continue };
                labeled += 1;
                cams[c].points += 1;
                match project_point(cam, pose.position) {
                    Ok(uv) => {
                        if !cam.contains(uv) {
                            outside += 1;
                            cams[c].outside += 1;
                        }
                        let du = (uv[0] - label[0]).as_f64();
                        let dv = (uv[1] - label[1]).as_f64();
                        let e = du.hypot(dv);
                        fsum += e;
                        fcount += 1;
                        cam_sum[c] += e;
                        cam_count[c] += 1;
                        cams[c].max_error_px = cams[c].max_error_px.max(e);
                        max = max.max(e);
                    }
                    Err(_) => {
                        outside += 1;
                        cams[c].outside += 1;
                    }
                }
            }
        }
        sum += fsum;
        count += fcount;
        frame_mean_px.push((fcount > 0).then(|| fsum / fcount as f64));
    }
    for (c, b) in cams.iter_mut().enumerate() {
        b.mean_error_px = if cam_count[c] > 0 { cam_sum[c] / cam_count[c] as f64 } else { 0.0 };
    }
    let mean = if count > 0 { sum / count as f64 } else { 0.0 };
    let outside_fraction = if labeled > 0 { outside as f64 / labeled as f64 } else { 0.0 };
    let verdict = if mean > cfg.threshold_px || outside_fraction > cfg.max_outside_fraction {
        Verdict::Fail
    } else {
        Verdict::Pass
    };
    Ok(ReprojectionReport {
        frame_mean_px,
        mean_error_px: mean,
        max_error_px: max,
        cameras: cams,
        outside_fraction,
        threshold_px: cfg.threshold_px,
        max_outside_fraction: cfg.max_outside_fraction,
        verdict,
    })
}

/// Checks an episode's recorded keypoints against `cameras`. Frames without
/// annotations contribute no points.
pub fn validate_episode(
    episode: &crate::episodes::Episode,
    chain: &KinematicChain<f64>,
    cameras: &[CameraModel<f64>],
    cfg: ValidationConfig,
) -> Result<ReprojectionReport, ProjectionError> {
    let states = episode.joint_states();
    let annotations: Vec<FrameAnnotations<f64>> = episode
        .frames
        .iter()
        .map(|f| {
            f.annotations
                .clone()
                .unwrap_or_else(|| vec![vec![None; chain.dof()]; cameras.len()])
        })
        .collect();
    validate_frames(chain, cameras, &states, &annotations, cfg)
}

/// Keypoints a perfectly calibrated camera would record for `q`; points behind
/// the camera are left unlabeled.
pub fn synthesize_annotations<T: Scalar>(
    chain: &KinematicChain<T>,
    cameras: &[CameraModel<T>],
    q: &[T],
) -> Result<FrameAnnotations<T>, ProjectionError> {
    let poses = forward_kinematics(chain, q)?;
    Ok(cameras
        .iter()
        .map(|cam| poses.iter().map(|p| project_point(cam, p.position).ok()).collect())
        .collect())
}

/// Camera 1 m above the base plane looking straight down.
pub fn overhead_camera<T: Scalar>(name: &str) -> CameraModel<T> {
    CameraModel {
        name: name.to_string(),
        fx: lit(600.0),
        fy: lit(600.0),
        cx: lit(1280.0),
        cy: lit(1280.0),
        width: 2560,
        height: 2560,
        extrinsic: Pose6D::from_xyz_rpy([T::zero(), T::zero(), T::one()], [lit(std::f64::consts::PI), T::zero(), T::zero()]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::fixtures::{ONE_JOINT_URDF, PLANAR2_URDF};
    use crate::kinematics::{parse_urdf, UnitQuaternion};
    use proptest::prelude::*;

    fn cam(extrinsic: Pose6D<f64>) -> CameraModel<f64> {
        CameraModel {
            name: "c".into(),
            fx: 100.0,
            fy: 100.0,
            cx: 64.0,
            cy: 64.0,
            width: 128,
            height: 128,
            extrinsic,
        }
    }

    #[test]
    fn pinhole_examples() {
        let c = cam(Pose6D::identity());
        assert_eq!(project_point(&c, [0.0, 0.0, 1.0]).unwrap(), [64.0, 64.0]);
        let uv = project_point(&c, [0.1, 0.0, 1.0]).unwrap();
        assert!((uv[0] - 74.0).abs() < 1e-12 && uv[1] == 64.0);
        assert!(matches!(project_point(&c, [0.0, 0.0, -1.0]), Err(ProjectionError::BehindCamera { .. })));
    }

    #[test]
    fn planar_chain_under_fixture_camera() {
        let chain: KinematicChain<f64> = parse_urdf(PLANAR2_URDF).unwrap();
        // camera 4 m in front of the arm plane
        let c = cam(Pose6D::from_translation([0.0, 0.0, 4.0]));
        let px = project_joint_poses(&c, &chain, &[0.0, 0.0]).unwrap();
        let expect = [[64.0 + 100.0 * 1.0 / 4.0, 64.0], [64.0 + 100.0 * 2.0 / 4.0, 64.0]];
        for (p, e) in px.iter().zip(expect) {
            let p = p.clone().unwrap();
            assert!((p[0] - e[0]).abs() < 1e-12 && (p[1] - e[1]).abs() < 1e-12);
        }

        let away = cam(Pose6D::from_translation([0.0, 0.0, -4.0]));
        assert!(project_joint_poses(&away, &chain, &[0.0, 0.0]).unwrap().iter().all(|r| r.is_err()));

        // shift so the elbow sits on the optical axis
        let on_axis = cam(Pose6D::from_translation([-1.0, 0.0, 4.0]));
        let px = project_joint_poses(&on_axis, &chain, &[0.0, 0.0]).unwrap();
        assert_eq!(px[0].clone().unwrap(), [64.0, 64.0]);
    }

    fn reach_fixture() -> (KinematicChain<f64>, Vec<Vec<f64>>) {
        let chain: KinematicChain<f64> = parse_urdf(PLANAR2_URDF).unwrap();
        let states = (0..20).map(|k| vec![0.05 * k as f64, -0.4 + 0.03 * k as f64]).collect();
        (chain, states)
    }

    fn scaled_overhead() -> CameraModel<f64> {
        // the arm spans 2 m, so keep the whole workspace in view at 3 m
        let mut c = overhead_camera::<f64>("top");
        c.extrinsic.position[2] = 3.0;
        c
    }

    #[test]
    fn self_consistent_episode_passes() {
        let (chain, states) = reach_fixture();
        let cams = vec![scaled_overhead()];
        let ann: Vec<_> = states.iter().map(|q| synthesize_annotations(&chain, &cams, q).unwrap()).collect();
        let r = validate_frames(&chain, &cams, &states, &ann, ValidationConfig::default()).unwrap();
        assert_eq!(r.mean_error_px, 0.0);
        assert_eq!(r.verdict, Verdict::Pass);
        assert!(validate_frames(&chain, &cams, &states[1..], &ann, ValidationConfig::default()).is_err());
    }

    #[test]
    fn two_centimeter_shift_fails() {
        let one: KinematicChain<f64> = parse_urdf(ONE_JOINT_URDF).unwrap();
        let clean = vec![overhead_camera::<f64>("top")];
        let states: Vec<Vec<f64>> = (0..10).map(|k| vec![0.05 * k as f64]).collect();
        let ann: Vec<_> = states.iter().map(|q| synthesize_annotations(&one, &clean, q).unwrap()).collect();
        let mut bad = clean.clone();
        bad[0].extrinsic.position[0] += 0.02;
        let r = validate_frames(&one, &bad, &states, &ann, ValidationConfig::default()).unwrap();
        assert!((r.mean_error_px - 12.0).abs() < 0.6, "{}", r.mean_error_px);
        assert_eq!(r.verdict, Verdict::Fail);
        let inf = ValidationConfig {
            threshold_px: f64::INFINITY,
            max_outside_fraction: 1.0,
        };
        assert_eq!(validate_frames(&one, &bad, &states, &ann, inf).unwrap().verdict, Verdict::Pass);
    }

    #[test]
    fn outside_fraction_fails() {
        let (chain, states) = reach_fixture();
        let cams = vec![scaled_overhead()];
        let ann: Vec<_> = states.iter().map(|q| synthesize_annotations(&chain, &cams, q).unwrap()).collect();
        let mut narrow = cams.clone();
        narrow[0].width = 1300;
        narrow[0].height = 1300;
        let r = validate_frames(&chain, &narrow, &states, &ann, ValidationConfig::default()).unwrap();
        assert!(r.outside_fraction > 0.2);
        assert_eq!(r.verdict, Verdict::Fail);
    }

    #[test]
    fn monotone_in_perturbation() {
        let (chain, states) = reach_fixture();
        let cams = vec![scaled_overhead()];
        let ann: Vec<_> = states.iter().map(|q| synthesize_annotations(&chain, &cams, q).unwrap()).collect();
        let mut last = -1.0;
        for k in 0..10 {
            let mut c = cams.clone();
            c[0].extrinsic.position[0] += 0.005 * k as f64;
            c[0].extrinsic.position[1] -= 0.003 * k as f64;
            let r = validate_frames(&chain, &c, &states, &ann, ValidationConfig::default()).unwrap();
            assert!(r.mean_error_px >= last);
            last = r.mean_error_px;
        }
    }

    proptest! {
        #[test]
        fn self_consistency(a in -3.0f64..3.0, b in -3.0f64..3.0, yaw in -3.0f64..3.0, h in 2.5f64..6.0, roll in -0.3f64..0.3) {
            let (chain, _) = reach_fixture();
            let mut c = scaled_overhead();
            c.extrinsic = Pose6D::new([0.1, -0.2, h], UnitQuaternion::from_rpy(std::f64::consts::PI + roll, 0.0, yaw));
            let cams = vec![c];
            let states = vec![vec![a, b]];
            let ann = vec![synthesize_annotations(&chain, &cams, &states[0]).unwrap()];
            let r = validate_frames(&chain, &cams, &states, &ann, ValidationConfig::default()).unwrap();
            prop_assert_eq!(r.mean_error_px, 0.0);
        }

        #[test]
        fn scale_check(dx in 0.001f64..0.05, z in 0.5f64..3.0) {
            let one: KinematicChain<f64> = parse_urdf(ONE_JOINT_URDF).unwrap();
            let mut c = overhead_camera::<f64>("top");
            c.extrinsic.position[2] = z;
            let states = vec![vec![0.0]];
            let ann = vec![synthesize_annotations(&one, std::slice::from_ref(&c), &states[0]).unwrap()];
            c.extrinsic.position[0] += dx;
            let r = validate_frames(&one, &[c], &states, &ann, ValidationConfig::default()).unwrap();
            let expect = 600.0 * dx / z;
            prop_assert!((r.mean_error_px - expect).abs() <= 0.05 * expect);
        }
    }
}
