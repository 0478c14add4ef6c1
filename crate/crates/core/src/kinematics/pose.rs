use serde::{Deserialize, Serialize};

use crate::scalar::{lit, Scalar};

pub type Vec3<T> = [T; 3];

#[inline]
pub fn add3<T: Scalar>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub3<T: Scalar>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale3<T: Scalar>(a: Vec3<T>, s: T) -> Vec3<T> {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot3<T: Scalar>(a: Vec3<T>, b: Vec3<T>) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross3<T: Scalar>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm3<T: Scalar>(a: Vec3<T>) -> T {
    dot3(a, a).sqrt()
}

/// Rotation stored as a unit quaternion `(w, x, y, z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitQuaternion<T> {
    pub w: T,
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Scalar> UnitQuaternion<T> {
    pub fn identity() -> Self {
        Self {
            w: T::one(),
            x: T::zero(),
            y: T::zero(),
            z: T::zero(),
        }
    }

    /// Normalizes `(w, x, y, z)`. Returns `None` when the norm is below `min_norm`.
    pub fn try_new_normalize(w: T, x: T, y: T, z: T, min_norm: T) -> Option<Self> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !(n >= min_norm) {
            return None;
        }
        Some(Self {
            w: w / n,
            x: x / n,
            y: y / n,
            z: z / n,
        })
    }

    /// Normalizes `(w, x, y, z)`; a zero quaternion maps to identity.
    pub fn new_normalize(w: T, x: T, y: T, z: T) -> Self {
        Self::try_new_normalize(w, x, y, z, T::min_positive_value()).unwrap_or_else(Self::identity)
    }

    pub fn from_array(q: [T; 4]) -> Self {
        Self::new_normalize(q[0], q[1], q[2], q[3])
    }

    pub fn to_array(self) -> [T; 4] {
        [self.w, self.x, self.y, self.z]
    }

    /// Rotation of `angle` radians about `axis` (normalized internally).
    pub fn from_axis_angle(axis: Vec3<T>, angle: T) -> Self {
        let n = norm3(axis);
        if n <= T::zero() {
            return Self::identity();
        }
        let half = angle * lit(0.5);
        let s = half.sin() / n;
        Self {
            w: half.cos(),
            x: axis[0] * s,
            y: axis[1] * s,
            z: axis[2] * s,
        }
    }

    /// Fixed-axis roll/pitch/yaw (extrinsic X, then Y, then Z), the URDF convention.
    pub fn from_rpy(roll: T, pitch: T, yaw: T) -> Self {
        let h = lit::<T>(0.5);
        let (sr, cr) = (roll * h).sin_cos();
        let (sp, cp) = (pitch * h).sin_cos();
        let (sy, cy) = (yaw * h).sin_cos();
        Self::new_normalize(
            cr * cp * cy + sr * sp * sy,
            sr * cp * cy - cr * sp * sy,
            cr * sp * cy + sr * cp * sy,
            cr * cp * sy - sr * sp * cy,
        )
    }

    /// Inverse of [`from_rpy`](Self::from_rpy).
    pub fn to_rpy(self) -> Vec3<T> {
        let Self { w, x, y, z } = self;
        let two = lit::<T>(2.0);
        let roll = (two * (w * x + y * z)).atan2(T::one() - two * (x * x + y * y));
        let sinp = (two * (w * y - z * x)).max(-T::one()).min(T::one());
        let pitch = sinp.asin();
        let yaw = (two * (w * z + x * y)).atan2(T::one() - two * (y * y + z * z));
        [roll, pitch, yaw]
    }

    pub fn conjugate(self) -> Self {
        Self {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    pub fn dot(self, o: Self) -> T {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm(self) -> T {
        self.dot(self).sqrt()
    }

    /// Hamilton product without renormalization.
    pub fn mul_raw(self, o: Self) -> Self {
        Self {
            w: self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            x: self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            y: self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            z: self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        }
    }

    /// Hamilton product, renormalized.
    pub fn mul(self, o: Self) -> Self {
        let p = self.mul_raw(o);
        Self::new_normalize(p.w, p.x, p.y, p.z)
    }

    pub fn rotate(self, v: Vec3<T>) -> Vec3<T> {
        let u = [self.x, self.y, self.z];
        let two = lit::<T>(2.0);
        let t = scale3(cross3(u, v), two);
        add3(add3(v, scale3(t, self.w)), cross3(u, t))
    }

    /// Same rotation with `w >= 0`.
    pub fn canonical(self) -> Self {
        if self.w < T::zero() {
            self.negated()
        } else {
            self
        }
    }

    pub fn negated(self) -> Self {
        Self {
            w: -self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    /// `self` flipped, if needed, into the hemisphere of `reference`.
    pub fn aligned_to(self, reference: Self) -> Self {
        if self.dot(reference) < T::zero() {
            self.negated()
        } else {
            self
        }
    }

    pub fn cast<U: Scalar>(self) -> UnitQuaternion<U> {
        UnitQuaternion {
            w: U::lit(self.w.as_f64()),
            x: U::lit(self.x.as_f64()),
            y: U::lit(self.y.as_f64()),
            z: U::lit(self.z.as_f64()),
        }
    }
}

/// Rigid transform: position in meters plus orientation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose6D<T> {
    pub position: Vec3<T>,
    pub orientation: UnitQuaternion<T>,
}

impl<T: Scalar> Default for Pose6D<T> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<T: Scalar> Pose6D<T> {
    pub fn identity() -> Self {
        Self {
            position: [T::zero(); 3],
            orientation: UnitQuaternion::identity(),
        }
    }

    pub fn new(position: Vec3<T>, orientation: UnitQuaternion<T>) -> Self {
        Self {
            position,
            orientation,
        }
    }

    pub fn from_translation(position: Vec3<T>) -> Self {
        Self::new(position, UnitQuaternion::identity())
    }

    pub fn from_xyz_rpy(xyz: Vec3<T>, rpy: Vec3<T>) -> Self {
        Self::new(xyz, UnitQuaternion::from_rpy(rpy[0], rpy[1], rpy[2]))
    }

    /// `self` followed by `other` expressed in `self`'s frame.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            position: add3(self.position, self.orientation.rotate(other.position)),
            orientation: self.orientation.mul(other.orientation),
        }
    }

    pub fn inverse(&self) -> Self {
        let inv = self.orientation.conjugate();
        Self {
            position: scale3(inv.rotate(self.position), -T::one()),
            orientation: inv,
        }
    }

    pub fn transform_point(&self, p: Vec3<T>) -> Vec3<T> {
        add3(self.position, self.orientation.rotate(p))
    }

    /// `[x, y, z, qw, qx, qy, qz]`.
    pub fn to_array(&self) -> [T; 7] {
        let q = self.orientation;
        [
            self.position[0],
            self.position[1],
            self.position[2],
            q.w,
            q.x,
            q.y,
            q.z,
        ]
    }

    pub fn cast<U: Scalar>(&self) -> Pose6D<U> {
        Pose6D {
            position: self.position.map(|v| U::lit(v.as_f64())),
            orientation: self.orientation.cast(),
        }
    }
}

/// SE(3) composition.
pub fn compose_pose<T: Scalar>(a: &Pose6D<T>, b: &Pose6D<T>) -> Pose6D<T> {
    a.compose(b)
}

/// SE(3) inverse.
pub fn invert_pose<T: Scalar>(a: &Pose6D<T>) -> Pose6D<T> {
    a.inverse()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn rot_z(angle: f64) -> Pose6D<f64> {
        Pose6D::new([0.0; 3], UnitQuaternion::from_axis_angle([0.0, 0.0, 1.0], angle))
    }

    fn close_pose(a: &Pose6D<f64>, b: &Pose6D<f64>, tol: f64) -> bool {
        let dp = norm3(sub3(a.position, b.position));
        let dq = 1.0 - a.orientation.dot(b.orientation).abs();
        dp < tol && dq < tol
    }

    #[test]
    fn compose_with_identity() {
        let p = Pose6D::from_xyz_rpy([0.3, -1.0, 2.0], [0.1, 0.2, 0.3]);
        assert!(close_pose(&p.compose(&Pose6D::identity()), &p, 1e-12));
    }

    #[test]
    fn quarter_turns_make_half_turn() {
        let r = rot_z(FRAC_PI_2).compose(&rot_z(FRAC_PI_2));
        let q = r.orientation;
        assert!(q.w.abs() < 1e-12 && q.x.abs() < 1e-12 && q.y.abs() < 1e-12);
        assert!((q.z - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pure_translations_add() {
        let a = Pose6D::from_translation([1.0, 0.0, 0.0]);
        let b = Pose6D::from_translation([0.0, 1.0, 0.0]);
        let c = compose_pose(&a, &b);
        assert_eq!(c.position, [1.0, 1.0, 0.0]);
        assert_eq!(c.orientation, UnitQuaternion::identity());
    }

    #[test]
    fn inverse_cases() {
        assert!(close_pose(
            &invert_pose(&Pose6D::<f64>::identity()),
            &Pose6D::identity(),
            1e-15
        ));
        let t = invert_pose(&Pose6D::from_translation([1.0, 0.0, 0.0]));
        assert_eq!(t.position, [-1.0, 0.0, 0.0]);
        let mut a = rot_z(FRAC_PI_2);
        a.position = [1.0, 0.0, 0.0];
        let id = a.compose(&a.inverse());
        assert!(close_pose(&id, &Pose6D::identity(), 1e-12));
    }

    #[test]
    fn rpy_round_trip_and_convention() {
        // yaw only equals a rotation about z
        let q = UnitQuaternion::<f64>::from_rpy(0.0, 0.0, 0.7);
        let r = UnitQuaternion::from_axis_angle([0.0, 0.0, 1.0], 0.7);
        assert!((q.dot(r) - 1.0).abs() < 1e-14);
        // extrinsic XYZ: R = Rz * Ry * Rx
        let (ro, pi, ya) = (0.3, -0.4, 1.1);
        let expect = UnitQuaternion::<f64>::from_axis_angle([0.0, 0.0, 1.0], ya)
            .mul(UnitQuaternion::from_axis_angle([0.0, 1.0, 0.0], pi))
            .mul(UnitQuaternion::from_axis_angle([1.0, 0.0, 0.0], ro));
        let got = UnitQuaternion::from_rpy(ro, pi, ya);
        assert!((got.dot(expect).abs() - 1.0).abs() < 1e-14);
        let back = got.to_rpy();
        assert!((back[0] - ro).abs() < 1e-12 && (back[1] - pi).abs() < 1e-12 && (back[2] - ya).abs() < 1e-12);
    }

    #[test]
    fn rotate_matches_half_turn() {
        let q = UnitQuaternion::<f64>::from_axis_angle([0.0, 0.0, 1.0], PI);
        let v = q.rotate([1.0, 0.0, 0.0]);
        assert!((v[0] + 1.0).abs() < 1e-12 && v[1].abs() < 1e-12);
    }

    #[test]
    fn canonical_hemisphere() {
        let q = UnitQuaternion::<f64>::new_normalize(-0.5, 0.5, 0.5, 0.5).canonical();
        assert!(q.w >= 0.0);
        assert!((q.norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn works_in_single_precision() {
        let a = Pose6D::<f32>::from_xyz_rpy([1.0, 2.0, 3.0], [0.1, 0.2, 0.3]);
        let id = a.compose(&a.inverse());
        assert!(norm3(id.position) < 1e-5);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn pose() -> impl Strategy<Value = Pose6D<f64>> {
            (
                prop::array::uniform3(-5.0f64..5.0),
                prop::array::uniform4(-1.0f64..1.0),
            )
                .prop_filter("non-degenerate", |(_, q)| q.iter().map(|v| v * v).sum::<f64>() > 1e-3)
                .prop_map(|(p, q)| Pose6D::new(p, UnitQuaternion::from_array(q)))
        }

        proptest! {
            #[test]
            fn associativity(a in pose(), b in pose(), c in pose()) {
                let l = a.compose(&b).compose(&c);
                let r = a.compose(&b.compose(&c));
                prop_assert!(norm3(sub3(l.position, r.position)) < 1e-9);
                prop_assert!((l.orientation.dot(r.orientation).abs() - 1.0).abs() < 1e-9);
            }

            #[test]
            fn inverse_cancels(a in pose()) {
                let id = a.compose(&a.inverse());
                prop_assert!(norm3(id.position) < 1e-9);
                prop_assert!((id.orientation.w.abs() - 1.0).abs() < 1e-9);
            }

            #[test]
            fn normalized(a in pose(), b in pose()) {
                prop_assert!((a.compose(&b).orientation.norm() - 1.0).abs() < 1e-9);
            }
        }
    }
}
