//! Spatial (6D) vector algebra.
//!
//! Conventions used throughout the crate:
//! - motion vectors are ordered `(linear; angular)`,
//! - wrenches are ordered `(force; moment)`,
//! - a "mixed" quantity attached to a frame is expressed at the frame origin
//!   with the orientation of the inertial frame.

use nalgebra::{Matrix3, Matrix6, Rotation3, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::SpatialError;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Vec6 = Vector6<f64>;
pub type Mat6 = Matrix6<f64>;

const ORTHO_TOL: f64 = 1e-9;
const RENORMALIZE_TOL: f64 = 1e-8;
const SKEW_TOL: f64 = 1e-8;

/// `skew(v) * u == v.cross(u)`.
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`skew`]. Fails if `a` is not skew-symmetric.
pub fn vee(a: &Mat3) -> Result<Vec3, SpatialError> {
    let asym = (a + a.transpose()).norm();
    if asym >= SKEW_TOL {
        return Err(SpatialError::NotSkewSymmetric(asym));
    }
    Ok(vee_unchecked(a))
}

/// Reads the three independent entries of a skew matrix without validation.
pub fn vee_unchecked(a: &Mat3) -> Vec3 {
    Vec3::new(a[(2, 1)], a[(0, 2)], a[(1, 0)])
}

/// Skew-symmetric part `(A - Aᵀ) / 2`.
pub fn sk(a: &Mat3) -> Mat3 {
    (a - a.transpose()) * 0.5
}

/// Orientation error `sk(R R_dᵀ)^∨`. Equals `sin(θ) a` for `R = exp(θ[a]) R_d`.
pub fn orientation_error(r: &Rotation, r_des: &Rotation) -> Vec3 {
    vee_unchecked(&sk(&(r.matrix() * r_des.matrix().transpose())))
}

/// Rotation matrix in SO(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Mat3);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Mat3::identity())
    }

    /// Validates orthonormality and handedness.
    pub fn from_matrix(m: Mat3) -> Result<Self, SpatialError> {
        let ortho = (m * m.transpose() - Mat3::identity()).norm();
        let det = m.determinant();
        if ortho > ORTHO_TOL || (det - 1.0).abs() > ORTHO_TOL {
            return Err(SpatialError::NotRotation { ortho, det });
        }
        Ok(Rotation(m))
    }

    /// Projects an arbitrary (near-rotation) matrix onto SO(3) with the polar decomposition.
    pub fn project(m: &Mat3) -> Self {
        let svd = m.svd(true, true);
        let u = svd.u.unwrap();
        let vt = svd.v_t.unwrap();
        let mut d = Mat3::identity();
        if (u * vt).determinant() < 0.0 {
            d[(2, 2)] = -1.0;
        }
        Rotation(u * d * vt)
    }

    /// Re-orthonormalizes when drift exceeds 1e-8.
    pub fn renormalized(self) -> Self {
        let drift = (self.0 * self.0.transpose() - Mat3::identity()).norm();
        if drift > RENORMALIZE_TOL {
            Rotation::project(&self.0)
        } else {
            self
        }
    }

    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 || angle == 0.0 {
            return Rotation::identity();
        }
        let k = skew(&(axis / n));
        Rotation(Mat3::identity() + k * angle.sin() + k * k * (1.0 - angle.cos()))
    }

    /// Exponential map of a rotation vector.
    pub fn exp(w: &Vec3) -> Self {
        Rotation::from_axis_angle(w, w.norm())
    }

    /// Logarithm map; returns a rotation vector with angle in `[0, π]`.
    pub fn log(&self) -> Vec3 {
        // atan2 on the quaternion keeps full precision near the identity, where acos does not
        let q = self.to_quaternion();
        let (v, w) = if q.w < 0.0 { (-q.imag(), -q.w) } else { (q.imag(), q.w) };
        let s = v.norm();
        if s < 1e-300 {
            return Vec3::zeros();
        }
        v * (2.0 * s.atan2(w) / s)
    }

    /// Roll-pitch-yaw with `R = Rz(yaw) Ry(pitch) Rx(roll)`.
    pub fn from_rpy(roll: f64, pitch: f64, yaw: f64) -> Self {
        Rotation(*Rotation3::from_euler_angles(roll, pitch, yaw).matrix())
    }

    pub fn to_rpy(&self) -> (f64, f64, f64) {
        Rotation3::from_matrix_unchecked(self.0).euler_angles()
    }

    pub fn to_quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.0))
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Rotation(self.0.transpose())
    }

    pub fn compose(&self, other: &Rotation) -> Self {
        Rotation(self.0 * other.0)
    }

    pub fn apply(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    /// Geodesic angle between two rotations.
    pub fn angle_to(&self, other: &Rotation) -> f64 {
        let c = ((self.0.transpose() * other.0).trace() - 1.0) * 0.5;
        c.clamp(-1.0, 1.0).acos()
    }
}

impl Default for Rotation {
    fn default() -> Self {
        Rotation::identity()
    }
}

/// Pose of frame B with respect to frame A: `(ᴬp_B, ᴬR_B)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FramePose {
    pub position: Vec3,
    pub rotation: Rotation,
}

impl FramePose {
    pub fn new(position: Vec3, rotation: Rotation) -> Self {
        FramePose { position, rotation }
    }

    pub fn identity() -> Self {
        FramePose::default()
    }

    pub fn from_translation(position: Vec3) -> Self {
        FramePose { position, rotation: Rotation::identity() }
    }

    pub fn from_xyz_rpy(xyz: [f64; 3], rpy: [f64; 3]) -> Self {
        FramePose {
            position: Vec3::from(xyz),
            rotation: Rotation::from_rpy(rpy[0], rpy[1], rpy[2]),
        }
    }

    /// `self ∘ other`: pose of C in A given B in A (`self`) and C in B (`other`).
    pub fn compose(&self, other: &FramePose) -> FramePose {
        FramePose {
            position: self.position + self.rotation.apply(&other.position),
            rotation: self.rotation.compose(&other.rotation),
        }
    }

    pub fn inverse(&self) -> FramePose {
        let rt = self.rotation.transpose();
        FramePose { position: -rt.apply(&self.position), rotation: rt }
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.position + self.rotation.apply(p)
    }

    /// 6D pose error `(p - p_d, sk(R R_dᵀ)^∨)`.
    pub fn error_to(&self, desired: &FramePose) -> Vec6 {
        let dp = self.position - desired.position;
        let dr = orientation_error(&self.rotation, &desired.rotation);
        Vec6::new(dp.x, dp.y, dp.z, dr.x, dr.y, dr.z)
    }

    pub fn xyz_rpy(&self) -> ([f64; 3], [f64; 3]) {
        let (r, p, y) = self.rotation.to_rpy();
        ([self.position.x, self.position.y, self.position.z], [r, p, y])
    }
}

/// Coordinate transform between two frames acting on 6D motion and wrench vectors.
///
/// Built from the pose of the source frame B expressed in the target frame A.
/// Wrenches are mapped with the block form `[R 0; S(p) R R]` where `p = ᴬp_B` is
/// the origin of B relative to the origin of A, expressed in A. Motion vectors
/// use the dual form `[R S(p)R; 0 R]` so that power is preserved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialTransform {
    pose: FramePose,
}

impl SpatialTransform {
    pub fn new(pose: FramePose) -> Self {
        SpatialTransform { pose }
    }

    pub fn identity() -> Self {
        SpatialTransform { pose: FramePose::identity() }
    }

    pub fn pose(&self) -> &FramePose {
        &self.pose
    }

    /// `ₐX^B`: maps a wrench expressed in B to the equivalent wrench expressed in A.
    pub fn wrench_matrix(&self) -> Mat6 {
        let r = self.pose.rotation.matrix();
        let mut x = Mat6::zeros();
        x.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
        x.fixed_view_mut::<3, 3>(3, 3).copy_from(r);
        x.fixed_view_mut::<3, 3>(3, 0).copy_from(&(skew(&self.pose.position) * r));
        x
    }

    /// Maps a motion vector `(v; ω)` of a body, expressed in B, to A.
    pub fn motion_matrix(&self) -> Mat6 {
        let r = self.pose.rotation.matrix();
        let mut x = Mat6::zeros();
        x.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
        x.fixed_view_mut::<3, 3>(3, 3).copy_from(r);
        x.fixed_view_mut::<3, 3>(0, 3).copy_from(&(skew(&self.pose.position) * r));
        x
    }

    pub fn apply_wrench(&self, w: &Wrench) -> Wrench {
        let r = self.pose.rotation.matrix();
        let force = r * w.force;
        let moment = r * w.moment + self.pose.position.cross(&force);
        Wrench { force, moment }
    }

    pub fn apply_motion(&self, m: &Motion) -> Motion {
        let r = self.pose.rotation.matrix();
        let angular = r * m.angular;
        let linear = r * m.linear + self.pose.position.cross(&angular);
        Motion { linear, angular }
    }

    pub fn compose(&self, other: &SpatialTransform) -> SpatialTransform {
        SpatialTransform { pose: self.pose.compose(&other.pose) }
    }

    pub fn inverse(&self) -> SpatialTransform {
        SpatialTransform { pose: self.pose.inverse() }
    }
}

/// Transforms a wrench expressed in the source frame of `x` into its target frame.
pub fn transform_wrench(x: &SpatialTransform, w: &Wrench) -> Wrench {
    x.apply_wrench(w)
}

/// Wrench transport between two points with inertial orientation:
/// maps a wrench applied at `from` to the equivalent wrench at `to`.
pub fn wrench_shift(from: &Vec3, to: &Vec3) -> Mat6 {
    SpatialTransform::new(FramePose::from_translation(from - to)).wrench_matrix()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Wrench {
    pub force: Vec3,
    pub moment: Vec3,
}

impl Wrench {
    pub fn new(force: Vec3, moment: Vec3) -> Self {
        Wrench { force, moment }
    }

    pub fn from_vector(v: &Vec6) -> Self {
        Wrench {
            force: v.fixed_rows::<3>(0).into(),
            moment: v.fixed_rows::<3>(3).into(),
        }
    }

    pub fn to_vector(&self) -> Vec6 {
        Vec6::new(self.force.x, self.force.y, self.force.z, self.moment.x, self.moment.y, self.moment.z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Motion {
    pub linear: Vec3,
    pub angular: Vec3,
}

impl Motion {
    pub fn new(linear: Vec3, angular: Vec3) -> Self {
        Motion { linear, angular }
    }

    pub fn from_vector(v: &Vec6) -> Self {
        Motion {
            linear: v.fixed_rows::<3>(0).into(),
            angular: v.fixed_rows::<3>(3).into(),
        }
    }

    pub fn to_vector(&self) -> Vec6 {
        Vec6::new(self.linear.x, self.linear.y, self.linear.z, self.angular.x, self.angular.y, self.angular.z)
    }

    /// Power `vᵀf + ωᵀn`.
    pub fn power(&self, w: &Wrench) -> f64 {
        self.linear.dot(&w.force) + self.angular.dot(&w.moment)
    }

    /// Motion cross product `self ×m other`.
    pub fn cross_motion(&self, other: &Motion) -> Motion {
        Motion {
            linear: self.angular.cross(&other.linear) + self.linear.cross(&other.angular),
            angular: self.angular.cross(&other.angular),
        }
    }

    /// Force cross product `self ×f w`.
    pub fn cross_force(&self, w: &Wrench) -> Wrench {
        Wrench {
            force: self.angular.cross(&w.force),
            moment: self.angular.cross(&w.moment) + self.linear.cross(&w.force),
        }
    }
}

/// Rigid-body inertia: mass, center of mass and rotational inertia about the CoM,
/// all expressed in the body frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialInertia {
    pub mass: f64,
    pub com: Vec3,
    pub inertia: Mat3,
}

impl SpatialInertia {
    pub fn new(mass: f64, com: Vec3, inertia: Mat3) -> Self {
        SpatialInertia { mass, com, inertia }
    }

    pub fn zero() -> Self {
        SpatialInertia { mass: 0.0, com: Vec3::zeros(), inertia: Mat3::zeros() }
    }

    /// Checks mass sign, symmetry, positive semi-definiteness and the triangle
    /// inequalities on the principal moments.
    pub fn validate(&self) -> Result<(), SpatialError> {
        if !(self.mass >= 0.0) || !self.mass.is_finite() {
            return Err(SpatialError::BadInertia(format!("mass {} must be finite and >= 0", self.mass)));
        }
        if (self.inertia - self.inertia.transpose()).norm() > 1e-12 {
            return Err(SpatialError::BadInertia("rotational inertia is not symmetric".into()));
        }
        let eig = self.inertia.symmetric_eigen().eigenvalues;
        let mut p = [eig[0], eig[1], eig[2]];
        p.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if p[0] < -1e-12 {
            return Err(SpatialError::BadInertia(format!("negative principal moment {}", p[0])));
        }
        let tol = 1e-12 * (1.0 + p[2]);
        if p[0] + p[1] < p[2] - tol {
            return Err(SpatialError::BadInertia(format!(
                "principal moments ({:.6e}, {:.6e}, {:.6e}) violate the triangle inequality",
                p[0], p[1], p[2]
            )));
        }
        Ok(())
    }

    /// 6×6 matrix about the body frame origin, mapping `(v; ω)` to `(f; n)`.
    pub fn to_matrix(&self) -> Mat6 {
        inertia_matrix_at(self.mass, &self.com, &self.inertia)
    }

    /// Same body with all quantities rotated/translated by `pose` (body to target).
    pub fn transformed(&self, pose: &FramePose) -> SpatialInertia {
        let r = pose.rotation.matrix();
        SpatialInertia {
            mass: self.mass,
            com: pose.transform_point(&self.com),
            inertia: r * self.inertia * r.transpose(),
        }
    }
}

/// Spatial inertia about a reference origin for a body whose CoM sits at `c` relative
/// to that origin, with rotational inertia `ic` about the CoM.
pub fn inertia_matrix_at(mass: f64, c: &Vec3, ic: &Mat3) -> Mat6 {
    let sc = skew(c);
    let mut m = Mat6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&(Mat3::identity() * mass));
    m.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-sc * mass));
    m.fixed_view_mut::<3, 3>(3, 0).copy_from(&(sc * mass));
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(&(ic - sc * sc * mass));
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rvec(rng: &mut impl Rng) -> Vec3 {
        Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    }

    fn rpose(rng: &mut impl Rng) -> FramePose {
        FramePose::new(rvec(rng), Rotation::exp(&(rvec(rng) * 2.0)))
    }

    #[test]
    fn skew_basics() {
        assert_eq!(skew(&Vec3::zeros()), Mat3::zeros());
        let r = skew(&Vec3::z()) * Vec3::x();
        assert_relative_eq!(r, Vec3::y());
        let s = skew(&Vec3::new(1.0, -2.0, 0.5));
        assert_eq!(s.transpose(), -s);
    }

    #[test]
    fn skew_matches_cross_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let (v, u) = (rvec(&mut rng), rvec(&mut rng));
            let expected = Vec3::new(v.y * u.z - v.z * u.y, v.z * u.x - v.x * u.z, v.x * u.y - v.y * u.x);
            assert!((skew(&v) * u - expected).norm() < 1e-12);
        }
    }

    #[test]
    fn vee_inverts_skew_and_rejects_symmetric() {
        assert_eq!(vee(&Mat3::zeros()).unwrap(), Vec3::zeros());
        let v = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(vee(&skew(&v)).unwrap(), v);
        let sym = Mat3::new(1.0, 2.0, 0.0, 2.0, 1.0, 0.0, 0.0, 0.0, 3.0);
        assert!(matches!(vee(&sym), Err(SpatialError::NotSkewSymmetric(_))));
    }

    #[test]
    fn sk_projection() {
        assert_eq!(sk(&Mat3::identity()), Mat3::zeros());
        let s = skew(&Vec3::new(1.0, 2.0, 3.0));
        assert_eq!(sk(&s), s);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let a = Mat3::from_fn(|_, _| rng.gen_range(-5.0..5.0));
            let p = sk(&a);
            assert!((p + p.transpose()).norm() < 1e-14);
        }
    }

    #[test]
    fn rotation_validation() {
        assert!(Rotation::from_matrix(Mat3::identity() * 2.0).is_err());
        let r = Rotation::from_rpy(0.3, -0.2, 1.1);
        assert!(Rotation::from_matrix(*r.matrix()).is_ok());
        let (ro, pi, ya) = r.to_rpy();
        assert_relative_eq!(ro, 0.3, epsilon = 1e-12);
        assert_relative_eq!(pi, -0.2, epsilon = 1e-12);
        assert_relative_eq!(ya, 1.1, epsilon = 1e-12);
        // rpy convention: Rz * Ry * Rx
        let rz = Rotation::from_axis_angle(&Vec3::z(), 1.1);
        let ry = Rotation::from_axis_angle(&Vec3::y(), -0.2);
        let rx = Rotation::from_axis_angle(&Vec3::x(), 0.3);
        assert!((rz.compose(&ry).compose(&rx).matrix() - r.matrix()).norm() < 1e-12);
    }

    #[test]
    fn renormalize_projects_drifted_matrix() {
        let r = Rotation::from_rpy(0.1, 0.2, 0.3);
        let drifted = Rotation(r.matrix() * 1.0001);
        let fixed = drifted.renormalized();
        assert!(Rotation::from_matrix(*fixed.matrix()).is_ok());
        assert!((fixed.matrix() - r.matrix()).norm() < 1e-9);
    }

    #[test]
    fn exp_log_roundtrip() {
        for w in [Vec3::new(0.2, -0.4, 0.9), Vec3::new(1.5, -2.0, 1.0), Vec3::new(1e-9, 0.0, -2e-9)] {
            assert!((Rotation::exp(&w).log() - w).norm() < 1e-12, "{w}");
        }
    }

    #[test]
    fn pose_inverse_and_associativity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let (a, b, c) = (rpose(&mut rng), rpose(&mut rng), rpose(&mut rng));
            let id = a.compose(&a.inverse());
            assert!(id.position.norm() < 1e-9);
            assert!((id.rotation.matrix() - Mat3::identity()).norm() < 1e-9);
            let l = a.compose(&b).compose(&c);
            let r = a.compose(&b.compose(&c));
            assert!((l.position - r.position).norm() < 1e-9);
            assert!((l.rotation.matrix() - r.rotation.matrix()).norm() < 1e-9);
        }
    }

    #[test]
    fn wrench_transform_identity_and_lever_arm() {
        let w = Wrench::new(Vec3::new(1.0, 2.0, 3.0), Vec3::new(-1.0, 0.5, 0.2));
        assert_eq!(transform_wrench(&SpatialTransform::identity(), &w), w);
        let d = Vec3::new(0.3, -0.1, 0.7);
        let f = Vec3::new(0.0, 2.0, -1.0);
        let x = SpatialTransform::new(FramePose::from_translation(d));
        let out = transform_wrench(&x, &Wrench::new(f, Vec3::zeros()));
        assert_relative_eq!(out.force, f);
        assert!((out.moment - d.cross(&f)).norm() < 1e-15);
    }

    #[test]
    fn wrench_matrix_matches_block_form_and_apply() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pose = rpose(&mut rng);
        let x = SpatialTransform::new(pose);
        let m = x.wrench_matrix();
        let r = pose.rotation.matrix();
        assert_eq!(m.fixed_view::<3, 3>(0, 3).into_owned(), Mat3::zeros());
        assert!((m.fixed_view::<3, 3>(3, 0) - skew(&pose.position) * r).norm() < 1e-15);
        let w = Wrench::new(rvec(&mut rng), rvec(&mut rng));
        assert!((m * w.to_vector() - x.apply_wrench(&w).to_vector()).norm() < 1e-12);
        // duality: motion transform transposed maps wrenches backwards
        let mm = x.motion_matrix();
        let back = x.inverse().wrench_matrix();
        assert!((mm.transpose() - back).norm() < 1e-12);
    }

    #[test]
    fn composed_transform_equals_sequential() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let x1 = SpatialTransform::new(rpose(&mut rng));
            let x2 = SpatialTransform::new(rpose(&mut rng));
            let w = Wrench::new(rvec(&mut rng) * 10.0, rvec(&mut rng));
            let once = transform_wrench(&x2.compose(&x1), &w);
            let seq = transform_wrench(&x2, &transform_wrench(&x1, &w));
            assert!((once.to_vector() - seq.to_vector()).norm() < 1e-10);
        }
    }

    #[test]
    fn power_is_frame_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..100 {
            let x = SpatialTransform::new(rpose(&mut rng));
            let m = Motion::new(rvec(&mut rng), rvec(&mut rng));
            let w = Wrench::new(rvec(&mut rng), rvec(&mut rng));
            let p0 = m.power(&w);
            let p1 = x.apply_motion(&m).power(&x.apply_wrench(&w));
            assert!((p0 - p1).abs() < 1e-9);
        }
    }

    #[test]
    fn inertia_validation() {
        let good = SpatialInertia::new(1.0, Vec3::zeros(), Mat3::from_diagonal(&Vec3::new(0.1, 0.2, 0.25)));
        good.validate().unwrap();
        let bad = SpatialInertia::new(1.0, Vec3::zeros(), Mat3::from_diagonal(&Vec3::new(0.1, 0.1, 0.5)));
        let err = bad.validate().unwrap_err().to_string();
        assert!(err.contains("triangle"), "{err}");
        let m = SpatialInertia::new(2.0, Vec3::new(0.1, 0.0, -0.2), good.inertia).to_matrix();
        assert!((m - m.transpose()).norm() < 1e-15);
        assert!(m.cholesky().is_some());
    }

    proptest::proptest! {
        #[test]
        fn wrench_roundtrip(px in -2.0..2.0f64, py in -2.0..2.0f64, pz in -2.0..2.0f64,
                            wx in -3.0..3.0f64, wy in -3.0..3.0f64, wz in -3.0..3.0f64,
                            f in proptest::array::uniform6(-50.0..50.0f64)) {
            let pose = FramePose::new(Vec3::new(px, py, pz), Rotation::exp(&Vec3::new(wx, wy, wz)));
            let x = SpatialTransform::new(pose);
            let w = Wrench::from_vector(&Vec6::from_row_slice(&f));
            let back = x.inverse().apply_wrench(&x.apply_wrench(&w));
            proptest::prop_assert!((back.to_vector() - w.to_vector()).norm() < 1e-9);
        }
    }
}
