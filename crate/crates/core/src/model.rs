//! Floating-base kinematic trees.
//!
//! Velocities use the mixed representation: `ν = (ṗ_B, ω_B, ṡ)` with the base
//! linear velocity of the base origin and the base angular velocity both in the
//! inertial frame. Internally, link velocities, accelerations, inertias and
//! forces are Plücker quantities expressed at the inertial origin, which keeps
//! the recursions free of per-link coordinate changes.

use nalgebra::{DMatrix, DVector};

use crate::error::ModelError;
use crate::spatial::{inertia_matrix_at, skew, FramePose, Mat3, Mat6, Motion, Rotation, SpatialInertia, Vec3, Vec6, Wrench};

const AXIS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum JointKind {
    /// Unit axis expressed in the joint frame.
    Revolute { axis: Vec3 },
    Fixed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkSpec {
    pub name: String,
    /// Index of the parent link; `None` only for the base link.
    pub parent: Option<usize>,
    pub joint: JointKind,
    /// Joint frame relative to the parent link frame.
    pub origin: FramePose,
    pub inertia: SpatialInertia,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointLimits {
    pub position: Vec<(f64, f64)>,
    pub torque: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentModel {
    name: String,
    links: Vec<LinkSpec>,
    limits: JointLimits,
    joint_of_link: Vec<Option<usize>>,
    link_of_joint: Vec<usize>,
    total_mass: f64,
}

impl AgentModel {
    /// Builds and validates a model. Links must be ordered so that every parent
    /// precedes its children, with the base link first.
    pub fn new(name: impl Into<String>, links: Vec<LinkSpec>, limits: JointLimits) -> Result<Self, ModelError> {
        if links.is_empty() {
            return Err(ModelError::Invalid("model has no links".into()));
        }
        if links[0].parent.is_some() {
            return Err(ModelError::Invalid(format!("base link `{}` must not have a parent", links[0].name)));
        }
        if links[0].joint != JointKind::Fixed {
            return Err(ModelError::Invalid("base link must not carry a joint".into()));
        }
        let mut joint_of_link = Vec::with_capacity(links.len());
        let mut link_of_joint = Vec::new();
        for (i, link) in links.iter().enumerate() {
            if links[..i].iter().any(|l| l.name == link.name) {
                return Err(ModelError::Invalid(format!("duplicate link name `{}`", link.name)));
            }
            if i > 0 {
                match link.parent {
                    None => return Err(ModelError::Invalid(format!("link `{}` has no parent", link.name))),
                    Some(p) if p >= i => {
                        return Err(ModelError::Invalid(format!(
                            "link `{}` references parent {} which does not precede it",
                            link.name, p
                        )))
                    }
                    _ => {}
                }
            }
            link.inertia
                .validate()
                .map_err(|source| ModelError::Inertia { link: link.name.clone(), source })?;
            match &link.joint {
                JointKind::Revolute { axis } => {
                    if (axis.norm() - 1.0).abs() > AXIS_TOL {
                        return Err(ModelError::Invalid(format!(
                            "joint axis of `{}` has norm {} (expected 1)",
                            link.name,
                            axis.norm()
                        )));
                    }
                    joint_of_link.push(Some(link_of_joint.len()));
                    link_of_joint.push(i);
                }
                JointKind::Fixed => joint_of_link.push(None),
            }
        }
        let n = link_of_joint.len();
        if limits.position.len() != n || limits.torque.len() != n {
            return Err(ModelError::Invalid(format!(
                "limits describe {} positions / {} torques but the model has {} joints",
                limits.position.len(),
                limits.torque.len(),
                n
            )));
        }
        for (k, (lo, hi)) in limits.position.iter().enumerate() {
            if !(lo < hi) {
                return Err(ModelError::Invalid(format!("joint {k}: lower limit {lo} is not below upper {hi}")));
            }
        }
        if let Some(t) = limits.torque.iter().find(|t| !(**t > 0.0)) {
            return Err(ModelError::Invalid(format!("torque limit {t} must be positive")));
        }
        let total_mass = links.iter().map(|l| l.inertia.mass).sum::<f64>();
        if !(total_mass > 0.0) {
            return Err(ModelError::Invalid("total mass must be positive".into()));
        }
        Ok(AgentModel { name: name.into(), links, limits, joint_of_link, link_of_joint, total_mass })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn links(&self) -> &[LinkSpec] {
        &self.links
    }

    pub fn limits(&self) -> &JointLimits {
        &self.limits
    }

    pub fn num_joints(&self) -> usize {
        self.link_of_joint.len()
    }

    pub fn num_dofs(&self) -> usize {
        self.num_joints() + 6
    }

    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    pub fn base_link(&self) -> &str {
        &self.links[0].name
    }

    pub fn frame_index(&self, frame: &str) -> Result<usize, ModelError> {
        self.links
            .iter()
            .position(|l| l.name == frame)
            .ok_or_else(|| ModelError::UnknownFrame(frame.to_string()))
    }

    pub fn joint_names(&self) -> Vec<&str> {
        self.link_of_joint.iter().map(|&i| self.links[i].name.as_str()).collect()
    }

    /// Joint indices on the path from the base to `link`, base side first.
    pub fn supporting_joints(&self, link: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut cur = Some(link);
        while let Some(i) = cur {
            if let Some(k) = self.joint_of_link[i] {
                out.push(k);
            }
            cur = self.links[i].parent;
        }
        out.reverse();
        out
    }

    pub fn within_limits(&self, joints: &DVector<f64>) -> bool {
        joints.iter().zip(&self.limits.position).all(|(q, (lo, hi))| q >= lo && q <= hi)
    }

    pub fn clamp_to_limits(&self, joints: &mut DVector<f64>) {
        for (q, (lo, hi)) in joints.iter_mut().zip(&self.limits.position) {
            *q = q.clamp(*lo, *hi);
        }
    }
}

/// Configuration `q = (p_B, R_B, s)` and velocity `ν = (ṗ_B, ω_B, ṡ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub base: FramePose,
    pub joints: DVector<f64>,
    pub base_velocity: Vec6,
    pub joint_velocities: DVector<f64>,
}

impl AgentState {
    pub fn at_rest(base: FramePose, joints: DVector<f64>) -> Self {
        let n = joints.len();
        AgentState { base, joints, base_velocity: Vec6::zeros(), joint_velocities: DVector::zeros(n) }
    }

    pub fn zero(model: &AgentModel) -> Self {
        AgentState::at_rest(FramePose::identity(), DVector::zeros(model.num_joints()))
    }

    pub fn nu(&self) -> DVector<f64> {
        let n = self.joints.len();
        let mut v = DVector::zeros(n + 6);
        v.rows_mut(0, 6).copy_from(&self.base_velocity);
        v.rows_mut(6, n).copy_from(&self.joint_velocities);
        v
    }

    pub fn set_nu(&mut self, nu: &DVector<f64>) {
        let n = self.joints.len();
        self.base_velocity = nu.fixed_rows::<6>(0).into();
        self.joint_velocities = nu.rows(6, n).into_owned();
    }

    /// Advances the configuration with the current velocity; the base orientation
    /// is updated on SO(3) with the exponential map of the inertial angular velocity.
    pub fn integrate_configuration(&mut self, dt: f64) {
        let v: Vec3 = self.base_velocity.fixed_rows::<3>(0).into();
        let w: Vec3 = self.base_velocity.fixed_rows::<3>(3).into();
        self.base.position += v * dt;
        self.base.rotation = Rotation::exp(&(w * dt)).compose(&self.base.rotation).renormalized();
        self.joints += &self.joint_velocities * dt;
    }

    pub fn is_finite(&self) -> bool {
        self.base.position.iter().all(|x| x.is_finite())
            && self.base.rotation.matrix().iter().all(|x| x.is_finite())
            && self.joints.iter().all(|x| x.is_finite())
            && self.base_velocity.iter().all(|x| x.is_finite())
            && self.joint_velocities.iter().all(|x| x.is_finite())
    }
}

/// `M ν̇ + h = B τ + J_cᵀ f`.
#[derive(Debug, Clone)]
pub struct DynamicsTerms {
    pub mass_matrix: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub selector: DMatrix<f64>,
}

/// Selector `B = (0_{n×6}, I_n)ᵀ`.
pub fn selector(n: usize) -> DMatrix<f64> {
    let mut b = DMatrix::zeros(n + 6, n);
    b.view_mut((6, 0), (n, n)).fill_with_identity();
    b
}

/// Per-state kinematic quantities shared by the algorithms below.
#[derive(Debug, Clone)]
pub struct Kinematics {
    pub poses: Vec<FramePose>,
    /// Plücker motion subspace of each joint at the inertial origin.
    pub subspaces: Vec<Motion>,
    /// Plücker link velocities.
    pub velocities: Vec<Motion>,
    /// Plücker link accelerations for `ν̇ = 0`, without gravity.
    pub bias_accelerations: Vec<Motion>,
    /// World spatial inertias about the inertial origin.
    pub inertias: Vec<Mat6>,
    /// World CoM of each link.
    pub link_coms: Vec<Vec3>,
    base_map: Mat6,
}

impl Kinematics {
    pub fn new(model: &AgentModel, state: &AgentState) -> Self {
        let nl = model.links.len();
        let mut poses: Vec<FramePose> = Vec::with_capacity(nl);
        let mut subspaces = vec![Motion::default(); model.num_joints()];
        let mut velocities = Vec::with_capacity(nl);
        let mut bias = Vec::with_capacity(nl);
        let mut inertias = Vec::with_capacity(nl);
        let mut link_coms = Vec::with_capacity(nl);

        let pb = state.base.position;
        let base_map = base_velocity_map(&pb);
        let vb: Vec3 = state.base_velocity.fixed_rows::<3>(0).into();
        let wb: Vec3 = state.base_velocity.fixed_rows::<3>(3).into();

        for (i, link) in model.links.iter().enumerate() {
            let (pose, vel, acc) = match link.parent {
                None => {
                    let v = Motion::from_vector(&(base_map * state.base_velocity));
                    (state.base, v, Motion::new(vb.cross(&wb), Vec3::zeros()))
                }
                Some(p) => {
                    let joint_frame = poses[p].compose(&link.origin);
                    match (&link.joint, model.joint_of_link[i]) {
                        (JointKind::Revolute { axis }, Some(k)) => {
                            let q = state.joints[k];
                            let pose = joint_frame.compose(&FramePose::new(Vec3::zeros(), Rotation::from_axis_angle(axis, q)));
                            let a = pose.rotation.apply(axis);
                            let s = Motion::new(pose.position.cross(&a), a);
                            subspaces[k] = s;
                            let qd = state.joint_velocities[k];
                            let vel: Motion = add_motion(&velocities[p], &scale_motion(&s, qd));
                            let acc = add_motion(&bias[p], &scale_motion(&vel.cross_motion(&s), qd));
                            (pose, vel, acc)
                        }
                        _ => (joint_frame, velocities[p], bias[p]),
                    }
                }
            };
            let world_inertia = link.inertia.transformed(&pose);
            inertias.push(inertia_matrix_at(world_inertia.mass, &world_inertia.com, &world_inertia.inertia));
            link_coms.push(world_inertia.com);
            poses.push(pose);
            velocities.push(vel);
            bias.push(acc);
        }
        Kinematics { poses, subspaces, velocities, bias_accelerations: bias, inertias, link_coms, base_map }
    }

    /// Plücker Jacobian of a link: maps `ν` to the link's Plücker velocity.
    fn plucker_jacobian(&self, model: &AgentModel, link: usize) -> DMatrix<f64> {
        let n = model.num_joints();
        let mut j = DMatrix::zeros(6, n + 6);
        j.view_mut((0, 0), (6, 6)).copy_from(&self.base_map);
        for k in model.supporting_joints(link) {
            j.view_mut((0, 6 + k), (6, 1)).copy_from(&self.subspaces[k].to_vector());
        }
        j
    }
}

fn add_motion(a: &Motion, b: &Motion) -> Motion {
    Motion::new(a.linear + b.linear, a.angular + b.angular)
}

fn scale_motion(a: &Motion, s: f64) -> Motion {
    Motion::new(a.linear * s, a.angular * s)
}

/// Maps mixed base velocity `(ṗ_B, ω_B)` to the Plücker velocity at the inertial origin.
fn base_velocity_map(pb: &Vec3) -> Mat6 {
    let mut t = Mat6::identity();
    t.fixed_view_mut::<3, 3>(0, 3).copy_from(&skew(pb));
    t
}

/// Converts a Plücker motion (at the inertial origin) to the mixed velocity at point `p`.
fn plucker_to_mixed(p: &Vec3) -> Mat6 {
    let mut x = Mat6::identity();
    x.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-skew(p)));
    x
}

pub fn forward_kinematics(model: &AgentModel, state: &AgentState, frame: &str) -> Result<FramePose, ModelError> {
    let idx = model.frame_index(frame)?;
    Ok(Kinematics::new(model, state).poses[idx])
}

/// Mixed Jacobian `J_A(q)` (6×(n+6)): `(ṗ_A, ω_A) = J_A ν`.
pub fn jacobian(model: &AgentModel, state: &AgentState, frame: &str) -> Result<DMatrix<f64>, ModelError> {
    let idx = model.frame_index(frame)?;
    let kin = Kinematics::new(model, state);
    Ok(frame_jacobian(model, &kin, idx))
}

pub fn frame_jacobian(model: &AgentModel, kin: &Kinematics, link: usize) -> DMatrix<f64> {
    let x = DMatrix::from_column_slice(6, 6, plucker_to_mixed(&kin.poses[link].position).as_slice());
    x * kin.plucker_jacobian(model, link)
}

/// `J̇_A ν` for the mixed frame velocity of `link`.
pub fn frame_bias_acceleration(kin: &Kinematics, link: usize) -> Vec6 {
    let p = kin.poses[link].position;
    let v = &kin.velocities[link];
    let a = &kin.bias_accelerations[link];
    point_classical_acceleration(&p, v, a)
}

/// Classical acceleration `(p̈, ω̇)` of a body-fixed point given Plücker velocity and acceleration.
fn point_classical_acceleration(p: &Vec3, v: &Motion, a: &Motion) -> Vec6 {
    let w = v.angular;
    let vp = v.linear + w.cross(p);
    let lin = a.linear + a.angular.cross(p) + w.cross(&vp);
    Vec6::new(lin.x, lin.y, lin.z, a.angular.x, a.angular.y, a.angular.z)
}

/// Mass matrix by composite-rigid-body aggregation.
pub fn mass_matrix(model: &AgentModel, state: &AgentState) -> DMatrix<f64> {
    let kin = Kinematics::new(model, state);
    mass_matrix_from(model, &kin)
}

pub fn mass_matrix_from(model: &AgentModel, kin: &Kinematics) -> DMatrix<f64> {
    let n = model.num_joints();
    let nl = model.links.len();
    let mut composite = kin.inertias.clone();
    for i in (1..nl).rev() {
        let p = model.links[i].parent.unwrap();
        let ci = composite[i];
        composite[p] += ci;
    }
    let t = kin.base_map;
    let mut m = DMatrix::zeros(n + 6, n + 6);
    m.view_mut((0, 0), (6, 6)).copy_from(&(t.transpose() * composite[0] * t));
    for (l, &link) in model.link_of_joint.iter().enumerate() {
        let f = composite[link] * kin.subspaces[l].to_vector();
        m[(6 + l, 6 + l)] = kin.subspaces[l].to_vector().dot(&f);
        let mut cur = model.links[link].parent;
        while let Some(a) = cur {
            if let Some(k) = model.joint_of_link[a] {
                let v = kin.subspaces[k].to_vector().dot(&f);
                m[(6 + k, 6 + l)] = v;
                m[(6 + l, 6 + k)] = v;
            }
            cur = model.links[a].parent;
        }
        let fb = t.transpose() * f;
        m.view_mut((0, 6 + l), (6, 1)).copy_from(&fb);
        m.view_mut((6 + l, 0), (1, 6)).copy_from(&fb.transpose());
    }
    m
}

/// Recursive Newton–Euler inverse dynamics: `M(q) ν̇ + h(q, ν)` for gravity norm `g`
/// acting along `-z`.
pub fn inverse_dynamics(model: &AgentModel, state: &AgentState, accel: &DVector<f64>, gravity: f64) -> DVector<f64> {
    let kin = Kinematics::new(model, state);
    inverse_dynamics_from(model, &kin, accel, gravity)
}

pub fn inverse_dynamics_from(
    model: &AgentModel,
    kin: &Kinematics,
    accel: &DVector<f64>,
    gravity: f64,
) -> DVector<f64> {
    let n = model.num_joints();
    let nl = model.links.len();
    let mut acc: Vec<Motion> = Vec::with_capacity(nl);
    for (i, link) in model.links.iter().enumerate() {
        let a = match link.parent {
            None => {
                let base_acc: Vec6 = accel.fixed_rows::<6>(0).into();
                let mut a = kin.bias_accelerations[0].to_vector() + kin.base_map * base_acc;
                a[2] += gravity;
                Motion::from_vector(&a)
            }
            Some(p) => match model.joint_of_link[i] {
                Some(k) => {
                    let s = kin.subspaces[k];
                    let own_bias = kin.bias_accelerations[i].to_vector() - kin.bias_accelerations[p].to_vector();
                    Motion::from_vector(&(acc[p].to_vector() + own_bias + s.to_vector() * accel[6 + k]))
                }
                None => acc[p],
            },
        };
        acc.push(a);
    }
    let mut forces: Vec<Vec6> = (0..nl)
        .map(|i| {
            let iv = kin.inertias[i] * kin.velocities[i].to_vector();
            let gyro = kin.velocities[i].cross_force(&Wrench::from_vector(&iv)).to_vector();
            kin.inertias[i] * acc[i].to_vector() + gyro
        })
        .collect();
    let mut out = DVector::zeros(n + 6);
    for i in (0..nl).rev() {
        if let Some(k) = model.joint_of_link[i] {
            out[6 + k] = kin.subspaces[k].to_vector().dot(&forces[i]);
        }
        if let Some(p) = model.links[i].parent {
            let fi = forces[i];
            forces[p] += fi;
        }
    }
    out.rows_mut(0, 6).copy_from(&(kin.base_map.transpose() * forces[0]));
    out
}

/// Coriolis, centrifugal and gravity terms `h(q, ν)`.
pub fn bias_forces(model: &AgentModel, state: &AgentState, gravity: f64) -> DVector<f64> {
    inverse_dynamics(model, state, &DVector::zeros(model.num_dofs()), gravity)
}

pub fn dynamics(model: &AgentModel, state: &AgentState, gravity: f64) -> DynamicsTerms {
    let kin = Kinematics::new(model, state);
    DynamicsTerms {
        mass_matrix: mass_matrix_from(model, &kin),
        bias: inverse_dynamics_from(model, &kin, &DVector::zeros(model.num_dofs()), gravity),
        selector: selector(model.num_joints()),
    }
}

pub fn com(model: &AgentModel, state: &AgentState) -> Vec3 {
    com_from(model, &Kinematics::new(model, state))
}

pub fn com_from(model: &AgentModel, kin: &Kinematics) -> Vec3 {
    let mut c = Vec3::zeros();
    for (link, lc) in model.links.iter().zip(&kin.link_coms) {
        c += lc * link.inertia.mass;
    }
    c / model.total_mass
}

/// CoM Jacobian (3×(n+6)).
pub fn com_jacobian(model: &AgentModel, state: &AgentState) -> DMatrix<f64> {
    com_jacobian_from(model, &Kinematics::new(model, state))
}

pub fn com_jacobian_from(model: &AgentModel, kin: &Kinematics) -> DMatrix<f64> {
    let n = model.num_joints();
    let mut j = DMatrix::zeros(3, n + 6);
    for (i, link) in model.links.iter().enumerate() {
        let m = link.inertia.mass;
        if m == 0.0 {
            continue;
        }
        let jp = kin.plucker_jacobian(model, i);
        let to_point = plucker_to_mixed(&kin.link_coms[i]);
        let rows = (to_point * jp).rows(0, 3).into_owned();
        j += rows * m;
    }
    j / model.total_mass
}

/// `J̇_G ν`: CoM acceleration when `ν̇ = 0`.
pub fn com_bias_acceleration(model: &AgentModel, kin: &Kinematics) -> Vec3 {
    let mut a = Vec3::zeros();
    for (i, link) in model.links.iter().enumerate() {
        let acc = point_classical_acceleration(&kin.link_coms[i], &kin.velocities[i], &kin.bias_accelerations[i]);
        a += acc.fixed_rows::<3>(0) * link.inertia.mass;
    }
    a / model.total_mass
}

/// Centroidal momentum `(linear; angular about the CoM)` with inertial orientation.
pub fn momentum(model: &AgentModel, state: &AgentState) -> Vec6 {
    momentum_from(model, &Kinematics::new(model, state))
}

pub fn momentum_from(model: &AgentModel, kin: &Kinematics) -> Vec6 {
    let mut h = Vec6::zeros();
    for (inertia, v) in kin.inertias.iter().zip(&kin.velocities) {
        h += inertia * v.to_vector();
    }
    let g = com_from(model, kin);
    let lin: Vec3 = h.fixed_rows::<3>(0).into();
    let ang: Vec3 = h.fixed_rows::<3>(3).into();
    let ang_g = ang - g.cross(&lin);
    Vec6::new(lin.x, lin.y, lin.z, ang_g.x, ang_g.y, ang_g.z)
}

/// Potential energy with gravity norm `g` along `-z`.
pub fn potential_energy(model: &AgentModel, kin: &Kinematics, gravity: f64) -> f64 {
    model
        .links
        .iter()
        .zip(&kin.link_coms)
        .map(|(l, c)| l.inertia.mass * gravity * c.z)
        .sum()
}

pub fn kinetic_energy(kin: &Kinematics) -> f64 {
    kin.inertias
        .iter()
        .zip(&kin.velocities)
        .map(|(i, v)| 0.5 * v.to_vector().dot(&(i * v.to_vector())))
        .sum()
}

/// Rotational inertia helper for diagonal bodies.
pub fn diag_inertia(ixx: f64, iyy: f64, izz: f64) -> Mat3 {
    Mat3::from_diagonal(&Vec3::new(ixx, iyy, izz))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::{mini_humanoid, planar_arm, random_state, single_body};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_configuration_chains_offsets() {
        let model = planar_arm();
        let state = AgentState::zero(&model);
        let mut expected: Vec<FramePose> = Vec::new();
        for link in model.links() {
            let pose = link.parent.map_or(FramePose::identity(), |p| expected[p].compose(&link.origin));
            let fk = forward_kinematics(&model, &state, &link.name).unwrap();
            assert!((fk.position - pose.position).norm() < 1e-12, "{}", link.name);
            expected.push(pose);
        }
    }

    #[test]
    fn single_revolute_quarter_turn() {
        let links = vec![
            LinkSpec {
                name: "root".into(),
                parent: None,
                joint: JointKind::Fixed,
                origin: FramePose::identity(),
                inertia: SpatialInertia::new(1.0, Vec3::zeros(), diag_inertia(0.01, 0.01, 0.01)),
            },
            LinkSpec {
                name: "arm".into(),
                parent: Some(0),
                joint: JointKind::Revolute { axis: Vec3::z() },
                origin: FramePose::identity(),
                inertia: SpatialInertia::new(1.0, Vec3::zeros(), diag_inertia(0.01, 0.01, 0.01)),
            },
            LinkSpec {
                name: "tip".into(),
                parent: Some(1),
                joint: JointKind::Fixed,
                origin: FramePose::from_translation(Vec3::new(1.0, 0.0, 0.0)),
                inertia: SpatialInertia::zero(),
            },
        ];
        let limits = JointLimits { position: vec![(-3.0, 3.0)], torque: vec![10.0] };
        let model = AgentModel::new("one", links, limits).unwrap();
        let mut state = AgentState::zero(&model);
        state.joints[0] = std::f64::consts::FRAC_PI_2;
        let tip = forward_kinematics(&model, &state, "tip").unwrap();
        assert!((tip.position - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn unknown_frame_is_reported() {
        let model = planar_arm();
        let state = AgentState::zero(&model);
        assert_eq!(
            forward_kinematics(&model, &state, "nope").unwrap_err(),
            ModelError::UnknownFrame("nope".into())
        );
        assert!(jacobian(&model, &state, "nope").is_err());
    }

    #[test]
    fn base_jacobian_is_identity_for_free_body() {
        let model = single_body();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let state = random_state(&model, &mut rng);
        let j = jacobian(&model, &state, model.base_link()).unwrap();
        assert!((j - DMatrix::<f64>::identity(6, 6)).norm() < 1e-12);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let model = mini_humanoid();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let state = random_state(&model, &mut rng);
            for frame in ["left_foot", "right_hand", "torso"] {
                let j = jacobian(&model, &state, frame).unwrap();
                let nu = state.nu();
                let v = &j * &nu;
                let h = 1e-6;
                let mut plus = state.clone();
                plus.integrate_configuration(h);
                let mut minus = state.clone();
                minus.integrate_configuration(-h);
                let pp = forward_kinematics(&model, &plus, frame).unwrap();
                let pm = forward_kinematics(&model, &minus, frame).unwrap();
                let lin = (pp.position - pm.position) / (2.0 * h);
                let w = (pp.rotation.compose(&pm.rotation.transpose())).log() / (2.0 * h);
                assert!((v.rows(0, 3) - lin).norm() < 1e-5, "{frame} {} {}", v.rows(0,3).transpose(), lin.transpose());
                assert!((v.rows(3, 3) - w).norm() < 1e-5, "{frame} {} {}", v.rows(3,3).transpose(), w.transpose());
            }
        }
    }

    #[test]
    fn single_body_mass_matrix_is_its_inertia() {
        let model = single_body();
        let state = AgentState::zero(&model);
        let m = mass_matrix(&model, &state);
        let expected = model.links()[0].inertia.to_matrix();
        assert!((m - DMatrix::from_column_slice(6, 6, expected.as_slice())).norm() < 1e-12);
    }

    #[test]
    fn mass_matrix_symmetric_and_matches_inverse_dynamics_columns() {
        let model = mini_humanoid();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let mut state = random_state(&model, &mut rng);
            let m = mass_matrix(&model, &state);
            assert!((&m - m.transpose()).amax() < 1e-9);
            assert!(m.clone().cholesky().is_some());
            state.base_velocity = Vec6::zeros();
            state.joint_velocities.fill(0.0);
            for j in 0..model.num_dofs() {
                let mut e = DVector::zeros(model.num_dofs());
                e[j] = 1.0;
                let col = inverse_dynamics(&model, &state, &e, 0.0);
                assert!((col - m.column(j)).amax() < 1e-9);
            }
        }
    }

    #[test]
    fn static_weightless_bias_is_zero_and_gravity_is_weight() {
        let model = single_body();
        let state = AgentState::zero(&model);
        assert!(bias_forces(&model, &state, 0.0).norm() < 1e-15);
        let h = bias_forces(&model, &state, 9.81);
        let m = model.total_mass();
        // h holds the weight on the vertical base row: M ν̇ + h = 0 gives ν̇_z = -g
        assert!((h[2] - m * 9.81).abs() < 1e-12);
        let c = model.links()[0].inertia.com;
        assert!((h.rows(3, 3) - c.cross(&Vec3::new(0.0, 0.0, m * 9.81))).norm() < 1e-12);
        let mm = mass_matrix(&model, &state);
        let acc = mm.cholesky().unwrap().solve(&(-h));
        assert!((acc[2] + 9.81).abs() < 1e-12);
    }

    /// Classical RK4 on `(Δp, φ, Δs, ν)` with the base rotation `exp(φ) R₀`, so the
    /// test integrator's error is fourth order and any energy drift points at `M` or `h`.
    fn rk4_step(model: &AgentModel, s0: &AgentState, dt: f64, g: f64) -> AgentState {
        let n = model.num_joints();
        let at = |y: &DVector<f64>| {
            let mut s = s0.clone();
            let phi = Vec3::new(y[3], y[4], y[5]);
            s.base.position += Vec3::new(y[0], y[1], y[2]);
            s.base.rotation = Rotation::exp(&phi).compose(&s0.base.rotation);
            s.joints += y.rows(6, n);
            s.set_nu(&y.rows(6 + n, 6 + n).into_owned());
            s
        };
        let rate = |y: &DVector<f64>| {
            let s = at(y);
            let phi = Vec3::new(y[3], y[4], y[5]);
            let w = Vec3::new(y[6 + n + 3], y[6 + n + 4], y[6 + n + 5]);
            // inverse left Jacobian of SO(3), enough terms for fourth order
            let phidot = w - phi.cross(&w) * 0.5 + phi.cross(&phi.cross(&w)) / 12.0;
            let acc = mass_matrix(model, &s).cholesky().unwrap().solve(&(-bias_forces(model, &s, g)));
            let mut dy = DVector::zeros(y.len());
            dy.fixed_rows_mut::<3>(0).copy_from(&y.fixed_rows::<3>(6 + n));
            dy.fixed_rows_mut::<3>(3).copy_from(&phidot);
            dy.rows_mut(6, n).copy_from(&y.rows(12 + n, n));
            dy.rows_mut(6 + n, 6 + n).copy_from(&acc);
            dy
        };
        let mut y0 = DVector::zeros(12 + 2 * n);
        y0.rows_mut(6 + n, 6 + n).copy_from(&s0.nu());
        let k1 = rate(&y0);
        let k2 = rate(&(&y0 + &k1 * (dt / 2.0)));
        let k3 = rate(&(&y0 + &k2 * (dt / 2.0)));
        let k4 = rate(&(&y0 + &k3 * dt));
        at(&(&y0 + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)))
    }

    #[test]
    fn undriven_motion_conserves_energy() {
        for model in [planar_arm(), mini_humanoid()] {
            let mut rng = ChaCha8Rng::seed_from_u64(21);
            let mut state = random_state(&model, &mut rng);
            let energy = |s: &AgentState| {
                let kin = Kinematics::new(&model, s);
                kinetic_energy(&kin) + potential_energy(&model, &kin, 9.81)
            };
            let e0 = energy(&state);
            let mut drift: f64 = 0.0;
            for _ in 0..10_000 {
                state = rk4_step(&model, &state, 1e-4, 9.81);
                drift = drift.max((energy(&state) - e0).abs());
            }
            assert!(drift < 1e-4, "{}: {drift}", model.name());
        }
    }

    #[test]
    fn momentum_of_translating_body() {
        let model = single_body();
        let mut state = AgentState::zero(&model);
        state.base_velocity = Vec6::new(0.3, -0.2, 1.0, 0.0, 0.0, 0.0);
        let h = momentum(&model, &state);
        let m = model.total_mass();
        assert!((h.fixed_rows::<3>(0) - Vec3::new(0.3, -0.2, 1.0) * m).norm() < 1e-12);
        assert!(h.fixed_rows::<3>(3).norm() < 1e-12);
        assert!(momentum(&model, &AgentState::zero(&model)).norm() < 1e-15);
    }

    #[test]
    fn momentum_matches_per_link_sum() {
        let model = mini_humanoid();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let state = random_state(&model, &mut rng);
            let g = com(&model, &state);
            let mut expected = Vec6::zeros();
            // independent: each link's velocity from its own frame Jacobian, momentum about its CoM
            for link in model.links() {
                let m = link.inertia.mass;
                if m == 0.0 {
                    continue;
                }
                let pose = forward_kinematics(&model, &state, &link.name).unwrap();
                let v = jacobian(&model, &state, &link.name).unwrap() * state.nu();
                let w = Vec3::new(v[3], v[4], v[5]);
                let c = pose.transform_point(&link.inertia.com);
                let vc = Vec3::new(v[0], v[1], v[2]) + w.cross(&(c - pose.position));
                let r = pose.rotation.matrix();
                let ang = r * link.inertia.inertia * r.transpose() * w + (c - g).cross(&(vc * m));
                expected += Vec6::new(vc.x * m, vc.y * m, vc.z * m, ang.x, ang.y, ang.z);
            }
            assert!((momentum(&model, &state) - expected).norm() < 1e-10);
        }
    }

    #[test]
    fn com_symmetry_and_consistency() {
        let model = mini_humanoid();
        let c = com(&model, &AgentState::zero(&model));
        assert!(c.y.abs() < 1e-12, "mirror-symmetric model keeps CoM on the sagittal plane");
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..20 {
            let state = random_state(&model, &mut rng);
            let jc = com_jacobian(&model, &state);
            let lin = momentum(&model, &state).fixed_rows::<3>(0).into_owned();
            let vc = &jc * state.nu();
            assert!((lin - &vc * model.total_mass()).norm() < 1e-10);
            let h = 1e-6;
            let mut plus = state.clone();
            plus.integrate_configuration(h);
            let mut minus = state.clone();
            minus.integrate_configuration(-h);
            let fd = (com(&model, &plus) - com(&model, &minus)) / (2.0 * h);
            assert!((fd - vc).norm() < 1e-5);
        }
    }

    #[test]
    fn rejects_bad_models() {
        let mut links = planar_arm().links().to_vec();
        links[1].joint = JointKind::Revolute { axis: Vec3::new(0.0, 2.0, 0.0) };
        let limits = planar_arm().limits().clone();
        assert!(AgentModel::new("bad", links, limits.clone()).is_err());
        let mut links = planar_arm().links().to_vec();
        links[2].parent = Some(3);
        assert!(AgentModel::new("bad", links, limits.clone()).is_err());
        let links = planar_arm().links().to_vec();
        let mut l2 = limits;
        l2.position[0] = (1.0, -1.0);
        assert!(AgentModel::new("bad", links, l2).is_err());
    }
}
