//! Composite system of several floating-base agents and an optional rigid payload.
//!
//! The composite velocity stacks each agent's `ν_j = (ṗ_B, ω_B, ṡ)` in agent order,
//! followed by the payload velocity `(ṗ_c, ω)` at its CoM. All wrenches are expressed
//! at the contact frame origin with inertial orientation.
//!
//! # Wrench layout
//!
//! The stacked wrench vector **f** is a list of 6D slots, always in this order:
//!
//! 1. environment (surface) contacts of agent 0, agent 1, ... in the order given;
//! 2. environment contacts on the payload (support fixtures);
//! 3. rigid grasps, in the order given.
//!
//! An environment slot is the wrench applied by the environment on the body. A grasp
//! slot is the wrench applied by the agent on the payload at the grasp point; the
//! agent receives its opposite through a negated Jacobian block, so action and
//! reaction share one variable.

use nalgebra::{DMatrix, DVector};

use crate::error::CoupledError;
use crate::model::{self, AgentModel, AgentState, Kinematics};
use crate::spatial::{skew, FramePose, Mat3, Mat6, Rotation, SpatialInertia, Vec3, Vec6};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Body {
    Agent(usize),
    Payload,
}

/// Flat rectangular support with friction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceGeometry {
    pub half_x: f64,
    pub half_y: f64,
    pub mu: f64,
    /// Torsional friction coefficient: `|m_z| ≤ μ_t f_z`.
    pub torsion_mu: f64,
}

/// Connector strength of a rigid grasp (per-component box bounds).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraspLimits {
    pub max_force: f64,
    pub max_moment: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ContactKind {
    Surface(SurfaceGeometry),
    Grasp { payload_frame: String, limits: GraspLimits },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContactSpec {
    pub body: Body,
    pub frame: String,
    pub kind: ContactKind,
}

impl ContactSpec {
    pub fn surface(agent: usize, frame: &str, geometry: SurfaceGeometry) -> Self {
        ContactSpec { body: Body::Agent(agent), frame: frame.into(), kind: ContactKind::Surface(geometry) }
    }

    pub fn grasp(agent: usize, frame: &str, payload_frame: &str, limits: GraspLimits) -> Self {
        ContactSpec {
            body: Body::Agent(agent),
            frame: frame.into(),
            kind: ContactKind::Grasp { payload_frame: payload_frame.into(), limits },
        }
    }

    /// Support under the payload, modeled as a surface contact on a payload frame.
    pub fn fixture(payload_frame: &str, geometry: SurfaceGeometry) -> Self {
        ContactSpec { body: Body::Payload, frame: payload_frame.into(), kind: ContactKind::Surface(geometry) }
    }

    pub fn is_grasp(&self) -> bool {
        matches!(self.kind, ContactKind::Grasp { .. })
    }

    pub fn label(&self) -> String {
        match (&self.body, &self.kind) {
            (Body::Agent(a), ContactKind::Grasp { payload_frame, .. }) => format!("a{a}.{}>{payload_frame}", self.frame),
            (Body::Agent(a), _) => format!("a{a}.{}", self.frame),
            (Body::Payload, _) => format!("payload.{}", self.frame),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PayloadModel {
    pub mass: f64,
    /// Rotational inertia about the CoM in the payload frame.
    pub inertia: Mat3,
    /// Named frames rigidly attached to the payload, relative to its CoM frame.
    pub frames: Vec<(String, FramePose)>,
}

impl PayloadModel {
    pub fn new(mass: f64, inertia: Mat3, frames: Vec<(String, FramePose)>) -> Result<Self, CoupledError> {
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(CoupledError::InvalidPayload(format!("mass must be positive, got {mass}")));
        }
        SpatialInertia::new(mass, Vec3::zeros(), inertia)
            .validate()
            .map_err(|e| CoupledError::InvalidPayload(e.to_string()))?;
        if inertia.symmetric_eigenvalues().min() <= 0.0 {
            return Err(CoupledError::InvalidPayload("inertia must be positive definite".into()));
        }
        for (i, (name, _)) in frames.iter().enumerate() {
            if frames[..i].iter().any(|(n, _)| n == name) {
                return Err(CoupledError::InvalidPayload(format!("duplicate frame `{name}`")));
            }
        }
        Ok(PayloadModel { mass, inertia, frames })
    }

    pub fn frame(&self, name: &str) -> Result<&FramePose, CoupledError> {
        self.frames
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, p)| p)
            .ok_or_else(|| CoupledError::UnknownFrame(format!("payload.{name}")))
    }

    /// `M_ℓ = diag(m I, R I Rᵀ)`.
    pub fn mass_matrix(&self, state: &PayloadState) -> Mat6 {
        let r = state.pose.rotation.matrix();
        let mut m = Mat6::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).fill_diagonal(self.mass);
        m.fixed_view_mut::<3, 3>(3, 3).copy_from(&(r * self.inertia * r.transpose()));
        m
    }

    /// `h_ℓ = (m g ẑ, ω × I ω)`.
    pub fn bias(&self, state: &PayloadState, gravity: f64) -> Vec6 {
        let r = state.pose.rotation.matrix();
        let iw = r * self.inertia * r.transpose();
        let w = state.angular_velocity();
        let gyro = w.cross(&(iw * w));
        Vec6::new(0.0, 0.0, self.mass * gravity, gyro.x, gyro.y, gyro.z)
    }

    pub fn momentum(&self, state: &PayloadState) -> Vec6 {
        let m = self.mass_matrix(state);
        m * state.velocity
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PayloadState {
    /// CoM frame pose.
    pub pose: FramePose,
    /// `(ṗ_c, ω)` with inertial orientation.
    pub velocity: Vec6,
}

impl PayloadState {
    pub fn at_rest(pose: FramePose) -> Self {
        PayloadState { pose, velocity: Vec6::zeros() }
    }

    pub fn linear_velocity(&self) -> Vec3 {
        self.velocity.fixed_rows::<3>(0).into()
    }

    pub fn angular_velocity(&self) -> Vec3 {
        self.velocity.fixed_rows::<3>(3).into()
    }

    pub fn integrate_configuration(&mut self, dt: f64) {
        self.pose.position += self.linear_velocity() * dt;
        self.pose.rotation = Rotation::exp(&(self.angular_velocity() * dt)).compose(&self.pose.rotation).renormalized();
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub agents: Vec<AgentState>,
    pub payload: Option<PayloadState>,
}

impl SystemState {
    pub fn nu(&self) -> DVector<f64> {
        let mut parts: Vec<f64> = Vec::new();
        for a in &self.agents {
            parts.extend(a.nu().iter());
        }
        if let Some(p) = &self.payload {
            parts.extend(p.velocity.iter());
        }
        DVector::from_vec(parts)
    }

    pub fn set_nu(&mut self, nu: &DVector<f64>) {
        let mut off = 0;
        for a in &mut self.agents {
            let n = a.joints.len() + 6;
            a.set_nu(&nu.rows(off, n).into_owned());
            off += n;
        }
        if let Some(p) = &mut self.payload {
            p.velocity = nu.fixed_rows::<6>(off).into();
        }
    }

    pub fn integrate_configuration(&mut self, dt: f64) {
        for a in &mut self.agents {
            a.integrate_configuration(dt);
        }
        if let Some(p) = &mut self.payload {
            p.integrate_configuration(dt);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.agents.iter().all(|a| a.is_finite())
            && self.payload.as_ref().map_or(true, |p| {
                p.pose.position.iter().chain(p.velocity.iter()).all(|x| x.is_finite())
                    && p.pose.rotation.matrix().iter().all(|x| x.is_finite())
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotKind {
    External,
    Internal,
}

/// One 6D entry of the stacked wrench vector.
#[derive(Debug, Clone, PartialEq)]
pub struct WrenchSlot {
    pub contact: ContactSpec,
    pub kind: SlotKind,
    /// Agent whose momentum the slot acts on (`None` for payload fixtures).
    pub agent: Option<usize>,
    frame_index: usize,
}

#[derive(Debug, Clone)]
pub struct CoupledSystem {
    agents: Vec<AgentModel>,
    payload: Option<PayloadModel>,
    slots: Vec<WrenchSlot>,
    gravity: f64,
    dof_offsets: Vec<usize>,
    torque_offsets: Vec<usize>,
    num_dofs: usize,
    num_torques: usize,
}

/// Per-state evaluation of the composite dynamics `M ν̇ + h = B τ + Qᵀ f`, `Q ν = 0`.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub kinematics: Vec<Kinematics>,
    pub mass_matrix: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub selector: DMatrix<f64>,
    pub constraint: DMatrix<f64>,
    /// `Q̇ ν`.
    pub constraint_drift: DVector<f64>,
    /// Contact frame pose of each slot (agent side for grasps).
    pub slot_poses: Vec<FramePose>,
}

/// Grasp matrix `W` (6 × 6k) mapping grasp wrenches to the payload CoM.
#[derive(Debug, Clone)]
pub struct GraspMap {
    pub matrix: DMatrix<f64>,
    /// Slot index of each block column.
    pub slots: Vec<usize>,
}

pub fn assemble(
    agents: Vec<AgentModel>,
    payload: Option<PayloadModel>,
    contacts: Vec<ContactSpec>,
    gravity: f64,
) -> Result<CoupledSystem, CoupledError> {
    for (i, c) in contacts.iter().enumerate() {
        if contacts[..i].iter().any(|o| o.body == c.body && o.frame == c.frame) {
            let agent = match c.body {
                Body::Agent(a) => a,
                Body::Payload => agents.len(),
            };
            return Err(CoupledError::DuplicateContact { agent, frame: c.frame.clone() });
        }
        if let ContactKind::Grasp { payload_frame, .. } = &c.kind {
            let dup = contacts[..i].iter().find(|o| matches!(&o.kind, ContactKind::Grasp { payload_frame: f, .. } if f == payload_frame));
            if dup.is_some() {
                return Err(CoupledError::DuplicateContact { agent: agents.len(), frame: payload_frame.clone() });
            }
        }
    }

    let mut external = Vec::new();
    let mut fixtures = Vec::new();
    let mut internal = Vec::new();
    for c in contacts {
        let frame_index = match c.body {
            Body::Agent(a) => {
                let model = agents.get(a).ok_or_else(|| CoupledError::InvalidContact(format!("no agent {a}")))?;
                model.frame_index(&c.frame).map_err(|_| CoupledError::UnknownFrame(format!("agent {a}: {}", c.frame)))?
            }
            Body::Payload => {
                let p = payload.as_ref().ok_or_else(|| CoupledError::InvalidContact("payload contact without payload".into()))?;
                p.frame(&c.frame)?;
                0
            }
        };
        match &c.kind {
            ContactKind::Surface(g) => {
                if !(g.half_x > 0.0 && g.half_y > 0.0) {
                    return Err(CoupledError::InvalidContact(format!("{}: half-lengths must be positive", c.label())));
                }
                if !(g.mu > 0.0) || !(g.torsion_mu >= 0.0) {
                    return Err(CoupledError::InvalidContact(format!("{}: friction coefficients must be positive", c.label())));
                }
                match c.body {
                    Body::Agent(a) => external.push((a, c, frame_index)),
                    Body::Payload => fixtures.push((c, frame_index)),
                }
            }
            ContactKind::Grasp { payload_frame, limits } => {
                let Body::Agent(a) = c.body else {
                    return Err(CoupledError::InvalidContact("grasps must be on an agent frame".into()));
                };
                let p = payload.as_ref().ok_or_else(|| CoupledError::InvalidContact("grasp without payload".into()))?;
                p.frame(payload_frame)?;
                if !(limits.max_force > 0.0 && limits.max_moment > 0.0) {
                    return Err(CoupledError::InvalidContact(format!("{}: grasp limits must be positive", c.label())));
                }
                internal.push((a, c, frame_index));
            }
        }
    }
    // stable sort keeps the caller's order within each agent
    external.sort_by_key(|(a, _, _)| *a);

    let mut slots = Vec::new();
    for (a, c, fi) in external {
        slots.push(WrenchSlot { contact: c, kind: SlotKind::External, agent: Some(a), frame_index: fi });
    }
    for (c, fi) in fixtures {
        slots.push(WrenchSlot { contact: c, kind: SlotKind::External, agent: None, frame_index: fi });
    }
    for (a, c, fi) in internal {
        slots.push(WrenchSlot { contact: c, kind: SlotKind::Internal, agent: Some(a), frame_index: fi });
    }

    let mut dof_offsets = Vec::new();
    let mut torque_offsets = Vec::new();
    let (mut nd, mut nt) = (0, 0);
    for a in &agents {
        dof_offsets.push(nd);
        torque_offsets.push(nt);
        nd += a.num_dofs();
        nt += a.num_joints();
    }
    if payload.is_some() {
        nd += 6;
    }
    Ok(CoupledSystem { agents, payload, slots, gravity, dof_offsets, torque_offsets, num_dofs: nd, num_torques: nt })
}

/// `[[I, -S(r)], [0, I]]`: velocity of a point at offset `r` from a body-fixed origin.
fn point_map(r: &Vec3) -> Mat6 {
    let mut x = Mat6::identity();
    x.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-skew(r)));
    x
}

impl CoupledSystem {
    pub fn agents(&self) -> &[AgentModel] {
        &self.agents
    }

    pub fn payload(&self) -> Option<&PayloadModel> {
        self.payload.as_ref()
    }

    pub fn gravity(&self) -> f64 {
        self.gravity
    }

    pub fn slots(&self) -> &[WrenchSlot] {
        &self.slots
    }

    pub fn num_slots(&self) -> usize {
        self.slots.len()
    }

    pub fn num_wrenches(&self) -> usize {
        6 * self.slots.len()
    }

    pub fn num_dofs(&self) -> usize {
        self.num_dofs
    }

    pub fn num_torques(&self) -> usize {
        self.num_torques
    }

    pub fn dof_offset(&self, agent: usize) -> usize {
        self.dof_offsets[agent]
    }

    pub fn torque_offset(&self, agent: usize) -> usize {
        self.torque_offsets[agent]
    }

    pub fn payload_offset(&self) -> Option<usize> {
        self.payload.as_ref().map(|_| self.num_dofs - 6)
    }

    pub fn grasp_slots(&self) -> Vec<usize> {
        (0..self.slots.len()).filter(|&i| self.slots[i].kind == SlotKind::Internal).collect()
    }

    /// Total mass of agents and payload.
    pub fn total_mass(&self) -> f64 {
        self.agents.iter().map(|a| a.total_mass()).sum::<f64>() + self.payload.as_ref().map_or(0.0, |p| p.mass)
    }

    /// Same system with only the contacts accepted by `keep`; the slot order is preserved.
    pub fn retain_contacts(&self, keep: impl Fn(&ContactSpec) -> bool) -> CoupledSystem {
        let mut sys = self.clone();
        sys.slots.retain(|s| keep(&s.contact));
        sys
    }

    /// Same system without payload support fixtures.
    pub fn without_fixtures(&self) -> CoupledSystem {
        self.retain_contacts(|c| c.body != Body::Payload)
    }

    pub fn has_fixtures(&self) -> bool {
        self.slots.iter().any(|s| s.contact.body == Body::Payload)
    }

    pub fn check_state(&self, state: &SystemState) -> Result<(), CoupledError> {
        if state.agents.len() != self.agents.len() {
            return Err(CoupledError::InvalidContact(format!(
                "state has {} agents, system has {}",
                state.agents.len(),
                self.agents.len()
            )));
        }
        for (i, (a, s)) in self.agents.iter().zip(&state.agents).enumerate() {
            if s.joints.len() != a.num_joints() || s.joint_velocities.len() != a.num_joints() {
                return Err(CoupledError::InvalidContact(format!("agent {i}: joint vector size mismatch")));
            }
        }
        if self.payload.is_some() != state.payload.is_some() {
            return Err(CoupledError::InvalidPayload("payload state presence does not match the system".into()));
        }
        Ok(())
    }

    pub fn payload_frame_pose(&self, state: &SystemState, frame: &str) -> Result<FramePose, CoupledError> {
        let p = self.payload.as_ref().ok_or_else(|| CoupledError::InvalidPayload("no payload".into()))?;
        let ps = state.payload.as_ref().ok_or_else(|| CoupledError::InvalidPayload("no payload state".into()))?;
        Ok(ps.pose.compose(p.frame(frame)?))
    }

    pub fn evaluate(&self, state: &SystemState) -> Evaluation {
        let kinematics: Vec<Kinematics> =
            self.agents.iter().zip(&state.agents).map(|(m, s)| Kinematics::new(m, s)).collect();
        let n = self.num_dofs;
        let mut mass = DMatrix::zeros(n, n);
        let mut bias = DVector::zeros(n);
        let mut sel = DMatrix::zeros(n, self.num_torques);
        for (i, (m, kin)) in self.agents.iter().zip(&kinematics).enumerate() {
            let off = self.dof_offsets[i];
            let nd = m.num_dofs();
            mass.view_mut((off, off), (nd, nd)).copy_from(&model::mass_matrix_from(m, kin));
            let h = model::inverse_dynamics_from(m, kin, &DVector::zeros(nd), self.gravity);
            bias.rows_mut(off, nd).copy_from(&h);
            sel.view_mut((off + 6, self.torque_offsets[i]), (m.num_joints(), m.num_joints())).fill_with_identity();
        }
        if let (Some(p), Some(ps), Some(off)) = (&self.payload, &state.payload, self.payload_offset()) {
            mass.fixed_view_mut::<6, 6>(off, off).copy_from(&p.mass_matrix(ps));
            bias.fixed_rows_mut::<6>(off).copy_from(&p.bias(ps, self.gravity));
        }

        let k = self.slots.len();
        let mut q = DMatrix::zeros(6 * k, n);
        let mut drift = DVector::zeros(6 * k);
        let mut slot_poses = Vec::with_capacity(k);
        for (si, slot) in self.slots.iter().enumerate() {
            let row = 6 * si;
            match (slot.contact.body, &slot.contact.kind) {
                (Body::Agent(a), kind) => {
                    let kin = &kinematics[a];
                    let j = model::frame_jacobian(&self.agents[a], kin, slot.frame_index);
                    let jd = model::frame_bias_acceleration(kin, slot.frame_index);
                    let off = self.dof_offsets[a];
                    let nd = self.agents[a].num_dofs();
                    slot_poses.push(kin.poses[slot.frame_index]);
                    match kind {
                        ContactKind::Surface(_) => {
                            q.view_mut((row, off), (6, nd)).copy_from(&j);
                            drift.fixed_rows_mut::<6>(row).copy_from(&jd);
                        }
                        ContactKind::Grasp { payload_frame, .. } => {
                            q.view_mut((row, off), (6, nd)).copy_from(&(-j));
                            let (jp, jpd) = self.payload_point_terms(state, payload_frame);
                            let poff = self.payload_offset().expect("grasp implies payload");
                            q.fixed_view_mut::<6, 6>(row, poff).copy_from(&jp);
                            drift.fixed_rows_mut::<6>(row).copy_from(&(jpd - jd));
                        }
                    }
                }
                (Body::Payload, _) => {
                    let (jp, jpd) = self.payload_point_terms(state, &slot.contact.frame);
                    let poff = self.payload_offset().expect("fixture implies payload");
                    q.fixed_view_mut::<6, 6>(row, poff).copy_from(&jp);
                    drift.fixed_rows_mut::<6>(row).copy_from(&jpd);
                    slot_poses.push(self.payload_frame_pose(state, &slot.contact.frame).expect("validated frame"));
                }
            }
        }
        Evaluation { kinematics, mass_matrix: mass, bias, selector: sel, constraint: q, constraint_drift: drift, slot_poses }
    }

    /// Jacobian block and `J̇ν` of a payload-fixed frame in payload columns.
    fn payload_point_terms(&self, state: &SystemState, frame: &str) -> (Mat6, Vec6) {
        let ps = state.payload.as_ref().expect("payload state");
        let pose = self.payload_frame_pose(state, frame).expect("validated frame");
        let r = pose.position - ps.pose.position;
        let w = ps.angular_velocity();
        let a = w.cross(&w.cross(&r));
        (point_map(&r), Vec6::new(a.x, a.y, a.z, 0.0, 0.0, 0.0))
    }

    /// Constraint matrix `Q` and the drift term `Q̇ν`.
    pub fn constraint_matrix(&self, state: &SystemState) -> (DMatrix<f64>, DVector<f64>) {
        let e = self.evaluate(state);
        (e.constraint, e.constraint_drift)
    }

    /// Position-level closure error per slot, whose time derivative is `Q ν`.
    ///
    /// Environment slots are measured against `anchors` (one pose per environment
    /// slot, in slot order); grasp slots compare the payload grasp frame to the hand.
    pub fn closure_error(&self, state: &SystemState, anchors: &[FramePose]) -> DVector<f64> {
        let eval_poses = self.slot_poses(state);
        let mut e = DVector::zeros(6 * self.slots.len());
        let mut anchor = anchors.iter();
        for (si, slot) in self.slots.iter().enumerate() {
            let err = match &slot.contact.kind {
                ContactKind::Surface(_) => {
                    let a = anchor.next().expect("one anchor per environment slot");
                    eval_poses[si].error_to(a)
                }
                ContactKind::Grasp { payload_frame, .. } => {
                    let g = self.payload_frame_pose(state, payload_frame).expect("validated frame");
                    g.error_to(&eval_poses[si])
                }
            };
            e.fixed_rows_mut::<6>(6 * si).copy_from(&err);
        }
        e
    }

    /// Contact frame poses in slot order (agent side for grasps).
    pub fn slot_poses(&self, state: &SystemState) -> Vec<FramePose> {
        self.slots
            .iter()
            .map(|slot| match slot.contact.body {
                Body::Agent(a) => {
                    model::forward_kinematics(&self.agents[a], &state.agents[a], &slot.contact.frame).expect("validated frame")
                }
                Body::Payload => self.payload_frame_pose(state, &slot.contact.frame).expect("validated frame"),
            })
            .collect()
    }

    /// Poses of the environment slots, used as closure anchors.
    pub fn environment_anchors(&self, state: &SystemState) -> Vec<FramePose> {
        let poses = self.slot_poses(state);
        self.slots.iter().zip(poses).filter(|(s, _)| s.kind == SlotKind::External).map(|(_, p)| p).collect()
    }

    pub fn grasp_matrix(&self, state: &SystemState) -> Result<GraspMap, CoupledError> {
        let slots = self.grasp_slots();
        if slots.is_empty() {
            return Err(CoupledError::NoGraspContacts);
        }
        let ps = state.payload.as_ref().ok_or(CoupledError::NoGraspContacts)?;
        let mut w = DMatrix::zeros(6, 6 * slots.len());
        for (c, &si) in slots.iter().enumerate() {
            let ContactKind::Grasp { payload_frame, .. } = &self.slots[si].contact.kind else { unreachable!() };
            let pose = self.payload_frame_pose(state, payload_frame)?;
            let r = pose.position - ps.pose.position;
            w.fixed_view_mut::<6, 6>(0, 6 * c).copy_from(&point_map(&r).transpose());
        }
        Ok(GraspMap { matrix: w, slots })
    }

    /// Sum of the per-agent and payload momenta about the total CoM.
    pub fn total_momentum(&self, state: &SystemState, eval: &Evaluation) -> Vec6 {
        let c = self.total_com(state, eval);
        let mut lin = Vec3::zeros();
        let mut ang = Vec3::zeros();
        for (i, m) in self.agents.iter().enumerate() {
            let h = model::momentum_from(m, &eval.kinematics[i]);
            let g = model::com_from(m, &eval.kinematics[i]);
            let l: Vec3 = h.fixed_rows::<3>(0).into();
            lin += l;
            ang += Vec3::from(h.fixed_rows::<3>(3)) + (g - c).cross(&l);
        }
        if let (Some(p), Some(ps)) = (&self.payload, &state.payload) {
            let h = p.momentum(ps);
            let l: Vec3 = h.fixed_rows::<3>(0).into();
            lin += l;
            ang += Vec3::from(h.fixed_rows::<3>(3)) + (ps.pose.position - c).cross(&l);
        }
        Vec6::new(lin.x, lin.y, lin.z, ang.x, ang.y, ang.z)
    }

    pub fn total_com(&self, state: &SystemState, eval: &Evaluation) -> Vec3 {
        let mut c = Vec3::zeros();
        for (i, m) in self.agents.iter().enumerate() {
            c += model::com_from(m, &eval.kinematics[i]) * m.total_mass();
        }
        if let (Some(p), Some(ps)) = (&self.payload, &state.payload) {
            c += ps.pose.position * p.mass;
        }
        c / self.total_mass()
    }

    /// Kinetic and potential energy of the whole system.
    pub fn energy(&self, state: &SystemState, eval: &Evaluation) -> (f64, f64) {
        let mut kinetic = 0.0;
        let mut potential = 0.0;
        for (i, m) in self.agents.iter().enumerate() {
            kinetic += model::kinetic_energy(&eval.kinematics[i]);
            potential += model::potential_energy(m, &eval.kinematics[i], self.gravity);
        }
        if let (Some(p), Some(ps)) = (&self.payload, &state.payload) {
            kinetic += 0.5 * ps.velocity.dot(&(p.mass_matrix(ps) * ps.velocity));
            potential += p.mass * self.gravity * ps.pose.position.z;
        }
        (kinetic, potential)
    }
}

/// Orthonormal basis of the null space of the grasp matrix (the squeeze wrenches).
pub fn squeeze_basis(g: &GraspMap) -> Result<DMatrix<f64>, CoupledError> {
    let cols = g.matrix.ncols();
    let mut padded = DMatrix::zeros(cols, cols);
    padded.view_mut((0, 0), (6, cols)).copy_from(&g.matrix);
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("requested");
    let smax = svd.singular_values.max();
    let null: Vec<usize> = (0..cols).filter(|&i| svd.singular_values[i] <= 1e-10 * smax).collect();
    if null.is_empty() {
        return Err(CoupledError::FullRank);
    }
    let mut basis = DMatrix::zeros(cols, null.len());
    for (c, &i) in null.iter().enumerate() {
        basis.set_column(c, &vt.row(i).transpose());
    }
    Ok(basis)
}
