//! Shared whole-body controller: momentum and payload tasks, the affine torque map
//! `τ(f) = Λ f + λ`, contact inequalities and the force-ergonomics QP.

use nalgebra::{DMatrix, DVector};

use crate::coupled::{Body, ContactKind, CoupledSystem, Evaluation, PayloadState, SlotKind, SystemState};
use crate::ergonomics::{project_closure, quintic, Stance};
use crate::error::ControlError;
use crate::model::{self, AgentModel, AgentState};
use crate::qp::{self, QpError, QpProblem};
use crate::spatial::{skew, FramePose, Mat6, Rotation, Vec3, Vec6};

/// Relative singular value below which a row of `Q M⁻¹ B` is treated as structurally
/// unactuated (payload fixtures); such rows become equality constraints on `f`.
const STRUCTURAL_ZERO: f64 = 1e-12;
/// Rank tolerance of the minimum-distance torque solution.
const RANK_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerGains {
    pub momentum_kp: Vec<Mat6>,
    pub total_kp: Mat6,
    /// CoM position feedback on the linear momentum rows, per agent (1/s²).
    pub com_ki: Vec<f64>,
    pub total_com_ki: f64,
    pub payload_kp: Vec6,
    pub payload_kd: Vec6,
    pub postural_kp: Vec<DMatrix<f64>>,
    pub postural_kd: Vec<DMatrix<f64>>,
    /// Effort weights `k_τj`; `K_τ = blockdiag(k_τj I)`.
    pub effort: Vec<f64>,
    pub regularization: f64,
}

fn is_spd(m: &DMatrix<f64>) -> bool {
    (m - m.transpose()).amax() <= 1e-9 * (1.0 + m.amax()) && m.clone().cholesky().is_some()
}

impl ControllerGains {
    /// Diagonal gains shared by all agents.
    pub fn uniform(system: &CoupledSystem, momentum_kp: f64, payload_kp: f64, payload_kd: f64, postural_kp: f64, postural_kd: f64) -> Self {
        let n = system.agents().len();
        ControllerGains {
            momentum_kp: vec![Mat6::identity() * momentum_kp; n],
            total_kp: Mat6::identity() * momentum_kp,
            com_ki: vec![0.0; n],
            total_com_ki: 0.0,
            payload_kp: Vec6::repeat(payload_kp),
            payload_kd: Vec6::repeat(payload_kd),
            postural_kp: system.agents().iter().map(|a| DMatrix::identity(a.num_joints(), a.num_joints()) * postural_kp).collect(),
            postural_kd: system.agents().iter().map(|a| DMatrix::identity(a.num_joints(), a.num_joints()) * postural_kd).collect(),
            effort: vec![1.0; n],
            regularization: 1e-6,
        }
    }

    /// Diagonal postural gains `kp·diag(M_ss)`, `kd·diag(M_ss)` taken from the joint-space
    /// inertia at `state`, so that every joint sees the same stiffness per unit inertia.
    pub fn inertia_scaled_posture(mut self, system: &CoupledSystem, state: &SystemState, kp: f64, kd: f64) -> Self {
        for (i, m) in system.agents().iter().enumerate() {
            let mass = model::mass_matrix(m, &state.agents[i]);
            let n = m.num_joints();
            let d = DVector::from_fn(n, |k, _| mass[(6 + k, 6 + k)]);
            self.postural_kp[i] = DMatrix::from_diagonal(&(&d * kp));
            self.postural_kd[i] = DMatrix::from_diagonal(&(&d * kd));
        }
        self
    }

    pub fn validate(&self, system: &CoupledSystem) -> Result<(), ControlError> {
        let n = system.agents().len();
        let bad = |m: String| Err(ControlError::InvalidGains(m));
        if self.momentum_kp.len() != n || self.postural_kp.len() != n || self.postural_kd.len() != n || self.effort.len() != n || self.com_ki.len() != n {
            return bad(format!("expected per-agent gains for {n} agents"));
        }
        for (i, k) in self.momentum_kp.iter().chain(std::iter::once(&self.total_kp)).enumerate() {
            let k = DMatrix::from_column_slice(6, 6, k.as_slice());
            if !is_spd(&k) {
                return bad(format!("momentum_kp[{i}] is not symmetric positive definite"));
            }
        }
        if self.payload_kp.iter().chain(self.payload_kd.iter()).any(|v| !(*v > 0.0)) {
            return bad("payload gains must be positive".into());
        }
        for (i, a) in system.agents().iter().enumerate() {
            let nj = a.num_joints();
            for (name, k) in [("postural_kp", &self.postural_kp[i]), ("postural_kd", &self.postural_kd[i])] {
                if k.shape() != (nj, nj) {
                    return bad(format!("{name}[{i}] must be {nj}x{nj}"));
                }
                if !is_spd(k) {
                    return bad(format!("{name}[{i}] is not symmetric positive definite"));
                }
            }
        }
        if self.effort.iter().any(|k| !(*k > 0.0)) {
            return bad("effort weights must be positive".into());
        }
        if self.com_ki.iter().chain(std::iter::once(&self.total_com_ki)).any(|k| !(*k >= 0.0)) {
            return bad("com_ki must be non-negative".into());
        }
        if !(self.regularization > 0.0) {
            return bad("regularization must be positive".into());
        }
        Ok(())
    }

    /// Diagonal of `K_τ` over the composite torque vector.
    pub fn effort_diagonal(&self, system: &CoupledSystem) -> DVector<f64> {
        let mut d = DVector::zeros(system.num_torques());
        for (i, a) in system.agents().iter().enumerate() {
            d.rows_mut(system.torque_offset(i), a.num_joints()).fill(self.effort[i]);
        }
        d
    }
}

// ---------------------------------------------------------------------------
// references

/// Desired payload motion.
#[derive(Debug, Clone, PartialEq)]
pub struct PayloadReference {
    pub pose: FramePose,
    /// `(ṗ, ω)`.
    pub velocity: Vec6,
    /// `(p̈, ω̇)`.
    pub acceleration: Vec6,
}

/// A configuration of the whole system: joints of each agent and the payload pose.
#[derive(Debug, Clone, PartialEq)]
pub struct Posture {
    pub joints: Vec<DVector<f64>>,
    pub payload: Option<FramePose>,
}

/// Minimum-jerk transition between two postures.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub start: f64,
    pub duration: f64,
    pub to: Posture,
}

/// Reference of one agent, with its base placed by the fixed foot.
#[derive(Debug, Clone)]
pub struct AgentReference {
    pub state: AgentState,
    pub joint_acceleration: DVector<f64>,
    pub com: Vec3,
    pub momentum: Vec6,
    pub momentum_rate: Vec6,
}

#[derive(Debug, Clone)]
pub struct TaskSample {
    pub agents: Vec<AgentReference>,
    pub total_com: Vec3,
    pub total_momentum: Vec6,
    pub total_momentum_rate: Vec6,
    pub payload: Option<PayloadReference>,
}

/// Piecewise minimum-jerk references: hold `initial`, then run each transition in turn.
///
/// The payload pose follows a minimum-jerk path on position and on the rotation
/// geodesic. Joint references start from the quintic blend in joint space, projected
/// back onto the closure manifold for the current payload pose, so that the momentum
/// references are kinematically reachable; their time derivatives are taken by central
/// differences. Each agent's base follows from its anchor foot held fixed. The momentum
/// references are the full centroidal momenta of that reference motion, angular part
/// included, so a reconfiguration is not braked by the momentum task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskReferences {
    pub stance: Stance,
    pub initial: Posture,
    pub transitions: Vec<Transition>,
}

/// Time step of the reference differentiation (s).
const REFERENCE_FD_STEP: f64 = 1e-3;

fn pose_interpolation(a: &FramePose, b: &FramePose, s: (f64, f64, f64)) -> PayloadReference {
    let dp = b.position - a.position;
    let phi = a.rotation.transpose().compose(&b.rotation).log();
    let rot = a.rotation.compose(&Rotation::exp(&(phi * s.0)));
    let axis = a.rotation.apply(&phi);
    let (v, w) = (dp * s.1, axis * s.1);
    let (acc, alpha) = (dp * s.2, axis * s.2);
    PayloadReference {
        pose: FramePose::new(a.position + dp * s.0, rot),
        velocity: Vec6::new(v.x, v.y, v.z, w.x, w.y, w.z),
        acceleration: Vec6::new(acc.x, acc.y, acc.z, alpha.x, alpha.y, alpha.z),
    }
}

/// Agent state at joints `s` with `frame` held at `anchor`, moving with `ṡ`, and its `ν̇` for `s̈`.
pub fn anchored_state(
    model: &AgentModel,
    frame: usize,
    anchor: &FramePose,
    s: &DVector<f64>,
    sd: &DVector<f64>,
    sdd: &DVector<f64>,
) -> (AgentState, DVector<f64>) {
    let n = model.num_joints();
    let local = model::Kinematics::new(model, &AgentState::at_rest(FramePose::identity(), s.clone()));
    let base = anchor.compose(&local.poses[frame].inverse());
    let mut state = AgentState::at_rest(base, s.clone());
    let kin = model::Kinematics::new(model, &state);
    let j = model::frame_jacobian(model, &kin, frame);
    let jb = j.columns(0, 6).into_owned();
    let js = j.columns(6, n).into_owned();
    let lu = jb.lu();
    let vb = lu.solve(&(-(&js * sd))).expect("base block of an anchor Jacobian is invertible");
    state.base_velocity = Vec6::from_column_slice(vb.as_slice());
    state.joint_velocities = sd.clone();
    let kin = model::Kinematics::new(model, &state);
    let bias = model::frame_bias_acceleration(&kin, frame);
    let ab = lu.solve(&(-(&js * sdd) - DVector::from_column_slice(bias.as_slice()))).expect("invertible");
    let mut acc = DVector::zeros(n + 6);
    acc.rows_mut(0, 6).copy_from(&ab);
    acc.rows_mut(6, n).copy_from(sdd);
    (state, acc)
}

impl TaskReferences {
    /// Constant references at `posture`.
    pub fn hold(stance: Stance, posture: Posture) -> Self {
        TaskReferences { stance, initial: posture, transitions: Vec::new() }
    }

    /// Appends a transition to `to` lasting `duration`, starting at `start`.
    pub fn then(mut self, start: f64, duration: f64, to: Posture) -> Self {
        self.transitions.push(Transition { start, duration, to });
        self
    }

    pub fn end_time(&self) -> f64 {
        self.transitions.last().map_or(0.0, |t| t.start + t.duration)
    }

    /// Active segment at `t` as (from, to, time scaling).
    fn segment(&self, t: f64) -> (&Posture, &Posture, (f64, f64, f64), f64) {
        let mut from = &self.initial;
        for tr in &self.transitions {
            if t < tr.start {
                break;
            }
            if t < tr.start + tr.duration {
                return (from, &tr.to, quintic((t - tr.start) / tr.duration), tr.duration);
            }
            from = &tr.to;
        }
        (from, from, (0.0, 0.0, 0.0), 1.0)
    }

    fn payload_at(&self, t: f64) -> Option<PayloadReference> {
        let (from, to, (s, ds, dds), dur) = self.segment(t);
        match (&from.payload, &to.payload) {
            (Some(a), Some(b)) => Some(pose_interpolation(a, b, (s, ds / dur, dds / (dur * dur)))),
            _ => None,
        }
    }

    /// Closure-consistent joint references at `t`.
    fn joints_at(&self, system: &CoupledSystem, t: f64) -> Vec<DVector<f64>> {
        let (from, to, (s, _, _), _) = self.segment(t);
        let blend: Vec<DVector<f64>> = from.joints.iter().zip(&to.joints).map(|(a, b)| a + (b - a) * s).collect();
        if s == 0.0 || s == 1.0 {
            return blend;
        }
        let payload = self.payload_at(t).map(|p| p.pose);
        project_closure(system, &self.stance, &blend, payload.as_ref(), 1e-12).unwrap_or(blend)
    }

    fn in_transition(&self, t: f64) -> bool {
        let h = 2.0 * REFERENCE_FD_STEP;
        self.transitions.iter().any(|tr| t + h > tr.start && t - h < tr.start + tr.duration)
    }

    /// Reference states, CoMs and centroidal momenta at `t`, given joints at `t` and `t ± h`.
    fn snapshot(&self, system: &CoupledSystem, t: f64, q: &[DVector<f64>], qm: &[DVector<f64>], qp: &[DVector<f64>]) -> Snapshot {
        let h = REFERENCE_FD_STEP;
        let zero = |v: &DVector<f64>| DVector::zeros(v.len());
        let mut out = Snapshot::default();
        let mut lin = Vec3::zeros();
        let mut ang = Vec3::zeros();
        let mut com = Vec3::zeros();
        for (i, m) in system.agents().iter().enumerate() {
            let (anchor_frame, anchor) = &self.stance.feet[i][0];
            let frame = m.frame_index(anchor_frame).expect("anchor frame validated");
            let qd = (&qp[i] - &qm[i]) / (2.0 * h);
            let (state, _) = anchored_state(m, frame, anchor, &q[i], &qd, &zero(&qd));
            let kin = model::Kinematics::new(m, &state);
            let hj = model::momentum_from(m, &kin);
            let c = model::com_from(m, &kin);
            let l: Vec3 = hj.fixed_rows::<3>(0).into();
            lin += l;
            ang += Vec3::from(hj.fixed_rows::<3>(3)) + c.cross(&l);
            com += c * m.total_mass();
            out.states.push(state);
            out.coms.push(c);
            out.momenta.push(hj);
        }
        out.payload = self.payload_at(t);
        if let (Some(r), Some(p)) = (&out.payload, system.payload()) {
            let hp = p.momentum(&PayloadState { pose: r.pose, velocity: r.velocity });
            let l: Vec3 = hp.fixed_rows::<3>(0).into();
            lin += l;
            ang += Vec3::from(hp.fixed_rows::<3>(3)) + r.pose.position.cross(&l);
            com += r.pose.position * p.mass;
        }
        let c = com / system.total_mass();
        // transport the angular momentum from the origin to the total CoM
        let ang = ang - c.cross(&lin);
        out.total_com = c;
        out.total = Vec6::new(lin.x, lin.y, lin.z, ang.x, ang.y, ang.z);
        out
    }

    pub fn sample(&self, system: &CoupledSystem, t: f64) -> TaskSample {
        let h = REFERENCE_FD_STEP;
        if !self.in_transition(t) {
            let q = self.joints_at(system, t);
            let s = self.snapshot(system, t, &q, &q, &q);
            return TaskSample {
                agents: s
                    .states
                    .into_iter()
                    .zip(s.coms)
                    .map(|(state, com)| AgentReference {
                        joint_acceleration: DVector::zeros(state.joints.len()),
                        state,
                        com,
                        momentum: Vec6::zeros(),
                        momentum_rate: Vec6::zeros(),
                    })
                    .collect(),
                total_com: s.total_com,
                total_momentum: Vec6::zeros(),
                total_momentum_rate: Vec6::zeros(),
                payload: s.payload,
            };
        }
        let q: Vec<Vec<DVector<f64>>> = (-2..=2).map(|k| self.joints_at(system, t + k as f64 * h)).collect();
        let now = self.snapshot(system, t, &q[2], &q[1], &q[3]);
        let before = self.snapshot(system, t - h, &q[1], &q[0], &q[2]);
        let after = self.snapshot(system, t + h, &q[3], &q[2], &q[4]);
        let agents = now
            .states
            .into_iter()
            .enumerate()
            .map(|(i, state)| AgentReference {
                joint_acceleration: (&q[3][i] - &q[2][i] * 2.0 + &q[1][i]) / (h * h),
                state,
                com: now.coms[i],
                momentum: now.momenta[i],
                momentum_rate: (after.momenta[i] - before.momenta[i]) / (2.0 * h),
            })
            .collect();
        TaskSample {
            agents,
            total_com: now.total_com,
            total_momentum: now.total,
            total_momentum_rate: (after.total - before.total) / (2.0 * h),
            payload: now.payload,
        }
    }
}

#[derive(Default)]
struct Snapshot {
    states: Vec<AgentState>,
    coms: Vec<Vec3>,
    momenta: Vec<Vec6>,
    total_com: Vec3,
    total: Vec6,
    payload: Option<PayloadReference>,
}

// ---------------------------------------------------------------------------
// tasks

/// Affine momentum-rate map `Ḣ(f) = X f + m g` with the desired rates.
///
/// Rows are grouped by six: agent 0, agent 1, ..., then the total momentum.
#[derive(Debug, Clone)]
pub struct MomentumTask {
    pub map: DMatrix<f64>,
    pub offset: DVector<f64>,
    pub desired_rate: DVector<f64>,
    pub measured: DVector<f64>,
}

/// `X_{G←p}`: transports a wrench applied at `p` to the point `g`.
fn wrench_to(p: &Vec3, g: &Vec3) -> Mat6 {
    let mut x = Mat6::identity();
    x.fixed_view_mut::<3, 3>(3, 0).copy_from(&skew(&(p - g)));
    x
}

pub fn momentum_task(system: &CoupledSystem, state: &SystemState, eval: &Evaluation, gains: &ControllerGains, refs: &TaskSample) -> MomentumTask {
    let na = system.agents().len();
    let nf = system.num_wrenches();
    let g = system.gravity();
    let mut map = DMatrix::zeros(6 * (na + 1), nf);
    let mut offset = DVector::zeros(6 * (na + 1));
    let mut desired = DVector::zeros(6 * (na + 1));
    let mut measured = DVector::zeros(6 * (na + 1));

    let coms: Vec<Vec3> = system.agents().iter().zip(&eval.kinematics).map(|(m, k)| model::com_from(m, k)).collect();
    let total_com = system.total_com(state, eval);
    for (si, slot) in system.slots().iter().enumerate() {
        let p = eval.slot_poses[si].position;
        if let Some(a) = slot.agent {
            let sign = if slot.kind == SlotKind::Internal { -1.0 } else { 1.0 };
            map.view_mut((6 * a, 6 * si), (6, 6)).copy_from(&(wrench_to(&p, &coms[a]) * sign));
        }
        if slot.kind == SlotKind::External {
            map.view_mut((6 * na, 6 * si), (6, 6)).copy_from(&wrench_to(&p, &total_com));
        }
    }
    for (a, m) in system.agents().iter().enumerate() {
        offset[6 * a + 2] = -m.total_mass() * g;
        let h = model::momentum_from(m, &eval.kinematics[a]);
        let r = &refs.agents[a];
        let mut rate = r.momentum_rate - gains.momentum_kp[a] * (h - r.momentum);
        let dc = (coms[a] - r.com) * (gains.com_ki[a] * m.total_mass());
        rate.fixed_rows_mut::<3>(0).axpy(-1.0, &dc, 1.0);
        desired.fixed_rows_mut::<6>(6 * a).copy_from(&rate);
        measured.fixed_rows_mut::<6>(6 * a).copy_from(&h);
    }
    offset[6 * na + 2] = -system.total_mass() * g;
    let h = system.total_momentum(state, eval);
    let mut rate = refs.total_momentum_rate - gains.total_kp * (h - refs.total_momentum);
    let dc = (total_com - refs.total_com) * (gains.total_com_ki * system.total_mass());
    rate.fixed_rows_mut::<3>(0).axpy(-1.0, &dc, 1.0);
    desired.fixed_rows_mut::<6>(6 * na).copy_from(&rate);
    measured.fixed_rows_mut::<6>(6 * na).copy_from(&h);
    MomentumTask { map, offset, desired_rate: desired, measured }
}

/// Payload Newton-Euler task `map f = M_ℓ v̇* + h_ℓ`.
#[derive(Debug, Clone)]
pub struct PayloadTask {
    pub map: DMatrix<f64>,
    pub target: DVector<f64>,
    pub desired_acceleration: Vec6,
    pub mass_matrix: Mat6,
    pub bias: Vec6,
}

impl PayloadTask {
    /// `v̇_ℓ(f) = M_ℓ⁻¹ (map f − h_ℓ)`.
    pub fn acceleration(&self, f: &DVector<f64>) -> Vec6 {
        let w = &self.map * f;
        let rhs = Vec6::from_column_slice(w.as_slice()) - self.bias;
        self.mass_matrix.lu().solve(&rhs).expect("payload mass matrix is invertible")
    }
}

/// Desired payload acceleration `v̇* = (p̈_d, ω̇_d) − K_d (v − v_d) − K_p (p − p_d, sk(R R_dᵀ)^∨)`.
pub fn payload_acceleration(state: &crate::coupled::PayloadState, gains: &ControllerGains, r: &PayloadReference) -> Vec6 {
    let e = state.pose.error_to(&r.pose);
    let ev = state.velocity - r.velocity;
    r.acceleration - gains.payload_kd.component_mul(&ev) - gains.payload_kp.component_mul(&e)
}

pub fn payload_task(system: &CoupledSystem, state: &SystemState, eval: &Evaluation, gains: &ControllerGains, r: &PayloadReference) -> Option<PayloadTask> {
    let (p, ps) = (system.payload()?, state.payload.as_ref()?);
    let c = ps.pose.position;
    let mut map = DMatrix::zeros(6, system.num_wrenches());
    for (si, slot) in system.slots().iter().enumerate() {
        let point = match (&slot.contact.body, &slot.contact.kind) {
            (Body::Payload, _) => eval.slot_poses[si].position,
            (_, ContactKind::Grasp { payload_frame, .. }) => system.payload_frame_pose(state, payload_frame).ok()?.position,
            _ => continue,
        };
        map.view_mut((0, 6 * si), (6, 6)).copy_from(&wrench_to(&point, &c));
    }
    let desired = payload_acceleration(ps, gains, r);
    let mass_matrix = p.mass_matrix(ps);
    let bias = p.bias(ps, system.gravity());
    let target = mass_matrix * desired + bias;
    Some(PayloadTask { map, target: DVector::from_column_slice(target.as_slice()), desired_acceleration: desired, mass_matrix, bias })
}

// ---------------------------------------------------------------------------
// torque map

/// `τ(f) = Λ f + λ + N u₀`, plus equality rows on `f` for unactuated constraint directions.
///
/// The postural part `N u₀` is kept out of the effort objective: left inside, the
/// squeeze wrenches would be chosen to cancel it (`−N Bᵀ Qᵀ f` spans the same space),
/// and the internal motions would lose their only position feedback.
#[derive(Debug, Clone)]
pub struct TorqueMap {
    pub lambda: DMatrix<f64>,
    pub offset: DVector<f64>,
    pub postural: DVector<f64>,
    pub consistency_matrix: DMatrix<f64>,
    pub consistency_vector: DVector<f64>,
    /// `P = Q M⁻¹ B` and `r(f) = r0 + R f` of the eliminated constraint `P τ = r(f)`.
    pub p: DMatrix<f64>,
    pub r0: DVector<f64>,
    pub r: DMatrix<f64>,
}

impl TorqueMap {
    pub fn torques(&self, f: &DVector<f64>) -> DVector<f64> {
        &self.lambda * f + &self.offset + &self.postural
    }

    /// The part of the torques weighed by the effort objective.
    pub fn effort_torques(&self, f: &DVector<f64>) -> DVector<f64> {
        &self.lambda * f + &self.offset
    }

    /// `‖P τ − r(f)‖∞`.
    pub fn residual(&self, tau: &DVector<f64>, f: &DVector<f64>) -> f64 {
        (&self.p * tau - &self.r0 - &self.r * f).amax()
    }
}

/// Postural law `u₀ = −K_p (s − s^d) − K_d (ṡ − ṡ^d)`, stacked over agents.
pub fn postural_law(system: &CoupledSystem, state: &SystemState, gains: &ControllerGains, refs: &TaskSample) -> DVector<f64> {
    let mut u = DVector::zeros(system.num_torques());
    for (i, a) in system.agents().iter().enumerate() {
        let r = &refs.agents[i].state;
        let s = &state.agents[i];
        let ui = -(&gains.postural_kp[i] * (&s.joints - &r.joints)) - &gains.postural_kd[i] * (&s.joint_velocities - &r.joint_velocities);
        u.rows_mut(system.torque_offset(i), a.num_joints()).copy_from(&ui);
    }
    u
}

/// Minimum-distance torques to `τ₀(f) = h_s − Q_sᵀ f + u₀` among those satisfying
/// `Q M⁻¹ B τ = −Q̇ν − Q M⁻¹ (Qᵀ f − h)`.
pub fn torque_parametrization(eval: &Evaluation, postural: &DVector<f64>) -> Result<TorqueMap, ControlError> {
    let m_chol = eval.mass_matrix.clone().cholesky().ok_or(ControlError::SingularContacts { sigma: 0.0 })?;
    let q = &eval.constraint;
    let b = &eval.selector;
    let minv_b = m_chol.solve(b);
    let minv_qt = m_chol.solve(&q.transpose());
    let minv_h = m_chol.solve(&eval.bias);
    let p = q * &minv_b;
    let r = -(q * &minv_qt);
    let r0 = -&eval.constraint_drift + q * &minv_h;

    let (rows, cols) = p.shape();
    // pad columns so the thin SVD still returns a complete left basis
    let width = rows.max(cols);
    let mut padded = DMatrix::zeros(rows, width);
    padded.view_mut((0, 0), (rows, cols)).copy_from(&p);
    let svd = padded.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let smax = svd.singular_values.max();
    let mut pinv = DMatrix::zeros(cols, rows);
    let mut cons_rows = Vec::new();
    for i in 0..rows {
        let sigma = svd.singular_values[i];
        let ui = u.column(i).into_owned();
        if sigma > RANK_TOL * smax {
            let vi = vt.row(i).columns(0, cols).transpose();
            pinv += &vi * ui.transpose() / sigma;
        } else if sigma > STRUCTURAL_ZERO * smax {
            return Err(ControlError::SingularContacts { sigma: sigma / smax });
        } else {
            cons_rows.push(ui);
        }
    }
    let nf = q.nrows();
    let mut cm = DMatrix::zeros(cons_rows.len(), nf);
    let mut cv = DVector::zeros(cons_rows.len());
    for (k, ui) in cons_rows.iter().enumerate() {
        cm.set_row(k, &(ui.transpose() * &r));
        cv[k] = -ui.dot(&r0);
    }
    let null = DMatrix::identity(cols, cols) - &pinv * &p;
    let bt = b.transpose();
    let lambda = &pinv * &r - &null * (&bt * q.transpose());
    let offset = &pinv * &r0 + &null * (&bt * &eval.bias);
    let postural = &null * postural;
    Ok(TorqueMap { lambda, offset, postural, consistency_matrix: cm, consistency_vector: cv, p, r0, r })
}

// ---------------------------------------------------------------------------
// inequalities

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InequalityOptions {
    /// Minimum normal force on surface contacts.
    pub min_normal_force: f64,
    /// Strictness margin as a fraction of the total weight.
    pub margin: f64,
}

impl Default for InequalityOptions {
    fn default() -> Self {
        InequalityOptions { min_normal_force: 0.0, margin: 1e-6 }
    }
}

/// `C f ≤ b` over the wrench layout; `b` already includes the strictness margin.
#[derive(Debug, Clone)]
pub struct InequalityModel {
    pub matrix: DMatrix<f64>,
    pub vector: DVector<f64>,
    /// Slot index of each row.
    pub row_slots: Vec<usize>,
    pub margin: f64,
}

impl InequalityModel {
    /// Largest `C f − b`; negative means strictly inside.
    pub fn max_violation(&self, f: &DVector<f64>) -> f64 {
        (&self.matrix * f - &self.vector).iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v))
    }
}

/// Rows of a surface contact in its local frame (force; moment about the frame origin).
pub fn surface_rows(half_x: f64, half_y: f64, mu: f64, torsion_mu: f64) -> DMatrix<f64> {
    let m = mu / std::f64::consts::SQRT_2;
    #[rustfmt::skip]
    let rows = DMatrix::from_row_slice(11, 6, &[
        0.0, 0.0, -1.0, 0.0, 0.0, 0.0,
        1.0, 0.0, -m, 0.0, 0.0, 0.0,
        -1.0, 0.0, -m, 0.0, 0.0, 0.0,
        0.0, 1.0, -m, 0.0, 0.0, 0.0,
        0.0, -1.0, -m, 0.0, 0.0, 0.0,
        0.0, 0.0, -half_x, 0.0, -1.0, 0.0,
        0.0, 0.0, -half_x, 0.0, 1.0, 0.0,
        0.0, 0.0, -half_y, 1.0, 0.0, 0.0,
        0.0, 0.0, -half_y, -1.0, 0.0, 0.0,
        0.0, 0.0, -torsion_mu, 0.0, 0.0, 1.0,
        0.0, 0.0, -torsion_mu, 0.0, 0.0, -1.0,
    ]);
    rows
}

fn local_map(r: &Rotation) -> DMatrix<f64> {
    let rt = r.matrix().transpose();
    let mut x = DMatrix::zeros(6, 6);
    x.view_mut((0, 0), (3, 3)).copy_from(&rt);
    x.view_mut((3, 3), (3, 3)).copy_from(&rt);
    x
}

pub fn build_inequalities(system: &CoupledSystem, eval: &Evaluation, options: &InequalityOptions) -> InequalityModel {
    let margin = options.margin * system.total_mass() * system.gravity().max(1.0);
    let mut blocks: Vec<(usize, DMatrix<f64>, DVector<f64>)> = Vec::new();
    for (si, slot) in system.slots().iter().enumerate() {
        let to_local = local_map(&eval.slot_poses[si].rotation);
        match &slot.contact.kind {
            ContactKind::Surface(g) => {
                let c = surface_rows(g.half_x, g.half_y, g.mu, g.torsion_mu) * &to_local;
                let mut b = DVector::zeros(11);
                b[0] = -options.min_normal_force;
                blocks.push((si, c, b));
            }
            ContactKind::Grasp { limits, .. } => {
                let mut c = DMatrix::zeros(12, 6);
                let mut b = DVector::zeros(12);
                for k in 0..6 {
                    let bound = if k < 3 { limits.max_force } else { limits.max_moment };
                    c[(2 * k, k)] = 1.0;
                    c[(2 * k + 1, k)] = -1.0;
                    b[2 * k] = bound;
                    b[2 * k + 1] = bound;
                }
                blocks.push((si, c * &to_local, b));
            }
        }
    }
    let nrows: usize = blocks.iter().map(|(_, c, _)| c.nrows()).sum();
    let mut matrix = DMatrix::zeros(nrows, system.num_wrenches());
    let mut vector = DVector::zeros(nrows);
    let mut row_slots = Vec::with_capacity(nrows);
    let mut r = 0;
    for (si, c, b) in blocks {
        let n = c.nrows();
        matrix.view_mut((r, 6 * si), (n, 6)).copy_from(&c);
        vector.rows_mut(r, n).copy_from(&b.add_scalar(-margin));
        row_slots.extend(std::iter::repeat(si).take(n));
        r += n;
    }
    InequalityModel { matrix, vector, row_slots, margin }
}

// ---------------------------------------------------------------------------
// force QP

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    OptimalHard,
    OptimalRelaxed,
}

impl QpStatus {
    pub fn code(&self) -> u8 {
        match self {
            QpStatus::OptimalHard => 0,
            QpStatus::OptimalRelaxed => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerOptions {
    pub inequality: InequalityOptions,
    /// Include the total-momentum rows among the task equalities.
    pub total_momentum_task: bool,
    /// Penalty on task residuals when the hard equalities cannot be met.
    pub relaxation_weight: f64,
}

impl Default for ControllerOptions {
    fn default() -> Self {
        ControllerOptions { inequality: InequalityOptions::default(), total_momentum_task: true, relaxation_weight: 1e6 }
    }
}

#[derive(Debug, Clone)]
pub struct ControlOutput {
    pub wrenches: DVector<f64>,
    pub torques: DVector<f64>,
    pub momentum_residual: f64,
    pub payload_residual: f64,
    pub status: QpStatus,
    /// Stationarity residual of the solved QP.
    pub kkt_residual: f64,
    pub complementarity: f64,
    /// Largest `C f − b` (negative inside the strict cone).
    pub cone_violation: f64,
    pub objective: f64,
}

/// Everything the QP needs at one instant.
pub struct ForceProblem<'a> {
    pub momentum: &'a MomentumTask,
    pub payload: Option<&'a PayloadTask>,
    pub torque: &'a TorqueMap,
    pub inequalities: &'a InequalityModel,
    pub effort: &'a DVector<f64>,
    pub regularization: f64,
}

impl ForceProblem<'_> {
    fn task_equalities(&self, total_rows: bool) -> (DMatrix<f64>, DVector<f64>) {
        let m = self.momentum;
        let na_rows = m.map.nrows() - if total_rows { 0 } else { 6 };
        let np = if self.payload.is_some() { 6 } else { 0 };
        let nf = m.map.ncols();
        let mut a = DMatrix::zeros(na_rows + np, nf);
        let mut b = DVector::zeros(na_rows + np);
        a.view_mut((0, 0), (na_rows, nf)).copy_from(&m.map.rows(0, na_rows));
        b.rows_mut(0, na_rows).copy_from(&(m.desired_rate.rows(0, na_rows) - m.offset.rows(0, na_rows)));
        if let Some(p) = self.payload {
            a.view_mut((na_rows, 0), (6, nf)).copy_from(&p.map);
            b.rows_mut(na_rows, 6).copy_from(&p.target);
        }
        (a, b)
    }

    fn cost(&self) -> (DMatrix<f64>, DVector<f64>) {
        let w = self.effort.map(|k| k * k);
        let wl = DMatrix::from_fn(self.torque.lambda.nrows(), self.torque.lambda.ncols(), |i, j| w[i] * self.torque.lambda[(i, j)]);
        let nf = self.torque.lambda.ncols();
        let h = (self.torque.lambda.transpose() * &wl + DMatrix::identity(nf, nf) * self.regularization) * 2.0;
        let c = wl.transpose() * &self.torque.offset * 2.0;
        (h, c)
    }
}

pub fn solve_force_qp(problem: &ForceProblem, options: &ControllerOptions) -> Result<ControlOutput, ControlError> {
    let (a_task, b_task) = problem.task_equalities(options.total_momentum_task);
    let (h, c) = problem.cost();
    let ineq = problem.inequalities;
    let cons = (&problem.torque.consistency_matrix, &problem.torque.consistency_vector);

    let mut a = DMatrix::zeros(a_task.nrows() + cons.0.nrows(), a_task.ncols());
    a.view_mut((0, 0), a_task.shape()).copy_from(&a_task);
    a.view_mut((a_task.nrows(), 0), cons.0.shape()).copy_from(cons.0);
    let mut b = DVector::zeros(a.nrows());
    b.rows_mut(0, b_task.len()).copy_from(&b_task);
    b.rows_mut(b_task.len(), cons.1.len()).copy_from(cons.1);

    let hard = QpProblem::new(h.clone(), c.clone())
        .with_equalities(a, b)
        .with_inequalities(ineq.matrix.clone(), ineq.vector.clone());
    let (qp, sol, status) = match qp::solve(&hard) {
        Ok(sol) => (hard, sol, QpStatus::OptimalHard),
        Err(QpError::InconsistentEqualities { .. }) | Err(QpError::Infeasible) | Err(QpError::NotConverged(_)) => {
            let w = options.relaxation_weight;
            let h_rel = &h + a_task.transpose() * &a_task * (2.0 * w);
            let c_rel = &c - a_task.transpose() * &b_task * (2.0 * w);
            let relaxed = QpProblem::new(h_rel, c_rel)
                .with_equalities(cons.0.clone(), cons.1.clone())
                .with_inequalities(ineq.matrix.clone(), ineq.vector.clone());
            let sol = qp::solve(&relaxed).map_err(|e| ControlError::Infeasible(e.to_string()))?;
            (relaxed, sol, QpStatus::OptimalRelaxed)
        }
    };
    let f = sol.x.clone();
    let tau = problem.torque.torques(&f);
    let mrate = &problem.momentum.map * &f + &problem.momentum.offset - &problem.momentum.desired_rate;
    let nrows = if options.total_momentum_task { mrate.len() } else { mrate.len() - 6 };
    let momentum_residual = mrate.rows(0, nrows).amax();
    let payload_residual = problem.payload.map_or(0.0, |p| (&p.map * &f - &p.target).amax());
    let objective = problem.torque.effort_torques(&f).iter().zip(problem.effort.iter()).map(|(t, k)| (k * t).powi(2)).sum::<f64>();
    Ok(ControlOutput {
        kkt_residual: qp.stationarity(&sol),
        complementarity: qp.complementarity(&sol),
        cone_violation: ineq.max_violation(&f),
        wrenches: f,
        torques: tau,
        momentum_residual,
        payload_residual,
        status,
        objective,
    })
}

// ---------------------------------------------------------------------------
// controller

/// Intermediate products of one controller tick, kept for diagnostics and tests.
pub struct TickData {
    pub eval: Evaluation,
    pub refs: TaskSample,
    pub momentum: MomentumTask,
    pub payload: Option<PayloadTask>,
    pub torque: TorqueMap,
    pub inequalities: InequalityModel,
}

#[derive(Debug, Clone)]
pub struct Controller {
    pub system: CoupledSystem,
    pub gains: ControllerGains,
    pub references: TaskReferences,
    pub options: ControllerOptions,
}

impl Controller {
    pub fn new(system: CoupledSystem, gains: ControllerGains, references: TaskReferences, options: ControllerOptions) -> Result<Self, ControlError> {
        gains.validate(&system)?;
        if references.stance.feet.len() != system.agents().len() {
            return Err(ControlError::InvalidGains("references need one anchor per agent".into()));
        }
        Ok(Controller { system, gains, references, options })
    }

    /// Builds every task for `state` at time `t` without solving.
    pub fn prepare(&self, state: &SystemState, t: f64) -> Result<TickData, ControlError> {
        let eval = self.system.evaluate(state);
        let refs = self.references.sample(&self.system, t);
        let momentum = momentum_task(&self.system, state, &eval, &self.gains, &refs);
        // while a fixture holds the payload its motion is imposed, not controlled
        let payload = if self.system.has_fixtures() {
            None
        } else {
            refs.payload.as_ref().and_then(|r| payload_task(&self.system, state, &eval, &self.gains, r))
        };
        let inequalities = build_inequalities(&self.system, &eval, &self.options.inequality);
        let u0 = postural_law(&self.system, state, &self.gains, &refs);
        let torque = torque_parametrization(&eval, &u0)?;
        Ok(TickData { eval, refs, momentum, payload, torque, inequalities })
    }

    pub fn solve(&self, data: &TickData) -> Result<ControlOutput, ControlError> {
        let effort = self.gains.effort_diagonal(&self.system);
        let problem = ForceProblem {
            momentum: &data.momentum,
            payload: data.payload.as_ref(),
            torque: &data.torque,
            inequalities: &data.inequalities,
            effort: &effort,
            regularization: self.gains.regularization,
        };
        solve_force_qp(&problem, &self.options)
    }

    pub fn step(&self, state: &SystemState, t: f64) -> Result<ControlOutput, ControlError> {
        let data = self.prepare(state, t)?;
        self.solve(&data)
    }
}
