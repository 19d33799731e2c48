//! Static force ergonomics, posture optimization and minimum-jerk references.

use nalgebra::{DMatrix, DVector};

use crate::control::{build_inequalities, InequalityOptions, Posture, TaskReferences};
use crate::coupled::{Body, ContactKind, CoupledSystem, PayloadState, SlotKind, SystemState};
use crate::error::ErgonomicsError;
use crate::model::{self, AgentModel, AgentState};
use crate::qp::{self, QpProblem};
use crate::spatial::FramePose;

/// Quintic time scaling `10σ³ − 15σ⁴ + 6σ⁵` and its first two derivatives in `σ`.
pub fn quintic(sigma: f64) -> (f64, f64, f64) {
    let s = sigma.clamp(0.0, 1.0);
    let (s2, s3) = (s * s, s * s * s);
    (
        10.0 * s3 - 15.0 * s2 * s2 + 6.0 * s3 * s2,
        30.0 * s2 - 60.0 * s3 + 30.0 * s2 * s2,
        60.0 * s - 180.0 * s2 + 120.0 * s3,
    )
}

/// Minimum-jerk interpolation between two vectors over `duration` seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct MinJerkProfile {
    pub start: DVector<f64>,
    pub end: DVector<f64>,
    pub duration: f64,
}

impl MinJerkProfile {
    pub fn new(start: DVector<f64>, end: DVector<f64>, duration: f64) -> Result<Self, ErgonomicsError> {
        if !(duration > 0.0) || !duration.is_finite() {
            return Err(ErgonomicsError::InvalidInput(format!("duration must be positive, got {duration}")));
        }
        if start.len() != end.len() {
            return Err(ErgonomicsError::InvalidInput("start and end sizes differ".into()));
        }
        Ok(MinJerkProfile { start, end, duration })
    }

    /// Value, velocity and acceleration at `t`, clamped to `[0, T]`.
    pub fn evaluate(&self, t: f64) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let delta = &self.end - &self.start;
        let (s, ds, dds) = quintic(t / self.duration);
        let inside = (0.0..=self.duration).contains(&t);
        let (ds, dds) = if inside { (ds, dds) } else { (0.0, 0.0) };
        (
            &self.start + &delta * s,
            &delta * (ds / self.duration),
            &delta * (dds / (self.duration * self.duration)),
        )
    }

    pub fn value(&self, t: f64) -> DVector<f64> {
        self.evaluate(t).0
    }

    pub fn velocity(&self, t: f64) -> DVector<f64> {
        self.evaluate(t).1
    }

    pub fn acceleration(&self, t: f64) -> DVector<f64> {
        self.evaluate(t).2
    }
}


// ---------------------------------------------------------------------------
// closure

/// Fixed environment contacts of each agent; the first one places the base.
#[derive(Debug, Clone, PartialEq)]
pub struct Stance {
    pub feet: Vec<Vec<(String, FramePose)>>,
}

impl Stance {
    /// Reads the environment contact poses of every agent at `state`.
    pub fn from_state(system: &CoupledSystem, state: &SystemState) -> Result<Self, ErgonomicsError> {
        let poses = system.slot_poses(state);
        let mut feet = vec![Vec::new(); system.agents().len()];
        for (slot, pose) in system.slots().iter().zip(poses) {
            if let (SlotKind::External, Body::Agent(a)) = (slot.kind, slot.contact.body) {
                feet[a].push((slot.contact.frame.clone(), pose));
            }
        }
        if let Some(a) = feet.iter().position(|f| f.is_empty()) {
            return Err(ErgonomicsError::InvalidInput(format!("agent {a} has no environment contact to anchor its base")));
        }
        Ok(Stance { feet })
    }

    /// Anchor frame and pose per agent, as used by [`TaskReferences`].
    pub fn anchors(&self) -> Vec<(String, FramePose)> {
        self.feet.iter().map(|f| f[0].clone()).collect()
    }
}

/// Agent at rest with its anchor frame placed at the anchor pose.
pub fn placed_agent(model: &AgentModel, anchor: &(String, FramePose), joints: &DVector<f64>) -> AgentState {
    let frame = model.frame_index(&anchor.0).expect("anchor frame belongs to the model");
    let local = model::Kinematics::new(model, &AgentState::at_rest(FramePose::identity(), joints.clone()));
    AgentState::at_rest(anchor.1.compose(&local.poses[frame].inverse()), joints.clone())
}

/// Static system state for given joints and payload pose.
pub fn placed_state(system: &CoupledSystem, stance: &Stance, joints: &[DVector<f64>], payload: Option<FramePose>) -> SystemState {
    let agents = system
        .agents()
        .iter()
        .zip(joints)
        .zip(&stance.feet)
        .map(|((m, q), feet)| placed_agent(m, &feet[0], q))
        .collect();
    SystemState { agents, payload: payload.map(PayloadState::at_rest) }
}

/// Closure targets of one agent besides its anchor: other feet and grasp frames.
fn agent_targets(system: &CoupledSystem, stance: &Stance, agent: usize, payload: Option<&FramePose>) -> Vec<(usize, FramePose)> {
    let model = &system.agents()[agent];
    let mut targets: Vec<(usize, FramePose)> =
        stance.feet[agent].iter().skip(1).map(|(f, p)| (model.frame_index(f).expect("validated"), *p)).collect();
    if let (Some(pp), Some(pm)) = (payload, system.payload()) {
        for slot in system.slots() {
            if let (Body::Agent(a), ContactKind::Grasp { payload_frame, .. }) = (slot.contact.body, &slot.contact.kind) {
                if a == agent {
                    let local = pm.frame(payload_frame).expect("validated");
                    targets.push((model.frame_index(&slot.contact.frame).expect("validated"), pp.compose(local)));
                }
            }
        }
    }
    targets
}

/// Stacked pose errors of the targets and their Jacobian with respect to the joints,
/// with the base moving so that the anchor stays fixed.
fn target_errors(model: &AgentModel, anchor: &(String, FramePose), q: &DVector<f64>, targets: &[(usize, FramePose)]) -> (DVector<f64>, DMatrix<f64>) {
    let n = model.num_joints();
    let state = placed_agent(model, anchor, q);
    let kin = model::Kinematics::new(model, &state);
    let a = model.frame_index(&anchor.0).expect("validated");
    let ja = model::frame_jacobian(model, &kin, a);
    let lu = ja.columns(0, 6).into_owned().lu();
    let base_map = -lu.solve(&ja.columns(6, n).into_owned()).expect("anchor base block is invertible");
    let mut e = DVector::zeros(6 * targets.len());
    let mut j = DMatrix::zeros(6 * targets.len(), n);
    for (k, (frame, target)) in targets.iter().enumerate() {
        let pose = kin.poses[*frame];
        let dp = pose.position - target.position;
        let dr = pose.rotation.compose(&target.rotation.transpose()).log();
        e.fixed_rows_mut::<3>(6 * k).copy_from(&dp);
        e.fixed_rows_mut::<3>(6 * k + 3).copy_from(&dr);
        let jf = model::frame_jacobian(model, &kin, *frame);
        let jeff = jf.columns(0, 6) * &base_map + jf.columns(6, n);
        j.view_mut((6 * k, 0), (6, n)).copy_from(&jeff);
    }
    (e, j)
}

/// Largest closure error of the whole system at a static state.
pub fn closure_violation(system: &CoupledSystem, stance: &Stance, state: &SystemState) -> f64 {
    let payload = state.payload.as_ref().map(|p| p.pose);
    let mut worst: f64 = 0.0;
    for (i, m) in system.agents().iter().enumerate() {
        let targets = agent_targets(system, stance, i, payload.as_ref());
        let (e, _) = target_errors(m, &stance.feet[i][0], &state.agents[i].joints, &targets);
        worst = worst.max(e.amax());
        let placed = placed_agent(m, &stance.feet[i][0], &state.agents[i].joints);
        worst = worst.max(placed.base.error_to(&state.agents[i].base).amax());
    }
    worst
}

/// Gauss-Newton projection of joint guesses onto the closure manifold (minimum-norm
/// steps from the guess), respecting joint limits.
pub fn project_closure(
    system: &CoupledSystem,
    stance: &Stance,
    guess: &[DVector<f64>],
    payload: Option<&FramePose>,
    tol: f64,
) -> Result<Vec<DVector<f64>>, ErgonomicsError> {
    let free: Vec<Vec<bool>> = system.agents().iter().map(|m| vec![true; m.num_joints()]).collect();
    project_with(system, stance, guess, payload, &free, tol)
}

/// [`project_closure`] moving only the joints marked free.
fn project_with(
    system: &CoupledSystem,
    stance: &Stance,
    guess: &[DVector<f64>],
    payload: Option<&FramePose>,
    free: &[Vec<bool>],
    tol: f64,
) -> Result<Vec<DVector<f64>>, ErgonomicsError> {
    let mut out = Vec::with_capacity(guess.len());
    for (i, m) in system.agents().iter().enumerate() {
        let targets = agent_targets(system, stance, i, payload);
        let mut q = guess[i].clone();
        m.clamp_to_limits(&mut q);
        if targets.is_empty() {
            out.push(q);
            continue;
        }
        let mut converged = false;
        for _ in 0..100 {
            let (e, mut j) = target_errors(m, &stance.feet[i][0], &q, &targets);
            let err = e.amax();
            if err < tol {
                converged = true;
                break;
            }
            for (k, _) in free[i].iter().enumerate().filter(|(_, f)| !**f) {
                j.column_mut(k).fill(0.0);
            }
            let jjt = &j * j.transpose();
            let damping = if err > 1e-3 { 1e-6 } else { 0.0 };
            let mut a = jjt.clone();
            for k in 0..a.nrows() {
                a[(k, k)] += damping;
            }
            let Some(y) = a.clone().cholesky().map(|c| c.solve(&e)).or_else(|| a.svd(true, true).solve(&e, 1e-12).ok()) else {
                break;
            };
            let mut step = -(j.transpose() * y);
            let norm = step.amax();
            if norm > 0.3 {
                step *= 0.3 / norm;
            }
            let mut next = &q + step;
            m.clamp_to_limits(&mut next);
            if (&next - &q).amax() < 1e-15 {
                break;
            }
            q = next;
        }
        if !converged {
            let (e, _) = target_errors(m, &stance.feet[i][0], &q, &targets);
            return Err(ErgonomicsError::ClosureViolation(format!("agent {i}: residual {:.3e} after projection", e.amax())));
        }
        out.push(q);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// static force ergonomics

#[derive(Debug, Clone)]
pub struct StaticForces {
    pub torques: DVector<f64>,
    pub wrenches: DVector<f64>,
    /// `‖K_τ τ‖₂`.
    pub objective: f64,
}

/// Minimal-effort torques and wrenches holding `state` still:
/// `min ‖K_τ τ‖²` s.t. `h = B τ + Qᵀ f`, `C f ≤ b − margin`, with `ν = ν̇ = 0`.
pub fn static_force_layer(system: &CoupledSystem, state: &SystemState, effort: &[f64], options: &InequalityOptions) -> Result<StaticForces, ErgonomicsError> {
    let mut state = state.clone();
    state.set_nu(&DVector::zeros(system.num_dofs()));
    let eval = system.evaluate(&state);
    let nf = system.num_wrenches();
    let nt = system.num_torques();
    let qt = eval.constraint.transpose();
    // actuated rows give τ = h_s − Q_sᵀ f; the rest are balance equalities on f
    let mut act = Vec::with_capacity(nt);
    let mut unact = Vec::new();
    let mut weights = Vec::with_capacity(nt);
    for (i, a) in system.agents().iter().enumerate() {
        let off = system.dof_offset(i);
        unact.extend(off..off + 6);
        act.extend(off + 6..off + a.num_dofs());
        weights.extend(std::iter::repeat(effort[i]).take(a.num_joints()));
    }
    if let Some(off) = system.payload_offset() {
        unact.extend(off..off + 6);
    }
    let qs = qt.select_rows(&act);
    let hs = eval.bias.select_rows(&act);
    let qu = qt.select_rows(&unact);
    let hu = eval.bias.select_rows(&unact);
    let w = DVector::from_vec(weights).map(|k| k * k);
    // τ = hs − Qs f ⇒ ‖Kτ‖² = fᵀ Qsᵀ W Qs f − 2 hsᵀ W Qs f + const
    let wqs = DMatrix::from_fn(nt, nf, |i, j| w[i] * qs[(i, j)]);
    let h = qs.transpose() * &wqs * 2.0;
    let c = -(wqs.transpose() * &hs) * 2.0;
    let ineq = build_inequalities(system, &eval, options);
    let problem = QpProblem::new(h, c).with_equalities(qu, hu).with_inequalities(ineq.matrix, ineq.vector);
    let sol = qp::solve(&problem).map_err(|_| ErgonomicsError::StaticallyInfeasible)?;
    let torques = &hs - &qs * &sol.x;
    let objective = torques.iter().zip(w.iter()).map(|(t, w)| w * t * t).sum::<f64>().sqrt();
    Ok(StaticForces { torques, wrenches: sol.x, objective })
}

// ---------------------------------------------------------------------------
// posture optimization

#[derive(Debug, Clone)]
pub struct PostureProblem {
    pub system: CoupledSystem,
    pub stance: Stance,
    pub payload_target: Option<FramePose>,
    pub effort: Vec<f64>,
    pub inequality: InequalityOptions,
    pub initial_guess: Vec<DVector<f64>>,
    pub max_iterations: usize,
    /// Relative to the squared effort (see [`optimize_posture`]).
    pub gradient_tolerance: f64,
    /// Central finite-difference step on the joints (rad).
    pub fd_step: f64,
}

impl PostureProblem {
    pub fn new(system: CoupledSystem, stance: Stance, payload_target: Option<FramePose>, initial_guess: Vec<DVector<f64>>) -> Self {
        let n = system.agents().len();
        PostureProblem {
            system,
            stance,
            payload_target,
            effort: vec![1.0; n],
            inequality: InequalityOptions::default(),
            initial_guess,
            max_iterations: 200,
            gradient_tolerance: 1e-6,
            fd_step: 1e-4,
        }
    }

    pub fn state(&self, joints: &[DVector<f64>]) -> SystemState {
        placed_state(&self.system, &self.stance, joints, self.payload_target)
    }

    /// `‖K_τ τ‖₂` of the static force layer at closure-satisfying joints.
    pub fn objective(&self, joints: &[DVector<f64>]) -> Result<StaticForces, ErgonomicsError> {
        static_force_layer(&self.system, &self.state(joints), &self.effort, &self.inequality)
    }
}

#[derive(Debug, Clone)]
pub struct PostureSolution {
    pub joints: Vec<DVector<f64>>,
    pub torques: DVector<f64>,
    pub wrenches: DVector<f64>,
    pub objective: f64,
    pub initial_objective: f64,
    pub iterations: usize,
    pub constraint_violation: f64,
    pub projected_gradient: f64,
    /// False when the search stalled above the gradient tolerance.
    pub converged: bool,
}

fn split(x: &DVector<f64>, sizes: &[usize]) -> Vec<DVector<f64>> {
    let mut off = 0;
    sizes
        .iter()
        .map(|&n| {
            let v = x.rows(off, n).into_owned();
            off += n;
            v
        })
        .collect()
}

fn join(parts: &[DVector<f64>]) -> DVector<f64> {
    DVector::from_iterator(parts.iter().map(|p| p.len()).sum(), parts.iter().flat_map(|p| p.iter().copied()))
}

/// Joints closer than this to a limit count as sitting on it (rad).
const BOUND_TOL: f64 = 1e-9;

struct Search<'a> {
    problem: &'a PostureProblem,
    sizes: Vec<usize>,
    lower: DVector<f64>,
    upper: DVector<f64>,
}

impl Search<'_> {
    const PROJECTION_TOL: f64 = 1e-12;

    fn new(problem: &PostureProblem) -> Search<'_> {
        let limits: Vec<(f64, f64)> = problem.system.agents().iter().flat_map(|m| m.limits().position.iter().copied()).collect();
        Search {
            problem,
            sizes: problem.system.agents().iter().map(|a| a.num_joints()).collect(),
            lower: DVector::from_iterator(limits.len(), limits.iter().map(|l| l.0)),
            upper: DVector::from_iterator(limits.len(), limits.iter().map(|l| l.1)),
        }
    }

    /// `-1` on a lower limit, `+1` on an upper one, `0` free.
    fn bounds(&self, x: &DVector<f64>) -> Vec<i8> {
        (0..x.len())
            .map(|k| {
                if x[k] - self.lower[k] < BOUND_TOL {
                    -1
                } else if self.upper[k] - x[k] < BOUND_TOL {
                    1
                } else {
                    0
                }
            })
            .collect()
    }

    fn free_mask(&self, active: &[i8]) -> Vec<Vec<bool>> {
        split(&DVector::from_iterator(active.len(), active.iter().map(|a| f64::from(u8::from(*a == 0)))), &self.sizes)
            .iter()
            .map(|v| v.iter().map(|f| *f > 0.5).collect())
            .collect()
    }

    /// Retraction onto the closure manifold moving only the free joints.
    fn project(&self, x: &DVector<f64>, active: &[i8]) -> Option<DVector<f64>> {
        let p = self.problem;
        let q = project_with(&p.system, &p.stance, &split(x, &self.sizes), p.payload_target.as_ref(), &self.free_mask(active), Self::PROJECTION_TOL).ok()?;
        Some(join(&q))
    }

    /// Squared effort at a feasible point.
    fn merit(&self, x: &DVector<f64>) -> Option<f64> {
        self.problem.objective(&split(x, &self.sizes)).ok().map(|s| s.objective * s.objective)
    }

    /// Orthonormal basis of the closure tangent space at `x` with the active joints held.
    fn tangent(&self, x: &DVector<f64>, active: &[i8]) -> DMatrix<f64> {
        let p = self.problem;
        let parts = split(x, &self.sizes);
        let n: usize = self.sizes.iter().sum();
        let mut blocks = Vec::new();
        let mut off = 0;
        for (i, m) in p.system.agents().iter().enumerate() {
            let targets = agent_targets(&p.system, &p.stance, i, p.payload_target.as_ref());
            let ni = self.sizes[i];
            let held: Vec<usize> = (0..ni).filter(|&k| active[off + k] != 0).collect();
            let (_, j) = if targets.is_empty() { (DVector::zeros(0), DMatrix::zeros(0, ni)) } else { target_errors(m, &p.stance.feet[i][0], &parts[i], &targets) };
            let mut rows = DMatrix::zeros(j.nrows() + held.len(), ni);
            rows.view_mut((0, 0), (j.nrows(), ni)).copy_from(&j);
            for (r, &k) in held.iter().enumerate() {
                rows[(j.nrows() + r, k)] = 1.0;
            }
            let basis = if rows.nrows() == 0 {
                DMatrix::identity(ni, ni)
            } else {
                qp::eliminate_equalities(&rows, &DVector::zeros(rows.nrows())).null_basis
            };
            let mut b = DMatrix::zeros(n, basis.ncols());
            b.view_mut((off, 0), (ni, basis.ncols())).copy_from(&basis);
            blocks.push(b);
            off += ni;
        }
        let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
        let mut t = DMatrix::zeros(n, cols);
        let mut c = 0;
        for b in blocks {
            t.view_mut((0, c), (n, b.ncols())).copy_from(&b);
            c += b.ncols();
        }
        t
    }

    /// Central differences of the merit along tangent directions, retracting by projection.
    fn gradient(&self, x: &DVector<f64>, fx: f64, t: &DMatrix<f64>, active: &[i8]) -> DVector<f64> {
        let h = self.problem.fd_step;
        let at = |y: DVector<f64>| self.project(&y, active).and_then(|y| self.merit(&y));
        DVector::from_iterator(
            t.ncols(),
            (0..t.ncols()).map(|k| {
                let dir = t.column(k);
                match (at(x + dir * h), at(x - dir * h)) {
                    (Some(a), Some(b)) => (a - b) / (2.0 * h),
                    // one-sided when a free joint would cross its limit
                    (Some(a), None) => (a - fx) / h,
                    (None, Some(b)) => (fx - b) / h,
                    (None, None) => 0.0,
                }
            }),
        )
    }

    /// Active joint whose inward move lowers the merit the most, if any.
    fn release(&self, x: &DVector<f64>, fx: f64, active: &[i8], tol: f64) -> Option<usize> {
        let h = self.problem.fd_step;
        let mut best = None;
        let mut best_slope = -tol;
        for k in (0..active.len()).filter(|&k| active[k] != 0) {
            let mut trial = active.to_vec();
            trial[k] = 0;
            // tangent direction moving joint k inward, others held
            let t = self.tangent(x, &trial);
            let mut d = &t * t.row(k).transpose();
            if d[k].abs() < 1e-6 {
                continue;
            }
            d *= -f64::from(active[k]) / d[k];
            let Some(fy) = self.project(&(x + &d * h), &trial).and_then(|y| self.merit(&y)) else { continue };
            let slope = (fy - fx) / h;
            if slope < best_slope {
                best_slope = slope;
                best = Some(k);
            }
        }
        best
    }
}

/// Local minimum of the static effort over closure-satisfying postures within the
/// joint limits.
///
/// Quasi-Newton (BFGS on tangent coordinates) with Armijo backtracking and an active
/// set for the joint limits: joints on a limit are held until the effort decreases
/// when moving them inward. Every trial point is projected back onto the closure
/// manifold, so every accepted iterate is feasible and the merit never increases.
/// Convergence is `‖g‖ ≤ gradient_tolerance · max(1, f)` on the squared effort `f`
/// with no limit worth releasing.
pub fn optimize_posture(problem: &PostureProblem) -> Result<PostureSolution, ErgonomicsError> {
    let sizes: Vec<usize> = problem.system.agents().iter().map(|a| a.num_joints()).collect();
    if problem.initial_guess.len() != sizes.len() || problem.initial_guess.iter().zip(&sizes).any(|(q, n)| q.len() != *n) {
        return Err(ErgonomicsError::InvalidInput("initial guess does not match the agents".into()));
    }
    let search = Search::new(problem);
    let none = vec![0i8; sizes.iter().sum()];
    let x0 = search
        .project(&join(&problem.initial_guess), &none)
        .ok_or_else(|| ErgonomicsError::Infeasible("closure cannot be met from the initial guess".into()))?;
    let mut x = x0;
    let mut f = search.merit(&x).ok_or(ErgonomicsError::StaticallyInfeasible)?;
    let initial_objective = f.sqrt();

    let mut iterations = 0;
    let mut converged = false;
    let mut active = search.bounds(&x);
    let mut t = search.tangent(&x, &active);
    let mut g = search.gradient(&x, f, &t, &active);
    let mut hinv = DMatrix::<f64>::identity(g.len(), g.len());
    while iterations < problem.max_iterations {
        let tol = problem.gradient_tolerance * f.max(1.0);
        if g.norm() <= tol {
            match search.release(&x, f, &active, tol) {
                None => {
                    converged = true;
                    break;
                }
                Some(k) => {
                    active[k] = 0;
                    t = search.tangent(&x, &active);
                    g = search.gradient(&x, f, &t, &active);
                    hinv = DMatrix::identity(g.len(), g.len());
                    continue;
                }
            }
        }
        iterations += 1;
        let mut d = -(&hinv * &g);
        if d.dot(&g) >= 0.0 {
            hinv = DMatrix::identity(g.len(), g.len());
            d = -g.clone();
        }
        // keep trial steps modest in joint space
        let step = &t * &d;
        let scale = (0.2 / step.amax().max(1e-300)).min(1.0);
        let mut alpha = scale;
        let mut accepted = None;
        for _ in 0..40 {
            if let Some(y) = search.project(&(&x + &step * alpha), &active) {
                if let Some(fy) = search.merit(&y) {
                    if fy <= f + 1e-4 * alpha * g.dot(&d) {
                        accepted = Some((y, fy));
                        break;
                    }
                }
            }
            alpha *= 0.5;
        }
        let Some((y, fy)) = accepted else {
            if hinv != DMatrix::identity(g.len(), g.len()) {
                hinv = DMatrix::identity(g.len(), g.len());
                continue;
            }
            break;
        };
        // limits hit during the step join the active set
        let hit = search.bounds(&y);
        let grew = hit.iter().zip(&active).any(|(h, a)| *h != 0 && *a == 0);
        if grew {
            for (a, h) in active.iter_mut().zip(&hit) {
                if *h != 0 {
                    *a = *h;
                }
            }
        }
        let t_new = search.tangent(&y, &active);
        let g_new = search.gradient(&y, fy, &t_new, &active);
        if grew || t_new.ncols() != t.ncols() {
            hinv = DMatrix::identity(g_new.len(), g_new.len());
        } else {
            // transport the old gradient and step into the new tangent coordinates
            let s = t_new.transpose() * (&y - &x);
            let yk = &g_new - t_new.transpose() * (&t * &g);
            let sy = s.dot(&yk);
            if sy > 1e-12 * s.norm() * yk.norm() {
                let rho = 1.0 / sy;
                let i = DMatrix::<f64>::identity(s.len(), s.len());
                let a = &i - &s * yk.transpose() * rho;
                let b = &i - &yk * s.transpose() * rho;
                hinv = &a * &hinv * &b + &s * s.transpose() * rho;
            } else {
                hinv = DMatrix::identity(g_new.len(), g_new.len());
            }
        }
        x = y;
        f = fy;
        t = t_new;
        g = g_new;
    }
    let joints = split(&x, &sizes);
    let sol = problem.objective(&joints)?;
    let state = problem.state(&joints);
    Ok(PostureSolution {
        constraint_violation: closure_violation(&problem.system, &problem.stance, &state),
        joints,
        torques: sol.torques,
        wrenches: sol.wrenches,
        objective: sol.objective,
        initial_objective,
        iterations,
        projected_gradient: g.norm(),
        converged,
    })
}

// ---------------------------------------------------------------------------
// references

/// Minimum-jerk references from `start` to `end` over `duration`, starting at `t0`.
pub fn make_references(
    system: &CoupledSystem,
    stance: &Stance,
    start: &Posture,
    end: &Posture,
    t0: f64,
    duration: f64,
) -> Result<TaskReferences, ErgonomicsError> {
    if !(duration > 0.0) {
        return Err(ErgonomicsError::InvalidInput(format!("duration must be positive, got {duration}")));
    }
    for (name, p) in [("start", start), ("end", end)] {
        let state = placed_state(system, stance, &p.joints, p.payload);
        let v = closure_violation(system, stance, &state);
        if v > 1e-6 {
            return Err(ErgonomicsError::ClosureViolation(format!("{name} configuration off by {v:.3e}")));
        }
    }
    Ok(TaskReferences::hold(stance.clone(), start.clone()).then(t0, duration, end.clone()))
}

/// Helper for callers holding a static state: its joints and payload pose.
pub fn posture_of(state: &SystemState) -> Posture {
    Posture { joints: state.agents.iter().map(|a| a.joints.clone()).collect(), payload: state.payload.as_ref().map(|p| p.pose) }
}
