//! Fixed-step constrained simulation of the coupled system.
//!
//! Contacts are bilateral: the KKT system `[M −Qᵀ; Q 0][ν̇; f] = [Bτ − h; a]` is solved
//! through the Schur complement `Q M⁻¹ Qᵀ`, with Baumgarte terms in `a` pulling the
//! closure error back to zero. Integration is semi-implicit Euler.

use nalgebra::DVector;

use crate::control::{ControlOutput, Controller, ControllerGains, ControllerOptions, Posture, QpStatus, TaskReferences};
use crate::coupled::{CoupledSystem, Evaluation, SystemState};
use crate::ergonomics::{posture_of, Stance};
use crate::error::SimError;
use crate::spatial::{FramePose, Vec3, Vec6};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub control_period: f64,
    /// Velocity feedback of the constraint stabilization (1/s).
    pub alpha: f64,
    /// Position feedback of the constraint stabilization (1/s).
    pub beta: f64,
    /// Hard stop; `None` runs the whole sequence.
    pub duration: Option<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { dt: 1e-3, control_period: 1e-2, alpha: 20.0, beta: 20.0, duration: None }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.control_period > 0.0) {
            return bad(format!("control_period must be positive, got {}", self.control_period));
        }
        let ratio = self.control_period / self.dt;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio || ratio.round() < 1.0 {
            return bad(format!("control_period {} is not an integer multiple of dt {}", self.control_period, self.dt));
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return bad("alpha and beta must be non-negative".into());
        }
        if let Some(d) = self.duration {
            if !(d >= 0.0) {
                return bad(format!("duration must be non-negative, got {d}"));
            }
        }
        Ok(())
    }

    /// Simulation steps per controller tick.
    pub fn substeps(&self) -> usize {
        (self.control_period / self.dt).round() as usize
    }
}

/// One integration step.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub state: SystemState,
    pub acceleration: DVector<f64>,
    /// Constraint wrenches realized during the step.
    pub wrenches: DVector<f64>,
    /// Work done over the step by the torques and by the constraint wrenches.
    pub actuator_work: f64,
    pub constraint_work: f64,
}

/// Constrained accelerations and wrenches at `state` for torques `tau`.
pub fn constrained_acceleration(
    eval: &Evaluation,
    closure: &DVector<f64>,
    nu: &DVector<f64>,
    tau: &DVector<f64>,
    config: &SimConfig,
) -> Result<(DVector<f64>, DVector<f64>), SimError> {
    let rhs = &eval.selector * tau - &eval.bias;
    let chol = eval.mass_matrix.clone().cholesky().ok_or(SimError::SingularKkt)?;
    let free = chol.solve(&rhs);
    let q = &eval.constraint;
    if q.nrows() == 0 {
        return Ok((free, DVector::zeros(0)));
    }
    let minv_qt = chol.solve(&q.transpose());
    let schur = q * &minv_qt;
    let target = -&eval.constraint_drift - (q * nu) * (2.0 * config.alpha) - closure * (config.beta * config.beta);
    let f = schur.cholesky().ok_or(SimError::SingularKkt)?.solve(&(target - q * &free));
    let accel = free + minv_qt * &f;
    Ok((accel, f))
}

/// Advances the state by one step under constant torques.
pub fn step_dynamics(
    system: &CoupledSystem,
    state: &SystemState,
    anchors: &[FramePose],
    tau: &DVector<f64>,
    config: &SimConfig,
) -> Result<StepResult, SimError> {
    let eval = system.evaluate(state);
    step_with(system, state, &eval, anchors, tau, config)
}

fn step_with(
    system: &CoupledSystem,
    state: &SystemState,
    eval: &Evaluation,
    anchors: &[FramePose],
    tau: &DVector<f64>,
    config: &SimConfig,
) -> Result<StepResult, SimError> {
    let nu = state.nu();
    let closure = system.closure_error(state, anchors);
    let (accel, f) = constrained_acceleration(eval, &closure, &nu, tau, config)?;
    let next_nu = &nu + &accel * config.dt;
    // priced at the velocity that moves the configuration, so gravity work matches ΔV
    let actuator_work = (&eval.selector * tau).dot(&next_nu) * config.dt;
    let constraint_work = if f.is_empty() { 0.0 } else { (eval.constraint.transpose() * &f).dot(&next_nu) * config.dt };
    let mut next = state.clone();
    next.set_nu(&next_nu);
    next.integrate_configuration(config.dt);
    if !next.is_finite() || next_nu.amax() > 1e6 {
        return Err(SimError::NumericalDivergence { t: f64::NAN });
    }
    Ok(StepResult { state: next, acceleration: accel, wrenches: f, actuator_work, constraint_work })
}

// ---------------------------------------------------------------------------
// scenarios and sequences

/// Agents, payload and contacts, with a consistent static initial state.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    /// Full contact set, including payload fixtures.
    pub system: CoupledSystem,
    pub stance: Stance,
    pub initial: SystemState,
}

impl Scenario {
    pub fn initial_posture(&self) -> Posture {
        posture_of(&self.initial)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phase {
    pub name: String,
    /// Posture reached at the end of the transition; `None` keeps the current target.
    pub target: Option<Posture>,
    /// Transition time (s).
    pub duration: f64,
    /// Hold time after the transition (s).
    pub hold: f64,
    /// Drop payload fixtures at the start of this phase.
    pub release_fixtures: bool,
    /// Controller effort weights from this phase on.
    pub effort: Option<Vec<f64>>,
    /// Payload position error (m) that must be met at the end of the phase.
    pub settle_tolerance: Option<f64>,
}

impl Phase {
    pub fn hold(name: &str, hold: f64) -> Self {
        Phase { name: name.into(), target: None, duration: 0.0, hold, release_fixtures: false, effort: None, settle_tolerance: None }
    }

    pub fn move_to(name: &str, target: Posture, duration: f64, hold: f64) -> Self {
        Phase { target: Some(target), duration, ..Phase::hold(name, hold) }
    }

    pub fn total(&self) -> f64 {
        self.duration + self.hold
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Sequence {
    pub phases: Vec<Phase>,
}

impl Sequence {
    pub fn total_time(&self) -> f64 {
        self.phases.iter().map(Phase::total).sum()
    }
}

// ---------------------------------------------------------------------------
// trace

#[derive(Debug, Clone)]
pub struct TraceSample {
    pub t: f64,
    pub phase: usize,
    pub state: SystemState,
    pub torques: DVector<f64>,
    /// Realized wrenches in the full slot layout (zeros for released fixtures),
    /// averaged over the tick's substeps.
    pub wrenches: DVector<f64>,
    /// Wrenches requested by the controller, same layout.
    pub requested: DVector<f64>,
    pub agent_momentum: Vec<Vec6>,
    pub total_momentum: Vec6,
    pub agent_com: Vec<Vec3>,
    pub total_com: Vec3,
    pub reference_com: Vec3,
    pub payload_reference: Option<FramePose>,
    pub momentum_residual: f64,
    pub payload_residual: f64,
    pub status: QpStatus,
    /// `‖Q ν‖`.
    pub constraint_velocity: f64,
    /// Largest closure pose error.
    pub closure_error: f64,
    pub kinetic: f64,
    pub potential: f64,
    /// Cumulative work since the start of the run.
    pub actuator_work: f64,
    pub constraint_work: f64,
}

impl TraceSample {
    pub fn torque_norm(&self, system: &CoupledSystem, agent: usize) -> f64 {
        let n = system.agents()[agent].num_joints();
        self.torques.rows(system.torque_offset(agent), n).norm()
    }

    pub fn energy(&self) -> f64 {
        self.kinetic + self.potential
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseMark {
    pub name: String,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone)]
pub struct SimTrace {
    pub scenario: String,
    /// Slot labels of the full contact set.
    pub slots: Vec<String>,
    pub joint_names: Vec<Vec<String>>,
    pub phases: Vec<PhaseMark>,
    pub samples: Vec<TraceSample>,
    /// Ticks solved with relaxed tasks.
    pub relax_events: usize,
}

impl SimTrace {
    pub fn phase_samples(&self, phase: usize) -> impl Iterator<Item = &TraceSample> {
        self.samples.iter().filter(move |s| s.phase == phase)
    }
}

// ---------------------------------------------------------------------------
// run

struct Runner<'a> {
    scenario: &'a Scenario,
    full_anchors: Vec<FramePose>,
    full_slots: Vec<String>,
    active: CoupledSystem,
    anchors: Vec<FramePose>,
    slot_map: Vec<usize>,
    state: SystemState,
    t: f64,
    actuator_work: f64,
    constraint_work: f64,
}

impl Runner<'_> {
    fn activate(&mut self, system: CoupledSystem) {
        let labels: Vec<String> = system.slots().iter().map(|s| s.contact.label()).collect();
        self.slot_map = labels.iter().map(|l| self.full_slots.iter().position(|f| f == l).expect("subset of the full contact set")).collect();
        // keep the anchors of the surviving environment contacts
        let mut anchors = Vec::new();
        let mut k = 0;
        for slot in self.scenario.system.slots() {
            if matches!(slot.contact.kind, crate::coupled::ContactKind::Surface(_)) {
                if labels.contains(&slot.contact.label()) {
                    anchors.push(self.full_anchors[k]);
                }
                k += 1;
            }
        }
        self.anchors = anchors;
        self.active = system;
    }

    fn scatter(&self, f: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(6 * self.full_slots.len());
        for (i, &j) in self.slot_map.iter().enumerate() {
            out.fixed_rows_mut::<6>(6 * j).copy_from(&f.fixed_rows::<6>(6 * i));
        }
        out
    }

    fn sample(&self, controller: &Controller, out: &ControlOutput, phase: usize, realized: DVector<f64>) -> TraceSample {
        let sys = &self.active;
        let eval = sys.evaluate(&self.state);
        let refs = controller.references.sample(sys, self.t);
        let mut agent_momentum = Vec::new();
        let mut agent_com = Vec::new();
        for (i, m) in sys.agents().iter().enumerate() {
            agent_momentum.push(crate::model::momentum_from(m, &eval.kinematics[i]));
            agent_com.push(crate::model::com_from(m, &eval.kinematics[i]));
        }
        let (kinetic, potential) = sys.energy(&self.state, &eval);
        let closure = sys.closure_error(&self.state, &self.anchors);
        TraceSample {
            t: self.t,
            phase,
            state: self.state.clone(),
            torques: out.torques.clone(),
            wrenches: realized,
            requested: self.scatter(&out.wrenches),
            agent_momentum,
            total_momentum: sys.total_momentum(&self.state, &eval),
            agent_com,
            total_com: sys.total_com(&self.state, &eval),
            reference_com: refs.total_com,
            payload_reference: refs.payload.map(|p| p.pose),
            momentum_residual: out.momentum_residual,
            payload_residual: out.payload_residual,
            status: out.status,
            constraint_velocity: (&eval.constraint * self.state.nu()).norm(),
            closure_error: closure.amax(),
            kinetic,
            potential,
            actuator_work: self.actuator_work,
            constraint_work: self.constraint_work,
        }
    }
}

/// Runs the phases of `sequence` in order, ticking the controller every control period.
///
/// The trace holds one sample per tick, starting with the initial state at `t = 0`.
pub fn run_scenario(
    scenario: &Scenario,
    gains: &ControllerGains,
    sequence: &Sequence,
    config: &SimConfig,
    options: &ControllerOptions,
) -> Result<SimTrace, SimError> {
    config.validate()?;
    scenario.system.check_state(&scenario.initial).map_err(|e| SimError::InvalidConfig(e.to_string()))?;
    let full_slots: Vec<String> = scenario.system.slots().iter().map(|s| s.contact.label()).collect();
    let mut runner = Runner {
        scenario,
        full_anchors: scenario.system.environment_anchors(&scenario.initial),
        full_slots: full_slots.clone(),
        active: scenario.system.clone(),
        anchors: Vec::new(),
        slot_map: Vec::new(),
        state: scenario.initial.clone(),
        t: 0.0,
        actuator_work: 0.0,
        constraint_work: 0.0,
    };
    runner.activate(scenario.system.clone());

    let mut references = TaskReferences::hold(scenario.stance.clone(), scenario.initial_posture());
    let mut gains = gains.clone();
    let mut controller = Controller::new(runner.active.clone(), gains.clone(), references.clone(), options.clone())?;
    let initial = controller.step(&runner.state, 0.0)?;
    let mut relax_events = usize::from(initial.status == QpStatus::OptimalRelaxed);
    let first = runner.sample(&controller, &initial, 0, runner.scatter(&initial.wrenches));
    let mut trace = SimTrace {
        scenario: scenario.name.clone(),
        slots: full_slots,
        joint_names: scenario.system.agents().iter().map(|m| m.joint_names().into_iter().map(String::from).collect()).collect(),
        phases: Vec::new(),
        samples: vec![first],
        relax_events: 0,
    };

    let stop = config.duration.unwrap_or(f64::INFINITY);
    let substeps = config.substeps();
    let mut tick: u64 = 0;
    'phases: for (pi, phase) in sequence.phases.iter().enumerate() {
        let start = runner.t;
        let end = start + phase.total();
        trace.phases.push(PhaseMark { name: phase.name.clone(), start, end });
        if phase.release_fixtures && runner.active.has_fixtures() {
            let released = runner.active.without_fixtures();
            runner.activate(released);
        }
        if let Some(effort) = &phase.effort {
            gains.effort = effort.clone();
        }
        if let Some(target) = &phase.target {
            references = references.then(start, phase.duration, target.clone());
        }
        controller = Controller::new(runner.active.clone(), gains.clone(), references.clone(), options.clone())?;

        // ticks are counted globally so that phase boundaries do not accumulate rounding
        while ((tick + 1) as f64) * config.control_period <= end + 1e-9 * config.control_period {
            if runner.t >= stop - 1e-12 {
                break 'phases;
            }
            let out = controller.step(&runner.state, runner.t)?;
            if out.status == QpStatus::OptimalRelaxed {
                relax_events += 1;
            }
            let mut realized = DVector::zeros(runner.active.num_wrenches());
            for _ in 0..substeps {
                let res = step_dynamics(&runner.active, &runner.state, &runner.anchors, &out.torques, config)
                    .map_err(|e| match e {
                        SimError::NumericalDivergence { .. } => SimError::NumericalDivergence { t: runner.t },
                        e => e,
                    })?;
                realized += &res.wrenches;
                runner.actuator_work += res.actuator_work;
                runner.constraint_work += res.constraint_work;
                runner.state = res.state;
            }
            tick += 1;
            runner.t = tick as f64 * config.control_period;
            realized /= substeps as f64;
            let realized = runner.scatter(&realized);
            trace.samples.push(runner.sample(&controller, &out, pi, realized));
        }
        if let (Some(tol), Some(p), Some(pr)) = (phase.settle_tolerance, &runner.state.payload, trace.samples.last().and_then(|s| s.payload_reference)) {
            let err = (p.pose.position - pr.position).norm();
            if err > tol && runner.t < stop {
                return Err(SimError::PhaseTimeout { phase: phase.name.clone(), error: err });
            }
        }
    }
    trace.relax_events = relax_events;
    Ok(trace)
}
