//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.

use std::path::{Path, PathBuf};
use std::time::Instant;

use colift::control::*;
use colift::coupled::{squeeze_basis, SlotKind};
use colift::ergonomics::{optimize_posture, posture_of, static_force_layer};
use colift::files::{self, TraceTable};
use colift::model::{self, AgentModel, AgentState, Kinematics};
use colift::reference::{hyperstatic_chain, mini_humanoid};
use colift::sim::{run_scenario, step_dynamics, Scenario, Sequence, SimConfig, SimTrace};
use colift::spatial::{FramePose, Rotation, Vec3, Vec6};
use colift::summary::{summarize, Summary};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn data(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(rel)
}

struct Report {
    failed: usize,
}

impl Report {
    fn check(&mut self, name: &str, ok: bool, detail: String) {
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            self.failed += 1;
        }
    }
}

fn random_state(model: &AgentModel, rng: &mut ChaCha8Rng) -> AgentState {
    let mut v3 = |s: f64| Vec3::new(rng.gen_range(-s..s), rng.gen_range(-s..s), rng.gen_range(-s..s));
    let base = FramePose::new(v3(1.0), Rotation::exp(&v3(3.0)));
    let (a, b) = (v3(1.0), v3(1.0));
    let n = model.num_joints();
    let joints = DVector::from_iterator(n, model.limits().position.iter().map(|(lo, hi)| rng.gen_range(*lo..*hi)));
    let joint_velocities = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    AgentState { base, joints, base_velocity: Vec6::new(a.x, a.y, a.z, b.x, b.y, b.z), joint_velocities }
}

/// Shipped models, alternating, for the randomized checks.
fn models() -> Vec<AgentModel> {
    vec![files::load_model(&data("models/lifter.json")).unwrap(), mini_humanoid()]
}

fn dynamics_cross_validation(r: &mut Report) {
    let models = models();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let started = Instant::now();
    let mut worst: f64 = 0.0;
    for k in 0..1000 {
        let m = &models[k % models.len()];
        let mut state = random_state(m, &mut rng);
        let crba = model::mass_matrix(m, &state);
        state.base_velocity = Vec6::zeros();
        state.joint_velocities.fill(0.0);
        for j in 0..m.num_dofs() {
            let mut e = DVector::zeros(m.num_dofs());
            e[j] = 1.0;
            worst = worst.max((model::inverse_dynamics(m, &state, &e, 0.0) - crba.column(j)).amax());
        }
    }
    let secs = started.elapsed().as_secs_f64();
    r.check("dynamics cross-validation", worst < 1e-8 && secs < 30.0, format!("max |M - ID columns| = {worst:.2e} (< 1e-8) over 1000 states in {secs:.2} s (< 30 s)"));
}

fn jacobian_checks(r: &mut Report) {
    let models = models();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let h = 1e-6;
    let (mut frames, mut coms): (f64, f64) = (0.0, 0.0);
    for k in 0..1000 {
        let m = &models[k % models.len()];
        let state = random_state(m, &mut rng);
        let nu = state.nu();
        let (mut plus, mut minus) = (state.clone(), state.clone());
        plus.integrate_configuration(h);
        minus.integrate_configuration(-h);
        let (kin, kp, km) = (Kinematics::new(m, &state), Kinematics::new(m, &plus), Kinematics::new(m, &minus));
        for link in 0..m.links().len() {
            let v = model::frame_jacobian(m, &kin, link) * &nu;
            let lin = (kp.poses[link].position - km.poses[link].position) / (2.0 * h);
            let ang = kp.poses[link].rotation.compose(&km.poses[link].rotation.transpose()).log() / (2.0 * h);
            frames = frames.max((v.rows(0, 3) - lin).amax()).max((v.rows(3, 3) - ang).amax());
        }
        let cdot = (model::com_from(m, &kp) - model::com_from(m, &km)) / (2.0 * h);
        coms = coms.max((model::com_jacobian_from(m, &kin) * &nu - cdot).amax());
    }
    r.check(
        "Jacobian and CoM Jacobian finite differences",
        frames < 1e-5 && coms < 1e-5,
        format!("max error frames {frames:.2e}, CoM {coms:.2e} (< 1e-5) over 1000 states"),
    );
}

fn scenario() -> (Scenario, ControllerGains) {
    let sc = files::load_scenario(&data("scenarios/two_agent_lift.json")).unwrap();
    let gains = files::load_gains(&data("gains/two_agent_lift.json"), &sc.system).unwrap();
    (sc, gains)
}

fn momentum_dynamics(r: &mut Report) {
    let (sc, gains) = scenario();
    let sequence = files::load_sequence(&data("sequences/lift_ab.json"), &sc).unwrap();
    let lifted = sequence.phases[1].target.clone().unwrap();
    let free = sc.system.without_fixtures();
    let refs = TaskReferences::hold(sc.stance.clone(), sc.initial_posture()).then(0.0, 3.0, lifted);
    let ctl = Controller::new(free.clone(), gains, refs, ControllerOptions::default()).unwrap();
    let config = SimConfig::default();
    let anchors = free.environment_anchors(&sc.initial);
    let mg = Vec6::new(0.0, 0.0, -free.total_mass() * free.gravity(), 0.0, 0.0, 0.0);

    // semi-implicit Euler: H(k+1) - H(k) = dt (X f_k + m g) up to the configuration update
    let mut state = sc.initial.clone();
    let mut torques = DVector::zeros(free.num_torques());
    let mut worst: f64 = 0.0;
    let mut peak: f64 = 0.0;
    for k in 0..2000 {
        let t = k as f64 * config.dt;
        if k % config.substeps() == 0 {
            torques = ctl.step(&state, t).unwrap().torques;
        }
        let eval = free.evaluate(&state);
        let h0 = free.total_momentum(&state, &eval);
        let c = free.total_com(&state, &eval);
        let step = step_dynamics(&free, &state, &anchors, &torques, &config).unwrap();
        let mut rate = mg;
        for (si, slot) in free.slots().iter().enumerate() {
            if slot.kind == SlotKind::External {
                let w = step.wrenches.fixed_rows::<6>(6 * si);
                let f: Vec3 = w.fixed_rows::<3>(0).into();
                let m: Vec3 = w.fixed_rows::<3>(3).into();
                let arm = eval.slot_poses[si].position - c;
                let n = m + arm.cross(&f);
                rate += Vec6::new(f.x, f.y, f.z, n.x, n.y, n.z);
            }
        }
        state = step.state;
        let eval = free.evaluate(&state);
        let fd = (free.total_momentum(&state, &eval) - h0) / config.dt;
        worst = worst.max((fd - rate).amax());
        peak = peak.max(rate.amax());
    }

    // internal (grasp) columns of the total momentum rows are exactly zero
    let eval = free.evaluate(&state);
    let refs = ctl.references.sample(&free, 2.0);
    let task = momentum_task(&free, &state, &eval, &ctl.gains, &refs);
    let na = free.agents().len();
    let internal: f64 = free
        .slots()
        .iter()
        .enumerate()
        .filter(|(_, s)| s.kind == SlotKind::Internal)
        .map(|(si, _)| task.map.view((6 * na, 6 * si), (6, 6)).amax())
        .fold(0.0, f64::max);
    r.check(
        "momentum dynamics",
        worst < 1e-3 && internal == 0.0,
        format!("max |dH/dt - (X f + m g)| = {worst:.2e} (< 1e-3, rates up to {peak:.1}) over 2 s of lift at dt = 1e-3; internal columns max |coef| = {internal:e} (exactly 0)"),
    );
}

fn qp_correctness(r: &mut Report) {
    let (sc, gains) = scenario();
    let refs = TaskReferences::hold(sc.stance.clone(), posture_of(&sc.initial));
    let ctl = Controller::new(sc.system.clone(), gains, refs, ControllerOptions::default()).unwrap();
    let data = ctl.prepare(&sc.initial, 0.0).unwrap();
    let out = ctl.solve(&data).unwrap();
    let n = sc.system.agents()[0].num_joints();
    let (t0, t1) = (out.torques.rows(0, n).norm(), out.torques.rows(n, n).norm());
    let consistency = data.torque.residual(&out.torques, &out.wrenches);
    let ok = out.status == QpStatus::OptimalHard
        && out.momentum_residual < 1e-6
        && consistency < 1e-6
        && out.kkt_residual < 1e-6
        && out.cone_violation <= 0.0
        && (t0 - t1).abs() < 1e-6;
    r.check(
        "QP correctness",
        ok,
        format!(
            "{:?}, equality residuals momentum {:.1e} torque {:.1e} (< 1e-6), KKT {:.1e} (< 1e-6), max cone row {:.2e} (<= 0), |‖τ₁‖ - ‖τ₂‖| = {:.1e} (< 1e-6)",
            out.status,
            out.momentum_residual,
            consistency,
            out.kkt_residual,
            out.cone_violation,
            (t0 - t1).abs()
        ),
    );
}

fn squeeze_invariance(r: &mut Report) {
    let (sc, gains) = scenario();
    let free = sc.system.without_fixtures();
    let sequence = files::load_sequence(&data("sequences/lift_ab.json"), &sc).unwrap();
    let lifted = sequence.phases[1].target.clone().unwrap();
    let state = colift::ergonomics::placed_state(&free, &sc.stance, &lifted.joints, lifted.payload);
    let ctl = Controller::new(free.clone(), gains, TaskReferences::hold(sc.stance.clone(), lifted), ControllerOptions::default()).unwrap();
    let task = ctl.prepare(&state, 0.0).unwrap().payload.expect("payload task");
    let g = free.grasp_matrix(&state).unwrap();
    let basis = squeeze_basis(&g).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let f = DVector::from_fn(free.num_wrenches(), |_, _| rng.gen_range(-50.0..50.0));
        let s = &basis * DVector::from_fn(basis.ncols(), |_, _| rng.gen_range(-100.0..100.0));
        let mut df = DVector::zeros(free.num_wrenches());
        for (c, &si) in g.slots.iter().enumerate() {
            df.rows_mut(6 * si, 6).copy_from(&s.rows(6 * c, 6));
        }
        worst = worst.max((task.acceleration(&(&f + df)) - task.acceleration(&f)).amax());
    }
    r.check("squeeze-wrench invariance", worst < 1e-10, format!("max payload acceleration change {worst:.1e} (< 1e-10) over 200 random squeeze wrenches"));
}

fn run(sc: &Scenario, gains: &ControllerGains, sequence: &Sequence, duration: Option<f64>) -> (SimTrace, TraceTable, Summary, f64) {
    let started = Instant::now();
    let config = SimConfig { duration, ..SimConfig::default() };
    let trace = run_scenario(sc, gains, sequence, &config, &ControllerOptions::default()).unwrap();
    let secs = started.elapsed().as_secs_f64();
    let table = TraceTable::from_trace(&trace, &sc.system);
    let summary = summarize(&table);
    (trace, table, summary, secs)
}

/// Ten-second lift: settle, lift 10 cm over 3 s, hold.
fn lift_sequence(sc: &Scenario) -> Sequence {
    let mut seq = files::load_sequence(&data("sequences/lift_ab.json"), sc).unwrap();
    let total = seq.total_time();
    seq.phases[1].hold += 10.0 - total;
    seq
}

fn closed_loop_and_integrity(r: &mut Report) {
    let (sc, gains) = scenario();
    let seq = lift_sequence(&sc);
    let (trace, table, summary, secs) = run(&sc, &gains, &seq, None);
    let payload = sc.system.payload().unwrap().mass;
    let agents: f64 = sc.system.agents().iter().map(|m| m.total_mass()).sum();
    let ratio = payload / agents;
    let z = summary.steady_payload_z_error.unwrap();
    let rot = summary.payload_orientation_max_deg.unwrap();
    r.check(
        "closed-loop tracking",
        ratio >= 0.15 && z < 1e-3 && rot < 5.0 && secs < 60.0 && (summary.duration - 10.0).abs() < 1e-9,
        format!(
            "payload {payload} kg = {:.1}% of agents (>= 15%); steady z error {z:.1e} m (< 1e-3), max orientation deviation {rot:.1e} deg (< 5), {:.1} s simulated in {secs:.1} s (< 60 s)",
            100.0 * ratio,
            summary.duration
        ),
    );

    // determinism: a second run gives the same bits
    let (_, again, _, _) = run(&sc, &gains, &seq, None);
    let identical = again.to_csv() == table.to_csv();
    let drift = summary.max_constraint_velocity;
    let energy = summary.energy_error_rate;
    r.check(
        "simulator integrity",
        drift < 1e-4 && energy < 1e-3 && identical,
        format!(
            "max ‖Qν‖ {drift:.1e} (< 1e-4) and energy accounting error {:.1e} J over {:.0} s = {energy:.1e} J/s (< 1e-3) across {} ticks; repeated run bit-identical: {identical}",
            summary.max_energy_error,
            summary.duration,
            trace.samples.len() - 1
        ),
    );
}

fn force_ergonomics(r: &mut Report) {
    let layer = |q: [f64; 4]| {
        let (system, state) = hyperstatic_chain(q);
        static_force_layer(&system, &state, &[1.0], &InequalityOptions::default()).unwrap().objective
    };
    let bent = layer([0.4, -0.8, 0.4, 0.0]);
    let vertical = layer([0.0; 4]);
    r.check("force ergonomics", bent > 0.0 && vertical < 1e-8, format!("bent chain min ‖τ‖ = {bent:.3} (> 0), vertical chain {vertical:.1e} (< 1e-8)"));
}

fn postural_ergonomics(r: &mut Report) {
    let (sc, problem) = files::load_problem(&data("problems/lift_posture.json")).unwrap();
    let solution = optimize_posture(&problem).unwrap();
    let saving = 1.0 - solution.objective / solution.initial_objective;

    let gains = files::load_gains(&data("gains/two_agent_lift.json"), &sc.system).unwrap();
    let seq = files::load_sequence(&data("sequences/lift_abc.json"), &sc).unwrap();
    let (_, _, summary, _) = run(&sc, &gains, &seq, None);
    let (b, c) = (summary.phase("B").unwrap(), summary.phase("C").unwrap());
    let drop = (0..2).all(|j| c.torque_steady[j] < b.torque_steady[j]);
    r.check(
        "postural ergonomics",
        saving >= 0.1 && drop,
        format!(
            "objective {:.3} -> {:.3} ({:.1}% lower, >= 10%); steady ‖τ‖ (B) -> (C): agent 1 {:.3} -> {:.3}, agent 2 {:.3} -> {:.3} (both decrease)",
            solution.initial_objective,
            solution.objective,
            100.0 * saving,
            b.torque_steady[0],
            c.torque_steady[0],
            b.torque_steady[1],
            c.torque_steady[1]
        ),
    );
}

fn asymmetric_effort(r: &mut Report) {
    let (sc, gains) = scenario();
    let seq = files::load_sequence(&data("sequences/lift_acd.json"), &sc).unwrap();
    let favored = seq.phases[2].effort.as_ref().unwrap().iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
    let other = 1 - favored;
    let (_, _, summary, _) = run(&sc, &gains, &seq, None);
    let (c, d) = (summary.phase("C").unwrap(), summary.phase("D").unwrap());
    let ok = d.torque_steady[favored] < c.torque_steady[favored] && d.torque_steady[other] > c.torque_steady[other];
    r.check(
        "asymmetric effort",
        ok,
        format!(
            "effort {:?}: favored agent {} {:.3} -> {:.3} (decreases), agent {} {:.3} -> {:.3} (increases)",
            seq.phases[2].effort.as_ref().unwrap(),
            favored + 1,
            c.torque_steady[favored],
            d.torque_steady[favored],
            other + 1,
            c.torque_steady[other],
            d.torque_steady[other]
        ),
    );
}

fn main() {
    let mut r = Report { failed: 0 };
    dynamics_cross_validation(&mut r);
    jacobian_checks(&mut r);
    momentum_dynamics(&mut r);
    qp_correctness(&mut r);
    squeeze_invariance(&mut r);
    closed_loop_and_integrity(&mut r);
    force_ergonomics(&mut r);
    postural_ergonomics(&mut r);
    asymmetric_effort(&mut r);
    if r.failed > 0 {
        println!("{} acceptance criteria failed", r.failed);
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
