use colift::control::*;
use colift::coupled::{squeeze_basis, CoupledSystem, SlotKind, SystemState};
use colift::ergonomics::placed_state;
use colift::model;
use colift::reference::*;
use colift::sim::{constrained_acceleration, Scenario, SimConfig};
use colift::spatial::{Vec3, Vec6};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// The lifting scenario after the table is gone, box held at the lifted pose.
fn lifted() -> (Scenario, CoupledSystem, SystemState) {
    let sc = lifting_scenario();
    let free = lifting_system(false);
    let posture = lifted_posture(&sc).unwrap();
    let state = placed_state(&free, &sc.stance, &posture.joints, posture.payload);
    (sc, free, state)
}

fn hold_controller(system: &CoupledSystem, sc: &Scenario, state: &SystemState) -> Controller {
    let refs = TaskReferences::hold(sc.stance.clone(), colift::ergonomics::posture_of(state));
    Controller::new(system.clone(), lifting_gains(sc), refs, ControllerOptions::default()).unwrap()
}

fn wrench(f: Vec3, m: Vec3) -> Vec6 {
    Vec6::new(f.x, f.y, f.z, m.x, m.y, m.z)
}

#[test]
fn gains_validation_rejects_malformed_gains() {
    let sc = lifting_scenario();
    let ok = lifting_gains(&sc);
    assert!(ok.validate(&sc.system).is_ok());

    let mut g = ok.clone();
    g.effort.pop();
    assert!(g.validate(&sc.system).is_err());

    let mut g = ok.clone();
    g.momentum_kp[1][(0, 1)] = 5.0;
    assert!(g.validate(&sc.system).is_err(), "asymmetric momentum gain accepted");

    let mut g = ok.clone();
    g.payload_kp[2] = -1.0;
    assert!(g.validate(&sc.system).is_err());

    let mut g = ok.clone();
    g.effort[0] = 0.0;
    assert!(g.validate(&sc.system).is_err());

    let mut g = ok.clone();
    g.com_ki[0] = -1.0;
    assert!(g.validate(&sc.system).is_err());
}

#[test]
fn momentum_map_matches_transport_algebra() {
    let (sc, free, state) = lifted();
    let eval = free.evaluate(&state);
    let refs = TaskReferences::hold(sc.stance.clone(), sc.initial_posture()).sample(&free, 0.0);
    let task = momentum_task(&free, &state, &eval, &lifting_gains(&sc), &refs);
    let na = free.agents().len();
    let coms: Vec<Vec3> = free.agents().iter().zip(&eval.kinematics).map(|(m, k)| model::com_from(m, k)).collect();
    let c = free.total_com(&state, &eval);

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for (si, slot) in free.slots().iter().enumerate() {
        let w = wrench(Vec3::from_fn(|_, _| rng.gen_range(-5.0..5.0)), Vec3::from_fn(|_, _| rng.gen_range(-1.0..1.0)));
        let mut f = DVector::zeros(free.num_wrenches());
        f.fixed_rows_mut::<6>(6 * si).copy_from(&w);
        let rates = &task.map * &f;
        let p = eval.slot_poses[si].position;
        let force: Vec3 = w.fixed_rows::<3>(0).into();
        let moment: Vec3 = w.fixed_rows::<3>(3).into();

        let total = rates.fixed_rows::<6>(6 * na);
        if slot.kind == SlotKind::Internal {
            assert_eq!(total.amax(), 0.0, "internal slot {si} reaches the total momentum");
        } else {
            let expect = wrench(force, moment + (p - c).cross(&force));
            assert!((total - expect).amax() < 1e-10);
        }
        // transported sum of the agent rows equals the total row for external columns
        if slot.kind == SlotKind::External {
            let mut sum = Vec6::zeros();
            for a in 0..na {
                let h = rates.fixed_rows::<6>(6 * a);
                let l: Vec3 = h.fixed_rows::<3>(0).into();
                let k: Vec3 = h.fixed_rows::<3>(3).into();
                sum += wrench(l, k + (coms[a] - c).cross(&l));
            }
            assert!((sum - total).amax() < 1e-10);
        }
    }
}

#[test]
fn hold_is_solved_exactly_on_the_hard_problem() {
    let sc = lifting_scenario();
    let ctl = hold_controller(&sc.system, &sc, &sc.initial);
    let data = ctl.prepare(&sc.initial, 0.0).unwrap();
    let out = ctl.solve(&data).unwrap();
    assert_eq!(out.status, QpStatus::OptimalHard);
    assert!(out.momentum_residual < 1e-6, "{}", out.momentum_residual);
    assert!(out.kkt_residual < 1e-6, "{}", out.kkt_residual);
    assert!(out.cone_violation < 0.0, "{}", out.cone_violation);
    assert!(data.torque.residual(&out.torques, &out.wrenches) < 1e-8);
}

#[test]
fn commanded_torques_realize_the_planned_wrenches() {
    // forward dynamics under τ* must return f*: the torque map is an exact inverse
    let (sc, free, state) = lifted();
    let ctl = hold_controller(&free, &sc, &state);
    let out = ctl.step(&state, 0.0).unwrap();
    let eval = free.evaluate(&state);
    let closure = free.closure_error(&state, &free.environment_anchors(&state));
    let (_, f) = constrained_acceleration(&eval, &closure, &state.nu(), &out.torques, &SimConfig::default()).unwrap();
    assert!((&f - &out.wrenches).amax() < 1e-6 * out.wrenches.amax().max(1.0));
}

#[test]
fn mirrored_agents_share_the_load_equally() {
    let sc = lifting_scenario();
    let out = hold_controller(&sc.system, &sc, &sc.initial).step(&sc.initial, 0.0).unwrap();
    let n = sc.system.agents()[0].num_joints();
    let t0 = out.torques.rows(0, n).norm();
    let t1 = out.torques.rows(n, n).norm();
    assert!((t0 - t1).abs() < 1e-6, "{t0} vs {t1}");
}

#[test]
fn squeeze_wrenches_leave_payload_acceleration_unchanged() {
    let (sc, free, state) = lifted();
    let data = hold_controller(&free, &sc, &state).prepare(&state, 0.0).unwrap();
    let task = data.payload.expect("payload task active without fixtures");
    let g = free.grasp_matrix(&state).unwrap();
    let basis = squeeze_basis(&g).unwrap();
    assert_eq!(basis.ncols(), 6);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let f = DVector::from_fn(free.num_wrenches(), |_, _| rng.gen_range(-20.0..20.0));
    let base = task.acceleration(&f);
    for _ in 0..20 {
        let s = &basis * DVector::from_fn(basis.ncols(), |_, _| rng.gen_range(-50.0..50.0));
        let mut df = DVector::zeros(free.num_wrenches());
        for (c, &si) in g.slots.iter().enumerate() {
            df.rows_mut(6 * si, 6).copy_from(&s.rows(6 * c, 6));
        }
        assert!((task.acceleration(&(&f + df)) - base).amax() < 1e-10);
    }
}

#[test]
fn surface_rows_bound_friction_and_center_of_pressure() {
    let c = surface_rows(0.1, 0.05, 0.5, 0.02);
    let inside = |w: [f64; 6]| (&c * DVector::from_row_slice(&w)).max() <= 0.0;
    assert!(inside([0.0, 0.0, 10.0, 0.0, 0.0, 0.0]));
    assert!(inside([3.0, -3.0, 10.0, 0.4, 0.9, 0.1]));
    assert!(!inside([0.0, 0.0, -1.0, 0.0, 0.0, 0.0]), "pulling contact accepted");
    assert!(!inside([4.0, 0.0, 10.0, 0.0, 0.0, 0.0]), "slipping contact accepted");
    assert!(!inside([0.0, 0.0, 10.0, 0.0, 1.1, 0.0]), "center of pressure outside the sole");
    assert!(!inside([0.0, 0.0, 10.0, 0.6, 0.0, 0.0]));
    assert!(!inside([0.0, 0.0, 10.0, 0.0, 0.0, 0.3]), "torsional slip accepted");
}

#[test]
fn controller_output_is_bit_reproducible() {
    let (sc, free, mut state) = lifted();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let nu = DVector::from_fn(free.num_dofs(), |_, _| rng.gen_range(-0.05..0.05));
    state.set_nu(&nu);
    let ctl = hold_controller(&free, &sc, &state);
    let a = ctl.step(&state, 0.3).unwrap();
    let b = ctl.step(&state, 0.3).unwrap();
    assert_eq!(a.torques, b.torques);
    assert_eq!(a.wrenches, b.wrenches);
}

#[test]
fn reference_momentum_rates_are_derivatives_of_the_momenta() {
    let sc = lifting_scenario();
    let free = lifting_system(false);
    let target = lifted_posture(&sc).unwrap();
    let refs = TaskReferences::hold(sc.stance.clone(), sc.initial_posture()).then(0.5, 2.0, target);
    let h = 1e-3;
    for t in [0.8, 1.2, 1.5, 2.1] {
        let (a, b, mid) = (refs.sample(&free, t - h), refs.sample(&free, t + h), refs.sample(&free, t));
        let rate = (b.total_momentum - a.total_momentum) / (2.0 * h);
        let scale = mid.total_momentum_rate.amax().max(1e-3);
        assert!((rate - mid.total_momentum_rate).amax() < 1e-2 * scale, "t={t}");
        for (i, m) in free.agents().iter().enumerate() {
            let cdot = (b.agents[i].com - a.agents[i].com) / (2.0 * h);
            let lin: Vec3 = mid.agents[i].momentum.fixed_rows::<3>(0).into();
            assert!((lin - cdot * m.total_mass()).amax() < 1e-2 * lin.amax().max(1e-3), "t={t} agent {i}");
        }
    }
    // holds are at rest
    let rest = refs.sample(&free, 0.2);
    assert_eq!(rest.total_momentum, Vec6::zeros());
    assert!(rest.agents.iter().all(|a| a.state.joint_velocities.amax() == 0.0));
}

#[test]
fn unequal_effort_moves_torque_to_the_cheaper_agent() {
    let (sc, free, state) = lifted();
    let n = free.agents()[0].num_joints();
    let norms = |effort: [f64; 2]| {
        let mut ctl = hold_controller(&free, &sc, &state);
        ctl.gains.effort = effort.to_vec();
        let out = ctl.step(&state, 0.0).unwrap();
        (out.torques.rows(0, n).norm(), out.torques.rows(n, n).norm())
    };
    let (e0, e1) = norms([1.0, 1.0]);
    let (u0, u1) = norms([3.0, 1.0]);
    assert!(u0 < e0 && u1 > e1, "equal ({e0}, {e1}) unequal ({u0}, {u1})");
}

#[test]
fn torque_map_spans_every_consistent_torque() {
    // for any f, τ(f) satisfies the eliminated constraint
    let (_, free, state) = lifted();
    let eval = free.evaluate(&state);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let u0 = DVector::from_fn(free.num_torques(), |_, _| rng.gen_range(-1.0..1.0));
    let map = torque_parametrization(&eval, &u0).unwrap();
    assert_eq!(map.consistency_matrix.nrows(), 0);
    for _ in 0..10 {
        let f = DVector::from_fn(free.num_wrenches(), |_, _| rng.gen_range(-30.0..30.0));
        let res = map.residual(&map.torques(&f), &f);
        assert!(res < 1e-8 * map.r0.amax().max(1.0), "{res} {}", map.r0.amax());
    }
    // the postural part lives in the null space of P
    let leak = (&map.p * &map.postural).amax();
    assert!(leak < 1e-9 * map.p.amax() * u0.amax(), "{leak} {}", map.p.amax());
}
