use colift::control::ControllerGains;
use colift::coupled::squeeze_basis;
use colift::files::{load_gains, write_json, GainFile, GainsFile};
use colift::model::{self, AgentModel, AgentState};
use colift::reference::{lifter, lifting_gains, lifting_scenario, mini_humanoid};
use colift::spatial::{FramePose, Rotation, Vec3};
use nalgebra::DVector;
use proptest::prelude::*;

fn models() -> [AgentModel; 2] {
    [lifter(), mini_humanoid()]
}

/// Joint angles as fractions of each joint's range.
fn state(model: &AgentModel, base: [f64; 6], fractions: &[f64]) -> AgentState {
    let joints = DVector::from_iterator(
        model.num_joints(),
        model.limits().position.iter().zip(fractions.iter().cycle()).map(|((lo, hi), s)| lo + s * (hi - lo)),
    );
    let pose = FramePose::new(Vec3::new(base[0], base[1], base[2]), Rotation::exp(&Vec3::new(base[3], base[4], base[5])));
    AgentState::at_rest(pose, joints)
}

fn base() -> impl Strategy<Value = [f64; 6]> {
    proptest::array::uniform6(-2.0..2.0f64)
}

fn fractions() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.0..1.0f64, 7)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mass_matrix_is_symmetric_positive_definite(which in 0usize..2, b in base(), s in fractions()) {
        let m = &models()[which];
        let mm = model::mass_matrix(m, &state(m, b, &s));
        prop_assert!((&mm - mm.transpose()).amax() < 1e-12);
        let eig = mm.symmetric_eigen().eigenvalues;
        prop_assert!(eig.min() > 0.0, "min eigenvalue {}", eig.min());
    }

    #[test]
    fn joint_inertia_does_not_depend_on_the_base_pose(which in 0usize..2, a in base(), b in base(), s in fractions()) {
        let m = &models()[which];
        let (ma, mb) = (model::mass_matrix(m, &state(m, a, &s)), model::mass_matrix(m, &state(m, b, &s)));
        let n = m.num_joints();
        prop_assert!((ma.view((6, 6), (n, n)) - mb.view((6, 6), (n, n))).amax() < 1e-10);
        // the locked inertia keeps the total mass on its linear block
        prop_assert!((ma[(0, 0)] - m.total_mass()).abs() < 1e-12);
    }

    #[test]
    fn gravity_load_on_the_base_is_the_weight(which in 0usize..2, b in base(), s in fractions(), g in 0.5..20.0f64) {
        let m = &models()[which];
        let st = state(m, b, &s);
        let tau = model::inverse_dynamics(m, &st, &DVector::zeros(m.num_dofs()), g);
        prop_assert!((tau[2] - m.total_mass() * g).abs() < 1e-9 * m.total_mass() * g);
        prop_assert!(tau[0].abs() < 1e-9 && tau[1].abs() < 1e-9);
        // moment about the base origin is r_com × weight
        let c = model::com(m, &st) - st.base.position;
        let expect = c.cross(&Vec3::new(0.0, 0.0, m.total_mass() * g));
        let got: Vec3 = tau.fixed_rows::<3>(3).into();
        prop_assert!((got - expect).amax() < 1e-9);
    }

    #[test]
    fn squeeze_wrenches_produce_no_net_wrench(c in proptest::collection::vec(-100.0..100.0f64, 6)) {
        let sc = lifting_scenario();
        let free = sc.system.without_fixtures();
        let g = free.grasp_matrix(&sc.initial).unwrap();
        let basis = squeeze_basis(&g).unwrap();
        let coef = DVector::from_iterator(basis.ncols(), c.iter().cycle().copied().take(basis.ncols()));
        let net = &g.matrix * (&basis * coef);
        prop_assert!(net.amax() < 1e-9, "{}", net.amax());
    }

    #[test]
    fn diagonal_gains_survive_a_file_round_trip(d in proptest::collection::vec(1e-3..1e4f64, 6), reg in 1e-9..1e-3f64) {
        let sc = lifting_scenario();
        let mut file = GainsFile::from(&lifting_gains(&sc));
        file.total_kp = GainFile::Diagonal(d.clone());
        file.regularization = reg;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gains.json");
        write_json(&path, &file).unwrap();
        let g: ControllerGains = load_gains(&path, &sc.system).unwrap();
        for (i, v) in d.iter().enumerate() {
            prop_assert_eq!(g.total_kp[(i, i)], *v);
        }
        prop_assert_eq!(GainsFile::from(&g), file);
    }
}

