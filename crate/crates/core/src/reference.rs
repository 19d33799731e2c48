//! Desk-scale reference models.
//!
//! The same models ship as JSON files under `data/models/`; a test keeps the two in sync.

use std::f64::consts::PI;

use nalgebra::DVector;

use crate::control::{ControllerGains, Posture};
use crate::coupled::{assemble, ContactSpec, CoupledSystem, GraspLimits, PayloadModel, SurfaceGeometry, SystemState};
use crate::ergonomics::{optimize_posture, placed_state, posture_of, project_closure, PostureProblem, Stance};
use crate::error::ErgonomicsError;
use crate::sim::{Phase, Scenario, Sequence};
use crate::model::{diag_inertia, AgentModel, JointKind, JointLimits, LinkSpec};
use crate::spatial::{FramePose, SpatialInertia, Vec3};

struct Builder {
    links: Vec<LinkSpec>,
    limits: Vec<(f64, f64)>,
    torques: Vec<f64>,
}

impl Builder {
    fn new(base: &str, inertia: SpatialInertia) -> Self {
        Builder {
            links: vec![LinkSpec {
                name: base.into(),
                parent: None,
                joint: JointKind::Fixed,
                origin: FramePose::identity(),
                inertia,
            }],
            limits: Vec::new(),
            torques: Vec::new(),
        }
    }

    fn index(&self, name: &str) -> usize {
        self.links.iter().position(|l| l.name == name).expect("parent defined earlier")
    }

    #[allow(clippy::too_many_arguments)]
    fn revolute(
        &mut self,
        name: &str,
        parent: &str,
        axis: Vec3,
        xyz: [f64; 3],
        inertia: SpatialInertia,
        limits: (f64, f64),
        torque: f64,
    ) -> &mut Self {
        let parent = self.index(parent);
        self.links.push(LinkSpec {
            name: name.into(),
            parent: Some(parent),
            joint: JointKind::Revolute { axis },
            origin: FramePose::from_translation(Vec3::from(xyz)),
            inertia,
        });
        self.limits.push(limits);
        self.torques.push(torque);
        self
    }

    fn fixed(&mut self, name: &str, parent: &str, xyz: [f64; 3]) -> &mut Self {
        self.fixed_rpy(name, parent, xyz, [0.0; 3])
    }

    fn fixed_rpy(&mut self, name: &str, parent: &str, xyz: [f64; 3], rpy: [f64; 3]) -> &mut Self {
        let parent = self.index(parent);
        self.links.push(LinkSpec {
            name: name.into(),
            parent: Some(parent),
            joint: JointKind::Fixed,
            origin: FramePose::from_xyz_rpy(xyz, rpy),
            inertia: SpatialInertia::zero(),
        });
        self
    }

    fn build(self, name: &str) -> AgentModel {
        AgentModel::new(name, self.links, JointLimits { position: self.limits, torque: self.torques })
            .expect("reference model is valid")
    }
}

/// Uniform rod of length `len` hanging along `-z` from its joint.
fn rod(mass: f64, len: f64) -> SpatialInertia {
    let i = mass * len * len / 12.0 + mass * 0.02 * 0.02 / 4.0;
    SpatialInertia::new(mass, Vec3::new(0.0, 0.0, -len / 2.0), diag_inertia(i, i, mass * 0.02 * 0.02 / 2.0))
}

fn blob(mass: f64, com: [f64; 3], r: f64) -> SpatialInertia {
    let i = 0.4 * mass * r * r;
    SpatialInertia::new(mass, Vec3::from(com), diag_inertia(i, i, i))
}

/// A single free-floating rigid body.
pub fn single_body() -> AgentModel {
    let inertia = SpatialInertia::new(2.0, Vec3::new(0.05, -0.02, 0.1), diag_inertia(0.02, 0.03, 0.04));
    Builder::new("body", inertia).build("single_body")
}

/// Four-joint serial arm on a floating base; every joint rotates about `y`, links
/// extend along `+z`. The `cap` frame at the tip faces down, so a surface contact
/// there models a ceiling support.
pub fn planar_arm() -> AgentModel {
    let link = |m: f64| SpatialInertia::new(m, Vec3::new(0.0, 0.0, 0.15), diag_inertia(m * 0.0075, m * 0.0075, m * 0.0004));
    let mut b = Builder::new("base", link(1.0));
    let lim = (-PI, PI);
    b.revolute("link1", "base", Vec3::y(), [0.0, 0.0, 0.3], link(1.0), lim, 50.0)
        .revolute("link2", "link1", Vec3::y(), [0.0, 0.0, 0.3], link(1.0), lim, 50.0)
        .revolute("link3", "link2", Vec3::y(), [0.0, 0.0, 0.3], link(1.0), lim, 50.0)
        .revolute("link4", "link3", Vec3::y(), [0.0, 0.0, 0.3], link(1.0), lim, 50.0)
        .fixed("tip", "link4", [0.0, 0.0, 0.3])
        .fixed_rpy("cap", "link4", [0.0, 0.0, 0.3], [PI, 0.0, 0.0]);
    b.build("planar_arm")
}

/// The planar arm standing on the floor with its tip braced against a ceiling:
/// a statically indeterminate chain. Returns the system and the resting state.
pub fn hyperstatic_chain(joints: [f64; 4]) -> (CoupledSystem, SystemState) {
    let support = SurfaceGeometry { half_x: 0.05, half_y: 0.05, mu: 1.0, torsion_mu: 0.05 };
    let contacts = vec![ContactSpec::surface(0, "base", support), ContactSpec::surface(0, "cap", support)];
    let system = assemble(vec![planar_arm()], None, contacts, 9.81).expect("reference system is valid");
    let stance = Stance { feet: vec![vec![("base".into(), FramePose::identity())]] };
    let state = placed_state(&system, &stance, &[DVector::from_row_slice(&joints)], None);
    (system, state)
}

/// Eight-joint mini humanoid: two 2-joint legs (hip and knee pitch) and two 2-joint
/// arms (shoulder and elbow pitch), mirror-symmetric about the sagittal plane.
pub fn mini_humanoid() -> AgentModel {
    let mut b = Builder::new("torso", blob(3.0, [0.0, 0.0, 0.15], 0.12));
    for (side, y) in [("left", 0.08), ("right", -0.08)] {
        b.revolute(&format!("{side}_thigh"), "torso", Vec3::y(), [0.0, y, -0.05], rod(0.8, 0.25), (-2.0, 2.0), 40.0)
            .revolute(&format!("{side}_shank"), &format!("{side}_thigh"), Vec3::y(), [0.0, 0.0, -0.25], rod(0.6, 0.25), (0.0, 2.5), 40.0)
            .fixed(&format!("{side}_foot"), &format!("{side}_shank"), [0.0, 0.0, -0.25]);
    }
    for (side, y) in [("left", 0.15), ("right", -0.15)] {
        b.revolute(&format!("{side}_upper_arm"), "torso", Vec3::y(), [0.0, y, 0.3], rod(0.4, 0.2), (-3.0, 1.0), 20.0)
            .revolute(&format!("{side}_forearm"), &format!("{side}_upper_arm"), Vec3::y(), [0.0, 0.0, -0.2], rod(0.3, 0.2), (-2.5, 0.0), 20.0)
            .fixed(&format!("{side}_hand"), &format!("{side}_forearm"), [0.0, 0.0, -0.2]);
    }
    b.build("mini_humanoid")
}

/// Thirteen-joint lifting agent: torso base, one 6-joint leg ending in a flat foot
/// and one 7-joint arm ending in a palm frame. One foot plus one rigid grasp gives
/// twelve constraint rows, leaving one redundant joint per agent for the postural task.
pub fn lifter() -> AgentModel {
    let mut b = Builder::new("torso", blob(4.0, [0.0, 0.0, 0.15], 0.15));
    let small = |m: f64| blob(m, [0.0, 0.0, 0.0], 0.03);
    b.revolute("hip_yaw", "torso", Vec3::z(), [0.0, 0.0, -0.05], small(0.3), (-0.8, 0.8), 60.0)
        .revolute("hip_roll", "hip_yaw", Vec3::x(), [0.0, 0.0, 0.0], small(0.3), (-0.6, 0.6), 60.0)
        .revolute("thigh", "hip_roll", Vec3::y(), [0.0, 0.0, 0.0], rod(1.0, 0.25), (-2.0, 1.0), 80.0)
        .revolute("shank", "thigh", Vec3::y(), [0.0, 0.0, -0.25], rod(0.8, 0.25), (0.3, 2.4), 80.0)
        .revolute("ankle", "shank", Vec3::y(), [0.0, 0.0, -0.25], small(0.2), (-1.2, 1.2), 60.0)
        .revolute("foot", "ankle", Vec3::x(), [0.0, 0.0, 0.0], blob(0.5, [0.02, 0.0, -0.03], 0.05), (-0.6, 0.6), 60.0)
        .fixed("sole", "foot", [0.0, 0.0, -0.05]);
    b.revolute("shoulder_pitch", "torso", Vec3::y(), [0.05, 0.0, 0.3], small(0.2), (-3.0, 1.0), 40.0)
        .revolute("shoulder_roll", "shoulder_pitch", Vec3::x(), [0.0, 0.0, 0.0], small(0.2), (-1.5, 1.5), 40.0)
        .revolute("upper_arm", "shoulder_roll", Vec3::z(), [0.0, 0.0, 0.0], rod(0.5, 0.2), (-1.5, 1.5), 40.0)
        .revolute("forearm", "upper_arm", Vec3::y(), [0.0, 0.0, -0.2], rod(0.4, 0.2), (-2.5, -0.2), 40.0)
        .revolute("wrist_yaw", "forearm", Vec3::z(), [0.0, 0.0, -0.2], small(0.1), (-1.5, 1.5), 20.0)
        .revolute("wrist_pitch", "wrist_yaw", Vec3::y(), [0.0, 0.0, 0.0], small(0.1), (-1.5, 1.5), 20.0)
        .revolute("hand", "wrist_pitch", Vec3::x(), [0.0, 0.0, 0.0], blob(0.2, [0.0, 0.0, -0.03], 0.03), (-1.5, 1.5), 20.0)
        .fixed("palm", "hand", [0.0, 0.0, -0.06]);
    b.build("lifter")
}

/// 3 kg box, 0.3 × 0.2 × 0.2 m, with side handles and a bottom face.
pub fn box_payload() -> PayloadModel {
    let (m, a, b, c) = (3.0, 0.3, 0.2, 0.2);
    PayloadModel::new(
        m,
        diag_inertia(m * (b * b + c * c) / 12.0, m * (a * a + c * c) / 12.0, m * (a * a + b * b) / 12.0),
        vec![
            ("left".into(), FramePose::from_xyz_rpy([-0.15, 0.0, 0.0], [0.0, -PI / 2.0, 0.0])),
            ("right".into(), FramePose::from_xyz_rpy([0.15, 0.0, 0.0], [0.0, -PI / 2.0, PI])),
            ("bottom".into(), FramePose::from_xyz_rpy([0.0, 0.0, -0.1], [0.0, 0.0, 0.0])),
        ],
    )
    .expect("reference payload is valid")
}

pub fn lifter_foot() -> SurfaceGeometry {
    SurfaceGeometry { half_x: 0.15, half_y: 0.08, mu: 0.7, torsion_mu: 0.05 }
}

pub fn lifter_grip() -> GraspLimits {
    GraspLimits { max_force: 150.0, max_moment: 20.0 }
}

pub fn table_support() -> SurfaceGeometry {
    SurfaceGeometry { half_x: 0.15, half_y: 0.1, mu: 0.5, torsion_mu: 0.05 }
}

/// Two lifters facing each other across the box, each on one foot and holding one
/// handle; optionally the box still rests on the table.
pub fn lifting_system(on_table: bool) -> CoupledSystem {
    let mut contacts = vec![
        ContactSpec::surface(0, "sole", lifter_foot()),
        ContactSpec::surface(1, "sole", lifter_foot()),
        ContactSpec::grasp(0, "palm", "left", lifter_grip()),
        ContactSpec::grasp(1, "palm", "right", lifter_grip()),
    ];
    if on_table {
        contacts.push(ContactSpec::fixture("bottom", table_support()));
    }
    assemble(vec![lifter(), lifter()], Some(box_payload()), contacts, 9.81).expect("reference system is valid")
}

/// Feet 0.9 m apart, agents facing each other along `x`.
pub fn lifting_stance() -> Stance {
    Stance {
        feet: vec![
            vec![("sole".into(), FramePose::from_xyz_rpy([-0.45, 0.0, 0.0], [0.0, 0.0, 0.0]))],
            vec![("sole".into(), FramePose::from_xyz_rpy([0.45, 0.0, 0.0], [0.0, 0.0, PI]))],
        ],
    }
}

/// Box resting on the table.
pub fn table_pose() -> FramePose {
    FramePose::from_translation(Vec3::new(0.0, 0.0, 0.6))
}

/// Crouched joint guess used to seed the grasping posture.
pub fn crouch_guess() -> Vec<DVector<f64>> {
    let q = DVector::from_vec(vec![0.0, 0.0, -0.6, 1.2, -0.6, 0.0, -0.9, 0.0, 0.0, -0.6, 0.0, 0.0, 0.0]);
    vec![q.clone(), q]
}

/// Box on the table, both agents crouched and gripping it.
pub fn lifting_scenario() -> Scenario {
    let system = lifting_system(true);
    let stance = lifting_stance();
    let joints = project_closure(&system, &stance, &crouch_guess(), Some(&table_pose()), 1e-12).expect("grasp posture is reachable");
    let initial = placed_state(&system, &stance, &joints, Some(table_pose()));
    Scenario { name: "two_agent_lift".into(), system, stance, initial }
}

/// Box held 10 cm above the table.
pub fn lifted_pose() -> FramePose {
    FramePose::from_translation(Vec3::new(0.0, 0.0, 0.7))
}

/// Gains tuned for the lifting scenario.
pub fn lifting_gains(scenario: &Scenario) -> ControllerGains {
    let mut g = ControllerGains::uniform(&scenario.system, 10.0, 100.0, 20.0, 0.0, 0.0)
        .inertia_scaled_posture(&scenario.system, &scenario.initial, 25.0, 10.0);
    g.com_ki = vec![10.0; scenario.system.agents().len()];
    g.total_com_ki = 10.0;
    g
}

/// Lifted posture reached by carrying the initial joints along with the box.
pub fn lifted_posture(scenario: &Scenario) -> Result<Posture, ErgonomicsError> {
    let free = lifting_system(false);
    let joints = project_closure(&free, &scenario.stance, &posture_of(&scenario.initial).joints, Some(&lifted_pose()), 1e-12)?;
    Ok(Posture { joints, payload: Some(lifted_pose()) })
}

/// Lifted posture with the effort-optimal joint configuration.
pub fn optimized_posture(scenario: &Scenario, effort: &[f64]) -> Result<Posture, ErgonomicsError> {
    let start = lifted_posture(scenario)?;
    let mut problem = PostureProblem::new(lifting_system(false), scenario.stance.clone(), Some(lifted_pose()), start.joints);
    problem.effort = effort.to_vec();
    let solution = optimize_posture(&problem)?;
    Ok(Posture { joints: solution.joints, payload: Some(lifted_pose()) })
}

/// Settle (A), lift (B), and optionally move to the optimized posture (C).
pub fn lifting_sequence(scenario: &Scenario, optimize: bool) -> Result<Sequence, ErgonomicsError> {
    let mut lift = Phase::move_to("B", lifted_posture(scenario)?, 3.0, 3.0);
    lift.release_fixtures = true;
    lift.settle_tolerance = Some(1e-3);
    let mut phases = vec![Phase::hold("A", 0.5), lift];
    if optimize {
        let target = optimized_posture(scenario, &[1.0, 1.0])?;
        phases.push(Phase { settle_tolerance: Some(1e-3), ..Phase::move_to("C", target, 3.0, 3.0) });
    }
    Ok(Sequence { phases })
}
