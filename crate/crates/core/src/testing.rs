//! Shared fixtures for unit tests.

use nalgebra::DVector;
use rand::Rng;

use crate::model::{AgentModel, AgentState};
use crate::spatial::{FramePose, Rotation, Vec3, Vec6};

pub use crate::reference::{mini_humanoid, planar_arm, single_body};

pub fn random_state(model: &AgentModel, rng: &mut impl Rng) -> AgentState {
    let mut v3 = |s: f64| Vec3::new(rng.gen_range(-s..s), rng.gen_range(-s..s), rng.gen_range(-s..s));
    let base = FramePose::new(v3(1.0), Rotation::exp(&v3(2.0)));
    let base_velocity = {
        let (a, b) = (v3(1.0), v3(1.0));
        Vec6::new(a.x, a.y, a.z, b.x, b.y, b.z)
    };
    let n = model.num_joints();
    let joints = DVector::from_iterator(
        n,
        model.limits().position.iter().map(|(lo, hi)| {
            let (lo, hi) = (lo.max(-1.5), hi.min(1.5));
            rng.gen_range(lo..hi)
        }),
    );
    let joint_velocities = DVector::from_iterator(n, (0..n).map(|_| rng.gen_range(-1.0..1.0)));
    AgentState { base, joints, base_velocity, joint_velocities }
}
