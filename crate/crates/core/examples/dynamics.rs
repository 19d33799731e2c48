//! Mass matrix, gravity torques and centre of mass of the humanoid at a bent posture.

use colift::model::{self, AgentState};
use colift::reference::mini_humanoid;
use nalgebra::DVector;

fn main() {
    let humanoid = mini_humanoid();
    let mut state = AgentState::zero(&humanoid);
    for (i, q) in state.joints.iter_mut().enumerate() {
        *q = 0.2 * ((i % 3) as f64 - 1.0);
    }

    let m = model::mass_matrix(&humanoid, &state);
    let gravity = model::inverse_dynamics(&humanoid, &state, &DVector::zeros(humanoid.num_dofs()), 9.81);
    println!("{} links, {} dofs, {:.3} kg", humanoid.links().len(), humanoid.num_dofs(), humanoid.total_mass());
    println!("M[0..6, 0..6] (locked spatial inertia):\n{:.4}", m.view((0, 0), (6, 6)));
    println!("gravity generalized forces: {:.3?}", gravity.as_slice());
    println!("centre of mass: {:.4?}", model::com(&humanoid, &state).as_slice());
}
