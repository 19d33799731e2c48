//! One controller tick for the two lifters holding the box on the table.

use colift::control::{Controller, ControllerOptions, TaskReferences};
use colift::ergonomics::posture_of;
use colift::reference::{lifting_gains, lifting_scenario};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sc = lifting_scenario();
    let refs = TaskReferences::hold(sc.stance.clone(), posture_of(&sc.initial));
    let ctl = Controller::new(sc.system.clone(), lifting_gains(&sc), refs, ControllerOptions::default())?;
    let out = ctl.step(&sc.initial, 0.0)?;

    println!("status {:?}, KKT residual {:.1e}", out.status, out.kkt_residual);
    for (si, slot) in sc.system.slots().iter().enumerate() {
        let w = out.wrenches.rows(6 * si, 6);
        println!("{:>24}  f = [{:8.3} {:8.3} {:8.3}]  m = [{:7.3} {:7.3} {:7.3}]", slot.contact.label(), w[0], w[1], w[2], w[3], w[4], w[5]);
    }
    let n = sc.system.agents()[0].num_joints();
    for a in 0..sc.system.agents().len() {
        println!("agent {a}: ‖τ‖ = {:.4}", out.torques.rows(a * n, n).norm());
    }
    Ok(())
}
