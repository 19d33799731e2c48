//! Minimal-effort static torques for a chain clamped at both ends: zero when vertical, not when bent.

use colift::control::InequalityOptions;
use colift::ergonomics::static_force_layer;
use colift::reference::hyperstatic_chain;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for (name, q) in [("vertical", [0.0; 4]), ("bent", [0.4, -0.8, 0.4, 0.0])] {
        let (system, state) = hyperstatic_chain(q);
        let forces = static_force_layer(&system, &state, &[1.0], &InequalityOptions::default())?;
        println!("{name:>8}: min ‖τ‖ = {:.6}, τ = {:.4?}", forces.objective, forces.torques.as_slice());
    }
    Ok(())
}
