//! Optimizes the lifted posture described by the shipped problem file.

use std::path::Path;

use colift::ergonomics::optimize_posture;
use colift::files::load_problem;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/problems/lift_posture.json");
    let (sc, problem) = load_problem(&path)?;
    let sol = optimize_posture(&problem)?;
    println!("{}: {:.4} -> {:.4} in {} iterations (converged: {})", sc.name, sol.initial_objective, sol.objective, sol.iterations, sol.converged);
    for (a, q) in sol.joints.iter().enumerate() {
        println!("agent {a} joints: {:.4?}", q.as_slice());
    }
    Ok(())
}
