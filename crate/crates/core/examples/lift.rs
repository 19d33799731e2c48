//! Simulates the carried and reconfigured lifts and writes trace.csv and summary.json.
//!
//! Usage: `cargo run --release --example lift [out-dir]`

use std::path::PathBuf;

use colift::control::ControllerOptions;
use colift::files::{write_json, write_trace, TraceTable};
use colift::reference::{lifting_gains, lifting_scenario, lifting_sequence};
use colift::sim::{run_scenario, SimConfig};
use colift::summary::summarize;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("out/example-lift"));
    let sc = lifting_scenario();
    let sequence = lifting_sequence(&sc, true)?;
    let trace = run_scenario(&sc, &lifting_gains(&sc), &sequence, &SimConfig::default(), &ControllerOptions::default())?;

    let table = TraceTable::from_trace(&trace, &sc.system);
    let summary = summarize(&table);
    write_trace(&out.join("trace.csv"), &table)?;
    write_json(&out.join("summary.json"), &summary)?;

    for phase in &summary.phases {
        println!("{:>2} {:6.2}..{:6.2} s  steady ‖τ‖ {:.3?}", phase.name, phase.start, phase.end, phase.torque_steady);
    }
    println!("payload z error {:.1e} m, wrote {}", summary.steady_payload_z_error.unwrap_or(f64::NAN), out.display());
    Ok(())
}
