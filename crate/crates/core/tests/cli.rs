use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use colift::files::{read_trace, SolutionFile};
use colift::summary::Summary;

fn data(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(rel)
}

fn colift(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_colift")).args(args).env("COLIFT_LOG", "info").output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn summary(dir: &Path) -> Summary {
    serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn shipped_files_validate() {
    let sc = data("scenarios/two_agent_lift.json");
    let files = ["models/lifter.json", "models/planar_arm.json", "models/mini_humanoid.json", "gains/two_agent_lift.json", "sequences/lift_ab.json", "problems/lift_posture.json"];
    let mut args = vec!["validate".to_string(), "--scenario".into(), s(&sc).into()];
    args.extend(files.iter().map(|f| s(&data(f)).to_string()));
    let out = colift(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
}

#[test]
fn invalid_files_exit_with_one_and_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("models")).unwrap();
    std::fs::create_dir_all(dir.path().join("scenarios")).unwrap();
    std::fs::copy(data("models/lifter.json"), dir.path().join("models/lifter.json")).unwrap();

    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(data("scenarios/two_agent_lift.json")).unwrap()).unwrap();
    v["contacts"][0]["mu"] = serde_json::json!(-1.0);
    let bad = dir.path().join("scenarios/bad.json");
    std::fs::write(&bad, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    let out = colift(&["validate", s(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("contacts[0].mu"), "{}", stderr(&out));

    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(data("models/lifter.json")).unwrap()).unwrap();
    v["links"][0]["inertia"]["ixx"] = serde_json::json!(100.0);
    let bad = dir.path().join("models/bad.json");
    std::fs::write(&bad, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    let out = colift(&["validate", s(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("triangle"), "{}", stderr(&out));

    let out = colift(&["validate", "/nonexistent.json"]);
    assert_eq!(out.status.code(), Some(3));
    let out = colift(&["run", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn optimize_writes_a_reproducible_solution() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    let problem = data("problems/lift_posture.json");
    for out in [&a, &b] {
        let o = colift(&["optimize", s(&problem), "--out", s(out)]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    let sol: SolutionFile = serde_json::from_str(&text).unwrap();
    assert!(sol.objective < sol.initial_objective);
    assert!(sol.improvement >= 0.1, "{}", sol.improvement);
    assert!(sol.converged);
    let o = colift(&["validate", s(&a)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

#[test]
fn unreachable_payload_target_is_a_solver_failure() {
    let dir = tempfile::tempdir().unwrap();
    let problem = dir.path().join("far.json");
    let text = format!(
        "{{\"scenario\": {:?}, \"payload_target\": {{\"xyz\": [0.0, 0.0, 3.0]}}, \"effort\": [1.0, 1.0]}}",
        s(&data("scenarios/two_agent_lift.json"))
    );
    std::fs::write(&problem, text).unwrap();
    let o = colift(&["optimize", s(&problem), "--out", s(&dir.path().join("sol.json"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("out of reach"), "{}", stderr(&o));
}

#[test]
fn dry_run_prints_the_plan_only() {
    let dir = tempfile::tempdir().unwrap();
    let o = colift(&[
        "run",
        "--scenario",
        s(&data("scenarios/two_agent_lift.json")),
        "--gains",
        s(&data("gains/two_agent_lift.json")),
        "--sequence",
        s(&data("sequences/lift_ab.json")),
        "--out",
        s(dir.path()),
        "--dry-run",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let plan = String::from_utf8_lossy(&o.stdout);
    assert!(plan.contains("phase 0 `A`: 0.000..0.500 s, 50 ticks"), "{plan}");
    assert!(plan.contains("releases fixtures"), "{plan}");
    assert!(plan.contains("total 6.500 s, 650 ticks"), "{plan}");
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn outputs_round_trip_and_replay_bit_identically() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = colift(&[
        "run",
        "--scenario",
        s(&data("scenarios/two_agent_lift.json")),
        "--gains",
        s(&data("gains/two_agent_lift.json")),
        "--sequence",
        s(&data("sequences/lift_ab.json")),
        "--out",
        s(&out),
        "--duration",
        "1.0",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let trace = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    let table = read_trace(&out.join("trace.csv")).unwrap();
    assert_eq!(table.rows.len(), 101);
    assert_eq!(table.to_csv(), trace);

    // report-data re-derives the same summary
    let again = dir.path().join("again.json");
    let o = colift(&["report-data", s(&out.join("trace.csv")), "--out", s(&again)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(&again).unwrap(), std::fs::read_to_string(out.join("summary.json")).unwrap());

    // replay from the manifest into a fresh directory
    let replay = dir.path().join("replay");
    let o = colift(&["run", "--manifest", s(&out.join("manifest.json")), "--out", s(&replay)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(replay.join("trace.csv")).unwrap(), trace);
}

#[test]
fn reconfiguring_lift_costs_less_torque_than_the_carried_lift() {
    let dir = tempfile::tempdir().unwrap();
    let sc = data("scenarios/two_agent_lift.json");
    let o = colift(&[
        "run",
        "--scenario",
        s(&sc),
        "--scenario",
        s(&sc),
        "--gains",
        s(&data("gains/two_agent_lift.json")),
        "--sequence",
        s(&data("sequences/lift_ab.json")),
        "--sequence",
        s(&data("sequences/lift_acd.json")),
        "--out",
        s(dir.path()),
        "--duration",
        "6.5",
        "--jobs",
        "2",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let ab = summary(&dir.path().join("two_agent_lift-lift_ab"));
    let ac = summary(&dir.path().join("two_agent_lift-lift_acd"));
    let (b, c) = (ab.phase("B").unwrap(), ac.phase("C").unwrap());
    for j in 0..2 {
        assert!(c.torque_integral[j] < b.torque_integral[j], "agent {j}: {} vs {}", c.torque_integral[j], b.torque_integral[j]);
    }
    for sm in [&ab, &ac] {
        assert!(sm.steady_payload_z_error.unwrap() < 1e-3);
    }
}
