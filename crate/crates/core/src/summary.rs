//! Summary statistics over a trace table.
//!
//! Everything here reads the CSV columns only, so `report-data` on a saved trace
//! reproduces the summary written by `run`.

use serde::{Deserialize, Serialize};

use crate::files::TraceTable;
use crate::spatial::FramePose;

/// Window at the end of a phase over which "steady" values are averaged (s).
pub const STEADY_WINDOW: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub name: String,
    pub start: f64,
    pub end: f64,
    /// Per agent torque norm statistics.
    pub torque_mean: Vec<f64>,
    pub torque_max: Vec<f64>,
    /// Mean over the last [`STEADY_WINDOW`] of the phase.
    pub torque_steady: Vec<f64>,
    /// Trapezoidal `∫‖τ‖ dt` over the phase.
    pub torque_integral: Vec<f64>,
    pub relax_events: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub duration: f64,
    pub ticks: usize,
    pub phases: Vec<PhaseSummary>,
    /// RMSE of payload position against its reference (m).
    pub payload_position_rmse: Option<f64>,
    /// RMSE of payload orientation error angle (deg).
    pub payload_orientation_rmse_deg: Option<f64>,
    pub payload_orientation_max_deg: Option<f64>,
    /// Largest `|z − z_ref|` over the final [`STEADY_WINDOW`] (m).
    pub steady_payload_z_error: Option<f64>,
    pub com_rmse: f64,
    pub relax_events: usize,
    pub max_constraint_velocity: f64,
    pub max_closure_error: f64,
    pub max_energy_error: f64,
    /// `max |energy error| / duration` (J/s).
    pub energy_error_rate: f64,
}

fn col(table: &TraceTable, name: &str) -> Vec<f64> {
    table.values(name).unwrap_or_else(|| vec![f64::NAN; table.rows.len()])
}

fn pose_at(table: &TraceTable, prefix: &str, row: usize) -> Option<FramePose> {
    let v: Vec<f64> = ["x", "y", "z", "roll", "pitch", "yaw"].iter().map(|k| table.column(&format!("{prefix}.{k}")).map_or(f64::NAN, |c| table.rows[row][c])).collect();
    v.iter().all(|x| x.is_finite()).then(|| FramePose::from_xyz_rpy([v[0], v[1], v[2]], [v[3], v[4], v[5]]))
}

fn rms(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x * x, n + 1));
    (n > 0).then(|| (sum / n as f64).sqrt())
}

fn max_abs(xs: &[f64]) -> f64 {
    xs.iter().filter(|x| x.is_finite()).fold(0.0, |m, x| m.max(x.abs()))
}

/// Contiguous runs of equal phase names, as row ranges.
fn phase_runs(table: &TraceTable) -> Vec<(String, std::ops::Range<usize>)> {
    let mut runs: Vec<(String, std::ops::Range<usize>)> = Vec::new();
    for (i, p) in table.phases.iter().enumerate() {
        match runs.last_mut() {
            Some((name, r)) if name == p => r.end = i + 1,
            _ => runs.push((p.clone(), i..i + 1)),
        }
    }
    runs
}

pub fn summarize(table: &TraceTable) -> Summary {
    let t = col(table, "t");
    let status = col(table, "status");
    let na = table.num_agents();
    let norms: Vec<Vec<f64>> = (0..na).map(|a| col(table, &format!("tau_norm{a}"))).collect();
    let duration = t.last().copied().unwrap_or(0.0) - t.first().copied().unwrap_or(0.0);

    let mut phases = Vec::new();
    for (k, (name, range)) in phase_runs(table).into_iter().enumerate() {
        // the phase starts where the previous one ended: include that sample in integrals
        let from = if k == 0 { range.start } else { range.start - 1 };
        let (start, end) = (t[from], t[range.end - 1]);
        let steady: Vec<usize> = range.clone().filter(|&i| t[i] >= end - STEADY_WINDOW - 1e-9).collect();
        let mut s = PhaseSummary {
            name,
            start,
            end,
            torque_mean: Vec::new(),
            torque_max: Vec::new(),
            torque_steady: Vec::new(),
            torque_integral: Vec::new(),
            relax_events: range.clone().filter(|&i| status[i] != 0.0).count(),
        };
        for n in &norms {
            let len = range.len() as f64;
            s.torque_mean.push(range.clone().map(|i| n[i]).sum::<f64>() / len);
            s.torque_max.push(range.clone().map(|i| n[i]).fold(f64::NEG_INFINITY, f64::max));
            s.torque_steady.push(steady.iter().map(|&i| n[i]).sum::<f64>() / steady.len() as f64);
            s.torque_integral.push((from + 1..range.end).map(|i| 0.5 * (n[i] + n[i - 1]) * (t[i] - t[i - 1])).sum());
        }
        phases.push(s);
    }

    let payload: Vec<(FramePose, FramePose)> =
        (0..table.rows.len()).filter_map(|i| Some((pose_at(table, "payload", i)?, pose_at(table, "payload_ref", i)?))).collect();
    let angle = |(p, r): &(FramePose, FramePose)| p.rotation.angle_to(&r.rotation).to_degrees();
    let t_end = t.last().copied().unwrap_or(0.0);
    let steady_rows: Vec<usize> = (0..table.rows.len()).filter(|&i| t[i] >= t_end - STEADY_WINDOW - 1e-9).collect();
    let steady_z = steady_rows
        .iter()
        .filter_map(|&i| Some((pose_at(table, "payload", i)?.position.z - pose_at(table, "payload_ref", i)?.position.z).abs()))
        .fold(None, |m: Option<f64>, e| Some(m.map_or(e, |m| m.max(e))));

    let com_err = (0..table.rows.len()).map(|i| {
        let d: f64 = ["x", "y", "z"].iter().map(|k| {
            let a = table.column(&format!("com.{k}")).map_or(0.0, |c| table.rows[i][c]);
            let b = table.column(&format!("com_ref.{k}")).map_or(0.0, |c| table.rows[i][c]);
            (a - b).powi(2)
        }).sum();
        d.sqrt()
    });

    let energy = col(table, "energy_error");
    let max_energy_error = max_abs(&energy);
    Summary {
        duration,
        ticks: table.rows.len().saturating_sub(1),
        phases,
        payload_position_rmse: rms(payload.iter().map(|(p, r)| (p.position - r.position).norm())),
        payload_orientation_rmse_deg: rms(payload.iter().map(angle)),
        payload_orientation_max_deg: payload.iter().map(angle).reduce(f64::max),
        steady_payload_z_error: steady_z,
        com_rmse: rms(com_err).unwrap_or(0.0),
        relax_events: status.iter().filter(|&&s| s != 0.0).count(),
        max_constraint_velocity: max_abs(&col(table, "constraint_velocity")),
        max_closure_error: max_abs(&col(table, "closure_error")),
        max_energy_error,
        energy_error_rate: if duration > 0.0 { max_energy_error / duration } else { 0.0 },
    }
}

impl Summary {
    pub fn phase(&self, name: &str) -> Option<&PhaseSummary> {
        self.phases.iter().find(|p| p.name == name)
    }
}
