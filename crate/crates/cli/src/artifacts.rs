//! Files read and written by the commands.

use std::fs;
use std::path::Path;

use horizon_abs::planner::{Plan, SynthesisLog};
use horizon_abs::sim::Trajectory;
use horizon_abs::wellposed::DiscretizationParams;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Failure;

pub const ABSTRACTION: &str = "abstraction.json";
pub const PLAN: &str = "plan.json";
pub const SYNTHESIS: &str = "synthesis.json";
pub const VALIDATION: &str = "validation.json";
pub const TRAJECTORY: &str = "trajectory.csv";
pub const FIGURE: &str = "figure.svg";
pub const NEXT_MODEL: &str = "next_model.json";

pub fn model_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanFile {
    pub model_hash: String,
    pub params: DiscretizationParams,
    #[serde(flatten)]
    pub plan: Plan,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthesisFile {
    pub model_hash: String,
    #[serde(flatten)]
    pub log: SynthesisLog,
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| Failure::io(format!("cannot read {}: {e}", path.display())))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::io(format!("cannot write {}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Failure::io(format!("cannot serialize {}: {e}", path.display())))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Failure> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes)
        .map_err(|e| Failure::io(format!("cannot parse {}: {e}", path.display())))
}

/// One row per sample and agent: `t, agent, x1..xn, v1..vn`.
pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<(), Failure> {
    let fail = |e: csv::Error| Failure::io(format!("cannot write {}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(fail)?;
    let n = traj
        .states
        .first()
        .and_then(|s| s.first())
        .map_or(0, Vec::len);
    let mut header = vec!["t".to_string(), "agent".to_string()];
    header.extend((1..=n).map(|d| format!("x{d}")));
    header.extend((1..=n).map(|d| format!("v{d}")));
    w.write_record(&header).map_err(fail)?;
    for (s, t) in traj.times.iter().enumerate() {
        for (a, x) in traj.states[s].iter().enumerate() {
            let mut row = vec![format!("{t:e}"), (a + 1).to_string()];
            row.extend(x.iter().map(|v| format!("{v:e}")));
            row.extend(traj.inputs[s][a].iter().map(|v| format!("{v:e}")));
            w.write_record(&row).map_err(fail)?;
        }
    }
    w.flush()
        .map_err(|e| Failure::io(format!("cannot write {}: {e}", path.display())))
}

/// Per-agent polylines `(t, x)` read back from a trajectory file.
pub struct TrajectoryTable {
    pub agents: Vec<Vec<(f64, Vec<f64>)>>,
}

impl TrajectoryTable {
    /// States of every agent at the last sample time.
    pub fn final_states(&self) -> Vec<Vec<f64>> {
        self.agents
            .iter()
            .map(|rows| rows.last().map(|r| r.1.clone()).unwrap_or_default())
            .collect()
    }
}

pub fn read_trajectory(path: &Path) -> Result<TrajectoryTable, Failure> {
    let fail = |msg: String| Failure::io(format!("malformed trajectory {}: {msg}", path.display()));
    let bytes = read_bytes(path)?;
    let mut r = csv::Reader::from_reader(bytes.as_slice());
    let header = r.headers().map_err(|e| fail(e.to_string()))?.clone();
    if header.len() < 2 || &header[0] != "t" || &header[1] != "agent" || header.len() % 2 != 0 {
        return Err(fail("expected columns t, agent, x1..xn, v1..vn".into()));
    }
    let dim = (header.len() - 2) / 2;
    let mut agents: Vec<Vec<(f64, Vec<f64>)>> = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| fail(e.to_string()))?;
        let num = |k: usize| -> Result<f64, Failure> {
            rec.get(k)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| {
                    fail(format!(
                        "row {}: column {} is not a number",
                        line + 2,
                        k + 1
                    ))
                })
        };
        let t = num(0)?;
        let agent = rec
            .get(1)
            .and_then(|s| s.trim().parse::<usize>().ok())
            .filter(|&a| a >= 1)
            .ok_or_else(|| fail(format!("row {}: bad agent id", line + 2)))?;
        let x = (0..dim)
            .map(|d| num(2 + d))
            .collect::<Result<Vec<_>, _>>()?;
        if agents.len() < agent {
            agents.resize_with(agent, Vec::new);
        }
        agents[agent - 1].push((t, x));
    }
    if agents.is_empty() || agents.iter().any(Vec::is_empty) {
        return Err(fail("no samples for some agent".into()));
    }
    Ok(TrajectoryTable { agents })
}
