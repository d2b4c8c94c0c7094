//! Nested timed-eventually goals.

use serde::{Deserialize, Serialize};

use crate::grid::{CellDecomposition, CellId};
use crate::{Error, Result};

/// Absolute tolerance when comparing step times with window endpoints.
const WINDOW_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Goal {
    pub region: GoalBox,
    pub window: (f64, f64),
    /// Window measured from the step at which the previous goal was met
    /// (from time zero for the first goal); otherwise from time zero.
    pub relative: bool,
}

/// Per agent (by index), an ordered list of goals.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TimedReachSpec {
    pub goals: Vec<Vec<Goal>>,
}

impl TimedReachSpec {
    /// Latest time by which the agent's last goal can be met.
    pub fn deadline(&self, agent: usize) -> f64 {
        let mut prev = 0.0f64;
        let mut worst = 0.0f64;
        for g in &self.goals[agent] {
            prev = if g.relative {
                prev + g.window.1
            } else {
                g.window.1
            };
            worst = worst.max(prev);
        }
        worst
    }

    pub fn check_deadline(&self, horizon: f64) -> Result<()> {
        for k in 0..self.goals.len() {
            let d = self.deadline(k);
            if d > horizon + WINDOW_EPS {
                return Err(Error::model(format!(
                    "agent {}: cumulative deadline {d} exceeds the horizon {horizon}",
                    k + 1
                )));
            }
        }
        Ok(())
    }
}

/// Inclusive step range `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepWindow {
    pub lo: usize,
    pub hi: usize,
}

impl StepWindow {
    pub fn contains(&self, k: usize) -> bool {
        self.lo <= k && k <= self.hi
    }
}

/// Steps `k` with `k dt` in `[a, b]`.
pub fn window_to_steps(window: (f64, f64), dt: f64) -> Result<StepWindow> {
    let (a, b) = window;
    if !(0.0 <= a && a <= b && dt > 0.0) {
        return Err(Error::OutOfRange {
            what: "window",
            detail: format!("[{a}, {b}] with step {dt}"),
        });
    }
    let mut lo = (a / dt).ceil().max(0.0) as usize;
    if lo > 0 && ((lo - 1) as f64 * dt) >= a - WINDOW_EPS {
        lo -= 1;
    }
    let mut hi = (b / dt).floor() as usize;
    if ((hi + 1) as f64 * dt) <= b + WINDOW_EPS {
        hi += 1;
    }
    if lo > hi {
        return Err(Error::Unsatisfiable(format!(
            "window [{a}, {b}] contains no multiple of the time step {dt}"
        )));
    }
    Ok(StepWindow { lo, hi })
}

/// Cells whose whole box lies inside the goal box.
pub fn label_cells(dec: &CellDecomposition, region: &GoalBox) -> Vec<CellId> {
    dec.cells()
        .iter()
        .enumerate()
        .filter(|(_, l)| {
            let b = dec.cell_box(l);
            (0..b.lo.len()).all(|d| region.lo[d] <= b.lo[d] && b.hi[d] <= region.hi[d])
        })
        .map(|(k, _)| k as CellId)
        .collect()
}

/// A goal resolved against an agent's decomposition and time step.
#[derive(Debug, Clone)]
pub struct CompiledGoal {
    pub member: Vec<bool>,
    pub steps: StepWindow,
    pub relative: bool,
}

impl CompiledGoal {
    pub fn contains(&self, c: CellId) -> bool {
        self.member[c as usize]
    }
}

pub fn compile_goals(
    goals: &[Goal],
    dec: &CellDecomposition,
    dt: f64,
) -> Result<Vec<CompiledGoal>> {
    goals
        .iter()
        .map(|g| {
            let mut member = vec![false; dec.len()];
            for c in label_cells(dec, &g.region) {
                member[c as usize] = true;
            }
            Ok(CompiledGoal {
                member,
                steps: window_to_steps(g.window, dt)?,
                relative: g.relative,
            })
        })
        .collect()
}

/// Worst-case step by which the last goal is met.
pub fn deadline_step(goals: &[CompiledGoal]) -> usize {
    let mut prev = 0usize;
    let mut worst = 0usize;
    for g in goals {
        prev = if g.relative {
            prev + g.steps.hi
        } else {
            g.steps.hi
        };
        worst = worst.max(prev);
    }
    worst
}
