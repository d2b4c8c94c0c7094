//! Simulation of the coupled system under plan controls, and plan validation.

use serde::Serialize;

use crate::abstraction::Abstraction;
use crate::controller::{IntegratorSettings, TransitionControl};
use crate::grid::CellIndex;
use crate::linalg;
use crate::model::{AgentId, NetworkModel};
use crate::ode;
use crate::planner::{ControlSchedule, Plan};
use crate::{Error, Result};

/// Distance within which a state on a shared face counts as inside the planned cell.
pub const SNAP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// `states[sample][agent]`.
    pub states: Vec<Vec<Vec<f64>>>,
    /// Input applied from each sample onward; the last row repeats the final input.
    pub inputs: Vec<Vec<Vec<f64>>>,
    /// Sample index of each step boundary `k dt`.
    pub step_samples: Vec<usize>,
    pub audit_error: f64,
}

impl Trajectory {
    pub fn final_states(&self) -> &[Vec<f64>] {
        self.states.last().expect("nonempty trajectory")
    }

    pub fn at_step(&self, k: usize) -> &[Vec<f64>] {
        &self.states[self.step_samples[k]]
    }
}

fn split(model: &NetworkModel, y: &[f64]) -> Vec<Vec<f64>> {
    let n = model.dim();
    y.chunks(n).map(<[f64]>::to_vec).collect()
}

/// Integrates the coupled system under a control schedule. Each step starts
/// from the realized state.
pub fn simulate_closed_loop(
    abs: &Abstraction,
    schedule: &ControlSchedule,
    settings: &IntegratorSettings,
) -> Result<Trajectory> {
    let model = &abs.model;
    let dt = schedule.dt;
    let mut y: Vec<f64> = model.initial_states.concat();
    let mut times = Vec::new();
    let mut states = Vec::new();
    let mut inputs = Vec::new();
    let mut step_samples = Vec::new();
    let mut audit = 0.0f64;
    let mut last_input: Vec<Vec<f64>> =
        model.ids().map(|i| vec![0.0; model.agent(i).dim]).collect();

    for (k, row) in schedule.controls.iter().enumerate() {
        let x0 = split(model, &y);
        let ctrls: Vec<TransitionControl<'_>> = model
            .ids()
            .map(|i| TransitionControl {
                agent: model.agent(i),
                lambda: schedule.lambda[i.index()],
                x_i0: x0[i.index()].clone(),
                w: row[i.index()].w.clone(),
                reference: &row[i.index()].reference,
            })
            .collect();
        let inputs_at = |t: f64, xs: &[Vec<f64>]| -> Result<Vec<Vec<f64>>> {
            ctrls
                .iter()
                .map(|c| {
                    let i = c.agent.id;
                    c.eval_k(t, &xs[i.index()], &model.neighbor_block(i, xs))
                })
                .collect()
        };
        let rhs = |t: f64, yy: &[f64], out: &mut [f64]| -> Result<()> {
            let xs = split(model, yy);
            let us = inputs_at(t, &xs)?;
            let n = model.dim();
            for i in model.ids() {
                let o = &mut out[i.index() * n..(i.index() + 1) * n];
                model
                    .agent(i)
                    .eval_f_into(&xs[i.index()], &model.neighbor_block(i, &xs), o)
                    .map_err(|source| Error::Eval { agent: i, source })?;
                linalg::axpy(o, 1.0, &us[i.index()]);
            }
            Ok(())
        };
        let (dense, est) =
            ode::rk4_audited(rhs, 0.0, &y, dt, settings.substeps, settings.integ_tol)?;
        audit = audit.max(est);
        step_samples.push(times.len());
        for s in 0..dense.len() - 1 {
            let xs = split(model, &dense.ys[s]);
            inputs.push(inputs_at(s as f64 * dense.h, &xs)?);
            times.push(k as f64 * dt + s as f64 * dense.h);
            states.push(xs);
        }
        y = dense.endpoint().to_vec();
        last_input = inputs.last().cloned().unwrap_or(last_input);
    }
    step_samples.push(times.len());
    times.push(schedule.controls.len() as f64 * dt);
    states.push(split(model, &y));
    inputs.push(last_input);
    Ok(Trajectory {
        times,
        states,
        inputs,
        step_samples,
        audit_error: audit,
    })
}

/// Integrates the coupled system under given inputs with `steps` RK4 steps.
/// Fails when an input exceeds its bound.
pub fn simulate_open_loop<F>(
    model: &NetworkModel,
    input: F,
    duration: f64,
    steps: usize,
) -> Result<Trajectory>
where
    F: Fn(f64, AgentId) -> Vec<f64>,
{
    let check = |t: f64| -> Result<Vec<Vec<f64>>> {
        model
            .ids()
            .map(|i| {
                let v = input(t, i);
                let norm = linalg::norm(&v);
                let v_max = model.agent(i).v_max;
                if norm > v_max * (1.0 + 1e-12) {
                    return Err(Error::InputBound {
                        agent: i,
                        t,
                        norm,
                        v_max,
                    });
                }
                Ok(v)
            })
            .collect()
    };
    let rhs = |t: f64, yy: &[f64], out: &mut [f64]| -> Result<()> {
        let xs = split(model, yy);
        let us = check(t)?;
        let n = model.dim();
        for i in model.ids() {
            let o = &mut out[i.index() * n..(i.index() + 1) * n];
            model
                .agent(i)
                .eval_f_into(&xs[i.index()], &model.neighbor_block(i, &xs), o)
                .map_err(|source| Error::Eval { agent: i, source })?;
            linalg::axpy(o, 1.0, &us[i.index()]);
        }
        Ok(())
    };
    let dense = ode::rk4(rhs, 0.0, &model.initial_states.concat(), duration, steps)?;
    let times: Vec<f64> = (0..dense.len()).map(|s| s as f64 * dense.h).collect();
    let inputs = times
        .iter()
        .map(|&t| check(t))
        .collect::<Result<Vec<_>>>()?;
    Ok(Trajectory {
        states: dense.ys.iter().map(|y| split(model, y)).collect(),
        step_samples: vec![0, dense.len() - 1],
        times,
        inputs,
        audit_error: 0.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MembershipCheck {
    pub step: usize,
    pub agent: AgentId,
    pub planned: CellIndex,
    pub located: Option<CellIndex>,
    /// Distance from the state to the nearest face of the planned cell; negative outside.
    pub margin: f64,
    pub snapped: bool,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub passed: bool,
    pub steps: usize,
    pub failures: usize,
    /// Smallest membership margin over the states reached by transitions (steps 1..=m),
    /// or the initial margin when the plan has no transitions.
    pub min_margin: f64,
    /// Margin of the initial states, which lie on a grid corner by construction.
    pub initial_margin: f64,
    /// Largest distance by which a neighbor left its per-step tube; nonpositive when inside.
    pub max_tube_excess: f64,
    pub audit_error: f64,
    pub checks: Vec<MembershipCheck>,
}

impl ValidationReport {
    pub fn first_failure(&self) -> Option<&MembershipCheck> {
        self.checks.iter().find(|c| !c.passed)
    }
}

/// Checks that every agent occupies its planned cell at every step.
pub fn validate_plan(abs: &Abstraction, plan: &Plan, traj: &Trajectory) -> ValidationReport {
    let mut checks = Vec::new();
    let mut min_margin = f64::INFINITY;
    let mut initial_margin = f64::INFINITY;
    for k in 0..=plan.steps {
        let xs = traj.at_step(k);
        for i in abs.model.ids() {
            let dec = abs.dec(i);
            let planned = plan.agents[i.index()].cells[k].clone();
            let x = &xs[i.index()];
            let margin = dec.cell_box(&planned).face_margin(x);
            let located = dec.locate(x).ok();
            let exact = located.as_ref() == Some(&planned);
            let snapped = !exact && margin >= -SNAP_TOL;
            if k == 0 {
                initial_margin = initial_margin.min(margin);
            } else {
                min_margin = min_margin.min(margin);
            }
            checks.push(MembershipCheck {
                step: k,
                agent: i,
                planned,
                located,
                margin,
                snapped,
                passed: exact || snapped,
            });
        }
    }
    let mut tube = f64::NEG_INFINITY;
    for k in 0..plan.steps {
        let (s0, s1) = (traj.step_samples[k], traj.step_samples[k + 1]);
        for s in s0..=s1 {
            let t = traj.times[s] - traj.times[s0];
            for i in abs.model.ids() {
                let b = abs.dec(i).cell_box(&plan.agents[i.index()].cells[k]);
                let c = abs.model.agent(i).c_rate();
                let d = linalg::box_distance(&traj.states[s][i.index()], &b.lo, &b.hi);
                tube = tube.max(d - c * t);
            }
        }
    }
    let failures = checks.iter().filter(|c| !c.passed).count();
    ValidationReport {
        passed: failures == 0,
        steps: plan.steps,
        failures,
        min_margin: if plan.steps == 0 {
            initial_margin
        } else {
            min_margin
        },
        initial_margin,
        max_tube_excess: tube,
        audit_error: traj.audit_error,
        checks,
    }
}
