//! Admissible time steps and cell diameters.
//!
//! For each agent `i` the transition controllers stay below saturation when
//!
//! ```text
//! dt < (1 - lambda) v_max / (L1 Mn + L2 lambda v_max)
//! d_max < min( 2 (1 - lambda) v_max dt / (1 + (L1 mun + L2) dt),
//!              (2 (1 - lambda) v_max dt - 2 (L1 Mn + L2 lambda v_max) dt^2) / (1 + L1 mun dt) )
//! ```
//!
//! with `mun = |(mu(j, i))_j|` and `Mn = |(M(j) + v_max(j))_j|` over the neighbors,
//! and neighbor diameters are tied by `d_max(j) <= mu(j, i) d_max(i)`.

use serde::{Deserialize, Serialize};

use crate::model::{AgentId, NetworkModel};
use crate::reach::ReachFamily;
use crate::{Error, Result};

pub const DEFAULT_MARGIN: f64 = 0.999;
pub const DEFAULT_STEP_CAP: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepChoice {
    /// Use exactly this many steps.
    Fixed(usize),
    /// Smallest feasible count not below this one.
    SearchFrom(usize),
}

/// User-facing design knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignRequest {
    pub lambda: Vec<f64>,
    /// `mu[i][k] = mu(j_k, i)` in neighbor order.
    pub mu: Vec<Vec<f64>>,
    pub steps: StepChoice,
    pub margin: f64,
    /// Explicit diameters, bypassing synthesis for the listed agents.
    pub d_max_override: Vec<Option<f64>>,
    pub step_cap: usize,
}

impl Default for DesignRequest {
    fn default() -> Self {
        DesignRequest {
            lambda: Vec::new(),
            mu: Vec::new(),
            steps: StepChoice::SearchFrom(1),
            margin: DEFAULT_MARGIN,
            d_max_override: Vec::new(),
            step_cap: DEFAULT_STEP_CAP,
        }
    }
}

impl DesignRequest {
    pub fn validate_ranges(&self) -> Result<()> {
        for (k, &l) in self.lambda.iter().enumerate() {
            if !(0.0..1.0).contains(&l) {
                return Err(Error::OutOfRange {
                    what: "lambda",
                    detail: format!("agent {}: {l} not in [0, 1)", k + 1),
                });
            }
        }
        for (k, m) in self.mu.iter().enumerate() {
            if let Some(bad) = m.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
                return Err(Error::OutOfRange {
                    what: "mu",
                    detail: format!("agent {}: {bad} is not a nonnegative number", k + 1),
                });
            }
        }
        if !(self.margin > 0.0 && self.margin < 1.0) {
            return Err(Error::OutOfRange {
                what: "margin",
                detail: format!("{} not in (0, 1)", self.margin),
            });
        }
        match self.steps {
            StepChoice::Fixed(0) | StepChoice::SearchFrom(0) => Err(Error::OutOfRange {
                what: "steps",
                detail: "step count must be positive".into(),
            }),
            _ => Ok(()),
        }
    }
}

/// A space-time discretization: `dt = T / steps` and per-agent cell diameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretizationParams {
    pub dt: f64,
    pub steps: usize,
    pub lambda: Vec<f64>,
    pub mu: Vec<Vec<f64>>,
    pub d_max: Vec<f64>,
    pub margin: f64,
}

impl DiscretizationParams {
    pub fn lambda(&self, i: AgentId) -> f64 {
        self.lambda[i.index()]
    }

    pub fn d_max(&self, i: AgentId) -> f64 {
        self.d_max[i.index()]
    }
}

/// `mun(i)`: Euclidean norm of the incoming `mu` values.
pub fn mu_norm(mu: &[Vec<f64>], i: AgentId) -> f64 {
    mu[i.index()].iter().fold(0.0, |acc, m| acc + m * m).sqrt()
}

/// `Mn(i)`: Euclidean norm of `M(j) + v_max(j)` over the neighbors.
pub fn m_norm(model: &NetworkModel, i: AgentId) -> f64 {
    model
        .agent(i)
        .neighbors
        .iter()
        .fold(0.0, |acc, &j| acc + model.agent(j).c_rate().powi(2))
        .sqrt()
}

/// Supremum of admissible time steps for agent `i`; infinite when unconstrained.
pub fn dt_bound(model: &NetworkModel, lambda: &[f64], i: AgentId) -> f64 {
    let a = model.agent(i);
    let l = lambda[i.index()];
    let den = a.l1 * m_norm(model, i) + a.l2 * l * a.v_max;
    if den <= 0.0 {
        return f64::INFINITY;
    }
    (1.0 - l) * a.v_max / den
}

/// Supremum of admissible cell diameters for agent `i` at time step `dt`.
pub fn dmax_bound(
    model: &NetworkModel,
    lambda: &[f64],
    mu: &[Vec<f64>],
    i: AgentId,
    dt: f64,
) -> Result<f64> {
    let sup = dt_bound(model, lambda, i);
    if !(dt > 0.0 && dt < sup) {
        return Err(Error::Infeasible {
            agent: i,
            reason: format!("time step {dt} outside the admissible interval (0, {sup})"),
        });
    }
    let a = model.agent(i);
    let l = lambda[i.index()];
    let mun = mu_norm(mu, i);
    let mn = m_norm(model, i);
    let head = 2.0 * (1.0 - l) * a.v_max * dt;
    let branch_a = head / (1.0 + (a.l1 * mun + a.l2) * dt);
    let branch_b =
        (head - 2.0 * (a.l1 * mn + a.l2 * l * a.v_max) * dt * dt) / (1.0 + a.l1 * mun * dt);
    Ok(branch_a.min(branch_b))
}

/// Simple cycle of the coupling graph whose `mu` product is below one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CycleViolation {
    pub cycle: Vec<AgentId>,
    pub product: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct CycleReport {
    pub cycles: usize,
    pub violations: Vec<CycleViolation>,
}

impl CycleReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// `mu(j, i)` for the edge `j -> i`.
fn edge_mu(model: &NetworkModel, mu: &[Vec<f64>], j: AgentId, i: AgentId) -> f64 {
    let pos = model
        .agent(i)
        .neighbors
        .iter()
        .position(|&n| n == j)
        .expect("edge");
    mu[i.index()][pos]
}

/// Enumerates every simple cycle once (rooted at its smallest agent) and
/// checks that the product of `mu` along it is at least one.
pub fn check_cycles(model: &NetworkModel, mu: &[Vec<f64>]) -> CycleReport {
    let n = model.len();
    let succ: Vec<Vec<usize>> = (0..n)
        .map(|j| {
            model
                .dependents(AgentId::from_index(j))
                .into_iter()
                .map(|i| i.index())
                .collect()
        })
        .collect();
    let mut report = CycleReport::default();
    for root in 0..n {
        let mut path = vec![root];
        let mut on_path = vec![false; n];
        on_path[root] = true;
        let mut stack: Vec<usize> = vec![0];
        while let Some(pos) = stack.last_mut() {
            let v = *path.last().unwrap();
            if *pos >= succ[v].len() {
                stack.pop();
                on_path[v] = false;
                path.pop();
                continue;
            }
            let w = succ[v][*pos];
            *pos += 1;
            if w == root {
                report.cycles += 1;
                let ids: Vec<AgentId> = path.iter().map(|&k| AgentId::from_index(k)).collect();
                let product = ids
                    .iter()
                    .zip(ids.iter().cycle().skip(1))
                    .map(|(&j, &i)| edge_mu(model, mu, j, i))
                    .product::<f64>();
                if product < 1.0 {
                    report.violations.push(CycleViolation {
                        cycle: ids,
                        product,
                    });
                }
            } else if w > root && !on_path[w] {
                on_path[w] = true;
                path.push(w);
                stack.push(0);
            }
        }
    }
    report
}

/// Per-agent numbers behind a discretization.
#[derive(Debug, Clone, Serialize)]
pub struct AgentDesign {
    pub agent: AgentId,
    pub lambda: f64,
    pub mu_norm: f64,
    pub m_norm: f64,
    pub dt_bound: f64,
    pub dmax_bound: f64,
    pub d_max: f64,
    pub projected_cells: f64,
}

pub fn describe(model: &NetworkModel, params: &DiscretizationParams) -> Vec<AgentDesign> {
    let n = model.dim() as i32;
    model
        .ids()
        .map(|i| {
            let region = ReachFamily::new(model, i).region();
            let side = params.d_max(i) / (n as f64).sqrt();
            AgentDesign {
                agent: i,
                lambda: params.lambda(i),
                mu_norm: mu_norm(&params.mu, i),
                m_norm: m_norm(model, i),
                dt_bound: dt_bound(model, &params.lambda, i),
                dmax_bound: dmax_bound(model, &params.lambda, &params.mu, i, params.dt)
                    .unwrap_or(f64::NAN),
                d_max: params.d_max(i),
                projected_cells: ball_volume(model.dim(), region.radius) / side.powi(n),
            }
        })
        .collect()
}

fn ball_volume(n: usize, r: f64) -> f64 {
    // V_n = pi^{n/2} r^n / Gamma(n/2 + 1), via the two-step recurrence.
    let mut v = [1.0, 2.0];
    let mut vol = if n == 0 { 1.0 } else { 2.0 };
    for k in 2..=n {
        vol = 2.0 * std::f64::consts::PI / k as f64 * v[k % 2];
        v[k % 2] = vol;
    }
    vol * r.powi(n as i32)
}

fn check_lengths(model: &NetworkModel, lambda: &[f64], mu: &[Vec<f64>]) -> Result<()> {
    if lambda.len() != model.len() || mu.len() != model.len() {
        return Err(Error::model("design parameters must list every agent"));
    }
    for a in &model.agents {
        if mu[a.id.index()].len() != a.neighbors.len() {
            return Err(Error::model(format!(
                "agent {}: mu needs one entry per neighbor",
                a.id
            )));
        }
    }
    Ok(())
}

fn step_feasible(model: &NetworkModel, lambda: &[f64], steps: usize) -> Result<f64> {
    let dt = model.horizon / steps as f64;
    if !(dt < model.tau) {
        return Err(Error::InfeasibleGlobal(format!(
            "time step {dt} (T / {steps}) must be below tau = {}",
            model.tau
        )));
    }
    for i in model.ids() {
        let sup = dt_bound(model, lambda, i);
        if !(dt < sup) {
            return Err(Error::Infeasible {
                agent: i,
                reason: format!("time step {dt} (T / {steps}) is not below the bound {sup}"),
            });
        }
    }
    Ok(dt)
}

/// Chooses `steps`, `dt` and the diameters.
pub fn synthesize(model: &NetworkModel, req: &DesignRequest) -> Result<DiscretizationParams> {
    req.validate_ranges()?;
    check_lengths(model, &req.lambda, &req.mu)?;
    let cycles = check_cycles(model, &req.mu);
    if let Some(v) = cycles.violations.first() {
        return Err(Error::InfeasibleGlobal(format!(
            "mu product {} < 1 on cycle {:?}",
            v.product,
            v.cycle.iter().map(|a| a.0).collect::<Vec<_>>()
        )));
    }
    let (steps, dt) = match req.steps {
        StepChoice::Fixed(s) => (s, step_feasible(model, &req.lambda, s)?),
        StepChoice::SearchFrom(s0) => {
            let half_tau = 0.5 * model.tau;
            let mut found = None;
            for s in s0..=req.step_cap.max(s0) {
                if model.horizon / s as f64 > half_tau {
                    continue;
                }
                if let Ok(dt) = step_feasible(model, &req.lambda, s) {
                    found = Some((s, dt));
                    break;
                }
            }
            found.ok_or_else(|| {
                Error::InfeasibleGlobal(format!(
                    "no step count in [{s0}, {}] satisfies the time-step bounds",
                    req.step_cap
                ))
            })?
        }
    };
    let bounds: Vec<f64> = model
        .ids()
        .map(|i| dmax_bound(model, &req.lambda, &req.mu, i, dt))
        .collect::<Result<_>>()?;
    for (k, b) in bounds.iter().enumerate() {
        if !(*b > 0.0) {
            return Err(Error::Infeasible {
                agent: AgentId::from_index(k),
                reason: format!("diameter bound {b} at time step {dt} leaves no admissible cells"),
            });
        }
    }
    let fixed = |k: usize| req.d_max_override.get(k).copied().flatten();
    let mut d: Vec<f64> = (0..model.len())
        .map(|k| fixed(k).unwrap_or(req.margin * bounds[k]))
        .collect();
    // Tighten neighbors until d(j) <= mu(j, i) d(i) on every edge.
    let edges = model.edges();
    let max_passes = model.len() * model.len() + 1;
    let mut settled = false;
    for _ in 0..max_passes {
        let mut changed = false;
        for &(j, i) in &edges {
            let cap = edge_mu(model, &req.mu, j, i) * d[i.index()];
            if d[j.index()] > cap && fixed(j.index()).is_none() {
                d[j.index()] = cap;
                changed = true;
            }
        }
        if !changed {
            settled = true;
            break;
        }
    }
    if !settled {
        return Err(Error::InfeasibleGlobal(
            "diameter propagation did not reach a fixed point".into(),
        ));
    }
    let params = DiscretizationParams {
        dt,
        steps,
        lambda: req.lambda.clone(),
        mu: req.mu.clone(),
        d_max: d,
        margin: req.margin,
    };
    validate(model, &params)?;
    Ok(params)
}

/// Strict check of every well-posedness condition.
pub fn validate(model: &NetworkModel, params: &DiscretizationParams) -> Result<()> {
    check_lengths(model, &params.lambda, &params.mu)?;
    if params.d_max.len() != model.len() {
        return Err(Error::model("d_max must list every agent"));
    }
    for (k, &l) in params.lambda.iter().enumerate() {
        if !(0.0..1.0).contains(&l) {
            return Err(Error::Infeasible {
                agent: AgentId::from_index(k),
                reason: format!("lambda {l} not in [0, 1)"),
            });
        }
    }
    if params.steps == 0 || params.dt != model.horizon / params.steps as f64 {
        return Err(Error::InfeasibleGlobal(format!(
            "time step {} is not T / steps with steps = {}",
            params.dt, params.steps
        )));
    }
    step_feasible(model, &params.lambda, params.steps)?;
    for i in model.ids() {
        let b = dmax_bound(model, &params.lambda, &params.mu, i, params.dt)?;
        let d = params.d_max(i);
        if !(d > 0.0 && d < b) {
            return Err(Error::Infeasible {
                agent: i,
                reason: format!("d_max {d} not in the admissible interval (0, {b})"),
            });
        }
    }
    for (j, i) in model.edges() {
        let m = edge_mu(model, &params.mu, j, i);
        if params.d_max(j) > m * params.d_max(i) {
            return Err(Error::Infeasible {
                agent: j,
                reason: format!(
                    "d_max({j}) = {} exceeds mu({j},{i}) d_max({i}) = {}",
                    params.d_max(j),
                    m * params.d_max(i)
                ),
            });
        }
    }
    if let Some(v) = check_cycles(model, &params.mu).violations.first() {
        return Err(Error::InfeasibleGlobal(format!(
            "mu product {} < 1 on a cycle",
            v.product
        )));
    }
    Ok(())
}
