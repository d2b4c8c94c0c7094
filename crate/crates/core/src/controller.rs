//! Transition feedback laws.
//!
//! For a cell configuration with reference points `x_G` (own) and `x_G,j`
//! (neighbors), the reference trajectory solves `chi' = g(chi, x_G,j)` from
//! `chi(0) = x_G`, and the unsaturated input is
//!
//! ```text
//! kbar = [g(chi(t), x_G,j) - g(x, d)] + lambda w + (x_G - x_0) / dt
//! ```
//!
//! Under it the disturbed system `z' = g(z, d) + kbar` follows
//! `z(t) = (dt - t)/dt (x_0 - x_G) + lambda w t + chi(t)` for every disturbance,
//! so `z(dt) = chi(dt) + lambda w dt` depends only on `w`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::grid::Aabb;
use crate::linalg;
use crate::model::{AgentId, AgentModel};
use crate::ode::{self, DenseTrajectory};
use crate::{Error, Result};

pub const DEFAULT_SUBSTEPS: usize = 100;
pub const DEFAULT_INTEG_TOL: f64 = 1e-8;
pub const DEFAULT_KNOTS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorSettings {
    pub substeps: usize,
    pub integ_tol: f64,
}

impl Default for IntegratorSettings {
    fn default() -> Self {
        IntegratorSettings {
            substeps: DEFAULT_SUBSTEPS,
            integ_tol: DEFAULT_INTEG_TOL,
        }
    }
}

fn eval_err(agent: AgentId) -> impl Fn(crate::model::expr::EvalError) -> Error {
    move |source| Error::Eval { agent, source }
}

/// `g_i = sat_M(f_i)`.
pub fn eval_g(agent: &AgentModel, x_i: &[f64], x_j: &[f64]) -> Result<Vec<f64>> {
    agent.eval_g(x_i, x_j).map_err(eval_err(agent.id))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTrajectory {
    pub agent: AgentId,
    pub x_g: Vec<f64>,
    pub x_g_neighbors: Vec<f64>,
    pub dt: f64,
    pub dense: DenseTrajectory,
    /// Richardson estimate of the endpoint error.
    pub audit_error: f64,
}

impl ReferenceTrajectory {
    pub fn endpoint(&self) -> &[f64] {
        self.dense.endpoint()
    }

    pub fn at(&self, t: f64) -> Vec<f64> {
        self.dense.eval(t)
    }
}

/// Solves `chi' = g(chi, x_g_neighbors)`, `chi(0) = x_g` on `[0, dt]`.
pub fn integrate_reference(
    agent: &AgentModel,
    x_g: &[f64],
    x_g_neighbors: &[f64],
    dt: f64,
    settings: &IntegratorSettings,
) -> Result<ReferenceTrajectory> {
    let rhs = |_t: f64, y: &[f64], out: &mut [f64]| -> Result<()> {
        agent
            .eval_g_into(y, x_g_neighbors, out)
            .map_err(eval_err(agent.id))
    };
    let (dense, audit_error) =
        ode::rk4_audited(rhs, 0.0, x_g, dt, settings.substeps, settings.integ_tol)?;
    Ok(ReferenceTrajectory {
        agent: agent.id,
        x_g: x_g.to_vec(),
        x_g_neighbors: x_g_neighbors.to_vec(),
        dt,
        dense,
        audit_error,
    })
}

/// Radius `lambda dt v_max` of the ball of endpoints reachable by varying `w`.
pub fn r_i(agent: &AgentModel, lambda: f64, dt: f64) -> f64 {
    lambda * dt * agent.v_max
}

/// `w = (x - chi(dt)) / (lambda dt)` steering the endpoint to `x`.
pub fn select_w(
    reference: &ReferenceTrajectory,
    agent: &AgentModel,
    lambda: f64,
    x: &[f64],
) -> Result<Vec<f64>> {
    let dt = reference.dt;
    let end = reference.endpoint();
    let r = r_i(agent, lambda, dt);
    let off = linalg::dist(x, end);
    let slack = 1e-12 * (1.0 + r);
    if off > r + slack {
        return Err(Error::OutOfRange {
            what: "target point",
            detail: format!("distance {off} from the reference endpoint exceeds r_i = {r}"),
        });
    }
    if lambda == 0.0 {
        return Ok(vec![0.0; x.len()]);
    }
    let mut w: Vec<f64> = x
        .iter()
        .zip(end)
        .map(|(a, b)| (a - b) / (lambda * dt))
        .collect();
    // Rounding may leave |w| a hair above v_max on the sphere.
    linalg::sat_in_place(&mut w, agent.v_max);
    Ok(w)
}

/// One transition: reference, initial state and free parameter.
#[derive(Debug, Clone)]
pub struct TransitionControl<'a> {
    pub agent: &'a AgentModel,
    pub lambda: f64,
    pub x_i0: Vec<f64>,
    pub w: Vec<f64>,
    pub reference: &'a ReferenceTrajectory,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KComponents {
    pub k1: Vec<f64>,
    pub k2: Vec<f64>,
    pub k3: Vec<f64>,
}

impl KComponents {
    pub fn sum(&self) -> Vec<f64> {
        self.k1
            .iter()
            .zip(&self.k2)
            .zip(&self.k3)
            .map(|((a, b), c)| a + b + c)
            .collect()
    }
}

impl TransitionControl<'_> {
    pub fn dt(&self) -> f64 {
        self.reference.dt
    }

    /// Closed-form auxiliary trajectory at `t`.
    pub fn closed_form(&self, t: f64) -> Result<Vec<f64>> {
        let dt = self.dt();
        if !(0.0..=dt).contains(&t) {
            return Err(Error::OutOfRange {
                what: "t",
                detail: format!("{t} not in [0, {dt}]"),
            });
        }
        let chi = self.reference.at(t);
        let a = (dt - t) / dt;
        Ok((0..chi.len())
            .map(|d| {
                a * (self.x_i0[d] - self.reference.x_g[d]) + self.lambda * self.w[d] * t + chi[d]
            })
            .collect())
    }

    pub fn components(&self, t: f64, x_i: &[f64], d_j: &[f64]) -> Result<KComponents> {
        let chi = self.reference.at(t);
        let g_ref = eval_g(self.agent, &chi, &self.reference.x_g_neighbors)?;
        let g_now = eval_g(self.agent, x_i, d_j)?;
        let dt = self.dt();
        Ok(KComponents {
            k1: linalg::sub(&g_ref, &g_now),
            k2: linalg::scale(&self.w, self.lambda),
            k3: self
                .reference
                .x_g
                .iter()
                .zip(&self.x_i0)
                .map(|(g, x)| (g - x) / dt)
                .collect(),
        })
    }

    /// Unsaturated input `k1 + k2 + k3`.
    pub fn eval_kbar(&self, t: f64, x_i: &[f64], d_j: &[f64]) -> Result<Vec<f64>> {
        Ok(self.components(t, x_i, d_j)?.sum())
    }

    /// Applied input `sat_{v_max}(kbar)`.
    pub fn eval_k(&self, t: f64, x_i: &[f64], d_j: &[f64]) -> Result<Vec<f64>> {
        Ok(linalg::sat(&self.eval_kbar(t, x_i, d_j)?, self.agent.v_max))
    }
}

/// `closed_form` at `t`, free-function form.
pub fn closed_form_endpoint(ctrl: &TransitionControl<'_>, t: f64) -> Result<Vec<f64>> {
    ctrl.closed_form(t)
}

/// A neighbor's continuous path: piecewise linear through knots inside its tube.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbancePath {
    pub cell: Aabb,
    pub c_rate: f64,
    pub knots: Vec<(f64, Vec<f64>)>,
}

impl DisturbancePath {
    pub fn eval(&self, t: f64) -> Vec<f64> {
        let k = self.knots.partition_point(|(tk, _)| *tk <= t);
        if k == 0 {
            return self.knots[0].1.clone();
        }
        if k == self.knots.len() {
            return self.knots[k - 1].1.clone();
        }
        let (t0, p0) = &self.knots[k - 1];
        let (t1, p1) = &self.knots[k];
        let s = (t - t0) / (t1 - t0);
        p0.iter().zip(p1).map(|(a, b)| a + s * (b - a)).collect()
    }

    /// Distance by which `x` leaves the tube `cell + B(c t)`; nonpositive inside.
    pub fn tube_excess(&self, t: f64, x: &[f64]) -> f64 {
        linalg::box_distance(x, &self.cell.lo, &self.cell.hi) - self.c_rate * t
    }
}

/// Disturbances for every neighbor of an agent.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceTube {
    pub neighbors: Vec<DisturbancePath>,
}

impl DisturbanceTube {
    /// Concatenated neighbor block at time `t`.
    pub fn eval(&self, t: f64) -> Vec<f64> {
        self.neighbors.iter().flat_map(|p| p.eval(t)).collect()
    }
}

/// Nearest point of `cell + B(radius)` to `p`.
fn project_to_tube(p: &[f64], cell: &Aabb, radius: f64) -> Vec<f64> {
    let q = linalg::clamp_to_box(p, &cell.lo, &cell.hi);
    let d = linalg::dist(p, &q);
    if d <= radius {
        return p.to_vec();
    }
    q.iter()
        .zip(p)
        .map(|(a, b)| a + radius * (b - a) / d)
        .collect()
}

/// Random continuous path starting in `cell` and staying in `cell + B(c_rate t)`.
///
/// Knots are drawn uniformly from the bounding box of each cross-section and
/// projected onto it. Linear interpolation keeps the path inside the tube
/// because the tube radius grows linearly.
pub fn sample_disturbance<R: Rng + ?Sized>(
    cell: &Aabb,
    c_rate: f64,
    dt: f64,
    knots: usize,
    rng: &mut R,
) -> DisturbancePath {
    let knots = knots.max(2);
    let pts = (0..knots)
        .map(|k| {
            let t = dt * k as f64 / (knots - 1) as f64;
            let rho = c_rate * t;
            let p: Vec<f64> = cell
                .lo
                .iter()
                .zip(&cell.hi)
                .map(|(l, h)| {
                    let (a, b) = (l - rho, h + rho);
                    if b > a {
                        rng.gen_range(a..b)
                    } else {
                        *l
                    }
                })
                .collect();
            (t, project_to_tube(&p, cell, rho))
        })
        .collect();
    DisturbancePath {
        cell: cell.clone(),
        c_rate,
        knots: pts,
    }
}

/// Neighbor constants of the component envelope
/// `|k1(t)| <= L1 (mun d_max / 2 + Mn t) + L2 |z(t) - chi(t)|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Envelope {
    pub mu_norm: f64,
    pub m_norm: f64,
    pub d_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuxiliaryOutcome {
    pub endpoint: Vec<f64>,
    pub trajectory: DenseTrajectory,
    /// Largest `|kbar|` seen at any substep node or stage.
    pub max_kbar: f64,
    /// Number of evaluations at which `|kbar| >= v_max`.
    pub saturations: usize,
    pub max_k1: f64,
    pub max_k2: f64,
    pub max_k3: f64,
    /// Largest `|k1| - envelope`; nonpositive when the envelope holds.
    pub envelope_excess: f64,
    pub audit_error: f64,
}

/// Integrates `z' = g(z, d(t)) + k(t, z, d(t))` from `x_i0` over `[0, dt]`.
pub fn integrate_auxiliary(
    ctrl: &TransitionControl<'_>,
    tube: &DisturbanceTube,
    envelope: Option<Envelope>,
    settings: &IntegratorSettings,
) -> Result<AuxiliaryOutcome> {
    let agent = ctrl.agent;
    let v_max = agent.v_max;
    let mut stats = AuxiliaryOutcome {
        endpoint: Vec::new(),
        trajectory: DenseTrajectory {
            t0: 0.0,
            h: 0.0,
            ys: Vec::new(),
            dys: Vec::new(),
        },
        max_kbar: 0.0,
        saturations: 0,
        max_k1: 0.0,
        max_k2: 0.0,
        max_k3: 0.0,
        envelope_excess: f64::NEG_INFINITY,
        audit_error: 0.0,
    };
    let record = std::cell::Cell::new(true);
    let mut rhs = |t: f64, z: &[f64], out: &mut [f64]| -> Result<()> {
        let d = tube.eval(t);
        let comps = ctrl.components(t, z, &d)?;
        let kbar = comps.sum();
        let nk = linalg::norm(&kbar);
        if record.get() {
            stats.max_kbar = stats.max_kbar.max(nk);
            if nk >= v_max {
                stats.saturations += 1;
            }
            let n1 = linalg::norm(&comps.k1);
            stats.max_k1 = stats.max_k1.max(n1);
            stats.max_k2 = stats.max_k2.max(linalg::norm(&comps.k2));
            stats.max_k3 = stats.max_k3.max(linalg::norm(&comps.k3));
            if let Some(e) = envelope {
                let chi = ctrl.reference.at(t);
                let bound = agent.l1 * (e.mu_norm * e.d_max / 2.0 + e.m_norm * t)
                    + agent.l2 * linalg::dist(z, &chi);
                stats.envelope_excess = stats.envelope_excess.max(n1 - bound);
            }
        }
        let k = if nk > v_max {
            linalg::scale(&kbar, v_max / nk)
        } else {
            kbar
        };
        agent.eval_g_into(z, &d, out).map_err(eval_err(agent.id))?;
        for (o, kk) in out.iter_mut().zip(&k) {
            *o += kk;
        }
        Ok(())
    };
    let coarse = ode::rk4(&mut rhs, 0.0, &ctrl.x_i0, ctrl.dt(), settings.substeps)?;
    record.set(false);
    let fine = ode::rk4(
        &mut rhs,
        0.0,
        &ctrl.x_i0,
        ctrl.dt(),
        2 * settings.substeps.max(1),
    )?;
    let est = ode::richardson_estimate(coarse.endpoint(), fine.endpoint());
    if !(est <= settings.integ_tol) {
        return Err(Error::Integration {
            estimate: est,
            tol: settings.integ_tol,
        });
    }
    stats.endpoint = coarse.endpoint().to_vec();
    stats.trajectory = coarse;
    stats.audit_error = est;
    Ok(stats)
}
