//! The continuous multi-agent network: dynamics, coupling graph, bounds.

pub mod bounds;
pub mod expr;
pub mod file;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::linalg;
use crate::{Error, Result};
pub use bounds::{validate_bounds, AgentBoundsReport, BoundsReport};
use expr::{EvalError, Expr};
pub use file::{parse_document, parse_model, ModelDocument};

/// 1-based agent index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AgentId(pub usize);

impl AgentId {
    pub fn index(self) -> usize {
        self.0 - 1
    }

    pub fn from_index(i: usize) -> Self {
        AgentId(i + 1)
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Below this norm the hill field uses its Taylor expansion (removable singularity).
const HILL_SERIES_RADIUS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub enum Dynamics {
    Zero,
    /// `sum_k w_k (x_{j_k} - x_i)`
    LinearConsensus {
        weights: Vec<f64>,
    },
    /// `-grad h` for `h(x) = C (1 + cos(pi |x| / R))` on `|x| < R`, zero outside.
    GradientHill {
        height: f64,
        radius: f64,
    },
    /// `A x_i + sum_k B_k x_{j_k} + b`
    Affine {
        own: Vec<Vec<f64>>,
        neighbors: Vec<Vec<Vec<f64>>>,
        offset: Vec<f64>,
    },
    /// One expression per state coordinate.
    Expression(Vec<Expr>),
}

impl Dynamics {
    pub fn variant_name(&self) -> &'static str {
        match self {
            Dynamics::Zero => "zero",
            Dynamics::LinearConsensus { .. } => "linear-consensus",
            Dynamics::GradientHill { .. } => "gradient-hill",
            Dynamics::Affine { .. } => "affine",
            Dynamics::Expression(_) => "expression",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentModel {
    pub id: AgentId,
    pub dim: usize,
    /// Neighbor tuple `j(i)` in document order; fixes the neighbor-block layout.
    pub neighbors: Vec<AgentId>,
    pub dynamics: Dynamics,
    pub v_max: f64,
    /// Speed bound on `f_i` over the declared reachable region.
    pub m_bound: f64,
    /// Lipschitz constant of `g_i` in the neighbor block.
    pub l1: f64,
    /// Lipschitz constant of `g_i` in the own state.
    pub l2: f64,
}

impl AgentModel {
    /// `f_i(x_i, x_j)` where `x_j` is the concatenated neighbor block.
    pub fn eval_f(&self, x_i: &[f64], x_j: &[f64]) -> Result<Vec<f64>, EvalError> {
        let mut out = vec![0.0; self.dim];
        self.eval_f_into(x_i, x_j, &mut out)?;
        Ok(out)
    }

    pub fn eval_f_into(&self, x_i: &[f64], x_j: &[f64], out: &mut [f64]) -> Result<(), EvalError> {
        let n = self.dim;
        if x_i.len() != n {
            return Err(EvalError::Dimension {
                expected: n,
                found: x_i.len(),
            });
        }
        if x_j.len() != n * self.neighbors.len() {
            return Err(EvalError::Dimension {
                expected: n * self.neighbors.len(),
                found: x_j.len(),
            });
        }
        match &self.dynamics {
            Dynamics::Zero => out.fill(0.0),
            Dynamics::LinearConsensus { weights } => {
                out.fill(0.0);
                for (k, w) in weights.iter().enumerate() {
                    let xj = &x_j[k * n..(k + 1) * n];
                    for d in 0..n {
                        out[d] += w * (xj[d] - x_i[d]);
                    }
                }
            }
            Dynamics::GradientHill { height, radius } => {
                hill_field(*height, *radius, x_i, out);
            }
            Dynamics::Affine {
                own,
                neighbors,
                offset,
            } => {
                for d in 0..n {
                    let mut acc = offset[d];
                    acc += own[d].iter().zip(x_i).map(|(a, x)| a * x).sum::<f64>();
                    for (k, b) in neighbors.iter().enumerate() {
                        let xj = &x_j[k * n..(k + 1) * n];
                        acc += b[d].iter().zip(xj).map(|(a, x)| a * x).sum::<f64>();
                    }
                    out[d] = acc;
                }
            }
            Dynamics::Expression(components) => {
                for (d, e) in components.iter().enumerate() {
                    out[d] = e.eval(x_i, x_j).map_err(|source| EvalError::At {
                        source: Box::new(source),
                        x_i: x_i.to_vec(),
                        x_j: x_j.to_vec(),
                    })?;
                }
            }
        }
        Ok(())
    }

    /// Saturated dynamics `g_i = sat_M(f_i)`.
    pub fn eval_g(&self, x_i: &[f64], x_j: &[f64]) -> Result<Vec<f64>, EvalError> {
        let mut out = vec![0.0; self.dim];
        self.eval_g_into(x_i, x_j, &mut out)?;
        Ok(out)
    }

    pub fn eval_g_into(&self, x_i: &[f64], x_j: &[f64], out: &mut [f64]) -> Result<(), EvalError> {
        self.eval_f_into(x_i, x_j, out)?;
        linalg::sat_in_place(out, self.m_bound);
        Ok(())
    }

    /// Growth rate `M(i) + v_max(i)` of the reachable-set overapproximation.
    pub fn c_rate(&self) -> f64 {
        self.m_bound + self.v_max
    }
}

fn hill_field(height: f64, radius: f64, x: &[f64], out: &mut [f64]) {
    let r = linalg::norm(x);
    let k = std::f64::consts::PI / radius;
    if r >= radius {
        out.fill(0.0);
        return;
    }
    // f = C k sin(k r) x / r, and sin(k r) / r -> k (1 - (k r)^2 / 6) near 0.
    let s = if r < HILL_SERIES_RADIUS {
        k * (1.0 - (k * r) * (k * r) / 6.0)
    } else {
        (k * r).sin() / r
    };
    for (o, xi) in out.iter_mut().zip(x) {
        *o = height * k * s * xi;
    }
}

/// The coupled system over a fixed horizon.
#[derive(Debug, Clone)]
pub struct NetworkModel {
    /// Sorted by id; `agents[k].id == AgentId(k + 1)`.
    pub agents: Vec<AgentModel>,
    pub initial_states: Vec<Vec<f64>>,
    pub horizon: f64,
    pub tau: f64,
    /// Radius of the ball overapproximating `R_i([0, T - tau])` around `X_i0`.
    pub reach_radius: Vec<f64>,
}

impl NetworkModel {
    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.agents[0].dim
    }

    pub fn agent(&self, id: AgentId) -> &AgentModel {
        &self.agents[id.index()]
    }

    pub fn ids(&self) -> impl Iterator<Item = AgentId> + '_ {
        self.agents.iter().map(|a| a.id)
    }

    /// Directed edges `(j, i)` with `j` a neighbor of `i`.
    pub fn edges(&self) -> Vec<(AgentId, AgentId)> {
        self.agents
            .iter()
            .flat_map(|a| a.neighbors.iter().map(move |j| (*j, a.id)))
            .collect()
    }

    /// Agents whose neighbor tuple contains `id`.
    pub fn dependents(&self, id: AgentId) -> Vec<AgentId> {
        self.agents
            .iter()
            .filter(|a| a.neighbors.contains(&id))
            .map(|a| a.id)
            .collect()
    }

    /// Topological order of the dependency graph (neighbors before the agent),
    /// or `None` when the graph has a cycle. Ties break toward smaller ids.
    pub fn topological_order(&self) -> Option<Vec<AgentId>> {
        let n = self.len();
        let mut indeg: Vec<usize> = self.agents.iter().map(|a| a.neighbors.len()).collect();
        let mut ready: std::collections::BTreeSet<usize> =
            (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(&i) = ready.iter().next() {
            ready.remove(&i);
            order.push(AgentId::from_index(i));
            for d in self.dependents(AgentId::from_index(i)) {
                indeg[d.index()] -= 1;
                if indeg[d.index()] == 0 {
                    ready.insert(d.index());
                }
            }
        }
        (order.len() == n).then_some(order)
    }

    /// Neighbor block `(x_{j_1}, ..., x_{j_{N_i}})` taken from a full state.
    pub fn neighbor_block(&self, id: AgentId, states: &[Vec<f64>]) -> Vec<f64> {
        self.agent(id)
            .neighbors
            .iter()
            .flat_map(|j| states[j.index()].iter().copied())
            .collect()
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.agents.is_empty() {
            return Err(Error::model("network has no agents"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::model(format!(
                "horizon must be positive, got {}",
                self.horizon
            )));
        }
        if !(self.tau > 0.0 && self.tau < self.horizon) {
            return Err(Error::model(format!(
                "tau must lie in (0, T) = (0, {}), got {}",
                self.horizon, self.tau
            )));
        }
        let n = self.agents[0].dim;
        for (k, a) in self.agents.iter().enumerate() {
            if a.id != AgentId::from_index(k) {
                return Err(Error::model("agent ids must be exactly 1..N"));
            }
            if a.dim == 0 || a.dim != n {
                return Err(Error::model(format!(
                    "agent {}: state dimension {} differs from shared dimension {n}",
                    a.id, a.dim
                )));
            }
            if !(a.v_max > 0.0 && a.v_max.is_finite()) {
                return Err(Error::model(format!(
                    "agent {}: v_max must be positive",
                    a.id
                )));
            }
            for (name, v) in [("M", a.m_bound), ("L1", a.l1), ("L2", a.l2)] {
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(Error::model(format!(
                        "agent {}: {name} must be a nonnegative number",
                        a.id
                    )));
                }
            }
            for (p, j) in a.neighbors.iter().enumerate() {
                if j.0 == 0 || j.0 > self.len() {
                    return Err(Error::model(format!(
                        "agent {}: dangling neighbor id {}",
                        a.id, j.0
                    )));
                }
                if *j == a.id {
                    return Err(Error::model(format!(
                        "agent {} lists itself as neighbor",
                        a.id
                    )));
                }
                if a.neighbors[..p].contains(j) {
                    return Err(Error::model(format!(
                        "agent {}: duplicate neighbor {}",
                        a.id, j
                    )));
                }
            }
            if self.initial_states[k].len() != n {
                return Err(Error::model(format!(
                    "agent {}: x0 has dimension {}, expected {n}",
                    a.id,
                    self.initial_states[k].len()
                )));
            }
            if !(self.reach_radius[k] > 0.0 && self.reach_radius[k].is_finite()) {
                return Err(Error::model(format!(
                    "agent {}: reach_radius must be positive",
                    a.id
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn agent(dynamics: Dynamics, neighbors: Vec<AgentId>) -> AgentModel {
        AgentModel {
            id: AgentId(1),
            dim: 2,
            neighbors,
            dynamics,
            v_max: 1.0,
            m_bound: 10.0,
            l1: 1.0,
            l2: 1.0,
        }
    }

    #[test]
    fn consensus_single_neighbor() {
        let a = agent(
            Dynamics::LinearConsensus { weights: vec![1.0] },
            vec![AgentId(2)],
        );
        assert_eq!(a.eval_f(&[0.0, 0.0], &[1.0, 0.0]).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn hill_at_origin_is_zero() {
        let a = agent(
            Dynamics::GradientHill {
                height: 2.0,
                radius: 2.0 * PI,
            },
            vec![],
        );
        assert_eq!(a.eval_f(&[0.0, 0.0], &[]).unwrap(), vec![0.0, 0.0]);
        let tiny = a.eval_f(&[1e-12, 0.0], &[]).unwrap();
        assert!(tiny[0].abs() < 1e-12);
    }

    #[test]
    fn hill_matches_central_differences() {
        let (c, r) = (2.0, 2.0 * PI);
        let a = agent(
            Dynamics::GradientHill {
                height: c,
                radius: r,
            },
            vec![],
        );
        let h = |x: f64, y: f64| {
            let n = (x * x + y * y).sqrt();
            if n < r {
                c * (1.0 + (PI * n / r).cos())
            } else {
                0.0
            }
        };
        let f = a.eval_f(&[PI, 0.0], &[]).unwrap();
        assert!((f[0] - 1.0).abs() < 1e-12 && f[1].abs() < 1e-12);
        let eps = 1e-5;
        for p in [[PI, 0.0], [1.0, 2.0], [-3.0, 0.5]] {
            let f = a.eval_f(&p, &[]).unwrap();
            let gx = (h(p[0] + eps, p[1]) - h(p[0] - eps, p[1])) / (2.0 * eps);
            let gy = (h(p[0], p[1] + eps) - h(p[0], p[1] - eps)) / (2.0 * eps);
            assert!((f[0] + gx).abs() < 1e-6, "{p:?}");
            assert!((f[1] + gy).abs() < 1e-6, "{p:?}");
        }
    }

    #[test]
    fn saturation_of_g() {
        let mut a = agent(
            Dynamics::LinearConsensus { weights: vec![1.0] },
            vec![AgentId(2)],
        );
        a.m_bound = 2.0;
        assert_eq!(a.eval_g(&[0.0, 0.0], &[1.0, 0.0]).unwrap(), vec![1.0, 0.0]);
        assert_eq!(a.eval_g(&[0.0, 0.0], &[4.0, 0.0]).unwrap(), vec![2.0, 0.0]);
    }

    #[test]
    fn affine_dynamics() {
        let a = agent(
            Dynamics::Affine {
                own: vec![vec![-1.0, 0.0], vec![0.0, -2.0]],
                neighbors: vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]],
                offset: vec![0.5, 0.0],
            },
            vec![AgentId(2)],
        );
        assert_eq!(a.eval_f(&[1.0, 1.0], &[2.0, 3.0]).unwrap(), vec![1.5, 1.0]);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let a = agent(Dynamics::Zero, vec![AgentId(2)]);
        assert!(matches!(
            a.eval_f(&[0.0, 0.0], &[1.0]),
            Err(EvalError::Dimension { .. })
        ));
    }
}
