//! JSON model documents.
//!
//! ```json
//! {
//!   "horizon": 2.0,
//!   "tau": 0.3333333333333333,
//!   "steps": 12,
//!   "agents": [
//!     { "id": 1, "dim": 2, "neighbors": [2],
//!       "dynamics": { "type": "linear-consensus", "weights": [1.0] },
//!       "v_max": 10.0, "M": 25.0, "L1": 1.0, "L2": 1.0,
//!       "x0": [0.0, 0.0], "reach_radius": 68.3, "lambda": 0.35, "mu": [1.0] }
//!   ],
//!   "spec": [
//!     { "agent": 1, "goals": [ { "box": [[0, 0], [1, 1]], "window": [1.95, 2.0] } ] }
//!   ]
//! }
//! ```
//!
//! `tau`, `steps`, `reach_radius`, `lambda`, `mu` and `spec` are optional.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::expr::{parse_expression, ParseContext};
use super::{AgentId, AgentModel, Dynamics, NetworkModel};
use crate::planner::spec::{Goal, GoalBox, TimedReachSpec};
use crate::wellposed::{DesignRequest, StepChoice};
use crate::{Error, Result};

/// Step count used to derive a default `tau` when none is requested.
pub const DEFAULT_STEPS: usize = 12;
pub const DEFAULT_LAMBDA: f64 = 0.4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub horizon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    pub agents: Vec<AgentDocument>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub spec: Vec<AgentSpecDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentDocument {
    pub id: usize,
    pub dim: usize,
    #[serde(default)]
    pub neighbors: Vec<usize>,
    pub dynamics: DynamicsDocument,
    pub v_max: f64,
    #[serde(rename = "M")]
    pub m: f64,
    #[serde(rename = "L1")]
    pub l1: f64,
    #[serde(rename = "L2")]
    pub l2: f64,
    pub x0: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reach_radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// `mu(j_k, i)` per neighbor, in neighbor order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DynamicsDocument {
    Zero,
    LinearConsensus {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        weights: Option<Vec<f64>>,
    },
    GradientHill {
        #[serde(rename = "C")]
        height: f64,
        #[serde(rename = "R")]
        radius: f64,
    },
    Affine {
        own: Vec<Vec<f64>>,
        #[serde(default)]
        neighbors: Vec<Vec<Vec<f64>>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        offset: Option<Vec<f64>>,
    },
    Expression {
        components: Vec<String>,
        #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
        params: BTreeMap<String, f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpecDocument {
    pub agent: usize,
    pub goals: Vec<GoalDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoalDocument {
    #[serde(rename = "box")]
    pub region: [Vec<f64>; 2],
    pub window: [f64; 2],
    #[serde(default = "default_relative")]
    pub relative: bool,
}

fn default_relative() -> bool {
    true
}

/// Parses the JSON text without semantic validation.
pub fn parse_document(text: &str) -> Result<ModelDocument> {
    serde_json::from_str(text).map_err(|e| match e.classify() {
        serde_json::error::Category::Data => Error::Model(format!(
            "{} (line {}, column {})",
            strip_position(&e.to_string()),
            e.line(),
            e.column()
        )),
        _ => Error::Syntax {
            line: e.line(),
            column: e.column(),
            message: strip_position(&e.to_string()),
        },
    })
}

fn strip_position(msg: &str) -> String {
    match msg.rfind(" at line ") {
        Some(p) => msg[..p].to_string(),
        None => msg.to_string(),
    }
}

/// Parses and validates a model document into a [`NetworkModel`].
pub fn parse_model(text: &str) -> Result<NetworkModel> {
    parse_document(text)?.network(None)
}

impl ModelDocument {
    /// Requested step count: explicit override, then the document, then the default.
    pub fn step_target(&self, steps_override: Option<usize>) -> usize {
        steps_override.or(self.steps).unwrap_or(DEFAULT_STEPS)
    }

    pub fn network(&self, steps_override: Option<usize>) -> Result<NetworkModel> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::model(format!(
                "horizon must be positive, got {}",
                self.horizon
            )));
        }
        let steps = self.step_target(steps_override);
        if steps == 0 {
            return Err(Error::model("steps must be positive"));
        }
        let dt = self.horizon / steps as f64;
        let tau = self
            .tau
            .unwrap_or((2.0 * dt).min(0.5 * (self.horizon + dt)));
        let n_agents = self.agents.len();
        let mut docs: Vec<&AgentDocument> = self.agents.iter().collect();
        docs.sort_by_key(|a| a.id);
        for (k, a) in docs.iter().enumerate() {
            if a.id != k + 1 {
                return Err(Error::model(format!(
                    "agent ids must be exactly 1..{n_agents} without repetition (found {})",
                    a.id
                )));
            }
        }
        let mut agents = Vec::with_capacity(n_agents);
        let mut initial_states = Vec::with_capacity(n_agents);
        let mut reach_radius = Vec::with_capacity(n_agents);
        for a in docs {
            let id = AgentId(a.id);
            for j in &a.neighbors {
                if *j == 0 || *j > n_agents {
                    return Err(Error::model(format!(
                        "agent {id}: dangling neighbor id {j}"
                    )));
                }
            }
            for (name, v) in [("v_max", a.v_max)] {
                if !(v > 0.0) {
                    return Err(Error::model(format!(
                        "agent {id}: {name} must be positive, got {v}"
                    )));
                }
            }
            let dynamics = a.dynamics.build(id, a.dim, a.neighbors.len())?;
            let model = AgentModel {
                id,
                dim: a.dim,
                neighbors: a.neighbors.iter().map(|&j| AgentId(j)).collect(),
                dynamics,
                v_max: a.v_max,
                m_bound: a.m,
                l1: a.l1,
                l2: a.l2,
            };
            let default_radius = model.c_rate() * (self.horizon - tau);
            reach_radius.push(a.reach_radius.unwrap_or(default_radius));
            initial_states.push(a.x0.clone());
            agents.push(model);
        }
        let net = NetworkModel {
            agents,
            initial_states,
            horizon: self.horizon,
            tau,
            reach_radius,
        };
        net.validate()?;
        Ok(net)
    }

    /// Discretization design parameters declared in the document.
    pub fn design(&self, steps_override: Option<usize>) -> Result<DesignRequest> {
        let mut docs: Vec<&AgentDocument> = self.agents.iter().collect();
        docs.sort_by_key(|a| a.id);
        let mut lambda = Vec::new();
        let mut mu = Vec::new();
        for a in docs {
            lambda.push(a.lambda.unwrap_or(DEFAULT_LAMBDA));
            let m = a.mu.clone().unwrap_or_else(|| vec![1.0; a.neighbors.len()]);
            if m.len() != a.neighbors.len() {
                return Err(Error::model(format!(
                    "agent {}: mu has {} entries for {} neighbors",
                    a.id,
                    m.len(),
                    a.neighbors.len()
                )));
            }
            mu.push(m);
        }
        let steps = match steps_override.or(self.steps) {
            Some(s) => StepChoice::Fixed(s),
            None => StepChoice::SearchFrom(1),
        };
        let req = DesignRequest {
            lambda,
            mu,
            steps,
            ..DesignRequest::default()
        };
        req.validate_ranges()?;
        Ok(req)
    }

    pub fn timed_spec(&self, net: &NetworkModel) -> Result<TimedReachSpec> {
        let mut goals = vec![Vec::new(); net.len()];
        for s in &self.spec {
            if s.agent == 0 || s.agent > net.len() {
                return Err(Error::model(format!(
                    "spec refers to unknown agent {}",
                    s.agent
                )));
            }
            if !goals[s.agent - 1].is_empty() {
                return Err(Error::model(format!(
                    "agent {} has two spec entries",
                    s.agent
                )));
            }
            for g in &s.goals {
                let [lo, hi] = &g.region;
                if lo.len() != net.dim() || hi.len() != net.dim() {
                    return Err(Error::model(format!(
                        "agent {}: goal box dimension does not match state dimension {}",
                        s.agent,
                        net.dim()
                    )));
                }
                if lo.iter().zip(hi).any(|(l, h)| l > h) {
                    return Err(Error::model(format!(
                        "agent {}: goal box has lo > hi",
                        s.agent
                    )));
                }
                let [a, b] = g.window;
                if !(0.0 <= a && a <= b) {
                    return Err(Error::model(format!(
                        "agent {}: goal window [{a}, {b}] must satisfy 0 <= a <= b",
                        s.agent
                    )));
                }
                goals[s.agent - 1].push(Goal {
                    region: GoalBox {
                        lo: lo.clone(),
                        hi: hi.clone(),
                    },
                    window: (a, b),
                    relative: g.relative,
                });
            }
        }
        let spec = TimedReachSpec { goals };
        spec.check_deadline(net.horizon)?;
        Ok(spec)
    }
}

impl DynamicsDocument {
    fn build(&self, id: AgentId, dim: usize, n_neighbors: usize) -> Result<Dynamics> {
        Ok(match self {
            DynamicsDocument::Zero => Dynamics::Zero,
            DynamicsDocument::LinearConsensus { weights } => {
                let weights = weights.clone().unwrap_or_else(|| vec![1.0; n_neighbors]);
                if weights.len() != n_neighbors {
                    return Err(Error::model(format!(
                        "agent {id}: {} consensus weights for {n_neighbors} neighbors",
                        weights.len()
                    )));
                }
                Dynamics::LinearConsensus { weights }
            }
            DynamicsDocument::GradientHill { height, radius } => {
                if !(*radius > 0.0) || !(*height >= 0.0) {
                    return Err(Error::model(format!(
                        "agent {id}: gradient-hill needs C >= 0 and R > 0"
                    )));
                }
                Dynamics::GradientHill {
                    height: *height,
                    radius: *radius,
                }
            }
            DynamicsDocument::Affine {
                own,
                neighbors,
                offset,
            } => {
                let square = |m: &Vec<Vec<f64>>| m.len() == dim && m.iter().all(|r| r.len() == dim);
                if !square(own) || neighbors.len() != n_neighbors || !neighbors.iter().all(square) {
                    return Err(Error::model(format!(
                        "agent {id}: affine matrices must be {dim}x{dim}, one per neighbor"
                    )));
                }
                let offset = offset.clone().unwrap_or_else(|| vec![0.0; dim]);
                if offset.len() != dim {
                    return Err(Error::model(format!("agent {id}: affine offset length")));
                }
                Dynamics::Affine {
                    own: own.clone(),
                    neighbors: neighbors.clone(),
                    offset,
                }
            }
            DynamicsDocument::Expression { components, params } => {
                if components.len() != dim {
                    return Err(Error::model(format!(
                        "agent {id}: {} expression components for dimension {dim}",
                        components.len()
                    )));
                }
                let ctx = ParseContext {
                    dim,
                    neighbors: n_neighbors,
                    params: params.clone(),
                };
                let exprs = components
                    .iter()
                    .enumerate()
                    .map(|(k, s)| {
                        parse_expression(s, &ctx).map_err(|source| Error::Expression {
                            agent: id,
                            component: k + 1,
                            source,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Dynamics::Expression(exprs)
            }
        })
    }
}
