use thiserror::Error;

use crate::model::expr::{EvalError, ParseError};
use crate::model::AgentId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("model syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid model: {0}")]
    Model(String),

    #[error("agent {agent}: expression {component}: {source}")]
    Expression {
        agent: AgentId,
        component: usize,
        #[source]
        source: ParseError,
    },

    #[error("agent {agent}: {source}")]
    Eval {
        agent: AgentId,
        #[source]
        source: EvalError,
    },

    #[error("{what} out of range: {detail}")]
    OutOfRange { what: &'static str, detail: String },

    #[error("infeasible discretization for agent {agent}: {reason}")]
    Infeasible { agent: AgentId, reason: String },

    #[error("infeasible discretization: {0}")]
    InfeasibleGlobal(String),

    #[error("agent {agent}: configuration is not initiating (cell {cell})")]
    NonInitiating { agent: AgentId, cell: String },

    #[error("agent {agent}: reachable ball escapes the region (excess {excess:e})")]
    BallEscapesRegion { agent: AgentId, excess: f64 },

    #[error("integration audit failed: estimated error {estimate:e} exceeds tolerance {tol:e}")]
    Integration { estimate: f64, tol: f64 },

    #[error("agent {agent}: cell {target} is not a successor of configuration {config}")]
    NotASuccessor {
        agent: AgentId,
        config: String,
        target: String,
    },

    #[error("unsatisfiable: {0}")]
    Unsatisfiable(String),

    #[error("search cap of {cap} states exceeded")]
    CapExceeded { cap: usize },

    #[error("inconsistent plan: agent {agent}, step {step}: {reason}")]
    InconsistentPlan {
        agent: AgentId,
        step: usize,
        reason: String,
    },

    #[error("coupling graph is cyclic; use product synthesis")]
    CyclicGraph,

    #[error("input bound violated by agent {agent} at t = {t}: |v| = {norm} > {v_max}")]
    InputBound {
        agent: AgentId,
        t: f64,
        norm: f64,
        v_max: f64,
    },
}

impl Error {
    pub(crate) fn model(msg: impl Into<String>) -> Self {
        Error::Model(msg.into())
    }
}
