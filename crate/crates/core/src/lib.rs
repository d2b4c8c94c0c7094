//! Finite-horizon discrete abstractions of coupled multi-agent control systems.
//!
//! Each agent `i` evolves as `x_i' = f_i(x_i, x_j) + v_i` with a bounded additive
//! input `|v_i| <= v_max(i)`. Over a horizon `[0, T]` the crate
//!
//! 1. overapproximates every agent's reachable set by a ball ([`reach`]),
//! 2. chooses a common time step and per-agent cell diameters that keep the
//!    transition controllers below saturation ([`wellposed`]),
//! 3. grids each reachable ball ([`grid`]) and derives a deterministic
//!    transition system per agent whose successors are the cells hit by a
//!    reachable ball around a reference trajectory ([`controller`],
//!    [`abstraction`]),
//! 4. synthesizes plans for nested timed-eventually goals ([`planner`]), and
//! 5. replays the plan on the continuous coupled system ([`sim`]).

pub mod abstraction;
pub mod controller;
pub mod grid;
pub mod linalg;
pub mod model;
pub mod ode;
pub mod planner;
pub mod reach;
pub mod scenarios;
pub mod sim;
pub mod wellposed;

mod error;

pub use error::{Error, Result};
pub use model::{AgentId, AgentModel, Dynamics, NetworkModel};
