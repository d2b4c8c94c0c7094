//! Per-agent deterministic transition systems and their synchronized product.
//!
//! From a cell configuration (own cell plus neighbor cells) the successors of
//! an agent are the cells met by the ball `B(chi(dt); r_i)` around the end of
//! the reference trajectory. Each successor cell is one action: any `w`
//! steering the endpoint into that cell realizes it.

use std::collections::HashMap;
use std::sync::Arc;

use parking_lot::RwLock;
use rayon::prelude::*;
use serde::Serialize;

use crate::controller::{self, IntegratorSettings, ReferenceTrajectory};
use crate::grid::{self, CellConfiguration, CellDecomposition, CellId, CellIndex};
use crate::model::{AgentId, NetworkModel};
use crate::reach::{Ball, ReachFamily};
use crate::wellposed::DiscretizationParams;
use crate::{Error, Result};

/// Slack for the containment of reachable balls in the region.
const CONTAINMENT_SLACK: f64 = 1e-9;

/// Successor set of one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct PostEntry {
    pub chi_end: Vec<f64>,
    pub radius: f64,
    /// Sorted ascending.
    pub successors: Vec<CellId>,
    pub audit_error: f64,
}

impl PostEntry {
    pub fn ball(&self) -> Ball {
        Ball::new(self.chi_end.clone(), self.radius)
    }
}

/// The action realizing one successor: the configuration, the target cell,
/// and one representative `w` with the endpoint it produces.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Action {
    pub agent: AgentId,
    pub config: Vec<CellId>,
    pub target: CellId,
    pub target_point: Vec<f64>,
    pub w: Vec<f64>,
}

pub struct IndividualTs {
    pub agent: AgentId,
    cache: RwLock<HashMap<Vec<CellId>, Arc<PostEntry>>>,
}

impl IndividualTs {
    pub fn evaluated(&self) -> usize {
        self.cache.read().len()
    }
}

/// Counts reported per agent.
#[derive(Debug, Clone, Serialize)]
pub struct AgentSummary {
    pub agent: AgentId,
    pub cells: usize,
    pub initiating: usize,
    pub side: f64,
    pub d_max: f64,
    pub region_radius: f64,
    pub inner_radius: f64,
    pub evaluated_configurations: usize,
    pub mean_post: f64,
    pub max_audit_error: f64,
}

pub struct Abstraction {
    pub model: NetworkModel,
    pub params: DiscretizationParams,
    pub settings: IntegratorSettings,
    pub decs: Vec<CellDecomposition>,
    pub systems: Vec<IndividualTs>,
}

impl Abstraction {
    pub fn new(
        model: NetworkModel,
        params: DiscretizationParams,
        settings: IntegratorSettings,
    ) -> Result<Self> {
        let decs = model
            .ids()
            .collect::<Vec<_>>()
            .par_iter()
            .map(|&i| {
                grid::build_decomposition(&ReachFamily::new(&model, i), params.d_max(i), params.dt)
            })
            .collect::<Result<Vec<_>>>()?;
        let systems = model
            .ids()
            .map(|agent| IndividualTs {
                agent,
                cache: RwLock::new(HashMap::new()),
            })
            .collect();
        Ok(Abstraction {
            model,
            params,
            settings,
            decs,
            systems,
        })
    }

    pub fn dec(&self, i: AgentId) -> &CellDecomposition {
        &self.decs[i.index()]
    }

    pub fn len(&self) -> usize {
        self.decs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.decs.is_empty()
    }

    /// The cell containing `X_i0`.
    pub fn initial_cell(&self, i: AgentId) -> Result<CellId> {
        self.dec(i).locate_id(&self.model.initial_states[i.index()])
    }

    pub fn initial_state(&self) -> Result<Vec<CellId>> {
        self.model.ids().map(|i| self.initial_cell(i)).collect()
    }

    /// `pr_i` on dense ids.
    pub fn configuration(&self, i: AgentId, all: &[CellId]) -> Vec<CellId> {
        grid::pr(all, i, &self.model.agent(i).neighbors)
    }

    /// Agents of `config` in order: `i`, then its neighbors.
    fn members(&self, i: AgentId) -> impl Iterator<Item = AgentId> + '_ {
        std::iter::once(i).chain(self.model.agent(i).neighbors.iter().copied())
    }

    pub fn config_indices(&self, i: AgentId, config: &[CellId]) -> CellConfiguration {
        CellConfiguration(
            self.members(i)
                .zip(config)
                .map(|(a, &c)| self.dec(a).index(c).clone())
                .collect(),
        )
    }

    pub fn config_from_indices(
        &self,
        i: AgentId,
        config: &CellConfiguration,
    ) -> Result<Vec<CellId>> {
        if config.0.len() != self.model.agent(i).neighbors.len() + 1 {
            return Err(Error::model(format!(
                "configuration of agent {i} needs {} entries",
                self.model.agent(i).neighbors.len() + 1
            )));
        }
        self.members(i)
            .zip(&config.0)
            .map(|(a, l)| {
                self.dec(a).id(l).ok_or_else(|| Error::OutOfRange {
                    what: "cell index",
                    detail: format!("{l} is not a cell of agent {a}"),
                })
            })
            .collect()
    }

    pub fn is_initiating(&self, i: AgentId, config: &[CellId]) -> bool {
        self.members(i)
            .zip(config)
            .all(|(a, &c)| self.dec(a).is_initiating(c))
    }

    fn require_initiating(&self, i: AgentId, config: &[CellId]) -> Result<()> {
        if config.len() != self.model.agent(i).neighbors.len() + 1 {
            return Err(Error::model(format!(
                "configuration of agent {i} has the wrong length"
            )));
        }
        if !self.is_initiating(i, config) {
            return Err(Error::NonInitiating {
                agent: i,
                cell: self.config_indices(i, config).to_string(),
            });
        }
        Ok(())
    }

    /// Reference trajectory of a configuration (recomputed, never stored).
    pub fn reference(&self, i: AgentId, config: &[CellId]) -> Result<ReferenceTrajectory> {
        let x_g = self.dec(i).reference_point_of(config[0]);
        let nbrs: Vec<f64> = self
            .model
            .agent(i)
            .neighbors
            .iter()
            .zip(&config[1..])
            .flat_map(|(j, &c)| self.dec(*j).reference_point_of(c))
            .collect();
        controller::integrate_reference(
            self.model.agent(i),
            &x_g,
            &nbrs,
            self.params.dt,
            &self.settings,
        )
    }

    pub fn r_i(&self, i: AgentId) -> f64 {
        controller::r_i(self.model.agent(i), self.params.lambda(i), self.params.dt)
    }

    fn compute_post(&self, i: AgentId, config: &[CellId]) -> Result<PostEntry> {
        let reference = self.reference(i, config)?;
        let ball = Ball::new(reference.endpoint().to_vec(), self.r_i(i));
        let dec = self.dec(i);
        let excess = dec.region.excess_over(&ball);
        if excess > CONTAINMENT_SLACK {
            return Err(Error::BallEscapesRegion { agent: i, excess });
        }
        let mut successors: Vec<CellId> = dec
            .cells_intersecting_ball_with_witness(&ball)
            .into_iter()
            .map(|(id, _)| id)
            .collect();
        successors.sort_unstable();
        if successors.is_empty() {
            return Err(Error::Infeasible {
                agent: i,
                reason: format!(
                    "configuration {} has no successor",
                    self.config_indices(i, config)
                ),
            });
        }
        Ok(PostEntry {
            chi_end: ball.center,
            radius: ball.radius,
            successors,
            audit_error: reference.audit_error,
        })
    }

    /// Successor cells of a configuration, memoized.
    pub fn post(&self, i: AgentId, config: &[CellId]) -> Result<Arc<PostEntry>> {
        self.require_initiating(i, config)?;
        let ts = &self.systems[i.index()];
        if let Some(e) = ts.cache.read().get(config) {
            return Ok(e.clone());
        }
        let entry = Arc::new(self.compute_post(i, config)?);
        Ok(ts
            .cache
            .write()
            .entry(config.to_vec())
            .or_insert(entry)
            .clone())
    }

    /// Successors as lattice indices.
    pub fn post_indices(&self, i: AgentId, config: &CellConfiguration) -> Result<Vec<CellIndex>> {
        let ids = self.config_from_indices(i, config)?;
        let e = self.post(i, &ids)?;
        Ok(e.successors
            .iter()
            .map(|&c| self.dec(i).index(c).clone())
            .collect())
    }

    /// Evaluates many configurations in parallel, filling the cache.
    pub fn post_many(&self, i: AgentId, configs: &[Vec<CellId>]) -> Result<()> {
        configs
            .par_iter()
            .map(|c| self.post(i, c).map(|_| ()))
            .collect()
    }

    /// The action leading from `config` to `target`.
    pub fn successor_action(
        &self,
        i: AgentId,
        config: &[CellId],
        target: CellId,
    ) -> Result<Action> {
        let entry = self.post(i, config)?;
        if entry.successors.binary_search(&target).is_err() {
            return Err(Error::NotASuccessor {
                agent: i,
                config: self.config_indices(i, config).to_string(),
                target: self.dec(i).index(target).to_string(),
            });
        }
        let reference = self.reference(i, config)?;
        let dec = self.dec(i);
        let cell_box = dec.cell_box(dec.index(target));
        let (target_point, _) =
            grid::deep_point(&cell_box, &entry.ball()).ok_or_else(|| Error::NotASuccessor {
                agent: i,
                config: self.config_indices(i, config).to_string(),
                target: dec.index(target).to_string(),
            })?;
        let w = controller::select_w(
            &reference,
            self.model.agent(i),
            self.params.lambda(i),
            &target_point,
        )?;
        Ok(Action {
            agent: i,
            config: config.to_vec(),
            target,
            target_point,
            w,
        })
    }

    /// Successors of a product state: the Cartesian product of the agents' posts.
    pub fn product_post(&self, state: &[CellId]) -> Result<Vec<Vec<CellId>>> {
        let posts: Vec<Arc<PostEntry>> = self
            .model
            .ids()
            .map(|i| self.post(i, &self.configuration(i, state)))
            .collect::<Result<_>>()?;
        let mut out = vec![Vec::with_capacity(state.len())];
        for p in &posts {
            let mut next = Vec::with_capacity(out.len() * p.successors.len());
            for prefix in &out {
                for &c in &p.successors {
                    let mut v = prefix.clone();
                    v.push(c);
                    next.push(v);
                }
            }
            out = next;
        }
        Ok(out)
    }

    /// Whether every agent's configuration in a product state is initiating.
    pub fn product_initiating(&self, state: &[CellId]) -> bool {
        self.model
            .ids()
            .all(|i| self.dec(i).is_initiating(state[i.index()]))
    }

    /// Depth-first traversal of product paths of length up to `m`. The visitor
    /// sees every maximal path: length `m`, or shorter when it ends in a
    /// non-initiating state.
    pub fn enumerate_paths<F>(&self, start: &[CellId], m: usize, mut visitor: F) -> Result<()>
    where
        F: FnMut(&[Vec<CellId>]),
    {
        let mut path = vec![start.to_vec()];
        self.enumerate_rec(&mut path, m, &mut visitor)
    }

    fn enumerate_rec<F>(&self, path: &mut Vec<Vec<CellId>>, m: usize, visitor: &mut F) -> Result<()>
    where
        F: FnMut(&[Vec<CellId>]),
    {
        let last = path.last().unwrap().clone();
        if path.len() > m || !self.product_initiating(&last) {
            visitor(path);
            return Ok(());
        }
        for next in self.product_post(&last)? {
            path.push(next);
            self.enumerate_rec(path, m, visitor)?;
            path.pop();
        }
        Ok(())
    }

    pub fn summary(&self) -> Vec<AgentSummary> {
        self.model
            .ids()
            .map(|i| {
                let dec = self.dec(i);
                let cache = self.systems[i.index()].cache.read();
                let n = cache.len();
                let total: usize = cache.values().map(|e| e.successors.len()).sum();
                let audit = cache.values().map(|e| e.audit_error).fold(0.0, f64::max);
                AgentSummary {
                    agent: i,
                    cells: dec.len(),
                    initiating: dec.initiating_count(),
                    side: dec.side,
                    d_max: dec.d_max,
                    region_radius: dec.region.radius,
                    inner_radius: dec.inner.radius,
                    evaluated_configurations: n,
                    mean_post: if n == 0 { 0.0 } else { total as f64 / n as f64 },
                    max_audit_error: audit,
                }
            })
            .collect()
    }
}
