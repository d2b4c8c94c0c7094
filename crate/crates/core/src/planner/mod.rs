//! Plan synthesis for nested timed-eventually goals.
//!
//! Two strategies are available. The cascade plans agents one at a time in
//! topological order of the coupling graph, each against the fixed paths of
//! the agents it listens to, and backjumps to the latest culprit when a later
//! agent has no satisfying path. The product search explores the synchronized
//! product breadth first and also handles cyclic graphs.

pub mod search;
pub mod spec;

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::abstraction::Abstraction;
use crate::controller::ReferenceTrajectory;
use crate::grid::{CellId, CellIndex};
use crate::model::AgentId;
use crate::{Error, Result};

pub use search::{backward_prune, forward_reach, goal_steps, AgentSearch, Node, PathCursor};
pub use spec::{
    compile_goals, deadline_step, label_cells, window_to_steps, CompiledGoal, Goal, GoalBox,
    StepWindow, TimedReachSpec,
};

pub const DEFAULT_BUDGET: usize = 64;
pub const DEFAULT_CAP: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Cascade,
    Product,
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "cascade" => Ok(Strategy::Cascade),
            "product" => Ok(Strategy::Product),
            other => Err(format!(
                "unknown strategy {other:?} (expected cascade or product)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentPlan {
    pub agent: AgentId,
    /// Cells at steps `0..=steps`.
    pub cells: Vec<CellIndex>,
    /// Step at which each goal is met.
    pub goal_steps: Vec<usize>,
    /// Per transition, the representative `w` and the endpoint it steers to.
    #[serde(default)]
    pub w: Vec<Vec<f64>>,
    #[serde(default)]
    pub targets: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub strategy: Strategy,
    pub dt: f64,
    pub steps: usize,
    pub agents: Vec<AgentPlan>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AgentLog {
    pub agent: usize,
    /// Reachable cells per step in the last search run for this agent.
    pub forward_sizes: Vec<usize>,
    /// Cells on some satisfying path per step, same run.
    pub pruned_sizes: Vec<usize>,
    pub searches: usize,
    pub paths_tried: usize,
    /// Reachable cells per step, same run.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reachable: Vec<Vec<CellIndex>>,
    /// Cells on some satisfying path per step, same run.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub satisfying: Vec<Vec<CellIndex>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisLog {
    pub strategy: Strategy,
    pub steps: usize,
    pub backjumps: usize,
    pub product_nodes: usize,
    pub agents: Vec<AgentLog>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthesisOptions {
    pub budget: usize,
    pub cap: usize,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        SynthesisOptions {
            budget: DEFAULT_BUDGET,
            cap: DEFAULT_CAP,
        }
    }
}

pub fn compile_spec(abs: &Abstraction, spec: &TimedReachSpec) -> Result<Vec<Vec<CompiledGoal>>> {
    abs.model
        .ids()
        .map(|i| {
            let goals = spec.goals.get(i.index()).map(Vec::as_slice).unwrap_or(&[]);
            compile_goals(goals, abs.dec(i), abs.params.dt)
        })
        .collect()
}

/// Plan length: the latest goal deadline, capped by the step count.
pub fn plan_steps(abs: &Abstraction, goals: &[Vec<CompiledGoal>]) -> usize {
    goals
        .iter()
        .map(|g| deadline_step(g))
        .max()
        .unwrap_or(0)
        .min(abs.params.steps)
}

fn neighbor_cells(
    abs: &Abstraction,
    i: AgentId,
    paths: &[Option<Vec<CellId>>],
    m: usize,
) -> Vec<Vec<CellId>> {
    let nbrs = &abs.model.agent(i).neighbors;
    (0..m)
        .map(|k| {
            nbrs.iter()
                .map(|j| paths[j.index()].as_ref().expect("parent planned first")[k])
                .collect()
        })
        .collect()
}

struct Slot {
    search: Option<AgentSearch>,
    cursor: Option<PathCursor>,
    tried: usize,
    conflicts: BTreeSet<usize>,
}

/// Plans agents in topological order against their parents' chosen paths.
pub fn cascade_synthesize(
    abs: &Abstraction,
    spec: &TimedReachSpec,
    opts: &SynthesisOptions,
) -> Result<(Plan, SynthesisLog)> {
    let order = abs.model.topological_order().ok_or(Error::CyclicGraph)?;
    let goals = compile_spec(abs, spec)?;
    let m = plan_steps(abs, &goals);
    let n = abs.len();
    let mut position = vec![0usize; n];
    for (p, a) in order.iter().enumerate() {
        position[a.index()] = p;
    }
    let mut logs: Vec<AgentLog> = (0..n)
        .map(|a| AgentLog {
            agent: a + 1,
            ..AgentLog::default()
        })
        .collect();
    let mut slots: Vec<Slot> = (0..n)
        .map(|_| Slot {
            search: None,
            cursor: None,
            tried: 0,
            conflicts: BTreeSet::new(),
        })
        .collect();
    let mut paths: Vec<Option<Vec<CellId>>> = vec![None; n];
    let mut first_failure: Option<Error> = None;
    let mut backjumps = 0usize;
    let mut pos = 0usize;

    while pos < n {
        let a = order[pos];
        if slots[pos].search.is_none() {
            let nc = neighbor_cells(abs, a, &paths, m);
            let s = forward_reach(abs, a, abs.initial_cell(a)?, &nc, &goals[a.index()], m)?;
            let log = &mut logs[a.index()];
            log.searches += 1;
            log.forward_sizes = s.forward_sizes();
            log.pruned_sizes = s.pruned_sizes();
            let dec = abs.dec(a);
            let lift = |v: Vec<CellId>| v.into_iter().map(|c| dec.index(c).clone()).collect();
            log.reachable = (0..=m).map(|k| lift(s.cells_at(k))).collect();
            log.satisfying = (0..=m).map(|k| lift(s.pruned_at(k))).collect();
            slots[pos].cursor = Some(s.cursor());
            slots[pos].search = Some(s);
            slots[pos].tried = 0;
        }
        let slot = &mut slots[pos];
        let search = slot.search.as_ref().unwrap();
        let next = if slot.tried < opts.budget.max(1) {
            search.next_path(abs, slot.cursor.as_mut().unwrap())
        } else {
            None
        };
        if let Some(path) = next {
            slot.tried += 1;
            logs[a.index()].paths_tried += 1;
            paths[a.index()] = Some(path);
            pos += 1;
            continue;
        }
        if first_failure.is_none() && slot.tried == 0 {
            first_failure = Some(search.unsatisfiable_error());
        }
        let mut conflict = std::mem::take(&mut slot.conflicts);
        conflict.extend(
            abs.model
                .agent(a)
                .neighbors
                .iter()
                .map(|j| position[j.index()]),
        );
        let Some(&jump) = conflict.iter().next_back() else {
            let cause = first_failure
                .map(|e| match e {
                    Error::Unsatisfiable(m) => m,
                    other => other.to_string(),
                })
                .unwrap_or_else(|| format!("agent {a} has no satisfying path"));
            return Err(Error::Unsatisfiable(format!(
                "{cause}; search budget of {} paths per agent exhausted after {backjumps} backjumps",
                opts.budget
            )));
        };
        conflict.remove(&jump);
        slots[jump].conflicts.extend(conflict);
        for p in jump + 1..=pos {
            slots[p] = Slot {
                search: None,
                cursor: None,
                tried: 0,
                conflicts: BTreeSet::new(),
            };
            paths[order[p].index()] = None;
        }
        backjumps += 1;
        pos = jump;
    }

    let agents = abs
        .model
        .ids()
        .map(|i| {
            let cells = paths[i.index()].take().unwrap();
            agent_plan(abs, i, &cells, &goals[i.index()])
        })
        .collect::<Result<Vec<_>>>()?;
    let plan = Plan {
        strategy: Strategy::Cascade,
        dt: abs.params.dt,
        steps: m,
        agents,
    };
    let log = SynthesisLog {
        strategy: Strategy::Cascade,
        steps: m,
        backjumps,
        product_nodes: 0,
        agents: logs,
    };
    Ok((plan, log))
}

fn agent_plan(
    abs: &Abstraction,
    i: AgentId,
    cells: &[CellId],
    goals: &[CompiledGoal],
) -> Result<AgentPlan> {
    let steps = goal_steps(cells, goals).ok_or_else(|| Error::InconsistentPlan {
        agent: i,
        step: 0,
        reason: "path does not meet its goals".into(),
    })?;
    Ok(AgentPlan {
        agent: i,
        cells: cells.iter().map(|&c| abs.dec(i).index(c).clone()).collect(),
        goal_steps: steps,
        w: Vec::new(),
        targets: Vec::new(),
    })
}

/// Goal progress of one agent in the product search.
type Progress = (u16, u32);

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct ProductNode {
    cells: Vec<CellId>,
    progress: Vec<Progress>,
}

fn first_anchor(goals: &[CompiledGoal], g: usize, k: usize) -> u32 {
    if g < goals.len() && goals[g].relative {
        k as u32
    } else {
        0
    }
}

/// Progress values reachable by meeting goals at step `k` in cell `c`.
fn progress_options(goals: &[CompiledGoal], c: CellId, start: Progress, k: usize) -> Vec<Progress> {
    let mut out = vec![start];
    let mut cur = start;
    loop {
        let g = cur.0 as usize;
        if g >= goals.len() || !goals[g].contains(c) {
            break;
        }
        let w = goals[g].steps;
        let ok = if goals[g].relative {
            k >= cur.1 as usize && w.contains(k - cur.1 as usize)
        } else {
            w.contains(k)
        };
        if !ok {
            break;
        }
        cur = (g as u16 + 1, first_anchor(goals, g + 1, k));
        out.push(cur);
    }
    out
}

fn progress_alive(goals: &[CompiledGoal], p: Progress, k: usize) -> bool {
    let g = p.0 as usize;
    if g >= goals.len() {
        return true;
    }
    let w = goals[g].steps;
    k <= if goals[g].relative {
        p.1 as usize + w.hi
    } else {
        w.hi
    }
}

/// Breadth-first search of the product; returns a shortest plan.
pub fn product_synthesize(
    abs: &Abstraction,
    spec: &TimedReachSpec,
    opts: &SynthesisOptions,
) -> Result<(Plan, SynthesisLog)> {
    let goals = compile_spec(abs, spec)?;
    let m = plan_steps(abs, &goals);
    let n = abs.len();
    let start = abs.initial_state()?;
    let mut generated = 0usize;

    // Each level lists nodes with the index of their parent in the previous level.
    let mut levels: Vec<Vec<(ProductNode, usize)>> = Vec::new();
    let mut expand_into = |cells: Vec<CellId>,
                           base: &[Progress],
                           k: usize,
                           parent: usize,
                           level: &mut Vec<(ProductNode, usize)>,
                           index: &mut HashMap<ProductNode, usize>|
     -> Result<()> {
        let options: Vec<Vec<Progress>> = (0..n)
            .map(|a| progress_options(&goals[a], cells[a], base[a], k))
            .collect();
        let mut combos: Vec<Vec<Progress>> = vec![Vec::with_capacity(n)];
        for opt in &options {
            combos = combos
                .into_iter()
                .flat_map(|c| {
                    opt.iter().map(move |p| {
                        let mut v = c.clone();
                        v.push(*p);
                        v
                    })
                })
                .collect();
        }
        for progress in combos {
            let node = ProductNode {
                cells: cells.clone(),
                progress,
            };
            if index.contains_key(&node) {
                continue;
            }
            generated += 1;
            if generated > opts.cap {
                return Err(Error::CapExceeded { cap: opts.cap });
            }
            index.insert(node.clone(), level.len());
            level.push((node, parent));
        }
        Ok(())
    };

    let accepting =
        |node: &ProductNode| (0..n).all(|a| node.progress[a].0 as usize == goals[a].len());

    let mut level = Vec::new();
    let mut index = HashMap::new();
    let init: Vec<Progress> = (0..n).map(|a| (0, first_anchor(&goals[a], 0, 0))).collect();
    expand_into(start.clone(), &init, 0, usize::MAX, &mut level, &mut index)?;
    levels.push(level);

    let mut found: Option<(usize, usize)> = None;
    for k in 0..=m {
        let hits: Vec<usize> = (0..levels[k].len())
            .filter(|&p| accepting(&levels[k][p].0))
            .collect();
        if !hits.is_empty() {
            let key = |p: usize| {
                let node = &levels[k][p].0;
                let idx: Vec<CellIndex> = abs
                    .model
                    .ids()
                    .map(|i| abs.dec(i).index(node.cells[i.index()]).clone())
                    .collect();
                (idx, node.progress.clone())
            };
            let best = hits.into_iter().min_by_key(|&p| key(p)).unwrap();
            found = Some((k, best));
            break;
        }
        if k == m {
            break;
        }
        let mut next = Vec::new();
        let mut next_index = HashMap::new();
        for p in 0..levels[k].len() {
            let node = levels[k][p].0.clone();
            if !abs.product_initiating(&node.cells)
                || !(0..n).all(|a| progress_alive(&goals[a], node.progress[a], k + 1))
            {
                continue;
            }
            for succ in abs.product_post(&node.cells)? {
                expand_into(succ, &node.progress, k + 1, p, &mut next, &mut next_index)?;
            }
        }
        if next.is_empty() {
            break;
        }
        levels.push(next);
    }

    let Some((k_end, mut p)) = found else {
        let reached: Vec<usize> = (0..n)
            .map(|a| {
                levels
                    .iter()
                    .flat_map(|l| l.iter().map(move |(nd, _)| nd.progress[a].0 as usize))
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let detail = (0..n)
            .find(|&a| reached[a] < goals[a].len())
            .map(|a| {
                format!(
                    "agent {}: goal {} of {} cannot be met within its window",
                    a + 1,
                    reached[a] + 1,
                    goals[a].len()
                )
            })
            .unwrap_or_else(|| "goals cannot be met jointly".into());
        return Err(Error::Unsatisfiable(detail));
    };

    let mut trace = vec![Vec::new(); k_end + 1];
    for k in (0..=k_end).rev() {
        let (node, parent) = &levels[k][p];
        trace[k] = node.cells.clone();
        p = *parent;
    }
    let agents = abs
        .model
        .ids()
        .map(|i| {
            let cells: Vec<CellId> = trace.iter().map(|s| s[i.index()]).collect();
            agent_plan(abs, i, &cells, &goals[i.index()])
        })
        .collect::<Result<Vec<_>>>()?;
    let plan = Plan {
        strategy: Strategy::Product,
        dt: abs.params.dt,
        steps: k_end,
        agents,
    };
    let log = SynthesisLog {
        strategy: Strategy::Product,
        steps: k_end,
        backjumps: 0,
        product_nodes: generated,
        agents: (0..n)
            .map(|a| AgentLog {
                agent: a + 1,
                ..AgentLog::default()
            })
            .collect(),
    };
    Ok((plan, log))
}

/// Synthesizes with the given strategy and fills in the controls.
pub fn synthesize(
    abs: &Abstraction,
    spec: &TimedReachSpec,
    strategy: Strategy,
    opts: &SynthesisOptions,
) -> Result<(Plan, SynthesisLog)> {
    let (mut plan, log) = match strategy {
        Strategy::Cascade => cascade_synthesize(abs, spec, opts)?,
        Strategy::Product => product_synthesize(abs, spec, opts)?,
    };
    let schedule = extract_controls(&plan, abs)?;
    schedule.attach(&mut plan);
    Ok((plan, log))
}

/// Everything needed to run one agent over one step.
#[derive(Debug, Clone)]
pub struct StepControl {
    pub config: Vec<CellId>,
    pub target: CellId,
    pub target_point: Vec<f64>,
    pub w: Vec<f64>,
    pub reference: ReferenceTrajectory,
}

#[derive(Debug, Clone)]
pub struct ControlSchedule {
    pub dt: f64,
    pub steps: usize,
    pub lambda: Vec<f64>,
    /// `steps[k][agent]`.
    pub controls: Vec<Vec<StepControl>>,
}

impl ControlSchedule {
    pub fn attach(&self, plan: &mut Plan) {
        for (a, ap) in plan.agents.iter_mut().enumerate() {
            ap.w = self.controls.iter().map(|s| s[a].w.clone()).collect();
            ap.targets = self
                .controls
                .iter()
                .map(|s| s[a].target_point.clone())
                .collect();
        }
    }
}

/// Recomputes references, target points and `w` for every step of a plan.
pub fn extract_controls(plan: &Plan, abs: &Abstraction) -> Result<ControlSchedule> {
    let n = abs.len();
    let inconsistent = |agent: AgentId, step: usize, reason: String| Error::InconsistentPlan {
        agent,
        step,
        reason,
    };
    if plan.agents.len() != n {
        return Err(inconsistent(
            AgentId::from_index(0),
            0,
            format!("plan lists {} agents, model has {n}", plan.agents.len()),
        ));
    }
    if (plan.dt - abs.params.dt).abs() > 1e-12 * abs.params.dt.max(1.0) {
        return Err(inconsistent(
            AgentId::from_index(0),
            0,
            format!(
                "plan step {} differs from the discretization step {}",
                plan.dt, abs.params.dt
            ),
        ));
    }
    let mut ids: Vec<Vec<CellId>> = Vec::with_capacity(n);
    for i in abs.model.ids() {
        let ap = &plan.agents[i.index()];
        if ap.agent != i || ap.cells.len() != plan.steps + 1 {
            return Err(inconsistent(
                i,
                0,
                "agent entry malformed or wrong length".into(),
            ));
        }
        let path = ap
            .cells
            .iter()
            .enumerate()
            .map(|(k, l)| {
                abs.dec(i)
                    .id(l)
                    .ok_or_else(|| inconsistent(i, k, format!("{l} is not a cell")))
            })
            .collect::<Result<Vec<_>>>()?;
        if path[0] != abs.initial_cell(i)? {
            return Err(inconsistent(
                i,
                0,
                "first cell does not contain the initial state".into(),
            ));
        }
        ids.push(path);
    }
    let mut controls = Vec::with_capacity(plan.steps);
    for k in 0..plan.steps {
        let state: Vec<CellId> = ids.iter().map(|p| p[k]).collect();
        let row = abs
            .model
            .ids()
            .map(|i| {
                let config = abs.configuration(i, &state);
                let target = ids[i.index()][k + 1];
                let action = abs
                    .successor_action(i, &config, target)
                    .map_err(|e| inconsistent(i, k, e.to_string()))?;
                let reference = abs.reference(i, &config)?;
                Ok(StepControl {
                    config,
                    target,
                    target_point: action.target_point,
                    w: action.w,
                    reference,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        controls.push(row);
    }
    Ok(ControlSchedule {
        dt: abs.params.dt,
        steps: plan.steps,
        lambda: abs.model.ids().map(|i| abs.params.lambda(i)).collect(),
        controls,
    })
}

/// Reachable cell counts per step for every agent, with each agent following
/// the lexicographically least path of its parents. `None` for cyclic graphs.
pub fn reachable_profile(abs: &Abstraction, m: usize) -> Result<Option<Vec<Vec<usize>>>> {
    let Some(order) = abs.model.topological_order() else {
        return Ok(None);
    };
    let n = abs.len();
    let mut paths: Vec<Option<Vec<CellId>>> = vec![None; n];
    let mut sizes = vec![Vec::new(); n];
    for a in order {
        let nc = neighbor_cells(abs, a, &paths, m);
        let s = forward_reach(abs, a, abs.initial_cell(a)?, &nc, &[], m)?;
        sizes[a.index()] = s.forward_sizes();
        paths[a.index()] = Some(s.least_path(abs)?);
    }
    Ok(Some(sizes))
}
