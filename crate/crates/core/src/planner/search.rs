//! Forward reachability and backward pruning for one agent whose neighbors
//! follow fixed cell paths.
//!
//! Search nodes pair a cell with goal progress: how many goals are met so far
//! and, when the next goal is relative, the step at which the last one was met.
//! Meeting a goal is a same-step move from `(c, g, a)` to `(c, g + 1, k)`.

use std::collections::HashMap;

use super::spec::CompiledGoal;
use crate::abstraction::Abstraction;
use crate::grid::{CellId, CellIndex};
use crate::model::AgentId;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Node {
    pub cell: CellId,
    pub goals_met: u16,
    pub anchor: u32,
}

/// Layered reachability graph of one agent.
#[derive(Debug, Clone)]
pub struct AgentSearch {
    pub agent: AgentId,
    pub m: usize,
    pub layers: Vec<Vec<Node>>,
    /// Post edges from layer `k` to layer `k + 1`.
    edges: Vec<Vec<Vec<u32>>>,
    /// Same-step goal moves.
    eps: Vec<Vec<Option<u32>>>,
    good: Vec<Vec<bool>>,
    n_goals: usize,
    /// Most goals met by any forward-reachable node.
    best_progress: usize,
}

fn canonical(goals: &[CompiledGoal], g: usize, k: usize) -> u32 {
    if g < goals.len() && goals[g].relative {
        k as u32
    } else {
        0
    }
}

/// Whether a node that has met `g` goals can still meet the next one at or after step `k`.
fn alive(goals: &[CompiledGoal], node: &Node, k: usize) -> bool {
    let g = node.goals_met as usize;
    if g >= goals.len() {
        return true;
    }
    let w = goals[g].steps;
    let last = if goals[g].relative {
        node.anchor as usize + w.hi
    } else {
        w.hi
    };
    k <= last
}

fn can_meet(goals: &[CompiledGoal], node: &Node, k: usize) -> bool {
    let g = node.goals_met as usize;
    if g >= goals.len() || !goals[g].contains(node.cell) {
        return false;
    }
    let w = goals[g].steps;
    if goals[g].relative {
        k >= node.anchor as usize && w.contains(k - node.anchor as usize)
    } else {
        w.contains(k)
    }
}

struct LayerBuilder {
    nodes: Vec<Node>,
    index: HashMap<Node, u32>,
}

impl LayerBuilder {
    fn new() -> Self {
        LayerBuilder {
            nodes: Vec::new(),
            index: HashMap::new(),
        }
    }

    fn insert(&mut self, n: Node) -> u32 {
        if let Some(&i) = self.index.get(&n) {
            return i;
        }
        let i = self.nodes.len() as u32;
        self.nodes.push(n);
        self.index.insert(n, i);
        i
    }
}

/// Adds goal moves to a layer; returns the eps edge of every node.
fn close_layer(goals: &[CompiledGoal], b: &mut LayerBuilder, k: usize) -> Vec<Option<u32>> {
    let mut eps = Vec::new();
    let mut p = 0;
    while p < b.nodes.len() {
        let n = b.nodes[p];
        let e = if can_meet(goals, &n, k) {
            let g = n.goals_met as usize + 1;
            Some(b.insert(Node {
                cell: n.cell,
                goals_met: g as u16,
                anchor: canonical(goals, g, k),
            }))
        } else {
            None
        };
        eps.push(e);
        p += 1;
    }
    eps
}

impl AgentSearch {
    /// Per-step reachable cells `Q^0 .. Q^m`, ascending.
    pub fn cells_at(&self, k: usize) -> Vec<CellId> {
        let mut v: Vec<CellId> = self.layers[k].iter().map(|n| n.cell).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Cells of nodes that lie on some satisfying path, per step.
    pub fn pruned_at(&self, k: usize) -> Vec<CellId> {
        let mut v: Vec<CellId> = self.layers[k]
            .iter()
            .zip(&self.good[k])
            .filter(|(_, g)| **g)
            .map(|(n, _)| n.cell)
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn satisfiable(&self) -> bool {
        self.good[0].iter().any(|g| *g)
    }

    pub fn forward_sizes(&self) -> Vec<usize> {
        (0..=self.m).map(|k| self.cells_at(k).len()).collect()
    }

    pub fn pruned_sizes(&self) -> Vec<usize> {
        (0..=self.m).map(|k| self.pruned_at(k).len()).collect()
    }

    pub fn unsatisfiable_error(&self) -> Error {
        if self.best_progress < self.n_goals {
            Error::Unsatisfiable(format!(
                "agent {}: goal {} of {} cannot be met within its window",
                self.agent,
                self.best_progress + 1,
                self.n_goals
            ))
        } else {
            Error::Unsatisfiable(format!(
                "agent {}: no path meeting every goal extends to step {}",
                self.agent, self.m
            ))
        }
    }

    /// Good nodes of layer `k+1` reachable from `set` (layer `k`), grouped by cell
    /// and closed under goal moves, in lattice order of the cells.
    fn successor_groups(
        &self,
        abs: &Abstraction,
        k: usize,
        set: &[u32],
    ) -> Vec<(CellIndex, Vec<u32>)> {
        let dec = abs.dec(self.agent);
        let mut groups: HashMap<CellId, Vec<u32>> = HashMap::new();
        for &p in set {
            for &q in &self.edges[k][p as usize] {
                if self.good[k + 1][q as usize] {
                    groups
                        .entry(self.layers[k + 1][q as usize].cell)
                        .or_default()
                        .push(q);
                }
            }
        }
        let mut out: Vec<(CellIndex, Vec<u32>)> = groups
            .into_iter()
            .map(|(c, nodes)| (dec.index(c).clone(), self.close_good(k + 1, nodes)))
            .collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    fn close_good(&self, k: usize, mut nodes: Vec<u32>) -> Vec<u32> {
        let mut p = 0;
        while p < nodes.len() {
            if let Some(e) = self.eps[k][nodes[p] as usize] {
                if self.good[k][e as usize] && !nodes.contains(&e) {
                    nodes.push(e);
                }
            }
            p += 1;
        }
        nodes.sort_unstable();
        nodes
    }

    fn start_set(&self) -> Vec<u32> {
        (0..self.layers[0].len() as u32)
            .filter(|&p| self.good[0][p as usize])
            .collect()
    }

    /// The lexicographically least satisfying cell path.
    pub fn least_path(&self, abs: &Abstraction) -> Result<Vec<CellId>> {
        self.paths(abs)
            .next()
            .ok_or_else(|| self.unsatisfiable_error())
    }

    /// Satisfying cell paths in lexicographic order of their lattice tuples.
    pub fn paths<'a>(&'a self, abs: &'a Abstraction) -> PathIter<'a> {
        PathIter {
            search: self,
            abs,
            cursor: self.cursor(),
        }
    }

    /// A resumable position in the enumeration of [`AgentSearch::paths`].
    pub fn cursor(&self) -> PathCursor {
        let start = self.start_set();
        let mut stack = Vec::new();
        if !start.is_empty() {
            stack.push(Frame {
                cell: self.layers[0][start[0] as usize].cell,
                groups: None,
                set: start,
                pos: 0,
            });
        }
        PathCursor { stack }
    }

    pub fn next_path(&self, abs: &Abstraction, cursor: &mut PathCursor) -> Option<Vec<CellId>> {
        let stack = &mut cursor.stack;
        loop {
            let depth = stack.len();
            if depth == 0 {
                return None;
            }
            let k = depth - 1;
            if k == self.m {
                let path: Vec<CellId> = stack.iter().map(|f| f.cell).collect();
                stack.pop();
                return Some(path);
            }
            let top = stack.last_mut().unwrap();
            if top.groups.is_none() {
                top.groups = Some(self.successor_groups(abs, k, &top.set));
            }
            let groups = top.groups.as_ref().unwrap();
            if top.pos >= groups.len() {
                stack.pop();
                continue;
            }
            let nodes = groups[top.pos].1.clone();
            top.pos += 1;
            let cell = self.layers[k + 1][nodes[0] as usize].cell;
            stack.push(Frame {
                cell,
                set: nodes,
                groups: None,
                pos: 0,
            });
        }
    }
}

#[derive(Debug, Clone)]
struct Frame {
    cell: CellId,
    set: Vec<u32>,
    groups: Option<Vec<(CellIndex, Vec<u32>)>>,
    pos: usize,
}

#[derive(Debug, Clone)]
pub struct PathCursor {
    stack: Vec<Frame>,
}

pub struct PathIter<'a> {
    search: &'a AgentSearch,
    abs: &'a Abstraction,
    cursor: PathCursor,
}

impl Iterator for PathIter<'_> {
    type Item = Vec<CellId>;

    fn next(&mut self) -> Option<Vec<CellId>> {
        self.search.next_path(self.abs, &mut self.cursor)
    }
}

/// Builds the layered graph for `agent` starting from `start` with neighbor cells
/// `neighbor_cells[k]` at step `k` (in neighbor order), then prunes it backward.
pub fn forward_reach(
    abs: &Abstraction,
    agent: AgentId,
    start: CellId,
    neighbor_cells: &[Vec<CellId>],
    goals: &[CompiledGoal],
    m: usize,
) -> Result<AgentSearch> {
    assert!(
        neighbor_cells.len() >= m,
        "neighbor paths must cover every step"
    );
    let mut layers = Vec::with_capacity(m + 1);
    let mut edges = Vec::with_capacity(m);
    let mut eps_all = Vec::with_capacity(m + 1);
    let mut best_progress = 0usize;

    let mut cur = LayerBuilder::new();
    cur.insert(Node {
        cell: start,
        goals_met: 0,
        anchor: canonical(goals, 0, 0),
    });
    eps_all.push(close_layer(goals, &mut cur, 0));
    for k in 0..m {
        let config_of = |c: CellId| {
            let mut v = Vec::with_capacity(1 + neighbor_cells[k].len());
            v.push(c);
            v.extend_from_slice(&neighbor_cells[k]);
            v
        };
        let mut expandable: Vec<CellId> = cur
            .nodes
            .iter()
            .map(|n| n.cell)
            .filter(|&c| abs.is_initiating(agent, &config_of(c)))
            .collect();
        expandable.sort_unstable();
        expandable.dedup();
        let configs: Vec<Vec<CellId>> = expandable.iter().map(|&c| config_of(c)).collect();
        abs.post_many(agent, &configs)?;

        let mut next = LayerBuilder::new();
        let mut out_edges = Vec::with_capacity(cur.nodes.len());
        for n in &cur.nodes {
            best_progress = best_progress.max(n.goals_met as usize);
            let config = config_of(n.cell);
            if !alive(goals, n, k + 1) || !abs.is_initiating(agent, &config) {
                out_edges.push(Vec::new());
                continue;
            }
            let post = abs.post(agent, &config)?;
            let targets = post
                .successors
                .iter()
                .map(|&c| {
                    next.insert(Node {
                        cell: c,
                        goals_met: n.goals_met,
                        anchor: n.anchor,
                    })
                })
                .collect();
            out_edges.push(targets);
        }
        eps_all.push(close_layer(goals, &mut next, k + 1));
        layers.push(std::mem::take(&mut cur.nodes));
        edges.push(out_edges);
        cur = next;
    }
    for n in &cur.nodes {
        best_progress = best_progress.max(n.goals_met as usize);
    }
    layers.push(cur.nodes);

    let mut search = AgentSearch {
        agent,
        m,
        layers,
        edges,
        eps: eps_all,
        good: Vec::new(),
        n_goals: goals.len(),
        best_progress,
    };
    backward_prune(&mut search);
    Ok(search)
}

/// Marks the nodes from which every remaining goal can still be met by step `m`.
pub fn backward_prune(s: &mut AgentSearch) {
    let m = s.m;
    let mut good: Vec<Vec<bool>> = s.layers.iter().map(|l| vec![false; l.len()]).collect();
    for k in (0..=m).rev() {
        // Goal moves raise `goals_met`, so settle higher progress first.
        let mut order: Vec<usize> = (0..s.layers[k].len()).collect();
        order.sort_by_key(|&p| std::cmp::Reverse(s.layers[k][p].goals_met));
        for p in order {
            let node = s.layers[k][p];
            let mut ok = if k == m {
                node.goals_met as usize == s.n_goals
            } else {
                s.edges[k][p].iter().any(|&q| good[k + 1][q as usize])
            };
            if let Some(e) = s.eps[k][p] {
                ok |= good[k][e as usize];
            }
            good[k][p] = ok;
        }
    }
    s.good = good;
}

/// Goal satisfaction steps along a fixed cell path, if the path meets every goal.
pub fn goal_steps(path: &[CellId], goals: &[CompiledGoal]) -> Option<Vec<usize>> {
    // (goals met, anchor) -> (parent state, step at which this goal was met)
    type State = (u16, u32);
    let mut layers: Vec<HashMap<State, (Option<State>, Option<usize>)>> = Vec::new();
    let mut cur: HashMap<State, (Option<State>, Option<usize>)> = HashMap::new();
    cur.insert((0, canonical(goals, 0, 0)), (None, None));
    for (k, &c) in path.iter().enumerate() {
        // Same-step closure.
        let mut frontier: Vec<State> = cur.keys().copied().collect();
        frontier.sort_unstable();
        while let Some(st) = frontier.pop() {
            let node = Node {
                cell: c,
                goals_met: st.0,
                anchor: st.1,
            };
            if can_meet(goals, &node, k) {
                let g = st.0 as usize + 1;
                let nst = (g as u16, canonical(goals, g, k));
                if let std::collections::hash_map::Entry::Vacant(e) = cur.entry(nst) {
                    e.insert((Some(st), Some(k)));
                    frontier.push(nst);
                }
            }
        }
        layers.push(cur.clone());
        let next: HashMap<State, (Option<State>, Option<usize>)> = cur
            .keys()
            .filter(|st| {
                alive(
                    goals,
                    &Node {
                        cell: c,
                        goals_met: st.0,
                        anchor: st.1,
                    },
                    k + 1,
                )
            })
            .map(|st| (*st, (Some(*st), None)))
            .collect();
        cur = next;
    }
    let last = layers.len().checked_sub(1)?;
    let mut st = *layers[last]
        .keys()
        .filter(|st| st.0 as usize == goals.len())
        .min()?;
    let mut steps = vec![0usize; goals.len()];
    let mut k = last;
    loop {
        let (parent, met) = layers[k][&st];
        if let Some(step) = met {
            steps[st.0 as usize - 1] = step;
        }
        match parent {
            None => break,
            Some(p) => {
                if met.is_none() {
                    if k == 0 {
                        break;
                    }
                    k -= 1;
                }
                st = p;
            }
        }
    }
    Some(steps)
}
