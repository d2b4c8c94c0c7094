//! Exhaustive path enumeration used as the reference for the planner.

use std::collections::BTreeSet;

use horizon_abs::abstraction::Abstraction;
use horizon_abs::grid::{CellId, CellIndex};
use horizon_abs::planner::{compile_goals, forward_reach, goal_steps, Goal, GoalBox};
use horizon_abs::AgentId;
use rand::Rng;

/// Every full-length cell path of agent `i` against fixed neighbor cells.
pub fn all_paths(
    abs: &Abstraction,
    i: AgentId,
    nbrs: &[Vec<CellId>],
    m: usize,
) -> Vec<Vec<CellId>> {
    fn rec(
        abs: &Abstraction,
        i: AgentId,
        nbrs: &[Vec<CellId>],
        m: usize,
        path: &mut Vec<CellId>,
        out: &mut Vec<Vec<CellId>>,
    ) {
        let k = path.len() - 1;
        if k == m {
            out.push(path.clone());
            return;
        }
        let mut config = vec![*path.last().unwrap()];
        config.extend_from_slice(&nbrs[k]);
        if !abs.is_initiating(i, &config) {
            return;
        }
        for &c in &abs.post(i, &config).unwrap().successors {
            path.push(c);
            rec(abs, i, nbrs, m, path, out);
            path.pop();
        }
    }
    let mut out = Vec::new();
    rec(
        abs,
        i,
        nbrs,
        m,
        &mut vec![abs.initial_cell(i).unwrap()],
        &mut out,
    );
    out
}

/// Steps `k` with `k dt` in the window, by direct comparison.
pub fn window_steps(w: (f64, f64), dt: f64, m: usize) -> Vec<usize> {
    (0..=m)
        .filter(|&k| {
            let t = k as f64 * dt;
            t >= w.0 - 1e-9 && t <= w.1 + 1e-9
        })
        .collect()
}

pub fn inside(abs: &Abstraction, i: AgentId, c: CellId, g: &GoalBox) -> bool {
    let dec = abs.dec(i);
    let b = dec.cell_box(dec.index(c));
    (0..b.lo.len()).all(|d| g.lo[d] <= b.lo[d] && b.hi[d] <= g.hi[d])
}

/// Whether some nondecreasing choice of steps meets every goal in order.
pub fn satisfies(abs: &Abstraction, i: AgentId, path: &[CellId], goals: &[Goal]) -> bool {
    fn rec(
        abs: &Abstraction,
        i: AgentId,
        path: &[CellId],
        goals: &[Goal],
        g: usize,
        prev: usize,
    ) -> bool {
        if g == goals.len() {
            return true;
        }
        let m = path.len() - 1;
        let goal = &goals[g];
        let dt = abs.params.dt;
        (prev..=m).any(|k| {
            let offset = if goal.relative { k - prev } else { k };
            window_steps(goal.window, dt, m + prev).contains(&offset)
                && inside(abs, i, path[k], &goal.region)
                && rec(abs, i, path, goals, g + 1, k)
        })
    }
    rec(abs, i, path, goals, 0, 0)
}

/// One to three goals, mostly around cells a reachable path visits so that
/// roughly half of the instances are satisfiable.
pub fn random_goals<R: Rng>(
    abs: &Abstraction,
    i: AgentId,
    m: usize,
    hint: &[Vec<CellId>],
    rng: &mut R,
) -> Vec<Goal> {
    let dec = abs.dec(i);
    let dt = abs.params.dt;
    let path = (!hint.is_empty()).then(|| &hint[rng.gen_range(0..hint.len())]);
    let mut steps: Vec<usize> = (0..rng.gen_range(1..=3))
        .map(|_| rng.gen_range(0..=m))
        .collect();
    steps.sort_unstable();
    let mut prev = 0;
    steps
        .into_iter()
        .map(|k| {
            let c = match path {
                Some(p) if rng.gen_bool(0.8) => p[k],
                _ => rng.gen_range(0..dec.len()) as CellId,
            };
            let b = dec.cell_box(dec.index(c));
            let pad = rng.gen_range(0.0..1.2) * dec.side;
            let relative = rng.gen_bool(0.4);
            let at = if relative { k - prev } else { k };
            prev = k;
            let a = at.saturating_sub(rng.gen_range(0..=1));
            let len = rng.gen_range(0..=2);
            Goal {
                region: GoalBox {
                    lo: b.lo.iter().map(|v| v - pad).collect(),
                    hi: b.hi.iter().map(|v| v + pad).collect(),
                },
                window: (a as f64 * dt, (a + len) as f64 * dt),
                relative,
            }
        })
        .collect()
}

pub fn lattice(abs: &Abstraction, i: AgentId, path: &[CellId]) -> Vec<CellIndex> {
    path.iter().map(|&c| abs.dec(i).index(c).clone()).collect()
}

/// Pruned layers and path enumeration against exhaustive enumeration, for one agent.
pub fn check_agent(
    abs: &Abstraction,
    i: AgentId,
    nbrs: &[Vec<CellId>],
    goals: &[Goal],
    m: usize,
) -> usize {
    let compiled = compile_goals(goals, abs.dec(i), abs.params.dt).unwrap();
    let search = forward_reach(abs, i, abs.initial_cell(i).unwrap(), nbrs, &compiled, m).unwrap();
    let paths = all_paths(abs, i, nbrs, m);
    let good: Vec<&Vec<CellId>> = paths
        .iter()
        .filter(|p| satisfies(abs, i, p, goals))
        .collect();
    for k in 0..=m {
        let expect: BTreeSet<CellId> = good.iter().map(|p| p[k]).collect();
        let got: BTreeSet<CellId> = search.pruned_at(k).into_iter().collect();
        assert_eq!(got, expect, "agent {i}, step {k}");
        let reach: BTreeSet<CellId> = search.cells_at(k).into_iter().collect();
        assert!(expect.is_subset(&reach));
    }
    assert_eq!(search.satisfiable(), !good.is_empty());
    let mut expect: Vec<Vec<CellIndex>> = good.iter().map(|p| lattice(abs, i, p)).collect();
    expect.sort();
    expect.dedup();
    let listed: Vec<Vec<CellIndex>> = search.paths(abs).map(|p| lattice(abs, i, &p)).collect();
    assert_eq!(
        listed, expect,
        "agent {i}: satisfying paths in lexicographic order"
    );
    for p in &good {
        let steps = goal_steps(p, &compiled).expect("satisfying path has goal steps");
        let mut prev = 0;
        for (g, &k) in steps.iter().enumerate() {
            assert!(k >= prev && inside(abs, i, p[k], &goals[g].region));
            prev = k;
        }
    }
    good.len()
}

/// Random instances with at most `max_cells` cells per agent and at most four
/// steps, each checked by `check_agent`. Returns the number of satisfiable ones.
pub fn equivalence_trials<R: Rng>(rng: &mut R, instances: usize, max_cells: usize) -> usize {
    let mut satisfiable = 0;
    let mut done = 0;
    while done < instances {
        let m = rng.gen_range(1..=4);
        let agents = rng.gen_range(1..=2);
        let abs = super::coarse_toy(rng, agents, 3.0);
        if abs.decs.iter().any(|d| d.len() > max_cells) {
            continue;
        }
        done += 1;
        let root = AgentId(1);
        let parent = all_paths(&abs, root, &vec![Vec::new(); m], m);
        let goals = random_goals(&abs, root, m, &parent, rng);
        if check_agent(&abs, root, &vec![Vec::new(); m], &goals, m) > 0 {
            satisfiable += 1;
        }
        if abs.len() == 2 && !parent.is_empty() {
            let fixed = &parent[rng.gen_range(0..parent.len())];
            let nbrs: Vec<Vec<CellId>> = fixed[..m].iter().map(|&c| vec![c]).collect();
            let child = all_paths(&abs, AgentId(2), &nbrs, m);
            let goals = random_goals(&abs, AgentId(2), m, &child, rng);
            if check_agent(&abs, AgentId(2), &nbrs, &goals, m) > 0 {
                satisfiable += 1;
            }
        }
    }
    satisfiable
}
