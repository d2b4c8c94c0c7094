//! Bundled and randomly generated scenarios.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::abstraction::Abstraction;
use crate::grid::CellId;
use crate::model::file::{
    AgentDocument, AgentSpecDocument, DynamicsDocument, GoalDocument, ModelDocument,
};

const FIVE_AGENTS: &str = include_str!("../models/five_agents.json");

/// Five agents around a hill: a ground vehicle (agent 3) leading two pairs of drones.
pub fn five_agent_document() -> &'static str {
    FIVE_AGENTS
}

/// Shape of a random toy network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyShape {
    pub agents: usize,
    pub steps: usize,
    pub horizon: f64,
    /// Chain the agents by consensus coupling instead of leaving them independent.
    pub coupled: bool,
}

/// A small planar network with declared bounds that are valid over its regions.
///
/// Agent 1 drifts with a constant field or not at all; each later agent follows
/// its predecessor by `f = w (x_prev - x)` when coupled.
pub fn random_toy<R: Rng + ?Sized>(rng: &mut R, shape: ToyShape) -> ModelDocument {
    let t = shape.horizon;
    let mut agents: Vec<AgentDocument> = Vec::with_capacity(shape.agents);
    let mut region: Vec<f64> = Vec::new();
    for k in 0..shape.agents {
        let v_max = rng.gen_range(0.5..1.5);
        let x0 = vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let lambda = rng.gen_range(0.1..0.5);
        let (dynamics, neighbors, m, l1, l2, mu) = if k > 0 && shape.coupled {
            let w: f64 = rng.gen_range(0.1..0.4) / t;
            let prev = &agents[k - 1];
            let gap = ((x0[0] - prev.x0[0]).powi(2) + (x0[1] - prev.x0[1]).powi(2)).sqrt();
            // |f| <= w (gap + R_i + R_prev) with R_i = (M + v) t.
            let m = 1.01 * w * (gap + v_max * t + region[k - 1]) / (1.0 - w * t);
            (
                DynamicsDocument::LinearConsensus {
                    weights: Some(vec![w]),
                },
                vec![k],
                m,
                w,
                w,
                Some(vec![1.0]),
            )
        } else if rng.gen_bool(0.5) {
            let speed = rng.gen_range(0.0..0.5);
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            (
                DynamicsDocument::Affine {
                    own: vec![vec![0.0; 2]; 2],
                    neighbors: Vec::new(),
                    offset: Some(vec![speed * angle.cos(), speed * angle.sin()]),
                },
                Vec::new(),
                speed,
                0.0,
                0.0,
                None,
            )
        } else {
            (DynamicsDocument::Zero, Vec::new(), 0.0, 0.0, 0.0, None)
        };
        region.push((m + v_max) * t);
        agents.push(AgentDocument {
            id: k + 1,
            dim: 2,
            neighbors,
            dynamics,
            v_max,
            m,
            l1,
            l2,
            x0,
            reach_radius: None,
            lambda: Some(lambda),
            mu,
        });
    }
    ModelDocument {
        horizon: t,
        tau: None,
        steps: Some(shape.steps),
        agents,
        spec: Vec::new(),
    }
}

/// A random walk through the product abstraction from the initial state, up to
/// `steps` transitions; stops early at non-initiating states.
pub fn random_walk<R: Rng + ?Sized>(
    abs: &Abstraction,
    steps: usize,
    rng: &mut R,
) -> crate::Result<Vec<Vec<CellId>>> {
    let mut walk = vec![abs.initial_state()?];
    while walk.len() <= steps {
        let cur = walk.last().unwrap();
        if !abs.product_initiating(cur) {
            break;
        }
        let mut next = Vec::with_capacity(cur.len());
        for i in abs.model.ids() {
            let post = abs.post(i, &abs.configuration(i, cur))?;
            next.push(*post.successors.choose(rng).unwrap());
        }
        walk.push(next);
    }
    Ok(walk)
}

/// Goals that the given walk meets: one or two boxes per agent around cells the
/// walk visits, with windows containing the visit steps. Windows are absolute or
/// relative at random; every deadline fits the horizon.
pub fn walk_goals<R: Rng + ?Sized>(
    abs: &Abstraction,
    walk: &[Vec<CellId>],
    rng: &mut R,
) -> Vec<AgentSpecDocument> {
    let dt = abs.params.dt;
    let last = walk.len() - 1;
    let ell = abs.params.steps;
    let mut out = Vec::new();
    for i in abs.model.ids() {
        let dec = abs.dec(i);
        let count = if last >= 2 { rng.gen_range(1..=2) } else { 1 };
        let first = last.min(1);
        let mut ks: Vec<usize> = (0..count).map(|_| rng.gen_range(first..=last)).collect();
        ks.sort_unstable();
        let relative = rng.gen_bool(0.5);
        let mut goals = Vec::new();
        let mut prev = 0usize;
        // Relative deadlines add up to the last visit step plus every extension.
        let mut slack = ell.saturating_sub(ks[ks.len() - 1]);
        for &k in &ks {
            let b = dec.cell_box(dec.index(walk[k][i.index()]));
            let pad = rng.gen_range(0.0..1.5) * dec.side;
            let lo: Vec<f64> = b.lo.iter().map(|v| v - pad).collect();
            let hi: Vec<f64> = b.hi.iter().map(|v| v + pad).collect();
            let offset = if relative { k - prev } else { k };
            let before = rng.gen_range(0..=offset.min(2));
            let room = if relative {
                slack
            } else {
                ell.saturating_sub(k)
            };
            let after = rng.gen_range(0..=room.min(1));
            if relative {
                slack -= after;
            }
            let a = ((offset - before) as f64 * dt - 0.5 * dt).max(0.0);
            let hi_t = (offset + after) as f64 * dt;
            goals.push(GoalDocument {
                region: [lo, hi],
                window: [a, hi_t],
                relative,
            });
            prev = k;
        }
        out.push(AgentSpecDocument { agent: i.0, goals });
    }
    out
}
