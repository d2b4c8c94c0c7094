#![allow(dead_code)]

pub mod oracle;
pub mod trials;

use horizon_abs::abstraction::Abstraction;
use horizon_abs::controller::IntegratorSettings;
use horizon_abs::grid::CellId;
use horizon_abs::model::file::{parse_document, ModelDocument};
use horizon_abs::reach::ReachFamily;
use horizon_abs::scenarios::{self, ToyShape};
use horizon_abs::wellposed::{self, DiscretizationParams};
use horizon_abs::AgentId;
use rand::Rng;

pub fn five_agents() -> (ModelDocument, Abstraction) {
    let doc = parse_document(scenarios::five_agent_document()).unwrap();
    let net = doc.network(None).unwrap();
    let params = wellposed::synthesize(&net, &doc.design(None).unwrap()).unwrap();
    let abs = Abstraction::new(net, params, IntegratorSettings::default()).unwrap();
    (doc, abs)
}

/// A random toy discretized by the well-posedness rules.
pub fn toy<R: Rng>(rng: &mut R, shape: ToyShape) -> (ModelDocument, Abstraction) {
    try_toy(rng, shape).expect("well-posed toy")
}

/// A random toy, or `None` when its step count admits no well-posed discretization.
pub fn try_toy<R: Rng>(rng: &mut R, shape: ToyShape) -> Option<(ModelDocument, Abstraction)> {
    let doc = scenarios::random_toy(rng, shape);
    let net = doc.network(None).unwrap();
    let params = wellposed::synthesize(&net, &doc.design(None).unwrap()).ok()?;
    let abs = Abstraction::new(net, params, IntegratorSettings::default()).unwrap();
    Some((doc, abs))
}

/// A random toy on a grid of roughly `per_side` cells across each region
/// radius, ignoring the diameter bounds. Only the discrete layer is meaningful.
pub fn coarse_toy<R: Rng>(rng: &mut R, agents: usize, per_side: f64) -> Abstraction {
    let steps = 4;
    let shape = ToyShape {
        agents,
        steps,
        horizon: 1.0,
        coupled: true,
    };
    let doc = scenarios::random_toy(rng, shape);
    let net = doc.network(None).unwrap();
    let req = doc.design(None).unwrap();
    let d_max = net
        .ids()
        .map(|i| {
            let r = ReachFamily::new(&net, i).region().radius;
            std::f64::consts::SQRT_2 * r / per_side
        })
        .collect();
    let params = DiscretizationParams {
        dt: net.horizon / steps as f64,
        steps,
        lambda: req.lambda,
        mu: req.mu,
        d_max,
        margin: req.margin,
    };
    Abstraction::new(net, params, IntegratorSettings::default()).unwrap()
}

pub fn initiating_cells(abs: &Abstraction, i: AgentId) -> Vec<CellId> {
    let dec = abs.dec(i);
    (0..dec.len() as CellId)
        .filter(|&c| dec.is_initiating(c))
        .collect()
}

/// A configuration of initiating cells for agent `i` drawn uniformly.
pub fn random_configuration<R: Rng>(abs: &Abstraction, i: AgentId, rng: &mut R) -> Vec<CellId> {
    std::iter::once(i)
        .chain(abs.model.agent(i).neighbors.iter().copied())
        .map(|a| {
            let cells = initiating_cells(abs, a);
            cells[rng.gen_range(0..cells.len())]
        })
        .collect()
}

/// Uniform point of a box.
pub fn point_in_box<R: Rng>(lo: &[f64], hi: &[f64], rng: &mut R) -> Vec<f64> {
    lo.iter()
        .zip(hi)
        .map(|(l, h)| rng.gen_range(*l..*h))
        .collect()
}
