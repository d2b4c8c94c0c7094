//! Randomized trials shared by the integration tests and the acceptance run.

use std::collections::BTreeSet;

use horizon_abs::abstraction::Abstraction;
use horizon_abs::controller::{
    integrate_auxiliary, sample_disturbance, DisturbanceTube, Envelope, IntegratorSettings,
    TransitionControl, DEFAULT_KNOTS,
};
use horizon_abs::grid::CellId;
use horizon_abs::linalg;
use horizon_abs::planner::{self, Strategy, SynthesisOptions};
use horizon_abs::reach::{Ball, ReachFamily};
use horizon_abs::scenarios::{self, ToyShape};
use horizon_abs::sim::{self, ValidationReport};
use horizon_abs::wellposed;
use horizon_abs::AgentId;
use rand::Rng;

use super::{point_in_box, random_configuration, try_toy};

/// Integrator settings for the randomized trials. Configurations far from the
/// initial ones saturate `g` along the reference, and the default resolution
/// does not meet the audit tolerance across that kink.
pub const FINE: IntegratorSettings = IntegratorSettings {
    substeps: 2000,
    integ_tol: 1e-8,
};

/// Rebuilds the abstraction with [`FINE`] settings.
pub fn fine(abs: Abstraction) -> Abstraction {
    Abstraction::new(abs.model, abs.params, FINE).unwrap()
}

/// Worst values seen over a batch of single transitions.
#[derive(Debug, Default, Clone, Copy)]
pub struct TransitionStats {
    pub trials: usize,
    /// Largest distance between the integrated endpoint and `chi(dt) + lambda w dt`.
    pub identity_error: f64,
    /// Largest endpoint change between two initial states in the same cell.
    pub start_dependence: f64,
    /// Largest `|kbar| / v_max`.
    pub kbar_ratio: f64,
    pub saturations: usize,
    /// Largest excess of `|k1|` over its envelope.
    pub envelope_excess: f64,
}

fn random_shape<R: Rng>(rng: &mut R) -> ToyShape {
    ToyShape {
        agents: rng.gen_range(1..=3),
        steps: rng.gen_range(4..=8),
        horizon: rng.gen_range(0.5..2.0),
        coupled: rng.gen_bool(0.8),
    }
}

/// A well-posed random toy; redraws until the discretization is feasible.
pub fn random_abstraction<R: Rng>(rng: &mut R) -> Abstraction {
    loop {
        let shape = random_shape(rng);
        if let Some((_, abs)) = try_toy(rng, shape) {
            return fine(abs);
        }
    }
}

/// One transition from a random configuration, random start, random `w` and
/// random neighbor paths inside their tubes.
pub fn transition_trial<R: Rng>(abs: &Abstraction, rng: &mut R, stats: &mut TransitionStats) {
    let i = AgentId(rng.gen_range(1..=abs.len()));
    let agent = abs.model.agent(i);
    let config = random_configuration(abs, i, rng);
    let reference = abs.reference(i, &config).unwrap();
    let dt = abs.params.dt;
    let lambda = abs.params.lambda(i);
    let w = Ball::new(vec![0.0; agent.dim], agent.v_max).sample(rng);
    let dec = abs.dec(i);
    let own = dec.cell_box(dec.index(config[0]));
    let tube = DisturbanceTube {
        neighbors: agent
            .neighbors
            .iter()
            .zip(&config[1..])
            .map(|(&j, &c)| {
                let dj = abs.dec(j);
                let rate = abs.model.agent(j).c_rate();
                sample_disturbance(&dj.cell_box(dj.index(c)), rate, dt, DEFAULT_KNOTS, rng)
            })
            .collect(),
    };
    let envelope = Envelope {
        mu_norm: wellposed::mu_norm(&abs.params.mu, i),
        m_norm: wellposed::m_norm(&abs.model, i),
        d_max: abs.params.d_max(i),
    };
    let expected: Vec<f64> = reference
        .endpoint()
        .iter()
        .zip(&w)
        .map(|(c, wd)| c + lambda * wd * dt)
        .collect();
    let mut endpoints = Vec::new();
    for _ in 0..2 {
        let ctrl = TransitionControl {
            agent,
            lambda,
            x_i0: point_in_box(&own.lo, &own.hi, rng),
            w: w.clone(),
            reference: &reference,
        };
        let out = integrate_auxiliary(&ctrl, &tube, Some(envelope), &abs.settings).unwrap();
        stats.identity_error = stats
            .identity_error
            .max(linalg::dist(&out.endpoint, &expected));
        stats.kbar_ratio = stats.kbar_ratio.max(out.max_kbar / agent.v_max);
        stats.saturations += out.saturations;
        stats.envelope_excess = stats.envelope_excess.max(out.envelope_excess);
        endpoints.push(out.endpoint);
    }
    stats.start_dependence = stats
        .start_dependence
        .max(linalg::dist(&endpoints[0], &endpoints[1]));
    stats.trials += 1;
}

/// `trials` transitions spread over fresh random toys and the bundled network.
pub fn transition_trials<R: Rng>(
    rng: &mut R,
    trials: usize,
    bundled: &Abstraction,
) -> TransitionStats {
    let mut stats = TransitionStats {
        envelope_excess: f64::NEG_INFINITY,
        ..TransitionStats::default()
    };
    while stats.trials < trials {
        if stats.trials % 5 == 0 {
            for _ in 0..5.min(trials - stats.trials) {
                transition_trial(bundled, rng, &mut stats);
            }
        } else {
            let abs = random_abstraction(rng);
            for _ in 0..5.min(trials - stats.trials) {
                transition_trial(&abs, rng, &mut stats);
            }
        }
    }
    stats
}

#[derive(Debug, Default, Clone, Copy)]
pub struct PostStats {
    pub configurations: usize,
    pub computed: usize,
    /// Computed cells hit by at least one sample.
    pub sampled: usize,
}

/// Compares one Post set with `samples` uniform points of its ball: every
/// sampled cell must be computed, and every computed cell must carry a witness
/// point lying in both the ball and the cell.
pub fn post_oracle<R: Rng>(
    abs: &Abstraction,
    i: AgentId,
    config: &[CellId],
    samples: usize,
    rng: &mut R,
    stats: &mut PostStats,
) {
    let entry = abs.post(i, config).unwrap();
    let ball = entry.ball();
    let dec = abs.dec(i);
    let computed: BTreeSet<CellId> = entry.successors.iter().copied().collect();
    let mut hit = BTreeSet::new();
    for _ in 0..samples {
        let x = ball.sample(rng);
        let c = dec
            .locate_id(&x)
            .unwrap_or_else(|e| panic!("agent {i}: sample {x:?} outside the grid: {e}"));
        assert!(
            computed.contains(&c),
            "agent {i}: sampled cell {} missing from Post",
            dec.index(c)
        );
        hit.insert(c);
    }
    let witnessed: BTreeSet<CellId> = dec
        .cells_intersecting_ball_with_witness(&ball)
        .into_iter()
        .map(|(c, x)| {
            assert!(
                ball.contains(&x, 1e-12),
                "agent {i}: witness outside the ball"
            );
            assert!(
                dec.cell_box(dec.index(c)).contains_half_open(&x),
                "agent {i}: witness outside its cell"
            );
            c
        })
        .collect();
    assert_eq!(
        witnessed, computed,
        "agent {i}: witnessed cells differ from Post"
    );
    stats.configurations += 1;
    stats.computed += computed.len();
    stats.sampled += hit.len();
}

#[derive(Debug, Default, Clone, Copy)]
pub struct BlockingStats {
    pub configurations: usize,
    pub actions: usize,
    pub simulated: usize,
}

fn all_configurations(abs: &Abstraction, i: AgentId) -> Vec<Vec<CellId>> {
    let mut out = vec![Vec::new()];
    for a in std::iter::once(i).chain(abs.model.agent(i).neighbors.iter().copied()) {
        let cells = super::initiating_cells(abs, a);
        out = out
            .into_iter()
            .flat_map(|p| {
                cells.iter().map(move |&c| {
                    let mut q = p.clone();
                    q.push(c);
                    q
                })
            })
            .collect();
    }
    out
}

/// Every initiating configuration has a successor, and the action chosen for
/// each successor lands in exactly that cell. A random fraction of the actions
/// is also run through the disturbed dynamics.
pub fn exhaustive_nonblocking<R: Rng>(
    abs: &Abstraction,
    simulate: f64,
    rng: &mut R,
) -> BlockingStats {
    let mut stats = BlockingStats::default();
    for i in abs.model.ids() {
        let dec = abs.dec(i);
        let agent = abs.model.agent(i);
        for config in all_configurations(abs, i) {
            let entry = abs.post(i, &config).unwrap();
            assert!(
                !entry.successors.is_empty(),
                "agent {i}: blocking configuration"
            );
            stats.configurations += 1;
            for &target in &entry.successors {
                let action = abs.successor_action(i, &config, target).unwrap();
                assert_eq!(dec.locate_id(&action.target_point).unwrap(), target);
                stats.actions += 1;
                if !rng.gen_bool(simulate) {
                    continue;
                }
                let reference = abs.reference(i, &config).unwrap();
                let own = dec.cell_box(dec.index(config[0]));
                let tube = DisturbanceTube {
                    neighbors: agent
                        .neighbors
                        .iter()
                        .zip(&config[1..])
                        .map(|(&j, &c)| {
                            let dj = abs.dec(j);
                            let rate = abs.model.agent(j).c_rate();
                            sample_disturbance(
                                &dj.cell_box(dj.index(c)),
                                rate,
                                abs.params.dt,
                                DEFAULT_KNOTS,
                                rng,
                            )
                        })
                        .collect(),
                };
                let ctrl = TransitionControl {
                    agent,
                    lambda: abs.params.lambda(i),
                    x_i0: point_in_box(&own.lo, &own.hi, rng),
                    w: action.w.clone(),
                    reference: &reference,
                };
                let out = integrate_auxiliary(&ctrl, &tube, None, &abs.settings).unwrap();
                let landed = dec.locate_id(&out.endpoint).unwrap();
                assert_eq!(landed, target, "agent {i}: action reached another cell");
                stats.simulated += 1;
            }
        }
    }
    stats
}

/// A random toy planned against goals met by a random walk, then replayed in
/// closed loop. `None` when the planner rejects the goals.
pub fn closed_loop_trial<R: Rng>(rng: &mut R, shape: ToyShape) -> Option<ValidationReport> {
    let (mut doc, abs) = loop {
        if let Some(t) = try_toy(rng, shape) {
            break t;
        }
    };
    let walk = scenarios::random_walk(&abs, abs.params.steps, rng).unwrap();
    doc.spec = scenarios::walk_goals(&abs, &walk, rng);
    let spec = doc.timed_spec(&abs.model).unwrap();
    let (plan, _) =
        planner::synthesize(&abs, &spec, Strategy::Cascade, &SynthesisOptions::default()).ok()?;
    let schedule = planner::extract_controls(&plan, &abs).unwrap();
    let traj = sim::simulate_closed_loop(&abs, &schedule, &abs.settings).unwrap();
    Some(sim::validate_plan(&abs, &plan, &traj))
}

/// A random shape for the closed-loop trials: one to three agents, four to eight steps.
pub fn closed_loop_shape<R: Rng>(rng: &mut R) -> ToyShape {
    ToyShape {
        coupled: true,
        ..random_shape(rng)
    }
}

/// Largest violation of `radius(R([0, t])) + c (T - t) = radius(R([0, T]))` and
/// of `R([0, s]) + B(c (t - s)) = R([0, t])`, in units of the region radius.
pub fn radius_identity<R: Rng>(family: &ReachFamily, rng: &mut R) -> f64 {
    let lo = family.horizon - family.tau;
    let t = rng.gen_range(lo..=family.horizon);
    let s = rng.gen_range(lo..=t);
    let full = family.region().radius;
    let at_t = family.reach_at(t).unwrap();
    let at_s = family.reach_at(s).unwrap();
    let a = (at_t.radius + family.c_i(family.horizon - t).unwrap() - full).abs();
    let b = (at_s.radius + family.c_i(t - s).unwrap() - at_t.radius).abs();
    let centers = linalg::dist(&at_t.center, &family.base.center)
        + linalg::dist(&at_s.center, &family.base.center);
    a.max(b).max(centers) / full.max(f64::MIN_POSITIVE)
}

/// Runs the network open loop under random piecewise constant admissible inputs
/// and returns the largest distance by which a state leaves its reach ball.
pub fn open_loop_excess<R: Rng>(abs: &Abstraction, rng: &mut R) -> f64 {
    let model = &abs.model;
    let segments = 8;
    let horizon = model.horizon;
    let plan: Vec<Vec<Vec<f64>>> = model
        .ids()
        .map(|i| {
            let v = model.agent(i).v_max;
            (0..segments)
                .map(|_| {
                    let u = Ball::new(vec![0.0; model.dim()], v).sample(rng);
                    if rng.gen_bool(0.3) {
                        linalg::scale(&u, v / linalg::norm(&u).max(f64::MIN_POSITIVE))
                    } else {
                        u
                    }
                })
                .collect()
        })
        .collect();
    let input = |t: f64, i: AgentId| -> Vec<f64> {
        let s = ((t / horizon * segments as f64) as usize).min(segments - 1);
        plan[i.index()][s].clone()
    };
    let traj = sim::simulate_open_loop(model, input, horizon, 400).unwrap();
    let families = ReachFamily::all(model);
    let mut worst = f64::NEG_INFINITY;
    for (t, states) in traj.times.iter().zip(&traj.states) {
        for (fam, x) in families.iter().zip(states) {
            let t = t.min(fam.horizon);
            let ball = if t < fam.horizon - fam.tau {
                fam.base.clone()
            } else {
                fam.reach_at(t).unwrap()
            };
            worst = worst.max(linalg::dist(x, &ball.center) - ball.radius);
        }
    }
    worst
}
