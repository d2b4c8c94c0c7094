//! Monte-Carlo checks of the declared speed and Lipschitz bounds.
//!
//! Samples are drawn from the product of the per-agent balls `R_k([0, T])` over
//! the agent and its neighbors.

use rand::Rng;
use serde::Serialize;

use super::{AgentId, NetworkModel};
use crate::linalg;
use crate::reach::ReachFamily;

/// Relative slack used when comparing sampled quantities with declared bounds.
const RATIO_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Serialize)]
pub struct AgentBoundsReport {
    pub agent: AgentId,
    pub max_speed: f64,
    pub max_l1_quotient: f64,
    pub max_l2_quotient: f64,
    /// Observed value over declared bound; infinite when a zero bound is exceeded.
    pub speed_ratio: f64,
    pub l1_ratio: f64,
    pub l2_ratio: f64,
    pub violations: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundsReport {
    pub samples: usize,
    pub agents: Vec<AgentBoundsReport>,
}

impl BoundsReport {
    pub fn has_violations(&self) -> bool {
        self.agents.iter().any(|a| !a.violations.is_empty())
    }
}

fn ratio(observed: f64, declared: f64) -> f64 {
    if observed <= 0.0 {
        0.0
    } else if declared <= 0.0 {
        f64::INFINITY
    } else {
        observed / declared
    }
}

pub fn validate_bounds<R: Rng + ?Sized>(
    model: &NetworkModel,
    samples: usize,
    rng: &mut R,
) -> BoundsReport {
    let samples = samples.max(1);
    let regions: Vec<_> = ReachFamily::all(model).iter().map(|f| f.region()).collect();
    let mut agents = Vec::with_capacity(model.len());
    for a in &model.agents {
        let own = &regions[a.id.index()];
        let draw_block = |rng: &mut R| -> Vec<f64> {
            a.neighbors
                .iter()
                .flat_map(|j| regions[j.index()].sample(rng))
                .collect()
        };
        let mut rep = AgentBoundsReport {
            agent: a.id,
            max_speed: 0.0,
            max_l1_quotient: 0.0,
            max_l2_quotient: 0.0,
            speed_ratio: 0.0,
            l1_ratio: 0.0,
            l2_ratio: 0.0,
            violations: Vec::new(),
        };
        let mut eval_failed = false;
        for s in 0..samples {
            let x = own.sample(rng);
            let xj = draw_block(rng);
            // Alternate far pairs with nearby perturbations to probe local slopes.
            let (y, yj) = if s % 2 == 0 {
                (own.sample(rng), draw_block(rng))
            } else {
                let h = 1e-4 * own.radius.max(1e-6);
                let y: Vec<f64> = x
                    .iter()
                    .map(|v| v + h * (2.0 * rng.gen::<f64>() - 1.0))
                    .collect();
                let yj: Vec<f64> = xj
                    .iter()
                    .map(|v| v + h * (2.0 * rng.gen::<f64>() - 1.0))
                    .collect();
                (y, yj)
            };
            let eval = |p: &[f64], q: &[f64]| (a.eval_f(p, q), a.eval_g(p, q));
            let (f, g_xx) = eval(&x, &xj);
            let (f, g_xx) = match (f, g_xx) {
                (Ok(f), Ok(g)) => (f, g),
                (Err(e), _) | (_, Err(e)) => {
                    if !eval_failed {
                        rep.violations.push(format!("evaluation failed: {e}"));
                        eval_failed = true;
                    }
                    continue;
                }
            };
            rep.max_speed = rep.max_speed.max(linalg::norm(&f));
            if let (Ok(g_yx), Ok(g_xy)) = (a.eval_g(&y, &xj), a.eval_g(&x, &yj)) {
                let dx = linalg::dist(&x, &y);
                if dx > 0.0 {
                    rep.max_l2_quotient = rep.max_l2_quotient.max(linalg::dist(&g_xx, &g_yx) / dx);
                }
                let dj = linalg::dist(&xj, &yj);
                if dj > 0.0 {
                    rep.max_l1_quotient = rep.max_l1_quotient.max(linalg::dist(&g_xx, &g_xy) / dj);
                }
            }
        }
        rep.speed_ratio = ratio(rep.max_speed, a.m_bound);
        rep.l1_ratio = ratio(rep.max_l1_quotient, a.l1);
        rep.l2_ratio = ratio(rep.max_l2_quotient, a.l2);
        for (name, r, obs, decl) in [
            ("M", rep.speed_ratio, rep.max_speed, a.m_bound),
            ("L1", rep.l1_ratio, rep.max_l1_quotient, a.l1),
            ("L2", rep.l2_ratio, rep.max_l2_quotient, a.l2),
        ] {
            if r > 1.0 + RATIO_SLACK {
                rep.violations.push(format!(
                    "sampled {name} estimate {obs:.6} exceeds declared {decl}"
                ));
            }
        }
        agents.push(rep);
    }
    BoundsReport { samples, agents }
}
