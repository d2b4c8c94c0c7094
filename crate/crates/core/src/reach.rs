//! Ball overapproximations of reachable sets and their linear growth law.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::linalg;
use crate::model::{AgentId, NetworkModel};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: Vec<f64>, radius: f64) -> Self {
        debug_assert!(radius >= 0.0);
        Ball { center, radius }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn contains(&self, x: &[f64], slack: f64) -> bool {
        linalg::dist(x, &self.center) <= self.radius + slack
    }

    /// How far `other` sticks out of `self`; nonpositive when contained.
    pub fn excess_over(&self, other: &Ball) -> f64 {
        linalg::dist(&self.center, &other.center) + other.radius - self.radius
    }

    /// Uniform sample from the closed ball.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let n = self.dim();
        let mut dir: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let len = linalg::norm(&dir);
        if len == 0.0 {
            return self.center.clone();
        }
        let rho = self.radius * rng.gen::<f64>().powf(1.0 / n as f64);
        for (d, c) in dir.iter_mut().zip(&self.center) {
            *d = c + rho * *d / len;
        }
        dir
    }
}

/// `a + B(r)`, exact for balls.
pub fn minkowski_ball_sum(a: &Ball, r: f64) -> Ball {
    Ball::new(a.center.clone(), a.radius + r)
}

/// `R_i([0, t])` for `t` in `[T - tau, T]`: the base ball grown at rate `c_rate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReachFamily {
    pub agent: AgentId,
    /// `R_i([0, T - tau])`.
    pub base: Ball,
    pub c_rate: f64,
    pub tau: f64,
    pub horizon: f64,
}

impl ReachFamily {
    pub fn new(model: &NetworkModel, id: AgentId) -> Self {
        let k = id.index();
        ReachFamily {
            agent: id,
            base: Ball::new(model.initial_states[k].clone(), model.reach_radius[k]),
            c_rate: model.agent(id).c_rate(),
            tau: model.tau,
            horizon: model.horizon,
        }
    }

    pub fn all(model: &NetworkModel) -> Vec<ReachFamily> {
        model.ids().map(|id| ReachFamily::new(model, id)).collect()
    }

    /// Radius increment `c_i(sigma) = (M + v_max) sigma`.
    pub fn c_i(&self, sigma: f64) -> Result<f64> {
        if !(sigma >= 0.0) {
            return Err(Error::OutOfRange {
                what: "sigma",
                detail: format!("duration must be nonnegative, got {sigma}"),
            });
        }
        Ok(self.c_rate * sigma)
    }

    /// `R_i([0, T])`.
    pub fn region(&self) -> Ball {
        minkowski_ball_sum(&self.base, self.c_rate * self.tau)
    }

    /// `R_i([0, t])`, written as the full region shrunk by `c_i(T - t)` so that
    /// adding `c_i(T - t)` back recovers the region radius to within one ulp.
    pub fn reach_at(&self, t: f64) -> Result<Ball> {
        let lo = self.horizon - self.tau;
        if !(t >= lo && t <= self.horizon) {
            return Err(Error::OutOfRange {
                what: "t",
                detail: format!("{t} not in [T - tau, T] = [{lo}, {}]", self.horizon),
            });
        }
        let full = self.region();
        let shrink = self.c_i(self.horizon - t)?;
        Ok(Ball::new(full.center, full.radius - shrink))
    }

    /// `R_i([0, T - dt])`, the region from which transitions may start.
    pub fn inner_region(&self, dt: f64) -> Result<Ball> {
        if !(dt > 0.0 && dt < self.tau) {
            return Err(Error::OutOfRange {
                what: "dt",
                detail: format!("{dt} not in (0, tau) = (0, {})", self.tau),
            });
        }
        self.reach_at(self.horizon - dt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn agent3() -> ReachFamily {
        // Ground vehicle of the five-agent network: M = v_max = 2.5, T = 2, tau = 1/3.
        let tau = 1.0 / 3.0;
        ReachFamily {
            agent: AgentId(3),
            base: Ball::new(vec![1.0, 0.5], 5.0 * (2.0 - tau)),
            c_rate: 5.0,
            tau,
            horizon: 2.0,
        }
    }

    #[test]
    fn growth_increment() {
        let f = agent3();
        assert_eq!(f.c_i(1.0).unwrap(), 5.0);
        assert_eq!(f.c_i(0.0).unwrap(), 0.0);
        assert!(f.c_i(-0.1).is_err());
        let still = ReachFamily {
            c_rate: 0.0,
            ..agent3()
        };
        assert_eq!(still.c_i(7.0).unwrap(), 0.0);
    }

    #[test]
    fn agent3_region_and_inner() {
        let f = agent3();
        assert!((f.reach_at(2.0).unwrap().radius - 10.0).abs() < 1e-14);
        let inner = f.inner_region(1.0 / 6.0).unwrap();
        assert!((inner.radius - 55.0 / 6.0).abs() < 1e-14);
        assert!((f.reach_at(2.0 - f.tau).unwrap().radius - f.base.radius).abs() < 1e-14);
        assert!(f.reach_at(1.0).is_err());
        assert!(f.inner_region(0.0).is_err());
        assert!(f.inner_region(f.tau).is_err());
    }

    #[test]
    fn sampled_points_lie_in_ball() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let b = Ball::new(vec![1.0, -2.0, 0.5], 3.0);
        for _ in 0..1000 {
            assert!(b.contains(&b.sample(&mut rng), 1e-12));
        }
    }

    fn ulps(a: f64, b: f64) -> u64 {
        (a.to_bits() as i64 - b.to_bits() as i64).unsigned_abs()
    }

    proptest! {
        #[test]
        fn radius_identity(base in 0.01f64..100.0, c in 0.0f64..50.0, tau_frac in 0.01f64..0.99,
                           horizon in 0.1f64..10.0, s in 0.0f64..=1.0) {
            let tau = tau_frac * horizon;
            let f = ReachFamily { agent: AgentId(1), base: Ball::new(vec![0.0], base), c_rate: c, tau, horizon };
            let t = (horizon - tau + s * tau).min(horizon);
            let lhs = f.reach_at(t).unwrap().radius + f.c_i(horizon - t).unwrap();
            prop_assert!(ulps(lhs, f.region().radius) <= 1);
        }

        #[test]
        fn monotone_in_time(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let f = agent3();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let t0 = 2.0 - f.tau + lo * f.tau;
            let t1 = 2.0 - f.tau + hi * f.tau;
            prop_assert!(f.reach_at(t0).unwrap().radius <= f.reach_at(t1).unwrap().radius);
        }

        #[test]
        fn minkowski_associative(k0 in 0u32..1 << 20, k1 in 0u32..1 << 20, k2 in 0u32..1 << 20) {
            // Dyadic radii keep every sum exactly representable.
            let (r0, r1, r2) = (k0 as f64 / 1024.0, k1 as f64 / 1024.0, k2 as f64 / 1024.0);
            let b = Ball::new(vec![1.0, 2.0], r0);
            let left = minkowski_ball_sum(&minkowski_ball_sum(&b, r1), r2);
            let right = minkowski_ball_sum(&b, r1 + r2);
            prop_assert_eq!(left, right);
        }
    }

    #[test]
    fn minkowski_identities() {
        let b = Ball::new(vec![0.0, 0.0], 1.0);
        assert_eq!(minkowski_ball_sum(&b, 1.0).radius, 2.0);
        let p = Ball::new(vec![3.0, 4.0], 0.0);
        assert_eq!(minkowski_ball_sum(&p, 0.0), p);
    }
}
