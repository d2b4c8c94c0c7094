//! Uniform grid decompositions of the reachable balls.
//!
//! Cells are half-open lattice boxes `anchor + side * [k, k + 1)` clipped to the
//! region ball, so they partition the region. The reference point of a cell is
//! the center of its full box.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::linalg;
use crate::model::AgentId;
use crate::reach::{Ball, ReachFamily};
use crate::{Error, Result};

/// Dense per-agent cell identifier (position in the sorted index set).
pub type CellId = u32;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CellIndex(pub Vec<i64>);

impl fmt::Display for CellIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (k, v) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, ")")
    }
}

/// Cells of an agent and of its neighbors, in neighbor order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellConfiguration(pub Vec<CellIndex>);

impl fmt::Display for CellConfiguration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (k, c) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, " ")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, "]")
    }
}

/// `pr_i`: the entries of a full cell tuple that belong to `agent` and its neighbors.
pub fn pr<T: Clone>(all: &[T], agent: AgentId, neighbors: &[AgentId]) -> Vec<T> {
    std::iter::once(agent)
        .chain(neighbors.iter().copied())
        .map(|a| all[a.index()].clone())
        .collect()
}

/// Axis-aligned box `[lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Aabb {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Aabb {
    pub fn center(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| 0.5 * (l + h))
            .collect()
    }

    /// Membership in the half-open box `[lo, hi)`.
    pub fn contains_half_open(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (l, h))| *l <= *v && *v < *h)
    }

    /// Smallest distance from `x` to a face; negative outside the closed box.
    pub fn face_margin(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(v, (l, h))| (v - l).min(h - v))
            .fold(f64::INFINITY, f64::min)
    }

    /// Distance from `c` to the corner of the box farthest from it.
    pub fn farthest_corner_distance(&self, c: &[f64]) -> f64 {
        c.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(v, (l, h))| {
                let d = (v - l).abs().max((h - v).abs());
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// Whether the half-open box meets the closed ball.
pub fn half_open_box_meets_ball(b: &Aabb, ball: &Ball) -> bool {
    let p = linalg::clamp_to_box(&ball.center, &b.lo, &b.hi);
    let d = linalg::dist(&p, &ball.center);
    if d < ball.radius {
        // Some point slightly inside from `p` is still in the ball, unless the box is flat.
        return b.lo.iter().zip(&b.hi).all(|(l, h)| l < h) || b.contains_half_open(&p);
    }
    d == ball.radius && b.contains_half_open(&p)
}

/// A point of the half-open box inside the ball, chosen to maximize the smaller
/// of its distance to the box faces and to the sphere.
///
/// The search runs over the segment from the box point closest to the ball
/// center to the box center, where that margin is concave.
pub fn deep_point(b: &Aabb, ball: &Ball) -> Option<(Vec<f64>, f64)> {
    let center = b.center();
    let margin = |x: &[f64]| {
        b.face_margin(x)
            .min(ball.radius - linalg::dist(x, &ball.center))
    };
    let m_center = margin(&center);
    let p = linalg::clamp_to_box(&ball.center, &b.lo, &b.hi);
    let at = |s: f64| -> Vec<f64> {
        p.iter()
            .zip(&center)
            .map(|(a, c)| a + s * (c - a))
            .collect()
    };
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = margin(&at(x1));
    let mut f2 = margin(&at(x2));
    for _ in 0..80 {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = margin(&at(x2));
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = margin(&at(x1));
        }
    }
    let s = 0.5 * (lo + hi);
    let mut best = (at(s), margin(&at(s)));
    if m_center >= best.1 {
        best = (center, m_center);
    }
    if best.1 > 0.0 && b.contains_half_open(&best.0) {
        return Some(best);
    }
    // Tangential contact: the closest point itself may be the only witness.
    if linalg::dist(&p, &ball.center) <= ball.radius && b.contains_half_open(&p) {
        return Some((p, 0.0));
    }
    None
}

/// Euclidean projection of `y` onto `[lo, hi] ∩ B(c, r)`, or `None` when empty.
///
/// The minimizer is `clamp((1 - t) y + t c)` for the smallest `t` in `[0, 1]`
/// that lands in the ball; `t` is found by bisection.
fn project_box_ball(y: &[f64], lo: &[f64], hi: &[f64], c: &[f64], r: f64) -> Option<Vec<f64>> {
    let at = |t: f64| -> Vec<f64> {
        let z: Vec<f64> = y
            .iter()
            .zip(c)
            .map(|(a, b)| (1.0 - t) * a + t * b)
            .collect();
        linalg::clamp_to_box(&z, lo, hi)
    };
    let far = at(1.0);
    if linalg::dist(&far, c) > r {
        return None;
    }
    let near = at(0.0);
    if linalg::dist(&near, c) <= r {
        return Some(near);
    }
    let (mut a, mut b) = (0.0f64, 1.0f64);
    let mut best = far;
    for _ in 0..100 {
        let m = 0.5 * (a + b);
        let x = at(m);
        if linalg::dist(&x, c) <= r {
            b = m;
            best = x;
        } else {
            a = m;
        }
    }
    Some(best)
}

/// A point of `[lo + s, hi - s] ∩ B(c1, r1 - s) ∩ B(c2, r2 - s)`, if nonempty.
fn shrunk_witness(b: &Aabb, first: &Ball, second: &Ball, s: f64) -> Option<Vec<f64>> {
    let lo: Vec<f64> = b.lo.iter().map(|v| v + s).collect();
    let hi: Vec<f64> = b.hi.iter().map(|v| v - s).collect();
    let (r1, r2) = (first.radius - s, second.radius - s);
    if r1 < 0.0 || r2 < 0.0 || lo.iter().zip(&hi).any(|(l, h)| l > h) {
        return None;
    }
    let x = project_box_ball(&second.center, &lo, &hi, &first.center, r1)?;
    (linalg::dist(&x, &second.center) <= r2).then_some(x)
}

/// A point of the half-open box lying in both balls, if one exists.
///
/// Maximizes the smallest distance to the box faces and both spheres by
/// bisection; that margin is concave, so its superlevel sets shrink monotonically.
pub fn box_two_ball_witness(b: &Aabb, first: &Ball, second: &Ball) -> Option<Vec<f64>> {
    let closed = shrunk_witness(b, first, second, 0.0)?;
    let half =
        b.lo.iter()
            .zip(&b.hi)
            .map(|(l, h)| 0.5 * (h - l))
            .fold(f64::INFINITY, f64::min);
    let (mut lo, mut hi) = (0.0f64, half.min(first.radius).min(second.radius));
    let mut best = None;
    for _ in 0..80 {
        let m = 0.5 * (lo + hi);
        match shrunk_witness(b, first, second, m) {
            Some(x) => {
                lo = m;
                best = Some(x);
            }
            None => hi = m,
        }
    }
    let inside =
        |x: &Vec<f64>| b.contains_half_open(x) && first.contains(x, 0.0) && second.contains(x, 0.0);
    best.filter(inside)
        .or_else(|| inside(&closed).then_some(closed))
}

#[derive(Debug, Clone)]
pub struct CellDecomposition {
    pub agent: AgentId,
    pub anchor: Vec<f64>,
    pub side: f64,
    pub d_max: f64,
    pub region: Ball,
    pub inner: Ball,
    /// Valid lattice indices, sorted lexicographically; position is the [`CellId`].
    cells: Vec<CellIndex>,
    lookup: HashMap<CellIndex, CellId>,
    initiating: Vec<bool>,
}

impl CellDecomposition {
    pub fn dim(&self) -> usize {
        self.anchor.len()
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cells(&self) -> &[CellIndex] {
        &self.cells
    }

    pub fn index(&self, id: CellId) -> &CellIndex {
        &self.cells[id as usize]
    }

    pub fn id(&self, l: &CellIndex) -> Option<CellId> {
        self.lookup.get(l).copied()
    }

    fn require(&self, l: &CellIndex) -> Result<CellId> {
        self.id(l).ok_or_else(|| Error::OutOfRange {
            what: "cell index",
            detail: format!("{l} is not a cell of agent {}", self.agent),
        })
    }

    /// Lower corner of lattice box `k` along axis `d`.
    fn corner(&self, d: usize, k: i64) -> f64 {
        self.anchor[d] + self.side * k as f64
    }

    pub fn cell_box(&self, l: &CellIndex) -> Aabb {
        let lo =
            l.0.iter()
                .enumerate()
                .map(|(d, &k)| self.corner(d, k))
                .collect();
        let hi =
            l.0.iter()
                .enumerate()
                .map(|(d, &k)| self.corner(d, k + 1))
                .collect();
        Aabb { lo, hi }
    }

    /// Lattice box holding `x` under the half-open convention, whether or not it is a cell.
    pub fn lattice_of(&self, x: &[f64]) -> CellIndex {
        CellIndex(
            x.iter()
                .enumerate()
                .map(|(d, &v)| {
                    let mut k = ((v - self.anchor[d]) / self.side).floor() as i64;
                    // Agree exactly with the box bounds used elsewhere.
                    while v < self.corner(d, k) {
                        k -= 1;
                    }
                    while v >= self.corner(d, k + 1) {
                        k += 1;
                    }
                    k
                })
                .collect(),
        )
    }

    pub fn locate(&self, x: &[f64]) -> Result<CellIndex> {
        if !self.region.contains(x, 0.0) {
            return Err(Error::OutOfRange {
                what: "point",
                detail: format!("{x:?} lies outside the region of agent {}", self.agent),
            });
        }
        let l = self.lattice_of(x);
        self.require(&l)?;
        Ok(l)
    }

    pub fn locate_id(&self, x: &[f64]) -> Result<CellId> {
        let l = self.locate(x)?;
        self.require(&l)
    }

    pub fn reference_point(&self, l: &CellIndex) -> Result<Vec<f64>> {
        self.require(l)?;
        Ok(self.center_of(l))
    }

    pub(crate) fn center_of(&self, l: &CellIndex) -> Vec<f64> {
        l.0.iter()
            .enumerate()
            .map(|(d, &k)| self.anchor[d] + self.side * (k as f64 + 0.5))
            .collect()
    }

    pub fn reference_point_of(&self, id: CellId) -> Vec<f64> {
        self.center_of(&self.cells[id as usize])
    }

    pub fn initiating(&self, l: &CellIndex) -> Result<bool> {
        Ok(self.initiating[self.require(l)? as usize])
    }

    pub fn is_initiating(&self, id: CellId) -> bool {
        self.initiating[id as usize]
    }

    pub fn initiating_count(&self) -> usize {
        self.initiating.iter().filter(|b| **b).count()
    }

    fn lattice_range(&self, ball: &Ball, d: usize) -> (i64, i64) {
        let lo = ((ball.center[d] - ball.radius - self.anchor[d]) / self.side).floor() as i64 - 1;
        let hi = ((ball.center[d] + ball.radius - self.anchor[d]) / self.side).floor() as i64 + 1;
        (lo, hi)
    }

    /// Lattice indices whose boxes may meet `ball`, in lexicographic order.
    fn candidates(&self, ball: &Ball) -> Vec<CellIndex> {
        let n = self.dim();
        let ranges: Vec<(i64, i64)> = (0..n).map(|d| self.lattice_range(ball, d)).collect();
        let mut out = Vec::new();
        let mut cur: Vec<i64> = ranges.iter().map(|r| r.0).collect();
        loop {
            out.push(CellIndex(cur.clone()));
            let mut d = n;
            loop {
                if d == 0 {
                    return out;
                }
                d -= 1;
                if cur[d] < ranges[d].1 {
                    cur[d] += 1;
                    for e in d + 1..n {
                        cur[e] = ranges[e].0;
                    }
                    break;
                }
            }
        }
    }

    /// Cells whose clipped extent meets `ball`, each paired with a witness point.
    pub fn cells_intersecting_ball_with_witness(&self, ball: &Ball) -> Vec<(CellId, Vec<f64>)> {
        if linalg::dist(&ball.center, &self.region.center) > ball.radius + self.region.radius {
            return Vec::new();
        }
        let inside_region = self.region.excess_over(ball) <= 0.0;
        let mut out = Vec::new();
        for l in self.candidates(ball) {
            let Some(id) = self.id(&l) else { continue };
            let b = self.cell_box(&l);
            if !half_open_box_meets_ball(&b, ball) {
                continue;
            }
            let witness = if inside_region {
                deep_point(&b, ball).map(|(p, _)| p)
            } else {
                box_two_ball_witness(&b, ball, &self.region)
            };
            if let Some(p) = witness {
                out.push((id, p));
            }
        }
        out
    }

    pub fn cells_intersecting_ball(&self, ball: &Ball) -> Vec<CellIndex> {
        self.cells_intersecting_ball_with_witness(ball)
            .into_iter()
            .map(|(id, _)| self.cells[id as usize].clone())
            .collect()
    }
}

pub fn build_decomposition(family: &ReachFamily, d_max: f64, dt: f64) -> Result<CellDecomposition> {
    if !(d_max > 0.0 && d_max.is_finite()) {
        return Err(Error::OutOfRange {
            what: "d_max",
            detail: format!("cell diameter must be positive, got {d_max}"),
        });
    }
    let region = family.region();
    let inner = family.inner_region(dt)?;
    let n = region.dim();
    let side = d_max / (n as f64).sqrt();
    let mut dec = CellDecomposition {
        agent: family.agent,
        anchor: family.base.center.clone(),
        side,
        d_max,
        region: region.clone(),
        inner,
        cells: Vec::new(),
        lookup: HashMap::new(),
        initiating: Vec::new(),
    };
    let cells: Vec<CellIndex> = dec
        .candidates(&region)
        .into_iter()
        .filter(|l| half_open_box_meets_ball(&dec.cell_box(l), &region))
        .collect();
    dec.initiating = cells
        .iter()
        .map(|l| dec.cell_box(l).farthest_corner_distance(&dec.inner.center) <= dec.inner.radius)
        .collect();
    dec.lookup = cells
        .iter()
        .enumerate()
        .map(|(k, l)| (l.clone(), k as CellId))
        .collect();
    dec.cells = cells;
    Ok(dec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn family(center: Vec<f64>, region_radius: f64) -> ReachFamily {
        // tau = 0.5, c = 1: region radius = base + 0.5.
        ReachFamily {
            agent: AgentId(1),
            base: Ball::new(center, region_radius - 0.5),
            c_rate: 1.0,
            tau: 0.5,
            horizon: 1.0,
        }
    }

    #[test]
    fn unit_disk_unit_cells() {
        let dec = build_decomposition(&family(vec![0.0, 0.0], 1.0), 2f64.sqrt(), 0.25).unwrap();
        assert!((dec.side - 1.0).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        // Brute-force sampling oracle over the candidate boxes.
        for l in dec.candidates(&dec.region) {
            let b = dec.cell_box(&l);
            let hit = (0..10_000).any(|_| {
                let x: Vec<f64> = (0..2).map(|d| rng.gen_range(b.lo[d]..b.hi[d])).collect();
                dec.region.contains(&x, 0.0)
            });
            if hit {
                assert!(dec.id(&l).is_some(), "{l}");
            }
        }
        // Four quadrant cells plus two tangent singletons, {(0, 1)} and {(1, 0)},
        // whose touching point lies on a closed face of the half-open box.
        let mut ids: Vec<String> = dec.cells().iter().map(|l| l.to_string()).collect();
        ids.sort();
        assert_eq!(
            ids,
            ["(-1,-1)", "(-1,0)", "(0,-1)", "(0,0)", "(0,1)", "(1,0)"]
        );
    }

    #[test]
    fn degenerate_region_single_cell() {
        let f = ReachFamily {
            agent: AgentId(1),
            base: Ball::new(vec![0.3, 0.7], 0.0),
            c_rate: 0.0,
            tau: 0.5,
            horizon: 1.0,
        };
        let dec = build_decomposition(&f, 1.0, 0.25).unwrap();
        assert_eq!(dec.cells(), &[CellIndex(vec![0, 0])]);
        assert!(build_decomposition(&f, 0.0, 0.25).is_err());
    }

    #[test]
    fn partition_and_reference_bound() {
        let dec = build_decomposition(&family(vec![0.2, -0.4], 3.0), 0.7, 0.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100_000 {
            let x = dec.region.sample(&mut rng);
            let l = dec.locate(&x).unwrap();
            assert!(dec.cell_box(&l).contains_half_open(&x));
            let xg = dec.reference_point(&l).unwrap();
            assert!(linalg::dist(&xg, &x) <= dec.d_max / 2.0 + 1e-12);
        }
    }

    #[test]
    fn locate_conventions() {
        let dec = build_decomposition(&family(vec![0.0, 0.0], 3.0), 2f64.sqrt(), 0.3).unwrap();
        assert_eq!(dec.locate(&[0.0, 0.0]).unwrap(), CellIndex(vec![0, 0]));
        assert_eq!(dec.locate(&[1.0, 0.5]).unwrap(), CellIndex(vec![1, 0]));
        assert_eq!(dec.locate(&[-1.0, -0.5]).unwrap(), CellIndex(vec![-1, -1]));
        assert!(dec.locate(&[5.0, 0.0]).is_err());
        assert_eq!(
            dec.reference_point(&CellIndex(vec![0, 0])).unwrap(),
            vec![0.5, 0.5]
        );
        assert!(dec.reference_point(&CellIndex(vec![9, 9])).is_err());
    }

    #[test]
    fn initiating_is_sound() {
        let dec = build_decomposition(&family(vec![0.0, 0.0], 3.0), 0.5, 0.4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        assert!(dec.initiating(&CellIndex(vec![0, 0])).unwrap());
        let mut some_false = false;
        for l in dec.cells() {
            let b = dec.cell_box(l);
            let init = dec.initiating(l).unwrap();
            some_false |= !init;
            let outside = (0..1000).any(|_| {
                let x: Vec<f64> = (0..2).map(|d| rng.gen_range(b.lo[d]..b.hi[d])).collect();
                !dec.inner.contains(&x, 0.0)
            });
            assert!(!(init && outside), "{l}");
        }
        assert!(some_false);
    }

    #[test]
    fn ball_queries_match_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for trial in 0..60 {
            let r = rng.gen_range(1.0..4.0);
            let center = vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let dec = build_decomposition(&family(center.clone(), r), rng.gen_range(0.3..1.2), 0.2)
                .unwrap();
            let q = Ball::new(
                vec![
                    center[0] + rng.gen_range(-r..r),
                    center[1] + rng.gen_range(-r..r),
                ],
                rng.gen_range(0.0..1.5),
            );
            let found = dec.cells_intersecting_ball_with_witness(&q);
            for (id, p) in &found {
                let l = dec.index(*id);
                assert!(dec.cell_box(l).contains_half_open(p), "trial {trial}");
                assert!(
                    q.contains(p, 0.0) && dec.region.contains(p, 0.0),
                    "trial {trial} {l} {p:?} {q:?} {:?} {:?}",
                    dec.cell_box(l),
                    dec.region
                );
            }
            let ids: std::collections::HashSet<CellId> = found.iter().map(|(i, _)| *i).collect();
            for _ in 0..10_000 {
                let x = q.sample(&mut rng);
                if dec.region.contains(&x, 0.0) {
                    assert!(
                        ids.contains(&dec.locate_id(&x).unwrap()),
                        "trial {trial} x={x:?} cell={} q={q:?} region={:?}",
                        dec.locate(&x).unwrap(),
                        dec.region
                    );
                }
            }
        }
    }

    #[test]
    fn ball_query_special_cases() {
        let dec = build_decomposition(&family(vec![0.0, 0.0], 5.0), 2f64.sqrt(), 0.3).unwrap();
        let point = Ball::new(vec![0.3, 0.6], 0.0);
        assert_eq!(
            dec.cells_intersecting_ball(&point),
            vec![CellIndex(vec![0, 0])]
        );
        let around = Ball::new(vec![0.5, 0.5], 1.2);
        assert_eq!(dec.cells_intersecting_ball(&around).len(), 9);
        let far = Ball::new(vec![50.0, 0.0], 1.0);
        assert!(dec.cells_intersecting_ball(&far).is_empty());
    }

    #[test]
    fn projection_follows_neighbor_order() {
        let all: Vec<u32> = vec![10, 20, 30, 40, 50];
        assert_eq!(pr(&all, AgentId(2), &[AgentId(3)]), vec![20, 30]);
        assert_eq!(
            pr(&all, AgentId(1), &[AgentId(5), AgentId(2)]),
            vec![10, 50, 20]
        );
        assert_eq!(pr(&[7u32], AgentId(1), &[]), vec![7]);
    }
}
