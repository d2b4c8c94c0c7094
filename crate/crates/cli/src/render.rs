//! Planar SVG figure of regions, cells, goals and trajectories.

use std::collections::BTreeSet;
use std::fmt::Write;

use horizon_abs::abstraction::Abstraction;
use horizon_abs::grid::CellIndex;
use horizon_abs::planner::{AgentLog, Plan, SynthesisLog, TimedReachSpec};

use crate::artifacts::TrajectoryTable;

pub struct Scene<'a> {
    pub abs: &'a Abstraction,
    pub plan: Option<&'a Plan>,
    pub log: Option<&'a SynthesisLog>,
    pub spec: Option<&'a TimedReachSpec>,
    pub trajectory: Option<&'a TrajectoryTable>,
}

const WIDTH: f64 = 1000.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#17becf",
];

#[derive(Clone, Copy)]
struct View {
    lo: [f64; 2],
    hi: [f64; 2],
    scale: f64,
}

impl View {
    fn around(lo: [f64; 2], hi: [f64; 2]) -> View {
        let pad = 0.05 * (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-6);
        let lo = [lo[0] - pad, lo[1] - pad];
        let hi = [hi[0] + pad, hi[1] + pad];
        View {
            lo,
            hi,
            scale: WIDTH / (hi[0] - lo[0]),
        }
    }

    fn height(&self) -> f64 {
        (self.hi[1] - self.lo[1]) * self.scale
    }

    fn x(&self, x: f64) -> f64 {
        (x - self.lo[0]) * self.scale
    }

    fn y(&self, y: f64) -> f64 {
        (self.hi[1] - y) * self.scale
    }
}

struct Bounds {
    lo: [f64; 2],
    hi: [f64; 2],
}

impl Bounds {
    fn new() -> Self {
        Bounds {
            lo: [f64::INFINITY; 2],
            hi: [f64::NEG_INFINITY; 2],
        }
    }

    fn add(&mut self, p: &[f64]) {
        for d in 0..2 {
            self.lo[d] = self.lo[d].min(p[d]);
            self.hi[d] = self.hi[d].max(p[d]);
        }
    }

    fn is_empty(&self) -> bool {
        !(self.lo[0] <= self.hi[0])
    }
}

fn f(v: f64) -> String {
    let s = format!("{v:.3}");
    if s == "-0.000" {
        "0.000".into()
    } else {
        s
    }
}

fn cells_of(
    log: Option<&SynthesisLog>,
    agent: usize,
    pick: fn(&AgentLog) -> &Vec<Vec<CellIndex>>,
) -> BTreeSet<CellIndex> {
    log.and_then(|l| l.agents.get(agent))
        .map(|a| pick(a).iter().flatten().cloned().collect())
        .unwrap_or_default()
}

pub fn figure(scene: &Scene<'_>) -> String {
    let abs = scene.abs;
    let n = abs.len();
    let reachable: Vec<_> = (0..n)
        .map(|a| cells_of(scene.log, a, |l| &l.reachable))
        .collect();
    let satisfying: Vec<_> = (0..n)
        .map(|a| cells_of(scene.log, a, |l| &l.satisfying))
        .collect();
    let selected: Vec<BTreeSet<CellIndex>> = (0..n)
        .map(|a| {
            scene
                .plan
                .and_then(|p| p.agents.get(a))
                .map(|ap| ap.cells.iter().cloned().collect())
                .unwrap_or_default()
        })
        .collect();

    // Frame the interesting content when there is a plan, otherwise every region.
    let mut b = Bounds::new();
    if scene.plan.is_some() {
        for i in abs.model.ids() {
            let dec = abs.dec(i);
            let k = i.index();
            for l in reachable[k].iter().chain(&selected[k]) {
                let bx = dec.cell_box(l);
                b.add(&bx.lo);
                b.add(&bx.hi);
            }
            b.add(&abs.model.initial_states[k]);
        }
        if let Some(spec) = scene.spec {
            for g in spec.goals.iter().flatten() {
                b.add(&g.region.lo);
                b.add(&g.region.hi);
            }
        }
        if let Some(t) = scene.trajectory {
            for (_, x) in t.agents.iter().flatten() {
                b.add(x);
            }
        }
    }
    if b.is_empty() {
        for i in abs.model.ids() {
            let r = &abs.dec(i).region;
            b.add(&[r.center[0] - r.radius, r.center[1] - r.radius]);
            b.add(&[r.center[0] + r.radius, r.center[1] + r.radius]);
        }
    }
    let v = View::around(b.lo, b.hi);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}">"#,
        f(WIDTH),
        f(v.height()),
        f(WIDTH),
        f(v.height())
    );
    let _ = writeln!(
        s,
        r##"<defs><marker id="arrow" viewBox="0 0 10 10" refX="10" refY="5" markerWidth="6" markerHeight="6" orient="auto"><path d="M0,0 L10,5 L0,10 z" fill="#444"/></marker></defs>"##
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);

    for i in abs.model.ids() {
        let k = i.index();
        let dec = abs.dec(i);
        let color = PALETTE[k % PALETTE.len()];
        let _ = writeln!(s, r#"<g id="agent{}">"#, k + 1);
        let r = &dec.region;
        let (cx, cy, rad) = (r.center[0], r.center[1], r.radius);
        let _ = writeln!(
            s,
            r#"<circle cx="{}" cy="{}" r="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            f(v.x(cx)),
            f(v.y(cy)),
            f(rad * v.scale)
        );
        grid_lines(
            &mut s,
            &v,
            dec.anchor[0],
            dec.anchor[1],
            dec.side,
            cx,
            cy,
            rad,
            color,
        );
        for (set, fill, op) in [
            (&reachable[k], "#2ca02c", "0.25"),
            (&satisfying[k], "#1f77b4", "0.35"),
            (&selected[k], "#d62728", "0.7"),
        ] {
            for l in set {
                let bx = dec.cell_box(l);
                let _ = writeln!(
                    s,
                    r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{fill}" fill-opacity="{op}"/>"#,
                    f(v.x(bx.lo[0])),
                    f(v.y(bx.hi[1])),
                    f((bx.hi[0] - bx.lo[0]) * v.scale),
                    f((bx.hi[1] - bx.lo[1]) * v.scale)
                );
            }
        }
        let _ = writeln!(s, "</g>");
    }

    if let Some(spec) = scene.spec {
        for (k, goals) in spec.goals.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            for (g, goal) in goals.iter().enumerate() {
                let (lo, hi) = (&goal.region.lo, &goal.region.hi);
                let _ = writeln!(
                    s,
                    r#"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="{color}" stroke-width="2" stroke-dasharray="6,3"><title>agent {} goal {}: [{}, {}]</title></rect>"#,
                    f(v.x(lo[0])),
                    f(v.y(hi[1])),
                    f((hi[0] - lo[0]) * v.scale),
                    f((hi[1] - lo[1]) * v.scale),
                    k + 1,
                    g + 1,
                    goal.window.0,
                    goal.window.1
                );
            }
        }
    }

    for (j, i) in abs.model.edges() {
        let (a, b) = (
            &abs.model.initial_states[j.index()],
            &abs.model.initial_states[i.index()],
        );
        let _ = writeln!(
            s,
            r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#444" stroke-width="1" marker-end="url(#arrow)"/>"##,
            f(v.x(a[0])),
            f(v.y(a[1])),
            f(v.x(b[0])),
            f(v.y(b[1]))
        );
    }

    if let Some(t) = scene.trajectory {
        for (k, rows) in t.agents.iter().enumerate() {
            let pts: Vec<String> = rows
                .iter()
                .map(|(_, x)| format!("{},{}", f(v.x(x[0])), f(v.y(x[1]))))
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="2"/>"#,
                pts.join(" "),
                PALETTE[k % PALETTE.len()]
            );
        }
    }

    for (k, x) in abs.model.initial_states.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<circle cx="{}" cy="{}" r="4" fill="{}" stroke="black"><title>agent {}</title></circle>"#,
            f(v.x(x[0])),
            f(v.y(x[1])),
            PALETTE[k % PALETTE.len()],
            k + 1
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Lattice lines clipped to the region disk and the view.
#[allow(clippy::too_many_arguments)]
fn grid_lines(
    s: &mut String,
    v: &View,
    ax: f64,
    ay: f64,
    side: f64,
    cx: f64,
    cy: f64,
    rad: f64,
    color: &str,
) {
    let mut path = String::new();
    for axis in 0..2 {
        let (a, c, c_other, lo, hi, olo, ohi) = if axis == 0 {
            (ax, cx, cy, v.lo[0], v.hi[0], v.lo[1], v.hi[1])
        } else {
            (ay, cy, cx, v.lo[1], v.hi[1], v.lo[0], v.hi[0])
        };
        let k0 = ((lo.max(c - rad) - a) / side).ceil() as i64;
        let k1 = ((hi.min(c + rad) - a) / side).floor() as i64;
        for k in k0..=k1 {
            let p = a + side * k as f64;
            let h = (rad * rad - (p - c) * (p - c)).max(0.0).sqrt();
            let (q0, q1) = ((c_other - h).max(olo), (c_other + h).min(ohi));
            if q0 >= q1 {
                continue;
            }
            let (x0, y0, x1, y1) = if axis == 0 {
                (p, q0, p, q1)
            } else {
                (q0, p, q1, p)
            };
            let _ = write!(
                path,
                "M{} {}L{} {}",
                f(v.x(x0)),
                f(v.y(y0)),
                f(v.x(x1)),
                f(v.y(y1))
            );
        }
    }
    if !path.is_empty() {
        let _ = writeln!(
            s,
            r#"<path d="{path}" stroke="{color}" stroke-opacity="0.25" stroke-width="0.5" fill="none"/>"#
        );
    }
}
