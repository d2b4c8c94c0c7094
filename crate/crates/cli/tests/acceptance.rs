//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::any::Any;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use common::trials::{self, PostStats};
use horizon_abs::reach::ReachFamily;
use horizon_abs::scenarios::ToyShape;
use horizon_abs::wellposed;
use horizon_abs::AgentId;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

fn model_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/models/five_agents.json")
}

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_horizon-abs"))
        .args(args)
        .output()
        .expect("run horizon-abs")
}

fn run(command: &str, model: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        command,
        "--model",
        model.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    cli(&args)
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn five_agents_copy(dir: &Path) -> PathBuf {
    let model = dir.join("model.json");
    std::fs::copy(model_path(), &model).unwrap();
    model
}

fn reproduction() -> String {
    let dir = tempfile::tempdir().unwrap();
    let model = five_agents_copy(dir.path());
    let out = dir.path().join("out");
    let start = Instant::now();
    let plan = run("plan", &model, &out, &[]);
    assert_eq!(
        code(&plan),
        0,
        "plan: {}",
        String::from_utf8_lossy(&plan.stderr)
    );
    let validate = run("validate", &model, &out, &[]);
    let elapsed = start.elapsed().as_secs_f64();
    assert_eq!(
        code(&validate),
        0,
        "validate: {}",
        String::from_utf8_lossy(&validate.stderr)
    );
    let report = read_json(&out.join("validation.json"));
    assert_eq!(report["passed"], Value::Bool(true));
    assert_eq!(report["failures"].as_u64(), Some(0));
    let margin = report["min_margin"].as_f64().unwrap();
    assert!(margin > 0.0);
    let checks = report["checks"].as_array().unwrap().len();
    assert_eq!(checks, 5 * 13);
    assert!(elapsed <= 60.0, "plan and validate took {elapsed:.1} s");
    format!("{checks} memberships, min margin {margin:.2e}, {elapsed:.1} s")
}

fn closed_form_bounds() -> String {
    let (doc, _) = common::five_agents();
    let net = doc.network(None).unwrap();
    let req = doc.design(None).unwrap();
    // Hand-evaluated at dt = 1/6.
    let expected = [
        (13.0 / 37.0, 41.0 / 42.0),
        (3.0 / 7.0, 11.0 / 21.0),
        (1.0 / 2.0, 1.0 / 3.0),
        (3.0 / 7.0, 11.0 / 21.0),
        (13.0 / 37.0, 41.0 / 42.0),
    ];
    let mut worst: f64 = 0.0;
    for (k, (dt_b, d_b)) in expected.iter().enumerate() {
        let i = AgentId(k + 1);
        let dt = wellposed::dt_bound(&net, &req.lambda, i);
        let d = wellposed::dmax_bound(&net, &req.lambda, &req.mu, i, 1.0 / 6.0).unwrap();
        assert!(
            (dt - dt_b).abs() <= 1e-12,
            "agent {i}: dt bound {dt} vs {dt_b}"
        );
        assert!(
            (d - d_b).abs() <= 1e-12,
            "agent {i}: diameter bound {d} vs {d_b}"
        );
        worst = worst.max((dt - dt_b).abs()).max((d - d_b).abs());
    }
    format!("5 agents, largest deviation {worst:.1e}")
}

fn transitions(rng: &mut ChaCha8Rng) -> trials::TransitionStats {
    let bundled = trials::fine(common::five_agents().1);
    trials::transition_trials(rng, 120, &bundled)
}

fn post_oracle(rng: &mut ChaCha8Rng) -> String {
    let bundled = trials::fine(common::five_agents().1);
    let mut toys: Vec<_> = (0..4).map(|_| trials::random_abstraction(rng)).collect();
    toys.insert(0, bundled);
    let mut total = PostStats::default();
    let mut agents = 0;
    for abs in &toys {
        for i in abs.model.ids() {
            let mut s = PostStats::default();
            for _ in 0..50 {
                let config = common::random_configuration(abs, i, rng);
                trials::post_oracle(abs, i, &config, 10_000, rng, &mut s);
            }
            agents += 1;
            total.configurations += s.configurations;
            total.computed += s.computed;
            total.sampled += s.sampled;
        }
    }
    format!(
        "{agents} agents, {} configurations, {} computed cells, {} hit by samples",
        total.configurations, total.computed, total.sampled
    )
}

fn nonblocking(rng: &mut ChaCha8Rng) -> String {
    let shape = ToyShape {
        agents: 2,
        steps: 4,
        horizon: 1.0,
        coupled: true,
    };
    let abs = loop {
        if let Some((_, abs)) = common::try_toy(rng, shape) {
            if abs.decs.iter().all(|d| d.len() <= 500) && abs.decs.iter().any(|d| d.len() >= 100) {
                break abs;
            }
        }
    };
    let cells: Vec<usize> = abs.decs.iter().map(|d| d.len()).collect();
    let s = trials::exhaustive_nonblocking(&abs, 0.002, rng);
    format!(
        "cells {cells:?}, {} configurations, {} actions, {} simulated",
        s.configurations, s.actions, s.simulated
    )
}

fn end_to_end(rng: &mut ChaCha8Rng) -> String {
    let mut accepted = 0;
    let mut worst = f64::INFINITY;
    for _ in 0..20 {
        let shape = trials::closed_loop_shape(rng);
        if let Some(r) = trials::closed_loop_trial(rng, shape) {
            assert!(r.passed, "{:?}", r.first_failure());
            assert!(r.min_margin > 0.0);
            worst = worst.min(r.min_margin);
            accepted += 1;
        }
    }
    assert!(accepted > 0, "no instance was accepted");
    format!("{accepted}/20 accepted and validated, min margin {worst:.2e}")
}

fn reach(rng: &mut ChaCha8Rng) -> String {
    let (_, bundled) = common::five_agents();
    let mut worst: f64 = 0.0;
    let mut pairs = 0;
    while pairs < 1000 {
        let abs = trials::random_abstraction(rng);
        for fam in ReachFamily::all(&abs.model)
            .iter()
            .chain(&ReachFamily::all(&bundled.model))
        {
            for _ in 0..10 {
                worst = worst.max(trials::radius_identity(fam, rng));
                pairs += 1;
            }
        }
    }
    assert!(
        worst <= 4.0 * f64::EPSILON,
        "radius identity off by {worst:e}"
    );
    let mut excess = f64::NEG_INFINITY;
    for run in 0..100 {
        let e = if run % 4 == 0 {
            trials::open_loop_excess(&bundled, rng)
        } else {
            trials::open_loop_excess(&trials::random_abstraction(rng), rng)
        };
        excess = excess.max(e);
    }
    assert!(excess <= 1e-9, "state left its reach ball by {excess:e}");
    format!("{pairs} pairs, relative error {worst:.1e}; 100 runs, worst excess {excess:.2e}")
}

fn boundaries() -> String {
    let dir = tempfile::tempdir().unwrap();
    let model = five_agents_copy(dir.path());
    let out = dir.path().join("out");
    let base = run("abstract", &model, &out, &[]);
    assert_eq!(code(&base), 0, "{}", String::from_utf8_lossy(&base.stderr));
    let report = read_json(&out.join("abstraction.json"));
    let margin = report["margin"].as_f64().unwrap();
    let horizon = report["horizon"].as_f64().unwrap();
    let design = report["design"].as_array().unwrap();
    let mut rejected = 0;
    for (k, a) in design.iter().enumerate() {
        let d = a["d_max"].as_f64().unwrap() * 1.01 / margin;
        let arg = format!("{}={d}", k + 1);
        for _ in 0..2 {
            let o = run("abstract", &model, &out, &["--dmax", &arg]);
            assert_eq!(
                code(&o),
                3,
                "--dmax {arg}: {}",
                String::from_utf8_lossy(&o.stderr)
            );
        }
        rejected += 1;
    }
    let dt_min = design
        .iter()
        .map(|a| a["dt_bound"].as_f64().unwrap())
        .fold(f64::INFINITY, f64::min);
    let steps = (horizon * margin / (1.01 * dt_min)).floor() as usize;
    assert!(horizon / steps as f64 >= 1.01 * dt_min / margin);
    let steps = steps.to_string();
    for _ in 0..2 {
        let o = run("abstract", &model, &out, &["--steps", &steps]);
        assert_eq!(
            code(&o),
            3,
            "--steps {steps}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    let o = run("abstract", &model, &out, &["--lambda", "3=1.0"]);
    assert_eq!(code(&o), 3, "--lambda 3=1.0");
    format!("{rejected} diameters and --steps {steps} rejected with exit 3")
}

fn planner_oracle(rng: &mut ChaCha8Rng) -> String {
    let satisfiable = common::oracle::equivalence_trials(rng, 100, 50);
    assert!(
        satisfiable >= 10,
        "only {satisfiable} satisfiable instances"
    );
    format!("100 instances, {satisfiable} satisfiable agent searches")
}

fn message(e: Box<dyn Any + Send>) -> String {
    e.downcast_ref::<String>()
        .cloned()
        .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "panic".into())
}

fn main() {
    // Keep panic output to the single FAIL line.
    panic::set_hook(Box::new(|_| {}));
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut failed = 0;
    let mut check = |n: usize, name: &str, f: &mut dyn FnMut() -> String| {
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(f));
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {n:>2} PASS  {name}: {detail} [{secs:.1} s]"),
            Err(e) => {
                failed += 1;
                println!(
                    "criterion {n:>2} FAIL  {name}: {} [{secs:.1} s]",
                    message(e)
                );
            }
        }
    };

    check(1, "five-agent plan and validation", &mut reproduction);
    check(2, "closed-form bounds", &mut closed_form_bounds);
    let mut stats = None;
    check(3, "transition endpoint identity", &mut || {
        let s = stats.get_or_insert_with(|| transitions(&mut rng));
        assert!(
            s.identity_error < 1e-8,
            "endpoint error {:e}",
            s.identity_error
        );
        assert!(
            s.start_dependence < 1e-8,
            "start dependence {:e}",
            s.start_dependence
        );
        format!(
            "{} draws, endpoint error {:.1e}, start dependence {:.1e}",
            s.trials, s.identity_error, s.start_dependence
        )
    });
    check(4, "no input saturation", &mut || {
        let s = stats.expect("criterion 3 ran the trials");
        assert!(
            s.kbar_ratio < 1.0,
            "|kbar| / v_max reached {}",
            s.kbar_ratio
        );
        assert_eq!(s.saturations, 0, "saturated evaluations");
        format!(
            "{} draws, max |kbar| / v_max = {:.3}, 0 saturations",
            s.trials, s.kbar_ratio
        )
    });
    check(5, "Post against sampling", &mut || post_oracle(&mut rng));
    check(6, "nonblocking and deterministic", &mut || {
        nonblocking(&mut rng)
    });
    check(7, "closed-loop validation of random plans", &mut || {
        end_to_end(&mut rng)
    });
    check(8, "reach radii and containment", &mut || reach(&mut rng));
    check(9, "rejection past the bounds", &mut boundaries);
    check(10, "planner against exhaustive enumeration", &mut || {
        planner_oracle(&mut rng)
    });

    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all 10 criteria passed");
}
