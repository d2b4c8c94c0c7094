use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use horizon_abs::abstraction::{Abstraction, AgentSummary};
use horizon_abs::controller::IntegratorSettings;
use horizon_abs::model::bounds::{validate_bounds, BoundsReport};
use horizon_abs::model::file::{parse_document, ModelDocument};
use horizon_abs::planner::{
    self, extract_controls, reachable_profile, Strategy, SynthesisOptions, DEFAULT_BUDGET,
    DEFAULT_CAP,
};
use horizon_abs::sim::{simulate_closed_loop, validate_plan, ValidationReport};
use horizon_abs::wellposed::{self, AgentDesign, CycleReport, DesignRequest, StepChoice};
use horizon_abs::NetworkModel;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::artifacts::{self, PlanFile, SynthesisFile};
use crate::{Cli, Command, Failure, Overrides};

pub fn run(cli: &Cli) -> Result<(), Failure> {
    fs::create_dir_all(&cli.out)
        .map_err(|e| Failure::io(format!("cannot create {}: {e}", cli.out.display())))?;
    match cli.command {
        Command::Abstract => cmd_abstract(cli),
        Command::Plan => cmd_plan(cli),
        Command::Validate => cmd_validate(cli),
        Command::Render => cmd_render(cli),
        Command::Chain => cmd_chain(cli),
    }
}

struct Loaded {
    doc: ModelDocument,
    hash: String,
}

fn load(path: &Path) -> Result<Loaded, Failure> {
    let bytes = artifacts::read_bytes(path)?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| Failure::io(format!("{} is not UTF-8 text", path.display())))?;
    Ok(Loaded {
        doc: parse_document(&text)?,
        hash: artifacts::model_hash(&bytes),
    })
}

fn agent_slot(what: &str, agent: usize, n: usize) -> Result<usize, Failure> {
    if agent == 0 || agent > n {
        return Err(Failure::io(format!(
            "--{what}: agent {agent} is not in 1..={n}"
        )));
    }
    Ok(agent - 1)
}

fn design_request(
    doc: &ModelDocument,
    net: &NetworkModel,
    ov: &Overrides,
) -> Result<DesignRequest, Failure> {
    let mut req = doc.design(ov.steps)?;
    for &(a, v) in &ov.lambda {
        req.lambda[agent_slot("lambda", a, net.len())?] = v;
    }
    if let Some(m) = ov.margin {
        req.margin = m;
    }
    req.d_max_override = vec![None; net.len()];
    for &(a, v) in &ov.dmax {
        req.d_max_override[agent_slot("dmax", a, net.len())?] = Some(v);
    }
    if let Some(s) = ov.steps {
        req.steps = StepChoice::Fixed(s);
    }
    req.validate_ranges()?;
    Ok(req)
}

fn settings(ov: &Overrides) -> IntegratorSettings {
    let d = IntegratorSettings::default();
    IntegratorSettings {
        substeps: ov.substeps.unwrap_or(d.substeps).max(1),
        integ_tol: ov.integ_tol.unwrap_or(d.integ_tol),
    }
}

fn check_bounds(net: &NetworkModel, ov: &Overrides) -> Result<BoundsReport, Failure> {
    let mut rng = ChaCha8Rng::seed_from_u64(ov.seed);
    let report = validate_bounds(net, ov.bounds_samples, &mut rng);
    if report.has_violations() {
        let lines: Vec<String> = report
            .agents
            .iter()
            .flat_map(|a| {
                a.violations
                    .iter()
                    .map(move |v| format!("agent {}: {v}", a.agent))
            })
            .collect();
        if ov.strict_bounds {
            return Err(Failure {
                code: 3,
                message: format!("declared bounds violated: {}", lines.join("; ")),
            });
        }
        for l in &lines {
            eprintln!("warning: {l}");
        }
    }
    Ok(report)
}

struct Prepared {
    loaded: Loaded,
    abs: Abstraction,
    bounds: BoundsReport,
    cycles: CycleReport,
}

/// Model, discretization and abstraction for the given overrides.
fn prepare(cli: &Cli) -> Result<Prepared, Failure> {
    let loaded = load(&cli.model)?;
    let ov = &cli.overrides;
    let net = loaded.doc.network(ov.steps)?;
    let req = design_request(&loaded.doc, &net, ov)?;
    let cycles = wellposed::check_cycles(&net, &req.mu);
    let params = wellposed::synthesize(&net, &req)?;
    let bounds = check_bounds(&net, ov)?;
    let abs = Abstraction::new(net, params, settings(ov))?;
    Ok(Prepared {
        loaded,
        abs,
        bounds,
        cycles,
    })
}

/// Abstraction rebuilt from the discretization recorded in a plan file.
fn prepare_for_plan(cli: &Cli, plan: &PlanFile) -> Result<(Loaded, Abstraction), Failure> {
    let loaded = load(&cli.model)?;
    if loaded.hash != plan.model_hash {
        return Err(Failure::validation(format!(
            "plan was synthesized for model {} but {} hashes to {}",
            plan.model_hash,
            cli.model.display(),
            loaded.hash
        )));
    }
    let net = loaded.doc.network(Some(plan.params.steps))?;
    wellposed::validate(&net, &plan.params)?;
    check_bounds(&net, &cli.overrides)?;
    let abs = Abstraction::new(net, plan.params.clone(), settings(&cli.overrides))?;
    Ok((loaded, abs))
}

fn out_file(cli: &Cli, name: &str) -> PathBuf {
    cli.out.join(name)
}

#[derive(Serialize)]
struct AbstractionReport<'a> {
    model_hash: &'a str,
    horizon: f64,
    tau: f64,
    dt: f64,
    steps: usize,
    margin: f64,
    design: Vec<AgentDesign>,
    cells: Vec<AgentSummary>,
    /// Reachable cell counts per step and agent, or null for cyclic graphs.
    reachable_profile: Option<Vec<Vec<usize>>>,
    cycles: &'a CycleReport,
    bounds: &'a BoundsReport,
}

fn cmd_abstract(cli: &Cli) -> Result<(), Failure> {
    let p = prepare(cli)?;
    let abs = &p.abs;
    let profile = reachable_profile(abs, abs.params.steps)?;
    let report = AbstractionReport {
        model_hash: &p.loaded.hash,
        horizon: abs.model.horizon,
        tau: abs.model.tau,
        dt: abs.params.dt,
        steps: abs.params.steps,
        margin: abs.params.margin,
        design: wellposed::describe(&abs.model, &abs.params),
        cells: abs.summary(),
        reachable_profile: profile,
        cycles: &p.cycles,
        bounds: &p.bounds,
    };
    artifacts::write_json(&out_file(cli, artifacts::ABSTRACTION), &report)?;
    println!("dt = {}, steps = {}", abs.params.dt, abs.params.steps);
    for (d, s) in report.design.iter().zip(&report.cells) {
        println!(
            "agent {}: d_max = {:.6} (bound {:.6}), {} cells, {} initiating",
            d.agent, d.d_max, d.dmax_bound, s.cells, s.initiating
        );
    }
    Ok(())
}

fn cmd_plan(cli: &Cli) -> Result<(), Failure> {
    let p = prepare(cli)?;
    let abs = &p.abs;
    let spec = p.loaded.doc.timed_spec(&abs.model)?;
    let ov = &cli.overrides;
    let strategy = ov.strategy.unwrap_or(match abs.model.topological_order() {
        Some(_) => Strategy::Cascade,
        None => Strategy::Product,
    });
    let opts = SynthesisOptions {
        budget: ov.budget.unwrap_or(DEFAULT_BUDGET),
        cap: ov.cap.unwrap_or(DEFAULT_CAP),
    };
    let start = Instant::now();
    let (plan, log) = planner::synthesize(abs, &spec, strategy, &opts)?;
    let runtime = start.elapsed().as_secs_f64();
    let file = PlanFile {
        model_hash: p.loaded.hash.clone(),
        params: abs.params.clone(),
        plan,
    };
    artifacts::write_json(&out_file(cli, artifacts::PLAN), &file)?;
    let synthesis = SynthesisFile {
        model_hash: p.loaded.hash,
        log,
    };
    artifacts::write_json(&out_file(cli, artifacts::SYNTHESIS), &synthesis)?;
    let tried: usize = synthesis.log.agents.iter().map(|a| a.paths_tried).sum();
    println!(
        "plan found by {:?} search: {} steps, {} paths tried, {} backjumps, {runtime:.3} s",
        strategy, file.plan.steps, tried, synthesis.log.backjumps
    );
    Ok(())
}

#[derive(Serialize)]
struct ValidationFile<'a> {
    model_hash: &'a str,
    #[serde(flatten)]
    report: &'a ValidationReport,
}

fn cmd_validate(cli: &Cli) -> Result<(), Failure> {
    let plan: PlanFile = artifacts::read_json(&out_file(cli, artifacts::PLAN))?;
    let (loaded, abs) = prepare_for_plan(cli, &plan)?;
    let schedule = extract_controls(&plan.plan, &abs)?;
    let traj = simulate_closed_loop(&abs, &schedule, &abs.settings)?;
    let report = validate_plan(&abs, &plan.plan, &traj);
    artifacts::write_trajectory(&out_file(cli, artifacts::TRAJECTORY), &traj)?;
    artifacts::write_json(
        &out_file(cli, artifacts::VALIDATION),
        &ValidationFile {
            model_hash: &loaded.hash,
            report: &report,
        },
    )?;
    if let Some(c) = report.first_failure() {
        let located = c.located.as_ref().map_or_else(
            || "outside every cell".to_string(),
            |l| format!("in cell {l}"),
        );
        return Err(Failure::validation(format!(
            "{} of {} memberships failed; first at step {}, agent {}: state {located}, planned {} (margin {:e})",
            report.failures,
            report.checks.len(),
            c.step,
            c.agent,
            c.planned,
            c.margin
        )));
    }
    println!(
        "validated {} steps: all {} memberships hold, min margin {:e}, audit error {:e}",
        report.steps,
        report.checks.len(),
        report.min_margin,
        report.audit_error
    );
    Ok(())
}

fn cmd_render(cli: &Cli) -> Result<(), Failure> {
    let plan_path = out_file(cli, artifacts::PLAN);
    let plan: Option<PlanFile> = if plan_path.exists() {
        Some(artifacts::read_json(&plan_path)?)
    } else {
        None
    };
    let (loaded, abs) = match &plan {
        Some(pf) => prepare_for_plan(cli, pf)?,
        None => {
            let p = prepare(cli)?;
            (p.loaded, p.abs)
        }
    };
    if abs.model.dim() != 2 {
        return Err(Failure::io(format!(
            "render needs a planar model, this one has dimension {}",
            abs.model.dim()
        )));
    }
    let synthesis_path = out_file(cli, artifacts::SYNTHESIS);
    let synthesis: Option<SynthesisFile> = if plan.is_some() && synthesis_path.exists() {
        Some(artifacts::read_json(&synthesis_path)?)
    } else {
        None
    };
    let traj_path = out_file(cli, artifacts::TRAJECTORY);
    let traj = if plan.is_some() && traj_path.exists() {
        Some(artifacts::read_trajectory(&traj_path)?)
    } else {
        None
    };
    let spec = match &plan {
        Some(_) => Some(loaded.doc.timed_spec(&abs.model)?),
        None => None,
    };
    let svg = crate::render::figure(&crate::render::Scene {
        abs: &abs,
        plan: plan.as_ref().map(|p| &p.plan),
        log: synthesis.as_ref().map(|s| &s.log),
        spec: spec.as_ref(),
        trajectory: traj.as_ref(),
    });
    artifacts::write_text(&out_file(cli, artifacts::FIGURE), &svg)?;
    println!("wrote {}", out_file(cli, artifacts::FIGURE).display());
    Ok(())
}

fn cmd_chain(cli: &Cli) -> Result<(), Failure> {
    let loaded = load(&cli.model)?;
    let table = artifacts::read_trajectory(&out_file(cli, artifacts::TRAJECTORY))?;
    let mut doc = loaded.doc;
    if table.agents.len() != doc.agents.len() {
        return Err(Failure::io(format!(
            "trajectory has {} agents, model has {}",
            table.agents.len(),
            doc.agents.len()
        )));
    }
    let finals = table.final_states();
    for a in &mut doc.agents {
        let Some(x) = a.id.checked_sub(1).and_then(|k| finals.get(k)) else {
            return Err(Failure::io(format!(
                "trajectory has no samples for agent {}",
                a.id
            )));
        };
        if x.len() != a.dim {
            return Err(Failure::io(format!(
                "trajectory state of agent {} has dimension {}, expected {}",
                a.id,
                x.len(),
                a.dim
            )));
        }
        a.x0 = x.clone();
    }
    let path = out_file(cli, artifacts::NEXT_MODEL);
    artifacts::write_json(&path, &doc)?;
    println!("wrote {}", path.display());
    Ok(())
}
