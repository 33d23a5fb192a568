use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use rtjscc::belief::{DecoderRule, EncAssignment, MemoryRule, Tolerance};
use rtjscc::design::{parse_design, stage_rules_from_file, DesignFile, StageRulesFile};
use rtjscc::exec::with_threads;
use rtjscc::model::{parse_instance, validate, Horizon, ValidatedInstance};
use rtjscc::oracle::{
    bayes_decoders_for, brute_force_optimum, evaluate_exact, OracleConfig, PrimitiveDesign,
};
use rtjscc::sim::{simulate, simulate_logged, trajectory_csv, DesignRef, SimConfig};
use rtjscc::solver_finite::{solve_finite, value_of_design, SolveResult, SolverConfig, StageRules};
use rtjscc::solver_infinite::{
    evaluate_stationary, solve_discounted, DiscountedConfig, DiscountedResult, StationaryDesign,
};
use rtjscc::{Error, Result};

use crate::report::RunReport;
use crate::Command;

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.display().to_string(), source }
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

/// Reads, hashes and validates the instance, filling in the report header.
fn load(report: &mut RunReport, path: &Path) -> Result<ValidatedInstance> {
    let start = Instant::now();
    let bytes = std::fs::read(path).map_err(|e| io_error(path, e))?;
    report.instance.sha256 = Some(format!("{:x}", Sha256::digest(&bytes)));
    let text = String::from_utf8(bytes).map_err(|e| Error::Parse {
        path: String::new(),
        line: 0,
        column: 0,
        message: e.to_string(),
    })?;
    let inst = validate(&parse_instance(&text)?);
    report.timings.load_ms = ms(start);
    inst
}

pub fn run(cmd: Command) -> (RunReport, Option<PathBuf>) {
    let (name, path, out, threads) = match &cmd {
        Command::Validate { instance, out } => ("validate", instance, out, 0),
        Command::Solve { common, .. } => ("solve", &common.instance, &common.out, common.threads),
        Command::Oracle { common, .. } => ("oracle", &common.instance, &common.out, common.threads),
        Command::Simulate { common, .. } => ("simulate", &common.instance, &common.out, common.threads),
    };
    let mut report = RunReport::new(name, path.display().to_string());
    let out = out.clone();
    let path = path.clone();
    let outcome = with_threads(threads, || -> Result<(Value, String)> {
        let inst = load(&mut report, &path)?;
        let start = Instant::now();
        let r = match cmd {
            Command::Validate { .. } => Ok(validate_results(&inst)),
            Command::Solve { cap, tol, .. } => solve_cmd(&inst, cap, tol),
            Command::Oracle { cap, cross_check, .. } => oracle_cmd(&inst, cap, cross_check),
            Command::Simulate { design, from_solve, n, seed, log, tol, .. } => {
                simulate_cmd(&inst, design.as_deref(), from_solve, n, seed, log.as_deref(), tol)
            }
        };
        report.timings.run_ms = ms(start);
        r
    });
    match outcome {
        Ok((results, summary)) => {
            report.results = Some(results);
            report.summary = summary;
        }
        Err(e) => report.fail(&e),
    }
    (report, out)
}

fn validate_results(inst: &ValidatedInstance) -> (Value, String) {
    let a = inst.alphabets();
    let results = json!({
        "valid": true,
        "alphabets": a,
        "horizon": inst.horizon(),
        "time_invariant": inst.is_time_invariant(),
        "rho_max": inst.rho_max(),
        "m0": inst.m0(),
    });
    let summary =
        format!("valid (nx={} nz={} ny={} nm={}, {})", a.nx, a.nz, a.ny, a.nm, horizon_text(inst.horizon()));
    (results, summary)
}

fn horizon_text(h: Horizon) -> String {
    match h {
        Horizon::Finite(t) => format!("finite T={t}"),
        Horizon::Discounted { beta, epsilon } => format!("discounted beta={beta} epsilon={epsilon}"),
    }
}

fn solver_config(cap: Option<u64>, tol: Option<f64>) -> SolverConfig {
    let mut cfg = SolverConfig::default();
    if let Some(cap) = cap {
        cfg.assignment_cap = cap;
        cfg.rule_cap = cap;
    }
    if let Some(tol) = tol {
        cfg.tol.merge = tol;
    }
    cfg
}

/// Stage tables as reported; `t, c, l, g` double as a design file entry.
#[derive(Serialize)]
struct StageOut<'a> {
    t: usize,
    c: &'a EncAssignment,
    l: Option<&'a MemoryRule>,
    g: &'a DecoderRule,
    stage_cost: f64,
    pi_atoms: usize,
    phi_atoms: usize,
}

fn stages_out(stages: &[StageRules]) -> Vec<StageOut<'_>> {
    stages
        .iter()
        .map(|s| StageOut {
            t: s.t,
            c: &s.c,
            l: s.l.as_ref(),
            g: &s.g,
            stage_cost: s.stage_cost_value,
            pi_atoms: s.pi.len(),
            phi_atoms: s.phi.len(),
        })
        .collect()
}

enum Solved {
    Finite(SolveResult),
    Discounted(Box<DiscountedResult>),
}

fn solve_any(inst: &ValidatedInstance, cfg: SolverConfig) -> Result<Solved> {
    match inst.horizon() {
        Horizon::Finite(_) => solve_finite(inst, &cfg).map(Solved::Finite),
        Horizon::Discounted { .. } => {
            let dcfg = DiscountedConfig { solver: cfg, ..DiscountedConfig::default() };
            solve_discounted(inst, &dcfg).map(|r| Solved::Discounted(Box::new(r)))
        }
    }
}

fn solved_results(inst: &ValidatedInstance, solved: &Solved) -> (Value, String) {
    match solved {
        Solved::Finite(s) => (
            json!({
                "mode": "finite",
                "horizon": s.stages.len(),
                "value": s.value,
                "states_explored": s.states_explored,
                "atoms_max": s.atoms_max,
                "stages": stages_out(&s.stages),
            }),
            format!("value {} over {} stages, {} states", s.value, s.stages.len(), s.states_explored),
        ),
        Solved::Discounted(r) => {
            let (beta, epsilon) = inst.discount().expect("discounted instance");
            let results = json!({
                "mode": "discounted",
                "beta": beta,
                "epsilon": epsilon,
                "value": r.value,
                "epsilon_bound": r.epsilon_bound,
                "truncation_t": r.truncation_t,
                "stationary": r.stationary,
                "stationary_value": r.stationary_value,
                "gap": r.gap,
                "gap_within_bound": r.gap_within_bound,
                "extraction": r.extraction,
                "contraction_ok": r.contraction_ok,
                "depth_values": r.depth_values,
                "states_explored": r.states_explored,
                "atoms_max": r.atoms_max,
                "warnings": r.warnings,
            });
            for w in &r.warnings {
                eprintln!("warning: {w}");
            }
            let gap = r.gap.map_or("none".to_string(), |g| g.to_string());
            (results, format!("value {} (T={}), stationary gap {gap}", r.value, r.truncation_t))
        }
    }
}

fn solve_cmd(inst: &ValidatedInstance, cap: Option<u64>, tol: Option<f64>) -> Result<(Value, String)> {
    let solved = solve_any(inst, solver_config(cap, tol))?;
    Ok(solved_results(inst, &solved))
}

fn oracle_cmd(inst: &ValidatedInstance, cap: Option<u128>, cross_check: bool) -> Result<(Value, String)> {
    let mut cfg = OracleConfig::default();
    if let Some(cap) = cap {
        cfg.cap = cap;
    }
    let o = brute_force_optimum(inst, &cfg)?;
    let mut summary = format!("value {} over {} designs", o.value, o.count);
    let check = if cross_check {
        let s = solve_finite(inst, &SolverConfig::default())?;
        let diff = (s.value - o.value).abs();
        summary.push_str(&format!(", |solve - oracle| = {diff:e}"));
        json!({ "solve_value": s.value, "abs_diff": diff })
    } else {
        Value::Null
    };
    let results = json!({
        "value": o.value,
        "count": o.count,
        "index": o.index,
        "design": o.design,
        "cross_check": check,
    });
    Ok((results, summary))
}

enum OwnedDesign {
    Primitive(PrimitiveDesign),
    Stages(Vec<StageRules>),
    Stationary(StationaryDesign, f64),
}

impl OwnedDesign {
    fn as_ref(&self) -> DesignRef<'_> {
        match self {
            OwnedDesign::Primitive(d) => DesignRef::Primitive(d),
            OwnedDesign::Stages(s) => DesignRef::Stages(s),
            OwnedDesign::Stationary(d, epsilon) => DesignRef::Stationary { design: d, epsilon: *epsilon },
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            OwnedDesign::Primitive(_) => "primitive",
            OwnedDesign::Stages(_) => "stage_rules",
            OwnedDesign::Stationary(..) => "stationary",
        }
    }
}

fn bad_design(msg: &str) -> Error {
    Error::DimensionMismatch(msg.to_string())
}

fn from_value<T: serde::de::DeserializeOwned>(v: Value) -> Result<T> {
    serde_json::from_value(v).map_err(|e| Error::Parse {
        path: "results".into(),
        line: 0,
        column: 0,
        message: e.to_string(),
    })
}

/// A design file, or the report of an earlier `solve` run.
fn read_design_file(path: &Path) -> Result<DesignFile> {
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: String::new(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let Some(command) = value.get("command") else {
        return parse_design(&text);
    };
    if command != "solve" {
        return Err(bad_design("only solve reports can be used as designs"));
    }
    let results = &value["results"];
    match results["mode"].as_str() {
        Some("finite") => {
            let stages = results["stages"].as_array().ok_or_else(|| bad_design("report has no stages"))?;
            let files = stages
                .iter()
                .map(|s| from_value(json!({ "t": s["t"], "c": s["c"], "l": s["l"], "g": s["g"] })))
                .collect::<Result<Vec<StageRulesFile>>>()?;
            Ok(DesignFile::StageRules(files))
        }
        Some("discounted") => match &results["stationary"] {
            Value::Null => Err(bad_design("report carries no stationary design")),
            v => Ok(DesignFile::Stationary(from_value(v.clone())?)),
        },
        _ => Err(bad_design("solve report has no results")),
    }
}

/// Turns a design file into a simulable design plus its exact expected cost.
fn prepare(inst: &ValidatedInstance, file: DesignFile, tol: &Tolerance) -> Result<(OwnedDesign, f64)> {
    match file {
        DesignFile::Primitive(mut d) => {
            if d.g.is_empty() {
                d.g = bayes_decoders_for(inst, &d.c, &d.l)?;
            }
            let v = evaluate_exact(&d, inst)?;
            Ok((OwnedDesign::Primitive(d), v))
        }
        DesignFile::StageRules(files) => {
            let rules = stage_rules_from_file(inst, &files, tol)?;
            let v = value_of_design(inst, &rules, tol)?;
            Ok((OwnedDesign::Stages(rules), v))
        }
        DesignFile::Stationary(mut d) => {
            let (_, epsilon) = inst
                .discount()
                .ok_or_else(|| Error::BadHorizon("stationary designs need a discounted horizon".into()))?;
            let cfg = DiscountedConfig {
                solver: SolverConfig { tol: *tol, ..SolverConfig::default() },
                ..DiscountedConfig::default()
            };
            let v = evaluate_stationary(&mut d, inst, epsilon, &cfg)?;
            Ok((OwnedDesign::Stationary(d, epsilon), v))
        }
    }
}

fn simulate_cmd(
    inst: &ValidatedInstance,
    design: Option<&Path>,
    from_solve: bool,
    n: u64,
    seed: u64,
    log: Option<&Path>,
    tol: Option<f64>,
) -> Result<(Value, String)> {
    let scfg = solver_config(None, tol);
    let (owned, reference) = if from_solve {
        match solve_any(inst, scfg)? {
            Solved::Finite(s) => (OwnedDesign::Stages(s.stages), s.value),
            Solved::Discounted(r) => {
                let r = *r;
                let (_, epsilon) = inst.discount().expect("discounted instance");
                match (r.stationary, r.stationary_value) {
                    (Some(d), Some(v)) => (OwnedDesign::Stationary(d, epsilon), v),
                    _ => (OwnedDesign::Stages(r.stages), r.value),
                }
            }
        }
    } else {
        let path = design.expect("clap requires --design without --from-solve");
        prepare(inst, read_design_file(path)?, &scfg.tol)?
    };
    let cfg = SimConfig::new(n, seed);
    let sim = match log {
        Some(path) => {
            let (sim, logs) = simulate_logged(owned.as_ref(), inst, &cfg)?;
            std::fs::write(path, trajectory_csv(&logs)).map_err(|e| io_error(path, e))?;
            sim
        }
        None => simulate(owned.as_ref(), inst, &cfg)?,
    };
    let diff = (sim.mean - reference).abs();
    let within = sim.std_err_defined.then_some(diff <= 4.0 * sim.std_err);
    let summary = format!(
        "mean {} +/- {} over {} trajectories (exact {reference}){}",
        sim.mean,
        sim.std_err,
        sim.n,
        if sim.std_err_defined { "" } else { ", std_err undefined for n=1" }
    );
    let results = json!({
        "design_source": if from_solve { "from_solve" } else { "file" },
        "design_kind": owned.kind(),
        "reference_value": reference,
        "abs_diff": diff,
        "within_4_std_err": within,
        "simulation": sim,
    });
    Ok((results, summary))
}
