//! Discounted infinite-horizon solve by truncation, plus extraction and
//! evaluation of a stationary design.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::belief::{
    apply_q, apply_qhat, initial_info_state, stage_cost, DecoderRule, EncAssignment, MemoryRule,
};
use crate::error::{Error, Result};
use crate::model::ValidatedInstance;
use crate::solver_finite::{enumerate_memory_rules, saturating_pow, InfoStateDp, SolverConfig, StageRules};

pub const DEFAULT_CLOSURE_CAP: usize = 100_000;
/// Largest memory-rule set searched when stage-one extraction misses the bound.
pub const DEFAULT_RULE_SEARCH_CAP: usize = 4096;

/// Smallest `T >= 1` with `beta^T * rho_max / (1 - beta) <= epsilon / 2`.
pub fn truncation_horizon(beta: f64, epsilon: f64, rho_max: f64) -> usize {
    tail_horizon(beta, rho_max, epsilon / 2.0)
}

/// Orbit length used to evaluate and simulate stationary designs: smallest
/// `L` with `beta^L * rho_max / (1 - beta) <= epsilon / 4`.
pub fn stationary_horizon(beta: f64, rho_max: f64, epsilon: f64) -> usize {
    tail_horizon(beta, rho_max, epsilon / 4.0)
}

/// Smallest `T >= 1` whose discounted tail bound is at most `budget`.
fn tail_horizon(beta: f64, rho_max: f64, budget: f64) -> usize {
    let mut t = 1usize;
    while beta.powi(t as i32) * rho_max / (1.0 - beta) > budget {
        t += 1;
    }
    t
}

/// Time-invariant encoding table and memory update used at every stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationaryDesign {
    /// Encoder images for every (x, belief) pair met along the design's own orbit.
    pub c: EncAssignment,
    pub l: MemoryRule,
    /// Bayes decoder for the memory-update state at each orbit stage.
    #[serde(default)]
    pub decoders: Vec<DecoderRule>,
    /// Support pairs that had to be added by re-solving during evaluation.
    #[serde(default)]
    pub closure_misses: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct DiscountedConfig {
    pub solver: SolverConfig,
    /// Maximum number of support pairs in a stationary encoder table.
    pub closure_cap: usize,
    /// Also compute the value at every truncation depth up to `T + 1`.
    pub contraction_witness: bool,
    /// Memory-rule count up to which the fallback extraction runs.
    pub rule_search_cap: usize,
}

/// How the reported stationary design was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extraction {
    /// Minimizers at this 1-based stage of the truncated optimal path.
    PathStage(usize),
    /// Best of all memory rules, each with its encoder table built by closure.
    RuleSearch,
}

impl Default for DiscountedConfig {
    fn default() -> Self {
        DiscountedConfig {
            solver: SolverConfig::default(),
            closure_cap: DEFAULT_CLOSURE_CAP,
            contraction_witness: true,
            rule_search_cap: DEFAULT_RULE_SEARCH_CAP,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DiscountedResult {
    /// Truncated optimal value, within `epsilon / 2` of the infinite-horizon optimum.
    pub value: f64,
    pub epsilon_bound: f64,
    pub truncation_t: usize,
    /// Optimal rules along the truncated path.
    pub stages: Vec<StageRules>,
    pub stationary: Option<StationaryDesign>,
    pub stationary_value: Option<f64>,
    pub gap: Option<f64>,
    pub gap_within_bound: bool,
    pub extraction: Option<Extraction>,
    /// Optimal value at depths `1..=T+1` (empty unless requested).
    pub depth_values: Vec<f64>,
    pub contraction_ok: bool,
    pub states_explored: usize,
    pub atoms_max: usize,
    pub warnings: Vec<String>,
    pub wall_time: Duration,
}

/// Checks `|V_{n+1} - V_n| <= beta^n * rho_max` for successive depths
/// (`values[0]` is depth 1).
pub fn contraction_holds(values: &[f64], beta: f64, rho_max: f64) -> bool {
    values
        .windows(2)
        .enumerate()
        .all(|(i, w)| (w[1] - w[0]).abs() <= beta.powi(i as i32 + 1) * rho_max + 1e-12)
}

/// Evaluates a stationary design by following its single forward orbit.
///
/// Pairs the table does not cover are assigned by re-solving the truncated
/// DP at the current state with the known images and the memory update held
/// fixed; they are recorded in the table and counted in `closure_misses`.
pub fn evaluate_stationary(
    design: &mut StationaryDesign,
    inst: &ValidatedInstance,
    epsilon: f64,
    cfg: &DiscountedConfig,
) -> Result<f64> {
    let (beta, _) = inst
        .discount()
        .ok_or_else(|| Error::BadHorizon("stationary evaluation needs a discounted horizon".into()))?;
    let dp = InfoStateDp::time_invariant(inst, beta, cfg.solver)?;
    let depth = truncation_horizon(beta, epsilon, inst.rho_max());
    evaluate_with(design, inst, epsilon, cfg.closure_cap, &dp, depth)
}

fn evaluate_with(
    design: &mut StationaryDesign,
    inst: &ValidatedInstance,
    epsilon: f64,
    closure_cap: usize,
    dp: &InfoStateDp<'_>,
    depth: usize,
) -> Result<f64> {
    let beta = dp.discount();
    let tol = dp.config().tol;
    let stages = stationary_horizon(beta, inst.rho_max(), epsilon);
    let channel = inst.channel(0);
    let rho = inst.rho(0);
    let transition = inst.transition(0);

    design.decoders.clear();
    let mut pi = initial_info_state(inst);
    let mut total = 0.0;
    let mut weight = 1.0;
    for t in 0..stages {
        let fixed: Vec<Option<usize>> =
            pi.atoms().iter().map(|a| design.c.lookup(a.x, a.value.probs(), tol.merge)).collect();
        let missing = fixed.iter().filter(|z| z.is_none()).count();
        if missing > 0 {
            if design.c.len() + missing > closure_cap {
                return Err(Error::ClosureCapExceeded { cap: closure_cap });
            }
            let (_, zs) = dp.best_assignment(depth, &pi, &fixed, Some(&design.l))?;
            for (a, (f, z)) in pi.atoms().iter().zip(fixed.iter().zip(zs)) {
                if f.is_none() {
                    design.c.push(a.x, a.value.clone(), z);
                }
            }
            design.closure_misses += missing;
        }
        let phi = apply_q(&pi, &design.c, channel, &tol)?;
        let (cost, g) = stage_cost(&phi, rho);
        design.decoders.push(g);
        total += weight * cost;
        weight *= beta;
        if t + 1 < stages {
            pi = apply_qhat(&phi, &design.l, transition, &tol)?;
        }
    }
    Ok(total)
}

/// Discounted solve: truncated DP to within `epsilon / 2`, a stationary
/// design and its evaluated gap.
///
/// The stationary design is taken from the first-stage minimizers. If its gap
/// exceeds `epsilon`, the minimizers of each later stage on the optimal path
/// are tried, then every memory rule with a closure-built encoder table; the
/// lowest evaluated value wins.
pub fn solve_discounted(inst: &ValidatedInstance, cfg: &DiscountedConfig) -> Result<DiscountedResult> {
    let start = Instant::now();
    let (beta, epsilon) = inst
        .discount()
        .ok_or_else(|| Error::BadHorizon("solve_discounted needs a discounted horizon".into()))?;
    let rho_max = inst.rho_max();
    let depth = truncation_horizon(beta, epsilon, rho_max);
    let dp = InfoStateDp::time_invariant(inst, beta, cfg.solver)?;
    let pi1 = initial_info_state(inst);

    let value = dp.value(depth, &pi1)?;
    let stages = dp.rules_from(depth, &pi1)?;

    let depth_values = if cfg.contraction_witness {
        (1..=depth + 1).map(|n| dp.value(n, &pi1)).collect::<Result<Vec<f64>>>()?
    } else {
        Vec::new()
    };
    let contraction_ok = contraction_holds(&depth_values, beta, rho_max);

    let a = inst.alphabets();
    let mut warnings = Vec::new();
    let mut stationary: Option<(f64, StationaryDesign, Extraction)> = None;
    let consider = |best: &mut Option<(f64, StationaryDesign, Extraction)>,
                    mut design: StationaryDesign,
                    how: Extraction,
                    warnings: &mut Vec<String>| {
        match evaluate_with(&mut design, inst, epsilon, cfg.closure_cap, &dp, depth) {
            Ok(v) => {
                if best.as_ref().is_none_or(|(b, _, _)| v < *b - 1e-12) {
                    *best = Some((v, design, how));
                }
                Ok(())
            }
            Err(e @ (Error::ClosureCapExceeded { .. } | Error::SearchSpaceExceeded { .. })) => {
                warnings.push(format!("stationary design not evaluated: {e}"));
                Ok(())
            }
            Err(e) => Err(e),
        }
    };
    let identity = MemoryRule::from_fn(a.ny, a.nm, |_, m| m);
    let missed = |best: &Option<(f64, StationaryDesign, Extraction)>| {
        best.as_ref().is_none_or(|(v, _, _)| v - value > epsilon)
    };
    // Stage one first; later stages of the optimal path only if it misses the bound.
    for (k, stage) in stages.iter().enumerate() {
        if k > 0 && (!missed(&stationary) || stage.l.is_none()) {
            break;
        }
        let design = StationaryDesign {
            c: stage.c.clone(),
            l: stage.l.clone().unwrap_or_else(|| identity.clone()),
            decoders: Vec::new(),
            closure_misses: 0,
        };
        consider(&mut stationary, design, Extraction::PathStage(stage.t), &mut warnings)?;
    }
    if missed(&stationary) {
        let count = saturating_pow(a.nm, a.ny * a.nm);
        if count <= cfg.rule_search_cap as u128 {
            for l in enumerate_memory_rules(a.ny, a.nm, cfg.rule_search_cap as u64)? {
                let design = StationaryDesign {
                    c: EncAssignment::default(),
                    l,
                    decoders: Vec::new(),
                    closure_misses: 0,
                };
                consider(&mut stationary, design, Extraction::RuleSearch, &mut warnings)?;
            }
        } else {
            warnings.push(format!(
                "path-stage extraction missed the bound and {count} memory rules exceed the search cap"
            ));
        }
    }
    let (stationary_value, design, extraction) = match stationary {
        Some((v, d, how)) => (Some(v), Some(d), Some(how)),
        None => (None, None, None),
    };
    let gap = stationary_value.map(|s| s - value);
    let gap_within_bound = gap.is_some_and(|g| g <= epsilon);
    if let Some(g) = gap {
        if g > epsilon {
            warnings.push(format!("stationary gap {g:.3e} exceeds epsilon {epsilon:.3e}"));
        }
    }
    if !contraction_ok && cfg.contraction_witness {
        warnings.push("successive truncation values violate the contraction bound".into());
    }

    Ok(DiscountedResult {
        value,
        epsilon_bound: epsilon,
        truncation_t: depth,
        stages,
        stationary: design,
        stationary_value,
        gap,
        gap_within_bound,
        extraction,
        depth_values,
        contraction_ok,
        states_explored: dp.states_explored(),
        atoms_max: dp.atoms_max(),
        warnings,
        wall_time: start.elapsed(),
    })
}
