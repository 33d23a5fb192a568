//! Seeded Monte Carlo simulation of the source, encoder, channel, receiver loop.
//!
//! Trajectory `i` draws from `ChaCha8Rng::seed_from_u64(seed)` switched to
//! stream `i`, so every trajectory has its own generator and the report is
//! bitwise reproducible from `(seed, n, design)` whatever the thread count.
//! Per-trajectory totals are collected in index order and aggregated with
//! pairwise summation.

use std::fmt::Write as _;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::belief::{nu, psi, Belief, DecoderRule, EncAssignment, MemoryRule};
use crate::error::{Error, Result};
use crate::exec::{map_indices, pairwise_sum, ExecMode};
use crate::model::{Matrix, ValidatedInstance};
use crate::oracle::{bayes_decoders_for, PrimitiveDesign};
use crate::solver_finite::{saturating_pow, StageRules};
use crate::solver_infinite::{stationary_horizon, StationaryDesign};

/// Distance within which a trajectory's encoder belief matches a stored pair.
pub const LOOKUP_TOL: f64 = 1e-6;

/// Design to simulate.
#[derive(Debug, Clone, Copy)]
pub enum DesignRef<'a> {
    Primitive(&'a PrimitiveDesign),
    Stages(&'a [StageRules]),
    /// Simulated over the same number of stages that
    /// [`evaluate_stationary`](crate::solver_infinite::evaluate_stationary) uses for `epsilon`.
    Stationary {
        design: &'a StationaryDesign,
        epsilon: f64,
    },
}

#[derive(Debug, Clone, Copy)]
pub struct SimConfig {
    pub n: u64,
    pub seed: u64,
    pub exec: ExecMode,
    pub lookup_tol: f64,
}

impl SimConfig {
    pub fn new(n: u64, seed: u64) -> SimConfig {
        SimConfig { n, seed, exec: ExecMode::default(), lookup_tol: LOOKUP_TOL }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub n: u64,
    /// Sample mean of the (discounted, in discounted mode) total distortion.
    pub mean: f64,
    pub std_err: f64,
    /// False when `n == 1`; `std_err` is then reported as 0.
    pub std_err_defined: bool,
    pub seed: u64,
    pub stages: usize,
    /// Undiscounted sample mean distortion at each stage.
    pub per_stage_means: Vec<f64>,
}

/// One simulated stage. `m` is the receiver memory before the stage, the one
/// the decoder reads.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub t: usize,
    pub x: usize,
    pub z: usize,
    pub y: usize,
    pub m: usize,
    pub xhat: usize,
    pub rho: f64,
}

enum Encoder<'a> {
    Primitive(&'a [Vec<usize>]),
    Belief(Vec<&'a EncAssignment>),
}

struct Plan<'a> {
    stages: usize,
    encoder: Encoder<'a>,
    l: Vec<&'a MemoryRule>,
    g: Vec<DecoderRule>,
    discount: f64,
}

impl Plan<'_> {
    fn memory_rule(&self, t: usize) -> &MemoryRule {
        self.l[t.min(self.l.len() - 1)]
    }
}

fn check_tables(inst: &ValidatedInstance, l: &[&MemoryRule], g: &[DecoderRule]) -> Result<()> {
    let a = inst.alphabets();
    for rule in l {
        if rule.ny() != a.ny || rule.nm() != a.nm || rule.max_symbol() >= a.nm {
            return Err(Error::DimensionMismatch("memory-update rule shape".into()));
        }
    }
    for rule in g {
        if rule.ny() != a.ny || rule.nm() != a.nm || rule.max_symbol() >= a.nx {
            return Err(Error::DimensionMismatch("decoder table shape".into()));
        }
    }
    Ok(())
}

fn plan<'a>(design: DesignRef<'a>, inst: &ValidatedInstance) -> Result<Plan<'a>> {
    let a = inst.alphabets();
    let plan = match design {
        DesignRef::Primitive(d) => {
            let g = if d.g.is_empty() { bayes_decoders_for(inst, &d.c, &d.l)? } else { d.g.clone() };
            let stages = d.c.len();
            for (t, table) in d.c.iter().enumerate() {
                if table.len() as u128 != saturating_pow(a.nx, t + 1) || table.iter().any(|&z| z >= a.nz) {
                    return Err(Error::DimensionMismatch(format!("encoder table for stage {}", t + 1)));
                }
            }
            if d.l.len() + 1 != stages.max(1) {
                return Err(Error::DimensionMismatch("memory-update rule count".into()));
            }
            Plan { stages, encoder: Encoder::Primitive(&d.c), l: d.l.iter().collect(), g, discount: 1.0 }
        }
        DesignRef::Stages(rules) => {
            let stages = rules.len();
            let mut l = Vec::new();
            for r in &rules[..stages.saturating_sub(1)] {
                l.push(r.l.as_ref().ok_or_else(|| {
                    Error::DimensionMismatch(format!("stage {} lacks a memory-update rule", r.t))
                })?);
            }
            Plan {
                stages,
                encoder: Encoder::Belief(rules.iter().map(|r| &r.c).collect()),
                l,
                g: rules.iter().map(|r| r.g.clone()).collect(),
                discount: inst.discount().map_or(1.0, |(b, _)| b),
            }
        }
        DesignRef::Stationary { design, epsilon } => {
            let (beta, _) = inst.discount().ok_or_else(|| {
                Error::BadHorizon("stationary designs are simulated on a discounted horizon".into())
            })?;
            let stages = stationary_horizon(beta, inst.rho_max(), epsilon);
            if design.decoders.len() < stages {
                return Err(Error::DimensionMismatch(format!(
                    "stationary design has {} decoders, {stages} stages needed",
                    design.decoders.len()
                )));
            }
            Plan {
                stages,
                encoder: Encoder::Belief(vec![&design.c; stages]),
                l: vec![&design.l],
                g: design.decoders[..stages].to_vec(),
                discount: beta,
            }
        }
    };
    if plan.stages == 0 {
        return Err(Error::DimensionMismatch("design has no stages".into()));
    }
    if plan.g.len() != plan.stages {
        return Err(Error::DimensionMismatch(format!(
            "{} decoder tables for {} stages",
            plan.g.len(),
            plan.stages
        )));
    }
    if plan.stages > 1 && plan.l.is_empty() {
        return Err(Error::DimensionMismatch("memory-update rule count".into()));
    }
    check_tables(inst, &plan.l, &plan.g)?;
    if let Some(limit) = inst.finite_horizon() {
        if plan.stages != limit {
            return Err(Error::DimensionMismatch(format!(
                "design has {} stages, horizon is {limit}",
                plan.stages
            )));
        }
    }
    Ok(plan)
}

fn samplers(m: &Matrix) -> Vec<WeightedIndex<f64>> {
    (0..m.rows()).map(|r| WeightedIndex::new(m.row(r)).expect("validated rows are stochastic")).collect()
}

struct Samplers {
    initial: WeightedIndex<f64>,
    transition: Vec<Vec<WeightedIndex<f64>>>,
    channel: Vec<Vec<WeightedIndex<f64>>>,
}

impl Samplers {
    fn new(inst: &ValidatedInstance, stages: usize) -> Samplers {
        // Time-invariant instances only need stage 0.
        let distinct = if inst.is_time_invariant() { 1 } else { stages };
        Samplers {
            initial: WeightedIndex::new(inst.initial()).expect("validated initial distribution"),
            transition: (0..distinct.min(stages - 1)).map(|t| samplers(inst.transition(t))).collect(),
            channel: (0..distinct).map(|t| samplers(inst.channel(t))).collect(),
        }
    }

    fn at<T>(v: &[T], t: usize) -> &T {
        &v[t.min(v.len() - 1)]
    }
}

fn trajectory(
    plan: &Plan<'_>,
    inst: &ValidatedInstance,
    samp: &Samplers,
    cfg: &SimConfig,
    index: u64,
    mut log: Option<&mut Vec<Step>>,
) -> Result<(f64, Vec<f64>)> {
    let a = inst.alphabets();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index);
    let mut x = samp.initial.sample(&mut rng);
    let mut m = inst.m0();
    let mut prefix = 0usize;
    let mut belief = Belief::point_mass(a.nm, inst.m0());
    let mut costs = Vec::with_capacity(plan.stages);
    let mut total = 0.0;
    let mut weight = 1.0;
    for t in 0..plan.stages {
        let z = match &plan.encoder {
            Encoder::Primitive(c) => {
                // Only primitive tables are indexed by the source prefix; long
                // belief-driven runs would overflow it.
                prefix = prefix * a.nx + x;
                c[t][prefix]
            }
            Encoder::Belief(c) => c[t]
                .lookup(x, belief.probs(), cfg.lookup_tol)
                .ok_or_else(|| Error::UncoveredSupportPair { x, belief: belief.0.clone() })?,
        };
        let y = Samplers::at(&samp.channel, t)[z].sample(&mut rng);
        let xhat = plan.g[t].get(y, m);
        let cost = inst.rho(t).get(x, xhat);
        if let Some(log) = log.as_deref_mut() {
            log.push(Step { t: t + 1, x, z, y, m, xhat, rho: cost });
        }
        costs.push(cost);
        total += weight * cost;
        weight *= plan.discount;
        if t + 1 < plan.stages {
            let l = plan.memory_rule(t);
            if matches!(plan.encoder, Encoder::Belief(_)) {
                belief = psi(&nu(&belief, z, inst.channel(t)), l);
            }
            m = l.get(y, m);
            x = Samplers::at(&samp.transition, t)[x].sample(&mut rng);
        }
    }
    Ok((total, costs))
}

fn report(cfg: &SimConfig, stages: usize, runs: Vec<(f64, Vec<f64>)>) -> SimReport {
    let n = runs.len();
    let totals: Vec<f64> = runs.iter().map(|r| r.0).collect();
    let mean = pairwise_sum(&totals) / n as f64;
    let (std_err, std_err_defined) = if n > 1 {
        let sq: Vec<f64> = totals.iter().map(|v| (v - mean) * (v - mean)).collect();
        ((pairwise_sum(&sq) / (n - 1) as f64).sqrt() / (n as f64).sqrt(), true)
    } else {
        (0.0, false)
    };
    let per_stage_means = (0..stages)
        .map(|t| {
            let col: Vec<f64> = runs.iter().map(|r| r.1[t]).collect();
            pairwise_sum(&col) / n as f64
        })
        .collect();
    SimReport { n: n as u64, mean, std_err, std_err_defined, seed: cfg.seed, stages, per_stage_means }
}

pub fn simulate(design: DesignRef<'_>, inst: &ValidatedInstance, cfg: &SimConfig) -> Result<SimReport> {
    if cfg.n == 0 {
        return Err(Error::DimensionMismatch("at least one trajectory is needed".into()));
    }
    let plan = plan(design, inst)?;
    let samp = Samplers::new(inst, plan.stages);
    let runs = map_indices(cfg.exec, cfg.n, |i| trajectory(&plan, inst, &samp, cfg, i, None))?;
    Ok(report(cfg, plan.stages, runs))
}

/// Like [`simulate`], also returning every trajectory's steps.
pub fn simulate_logged(
    design: DesignRef<'_>,
    inst: &ValidatedInstance,
    cfg: &SimConfig,
) -> Result<(SimReport, Vec<Vec<Step>>)> {
    if cfg.n == 0 {
        return Err(Error::DimensionMismatch("at least one trajectory is needed".into()));
    }
    let plan = plan(design, inst)?;
    let samp = Samplers::new(inst, plan.stages);
    let runs = map_indices(cfg.exec, cfg.n, |i| {
        let mut steps = Vec::with_capacity(plan.stages);
        trajectory(&plan, inst, &samp, cfg, i, Some(&mut steps)).map(|r| (r, steps))
    })?;
    let (runs, logs): (Vec<_>, Vec<_>) = runs.into_iter().unzip();
    Ok((report(cfg, plan.stages, runs), logs))
}

pub const LOG_HEADER: &str = "trajectory,t,x,z,y,m,xhat,rho";

/// Trajectory log as CSV: a header, then one line per trajectory whose
/// fields hold that trajectory's per-stage values separated by spaces.
pub fn trajectory_csv(logs: &[Vec<Step>]) -> String {
    let mut out = String::from(LOG_HEADER);
    out.push('\n');
    for (i, steps) in logs.iter().enumerate() {
        let join = |f: &dyn Fn(&Step) -> String| steps.iter().map(f).collect::<Vec<_>>().join(" ");
        let _ = writeln!(
            out,
            "{i},{},{},{},{},{},{},{}",
            join(&|s| s.t.to_string()),
            join(&|s| s.x.to_string()),
            join(&|s| s.z.to_string()),
            join(&|s| s.y.to_string()),
            join(&|s| s.m.to_string()),
            join(&|s| s.xhat.to_string()),
            join(&|s| s.rho.to_string()),
        );
    }
    out
}

/// Parses a log written by [`trajectory_csv`].
pub fn parse_trajectory_csv(text: &str) -> Option<Vec<Vec<Step>>> {
    let mut lines = text.lines();
    if lines.next()? != LOG_HEADER {
        return None;
    }
    let mut out = Vec::new();
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return None;
        }
        let ints =
            |k: usize| -> Option<Vec<usize>> { fields[k].split(' ').map(|v| v.parse().ok()).collect() };
        let (t, x, z, y, m, xhat) = (ints(1)?, ints(2)?, ints(3)?, ints(4)?, ints(5)?, ints(6)?);
        let rho: Vec<f64> = fields[7].split(' ').map(|v| v.parse().ok()).collect::<Option<_>>()?;
        let steps = (0..t.len())
            .map(|k| {
                Some(Step {
                    t: t[k],
                    x: *x.get(k)?,
                    z: *z.get(k)?,
                    y: *y.get(k)?,
                    m: *m.get(k)?,
                    xhat: *xhat.get(k)?,
                    rho: *rho.get(k)?,
                })
            })
            .collect::<Option<Vec<_>>>()?;
        out.push(steps);
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        validate, Alphabets, ChannelSpec, DistortionSpec, Horizon, MatrixSpec, ProblemInstance, SourceSpec,
    };

    fn bsc_t1(p: f64) -> ValidatedInstance {
        validate(&ProblemInstance {
            alphabets: Alphabets { nx: 2, nz: 2, ny: 2, nm: 1 },
            source: SourceSpec { initial: vec![0.5, 0.5], transition: MatrixSpec::Single(vec![]) },
            channel: ChannelSpec { matrix: MatrixSpec::Single(vec![vec![1.0 - p, p], vec![p, 1.0 - p]]) },
            distortion: DistortionSpec { rho: MatrixSpec::Single(vec![vec![0.0, 1.0], vec![1.0, 0.0]]) },
            horizon: Horizon::Finite(1),
            m0: 0,
        })
        .unwrap()
    }

    fn identity_design() -> PrimitiveDesign {
        PrimitiveDesign { c: vec![vec![0, 1]], l: vec![], g: vec![DecoderRule::from_fn(2, 1, |y, _| y)] }
    }

    #[test]
    fn noiseless_identity_is_free() {
        let i = bsc_t1(0.0);
        let r = simulate(DesignRef::Primitive(&identity_design()), &i, &SimConfig::new(1000, 3)).unwrap();
        assert_eq!(r.mean, 0.0);
        assert_eq!(r.std_err, 0.0);
    }

    #[test]
    fn bsc_error_rate() {
        let i = bsc_t1(0.1);
        let r = simulate(DesignRef::Primitive(&identity_design()), &i, &SimConfig::new(100_000, 11)).unwrap();
        assert!((r.mean - 0.1).abs() <= 4.0 * r.std_err, "{r:?}");
    }

    #[test]
    fn single_trajectory_flags_std_err() {
        let i = bsc_t1(0.1);
        let r = simulate(DesignRef::Primitive(&identity_design()), &i, &SimConfig::new(1, 5)).unwrap();
        assert!(!r.std_err_defined);
        assert_eq!(r.std_err, 0.0);
        assert!(r.mean == 0.0 || r.mean == 1.0);
    }

    #[test]
    fn reproducible_across_modes() {
        let i = bsc_t1(0.3);
        let d = identity_design();
        let mut cfg = SimConfig::new(5000, 42);
        let a = simulate(DesignRef::Primitive(&d), &i, &cfg).unwrap();
        cfg.exec = ExecMode::Sequential;
        let b = simulate(DesignRef::Primitive(&d), &i, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
    }

    #[test]
    fn csv_round_trip() {
        let i = bsc_t1(0.3);
        let (_, logs) =
            simulate_logged(DesignRef::Primitive(&identity_design()), &i, &SimConfig::new(20, 1)).unwrap();
        let text = trajectory_csv(&logs);
        assert_eq!(text.lines().count(), 21);
        assert_eq!(parse_trajectory_csv(&text).unwrap(), logs);
    }

    #[test]
    fn wrong_shape_is_rejected() {
        let i = bsc_t1(0.1);
        let mut d = identity_design();
        d.c[0].push(0);
        assert!(matches!(
            simulate(DesignRef::Primitive(&d), &i, &SimConfig::new(10, 0)),
            Err(Error::DimensionMismatch(_))
        ));
    }
}
