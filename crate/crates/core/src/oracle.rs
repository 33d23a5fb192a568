//! Brute-force ground truth on the original design space.
//!
//! Encoders here are arbitrary tables `c_t: X^t -> Z` indexed by the whole
//! source prefix, and designs are evaluated exactly by propagating
//! Pr(x^t, m_{t-1}) forward and summing out the channel output. Nothing in
//! this module uses the information-state machinery, so it can certify it.

use serde::{Deserialize, Serialize};

use crate::belief::{DecoderRule, MemoryRule};
use crate::error::{Error, Result};
use crate::exec::{min_by_index, ExecMode};
use crate::model::ValidatedInstance;
use crate::solver_finite::saturating_pow;

pub const DEFAULT_ORACLE_CAP: u128 = 10_000_000;

/// Design on the primitive domains. `c[t]` has `nx^(t+1)` entries indexed by
/// the source prefix read as a base-`nx` number, first symbol most significant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrimitiveDesign {
    pub c: Vec<Vec<usize>>,
    pub l: Vec<MemoryRule>,
    #[serde(default)]
    pub g: Vec<DecoderRule>,
}

#[derive(Debug, Clone, Copy)]
pub struct OracleConfig {
    pub cap: u128,
    pub exec: ExecMode,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig { cap: DEFAULT_ORACLE_CAP, exec: ExecMode::default() }
    }
}

#[derive(Debug, Clone)]
pub struct OracleResult {
    pub value: f64,
    pub design: PrimitiveDesign,
    /// Number of (encoder, memory-update) designs enumerated.
    pub count: u128,
    /// Enumeration index of the returned minimizer.
    pub index: u128,
}

fn horizon_of(inst: &ValidatedInstance) -> Result<usize> {
    inst.finite_horizon().ok_or_else(|| Error::BadHorizon("the oracle needs a finite horizon".into()))
}

fn check_design(inst: &ValidatedInstance, c: &[Vec<usize>], l: &[MemoryRule]) -> Result<usize> {
    let a = inst.alphabets();
    let horizon = horizon_of(inst)?;
    if c.len() != horizon {
        return Err(Error::DimensionMismatch(format!("{} encoder tables for horizon {horizon}", c.len())));
    }
    for (t, table) in c.iter().enumerate() {
        let expected = saturating_pow(a.nx, t + 1);
        if table.len() as u128 != expected {
            return Err(Error::DimensionMismatch(format!(
                "encoder table for stage {} has {} entries, expected {expected}",
                t + 1,
                table.len()
            )));
        }
        if table.iter().any(|&z| z >= a.nz) {
            return Err(Error::DimensionMismatch(format!(
                "encoder table for stage {} uses a symbol outside Z",
                t + 1
            )));
        }
    }
    if l.len() != horizon - 1 {
        return Err(Error::DimensionMismatch(format!(
            "{} memory-update rules for horizon {horizon}, expected {}",
            l.len(),
            horizon - 1
        )));
    }
    for rule in l {
        if rule.ny() != a.ny || rule.nm() != a.nm || rule.max_symbol() >= a.nm {
            return Err(Error::DimensionMismatch("memory-update rule shape".into()));
        }
    }
    Ok(horizon)
}

/// Exact joint Pr(X_t = x, Y_t = y, M_{t-1} = m) for every stage, laid out
/// as `[x * ny * nm + y * nm + m]`.
pub fn stage_joints(inst: &ValidatedInstance, c: &[Vec<usize>], l: &[MemoryRule]) -> Result<Vec<Vec<f64>>> {
    let horizon = check_design(inst, c, l)?;
    Ok(stage_joints_unchecked(inst, horizon, c, l))
}

fn stage_joints_unchecked(
    inst: &ValidatedInstance,
    horizon: usize,
    c: &[Vec<usize>],
    l: &[MemoryRule],
) -> Vec<Vec<f64>> {
    let a = inst.alphabets();
    let (nx, ny, nm) = (a.nx, a.ny, a.nm);
    // prefix[(code * nm) + m] = Pr(x^t, m_{t-1})
    let mut prefix = vec![0.0; nx * nm];
    for (x, &p) in inst.initial().iter().enumerate() {
        prefix[x * nm + inst.m0()] = p;
    }
    let mut joints = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let channel = inst.channel(t);
        let last = t + 1 == horizon;
        let mut joint = vec![0.0; nx * ny * nm];
        let mut next = if last { Vec::new() } else { vec![0.0; prefix.len() * nx] };
        for code in 0..prefix.len() / nm {
            let x = code % nx;
            let z = c[t][code];
            for m in 0..nm {
                let w = prefix[code * nm + m];
                if w == 0.0 {
                    continue;
                }
                for (y, &py) in channel.row(z).iter().enumerate() {
                    let p = w * py;
                    joint[x * ny * nm + y * nm + m] += p;
                    if !last {
                        let m_next = l[t].get(y, m);
                        for (x_next, &px) in inst.transition(t).row(x).iter().enumerate() {
                            next[(code * nx + x_next) * nm + m_next] += p * px;
                        }
                    }
                }
            }
        }
        joints.push(joint);
        prefix = next;
    }
    joints
}

fn bayes_column(inst: &ValidatedInstance, t: usize, joint: &[f64], col: usize) -> (f64, usize) {
    let a = inst.alphabets();
    let width = a.ny * a.nm;
    let rho = inst.rho(t);
    let mass: f64 = (0..a.nx).map(|x| joint[x * width + col]).sum();
    if mass <= 0.0 {
        return (0.0, 0);
    }
    let mut best = (f64::INFINITY, 0);
    for xhat in 0..a.nx {
        let v: f64 = (0..a.nx).map(|x| rho.get(x, xhat) * joint[x * width + col]).sum();
        if v < best.0 {
            best = (v, xhat);
        }
    }
    best
}

/// Expected total distortion of a complete design.
pub fn evaluate_exact(design: &PrimitiveDesign, inst: &ValidatedInstance) -> Result<f64> {
    let joints = stage_joints(inst, &design.c, &design.l)?;
    let a = inst.alphabets();
    if design.g.len() != joints.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} decoder tables for horizon {}",
            design.g.len(),
            joints.len()
        )));
    }
    let width = a.ny * a.nm;
    let mut total = 0.0;
    for (t, (joint, g)) in joints.iter().zip(&design.g).enumerate() {
        if g.ny() != a.ny || g.nm() != a.nm || g.max_symbol() >= a.nx {
            return Err(Error::DimensionMismatch("decoder table shape".into()));
        }
        let rho = inst.rho(t);
        for x in 0..a.nx {
            for y in 0..a.ny {
                for m in 0..a.nm {
                    let p = joint[x * width + y * a.nm + m];
                    if p != 0.0 {
                        total += p * rho.get(x, g.get(y, m));
                    }
                }
            }
        }
    }
    Ok(total)
}

/// Bayes decoders for fixed encoders and memory updates: each (y, m) decodes
/// to the reconstruction with least posterior expected distortion, smallest
/// index on ties, 0 for unreachable columns.
pub fn bayes_decoders_for(
    inst: &ValidatedInstance,
    c: &[Vec<usize>],
    l: &[MemoryRule],
) -> Result<Vec<DecoderRule>> {
    let a = inst.alphabets();
    let joints = stage_joints(inst, c, l)?;
    Ok(joints
        .iter()
        .enumerate()
        .map(|(t, joint)| {
            DecoderRule::new(
                a.ny,
                a.nm,
                (0..a.ny * a.nm).map(|col| bayes_column(inst, t, joint, col).1).collect(),
            )
        })
        .collect())
}

fn bayes_value(inst: &ValidatedInstance, joints: &[Vec<f64>]) -> f64 {
    let a = inst.alphabets();
    let mut total = 0.0;
    for (t, joint) in joints.iter().enumerate() {
        for col in 0..a.ny * a.nm {
            total += bayes_column(inst, t, joint, col).0;
        }
    }
    total
}

/// Mixed-radix layout of the (c_1, l_1, c_2, l_2, ..., c_T) enumeration.
struct DesignSpace {
    /// (is_encoder, stage, table entries, radix) per component, most significant first.
    parts: Vec<(bool, usize, usize, usize)>,
    sizes: Vec<u128>,
    count: u128,
}

impl DesignSpace {
    fn new(inst: &ValidatedInstance, horizon: usize) -> DesignSpace {
        let a = inst.alphabets();
        let mut parts = Vec::new();
        for t in 0..horizon {
            parts.push((true, t, a.nx.pow(t as u32 + 1), a.nz));
            if t + 1 < horizon {
                parts.push((false, t, a.ny * a.nm, a.nm));
            }
        }
        let sizes: Vec<u128> = parts
            .iter()
            .map(|&(enc, t, _, radix)| {
                let len = if enc { saturating_pow(a.nx, t + 1) } else { (a.ny * a.nm) as u128 };
                saturating_pow(radix, len as usize)
            })
            .collect();
        let count = sizes.iter().fold(1u128, |acc, &s| acc.saturating_mul(s));
        DesignSpace { parts, sizes, count }
    }

    fn decode(&self, inst: &ValidatedInstance, mut index: u128) -> (Vec<Vec<usize>>, Vec<MemoryRule>) {
        let a = inst.alphabets();
        let mut digits = vec![0u128; self.parts.len()];
        for (d, &s) in digits.iter_mut().zip(&self.sizes).rev() {
            *d = index % s;
            index /= s;
        }
        let mut c = Vec::new();
        let mut l = Vec::new();
        for (&(enc, _, len, radix), &d) in self.parts.iter().zip(&digits) {
            if enc {
                let mut table = vec![0; len];
                let mut rest = d;
                for slot in table.iter_mut().rev() {
                    *slot = (rest % radix as u128) as usize;
                    rest /= radix as u128;
                }
                c.push(table);
            } else {
                l.push(MemoryRule::from_index(a.ny, a.nm, a.nm, d as u64));
            }
        }
        (c, l)
    }
}

/// Number of (encoder, memory-update) designs the oracle would enumerate.
pub fn count_designs(inst: &ValidatedInstance) -> Result<u128> {
    Ok(DesignSpace::new(inst, horizon_of(inst)?).count)
}

/// Exhaustive minimum of the expected distortion over all encoders and
/// memory updates, with Bayes decoders. Returns the first minimizer in
/// enumeration order.
pub fn brute_force_optimum(inst: &ValidatedInstance, cfg: &OracleConfig) -> Result<OracleResult> {
    let horizon = horizon_of(inst)?;
    let space = DesignSpace::new(inst, horizon);
    if space.count > cfg.cap {
        return Err(Error::SearchSpaceExceeded {
            what: "primitive designs".into(),
            count: space.count,
            cap: cfg.cap,
        });
    }
    let best = min_by_index::<Error, _>(cfg.exec, space.count as u64, |i| {
        let (c, l) = space.decode(inst, i as u128);
        Ok(bayes_value(inst, &stage_joints_unchecked(inst, horizon, &c, &l)))
    })?
    .expect("design space is never empty");
    let (c, l) = space.decode(inst, best.1 as u128);
    let g = bayes_decoders_for(inst, &c, &l)?;
    Ok(OracleResult {
        value: best.0,
        design: PrimitiveDesign { c, l, g },
        count: space.count,
        index: best.1 as u128,
    })
}

/// Exhaustive minimum over encoders, memory updates and decoders, with the
/// decoders enumerated rather than derived.
pub fn brute_force_with_decoder_enumeration(
    inst: &ValidatedInstance,
    cfg: &OracleConfig,
) -> Result<(f64, PrimitiveDesign)> {
    let a = inst.alphabets();
    let horizon = horizon_of(inst)?;
    let space = DesignSpace::new(inst, horizon);
    let per_stage = saturating_pow(a.nx, a.ny * a.nm);
    let decoders = saturating_pow(per_stage.min(u128::from(u64::MAX)) as usize, horizon);
    let count = space.count.saturating_mul(decoders);
    if count > cfg.cap {
        return Err(Error::SearchSpaceExceeded {
            what: "primitive designs with enumerated decoders".into(),
            count,
            cap: cfg.cap,
        });
    }
    let decode = |i: u128| {
        let (c, l) = space.decode(inst, i / decoders);
        let mut rest = i % decoders;
        let mut g = Vec::with_capacity(horizon);
        let mut digits = vec![0u128; horizon];
        for d in digits.iter_mut().rev() {
            *d = rest % per_stage;
            rest /= per_stage;
        }
        for d in digits {
            g.push(DecoderRule::from_index(a.ny, a.nm, a.nx, d as u64));
        }
        PrimitiveDesign { c, l, g }
    };
    let best = min_by_index(cfg.exec, count as u64, |i| evaluate_exact(&decode(i as u128), inst))?
        .expect("design space is never empty");
    Ok((best.0, decode(best.1 as u128)))
}

/// Joint `(y, m)` law at a stage, and the memory law after its update
/// (absent at the last stage).
pub type StageConditional = (Vec<f64>, Option<Vec<f64>>);

/// Conditional distributions Pr(Y_t, M_{t-1} | x^t) (row-major, y major) and
/// Pr(M_t | x^t) for every stage of a fixed source realization, by explicit
/// enumeration of every channel-output sequence.
pub fn memory_conditionals(
    inst: &ValidatedInstance,
    c: &[Vec<usize>],
    l: &[MemoryRule],
    xs: &[usize],
) -> Result<Vec<StageConditional>> {
    let horizon = check_design(inst, c, l)?;
    let a = inst.alphabets();
    if xs.len() > horizon || xs.iter().any(|&x| x >= a.nx) {
        return Err(Error::DimensionMismatch("source realization".into()));
    }
    let mut out = Vec::with_capacity(xs.len());
    for t in 1..=xs.len() {
        let zs: Vec<usize> = (0..t)
            .map(|s| {
                let code = xs[..=s].iter().fold(0, |acc, &x| acc * a.nx + x);
                c[s][code]
            })
            .collect();
        let mut joint = vec![0.0; a.ny * a.nm];
        let mut after = vec![0.0; a.nm];
        for seq in 0..a.ny.pow(t as u32) {
            let ys: Vec<usize> = {
                let mut rest = seq;
                let mut v = vec![0; t];
                for slot in v.iter_mut().rev() {
                    *slot = rest % a.ny;
                    rest /= a.ny;
                }
                v
            };
            let mut p = 1.0;
            let mut m = inst.m0();
            for s in 0..t - 1 {
                p *= inst.channel(s).get(zs[s], ys[s]);
                m = l[s].get(ys[s], m);
            }
            p *= inst.channel(t - 1).get(zs[t - 1], ys[t - 1]);
            joint[ys[t - 1] * a.nm + m] += p;
            if t < horizon {
                after[l[t - 1].get(ys[t - 1], m)] += p;
            }
        }
        out.push((joint, (t < horizon).then_some(after)));
    }
    Ok(out)
}
