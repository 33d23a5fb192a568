//! Design files and conversions between design representations.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::belief::{
    apply_q, apply_qhat, initial_info_state, nu, psi, stage_cost, Belief, DecoderRule, EncAssignment,
    MemoryRule, Tolerance,
};
use crate::error::{Error, Result};
use crate::model::ValidatedInstance;
use crate::oracle::PrimitiveDesign;
use crate::solver_finite::StageRules;
use crate::solver_infinite::StationaryDesign;

/// Rule tables of one stage as stored in a design file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageRulesFile {
    pub t: usize,
    pub c: EncAssignment,
    pub l: Option<MemoryRule>,
    pub g: DecoderRule,
}

impl From<&StageRules> for StageRulesFile {
    fn from(s: &StageRules) -> Self {
        StageRulesFile { t: s.t, c: s.c.clone(), l: s.l.clone(), g: s.g.clone() }
    }
}

/// On-disk design: one of the three representations the simulator accepts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DesignFile {
    Primitive(PrimitiveDesign),
    StageRules(Vec<StageRulesFile>),
    Stationary(StationaryDesign),
}

pub fn parse_design(text: &str) -> Result<DesignFile> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        Error::Parse { path, line: inner.line(), column: inner.column(), message: inner.to_string() }
    })
}

pub fn load_design(path: impl AsRef<Path>) -> Result<DesignFile> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| Error::Io { path: path.display().to_string(), source })?;
    parse_design(&text)
}

/// Rebuilds full stage rules (states and stage costs) from stored tables by
/// propagating the information states forward.
pub fn stage_rules_from_file(
    inst: &ValidatedInstance,
    files: &[StageRulesFile],
    tol: &Tolerance,
) -> Result<Vec<StageRules>> {
    let horizon = inst
        .finite_horizon()
        .ok_or_else(|| Error::BadHorizon("stage-rule designs need a finite horizon".into()))?;
    if files.len() != horizon {
        return Err(Error::DimensionMismatch(format!(
            "design has {} stages, horizon is {horizon}",
            files.len()
        )));
    }
    let a = inst.alphabets();
    let mut pi = initial_info_state(inst);
    let mut out = Vec::with_capacity(horizon);
    for (t, f) in files.iter().enumerate() {
        if f.g.ny() != a.ny || f.g.nm() != a.nm || f.g.max_symbol() >= a.nx {
            return Err(Error::DimensionMismatch(format!("decoder table at stage {}", t + 1)));
        }
        let phi = apply_q(&pi, &f.c, inst.channel(t), tol)?;
        let cost = stage_cost(&phi, inst.rho(t)).0;
        let next = if t + 1 < horizon {
            let l = f.l.as_ref().ok_or_else(|| {
                Error::DimensionMismatch(format!("stage {} lacks a memory-update rule", t + 1))
            })?;
            if l.ny() != a.ny || l.nm() != a.nm || l.max_symbol() >= a.nm {
                return Err(Error::DimensionMismatch(format!("memory-update table at stage {}", t + 1)));
            }
            Some(apply_qhat(&phi, l, inst.transition(t), tol)?)
        } else {
            None
        };
        out.push(StageRules {
            t: t + 1,
            c: f.c.clone(),
            l: if t + 1 < horizon { f.l.clone() } else { None },
            g: f.g.clone(),
            pi: pi.clone(),
            phi,
            stage_cost_value: cost,
        });
        if let Some(n) = next {
            pi = n;
        }
    }
    Ok(out)
}

/// Expresses a stage-rule design on the primitive domain by running the
/// encoder's belief recursion along every source prefix. Prefixes whose
/// belief is not covered (probability zero or below the weight floor) map
/// to symbol 0.
pub fn primitive_from_stage_rules(
    inst: &ValidatedInstance,
    rules: &[StageRules],
    tol: f64,
) -> PrimitiveDesign {
    let a = inst.alphabets();
    let horizon = rules.len();
    let mut c = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let size = a.nx.pow(t as u32 + 1);
        let mut table = Vec::with_capacity(size);
        for code in 0..size {
            let mut xs = vec![0; t + 1];
            let mut rest = code;
            for slot in xs.iter_mut().rev() {
                *slot = rest % a.nx;
                rest /= a.nx;
            }
            let mut b = Belief::point_mass(a.nm, inst.m0());
            let mut covered = true;
            for (s, &x) in xs[..t].iter().enumerate() {
                match rules[s].c.lookup(x, b.probs(), tol) {
                    Some(z) => {
                        let l = rules[s].l.as_ref().expect("non-final stage has l");
                        b = psi(&nu(&b, z, inst.channel(s)), l);
                    }
                    None => {
                        covered = false;
                        break;
                    }
                }
            }
            let z = if covered { rules[t].c.lookup(xs[t], b.probs(), tol).unwrap_or(0) } else { 0 };
            table.push(z);
        }
        c.push(table);
    }
    PrimitiveDesign {
        c,
        l: rules
            .iter()
            .take(horizon.saturating_sub(1))
            .map(|r| r.l.clone().expect("non-final stage has l"))
            .collect(),
        g: rules.iter().map(|r| r.g.clone()).collect(),
    }
}
