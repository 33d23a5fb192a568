//! Nested dynamic program over forward-reachable information states.
//!
//! The encoder step minimizes, over every assignment of channel symbols to the
//! support of the current encoder information state, the Bayes stage cost plus
//! the (discounted) value of the resulting memory-update information state.
//! The memory-update step minimizes over every memory-update table. Values are
//! memoized on (remaining depth, rounded canonical state); each node is
//! recomputed from its rounded key so results do not depend on which path or
//! worker reached it first.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use dashmap::DashMap;

use crate::belief::{
    apply_q, apply_qhat, canonicalize, initial_info_state, nu, stage_cost, Atom, AtomValue, Belief,
    DecoderRule, EncAssignment, EncInfoState, InfoState, JointYM, MemInfoState, MemoryRule, Tolerance,
    KEY_SCALE,
};
use crate::error::{Error, Result};
use crate::exec::{map_indices, ExecMode};
use crate::model::{Matrix, ValidatedInstance};

pub const DEFAULT_ENUM_CAP: u64 = 1_000_000;
pub const DEFAULT_STATE_CAP: usize = 5_000_000;
/// A candidate replaces the incumbent only if it improves by more than this.
pub const IMPROVEMENT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy)]
pub struct SolverConfig {
    /// Maximum encoder assignments enumerated at one node.
    pub assignment_cap: u64,
    /// Maximum number of memory-update tables.
    pub rule_cap: u64,
    /// Maximum number of memoized information states.
    pub state_cap: usize,
    pub tol: Tolerance,
    pub exec: ExecMode,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            assignment_cap: DEFAULT_ENUM_CAP,
            rule_cap: DEFAULT_ENUM_CAP,
            state_cap: DEFAULT_STATE_CAP,
            tol: Tolerance::default(),
            exec: ExecMode::default(),
        }
    }
}

/// `base^exp`, saturating at `u128::MAX`.
pub(crate) fn saturating_pow(base: usize, exp: usize) -> u128 {
    let mut acc: u128 = 1;
    for _ in 0..exp {
        acc = acc.saturating_mul(base as u128);
    }
    acc
}

fn check_cap(what: &str, count: u128, cap: u64) -> Result<u64> {
    if count > cap as u128 {
        return Err(Error::SearchSpaceExceeded { what: what.to_string(), count, cap: cap as u128 });
    }
    Ok(count as u64)
}

/// Channel symbols for each support position at `index` of the
/// lexicographic enumeration, position 0 most significant.
pub fn assignment_digits(k: usize, nz: usize, mut index: u64) -> Vec<usize> {
    let mut zs = vec![0; k];
    for slot in zs.iter_mut().rev() {
        *slot = (index % nz as u64) as usize;
        index /= nz as u64;
    }
    zs
}

/// Every map from the support of `pi` to channel symbols, in lexicographic order.
pub fn enumerate_enc_assignments(pi: &EncInfoState, nz: usize, cap: u64) -> Result<Vec<EncAssignment>> {
    let count = check_cap("encoder assignments", saturating_pow(nz, pi.len()), cap)?;
    Ok((0..count).map(|i| EncAssignment::from_support(pi, &assignment_digits(pi.len(), nz, i))).collect())
}

/// Every memory-update table on Y x M, in lexicographic order.
pub fn enumerate_memory_rules(ny: usize, nm: usize, cap: u64) -> Result<Vec<MemoryRule>> {
    let count = check_cap("memory-update rules", saturating_pow(nm, ny * nm), cap)?;
    Ok((0..count).map(|i| MemoryRule::from_index(ny, nm, nm, i)).collect())
}

/// Rules chosen at one stage together with the states they act on.
#[derive(Debug, Clone)]
pub struct StageRules {
    /// 1-based stage index.
    pub t: usize,
    pub c: EncAssignment,
    /// Memory update after this stage; `None` at the last stage.
    pub l: Option<MemoryRule>,
    pub g: DecoderRule,
    pub pi: EncInfoState,
    pub phi: MemInfoState,
    /// Undiscounted expected distortion at this stage.
    pub stage_cost_value: f64,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub value: f64,
    pub stages: Vec<StageRules>,
    pub states_explored: usize,
    pub atoms_max: usize,
    pub wall_time: Duration,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct Key {
    depth: u32,
    state: Vec<i64>,
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    value: f64,
    choice: u64,
}

fn snap<V: AtomValue>(state: &[i64], width: usize, make: impl Fn(Vec<f64>) -> V) -> InfoState<V> {
    let atoms = state
        .chunks(2 + width)
        .map(|c| Atom {
            x: c[0] as usize,
            weight: c[1] as f64 / KEY_SCALE,
            value: make(c[2..].iter().map(|&v| v as f64 / KEY_SCALE).collect()),
        })
        .collect();
    InfoState::from_canonical_atoms(atoms)
}

/// First index whose value improves on the incumbent by more than
/// [`IMPROVEMENT_TOL`], scanning in enumeration order.
fn first_minimizer(values: &[f64]) -> (f64, u64) {
    let mut best = (values[0], 0u64);
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v < best.0 - IMPROVEMENT_TOL {
            best = (v, i as u64);
        }
    }
    best
}

/// Memoized nested DP over information states.
///
/// In time-varying mode (`horizon = Some(T)`) a node at remaining depth `n`
/// belongs to 0-based stage `T - n`. In time-invariant mode the stage is
/// irrelevant, so one table serves every horizon.
pub struct InfoStateDp<'a> {
    inst: &'a ValidatedInstance,
    cfg: SolverConfig,
    discount: f64,
    horizon: Option<usize>,
    rules: std::result::Result<Vec<MemoryRule>, (u128, u64)>,
    enc_memo: DashMap<Key, Entry>,
    mem_memo: DashMap<Key, Entry>,
    atoms_max: AtomicUsize,
}

impl<'a> InfoStateDp<'a> {
    fn build(inst: &'a ValidatedInstance, cfg: SolverConfig, discount: f64, horizon: Option<usize>) -> Self {
        let a = inst.alphabets();
        let count = saturating_pow(a.nm, a.ny * a.nm);
        let rules = if count <= cfg.rule_cap as u128 {
            Ok(enumerate_memory_rules(a.ny, a.nm, cfg.rule_cap).expect("checked above"))
        } else {
            Err((count, cfg.rule_cap))
        };
        InfoStateDp {
            inst,
            cfg,
            discount,
            horizon,
            rules,
            enc_memo: DashMap::new(),
            mem_memo: DashMap::new(),
            atoms_max: AtomicUsize::new(0),
        }
    }

    /// Undiscounted DP for a finite-horizon instance.
    pub fn finite(inst: &'a ValidatedInstance, cfg: SolverConfig) -> Result<Self> {
        let t = inst.finite_horizon().ok_or_else(|| Error::BadHorizon("expected a finite horizon".into()))?;
        let horizon = if inst.is_time_invariant() { None } else { Some(t) };
        Ok(Self::build(inst, cfg, 1.0, horizon))
    }

    /// Time-invariant DP with per-stage discount factor `beta`, usable at any depth.
    pub fn time_invariant(inst: &'a ValidatedInstance, beta: f64, cfg: SolverConfig) -> Result<Self> {
        if !inst.is_time_invariant() {
            return Err(Error::BadHorizon("time-invariant recursion requires time-invariant models".into()));
        }
        Ok(Self::build(inst, cfg, beta, None))
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    fn stage(&self, depth: usize) -> usize {
        self.horizon.map_or(0, |t| t - depth)
    }

    fn check_depth(&self, depth: usize) -> Result<()> {
        if depth == 0 {
            return Err(Error::BadHorizon("depth must be at least 1".into()));
        }
        if let Some(t) = self.horizon {
            if depth > t {
                return Err(Error::BadHorizon(format!("depth {depth} exceeds horizon {t}")));
            }
        }
        Ok(())
    }

    fn rules(&self) -> Result<&[MemoryRule]> {
        self.rules.as_deref().map_err(|&(count, cap)| Error::SearchSpaceExceeded {
            what: "memory-update rules".into(),
            count,
            cap: cap as u128,
        })
    }

    fn snap_enc(&self, state: &[i64]) -> EncInfoState {
        snap(state, self.inst.alphabets().nm, Belief)
    }

    fn snap_mem(&self, state: &[i64]) -> MemInfoState {
        let a = self.inst.alphabets();
        snap(state, a.ny * a.nm, |v| JointYM::new(a.ny, a.nm, v))
    }

    fn insert(&self, memo: &DashMap<Key, Entry>, key: Key, entry: Entry, atoms: usize) -> Result<()> {
        self.atoms_max.fetch_max(atoms, Ordering::Relaxed);
        memo.insert(key, entry);
        let total = self.enc_memo.len() + self.mem_memo.len();
        if total > self.cfg.state_cap {
            return Err(Error::SearchSpaceExceeded {
                what: "memoized information states".into(),
                count: total as u128,
                cap: self.cfg.state_cap as u128,
            });
        }
        Ok(())
    }

    fn phi_from_digits(&self, pi: &EncInfoState, zs: &[usize], channel: &Matrix) -> Result<MemInfoState> {
        let atoms = pi
            .atoms()
            .iter()
            .zip(zs)
            .map(|(a, &z)| Atom { x: a.x, value: nu(&a.value, z, channel), weight: a.weight })
            .collect();
        canonicalize(atoms, &self.cfg.tol)
    }

    /// Optimal value with `depth` stages to go from encoder state `pi`.
    pub fn value(&self, depth: usize, pi: &EncInfoState) -> Result<f64> {
        self.check_depth(depth)?;
        self.enc_value(depth, pi.key())
    }

    fn enc_value(&self, depth: usize, state: Vec<i64>) -> Result<f64> {
        let key = Key { depth: depth as u32, state };
        if let Some(e) = self.enc_memo.get(&key) {
            return Ok(e.value);
        }
        let pi = self.snap_enc(&key.state);
        let fixed = vec![None; pi.len()];
        let (value, choice) = self.best_assignment_index(depth, &pi, &fixed, None)?;
        self.insert(&self.enc_memo, key, Entry { value, choice }, pi.len())?;
        Ok(value)
    }

    /// Minimizes over assignments that agree with `fixed` where it is `Some`.
    /// With `first_rule`, the memory update after this stage is pinned to it.
    /// Returns the value and the index among the free positions.
    fn best_assignment_index(
        &self,
        depth: usize,
        pi: &EncInfoState,
        fixed: &[Option<usize>],
        first_rule: Option<&MemoryRule>,
    ) -> Result<(f64, u64)> {
        let nz = self.inst.alphabets().nz;
        let free: Vec<usize> = (0..pi.len()).filter(|&i| fixed[i].is_none()).collect();
        let count =
            check_cap("encoder assignments", saturating_pow(nz, free.len()), self.cfg.assignment_cap)?;
        let stage = self.stage(depth);
        let channel = self.inst.channel(stage);
        let rho = self.inst.rho(stage);
        let values = map_indices(self.cfg.exec, count, |i| {
            let digits = assignment_digits(free.len(), nz, i);
            let mut zs: Vec<usize> = fixed.iter().map(|z| z.unwrap_or(0)).collect();
            for (&pos, &z) in free.iter().zip(&digits) {
                zs[pos] = z;
            }
            let phi = self.phi_from_digits(pi, &zs, channel)?;
            let (cost, _) = stage_cost(&phi, rho);
            let cont = match first_rule {
                Some(l) if depth > 1 => {
                    let phi_s = self.snap_mem(&phi.key());
                    let next = apply_qhat(&phi_s, l, self.inst.transition(stage), &self.cfg.tol)?;
                    self.enc_value(depth - 1, next.key())?
                }
                _ => self.mem_value(depth, phi.key())?,
            };
            Ok(cost + self.discount * cont)
        })?;
        Ok(first_minimizer(&values))
    }

    /// Full assignment vector (over all support positions) minimizing the
    /// value at `pi`, subject to `fixed` and an optional pinned first rule.
    pub fn best_assignment(
        &self,
        depth: usize,
        pi: &EncInfoState,
        fixed: &[Option<usize>],
        first_rule: Option<&MemoryRule>,
    ) -> Result<(f64, Vec<usize>)> {
        self.check_depth(depth)?;
        let pi = self.snap_enc(&pi.key());
        let (value, index) = self.best_assignment_index(depth, &pi, fixed, first_rule)?;
        let free: Vec<usize> = (0..pi.len()).filter(|&i| fixed[i].is_none()).collect();
        let digits = assignment_digits(free.len(), self.inst.alphabets().nz, index);
        let mut zs: Vec<usize> = fixed.iter().map(|z| z.unwrap_or(0)).collect();
        for (&pos, &z) in free.iter().zip(&digits) {
            zs[pos] = z;
        }
        Ok((value, zs))
    }

    /// Value of a memory-update state whose encoder step had `depth` stages to go.
    fn mem_value(&self, depth: usize, state: Vec<i64>) -> Result<f64> {
        let key = Key { depth: depth as u32, state };
        if let Some(e) = self.mem_memo.get(&key) {
            return Ok(e.value);
        }
        let (value, choice) = if depth == 1 {
            (0.0, 0)
        } else {
            let phi = self.snap_mem(&key.state);
            let rules = self.rules()?;
            let transition = self.inst.transition(self.stage(depth));
            let values = map_indices(self.cfg.exec, rules.len() as u64, |r| {
                let next = apply_qhat(&phi, &rules[r as usize], transition, &self.cfg.tol)?;
                self.enc_value(depth - 1, next.key())
            })?;
            first_minimizer(&values)
        };
        let a = self.inst.alphabets();
        let atoms = key.state.len() / (2 + a.ny * a.nm);
        self.insert(&self.mem_memo, key, Entry { value, choice }, atoms)?;
        Ok(value)
    }

    /// Optimal rules along the path from `pi`, `depth` stages deep.
    pub fn rules_from(&self, depth: usize, pi: &EncInfoState) -> Result<Vec<StageRules>> {
        self.value(depth, pi)?;
        let a = self.inst.alphabets();
        let mut key = pi.key();
        let mut out = Vec::with_capacity(depth);
        for step in 0..depth {
            let n = depth - step;
            let stage = self.stage(n);
            let entry =
                *self.enc_memo.get(&Key { depth: n as u32, state: key.clone() }).expect("node solved above");
            let pi_s = self.snap_enc(&key);
            let zs = assignment_digits(pi_s.len(), a.nz, entry.choice);
            let phi = self.phi_from_digits(&pi_s, &zs, self.inst.channel(stage))?;
            let (cost, g) = stage_cost(&phi, self.inst.rho(stage));
            let phi_key = phi.key();
            let l = if n > 1 {
                let e = *self
                    .mem_memo
                    .get(&Key { depth: n as u32, state: phi_key.clone() })
                    .expect("child solved above");
                let l = self.rules()?[e.choice as usize].clone();
                let next =
                    apply_qhat(&self.snap_mem(&phi_key), &l, self.inst.transition(stage), &self.cfg.tol)?;
                key = next.key();
                Some(l)
            } else {
                None
            };
            out.push(StageRules {
                t: step + 1,
                c: EncAssignment::from_support(&pi_s, &zs),
                l,
                g,
                pi: pi_s,
                phi,
                stage_cost_value: cost,
            });
        }
        Ok(out)
    }

    /// Memory-update rule chosen at `phi` when its encoder step had `depth` to go.
    pub fn best_rule(&self, depth: usize, phi: &MemInfoState) -> Result<Option<MemoryRule>> {
        if depth < 2 {
            return Ok(None);
        }
        let key = phi.key();
        self.mem_value(depth, key.clone())?;
        let e = *self.mem_memo.get(&Key { depth: depth as u32, state: key }).expect("solved above");
        Ok(Some(self.rules()?[e.choice as usize].clone()))
    }

    pub fn states_explored(&self) -> usize {
        self.enc_memo.len() + self.mem_memo.len()
    }

    pub fn atoms_max(&self) -> usize {
        self.atoms_max.load(Ordering::Relaxed)
    }

    /// Every memoized memory-update state with the 0-based stage it belongs to.
    pub fn explored_mem_states(&self) -> Vec<(usize, MemInfoState)> {
        let mut out: Vec<(usize, MemInfoState)> = self
            .mem_memo
            .iter()
            .map(|e| (self.stage(e.key().depth as usize), self.snap_mem(&e.key().state)))
            .collect();
        out.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.key().cmp(&b.1.key())));
        out
    }

    /// Re-evaluates the optimality equation at every memoized node from the
    /// stored child values and returns the largest discrepancy.
    pub fn bellman_residual(&self) -> Result<f64> {
        let enc: Vec<(Key, Entry)> = self.enc_memo.iter().map(|e| (e.key().clone(), *e.value())).collect();
        let mem: Vec<(Key, Entry)> = self.mem_memo.iter().map(|e| (e.key().clone(), *e.value())).collect();
        let nz = self.inst.alphabets().nz;
        let mut worst: f64 = 0.0;
        for (key, entry) in enc {
            let n = key.depth as usize;
            let stage = self.stage(n);
            let pi = self.snap_enc(&key.state);
            let mut best = f64::INFINITY;
            for i in 0..saturating_pow(nz, pi.len()) as u64 {
                let zs = assignment_digits(pi.len(), nz, i);
                let phi = self.phi_from_digits(&pi, &zs, self.inst.channel(stage))?;
                let cost = stage_cost(&phi, self.inst.rho(stage)).0;
                let child = self.mem_memo.get(&Key { depth: key.depth, state: phi.key() }).map(|e| e.value);
                let cont = match child {
                    Some(v) => v,
                    None => self.mem_value(n, phi.key())?,
                };
                best = best.min(cost + self.discount * cont);
            }
            worst = worst.max((best - entry.value).abs());
        }
        for (key, entry) in mem {
            let n = key.depth as usize;
            if n == 1 {
                worst = worst.max(entry.value.abs());
                continue;
            }
            let phi = self.snap_mem(&key.state);
            let mut best = f64::INFINITY;
            for l in self.rules()? {
                let next = apply_qhat(&phi, l, self.inst.transition(self.stage(n)), &self.cfg.tol)?;
                best = best.min(self.enc_value(n - 1, next.key())?);
            }
            worst = worst.max((best - entry.value).abs());
        }
        Ok(worst)
    }
}

/// Solves a finite-horizon instance exactly.
pub fn solve_finite(inst: &ValidatedInstance, cfg: &SolverConfig) -> Result<SolveResult> {
    let start = Instant::now();
    let horizon = inst
        .finite_horizon()
        .ok_or_else(|| Error::BadHorizon("solve_finite needs a finite horizon".into()))?;
    let dp = InfoStateDp::finite(inst, *cfg)?;
    let pi1 = initial_info_state(inst);
    let value = dp.value(horizon, &pi1)?;
    let stages = dp.rules_from(horizon, &pi1)?;
    Ok(SolveResult {
        value,
        stages,
        states_explored: dp.states_explored(),
        atoms_max: dp.atoms_max(),
        wall_time: start.elapsed(),
    })
}

/// Expected total distortion of a stage-rule design under Bayes decoding,
/// by forward propagation of the information states.
pub fn value_of_design(inst: &ValidatedInstance, rules: &[StageRules], tol: &Tolerance) -> Result<f64> {
    let horizon = inst
        .finite_horizon()
        .ok_or_else(|| Error::BadHorizon("value_of_design needs a finite horizon".into()))?;
    if rules.len() != horizon {
        return Err(Error::DimensionMismatch(format!(
            "design has {} stages, horizon is {horizon}",
            rules.len()
        )));
    }
    let mut pi = initial_info_state(inst);
    let mut total = 0.0;
    for (t, r) in rules.iter().enumerate() {
        let phi = apply_q(&pi, &r.c, inst.channel(t), tol)?;
        total += stage_cost(&phi, inst.rho(t)).0;
        if t + 1 < horizon {
            let l = r.l.as_ref().ok_or_else(|| {
                Error::DimensionMismatch(format!("stage {} lacks a memory-update rule", t + 1))
            })?;
            pi = apply_qhat(&phi, l, inst.transition(t), tol)?;
        }
    }
    Ok(total)
}
