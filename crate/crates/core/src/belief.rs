//! Encoder beliefs and the information-state transforms.
//!
//! An encoder information state is a finitely supported distribution over
//! (source symbol, belief about receiver memory); a memory-update information
//! state is one over (source symbol, joint belief about channel output and
//! previous memory). Both are stored as weighted atom lists and kept in a
//! canonical form so that equal states compare and hash equal.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Matrix, ValidatedInstance};

pub const MERGE_TOL: f64 = 1e-9;
pub const WEIGHT_FLOOR: f64 = 1e-12;
/// Scale used for the 12-decimal rounding of sort and memo keys.
pub const KEY_SCALE: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    /// Atoms whose vectors agree within this sup-norm distance are merged.
    pub merge: f64,
    /// Atoms lighter than this are dropped.
    pub weight_floor: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance { merge: MERGE_TOL, weight_floor: WEIGHT_FLOOR }
    }
}

#[inline]
pub(crate) fn round_key(v: f64) -> i64 {
    (v * KEY_SCALE).round() as i64
}

pub(crate) fn sup_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Encoder's belief about the receiver memory content.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Belief(pub Vec<f64>);

impl Belief {
    pub fn point_mass(nm: usize, m: usize) -> Belief {
        let mut p = vec![0.0; nm];
        p[m] = 1.0;
        Belief(p)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }
}

/// Joint belief about (channel output, previous memory), stored row-major by y.
#[derive(Debug, Clone, PartialEq)]
pub struct JointYM {
    ny: usize,
    nm: usize,
    probs: Vec<f64>,
}

impl JointYM {
    pub fn new(ny: usize, nm: usize, probs: Vec<f64>) -> JointYM {
        assert_eq!(probs.len(), ny * nm);
        JointYM { ny, nm, probs }
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn nm(&self) -> usize {
        self.nm
    }

    #[inline]
    pub fn get(&self, y: usize, m: usize) -> f64 {
        self.probs[y * self.nm + m]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

/// Vector payload of an atom.
pub trait AtomValue: Clone + Send + Sync {
    fn values(&self) -> &[f64];
    fn with_values(&self, values: Vec<f64>) -> Self;
}

impl AtomValue for Belief {
    fn values(&self) -> &[f64] {
        &self.0
    }

    fn with_values(&self, values: Vec<f64>) -> Self {
        Belief(values)
    }
}

impl AtomValue for JointYM {
    fn values(&self) -> &[f64] {
        &self.probs
    }

    fn with_values(&self, values: Vec<f64>) -> Self {
        JointYM::new(self.ny, self.nm, values)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Atom<V> {
    pub x: usize,
    pub value: V,
    pub weight: f64,
}

/// Finitely supported distribution on (source symbol, vector) pairs, in
/// canonical form.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoState<V> {
    atoms: Vec<Atom<V>>,
}

pub type EncInfoState = InfoState<Belief>;
pub type MemInfoState = InfoState<JointYM>;

impl<V: AtomValue> InfoState<V> {
    /// Wraps atoms already known to be canonical.
    pub(crate) fn from_canonical_atoms(atoms: Vec<Atom<V>>) -> Self {
        InfoState { atoms }
    }

    pub fn atoms(&self) -> &[Atom<V>] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight).sum()
    }

    pub fn into_atoms(self) -> Vec<Atom<V>> {
        self.atoms
    }

    /// Marginal distribution of the source symbol.
    pub fn x_marginal(&self, nx: usize) -> Vec<f64> {
        let mut out = vec![0.0; nx];
        for a in &self.atoms {
            out[a.x] += a.weight;
        }
        out
    }

    /// Memo/hash key: 12-decimal rounding of every weight and vector entry.
    pub fn key(&self) -> Vec<i64> {
        let width = self.atoms.first().map_or(0, |a| a.value.values().len());
        let mut key = Vec::with_capacity(self.atoms.len() * (2 + width));
        for a in &self.atoms {
            key.push(a.x as i64);
            key.push(round_key(a.weight));
            key.extend(a.value.values().iter().map(|&v| round_key(v)));
        }
        key
    }

    /// Sup-norm closeness of two canonical states, atom by atom.
    pub fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        self.atoms.len() == other.atoms.len()
            && self.atoms.iter().zip(&other.atoms).all(|(a, b)| {
                a.x == b.x
                    && (a.weight - b.weight).abs() <= tol
                    && sup_dist(a.value.values(), b.value.values()) <= tol
            })
    }
}

/// Atom union with weights scaled by `alpha` and `1 - alpha`. Not canonical.
pub fn mix<V: AtomValue>(alpha: f64, a: &InfoState<V>, b: &InfoState<V>) -> Vec<Atom<V>> {
    let scaled = |s: &InfoState<V>, f: f64| {
        s.atoms
            .iter()
            .map(move |at| Atom { x: at.x, value: at.value.clone(), weight: f * at.weight })
            .collect::<Vec<_>>()
    };
    let mut out = scaled(a, alpha);
    out.extend(scaled(b, 1.0 - alpha));
    out
}

fn total_order<V: AtomValue>(a: &Atom<V>, b: &Atom<V>) -> Ordering {
    a.x.cmp(&b.x)
        .then_with(|| {
            a.value
                .values()
                .iter()
                .zip(b.value.values())
                .map(|(p, q)| p.total_cmp(q))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
        .then_with(|| a.weight.total_cmp(&b.weight))
}

fn rounded_order<V: AtomValue>(a: &Atom<V>, b: &Atom<V>) -> Ordering {
    a.x.cmp(&b.x)
        .then_with(|| {
            a.value
                .values()
                .iter()
                .zip(b.value.values())
                .map(|(&p, &q)| round_key(p).cmp(&round_key(q)))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
        .then_with(|| total_order(a, b))
}

/// Brings an atom list into canonical form: drops atoms below the weight
/// floor, merges atoms with equal source symbol whose vectors agree within
/// the merge tolerance (weight-averaged vector), renormalizes the weights,
/// and sorts by (x, rounded vector). The result depends only on the multiset
/// of input atoms, not on their order.
pub fn canonicalize<V: AtomValue>(atoms: Vec<Atom<V>>, tol: &Tolerance) -> Result<InfoState<V>> {
    let mut atoms: Vec<Atom<V>> = atoms.into_iter().filter(|a| a.weight >= tol.weight_floor).collect();
    if atoms.is_empty() {
        return Err(Error::EmptyState);
    }
    atoms.sort_by(total_order);

    // (representative index, accumulated weight, weighted vector sum)
    struct Cluster {
        rep: usize,
        weight: f64,
        sum: Vec<f64>,
        members: usize,
    }
    let mut clusters: Vec<Cluster> = Vec::new();
    for (i, a) in atoms.iter().enumerate() {
        let v = a.value.values();
        let hit = clusters.iter_mut().find(|c| {
            let r = &atoms[c.rep];
            r.x == a.x && sup_dist(r.value.values(), v) <= tol.merge
        });
        match hit {
            Some(c) => {
                c.weight += a.weight;
                c.sum.iter_mut().zip(v).for_each(|(s, &p)| *s += a.weight * p);
                c.members += 1;
            }
            None => clusters.push(Cluster {
                rep: i,
                weight: a.weight,
                sum: v.iter().map(|&p| a.weight * p).collect(),
                members: 1,
            }),
        }
    }

    let total: f64 = clusters.iter().map(|c| c.weight).sum();
    let mut out: Vec<Atom<V>> = clusters
        .into_iter()
        .map(|c| {
            let rep = &atoms[c.rep];
            let value = if c.members == 1 {
                rep.value.clone()
            } else {
                rep.value.with_values(c.sum.iter().map(|s| s / c.weight).collect())
            };
            Atom { x: rep.x, value, weight: c.weight / total }
        })
        .collect();
    out.sort_by(rounded_order);
    Ok(InfoState { atoms: out })
}

/// Deterministic memory-update rule `l(y, m)`, row-major by y.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "Vec<Vec<usize>>", try_from = "Vec<Vec<usize>>")]
pub struct MemoryRule {
    ny: usize,
    nm: usize,
    table: Vec<usize>,
}

/// Decoding rule `g(y, m)` into the reconstruction alphabet, row-major by y.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "Vec<Vec<usize>>", try_from = "Vec<Vec<usize>>")]
pub struct DecoderRule {
    ny: usize,
    nm: usize,
    table: Vec<usize>,
}

macro_rules! ym_table {
    ($name:ident) => {
        impl $name {
            pub fn new(ny: usize, nm: usize, table: Vec<usize>) -> $name {
                assert_eq!(table.len(), ny * nm);
                $name { ny, nm, table }
            }

            pub fn constant(ny: usize, nm: usize, v: usize) -> $name {
                $name::new(ny, nm, vec![v; ny * nm])
            }

            pub fn from_fn(ny: usize, nm: usize, f: impl Fn(usize, usize) -> usize) -> $name {
                let table =
                    (0..ny).flat_map(|y| (0..nm).map(move |m| (y, m))).map(|(y, m)| f(y, m)).collect();
                $name { ny, nm, table }
            }

            /// Table at position `index` of the lexicographic enumeration of
            /// all `radix^(ny*nm)` tables, entry (0,0) most significant.
            pub fn from_index(ny: usize, nm: usize, radix: usize, mut index: u64) -> $name {
                let mut table = vec![0; ny * nm];
                for slot in table.iter_mut().rev() {
                    *slot = (index % radix as u64) as usize;
                    index /= radix as u64;
                }
                $name { ny, nm, table }
            }

            #[inline]
            pub fn get(&self, y: usize, m: usize) -> usize {
                self.table[y * self.nm + m]
            }

            pub fn ny(&self) -> usize {
                self.ny
            }

            pub fn nm(&self) -> usize {
                self.nm
            }

            pub fn table(&self) -> &[usize] {
                &self.table
            }

            pub fn max_symbol(&self) -> usize {
                self.table.iter().copied().max().unwrap_or(0)
            }
        }

        impl From<$name> for Vec<Vec<usize>> {
            fn from(r: $name) -> Self {
                r.table.chunks(r.nm).map(<[usize]>::to_vec).collect()
            }
        }

        impl TryFrom<Vec<Vec<usize>>> for $name {
            type Error = String;

            fn try_from(rows: Vec<Vec<usize>>) -> std::result::Result<Self, String> {
                let nm = rows.first().map_or(0, Vec::len);
                if rows.is_empty() || nm == 0 || rows.iter().any(|r| r.len() != nm) {
                    return Err("rule table must be a non-empty rectangular ny x nm array".into());
                }
                Ok($name { ny: rows.len(), nm, table: rows.into_iter().flatten().collect() })
            }
        }
    };
}

ym_table!(MemoryRule);
ym_table!(DecoderRule);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssignmentEntry {
    pub x: usize,
    pub belief: Belief,
    pub z: usize,
}

/// Encoding rule restricted to finitely many (source symbol, belief) pairs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EncAssignment {
    entries: Vec<AssignmentEntry>,
}

impl EncAssignment {
    /// Assigns `zs[i]` to the i-th atom of `pi`.
    pub fn from_support(pi: &EncInfoState, zs: &[usize]) -> EncAssignment {
        assert_eq!(pi.len(), zs.len());
        EncAssignment {
            entries: pi
                .atoms()
                .iter()
                .zip(zs)
                .map(|(a, &z)| AssignmentEntry { x: a.x, belief: a.value.clone(), z })
                .collect(),
        }
    }

    pub fn constant(pi: &EncInfoState, z: usize) -> EncAssignment {
        EncAssignment::from_support(pi, &vec![z; pi.len()])
    }

    pub fn from_entries(entries: Vec<AssignmentEntry>) -> EncAssignment {
        EncAssignment { entries }
    }

    pub fn entries(&self) -> &[AssignmentEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Image of the closest stored pair with the same x within `tol`.
    pub fn lookup(&self, x: usize, b: &[f64], tol: f64) -> Option<usize> {
        self.entries
            .iter()
            .filter(|e| e.x == x)
            .map(|e| (sup_dist(e.belief.probs(), b), e.z))
            .filter(|&(d, _)| d <= tol)
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, z)| z)
    }

    pub fn push(&mut self, x: usize, belief: Belief, z: usize) {
        self.entries.push(AssignmentEntry { x, belief, z });
    }
}

/// Joint belief on (Y_t, M_{t-1}) given the memory belief and the channel input.
pub fn nu(b: &Belief, z: usize, channel: &Matrix) -> JointYM {
    let nm = b.0.len();
    let row = channel.row(z);
    let mut probs = Vec::with_capacity(row.len() * nm);
    for &py in row {
        probs.extend(b.0.iter().map(|&pm| py * pm));
    }
    JointYM::new(row.len(), nm, probs)
}

/// Memory belief after the receiver applies `l`.
pub fn psi(q: &JointYM, l: &MemoryRule) -> Belief {
    let mut out = vec![0.0; q.nm];
    for y in 0..q.ny {
        for m in 0..q.nm {
            out[l.get(y, m)] += q.get(y, m);
        }
    }
    Belief(out)
}

/// Maps the encoder information state through the encoding rule `c`.
pub fn apply_q(
    pi: &EncInfoState,
    c: &EncAssignment,
    channel: &Matrix,
    tol: &Tolerance,
) -> Result<MemInfoState> {
    let atoms = pi
        .atoms()
        .iter()
        .map(|a| {
            let z = c
                .lookup(a.x, a.value.probs(), tol.merge)
                .ok_or_else(|| Error::UncoveredSupportPair { x: a.x, belief: a.value.0.clone() })?;
            Ok(Atom { x: a.x, value: nu(&a.value, z, channel), weight: a.weight })
        })
        .collect::<Result<Vec<_>>>()?;
    canonicalize(atoms, tol)
}

/// Maps the memory-update information state through `l` and the source
/// transition to the next encoder information state.
pub fn apply_qhat(
    phi: &MemInfoState,
    l: &MemoryRule,
    transition: &Matrix,
    tol: &Tolerance,
) -> Result<EncInfoState> {
    let mut atoms = Vec::with_capacity(phi.len() * transition.cols());
    for a in phi.atoms() {
        let b = psi(&a.value, l);
        for (x_next, &p) in transition.row(a.x).iter().enumerate() {
            if p > 0.0 {
                atoms.push(Atom { x: x_next, value: b.clone(), weight: a.weight * p });
            }
        }
    }
    canonicalize(atoms, tol)
}

/// Unnormalized joint Pr(X_t = x, Y_t = y, M_{t-1} = m), indexed `[x][y * nm + m]`.
pub fn joint_xym(phi: &MemInfoState, nx: usize) -> Vec<Vec<f64>> {
    let cols = phi.atoms().first().map_or(0, |a| a.value.probs().len());
    let mut joint = vec![vec![0.0; cols]; nx];
    for a in phi.atoms() {
        for (j, &q) in joint[a.x].iter_mut().zip(a.value.probs()) {
            *j += a.weight * q;
        }
    }
    joint
}

/// Expected distortion under the Bayes-optimal decoder, and that decoder.
///
/// For each (y, m) with positive mass the decoder picks the reconstruction
/// minimizing the posterior expected distortion (smallest index on ties);
/// columns with zero mass decode to 0.
pub fn stage_cost(phi: &MemInfoState, rho: &Matrix) -> (f64, DecoderRule) {
    let nx = rho.rows();
    let (ny, nm) = phi.atoms().first().map_or((1, 1), |a| (a.value.ny(), a.value.nm()));
    let joint = joint_xym(phi, nx);
    let mut cost = 0.0;
    let mut table = vec![0; ny * nm];
    for (col, slot) in table.iter_mut().enumerate() {
        let mass: f64 = joint.iter().map(|j| j[col]).sum();
        if mass <= 0.0 {
            continue;
        }
        let mut best = f64::INFINITY;
        for xhat in 0..nx {
            let c: f64 = (0..nx).map(|x| rho.get(x, xhat) * joint[x][col]).sum();
            if c < best {
                best = c;
                *slot = xhat;
            }
        }
        cost += best;
    }
    (cost, DecoderRule::new(ny, nm, table))
}

/// Initial encoder information state: the source prior paired with a point
/// mass on the known initial memory content.
pub fn initial_info_state(inst: &ValidatedInstance) -> EncInfoState {
    let nm = inst.alphabets().nm;
    let atoms = inst
        .initial()
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(x, &p)| Atom { x, value: Belief::point_mass(nm, inst.m0()), weight: p })
        .collect();
    canonicalize(atoms, &Tolerance::default()).expect("validated prior has positive mass")
}
