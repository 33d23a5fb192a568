//! Problem instances: alphabets, source, channel, distortion and horizon.
//!
//! [`ProblemInstance`] is the raw, field-for-field image of the JSON instance
//! file. [`validate`] checks it and produces an immutable
//! [`ValidatedInstance`] whose matrices are exactly normalized and whose
//! per-stage accessors hide the time-invariant / time-varying distinction.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-sum tolerance for stochastic matrices.
pub const STOCHASTIC_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Alphabets {
    pub nx: usize,
    pub nz: usize,
    pub ny: usize,
    pub nm: usize,
}

/// A matrix given once (time-invariant) or once per stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Single(Vec<Vec<f64>>),
    PerStage(Vec<Vec<Vec<f64>>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub initial: Vec<f64>,
    pub transition: MatrixSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    pub matrix: MatrixSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistortionSpec {
    pub rho: MatrixSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Horizon {
    Finite(usize),
    Discounted { beta: f64, epsilon: f64 },
}

/// Raw problem instance as read from an instance file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemInstance {
    pub alphabets: Alphabets,
    pub source: SourceSpec,
    pub channel: ChannelSpec,
    pub distortion: DistortionSpec,
    pub horizon: Horizon,
    #[serde(default)]
    pub m0: usize,
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch("ragged matrix rows".into()));
        }
        Ok(Matrix { rows: rows.len(), cols, data: rows.iter().flatten().copied().collect() })
    }

    pub fn identity(n: usize) -> Matrix {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Matrix { rows: n, cols: n, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }

    pub fn max_entry(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }
}

/// A model that is either fixed across stages or listed stage by stage.
#[derive(Debug, Clone, PartialEq)]
pub enum Staged {
    Invariant(Matrix),
    PerStage(Vec<Matrix>),
}

impl Staged {
    /// Matrix in force at 0-based stage `t`.
    pub fn at(&self, t: usize) -> &Matrix {
        match self {
            Staged::Invariant(m) => m,
            Staged::PerStage(ms) => &ms[t],
        }
    }

    pub fn is_invariant(&self) -> bool {
        matches!(self, Staged::Invariant(_))
    }

    fn matrices(&self) -> &[Matrix] {
        match self {
            Staged::Invariant(m) => std::slice::from_ref(m),
            Staged::PerStage(ms) => ms,
        }
    }

    fn to_spec(&self) -> MatrixSpec {
        match self {
            Staged::Invariant(m) => MatrixSpec::Single(m.to_rows()),
            Staged::PerStage(ms) => MatrixSpec::PerStage(ms.iter().map(Matrix::to_rows).collect()),
        }
    }
}

/// Instance with every invariant checked. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedInstance {
    alphabets: Alphabets,
    initial: Vec<f64>,
    transition: Staged,
    channel: Staged,
    rho: Staged,
    horizon: Horizon,
    m0: usize,
    rho_max: f64,
}

impl ValidatedInstance {
    pub fn alphabets(&self) -> Alphabets {
        self.alphabets
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    /// Source transition applied between 0-based stages `t` and `t + 1`.
    pub fn transition(&self, t: usize) -> &Matrix {
        self.transition.at(t)
    }

    pub fn channel(&self, t: usize) -> &Matrix {
        self.channel.at(t)
    }

    pub fn rho(&self, t: usize) -> &Matrix {
        self.rho.at(t)
    }

    pub fn horizon(&self) -> Horizon {
        self.horizon
    }

    pub fn finite_horizon(&self) -> Option<usize> {
        match self.horizon {
            Horizon::Finite(t) => Some(t),
            Horizon::Discounted { .. } => None,
        }
    }

    pub fn discount(&self) -> Option<(f64, f64)> {
        match self.horizon {
            Horizon::Discounted { beta, epsilon } => Some((beta, epsilon)),
            Horizon::Finite(_) => None,
        }
    }

    pub fn m0(&self) -> usize {
        self.m0
    }

    pub fn rho_max(&self) -> f64 {
        self.rho_max
    }

    /// True when source, channel and distortion do not depend on the stage.
    pub fn is_time_invariant(&self) -> bool {
        self.transition.is_invariant() && self.channel.is_invariant() && self.rho.is_invariant()
    }

    /// Same models with a different horizon. The new horizon is checked
    /// against the per-stage list lengths.
    pub fn with_horizon(&self, horizon: Horizon) -> Result<ValidatedInstance> {
        let mut raw = self.to_instance();
        raw.horizon = horizon;
        validate(&raw)
    }

    pub fn to_instance(&self) -> ProblemInstance {
        ProblemInstance {
            alphabets: self.alphabets,
            source: SourceSpec { initial: self.initial.clone(), transition: self.transition.to_spec() },
            channel: ChannelSpec { matrix: self.channel.to_spec() },
            distortion: DistortionSpec { rho: self.rho.to_spec() },
            horizon: self.horizon,
            m0: self.m0,
        }
    }
}

fn staged_from_spec(spec: &MatrixSpec) -> Result<Staged> {
    match spec {
        // `[]` deserializes as an empty single matrix; read it as an empty stage list.
        MatrixSpec::Single(rows) if rows.is_empty() => Ok(Staged::PerStage(Vec::new())),
        MatrixSpec::Single(rows) => Ok(Staged::Invariant(Matrix::from_rows(rows)?)),
        MatrixSpec::PerStage(stages) => {
            Ok(Staged::PerStage(stages.iter().map(|s| Matrix::from_rows(s)).collect::<Result<_>>()?))
        }
    }
}

fn check_shape(what: &str, m: &Matrix, rows: usize, cols: usize) -> Result<()> {
    if m.rows != rows || m.cols != cols {
        return Err(Error::DimensionMismatch(format!(
            "{what} is {}x{}, expected {rows}x{cols}",
            m.rows, m.cols
        )));
    }
    Ok(())
}

fn check_entries(what: &str, m: &Matrix) -> Result<()> {
    for r in 0..m.rows {
        for (c, &v) in m.row(r).iter().enumerate() {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::NegativeEntry { what: what.to_string(), row: r, col: c, value: v });
            }
        }
    }
    Ok(())
}

/// Divides a probability vector by its sum unless it is already normalized
/// to within a few ulps, which keeps validation idempotent.
fn renormalize(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > 8.0 * f64::EPSILON * v.len() as f64 {
        v.iter_mut().for_each(|p| *p /= s);
    }
}

fn check_stochastic(what: &str, m: &mut Matrix) -> Result<()> {
    check_entries(what, m)?;
    let cols = m.cols;
    for r in 0..m.rows {
        let row = &mut m.data[r * cols..(r + 1) * cols];
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::NonStochasticRow { what: what.to_string(), row: r, sum });
        }
        renormalize(row);
    }
    Ok(())
}

fn check_stage_count(what: &str, staged: &Staged, expected: usize) -> Result<()> {
    if let Staged::PerStage(ms) = staged {
        if ms.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "{what} lists {} stages, expected {expected}",
                ms.len()
            )));
        }
    }
    Ok(())
}

fn for_each_stage(
    staged: &mut Staged,
    what: &str,
    mut f: impl FnMut(&str, &mut Matrix) -> Result<()>,
) -> Result<()> {
    match staged {
        Staged::Invariant(m) => f(what, m),
        Staged::PerStage(ms) => {
            for (t, m) in ms.iter_mut().enumerate() {
                f(&format!("{what} (stage {})", t + 1), m)?;
            }
            Ok(())
        }
    }
}

/// Checks every instance invariant and returns the normalized instance.
pub fn validate(raw: &ProblemInstance) -> Result<ValidatedInstance> {
    let a = raw.alphabets;
    if a.nx == 0 || a.nz == 0 || a.ny == 0 || a.nm == 0 {
        return Err(Error::DimensionMismatch(format!("alphabet sizes must be at least 1, got {a:?}")));
    }
    if raw.m0 >= a.nm {
        return Err(Error::DimensionMismatch(format!(
            "m0 = {} outside memory alphabet of size {}",
            raw.m0, a.nm
        )));
    }

    match raw.horizon {
        Horizon::Finite(t) if t < 1 => {
            return Err(Error::BadHorizon(format!("finite horizon must be >= 1, got {t}")))
        }
        Horizon::Discounted { beta, epsilon } => {
            if !(beta > 0.0 && beta < 1.0) {
                return Err(Error::BadHorizon(format!("discount factor must lie in (0,1), got {beta}")));
            }
            if !(epsilon > 0.0 && epsilon.is_finite()) {
                return Err(Error::BadHorizon(format!("epsilon must be positive, got {epsilon}")));
            }
        }
        _ => {}
    }

    let mut initial = raw.source.initial.clone();
    if initial.len() != a.nx {
        return Err(Error::DimensionMismatch(format!(
            "initial distribution has length {}, expected nx = {}",
            initial.len(),
            a.nx
        )));
    }
    {
        let mut m = Matrix::from_rows(std::slice::from_ref(&initial))?;
        check_stochastic("source.initial", &mut m)?;
        initial = m.data;
    }

    let mut transition = staged_from_spec(&raw.source.transition)?;
    let mut channel = staged_from_spec(&raw.channel.matrix)?;
    let mut rho = staged_from_spec(&raw.distortion.rho)?;

    for_each_stage(&mut transition, "source.transition", |w, m| {
        check_shape(w, m, a.nx, a.nx)?;
        check_stochastic(w, m)
    })?;
    for_each_stage(&mut channel, "channel.matrix", |w, m| {
        check_shape(w, m, a.nz, a.ny)?;
        check_stochastic(w, m)
    })?;
    for_each_stage(&mut rho, "distortion.rho", |w, m| {
        check_shape(w, m, a.nx, a.nx)?;
        check_entries(w, m)
    })?;

    match raw.horizon {
        Horizon::Finite(t) => {
            check_stage_count("channel.matrix", &channel, t)?;
            check_stage_count("distortion.rho", &rho, t)?;
            check_stage_count("source.transition", &transition, t - 1)?;
        }
        Horizon::Discounted { .. } => {
            if !(transition.is_invariant() && channel.is_invariant() && rho.is_invariant()) {
                return Err(Error::BadHorizon(
                    "discounted horizon requires time-invariant source, channel and distortion".into(),
                ));
            }
        }
    }

    let rho_max = rho.matrices().iter().map(Matrix::max_entry).fold(0.0, f64::max);

    Ok(ValidatedInstance {
        alphabets: a,
        initial,
        transition,
        channel,
        rho,
        horizon: raw.horizon,
        m0: raw.m0,
        rho_max,
    })
}

/// Parses an instance from JSON text with field-path context on errors.
pub fn parse_instance(text: &str) -> Result<ProblemInstance> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        Error::Parse { path, line: inner.line(), column: inner.column(), message: inner.to_string() }
    })
}

pub fn load_instance(path: impl AsRef<Path>) -> Result<ProblemInstance> {
    let path = path.as_ref();
    let text =
        fs::read_to_string(path).map_err(|source| Error::Io { path: path.display().to_string(), source })?;
    parse_instance(&text)
}

pub fn to_json(inst: &ProblemInstance) -> String {
    serde_json::to_string_pretty(inst).expect("instance serialization cannot fail")
}
