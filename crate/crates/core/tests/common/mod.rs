//! Random instance and design generators shared by the integration tests
//! and the acceptance suite.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rtjscc::belief::{DecoderRule, MemoryRule};
use rtjscc::model::{
    validate, Alphabets, ChannelSpec, DistortionSpec, Horizon, MatrixSpec, ProblemInstance, SourceSpec,
    ValidatedInstance,
};
use rtjscc::oracle::{count_designs, PrimitiveDesign};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Row drawn from the flat Dirichlet distribution.
pub fn simplex(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

pub fn stochastic(rng: &mut impl Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows).map(|_| simplex(rng, cols)).collect()
}

pub fn unit_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows).map(|_| (0..cols).map(|_| rng.random::<f64>()).collect()).collect()
}

pub fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

pub fn hamming(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| if i == j { 0.0 } else { 1.0 }).collect()).collect()
}

pub fn instance(
    a: Alphabets,
    initial: Vec<f64>,
    transition: MatrixSpec,
    channel: MatrixSpec,
    rho: MatrixSpec,
    horizon: Horizon,
) -> ValidatedInstance {
    validate(&ProblemInstance {
        alphabets: a,
        source: SourceSpec { initial, transition },
        channel: ChannelSpec { matrix: channel },
        distortion: DistortionSpec { rho },
        horizon,
        m0: 0,
    })
    .expect("generated instance is valid")
}

/// Random finite-horizon instance. With `per_stage`, channel and distortion
/// change from stage to stage.
pub fn random_finite(rng: &mut impl Rng, a: Alphabets, t: usize, per_stage: bool) -> ValidatedInstance {
    let transition =
        if t == 1 { MatrixSpec::Single(vec![]) } else { MatrixSpec::Single(stochastic(rng, a.nx, a.nx)) };
    let (channel, rho) = if per_stage {
        (
            MatrixSpec::PerStage((0..t).map(|_| stochastic(rng, a.nz, a.ny)).collect()),
            MatrixSpec::PerStage((0..t).map(|_| unit_matrix(rng, a.nx, a.nx)).collect()),
        )
    } else {
        (MatrixSpec::Single(stochastic(rng, a.nz, a.ny)), MatrixSpec::Single(unit_matrix(rng, a.nx, a.nx)))
    };
    instance(a, simplex(rng, a.nx), transition, channel, rho, Horizon::Finite(t))
}

/// Designs the brute-force oracle enumerates for a criterion-1 instance.
pub const CRITERION1_DESIGN_CAP: u128 = rtjscc::oracle::DEFAULT_ORACLE_CAP;
pub const CRITERION1_SEED: u64 = 0x5eed_0001;

/// The criterion-1 instance list: sizes in {2, 3}, horizons in {1, 2, 3},
/// random matrices and distortions, drawn until 50 instances fit under
/// [`CRITERION1_DESIGN_CAP`]. Every third accepted draw is time-varying.
pub fn criterion1_instances() -> Vec<ValidatedInstance> {
    let mut rng = rng(CRITERION1_SEED);
    let mut out = Vec::new();
    while out.len() < 50 {
        let mut pick = || if rng.random::<bool>() { 2 } else { 3 };
        let a = Alphabets { nx: pick(), nz: pick(), ny: pick(), nm: pick() };
        let t = rng.random_range(1..=3);
        let per_stage = out.len() % 3 == 2;
        let inst = random_finite(&mut rng, a, t, per_stage);
        if count_designs(&inst).unwrap() <= CRITERION1_DESIGN_CAP {
            out.push(inst);
        }
    }
    out
}

/// Uniformly random complete design on the primitive domains.
pub fn random_design(rng: &mut impl Rng, inst: &ValidatedInstance) -> PrimitiveDesign {
    let a = inst.alphabets();
    let t = inst.finite_horizon().unwrap();
    PrimitiveDesign {
        c: (0..t).map(|s| (0..a.nx.pow(s as u32 + 1)).map(|_| rng.random_range(0..a.nz)).collect()).collect(),
        l: (0..t - 1)
            .map(|_| {
                MemoryRule::new(a.ny, a.nm, (0..a.ny * a.nm).map(|_| rng.random_range(0..a.nm)).collect())
            })
            .collect(),
        g: (0..t)
            .map(|_| {
                DecoderRule::new(a.ny, a.nm, (0..a.ny * a.nm).map(|_| rng.random_range(0..a.nx)).collect())
            })
            .collect(),
    }
}
