//! Acceptance suite: one PASS/FAIL line per criterion; exits non-zero if any fails.

mod common;

use std::time::Instant;

use rand::Rng;
use rtjscc::belief::{
    apply_q, apply_qhat, canonicalize, initial_info_state, mix, nu, psi, stage_cost, Atom, Belief,
    DecoderRule, EncAssignment, JointYM, MemoryRule, Tolerance,
};
use rtjscc::design::StageRulesFile;
use rtjscc::exec::{with_threads, ExecMode};
use rtjscc::model::{Alphabets, Horizon, MatrixSpec, ValidatedInstance};
use rtjscc::oracle::{
    brute_force_optimum, count_designs, evaluate_exact, memory_conditionals, OracleConfig, OracleResult,
    PrimitiveDesign, DEFAULT_ORACLE_CAP,
};
use rtjscc::sim::{simulate, DesignRef, SimConfig};
use rtjscc::solver_finite::{solve_finite, InfoStateDp, SolveResult, SolverConfig};
use rtjscc::solver_infinite::{contraction_holds, solve_discounted, DiscountedConfig, Extraction};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Solver and oracle runs on the criterion-1 instances at one thread count.
struct Runs {
    solves: Vec<SolveResult>,
    oracles: Vec<OracleResult>,
}

fn run_all(instances: &[ValidatedInstance], threads: usize) -> Runs {
    with_threads(threads, || Runs {
        solves: instances.iter().map(|i| solve_finite(i, &SolverConfig::default()).expect("solve")).collect(),
        oracles: instances
            .iter()
            .map(|i| brute_force_optimum(i, &OracleConfig::default()).expect("oracle"))
            .collect(),
    })
}

fn solve_fingerprint(r: &SolveResult) -> String {
    let rules: Vec<StageRulesFile> = r.stages.iter().map(StageRulesFile::from).collect();
    format!("{:016x} {}", r.value.to_bits(), serde_json::to_string(&rules).unwrap())
}

fn oracle_fingerprint(r: &OracleResult) -> String {
    format!("{:016x} {} {}", r.value.to_bits(), r.index, serde_json::to_string(&r.design).unwrap())
}

fn criterion1(instances: &[ValidatedInstance], runs: &Runs) -> Outcome {
    let mut worst: f64 = 0.0;
    let mut by_t = [0usize; 3];
    for (i, inst) in instances.iter().enumerate() {
        worst = worst.max((runs.solves[i].value - runs.oracles[i].value).abs());
        by_t[inst.finite_horizon().unwrap() - 1] += 1;
    }
    outcome(
        worst <= 1e-9,
        format!(
            "{} instances (T=1/2/3: {}/{}/{}), max |solver - oracle| = {worst:.2e}",
            instances.len(),
            by_t[0],
            by_t[1],
            by_t[2]
        ),
    )
}

fn hamming_witness(inst: &ValidatedInstance) -> PrimitiveDesign {
    let a = inst.alphabets();
    let t = inst.finite_horizon().unwrap();
    PrimitiveDesign {
        c: (0..t).map(|s| (0..a.nx.pow(s as u32 + 1)).map(|code| code % a.nx).collect()).collect(),
        l: (0..t - 1).map(|_| MemoryRule::constant(a.ny, a.nm, 0)).collect(),
        g: (0..t).map(|_| DecoderRule::from_fn(a.ny, a.nm, |y, _| y)).collect(),
    }
}

fn criterion2() -> Outcome {
    let mut rng = common::rng(2);
    let mut ok = true;
    let mut brute = 0;
    let mut witnessed = 0;
    let mut cases = 0;
    for n in [2, 3] {
        for t in 1..=5 {
            let a = Alphabets { nx: n, nz: n, ny: n, nm: if n == 2 { 2 } else { 1 } };
            let transition = if t == 1 { vec![] } else { common::stochastic(&mut rng, n, n) };
            let inst = common::instance(
                a,
                common::simplex(&mut rng, n),
                MatrixSpec::Single(transition),
                MatrixSpec::Single(common::identity(n)),
                MatrixSpec::Single(common::hamming(n)),
                Horizon::Finite(t),
            );
            cases += 1;
            ok &= solve_finite(&inst, &SolverConfig::default()).unwrap().value == 0.0;
            if count_designs(&inst).unwrap() <= DEFAULT_ORACLE_CAP {
                ok &= brute_force_optimum(&inst, &OracleConfig::default()).unwrap().value == 0.0;
                brute += 1;
            } else {
                // Beyond the oracle cap: exact evaluation of a zero-cost design
                // certifies the optimum, distortion being non-negative.
                ok &= evaluate_exact(&hamming_witness(&inst), &inst).unwrap() == 0.0;
                witnessed += 1;
            }
        }
    }
    outcome(
        ok,
        format!("{cases} instances (nx = nm + 1 in {{2,3}}, T=1..5) solve to 0; oracle: {brute} by enumeration, {witnessed} by exact evaluation of a zero-cost design"),
    )
}

fn criterion3() -> Outcome {
    let mut rng = common::rng(3);
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let mut pick = || rng.random_range(2..=3);
        let a = Alphabets { nx: pick(), nz: pick(), ny: pick(), nm: pick() };
        let t = rng.random_range(1..=4);
        let initial = common::simplex(&mut rng, a.nx);
        let transition = common::stochastic(&mut rng, a.nx, a.nx);
        let rho = common::unit_matrix(&mut rng, a.nx, a.nx);
        let inst = common::instance(
            a,
            initial.clone(),
            MatrixSpec::Single(if t == 1 { vec![] } else { transition.clone() }),
            MatrixSpec::Single(vec![vec![1.0 / a.ny as f64; a.ny]; a.nz]),
            MatrixSpec::Single(rho.clone()),
            Horizon::Finite(t),
        );
        let mut p = initial;
        let mut expected = 0.0;
        for s in 0..t {
            expected += (0..a.nx)
                .map(|xh| (0..a.nx).map(|x| p[x] * rho[x][xh]).sum::<f64>())
                .fold(f64::INFINITY, f64::min);
            if s + 1 < t {
                p = (0..a.nx).map(|j| (0..a.nx).map(|i| p[i] * transition[i][j]).sum()).collect();
            }
        }
        let v = solve_finite(&inst, &SolverConfig::default()).unwrap().value;
        worst = worst.max((v - expected).abs());
    }
    outcome(worst <= 1e-9, format!("5 instances, max |solver - prior-only bound| = {worst:.2e}"))
}

fn criterion4() -> Outcome {
    let mut rng = common::rng(4);
    let mut worst: f64 = 0.0;
    let mut checks = 0usize;
    for _ in 0..20 {
        let mut pick = || rng.random_range(2..=3);
        let a = Alphabets { nx: pick(), nz: pick(), ny: pick(), nm: pick() };
        let t = rng.random_range(2..=3);
        let per_stage = rng.random::<bool>();
        let inst = common::random_finite(&mut rng, a, t, per_stage);
        let d = common::random_design(&mut rng, &inst);
        for code in 0..a.nx.pow(t as u32) {
            let xs: Vec<usize> = (0..t).map(|k| code / a.nx.pow((t - 1 - k) as u32) % a.nx).collect();
            let cond = memory_conditionals(&inst, &d.c, &d.l, &xs).unwrap();
            let mut b = Belief::point_mass(a.nm, inst.m0());
            let mut prefix = 0;
            for (s, (joint, after)) in cond.iter().enumerate() {
                prefix = prefix * a.nx + xs[s];
                let q = nu(&b, d.c[s][prefix], inst.channel(s));
                worst = q.probs().iter().zip(joint).fold(worst, |w, (p, r)| w.max((p - r).abs()));
                if let Some(after) = after {
                    b = psi(&q, &d.l[s]);
                    worst = b.probs().iter().zip(after).fold(worst, |w, (p, r)| w.max((p - r).abs()));
                }
                checks += 1;
            }
        }
    }
    outcome(
        worst <= 1e-9,
        format!("20 (design, instance) pairs, {checks} stage/realization checks, max deviation {worst:.2e}"),
    )
}

fn criterion5(instances: &[ValidatedInstance]) -> Outcome {
    let mut states = 0usize;
    let mut used = 0usize;
    let mut worst_margin = f64::INFINITY;
    let mut ok = true;
    for inst in instances {
        let a = inst.alphabets();
        let decoders = (a.nx as u128).pow((a.ny * a.nm) as u32);
        if decoders > 10_000 {
            continue;
        }
        used += 1;
        let dp = InfoStateDp::finite(inst, SolverConfig::default()).unwrap();
        dp.value(inst.finite_horizon().unwrap(), &initial_info_state(inst)).unwrap();
        for (stage, phi) in dp.explored_mem_states() {
            states += 1;
            let rho = inst.rho(stage);
            let (cost, _) = stage_cost(&phi, rho);
            // Cost of decoding column (y, m) to each reconstruction.
            let cols: Vec<Vec<f64>> = (0..a.ny * a.nm)
                .map(|col| {
                    (0..a.nx)
                        .map(|xh| {
                            phi.atoms()
                                .iter()
                                .map(|at| at.weight * at.value.probs()[col] * rho.get(at.x, xh))
                                .sum()
                        })
                        .collect()
                })
                .collect();
            for idx in 0..decoders as u64 {
                let g = DecoderRule::from_index(a.ny, a.nm, a.nx, idx);
                let c: f64 = g.table().iter().enumerate().map(|(col, &xh)| cols[col][xh]).sum();
                worst_margin = worst_margin.min(c - cost);
                ok &= c >= cost - 1e-12;
            }
        }
    }
    outcome(
        ok,
        format!("{used} instances, {states} reachable states, min cost(g') - cost(g*) = {worst_margin:.2e}"),
    )
}

fn random_belief_atoms(rng: &mut impl Rng, nx: usize, nm: usize) -> Vec<Atom<Belief>> {
    (0..rng.random_range(1..=4))
        .map(|_| Atom {
            x: rng.random_range(0..nx),
            value: Belief(common::simplex(rng, nm)),
            weight: rng.random::<f64>() + 0.01,
        })
        .collect()
}

fn random_joint_atoms(rng: &mut impl Rng, nx: usize, ny: usize, nm: usize) -> Vec<Atom<JointYM>> {
    (0..rng.random_range(1..=4))
        .map(|_| Atom {
            x: rng.random_range(0..nx),
            value: JointYM::new(ny, nm, common::simplex(rng, ny * nm)),
            weight: rng.random::<f64>() + 0.01,
        })
        .collect()
}

fn criterion6() -> Outcome {
    let mut rng = common::rng(6);
    let tol = Tolerance::default();
    let mut ok = true;
    for _ in 0..100 {
        let mut pick = || rng.random_range(2..=3);
        let (nx, nz, ny, nm) = (pick(), pick(), pick(), pick());
        let channel = rtjscc::model::Matrix::from_rows(&common::stochastic(&mut rng, nz, ny)).unwrap();
        let transition = rtjscc::model::Matrix::from_rows(&common::stochastic(&mut rng, nx, nx)).unwrap();
        let alpha = rng.random::<f64>();

        let p = canonicalize(random_belief_atoms(&mut rng, nx, nm), &tol).unwrap();
        let q = canonicalize(random_belief_atoms(&mut rng, nx, nm), &tol).unwrap();
        let mut c = EncAssignment::default();
        for at in p.atoms().iter().chain(q.atoms()) {
            c.push(at.x, at.value.clone(), rng.random_range(0..nz));
        }
        let lhs = apply_q(&canonicalize(mix(alpha, &p, &q), &tol).unwrap(), &c, &channel, &tol).unwrap();
        let qp = apply_q(&p, &c, &channel, &tol).unwrap();
        let qq = apply_q(&q, &c, &channel, &tol).unwrap();
        let rhs = canonicalize(mix(alpha, &qp, &qq), &tol).unwrap();
        ok &= lhs.approx_eq(&rhs, 1e-9);

        let p = canonicalize(random_joint_atoms(&mut rng, nx, ny, nm), &tol).unwrap();
        let q = canonicalize(random_joint_atoms(&mut rng, nx, ny, nm), &tol).unwrap();
        let l = MemoryRule::new(ny, nm, (0..ny * nm).map(|_| rng.random_range(0..nm)).collect());
        let lhs =
            apply_qhat(&canonicalize(mix(alpha, &p, &q), &tol).unwrap(), &l, &transition, &tol).unwrap();
        let hp = apply_qhat(&p, &l, &transition, &tol).unwrap();
        let hq = apply_qhat(&q, &l, &transition, &tol).unwrap();
        let rhs = canonicalize(mix(alpha, &hp, &hq), &tol).unwrap();
        ok &= lhs.approx_eq(&rhs, 1e-9);
    }
    outcome(ok, "100 (pi, pi', alpha, c) and 100 (phi, phi', alpha, l) tuples".into())
}

/// Criterion-7 instances: even indices have no receiver memory and a noisy
/// channel; odd indices have a permutation source, a deterministic channel
/// and two or three memory states.
fn criterion7_instances() -> Vec<ValidatedInstance> {
    let mut rng = common::rng(7);
    (0..10)
        .map(|k| {
            let beta = [0.5, 0.8, 0.9][k % 3];
            let horizon = Horizon::Discounted { beta, epsilon: 0.01 };
            if k % 2 == 0 {
                let mut pick = || rng.random_range(2..=3);
                let a = Alphabets { nx: pick(), nz: pick(), ny: pick(), nm: 1 };
                common::instance(
                    a,
                    common::simplex(&mut rng, a.nx),
                    MatrixSpec::Single(common::stochastic(&mut rng, a.nx, a.nx)),
                    MatrixSpec::Single(common::stochastic(&mut rng, a.nz, a.ny)),
                    MatrixSpec::Single(common::unit_matrix(&mut rng, a.nx, a.nx)),
                    horizon,
                )
            } else {
                let n = rng.random_range(2..=3);
                let nm = if n == 3 { 2 } else { rng.random_range(2..=3) };
                let mut perm: Vec<usize> = (0..n).collect();
                for i in (1..n).rev() {
                    perm.swap(i, rng.random_range(0..=i));
                }
                let one_hot = |k: usize| (0..n).map(|j| if j == k { 1.0 } else { 0.0 }).collect::<Vec<f64>>();
                let transition = (0..n).map(|i| one_hot(perm[i])).collect();
                let channel = (0..n).map(|_| one_hot(rng.random_range(0..n))).collect();
                common::instance(
                    Alphabets { nx: n, nz: n, ny: n, nm },
                    common::simplex(&mut rng, n),
                    MatrixSpec::Single(transition),
                    MatrixSpec::Single(channel),
                    MatrixSpec::Single(common::unit_matrix(&mut rng, n, n)),
                    horizon,
                )
            }
        })
        .collect()
}

fn criterion7() -> Outcome {
    let mut ok = true;
    let mut worst_gap = f64::NEG_INFINITY;
    let mut failures = Vec::new();
    let mut searched = 0;
    for (k, inst) in criterion7_instances().iter().enumerate() {
        let (beta, eps) = inst.discount().unwrap();
        match solve_discounted(inst, &DiscountedConfig::default()) {
            Ok(r) => {
                let contraction = contraction_holds(&r.depth_values, beta, inst.rho_max());
                let gap_ok = r.gap.is_some_and(|g| g <= eps);
                if !(contraction && gap_ok) {
                    failures.push(format!("#{k}: contraction {contraction}, gap {:?}", r.gap));
                }
                ok &= contraction && gap_ok;
                searched += usize::from(r.extraction != Some(Extraction::PathStage(1)));
                worst_gap = worst_gap.max(r.gap.unwrap_or(f64::INFINITY));
            }
            Err(e) => {
                ok = false;
                failures.push(format!("#{k}: {e}"));
            }
        }
    }
    let mut detail = format!("10 instances (5 noisy memoryless, 5 deterministic with memory; beta in {{0.5, 0.8, 0.9}}, eps = 0.01), largest stationary gap {worst_gap:.2e}, {searched} designs from the fallback extraction");
    if !failures.is_empty() {
        detail.push_str(&format!("; failures: {}", failures.join("; ")));
    }
    outcome(ok, detail)
}

fn criterion8(instances: &[ValidatedInstance], runs: &Runs) -> Outcome {
    let mut ok = true;
    let mut worst_z: f64 = 0.0;
    for (inst, res) in instances.iter().zip(&runs.solves).take(10) {
        let design = DesignRef::Stages(&res.stages);
        let cfg = SimConfig::new(100_000, 8);
        let a = with_threads(1, || simulate(design, inst, &cfg)).unwrap();
        let b = with_threads(8, || simulate(design, inst, &cfg)).unwrap();
        let c = simulate(design, inst, &SimConfig { exec: ExecMode::Sequential, ..cfg }).unwrap();
        let d = with_threads(8, || simulate(design, inst, &cfg)).unwrap();
        let same = [&b, &c, &d]
            .iter()
            .all(|r| serde_json::to_string(r).unwrap() == serde_json::to_string(&a).unwrap());
        let dev = (a.mean - res.value).abs();
        ok &= same && dev <= 4.0 * a.std_err;
        if a.std_err > 0.0 {
            worst_z = worst_z.max(dev / a.std_err);
        }
    }
    outcome(
        ok,
        format!("10 instances, n = 1e5, max |mean - value| / std_err = {worst_z:.2}; reports identical across runs and thread counts"),
    )
}

fn criterion9(one: &Runs, eight: &Runs) -> Outcome {
    let solves =
        one.solves.iter().zip(&eight.solves).all(|(a, b)| solve_fingerprint(a) == solve_fingerprint(b));
    let oracles =
        one.oracles.iter().zip(&eight.oracles).all(|(a, b)| oracle_fingerprint(a) == oracle_fingerprint(b));
    outcome(
        solves && oracles,
        format!("{} instances: solver identical {solves}, oracle identical {oracles}", one.solves.len()),
    )
}

fn main() {
    let start = Instant::now();
    let instances = common::criterion1_instances();
    let one = run_all(&instances, 1);
    let eight = run_all(&instances, 8);

    #[allow(clippy::type_complexity)]
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("oracle equivalence", Box::new(|| criterion1(&instances, &eight))),
        ("lossless chain", Box::new(criterion2)),
        ("uninformative channel", Box::new(criterion3)),
        ("Lemma 1 oracle", Box::new(criterion4)),
        ("decoder optimality", Box::new(|| criterion5(&instances))),
        ("linearity", Box::new(criterion6)),
        ("discounted contraction and epsilon bound", Box::new(criterion7)),
        ("Monte Carlo consistency", Box::new(|| criterion8(&instances, &eight))),
        ("determinism", Box::new(|| criterion9(&one, &eight))),
    ];
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let o = f();
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {} ({name}): {} [{}; {:.1} s]",
            k + 1,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed().as_secs_f64()
        );
    }
    println!(
        "acceptance: {} of {} passed in {:.1} s",
        criteria.len() - failed,
        criteria.len(),
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
