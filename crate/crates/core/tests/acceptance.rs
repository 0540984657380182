//! Acceptance gates. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::f64::consts::FRAC_PI_2;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use dephasim::channel::{averaged_step_superop, hoeffding_bound, hoeffding_value, trajectory_superop, ChannelPlan, SignString};
use dephasim::duality::{verify_duality_exact, DualityMap};
use dephasim::experiment::{parse_config, plan, render, RunOptions};
use dephasim::fock::{
    build_generalized_hubbard, build_lindbladian_superop, configuration_trace, imaginary_hubbard, pt_spectrum_check,
    quadratic_operator, slater_vector, symmetry_report, DenseState, LiouvilleSpace, Sector,
};
use dephasim::landscape::{
    negate_hopping_gauge_check, torus_coords, variance_probe, ComplexCoupling, ProbeReport, ProbeRequest,
    DEFAULT_LOG_CAP,
};
use dephasim::lattice::BipartiteLattice;
use dephasim::linalg::{expm, matrix_power, max_abs, CMatrix, C64, I, ONE};
use dephasim::slater::{apply_mode_matrix, init_slater, pair_amplitude, Configuration, ModeMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn chain(n: usize) -> BipartiteLattice {
    BipartiteLattice::chain(n, -1.0).unwrap()
}

fn duality_identity() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for (n, up, down) in [(2, vec![0], vec![1]), (3, vec![0, 2], vec![1])] {
        let l = chain(n);
        let (u, d) = (init_slater(n, &up).unwrap(), init_slater(n, &down).unwrap());
        for gamma in [0.0, 0.5, 1.0, 2.0] {
            for t in [0.1, 1.0, 5.0] {
                worst = worst.max(verify_duality_exact(&l, gamma, &u, &d, t).unwrap());
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-10 && elapsed < Duration::from_secs(10),
        format!("max deviation {worst:.2e} (tol 1e-10), {:.2} s (limit 10 s)", elapsed.as_secs_f64()),
    )
}

const FIG1: &str = "kind = \"fig1\"
seed = 20240607
output = \"fig1.csv\"
[lattice]
kind = \"chain\"
length = 2
weight = -1.0
[model]
gamma = 1.0
[initial]
up = [0]
down = [1]
[time]
start = 0.0
end = 10.0
points = 21
tau = 0.01
[sampling]
samples = 200
";

fn fig1_reproduction() -> Outcome {
    let cfg = parse_config(FIG1).unwrap();
    let p = plan(&cfg, FIG1, &RunOptions::default()).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let start = Instant::now();
    let rendered = pool.install(|| render(&p)).unwrap();
    let elapsed = start.elapsed();
    let mut lines = rendered.csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let (mre, mim, se) = (col("re_mean"), col("im_mean"), col("stderr"));
    let (tre, tim, ere, eim) = (col("re_trotter"), col("im_trotter"), col("re_exact"), col("im_exact"));
    let (mut points, mut bad, mut worst_avg, mut worst_exact) = (0, Vec::new(), 0.0f64, 0.0f64);
    for line in lines {
        let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        let gap_avg = (v[mre] - v[tre]).abs().max((v[mim] - v[tim]).abs());
        let gap_exact = (v[mre] - v[ere]).abs().max((v[mim] - v[eim]).abs());
        worst_avg = worst_avg.max(gap_avg - 5.0 * v[se]);
        worst_exact = worst_exact.max(gap_exact - 5.0 * v[se] - 0.02);
        if gap_avg > 5.0 * v[se] || gap_exact > 5.0 * v[se] + 0.02 {
            bad.push(v[0]);
        }
        points += 1;
    }
    outcome(
        points == 21 && bad.is_empty() && elapsed < Duration::from_secs(120),
        format!(
            "{points} points, failing t = {bad:?}, max excess over 5se: averaged {worst_avg:.3e}, exact {worst_exact:.3e}, {:.2} s single-threaded (limit 120 s)",
            elapsed.as_secs_f64()
        ),
    )
}

fn single_step_unbiasedness() -> Outcome {
    let l = chain(2);
    let space = LiouvilleSpace::full(2).unwrap();
    let mut worst: f64 = 0.0;
    for steps in 1..=3usize {
        let p = ChannelPlan::new(&l, 1.0, 0.6, steps).unwrap();
        let count = 1u64 << (2 * steps);
        let mut acc = CMatrix::zeros(space.dim(), space.dim());
        for index in 0..count {
            acc += trajectory_superop(&p, &SignString::enumerate(steps, 2, index), &space).unwrap().matrix;
        }
        acc /= C64::new(count as f64, 0.0);
        let step = averaged_step_superop(&l, 1.0, p.tau(), &space).unwrap();
        worst = worst.max(max_abs(&(acc - matrix_power(&step.matrix, steps))));
    }
    outcome(worst <= 1e-12, format!("R = 1..3, max entry gap {worst:.2e} (tol 1e-12)"))
}

fn trotter_scaling() -> Outcome {
    let l = chain(2);
    let space = LiouvilleSpace::full(2).unwrap();
    let lind = build_lindbladian_superop(&l, ONE, C64::new(1.0, 0.0), &space).unwrap();
    let exact = expm(&lind.matrix);
    let err = |r: usize| {
        let step = averaged_step_superop(&l, 1.0, 1.0 / r as f64, &space).unwrap();
        max_abs(&(matrix_power(&step.matrix, r) - &exact))
    };
    let ratios: Vec<f64> = [25, 50, 100].iter().map(|&r| err(r) / err(2 * r)).collect();
    let pass = ratios.iter().all(|r| (1.7..=2.3).contains(r));
    outcome(pass, format!("err(R)/err(2R) for R = 25, 50, 100: {ratios:.4?} (band [1.7, 2.3], max-entry norm)"))
}

fn random_matrix(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> CMatrix {
    CMatrix::from_fn(n, n, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * scale)
}

fn ascending_subset(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    let mut all: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.random_range(i..n);
        all.swap(i, j);
    }
    let mut out = all[..k].to_vec();
    out.sort_unstable();
    out
}

fn slater_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst: f64 = 0.0;
    for case in 0..200 {
        let n = rng.random_range(1..=4usize);
        let (kk, kb) = (rng.random_range(0..=n), rng.random_range(0..=n));
        let steps = rng.random_range(1..=5usize);
        let space = LiouvilleSpace::sectors(n, kk, kb).unwrap();
        let (ket_occ, bra_occ) = (ascending_subset(&mut rng, n, kk), ascending_subset(&mut rng, n, kb));
        let (mut ket, mut bra) = (init_slater(n, &ket_occ).unwrap(), init_slater(n, &bra_occ).unwrap());
        let mut psi = slater_vector(ket.orbitals(), &space.ket).unwrap();
        let mut chi = slater_vector(bra.orbitals(), &space.bra).unwrap();
        for _ in 0..steps {
            let mut k = random_matrix(&mut rng, n, 0.6);
            if case % 2 == 0 {
                k = (&k + k.adjoint()) * (-I * 0.5);
            }
            let kbra = random_matrix(&mut rng, n, 0.6);
            ket = apply_mode_matrix(&ket, &ModeMatrix::new(expm(&k), false).unwrap()).unwrap();
            bra = apply_mode_matrix(&bra, &ModeMatrix::new(expm(&kbra), false).unwrap()).unwrap();
            psi = expm(&quadratic_operator(&k, &space.ket)) * psi;
            chi = expm(&quadratic_operator(&kbra, &space.bra)) * chi;
        }
        let rho = DenseState::outer(&space, &psi, &chi).unwrap();
        let (nc, mc) = (ascending_subset(&mut rng, n, kk), ascending_subset(&mut rng, n, kb));
        let sign = if (kk * kk.saturating_sub(1) / 2) % 2 == 0 { 1.0 } else { -1.0 };
        let trace = configuration_trace(&rho, &nc, &mc).unwrap() * sign;
        let amp =
            pair_amplitude(&ket, &bra, &Configuration::new(&nc, n).unwrap(), &Configuration::new(&mc, n).unwrap()).unwrap();
        worst = worst.max((amp - trace).norm() / trace.norm().max(1.0));
    }
    outcome(worst <= 1e-10, format!("200 cases, max relative gap {worst:.2e} (tol 1e-10)"))
}

fn symmetry_suite() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut weakest_detuned = f64::INFINITY;
    for n in [2, 3] {
        let l = chain(n);
        for gamma in [0.5, 1.0, 2.0] {
            let r = symmetry_report(&imaginary_hubbard(&l, gamma, Sector::Full).unwrap(), &l).unwrap();
            for (_, v) in r.entries() {
                worst = worst.max(v.unwrap());
            }
            let detuned =
                build_generalized_hubbard(&l, ONE, I * gamma, C64::new(0.0, -gamma / 2.0 - 0.3), Sector::Full).unwrap();
            let dr = symmetry_report(&detuned, &l).unwrap();
            weakest_detuned = weakest_detuned.min(dr.eta_plus.unwrap().min(dr.eta_minus.unwrap()));
        }
    }
    outcome(
        worst <= 1e-12 && weakest_detuned > 1e-3,
        format!("max commutator {worst:.2e} (tol 1e-12), smallest detuned eta commutator {weakest_detuned:.3e} (> 1e-3)"),
    )
}

fn pt_spectrum() -> Outcome {
    let mut failures = Vec::new();
    for n in [2, 3] {
        let l = chain(n);
        let space = LiouvilleSpace::full(n).unwrap();
        for gamma in [0.5, 1.0, 2.0] {
            let sup = build_lindbladian_superop(&l, ONE, C64::new(gamma, 0.0), &space).unwrap();
            if !pt_spectrum_check(&sup, 1e-9).holds {
                failures.push((n, gamma));
            }
        }
    }
    outcome(failures.is_empty(), format!("2-3 sites x gamma in {{0.5, 1, 2}} at tol 1e-9, failures {failures:?}"))
}

fn hoeffding_planner() -> Outcome {
    let m = hoeffding_bound(2.0, 0.1, 0.05).unwrap();
    let (v, half) = (hoeffding_value(2.0, 0.1, 0.05).unwrap(), hoeffding_value(2.0, 0.05, 0.05).unwrap());
    outcome(m == 738 && half == 4.0 * v, format!("M = {m} (want 738), value ratio at eps/2 = {}", half / v))
}

fn probe(c: ComplexCoupling) -> ProbeReport {
    let l = chain(2);
    variance_probe(&ProbeRequest {
        lattice: l.clone(),
        coupling: c,
        ket: init_slater(2, &[0]).unwrap(),
        bra: DualityMap::default().bra_state(&l, &init_slater(2, &[1]).unwrap()).unwrap(),
        n: Configuration::new(&[0], 2).unwrap(),
        m: Configuration::new(&[1], 2).unwrap(),
        times: (0..=10).map(|k| k as f64).collect(),
        tau: 0.05,
        samples: 300,
        seed: 41,
        log_cap: DEFAULT_LOG_CAP,
    })
    .unwrap()
}

fn landscape() -> Vec<(&'static str, Outcome)> {
    let unitary = probe(ComplexCoupling::from_dephasing(ONE, ONE));
    let max_unitary = unitary.rows.iter().map(|r| r.max_abs_x).fold(0.0, f64::max);
    let a = outcome(max_unitary <= 1.0 + 1e-12, format!("max |X| in the unitary regime {max_unitary:.15}"));

    let complex = probe(ComplexCoupling::from_dephasing(C64::new(1.0, -0.1), ONE));
    let slope = complex.slope.unwrap_or(f64::NAN);
    let violations: usize = complex.rows.iter().map(|r| r.chain_violations).sum();
    let over = complex.rows.iter().filter(|r| r.max_abs_x > r.bound * (1.0 + 1e-9)).count();
    let b = outcome(
        slope > 0.0 && violations == 0 && over == 0,
        format!("J = 1-0.1i: slope {slope:.4} (> 0), per-sample chain violations {violations}, rows above bound {over}"),
    );

    let mut worst: f64 = 0.0;
    for (n, up, down) in [(2, vec![0], vec![1]), (3, vec![0, 2], vec![1])] {
        for gamma in [0.5, 1.0, 2.0] {
            for t in [0.1, 1.0, 5.0] {
                worst = worst.max(negate_hopping_gauge_check(&chain(n), gamma, &up, &down, t).unwrap());
            }
        }
    }
    let c = outcome(worst <= 1e-10, format!("max ||Psi(J)| - |Psi(-J)|| = {worst:.2e} (tol 1e-10)"));

    let p = torus_coords(ComplexCoupling::new(ONE, I)).unwrap();
    let d = outcome(
        p.arg_j.abs() <= 1e-5 && (p.arg_u - FRAC_PI_2).abs() <= 1e-5 && (p.s - 0.36788).abs() <= 1e-5,
        format!("torus_coords(1, i) = ({:.6}, {:.6}, {:.6})", p.arg_j, p.arg_u, p.s),
    );
    vec![("landscape (a) unitary |X| <= 1", a), ("landscape (b) complex J growth", b), ("landscape (c) hopping gauge", c), ("landscape (d) torus coordinates", d)]
}

const HUBBARD: &str = "kind = \"hubbard\"
seed = 99
[lattice]
kind = \"chain\"
length = 3
[model]
gamma = 0.7
[initial]
up = [0, 2]
down = [1]
[time]
end = 2.0
points = 5
tau = 0.05
[sampling]
samples = 400
";

fn determinism(dir: &Path) -> Outcome {
    let cfg = dir.join("hubbard.toml");
    std::fs::write(&cfg, HUBBARD).unwrap();
    let mut outputs = Vec::new();
    for threads in [1, 2, 8] {
        let out = dir.join(format!("hubbard_{threads}.csv"));
        let status = Command::new(env!("CARGO_BIN_EXE_simulate"))
            .arg(&cfg)
            .arg("--output")
            .arg(&out)
            .arg("--threads")
            .arg(threads.to_string())
            .output()
            .unwrap();
        if !status.status.success() {
            return outcome(false, format!("simulate failed with {threads} threads: {}", String::from_utf8_lossy(&status.stderr)));
        }
        outputs.push(std::fs::read(&out).unwrap());
    }
    let same = outputs.windows(2).all(|w| w[0] == w[1]);
    outcome(same, format!("CSV bytes for 1, 2, 8 threads identical: {same} ({} bytes)", outputs[0].len()))
}

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let mut results: Vec<(&str, Outcome)> = vec![
        ("duality identity", duality_identity()),
        ("fig1 reproduction", fig1_reproduction()),
        ("single-step unbiasedness", single_step_unbiasedness()),
        ("trotter scaling", trotter_scaling()),
        ("slater vs dense oracle", slater_equivalence()),
        ("symmetry suite", symmetry_suite()),
        ("pt spectrum", pt_spectrum()),
        ("hoeffding planner", hoeffding_planner()),
    ];
    results.extend(landscape());
    results.push(("determinism across threads", determinism(dir.path())));

    let mut failed = 0;
    for (name, o) in &results {
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
