//! Complex couplings and the similarity-transformed channel.
//!
//! For `ℋ(J, U) = J H₀ + U Σ n↑n↓ - (U/2) Σ n` the duality still holds with
//! a dephasing rate `κ = -iU`, but the sampled map `ρ ↦ S ρ S⁻¹` is no longer
//! unitary once `J` or `κ` leave the real axis. Sample magnitudes can then
//! grow exponentially; trajectories carry a separate log-scale to survive it.

use std::f64::consts::TAU;

use rayon::prelude::*;

use crate::channel::{sample_sign_string, trajectory_rng, SignString};
use crate::duality::hubbard_oracle;
use crate::error::{Error, Result};
use crate::fock::Space;
use crate::lattice::BipartiteLattice;
use crate::linalg::{max_abs, C64, I, ONE, ZERO};
use crate::slater::{
    apply_mode_matrix, dephase_step_complex, hopping_step, init_slater, pair_amplitude, Configuration, ModeMatrix,
    SlaterState,
};

/// Default ceiling on the accumulated log-magnitude, just under `ln f64::MAX`.
pub const DEFAULT_LOG_CAP: f64 = 700.0;
const RESCALE_ABOVE: f64 = 1e100;
const RESCALE_BELOW: f64 = 1e-100;

/// Hopping scale `J` and on-site interaction `U` of `ℋ(J, U)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ComplexCoupling {
    pub j: C64,
    pub u: C64,
}

impl ComplexCoupling {
    pub fn new(j: C64, u: C64) -> Self {
        ComplexCoupling { j, u }
    }

    /// Coupling whose dual Lindbladian has dephasing rate `rate` (`U = i·rate`).
    pub fn from_dephasing(j: C64, rate: C64) -> Self {
        ComplexCoupling { j, u: I * rate }
    }

    /// `κ = -iU`.
    pub fn dephasing_rate(&self) -> C64 {
        -I * self.u
    }

    /// True when the sampled channel is a mixture of unitaries.
    pub fn is_unitary(&self) -> bool {
        let k = self.dephasing_rate();
        self.j.im == 0.0 && k.im == 0.0 && k.re >= 0.0
    }
}

/// Point `(arg J, arg U, s = e^{-|U|/|J|})` of the solid torus.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TorusPoint {
    pub arg_j: f64,
    pub arg_u: f64,
    pub s: f64,
}

impl TorusPoint {
    /// `|U| / |J| = -ln s`.
    pub fn ratio(&self) -> f64 {
        -self.s.ln()
    }

    /// Coupling on this point with the given `|J|`.
    pub fn coupling(&self, abs_j: f64) -> ComplexCoupling {
        ComplexCoupling {
            j: C64::from_polar(abs_j, self.arg_j),
            u: C64::from_polar(abs_j * self.ratio(), self.arg_u),
        }
    }
}

fn angle(z: C64) -> f64 {
    if z == ZERO {
        return 0.0;
    }
    let a = z.arg().rem_euclid(TAU);
    if a >= TAU {
        0.0
    } else {
        a
    }
}

pub fn torus_coords(c: ComplexCoupling) -> Result<TorusPoint> {
    let abs_j = c.j.norm();
    if !(abs_j > 0.0) || !abs_j.is_finite() || !c.u.norm().is_finite() {
        return Err(Error::Domain(format!("torus coordinates need finite nonzero J, got J = {}", c.j)));
    }
    Ok(TorusPoint { arg_j: angle(c.j), arg_u: angle(c.u), s: (-c.u.norm() / abs_j).exp() })
}

/// Principal `√(κτ)`, argument in `(-π/2, π/2]`.
pub fn step_angle(rate: C64, tau: f64) -> C64 {
    let z = rate * tau;
    if z.im == 0.0 && z.re < 0.0 {
        // keep -0.0 imaginary parts from selecting the other branch
        return C64::new(0.0, (-z.re).sqrt());
    }
    z.sqrt()
}

/// Many-body operator norm `‖Γ(M)‖ = Π_i max(1, σ_i(M))` of a mode matrix.
pub fn many_body_norm(m: &ModeMatrix) -> f64 {
    log_many_body_norm(m).exp()
}

fn log_many_body_norm(m: &ModeMatrix) -> f64 {
    if m.is_unitary() {
        return 0.0;
    }
    m.matrix().clone().singular_values().iter().map(|s| s.ln().max(0.0)).sum()
}

/// Ket and bra mode matrices of one similarity step with signs `row`.
///
/// Ket: `e^{-iJτh} diag(e^{i s a})`. Bra: its inverse adjoint
/// `e^{-i J̄ τ h} diag(e^{i s ā})`, with `a = √(κτ)`.
pub fn similarity_step(lattice: &BipartiteLattice, c: ComplexCoupling, tau: f64, row: &[i8]) -> (ModeMatrix, ModeMatrix) {
    let a = step_angle(c.dephasing_rate(), tau);
    let ket = dephase_step_complex(row, a).then(&hopping_step(lattice, c.j, tau));
    let bra = dephase_step_complex(row, a.conj()).then(&hopping_step(lattice, c.j.conj(), tau));
    (ket, bra)
}

/// End point of one similarity trajectory. Amplitudes are
/// `e^{log_scale} · pair_amplitude(ket, bra)`.
#[derive(Clone, Debug)]
pub struct SimilarityOutcome {
    pub ket: SlaterState,
    pub bra: SlaterState,
    pub log_scale: f64,
    /// Log of the sub-multiplicative bound `Π_r ‖Γ(S_r)‖ ‖Γ(S_r⁻¹)‖`.
    pub log_chain_bound: f64,
}

impl SimilarityOutcome {
    pub fn amplitude(&self, n: &Configuration, m: &Configuration) -> Result<C64> {
        Ok(pair_amplitude(&self.ket, &self.bra, n, m)? * self.log_scale.exp())
    }
}

fn rescale(state: &mut SlaterState) -> f64 {
    let mx = max_abs(state.orbitals());
    if mx > RESCALE_ABOVE || (mx < RESCALE_BELOW && mx > 0.0) {
        let k = state.n_particles() as f64;
        state.orbitals_mut().iter_mut().for_each(|z| *z /= mx);
        return k * mx.ln();
    }
    0.0
}

/// Evolves `|ket⟩⟨bra|` under `ρ ↦ S(s) ρ S(s)⁻¹` for `steps` steps of length `t/steps`.
#[allow(clippy::too_many_arguments)]
pub fn similarity_trajectory(
    ket: &SlaterState,
    bra: &SlaterState,
    lattice: &BipartiteLattice,
    c: ComplexCoupling,
    t: f64,
    steps: usize,
    signs: &SignString,
    log_cap: f64,
) -> Result<SimilarityOutcome> {
    let n = lattice.n_sites();
    if steps == 0 || !(t >= 0.0) {
        return Err(Error::Domain("similarity trajectory needs t ≥ 0 and at least one step".into()));
    }
    if signs.steps() != steps || signs.sites() != n || ket.n_modes() != n || bra.n_modes() != n {
        return Err(Error::Shape("trajectory inputs disagree on steps or modes".into()));
    }
    let tau = t / steps as f64;
    let a = step_angle(c.dephasing_rate(), tau);
    let hop_k = hopping_step(lattice, c.j, tau);
    let hop_b = hopping_step(lattice, c.j.conj(), tau);
    let (lk_hop, lb_hop) = (log_many_body_norm(&hop_k), log_many_body_norm(&hop_b));
    let (mut k, mut b) = (ket.clone(), bra.clone());
    let (mut log_scale, mut log_chain) = (0.0, 0.0);
    for r in 0..steps {
        let sk = dephase_step_complex(signs.row(r), a).then(&hop_k);
        let sb = dephase_step_complex(signs.row(r), a.conj()).then(&hop_b);
        log_chain += if a.im == 0.0 { lk_hop + lb_hop } else { log_many_body_norm(&sk) + log_many_body_norm(&sb) };
        k = apply_mode_matrix(&k, &sk)?;
        b = apply_mode_matrix(&b, &sb)?;
        log_scale += rescale(&mut k) + rescale(&mut b);
        if log_scale > log_cap {
            return Err(Error::OverflowGuard { log_scale, cap: log_cap });
        }
    }
    let norm0 = (crate::linalg::det(&ket.gram()).norm() * crate::linalg::det(&bra.gram()).norm()).sqrt();
    Ok(SimilarityOutcome { ket: k, bra: b, log_scale, log_chain_bound: log_chain + norm0.ln() })
}

/// Bound on `‖e^{-itJH₀}‖` (or on its inverse): `exp(t Σ_k max(0, ±Im J · ε_k))`.
///
/// For `Im J ≤ 0` the forward bound is `exp(t Im J · min_n Σ ε_k n_k)`; the
/// minimum is attained by filling every negative mode.
pub fn spectral_norm_bound(lattice: &BipartiteLattice, j: C64, t: f64, inverse: bool) -> f64 {
    let sign = if inverse { -1.0 } else { 1.0 };
    let rate: f64 = lattice.spectrum().iter().map(|e| (sign * j.im * e).max(0.0)).sum();
    (t * rate).exp()
}

/// Sample-independent Hölder bound on `|X(s)|` for a normalized rank-one
/// initial state and a unit-norm observable, as a logarithm.
pub fn log_holder_bound(lattice: &BipartiteLattice, c: ComplexCoupling, t: f64, steps: usize) -> f64 {
    let tau = if steps == 0 { 0.0 } else { t / steps as f64 };
    let a = step_angle(c.dephasing_rate(), tau);
    let hop = spectral_norm_bound(lattice, c.j, t, false).ln() + spectral_norm_bound(lattice, c.j, t, true).ln();
    hop + (steps * lattice.n_sites()) as f64 * a.im.abs()
}

/// Dense check that `|Ψ(t, J, iγ)|` and `|Ψ(t, -J, iγ)|` agree entrywise.
pub fn negate_hopping_gauge_check(
    lattice: &BipartiteLattice,
    gamma: f64,
    up: &[usize],
    down: &[usize],
    t: f64,
) -> Result<f64> {
    let n = lattice.n_sites();
    let (u, d) = (init_slater(n, up)?, init_slater(n, down)?);
    let plus = hubbard_oracle(lattice, ONE, gamma, &u, &d, t)?;
    let minus = hubbard_oracle(lattice, -ONE, gamma, &u, &d, t)?;
    Ok(plus
        .amplitudes
        .iter()
        .zip(minus.amplitudes.iter())
        .map(|(a, b)| (a.norm() - b.norm()).abs())
        .fold(0.0, f64::max))
}

/// Inputs of a variance-growth probe over a time grid.
#[derive(Clone, Debug)]
pub struct ProbeRequest {
    pub lattice: BipartiteLattice,
    pub coupling: ComplexCoupling,
    pub ket: SlaterState,
    pub bra: SlaterState,
    pub n: Configuration,
    pub m: Configuration,
    pub times: Vec<f64>,
    /// Target step; each time uses `max(1, round(t/tau))` steps.
    pub tau: f64,
    pub samples: usize,
    pub seed: u64,
    pub log_cap: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeRow {
    pub t: f64,
    pub steps: usize,
    pub arg_j: f64,
    pub arg_u: f64,
    pub s: f64,
    pub max_abs_x: f64,
    pub var_re: f64,
    pub var_im: f64,
    /// Sample-independent Hölder bound.
    pub bound: f64,
    /// Samples whose `|X|` exceeded their own step-composed bound.
    pub chain_violations: usize,
}

#[derive(Clone, Debug)]
pub struct ProbeReport {
    pub rows: Vec<ProbeRow>,
    /// Least-squares slope of `ln max|X|` against `t` over the upper half of the grid.
    pub slope: Option<f64>,
    /// Growth rate `|Im J| · Σ |ε_k < 0|` of one hopping bound, for comparison.
    pub reference_rate: f64,
}

pub fn steps_for(t: f64, tau: f64) -> usize {
    ((t / tau).round() as usize).max(1)
}

pub fn variance_probe(req: &ProbeRequest) -> Result<ProbeReport> {
    if req.samples < 2 {
        return Err(Error::Domain("a variance probe needs at least two samples".into()));
    }
    if !(req.tau > 0.0) {
        return Err(Error::Domain(format!("probe step must be positive, got {}", req.tau)));
    }
    let point = torus_coords(req.coupling)?;
    let n_sites = req.lattice.n_sites();
    let mut rows = Vec::with_capacity(req.times.len());
    for &t in &req.times {
        let steps = steps_for(t, req.tau);
        let outcomes: Vec<(C64, f64)> = (0..req.samples as u64)
            .into_par_iter()
            .map(|index| {
                let signs = sample_sign_string(steps, n_sites, &mut trajectory_rng(req.seed, index));
                let out = similarity_trajectory(
                    &req.ket,
                    &req.bra,
                    &req.lattice,
                    req.coupling,
                    t,
                    steps,
                    &signs,
                    req.log_cap,
                )?;
                Ok((out.amplitude(&req.n, &req.m)?, out.log_chain_bound))
            })
            .collect::<Result<_>>()?;
        let k = outcomes.len() as f64;
        let mean = outcomes.iter().fold(ZERO, |acc, (x, _)| acc + x) / k;
        let (mut var_re, mut var_im, mut max_abs_x) = (0.0, 0.0, 0.0f64);
        let mut chain_violations = 0;
        for (x, log_chain) in &outcomes {
            var_re += (x.re - mean.re).powi(2);
            var_im += (x.im - mean.im).powi(2);
            max_abs_x = max_abs_x.max(x.norm());
            if x.norm() > log_chain.exp() * (1.0 + 1e-9) + 1e-12 {
                chain_violations += 1;
            }
        }
        rows.push(ProbeRow {
            t,
            steps,
            arg_j: point.arg_j,
            arg_u: point.arg_u,
            s: point.s,
            max_abs_x,
            var_re: var_re / (k - 1.0),
            var_im: var_im / (k - 1.0),
            bound: log_holder_bound(&req.lattice, req.coupling, t, steps).exp(),
            chain_violations,
        });
    }
    let upper = &rows[rows.len() / 2..];
    let slope = fit_slope(upper.iter().map(|r| (r.t, r.max_abs_x.ln())));
    let reference_rate =
        req.coupling.j.im.abs() * req.lattice.spectrum().iter().filter(|&&e| e < 0.0).map(|e| -e).sum::<f64>();
    Ok(ProbeReport { rows, slope, reference_rate })
}

fn fit_slope(points: impl Iterator<Item = (f64, f64)>) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points.filter(|(_, y)| y.is_finite()).collect();
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let (mx, my) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x / k, b + y / k));
    let (sxy, sxx) = pts
        .iter()
        .fold((0.0, 0.0), |(a, b), (x, y)| (a + (x - mx) * (y - my), b + (x - mx).powi(2)));
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Spinful coefficient map of [`hubbard_oracle`] restricted to one configuration pair.
pub fn dense_generalized_amplitude(
    lattice: &BipartiteLattice,
    c: ComplexCoupling,
    up: &SlaterState,
    down: &SlaterState,
    n: &Configuration,
    m: &Configuration,
    t: f64,
) -> Result<C64> {
    let psi0 = crate::duality::product_state(lattice, up, down)?;
    let Space::Spinful(basis) = &psi0.space else { unreachable!("product_state is spinful") };
    let h = crate::fock::build_generalized_hubbard(lattice, c.j, c.u, -c.u * 0.5, basis.sector())?;
    let psi = crate::fock::evolve_dense(&psi0, &h, t)?;
    crate::fock::amplitude_from_state(&psi, n.sites(), m.sites())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{evolve_trajectory, ChannelPlan};
    use crate::duality::DualityMap;
    use crate::fock::{hopping_operator, LiouvilleSpace};
    use crate::linalg::{expm, kron, matrix_power, CMatrix, CVector};
    use std::f64::consts::{FRAC_PI_2, PI};

    fn chain(n: usize) -> BipartiteLattice {
        BipartiteLattice::chain(n, -1.0).unwrap()
    }

    fn cfg(s: &[usize], n: usize) -> Configuration {
        Configuration::new(s, n).unwrap()
    }

    #[test]
    fn torus_examples() {
        let p = torus_coords(ComplexCoupling::new(ONE, I)).unwrap();
        assert!(p.arg_j.abs() < 1e-15 && (p.arg_u - FRAC_PI_2).abs() < 1e-15);
        assert!((p.s - (-1.0f64).exp()).abs() < 1e-15);
        let free = torus_coords(ComplexCoupling::new(ONE, ZERO)).unwrap();
        assert_eq!((free.arg_u, free.s), (0.0, 1.0));
        let q = torus_coords(ComplexCoupling::new(I, ONE)).unwrap();
        assert!((q.arg_j - FRAC_PI_2).abs() < 1e-15 && q.arg_u == 0.0);
        assert!((q.s - (-1.0f64).exp()).abs() < 1e-15);
        assert!(matches!(torus_coords(ComplexCoupling::new(ZERO, ONE)), Err(Error::Domain(_))));
        let neg = torus_coords(ComplexCoupling::new(C64::new(0.0, -1.0), ONE)).unwrap();
        assert!((neg.arg_j - 1.5 * PI).abs() < 1e-15);
    }

    #[test]
    fn torus_round_trip() {
        let mut rng = trajectory_rng(4, 0);
        use rand::Rng;
        for _ in 0..200 {
            let j = C64::from_polar(rng.random_range(0.1..3.0), rng.random_range(-PI..PI));
            let u = C64::from_polar(rng.random_range(0.01..5.0), rng.random_range(-PI..PI));
            let c = ComplexCoupling::new(j, u);
            let p = torus_coords(c).unwrap();
            assert!((p.ratio() - u.norm() / j.norm()).abs() < 1e-12);
            let back = p.coupling(j.norm());
            assert!((back.j - j).norm() < 1e-12 && (back.u - u).norm() < 1e-12);
            assert!((0.0..TAU).contains(&p.arg_j) && (0.0..TAU).contains(&p.arg_u));
        }
    }

    #[test]
    fn step_angle_is_principal() {
        assert_eq!(step_angle(C64::new(4.0, 0.0), 1.0), C64::new(2.0, 0.0));
        assert_eq!(step_angle(C64::new(-4.0, -0.0), 1.0), C64::new(0.0, 2.0));
        for arg in [-3.0, -1.0, 0.0, 1.0, 3.0] {
            let a = step_angle(C64::from_polar(1.0, arg), 0.5);
            assert!(a.arg() > -FRAC_PI_2 && a.arg() <= FRAC_PI_2);
            assert!((a * a - C64::from_polar(0.5, arg)).norm() < 1e-15);
        }
    }

    #[test]
    fn other_branch_equals_negated_signs() {
        let l = chain(2);
        let c = ComplexCoupling::new(C64::new(1.0, -0.2), C64::new(0.3, 0.9));
        let (t, steps) = (0.9, 3);
        let a = -step_angle(c.dephasing_rate(), t / steps as f64);
        let ket0 = init_slater(2, &[0]).unwrap();
        let bra0 = init_slater(2, &[1]).unwrap();
        for index in 0..1u64 << (2 * steps) {
            let s = SignString::enumerate(steps, 2, index);
            let neg = SignString::new(steps, 2, s.as_slice().iter().map(|x| -x).collect()).unwrap();
            let principal = similarity_trajectory(&ket0, &bra0, &l, c, t, steps, &neg, DEFAULT_LOG_CAP).unwrap();
            let (mut ket, mut bra) = (ket0.clone(), bra0.clone());
            for r in 0..steps {
                let tau = t / steps as f64;
                ket = apply_mode_matrix(&ket, &dephase_step_complex(s.row(r), a).then(&hopping_step(&l, c.j, tau))).unwrap();
                bra = apply_mode_matrix(&bra, &dephase_step_complex(s.row(r), a.conj()).then(&hopping_step(&l, c.j.conj(), tau)))
                    .unwrap();
            }
            for (n, m) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                let (cn, cm) = (cfg(&[n], 2), cfg(&[m], 2));
                let other = pair_amplitude(&ket, &bra, &cn, &cm).unwrap();
                assert!((principal.amplitude(&cn, &cm).unwrap() - other).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn bra_step_is_the_inverse_adjoint() {
        let l = chain(3);
        let c = ComplexCoupling::new(C64::new(0.9, -0.2), C64::new(0.3, 0.8));
        let (k, b) = similarity_step(&l, c, 0.1, &[1, -1, 1]);
        let prod = b.matrix().adjoint() * k.matrix();
        assert!(max_abs(&(prod - CMatrix::identity(3, 3))) < 1e-13);
        let via = k.inverse_adjoint().unwrap();
        assert!(max_abs(&(via.matrix() - b.matrix())) < 1e-13);
    }

    #[test]
    fn real_slice_reduces_to_the_unitary_channel() {
        let l = chain(3);
        let ket = init_slater(3, &[0, 2]).unwrap();
        let bra = DualityMap::default().bra_state(&l, &init_slater(3, &[1]).unwrap()).unwrap();
        let (gamma, t, steps) = (0.8, 1.5, 30);
        let plan = ChannelPlan::new(&l, gamma, t, steps).unwrap();
        let c = ComplexCoupling::from_dephasing(ONE, C64::new(gamma, 0.0));
        let p = torus_coords(c).unwrap();
        assert!(p.arg_j == 0.0 && (p.arg_u - FRAC_PI_2).abs() < 1e-15);
        for index in 0..20 {
            let s = sample_sign_string(steps, 3, &mut trajectory_rng(8, index));
            let sim = similarity_trajectory(&ket, &bra, &l, c, t, steps, &s, DEFAULT_LOG_CAP).unwrap();
            let (k, b) = evolve_trajectory(&ket, &bra, &plan, &s).unwrap();
            assert_eq!(sim.log_scale, 0.0);
            assert_eq!(sim.log_chain_bound, 0.0);
            for n in [[0, 1], [0, 2], [1, 2]] {
                for m in 0..3 {
                    let (cn, cm) = (cfg(&n, 3), cfg(&[m], 3));
                    let want = pair_amplitude(&k, &b, &cn, &cm).unwrap();
                    assert!((sim.amplitude(&cn, &cm).unwrap() - want).norm() < 1e-10);
                }
            }
        }
    }

    // Dense average of one complex step: e^{-iJτH} (cos a)^{|a⊕b|} ρ e^{iJτH}.
    fn dense_average_step(l: &BipartiteLattice, c: ComplexCoupling, tau: f64, space: &LiouvilleSpace) -> CMatrix {
        let a = step_angle(c.dephasing_rate(), tau);
        let hk = hopping_operator(l, &space.ket);
        let hb = hopping_operator(l, &space.bra);
        let left = expm(&(hk * (-I * c.j * tau)));
        let right = expm(&(hb * (I * c.j * tau)));
        let mut d = CVector::zeros(space.dim());
        for bi in 0..space.bra.dim() {
            for ai in 0..space.ket.dim() {
                let k = (space.ket.space().state(ai) ^ space.bra.space().state(bi)).count_ones();
                d[space.index(ai, bi)] = a.cos().powi(k as i32);
            }
        }
        kron(&right.transpose(), &left) * CMatrix::from_diagonal(&d)
    }

    #[test]
    fn exhaustive_complex_average_matches_dense_step() {
        let l = chain(2);
        let space = LiouvilleSpace::sectors(2, 1, 1).unwrap();
        let c = ComplexCoupling::new(C64::new(1.0, -0.3), C64::new(0.5, 1.2));
        let ket = init_slater(2, &[0]).unwrap();
        let bra = init_slater(2, &[1]).unwrap();
        let t = 0.8;
        for steps in 1..=2usize {
            let count = 1u64 << (2 * steps);
            let mut avg = vec![ZERO; 4];
            for index in 0..count {
                let s = SignString::enumerate(steps, 2, index);
                let out = similarity_trajectory(&ket, &bra, &l, c, t, steps, &s, DEFAULT_LOG_CAP).unwrap();
                for (slot, (n, m)) in [(0, 0), (0, 1), (1, 0), (1, 1)].iter().enumerate() {
                    avg[slot] += out.amplitude(&cfg(&[*n], 2), &cfg(&[*m], 2)).unwrap() / count as f64;
                }
            }
            let step = dense_average_step(&l, c, t / steps as f64, &space);
            let mut rho0 = CVector::zeros(space.dim());
            rho0[space.index(0, 1)] = ONE;
            let rho = matrix_power(&step, steps) * rho0;
            for (slot, (n, m)) in [(0, 0), (0, 1), (1, 0), (1, 1)].iter().enumerate() {
                assert!((avg[slot] - rho[space.index(*n, *m)]).norm() < 1e-12, "steps {steps} ({n},{m})");
            }
        }
    }

    #[test]
    fn free_complex_hopping_matches_the_dense_hamiltonian() {
        let l = chain(3);
        let c = ComplexCoupling::new(C64::new(1.0, -0.1), ZERO);
        let up = init_slater(3, &[0, 1]).unwrap();
        let down = init_slater(3, &[2]).unwrap();
        let map = DualityMap::default();
        let bra = map.bra_state(&l, &down).unwrap();
        let t = 2.5;
        let out = similarity_trajectory(&up, &bra, &l, c, t, 5, &SignString::enumerate(5, 3, 0), DEFAULT_LOG_CAP).unwrap();
        for n in [[0, 1], [0, 2], [1, 2]] {
            for m in 0..3 {
                let (cn, cm) = (cfg(&n, 3), cfg(&[m], 3));
                let want = dense_generalized_amplitude(&l, c, &up, &down, &cn, &cm, t).unwrap();
                let got = out.amplitude(&cn, &cm).unwrap() * map.output_phase(&l, &cm);
                assert!((got - want).norm() < 1e-10, "{n:?} {m}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn lowest_mode_grows_at_the_analytic_rate() {
        let l = chain(2);
        let j = C64::new(1.0, -0.1);
        let c = ComplexCoupling::new(j, ZERO);
        let (eps, v) = (l.spectrum()[0], l.eigenvectors().column(0).map(|x| C64::new(x, 0.0)));
        let ket = SlaterState::from_orbitals(CMatrix::from_column_slice(2, 1, v.as_slice())).unwrap();
        let bra = ket.clone();
        for t in [1.0, 5.0, 20.0] {
            let out = similarity_trajectory(&ket, &bra, &l, c, t, 10, &SignString::enumerate(10, 2, 0), DEFAULT_LOG_CAP).unwrap();
            let amp: f64 = (0..2).map(|k| out.amplitude(&cfg(&[k], 2), &cfg(&[k], 2)).unwrap()).sum::<C64>().re;
            let ket_norm = (crate::linalg::det(&out.ket.gram()).re).sqrt() * (out.log_scale / 2.0).exp();
            assert!((ket_norm - (t * j.im * eps).exp()).abs() < 1e-10 * ket_norm);
            assert!((ket_norm - (-t * j.im * eps.abs()).exp()).abs() < 1e-10 * ket_norm);
            assert!((amp - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn spectral_bound_examples() {
        let l = chain(2);
        let j = C64::new(1.0, -0.1);
        assert!((spectral_norm_bound(&l, j, 10.0, false) - 1.0f64.exp()).abs() < 1e-12);
        assert!((spectral_norm_bound(&l, j, 10.0, true) - 1.0f64.exp()).abs() < 1e-12);
        assert_eq!(spectral_norm_bound(&l, ONE, 10.0, false), 1.0);
        assert_eq!(spectral_norm_bound(&l, j, 0.0, false), 1.0);
        let h = hopping_step(&l, j, 10.0);
        assert!((many_body_norm(&h) - spectral_norm_bound(&l, j, 10.0, false)).abs() < 1e-12);
        let inv = hopping_step(&l, -j, 10.0);
        assert!((many_body_norm(&inv) - spectral_norm_bound(&l, j, 10.0, true)).abs() < 1e-12);
    }

    #[test]
    fn many_body_norm_matches_dense_operator_norm() {
        let l = chain(3);
        let space = LiouvilleSpace::full(3).unwrap();
        let j = C64::new(0.7, -0.4);
        let dense = expm(&(hopping_operator(&l, &space.ket) * (-I * j * 1.3)));
        let want = crate::linalg::op_norm(&dense);
        assert!((many_body_norm(&hopping_step(&l, j, 1.3)) - want).abs() < 1e-10 * want);
        assert!((spectral_norm_bound(&l, j, 1.3, false) - want).abs() < 1e-10 * want);
    }

    #[test]
    fn every_sample_respects_the_holder_chain() {
        for n in [2usize, 3] {
            let l = chain(n);
            let up = init_slater(n, &[0]).unwrap();
            let bra = DualityMap::default().bra_state(&l, &init_slater(n, &[n - 1]).unwrap()).unwrap();
            for c in [
                ComplexCoupling::from_dephasing(C64::new(1.0, -0.1), ONE),
                ComplexCoupling::new(C64::new(0.8, 0.3), C64::new(0.4, 0.9)),
                ComplexCoupling::new(ONE, C64::new(1.0, 0.0)),
            ] {
                let (t, steps) = (3.0, 30);
                let cap = log_holder_bound(&l, c, t, steps);
                for index in 0..50 {
                    let s = sample_sign_string(steps, n, &mut trajectory_rng(6, index));
                    let out = similarity_trajectory(&up, &bra, &l, c, t, steps, &s, DEFAULT_LOG_CAP).unwrap();
                    assert!(out.log_chain_bound <= cap + 1e-9);
                    for a in 0..n {
                        for b in 0..n {
                            let x = out.amplitude(&cfg(&[a], n), &cfg(&[b], n)).unwrap().norm();
                            assert!(x <= out.log_chain_bound.exp() * (1.0 + 1e-9));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn overflow_guard_trips() {
        let l = chain(2);
        let c = ComplexCoupling::new(C64::new(1.0, -5.0), ZERO);
        let ket = init_slater(2, &[0]).unwrap();
        let err = similarity_trajectory(&ket, &ket, &l, c, 200.0, 400, &SignString::enumerate(400, 2, 0), 50.0);
        assert!(matches!(err, Err(Error::OverflowGuard { .. })));
        let ok = similarity_trajectory(&ket, &ket, &l, c, 50.0, 400, &SignString::enumerate(400, 2, 0), DEFAULT_LOG_CAP)
            .unwrap();
        assert!(ok.log_scale > 230.0);
        assert!(ok.amplitude(&cfg(&[0], 2), &cfg(&[0], 2)).unwrap().is_finite());
    }

    fn probe(c: ComplexCoupling, samples: usize) -> ProbeReport {
        let l = chain(2);
        let req = ProbeRequest {
            lattice: l.clone(),
            coupling: c,
            ket: init_slater(2, &[0]).unwrap(),
            bra: DualityMap::default().bra_state(&l, &init_slater(2, &[1]).unwrap()).unwrap(),
            n: cfg(&[0], 2),
            m: cfg(&[1], 2),
            times: (0..=10).map(|k| k as f64).collect(),
            tau: 0.05,
            samples,
            seed: 11,
            log_cap: DEFAULT_LOG_CAP,
        };
        variance_probe(&req).unwrap()
    }

    #[test]
    fn unitary_probe_is_flat_and_bounded() {
        let report = probe(ComplexCoupling::from_dephasing(ONE, ONE), 200);
        for r in &report.rows {
            assert!(r.max_abs_x <= 1.0 + 1e-12);
            assert_eq!(r.bound, 1.0);
            assert_eq!(r.chain_violations, 0);
        }
        assert!(report.slope.unwrap().abs() < 0.05, "slope {:?}", report.slope);
    }

    #[test]
    fn complex_hopping_probe_grows_within_bounds() {
        let report = probe(ComplexCoupling::from_dephasing(C64::new(1.0, -0.1), ONE), 200);
        assert!(report.slope.unwrap() > 0.0, "slope {:?}", report.slope);
        assert!((report.reference_rate - 0.1).abs() < 1e-12);
        for r in &report.rows {
            assert!(r.max_abs_x <= r.bound * (1.0 + 1e-9));
            assert_eq!(r.chain_violations, 0);
        }
    }

    #[test]
    fn gauge_check_examples() {
        let l = chain(2);
        assert!(negate_hopping_gauge_check(&l, 1.0, &[0], &[1], 1.0).unwrap() <= 1e-10);
        assert_eq!(negate_hopping_gauge_check(&l, 1.0, &[0], &[1], 0.0).unwrap(), 0.0);
        assert!(negate_hopping_gauge_check(&l, 0.0, &[0], &[1], 3.0).unwrap() <= 1e-12);
        let l3 = chain(3);
        for gamma in [0.5, 2.0] {
            for t in [0.1, 1.0, 5.0] {
                assert!(negate_hopping_gauge_check(&l3, gamma, &[0, 2], &[1], t).unwrap() <= 1e-10);
            }
        }
    }
}
