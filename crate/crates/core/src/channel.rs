//! Stochastic mixed-unitary dephasing channel.
//!
//! One Trotter step draws a sign `s_j = ±1` per site, applies
//! `e^{i s_j θ n_j}` with `θ = √(γτ)` and then the hopping propagator
//! `e^{-iτh}`. Averaged over signs this is a first-order approximation of
//! `e^{τ𝓛}` for the dephasing Lindbladian.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fock::{hopping_operator, DenseOperator, LiouvilleSpace, Space, MAX_DIM};
use crate::lattice::BipartiteLattice;
use crate::linalg::{expm, kron, CMatrix, C64, I, ONE, ZERO};
use crate::slater::{apply_mode_matrix, dephase_step, hopping_step, pair_amplitude, Configuration, ModeMatrix, SlaterState};

/// Time discretization and dephasing strength of one channel run.
#[derive(Clone, Debug)]
pub struct ChannelPlan {
    lattice: BipartiteLattice,
    gamma: f64,
    t: f64,
    steps: usize,
    tau: f64,
    theta: f64,
    hop: ModeMatrix,
}

impl ChannelPlan {
    pub fn new(lattice: &BipartiteLattice, gamma: f64, t: f64, steps: usize) -> Result<Self> {
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::Domain(format!("dephasing rate must be finite and non-negative, got {gamma}")));
        }
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::Domain(format!("time must be finite and non-negative, got {t}")));
        }
        if steps == 0 {
            return Err(Error::Domain("at least one Trotter step is required".into()));
        }
        let tau = t / steps as f64;
        let theta = (gamma * tau).sqrt();
        Ok(ChannelPlan {
            lattice: lattice.clone(),
            gamma,
            t,
            steps,
            tau,
            theta,
            hop: hopping_step(lattice, ONE, tau),
        })
    }

    pub fn lattice(&self) -> &BipartiteLattice {
        &self.lattice
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn n_sites(&self) -> usize {
        self.lattice.n_sites()
    }

    pub fn hopping(&self) -> &ModeMatrix {
        &self.hop
    }
}

/// `R × N` array of ±1 values, row-major by step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SignString {
    steps: usize,
    sites: usize,
    signs: Vec<i8>,
}

impl SignString {
    pub fn new(steps: usize, sites: usize, signs: Vec<i8>) -> Result<Self> {
        if signs.len() != steps * sites {
            return Err(Error::Shape(format!("{} signs for a {steps}×{sites} string", signs.len())));
        }
        if signs.iter().any(|&s| s != 1 && s != -1) {
            return Err(Error::Domain("sign entries must be exactly ±1".into()));
        }
        Ok(SignString { steps, sites, signs })
    }

    /// The `index`-th of all `2^{steps·sites}` strings: bit `k` set means `−1`
    /// at flat position `k`. Positions past bit 63 are `+1`.
    pub fn enumerate(steps: usize, sites: usize, index: u64) -> Self {
        let bit = |k: usize| u32::try_from(k).ok().and_then(|k| index.checked_shr(k)).unwrap_or(0) & 1;
        let signs = (0..steps * sites).map(|k| if bit(k) == 1 { -1 } else { 1 }).collect();
        SignString { steps, sites, signs }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn row(&self, r: usize) -> &[i8] {
        &self.signs[r * self.sites..(r + 1) * self.sites]
    }

    pub fn as_slice(&self) -> &[i8] {
        &self.signs
    }
}

/// Generator for trajectory `index` under `master_seed`, independent of
/// which thread runs it.
pub fn trajectory_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

pub fn sample_signs(plan: &ChannelPlan, rng: &mut impl Rng) -> SignString {
    sample_sign_string(plan.steps, plan.n_sites(), rng)
}

pub(crate) fn sample_sign_string(steps: usize, sites: usize, rng: &mut impl Rng) -> SignString {
    let signs = (0..steps * sites).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
    SignString { steps, sites, signs }
}

/// Applies the sampled unitary `Π_r e^{-iτh} D(s_r)` to ket and bra alike.
pub fn evolve_trajectory(
    ket: &SlaterState,
    bra: &SlaterState,
    plan: &ChannelPlan,
    signs: &SignString,
) -> Result<(SlaterState, SlaterState)> {
    let n = plan.n_sites();
    if ket.n_modes() != n || bra.n_modes() != n {
        return Err(Error::Shape(format!("states on {} and {} modes for a {n}-site plan", ket.n_modes(), bra.n_modes())));
    }
    if signs.steps != plan.steps || signs.sites != n {
        return Err(Error::Shape(format!(
            "{}×{} sign string for a {}×{n} plan",
            signs.steps, signs.sites, plan.steps
        )));
    }
    let (mut k, mut b) = (ket.clone(), bra.clone());
    for r in 0..plan.steps {
        let step = dephase_step(signs.row(r), plan.theta).then(&plan.hop);
        k = apply_mode_matrix(&k, &step)?;
        b = apply_mode_matrix(&b, &step)?;
    }
    Ok((k, b))
}

/// Sample mean of one configuration-pair amplitude.
#[derive(Clone, Debug, PartialEq)]
pub struct AmplitudeEstimate {
    pub n: Configuration,
    pub m: Configuration,
    pub mean: C64,
    /// `max(se(Re), se(Im))`.
    pub stderr: f64,
    pub n_samples: usize,
}

impl AmplitudeEstimate {
    /// Mean and standard error of `samples`, summed in slice order.
    pub fn from_samples(n: Configuration, m: Configuration, samples: &[C64]) -> Self {
        let k = samples.len();
        assert!(k >= 1, "an estimate needs at least one sample");
        let mean = samples.iter().fold(ZERO, |acc, z| acc + z) / k as f64;
        let stderr = if k == 1 {
            0.0
        } else {
            let (mut vr, mut vi) = (0.0, 0.0);
            for z in samples {
                vr += (z.re - mean.re).powi(2);
                vi += (z.im - mean.im).powi(2);
            }
            let denom = ((k - 1) * k) as f64;
            (vr / denom).sqrt().max((vi / denom).sqrt())
        };
        AmplitudeEstimate { n, m, mean, stderr, n_samples: k }
    }

    /// Multiplies the mean by a unit-modulus phase.
    pub fn with_phase(mut self, phase: C64) -> Self {
        self.mean *= phase;
        self
    }
}

/// Per-trajectory amplitudes `X(s)` for each config, `samples[trajectory][config]`.
///
/// Runs on the ambient rayon pool; slots are indexed by trajectory so the
/// result does not depend on scheduling.
pub fn sample_amplitudes(
    ket: &SlaterState,
    bra: &SlaterState,
    plan: &ChannelPlan,
    configs: &[(Configuration, Configuration)],
    samples: usize,
    seed: u64,
) -> Result<Vec<Vec<C64>>> {
    (0..samples as u64)
        .into_par_iter()
        .map(|index| {
            let signs = sample_signs(plan, &mut trajectory_rng(seed, index));
            let (k, b) = evolve_trajectory(ket, bra, plan, &signs)?;
            configs.iter().map(|(n, m)| pair_amplitude(&k, &b, n, m)).collect()
        })
        .collect()
}

/// Monte Carlo estimate of every config from the same `samples` trajectories.
pub fn monte_carlo_estimate(
    ket: &SlaterState,
    bra: &SlaterState,
    plan: &ChannelPlan,
    configs: &[(Configuration, Configuration)],
    samples: usize,
    seed: u64,
) -> Result<Vec<AmplitudeEstimate>> {
    if samples == 0 {
        return Err(Error::Domain("sample count must be at least 1".into()));
    }
    let table = sample_amplitudes(ket, bra, plan, configs, samples, seed)?;
    Ok(summarize(configs, &table))
}

pub(crate) fn summarize(configs: &[(Configuration, Configuration)], table: &[Vec<C64>]) -> Vec<AmplitudeEstimate> {
    configs
        .iter()
        .enumerate()
        .map(|(c, (n, m))| {
            let column: Vec<C64> = table.iter().map(|row| row[c]).collect();
            AmplitudeEstimate::from_samples(n.clone(), m.clone(), &column)
        })
        .collect()
}

fn checked_liouville(lattice: &BipartiteLattice, space: &LiouvilleSpace) -> Result<()> {
    if space.n_sites() != lattice.n_sites() {
        return Err(Error::Shape("Liouville space and lattice disagree on site count".into()));
    }
    if space.dim() > MAX_DIM {
        return Err(Error::Size(format!(
            "superoperator dimension {} exceeds the dense cap {MAX_DIM}",
            space.dim()
        )));
    }
    Ok(())
}

fn many_body_hop(lattice: &BipartiteLattice, space: &LiouvilleSpace, tau: f64) -> (CMatrix, CMatrix) {
    let hk = hopping_operator(lattice, &space.ket);
    let hb = hopping_operator(lattice, &space.bra);
    (expm(&(hk * (-I * tau))), expm(&(hb * (-I * tau))))
}

/// Superoperator of `ρ ↦ U ρ U†` on column-stacked `ρ`, given `U` on each side.
fn conjugation_superop(uk: &CMatrix, ub: &CMatrix) -> CMatrix {
    kron(&ub.map(|z| z.conj()), uk)
}

/// Diagonal of `ρ ↦ D(s) ρ D(s)†` with `D(s) = Π_j e^{i s_j θ n_j}`.
fn dephasing_diagonal(space: &LiouvilleSpace, signs: &[i8], theta: f64) -> Vec<C64> {
    let mut d = vec![ZERO; space.dim()];
    for b in 0..space.bra.dim() {
        let nb = space.bra.space().state(b);
        for a in 0..space.ket.dim() {
            let na = space.ket.space().state(a);
            let phase: f64 = signs
                .iter()
                .enumerate()
                .map(|(j, &s)| f64::from(s) * (((na >> j) & 1) as f64 - ((nb >> j) & 1) as f64))
                .sum();
            d[space.index(a, b)] = C64::from_polar(1.0, theta * phase);
        }
    }
    d
}

fn scale_columns(m: &CMatrix, d: &[C64]) -> CMatrix {
    let mut out = m.clone();
    for (col, &z) in d.iter().enumerate() {
        out.column_mut(col).iter_mut().for_each(|x| *x *= z);
    }
    out
}

/// Exact single-step average `2^{-N} Σ_s U_s ρ U_s†`, `U_s = e^{-iτH₀} D(s)`,
/// enumerating every sign vector.
pub fn averaged_step_superop(
    lattice: &BipartiteLattice,
    gamma: f64,
    tau: f64,
    space: &Arc<LiouvilleSpace>,
) -> Result<DenseOperator> {
    checked_liouville(lattice, space)?;
    if !(gamma >= 0.0 && tau >= 0.0) {
        return Err(Error::Domain("dephasing rate and step must be non-negative".into()));
    }
    let n = lattice.n_sites();
    if n > 20 {
        return Err(Error::Size(format!("2^{n} sign vectors is too many to enumerate")));
    }
    let theta = (gamma * tau).sqrt();
    let mut avg = vec![ZERO; space.dim()];
    for index in 0..1u64 << n {
        let s = SignString::enumerate(1, n, index);
        for (acc, z) in avg.iter_mut().zip(dephasing_diagonal(space, s.row(0), theta)) {
            *acc += z;
        }
    }
    let weight = 1.0 / (1u64 << n) as f64;
    avg.iter_mut().for_each(|z| *z *= weight);
    let (uk, ub) = many_body_hop(lattice, space, tau);
    let matrix = scale_columns(&conjugation_superop(&uk, &ub), &avg);
    DenseOperator::new(matrix, Space::Liouville(space.clone()))
}

/// Superoperator of one sampled trajectory `ρ ↦ U(s) ρ U(s)†`.
pub fn trajectory_superop(plan: &ChannelPlan, signs: &SignString, space: &Arc<LiouvilleSpace>) -> Result<DenseOperator> {
    checked_liouville(&plan.lattice, space)?;
    if signs.steps != plan.steps || signs.sites != plan.n_sites() {
        return Err(Error::Shape("sign string does not match the plan".into()));
    }
    let (uk, ub) = many_body_hop(&plan.lattice, space, plan.tau);
    let hop = conjugation_superop(&uk, &ub);
    let mut total = CMatrix::identity(space.dim(), space.dim());
    for r in 0..signs.steps {
        let d = dephasing_diagonal(space, signs.row(r), plan.theta);
        for (row, &z) in d.iter().enumerate() {
            total.row_mut(row).iter_mut().for_each(|x| *x *= z);
        }
        total = &hop * total;
    }
    DenseOperator::new(total, Space::Liouville(space.clone()))
}

/// Hoeffding sample count before rounding: `Δ²/(2ε²) · ln(2/δ)`.
pub fn hoeffding_value(range_width: f64, epsilon: f64, delta: f64) -> Result<f64> {
    for (name, v) in [("range width", range_width), ("epsilon", epsilon), ("delta", delta)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Domain(format!("{name} must be positive and finite, got {v}")));
        }
    }
    if delta >= 1.0 {
        return Err(Error::Domain(format!("delta must be below 1, got {delta}")));
    }
    Ok(range_width * range_width / (2.0 * epsilon * epsilon) * (2.0 / delta).ln())
}

/// `⌈Δ²/(2ε²) · ln(2/δ)⌉`.
///
/// Values within a relative `1e-12` of an integer round to it.
pub fn hoeffding_bound(range_width: f64, epsilon: f64, delta: f64) -> Result<u64> {
    let v = hoeffding_value(range_width, epsilon, delta)?;
    let nearest = v.round();
    let m = if nearest > 0.0 && (v - nearest).abs() <= 1e-12 * nearest { nearest } else { v.ceil() };
    Ok((m as u64).max(1))
}

/// Samples for a complex estimator: Re and Im each at confidence `δ/2`.
pub fn complex_sample_plan(range_width: f64, epsilon: f64, delta: f64) -> Result<u64> {
    hoeffding_bound(range_width, epsilon, delta / 2.0)
}

/// Width `2‖A‖` of the interval holding Re X and Im X when `|X| ≤ ‖A‖`.
pub fn observable_range(observable_norm: f64) -> Result<f64> {
    if !(observable_norm >= 0.0 && observable_norm.is_finite()) {
        return Err(Error::Domain(format!("operator norm must be finite and non-negative, got {observable_norm}")));
    }
    Ok(2.0 * observable_norm)
}
