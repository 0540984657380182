//! Imaginary-interaction Hubbard dynamics from dephasing of free fermions.
//!
//! For `ℋ = Σ h_ij a†_{iσ} a_{jσ} + iγ Σ n_{i↑} n_{i↓} - i(γ/2) Σ n_{iσ}` and
//! a product initial state `|ψ↑⟩|φ↓⟩`, the spinful coefficient of
//! `|n↑⟩|m↓⟩` at time `t` equals `(-1)^{|m ∩ A|} Ψ_nm(t)`, where `Ψ_nm` is the
//! coefficient of `|n⟩⟨m|` in `e^{t𝓛}(|ψ⟩⟨χ|)`, `𝓛` the dephasing
//! Lindbladian with rate `γ` and `χ = conj(P φ)` with `P = Π_{j∈A} (-1)^{n_j}`.
//! The up spin lives on the ket, the down spin on the bra.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::channel::{monte_carlo_estimate, AmplitudeEstimate, ChannelPlan};
use crate::error::{Error, Result};
use crate::fock::{
    build_generalized_hubbard, build_lindbladian_superop, evolve_dense, evolve_superop, slater_vector, DenseOperator,
    DenseState, FockBasis, LiouvilleSpace, Sector, Space, SpinlessBasis, MAX_DIM,
};
use crate::lattice::{BipartiteLattice, Sublattice};
use crate::linalg::{CMatrix, CVector, C64, I, ONE};
use crate::slater::{init_slater, Configuration, SlaterState};

/// `e^{iθk}` with `k = |config ∩ A|`.
pub fn gauge_phase(config: &[usize], partition: &[Sublattice], theta: f64) -> C64 {
    let k = config.iter().filter(|&&s| partition.get(s) == Some(&Sublattice::A)).count();
    C64::from_polar(1.0, theta * k as f64)
}

/// Coupling sets on either side of the duality.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Couplings {
    /// `J H₀ + U Σ n↑n↓ + mu Σ n`, with `mu = -U/2` for the map to apply.
    Hubbard { j: C64, u: C64, mu: C64 },
    /// `-iJ[H₀, ·] + rate Σ (n · n - ½{n, ·})`.
    Lindblad { j: C64, rate: C64 },
}

/// Which spin species rides on which side of `|ket⟩⟨bra|`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Spin {
    Up,
    Down,
}

/// Sublattice gauge and parameter correspondence between the two pictures.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DualityMap {
    pub theta: f64,
    pub ket_spin: Spin,
    pub bra_spin: Spin,
}

impl Default for DualityMap {
    fn default() -> Self {
        DualityMap { theta: PI, ket_spin: Spin::Up, bra_spin: Spin::Down }
    }
}

impl DualityMap {
    /// Maps Hubbard couplings to Lindblad ones and back. The Hubbard side
    /// needs `mu = -U/2`: that chemical potential is exactly the
    /// anticommutator part of the dissipator.
    pub fn apply(&self, c: Couplings) -> Result<Couplings> {
        match c {
            Couplings::Hubbard { j, u, mu } => {
                if (mu + u * 0.5).norm() > 1e-14 * u.norm().max(1.0) {
                    return Err(Error::Domain(format!(
                        "the duality needs mu = -U/2, got U = {u}, mu = {mu}"
                    )));
                }
                Ok(Couplings::Lindblad { j, rate: -I * u })
            }
            Couplings::Lindblad { j, rate } => {
                let u = I * rate;
                Ok(Couplings::Hubbard { j, u, mu: -u * 0.5 })
            }
        }
    }

    /// Single-particle gauge `diag(e^{iθ})` on A and `1` on B.
    pub fn gauge_mode_phases(&self, lattice: &BipartiteLattice) -> Vec<C64> {
        lattice
            .partition()
            .iter()
            .map(|s| if *s == Sublattice::A { C64::from_polar(1.0, self.theta) } else { ONE })
            .collect()
    }

    /// Bra Slater state `conj(P φ)` for a down-spin state `φ`.
    pub fn bra_state(&self, lattice: &BipartiteLattice, down: &SlaterState) -> Result<SlaterState> {
        let phases = self.gauge_mode_phases(lattice);
        let mut o = down.orbitals().clone();
        for (k, p) in phases.iter().enumerate() {
            o.row_mut(k).iter_mut().for_each(|z| *z = (*z * p).conj());
        }
        SlaterState::from_orbitals(o)
    }

    /// Phase turning a Lindblad-side coefficient `Ψ_nm` into the Hubbard one.
    pub fn output_phase(&self, lattice: &BipartiteLattice, m: &Configuration) -> C64 {
        gauge_phase(m.sites(), lattice.partition(), self.theta)
    }

    /// Diagonal superoperator `ρ ↦ ρ 𝒰_A(θ)` on column-stacked `ρ`, the bra-side gauge.
    pub fn bra_gauge_superop(&self, lattice: &BipartiteLattice, space: &Arc<LiouvilleSpace>) -> Result<DenseOperator> {
        let a_mask: u64 = lattice
            .partition()
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == Sublattice::A)
            .map(|(k, _)| 1u64 << k)
            .sum();
        let mut d = CVector::zeros(space.dim());
        for b in 0..space.bra.dim() {
            let k = (space.bra.space().state(b) & a_mask).count_ones();
            for a in 0..space.ket.dim() {
                d[space.index(a, b)] = C64::from_polar(1.0, self.theta * f64::from(k));
            }
        }
        DenseOperator::new(CMatrix::from_diagonal(&d), Space::Liouville(space.clone()))
    }
}

/// Inputs of one sampled imaginary-Hubbard run.
#[derive(Clone, Debug)]
pub struct HubbardRequest {
    pub lattice: BipartiteLattice,
    pub gamma: f64,
    pub up_initial: SlaterState,
    pub down_initial: SlaterState,
    pub t: f64,
    pub steps: usize,
    pub samples: usize,
    /// `(up configuration, down configuration)` pairs to estimate.
    pub configs: Vec<(Configuration, Configuration)>,
    pub seed: u64,
}

impl HubbardRequest {
    /// Request starting from occupation-basis product states.
    #[allow(clippy::too_many_arguments)]
    pub fn from_sites(
        lattice: &BipartiteLattice,
        gamma: f64,
        up: &[usize],
        down: &[usize],
        t: f64,
        steps: usize,
        samples: usize,
        configs: &[(Vec<usize>, Vec<usize>)],
        seed: u64,
    ) -> Result<Self> {
        let n = lattice.n_sites();
        let configs = configs
            .iter()
            .map(|(u, d)| Ok((Configuration::new(u, n)?, Configuration::new(d, n)?)))
            .collect::<Result<Vec<_>>>()?;
        let req = HubbardRequest {
            lattice: lattice.clone(),
            gamma,
            up_initial: init_slater(n, up)?,
            down_initial: init_slater(n, down)?,
            t,
            steps,
            samples,
            configs,
            seed,
        };
        req.validate()?;
        Ok(req)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.lattice.n_sites();
        if self.up_initial.n_modes() != n || self.down_initial.n_modes() != n {
            return Err(Error::Shape("initial states do not match the lattice size".into()));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Domain(format!("gamma must be finite and non-negative, got {}", self.gamma)));
        }
        if self.samples == 0 {
            return Err(Error::Domain("sample count must be at least 1".into()));
        }
        let (ku, kd) = (self.up_initial.n_particles(), self.down_initial.n_particles());
        for (u, d) in &self.configs {
            if u.len() != ku || d.len() != kd {
                return Err(Error::Sector(format!(
                    "configuration (up {u}, down {d}) is outside the ({ku}, {kd}) sector of the initial state"
                )));
            }
        }
        Ok(())
    }
}

/// Sampled `Ψ_{n↑, m↓}(t)` for every requested configuration.
pub fn simulate_hubbard_wavefunction(req: &HubbardRequest) -> Result<Vec<AmplitudeEstimate>> {
    req.validate()?;
    let map = DualityMap::default();
    let plan = ChannelPlan::new(&req.lattice, req.gamma, req.t, req.steps)?;
    let bra = map.bra_state(&req.lattice, &req.down_initial)?;
    let estimates = monte_carlo_estimate(&req.up_initial, &bra, &plan, &req.configs, req.samples, req.seed)?;
    Ok(estimates
        .into_iter()
        .map(|e| {
            let phase = map.output_phase(&req.lattice, &e.m);
            e.with_phase(phase)
        })
        .collect())
}

/// Spinful product state `ψ↑ ⊗ φ↓` on the matching sector.
pub fn product_state(lattice: &BipartiteLattice, up: &SlaterState, down: &SlaterState) -> Result<DenseState> {
    let n = lattice.n_sites();
    let basis = FockBasis::new(n, Sector::Fixed { n_up: up.n_particles(), n_down: down.n_particles() })?;
    let bu = SpinlessBasis::new(n, Some(up.n_particles()))?;
    let bd = SpinlessBasis::new(n, Some(down.n_particles()))?;
    let (psi, phi) = (slater_vector(up.orbitals(), &bu)?, slater_vector(down.orbitals(), &bd)?);
    let amplitudes = CVector::from_iterator(
        basis.dim(),
        (0..basis.dim()).map(|k| {
            let (u, d) = basis.occupations(k);
            let iu = bu.space().position(u).expect("up occupation in sector");
            let id = bd.space().position(d).expect("down occupation in sector");
            psi[iu] * phi[id]
        }),
    );
    DenseState::new(amplitudes, Space::Spinful(basis))
}

/// Dense `e^{-itℋ}|ψ↑⟩|φ↓⟩` for hopping scale `j` and interaction `iγ`.
pub fn hubbard_oracle(
    lattice: &BipartiteLattice,
    j: C64,
    gamma: f64,
    up: &SlaterState,
    down: &SlaterState,
    t: f64,
) -> Result<DenseState> {
    let psi0 = product_state(lattice, up, down)?;
    let Space::Spinful(basis) = &psi0.space else { unreachable!("product_state is spinful") };
    let h = build_generalized_hubbard(lattice, j, I * gamma, -I * (gamma / 2.0), basis.sector())?;
    evolve_dense(&psi0, &h, t)
}

/// Dense `e^{t𝓛}(|ψ⟩⟨χ|)` with `χ` the gauged, conjugated down state.
pub fn lindblad_oracle(
    lattice: &BipartiteLattice,
    gamma: f64,
    up: &SlaterState,
    down: &SlaterState,
    t: f64,
) -> Result<DenseState> {
    let n = lattice.n_sites();
    let space = LiouvilleSpace::sectors(n, up.n_particles(), down.n_particles())?;
    if space.dim() > MAX_DIM {
        return Err(Error::Size(format!("Liouville dimension {} exceeds the dense cap {MAX_DIM}", space.dim())));
    }
    let bra = DualityMap::default().bra_state(lattice, down)?;
    let psi = slater_vector(up.orbitals(), &space.ket)?;
    let chi = slater_vector(bra.orbitals(), &space.bra)?;
    let rho0 = DenseState::outer(&space, &psi, &chi)?;
    let lind = build_lindbladian_superop(lattice, ONE, C64::new(gamma, 0.0), &space)?;
    evolve_superop(&rho0, &lind, t)
}

/// Largest entrywise gap between the two sides of the duality over the full sector.
pub fn verify_duality_exact(
    lattice: &BipartiteLattice,
    gamma: f64,
    up: &SlaterState,
    down: &SlaterState,
    t: f64,
) -> Result<f64> {
    let left = hubbard_oracle(lattice, ONE, gamma, up, down, t)?;
    let right = lindblad_oracle(lattice, gamma, up, down, t)?;
    let (Space::Spinful(basis), Space::Liouville(space)) = (&left.space, &right.space) else {
        unreachable!("oracles return spinful and Liouville states")
    };
    let map = DualityMap::default();
    let mut worst: f64 = 0.0;
    for k in 0..basis.dim() {
        let (u, d) = basis.occupations(k);
        let a = space.ket.space().position(u).expect("up occupation in ket sector");
        let b = space.bra.space().position(d).expect("down occupation in bra sector");
        let m = Configuration::new(&sites_of(d), lattice.n_sites())?;
        let dual = right.amplitudes[space.index(a, b)] * map.output_phase(lattice, &m);
        worst = worst.max((left.amplitudes[k] - dual).norm());
    }
    Ok(worst)
}

pub(crate) fn sites_of(bits: u64) -> Vec<usize> {
    (0..64).filter(|&k| bits >> k & 1 == 1).collect()
}
