//! Occupation-number bases.
//!
//! Fermionic ordering: modes are numbered `0..n_modes` and a basis state with
//! occupied modes `p_1 < p_2 < ... < p_k` is `a†_{p_1} a†_{p_2} ... a†_{p_k} |0⟩`.
//! In the spinful case mode `i` is `(i, ↑)` and mode `n_sites + i` is `(i, ↓)`,
//! so up-spin modes precede down-spin modes and are site-major within a spin.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Largest Hilbert-space (or Liouville-space) dimension the dense oracle accepts.
pub const MAX_DIM: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ladder {
    Create(usize),
    Annihilate(usize),
}

/// Applies one ladder operator to an occupation bitstring, returning the new
/// bitstring and the Jordan–Wigner sign, or `None` if the state is annihilated.
pub fn apply_ladder(bits: u64, op: Ladder) -> Option<(u64, f64)> {
    let (p, create) = match op {
        Ladder::Create(p) => (p, true),
        Ladder::Annihilate(p) => (p, false),
    };
    let mask = 1u64 << p;
    let occupied = bits & mask != 0;
    if occupied == create {
        return None;
    }
    let parity = (bits & (mask - 1)).count_ones();
    let sign = if parity % 2 == 0 { 1.0 } else { -1.0 };
    Some((bits ^ mask, sign))
}

/// Applies a product of ladder operators, rightmost factor first.
pub fn apply_word(bits: u64, word: &[Ladder]) -> Option<(u64, f64)> {
    let mut state = bits;
    let mut sign = 1.0;
    for &op in word.iter().rev() {
        let (next, s) = apply_ladder(state, op)?;
        state = next;
        sign *= s;
    }
    Some((state, sign))
}

pub(crate) fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

fn masks_with_popcount(n_bits: usize, count: Option<usize>) -> Vec<u64> {
    (0..1u64 << n_bits)
        .filter(|m| count.is_none_or(|c| m.count_ones() as usize == c))
        .collect()
}

/// Ordered list of occupation bitstrings over `n_modes` fermionic modes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModeSpace {
    n_modes: usize,
    states: Vec<u64>,
    index: HashMap<u64, usize>,
}

impl ModeSpace {
    fn from_states(n_modes: usize, states: Vec<u64>) -> Self {
        let index = states.iter().enumerate().map(|(k, &s)| (s, k)).collect();
        ModeSpace { n_modes, states, index }
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[u64] {
        &self.states
    }

    pub fn state(&self, k: usize) -> u64 {
        self.states[k]
    }

    pub fn position(&self, bits: u64) -> Option<usize> {
        self.index.get(&bits).copied()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sector {
    Fixed { n_up: usize, n_down: usize },
    /// All particle numbers; needed for operators that change charge or `S_z`.
    Full,
}

/// Spinful basis, lexicographically ordered on `(up bits, down bits)` read as integers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FockBasis {
    n_sites: usize,
    sector: Sector,
    space: ModeSpace,
}

impl FockBasis {
    pub fn new(n_sites: usize, sector: Sector) -> Result<Arc<Self>> {
        if n_sites == 0 || 2 * n_sites > 62 {
            return Err(Error::Size(format!("{n_sites} sites outside the supported range")));
        }
        let (up_count, down_count) = match sector {
            Sector::Fixed { n_up, n_down } => {
                if n_up > n_sites || n_down > n_sites {
                    return Err(Error::Sector(format!(
                        "sector ({n_up}, {n_down}) exceeds {n_sites} sites"
                    )));
                }
                (Some(n_up), Some(n_down))
            }
            Sector::Full => (None, None),
        };
        let dim = match sector {
            Sector::Fixed { n_up, n_down } => binomial(n_sites, n_up) * binomial(n_sites, n_down),
            Sector::Full => 1usize << (2 * n_sites).min(40),
        };
        if dim > MAX_DIM {
            return Err(Error::Size(format!("Fock dimension {dim} exceeds cap {MAX_DIM}")));
        }
        let ups = masks_with_popcount(n_sites, up_count);
        let downs = masks_with_popcount(n_sites, down_count);
        let states = ups
            .iter()
            .flat_map(|&u| downs.iter().map(move |&d| u | (d << n_sites)))
            .collect();
        Ok(Arc::new(FockBasis { n_sites, sector, space: ModeSpace::from_states(2 * n_sites, states) }))
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn sector(&self) -> Sector {
        self.sector
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    pub fn space(&self) -> &ModeSpace {
        &self.space
    }

    pub fn up_mode(&self, site: usize) -> usize {
        site
    }

    pub fn down_mode(&self, site: usize) -> usize {
        self.n_sites + site
    }

    /// `(up bits, down bits)` of basis state `k`.
    pub fn occupations(&self, k: usize) -> (u64, u64) {
        let bits = self.space.state(k);
        let low = (1u64 << self.n_sites) - 1;
        (bits & low, bits >> self.n_sites)
    }

    pub fn position(&self, up: u64, down: u64) -> Option<usize> {
        self.space.position(up | (down << self.n_sites))
    }
}

/// Spinless basis over `n_sites` modes, optionally at fixed particle number.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpinlessBasis {
    particles: Option<usize>,
    space: ModeSpace,
}

impl SpinlessBasis {
    pub fn new(n_sites: usize, particles: Option<usize>) -> Result<Arc<Self>> {
        if n_sites == 0 || n_sites > 40 {
            return Err(Error::Size(format!("{n_sites} sites outside the supported range")));
        }
        if let Some(k) = particles {
            if k > n_sites {
                return Err(Error::Sector(format!("{k} particles exceed {n_sites} sites")));
            }
        }
        let dim = particles.map_or(1usize << n_sites, |k| binomial(n_sites, k));
        if dim > MAX_DIM {
            return Err(Error::Size(format!("Fock dimension {dim} exceeds cap {MAX_DIM}")));
        }
        let states = masks_with_popcount(n_sites, particles);
        Ok(Arc::new(SpinlessBasis { particles, space: ModeSpace::from_states(n_sites, states) }))
    }

    pub fn n_sites(&self) -> usize {
        self.space.n_modes()
    }

    pub fn particles(&self) -> Option<usize> {
        self.particles
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    pub fn space(&self) -> &ModeSpace {
        &self.space
    }
}

/// Operators on `ket_dim × bra_dim` coefficient matrices, vectorized by
/// column stacking: entry `(a, b)` of `ρ` sits at index `a + ket_dim * b`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LiouvilleSpace {
    pub ket: Arc<SpinlessBasis>,
    pub bra: Arc<SpinlessBasis>,
}

impl LiouvilleSpace {
    pub fn new(ket: Arc<SpinlessBasis>, bra: Arc<SpinlessBasis>) -> Result<Arc<Self>> {
        if ket.n_sites() != bra.n_sites() {
            return Err(Error::Shape("ket and bra bases live on different lattices".into()));
        }
        let dim = ket.dim() * bra.dim();
        if dim > MAX_DIM {
            return Err(Error::Size(format!("Liouville dimension {dim} exceeds cap {MAX_DIM}")));
        }
        Ok(Arc::new(LiouvilleSpace { ket, bra }))
    }

    /// Full spinless Fock space on both sides.
    pub fn full(n_sites: usize) -> Result<Arc<Self>> {
        let b = SpinlessBasis::new(n_sites, None)?;
        Self::new(b.clone(), b)
    }

    /// Fixed particle numbers on the ket and bra sides.
    pub fn sectors(n_sites: usize, ket_particles: usize, bra_particles: usize) -> Result<Arc<Self>> {
        Self::new(
            SpinlessBasis::new(n_sites, Some(ket_particles))?,
            SpinlessBasis::new(n_sites, Some(bra_particles))?,
        )
    }

    pub fn n_sites(&self) -> usize {
        self.ket.n_sites()
    }

    pub fn dim(&self) -> usize {
        self.ket.dim() * self.bra.dim()
    }

    pub fn index(&self, a: usize, b: usize) -> usize {
        a + self.ket.dim() * b
    }
}

/// Occupation bitstring from a site list.
pub fn bits_from_sites(sites: &[usize]) -> u64 {
    sites.iter().fold(0u64, |acc, &s| acc | (1u64 << s))
}

/// Validates a strictly ascending site list inside `0..n_sites`.
pub fn check_config(sites: &[usize], n_sites: usize) -> Result<u64> {
    for w in sites.windows(2) {
        if w[0] >= w[1] {
            return Err(Error::Sector(format!("configuration {sites:?} is not strictly ascending")));
        }
    }
    if let Some(&s) = sites.iter().find(|&&s| s >= n_sites) {
        return Err(Error::Sector(format!("site {s} outside lattice of {n_sites} sites")));
    }
    Ok(bits_from_sites(sites))
}
