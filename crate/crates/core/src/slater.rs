//! Slater determinants and single-particle propagators.
//!
//! A state with orbital matrix `O` (modes × particles) stands for
//! `Π_j (Σ_k O_kj c†_k) |0⟩`, first column leftmost. Its coefficient on
//! `c†_{n_1} ⋯ c†_{n_k} |0⟩` with `n` ascending is `det O[n, :]`.

use std::fmt;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::lattice::BipartiteLattice;
use crate::linalg::{det, max_abs, CMatrix, C64, I, ONE, ZERO};

/// Smallest-to-largest singular value ratio below which a state is degenerate.
pub const RANK_TOL: f64 = 1e-12;
const UNITARY_TOL: f64 = 1e-10;

/// Strictly ascending list of distinct occupied modes.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Configuration(Vec<usize>);

impl Configuration {
    /// Sorts `sites` and checks they are distinct and below `n_modes`.
    pub fn new(sites: &[usize], n_modes: usize) -> Result<Self> {
        let mut s = sites.to_vec();
        s.sort_unstable();
        if let Some(&bad) = s.iter().find(|&&x| x >= n_modes) {
            return Err(Error::Config(format!("site {bad} out of range for {n_modes} modes")));
        }
        if s.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config(format!("duplicate site in {sites:?}")));
        }
        Ok(Configuration(s))
    }

    pub fn sites(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|s| s.to_string()).collect();
        write!(f, "[{}]", parts.join(" "))
    }
}

/// Single-particle operator on mode space.
#[derive(Clone, Debug)]
pub struct ModeMatrix {
    matrix: CMatrix,
    unitary: bool,
}

impl ModeMatrix {
    /// Wraps a square matrix; a `unitary` tag is verified.
    pub fn new(matrix: CMatrix, unitary: bool) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::Shape(format!("mode matrix of shape {:?}", matrix.shape())));
        }
        if unitary {
            let n = matrix.nrows();
            let defect = max_abs(&(matrix.adjoint() * &matrix - CMatrix::identity(n, n)));
            if defect > UNITARY_TOL {
                return Err(Error::Shape(format!("matrix tagged unitary has ‖M†M - I‖ = {defect:e}")));
            }
        }
        Ok(ModeMatrix { matrix, unitary })
    }

    pub fn identity(n: usize) -> Self {
        ModeMatrix { matrix: CMatrix::identity(n, n), unitary: true }
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn is_unitary(&self) -> bool {
        self.unitary
    }

    pub fn n_modes(&self) -> usize {
        self.matrix.nrows()
    }

    /// `later · self`, i.e. `self` applied first.
    pub fn then(&self, later: &ModeMatrix) -> ModeMatrix {
        ModeMatrix { matrix: &later.matrix * &self.matrix, unitary: self.unitary && later.unitary }
    }

    /// `(M⁻¹)†`, the factor that keeps `S ρ S⁻¹` in outer-product form on the bra.
    pub fn inverse_adjoint(&self) -> Result<ModeMatrix> {
        if self.unitary {
            return Ok(self.clone());
        }
        let inv = self
            .matrix
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::DegenerateState { ratio: 0.0 })?;
        Ok(ModeMatrix { matrix: inv.adjoint(), unitary: false })
    }
}

/// Orbital matrix of a fermionic product state.
#[derive(Clone, Debug)]
pub struct SlaterState {
    orbitals: CMatrix,
}

impl SlaterState {
    /// Checks full column rank.
    pub fn from_orbitals(orbitals: CMatrix) -> Result<Self> {
        if orbitals.ncols() > orbitals.nrows() {
            return Err(Error::Shape(format!(
                "{} particles do not fit in {} modes",
                orbitals.ncols(),
                orbitals.nrows()
            )));
        }
        check_rank(&orbitals)?;
        Ok(SlaterState { orbitals })
    }

    pub fn orbitals(&self) -> &CMatrix {
        &self.orbitals
    }

    pub fn n_modes(&self) -> usize {
        self.orbitals.nrows()
    }

    pub fn n_particles(&self) -> usize {
        self.orbitals.ncols()
    }

    /// `O† O`.
    pub fn gram(&self) -> CMatrix {
        self.orbitals.adjoint() * &self.orbitals
    }

    /// Complex conjugate of every orbital.
    pub fn conjugate(&self) -> SlaterState {
        SlaterState { orbitals: self.orbitals.map(|z| z.conj()) }
    }

    /// Multiplies row `k` by `factors[k]`; rank is unchanged for nonzero factors.
    pub fn scale_rows(&self, factors: &[f64]) -> SlaterState {
        let mut o = self.orbitals.clone();
        for (k, &f) in factors.iter().enumerate() {
            o.row_mut(k).scale_mut(f);
        }
        SlaterState { orbitals: o }
    }

    pub(crate) fn orbitals_mut(&mut self) -> &mut CMatrix {
        &mut self.orbitals
    }
}

fn check_rank(orbitals: &CMatrix) -> Result<()> {
    if orbitals.ncols() == 0 {
        return Ok(());
    }
    let sv = orbitals.clone().singular_values();
    let (lo, hi) = (sv.min(), sv.max());
    let ratio = if hi > 0.0 { lo / hi } else { 0.0 };
    if !(ratio > RANK_TOL) {
        return Err(Error::DegenerateState { ratio });
    }
    Ok(())
}

/// Product of creation operators on `occupied`, one selection column each.
pub fn init_slater(n_modes: usize, occupied: &[usize]) -> Result<SlaterState> {
    if occupied.windows(2).any(|w| w[0] >= w[1]) {
        if occupied.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config(format!("duplicate site in {occupied:?}")));
        }
        return Err(Error::Config(format!("occupied sites {occupied:?} are not ascending")));
    }
    let config = Configuration::new(occupied, n_modes)?;
    let mut o = CMatrix::zeros(n_modes, config.len());
    for (col, &site) in config.sites().iter().enumerate() {
        o[(site, col)] = ONE;
    }
    Ok(SlaterState { orbitals: o })
}

/// `orbitals ← M · orbitals`, re-checking rank for non-unitary `M`.
pub fn apply_mode_matrix(state: &SlaterState, m: &ModeMatrix) -> Result<SlaterState> {
    if m.n_modes() != state.n_modes() {
        return Err(Error::Shape(format!(
            "{}-mode matrix applied to a {}-mode state",
            m.n_modes(),
            state.n_modes()
        )));
    }
    let orbitals = &m.matrix * &state.orbitals;
    if !m.unitary {
        check_rank(&orbitals)?;
    }
    Ok(SlaterState { orbitals })
}

/// `e^{-i J τ h} = V e^{-i J τ ε} Vᵀ` from the lattice eigendecomposition.
pub fn hopping_step(lattice: &BipartiteLattice, j: C64, tau: f64) -> ModeMatrix {
    if tau == 0.0 || j == ZERO {
        return ModeMatrix::identity(lattice.n_sites());
    }
    let v = lattice.eigenvectors().map(|x| C64::new(x, 0.0));
    let phases = lattice.spectrum().map(|e| (-I * j * (tau * e)).exp());
    let mut vd = v.clone();
    for (col, p) in phases.iter().enumerate() {
        vd.column_mut(col).iter_mut().for_each(|z| *z *= *p);
    }
    let matrix = vd * v.transpose();
    ModeMatrix { matrix, unitary: j.im == 0.0 }
}

/// `diag(e^{i s_j θ})` for real `θ`.
pub fn dephase_step(signs: &[i8], theta: f64) -> ModeMatrix {
    let d = CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        signs.len(),
        signs.iter().map(|&s| C64::from_polar(1.0, f64::from(s) * theta)),
    ));
    ModeMatrix { matrix: d, unitary: true }
}

/// `diag(e^{i s_j a})` for a complex angle `a`; unitary only when `a` is real.
pub fn dephase_step_complex(signs: &[i8], a: C64) -> ModeMatrix {
    let d = CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        signs.len(),
        signs.iter().map(|&s| (I * a * f64::from(s)).exp()),
    ));
    ModeMatrix { matrix: d, unitary: a.im == 0.0 }
}

/// Determinant of the rows `rows` (in the given order) of `orbitals`.
pub fn row_determinant(orbitals: &CMatrix, rows: &[usize]) -> Result<C64> {
    if rows.len() != orbitals.ncols() {
        return Err(Error::Config(format!(
            "{} rows requested from a {}-particle state",
            rows.len(),
            orbitals.ncols()
        )));
    }
    if let Some(&bad) = rows.iter().find(|&&r| r >= orbitals.nrows()) {
        return Err(Error::Config(format!("row {bad} out of range")));
    }
    let sub = DMatrix::from_fn(rows.len(), orbitals.ncols(), |i, j| orbitals[(rows[i], j)]);
    Ok(det(&sub))
}

/// Coefficient of `|n⟩⟨m|` in `|ket⟩⟨bra|`: `det ket[n] · conj(det bra[m])`.
pub fn pair_amplitude(ket: &SlaterState, bra: &SlaterState, n: &Configuration, m: &Configuration) -> Result<C64> {
    if n.len() != ket.n_particles() || m.len() != bra.n_particles() {
        return Err(Error::Config(format!(
            "configuration sizes ({}, {}) do not match particle numbers ({}, {})",
            n.len(),
            m.len(),
            ket.n_particles(),
            bra.n_particles()
        )));
    }
    let dk = row_determinant(&ket.orbitals, n.sites())?;
    if dk == ZERO {
        return Ok(ZERO);
    }
    Ok(dk * row_determinant(&bra.orbitals, m.sites())?.conj())
}

/// `⟨a|b⟩ = det(A† B)`.
pub fn overlap(a: &SlaterState, b: &SlaterState) -> Result<C64> {
    if a.orbitals.shape() != b.orbitals.shape() {
        return Err(Error::Shape(format!(
            "overlap of states with shapes {:?} and {:?}",
            a.orbitals.shape(),
            b.orbitals.shape()
        )));
    }
    Ok(det(&(a.orbitals.adjoint() * &b.orbitals)))
}
