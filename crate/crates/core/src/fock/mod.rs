//! Dense exact-diagonalization oracle.
//!
//! Many-body Hamiltonians with complex couplings, vectorized Lindbladians,
//! exact propagation and amplitude read-off. Everything here is brute force on
//! explicit occupation bases and is the reference the sampling pipeline is
//! tested against.

mod basis;
mod dump;
mod spectrum;
mod symmetry;

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::lattice::BipartiteLattice;
use crate::linalg::{expm, CMatrix, CVector, C64, I, ONE, ZERO};

pub use basis::{
    apply_ladder, apply_word, bits_from_sites, check_config, FockBasis, Ladder, LiouvilleSpace, ModeSpace,
    Sector, SpinlessBasis, MAX_DIM,
};
pub use dump::{dump_operator, dump_state};
pub use spectrum::{lindblad_spectrum, pt_spectrum_check, Pairing, PtReport};
pub use symmetry::{symmetry_generators, symmetry_report, SymmetryReport};

/// Space an operator or state is represented on.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Space {
    Spinful(Arc<FockBasis>),
    Spinless(Arc<SpinlessBasis>),
    Liouville(Arc<LiouvilleSpace>),
}

impl Space {
    pub fn dim(&self) -> usize {
        match self {
            Space::Spinful(b) => b.dim(),
            Space::Spinless(b) => b.dim(),
            Space::Liouville(l) => l.dim(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct DenseOperator {
    pub matrix: CMatrix,
    pub space: Space,
}

impl DenseOperator {
    pub fn new(matrix: CMatrix, space: Space) -> Result<Self> {
        let d = space.dim();
        if matrix.shape() != (d, d) {
            return Err(Error::Shape(format!(
                "operator of shape {:?} on a space of dimension {d}",
                matrix.shape()
            )));
        }
        Ok(DenseOperator { matrix, space })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Many-body coefficient vector. Its norm may drift from one under
/// non-unitary evolution.
#[derive(Clone, Debug)]
pub struct DenseState {
    pub amplitudes: CVector,
    pub space: Space,
}

impl DenseState {
    pub fn new(amplitudes: CVector, space: Space) -> Result<Self> {
        if amplitudes.len() != space.dim() {
            return Err(Error::Shape(format!(
                "state of length {} on a space of dimension {}",
                amplitudes.len(),
                space.dim()
            )));
        }
        Ok(DenseState { amplitudes, space })
    }

    /// `Π_{i∈up} a†_{i↑} Π_{j∈down} a†_{j↓} |0⟩` with ascending site lists.
    pub fn spinful_basis_state(basis: &Arc<FockBasis>, up: &[usize], down: &[usize]) -> Result<Self> {
        let k = spinful_position(basis, up, down)?;
        let mut v = CVector::zeros(basis.dim());
        v[k] = ONE;
        Ok(DenseState { amplitudes: v, space: Space::Spinful(basis.clone()) })
    }

    /// Vectorized `|ψ⟩⟨χ|` on a Liouville space from ket and bra vectors in
    /// the corresponding spinless bases. Coefficients are `ψ_a conj(χ_b)`.
    pub fn outer(space: &Arc<LiouvilleSpace>, ket: &CVector, bra: &CVector) -> Result<Self> {
        if ket.len() != space.ket.dim() || bra.len() != space.bra.dim() {
            return Err(Error::Shape("ket/bra lengths do not match the Liouville space".into()));
        }
        let mut v = CVector::zeros(space.dim());
        for b in 0..space.bra.dim() {
            for a in 0..space.ket.dim() {
                v[space.index(a, b)] = ket[a] * bra[b].conj();
            }
        }
        Ok(DenseState { amplitudes: v, space: Space::Liouville(space.clone()) })
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.norm()
    }
}

fn spinful_position(basis: &FockBasis, up: &[usize], down: &[usize]) -> Result<usize> {
    let u = check_config(up, basis.n_sites())?;
    let d = check_config(down, basis.n_sites())?;
    basis.position(u, d).ok_or_else(|| {
        Error::Sector(format!(
            "configuration (up {up:?}, down {down:?}) is outside sector {:?}",
            basis.sector()
        ))
    })
}

/// A weighted product of ladder operators.
pub type Term = (C64, Vec<Ladder>);

/// Matrix of `Σ coeff · word` from `from` into `to`.
pub fn operator_matrix(from: &ModeSpace, to: &ModeSpace, terms: &[Term]) -> CMatrix {
    let mut m = CMatrix::zeros(to.dim(), from.dim());
    for (col, &bits) in from.states().iter().enumerate() {
        for (coeff, word) in terms {
            if let Some((out, sign)) = apply_word(bits, word) {
                if let Some(row) = to.position(out) {
                    m[(row, col)] += *coeff * sign;
                }
            }
        }
    }
    m
}

fn number(p: usize) -> Vec<Ladder> {
    vec![Ladder::Create(p), Ladder::Annihilate(p)]
}

/// `J Σ h_ij a†_{iσ} a_{jσ} + U Σ n_{i↑} n_{i↓} + mu Σ n_{iσ}` on a spinful sector.
///
/// The imaginary-interaction model is `J = 1`, `U = iγ`, `mu = -iγ/2`.
pub fn build_generalized_hubbard(
    lattice: &BipartiteLattice,
    j: C64,
    u: C64,
    mu: C64,
    sector: Sector,
) -> Result<DenseOperator> {
    let basis = FockBasis::new(lattice.n_sites(), sector)?;
    let n = lattice.n_sites();
    let mut terms: Vec<Term> = Vec::new();
    for (a, b, w) in lattice.bonds() {
        for spin in 0..2 {
            let (pa, pb) = (a + spin * n, b + spin * n);
            terms.push((j * w, vec![Ladder::Create(pa), Ladder::Annihilate(pb)]));
            terms.push((j * w, vec![Ladder::Create(pb), Ladder::Annihilate(pa)]));
        }
    }
    for site in 0..n {
        let (up, down) = (basis.up_mode(site), basis.down_mode(site));
        let mut interaction = number(up);
        interaction.extend(number(down));
        terms.push((u, interaction));
        terms.push((mu, number(up)));
        terms.push((mu, number(down)));
    }
    let matrix = operator_matrix(basis.space(), basis.space(), &terms);
    DenseOperator::new(matrix, Space::Spinful(basis))
}

/// Eq.-(7)-type imaginary-interaction Hamiltonian with dephasing strength `gamma`.
pub fn imaginary_hubbard(lattice: &BipartiteLattice, gamma: f64, sector: Sector) -> Result<DenseOperator> {
    build_generalized_hubbard(lattice, ONE, I * gamma, -I * (gamma / 2.0), sector)
}

/// `Σ_ij K_ij c†_i c_j` on a spinless basis.
pub fn quadratic_operator(k: &CMatrix, basis: &SpinlessBasis) -> CMatrix {
    let n = basis.n_sites();
    assert_eq!(k.shape(), (n, n), "mode matrix does not match the basis");
    let mut terms = Vec::new();
    for a in 0..n {
        for b in 0..n {
            if k[(a, b)] != ZERO {
                terms.push((k[(a, b)], vec![Ladder::Create(a), Ladder::Annihilate(b)]));
            }
        }
    }
    operator_matrix(basis.space(), basis.space(), &terms)
}

/// Spinless hopping Hamiltonian `H₀ = Σ h_ij c†_i c_j`.
pub fn hopping_operator(lattice: &BipartiteLattice, basis: &SpinlessBasis) -> CMatrix {
    quadratic_operator(&crate::linalg::to_complex(lattice.hopping()), basis)
}

/// `e^{-i t op} · state`.
pub fn evolve_dense(state: &DenseState, op: &DenseOperator, t: f64) -> Result<DenseState> {
    check_same_space(state, op)?;
    if t == 0.0 {
        return Ok(state.clone());
    }
    let u = expm(&(&op.matrix * (-I * t)));
    Ok(DenseState { amplitudes: u * &state.amplitudes, space: state.space.clone() })
}

/// `e^{t 𝓛} · |ρ⟩` for a superoperator `𝓛`.
pub fn evolve_superop(rho: &DenseState, superop: &DenseOperator, t: f64) -> Result<DenseState> {
    check_same_space(rho, superop)?;
    let e = expm(&(&superop.matrix * C64::new(t, 0.0)));
    Ok(DenseState { amplitudes: e * &rho.amplitudes, space: rho.space.clone() })
}

fn check_same_space(state: &DenseState, op: &DenseOperator) -> Result<()> {
    if state.space != op.space || state.amplitudes.len() != op.dim() {
        return Err(Error::Shape(format!(
            "state of dimension {} does not live on the operator's space of dimension {}",
            state.amplitudes.len(),
            op.dim()
        )));
    }
    Ok(())
}

/// Matrix of `𝓛(J,U)(ρ) = -iJ[H₀, ρ] + U Σ_i (n_i ρ n_i - ½{n_i, ρ})` on
/// column-stacked `ρ`, i.e. `-iJ (I ⊗ H_ket - H_braᵀ ⊗ I) + U·D` with `D` diagonal.
///
/// The physical dephasing generator is `J = 1`, `U = γ ≥ 0`.
pub fn build_lindbladian_superop(
    lattice: &BipartiteLattice,
    j: C64,
    u: C64,
    space: &Arc<LiouvilleSpace>,
) -> Result<DenseOperator> {
    if space.n_sites() != lattice.n_sites() {
        return Err(Error::Shape("Liouville space and lattice disagree on site count".into()));
    }
    let hk = hopping_operator(lattice, &space.ket);
    let hb = hopping_operator(lattice, &space.bra);
    let (dk, db) = (space.ket.dim(), space.bra.dim());
    let mut l = CMatrix::zeros(space.dim(), space.dim());
    // -iJ (H ρ - ρ H): (Hρ)_{ab} = Σ_c H_ac ρ_cb,  (ρH)_{ab} = Σ_c ρ_ac H_cb
    for b in 0..db {
        for a in 0..dk {
            let row = space.index(a, b);
            for c in 0..dk {
                if hk[(a, c)] != ZERO {
                    l[(row, space.index(c, b))] += -I * j * hk[(a, c)];
                }
            }
            for c in 0..db {
                if hb[(c, b)] != ZERO {
                    l[(row, space.index(a, c))] += I * j * hb[(c, b)];
                }
            }
            let na = space.ket.space().state(a);
            let nb = space.bra.space().state(b);
            l[(row, row)] += u * dissipator_diagonal(na, nb);
        }
    }
    DenseOperator::new(l, Space::Liouville(space.clone()))
}

/// `Σ_i (n_i(a) n_i(b) - ½ n_i(a) - ½ n_i(b)) = -½ · popcount(a xor b)`.
pub(crate) fn dissipator_diagonal(ket_bits: u64, bra_bits: u64) -> f64 {
    -0.5 * (ket_bits ^ bra_bits).count_ones() as f64
}

/// Coefficient of `Π a†_{i↑} Π a†_{j↓} |0⟩` (ascending lists) in a spinful state.
pub fn amplitude_from_state(state: &DenseState, up: &[usize], down: &[usize]) -> Result<C64> {
    match &state.space {
        Space::Spinful(basis) => Ok(state.amplitudes[spinful_position(basis, up, down)?]),
        _ => Err(Error::Shape("amplitude_from_state expects a spinful state".into())),
    }
}

/// Coefficient `Ψ_{nm}` of `|n⟩⟨m|` in a vectorized density operator, where
/// `|n⟩ = Π c†_{n_i} |0⟩` with `n` ascending. For `ρ = |ψ⟩⟨φ|` this is `ψ_n conj(φ_m)`.
pub fn rho_coefficient(rho: &DenseState, n: &[usize], m: &[usize]) -> Result<C64> {
    let Space::Liouville(space) = &rho.space else {
        return Err(Error::Shape("rho_coefficient expects a vectorized density operator".into()));
    };
    let (a, b) = liouville_position(space, n, m)?;
    Ok(rho.amplitudes[space.index(a, b)])
}

fn liouville_position(space: &LiouvilleSpace, n: &[usize], m: &[usize]) -> Result<(usize, usize)> {
    let nb = check_config(n, space.n_sites())?;
    let mb = check_config(m, space.n_sites())?;
    let a = space.ket.space().position(nb);
    let b = space.bra.space().position(mb);
    match (a, b) {
        (Some(a), Some(b)) => Ok((a, b)),
        _ => Err(Error::Sector(format!("configuration pair ({n:?}, {m:?}) outside the Liouville block"))),
    }
}

/// Matrix of `Π_j c†_{m_j} Π_i c_{n_i}` (factors in list order) mapping the
/// ket basis into the bra basis.
pub fn configuration_operator(n: &[usize], m: &[usize], from: &SpinlessBasis, to: &SpinlessBasis) -> CMatrix {
    let mut word: Vec<Ladder> = m.iter().map(|&s| Ladder::Create(s)).collect();
    word.extend(n.iter().map(|&s| Ladder::Annihilate(s)));
    operator_matrix(from.space(), to.space(), &[(ONE, word)])
}

/// `Tr(Π_j c†_{m_j} Π_i c_{n_i} ρ)` evaluated by brute force.
///
/// Relation to [`rho_coefficient`]: the trace equals `(-1)^{k(k-1)/2} Ψ_{nm}`
/// with `k = |n|`, the sign of reversing the annihilation string.
pub fn configuration_trace(rho: &DenseState, n: &[usize], m: &[usize]) -> Result<C64> {
    let Space::Liouville(space) = &rho.space else {
        return Err(Error::Shape("configuration_trace expects a vectorized density operator".into()));
    };
    // Tr(O ρ) = Σ_{a,b} O_{b a} ρ_{a b}
    let o = configuration_operator(n, m, &space.ket, &space.bra);
    let mut acc = ZERO;
    for b in 0..space.bra.dim() {
        for a in 0..space.ket.dim() {
            if o[(b, a)] != ZERO {
                acc += o[(b, a)] * rho.amplitudes[space.index(a, b)];
            }
        }
    }
    Ok(acc)
}

/// Many-body vector of the Slater determinant `Π_j (Σ_k orb_kj c†_k) |0⟩`,
/// built by applying the creation operators one column at a time.
pub fn slater_vector(orbitals: &CMatrix, basis: &SpinlessBasis) -> Result<CVector> {
    let n = basis.n_sites();
    if orbitals.nrows() != n {
        return Err(Error::Shape("orbital matrix rows do not match the basis modes".into()));
    }
    if basis.particles().is_some_and(|k| k != orbitals.ncols()) {
        return Err(Error::Sector("particle count does not match the basis sector".into()));
    }
    let full = SpinlessBasis::new(n, None)?;
    let mut v = CVector::zeros(full.dim());
    v[full.space().position(0).expect("vacuum in full space")] = ONE;
    // rightmost factor acts first
    for col in (0..orbitals.ncols()).rev() {
        let terms: Vec<Term> = (0..n)
            .filter(|&k| orbitals[(k, col)] != ZERO)
            .map(|k| (orbitals[(k, col)], vec![Ladder::Create(k)]))
            .collect();
        v = operator_matrix(full.space(), full.space(), &terms) * v;
    }
    let out = CVector::from_iterator(
        basis.dim(),
        basis.space().states().iter().map(|&s| v[full.space().position(s).expect("subset of full space")]),
    );
    Ok(out)
}
