use std::fmt;

use super::{operator_matrix, DenseOperator, FockBasis, Ladder, Sector, Space, Term};
use crate::lattice::BipartiteLattice;
use crate::linalg::{commutator, max_abs, CMatrix, C64, I, ONE};

/// Max-absolute-entry norms of `[op, X]`. Generators that leave a fixed
/// `(n_up, n_down)` sector are `None` unless `op` lives on the full Fock space.
#[derive(Clone, Debug, PartialEq)]
pub struct SymmetryReport {
    pub charge: f64,
    pub spin_x: Option<f64>,
    pub spin_y: Option<f64>,
    pub spin_z: f64,
    pub eta_plus: Option<f64>,
    pub eta_minus: Option<f64>,
    pub eta_z: f64,
}

impl SymmetryReport {
    pub fn entries(&self) -> Vec<(&'static str, Option<f64>)> {
        vec![
            ("Q", Some(self.charge)),
            ("S_x", self.spin_x),
            ("S_y", self.spin_y),
            ("S_z", Some(self.spin_z)),
            ("eta+", self.eta_plus),
            ("eta-", self.eta_minus),
            ("eta_z", Some(self.eta_z)),
        ]
    }
}

impl fmt::Display for SymmetryReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, v) in self.entries() {
            match v {
                Some(v) => writeln!(f, "{name:>6}: {v:.3e}")?,
                None => writeln!(f, "{name:>6}: n/a")?,
            }
        }
        Ok(())
    }
}

pub struct Generators {
    pub charge: CMatrix,
    pub spin_x: Option<CMatrix>,
    pub spin_y: Option<CMatrix>,
    pub spin_z: CMatrix,
    pub eta_plus: Option<CMatrix>,
    pub eta_minus: Option<CMatrix>,
    pub eta_z: CMatrix,
}

/// Charge, spin and η-pairing generators on `basis`.
pub fn symmetry_generators(basis: &FockBasis, lattice: &BipartiteLattice) -> Generators {
    let n = basis.n_sites();
    let space = basis.space();
    let (up, down) = (|i: usize| basis.up_mode(i), |i: usize| basis.down_mode(i));
    let number = |p: usize| vec![Ladder::Create(p), Ladder::Annihilate(p)];
    let build = |terms: Vec<Term>| operator_matrix(space, space, &terms);

    let mut charge = Vec::new();
    let mut sz = Vec::new();
    let mut s_plus = Vec::new();
    let mut s_minus = Vec::new();
    let mut eta_p = Vec::new();
    let mut eta_m = Vec::new();
    for i in 0..n {
        charge.push((ONE, number(up(i))));
        charge.push((ONE, number(down(i))));
        sz.push((C64::new(0.5, 0.0), number(up(i))));
        sz.push((C64::new(-0.5, 0.0), number(down(i))));
        s_plus.push((ONE, vec![Ladder::Create(up(i)), Ladder::Annihilate(down(i))]));
        s_minus.push((ONE, vec![Ladder::Create(down(i)), Ladder::Annihilate(up(i))]));
        let sign = C64::new(lattice.sublattice(i).sign(), 0.0);
        eta_p.push((sign, vec![Ladder::Create(up(i)), Ladder::Create(down(i))]));
        // (c†_↑ c†_↓)† = c_↓ c_↑
        eta_m.push((sign, vec![Ladder::Annihilate(down(i)), Ladder::Annihilate(up(i))]));
    }
    let charge = build(charge);
    let eta_z = &charge - CMatrix::identity(space.dim(), space.dim()) * C64::new(n as f64, 0.0);
    let full = basis.sector() == Sector::Full;
    let (spin_x, spin_y, eta_plus, eta_minus) = if full {
        let sp = build(s_plus);
        let sm = build(s_minus);
        (
            Some((&sp + &sm) * C64::new(0.5, 0.0)),
            Some((&sp - &sm) * (-I * 0.5)),
            Some(build(eta_p)),
            Some(build(eta_m)),
        )
    } else {
        (None, None, None, None)
    };
    Generators { charge, spin_x, spin_y, spin_z: build(sz), eta_plus, eta_minus, eta_z }
}

/// `‖[op, X]‖_max` for `X ∈ {Q, S_x, S_y, S_z, η⁺, η⁻, ηᶻ}`.
///
/// `op` must be a spinful operator; build it on [`Sector::Full`] to get the
/// sector-changing generators.
pub fn symmetry_report(op: &DenseOperator, lattice: &BipartiteLattice) -> crate::Result<SymmetryReport> {
    let Space::Spinful(basis) = &op.space else {
        return Err(crate::Error::Shape("symmetry_report expects a spinful operator".into()));
    };
    let g = symmetry_generators(basis, lattice);
    let norm = |x: &CMatrix| max_abs(&commutator(&op.matrix, x));
    Ok(SymmetryReport {
        charge: norm(&g.charge),
        spin_x: g.spin_x.as_ref().map(norm),
        spin_y: g.spin_y.as_ref().map(norm),
        spin_z: norm(&g.spin_z),
        eta_plus: g.eta_plus.as_ref().map(norm),
        eta_minus: g.eta_minus.as_ref().map(norm),
        eta_z: norm(&g.eta_z),
    })
}
