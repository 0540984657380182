use nalgebra::Schur;

use super::DenseOperator;
use crate::linalg::C64;

/// How an eigenvalue was accounted for by [`pt_spectrum_check`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Pairing {
    Real(usize),
    Conjugate(usize, usize),
    Unpaired(usize),
}

#[derive(Clone, Debug)]
pub struct PtReport {
    pub holds: bool,
    pub eigenvalues: Vec<C64>,
    pub pairs: Vec<Pairing>,
}

impl PtReport {
    pub fn unpaired(&self) -> impl Iterator<Item = usize> + '_ {
        self.pairs.iter().filter_map(|p| match p {
            Pairing::Unpaired(i) => Some(*i),
            _ => None,
        })
    }
}

/// Eigenvalues of a (generally non-normal) superoperator via complex Schur form.
///
/// The deflation threshold is relaxed step by step until the QR iteration converges.
pub fn lindblad_spectrum(superop: &DenseOperator) -> Vec<C64> {
    let n = superop.matrix.nrows();
    for eps in [4.0 * f64::EPSILON, 1e-14, 1e-13, 1e-12, 1e-11] {
        if let Some(schur) = Schur::try_new(superop.matrix.clone(), eps, 500 * n.max(1)) {
            return schur.unpack().1.diagonal().iter().copied().collect();
        }
    }
    panic!("Schur iteration failed to converge on a {n}x{n} superoperator");
}

/// Checks that every eigenvalue is real within `tol` or has a distinct partner
/// within `tol` of its complex conjugate. Partners are matched greedily by
/// distance, each eigenvalue used at most once.
pub fn pt_spectrum_check(superop: &DenseOperator, tol: f64) -> PtReport {
    let eigenvalues = lindblad_spectrum(superop);
    let n = eigenvalues.len();
    let mut used = vec![false; n];
    let mut pairs = Vec::with_capacity(n);
    for i in 0..n {
        if used[i] {
            continue;
        }
        used[i] = true;
        let lam = eigenvalues[i];
        if lam.im.abs() <= tol {
            pairs.push(Pairing::Real(i));
            continue;
        }
        let target = lam.conj();
        let partner = (0..n)
            .filter(|&j| !used[j])
            .map(|j| (j, (eigenvalues[j] - target).norm()))
            .filter(|&(_, d)| d <= tol)
            .min_by(|a, b| a.1.total_cmp(&b.1));
        match partner {
            Some((j, _)) => {
                used[j] = true;
                pairs.push(Pairing::Conjugate(i, j));
            }
            None => pairs.push(Pairing::Unpaired(i)),
        }
    }
    let holds = pairs.iter().all(|p| !matches!(p, Pairing::Unpaired(_)));
    PtReport { holds, eigenvalues, pairs }
}
