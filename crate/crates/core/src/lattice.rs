//! Bipartite lattices and their real symmetric single-particle hopping matrices.
//!
//! Hopping sign convention: `H = Σ_ij h_ij c†_i c_j`, so a chain built with
//! `weight = -J` reproduces the usual `-J Σ (c†_i c_{i+1} + h.c.)`.
//! Square lattices are indexed row-major, `site = row * cols + col`.

use std::collections::VecDeque;
use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sublattice {
    A,
    B,
}

impl Sublattice {
    pub fn other(self) -> Self {
        match self {
            Sublattice::A => Sublattice::B,
            Sublattice::B => Sublattice::A,
        }
    }

    /// `+1` on A, `-1` on B.
    pub fn sign(self) -> f64 {
        match self {
            Sublattice::A => 1.0,
            Sublattice::B => -1.0,
        }
    }
}

impl fmt::Display for Sublattice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sublattice::A => write!(f, "A"),
            Sublattice::B => write!(f, "B"),
        }
    }
}

/// One hopping edge of a custom lattice. Complex weights are accepted here so
/// that they can be rejected with a proper error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub weight: Complex64,
}

impl Edge {
    pub fn real(i: usize, j: usize, weight: f64) -> Self {
        Edge { i, j, weight: Complex64::new(weight, 0.0) }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LatticeSpec {
    Chain { length: usize, weight: f64 },
    Square { rows: usize, cols: usize, weight: f64, periodic: bool },
    Custom { n_sites: usize, edges: Vec<Edge>, partition: Option<Vec<Sublattice>> },
}

/// Site graph with an A/B partition and hopping supported on A–B edges only.
///
/// Immutable after construction. The eigendecomposition `h = V ε Vᵀ` is
/// computed once and reused by the free-fermion propagators.
#[derive(Clone, Debug)]
pub struct BipartiteLattice {
    partition: Vec<Sublattice>,
    hopping: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
}

impl BipartiteLattice {
    pub fn build(spec: &LatticeSpec) -> Result<Self> {
        match spec {
            LatticeSpec::Chain { length, weight } => Self::chain(*length, *weight),
            LatticeSpec::Square { rows, cols, weight, periodic } => {
                Self::square(*rows, *cols, *weight, *periodic)
            }
            LatticeSpec::Custom { n_sites, edges, partition } => {
                Self::custom(*n_sites, edges, partition.as_deref())
            }
        }
    }

    pub fn chain(length: usize, weight: f64) -> Result<Self> {
        if length < 2 {
            return Err(Error::InvalidLattice(format!("chain length {length} < 2")));
        }
        let mut h = DMatrix::zeros(length, length);
        for i in 0..length - 1 {
            h[(i, i + 1)] = weight;
            h[(i + 1, i)] = weight;
        }
        let partition = (0..length).map(parity_label).collect();
        Self::from_parts(h, partition)
    }

    pub fn square(rows: usize, cols: usize, weight: f64, periodic: bool) -> Result<Self> {
        if rows == 0 || cols == 0 || rows * cols < 2 {
            return Err(Error::InvalidLattice(format!(
                "square lattice {rows}x{cols} needs at least 1x2 sites"
            )));
        }
        if periodic && (rows % 2 != 0 || cols % 2 != 0) {
            return Err(Error::InvalidLattice(format!(
                "periodic square lattice {rows}x{cols} is bipartite only for even dimensions"
            )));
        }
        let n = rows * cols;
        let site = |r: usize, c: usize| r * cols + c;
        let mut h = DMatrix::zeros(n, n);
        let mut link = |a: usize, b: usize| {
            h[(a, b)] = weight;
            h[(b, a)] = weight;
        };
        for r in 0..rows {
            for c in 0..cols {
                if c + 1 < cols {
                    link(site(r, c), site(r, c + 1));
                } else if periodic && cols > 2 {
                    link(site(r, c), site(r, 0));
                }
                if r + 1 < rows {
                    link(site(r, c), site(r + 1, c));
                } else if periodic && rows > 2 {
                    link(site(r, c), site(0, c));
                }
            }
        }
        let partition = (0..n).map(|s| parity_label(s / cols + s % cols)).collect();
        Self::from_parts(h, partition)
    }

    /// Custom lattice from an edge list. Without an explicit partition the graph
    /// is two-coloured by breadth-first search starting from site 0 (label A).
    pub fn custom(n_sites: usize, edges: &[Edge], partition: Option<&[Sublattice]>) -> Result<Self> {
        if n_sites < 2 {
            return Err(Error::InvalidLattice(format!("custom lattice needs >= 2 sites, got {n_sites}")));
        }
        let mut h = DMatrix::<f64>::zeros(n_sites, n_sites);
        let mut set = vec![false; n_sites * n_sites];
        let mut adjacency = vec![Vec::new(); n_sites];
        for e in edges {
            if e.i >= n_sites || e.j >= n_sites {
                return Err(Error::InvalidLattice(format!(
                    "edge ({}, {}) out of range for {n_sites} sites",
                    e.i, e.j
                )));
            }
            if e.weight.im != 0.0 || !e.weight.re.is_finite() {
                return Err(Error::InvalidHopping(format!(
                    "edge ({}, {}) has non-real weight {}",
                    e.i, e.j, e.weight
                )));
            }
            if e.i == e.j {
                return Err(Error::InvalidHopping(format!("self-loop on site {}", e.i)));
            }
            let w = e.weight.re;
            for (a, b) in [(e.i, e.j), (e.j, e.i)] {
                if set[a * n_sites + b] && h[(a, b)] != w {
                    return Err(Error::InvalidHopping(format!(
                        "asymmetric weights on ({a}, {b}): {} vs {w}",
                        h[(a, b)]
                    )));
                }
                h[(a, b)] = w;
                set[a * n_sites + b] = true;
            }
            adjacency[e.i].push(e.j);
            adjacency[e.j].push(e.i);
        }

        let colouring = two_colour(&adjacency)?;
        let partition = match partition {
            Some(p) => {
                if p.len() != n_sites {
                    return Err(Error::InvalidLattice(format!(
                        "partition has {} labels for {n_sites} sites",
                        p.len()
                    )));
                }
                p.to_vec()
            }
            None => colouring,
        };
        Self::from_parts(h, partition)
    }

    /// Accepts an explicit hopping matrix and partition after full validation.
    pub fn from_parts(hopping: DMatrix<f64>, partition: Vec<Sublattice>) -> Result<Self> {
        let report = validate_bipartite(&hopping, &partition);
        if let Some(v) = report.violations.first() {
            return Err(match v.kind {
                ViolationKind::IntraSublattice => Error::Bipartiteness(report.to_string()),
                ViolationKind::Shape => Error::InvalidLattice(report.to_string()),
                _ => Error::InvalidHopping(report.to_string()),
            });
        }
        let eig = SymmetricEigen::new(hopping.clone());
        // ascending; index k pairs with n-1-k under chiral symmetry
        let n = hopping.nrows();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let eigenvalues = DVector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
        let eigenvectors = DMatrix::from_fn(n, n, |i, k| eig.eigenvectors[(i, order[k])]);
        Ok(BipartiteLattice { partition, hopping, eigenvalues, eigenvectors })
    }

    pub fn n_sites(&self) -> usize {
        self.partition.len()
    }

    pub fn partition(&self) -> &[Sublattice] {
        &self.partition
    }

    pub fn sublattice(&self, site: usize) -> Sublattice {
        self.partition[site]
    }

    pub fn hopping(&self) -> &DMatrix<f64> {
        &self.hopping
    }

    /// Single-particle energies of `h`, ascending.
    pub fn spectrum(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    /// Orthonormal eigenvectors of `h` as columns, matching [`Self::spectrum`].
    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    /// Iterator over the nonzero upper-triangle hopping entries `(i, j, h_ij)`.
    pub fn bonds(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let n = self.n_sites();
        (0..n).flat_map(move |i| {
            (i + 1..n).filter_map(move |j| {
                let w = self.hopping[(i, j)];
                (w != 0.0).then_some((i, j, w))
            })
        })
    }

    /// Diagonal sublattice gauge `g = diag(±1)` with `g h g = -h`.
    pub fn gauge_signs(&self) -> DVector<f64> {
        DVector::from_iterator(self.n_sites(), self.partition.iter().map(|s| s.sign()))
    }
}

fn parity_label(k: usize) -> Sublattice {
    if k % 2 == 0 {
        Sublattice::A
    } else {
        Sublattice::B
    }
}

fn two_colour(adjacency: &[Vec<usize>]) -> Result<Vec<Sublattice>> {
    let n = adjacency.len();
    let mut colour: Vec<Option<Sublattice>> = vec![None; n];
    colour[0] = Some(Sublattice::A);
    let mut queue = VecDeque::from([0usize]);
    while let Some(u) = queue.pop_front() {
        let cu = colour[u].expect("queued sites are coloured");
        for &v in &adjacency[u] {
            match colour[v] {
                None => {
                    colour[v] = Some(cu.other());
                    queue.push_back(v);
                }
                Some(cv) if cv == cu => {
                    return Err(Error::Bipartiteness(format!(
                        "odd cycle through edge ({u}, {v})"
                    )));
                }
                Some(_) => {}
            }
        }
    }
    colour
        .into_iter()
        .enumerate()
        .map(|(site, c)| {
            c.ok_or_else(|| Error::InvalidLattice(format!("site {site} is not connected to site 0")))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViolationKind {
    Shape,
    Asymmetric,
    IntraSublattice,
    Diagonal,
    NonFinite,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Violation {
    pub i: usize,
    pub j: usize,
    pub kind: ViolationKind,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return write!(f, "ok");
        }
        let parts: Vec<String> = self
            .violations
            .iter()
            .map(|v| format!("{:?} at ({}, {})", v.kind, v.i, v.j))
            .collect();
        write!(f, "{}", parts.join(", "))
    }
}

/// Checks symmetry, zero diagonal and sublattice support of `h`.
/// Each offending unordered pair is reported once.
pub fn validate_bipartite(h: &DMatrix<f64>, partition: &[Sublattice]) -> ValidationReport {
    let mut violations = Vec::new();
    if h.nrows() != h.ncols() || h.nrows() != partition.len() {
        violations.push(Violation { i: h.nrows(), j: h.ncols(), kind: ViolationKind::Shape });
        return ValidationReport { violations };
    }
    let n = h.nrows();
    for i in 0..n {
        for j in i..n {
            let (a, b) = (h[(i, j)], h[(j, i)]);
            if !a.is_finite() || !b.is_finite() {
                violations.push(Violation { i, j, kind: ViolationKind::NonFinite });
            } else if i == j {
                if a != 0.0 {
                    violations.push(Violation { i, j, kind: ViolationKind::Diagonal });
                }
            } else if a != b {
                violations.push(Violation { i, j, kind: ViolationKind::Asymmetric });
            } else if a != 0.0 && partition[i] == partition[j] {
                violations.push(Violation { i, j, kind: ViolationKind::IntraSublattice });
            }
        }
    }
    ValidationReport { violations }
}
