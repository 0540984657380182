//! Plain-text debug dumps: a dimension header followed by row-major
//! `re im` pairs, one matrix row per line. Not a stable format.

use std::fmt::Write;

use super::{DenseOperator, DenseState};

pub fn dump_operator(op: &DenseOperator) -> String {
    let m = &op.matrix;
    let mut out = format!("{} {}\n", m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:.17e} {:.17e}", m[(i, j)].re, m[(i, j)].im)).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    out
}

pub fn dump_state(state: &DenseState) -> String {
    let v = &state.amplitudes;
    let mut out = format!("{}\n", v.len());
    for z in v.iter() {
        let _ = writeln!(out, "{:.17e} {:.17e}", z.re, z.im);
    }
    out
}
