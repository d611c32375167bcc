//! Core domain types and the exact small-instance oracles.
//!
//! Indices are zero-based throughout the crate.

use std::collections::BTreeSet;

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;
pub type IndexSet = BTreeSet<usize>;

/// Columns whose norm is within this distance of one count as normalized.
pub const UNIT_NORM_TOL: f64 = 1e-10;
/// Residual tolerance for exact feasibility `y = Φx`.
pub const FEASIBILITY_TOL: f64 = 1e-8;
/// Condition-number ceiling for least squares on a support.
pub const CONDITION_LIMIT: f64 = 1e12;

/// An `n × m` dictionary of atoms stored as columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    entries: Matrix,
    unit_columns: bool,
}

impl Dictionary {
    pub fn new(entries: Matrix) -> Self {
        let unit_columns = entries
            .column_iter()
            .all(|c| (c.norm() - 1.0).abs() <= UNIT_NORM_TOL);
        Self {
            entries,
            unit_columns,
        }
    }

    /// Rescales every column to unit norm. Returns the dictionary and the
    /// diagonal of the normalizer `N` (so that `Φ = raw · N`).
    pub fn normalized(mut raw: Matrix) -> (Self, Vector) {
        let mut scales = Vector::zeros(raw.ncols());
        for (j, mut col) in raw.column_iter_mut().enumerate() {
            let norm = col.norm();
            let s = if norm > 0.0 { 1.0 / norm } else { 0.0 };
            col *= s;
            scales[j] = s;
        }
        (Self::new(raw), scales)
    }

    pub fn rows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn cols(&self) -> usize {
        self.entries.ncols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.entries
    }

    pub fn into_matrix(self) -> Matrix {
        self.entries
    }

    pub fn unit_columns(&self) -> bool {
        self.unit_columns
    }

    pub fn apply(&self, x: &Vector) -> Vector {
        &self.entries * x
    }

    pub fn column_norms(&self) -> Vector {
        Vector::from_iterator(self.cols(), self.entries.column_iter().map(|c| c.norm()))
    }

    pub fn spectral_norm(&self) -> f64 {
        spectral_norm(&self.entries)
    }

    /// Submatrix made of the listed columns, in the listed order.
    pub fn select_columns(&self, support: &[usize]) -> Matrix {
        self.entries.select_columns(support.iter())
    }

    pub fn content_hash(&self) -> String {
        matrix_hash(&self.entries)
    }
}

pub fn spectral_norm(a: &Matrix) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

/// SHA-256 over the shape and little-endian entries (column-major).
pub fn matrix_hash(a: &Matrix) -> String {
    let mut h = Sha256::new();
    h.update((a.nrows() as u64).to_le_bytes());
    h.update((a.ncols() as u64).to_le_bytes());
    for v in a.iter() {
        h.update(v.to_le_bytes());
    }
    hex(&h.finalize())
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// A length-`m` coefficient vector together with its exact nonzero set.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSignal {
    values: Vector,
    support: Vec<usize>,
}

impl SparseSignal {
    pub fn from_values(values: Vector) -> Self {
        let support = values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, _)| i)
            .collect();
        Self { values, support }
    }

    pub fn zeros(m: usize) -> Self {
        Self {
            values: Vector::zeros(m),
            support: Vec::new(),
        }
    }

    /// Builds a signal from `(index, amplitude)` pairs. Zero amplitudes are
    /// dropped from the support.
    pub fn from_entries(m: usize, entries: impl IntoIterator<Item = (usize, f64)>) -> Self {
        let mut values = Vector::zeros(m);
        for (i, a) in entries {
            values[i] = a;
        }
        Self::from_values(values)
    }

    pub fn values(&self) -> &Vector {
        &self.values
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn support_set(&self) -> IndexSet {
        self.support.iter().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn cardinality(&self) -> usize {
        self.support.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation(Vector);

impl Observation {
    pub fn new(values: Vector) -> Self {
        Self(values)
    }

    pub fn synthesize(phi: &Dictionary, x: &SparseSignal) -> Self {
        Self(phi.apply(x.values()))
    }

    pub fn values(&self) -> &Vector {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<Vector> for Observation {
    fn from(v: Vector) -> Self {
        Self(v)
    }
}

/// Outcome of one solver run.
#[derive(Debug, Clone)]
pub struct RecoveryResult {
    pub estimate: SparseSignal,
    pub iterations_used: usize,
    pub converged: bool,
    /// `½‖y − Φx‖²` at every iterate, starting with the initial point; its
    /// length is `iterations_used + 1`.
    pub objective_trace: Vec<f64>,
    /// Spectral norm of the dictionary the solver ran against, when computed.
    pub spectral_norm: Option<f64>,
}

impl RecoveryResult {
    pub fn final_objective(&self) -> f64 {
        *self.objective_trace.last().unwrap_or(&f64::NAN)
    }
}

/// Binary support labels `s*`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector {
    bits: Vec<u8>,
}

impl LabelVector {
    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|b| **b == 1).count()
    }

    pub fn to_vector(&self) -> Vector {
        Vector::from_iterator(self.bits.len(), self.bits.iter().map(|b| *b as f64))
    }
}

pub fn labels_from_signal(x: &SparseSignal) -> LabelVector {
    LabelVector {
        bits: x.values().iter().map(|v| u8::from(*v != 0.0)).collect(),
    }
}

pub fn half_squared_residual(y: &Vector, phi: &Matrix, x: &Vector) -> f64 {
    0.5 * (y - phi * x).norm_squared()
}

/// Least-squares fit of `y` restricted to the columns in `support`.
pub fn least_squares_on_support(
    y: &Observation,
    phi: &Dictionary,
    support: &[usize],
) -> Result<SparseSignal> {
    let m = phi.cols();
    if support.is_empty() {
        return Ok(SparseSignal::zeros(m));
    }
    if let Some(&bad) = support.iter().find(|&&i| i >= m) {
        return Err(Error::ShapeMismatch(format!(
            "support index {bad} out of range for {m} columns"
        )));
    }
    if support.len() > phi.rows() {
        return Err(Error::RankDeficient { cond: f64::INFINITY });
    }
    let coef = solve_columns(&phi.select_columns(support), y.values())?;
    Ok(SparseSignal::from_entries(
        m,
        support.iter().copied().zip(coef.iter().copied()),
    ))
}

/// Minimum-norm solve of `sub · c ≈ y` through the SVD, guarded by the
/// condition number of `sub`.
pub(crate) fn solve_columns(sub: &Matrix, y: &Vector) -> Result<Vector> {
    let svd = sub.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(cond <= CONDITION_LIMIT) {
        return Err(Error::RankDeficient { cond });
    }
    svd.solve(y, 0.0).map_err(|_| Error::RankDeficient { cond })
}

/// Exhaustive minimum-cardinality solver for desk-scale instances.
///
/// Sizes are tried in increasing order; within a size the feasible support
/// with the smallest residual wins, ties going to the lexicographically
/// smallest support.
pub fn brute_force_l0(y: &Observation, phi: &Dictionary, k_max: usize) -> Result<SparseSignal> {
    let (n, m) = (phi.rows(), phi.cols());
    if y.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "observation has length {}, dictionary has {n} rows",
            y.len()
        )));
    }
    if m > 24 || k_max > 4 {
        return Err(Error::EnumerationTooLarge(format!(
            "brute force needs m <= 24 and k_max <= 4 (got m = {m}, k_max = {k_max})"
        )));
    }
    if y.values().norm() <= FEASIBILITY_TOL {
        return Ok(SparseSignal::zeros(m));
    }
    for k in 1..=k_max.min(n) {
        let mut best: Option<(f64, SparseSignal)> = None;
        for support in (0..m).combinations(k) {
            let Ok(x) = least_squares_on_support(y, phi, &support) else {
                continue;
            };
            let res = (y.values() - phi.apply(x.values())).norm();
            if res > FEASIBILITY_TOL {
                continue;
            }
            if best.as_ref().is_none_or(|(r, _)| res < *r) {
                best = Some((res, x));
            }
        }
        if let Some((_, x)) = best {
            return Ok(x);
        }
    }
    Err(Error::Infeasible { k_max })
}

pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}
