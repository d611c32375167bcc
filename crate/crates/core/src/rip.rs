//! Exhaustive restricted-isometry constants for small dictionaries, and the
//! rank-annihilating `(W, D)` pair for `[εA + Δ_r]N` dictionaries.

use itertools::Itertools;
use nalgebra::SymmetricEigen;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{binomial, Dictionary, Matrix, Vector};

/// Sufficient IHT recovery threshold on `δ_{3k}`.
pub const IHT_RIP_THRESHOLD: f64 = 0.176_776_695_296_636_9; // 1/√32

/// Largest number of subsets [`delta_k_exhaustive`] will visit.
pub const SUBSET_BUDGET: u128 = 2_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    /// `λ_min` fell furthest below one.
    Lower,
    /// `λ_max` rose furthest above one.
    Upper,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RipReport {
    pub k: usize,
    pub delta: f64,
    pub witness_support: Vec<usize>,
    pub side: Side,
}

fn gram_deviation(gram: &Matrix, support: &[usize]) -> (f64, Side) {
    let k = support.len();
    let sub = Matrix::from_fn(k, k, |a, b| gram[(support[a], support[b])]);
    let eig = SymmetricEigen::new(sub).eigenvalues;
    let upper = (eig.max() - 1.0).abs();
    let lower = (1.0 - eig.min()).abs();
    if upper >= lower {
        (upper, Side::Upper)
    } else {
        (lower, Side::Lower)
    }
}

/// `δ_k` by enumerating every `k`-column submatrix.
///
/// The maximizing subset is the lexicographically smallest among ties, so
/// the report does not depend on thread scheduling.
pub fn delta_k_exhaustive(phi: &Dictionary, k: usize) -> Result<RipReport> {
    let (n, m) = (phi.rows(), phi.cols());
    if k == 0 || k > n || k > m {
        return Err(Error::InvalidConfig(format!(
            "sparsity {k} must satisfy 1 <= k <= min(n, m) = {}",
            n.min(m)
        )));
    }
    let count = binomial(m, k);
    if count > SUBSET_BUDGET {
        return Err(Error::BudgetExceeded { m, k, count });
    }
    let gram = phi.matrix().transpose() * phi.matrix();

    // Fan out over the first index; each branch enumerates in lexicographic
    // order and the per-branch winners are reduced in branch order.
    let best = (0..=m - k)
        .into_par_iter()
        .map(|first| {
            let mut best: Option<(f64, Side, Vec<usize>)> = None;
            for rest in (first + 1..m).combinations(k - 1) {
                let mut support = Vec::with_capacity(k);
                support.push(first);
                support.extend(rest);
                let (d, side) = gram_deviation(&gram, &support);
                if best.as_ref().is_none_or(|(b, _, _)| d > *b) {
                    best = Some((d, side, support));
                }
            }
            best
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .fold(None, |acc: Option<(f64, Side, Vec<usize>)>, cand| match acc {
            Some(a) if a.0 >= cand.0 => Some(a),
            _ => Some(cand),
        })
        .expect("at least one subset");

    Ok(RipReport {
        k,
        delta: best.0,
        witness_support: best.2,
        side: best.1,
    })
}

/// `δ_{3k}[Φ] < 1/√32`.
pub fn iht_condition_holds(phi: &Dictionary, k: usize) -> Result<bool> {
    Ok(delta_k_exhaustive(phi, 3 * k)?.delta < IHT_RIP_THRESHOLD)
}

/// `W` with orthonormal rows spanning `null(Δ_rᵀ)` and the diagonal of
/// `D = (εN)⁻¹`.
#[derive(Debug, Clone)]
pub struct Cor3Pair {
    pub w: Matrix,
    pub d: Vector,
}

impl Cor3Pair {
    /// `WΦD`.
    pub fn transformed(&self, phi: &Dictionary) -> Matrix {
        let mut out = &self.w * phi.matrix();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            col *= self.d[j];
        }
        out
    }

    /// `WΦD` with unit columns, the form in which RIP constants compare.
    pub fn transformed_normalized(&self, phi: &Dictionary) -> Dictionary {
        Dictionary::normalized(self.transformed(phi)).0
    }
}

/// Builds the pair that annihilates the rank-`r` term: `WΔ_r = 0`, so that
/// `WΦD = WA`.
pub fn cor3_transform(
    phi: &Dictionary,
    perturbation: &Matrix,
    epsilon: f64,
    norm_scales: &Vector,
) -> Result<Cor3Pair> {
    let n = phi.rows();
    if perturbation.nrows() != n || norm_scales.len() != phi.cols() {
        return Err(Error::ShapeMismatch(format!(
            "perturbation {}x{} / scales {} against dictionary {}x{}",
            perturbation.nrows(),
            perturbation.ncols(),
            norm_scales.len(),
            n,
            phi.cols()
        )));
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidConfig("epsilon must be positive".into()));
    }
    let outer = perturbation * perturbation.transpose();
    let eig = SymmetricEigen::new(outer);
    let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let cutoff = top * 1e-12;
    let mut null: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] <= cutoff).collect();
    let rank = n - null.len();
    if null.is_empty() {
        return Err(Error::DegenerateNullSpace { rank, rows: n });
    }
    null.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
    let mut w = Matrix::zeros(null.len(), n);
    for (row, &idx) in null.iter().enumerate() {
        w.set_row(row, &eig.eigenvectors.column(idx).transpose());
    }
    let mut d = Vector::zeros(norm_scales.len());
    for (i, s) in norm_scales.iter().enumerate() {
        if *s == 0.0 {
            return Err(Error::SingularScaling(i));
        }
        d[i] = 1.0 / (epsilon * s);
    }
    Ok(Cor3Pair { w, d })
}
