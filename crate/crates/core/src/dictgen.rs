//! Seeded dictionary generators.
//!
//! Every generator is a pure function of its parameters and seed.

use std::collections::BTreeSet;
use std::ops::Range;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::model::{Dictionary, Matrix, SparseSignal, Vector};
use crate::seeding::{self, gaussian_matrix, unit_sphere};

/// iid `N(0, 1/n)` entries, columns rescaled to unit norm.
pub fn gaussian_unit_columns(n: usize, m: usize, seed: u64) -> Dictionary {
    let mut rng = seeding::rng(seed);
    let raw = gaussian_matrix(&mut rng, n, m, 1.0 / (n as f64).sqrt());
    Dictionary::normalized(raw).0
}

/// `Φ = [εA + Δ_r]N` together with its ingredients.
#[derive(Debug, Clone)]
pub struct RankPerturbed {
    pub dictionary: Dictionary,
    /// The rank-`r` term `Δ_r`, scaled to unit spectral norm.
    pub perturbation: Matrix,
    /// The Gaussian detail matrix `A` before normalization.
    pub detail: Matrix,
    /// Diagonal of the column normalizer `N`.
    pub norm_scales: Vector,
    pub epsilon: f64,
}

pub fn rank_perturbed(n: usize, m: usize, epsilon: f64, r: usize, seed: u64) -> Result<RankPerturbed> {
    if r == 0 || r >= n {
        return Err(Error::InvalidConfig(format!("rank {r} must satisfy 1 <= r < n = {n}")));
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidConfig(format!("epsilon must be positive, got {epsilon}")));
    }
    let mut rng = seeding::rng(seed);
    let detail = gaussian_matrix(&mut rng, n, m, 1.0 / (n as f64).sqrt());
    let left = gaussian_matrix(&mut rng, n, r, 1.0);
    let right = gaussian_matrix(&mut rng, r, m, 1.0);
    let mut perturbation = left * right;
    let s = crate::model::spectral_norm(&perturbation);
    perturbation /= s;
    let raw = &detail * epsilon + &perturbation;
    let (dictionary, norm_scales) = Dictionary::normalized(raw);
    Ok(RankPerturbed {
        dictionary,
        perturbation,
        detail,
        norm_scales,
        epsilon,
    })
}

/// `Σ_{i=1..n} i⁻² u⁽ⁱ⁾v⁽ⁱ⁾ᵀ` with standard Gaussian factors, before column
/// normalization.
pub fn decaying_spectrum_raw(n: usize, m: usize, seed: u64) -> Matrix {
    let mut rng = seeding::rng(seed);
    let mut acc = Matrix::zeros(n, m);
    for i in 1..=n {
        let u = seeding::gaussian_vector(&mut rng, n, 1.0);
        let v = seeding::gaussian_vector(&mut rng, m, 1.0);
        acc += (u * v.transpose()) / (i * i) as f64;
    }
    acc
}

pub fn decaying_spectrum(n: usize, m: usize, seed: u64) -> Dictionary {
    Dictionary::normalized(decaying_spectrum_raw(n, m, seed)).0
}

/// Parameters of the two-scale clustered model.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusteredDictSpec {
    pub cluster_sizes: Vec<usize>,
    pub epsilon: f64,
    pub n: usize,
}

impl ClusteredDictSpec {
    pub fn uniform(n: usize, clusters: usize, size: usize, epsilon: f64) -> Self {
        Self {
            cluster_sizes: vec![size; clusters],
            epsilon,
            n,
        }
    }

    pub fn clusters(&self) -> usize {
        self.cluster_sizes.len()
    }

    pub fn atoms(&self) -> usize {
        self.cluster_sizes.iter().sum()
    }

    /// Column ranges of each cluster.
    pub fn ranges(&self) -> Vec<Range<usize>> {
        let mut start = 0;
        self.cluster_sizes
            .iter()
            .map(|&s| {
                let r = start..start + s;
                start += s;
                r
            })
            .collect()
    }

    /// Cluster index owning each column.
    pub fn owners(&self) -> Vec<usize> {
        self.cluster_sizes
            .iter()
            .enumerate()
            .flat_map(|(j, &s)| std::iter::repeat_n(j, s))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidConfig("epsilon must be positive".into()));
        }
        if self.cluster_sizes.is_empty() || self.cluster_sizes.contains(&0) {
            return Err(Error::InvalidConfig("every cluster needs at least one atom".into()));
        }
        if self.n == 0 {
            return Err(Error::InvalidConfig("n must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ClusteredDictionary {
    pub spec: ClusteredDictSpec,
    pub dictionary: Dictionary,
    /// `U`, one unit-norm center per cluster.
    pub centers: Matrix,
    /// `A = [A₁, …, A_c]`, unit-norm details.
    pub details: Matrix,
    /// Concatenated cluster weights `v`.
    pub weights: Vector,
    /// Diagonal of `N`.
    pub norm_scales: Vector,
}

impl ClusteredDictionary {
    /// Column `i` rebuilt from the model: `nᵢᵢ(vᵢu_j + εaᵢ)`.
    pub fn model_column(&self, i: usize) -> Vector {
        let j = self.spec.owners()[i];
        (self.centers.column(j) * self.weights[i] + self.details.column(i) * self.spec.epsilon)
            * self.norm_scales[i]
    }

    /// Splits `Φx` into the cluster-level part `Uz*` and the detail part
    /// `ν`, with `z*_j = Σ_{i∈I_j} nᵢᵢ vᵢ xᵢ` and `ν = ε Σ nᵢᵢ xᵢ aᵢ`.
    pub fn cluster_decomposition(&self, x: &SparseSignal) -> (Vector, Vector) {
        let owners = self.spec.owners();
        let mut z = Vector::zeros(self.spec.clusters());
        let mut nu = Vector::zeros(self.spec.n);
        for &i in x.support() {
            let w = self.norm_scales[i] * x.values()[i];
            z[owners[i]] += w * self.weights[i];
            nu += self.details.column(i) * (w * self.spec.epsilon);
        }
        (z, nu)
    }

    /// `[U, A]`, the dictionary of the detail phase.
    pub fn stacked(&self) -> Matrix {
        let (n, c, m) = (self.spec.n, self.spec.clusters(), self.spec.atoms());
        let mut out = Matrix::zeros(n, c + m);
        out.columns_mut(0, c).copy_from(&self.centers);
        out.columns_mut(c, m).copy_from(&self.details);
        out
    }
}

/// Draws `U`, `A` on the unit sphere, `v` uniform on `[0.5, 1.5]`, and
/// assembles `Φ_j = u_j v_jᵀ + εA_j`, then normalizes columns.
pub fn clustered(spec: &ClusteredDictSpec, seed: u64) -> Result<ClusteredDictionary> {
    spec.validate()?;
    let (n, c, m) = (spec.n, spec.clusters(), spec.atoms());
    let mut rng = seeding::rng(seed);
    let mut centers = Matrix::zeros(n, c);
    for j in 0..c {
        centers.set_column(j, &unit_sphere(&mut rng, n));
    }
    let mut details = Matrix::zeros(n, m);
    for i in 0..m {
        details.set_column(i, &unit_sphere(&mut rng, n));
    }
    let weights = Vector::from_fn(m, |_, _| rng.random_range(0.5..=1.5));
    let owners = spec.owners();
    let mut raw = Matrix::zeros(n, m);
    for i in 0..m {
        let col = centers.column(owners[i]) * weights[i] + details.column(i) * spec.epsilon;
        raw.set_column(i, &col);
    }
    let (dictionary, norm_scales) = Dictionary::normalized(raw);
    Ok(ClusteredDictionary {
        spec: spec.clone(),
        dictionary,
        centers,
        details,
        weights,
        norm_scales,
    })
}

/// Indices of clusters in which `x` has at least one nonzero.
pub fn cluster_support(x: &SparseSignal, spec: &ClusteredDictSpec) -> Result<BTreeSet<usize>> {
    if x.len() != spec.atoms() {
        return Err(Error::ShapeMismatch(format!(
            "signal length {} does not match {} atoms",
            x.len(),
            spec.atoms()
        )));
    }
    let owners = spec.owners();
    Ok(x.support().iter().map(|&i| owners[i]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rip::delta_k_exhaustive;

    fn max_abs_column_norm_error(d: &Dictionary) -> f64 {
        d.column_norms().iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn gaussian_columns_are_unit() {
        let d = gaussian_unit_columns(4, 6, 0);
        assert!(max_abs_column_norm_error(&d) < 1e-12);
        assert!(d.unit_columns());
    }

    #[test]
    fn gaussian_is_deterministic() {
        let a = gaussian_unit_columns(5, 9, 42);
        let b = gaussian_unit_columns(5, 9, 42);
        assert_eq!(a.matrix().as_slice(), b.matrix().as_slice());
        assert_ne!(a, gaussian_unit_columns(5, 9, 43));
    }

    #[test]
    fn gaussian_is_incoherent_on_average() {
        let mut total = 0.0;
        let mut count = 0usize;
        for seed in 0..100 {
            let d = gaussian_unit_columns(20, 100, seed);
            let g = d.matrix().transpose() * d.matrix();
            for i in 0..100 {
                for j in 0..i {
                    total += g[(i, j)].abs();
                    count += 1;
                }
            }
        }
        let mean = total / count as f64;
        assert!(mean < 0.5, "mean |<phi_i, phi_j>| = {mean}");
    }

    #[test]
    fn rank_perturbed_large_epsilon_approaches_detail() {
        let rp = rank_perturbed(10, 30, 1e6, 1, 5).unwrap();
        let (a, _) = Dictionary::normalized(rp.detail.clone());
        for j in 0..30 {
            let cos = rp.dictionary.matrix().column(j).dot(&a.matrix().column(j));
            assert!(cos.clamp(-1.0, 1.0).acos() < 1e-3);
        }
        assert!(max_abs_column_norm_error(&rp.dictionary) < 1e-12);
    }

    #[test]
    fn rank_perturbed_has_requested_rank() {
        let rp = rank_perturbed(10, 30, 0.01, 2, 1).unwrap();
        let sv = rp.perturbation.clone().svd(false, false).singular_values;
        let big = sv.iter().filter(|s| **s > 1e-10).count();
        assert_eq!(big, 2);
        assert!((sv.max() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rank_one_term_inflates_delta_two() {
        let rp = rank_perturbed(10, 30, 0.01, 1, 0).unwrap();
        let (a, _) = Dictionary::normalized(rp.detail.clone());
        let dphi = delta_k_exhaustive(&rp.dictionary, 2).unwrap().delta;
        let da = delta_k_exhaustive(&a, 2).unwrap().delta;
        assert!(dphi > 1.0 / 32f64.sqrt());
        assert!(da < dphi, "delta_2[A] = {da}, delta_2[Phi] = {dphi}");
    }

    #[test]
    fn rank_perturbed_rejects_bad_rank() {
        assert!(rank_perturbed(5, 10, 0.1, 5, 0).is_err());
        assert!(rank_perturbed(5, 10, 0.1, 0, 0).is_err());
    }

    #[test]
    fn decaying_spectrum_singular_values() {
        let raw = decaying_spectrum_raw(20, 100, 3);
        let mut sv: Vec<f64> = raw.svd(false, false).singular_values.iter().cloned().collect();
        sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert!(sv.windows(2).all(|w| w[0] > w[1]));
        assert!(sv[0] / sv[4] > 10.0, "sigma1/sigma5 = {}", sv[0] / sv[4]);
        let d = decaying_spectrum(20, 100, 3);
        assert!(max_abs_column_norm_error(&d) < 1e-12);
    }

    #[test]
    fn decaying_spectrum_has_full_rank() {
        for seed in 0..20 {
            let raw = decaying_spectrum_raw(20, 100, seed);
            let smin = raw.svd(false, false).singular_values.min();
            assert!(smin > 1e-8, "seed {seed}: smallest singular value {smin}");
        }
    }

    #[test]
    fn clustered_reconstruction_and_coherence() {
        let spec = ClusteredDictSpec::uniform(24, 8, 6, 0.01);
        let cd = clustered(&spec, 11).unwrap();
        for i in 0..spec.atoms() {
            let err = (cd.model_column(i) - cd.dictionary.matrix().column(i)).norm();
            assert!(err < 1e-10);
        }
        for j in 0..8 {
            assert!((cd.centers.column(j).norm() - 1.0).abs() < 1e-12);
        }
        for i in 0..spec.atoms() {
            assert!((cd.details.column(i).norm() - 1.0).abs() < 1e-12);
        }
        let g = cd.dictionary.matrix().transpose() * cd.dictionary.matrix();
        let mut worst: f64 = 1.0;
        for r in spec.ranges() {
            for a in r.clone() {
                for b in r.clone() {
                    worst = worst.min(g[(a, b)]);
                }
            }
        }
        assert!(worst > 0.99, "min within-cluster inner product {worst}");
    }

    #[test]
    fn cluster_decomposition_reproduces_observation() {
        let spec = ClusteredDictSpec::uniform(12, 4, 3, 0.05);
        let cd = clustered(&spec, 2).unwrap();
        let x = SparseSignal::from_entries(12, [(0, 1.0), (7, -0.6), (8, 0.9)]);
        let (z, nu) = cd.cluster_decomposition(&x);
        let y = cd.dictionary.apply(x.values());
        assert!((&cd.centers * &z + nu - y).norm() < 1e-12);
    }

    #[test]
    fn columns_approach_centers_as_epsilon_shrinks() {
        let mut last = vec![f64::INFINITY; 12];
        for eps in [0.3, 0.1, 0.03, 0.01] {
            let spec = ClusteredDictSpec::uniform(10, 4, 3, eps);
            let cd = clustered(&spec, 9).unwrap();
            let owners = spec.owners();
            for i in 0..12 {
                let cos = cd.dictionary.matrix().column(i).dot(&cd.centers.column(owners[i]));
                let angle = cos.clamp(-1.0, 1.0).acos();
                assert!(angle < last[i]);
                last[i] = angle;
            }
        }
    }

    #[test]
    fn cluster_support_cases() {
        let spec = ClusteredDictSpec::uniform(10, 6, 2, 0.1);
        let x = SparseSignal::from_entries(12, [(4, 1.0), (5, 2.0), (10, -1.0)]);
        assert_eq!(cluster_support(&x, &spec).unwrap(), BTreeSet::from([2, 5]));
        assert!(cluster_support(&SparseSignal::zeros(12), &spec).unwrap().is_empty());
        let full = SparseSignal::from_values(Vector::from_element(12, 1.0));
        assert_eq!(cluster_support(&full, &spec).unwrap().len(), 6);
        assert!(cluster_support(&SparseSignal::zeros(11), &spec).is_err());
    }
}
