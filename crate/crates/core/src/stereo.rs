//! Photometric stereo with sparse outliers.
//!
//! A Lambertian pixel observes `o = ρ L n + e` under `q` lights. Projecting
//! onto the orthogonal complement of `range(L)` removes the surface term and
//! leaves a sparse recovery problem in `e`, whose support marks the
//! corrupted lights.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use nalgebra::SymmetricEigen;
use rand::seq::index::sample;
use rand::Rng as _;
use rayon::prelude::*;

use crate::datagen::top_d_support;
use crate::error::{Error, Result};
use crate::matio::format_value;
use crate::model::{Dictionary, IndexSet, Matrix, Observation, Vector};
use crate::netlab::{Mode, Network};
use crate::seeding;
use crate::solvers::{self, SolverConfig};

pub const INLIER_COUNT: usize = 4;
const RANK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct LightingRig {
    l: Matrix,
}

fn singular_values(a: &Matrix) -> Vec<f64> {
    let mut s: Vec<f64> = a.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

impl LightingRig {
    pub fn new(l: Matrix) -> Result<Self> {
        if l.ncols() != 3 || l.nrows() < 4 {
            return Err(Error::ShapeMismatch(format!(
                "lighting matrix must be q×3 with q >= 4, got {:?}",
                l.shape()
            )));
        }
        if l.row_iter().any(|r| (r.norm() - 1.0).abs() > 1e-9) {
            return Err(Error::InvalidConfig("lighting directions must have unit norm".into()));
        }
        let s = singular_values(&l);
        if s[2] <= RANK_TOL * s[0].max(1.0) {
            return Err(Error::RankDeficientRig(s));
        }
        Ok(Self { l })
    }

    /// `q` directions uniform on the upper unit hemisphere.
    pub fn random(q: usize, seed: u64) -> Result<Self> {
        let mut rng = seeding::rng(seeding::derive(seed, "lighting-rig"));
        let mut l = Matrix::zeros(q, 3);
        for i in 0..q {
            let mut v = seeding::unit_sphere(&mut rng, 3);
            v[2] = v[2].abs();
            l.row_mut(i).copy_from(&v.transpose());
        }
        Self::new(l)
    }

    pub fn lights(&self) -> usize {
        self.l.nrows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.l
    }
}

/// Orthonormal basis of `null(Lᵀ)` as the rows of a `(q−3)×q` projector,
/// and the dictionary `Φ` equal to that projector. Columns are left at
/// their physical norms.
pub fn nullspace_dictionary(rig: &LightingRig) -> Result<(Dictionary, Matrix)> {
    let l = rig.matrix();
    let q = l.nrows();
    let s = singular_values(l);
    let gram = l.transpose() * l;
    let inv = gram
        .try_inverse()
        .filter(|_| s[2] > RANK_TOL * s[0].max(1.0))
        .ok_or_else(|| Error::RankDeficientRig(s.clone()))?;
    let complement = Matrix::identity(q, q) - l * inv * l.transpose();
    let eig = SymmetricEigen::new(complement);
    let mut keep: Vec<usize> = (0..q).filter(|&i| eig.eigenvalues[i] > 0.5).collect();
    keep.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    if keep.len() != q - 3 {
        return Err(Error::RankDeficientRig(s));
    }
    let mut projector = Matrix::zeros(q - 3, q);
    for (r, &i) in keep.iter().enumerate() {
        let mut v = eig.eigenvectors.column(i).into_owned();
        let lead = v.iamax();
        if v[lead] < 0.0 {
            v = -v;
        }
        projector.row_mut(r).copy_from(&v.transpose());
    }
    // Re-orthonormalize against eigen-solver drift.
    let qr = projector.transpose().qr();
    let mut basis = qr.q().transpose();
    for (r, mut row) in basis.row_iter_mut().enumerate() {
        if row.dot(&projector.row(r)) < 0.0 {
            row.neg_mut();
        }
    }
    Ok((Dictionary::new(basis.clone()), basis))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurfacePoint {
    pub normal: Vector,
    pub albedo: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PixelObservation {
    pub o: Vector,
    pub true_outliers: Option<IndexSet>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenePoint {
    pub surface: SurfacePoint,
    pub pixel: PixelObservation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub points: Vec<ScenePoint>,
}

/// Outlier count drawn uniformly from `count`, magnitudes uniform on
/// `±[low, high]` with a random sign.
#[derive(Debug, Clone, PartialEq)]
pub struct OutlierLaw {
    pub count: std::ops::RangeInclusive<usize>,
    pub low: f64,
    pub high: f64,
}

impl OutlierLaw {
    pub fn band(count: std::ops::RangeInclusive<usize>) -> Self {
        Self {
            count,
            low: 0.2,
            high: 1.0,
        }
    }

    pub fn none() -> Self {
        Self::band(0..=0)
    }
}

fn upper_hemisphere(rng: &mut seeding::Rng) -> Vector {
    let mut v = seeding::unit_sphere(rng, 3);
    v[2] = v[2].abs();
    v
}

pub fn synthesize_scene(point_count: usize, rig: &LightingRig, law: &OutlierLaw, seed: u64) -> Result<Scene> {
    let q = rig.lights();
    if *law.count.end() + INLIER_COUNT > q {
        return Err(Error::InvalidConfig(format!(
            "{} outliers leave fewer than {INLIER_COUNT} clean lights out of {q}",
            law.count.end()
        )));
    }
    if !(law.low >= 0.0 && law.high >= law.low) {
        return Err(Error::InvalidConfig(format!("bad outlier band [{}, {}]", law.low, law.high)));
    }
    let points = (0..point_count)
        .map(|i| {
            let mut rng = seeding::stream(seed, i as u64);
            let normal = upper_hemisphere(&mut rng);
            let albedo = rng.random_range(0.5..=1.5);
            let mut o = rig.matrix() * &normal * albedo;
            let count = rng.random_range(law.count.clone());
            let mut outliers = IndexSet::new();
            for j in sample(&mut rng, q, count) {
                let mag = if law.high > law.low {
                    rng.random_range(law.low..law.high)
                } else {
                    law.low
                };
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                o[j] += sign * mag;
                outliers.insert(j);
            }
            ScenePoint {
                surface: SurfacePoint { normal, albedo },
                pixel: PixelObservation {
                    o,
                    true_outliers: Some(outliers),
                },
            }
        })
        .collect();
    Ok(Scene { points })
}

/// Source of per-light outlier scores; higher means more likely corrupted.
#[derive(Debug, Clone)]
pub enum SupportEngine {
    /// Indicator of the ground-truth outlier set.
    Oracle,
    Network(Arc<Network>),
    Iht(SolverConfig),
    Ista { lambda: f64, config: SolverConfig },
    Omp { k: usize },
}

impl SupportEngine {
    pub fn name(&self) -> &'static str {
        match self {
            SupportEngine::Oracle => "oracle",
            SupportEngine::Network(_) => "network",
            SupportEngine::Iht(_) => "iht",
            SupportEngine::Ista { .. } => "ista",
            SupportEngine::Omp { .. } => "omp",
        }
    }

    fn solver_scores(&self, phi: &Dictionary, y: &Vector, pixel: &PixelObservation) -> Result<Vector> {
        let y = Observation::new(y.clone());
        Ok(match self {
            SupportEngine::Oracle => {
                let truth = pixel
                    .true_outliers
                    .as_ref()
                    .ok_or_else(|| Error::InvalidConfig("oracle engine needs ground-truth outliers".into()))?;
                Vector::from_fn(pixel.o.len(), |i, _| f64::from(u8::from(truth.contains(&i))))
            }
            SupportEngine::Iht(config) => solvers::iht(&y, phi, config).estimate.values().abs(),
            SupportEngine::Ista { lambda, config } => solvers::ista(&y, phi, *lambda, config).estimate.values().abs(),
            SupportEngine::Omp { k } => solvers::omp(&y, phi, *k)?.estimate.values().abs(),
            SupportEngine::Network(_) => unreachable!("networks score in batches"),
        })
    }

    /// Scores for every pixel, given the projected observations.
    pub fn scores(&self, phi: &Dictionary, ys: &[Vector], pixels: &[&PixelObservation]) -> Result<Vec<Vector>> {
        match self {
            SupportEngine::Network(net) => {
                if ys.is_empty() {
                    return Ok(Vec::new());
                }
                let batch = Matrix::from_columns(ys);
                let p = net.forward(&batch, Mode::Eval)?;
                Ok(p.column_iter().map(|c| c.into_owned()).collect())
            }
            _ => ys
                .par_iter()
                .zip(pixels.par_iter())
                .map(|(y, px)| self.solver_scores(phi, y, px))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalEstimate {
    pub normal: Vector,
    pub angular_error: f64,
}

/// Angle between two unit normals in degrees.
pub fn angular_error_degrees(a: &Vector, b: &Vector) -> f64 {
    a.dot(b).clamp(-1.0, 1.0).acos().to_degrees()
}

/// Least-squares `ρn` from the chosen rows, normalized to a unit normal.
pub fn fit_normal(rig: &LightingRig, o: &Vector, rows: &[usize]) -> Result<Vector> {
    let l = rig.matrix();
    let a = Matrix::from_fn(rows.len(), 3, |i, j| l[(rows[i], j)]);
    let b = Vector::from_fn(rows.len(), |i, _| o[rows[i]]);
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    if svd.singular_values.len() < 3 || svd.singular_values.min() <= RANK_TOL * smax.max(1.0) {
        return Err(Error::DegenerateInliers);
    }
    let rho_n = svd.solve(&b, 0.0).map_err(|_| Error::DegenerateInliers)?;
    let norm = rho_n.norm();
    if norm == 0.0 {
        return Err(Error::DegenerateInliers);
    }
    Ok(rho_n / norm)
}

fn estimate(point: &ScenePoint, rig: &LightingRig, rows: &[usize]) -> Result<NormalEstimate> {
    let normal = fit_normal(rig, &point.pixel.o, rows)?;
    let angular_error = angular_error_degrees(&normal, &point.surface.normal);
    Ok(NormalEstimate { normal, angular_error })
}

/// Fits each normal from the `inlier_count` lights with the lowest outlier
/// scores.
pub fn estimate_normals(
    scene: &Scene,
    rig: &LightingRig,
    projector: &Matrix,
    phi: &Dictionary,
    engine: &SupportEngine,
    inlier_count: usize,
) -> Result<Vec<NormalEstimate>> {
    let q = rig.lights();
    if inlier_count < 3 || inlier_count > q {
        return Err(Error::InvalidConfig(format!("inlier count {inlier_count} outside 3..={q}")));
    }
    let ys: Vec<Vector> = scene.points.iter().map(|p| projector * &p.pixel.o).collect();
    let pixels: Vec<&PixelObservation> = scene.points.iter().map(|p| &p.pixel).collect();
    let scores = engine.scores(phi, &ys, &pixels)?;
    scene
        .points
        .par_iter()
        .zip(scores.par_iter())
        .map(|(point, s)| {
            let negated: Vec<f64> = s.iter().map(|v| -v).collect();
            estimate(point, rig, &top_d_support(&negated, inlier_count))
        })
        .collect()
}

/// Least squares on every light, ignoring outliers.
pub fn naive_least_squares(scene: &Scene, rig: &LightingRig) -> Result<Vec<NormalEstimate>> {
    let all: Vec<usize> = (0..rig.lights()).collect();
    scene.points.par_iter().map(|p| estimate(p, rig, &all)).collect()
}

/// Fits each normal from four lights chosen uniformly at random.
pub fn random4_baseline(scene: &Scene, rig: &LightingRig, seed: u64) -> Result<Vec<NormalEstimate>> {
    let q = rig.lights();
    let base = seeding::derive(seed, "rnd4");
    scene
        .points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut rows = sample(&mut seeding::stream(base, i as u64), q, INLIER_COUNT).into_vec();
            rows.sort_unstable();
            estimate(p, rig, &rows)
        })
        .collect()
}

pub fn mean_angular_error(estimates: &[NormalEstimate]) -> f64 {
    estimates.iter().map(|e| e.angular_error).sum::<f64>() / estimates.len().max(1) as f64
}

/// Plain-text scene: one line per point holding the normal, albedo, the
/// `q` intensities, then the outlier count and indices (`-` if unknown).
pub fn write_scene_string(scene: &Scene, rig: &LightingRig) -> String {
    let mut out = String::new();
    let q = rig.lights();
    out.push_str("# sparselab scene v1\n");
    let _ = writeln!(out, "# lights {q}");
    for row in rig.matrix().row_iter() {
        let _ = writeln!(out, "# light {} {} {}", format_value(row[0]), format_value(row[1]), format_value(row[2]));
    }
    let _ = writeln!(out, "# points {}", scene.points.len());
    for p in &scene.points {
        let mut fields: Vec<String> = p.surface.normal.iter().map(|v| format_value(*v)).collect();
        fields.push(format_value(p.surface.albedo));
        fields.extend(p.pixel.o.iter().map(|v| format_value(*v)));
        match &p.pixel.true_outliers {
            Some(set) => {
                fields.push(set.len().to_string());
                fields.extend(set.iter().map(usize::to_string));
            }
            None => fields.push("-".into()),
        }
        out.push_str(&fields.join(" "));
        out.push('\n');
    }
    out
}

pub fn parse_scene(text: &str) -> Result<(Scene, LightingRig)> {
    let err = |line: usize, msg: &str| Error::parse(format!("scene line {}", line + 1), msg);
    let mut lights = Vec::new();
    let mut q = None;
    let mut points = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(meta) = line.strip_prefix('#') {
            let parts: Vec<&str> = meta.split_whitespace().collect();
            match parts.as_slice() {
                ["lights", v] => q = Some(v.parse::<usize>().map_err(|e| err(ln, &e.to_string()))?),
                ["light", rest @ ..] => {
                    let v: Vec<f64> = rest
                        .iter()
                        .map(|s| s.parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|e| err(ln, &e.to_string()))?;
                    if v.len() != 3 {
                        return Err(err(ln, "light needs three components"));
                    }
                    lights.extend(v);
                }
                _ => {}
            }
            continue;
        }
        let q = q.ok_or_else(|| err(ln, "point before the light count"))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 5 + q {
            return Err(err(ln, "too few fields"));
        }
        let nums: Vec<f64> = fields[..4 + q]
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| err(ln, &e.to_string()))?;
        let true_outliers = match fields[4 + q] {
            "-" => None,
            count => {
                let count: usize = count.parse().map_err(|_| err(ln, "bad outlier count"))?;
                let idx: IndexSet = fields[5 + q..]
                    .iter()
                    .map(|s| s.parse::<usize>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| err(ln, &e.to_string()))?;
                if idx.len() != count || idx.iter().any(|&i| i >= q) {
                    return Err(err(ln, "outlier indices do not match the count"));
                }
                Some(idx)
            }
        };
        points.push(ScenePoint {
            surface: SurfacePoint {
                normal: Vector::from_column_slice(&nums[..3]),
                albedo: nums[3],
            },
            pixel: PixelObservation {
                o: Vector::from_column_slice(&nums[4..]),
                true_outliers,
            },
        });
    }
    let q = q.ok_or_else(|| Error::parse("scene", "missing light count"))?;
    if lights.len() != 3 * q {
        return Err(Error::parse("scene", format!("expected {q} lights")));
    }
    let rig = LightingRig::new(Matrix::from_row_slice(q, 3, &lights))?;
    Ok((Scene { points }, rig))
}

pub fn write_scene(path: &Path, scene: &Scene, rig: &LightingRig) -> Result<()> {
    std::fs::write(path, write_scene_string(scene, rig))?;
    Ok(())
}

pub fn read_scene(path: &Path) -> Result<(Scene, LightingRig)> {
    parse_scene(&std::fs::read_to_string(path)?)
}

/// Per-point error table for external plotting.
pub fn error_map_string(engine: &str, estimates: &[NormalEstimate]) -> String {
    let mut out = format!("# engine: {engine}\n# columns: point\tangular_error_deg\tnx\tny\tnz\n");
    for (i, e) in estimates.iter().enumerate() {
        let _ = writeln!(
            out,
            "{i}\t{}\t{}\t{}\t{}",
            format_value(e.angular_error),
            format_value(e.normal[0]),
            format_value(e.normal[1]),
            format_value(e.normal[2])
        );
    }
    out
}
