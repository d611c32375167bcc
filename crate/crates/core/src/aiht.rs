//! Adaptive IHT: layers with their own weights, sparsity levels and gates,
//! plus the two-phase schedule for clustered dictionaries.

use std::fmt;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::Rng as _;
use serde::Serialize;

use crate::dictgen::ClusteredDictionary;
use crate::error::{Error, Result};
use crate::seeding;
use crate::model::{
    half_squared_residual, least_squares_on_support, matrix_hash, spectral_norm, Dictionary, IndexSet, Matrix,
    Observation, RecoveryResult, SparseSignal, Vector,
};
use crate::solvers::{gated_hard_threshold, LayerWeights};

/// Gate sets derived from the activation that leaves the cluster phase.
pub type GateFn = Arc<dyn Fn(&Vector) -> (IndexSet, IndexSet) + Send + Sync>;

#[derive(Clone)]
pub enum Gates {
    Fixed { on: IndexSet, off: IndexSet },
    /// Evaluated on the activation entering the phase boundary layer.
    FromPhaseOutput(GateFn),
}

impl Gates {
    pub fn none() -> Self {
        Gates::Fixed {
            on: IndexSet::new(),
            off: IndexSet::new(),
        }
    }
}

impl fmt::Debug for Gates {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Gates::Fixed { on, off } => f.debug_struct("Fixed").field("on", on).field("off", off).finish(),
            Gates::FromPhaseOutput(_) => f.write_str("FromPhaseOutput"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AihtLayer {
    pub psi: Arc<Matrix>,
    pub gamma: Arc<Matrix>,
    pub k: usize,
    pub gates: Gates,
    /// Dictionary expressing this layer's output, used for the objective
    /// trace only.
    pub synthesis: Arc<Matrix>,
}

impl AihtLayer {
    pub fn input_dim(&self) -> usize {
        self.psi.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.psi.nrows()
    }
}

/// Maps final-layer coordinates back to dictionary columns.
#[derive(Debug, Clone)]
pub struct Decoder {
    /// `index_map[i]` is the column of coordinate `i`, `None` when the
    /// coordinate is dropped.
    pub index_map: Vec<Option<usize>>,
    pub output_len: usize,
    /// When set, coefficients are refit by least squares on the decoded
    /// support against this dictionary.
    pub refit: Option<Dictionary>,
}

impl Decoder {
    pub fn identity(m: usize) -> Self {
        Self {
            index_map: (0..m).map(Some).collect(),
            output_len: m,
            refit: None,
        }
    }
}

/// Early exit from the cluster phase once `‖y − Uz‖₂` drops below
/// `threshold`.
#[derive(Debug, Clone)]
pub struct PhaseMonitor {
    pub centers: Arc<Matrix>,
    pub threshold: f64,
}

#[derive(Debug, Clone)]
pub struct AihtSchedule {
    layers: Vec<AihtLayer>,
    phase_boundary: usize,
    decoder: Decoder,
    monitor: Option<PhaseMonitor>,
    tolerance: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LayerDescription {
    pub psi: String,
    pub gamma: String,
    pub shape: (usize, usize),
    pub k: usize,
    pub gates: String,
}

impl AihtSchedule {
    /// Checks that layer shapes chain, that fixed gates are disjoint, and
    /// that the decoder covers the final coordinates injectively.
    pub fn new(layers: Vec<AihtLayer>, phase_boundary: usize, decoder: Decoder) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidPhase("schedule has no layers".into()));
        }
        if phase_boundary > layers.len() {
            return Err(Error::InvalidPhase(format!(
                "phase boundary {phase_boundary} beyond {} layers",
                layers.len()
            )));
        }
        let n = layers[0].gamma.ncols();
        for (t, layer) in layers.iter().enumerate() {
            if layer.gamma.ncols() != n || layer.gamma.nrows() != layer.output_dim() {
                return Err(Error::ShapeMismatch(format!("layer {t}: Γ does not match Ψ or y")));
            }
            if layer.synthesis.nrows() != n || layer.synthesis.ncols() != layer.output_dim() {
                return Err(Error::ShapeMismatch(format!("layer {t}: synthesis dictionary shape")));
            }
            if t > 0 && layers[t - 1].output_dim() != layer.input_dim() {
                return Err(Error::ShapeMismatch(format!(
                    "layer {t} expects {} inputs, previous layer emits {}",
                    layer.input_dim(),
                    layers[t - 1].output_dim()
                )));
            }
            if let Gates::Fixed { on, off } = &layer.gates {
                if let Some(&i) = on.intersection(off).next() {
                    return Err(Error::OverlappingGates(i));
                }
            }
        }
        let last = layers.last().map(AihtLayer::output_dim).unwrap_or(0);
        if decoder.index_map.len() != last {
            return Err(Error::ShapeMismatch(format!(
                "decoder covers {} coordinates, final layer emits {last}",
                decoder.index_map.len()
            )));
        }
        let mut seen = vec![false; decoder.output_len];
        for target in decoder.index_map.iter().flatten() {
            if *target >= decoder.output_len || std::mem::replace(&mut seen[*target], true) {
                return Err(Error::ShapeMismatch("decoder is not injective".into()));
            }
        }
        Ok(Self {
            layers,
            phase_boundary,
            decoder,
            monitor: None,
            tolerance: None,
        })
    }

    /// The same IHT layer repeated `count` times with empty gates.
    pub fn constant(phi: &Dictionary, weights: &LayerWeights, k: usize, count: usize) -> Result<Self> {
        let psi = Arc::new(weights.psi.clone());
        let gamma = Arc::new(weights.gamma.clone());
        let synthesis = Arc::new(phi.matrix().clone());
        let layer = AihtLayer {
            psi,
            gamma,
            k,
            gates: Gates::none(),
            synthesis,
        };
        Self::new(vec![layer; count], 0, Decoder::identity(phi.cols()))
    }

    /// Stops after the first layer past the phase boundary whose output
    /// moves by less than `tolerance`.
    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = Some(tolerance);
        self
    }

    pub fn with_monitor(mut self, monitor: PhaseMonitor) -> Self {
        self.monitor = Some(monitor);
        self
    }

    pub fn layers(&self) -> &[AihtLayer] {
        &self.layers
    }

    pub fn phase_boundary(&self) -> usize {
        self.phase_boundary
    }

    pub fn decoder(&self) -> &Decoder {
        &self.decoder
    }

    pub fn describe(&self) -> Vec<LayerDescription> {
        self.layers
            .iter()
            .map(|l| LayerDescription {
                psi: matrix_hash(&l.psi),
                gamma: matrix_hash(&l.gamma),
                shape: l.psi.shape(),
                k: l.k,
                gates: match &l.gates {
                    Gates::Fixed { on, off } => format!("on={on:?} off={off:?}"),
                    Gates::FromPhaseOutput(_) => "from_phase_output".into(),
                },
            })
            .collect()
    }
}

/// A run together with the activation that left the cluster phase.
#[derive(Debug, Clone)]
pub struct AihtRun {
    pub result: RecoveryResult,
    pub phase_output: Option<Vector>,
    /// Iterations spent in the cluster phase.
    pub phase_iterations: usize,
}

pub fn run_aiht(y: &Observation, schedule: &AihtSchedule) -> Result<RecoveryResult> {
    Ok(run_aiht_traced(y, schedule)?.result)
}

pub fn run_aiht_traced(y: &Observation, schedule: &AihtSchedule) -> Result<AihtRun> {
    let yv = y.values();
    let first = &schedule.layers[0];
    if first.gamma.ncols() != yv.len() {
        return Err(Error::ShapeMismatch(format!(
            "observation has {} entries, schedule expects {}",
            yv.len(),
            first.gamma.ncols()
        )));
    }
    let mut x = Vector::zeros(first.input_dim());
    let mut trace = vec![0.5 * yv.norm_squared()];
    let mut phase_output = None;
    let mut phase_iterations = 0;
    let mut converged = false;
    let mut iterations = 0;
    let mut t = 0;
    while t < schedule.layers.len() {
        if t == schedule.phase_boundary {
            phase_output = Some(x.clone());
        }
        let layer = &schedule.layers[t];
        let chi = &*layer.psi * &x + &*layer.gamma * yv;
        let next = match &layer.gates {
            Gates::Fixed { on, off } => gated_hard_threshold(&chi, layer.k, on, off)?,
            Gates::FromPhaseOutput(rule) => {
                let snapshot = phase_output.as_ref().ok_or_else(|| {
                    Error::InvalidPhase(format!("layer {t} needs the cluster-phase output"))
                })?;
                let (on, off) = rule(snapshot);
                gated_hard_threshold(&chi, layer.k, &on, &off)?
            }
        };
        iterations += 1;
        let same_shape = next.len() == x.len();
        let change = if same_shape { (&next - &x).norm() } else { f64::INFINITY };
        x = next;
        trace.push(half_squared_residual(yv, &layer.synthesis, &x));
        t += 1;

        if t <= schedule.phase_boundary {
            phase_iterations = t;
            if let Some(monitor) = &schedule.monitor {
                if t < schedule.phase_boundary
                    && cluster_residual_monitor(yv, &monitor.centers, &x) < monitor.threshold
                {
                    t = schedule.phase_boundary;
                }
            }
        } else if let Some(tol) = schedule.tolerance {
            if change < tol {
                converged = true;
                break;
            }
        }
    }
    if t == schedule.phase_boundary && phase_output.is_none() {
        phase_output = Some(x.clone());
    }
    if schedule.tolerance.is_none() {
        converged = true;
    }

    let decoder = &schedule.decoder;
    let mut decoded = Vector::zeros(decoder.output_len);
    for (i, target) in decoder.index_map.iter().enumerate() {
        if let Some(j) = target {
            decoded[*j] = x[i];
        }
    }
    let estimate = match &decoder.refit {
        Some(phi) => {
            let support: Vec<usize> = (0..decoded.len()).filter(|&i| decoded[i] != 0.0).collect();
            least_squares_on_support(y, phi, &support)?
        }
        None => SparseSignal::from_values(decoded),
    };
    Ok(AihtRun {
        result: RecoveryResult {
            estimate,
            iterations_used: iterations,
            converged,
            objective_trace: trace,
            spectral_norm: None,
        },
        phase_output,
        phase_iterations,
    })
}

/// `‖y − Uz‖₂`, the observable proxy for cluster-phase convergence.
pub fn cluster_residual_monitor(y: &Vector, centers: &Matrix, z: &Vector) -> f64 {
    (y - centers * z).norm()
}

/// Default cluster-phase length.
pub const DEFAULT_TAU: usize = 30;

/// Monitor threshold `10·ε·√n`.
pub fn monitor_threshold(epsilon: f64, n: usize) -> f64 {
    10.0 * epsilon * (n as f64).sqrt()
}

/// Step sizes and early exit of the two-phase schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterScheduleOptions {
    /// Cluster-phase step; `None` uses `1/‖U‖₂²`.
    pub cluster_step: Option<f64>,
    /// Detail-phase step; `None` uses `1/‖[U, A]‖₂²`.
    pub detail_step: Option<f64>,
    pub monitor: bool,
    /// Also force the centers of undetected clusters to zero in the
    /// detail phase.
    pub prune_centers: bool,
    /// Detail-phase layers run at sparsity 0 before the `k_x` layers, so
    /// only the immune centers move.
    pub center_refine: usize,
    /// Detail-phase layers run at sparsity `2·k_x` before the `k_x` layers.
    pub wide_layers: usize,
}

impl Default for ClusterScheduleOptions {
    fn default() -> Self {
        Self {
            cluster_step: Some(0.85),
            detail_step: Some(0.6),
            monitor: false,
            prune_centers: true,
            center_refine: 50,
            wide_layers: 50,
        }
    }
}

/// Two-phase schedule: `tau` IHT layers on the centers `U` at sparsity
/// `k_c`, a zero-padding layer into the `[U, A]` coordinates, then IHT
/// layers on `[U, A]` with the detected centers immune and undetected
/// clusters pruned. The detail phase runs `center_refine` layers at
/// sparsity 0, `wide_layers` at `2·k_x`, then `t_detail` at `k_x`. The
/// decoder drops the center coordinates and refits on the original
/// dictionary.
pub fn build_cluster_schedule(
    cd: &ClusteredDictionary,
    k_x: usize,
    k_c: usize,
    tau: usize,
    t_detail: usize,
) -> Result<AihtSchedule> {
    build_cluster_schedule_with(cd, k_x, k_c, tau, t_detail, ClusterScheduleOptions::default())
}

pub fn build_cluster_schedule_with(
    cd: &ClusteredDictionary,
    k_x: usize,
    k_c: usize,
    tau: usize,
    t_detail: usize,
    options: ClusterScheduleOptions,
) -> Result<AihtSchedule> {
    if tau == 0 || t_detail == 0 {
        return Err(Error::InvalidPhase(format!(
            "phase lengths must be positive (tau = {tau}, t_detail = {t_detail})"
        )));
    }
    if k_c > k_x {
        return Err(Error::InvalidPhase(format!("k_c = {k_c} exceeds k_x = {k_x}")));
    }
    let (n, c, m) = (cd.spec.n, cd.spec.clusters(), cd.spec.atoms());
    let u = Arc::new(cd.centers.clone());
    let b = Arc::new(cd.stacked());
    let inverse_power = |a: &Matrix| {
        let s = spectral_norm(a);
        1.0 / (s * s)
    };
    let cluster_step = options.cluster_step.unwrap_or_else(|| inverse_power(&u));
    let detail_step = options.detail_step.unwrap_or_else(|| inverse_power(&b));

    let cluster_gamma = u.transpose() * cluster_step;
    let cluster = AihtLayer {
        psi: Arc::new(Matrix::identity(c, c) - &cluster_gamma * &*u),
        gamma: Arc::new(cluster_gamma),
        k: k_c,
        gates: Gates::none(),
        synthesis: u.clone(),
    };

    let mut pad_psi = Matrix::zeros(c + m, c);
    pad_psi.view_mut((0, 0), (c, c)).fill_with_identity();
    let padding = AihtLayer {
        psi: Arc::new(pad_psi),
        gamma: Arc::new(Matrix::zeros(c + m, n)),
        k: 0,
        gates: Gates::Fixed {
            on: (0..c).collect(),
            off: IndexSet::new(),
        },
        synthesis: b.clone(),
    };

    let ranges = cd.spec.ranges();
    let prune_centers = options.prune_centers;
    let rule: GateFn = Arc::new(move |z: &Vector| {
        let on: IndexSet = (0..z.len()).filter(|&j| z[j] != 0.0).collect();
        let mut off = IndexSet::new();
        for (j, r) in ranges.iter().enumerate().filter(|(j, _)| !on.contains(j)) {
            off.extend(r.clone().map(|i| c + i));
            if prune_centers {
                off.insert(j);
            }
        }
        (on, off)
    });
    let detail_gamma = b.transpose() * detail_step;
    let detail = AihtLayer {
        psi: Arc::new(Matrix::identity(c + m, c + m) - &detail_gamma * &*b),
        gamma: Arc::new(detail_gamma),
        k: k_x,
        gates: Gates::FromPhaseOutput(rule),
        synthesis: b,
    };

    let refine = AihtLayer {
        k: 0,
        ..detail.clone()
    };
    let mut layers = vec![cluster; tau];
    layers.push(padding);
    layers.extend(std::iter::repeat_n(refine, options.center_refine));
    let wide = AihtLayer {
        k: 2 * k_x,
        ..detail.clone()
    };
    layers.extend(std::iter::repeat_n(wide, options.wide_layers));
    layers.extend(std::iter::repeat_n(detail, t_detail));
    let decoder = Decoder {
        index_map: (0..c).map(|_| None).chain((0..m).map(Some)).collect(),
        output_len: m,
        refit: Some(cd.dictionary.clone()),
    };
    let schedule = AihtSchedule::new(layers, tau, decoder)?;
    Ok(if options.monitor {
        schedule.with_monitor(PhaseMonitor {
            centers: u,
            threshold: monitor_threshold(cd.spec.epsilon, n),
        })
    } else {
        schedule
    })
}

/// Smallest cluster coefficient magnitude accepted by [`clustered_signal`].
pub const STUDY_CLUSTER_FLOOR: f64 = 0.4;

/// `k` atoms with random signs and magnitudes in `[0.5, 1.5]`, redrawn
/// until every active cluster coefficient `z*_j` has magnitude at least
/// `floor`.
pub fn clustered_signal(cd: &ClusteredDictionary, k: usize, floor: f64, seed: u64) -> SparseSignal {
    let m = cd.spec.atoms();
    let owners = cd.spec.owners();
    let mut rng = seeding::rng(seed);
    loop {
        let support = sample(&mut rng, m, k).into_vec();
        let x = SparseSignal::from_entries(
            m,
            support.into_iter().map(|i| {
                let mag = rng.random_range(0.5..1.5);
                (i, if rng.random_bool(0.5) { mag } else { -mag })
            }),
        );
        let (z, _) = cd.cluster_decomposition(&x);
        if x.support().iter().all(|&i| z[owners[i]].abs() >= floor) {
            return x;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictgen::{cluster_support, clustered, gaussian_unit_columns, ClusteredDictSpec};
    use crate::model::brute_force_l0;
    use crate::solvers::{iht, SolverConfig};

    fn clustered_signal(cd: &ClusteredDictionary, k: usize, seed: u64) -> SparseSignal {
        super::clustered_signal(cd, k, STUDY_CLUSTER_FLOOR, seed)
    }

    #[test]
    fn constant_schedule_is_iht() {
        let phi = gaussian_unit_columns(10, 20, 2);
        let x = SparseSignal::from_entries(20, [(3, 1.0), (11, -0.7)]);
        let y = Observation::synthesize(&phi, &x);
        let config = SolverConfig::new(2);
        let expected = iht(&y, &phi, &config);
        let schedule = AihtSchedule::constant(&phi, &LayerWeights::iht(&phi, 1.0), 2, config.max_iterations)
            .unwrap()
            .with_tolerance(config.tolerance);
        let got = run_aiht(&y, &schedule).unwrap();
        assert_eq!(got.estimate.values().as_slice(), expected.estimate.values().as_slice());
        assert_eq!(got.objective_trace, expected.objective_trace);
        assert_eq!(got.iterations_used, expected.iterations_used);
        assert_eq!(got.converged, expected.converged);
    }

    #[test]
    fn off_gate_forces_zero() {
        let phi = gaussian_unit_columns(8, 12, 1);
        let x = SparseSignal::from_entries(12, [(4, 1.0)]);
        let y = Observation::synthesize(&phi, &x);
        let weights = LayerWeights::iht(&phi, 1.0);
        let mut schedule = AihtSchedule::constant(&phi, &weights, 1, 10).unwrap();
        for layer in &mut schedule.layers {
            layer.gates = Gates::Fixed {
                on: IndexSet::new(),
                off: [4].into_iter().collect(),
            };
        }
        let res = run_aiht(&y, &schedule).unwrap();
        assert_eq!(res.estimate.values()[4], 0.0);
    }

    #[test]
    fn rejects_inconsistent_shapes() {
        let phi = gaussian_unit_columns(8, 12, 1);
        let weights = LayerWeights::iht(&phi, 1.0);
        let schedule = AihtSchedule::constant(&phi, &weights, 1, 3).unwrap();
        let mut layers = schedule.layers.clone();
        layers[1].psi = Arc::new(Matrix::identity(5, 5));
        assert!(AihtSchedule::new(layers, 0, Decoder::identity(12)).is_err());
        assert!(AihtSchedule::new(schedule.layers.clone(), 4, Decoder::identity(12)).is_err());
        assert!(run_aiht(&Observation::new(Vector::zeros(7)), &schedule).is_err());
    }

    fn family(seed: u64) -> ClusteredDictionary {
        clustered(&ClusteredDictSpec::uniform(24, 8, 6, 0.01), seed).unwrap()
    }

    #[test]
    fn cluster_phase_satisfies_fixed_point_constraint() {
        let cd = family(11);
        let schedule = build_cluster_schedule(&cd, 3, 3, 5, 5).unwrap();
        let u = &cd.centers;
        for layer in &schedule.layers()[..schedule.phase_boundary()] {
            let violation = &*layer.psi - (Matrix::identity(8, 8) - &*layer.gamma * u);
            assert!(violation.norm() < 1e-12);
        }
        assert!(matches!(build_cluster_schedule(&cd, 3, 3, 0, 5), Err(Error::InvalidPhase(_))));
        assert!(matches!(build_cluster_schedule(&cd, 2, 3, 5, 5), Err(Error::InvalidPhase(_))));
    }

    #[test]
    fn cluster_phase_finds_cluster_support() {
        let cd = family(11);
        let x = clustered_signal(&cd, 3, 11);
        let sc = cluster_support(&x, &cd.spec).unwrap();
        let schedule = build_cluster_schedule(&cd, 3, sc.len(), DEFAULT_TAU, 40).unwrap();
        let run = run_aiht_traced(&Observation::synthesize(&cd.dictionary, &x), &schedule).unwrap();
        let z = run.phase_output.unwrap();
        let found: IndexSet = (0..z.len()).filter(|&j| z[j] != 0.0).collect();
        assert_eq!(found, sc);
    }

    #[test]
    fn two_cluster_toy_against_brute_force() {
        let spec = ClusteredDictSpec::uniform(6, 2, 3, 0.01);
        let mut aiht_hits = 0;
        let mut iht_hits = 0;
        let trials = 20;
        for seed in 0..trials {
            let cd = clustered(&spec, seed).unwrap();
            let x = clustered_signal(&cd, 2, 100 + seed);
            let y = Observation::synthesize(&cd.dictionary, &x);
            let truth = brute_force_l0(&y, &cd.dictionary, 2).unwrap();
            assert_eq!(truth.support(), x.support());
            let k_c = cluster_support(&x, &spec).unwrap().len();
            let schedule = build_cluster_schedule(&cd, 2, k_c, DEFAULT_TAU, 200).unwrap();
            if run_aiht(&y, &schedule).unwrap().estimate.support() == truth.support() {
                aiht_hits += 1;
            }
            if iht(&y, &cd.dictionary, &SolverConfig::new(2)).estimate.support() == truth.support() {
                iht_hits += 1;
            }
        }
        // Recorded fixture.
        assert_eq!((aiht_hits, iht_hits), (18, 2));
    }

    #[test]
    fn monitor_values() {
        let cd = family(3);
        let x = clustered_signal(&cd, 3, 5);
        let y = Observation::synthesize(&cd.dictionary, &x);
        let (z, nu) = cd.cluster_decomposition(&x);
        let at_truth = cluster_residual_monitor(y.values(), &cd.centers, &z);
        assert!((at_truth - nu.norm()).abs() < 1e-12);
        assert!(at_truth < 10.0 * cd.spec.epsilon);
        let zero = Vector::zeros(8);
        assert!((cluster_residual_monitor(y.values(), &cd.centers, &zero) - y.values().norm()).abs() < 1e-15);
    }

    #[test]
    fn wrong_cluster_support_keeps_residual_away_from_zero() {
        let mut floors = Vec::new();
        for eps in [0.1, 0.03, 0.01] {
            let cd = clustered(&ClusteredDictSpec::uniform(24, 8, 6, eps), 21).unwrap();
            let x = clustered_signal(&cd, 3, 4);
            let y = Observation::synthesize(&cd.dictionary, &x);
            let sc = cluster_support(&x, &cd.spec).unwrap();
            // Best fit on every wrong support of the same size.
            let mut floor = f64::INFINITY;
            for wrong in itertools::Itertools::combinations(0..8usize, sc.len()) {
                if wrong.iter().copied().collect::<IndexSet>() == sc {
                    continue;
                }
                let centers = Dictionary::new(cd.centers.clone());
                let fit = least_squares_on_support(&y, &centers, &wrong).unwrap();
                floor = floor.min(cluster_residual_monitor(y.values(), &cd.centers, fit.values()));
            }
            floors.push(floor);
        }
        assert!(floors.iter().all(|f| *f > 0.1), "{floors:?}");
    }

    #[test]
    fn phase_one_success_is_monotone_in_epsilon() {
        for seed in 0..10 {
            let mut last = false;
            for eps in [0.3, 0.1, 0.03, 0.01] {
                let cd = clustered(&ClusteredDictSpec::uniform(24, 8, 6, eps), seed).unwrap();
                let x = clustered_signal(&cd, 3, 1000 + seed);
                let sc = cluster_support(&x, &cd.spec).unwrap();
                let schedule = build_cluster_schedule(&cd, 3, sc.len(), DEFAULT_TAU, 1).unwrap();
                let run = run_aiht_traced(&Observation::synthesize(&cd.dictionary, &x), &schedule).unwrap();
                let z = run.phase_output.unwrap();
                let ok = (0..8).filter(|&j| z[j] != 0.0).collect::<IndexSet>() == sc;
                assert!(ok || !last, "seed {seed}: success lost at eps {eps}");
                last = ok;
            }
        }
    }

    #[test]
    fn detail_phase_respects_pruning_and_sparsity() {
        let cd = family(5);
        let x = clustered_signal(&cd, 3, 6);
        let sc = cluster_support(&x, &cd.spec).unwrap();
        let schedule = build_cluster_schedule(&cd, 3, sc.len(), DEFAULT_TAU, 50).unwrap();
        let run = run_aiht_traced(&Observation::synthesize(&cd.dictionary, &x), &schedule).unwrap();
        let owners = cd.spec.owners();
        let z = run.phase_output.unwrap();
        for &i in run.result.estimate.support() {
            assert!(z[owners[i]] != 0.0, "atom {i} from a pruned cluster");
        }
        assert!(run.result.estimate.cardinality() <= 3);
    }

    #[test]
    fn monitor_cuts_cluster_phase_short() {
        let cd = family(11);
        let x = clustered_signal(&cd, 3, 11);
        let sc = cluster_support(&x, &cd.spec).unwrap();
        let options = ClusterScheduleOptions {
            monitor: true,
            ..Default::default()
        };
        let schedule = build_cluster_schedule_with(&cd, 3, sc.len(), DEFAULT_TAU, 10, options).unwrap();
        let y = Observation::synthesize(&cd.dictionary, &x);
        let run = run_aiht_traced(&y, &schedule).unwrap();
        assert!(run.phase_iterations < DEFAULT_TAU);
        let z = run.phase_output.unwrap();
        assert!(cluster_residual_monitor(y.values(), &cd.centers, &z) < monitor_threshold(0.01, 24));
    }
}
