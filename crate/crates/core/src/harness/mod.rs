//! Seeded experiment runner: builds dictionaries and corpora from an
//! [`ExperimentSpec`], runs every engine, and writes tab-separated result
//! tables plus a JSON manifest.

mod spec;
mod table;

pub use spec::{
    DictionaryFamily, DictionarySection, EngineSection, ExperimentKind, ExperimentSpec, StereoSection, SweepSection,
    TrainingSection, KNOWN_ENGINES, KNOWN_VARIANTS,
};
pub use table::Table;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aiht::{build_cluster_schedule, clustered_signal, run_aiht_traced, DEFAULT_TAU, STUDY_CLUSTER_FLOOR};
use crate::datagen::{make_corpus, write_corpus_string, Corpus, MetricAccumulator};
use crate::dictgen::{self, cluster_support, ClusteredDictSpec, ClusteredDictionary, RankPerturbed};
use crate::error::{Error, Result};
use crate::matio::{format_value, read_matrix};
use crate::model::{hex, Dictionary, IndexSet, Observation, SparseSignal, Vector};
use crate::netlab::{self, load_checkpoint, network_hash, Activation, LossKind, Mode, Network};
use crate::rip::{cor3_transform, delta_k_exhaustive};
use crate::seeding;
use crate::solvers::{self, SolverConfig};
use crate::stereo::{self, LightingRig, OutlierLaw, SupportEngine};

/// Detail-phase length of the A-IHT schedule used by the study.
pub const AIHT_DETAIL_LAYERS: usize = 300;

pub enum BuiltDictionary {
    Plain(Dictionary),
    RankPerturbed(RankPerturbed),
    Clustered(ClusteredDictionary),
}

impl BuiltDictionary {
    pub fn dictionary(&self) -> &Dictionary {
        match self {
            BuiltDictionary::Plain(d) => d,
            BuiltDictionary::RankPerturbed(r) => &r.dictionary,
            BuiltDictionary::Clustered(c) => &c.dictionary,
        }
    }
}

pub fn build_dictionary(section: &DictionarySection, seed: u64, epsilon: f64) -> Result<BuiltDictionary> {
    let (n, m) = (section.n, section.m);
    Ok(match section.family {
        DictionaryFamily::Gaussian => BuiltDictionary::Plain(dictgen::gaussian_unit_columns(n, m, seed)),
        DictionaryFamily::DecayingSpectrum => BuiltDictionary::Plain(dictgen::decaying_spectrum(n, m, seed)),
        DictionaryFamily::RankPerturbed => {
            BuiltDictionary::RankPerturbed(dictgen::rank_perturbed(n, m, epsilon, section.rank, seed)?)
        }
        DictionaryFamily::Clustered => {
            let spec = ClusteredDictSpec::uniform(n, section.clusters, section.cluster_size, epsilon);
            BuiltDictionary::Clustered(dictgen::clustered(&spec, seed)?)
        }
        DictionaryFamily::File => {
            let path = section.path.as_ref().ok_or_else(|| Error::InvalidSpec("missing dictionary path".into()))?;
            BuiltDictionary::Plain(Dictionary::new(read_matrix(path)?))
        }
    })
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

pub fn corpus_hash(corpus: &Corpus) -> String {
    sha256_hex(write_corpus_string(corpus).as_bytes())
}

/// One evaluated sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub engine: String,
    pub seed: u64,
    pub d: usize,
    pub strict: bool,
    /// Fraction of the true support inside the top window.
    pub loose: f64,
    pub wall_seconds: f64,
    pub iterations: usize,
    pub residual: f64,
}

impl TrialRecord {
    fn row(&self) -> Vec<String> {
        vec![
            self.engine.clone(),
            self.seed.to_string(),
            self.d.to_string(),
            u8::from(self.strict).to_string(),
            format_value(self.loose),
            self.iterations.to_string(),
            format_value(self.residual),
        ]
    }
}

const TRIAL_COLUMNS: &[&str] = &["engine", "trial", "d", "strict", "loose", "iterations", "residual"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: String,
    pub spec: String,
    pub seeds: BTreeMap<String, u64>,
    /// Content hashes of every input artifact.
    pub inputs: BTreeMap<String, String>,
    /// Content hashes of the deterministic result tables.
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        serde_json::from_str(&std::fs::read_to_string(path)?).map_err(|e| Error::parse("manifest", e))
    }

    pub fn spec(&self) -> Result<ExperimentSpec> {
        ExperimentSpec::parse(&self.spec)
    }
}

/// Tables produced by a run. `timing` holds wall-clock measurements and is
/// the only non-deterministic output.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResults {
    pub kind: ExperimentKind,
    pub tables: BTreeMap<String, Table>,
    pub timing: Option<Table>,
    pub inputs: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    pub trials: Vec<TrialRecord>,
}

impl ExperimentResults {
    fn new(kind: ExperimentKind) -> Self {
        Self {
            kind,
            tables: BTreeMap::new(),
            timing: None,
            inputs: BTreeMap::new(),
            seeds: BTreeMap::new(),
            trials: Vec::new(),
        }
    }

    fn stamp(&self, table: Table) -> Table {
        let mut t = table.meta("experiment", self.kind.name());
        for (k, v) in &self.inputs {
            t = t.meta(&format!("input {k}"), v);
        }
        t
    }
}

#[derive(Debug, Clone)]
enum Engine {
    Iht { step: f64 },
    Ista,
    Omp,
    Network(Arc<Network>),
}

struct EngineRun {
    scores: Vector,
    iterations: usize,
    residual: f64,
    seconds: f64,
}

impl Engine {
    fn run(&self, spec: &EngineSection, phi: &Dictionary, y: &Observation, d: usize) -> Result<EngineRun> {
        let start = Instant::now();
        let (scores, iterations, estimate) = match self {
            Engine::Iht { step } => {
                let config = SolverConfig::new(d)
                    .with_step_size(*step)
                    .with_max_iterations(spec.max_iterations)
                    .with_tolerance(spec.tolerance);
                let r = solvers::iht(y, phi, &config);
                (r.estimate.values().abs(), r.iterations_used, Some(r.estimate))
            }
            Engine::Ista => {
                let config = SolverConfig::new(d)
                    .with_max_iterations(spec.max_iterations)
                    .with_tolerance(spec.tolerance);
                let r = solvers::ista(y, phi, spec.ista_lambda, &config);
                (r.estimate.values().abs(), r.iterations_used, Some(r.estimate))
            }
            Engine::Omp => {
                let r = solvers::omp(y, phi, d)?;
                (r.estimate.values().abs(), r.iterations_used, Some(r.estimate))
            }
            Engine::Network(net) => {
                let p = net.predict(y.values())?.into_vector();
                (p, 1, None)
            }
        };
        let seconds = start.elapsed().as_secs_f64();
        let residual = estimate
            .map(|x| (y.values() - phi.apply(x.values())).norm())
            .unwrap_or(f64::NAN);
        Ok(EngineRun {
            scores,
            iterations,
            residual,
            seconds,
        })
    }
}

fn load_network(spec: &ExperimentSpec, n: usize, m: usize) -> Result<Arc<Network>> {
    let path = spec
        .engines
        .checkpoint
        .as_ref()
        .ok_or_else(|| Error::InvalidSpec("the network engine needs engines.checkpoint".into()))?;
    let net = load_checkpoint(path)?;
    let c = net.config();
    if c.input_dim != n || c.output_dim != m {
        return Err(Error::ShapeMismatch(format!(
            "checkpoint maps {} -> {}, dictionary is {n}x{m}",
            c.input_dim, c.output_dim
        )));
    }
    Ok(Arc::new(net))
}

fn engines(spec: &ExperimentSpec, phi: &Dictionary, results: &mut ExperimentResults) -> Result<Vec<(String, Engine)>> {
    let mut out = Vec::new();
    for name in &spec.engines.names {
        let engine = match name.as_str() {
            "iht" => Engine::Iht {
                step: spec.engines.iht_step.unwrap_or(1.0 / phi.spectral_norm().powi(2)),
            },
            "iht_unit" => Engine::Iht { step: 1.0 },
            "ista" => Engine::Ista,
            "omp" => Engine::Omp,
            "network" => {
                let net = load_network(spec, phi.rows(), phi.cols())?;
                results.inputs.insert("checkpoint".into(), network_hash(&net));
                Engine::Network(net)
            }
            other => {
                return Err(Error::InvalidSpec(format!(
                    "engine `{other}` is not available in {}",
                    spec.kind.name()
                )))
            }
        };
        out.push((name.clone(), engine));
    }
    Ok(out)
}

fn window(spec: &ExperimentSpec, phi: &Dictionary) -> usize {
    spec.sweep.window.unwrap_or(phi.rows())
}

fn test_corpus(spec: &ExperimentSpec, phi: &Dictionary, d: usize, law: crate::datagen::AmplitudeLaw) -> Result<(Corpus, u64)> {
    let seed = seeding::derive(spec.seed, &format!("test-corpus-d{d}"));
    Ok((make_corpus(phi, spec.trials, d..=d, law, seed, spec.sweep.noise)?, seed))
}

fn accuracy_table() -> Table {
    Table::new(&["engine", "d", "count", "s_acc", "l_acc"])
}

/// Runs each named scorer over per-`d` test corpora and appends accuracy
/// rows, trial records, and timings.
fn evaluate_engines(
    spec: &ExperimentSpec,
    phi: &Dictionary,
    engines: &[(String, Engine)],
    results: &mut ExperimentResults,
    accuracy: &mut Table,
    timings: &mut BTreeMap<String, Vec<f64>>,
) -> Result<()> {
    let win = window(spec, phi);
    for &d in &spec.sweep.d {
        let (corpus, seed) = test_corpus(spec, phi, d, spec.sweep.law)?;
        results.seeds.insert(format!("test-corpus-d{d}"), seed);
        results.inputs.insert(format!("corpus-d{d}"), corpus_hash(&corpus));
        for (name, engine) in engines {
            let runs: Vec<EngineRun> = corpus
                .samples
                .par_iter()
                .map(|s| engine.run(&spec.engines, phi, &s.y, d))
                .collect::<Result<_>>()?;
            let mut acc = MetricAccumulator::default();
            for (i, (run, s)) in runs.iter().zip(&corpus.samples).enumerate() {
                acc.add(run.scores.as_slice(), &s.x, win);
                let strict = crate::datagen::strict_hit(run.scores.as_slice(), &s.x);
                let loose = crate::datagen::loose_hit(run.scores.as_slice(), &s.x, win);
                results.trials.push(TrialRecord {
                    engine: name.clone(),
                    seed: i as u64,
                    d,
                    strict,
                    loose,
                    wall_seconds: run.seconds,
                    iterations: run.iterations,
                    residual: run.residual,
                });
            }
            timings.entry(name.clone()).or_default().extend(runs.iter().map(|r| r.seconds));
            let r = acc.report();
            accuracy.push(vec![
                name.clone(),
                d.to_string(),
                r.count.to_string(),
                format_value(r.s_acc),
                format_value(r.l_acc),
            ]);
        }
    }
    Ok(())
}

fn timing_table(timings: &BTreeMap<String, Vec<f64>>) -> Table {
    let mut t = Table::new(&["engine", "samples", "mean_seconds", "median_seconds"]);
    for (name, v) in timings {
        let mut sorted = v.clone();
        sorted.sort_by(f64::total_cmp);
        let median = if sorted.is_empty() {
            f64::NAN
        } else if sorted.len() % 2 == 1 {
            sorted[sorted.len() / 2]
        } else {
            0.5 * (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2])
        };
        let mean = v.iter().sum::<f64>() / v.len().max(1) as f64;
        t.push(vec![name.clone(), v.len().to_string(), format_value(mean), format_value(median)]);
    }
    t
}

fn trials_table(records: &[TrialRecord]) -> Table {
    let mut t = Table::new(TRIAL_COLUMNS);
    for r in records {
        t.push(r.row());
    }
    t
}

fn recovery_sweep(spec: &ExperimentSpec) -> Result<ExperimentResults> {
    let mut results = ExperimentResults::new(spec.kind);
    let built = build_dictionary(&spec.dictionary, spec.dictionary.seed, spec.dictionary.epsilon)?;
    let phi = built.dictionary();
    results.inputs.insert("dictionary".into(), phi.content_hash());
    results.seeds.insert("dictionary".into(), spec.dictionary.seed);
    let engines = engines(spec, phi, &mut results)?;
    let mut accuracy = accuracy_table();
    let mut timings = BTreeMap::new();
    evaluate_engines(spec, phi, &engines, &mut results, &mut accuracy, &mut timings)?;
    let accuracy = results.stamp(accuracy);
    let trials = results.stamp(trials_table(&results.trials));
    results.tables.insert("accuracy.tsv".into(), accuracy);
    results.tables.insert("trials.tsv".into(), trials);
    results.timing = Some(results.stamp(timing_table(&timings)));
    Ok(results)
}

fn training_corpus(spec: &ExperimentSpec, phi: &Dictionary, results: &mut ExperimentResults) -> Result<Corpus> {
    let seed = seeding::derive(spec.seed, "train-corpus");
    let t = &spec.training;
    let corpus = make_corpus(phi, t.train_samples, t.d_min..=t.d_max, spec.sweep.law, seed, spec.sweep.noise)?;
    results.seeds.insert("train-corpus".into(), seed);
    results.inputs.insert("train-corpus".into(), corpus_hash(&corpus));
    Ok(corpus)
}

fn trace_table(trace: &netlab::TrainingTrace) -> Table {
    let mut t = Table::new(&["epoch", "learning_rate", "mean_loss", "train_accuracy"]);
    for e in &trace.epochs {
        t.push(vec![
            e.epoch.to_string(),
            format_value(e.learning_rate),
            format_value(e.mean_loss),
            format_value(e.train_accuracy),
        ]);
    }
    t
}

fn variant_section(base: &TrainingSection, variant: &str) -> TrainingSection {
    let mut t = base.clone();
    match variant {
        "no_residual" => t.residual = false,
        "helu" => t.activation = Activation::Helu { sigma: base.helu_sigma },
        "quadratic" => t.loss = LossKind::Quadratic,
        _ => {}
    }
    t
}

/// Scores from a network: probabilities for the multi-label head, output
/// magnitudes for the quadratic one.
pub fn network_scores(net: &Network, corpus: &Corpus) -> Result<Vec<Vector>> {
    let out = match net.config().loss {
        LossKind::Multilabel => net.forward(&corpus.observations(), Mode::Eval)?,
        LossKind::Quadratic => net.logits(&corpus.observations(), Mode::Eval)?.abs(),
    };
    Ok(out.column_iter().map(|c| c.into_owned()).collect())
}

fn train_network(
    spec: &ExperimentSpec,
    section: &TrainingSection,
    phi: &Dictionary,
    corpus: &Corpus,
    label: &str,
) -> Result<(Network, netlab::TrainingTrace)> {
    let config = section.network(phi.rows(), phi.cols());
    let mut net = Network::init(config, seeding::derive(spec.seed, &format!("init-{label}")))?;
    let tc = section.train_config(seeding::derive(spec.seed, &format!("shuffle-{label}")));
    let trace = netlab::train_on_corpus(&mut net, corpus, &tc)?;
    Ok((net, trace))
}

fn network_accuracy(
    spec: &ExperimentSpec,
    phi: &Dictionary,
    name: &str,
    net: &Network,
    results: &mut ExperimentResults,
    accuracy: &mut Table,
) -> Result<()> {
    let win = window(spec, phi);
    for &d in &spec.sweep.d {
        let (corpus, seed) = test_corpus(spec, phi, d, spec.sweep.law)?;
        results.seeds.insert(format!("test-corpus-d{d}"), seed);
        results.inputs.insert(format!("corpus-d{d}"), corpus_hash(&corpus));
        let scores = network_scores(net, &corpus)?;
        let mut acc = MetricAccumulator::default();
        for (s, sample) in scores.iter().zip(&corpus.samples) {
            acc.add(s.as_slice(), &sample.x, win);
        }
        let r = acc.report();
        accuracy.push(vec![
            name.to_string(),
            d.to_string(),
            r.count.to_string(),
            format_value(r.s_acc),
            format_value(r.l_acc),
        ]);
    }
    Ok(())
}

fn train_experiment(spec: &ExperimentSpec, out: Option<&Path>) -> Result<ExperimentResults> {
    let mut results = ExperimentResults::new(spec.kind);
    let built = build_dictionary(&spec.dictionary, spec.dictionary.seed, spec.dictionary.epsilon)?;
    let phi = built.dictionary();
    results.inputs.insert("dictionary".into(), phi.content_hash());
    let corpus = training_corpus(spec, phi, &mut results)?;
    let (net, trace) = train_network(spec, &spec.training, phi, &corpus, "train")?;
    let path = spec
        .training
        .checkpoint_out
        .clone()
        .or_else(|| out.map(|o| o.join("network.json")));
    if let Some(path) = path {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        netlab::save_checkpoint(&path, &net)?;
    }
    results.inputs.insert("checkpoint".into(), network_hash(&net));
    let mut accuracy = accuracy_table();
    network_accuracy(spec, phi, "network", &net, &mut results, &mut accuracy)?;
    let accuracy = results.stamp(accuracy);
    let trace = results.stamp(trace_table(&trace));
    results.tables.insert("accuracy.tsv".into(), accuracy);
    results.tables.insert("trace.tsv".into(), trace);
    Ok(results)
}

fn ablation(spec: &ExperimentSpec) -> Result<ExperimentResults> {
    let mut results = ExperimentResults::new(spec.kind);
    let built = build_dictionary(&spec.dictionary, spec.dictionary.seed, spec.dictionary.epsilon)?;
    let phi = built.dictionary();
    results.inputs.insert("dictionary".into(), phi.content_hash());
    let corpus = training_corpus(spec, phi, &mut results)?;
    let trained: Vec<(String, Network, netlab::TrainingTrace)> = spec
        .training
        .variants
        .par_iter()
        .map(|v| {
            let section = variant_section(&spec.training, v);
            train_network(spec, &section, phi, &corpus, v).map(|(n, t)| (v.clone(), n, t))
        })
        .collect::<Result<_>>()?;
    let mut accuracy = accuracy_table();
    for (name, net, _) in &trained {
        results.inputs.insert(format!("checkpoint-{name}"), network_hash(net));
        network_accuracy(spec, phi, name, net, &mut results, &mut accuracy)?;
    }
    let accuracy = results.stamp(accuracy);
    results.tables.insert("accuracy.tsv".into(), accuracy);
    for (name, _, trace) in &trained {
        let t = results.stamp(trace_table(trace).meta("variant", name));
        results.tables.insert(format!("trace_{name}.tsv"), t);
    }
    Ok(results)
}

fn epsilons(spec: &ExperimentSpec) -> Vec<f64> {
    if spec.sweep.epsilons.is_empty() {
        vec![spec.dictionary.epsilon]
    } else {
        spec.sweep.epsilons.clone()
    }
}

fn signal_for(spec: &ExperimentSpec, phi: &Dictionary, d: usize, trial: usize, label: &str) -> Result<SparseSignal> {
    let seed = seeding::derive(spec.seed, &format!("{label}-d{d}-t{trial}"));
    let corpus = make_corpus(phi, 1, d..=d, spec.sweep.law, seed, None)?;
    Ok(corpus.samples[0].x.clone())
}

fn cor3_study(spec: &ExperimentSpec) -> Result<ExperimentResults> {
    if spec.dictionary.family != DictionaryFamily::RankPerturbed {
        return Err(Error::InvalidSpec("cor3_study needs the rank_perturbed family".into()));
    }
    let mut results = ExperimentResults::new(spec.kind);
    let mut summary = Table::new(&[
        "epsilon",
        "d",
        "trials",
        "iht_rate",
        "weighted_rate",
        "delta2_improved_rate",
        "mean_delta2_before",
        "mean_delta2_after",
    ]);
    let mut records = Vec::new();
    for eps in epsilons(spec) {
        for &d in &spec.sweep.d {
            let cells: Vec<(bool, bool, f64, f64)> = (0..spec.trials)
                .into_par_iter()
                .map(|t| {
                    let seed = spec.dictionary.seed + t as u64;
                    let BuiltDictionary::RankPerturbed(rp) = build_dictionary(&spec.dictionary, seed, eps)? else {
                        unreachable!("family checked above")
                    };
                    let phi = &rp.dictionary;
                    let x = signal_for(spec, phi, d, t, "cor3")?;
                    let y = Observation::synthesize(phi, &x);
                    let config = SolverConfig::new(d)
                        .with_max_iterations(spec.engines.max_iterations)
                        .with_tolerance(spec.engines.tolerance);
                    let plain = solvers::iht(&y, phi, &config).estimate.support() == x.support();
                    let pair = cor3_transform(phi, &rp.perturbation, rp.epsilon, &rp.norm_scales)?;
                    let weighted =
                        solvers::weighted_iht(&y, phi, &pair.w, &pair.d, &config)?.estimate.support() == x.support();
                    let before = delta_k_exhaustive(phi, 2)?.delta;
                    let after = delta_k_exhaustive(&pair.transformed_normalized(phi), 2)?.delta;
                    Ok((plain, weighted, before, after))
                })
                .collect::<Result<_>>()?;
            let n = cells.len() as f64;
            let rate = |f: &dyn Fn(&(bool, bool, f64, f64)) -> bool| cells.iter().filter(|c| f(c)).count() as f64 / n;
            summary.push(vec![
                format_value(eps),
                d.to_string(),
                cells.len().to_string(),
                format_value(rate(&|c| c.0)),
                format_value(rate(&|c| c.1)),
                format_value(rate(&|c| c.3 < c.2)),
                format_value(cells.iter().map(|c| c.2).sum::<f64>() / n),
                format_value(cells.iter().map(|c| c.3).sum::<f64>() / n),
            ]);
            for (t, c) in cells.iter().enumerate() {
                records.push(vec![
                    format_value(eps),
                    d.to_string(),
                    t.to_string(),
                    u8::from(c.0).to_string(),
                    u8::from(c.1).to_string(),
                    format_value(c.2),
                    format_value(c.3),
                ]);
            }
        }
    }
    results.seeds.insert("dictionary-base".into(), spec.dictionary.seed);
    let summary = results.stamp(summary);
    let mut trials = Table::new(&["epsilon", "d", "trial", "iht", "weighted", "delta2_before", "delta2_after"]);
    trials.rows = records;
    let trials = results.stamp(trials);
    results.tables.insert("cor3.tsv".into(), summary);
    results.tables.insert("trials.tsv".into(), trials);
    Ok(results)
}

fn aiht_study(spec: &ExperimentSpec) -> Result<ExperimentResults> {
    if spec.dictionary.family != DictionaryFamily::Clustered {
        return Err(Error::InvalidSpec("aiht_study needs the clustered family".into()));
    }
    let mut results = ExperimentResults::new(spec.kind);
    let mut summary = Table::new(&["epsilon", "k_x", "trials", "aiht_rate", "phase1_rate", "iht_rate"]);
    let mut records = Vec::new();
    for eps in epsilons(spec) {
        for &k_x in &spec.sweep.d {
            let cells: Vec<(bool, bool, bool)> = (0..spec.trials)
                .into_par_iter()
                .map(|t| {
                    let seed = spec.dictionary.seed + t as u64;
                    let BuiltDictionary::Clustered(cd) = build_dictionary(&spec.dictionary, seed, eps)? else {
                        unreachable!("family checked above")
                    };
                    let x = clustered_signal(&cd, k_x, STUDY_CLUSTER_FLOOR, spec.seed + 10_000 + t as u64);
                    let y = Observation::synthesize(&cd.dictionary, &x);
                    let sc = cluster_support(&x, &cd.spec)?;
                    let schedule = build_cluster_schedule(&cd, k_x, sc.len(), DEFAULT_TAU, AIHT_DETAIL_LAYERS)?;
                    let run = run_aiht_traced(&y, &schedule)?;
                    let z = run.phase_output.unwrap_or_else(|| Vector::zeros(0));
                    let found: IndexSet = (0..z.len()).filter(|&j| z[j] != 0.0).collect();
                    let plain = solvers::iht(&y, &cd.dictionary, &SolverConfig::new(k_x));
                    Ok((
                        run.result.estimate.support() == x.support(),
                        found == sc,
                        plain.estimate.support() == x.support(),
                    ))
                })
                .collect::<Result<_>>()?;
            let n = cells.len() as f64;
            let count = |f: fn(&(bool, bool, bool)) -> bool| cells.iter().filter(|c| f(c)).count() as f64 / n;
            summary.push(vec![
                format_value(eps),
                k_x.to_string(),
                cells.len().to_string(),
                format_value(count(|c| c.0)),
                format_value(count(|c| c.1)),
                format_value(count(|c| c.2)),
            ]);
            for (t, c) in cells.iter().enumerate() {
                records.push(vec![
                    format_value(eps),
                    k_x.to_string(),
                    t.to_string(),
                    u8::from(c.0).to_string(),
                    u8::from(c.1).to_string(),
                    u8::from(c.2).to_string(),
                ]);
            }
        }
    }
    results.seeds.insert("dictionary-base".into(), spec.dictionary.seed);
    let summary = results.stamp(summary);
    let mut trials = Table::new(&["epsilon", "k_x", "trial", "aiht", "phase1", "iht"]);
    trials.rows = records;
    let trials = results.stamp(trials);
    results.tables.insert("aiht.tsv".into(), summary);
    results.tables.insert("trials.tsv".into(), trials);
    Ok(results)
}

/// Trains the outlier-support network for a rig on a synthetic corpus
/// drawn from the stereo section's training law.
fn train_stereo_network(spec: &ExperimentSpec, phi: &Dictionary, results: &mut ExperimentResults) -> Result<Network> {
    let s = &spec.stereo;
    let seed = seeding::derive(spec.seed, "stereo-train");
    let corpus = make_corpus(
        phi,
        spec.training.train_samples,
        s.train_d_min..=s.train_d_max,
        s.train_law,
        seed,
        None,
    )?;
    results.seeds.insert("stereo-train".into(), seed);
    results.inputs.insert("train-corpus".into(), corpus_hash(&corpus));
    let (net, _) = train_network(spec, &spec.training, phi, &corpus, "stereo")?;
    Ok(net)
}

fn stereo_study(spec: &ExperimentSpec) -> Result<ExperimentResults> {
    let s = &spec.stereo;
    let mut results = ExperimentResults::new(spec.kind);
    let rig_seed = spec.dictionary.seed;
    let rig = LightingRig::random(s.lights, rig_seed)?;
    let (phi, projector) = stereo::nullspace_dictionary(&rig)?;
    results.seeds.insert("rig".into(), rig_seed);
    results.inputs.insert("dictionary".into(), phi.content_hash());
    let law = OutlierLaw {
        count: s.outliers..=s.outliers,
        low: s.outlier_low,
        high: s.outlier_high,
    };
    let scene_seed = seeding::derive(spec.seed, "scene");
    let scene = stereo::synthesize_scene(s.points, &rig, &law, scene_seed)?;
    results.seeds.insert("scene".into(), scene_seed);
    results
        .inputs
        .insert("scene".into(), sha256_hex(stereo::write_scene_string(&scene, &rig).as_bytes()));

    let mut summary = Table::new(&["engine", "points", "mean_angular_error_deg", "median_angular_error_deg"]);
    let mut timings: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for name in &spec.engines.names {
        let start = Instant::now();
        let estimates = match name.as_str() {
            "naive" => stereo::naive_least_squares(&scene, &rig)?,
            "rnd4" => stereo::random4_baseline(&scene, &rig, seeding::derive(spec.seed, "rnd4"))?,
            other => {
                let engine = match other {
                    "oracle" => SupportEngine::Oracle,
                    "omp" => SupportEngine::Omp { k: s.outliers },
                    "iht" => SupportEngine::Iht(SolverConfig::new(s.outliers).with_max_iterations(spec.engines.max_iterations)),
                    "ista" => SupportEngine::Ista {
                        lambda: spec.engines.ista_lambda,
                        config: SolverConfig::new(s.outliers).with_max_iterations(spec.engines.max_iterations),
                    },
                    "network" => {
                        let net = match spec.engines.checkpoint {
                            Some(_) => load_network(spec, phi.rows(), phi.cols())?,
                            None => Arc::new(train_stereo_network(spec, &phi, &mut results)?),
                        };
                        results.inputs.insert("checkpoint".into(), network_hash(&net));
                        SupportEngine::Network(net)
                    }
                    _ => return Err(Error::InvalidSpec(format!("engine `{other}` is not available in stereo_study"))),
                };
                stereo::estimate_normals(&scene, &rig, &projector, &phi, &engine, stereo::INLIER_COUNT)?
            }
        };
        let elapsed = start.elapsed().as_secs_f64();
        timings.insert(name.clone(), vec![elapsed / s.points.max(1) as f64]);
        let mut errs: Vec<f64> = estimates.iter().map(|e| e.angular_error).collect();
        errs.sort_by(f64::total_cmp);
        let median = errs.get(errs.len() / 2).copied().unwrap_or(f64::NAN);
        summary.push(vec![
            name.clone(),
            estimates.len().to_string(),
            format_value(stereo::mean_angular_error(&estimates)),
            format_value(median),
        ]);
        let map = Table::parse(&stereo::error_map_string(name, &estimates))?;
        let map = results.stamp(map);
        results.tables.insert(format!("errors_{name}.tsv"), map);
    }
    let summary = results.stamp(summary);
    results.tables.insert("stereo.tsv".into(), summary);
    results.timing = Some(results.stamp(timing_table(&timings)));
    Ok(results)
}

/// Plot-ready tables, one per figure analogue, in long format.
pub fn emit_plot_data(results: &ExperimentResults) -> Vec<(String, Table)> {
    let mut out = Vec::new();
    let pick = |file: &str, cols: &[&str], name: &str, caption: &str| -> Option<(String, Table)> {
        let src = results.tables.get(file)?;
        let idx: Vec<usize> = cols.iter().map(|c| src.column(c)).collect::<Option<_>>()?;
        let mut t = Table::new(cols).meta("figure", caption);
        t.meta.extend(src.meta.iter().cloned());
        for r in &src.rows {
            t.push(idx.iter().map(|&i| r[i].clone()).collect());
        }
        Some((name.to_string(), t))
    };
    let candidates = match results.kind {
        ExperimentKind::RecoverySweep | ExperimentKind::Train => vec![pick(
            "accuracy.tsv",
            &["engine", "d", "s_acc", "l_acc"],
            "plot_accuracy_vs_d.tsv",
            "accuracy versus support size",
        )],
        ExperimentKind::Ablation => vec![pick(
            "accuracy.tsv",
            &["engine", "d", "s_acc", "l_acc"],
            "plot_ablation.tsv",
            "ablation accuracy by variant",
        )],
        ExperimentKind::Cor3Study => vec![pick(
            "cor3.tsv",
            &["epsilon", "d", "iht_rate", "weighted_rate"],
            "plot_epsilon_cor3.tsv",
            "recovery rate versus epsilon",
        )],
        ExperimentKind::AihtStudy => vec![pick(
            "aiht.tsv",
            &["epsilon", "k_x", "aiht_rate", "phase1_rate", "iht_rate"],
            "plot_epsilon_aiht.tsv",
            "recovery rate versus epsilon",
        )],
        ExperimentKind::StereoStudy => vec![pick(
            "stereo.tsv",
            &["engine", "mean_angular_error_deg"],
            "plot_stereo.tsv",
            "mean angular error by engine",
        )],
    };
    out.extend(candidates.into_iter().flatten());
    if let Some(timing) = &results.timing {
        out.push(("plot_timing.tsv".into(), timing.clone().meta("figure", "per-sample runtime")));
    }
    out
}

/// Runs the experiment. With `out`, writes every table, the plot files and
/// `manifest.json` there.
pub fn run_experiment(spec: &ExperimentSpec, out: Option<&Path>) -> Result<ExperimentResults> {
    spec.validate()?;
    let run = || match spec.kind {
        ExperimentKind::RecoverySweep => recovery_sweep(spec),
        ExperimentKind::Ablation => ablation(spec),
        ExperimentKind::Cor3Study => cor3_study(spec),
        ExperimentKind::AihtStudy => aiht_study(spec),
        ExperimentKind::StereoStudy => stereo_study(spec),
        ExperimentKind::Train => train_experiment(spec, out),
    };
    let results = match spec.threads {
        Some(n) if n > 0 => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?
            .install(run)?,
        _ => run()?,
    };
    if let Some(dir) = out {
        write_results(spec, &results, dir)?;
    }
    Ok(results)
}

fn write_results(spec: &ExperimentSpec, results: &ExperimentResults, dir: &Path) -> Result<Manifest> {
    std::fs::create_dir_all(dir)?;
    let mut outputs = BTreeMap::new();
    for (name, table) in &results.tables {
        let text = table.to_text();
        std::fs::write(dir.join(name), &text)?;
        outputs.insert(name.clone(), sha256_hex(text.as_bytes()));
    }
    for (name, table) in emit_plot_data(results) {
        if name != "plot_timing.tsv" {
            outputs.insert(name.clone(), sha256_hex(table.to_text().as_bytes()));
        }
        table.write(&dir.join(name))?;
    }
    if let Some(t) = &results.timing {
        t.write(&dir.join("timing.tsv"))?;
    }
    let mut echo = spec.clone();
    echo.out = None;
    let manifest = Manifest {
        kind: spec.kind.name().into(),
        spec: echo.to_toml()?,
        seeds: results.seeds.clone(),
        inputs: results.inputs.clone(),
        outputs,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::parse("manifest", e))?;
    std::fs::write(dir.join("manifest.json"), text)?;
    Ok(manifest)
}

/// Re-runs the experiment recorded in a manifest into `out` and checks
/// that every deterministic table hashes as recorded.
pub fn replay_manifest(manifest_path: &Path, out: &Path) -> Result<ExperimentResults> {
    let manifest = Manifest::load(manifest_path)?;
    let spec = manifest.spec()?;
    let results = run_experiment(&spec, Some(out))?;
    for (k, v) in &manifest.inputs {
        if results.inputs.get(k) != Some(v) {
            return Err(Error::InvalidSpec(format!("input `{k}` no longer matches the manifest")));
        }
    }
    let replayed = Manifest::load(&out.join("manifest.json"))?;
    if replayed.outputs != manifest.outputs {
        return Err(Error::InvalidSpec("replayed tables differ from the manifest".into()));
    }
    Ok(results)
}

/// Output directory: the explicit one, else the spec's, else
/// `results/<kind>`.
pub fn output_dir(spec: &ExperimentSpec, explicit: Option<&Path>) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| spec.out.clone())
        .unwrap_or_else(|| PathBuf::from("results").join(spec.kind.name()))
}
