//! Synthetic sparse corpora and the support-recovery metrics.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::ops::RangeInclusive;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matio::format_value;
use crate::model::{
    brute_force_l0, labels_from_signal, Dictionary, LabelVector, Matrix, Observation, SparseSignal,
    Vector,
};
use crate::seeding::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AmplitudeLaw {
    /// Random sign times `U[low, high]`.
    UniformGapped { low: f64, high: f64 },
    /// Equal mixture of `N(±mean, std²)`.
    GaussianBimodal { mean: f64, std: f64 },
}

impl AmplitudeLaw {
    /// `U[−0.5, 0.5]` with `[−0.1, 0.1]` excluded.
    pub const UNIFORM: Self = AmplitudeLaw::UniformGapped { low: 0.1, high: 0.5 };
    /// `N(±0.3, 0.1²)`.
    pub const GAUSSIAN: Self = AmplitudeLaw::GaussianBimodal { mean: 0.3, std: 0.1 };

    pub fn validate(&self) -> Result<()> {
        match *self {
            AmplitudeLaw::UniformGapped { low, high } if low > 0.0 && high >= low => Ok(()),
            AmplitudeLaw::GaussianBimodal { mean, std } if std > 0.0 && mean.is_finite() => Ok(()),
            _ => Err(Error::InvalidConfig(format!("invalid amplitude law {self}"))),
        }
    }

    pub fn sample(&self, rng: &mut Rng) -> f64 {
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        match *self {
            AmplitudeLaw::UniformGapped { low, high } => sign * rng.random_range(low..=high),
            AmplitudeLaw::GaussianBimodal { mean, std } => {
                sign * mean + std * rng.sample::<f64, _>(rand_distr::StandardNormal)
            }
        }
    }

    pub fn short_name(&self) -> &'static str {
        match self {
            AmplitudeLaw::UniformGapped { .. } => "uniform_gapped",
            AmplitudeLaw::GaussianBimodal { .. } => "gaussian_bimodal",
        }
    }
}

impl fmt::Display for AmplitudeLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            AmplitudeLaw::UniformGapped { low, high } => write!(f, "uniform_gapped {low} {high}"),
            AmplitudeLaw::GaussianBimodal { mean, std } => write!(f, "gaussian_bimodal {mean} {std}"),
        }
    }
}

impl FromStr for AmplitudeLaw {
    type Err = Error;

    /// Accepts `uniform_gapped LOW HIGH` or `gaussian_bimodal MEAN STD`;
    /// the bare names select the default parameters.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split_whitespace().collect();
        let nums: Vec<f64> = parts
            .iter()
            .skip(1)
            .map(|t| t.parse::<f64>().map_err(|e| Error::parse("amplitude law", e)))
            .collect::<Result<_>>()?;
        let law = match (parts.first().copied(), nums.as_slice()) {
            (Some("uniform_gapped"), []) => Self::UNIFORM,
            (Some("gaussian_bimodal"), []) => Self::GAUSSIAN,
            (Some("uniform_gapped"), &[low, high]) => AmplitudeLaw::UniformGapped { low, high },
            (Some("gaussian_bimodal"), &[mean, std]) => AmplitudeLaw::GaussianBimodal { mean, std },
            _ => return Err(Error::parse("amplitude law", format!("unrecognized `{s}`"))),
        };
        law.validate()?;
        Ok(law)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: SparseSignal,
    pub y: Observation,
    pub labels: LabelVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub samples: Vec<Sample>,
    pub dictionary_hash: String,
    pub law: AmplitudeLaw,
    pub d_range: RangeInclusive<usize>,
    pub seed: u64,
    pub noise_std: Option<f64>,
}

fn noise_stream(seed: u64, index: usize) -> Rng {
    seeding::stream(seeding::derive(seed, "corpus-noise"), index as u64)
}

fn draw_signal(m: usize, d_range: &RangeInclusive<usize>, law: &AmplitudeLaw, rng: &mut Rng) -> SparseSignal {
    let d = rng.random_range(d_range.clone());
    let support = sample(rng, m, d).into_vec();
    SparseSignal::from_entries(m, support.into_iter().map(|i| (i, law.sample(rng))))
}

fn observe(phi: &Dictionary, x: &SparseSignal, noise: Option<(f64, Rng)>) -> Observation {
    let mut y = phi.apply(x.values());
    if let Some((std, mut rng)) = noise {
        let normal = Normal::new(0.0, std).expect("positive noise std");
        y.apply(|v| *v += normal.sample(&mut rng));
    }
    Observation::new(y)
}

/// Each sample draws `d` uniformly from `d_range`, a uniform support, and
/// amplitudes from `law`; sample `i` uses RNG substream `i`, so the corpus
/// does not depend on thread count.
pub fn make_corpus(
    phi: &Dictionary,
    count: usize,
    d_range: RangeInclusive<usize>,
    law: AmplitudeLaw,
    seed: u64,
    noise_std: Option<f64>,
) -> Result<Corpus> {
    law.validate()?;
    let (n, m) = (phi.rows(), phi.cols());
    if d_range.is_empty() || *d_range.start() == 0 || *d_range.end() >= n || *d_range.end() > m {
        return Err(Error::InvalidConfig(format!(
            "support sizes {d_range:?} must lie in 1..n with n = {n}"
        )));
    }
    if let Some(std) = noise_std {
        if !(std > 0.0) {
            return Err(Error::InvalidConfig("noise std must be positive".into()));
        }
    }
    let samples = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = seeding::stream(seed, i as u64);
            let x = draw_signal(m, &d_range, &law, &mut rng);
            let y = observe(phi, &x, noise_std.map(|s| (s, noise_stream(seed, i))));
            let labels = labels_from_signal(&x);
            Sample { x, y, labels }
        })
        .collect();
    Ok(Corpus {
        samples,
        dictionary_hash: phi.content_hash(),
        law,
        d_range,
        seed,
        noise_std,
    })
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Observations as the columns of an `n × N` matrix.
    pub fn observations(&self) -> Matrix {
        columns(self.samples.iter().map(|s| s.y.values()))
    }

    /// Labels `s*` as the columns of an `m × N` matrix.
    pub fn label_matrix(&self) -> Matrix {
        let labels: Vec<Vector> = self.samples.iter().map(|s| s.labels.to_vector()).collect();
        columns(labels.iter())
    }

    /// Signals `x*` as the columns of an `m × N` matrix.
    pub fn signal_matrix(&self) -> Matrix {
        columns(self.samples.iter().map(|s| s.x.values()))
    }

    pub fn signals(&self) -> Vec<SparseSignal> {
        self.samples.iter().map(|s| s.x.clone()).collect()
    }

    /// Samples whose support size is `d`.
    pub fn with_support_size(&self, d: usize) -> Vec<&Sample> {
        self.samples.iter().filter(|s| s.x.cardinality() == d).collect()
    }

    /// Largest `|y − Φx*|` over the corpus.
    pub fn max_synthesis_error(&self, phi: &Dictionary) -> f64 {
        self.samples
            .iter()
            .map(|s| (s.y.values() - phi.apply(s.x.values())).abs().max())
            .fold(0.0, f64::max)
    }
}

fn columns<'a>(cols: impl Iterator<Item = &'a Vector>) -> Matrix {
    let cols: Vec<&Vector> = cols.collect();
    let rows = cols.first().map_or(0, |c| c.len());
    let mut out = Matrix::zeros(rows, cols.len());
    for (j, c) in cols.into_iter().enumerate() {
        out.set_column(j, c);
    }
    out
}

/// Runs the exhaustive `ℓ₀` oracle on up to `count` samples with support
/// size at most `d_max` and reports how many it reproduced.
pub fn spot_check_uniqueness(corpus: &Corpus, phi: &Dictionary, count: usize, d_max: usize) -> Result<(usize, usize)> {
    let mut checked = 0;
    let mut agreed = 0;
    for s in corpus.samples.iter().filter(|s| s.x.cardinality() <= d_max).take(count) {
        let found = brute_force_l0(&s.y, phi, d_max)?;
        checked += 1;
        if found.support() == s.x.support() {
            agreed += 1;
        }
    }
    Ok((agreed, checked))
}

const CORPUS_MAGIC: &str = "# sparselab corpus v1";

/// Serializes the generating parameters and `(d, support, amplitudes)`
/// per sample. Observations are rebuilt on load.
pub fn write_corpus_string(corpus: &Corpus) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{CORPUS_MAGIC}");
    let _ = writeln!(out, "dictionary {}", corpus.dictionary_hash);
    let _ = writeln!(out, "law {}", corpus.law);
    let _ = writeln!(out, "d_range {} {}", corpus.d_range.start(), corpus.d_range.end());
    let _ = writeln!(out, "seed {}", corpus.seed);
    let _ = writeln!(out, "count {}", corpus.len());
    match corpus.noise_std {
        Some(s) => {
            let _ = writeln!(out, "noise {}", format_value(s));
        }
        None => out.push_str("noise none\n"),
    }
    for s in &corpus.samples {
        let _ = write!(out, "{}", s.x.cardinality());
        for &i in s.x.support() {
            let _ = write!(out, " {i}");
        }
        for &i in s.x.support() {
            let _ = write!(out, " {}", format_value(s.x.values()[i]));
        }
        out.push('\n');
    }
    out
}

fn header_value<'a>(lines: &mut impl Iterator<Item = &'a str>, key: &str) -> Result<&'a str> {
    let line = lines
        .next()
        .ok_or_else(|| Error::parse("corpus header", format!("missing `{key}`")))?;
    line.strip_prefix(key)
        .and_then(|rest| rest.strip_prefix(' '))
        .ok_or_else(|| Error::parse("corpus header", format!("expected `{key}`, found `{line}`")))
}

fn parse_num<T: FromStr>(token: &str, ctx: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    token.parse::<T>().map_err(|e| Error::parse(ctx, e))
}

/// Rebuilds a corpus against `phi`. With `verify`, the dictionary hash
/// must match and every record must equal a fresh regeneration from the
/// header's seed.
pub fn parse_corpus(text: &str, phi: &Dictionary, verify: bool) -> Result<Corpus> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    if lines.next() != Some(CORPUS_MAGIC) {
        return Err(Error::parse("corpus", "missing format line"));
    }
    let dictionary_hash = header_value(&mut lines, "dictionary")?.to_string();
    let law: AmplitudeLaw = header_value(&mut lines, "law")?.parse()?;
    let range: Vec<usize> = header_value(&mut lines, "d_range")?
        .split_whitespace()
        .map(|t| parse_num(t, "d_range"))
        .collect::<Result<_>>()?;
    let [d_lo, d_hi] = range[..] else {
        return Err(Error::parse("d_range", "expected two bounds"));
    };
    let seed: u64 = parse_num(header_value(&mut lines, "seed")?, "seed")?;
    let count: usize = parse_num(header_value(&mut lines, "count")?, "count")?;
    let noise_std = match header_value(&mut lines, "noise")? {
        "none" => None,
        v => Some(parse_num::<f64>(v, "noise")?),
    };
    if verify && dictionary_hash != phi.content_hash() {
        return Err(Error::parse(
            "corpus",
            format!("dictionary hash {dictionary_hash} does not match {}", phi.content_hash()),
        ));
    }
    let m = phi.cols();
    let mut samples = Vec::with_capacity(count);
    for (idx, line) in lines.enumerate() {
        let ctx = format!("corpus record {idx}");
        let tokens: Vec<&str> = line.split_whitespace().collect();
        let d: usize = parse_num(tokens[0], &ctx)?;
        if tokens.len() != 1 + 2 * d {
            return Err(Error::parse(ctx, "record length does not match d"));
        }
        let mut entries = Vec::with_capacity(d);
        for k in 0..d {
            let i: usize = parse_num(tokens[1 + k], &ctx)?;
            if i >= m {
                return Err(Error::parse(ctx, format!("index {i} out of range")));
            }
            entries.push((i, parse_num::<f64>(tokens[1 + d + k], &ctx)?));
        }
        let x = SparseSignal::from_entries(m, entries);
        let y = observe(phi, &x, noise_std.map(|s| (s, noise_stream(seed, idx))));
        let labels = labels_from_signal(&x);
        samples.push(Sample { x, y, labels });
    }
    if samples.len() != count {
        return Err(Error::parse(
            "corpus",
            format!("header promises {count} records, found {}", samples.len()),
        ));
    }
    let corpus = Corpus {
        samples,
        dictionary_hash,
        law,
        d_range: d_lo..=d_hi,
        seed,
        noise_std,
    };
    if verify {
        let fresh = make_corpus(phi, count, corpus.d_range.clone(), law, seed, noise_std)?;
        if let Some(i) = (0..count).find(|&i| fresh.samples[i] != corpus.samples[i]) {
            return Err(Error::parse(
                "corpus",
                format!("record {i} differs from regeneration"),
            ));
        }
    }
    Ok(corpus)
}

pub fn write_corpus(path: &Path, corpus: &Corpus) -> Result<()> {
    std::fs::write(path, write_corpus_string(corpus))?;
    Ok(())
}

pub fn read_corpus(path: &Path, phi: &Dictionary, verify: bool) -> Result<Corpus> {
    parse_corpus(&std::fs::read_to_string(path)?, phi, verify)
}

/// Indices of the `d` largest scores, lowest index first among ties,
/// returned in increasing order.
pub fn top_d_support(scores: &[f64], d: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(d);
    idx.sort_unstable();
    idx
}

/// [`top_d_support`] on `|x|`, for solver estimates.
pub fn top_d_by_magnitude(x: &Vector, d: usize) -> Vec<usize> {
    let mags: Vec<f64> = x.iter().map(|v| v.abs()).collect();
    top_d_support(&mags, d)
}

/// Whether the top-`d` scores sit exactly on the support of `truth`.
pub fn strict_hit(scores: &[f64], truth: &SparseSignal) -> bool {
    top_d_support(scores, truth.cardinality()) == truth.support()
}

/// Fraction of the support of `truth` among the top-`window` scores.
pub fn loose_hit(scores: &[f64], truth: &SparseSignal, window: usize) -> f64 {
    let d = truth.cardinality();
    if d == 0 {
        return 1.0;
    }
    let top = top_d_support(scores, window);
    let inside = truth.support().iter().filter(|i| top.binary_search(i).is_ok()).count();
    inside as f64 / d as f64
}

fn check_aligned(scores: &[Vector], truths: &[SparseSignal]) {
    assert_eq!(scores.len(), truths.len(), "predictions and truths must align");
}

pub fn strict_accuracy(scores: &[Vector], truths: &[SparseSignal]) -> f64 {
    check_aligned(scores, truths);
    if truths.is_empty() {
        return 0.0;
    }
    let hits = scores
        .iter()
        .zip(truths)
        .filter(|(p, x)| strict_hit(p.as_slice(), x))
        .count();
    hits as f64 / truths.len() as f64
}

pub fn loose_accuracy(scores: &[Vector], truths: &[SparseSignal], window: usize) -> f64 {
    check_aligned(scores, truths);
    if truths.is_empty() {
        return 0.0;
    }
    let total: f64 = scores
        .iter()
        .zip(truths)
        .map(|(p, x)| loose_hit(p.as_slice(), x, window))
        .sum();
    total / truths.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub count: usize,
    pub s_acc: f64,
    pub l_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub s_acc: f64,
    pub l_acc: f64,
    pub count: usize,
    pub per_d: BTreeMap<usize, Accuracy>,
}

/// Tallies strict and loose hits overall and per support size.
#[derive(Debug, Clone, Default)]
pub struct MetricAccumulator {
    cells: BTreeMap<usize, (usize, usize, f64)>,
}

impl MetricAccumulator {
    pub fn add(&mut self, scores: &[f64], truth: &SparseSignal, window: usize) {
        let cell = self.cells.entry(truth.cardinality()).or_default();
        cell.0 += 1;
        cell.1 += usize::from(strict_hit(scores, truth));
        cell.2 += loose_hit(scores, truth, window);
    }

    pub fn merge(mut self, other: Self) -> Self {
        for (d, (c, s, l)) in other.cells {
            let cell = self.cells.entry(d).or_default();
            cell.0 += c;
            cell.1 += s;
            cell.2 += l;
        }
        self
    }

    pub fn report(&self) -> MetricReport {
        let (mut count, mut strict, mut loose) = (0, 0, 0.0);
        let mut per_d = BTreeMap::new();
        for (&d, &(c, s, l)) in &self.cells {
            count += c;
            strict += s;
            loose += l;
            per_d.insert(
                d,
                Accuracy {
                    count: c,
                    s_acc: s as f64 / c as f64,
                    l_acc: l / c as f64,
                },
            );
        }
        let denom = count.max(1) as f64;
        MetricReport {
            s_acc: strict as f64 / denom,
            l_acc: loose / denom,
            count,
            per_d,
        }
    }
}

pub fn evaluate(scores: &[Vector], truths: &[SparseSignal], window: usize) -> MetricReport {
    check_aligned(scores, truths);
    let mut acc = MetricAccumulator::default();
    for (p, x) in scores.iter().zip(truths) {
        acc.add(p.as_slice(), x, window);
    }
    acc.report()
}

/// Sizes of a train/test split of synthetic data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusPlan {
    pub train: usize,
    pub test: usize,
    pub n: usize,
    pub m: usize,
    pub d_max: usize,
}

impl CorpusPlan {
    pub fn full_scale() -> Self {
        Self {
            train: 600_000,
            test: 100_000,
            n: 20,
            m: 100,
            d_max: 10,
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.test
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_max == 0 || self.d_max >= self.n || self.n > self.m {
            return Err(Error::InvalidConfig(format!("inconsistent corpus plan {self:?}")));
        }
        Ok(())
    }
}
