use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::AmplitudeLaw;
use crate::error::{Error, Result};
use crate::netlab::{Activation, LossKind, NetworkConfig, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    RecoverySweep,
    Ablation,
    Cor3Study,
    AihtStudy,
    StereoStudy,
    Train,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::RecoverySweep => "recovery_sweep",
            ExperimentKind::Ablation => "ablation",
            ExperimentKind::Cor3Study => "cor3_study",
            ExperimentKind::AihtStudy => "aiht_study",
            ExperimentKind::StereoStudy => "stereo_study",
            ExperimentKind::Train => "train",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DictionaryFamily {
    Gaussian,
    DecayingSpectrum,
    RankPerturbed,
    Clustered,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DictionarySection {
    pub family: DictionaryFamily,
    pub n: usize,
    pub m: usize,
    pub seed: u64,
    pub epsilon: f64,
    pub rank: usize,
    pub clusters: usize,
    pub cluster_size: usize,
    pub path: Option<PathBuf>,
}

impl Default for DictionarySection {
    fn default() -> Self {
        Self {
            family: DictionaryFamily::DecayingSpectrum,
            n: 20,
            m: 100,
            seed: 1,
            epsilon: 0.01,
            rank: 1,
            clusters: 8,
            cluster_size: 6,
            path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineSection {
    pub names: Vec<String>,
    /// IHT step; absent means `1/‖Φ‖²`.
    pub iht_step: Option<f64>,
    pub ista_lambda: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub checkpoint: Option<PathBuf>,
}

impl Default for EngineSection {
    fn default() -> Self {
        Self {
            names: vec!["iht".into(), "ista".into(), "omp".into()],
            iht_step: None,
            ista_lambda: 1e-3,
            max_iterations: 1000,
            tolerance: 1e-9,
            checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub d: Vec<usize>,
    pub law: AmplitudeLaw,
    pub noise: Option<f64>,
    /// Top-window size for loose accuracy; absent means `n`.
    pub window: Option<usize>,
    /// ε values for the structured-dictionary studies; absent means the
    /// dictionary's own ε.
    pub epsilons: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            d: (1..=10).collect(),
            law: AmplitudeLaw::UNIFORM,
            noise: None,
            window: None,
            epsilons: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub train_samples: usize,
    pub d_min: usize,
    pub d_max: usize,
    pub depth: usize,
    /// Absent means `m`.
    pub width: Option<usize>,
    pub residual: bool,
    pub batch_norm: bool,
    pub activation: Activation,
    pub loss: LossKind,
    pub batch_size: usize,
    pub initial_lr: f64,
    pub lr_drop_factor: f64,
    pub drop_period_epochs: usize,
    pub total_epochs: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Where `train` writes its checkpoint; absent means `<out>/network.json`.
    pub checkpoint_out: Option<PathBuf>,
    /// Ablation variants: `baseline`, `no_residual`, `helu`, `quadratic`.
    pub variants: Vec<String>,
    pub helu_sigma: f64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let p = TrainConfig::reference();
        Self {
            train_samples: 50_000,
            d_min: 1,
            d_max: 10,
            depth: 20,
            width: None,
            residual: true,
            batch_norm: true,
            activation: Activation::Relu,
            loss: LossKind::Multilabel,
            batch_size: p.batch_size,
            initial_lr: p.initial_lr,
            lr_drop_factor: p.lr_drop_factor,
            drop_period_epochs: p.drop_period_epochs,
            total_epochs: p.total_epochs,
            momentum: p.momentum,
            weight_decay: p.weight_decay,
            checkpoint_out: None,
            variants: KNOWN_VARIANTS.iter().map(|v| v.to_string()).collect(),
            helu_sigma: 0.1,
        }
    }
}

impl TrainingSection {
    pub fn network(&self, n: usize, m: usize) -> NetworkConfig {
        NetworkConfig {
            input_dim: n,
            output_dim: m,
            depth: self.depth,
            hidden_width: self.width.unwrap_or(m),
            residual: self.residual,
            activation: self.activation,
            loss: self.loss,
            batch_norm: self.batch_norm,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            initial_lr: self.initial_lr,
            lr_drop_factor: self.lr_drop_factor,
            drop_period_epochs: self.drop_period_epochs,
            total_epochs: self.total_epochs,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StereoSection {
    pub lights: usize,
    pub outliers: usize,
    pub points: usize,
    pub outlier_low: f64,
    pub outlier_high: f64,
    /// Amplitude law for the network's synthetic training corpus.
    pub train_law: AmplitudeLaw,
    pub train_d_min: usize,
    pub train_d_max: usize,
}

impl Default for StereoSection {
    fn default() -> Self {
        Self {
            lights: 10,
            outliers: 3,
            points: 2000,
            outlier_low: 0.2,
            outlier_high: 1.0,
            train_law: AmplitudeLaw::GaussianBimodal { mean: 0.6, std: 0.3 },
            train_d_min: 1,
            train_d_max: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub dictionary: DictionarySection,
    #[serde(default)]
    pub engines: EngineSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub stereo: StereoSection,
}

fn default_trials() -> usize {
    100
}

impl ExperimentSpec {
    pub fn new(kind: ExperimentKind) -> Self {
        Self {
            kind,
            seed: 0,
            trials: default_trials(),
            out: None,
            threads: None,
            dictionary: DictionarySection::default(),
            engines: EngineSection::default(),
            sweep: SweepSection::default(),
            training: TrainingSection::default(),
            stereo: StereoSection::default(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidSpec(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        let needs_engines = matches!(self.kind, ExperimentKind::RecoverySweep | ExperimentKind::StereoStudy);
        if needs_engines && self.engines.names.is_empty() {
            return bad("at least one engine is required".into());
        }
        if self.kind == ExperimentKind::Ablation && self.training.variants.is_empty() {
            return bad("ablation needs at least one variant".into());
        }
        for name in &self.engines.names {
            if !KNOWN_ENGINES.contains(&name.as_str()) {
                return bad(format!("unknown engine `{name}` (known: {})", KNOWN_ENGINES.join(", ")));
            }
        }
        for v in &self.training.variants {
            if !KNOWN_VARIANTS.contains(&v.as_str()) {
                return bad(format!("unknown variant `{v}` (known: {})", KNOWN_VARIANTS.join(", ")));
            }
        }
        let d = &self.dictionary;
        if d.family == DictionaryFamily::File && d.path.is_none() {
            return bad("dictionary family `file` needs a path".into());
        }
        if d.family != DictionaryFamily::File && d.family != DictionaryFamily::Clustered && (d.n == 0 || d.m == 0) {
            return bad("dictionary dimensions must be positive".into());
        }
        if self.sweep.d.is_empty() && matches!(self.kind, ExperimentKind::RecoverySweep | ExperimentKind::Ablation) {
            return bad("the d sweep is empty".into());
        }
        if self.sweep.d.contains(&0) {
            return bad("d values must be positive".into());
        }
        self.sweep.law.validate().map_err(|e| Error::InvalidSpec(e.to_string()))?;
        let t = &self.training;
        if t.d_min == 0 || t.d_min > t.d_max {
            return bad(format!("training d range {}..={} is empty", t.d_min, t.d_max));
        }
        t.train_config(self.seed)
            .validate()
            .map_err(|e| Error::InvalidSpec(e.to_string()))?;
        Ok(())
    }

    /// Applies `key=value` overrides such as `seed=3` or
    /// `dictionary.n=30`, using TOML value syntax.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        let mut value = toml::Value::try_from(self).map_err(|e| Error::InvalidSpec(e.to_string()))?;
        for o in overrides {
            let (path, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::InvalidSpec(format!("override `{o}` is not key=value")))?;
            let parsed: toml::Value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
                Ok(mut t) => t.remove("v").expect("key present"),
                Err(_) => toml::Value::String(raw.to_string()),
            };
            let mut cursor = &mut value;
            let keys: Vec<&str> = path.trim().split('.').collect();
            for (i, key) in keys.iter().enumerate() {
                let table = cursor
                    .as_table_mut()
                    .ok_or_else(|| Error::InvalidSpec(format!("`{path}` does not name a table entry")))?;
                if i + 1 == keys.len() {
                    table.insert(key.to_string(), parsed.clone());
                    break;
                }
                cursor = table.entry(key.to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
            }
        }
        let spec: Self = value.try_into().map_err(|e: toml::de::Error| Error::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }
}

pub const KNOWN_ENGINES: &[&str] = &[
    "iht", "iht_unit", "ista", "omp", "network", "aiht", "weighted_iht", "oracle", "naive", "rnd4",
];

pub const KNOWN_VARIANTS: &[&str] = &["baseline", "no_residual", "helu", "quadratic"];
