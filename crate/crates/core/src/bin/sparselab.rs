use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use sparselab::datagen::{make_corpus, read_corpus, top_d_support, write_corpus, AmplitudeLaw};
use sparselab::harness::{
    build_dictionary, output_dir, replay_manifest, run_experiment, DictionaryFamily, ExperimentKind, ExperimentResults,
    ExperimentSpec, Manifest, Table,
};
use sparselab::matio::{format_value, read_matrix, write_matrix_string};
use sparselab::model::Dictionary;
use sparselab::rip::delta_k_exhaustive;
use sparselab::solvers::{self, SolverConfig};
use sparselab::{Error, Result};

#[derive(Parser)]
#[command(name = "sparselab", version, about = "Sparse support recovery experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Experiment file (TOML).
    #[arg(long, global = true)]
    spec: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Comma-separated engine list.
    #[arg(long, global = true, value_delimiter = ',')]
    engine: Vec<String>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Spec override such as `dictionary.n=30`; repeatable.
    #[arg(long = "set", global = true)]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Law {
    Uniform,
    Gaussian,
}

impl From<Law> for AmplitudeLaw {
    fn from(l: Law) -> Self {
        match l {
            Law::Uniform => AmplitudeLaw::UNIFORM,
            Law::Gaussian => AmplitudeLaw::GAUSSIAN,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dictionary from the spec's dictionary section.
    GenDict {
        #[command(flatten)]
        common: Common,
    },
    /// Generate a seeded corpus against a dictionary file.
    GenCorpus {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dict: PathBuf,
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long, default_value_t = 1)]
        d_min: usize,
        #[arg(long, default_value_t = 10)]
        d_max: usize,
        #[arg(long, value_enum, default_value = "uniform")]
        law: Law,
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Exhaustive restricted isometry constants.
    Rip {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dict: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "1,2")]
        k: Vec<usize>,
    },
    /// Run solvers on every sample of a corpus file.
    Solve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dict: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Train a support classifier and save a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Run the experiment described by the spec.
    Eval {
        #[command(flatten)]
        common: Common,
    },
    /// Photometric stereo study.
    Stereo {
        #[command(flatten)]
        common: Common,
    },
    /// Summarize a result directory, or replay its manifest into `--out`.
    Report {
        #[command(flatten)]
        common: Common,
        /// Directory holding `manifest.json`.
        dir: PathBuf,
        #[arg(long)]
        replay: bool,
    },
}

fn load_spec(common: &Common, kind: Option<ExperimentKind>) -> Result<ExperimentSpec> {
    let mut spec = match &common.spec {
        Some(path) => ExperimentSpec::load(path)?,
        None => ExperimentSpec::new(kind.unwrap_or(ExperimentKind::RecoverySweep)),
    };
    if let Some(kind) = kind {
        spec.kind = kind;
    }
    spec = spec.with_overrides(&common.overrides)?;
    if let Some(seed) = common.seed {
        spec.seed = seed;
    }
    if !common.engine.is_empty() {
        spec.engines.names = common.engine.clone();
    }
    if common.threads.is_some() {
        spec.threads = common.threads;
    }
    if common.out.is_some() {
        spec.out = common.out.clone();
    }
    spec.validate()?;
    Ok(spec)
}

fn emit(out: Option<&Path>, name: &str, text: &str) -> Result<()> {
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let path = dir.join(name);
            std::fs::write(&path, text)?;
            eprintln!("wrote {}", path.display());
        }
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
        }
    }
    Ok(())
}

fn load_dictionary(path: &Path) -> Result<Dictionary> {
    Ok(Dictionary::new(read_matrix(path)?))
}

fn print_summary(results: &ExperimentResults, dir: &Path) {
    for (name, table) in &results.tables {
        if name.starts_with("errors_") || name.starts_with("trials") {
            continue;
        }
        println!("== {name}");
        println!("{}", table.columns.join("\t"));
        for r in &table.rows {
            println!("{}", r.join("\t"));
        }
    }
    eprintln!("results in {}", dir.display());
}

fn experiment(common: &Common, kind: Option<ExperimentKind>) -> Result<()> {
    let spec = load_spec(common, kind)?;
    let dir = output_dir(&spec, common.out.as_deref());
    let results = run_experiment(&spec, Some(&dir))?;
    print_summary(&results, &dir);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenDict { common } => {
            let spec = load_spec(&common, None)?;
            let section = &spec.dictionary;
            if section.family == DictionaryFamily::File {
                return Err(Error::InvalidSpec("gen-dict needs a generated family".into()));
            }
            let built = build_dictionary(section, section.seed, section.epsilon)?;
            let phi = built.dictionary();
            let text = format!(
                "# family: {:?}\n# seed: {}\n# sha256: {}\n{}",
                section.family,
                section.seed,
                phi.content_hash(),
                write_matrix_string(phi.matrix())
            );
            emit(common.out.as_deref(), "dictionary.txt", &text)
        }
        Command::GenCorpus {
            common,
            dict,
            count,
            d_min,
            d_max,
            law,
            noise,
        } => {
            let phi = load_dictionary(&dict)?;
            let corpus = make_corpus(&phi, count, d_min..=d_max, law.into(), common.seed.unwrap_or(0), noise)?;
            match common.out.as_deref() {
                Some(dir) => {
                    std::fs::create_dir_all(dir)?;
                    let path = dir.join("corpus.txt");
                    write_corpus(&path, &corpus)?;
                    eprintln!("wrote {}", path.display());
                    Ok(())
                }
                None => emit(None, "", &sparselab::datagen::write_corpus_string(&corpus)),
            }
        }
        Command::Rip { common, dict, k } => {
            let phi = match dict {
                Some(path) => load_dictionary(&path)?,
                None => {
                    let spec = load_spec(&common, None)?;
                    let built = build_dictionary(&spec.dictionary, spec.dictionary.seed, spec.dictionary.epsilon)?;
                    built.dictionary().clone()
                }
            };
            let mut table = Table::new(&["k", "delta", "side", "witness"]).meta("dictionary", phi.content_hash());
            for k in k {
                let r = delta_k_exhaustive(&phi, k)?;
                let witness: Vec<String> = r.witness_support.iter().map(|i| i.to_string()).collect();
                table.push(vec![
                    k.to_string(),
                    format_value(r.delta),
                    format!("{:?}", r.side).to_lowercase(),
                    witness.join(","),
                ]);
            }
            emit(common.out.as_deref(), "rip.tsv", &table.to_text())
        }
        Command::Solve { common, dict, corpus } => {
            let phi = load_dictionary(&dict)?;
            let corpus = read_corpus(&corpus, &phi, false)?;
            let engines = if common.engine.is_empty() {
                vec!["iht".to_string(), "ista".into(), "omp".into()]
            } else {
                common.engine.clone()
            };
            let spec = load_spec(&Common { engine: engines.clone(), ..common.clone() }, None)?;
            let mu = spec.engines.iht_step.unwrap_or(1.0 / phi.spectral_norm().powi(2));
            let mut table = Table::new(&["sample", "engine", "d", "strict", "support"])
                .meta("dictionary", phi.content_hash());
            for (i, s) in corpus.samples.iter().enumerate() {
                let d = s.x.cardinality();
                let config = SolverConfig::new(d.max(1))
                    .with_max_iterations(spec.engines.max_iterations)
                    .with_tolerance(spec.engines.tolerance);
                for name in &engines {
                    let estimate = match name.as_str() {
                        "iht" => solvers::iht(&s.y, &phi, &config.clone().with_step_size(mu)).estimate,
                        "iht_unit" => solvers::iht(&s.y, &phi, &config).estimate,
                        "ista" => solvers::ista(&s.y, &phi, spec.engines.ista_lambda, &config).estimate,
                        "omp" => solvers::omp(&s.y, &phi, d.max(1))?.estimate,
                        other => return Err(Error::InvalidSpec(format!("solve does not support engine `{other}`"))),
                    };
                    let scores: Vec<f64> = estimate.values().iter().map(|v| v.abs()).collect();
                    let top = top_d_support(&scores, d);
                    let support: Vec<String> = top.iter().map(|j| j.to_string()).collect();
                    table.push(vec![
                        i.to_string(),
                        name.clone(),
                        d.to_string(),
                        u8::from(top == s.x.support()).to_string(),
                        support.join(","),
                    ]);
                }
            }
            emit(common.out.as_deref(), "solve.tsv", &table.to_text())
        }
        Command::Train { common } => experiment(&common, Some(ExperimentKind::Train)),
        Command::Eval { common } => experiment(&common, None),
        Command::Stereo { common } => experiment(&common, Some(ExperimentKind::StereoStudy)),
        Command::Report { common, dir, replay } => {
            let manifest_path = dir.join("manifest.json");
            if replay {
                let out = common
                    .out
                    .clone()
                    .ok_or_else(|| Error::InvalidSpec("--replay needs --out".into()))?;
                let results = replay_manifest(&manifest_path, &out)?;
                println!("replay matches {}", manifest_path.display());
                print_summary(&results, &out);
                return Ok(());
            }
            let manifest = Manifest::load(&manifest_path)?;
            println!("experiment: {}", manifest.kind);
            for (k, v) in &manifest.inputs {
                println!("input {k}: {v}");
            }
            for name in manifest.outputs.keys() {
                if name.starts_with("errors_") || name.starts_with("trials") || name.starts_with("plot_") {
                    continue;
                }
                let table = Table::read(&dir.join(name))?;
                println!("== {name}");
                println!("{}", table.columns.join("\t"));
                for r in &table.rows {
                    println!("{}", r.join("\t"));
                }
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
