//! Commands behind the `deepprior` binary.
//!
//! Each command maps its failures onto a fixed exit-code table: 0 ok,
//! 1 usage, 2 corpus, 3 model, 4 features, 5 labels, 6 io.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use log::info;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{self, CorpusError, LabelMap};
use crate::eval::{self, EvalError, StrategyConfig};
use crate::features::{self, Models};
use crate::fsutil::write_json_atomic;
use crate::lexicon::{LexiconPaths, Lexicons};
use crate::nlp::{self, SentenceModel};
use crate::prioritize::{self, NullPolicy, PrioritizedOrder};
use crate::similarity::{self, SimilarityError, SimilarityWeights};
use crate::synth::{self, SynthError, SynthSpec};
use crate::vision::{self, WidgetSample, WidgetType, WidgetTypeModel};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Corpus(String),
    #[error("{0}")]
    Model(String),
    #[error("{0}")]
    Features(String),
    #[error("{0}")]
    Labels(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Corpus(_) => 2,
            CliError::Model(_) => 3,
            CliError::Features(_) => 4,
            CliError::Labels(_) => 5,
            CliError::Io(_) => 6,
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::UnknownReportId(_) | CorpusError::MalformedLabels(_) => CliError::Labels(e.to_string()),
            _ => CliError::Corpus(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::EmptyLabels | EvalError::LabelMismatch(_) | EvalError::InvalidCounts { .. } => {
                CliError::Labels(e.to_string())
            }
            EvalError::UnknownStrategy(_) | EvalError::NoStrategies => CliError::Usage(e.to_string()),
            EvalError::Similarity(SimilarityError::WeightOutOfRange { .. }) => CliError::Usage(e.to_string()),
            _ => CliError::Features(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Settings shared by all commands; read from `--config`, then overridden
/// by flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub weights: SimilarityWeights,
    pub null_policy: NullPolicy,
    pub random_runs: usize,
    pub seed: u64,
    pub widget_model: Option<PathBuf>,
    pub text_model: Option<PathBuf>,
    pub lexicons: LexiconPaths,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            weights: SimilarityWeights::default(),
            null_policy: NullPolicy::Keep,
            random_runs: 100,
            seed: 42,
            widget_model: None,
            text_model: None,
            lexicons: LexiconPaths::default(),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.weights.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        if self.random_runs == 0 {
            return Err(CliError::Usage("random_runs must be at least 1".into()));
        }
        Ok(())
    }

    pub fn strategy_config(&self) -> StrategyConfig {
        StrategyConfig {
            weights: self.weights,
            null_policy: self.null_policy,
            random_runs: self.random_runs,
            seed: self.seed,
        }
    }

    pub fn lexicons(&self) -> Result<Lexicons, CliError> {
        Lexicons::load(&self.lexicons).map_err(|e| CliError::Model(e.to_string()))
    }

    /// Loads model files, or trains the bundled reference models.
    pub fn models(&self, lex: &Lexicons) -> Result<Models, CliError> {
        let widget = match &self.widget_model {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| CliError::Model(format!("{}: {e}", p.display())))?;
                WidgetTypeModel::from_json_str(&text).map_err(|e| CliError::Model(e.to_string()))?
            }
            None => synth::default_widget_model(),
        };
        let sentence = match &self.text_model {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| CliError::Model(format!("{}: {e}", p.display())))?;
                SentenceModel::from_json_str(&text).map_err(|e| CliError::Model(e.to_string()))?
            }
            None => nlp::train_sentence_classifier(&nlp::bundled_sentence_samples(), &lex.stopwords)
                .map_err(|e| CliError::Model(e.to_string()))?,
        };
        Ok(Models { widget, sentence })
    }
}

#[derive(Debug, Parser)]
#[command(name = "deepprior", version, about = "Prioritize crowdsourced test reports")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON run configuration; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    #[arg(long, global = true)]
    pub beta: Option<f64>,
    #[arg(long, global = true)]
    pub gamma: Option<f64>,
    /// keep | drop-after-first
    #[arg(long, global = true)]
    pub null_policy: Option<NullPolicy>,
    #[arg(long, global = true)]
    pub random_runs: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub widget_model: Option<PathBuf>,
    #[arg(long, global = true)]
    pub text_model: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build features.json (all reports plus NULL) from a corpus.
    Extract {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "features.json")]
        out: PathBuf,
    },
    /// Order reports; writes order.json and matrix.json.
    Prioritize {
        #[arg(long)]
        features: PathBuf,
        #[arg(long, default_value = "order.json")]
        out: PathBuf,
        /// Defaults to matrix.json next to the order file.
        #[arg(long)]
        matrix: Option<PathBuf>,
    },
    /// Print the APFD of an ordering.
    Evaluate {
        #[arg(long)]
        order: PathBuf,
        #[arg(long)]
        labels: PathBuf,
    },
    /// Run several strategies on a labeled corpus.
    Compare {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value = "deepprior,image,random,ideal")]
        strategies: String,
        #[arg(long, default_value = "results.json")]
        out: PathBuf,
    },
    /// Train the widget-type classifier from a directory with samples.json.
    TrainWidget {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the sentence classifier from `bug|step<TAB>sentence` lines.
    TrainText {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic corpus from a spec file.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

impl Cli {
    pub fn run_config(&self) -> Result<RunConfig, CliError> {
        let mut c = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.alpha {
            c.weights.alpha = v;
        }
        if let Some(v) = self.beta {
            c.weights.beta = v;
        }
        if let Some(v) = self.gamma {
            c.weights.gamma = v;
        }
        if let Some(v) = self.null_policy {
            c.null_policy = v;
        }
        if let Some(v) = self.random_runs {
            c.random_runs = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if self.widget_model.is_some() {
            c.widget_model = self.widget_model.clone();
        }
        if self.text_model.is_some() {
            c.text_model = self.text_model.clone();
        }
        c.validate()?;
        Ok(c)
    }
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run_from_args<I, T>(args: I, stdout: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(&cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli, stdout: &mut dyn Write) -> Result<(), CliError> {
    let config = cli.run_config()?;
    match &cli.command {
        Command::Extract { corpus, out } => cmd_extract(corpus, out, &config),
        Command::Prioritize { features, out, matrix } => {
            let matrix = matrix.clone().unwrap_or_else(|| out.with_file_name("matrix.json"));
            cmd_prioritize(features, out, &matrix, &config)
        }
        Command::Evaluate { order, labels } => {
            let value = cmd_evaluate(order, labels)?;
            writeln!(stdout, "{value:.3}").map_err(|e| CliError::Io(e.to_string()))
        }
        Command::Compare {
            corpus,
            labels,
            strategies,
            out,
        } => {
            let table = cmd_compare(corpus, labels, strategies, out, &config)?;
            write!(stdout, "{}", table.render()).map_err(|e| CliError::Io(e.to_string()))
        }
        Command::TrainWidget { data, out } => cmd_train_widget(data, out),
        Command::TrainText { data, out } => cmd_train_text(data, out, &config),
        Command::Synth { spec, out } => cmd_synth(spec, out),
    }
}

pub fn cmd_extract(corpus_dir: &Path, out: &Path, config: &RunConfig) -> Result<(), CliError> {
    let corpus = corpus::load_corpus(corpus_dir).map_err(|e| CliError::Corpus(e.to_string()))?;
    let lex = config.lexicons()?;
    let models = config.models(&lex)?;
    let features = features::build_corpus_features(&corpus, &models, &lex);
    write_json_atomic(out, &features::features_to_json(&features)).map_err(|e| io_err(out, e))?;
    info!("wrote {} features to {}", features.len(), out.display());
    Ok(())
}

pub fn cmd_prioritize(features_path: &Path, out_order: &Path, out_matrix: &Path, config: &RunConfig) -> Result<(), CliError> {
    let features = features::load_features(features_path).map_err(|e| CliError::Features(e.to_string()))?;
    let matrix = similarity::build_similarity_matrix(&features, config.weights).map_err(|e| match e {
        SimilarityError::WeightOutOfRange { .. } => CliError::Usage(e.to_string()),
        _ => CliError::Features(e.to_string()),
    })?;
    let order = prioritize::prioritize(&matrix, config.null_policy).map_err(|e| CliError::Features(e.to_string()))?;
    write_json_atomic(out_matrix, &matrix).map_err(|e| io_err(out_matrix, e))?;
    write_json_atomic(out_order, &order).map_err(|e| io_err(out_order, e))?;
    info!("ordered {} reports into {}", order.order.len(), out_order.display());
    Ok(())
}

pub fn cmd_evaluate(order_path: &Path, labels_path: &Path) -> Result<f64, CliError> {
    let text = fs::read_to_string(order_path).map_err(|e| io_err(order_path, e))?;
    let order: PrioritizedOrder =
        serde_json::from_str(&text).map_err(|e| CliError::Features(format!("{}: {e}", order_path.display())))?;
    let labels = LabelMap::from_file(labels_path).map_err(|e| CliError::Labels(e.to_string()))?;
    Ok(eval::apfd(&order.order, &labels)?)
}

pub fn cmd_compare(
    corpus_dir: &Path,
    labels_path: &Path,
    strategies: &str,
    out: &Path,
    config: &RunConfig,
) -> Result<eval::ComparisonTable, CliError> {
    let strategies = eval::parse_strategies(strategies)?;
    let corpus = corpus::load_corpus(corpus_dir).map_err(|e| CliError::Corpus(e.to_string()))?;
    let labels = corpus::load_labels(labels_path, &corpus).map_err(|e| CliError::Labels(e.to_string()))?;
    let lex = config.lexicons()?;
    let models = config.models(&lex)?;
    let features = features::build_corpus_features(&corpus, &models, &lex);
    let ids: Vec<String> = corpus.ids().map(str::to_string).collect();
    let table = eval::compare(&ids, &labels, &features, &strategies, &config.strategy_config())?;
    write_json_atomic(out, &table).map_err(|e| io_err(out, e))?;
    Ok(table)
}

#[derive(Debug, Deserialize)]
struct WidgetSamplesFile {
    #[serde(default)]
    classes: Option<Vec<WidgetType>>,
    samples: Vec<WidgetSampleEntry>,
}

#[derive(Debug, Deserialize)]
struct WidgetSampleEntry {
    image: PathBuf,
    #[serde(rename = "type")]
    widget_type: WidgetType,
    #[serde(default)]
    text_present: bool,
}

pub fn cmd_train_widget(data_dir: &Path, out: &Path) -> Result<(), CliError> {
    let index = data_dir.join("samples.json");
    let text = fs::read_to_string(&index).map_err(|e| io_err(&index, e))?;
    let file: WidgetSamplesFile =
        serde_json::from_str(&text).map_err(|e| CliError::Model(format!("{}: {e}", index.display())))?;
    let samples = file
        .samples
        .iter()
        .map(|s| {
            let path = data_dir.join(&s.image);
            let crop = image::open(&path).map_err(|e| io_err(&path, e))?.to_rgb8();
            Ok(WidgetSample {
                crop,
                text_present: s.text_present,
                widget_type: s.widget_type,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let classes = file.classes.unwrap_or_else(|| WidgetType::ALL.to_vec());
    let model = vision::train_widget_classifier(&samples, &classes).map_err(|e| CliError::Model(e.to_string()))?;
    write_json_atomic(out, &model).map_err(|e| io_err(out, e))
}

pub fn cmd_train_text(data_file: &Path, out: &Path, config: &RunConfig) -> Result<(), CliError> {
    let text = fs::read_to_string(data_file).map_err(|e| io_err(data_file, e))?;
    let samples = nlp::parse_sentence_tsv(&text).map_err(|e| CliError::Model(e.to_string()))?;
    let lex = config.lexicons()?;
    let model = nlp::train_sentence_classifier(&samples, &lex.stopwords).map_err(|e| CliError::Model(e.to_string()))?;
    write_json_atomic(out, &model).map_err(|e| io_err(out, e))
}

pub fn cmd_synth(spec_file: &Path, out: &Path) -> Result<(), CliError> {
    let spec = SynthSpec::from_file(spec_file).map_err(|e| match e {
        SynthError::Io(e) => io_err(spec_file, e),
        other => CliError::Usage(other.to_string()),
    })?;
    let (corpus, labels) = synth::generate(&spec, out).map_err(|e| match e {
        SynthError::Spec(m) => CliError::Usage(m),
        SynthError::Corpus(c) => CliError::Corpus(c.to_string()),
        other => io_err(out, other),
    })?;
    info!(
        "generated {} reports in {} categories under {}",
        corpus.len(),
        labels.category_count(),
        out.display()
    );
    Ok(())
}
