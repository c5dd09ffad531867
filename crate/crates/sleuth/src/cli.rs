//! The `sleuth` command line: ingest/irr/split/features/train/evaluate/
//! compare/outcomes/export-finetune subcommands with deterministic seeds
//! and file-based configuration.
//!
//! Configuration precedence is CLI flags > config file (`--config`,
//! JSON) > built-in defaults. Every subcommand that writes artifacts puts
//! them in a fresh run subdirectory of `--out` together with the resolved
//! `config.json`, so outputs carry their provenance. Exit codes: 0
//! success, 1 usage, 2 data error, 3 external-service error.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind as ClapErrorKind;
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::classifiers::{
    cross_validate, load_model, save_model, train_on_rows, CandidateSpec, ModelKind,
    TrainConfig,
};
use crate::corpus::{
    irr_by_class, learner_level_split, load_corpus, Corpus, CorpusError, CorpusFormat, Label,
};
use crate::evaluation::{render_report, score, ClassificationReport, ReportFormat};
use crate::gateway::{
    export_finetune_dataset, Detector, DetectorConfig, JudgePrompt, ProviderKind,
};
use crate::outcomes::{effect_summary, fit_glmm, join_outcomes, render_effect_text, GlmmConfig};
use crate::stylometry::{
    featurize_corpus, load_marker_list, write_feature_csv, FeatureExtractor, FeatureSchema,
};

/// Everything that can go wrong, bucketed by exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    External(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::External(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::External(m) => m,
        }
    }
}

macro_rules! data_error_from {
    ($($ty:ty),*) => {$(
        impl From<$ty> for CliError {
            fn from(e: $ty) -> CliError {
                CliError::Data(e.to_string())
            }
        }
    )*};
}
data_error_from!(
    crate::corpus::CorpusError,
    crate::stylometry::StylometryError,
    crate::classifiers::TrainError,
    crate::outcomes::OutcomesError,
    crate::evaluation::EvalError,
    std::io::Error,
    serde_json::Error
);

impl From<crate::gateway::GatewayError> for CliError {
    fn from(e: crate::gateway::GatewayError) -> CliError {
        CliError::External(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelChoice {
    Logistic,
    Forest,
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DetectorChoice {
    /// Trained local model only (no gateway).
    Local,
    /// Live commercial detector + live judge.
    Live,
    /// Offline rule-based mocks standing in for both remote detectors.
    Mock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatChoice {
    Csv,
    Jsonl,
}

impl From<FormatChoice> for CorpusFormat {
    fn from(f: FormatChoice) -> CorpusFormat {
        match f {
            FormatChoice::Csv => CorpusFormat::Csv,
            FormatChoice::Jsonl => CorpusFormat::Jsonl,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "sleuth",
    version,
    about = "Detect LLM-generated short answers, evaluate detectors, and quantify outcome effects"
)]
struct Cli {
    /// JSON config file supplying defaults for flags not given on the
    /// command line.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load a corpus and print its class counts.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = FormatChoice::Csv)]
        format: FormatChoice,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        run_id: Option<String>,
    },
    /// Per-class inter-rater reliability (Cohen's kappa).
    Irr {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = FormatChoice::Csv)]
        format: FormatChoice,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        run_id: Option<String>,
    },
    /// Learner-level train/test split.
    Split {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = FormatChoice::Csv)]
        format: FormatChoice,
        #[arg(long)]
        ratio: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        run_id: Option<String>,
    },
    /// Extract the stylometric feature matrix (and fit or apply a schema).
    Features {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = FormatChoice::Csv)]
        format: FormatChoice,
        /// Plain-text LLM-marker list, one phrase per line.
        #[arg(long)]
        markers: Option<PathBuf>,
        /// Apply an existing schema instead of fitting one.
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        run_id: Option<String>,
    },
    /// Cross-validate, select, and train the final classifier.
    Train {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = FormatChoice::Csv)]
        format: FormatChoice,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long, value_enum)]
        model: Option<ModelChoice>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        markers: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        run_id: Option<String>,
    },
    /// Score a trained model on a labeled corpus.
    Evaluate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = FormatChoice::Csv)]
        format: FormatChoice,
        #[arg(long)]
        model_file: PathBuf,
        #[arg(long)]
        markers: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        run_id: Option<String>,
    },
    /// Run the local model and both gateway detectors on the same test
    /// ids and emit side-by-side reports.
    Compare {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = FormatChoice::Csv)]
        format: FormatChoice,
        #[arg(long)]
        model_file: PathBuf,
        #[arg(long, value_enum, default_value_t = DetectorChoice::Mock)]
        detector: DetectorChoice,
        /// Record-replay fixture directory (read-only cache).
        #[arg(long)]
        fixtures: Option<PathBuf>,
        /// Verdict cache directory (read/write).
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long)]
        markers: Option<PathBuf>,
        /// Judge prompt file replacing the built-in rubric prompt.
        #[arg(long)]
        prompt: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        run_id: Option<String>,
    },
    /// Fit the mixed-effects outcome model from verdicts + MCQ outcomes.
    Outcomes {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = FormatChoice::Csv)]
        format: FormatChoice,
        /// CSV of response_id,label verdicts.
        #[arg(long)]
        verdicts: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        run_id: Option<String>,
    },
    /// Export the chat-format fine-tuning dataset for a hosted judge.
    ExportFinetune {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = FormatChoice::Csv)]
        format: FormatChoice,
        #[arg(long)]
        prompt: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        run_id: Option<String>,
    },
}

/// Values a JSON config file may supply; any CLI flag wins over these.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    ratio: Option<f64>,
    folds: Option<usize>,
    model: Option<String>,
    markers: Option<PathBuf>,
    commercial_endpoint: Option<String>,
    commercial_credential_env: Option<String>,
    judge_endpoint: Option<String>,
    judge_model: Option<String>,
    judge_credential_env: Option<String>,
    timeout_secs: Option<u64>,
    max_retries: Option<u32>,
    backoff_ms: Option<u64>,
    max_in_flight: Option<usize>,
}

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<FileConfig, CliError> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let content = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&content)
            .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
    }
}

/// The fully resolved settings of one run, written next to its outputs.
#[derive(Debug, Serialize)]
struct RunConfig {
    command: String,
    input: String,
    format: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    folds: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    model_file: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    verdicts: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    markers: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    detector: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fixtures: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cache: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    prompt: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    train_config: Option<TrainConfig>,
}

impl RunConfig {
    fn new(command: &str, input: &Path, format: FormatChoice) -> RunConfig {
        RunConfig {
            command: command.to_string(),
            input: input.display().to_string(),
            format: match format {
                FormatChoice::Csv => "csv".to_string(),
                FormatChoice::Jsonl => "jsonl".to_string(),
            },
            seed: None,
            ratio: None,
            folds: None,
            model: None,
            model_file: None,
            verdicts: None,
            markers: None,
            detector: None,
            fixtures: None,
            cache: None,
            prompt: None,
            train_config: None,
        }
    }
}

/// Creates `<out>/<run-id>/`, defaulting the run id to a timestamped name;
/// an existing run directory is never reused unless explicitly named.
fn prepare_run_dir(out: &Path, run_id: Option<&str>) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(out)?;
    let dir = match run_id {
        Some(id) => {
            let d = out.join(id);
            std::fs::create_dir_all(&d)?;
            d
        }
        None => {
            let secs = std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0);
            let mut n = 0u32;
            loop {
                let name = if n == 0 {
                    format!("run-{secs}")
                } else {
                    format!("run-{secs}-{n}")
                };
                let d = out.join(&name);
                if !d.exists() {
                    std::fs::create_dir_all(&d)?;
                    break d;
                }
                n += 1;
            }
        }
    };
    Ok(dir)
}

fn write_config(dir: &Path, config: &RunConfig) -> Result<(), CliError> {
    let json = serde_json::to_string_pretty(config)?;
    std::fs::write(dir.join("config.json"), json)?;
    Ok(())
}

fn write_text(dir: &Path, name: &str, content: &str) -> Result<(), CliError> {
    std::fs::write(dir.join(name), content)?;
    Ok(())
}

fn extractor_with(markers: Option<&Path>) -> Result<FeatureExtractor, CliError> {
    let mut extractor = FeatureExtractor::default();
    if let Some(path) = markers {
        extractor = extractor.with_llm_markers(load_marker_list(path)?);
    }
    Ok(extractor)
}

fn class_count_block(corpus: &Corpus) -> String {
    let counts = corpus.class_counts();
    let mut out = format!("{:<22} {:>6}\n", "Label", "N");
    for label in Label::ALL {
        out.push_str(&format!(
            "{:<22} {:>6}\n",
            label.display_name(),
            counts[&label]
        ));
    }
    out.push_str(&format!("{:<22} {:>6}\n", "Total", corpus.len()));
    out
}

fn irr_block(corpus: &Corpus) -> String {
    let mut out = format!("{:<22} {:>9}\n", "Label", "Kappa");
    for (label, kappa) in irr_by_class(corpus) {
        let cell = match kappa {
            Ok(k) => format!("{k:.3}"),
            Err(CorpusError::UndefinedKappa) => "-".to_string(),
            Err(e) => format!("error: {e}"),
        };
        out.push_str(&format!("{:<22} {:>9}\n", label.display_name(), cell));
    }
    out
}

fn predictions_csv(ids: &[String], y_true: &[Label], y_pred: &[Label]) -> String {
    let mut out = String::from("response_id,true,pred\n");
    for ((id, t), p) in ids.iter().zip(y_true).zip(y_pred) {
        out.push_str(&format!("{id},{t},{p}\n"));
    }
    out
}

fn write_report_files(
    dir: &Path,
    stem: &str,
    report: &ClassificationReport,
) -> Result<(), CliError> {
    write_text(dir, &format!("{stem}.txt"), &render_report(report, ReportFormat::TextTable))?;
    write_text(dir, &format!("{stem}.json"), &render_report(report, ReportFormat::Json))?;
    write_text(dir, &format!("{stem}.csv"), &render_report(report, ReportFormat::Csv))?;
    write_text(dir, &format!("{stem}_confusion.csv"), &report.matrix.to_csv())?;
    Ok(())
}

fn load_verdict_csv(path: &Path) -> Result<BTreeMap<String, Label>, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| CliError::Data(format!("cannot read verdicts {}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| CliError::Data(e.to_string()))?
        .clone();
    let id_col = headers
        .iter()
        .position(|h| h.trim() == "response_id")
        .ok_or_else(|| CliError::Data("verdict file lacks response_id column".to_string()))?;
    let label_col = headers
        .iter()
        .position(|h| h.trim() == "label")
        .ok_or_else(|| CliError::Data("verdict file lacks label column".to_string()))?;
    let mut out = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::Data(format!("line {}: {e}", i + 2)))?;
        let id = record.get(id_col).unwrap_or("").trim().to_string();
        let label = Label::parse(record.get(label_col).unwrap_or(""))
            .map_err(|e| CliError::Data(format!("line {}: {e}", i + 2)))?;
        out.insert(id, label);
    }
    Ok(out)
}

/// Parses arguments and runs; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let kind = e.kind();
            let _ = e.print();
            return if matches!(
                kind,
                ClapErrorKind::DisplayHelp | ClapErrorKind::DisplayVersion
            ) {
                0
            } else {
                1
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let file_config = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Ingest {
            input,
            format,
            out,
            run_id,
        } => cmd_ingest(&input, format, out.as_deref(), run_id.as_deref()),
        Command::Irr {
            input,
            format,
            out,
            run_id,
        } => cmd_irr(&input, format, out.as_deref(), run_id.as_deref()),
        Command::Split {
            input,
            format,
            ratio,
            seed,
            out,
            run_id,
        } => {
            let ratio = ratio.or(file_config.ratio).unwrap_or(0.8);
            let seed = seed.or(file_config.seed).unwrap_or(42);
            cmd_split(&input, format, ratio, seed, &out, run_id.as_deref())
        }
        Command::Features {
            input,
            format,
            markers,
            schema,
            out,
            run_id,
        } => {
            let markers = markers.or(file_config.markers.clone());
            cmd_features(
                &input,
                format,
                markers.as_deref(),
                schema.as_deref(),
                &out,
                run_id.as_deref(),
            )
        }
        Command::Train {
            input,
            format,
            folds,
            model,
            seed,
            markers,
            out,
            run_id,
        } => {
            let folds = folds.or(file_config.folds).unwrap_or(5);
            let seed = seed.or(file_config.seed).unwrap_or(42);
            let model = match model {
                Some(m) => m,
                None => match file_config.model.as_deref() {
                    Some("logistic") => ModelChoice::Logistic,
                    Some("forest") => ModelChoice::Forest,
                    Some("auto") | None => ModelChoice::Auto,
                    Some(other) => {
                        return Err(CliError::Usage(format!(
                            "config file model must be logistic/forest/auto, got {other:?}"
                        )))
                    }
                },
            };
            let markers = markers.or(file_config.markers.clone());
            cmd_train(
                &input,
                format,
                folds,
                model,
                seed,
                markers.as_deref(),
                &out,
                run_id.as_deref(),
            )
        }
        Command::Evaluate {
            input,
            format,
            model_file,
            markers,
            out,
            run_id,
        } => {
            let markers = markers.or(file_config.markers.clone());
            cmd_evaluate(
                &input,
                format,
                &model_file,
                markers.as_deref(),
                &out,
                run_id.as_deref(),
            )
        }
        Command::Compare {
            input,
            format,
            model_file,
            detector,
            fixtures,
            cache,
            markers,
            prompt,
            out,
            run_id,
        } => {
            let markers = markers.or(file_config.markers.clone());
            cmd_compare(CompareArgs {
                input: &input,
                format,
                model_file: &model_file,
                detector,
                fixtures: fixtures.as_deref(),
                cache: cache.as_deref(),
                markers: markers.as_deref(),
                prompt: prompt.as_deref(),
                out: &out,
                run_id: run_id.as_deref(),
                file_config: &file_config,
            })
        }
        Command::Outcomes {
            input,
            format,
            verdicts,
            out,
            run_id,
        } => cmd_outcomes(&input, format, &verdicts, &out, run_id.as_deref()),
        Command::ExportFinetune {
            input,
            format,
            prompt,
            out,
            run_id,
        } => cmd_export_finetune(&input, format, prompt.as_deref(), &out, run_id.as_deref()),
    }
}

fn cmd_ingest(
    input: &Path,
    format: FormatChoice,
    out: Option<&Path>,
    run_id: Option<&str>,
) -> Result<(), CliError> {
    let corpus = load_corpus(input, format.into())?;
    let block = class_count_block(&corpus);
    println!(
        "Corpus {} ({} responses)",
        corpus.provenance().source,
        corpus.len()
    );
    print!("{block}");
    if let Some(out) = out {
        let dir = prepare_run_dir(out, run_id)?;
        write_config(&dir, &RunConfig::new("ingest", input, format))?;
        write_text(&dir, "summary.txt", &block)?;
        let counts = corpus.class_counts();
        let json: BTreeMap<String, usize> = counts
            .iter()
            .map(|(l, c)| (l.as_str().to_string(), *c))
            .collect();
        write_text(
            &dir,
            "counts.json",
            &serde_json::to_string_pretty(&json)?,
        )?;
        println!("wrote {}", dir.display());
    }
    Ok(())
}

fn cmd_irr(
    input: &Path,
    format: FormatChoice,
    out: Option<&Path>,
    run_id: Option<&str>,
) -> Result<(), CliError> {
    let corpus = load_corpus(input, format.into())?;
    let block = irr_block(&corpus);
    print!("{block}");
    if let Some(out) = out {
        let dir = prepare_run_dir(out, run_id)?;
        write_config(&dir, &RunConfig::new("irr", input, format))?;
        write_text(&dir, "irr.txt", &block)?;
        println!("wrote {}", dir.display());
    }
    Ok(())
}

fn cmd_split(
    input: &Path,
    format: FormatChoice,
    ratio: f64,
    seed: u64,
    out: &Path,
    run_id: Option<&str>,
) -> Result<(), CliError> {
    let corpus = load_corpus(input, format.into())?;
    let split = learner_level_split(&corpus, ratio, seed)?;
    let dir = prepare_run_dir(out, run_id)?;
    let mut config = RunConfig::new("split", input, format);
    config.seed = Some(seed);
    config.ratio = Some(ratio);
    write_config(&dir, &config)?;
    let mut train_file = std::fs::File::create(dir.join("train.csv"))?;
    split.train.write_csv(&mut train_file)?;
    train_file.flush()?;
    let mut test_file = std::fs::File::create(dir.join("test.csv"))?;
    split.test.write_csv(&mut test_file)?;
    test_file.flush()?;
    let summary = format!(
        "ratio {} seed {}\ntrain: {} responses / {} learners\ntest:  {} responses / {} learners\n",
        ratio,
        seed,
        split.train.len(),
        split.train.learner_ids().len(),
        split.test.len(),
        split.test.learner_ids().len(),
    );
    write_text(&dir, "summary.txt", &summary)?;
    print!("{summary}");
    println!("wrote {}", dir.display());
    Ok(())
}

fn cmd_features(
    input: &Path,
    format: FormatChoice,
    markers: Option<&Path>,
    schema_path: Option<&Path>,
    out: &Path,
    run_id: Option<&str>,
) -> Result<(), CliError> {
    let corpus = load_corpus(input, format.into())?;
    let extractor = extractor_with(markers)?;
    let set = featurize_corpus(&corpus, &extractor);
    let schema = match schema_path {
        Some(p) => serde_json::from_str::<FeatureSchema>(&std::fs::read_to_string(p)?)?,
        None => FeatureSchema::fit(&set.features)?,
    };
    let dir = prepare_run_dir(out, run_id)?;
    let mut config = RunConfig::new("features", input, format);
    config.markers = markers.map(|p| p.display().to_string());
    write_config(&dir, &config)?;
    let mut raw = Vec::new();
    write_feature_csv(&set, &mut raw)?;
    write_text(&dir, "features.csv", std::str::from_utf8(&raw).expect("utf8"))?;
    write_text(&dir, "schema.json", &serde_json::to_string_pretty(&schema)?)?;
    let mut standardized = String::from("response_id,");
    standardized.push_str(&schema.names.join(","));
    standardized.push('\n');
    for (id, fv) in set.response_ids.iter().zip(&set.features) {
        let z = schema.apply(fv);
        standardized.push_str(id);
        for v in z {
            standardized.push_str(&format!(",{v}"));
        }
        standardized.push('\n');
    }
    write_text(&dir, "standardized.csv", &standardized)?;
    println!("featurized {} responses -> {}", set.len(), dir.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    input: &Path,
    format: FormatChoice,
    folds: usize,
    model: ModelChoice,
    seed: u64,
    markers: Option<&Path>,
    out: &Path,
    run_id: Option<&str>,
) -> Result<(), CliError> {
    let corpus = load_corpus(input, format.into())?;
    let extractor = extractor_with(markers)?;
    let set = featurize_corpus(&corpus, &extractor);
    let base = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    let candidates: Vec<CandidateSpec> = match model {
        ModelChoice::Logistic => vec![CandidateSpec {
            kind: ModelKind::Logistic,
            config: base.clone(),
        }],
        ModelChoice::Forest => vec![CandidateSpec {
            kind: ModelKind::Forest,
            config: base.clone(),
        }],
        ModelChoice::Auto => vec![
            CandidateSpec {
                kind: ModelKind::Logistic,
                config: base.clone(),
            },
            CandidateSpec {
                kind: ModelKind::Forest,
                config: base.clone(),
            },
        ],
    };
    let cv = cross_validate(&set, folds, &candidates, seed)?;
    let winner_spec = CandidateSpec {
        kind: cv.winning_candidate().kind,
        config: cv.winning_candidate().config.clone(),
    };
    let all_rows: Vec<usize> = (0..set.len()).collect();
    let final_model = train_on_rows(&set, &all_rows, &winner_spec)?;

    let dir = prepare_run_dir(out, run_id)?;
    let mut config = RunConfig::new("train", input, format);
    config.seed = Some(seed);
    config.folds = Some(folds);
    config.model = Some(winner_spec.kind.to_string());
    config.markers = markers.map(|p| p.display().to_string());
    config.train_config = Some(winner_spec.config.clone());
    write_config(&dir, &config)?;
    save_model(&final_model, &dir.join("model.json"))?;
    write_text(&dir, "cv_report.json", &serde_json::to_string_pretty(&cv)?)?;
    let mut summary = format!("{folds}-fold learner-level cross-validation\n");
    for c in &cv.candidates {
        summary.push_str(&format!(
            "{:<9} accuracy {:.4} (sd {:.4})  weighted F1 {:.4} (sd {:.4})\n",
            c.kind.to_string(),
            c.mean_accuracy,
            c.sd_accuracy,
            c.mean_weighted_f1,
            c.sd_weighted_f1
        ));
    }
    summary.push_str(&format!("winner: {}\n", winner_spec.kind));
    write_text(&dir, "summary.txt", &summary)?;
    print!("{summary}");
    println!("wrote {}", dir.display());
    Ok(())
}

fn cmd_evaluate(
    input: &Path,
    format: FormatChoice,
    model_file: &Path,
    markers: Option<&Path>,
    out: &Path,
    run_id: Option<&str>,
) -> Result<(), CliError> {
    let corpus = load_corpus(input, format.into())?;
    let model = load_model(model_file)?;
    let extractor = extractor_with(markers)?;
    let set = featurize_corpus(&corpus, &extractor);
    let y_pred: Vec<Label> = set.features.iter().map(|fv| model.predict(fv)).collect();
    let report = score(&set.labels, &y_pred)?;
    let dir = prepare_run_dir(out, run_id)?;
    let mut config = RunConfig::new("evaluate", input, format);
    config.model_file = Some(model_file.display().to_string());
    config.markers = markers.map(|p| p.display().to_string());
    write_config(&dir, &config)?;
    write_text(
        &dir,
        "predictions.csv",
        &predictions_csv(&set.response_ids, &set.labels, &y_pred),
    )?;
    write_report_files(&dir, "report", &report)?;
    print!("{}", render_report(&report, ReportFormat::TextTable));
    println!("wrote {}", dir.display());
    Ok(())
}

struct CompareArgs<'a> {
    input: &'a Path,
    format: FormatChoice,
    model_file: &'a Path,
    detector: DetectorChoice,
    fixtures: Option<&'a Path>,
    cache: Option<&'a Path>,
    markers: Option<&'a Path>,
    prompt: Option<&'a Path>,
    out: &'a Path,
    run_id: Option<&'a str>,
    file_config: &'a FileConfig,
}

fn gateway_config(
    kind: ProviderKind,
    args: &CompareArgs<'_>,
) -> Result<DetectorConfig, CliError> {
    let fc = args.file_config;
    let mut config = match (args.detector, kind) {
        (DetectorChoice::Mock, _) => DetectorConfig::mock(),
        (_, ProviderKind::CommercialDetector) => DetectorConfig::commercial(
            fc.commercial_endpoint
                .as_deref()
                .unwrap_or("https://api.gptzero.me/v2/predict/text"),
            fc.commercial_credential_env
                .as_deref()
                .unwrap_or("SLEUTH_COMMERCIAL_API_KEY"),
        ),
        (_, ProviderKind::LlmJudge) => DetectorConfig::llm_judge(
            fc.judge_endpoint
                .as_deref()
                .unwrap_or("https://api.openai.com/v1/chat/completions"),
            fc.judge_model.as_deref().unwrap_or("gpt-4o"),
            fc.judge_credential_env
                .as_deref()
                .unwrap_or("SLEUTH_JUDGE_API_KEY"),
        ),
        (_, ProviderKind::Mock) => DetectorConfig::mock(),
    };
    if let Some(t) = fc.timeout_secs {
        config.timeout_secs = t;
    }
    if let Some(r) = fc.max_retries {
        config.max_retries = r;
    }
    if let Some(b) = fc.backoff_ms {
        config.backoff_ms = b;
    }
    if let Some(m) = fc.max_in_flight {
        config.max_in_flight = m;
    }
    config.fixtures_dir = args.fixtures.map(Path::to_path_buf);
    config.cache_dir = args.cache.map(Path::to_path_buf);
    Ok(config)
}

fn cmd_compare(args: CompareArgs<'_>) -> Result<(), CliError> {
    let corpus = load_corpus(args.input, args.format.into())?;
    let model = load_model(args.model_file)?;
    let extractor = extractor_with(args.markers)?;
    let set = featurize_corpus(&corpus, &extractor);

    let dir = prepare_run_dir(args.out, args.run_id)?;
    let mut config = RunConfig::new("compare", args.input, args.format);
    config.model_file = Some(args.model_file.display().to_string());
    config.detector = Some(format!("{:?}", args.detector).to_lowercase());
    config.fixtures = args.fixtures.map(|p| p.display().to_string());
    config.cache = args.cache.map(|p| p.display().to_string());
    config.markers = args.markers.map(|p| p.display().to_string());
    config.prompt = args.prompt.map(|p| p.display().to_string());
    write_config(&dir, &config)?;

    // Local model predictions over every response.
    let mut local: BTreeMap<String, Label> = BTreeMap::new();
    for (id, fv) in set.response_ids.iter().zip(&set.features) {
        local.insert(id.clone(), model.predict(fv));
    }

    let mut failures: Vec<(String, String, String)> = Vec::new();
    let mut verdict_maps: Vec<(&str, BTreeMap<String, Label>)> =
        vec![("local", local)];
    if args.detector != DetectorChoice::Local {
        let prompt = match args.prompt {
            Some(p) => JudgePrompt::from_file(p)?,
            None => JudgePrompt::default(),
        };
        for kind in [ProviderKind::CommercialDetector, ProviderKind::LlmJudge] {
            let gw_config = gateway_config(kind, &args)?;
            let detector = Detector::new(gw_config)?.with_prompt(prompt.clone());
            let name = match kind {
                ProviderKind::CommercialDetector => "commercial",
                ProviderKind::LlmJudge => "judge",
                ProviderKind::Mock => "mock",
            };
            let outcome = detector.batch_classify(&corpus);
            for f in &outcome.failures {
                failures.push((name.to_string(), f.response_id.clone(), f.error.clone()));
            }
            verdict_maps.push((name, outcome.labels()));
        }
    }

    // Evaluate every detector over the ids all of them classified.
    let common_ids: Vec<String> = set
        .response_ids
        .iter()
        .filter(|id| verdict_maps.iter().all(|(_, m)| m.contains_key(*id)))
        .cloned()
        .collect();
    let truth: BTreeMap<&str, Label> = set
        .response_ids
        .iter()
        .zip(&set.labels)
        .map(|(id, l)| (id.as_str(), *l))
        .collect();
    let mut summary = format!(
        "compared over {} of {} responses\n",
        common_ids.len(),
        set.len()
    );
    for (name, verdicts) in &verdict_maps {
        let y_true: Vec<Label> = common_ids.iter().map(|id| truth[id.as_str()]).collect();
        let y_pred: Vec<Label> = common_ids.iter().map(|id| verdicts[id]).collect();
        let report = score(&y_true, &y_pred)?;
        write_report_files(&dir, name, &report)?;
        write_text(
            &dir,
            &format!("{name}_predictions.csv"),
            &predictions_csv(&common_ids, &y_true, &y_pred),
        )?;
        summary.push_str(&format!(
            "{:<11} accuracy {:.4}  weighted F1 {:.4}\n",
            name, report.accuracy, report.weighted_avg.f1
        ));
    }
    if !failures.is_empty() {
        let mut block = String::from("detector,response_id,error\n");
        for (d, id, e) in &failures {
            block.push_str(&format!("{d},{id},{}\n", e.replace(',', ";")));
        }
        write_text(&dir, "failures.csv", &block)?;
        summary.push_str(&format!("{} classification failures\n", failures.len()));
    }
    write_text(&dir, "summary.txt", &summary)?;
    print!("{summary}");
    println!("wrote {}", dir.display());
    Ok(())
}

fn cmd_outcomes(
    input: &Path,
    format: FormatChoice,
    verdicts_path: &Path,
    out: &Path,
    run_id: Option<&str>,
) -> Result<(), CliError> {
    let corpus = load_corpus(input, format.into())?;
    let verdicts = load_verdict_csv(verdicts_path)?;
    let joined = join_outcomes(&corpus, &verdicts)?;
    let fit = fit_glmm(&joined.records, &GlmmConfig::default())?;
    let summary = effect_summary(&fit)?;
    let dir = prepare_run_dir(out, run_id)?;
    let mut config = RunConfig::new("outcomes", input, format);
    config.verdicts = Some(verdicts_path.display().to_string());
    write_config(&dir, &config)?;
    write_text(&dir, "fit.json", &serde_json::to_string_pretty(&fit)?)?;
    write_text(
        &dir,
        "effect.json",
        &serde_json::to_string_pretty(&summary)?,
    )?;
    let text = format!(
        "{} records over {} learners ({} skipped without MCQ outcome)\n{}",
        fit.n_records,
        fit.n_learners,
        joined.skipped_missing_mcq,
        render_effect_text(&summary)
    );
    write_text(&dir, "effect.txt", &text)?;
    print!("{text}");
    if !fit.diagnostics.is_empty() {
        for d in &fit.diagnostics {
            println!("note: {d}");
        }
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn cmd_export_finetune(
    input: &Path,
    format: FormatChoice,
    prompt_path: Option<&Path>,
    out: &Path,
    run_id: Option<&str>,
) -> Result<(), CliError> {
    let corpus = load_corpus(input, format.into())?;
    if corpus.is_empty() {
        return Err(CliError::Data("cannot export an empty corpus".to_string()));
    }
    let prompt = match prompt_path {
        Some(p) => JudgePrompt::from_file(p)?,
        None => JudgePrompt::default(),
    };
    let dir = prepare_run_dir(out, run_id)?;
    let mut config = RunConfig::new("export-finetune", input, format);
    config.prompt = prompt_path.map(|p| p.display().to_string());
    write_config(&dir, &config)?;
    let path = dir.join("finetune.jsonl");
    let n = export_finetune_dataset(&corpus, &prompt, &path)?;
    println!("wrote {n} fine-tuning examples to {}", path.display());
    Ok(())
}
