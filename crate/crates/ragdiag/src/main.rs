//! Command-line entry point: thin argument handling over the pipeline
//! library functions, plus the documented exit-code mapping
//! (0 success, 1 validation/config errors, 2 provider failures).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ragdiag::pipeline::{cmd_evaluate, cmd_retrieve, cmd_validate, PipelineError, RunConfig};

#[derive(Parser)]
#[command(name = "ragdiag", version, about = "Diagnostic evaluation for retrieval-augmented QA pipelines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonOverrides {
    /// JSON run-config file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for report output.
    #[arg(long)]
    output_dir: Option<String>,
    /// Cache-only mode: fail fast on any uncached provider call.
    #[arg(long)]
    offline: bool,
    /// Max concurrent provider requests.
    #[arg(long)]
    parallelism: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full diagnostic evaluation over a dataset file.
    Evaluate {
        /// Line-delimited JSON dataset; overrides the config's dataset path.
        dataset: Option<PathBuf>,
        #[command(flatten)]
        common: CommonOverrides,
        /// Enable judged metrics (context adherence) for this run.
        #[arg(long)]
        judged: bool,
        /// Minimum token-overlap ratio for a cascade stage-2 hit.
        #[arg(long)]
        token_overlap_min: Option<f64>,
        /// Minimum sentence cosine for a cascade stage-3 hit.
        #[arg(long)]
        semantic_min: Option<f64>,
        /// Ledger rule file overriding the shipped defaults.
        #[arg(long)]
        report_rules: Option<String>,
        /// Normalization rule file overriding the shipped defaults.
        #[arg(long)]
        normalization_rules: Option<String>,
    },
    /// Build a corpus index and retrieve contexts for a query file.
    Retrieve {
        /// Directory of .txt documents, or a JSONL file of {doc_id, text}.
        corpus: PathBuf,
        /// JSONL file of {query_id, question, ground_truth}.
        queries: PathBuf,
        /// Output dataset path (eval-record-shaped, answers empty).
        #[arg(long, short)]
        output: PathBuf,
        #[command(flatten)]
        common: CommonOverrides,
        /// Dense weight in [0, 1]; 0 is pure BM25.
        #[arg(long)]
        alpha: Option<f64>,
        /// Contexts to keep per query.
        #[arg(long)]
        top_k: Option<usize>,
        /// Chunk size in tokens.
        #[arg(long)]
        chunk_size: Option<usize>,
        /// Token overlap between consecutive chunks.
        #[arg(long)]
        overlap: Option<usize>,
    },
    /// Check a dataset file against the data-model invariants.
    Validate {
        dataset: PathBuf,
    },
}

fn base_config(
    common: &CommonOverrides,
    dataset: Option<&Path>,
) -> Result<RunConfig, PipelineError> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::new(
            dataset
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
        ),
    };
    if let Some(dataset) = dataset {
        config.dataset_path = dataset.display().to_string();
    }
    if let Some(dir) = &common.output_dir {
        config.output_dir = dir.clone();
    }
    if let Some(parallelism) = common.parallelism {
        config.parallelism = parallelism;
    }
    config.offline = config.offline || common.offline;
    Ok(config)
}

fn run() -> Result<(), PipelineError> {
    match Cli::parse().command {
        Command::Evaluate {
            dataset,
            common,
            judged,
            token_overlap_min,
            semantic_min,
            report_rules,
            normalization_rules,
        } => {
            let mut config = base_config(&common, dataset.as_deref())?;
            if config.dataset_path.is_empty() {
                return Err(PipelineError::Validation(
                    "no dataset given (positional argument or config file)".into(),
                ));
            }
            if judged {
                config.metric_groups.judged = true;
            }
            if let Some(v) = token_overlap_min {
                config.relevance.token_overlap_min = v;
            }
            if let Some(v) = semantic_min {
                config.relevance.semantic_min = v;
            }
            if report_rules.is_some() {
                config.report_rules_path = report_rules;
            }
            if normalization_rules.is_some() {
                config.normalization_rules_path = normalization_rules;
            }
            let output = cmd_evaluate(&config)?;
            for note in &output.report.annotations {
                eprintln!("note: {note}");
            }
            println!("report written to {}", output.run_dir.display());
            Ok(())
        }
        Command::Retrieve {
            corpus,
            queries,
            output,
            common,
            alpha,
            top_k,
            chunk_size,
            overlap,
        } => {
            let mut config = base_config(&common, None)?;
            if let Some(v) = alpha {
                config.fusion.alpha = v;
            }
            if let Some(v) = top_k {
                config.fusion.top_k = v;
            }
            if let Some(v) = chunk_size {
                config.chunking.chunk_size = v;
            }
            if let Some(v) = overlap {
                config.chunking.overlap = v;
            }
            let (set, warnings) = cmd_retrieve(&corpus, &queries, &output, &config)?;
            for warning in &warnings {
                eprintln!("warning: {warning}");
            }
            println!(
                "wrote {} records to {}",
                set.records.len(),
                output.display()
            );
            Ok(())
        }
        Command::Validate { dataset } => {
            let report = cmd_validate(&dataset)?;
            for finding in &report.warnings {
                println!("warning {}: {}", finding.query_id, finding.message);
            }
            for finding in &report.errors {
                println!("error {}: {}", finding.query_id, finding.message);
            }
            if report.is_valid() {
                println!("dataset is valid");
                Ok(())
            } else {
                Err(PipelineError::Validation(format!(
                    "{} invariant violation(s)",
                    report.errors.len()
                )))
            }
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
