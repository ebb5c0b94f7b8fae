use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use march_cli::commands::{self, RunArgs};
use march_cli::config::RunOverrides;
use march_cli::CliError;

/// Hierarchical multi-agent engine for region-structured radiology report
/// generation: drafting, retrieval-augmented revision, stance-based
/// consensus, and reference-based evaluation.
#[derive(Parser)]
#[command(name = "march", version, about, max_term_width = 100)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a JSONL case database, write a normalized copy, and print
    /// region counts plus abnormality prevalence.
    Ingest {
        /// Input JSONL database.
        #[arg(long)]
        input: PathBuf,
        /// Where to write the normalized JSONL.
        #[arg(long)]
        output: PathBuf,
    },
    /// Validate a JSONL case database and print its profile.
    Validate {
        /// Input JSONL database.
        #[arg(long)]
        input: PathBuf,
    },
    /// Run the pipeline over an evaluation database, writing one result
    /// file per case plus consensus transcripts.
    Run {
        /// Run configuration (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Cases to generate reports for (JSONL).
        #[arg(long)]
        eval_db: PathBuf,
        /// Retrieval database (JSONL).
        #[arg(long)]
        train_db: PathBuf,
        /// Override the configured mode (resident-only, sr-sa, sr-ma,
        /// mr-ma, full).
        #[arg(long)]
        mode: Option<String>,
        /// Override the configured fellow count N.
        #[arg(long)]
        fellows: Option<usize>,
        /// Override the configured round cap T.
        #[arg(long, value_name = "T")]
        max_rounds: Option<u32>,
        /// Override the neighbors retrieved per paradigm.
        #[arg(long)]
        k: Option<usize>,
        /// Override the enabled paradigms (comma separated:
        /// image-to-image, image-to-text, logits).
        #[arg(long, value_delimiter = ',')]
        paradigms: Option<Vec<String>>,
        /// Override the case-level parallelism.
        #[arg(long)]
        parallelism: Option<usize>,
        /// Rerun cases whose result files already exist.
        #[arg(long)]
        force: bool,
        /// Override the transcript directory.
        #[arg(long, value_name = "DIR")]
        transcripts: Option<PathBuf>,
        /// Override the results directory.
        #[arg(long, value_name = "DIR")]
        results: Option<PathBuf>,
    },
    /// Score a results directory against reference reports (text table
    /// plus metrics JSON).
    Eval {
        /// Directory of per-case result JSON files.
        #[arg(long)]
        results: PathBuf,
        /// Reference database (JSONL) keyed by case id.
        #[arg(long)]
        references: PathBuf,
        /// Phrase lexicon JSON (abnormality name -> phrase array);
        /// defaults to the built-in lexicon.
        #[arg(long)]
        lexicon: Option<PathBuf>,
        /// Where to write the metrics JSON (default:
        /// <results>/metrics.json).
        #[arg(long, value_name = "PATH")]
        json_out: Option<PathBuf>,
    },
    /// Rerun the batch at several fellow counts and print one metrics row
    /// per count.
    Sweep {
        /// Run configuration (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Cases to generate reports for (JSONL).
        #[arg(long)]
        eval_db: PathBuf,
        /// Retrieval database (JSONL).
        #[arg(long)]
        train_db: PathBuf,
        /// Fellow counts to sweep (comma separated).
        #[arg(long, value_delimiter = ',', required = true)]
        counts: Vec<usize>,
        /// Override the case-level parallelism.
        #[arg(long)]
        parallelism: Option<usize>,
    },
    /// Pretty-print a stored consensus transcript round by round.
    InspectTranscript {
        /// Transcript JSON file written by `run`.
        #[arg(long)]
        path: PathBuf,
        /// Also dump every prompt and completion.
        #[arg(long)]
        raw: bool,
    },
}

fn run(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Ingest { input, output } => commands::cmd_ingest(&input, &output),
        Command::Validate { input } => commands::cmd_validate(&input),
        Command::Run {
            config,
            eval_db,
            train_db,
            mode,
            fellows,
            max_rounds,
            k,
            paradigms,
            parallelism,
            force,
            transcripts,
            results,
        } => {
            if let Some(mode) = &mode {
                commands::parse_mode(mode)?;
            }
            commands::cmd_run(RunArgs {
                config: &config,
                eval_db: &eval_db,
                train_db: &train_db,
                overrides: RunOverrides {
                    mode,
                    fellows,
                    max_rounds,
                    k,
                    paradigms,
                    parallelism,
                    results_dir: results,
                    transcript_dir: transcripts,
                },
                force,
            })
        }
        Command::Eval { results, references, lexicon, json_out } => {
            commands::cmd_eval(&results, &references, lexicon.as_deref(), json_out.as_deref())
        }
        Command::Sweep { config, eval_db, train_db, counts, parallelism } => {
            commands::cmd_sweep(&config, &eval_db, &train_db, &counts, parallelism)
        }
        Command::InspectTranscript { path, raw } => commands::cmd_inspect(&path, raw),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(output) => {
            print!("{output}");
            ExitCode::SUCCESS
        }
        Err(err) => {
            if let CliError::PartialBatch { summary, .. } = &err {
                print!("{summary}");
            }
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
