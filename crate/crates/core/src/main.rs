use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;

use revdistill::cli::{
    self, ExitClass, IdentificationSource, KtoCheckArgs, LambdaCounts, ZeroPoint,
};
use revdistill::corpus::Split;

/// Distills review-comment datasets by how much each comment helps a model
/// predict the code fix that followed it.
#[derive(Debug, Parser)]
#[command(name = "revdistill", version)]
struct Args {
    /// Log filter, e.g. `info` or `revdistill=debug`. Overrides RUST_LOG.
    #[arg(long, global = true)]
    log: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
    Other,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
            SplitArg::Other => Split::Other,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Baseline {
    TenLine,
    LlmJudge,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Score every entry with every configured backend (resumable).
    Score {
        #[arg(long)]
        corpus: PathBuf,
        /// TOML configuration with at least one backend.
        #[arg(long)]
        config: PathBuf,
        /// Score file; existing lines are kept and skipped.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "other")]
        split: SplitArg,
    },
    /// Build verdicts, SFT and KTO datasets, and statistics from scores.
    Distill {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        scores: PathBuf,
        /// Backends listed here must all have scored an entry for it to get a
        /// verdict. Without a config, every backend seen in the scores counts.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, value_enum, default_value = "other")]
        split: SplitArg,
    },
    /// Desired/undesired counts and percentages from a verdict file.
    Stats {
        #[arg(long)]
        verdicts: PathBuf,
        /// Count corpus entries without a verdict as unscorable.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Accuracy, precision, recall and F1 against human annotations.
    EvalIdentification {
        /// JSONL of {"entry_id", "label"}.
        #[arg(long)]
        annotations: PathBuf,
        #[arg(
            long,
            conflicts_with = "baseline",
            required_unless_present = "baseline"
        )]
        verdicts: Option<PathBuf>,
        #[arg(long, value_enum, requires = "corpus")]
        baseline: Option<Baseline>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Backend id for the LLM judge; defaults to the first configured.
        #[arg(long)]
        backend: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mean sentence BLEU-4 of generated comments.
    EvalGeneration {
        /// JSONL of {"entry_id", "text"}.
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        references: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check the KTO class-weight constraint and audit loss values.
    KtoCheck {
        /// kto.jsonl from `distill`.
        #[arg(long, conflicts_with = "counts")]
        kto: Option<PathBuf>,
        /// Class counts as DESIRED,UNDESIRED.
        #[arg(long)]
        counts: Option<LambdaCounts>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// JSONL of {"policy_logprob", "ref_logprob", "label"}.
        #[arg(long)]
        audit: Option<PathBuf>,
        /// Reference point for the audit.
        #[arg(long, default_value_t = 0.0, conflicts_with = "mismatched")]
        z0: f64,
        /// Estimate the reference point from mismatched-pair logprobs.
        #[arg(long)]
        mismatched: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(command: Command) -> revdistill::Result<cli::Outcome> {
    match command {
        Command::Score {
            corpus,
            config,
            out,
            split,
        } => cli::cmd_score(&corpus, split.into(), Some(&config), &out),
        Command::Distill {
            corpus,
            scores,
            config,
            out_dir,
            split,
        } => cli::cmd_distill(&corpus, split.into(), &scores, config.as_deref(), &out_dir),
        Command::Stats {
            verdicts,
            corpus,
            out,
        } => cli::cmd_stats(
            &verdicts,
            corpus.as_deref().map(|c| (c, Split::Other)),
            &out,
        ),
        Command::EvalIdentification {
            annotations,
            verdicts,
            baseline,
            corpus,
            config,
            backend,
            out,
        } => {
            let source = match (verdicts, baseline, corpus) {
                (Some(v), _, _) => IdentificationSource::Verdicts(v),
                (None, Some(Baseline::TenLine), Some(corpus)) => IdentificationSource::TenLine {
                    corpus,
                    split: Split::Other,
                },
                (None, Some(Baseline::LlmJudge), Some(corpus)) => IdentificationSource::LlmJudge {
                    corpus,
                    split: Split::Other,
                    backend,
                },
                _ => unreachable!("clap enforces a prediction source"),
            };
            cli::cmd_eval_identification(&annotations, &source, config.as_deref(), &out)
        }
        Command::EvalGeneration {
            candidates,
            references,
            out,
        } => cli::cmd_eval_generation(&candidates, &references, &out),
        Command::KtoCheck {
            kto,
            counts,
            config,
            audit,
            z0,
            mismatched,
            out,
        } => {
            let z0 = mismatched.map_or(ZeroPoint::Fixed(z0), ZeroPoint::Mismatched);
            cli::cmd_kto_check(&KtoCheckArgs {
                kto,
                counts,
                audit,
                z0,
                config,
                out,
            })
        }
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    let filter = match &args.log {
        Some(f) => EnvFilter::new(f),
        None => EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")),
    };
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();

    match run(args.command) {
        Ok(outcome) => {
            print!("{}", outcome.summary);
            if !outcome.summary.ends_with('\n') {
                println!();
            }
            ExitCode::from(outcome.exit.code())
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(ExitClass::of_error(&e).code())
        }
    }
}
