//! Command-line driver: one subcommand per pipeline stage plus attack
//! generation and potency scoring. Exit codes: 0 success, 1 usage or missing
//! prerequisite, 2 bad data, 3 training divergence.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use factforge::config::Config;
use factforge::pipeline::{self, AttackArgs};

#[derive(Parser)]
#[command(name = "factforge", version, about = "Desk-scale claim verification pipeline")]
struct Cli {
    /// Config file of `key = value` lines.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Artifact directory (beats the config file and FACTFORGE_WORKDIR).
    #[arg(long, global = true, value_name = "DIR")]
    workdir: Option<PathBuf>,

    /// Override one config key, e.g. --set seed=7 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Rebuild stage artifacts even when they already exist.
    #[arg(long, global = true)]
    force: bool,

    /// Candidate documents retrieved per claim (config key `m`).
    #[arg(long, global = true, value_name = "M")]
    max_candidates: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the document index from the pages file.
    Index,
    /// Fine-tune the pair encoder on title relevance and sentence veracity.
    TrainEncoder,
    /// Train the document-ranking pointer network.
    TrainDocrank,
    /// Train the joint evidence selector and relation labeler.
    TrainJoint,
    /// Label every claim and write predictions.jsonl into the workdir.
    Predict {
        /// Skip date post-processing.
        #[arg(long)]
        no_dateproc: bool,
        /// Take top documents in candidate order instead of learned ranking.
        #[arg(long)]
        no_docrank: bool,
    },
    /// Score a prediction file against gold claims; writes report.json.
    Evaluate {
        /// Prediction file (default: workdir/predictions.jsonl).
        #[arg(long, value_name = "FILE")]
        pred: Option<PathBuf>,
        /// Gold claims file (default: the configured claims file).
        #[arg(long, value_name = "FILE")]
        gold: Option<PathBuf>,
        /// Evidence cutoff (default: config key `n`).
        #[arg(long, value_name = "K")]
        k: Option<usize>,
    },
    /// Generate an adversarial claim set from a claims file.
    Attack {
        /// One of: conjunction, date, unverifiable, lexsub.
        #[arg(long = "type", value_name = "KIND")]
        kind: String,
        /// Source claims (default: the configured claims file).
        #[arg(long = "in", value_name = "FILE")]
        input: Option<PathBuf>,
        /// Output claims file.
        #[arg(long = "out", value_name = "FILE")]
        output: PathBuf,
        /// Generation seed (default: config key `seed`).
        #[arg(long, value_name = "N")]
        seed: Option<u64>,
        /// Date attacks only: also flip the label with an off-by-one rewrite.
        #[arg(long)]
        flip: bool,
        /// Unverifiable attacks: file of modifier phrases, one per line.
        #[arg(long, value_name = "FILE")]
        modifiers: Option<PathBuf>,
        /// Lexsub attacks: file of `token: synonym, synonym` lines.
        #[arg(long, value_name = "FILE")]
        synonyms: Option<PathBuf>,
        /// Lexsub attacks: search generations per claim.
        #[arg(long, value_name = "N", default_value_t = 25)]
        budget: usize,
    },
    /// Combine victim scores into potency and adjusted potency.
    Potency {
        /// Victim system score in [0,1] under attack (repeatable).
        #[arg(long = "fever", value_name = "F", required = true)]
        fever: Vec<f64>,
        /// Fraction of attack claims that are well-formed, in [0,1].
        #[arg(long, value_name = "R")]
        correct_rate: f64,
        /// Also write the report as JSON.
        #[arg(long, value_name = "FILE")]
        report: Option<PathBuf>,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn run(cli: Cli) -> factforge::Result<()> {
    let mut base = Config::default();
    if let Ok(dir) = std::env::var("FACTFORGE_WORKDIR") {
        if !dir.is_empty() {
            base.workdir = dir;
        }
    }
    let mut overrides = cli.set.clone();
    if let Some(m) = cli.max_candidates {
        overrides.push(format!("m={m}"));
    }
    if let Some(dir) = &cli.workdir {
        overrides.push(format!("workdir={}", dir.display()));
    }
    let mut cfg = Config::load_layered(base, cli.config.as_deref(), &overrides)?;

    match cli.command {
        Command::Index => {
            pipeline::cmd_index(&cfg, cli.force)?;
        }
        Command::TrainEncoder => {
            pipeline::cmd_train_encoder(&cfg, cli.force)?;
        }
        Command::TrainDocrank => {
            pipeline::cmd_train_docrank(&cfg, cli.force)?;
        }
        Command::TrainJoint => {
            pipeline::cmd_train_joint(&cfg, cli.force)?;
        }
        Command::Predict { no_dateproc, no_docrank } => {
            if no_dateproc {
                cfg.dateproc = false;
            }
            if no_docrank {
                cfg.docrank = false;
            }
            let path = pipeline::cmd_predict(&cfg, cli.force)?;
            println!("{}", path.display());
        }
        Command::Evaluate { pred, gold, k } => {
            let pred = pred
                .unwrap_or_else(|| Path::new(&cfg.workdir).join(pipeline::PREDICTIONS_FILE));
            let gold = gold.unwrap_or_else(|| PathBuf::from(&cfg.claims));
            let out = pipeline::cmd_evaluate(&cfg, &pred, &gold, k.unwrap_or(cfg.n))?;
            print!("{}", out.report.text());
            if let Some(breakdown) = &out.breakdown {
                println!();
                print!("{}", breakdown.text());
            }
        }
        Command::Attack { kind, input, output, seed, flip, modifiers, synonyms, budget } => {
            let input = input.unwrap_or_else(|| PathBuf::from(&cfg.claims));
            let n = pipeline::cmd_attack(
                &cfg,
                &AttackArgs {
                    kind: &kind,
                    input: &input,
                    output: &output,
                    seed: seed.unwrap_or(cfg.seed),
                    flip,
                    modifiers: modifiers.as_deref(),
                    synonyms: synonyms.as_deref(),
                    budget,
                },
            )?;
            println!("{n} claims -> {}", output.display());
        }
        Command::Potency { fever, correct_rate, report } => {
            let out = pipeline::cmd_potency(&fever, correct_rate, report.as_deref())?;
            print!("{}", out.text());
        }
    }
    Ok(())
}
