//! `hiersum` command line: corpus generation and labeling, training,
//! extraction, evaluation, ROUGE scoring and gradient checks.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use hiersum::autodiff::primitive_checks;
use hiersum::corpus::{generate, load_corpus, write_corpus, SynthSpec};
use hiersum::eval::{evaluate, load_summaries, rouge_summaries, rows_to_tsv, Scorer};
use hiersum::model::{predict, toy_gradcheck, DocInput};
use hiersum::oracle::{label_corpus, OracleObjective, DEFAULT_MAX_SENTS};
use hiersum::trainer::{train_to_dir, Checkpoint, TrainConfig};

/// Gradient checks pass below this relative error.
const GRADCHECK_TOL: f64 = 1e-4;

const SEED_ENV: &str = "HIERSUM_SEED";

#[derive(Parser)]
#[command(
    name = "hiersum",
    version,
    about = "Hierarchical graph-attention extractive summarizer"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with planted summaries.
    Gen {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        n_docs: usize,
        /// Output JSONL file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Attach greedy-oracle labels to every document.
    Label {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_MAX_SENTS)]
        max_sents: usize,
    },
    /// Train a model, writing metrics, checkpoint and resume state to a directory.
    Train {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: PathBuf,
        /// TOML training configuration; defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides both the config file and HIERSUM_SEED.
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from the state file in the output directory, if present.
        #[arg(long)]
        resume: bool,
    },
    /// Select the top-k sentences of each document with a trained model.
    Extract {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Defaults to the checkpoint's k_extract.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// ROUGE report of a scorer on a corpus, as TSV.
    Evaluate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        scorer: ScorerKind,
        /// Required for the model scorer.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Defaults to the checkpoint's k_extract, else the training default.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// ROUGE of candidate summaries against references, both JSONL of {"id","sentences"}.
    Rouge {
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        references: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference checks of every primitive and of the full objective.
    Gradcheck {
        #[arg(long, default_value_t = 5)]
        seeds: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ScorerKind {
    Model,
    Lead,
    Oracle,
}

#[derive(Serialize)]
struct Extraction<'a> {
    id: &'a str,
    selected: Vec<usize>,
    sentences: Vec<&'a str>,
}

/// A check that ran to completion but did not pass.
#[derive(Debug)]
struct CheckFailed(String);

impl std::fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CheckFailed {}

fn output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn env_seed() -> anyhow::Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| {
            hiersum::Error::Config(format!("{SEED_ENV} must be an unsigned integer, got {v:?}"))
                .into()
        }),
        Err(_) => Ok(None),
    }
}

fn load_checkpoint(path: &Path) -> anyhow::Result<Checkpoint> {
    Ok(Checkpoint::load(path)?)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Gen { seed, n_docs, out } => {
            let docs = generate(seed, n_docs, &SynthSpec::default());
            let mut w = output(out.as_deref())?;
            write_corpus(&mut w, &docs)?;
            w.flush()?;
        }
        Command::Label {
            input,
            out,
            max_sents,
        } => {
            let docs = label_corpus(load_corpus(&input)?, max_sents, OracleObjective::MeanR1R2)?;
            let mut w = output(out.as_deref())?;
            write_corpus(&mut w, &docs)?;
            w.flush()?;
        }
        Command::Train {
            train,
            val,
            config,
            out,
            seed,
            resume,
        } => {
            let mut cfg = match config {
                Some(p) => TrainConfig::load(p)?,
                None => TrainConfig::default(),
            };
            if let Some(s) = seed.or(env_seed()?) {
                cfg.seed = s;
            }
            let provider = cfg.build_provider()?;
            let (outcome, files) = train_to_dir(
                cfg,
                load_corpus(&train)?,
                load_corpus(&val)?,
                provider.as_ref(),
                &out,
                resume,
            )?;
            log::info!(
                "best epoch {} (val R1 {:.4}), checkpoint {}",
                outcome.best.epoch,
                outcome.best.val_r1,
                files.checkpoint.display()
            );
            println!("{}", files.checkpoint.display());
        }
        Command::Extract {
            checkpoint,
            input,
            k,
            out,
        } => {
            let ckpt = load_checkpoint(&checkpoint)?;
            let k = k.unwrap_or(ckpt.config.k_extract);
            if k == 0 {
                return Err(hiersum::Error::Config("k must be at least 1".into()).into());
            }
            let cfg = ckpt.model_config();
            let provider = ckpt.config.build_provider()?;
            let docs = load_corpus(&input)?;
            let mut w = output(out.as_deref())?;
            for doc in &docs {
                let input = DocInput::prepare(doc, provider.as_ref(), &cfg)?;
                let selected =
                    hiersum::eval::extract_topk(&predict(&ckpt.params, &input, &cfg)?, k);
                let sentences = selected
                    .iter()
                    .map(|&i| doc.sentences[i].text.as_str())
                    .collect();
                let rec = Extraction {
                    id: &doc.id,
                    selected,
                    sentences,
                };
                serde_json::to_writer(&mut w, &rec)?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
        }
        Command::Evaluate {
            input,
            scorer,
            checkpoint,
            k,
            out,
        } => {
            let docs = load_corpus(&input)?;
            let report = match scorer {
                ScorerKind::Model => {
                    let Some(path) = checkpoint else {
                        bail!(hiersum::Error::Config(
                            "the model scorer needs --checkpoint".into()
                        ));
                    };
                    let ckpt = load_checkpoint(&path)?;
                    let cfg = ckpt.model_config();
                    let provider = ckpt.config.build_provider()?;
                    let scorer = Scorer::Model {
                        params: &ckpt.params,
                        cfg: &cfg,
                        provider: provider.as_ref(),
                    };
                    evaluate(&docs, &scorer, k.unwrap_or(ckpt.config.k_extract))?
                }
                ScorerKind::Lead => evaluate(
                    &docs,
                    &Scorer::Lead,
                    k.unwrap_or(TrainConfig::default().k_extract),
                )?,
                ScorerKind::Oracle => evaluate(
                    &docs,
                    &Scorer::oracle(),
                    k.unwrap_or(TrainConfig::default().k_extract),
                )?,
            };
            let mut w = output(out.as_deref())?;
            w.write_all(report.to_tsv().as_bytes())?;
            w.flush()?;
        }
        Command::Rouge {
            candidates,
            references,
            out,
        } => {
            let rows =
                rouge_summaries(&load_summaries(&candidates)?, &load_summaries(&references)?)?;
            let mut w = output(out.as_deref())?;
            w.write_all(rows_to_tsv(&rows).as_bytes())?;
            w.flush()?;
        }
        Command::Gradcheck { seeds } => {
            if seeds == 0 {
                return Err(hiersum::Error::Config("--seeds must be at least 1".into()).into());
            }
            let mut worst: Vec<(String, f64)> = Vec::new();
            let mut record = |name: &str, err: f64| match worst.iter_mut().find(|(n, _)| n == name)
            {
                Some((_, e)) => *e = e.max(err),
                None => worst.push((name.to_owned(), err)),
            };
            for seed in 0..seeds {
                for (name, report) in primitive_checks(seed)? {
                    record(name, report.max_rel_error);
                }
                record("end_to_end", toy_gradcheck(seed)?.max_rel_error);
            }
            let mut failed = Vec::new();
            for (name, err) in &worst {
                let ok = *err < GRADCHECK_TOL;
                println!("{name}\t{err:.3e}\t{}", if ok { "ok" } else { "FAIL" });
                if !ok {
                    failed.push(name.clone());
                }
            }
            if !failed.is_empty() {
                return Err(CheckFailed(format!(
                    "gradient check failed for {}",
                    failed.join(", ")
                ))
                .into());
            }
        }
    }
    Ok(())
}

/// 1 for usage and configuration errors, 2 for bad input data, 3 for
/// failed internal checks.
fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<CheckFailed>().is_some() {
        return 3;
    }
    match err.downcast_ref::<hiersum::Error>() {
        Some(hiersum::Error::Config(_)) => 1,
        Some(e) if e.is_data_error() => 2,
        Some(_) => 3,
        None => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
