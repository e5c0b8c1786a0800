//! Command-line surface: every subsystem exposed for scripting and
//! golden-file tests. All machine output is JSON with stable field order;
//! `report` additionally prints a human table.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use crate::alignment::{cross_mask, position_indices, self_mask, AlignmentError};
use crate::model::{fdcheck, load_checkpoint, ModelConfig, ModelError};
use crate::report::{curves_csv, curves_svg, load_run, table, RunReport};
use crate::sampler::{prefix_candidates, sample_homotoken, SamplerConfig};
use crate::trainer::{
    chunk_windows, evaluate, run_experiment, split_heldout, TrainConfig, TrainError, Variant,
};
use crate::rng::{derive_seed, fnv1a, rng_from_seed};
use crate::vocab::{Vocab, VocabError, VocabFormat};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Alignment(#[from] AlignmentError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Invalid(String),
    #[error("gradient check failed: max relative error {max} exceeds {tolerance}")]
    GradCheckFailed { max: f64, tolerance: f64 },
}

#[derive(Parser)]
#[command(name = "homotok", version, about = "Homotoken augmentation toolkit")]
pub struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Canonical longest-prefix tokenization of a text
    Tokenize(TokenizeArgs),
    /// Sample homotoken segmentations per canonical token
    Sample(SampleArgs),
    /// Emit block-causal masks and position indices for a lengths vector
    Masks(MasksArgs),
    /// Run the finite-difference gradient check suite
    Gradcheck(GradcheckArgs),
    /// Train one experiment variant
    Train(TrainArgs),
    /// Evaluate a checkpoint on the held-out split
    Eval(EvalArgs),
    /// Summarize training logs: table plus loss-curve files
    Report(ReportArgs),
}

#[derive(Args)]
struct VocabArg {
    /// Vocabulary file: .json (GPT-2 layout) or hex line format
    #[arg(long)]
    vocab: PathBuf,
    /// Override the format inferred from the extension
    #[arg(long, value_parser = ["json", "hex"])]
    vocab_format: Option<String>,
}

impl VocabArg {
    fn load(&self) -> Result<Vocab, CliError> {
        let format = match self.vocab_format.as_deref() {
            Some("json") => VocabFormat::Json,
            Some("hex") => VocabFormat::HexLines,
            Some(other) => return Err(CliError::Invalid(format!("unknown vocab format {other}"))),
            None => VocabFormat::from_path(&self.vocab),
        };
        let content = fs::read_to_string(&self.vocab)?;
        Ok(Vocab::load(&content, format)?)
    }
}

#[derive(Args)]
struct TokenizeArgs {
    #[command(flatten)]
    vocab: VocabArg,
    /// Text to tokenize
    #[arg(long, conflicts_with = "file")]
    text: Option<String>,
    /// File whose raw bytes are tokenized
    #[arg(long)]
    file: Option<PathBuf>,
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    vocab: VocabArg,
    #[arg(long)]
    text: String,
    #[arg(long)]
    seed: u64,
    /// Candidate-pool size for the first subtoken
    #[arg(long, default_value_t = 5)]
    top_n: usize,
    /// Re-sample remainder tokens recursively
    #[arg(long, default_value_t = false)]
    recursive: bool,
}

#[derive(Args)]
struct MasksArgs {
    /// Comma-separated group lengths, e.g. 2,1,3
    #[arg(long)]
    lengths: String,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Parameters probed per tensor
    #[arg(long, default_value_t = 20)]
    probes: usize,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

#[derive(Args)]
struct TrainArgs {
    /// TrainConfig as one flat JSON object
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_parser = parse_variant)]
    variant: Variant,
    #[command(flatten)]
    vocab: VocabArg,
    /// Output directory for log.jsonl and checkpoints
    #[arg(long)]
    out: PathBuf,
    /// Override the seed from the config file
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    vocab: VocabArg,
}

#[derive(Args)]
struct ReportArgs {
    /// Log directories (containing log.jsonl) or log files; repeatable
    #[arg(long, required = true, num_args = 1..)]
    log: Vec<PathBuf>,
    /// Directory for curves.csv and curves.svg
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse::<Variant>().map_err(|e| e.to_string())
}

fn lossy(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

#[derive(Serialize)]
struct TokenizeOut {
    ids: Vec<u32>,
    strings: Vec<String>,
    #[serde(rename = "K")]
    k: usize,
}

#[derive(Serialize)]
struct CandidateOut {
    id: u32,
    string: String,
}

#[derive(Serialize)]
struct SampleLine {
    token: String,
    token_id: u32,
    candidates: Vec<CandidateOut>,
    sampled_ids: Vec<u32>,
    sampled_strings: Vec<String>,
}

#[derive(Serialize)]
struct MasksOut {
    lengths: Vec<usize>,
    #[serde(rename = "self")]
    self_mask: Vec<Vec<bool>>,
    cross: Vec<Vec<bool>>,
    intra: Vec<usize>,
    inter: Vec<usize>,
}

#[derive(Serialize)]
struct TrainOut {
    variant: String,
    total_steps: usize,
    best_eval_loss: f64,
    best_step: usize,
    overfit_step: Option<usize>,
    log: String,
}

#[derive(Serialize)]
struct EvalOut {
    eval_loss: f64,
    heldout_windows: usize,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Command::Tokenize(args) => {
            let vocab = args.vocab.load()?;
            let bytes: Vec<u8> = match (&args.text, &args.file) {
                (Some(t), None) => t.clone().into_bytes(),
                (None, Some(p)) => fs::read(p)?,
                _ => return Err(CliError::Invalid("pass exactly one of --text or --file".into())),
            };
            let tok = vocab.encode_canonical(&bytes)?;
            let strings = tok
                .ids
                .iter()
                .map(|&id| vocab.token_bytes(id).map(lossy))
                .collect::<Result<Vec<_>, _>>()?;
            let out = TokenizeOut { ids: tok.ids.clone(), strings, k: tok.k() };
            println!("{}", serde_json::to_string(&out).expect("serializable"));
        }
        Command::Sample(args) => {
            let vocab = args.vocab.load()?;
            let tok = vocab.encode_canonical(args.text.as_bytes())?;
            let config = SamplerConfig { top_n: args.top_n, recursive: args.recursive };
            let mut rng = rng_from_seed(args.seed);
            let stdout = std::io::stdout();
            let mut w = stdout.lock();
            for &id in &tok.ids {
                let pool = prefix_candidates(&vocab, id, config.top_n)?;
                let sampled = sample_homotoken(&vocab, id, &config, &mut rng)?;
                let line = SampleLine {
                    token: lossy(vocab.token_bytes(id)?),
                    token_id: id,
                    candidates: pool
                        .iter()
                        .map(|&c| {
                            Ok(CandidateOut { id: c, string: lossy(vocab.token_bytes(c)?) })
                        })
                        .collect::<Result<Vec<_>, VocabError>>()?,
                    sampled_ids: sampled.clone(),
                    sampled_strings: sampled
                        .iter()
                        .map(|&s| vocab.token_bytes(s).map(lossy))
                        .collect::<Result<Vec<_>, _>>()?,
                };
                writeln!(w, "{}", serde_json::to_string(&line).expect("serializable"))?;
            }
        }
        Command::Masks(args) => {
            let lengths: Vec<usize> = args
                .lengths
                .split(',')
                .map(|s| s.trim().parse::<usize>())
                .collect::<Result<_, _>>()
                .map_err(|e| CliError::Invalid(format!("bad --lengths: {e}")))?;
            let sm = self_mask(&lengths)?;
            let cm = cross_mask(&lengths)?;
            let pos = position_indices(&lengths)?;
            println!("self {}x{}", sm.rows, sm.cols);
            for r in 0..sm.rows {
                let row: String = sm.row(r).iter().map(|&b| if b { '#' } else { '.' }).collect();
                println!("{row}");
            }
            println!("cross {}x{}", cm.rows, cm.cols);
            for r in 0..cm.rows {
                let row: String = cm.row(r).iter().map(|&b| if b { '#' } else { '.' }).collect();
                println!("{row}");
            }
            let out = MasksOut {
                lengths,
                self_mask: sm.to_rows(),
                cross: cm.to_rows(),
                intra: pos.intra,
                inter: pos.inter,
            };
            println!("{}", serde_json::to_string(&out).expect("serializable"));
        }
        Command::Gradcheck(args) => {
            let cfg = gradcheck_config();
            let report = fdcheck::finite_difference_check(&cfg, args.seed, args.probes, 1e-5)?;
            #[derive(Serialize)]
            struct GradOut<'a> {
                max_rel_err: f64,
                probes: usize,
                per_tensor: &'a std::collections::BTreeMap<String, f64>,
            }
            let out = GradOut {
                max_rel_err: report.max_rel_err,
                probes: report.probes,
                per_tensor: &report.per_tensor,
            };
            println!("{}", serde_json::to_string(&out).expect("serializable"));
            if report.max_rel_err > args.tolerance {
                return Err(CliError::GradCheckFailed {
                    max: report.max_rel_err,
                    tolerance: args.tolerance,
                });
            }
        }
        Command::Train(args) => {
            let mut cfg: TrainConfig = serde_json::from_str(&fs::read_to_string(&args.config)?)
                .map_err(|e| CliError::Invalid(format!("config: {e}")))?;
            if let Some(seed) = args.seed {
                cfg.seed = seed;
            }
            if cfg.corpus_path.is_empty() {
                return Err(CliError::Invalid("config.corpus_path is empty".into()));
            }
            let vocab = args.vocab.load()?;
            let corpus = fs::read(&cfg.corpus_path)?;
            fs::create_dir_all(&args.out)?;
            let log_path = args.out.join("log.jsonl");
            let mut log = fs::File::create(&log_path)?;
            let result =
                run_experiment(&cfg, args.variant, &vocab, &corpus, Some(&mut log), Some(&args.out))?;
            let out = TrainOut {
                variant: result.meta.variant.clone(),
                total_steps: result.meta.total_steps,
                best_eval_loss: result.summary.best_eval_loss,
                best_step: result.summary.best_step,
                overfit_step: result.summary.overfit_step,
                log: log_path.display().to_string(),
            };
            println!("{}", serde_json::to_string(&out).expect("serializable"));
        }
        Command::Eval(args) => {
            let cfg: TrainConfig = serde_json::from_str(&fs::read_to_string(&args.config)?)
                .map_err(|e| CliError::Invalid(format!("config: {e}")))?;
            let vocab = args.vocab.load()?;
            let mut f = fs::File::open(&args.checkpoint)?;
            let (model_cfg, params) = load_checkpoint(&mut f)?;
            let corpus = fs::read(&cfg.corpus_path)?;
            let windows = chunk_windows(&vocab, &corpus, model_cfg.context_len)?;
            let (_, heldout) = split_heldout(windows, cfg.heldout_fraction)?;
            let eval_seed = derive_seed(cfg.seed, fnv1a("eval"), 0);
            let loss = evaluate(
                &params,
                &model_cfg,
                &vocab,
                &heldout,
                &cfg.sampler,
                eval_seed,
                cfg.eval_samples,
            )?;
            let out = EvalOut { eval_loss: loss, heldout_windows: heldout.len() };
            println!("{}", serde_json::to_string(&out).expect("serializable"));
        }
        Command::Report(args) => {
            let runs: Vec<RunReport> =
                args.log.iter().map(|p| load_run(p)).collect::<Result<_, _>>()?;
            print!("{}", table(&runs));
            if let Some(out) = &args.out {
                fs::create_dir_all(out)?;
                write_file(&out.join("curves.csv"), curves_csv(&runs).as_bytes())?;
                write_file(&out.join("curves.svg"), curves_svg(&runs).as_bytes())?;
                eprintln!("wrote {} and {}", out.join("curves.csv").display(), out.join("curves.svg").display());
            }
        }
    }
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let mut f = fs::File::create(path)?;
    f.write_all(bytes)?;
    Ok(())
}

/// Small cross-attention-enabled shape for the gradcheck subcommand.
fn gradcheck_config() -> ModelConfig {
    ModelConfig {
        mu: 0.0,
        n_blocks: 2,
        d_model: 16,
        d_enc: 8,
        n_heads: 2,
        n_heads_enc: 2,
        context_len: 8,
        vocab_size: 31,
        max_subtokens_per_token: 4,
        homotokens_enabled: true,
        cross_attn_block: 0,
        attn_dropout_p: 0.0,
        token_noise_sigma: 0.0,
        share_token_embeddings: false,
        encoder_final_norm: true,
    }
}
