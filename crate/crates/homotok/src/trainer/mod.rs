//! Data-constrained pretraining harness: repetition-R epoch streaming,
//! AdamW with cosine decay, fixed-seed evaluation with per-draw homotoken
//! resampling, overfitting-point detection, and the experiment runner that
//! wires all of it together.

pub mod adamw;
pub mod data;

pub use adamw::{adamw_step, cosine_lr, AdamState, OptimSettings};
pub use data::{chunk_windows, split_heldout, ExampleStream};

use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    backward, forward, init, loss, save_checkpoint, ForwardInput, ModelConfig, ModelError,
    Parameters,
};
use crate::rng::{derive_seed, fnv1a, rng_from_seed};
use crate::sampler::{sample_ids, SamplerConfig};
use crate::vocab::{TokenId, Vocab, VocabError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("corpus too short: {tokens} tokens, need at least {needed}")]
    CorpusTooShort { tokens: usize, needed: usize },
    #[error("empty held-out set")]
    EmptyHeldout,
    #[error("non-finite gradient in tensor {tensor}")]
    NonFiniteGradient { tensor: String },
    #[error("schedule step {step} beyond total {total}")]
    StepBeyondSchedule { step: usize, total: usize },
    #[error("invalid train config: {0}")]
    InvalidConfig(String),
    #[error("unknown variant {0:?}")]
    UnknownVariant(String),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("log format: {0}")]
    LogFormat(String),
}

/// Experiment arm: which branch is active and which activation-level
/// perturbation, if any, is switched on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    Baseline,
    Homotok,
    BaselineAttnDropout,
    BaselineTokenNoise,
    HomotokAttnDropout,
    HomotokTokenNoise,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Baseline,
        Variant::Homotok,
        Variant::BaselineAttnDropout,
        Variant::BaselineTokenNoise,
        Variant::HomotokAttnDropout,
        Variant::HomotokTokenNoise,
    ];

    pub fn uses_homotokens(self) -> bool {
        matches!(self, Variant::Homotok | Variant::HomotokAttnDropout | Variant::HomotokTokenNoise)
    }

    pub fn uses_attn_dropout(self) -> bool {
        matches!(self, Variant::BaselineAttnDropout | Variant::HomotokAttnDropout)
    }

    pub fn uses_token_noise(self) -> bool {
        matches!(self, Variant::BaselineTokenNoise | Variant::HomotokTokenNoise)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Homotok => "homotok",
            Variant::BaselineAttnDropout => "baseline+attn_dropout",
            Variant::BaselineTokenNoise => "baseline+token_noise",
            Variant::HomotokAttnDropout => "homotok+attn_dropout",
            Variant::HomotokTokenNoise => "homotok+token_noise",
        }
    }
}

impl FromStr for Variant {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Variant, TrainError> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| TrainError::UnknownVariant(s.to_string()))
    }
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.95
}
fn default_eps() -> f64 {
    1e-10
}
fn default_wd() -> f64 {
    0.01
}
fn default_heldout() -> f64 {
    0.1
}
fn default_eval_samples() -> usize {
    1
}
fn default_overfit_margin() -> f64 {
    0.005
}
fn default_overfit_window() -> usize {
    3
}

/// Full training recipe; serialized as one flat JSON object with nested
/// `model` and `sampler` sections.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Repetition factor R: passes over the training windows.
    pub repetitions: usize,
    pub base_lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_wd")]
    pub weight_decay: f64,
    pub batch_size: usize,
    /// None derives the step count from exact data accounting:
    /// ceil(train_windows * R / batch_size). Some(n) caps a run at n steps
    /// (the stream keeps cycling with fresh epoch shuffles).
    #[serde(default)]
    pub total_steps: Option<usize>,
    pub eval_every: usize,
    pub seed: u64,
    #[serde(default)]
    pub corpus_path: String,
    #[serde(default = "default_heldout")]
    pub heldout_fraction: f64,
    /// Homotoken draws averaged per held-out window during evaluation.
    #[serde(default = "default_eval_samples")]
    pub eval_samples: usize,
    #[serde(default)]
    pub checkpoint_every_evals: Option<usize>,
    #[serde(default = "default_overfit_margin")]
    pub overfit_margin: f64,
    #[serde(default = "default_overfit_window")]
    pub overfit_window: usize,
    pub model: ModelConfig,
    #[serde(default)]
    pub sampler: SamplerConfig,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.repetitions == 0 {
            return Err(TrainError::InvalidConfig("repetitions must be >= 1".into()));
        }
        if self.batch_size == 0 || self.eval_every == 0 {
            return Err(TrainError::InvalidConfig("batch_size and eval_every must be >= 1".into()));
        }
        if self.base_lr <= 0.0 || !self.base_lr.is_finite() {
            return Err(TrainError::InvalidConfig(format!("base_lr {} must be positive", self.base_lr)));
        }
        if self.eval_samples == 0 {
            return Err(TrainError::InvalidConfig("eval_samples must be >= 1".into()));
        }
        self.model.validate()?;
        Ok(())
    }

    pub fn optim(&self, total_steps: usize) -> OptimSettings {
        OptimSettings {
            base_lr: self.base_lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
            total_steps,
        }
    }

    /// Model config with the variant's switches applied.
    pub fn model_for(&self, variant: Variant) -> ModelConfig {
        let mut m = self.model.clone();
        m.homotokens_enabled = variant.uses_homotokens();
        if !variant.uses_attn_dropout() {
            m.attn_dropout_p = 0.0;
        }
        if !variant.uses_token_noise() {
            m.token_noise_sigma = 0.0;
        }
        m
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunMeta {
    pub variant: String,
    pub repetitions: usize,
    pub seed: u64,
    pub total_steps: usize,
    pub train_windows: usize,
    pub heldout_windows: usize,
    pub batch_size: usize,
    pub context_len: usize,
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_blocks: usize,
    pub param_count: usize,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: usize,
    pub train_loss: f64,
    pub eval_loss: f64,
    pub lr: f64,
    pub wall_ms: u64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TrainSummary {
    pub best_eval_loss: f64,
    pub best_step: usize,
    pub overfit_step: Option<usize>,
    pub overfit_margin: f64,
    pub overfit_window: usize,
}

#[derive(Clone, Debug)]
pub struct TrainLog {
    pub meta: RunMeta,
    pub records: Vec<EvalRecord>,
    pub summary: TrainSummary,
}

/// One line of the on-disk JSONL log.
#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogLine {
    Meta(RunMeta),
    Eval(EvalRecord),
    Summary(TrainSummary),
}

/// Token-weighted mean NLL over held-out windows with fixed-seed homotoken
/// sampling: window i, draw s uses the rng stream derived from
/// (eval_seed, i, s), making evaluation a pure function of the parameters.
pub fn evaluate(
    params: &Parameters,
    model_cfg: &ModelConfig,
    vocab: &Vocab,
    heldout: &[Vec<TokenId>],
    sampler: &SamplerConfig,
    eval_seed: u64,
    eval_samples: usize,
) -> Result<f64, TrainError> {
    if heldout.is_empty() {
        return Err(TrainError::EmptyHeldout);
    }
    let mut total_nll = 0.0;
    let mut total_positions = 0usize;
    for (i, window) in heldout.iter().enumerate() {
        let targets = shifted_targets(window);
        for s in 0..eval_samples {
            let homo = if model_cfg.homotokens_enabled {
                let mut rng = rng_from_seed(derive_seed(eval_seed, i as u64, s as u64));
                Some(sample_ids(vocab, window, sampler, &mut rng)?)
            } else {
                None
            };
            let input = ForwardInput { canonical_ids: window, homotoken: homo.as_ref() };
            let pass = forward(params, model_cfg, &input, None)?;
            let nll = loss(&pass.logits, &targets)?;
            let positions = window.len() - 1;
            total_nll += nll * positions as f64;
            total_positions += positions;
        }
    }
    if total_positions == 0 {
        return Err(TrainError::EmptyHeldout);
    }
    Ok(total_nll / total_positions as f64)
}

fn shifted_targets(window: &[TokenId]) -> Vec<TokenId> {
    let mut t: Vec<TokenId> = window[1..].to_vec();
    t.push(window[window.len() - 1]); // final position is masked out of the loss
    t
}

/// First eval step after which the loss exceeds its running minimum by a
/// relative margin for `window` consecutive evals; None if that never
/// happens (or with fewer than 3 points).
pub fn detect_overfit_step(curve: &[(usize, f64)], margin: f64, window: usize) -> Option<usize> {
    if curve.len() < 3 || window == 0 {
        return None;
    }
    let mut min = f64::INFINITY;
    let mut run_start: Option<usize> = None;
    for (i, &(step, v)) in curve.iter().enumerate() {
        let _ = step;
        if v > min * (1.0 + margin) {
            let start = *run_start.get_or_insert(i);
            if i - start + 1 >= window {
                return Some(curve[start].0);
            }
        } else {
            run_start = None;
            if v < min {
                min = v;
            }
        }
    }
    None
}

fn batch_pool() -> Result<rayon::ThreadPool, TrainError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("HOMOTOK_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n >= 1 => builder = builder.num_threads(n),
            _ => {
                return Err(TrainError::InvalidConfig(format!(
                    "HOMOTOK_THREADS={v} is not a positive integer"
                )))
            }
        }
    }
    builder
        .build()
        .map_err(|e| TrainError::InvalidConfig(format!("thread pool: {e}")))
}

fn write_line<W: Write>(w: &mut Option<&mut W>, line: &LogLine) -> Result<(), TrainError> {
    if let Some(w) = w.as_deref_mut() {
        serde_json::to_writer(&mut *w, line).map_err(|e| TrainError::LogFormat(e.to_string()))?;
        w.write_all(b"\n")?;
        w.flush()?;
    }
    Ok(())
}

/// Full training loop for one variant. The log is written incrementally
/// (meta line, one line per eval, then a summary line), so a partial log
/// survives an abort. Batch examples are assembled and differentiated in
/// parallel (capped by HOMOTOK_THREADS) with per-example derived rng
/// streams; gradients are reduced in slot order, so the result is
/// bit-identical regardless of thread count.
pub fn run_experiment<W: Write>(
    cfg: &TrainConfig,
    variant: Variant,
    vocab: &Vocab,
    corpus: &[u8],
    mut log: Option<&mut W>,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainLog, TrainError> {
    cfg.validate()?;
    let model_cfg = cfg.model_for(variant);
    let windows = chunk_windows(vocab, corpus, model_cfg.context_len)?;
    let (train_windows, heldout) = split_heldout(windows, cfg.heldout_fraction)?;

    let derived_steps = (train_windows.len() * cfg.repetitions).div_ceil(cfg.batch_size);
    let total_steps = cfg.total_steps.unwrap_or(derived_steps);
    if total_steps == 0 {
        return Err(TrainError::InvalidConfig("zero training steps".into()));
    }
    if cfg.eval_every > total_steps {
        return Err(TrainError::InvalidConfig(format!(
            "eval_every {} exceeds total steps {total_steps}",
            cfg.eval_every
        )));
    }
    // examples to consume: exact accounting unless a step budget is set
    let total_examples = match cfg.total_steps {
        Some(steps) => steps * cfg.batch_size,
        None => train_windows.len() * cfg.repetitions,
    };

    let mut params = init(&model_cfg, derive_seed(cfg.seed, fnv1a("init"), 0))?;
    let mut state = AdamState::new(&params);
    let opt = cfg.optim(total_steps);
    let data_seed = derive_seed(cfg.seed, fnv1a("data"), 0);
    let example_base = derive_seed(cfg.seed, fnv1a("example"), 0);
    let eval_seed = derive_seed(cfg.seed, fnv1a("eval"), 0);
    let mut stream = ExampleStream::new(train_windows.len(), data_seed);
    let pool = batch_pool()?;

    let meta = RunMeta {
        variant: variant.name().to_string(),
        repetitions: cfg.repetitions,
        seed: cfg.seed,
        total_steps,
        train_windows: train_windows.len(),
        heldout_windows: heldout.len(),
        batch_size: cfg.batch_size,
        context_len: model_cfg.context_len,
        vocab_size: model_cfg.vocab_size,
        d_model: model_cfg.d_model,
        n_blocks: model_cfg.n_blocks,
        param_count: params.param_count(),
    };
    write_line(&mut log, &LogLine::Meta(meta.clone()))?;

    let started = Instant::now();
    let mut records: Vec<EvalRecord> = Vec::new();
    let mut consumed = 0usize;
    let mut evals_done = 0usize;
    for step in 0..total_steps {
        let take = cfg.batch_size.min(total_examples - consumed);
        if take == 0 {
            break;
        }
        let batch: Vec<usize> = stream.by_ref().take(take).collect();
        consumed += take;

        let results: Vec<Result<(f64, Parameters), TrainError>> = pool.install(|| {
            batch
                .par_iter()
                .enumerate()
                .map(|(slot, &widx)| {
                    let window = &train_windows[widx];
                    let mut rng =
                        rng_from_seed(derive_seed(example_base, step as u64, slot as u64));
                    let homo = if model_cfg.homotokens_enabled {
                        Some(sample_ids(vocab, window, &cfg.sampler, &mut rng)?)
                    } else {
                        None
                    };
                    let targets = shifted_targets(window);
                    let input = ForwardInput { canonical_ids: window, homotoken: homo.as_ref() };
                    let (l, grads) =
                        backward(&params, &model_cfg, &input, &targets, Some(&mut rng))?;
                    Ok((l, grads))
                })
                .collect()
        });

        let mut grad_sum: Option<Parameters> = None;
        let mut loss_sum = 0.0;
        for r in results {
            let (l, g) = r?;
            loss_sum += l;
            match &mut grad_sum {
                Some(acc) => acc.add_assign(&g),
                None => grad_sum = Some(g),
            }
        }
        let mut grads = grad_sum.expect("non-empty batch");
        grads.scale(1.0 / take as f64);
        let train_loss = loss_sum / take as f64;

        adamw_step(&mut params, &grads, &mut state, step, &opt)?;

        if (step + 1) % cfg.eval_every == 0 {
            let eval_loss = evaluate(
                &params,
                &model_cfg,
                vocab,
                &heldout,
                &cfg.sampler,
                eval_seed,
                cfg.eval_samples,
            )?;
            let record = EvalRecord {
                step: step + 1,
                train_loss,
                eval_loss,
                lr: cosine_lr(step, total_steps, cfg.base_lr)?,
                wall_ms: started.elapsed().as_millis() as u64,
            };
            write_line(&mut log, &LogLine::Eval(record))?;
            records.push(record);
            evals_done += 1;
            if let (Some(dir), Some(every)) = (checkpoint_dir, cfg.checkpoint_every_evals) {
                if every > 0 && evals_done % every == 0 {
                    let path = dir.join(format!("checkpoint_step{:06}.htck", step + 1));
                    let mut f = std::fs::File::create(path)?;
                    save_checkpoint(&mut f, &model_cfg, &params)?;
                }
            }
        }
    }

    if let Some(dir) = checkpoint_dir {
        let mut f = std::fs::File::create(dir.join("checkpoint_final.htck"))?;
        save_checkpoint(&mut f, &model_cfg, &params)?;
    }

    let summary = summarize(&records, cfg.overfit_margin, cfg.overfit_window);
    write_line(&mut log, &LogLine::Summary(summary))?;
    Ok(TrainLog { meta, records, summary })
}

pub fn summarize(records: &[EvalRecord], margin: f64, window: usize) -> TrainSummary {
    let mut best_eval_loss = f64::INFINITY;
    let mut best_step = 0;
    for r in records {
        if r.eval_loss < best_eval_loss {
            best_eval_loss = r.eval_loss;
            best_step = r.step;
        }
    }
    let curve: Vec<(usize, f64)> = records.iter().map(|r| (r.step, r.eval_loss)).collect();
    TrainSummary {
        best_eval_loss,
        best_step,
        overfit_step: detect_overfit_step(&curve, margin, window),
        overfit_margin: margin,
        overfit_window: window,
    }
}
