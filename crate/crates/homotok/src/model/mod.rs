//! Dual-branch causal language model: a decoder trunk over canonical tokens
//! plus a single-block causal encoder over the homotoken stream, fused by
//! block-causal cross-attention inside one trunk block.
//!
//! The whole model runs in f64 with a fixed operation order, so probe tests
//! can assert exact equality and gradients can be checked against central
//! finite differences.

mod backward;
mod checkpoint;
pub mod fdcheck;
mod forward;
mod ops;

pub use backward::backward;
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use forward::{encode_homotokens, forward, loss, Cache, ForwardInput, ForwardPass};
pub use ops::{attention_dropout, token_noise};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::rng::{derive_seed, fnv1a, rng_from_seed};
use crate::tensor::Tensor;
use rand_distr::Distribution;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("{0}")]
    ShapeMismatch(String),
    #[error("homotokens enabled but no homotoken sequence supplied")]
    MissingHomotokens,
    #[error("intra-token position {index} exceeds max_subtokens_per_token {max}")]
    IntraIndexOutOfRange { index: usize, max: usize },
    #[error("sequence length {k} exceeds context_len {max}")]
    SequenceTooLong { k: usize, max: usize },
    #[error("token id {0} out of vocab range {1}")]
    TokenOutOfRange(u32, usize),
    #[error("loss needs at least 2 positions, got {0}")]
    NoTargets(usize),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("alignment: {0}")]
    Alignment(#[from] crate::alignment::AlignmentError),
    #[error("checkpoint io: {0}")]
    CheckpointIo(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    CheckpointFormat(String),
}

/// Shape of the dual-branch transformer. `mu` is the width multiplier the
/// defaults are derived from; `d_model` itself is what the code uses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub mu: f64,
    pub n_blocks: usize,
    pub d_model: usize,
    pub d_enc: usize,
    pub n_heads: usize,
    pub n_heads_enc: usize,
    pub context_len: usize,
    pub vocab_size: usize,
    /// Size of the intra-token position table; longer groups are an error.
    pub max_subtokens_per_token: usize,
    pub homotokens_enabled: bool,
    /// Trunk block that hosts the cross-attention sub-layer (0-based).
    pub cross_attn_block: usize,
    pub attn_dropout_p: f64,
    pub token_noise_sigma: f64,
    /// Encoder reuses the trunk token-embedding table (requires
    /// d_enc == d_model). Off by default so the branch stays removable.
    #[serde(default)]
    pub share_token_embeddings: bool,
    /// Apply an RMSNorm to the encoder output before cross-attention.
    #[serde(default = "default_true")]
    pub encoder_final_norm: bool,
}

fn default_true() -> bool {
    true
}

impl ModelConfig {
    /// Full-scale shape from the width multiplier: 8 blocks of width
    /// 512*mu, a 256-wide encoder, 512-token context, GPT-2-sized vocab.
    pub fn paper_default(mu: f64) -> ModelConfig {
        let d_model = (512.0 * mu).round() as usize;
        ModelConfig {
            mu,
            n_blocks: 8,
            d_model,
            d_enc: 256,
            n_heads: (d_model / 64).max(1),
            n_heads_enc: 4,
            context_len: 512,
            vocab_size: 50257,
            max_subtokens_per_token: 32,
            homotokens_enabled: true,
            cross_attn_block: 0,
            attn_dropout_p: 0.0,
            token_noise_sigma: 0.0,
            share_token_embeddings: false,
            encoder_final_norm: true,
        }
    }

    /// Small shape for laptop-scale experiments.
    pub fn desk_default(vocab_size: usize) -> ModelConfig {
        ModelConfig {
            mu: 0.25,
            n_blocks: 4,
            d_model: 128,
            d_enc: 64,
            n_heads: 4,
            n_heads_enc: 2,
            context_len: 128,
            vocab_size,
            max_subtokens_per_token: 16,
            homotokens_enabled: true,
            cross_attn_block: 0,
            attn_dropout_p: 0.0,
            token_noise_sigma: 0.0,
            share_token_embeddings: false,
            encoder_final_norm: true,
        }
    }

    pub fn d_ff(&self) -> usize {
        4 * self.d_model
    }

    pub fn d_ff_enc(&self) -> usize {
        4 * self.d_enc
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn head_dim_enc(&self) -> usize {
        self.d_enc / self.n_heads_enc
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: String| Err(ModelError::InvalidConfig(msg));
        if self.d_model == 0 || self.n_blocks == 0 || self.vocab_size == 0 || self.context_len == 0
        {
            return fail("d_model, n_blocks, vocab_size, context_len must be positive".into());
        }
        if self.d_model % self.n_heads != 0 {
            return fail(format!("d_model {} not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if self.cross_attn_block >= self.n_blocks {
            return fail(format!(
                "cross_attn_block {} out of range for {} blocks",
                self.cross_attn_block, self.n_blocks
            ));
        }
        if !(0.0..1.0).contains(&self.attn_dropout_p) {
            return fail(format!("attn_dropout_p {} must be in [0, 1)", self.attn_dropout_p));
        }
        if self.token_noise_sigma < 0.0 {
            return fail(format!("token_noise_sigma {} must be >= 0", self.token_noise_sigma));
        }
        if self.homotokens_enabled {
            if self.d_enc == 0 || self.d_enc % self.n_heads_enc != 0 {
                return fail(format!(
                    "d_enc {} not divisible by n_heads_enc {}",
                    self.d_enc, self.n_heads_enc
                ));
            }
            if self.max_subtokens_per_token == 0 {
                return fail("max_subtokens_per_token must be positive".into());
            }
            if self.share_token_embeddings && self.d_enc != self.d_model {
                return fail(format!(
                    "shared token embeddings need d_enc == d_model, got {} vs {}",
                    self.d_enc, self.d_model
                ));
            }
        }
        Ok(())
    }
}

/// Named weight tensors. Doubles as the gradient map: `backward` returns a
/// value with exactly the same keys and shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters {
    pub tensors: BTreeMap<String, Tensor>,
}

/// Gradients share the container type with parameters.
pub type Gradients = Parameters;

impl Parameters {
    pub fn get(&self, name: &str) -> &Tensor {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("missing tensor {name:?}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        self.tensors
            .get_mut(name)
            .unwrap_or_else(|| panic!("missing tensor {name:?}"))
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Same keys, all-zero tensors — the starting point for gradient
    /// accumulation.
    pub fn zeros_like(&self) -> Parameters {
        Parameters {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(&v.shape)))
                .collect(),
        }
    }

    /// Tensor-wise `self += other`; keys must match.
    pub fn add_assign(&mut self, other: &Parameters) {
        assert_eq!(self.tensors.len(), other.tensors.len(), "key mismatch");
        for (name, t) in &other.tensors {
            self.get_mut(name).add_assign(t);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors.values_mut() {
            t.scale(s);
        }
    }
}

/// Every tensor's shape as a pure function of the config.
pub fn tensor_shapes(cfg: &ModelConfig) -> BTreeMap<String, Vec<usize>> {
    let d = cfg.d_model;
    let ff = cfg.d_ff();
    let mut shapes = BTreeMap::new();
    let mut put = |name: String, shape: Vec<usize>| {
        shapes.insert(name, shape);
    };

    put("trunk.tok_emb".into(), vec![cfg.vocab_size, d]);
    put("trunk.pos_emb".into(), vec![cfg.context_len, d]);
    for b in 0..cfg.n_blocks {
        let p = format!("trunk.block{b:02}");
        put(format!("{p}.attn_norm.g"), vec![d]);
        for w in ["wq", "wk", "wv", "wo"] {
            put(format!("{p}.attn.{w}"), vec![d, d]);
        }
        if cfg.homotokens_enabled && b == cfg.cross_attn_block {
            put(format!("{p}.cross_norm.g"), vec![d]);
            put(format!("{p}.cross.wq"), vec![d, d]);
            put(format!("{p}.cross.wk"), vec![cfg.d_enc, d]);
            put(format!("{p}.cross.wv"), vec![cfg.d_enc, d]);
            put(format!("{p}.cross.wo"), vec![d, d]);
        }
        put(format!("{p}.ffn_norm.g"), vec![d]);
        put(format!("{p}.ffn.wg"), vec![d, ff]);
        put(format!("{p}.ffn.wu"), vec![d, ff]);
        put(format!("{p}.ffn.wd"), vec![ff, d]);
    }
    put("trunk.final_norm.g".into(), vec![d]);
    put("unembed".into(), vec![d, cfg.vocab_size]);

    if cfg.homotokens_enabled {
        let de = cfg.d_enc;
        let ffe = cfg.d_ff_enc();
        if !cfg.share_token_embeddings {
            put("enc.tok_emb".into(), vec![cfg.vocab_size, de]);
        }
        put("enc.intra_emb".into(), vec![cfg.max_subtokens_per_token, de]);
        put("enc.inter_emb".into(), vec![cfg.context_len, de]);
        put("enc.block.attn_norm.g".into(), vec![de]);
        for w in ["wq", "wk", "wv", "wo"] {
            put(format!("enc.block.attn.{w}"), vec![de, de]);
        }
        put("enc.block.ffn_norm.g".into(), vec![de]);
        put("enc.block.ffn.wg".into(), vec![de, ffe]);
        put("enc.block.ffn.wu".into(), vec![de, ffe]);
        put("enc.block.ffn.wd".into(), vec![ffe, de]);
        if cfg.encoder_final_norm {
            put("enc.final_norm.g".into(), vec![de]);
        }
    }
    shapes
}

/// Closed-form parameter count; must equal the allocated element count.
pub fn param_count_formula(cfg: &ModelConfig) -> usize {
    let d = cfg.d_model;
    let v = cfg.vocab_size;
    let block = 4 * d * d + 12 * d * d + 2 * d; // attention + SwiGLU + two gains
    let cross = if cfg.homotokens_enabled {
        2 * d * d + 2 * cfg.d_enc * d + d
    } else {
        0
    };
    let trunk = v * d + cfg.context_len * d + cfg.n_blocks * block + cross + d + d * v;
    let enc = if cfg.homotokens_enabled {
        let de = cfg.d_enc;
        let tok = if cfg.share_token_embeddings { 0 } else { v * de };
        tok + cfg.max_subtokens_per_token * de
            + cfg.context_len * de
            + 4 * de * de
            + 12 * de * de
            + 2 * de
            + if cfg.encoder_final_norm { de } else { 0 }
    } else {
        0
    };
    trunk + enc
}

// Residual-output projections get a smaller init so deep stacks start with
// modest residual updates.
fn is_residual_out(name: &str) -> bool {
    name.ends_with(".attn.wo") || name.ends_with(".cross.wo") || name.ends_with(".ffn.wd")
}

/// Initialize parameters: N(0, 0.02) for embeddings and projections, ones
/// for norm gains, residual-output projections scaled by 1/sqrt(2*depth).
/// Each tensor draws from its own seed stream (derived from the tensor
/// name), so values do not depend on map iteration order.
pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Parameters, ModelError> {
    cfg.validate()?;
    let mut tensors = BTreeMap::new();
    for (name, shape) in tensor_shapes(cfg) {
        let mut t = Tensor::zeros(&shape);
        if name.ends_with(".g") {
            t.data.fill(1.0);
        } else {
            let depth = if name.starts_with("enc.") { 1 } else { cfg.n_blocks };
            let std = if is_residual_out(&name) {
                0.02 / (2.0 * depth as f64).sqrt()
            } else {
                0.02
            };
            let normal = rand_distr::Normal::new(0.0, std).expect("std is finite");
            let mut rng = rng_from_seed(derive_seed(seed, fnv1a(&name), 0));
            for x in &mut t.data {
                *x = normal.sample(&mut rng);
            }
        }
        tensors.insert(name, t);
    }
    Ok(Parameters { tensors })
}
