//! Forward pass of the dual-branch model.
//!
//! Per example (no batch dimension; batching is a loop at the trainer
//! level): the encoder branch embeds the homotoken stream with token,
//! intra- and inter-position embeddings and runs one pre-norm transformer
//! block under the block-causal self mask. The trunk is a standard pre-norm
//! causal decoder over canonical tokens; inside block `cross_attn_block` an
//! extra cross-attention sub-layer (own pre-norm, own residual) attends
//! from trunk states to the encoder output under the block-causal cross
//! mask. Logits at position t parameterize the next-canonical-token
//! distribution.
//!
//! In training mode (an rng is supplied) the randomness is consumed in a
//! fixed order: encoder embedding noise, encoder attention dropout, trunk
//! embedding noise, then per trunk block self-attention dropout followed by
//! cross-attention dropout.

use rand_chacha::ChaCha8Rng;

use super::ops::{
    attention_forward, rmsnorm_forward, swiglu_forward, token_noise, AttnCache, AttnWeights,
    FfnCache, NormCache,
};
use super::{ModelConfig, ModelError, Parameters};
use crate::alignment::{cross_mask, position_indices, self_mask, BlockMask};
use crate::sampler::HomotokenSequence;
use crate::tensor::{matmul, Tensor};
use crate::vocab::TokenId;

/// One training/eval example. The homotoken stream is ignored when the
/// config has homotokens disabled.
#[derive(Clone, Copy, Debug)]
pub struct ForwardInput<'a> {
    pub canonical_ids: &'a [TokenId],
    pub homotoken: Option<&'a HomotokenSequence>,
}

pub(crate) struct BlockCache {
    pub attn_norm: NormCache,
    pub attn: AttnCache,
    pub cross: Option<(NormCache, AttnCache)>,
    pub ffn_norm: NormCache,
    pub ffn: FfnCache,
}

pub(crate) struct EncCache {
    pub block: BlockCache,
    pub final_norm: Option<NormCache>,
    pub flat_ids: Vec<TokenId>,
    pub intra: Vec<usize>,
    pub inter: Vec<usize>,
}

/// Everything backward needs to replay the pass.
pub struct Cache {
    pub(crate) canonical_ids: Vec<TokenId>,
    pub(crate) enc: Option<EncCache>,
    pub(crate) blocks: Vec<BlockCache>,
    pub(crate) final_norm: NormCache,
    pub(crate) final_normed: Tensor,
}

pub struct ForwardPass {
    /// K x vocab_size.
    pub logits: Tensor,
    pub(crate) cache: Cache,
}

fn validate_input(cfg: &ModelConfig, input: &ForwardInput) -> Result<(), ModelError> {
    let k = input.canonical_ids.len();
    if k > cfg.context_len {
        return Err(ModelError::SequenceTooLong { k, max: cfg.context_len });
    }
    for &id in input.canonical_ids {
        if id as usize >= cfg.vocab_size {
            return Err(ModelError::TokenOutOfRange(id, cfg.vocab_size));
        }
    }
    if cfg.homotokens_enabled {
        let homo = input.homotoken.ok_or(ModelError::MissingHomotokens)?;
        if homo.k() != k {
            return Err(ModelError::LengthMismatch(format!(
                "homotoken K {} != canonical K {k}",
                homo.k()
            )));
        }
        if homo.k_prime() > cfg.context_len * cfg.max_subtokens_per_token {
            return Err(ModelError::SequenceTooLong {
                k: homo.k_prime(),
                max: cfg.context_len * cfg.max_subtokens_per_token,
            });
        }
        for &id in &homo.flat_ids {
            if id as usize >= cfg.vocab_size {
                return Err(ModelError::TokenOutOfRange(id, cfg.vocab_size));
            }
        }
    }
    Ok(())
}

fn enc_tok_table<'a>(params: &'a Parameters, cfg: &ModelConfig) -> &'a Tensor {
    if cfg.share_token_embeddings {
        params.get("trunk.tok_emb")
    } else {
        params.get("enc.tok_emb")
    }
}

struct CrossCtx<'a> {
    enc_out: &'a Tensor,
    mask: &'a BlockMask,
}

/// One pre-norm transformer block; `prefix` selects the weight names.
fn block_forward(
    params: &Parameters,
    prefix: &str,
    x: &Tensor,
    mask: &BlockMask,
    n_heads: usize,
    cross: Option<CrossCtx<'_>>,
    dropout_p: f64,
    train_rng: &mut Option<&mut ChaCha8Rng>,
) -> Result<(Tensor, BlockCache), ModelError> {
    let (xn, attn_norm) = rmsnorm_forward(x, params.get(&format!("{prefix}.attn_norm.g")));
    let w = AttnWeights {
        wq: params.get(&format!("{prefix}.attn.wq")),
        wk: params.get(&format!("{prefix}.attn.wk")),
        wv: params.get(&format!("{prefix}.attn.wv")),
        wo: params.get(&format!("{prefix}.attn.wo")),
    };
    let (attn_out, attn) =
        attention_forward(&xn, &xn, &w, mask, n_heads, dropout_p, train_rng.as_deref_mut())?;
    let mut x1 = x.clone();
    x1.add_assign(&attn_out);

    let (x2, cross_cache) = if let Some(ctx) = cross {
        let (xn2, cross_norm) = rmsnorm_forward(&x1, params.get(&format!("{prefix}.cross_norm.g")));
        let cw = AttnWeights {
            wq: params.get(&format!("{prefix}.cross.wq")),
            wk: params.get(&format!("{prefix}.cross.wk")),
            wv: params.get(&format!("{prefix}.cross.wv")),
            wo: params.get(&format!("{prefix}.cross.wo")),
        };
        let (cross_out, cross_attn) = attention_forward(
            &xn2,
            ctx.enc_out,
            &cw,
            ctx.mask,
            n_heads,
            dropout_p,
            train_rng.as_deref_mut(),
        )?;
        let mut x2 = x1.clone();
        x2.add_assign(&cross_out);
        (x2, Some((cross_norm, cross_attn)))
    } else {
        (x1, None)
    };

    let (xn3, ffn_norm) = rmsnorm_forward(&x2, params.get(&format!("{prefix}.ffn_norm.g")));
    let (ffn_out, ffn) = swiglu_forward(
        &xn3,
        params.get(&format!("{prefix}.ffn.wg")),
        params.get(&format!("{prefix}.ffn.wu")),
        params.get(&format!("{prefix}.ffn.wd")),
    );
    let mut x3 = x2;
    x3.add_assign(&ffn_out);
    Ok((x3, BlockCache { attn_norm, attn, cross: cross_cache, ffn_norm, ffn }))
}

fn encode_cached(
    params: &Parameters,
    cfg: &ModelConfig,
    homo: &HomotokenSequence,
    train_rng: &mut Option<&mut ChaCha8Rng>,
) -> Result<(Tensor, EncCache), ModelError> {
    let kp = homo.k_prime();
    let pos = position_indices(&homo.group_lengths)?;
    for (&j, &id) in pos.intra.iter().zip(&homo.flat_ids) {
        if j >= cfg.max_subtokens_per_token {
            return Err(ModelError::IntraIndexOutOfRange { index: j, max: cfg.max_subtokens_per_token });
        }
        let _ = id;
    }

    let tok = enc_tok_table(params, cfg);
    let intra_t = params.get("enc.intra_emb");
    let inter_t = params.get("enc.inter_emb");
    let de = cfg.d_enc;
    let mut emb = Tensor::zeros(&[kp, de]);
    for j in 0..kp {
        let row = emb.row_mut(j);
        let t = tok.row(homo.flat_ids[j] as usize);
        let a = intra_t.row(pos.intra[j]);
        let b = inter_t.row(pos.inter[j]);
        for c in 0..de {
            row[c] = t[c] + a[c] + b[c];
        }
    }
    if let Some(rng) = train_rng.as_deref_mut() {
        if cfg.token_noise_sigma > 0.0 {
            token_noise(&mut emb, cfg.token_noise_sigma, rng)?;
        }
    }

    let mask = self_mask(&homo.group_lengths)?;
    let (x, block) = block_forward(
        params,
        "enc.block",
        &emb,
        &mask,
        cfg.n_heads_enc,
        None,
        cfg.attn_dropout_p,
        train_rng,
    )?;

    let (out, final_norm) = if cfg.encoder_final_norm {
        let (y, c) = rmsnorm_forward(&x, params.get("enc.final_norm.g"));
        (y, Some(c))
    } else {
        (x, None)
    };
    let cache = EncCache {
        block,
        final_norm,
        flat_ids: homo.flat_ids.clone(),
        intra: pos.intra,
        inter: pos.inter,
    };
    Ok((out, cache))
}

/// Encoder branch on its own: embeddings plus one block under the
/// block-causal self mask, K' x d_enc. Runs in eval mode.
pub fn encode_homotokens(
    params: &Parameters,
    cfg: &ModelConfig,
    homo: &HomotokenSequence,
) -> Result<Tensor, ModelError> {
    cfg.validate()?;
    if !cfg.homotokens_enabled {
        return Err(ModelError::InvalidConfig("homotokens are disabled in this config".into()));
    }
    let mut no_rng: Option<&mut ChaCha8Rng> = None;
    let (out, _) = encode_cached(params, cfg, homo, &mut no_rng)?;
    Ok(out)
}

/// Full forward pass. Supplying an rng selects training mode (dropout and
/// embedding noise active); `None` is eval mode.
pub fn forward(
    params: &Parameters,
    cfg: &ModelConfig,
    input: &ForwardInput,
    train_rng: Option<&mut ChaCha8Rng>,
) -> Result<ForwardPass, ModelError> {
    cfg.validate()?;
    validate_input(cfg, input)?;
    let mut train_rng = train_rng;
    let k = input.canonical_ids.len();

    // Encoder branch first: trunk block `cross_attn_block` consumes it.
    let (enc_out, enc_cache) = if cfg.homotokens_enabled {
        let homo = input.homotoken.expect("validated");
        if homo.k_prime() > 0 {
            let (out, cache) = encode_cached(params, cfg, homo, &mut train_rng)?;
            (Some(out), Some(cache))
        } else {
            (None, None)
        }
    } else {
        (None, None)
    };

    let d = cfg.d_model;
    let tok = params.get("trunk.tok_emb");
    let pos = params.get("trunk.pos_emb");
    let mut x = Tensor::zeros(&[k, d]);
    for t in 0..k {
        let row = x.row_mut(t);
        let e = tok.row(input.canonical_ids[t] as usize);
        let p = pos.row(t);
        for c in 0..d {
            row[c] = e[c] + p[c];
        }
    }
    if let Some(rng) = train_rng.as_deref_mut() {
        if cfg.token_noise_sigma > 0.0 {
            token_noise(&mut x, cfg.token_noise_sigma, rng)?;
        }
    }

    let causal = BlockMask::causal(k);
    let xmask = enc_out
        .as_ref()
        .map(|_| cross_mask(&input.homotoken.expect("validated").group_lengths))
        .transpose()?;

    let mut blocks = Vec::with_capacity(cfg.n_blocks);
    for b in 0..cfg.n_blocks {
        let cross = match (&enc_out, &xmask) {
            (Some(e), Some(m)) if b == cfg.cross_attn_block => Some(CrossCtx { enc_out: e, mask: m }),
            _ => None,
        };
        let (next, cache) = block_forward(
            params,
            &format!("trunk.block{b:02}"),
            &x,
            &causal,
            cfg.n_heads,
            cross,
            cfg.attn_dropout_p,
            &mut train_rng,
        )?;
        x = next;
        blocks.push(cache);
    }

    let (final_normed, final_norm) = rmsnorm_forward(&x, params.get("trunk.final_norm.g"));
    let logits = matmul(&final_normed, params.get("unembed"));

    Ok(ForwardPass {
        logits,
        cache: Cache {
            canonical_ids: input.canonical_ids.to_vec(),
            enc: enc_cache,
            blocks,
            final_norm,
            final_normed,
        },
    })
}

/// Mean next-token negative log-likelihood in nats. `targets` must be the
/// canonical ids shifted left by one; the final position is masked out and
/// its entry ignored.
pub fn loss(logits: &Tensor, targets: &[TokenId]) -> Result<f64, ModelError> {
    let (l, _) = loss_with_grad(logits, targets, false)?;
    Ok(l)
}

pub(crate) fn loss_with_grad(
    logits: &Tensor,
    targets: &[TokenId],
    want_grad: bool,
) -> Result<(f64, Option<Tensor>), ModelError> {
    let k = logits.rows();
    if targets.len() != k {
        return Err(ModelError::LengthMismatch(format!(
            "targets length {} != logits rows {k}",
            targets.len()
        )));
    }
    if k < 2 {
        return Err(ModelError::NoTargets(k));
    }
    let v = logits.cols();
    let positions = k - 1;
    let mut total = 0.0;
    let mut dlogits = want_grad.then(|| Tensor::zeros(&[k, v]));
    for t in 0..positions {
        let target = targets[t] as usize;
        if target >= v {
            return Err(ModelError::TokenOutOfRange(targets[t], v));
        }
        let row = logits.row(t);
        let mut max = f64::NEG_INFINITY;
        for &x in row {
            if x > max {
                max = x;
            }
        }
        let mut z = 0.0;
        for &x in row {
            z += (x - max).exp();
        }
        let log_z = z.ln() + max;
        total += log_z - row[target];
        if let Some(dl) = dlogits.as_mut() {
            let scale = 1.0 / positions as f64;
            let drow = dl.row_mut(t);
            for c in 0..v {
                drow[c] = ((row[c] - max).exp() / z) * scale;
            }
            drow[target] -= scale;
        }
    }
    Ok((total / positions as f64, dlogits))
}
