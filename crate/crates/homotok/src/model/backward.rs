//! Reverse-mode gradients for the full forward pass, computed against the
//! caches captured during `forward`.

use rand_chacha::ChaCha8Rng;

use super::forward::{loss_with_grad, BlockCache, Cache, EncCache, ForwardInput};
use super::ops::{attention_backward, rmsnorm_backward, swiglu_backward, AttnWeights};
use super::{Gradients, ModelConfig, ModelError, Parameters};
use crate::tensor::{matmul_at, matmul_bt, Tensor};
use crate::vocab::TokenId;

/// Run forward and backprop; returns the loss and a gradient for every
/// named tensor (zeros where no gradient flows). Pass an rng for training
/// mode; the dropout masks drawn in the forward pass are reused exactly.
pub fn backward(
    params: &Parameters,
    cfg: &ModelConfig,
    input: &ForwardInput,
    targets: &[TokenId],
    train_rng: Option<&mut ChaCha8Rng>,
) -> Result<(f64, Gradients), ModelError> {
    let pass = super::forward::forward(params, cfg, input, train_rng)?;
    let (loss, dlogits) = loss_with_grad(&pass.logits, targets, true)?;
    let dlogits = dlogits.expect("grad requested");
    let grads = backprop(params, cfg, &pass.cache, &dlogits);
    Ok((loss, grads))
}

fn backprop(params: &Parameters, cfg: &ModelConfig, cache: &Cache, dlogits: &Tensor) -> Gradients {
    let mut grads = Gradients {
        tensors: super::tensor_shapes(cfg)
            .into_iter()
            .map(|(name, shape)| (name, Tensor::zeros(&shape)))
            .collect(),
    };

    // logits = final_normed @ unembed
    let unembed = params.get("unembed");
    grads
        .get_mut("unembed")
        .add_assign(&matmul_at(&cache.final_normed, dlogits));
    let dfinal_normed = matmul_bt(dlogits, unembed);

    let mut dx = {
        let g = params.get("trunk.final_norm.g");
        let dgain = grads.get_mut("trunk.final_norm.g");
        rmsnorm_backward(&cache.final_norm, g, &dfinal_normed, dgain)
    };

    let mut d_enc_out: Option<Tensor> = None;
    for (b, block) in cache.blocks.iter().enumerate().rev() {
        let prefix = format!("trunk.block{b:02}");
        let (dx_prev, denc) = block_backward(params, &mut grads, &prefix, block, cfg.n_heads, &dx);
        dx = dx_prev;
        if let Some(d) = denc {
            match &mut d_enc_out {
                Some(acc) => acc.add_assign(&d),
                None => d_enc_out = Some(d),
            }
        }
    }

    // trunk embedding scatter
    {
        let k = cache.canonical_ids.len();
        let tok = grads.get_mut("trunk.tok_emb");
        for t in 0..k {
            let row = dx.row(t);
            let dst = tok.row_mut(cache.canonical_ids[t] as usize);
            for (a, b) in dst.iter_mut().zip(row) {
                *a += *b;
            }
        }
        let pos = grads.get_mut("trunk.pos_emb");
        for t in 0..k {
            let row = dx.row(t);
            let dst = pos.row_mut(t);
            for (a, b) in dst.iter_mut().zip(row) {
                *a += *b;
            }
        }
    }

    if let (Some(enc_cache), Some(denc)) = (&cache.enc, d_enc_out) {
        encoder_backward(params, cfg, &mut grads, enc_cache, denc);
    }
    grads
}

/// Backward through one trunk/encoder block. Returns the gradient w.r.t.
/// the block input and, when the block has a cross sub-layer, the gradient
/// w.r.t. the encoder output.
fn block_backward(
    params: &Parameters,
    grads: &mut Gradients,
    prefix: &str,
    cache: &BlockCache,
    n_heads: usize,
    dout: &Tensor,
) -> (Tensor, Option<Tensor>) {
    // x3 = x2 + ffn(norm3(x2))
    let ffn_g = swiglu_backward(
        &cache.ffn,
        params.get(&format!("{prefix}.ffn.wg")),
        params.get(&format!("{prefix}.ffn.wu")),
        params.get(&format!("{prefix}.ffn.wd")),
        dout,
    );
    grads.get_mut(&format!("{prefix}.ffn.wg")).add_assign(&ffn_g.dwg);
    grads.get_mut(&format!("{prefix}.ffn.wu")).add_assign(&ffn_g.dwu);
    grads.get_mut(&format!("{prefix}.ffn.wd")).add_assign(&ffn_g.dwd);
    let mut dx2 = dout.clone();
    {
        let g = params.get(&format!("{prefix}.ffn_norm.g"));
        let dgain = grads.get_mut(&format!("{prefix}.ffn_norm.g"));
        dx2.add_assign(&rmsnorm_backward(&cache.ffn_norm, g, &ffn_g.dxn, dgain));
    }

    // x2 = x1 + cross(norm2(x1), enc_out)   (when present)
    let (mut dx1, denc) = if let Some((cross_norm, cross_attn)) = &cache.cross {
        let w = AttnWeights {
            wq: params.get(&format!("{prefix}.cross.wq")),
            wk: params.get(&format!("{prefix}.cross.wk")),
            wv: params.get(&format!("{prefix}.cross.wv")),
            wo: params.get(&format!("{prefix}.cross.wo")),
        };
        let ag = attention_backward(cross_attn, &w, n_heads, &dx2);
        grads.get_mut(&format!("{prefix}.cross.wq")).add_assign(&ag.dwq);
        grads.get_mut(&format!("{prefix}.cross.wk")).add_assign(&ag.dwk);
        grads.get_mut(&format!("{prefix}.cross.wv")).add_assign(&ag.dwv);
        grads.get_mut(&format!("{prefix}.cross.wo")).add_assign(&ag.dwo);
        let mut dx1 = dx2.clone();
        {
            let g = params.get(&format!("{prefix}.cross_norm.g"));
            let dgain = grads.get_mut(&format!("{prefix}.cross_norm.g"));
            dx1.add_assign(&rmsnorm_backward(cross_norm, g, &ag.dxq, dgain));
        }
        (dx1, Some(ag.dxkv))
    } else {
        (dx2, None)
    };

    // x1 = x + attn(norm1(x)), queries and keys/values share the normed input
    let w = AttnWeights {
        wq: params.get(&format!("{prefix}.attn.wq")),
        wk: params.get(&format!("{prefix}.attn.wk")),
        wv: params.get(&format!("{prefix}.attn.wv")),
        wo: params.get(&format!("{prefix}.attn.wo")),
    };
    let ag = attention_backward(&cache.attn, &w, n_heads, &dx1);
    grads.get_mut(&format!("{prefix}.attn.wq")).add_assign(&ag.dwq);
    grads.get_mut(&format!("{prefix}.attn.wk")).add_assign(&ag.dwk);
    grads.get_mut(&format!("{prefix}.attn.wv")).add_assign(&ag.dwv);
    grads.get_mut(&format!("{prefix}.attn.wo")).add_assign(&ag.dwo);
    let mut dxn = ag.dxq;
    dxn.add_assign(&ag.dxkv);
    {
        let g = params.get(&format!("{prefix}.attn_norm.g"));
        let dgain = grads.get_mut(&format!("{prefix}.attn_norm.g"));
        dx1.add_assign(&rmsnorm_backward(&cache.attn_norm, g, &dxn, dgain));
    }
    (dx1, denc)
}

fn encoder_backward(
    params: &Parameters,
    cfg: &ModelConfig,
    grads: &mut Gradients,
    cache: &EncCache,
    d_enc_out: Tensor,
) {
    let dx = match &cache.final_norm {
        Some(norm) => {
            let g = params.get("enc.final_norm.g");
            let dgain = grads.get_mut("enc.final_norm.g");
            rmsnorm_backward(norm, g, &d_enc_out, dgain)
        }
        None => d_enc_out,
    };
    let (demb, _) = block_backward(params, grads, "enc.block", &cache.block, cfg.n_heads_enc, &dx);

    let tok_name = if cfg.share_token_embeddings { "trunk.tok_emb" } else { "enc.tok_emb" };
    let kp = cache.flat_ids.len();
    {
        let tok = grads.get_mut(tok_name);
        for j in 0..kp {
            let row = demb.row(j);
            let dst = tok.row_mut(cache.flat_ids[j] as usize);
            for (a, b) in dst.iter_mut().zip(row) {
                *a += *b;
            }
        }
    }
    {
        let intra = grads.get_mut("enc.intra_emb");
        for j in 0..kp {
            let row = demb.row(j);
            let dst = intra.row_mut(cache.intra[j]);
            for (a, b) in dst.iter_mut().zip(row) {
                *a += *b;
            }
        }
    }
    {
        let inter = grads.get_mut("enc.inter_emb");
        for j in 0..kp {
            let row = demb.row(j);
            let dst = inter.row_mut(cache.inter[j]);
            for (a, b) in dst.iter_mut().zip(row) {
                *a += *b;
            }
        }
    }
}
