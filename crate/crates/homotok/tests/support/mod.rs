#![allow(dead_code)] // each integration target uses a subset

//! Shared helpers for the integration suites: an independently written
//! plain causal decoder (dual-route check for the model's baseline path)
//! and an independent NLL computation.

use homotok::model::{ModelConfig, Parameters};
use homotok::vocab::TokenId;

const EPS: f64 = 1e-6;

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Plain pre-norm causal decoder, written position by position against the
/// same named weight map: embeddings, per-block RMSNorm -> multi-head
/// causal attention -> residual, RMSNorm -> SwiGLU -> residual, final
/// RMSNorm, unembedding. No encoder, no cross-attention.
pub fn plain_decoder_logits(
    params: &Parameters,
    cfg: &ModelConfig,
    ids: &[TokenId],
) -> Vec<Vec<f64>> {
    let k = ids.len();
    let d = cfg.d_model;
    let heads = cfg.n_heads;
    let dh = d / heads;
    let w = |name: &str| &params.get(name).data;
    let shape = |name: &str| params.get(name).shape.clone();

    // x[t] = tok_emb[id] + pos_emb[t]
    let tok = w("trunk.tok_emb");
    let pos = w("trunk.pos_emb");
    let mut x: Vec<Vec<f64>> = (0..k)
        .map(|t| {
            (0..d)
                .map(|j| tok[ids[t] as usize * d + j] + pos[t * d + j])
                .collect()
        })
        .collect();

    let rmsnorm = |row: &[f64], gain: &[f64]| -> Vec<f64> {
        let mut ms = 0.0;
        for &v in row {
            ms += v * v;
        }
        let inv = 1.0 / (ms / row.len() as f64 + EPS).sqrt();
        row.iter().zip(gain).map(|(&v, &g)| g * v * inv).collect()
    };

    for b in 0..cfg.n_blocks {
        let p = format!("trunk.block{b:02}");
        // attention sub-layer
        let gain = w(&format!("{p}.attn_norm.g"));
        let xn: Vec<Vec<f64>> = x.iter().map(|row| rmsnorm(row, gain)).collect();
        let (wq, wk, wv, wo) = (
            w(&format!("{p}.attn.wq")),
            w(&format!("{p}.attn.wk")),
            w(&format!("{p}.attn.wv")),
            w(&format!("{p}.attn.wo")),
        );
        let proj = |m: &[f64], row: &[f64], col: usize| -> f64 {
            let mut acc = 0.0;
            for (kk, &v) in row.iter().enumerate() {
                acc += v * m[kk * d + col];
            }
            acc
        };
        let mut ctx = vec![vec![0.0; d]; k];
        for h in 0..heads {
            let cols = h * dh..(h + 1) * dh;
            let q: Vec<Vec<f64>> =
                xn.iter().map(|row| cols.clone().map(|c| proj(wq, row, c)).collect()).collect();
            let key: Vec<Vec<f64>> =
                xn.iter().map(|row| cols.clone().map(|c| proj(wk, row, c)).collect()).collect();
            let val: Vec<Vec<f64>> =
                xn.iter().map(|row| cols.clone().map(|c| proj(wv, row, c)).collect()).collect();
            let scale = 1.0 / (dh as f64).sqrt();
            for t in 0..k {
                // causal: positions 0..=t visible
                let mut scores = Vec::with_capacity(t + 1);
                for s in 0..=t {
                    let mut dot = 0.0;
                    for j in 0..dh {
                        dot += q[t][j] * key[s][j];
                    }
                    scores.push(dot * scale);
                }
                let mut max = f64::NEG_INFINITY;
                for &s in &scores {
                    if s > max {
                        max = s;
                    }
                }
                let mut z = 0.0;
                let mut es = Vec::with_capacity(t + 1);
                for &s in &scores {
                    let e = (s - max).exp();
                    es.push(e);
                    z += e;
                }
                for (s, e) in es.iter().enumerate() {
                    let prob = e / z;
                    for j in 0..dh {
                        ctx[t][h * dh + j] += prob * val[s][j];
                    }
                }
            }
        }
        for t in 0..k {
            for c in 0..d {
                let mut acc = 0.0;
                for (kk, &v) in ctx[t].iter().enumerate() {
                    acc += v * wo[kk * d + c];
                }
                x[t][c] += acc;
            }
        }

        // feed-forward sub-layer
        let gain = w(&format!("{p}.ffn_norm.g"));
        let xn: Vec<Vec<f64>> = x.iter().map(|row| rmsnorm(row, gain)).collect();
        let ff = 4 * d;
        let (wg, wu, wd) = (
            w(&format!("{p}.ffn.wg")),
            w(&format!("{p}.ffn.wu")),
            w(&format!("{p}.ffn.wd")),
        );
        for t in 0..k {
            let mut act = vec![0.0; ff];
            for c in 0..ff {
                let mut gate = 0.0;
                let mut up = 0.0;
                for (kk, &v) in xn[t].iter().enumerate() {
                    gate += v * wg[kk * ff + c];
                }
                for (kk, &v) in xn[t].iter().enumerate() {
                    up += v * wu[kk * ff + c];
                }
                act[c] = gate * sigmoid(gate) * up;
            }
            for c in 0..d {
                let mut acc = 0.0;
                for (kk, &v) in act.iter().enumerate() {
                    acc += v * wd[kk * d + c];
                }
                x[t][c] += acc;
            }
        }
    }

    let gain = w("trunk.final_norm.g");
    let xn: Vec<Vec<f64>> = x.iter().map(|row| rmsnorm(row, gain)).collect();
    let un = w("unembed");
    let v_dim = shape("unembed")[1];
    xn.iter()
        .map(|row| {
            (0..v_dim)
                .map(|c| {
                    let mut acc = 0.0;
                    for (kk, &v) in row.iter().enumerate() {
                        acc += v * un[kk * v_dim + c];
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

/// Direct mean NLL over positions 0..K-2 without max-subtraction; an
/// independent route for checking the model's loss.
pub fn nll_oracle(logits: &[Vec<f64>], targets: &[TokenId]) -> f64 {
    assert_eq!(logits.len(), targets.len());
    let positions = logits.len() - 1;
    let mut total = 0.0;
    for t in 0..positions {
        let z: f64 = logits[t].iter().map(|&x| x.exp()).sum();
        total += z.ln() - logits[t][targets[t] as usize];
    }
    total / positions as f64
}

/// Deterministic not-quite-trivial ids for probe inputs.
pub fn probe_ids(k: usize, vocab_size: usize, salt: u64) -> Vec<TokenId> {
    (0..k)
        .map(|i| ((homotok::rng::splitmix64(salt ^ i as u64) as usize) % vocab_size) as TokenId)
        .collect()
}
