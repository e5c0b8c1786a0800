//! Numerical building blocks: RMSNorm, masked softmax, SwiGLU, multi-head
//! attention, and the two activation-level perturbations. Forward functions
//! return the caches their backward counterparts consume.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;

use super::ModelError;
use crate::alignment::BlockMask;
use crate::tensor::{matmul, matmul_at, matmul_bt, Tensor};

pub(crate) const RMS_EPS: f64 = 1e-6;

pub(crate) struct NormCache {
    pub x: Tensor,
    pub inv_r: Vec<f64>,
}

/// Row-wise RMSNorm: y = g * x / sqrt(mean(x^2) + eps).
pub(crate) fn rmsnorm_forward(x: &Tensor, gain: &Tensor) -> (Tensor, NormCache) {
    let (rows, d) = (x.rows(), x.cols());
    assert_eq!(gain.len(), d, "gain width");
    let mut y = Tensor::zeros(&[rows, d]);
    let mut inv_r = Vec::with_capacity(rows);
    for i in 0..rows {
        let xr = x.row(i);
        let mut ms = 0.0;
        for &v in xr {
            ms += v * v;
        }
        let inv = 1.0 / (ms / d as f64 + RMS_EPS).sqrt();
        inv_r.push(inv);
        let yr = y.row_mut(i);
        for j in 0..d {
            yr[j] = gain.data[j] * xr[j] * inv;
        }
    }
    (y, NormCache { x: x.clone(), inv_r })
}

/// Returns dx and accumulates into dgain.
pub(crate) fn rmsnorm_backward(cache: &NormCache, gain: &Tensor, dy: &Tensor, dgain: &mut Tensor) -> Tensor {
    let (rows, d) = (cache.x.rows(), cache.x.cols());
    let mut dx = Tensor::zeros(&[rows, d]);
    for i in 0..rows {
        let xr = cache.x.row(i);
        let dyr = dy.row(i);
        let inv = cache.inv_r[i];
        let mut s = 0.0;
        for j in 0..d {
            dgain.data[j] += dyr[j] * xr[j] * inv;
            s += dyr[j] * gain.data[j] * xr[j];
        }
        let coef = s * inv * inv * inv / d as f64;
        let dxr = dx.row_mut(i);
        for j in 0..d {
            dxr[j] = gain.data[j] * dyr[j] * inv - xr[j] * coef;
        }
    }
    dx
}

/// Row-wise masked softmax. Masked entries come out exactly 0.0 and never
/// influence allowed entries, which the bit-level causality probes rely on.
pub(crate) fn masked_softmax(scores: &Tensor, mask: &BlockMask) -> Tensor {
    let (rows, cols) = (scores.rows(), scores.cols());
    assert_eq!((mask.rows, mask.cols), (rows, cols), "mask shape");
    let mut out = Tensor::zeros(&[rows, cols]);
    for r in 0..rows {
        let sr = scores.row(r);
        let mrow = mask.row(r);
        let mut max = f64::NEG_INFINITY;
        for c in 0..cols {
            if mrow[c] && sr[c] > max {
                max = sr[c];
            }
        }
        debug_assert!(max.is_finite(), "softmax row {r} fully masked");
        let or = out.row_mut(r);
        let mut z = 0.0;
        for c in 0..cols {
            if mrow[c] {
                let e = (sr[c] - max).exp();
                or[c] = e;
                z += e;
            }
        }
        for c in 0..cols {
            if mrow[c] {
                or[c] /= z;
            }
        }
    }
    out
}

/// dscores from probabilities and dprobs; masked entries stay 0.
pub(crate) fn masked_softmax_backward(probs: &Tensor, dprobs: &Tensor, mask: &BlockMask) -> Tensor {
    let (rows, cols) = (probs.rows(), probs.cols());
    let mut ds = Tensor::zeros(&[rows, cols]);
    for r in 0..rows {
        let pr = probs.row(r);
        let dpr = dprobs.row(r);
        let mrow = mask.row(r);
        let mut dot = 0.0;
        for c in 0..cols {
            if mrow[c] {
                dot += pr[c] * dpr[c];
            }
        }
        let dsr = ds.row_mut(r);
        for c in 0..cols {
            if mrow[c] {
                dsr[c] = pr[c] * (dpr[c] - dot);
            }
        }
    }
    ds
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn silu(z: f64) -> f64 {
    z * sigmoid(z)
}

pub(crate) fn silu_deriv(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 + z * (1.0 - s))
}

pub(crate) struct FfnCache {
    pub xn: Tensor,
    pub gate_pre: Tensor,
    pub up: Tensor,
    pub act: Tensor,
}

/// SwiGLU feed-forward: y = (silu(x wg) * (x wu)) wd.
pub(crate) fn swiglu_forward(xn: &Tensor, wg: &Tensor, wu: &Tensor, wd: &Tensor) -> (Tensor, FfnCache) {
    let gate_pre = matmul(xn, wg);
    let up = matmul(xn, wu);
    let mut act = Tensor::zeros(&gate_pre.shape);
    for i in 0..act.len() {
        act.data[i] = silu(gate_pre.data[i]) * up.data[i];
    }
    let y = matmul(&act, wd);
    (y, FfnCache { xn: xn.clone(), gate_pre, up, act })
}

pub(crate) struct FfnGrads {
    pub dxn: Tensor,
    pub dwg: Tensor,
    pub dwu: Tensor,
    pub dwd: Tensor,
}

pub(crate) fn swiglu_backward(cache: &FfnCache, wg: &Tensor, wu: &Tensor, wd: &Tensor, dy: &Tensor) -> FfnGrads {
    let dact = matmul_bt(dy, wd);
    let dwd = matmul_at(&cache.act, dy);
    let mut dgate_pre = Tensor::zeros(&cache.gate_pre.shape);
    let mut dup = Tensor::zeros(&cache.up.shape);
    for i in 0..dact.len() {
        let g = cache.gate_pre.data[i];
        dup.data[i] = dact.data[i] * silu(g);
        dgate_pre.data[i] = dact.data[i] * cache.up.data[i] * silu_deriv(g);
    }
    let dwg = matmul_at(&cache.xn, &dgate_pre);
    let dwu = matmul_at(&cache.xn, &dup);
    let mut dxn = matmul_bt(&dgate_pre, wg);
    dxn.add_assign(&matmul_bt(&dup, wu));
    FfnGrads { dxn, dwg, dwu, dwd }
}

/// Zero each probability independently with probability `p` and scale the
/// survivors by 1/(1-p). Returns the applied scale mask (entries 0 or
/// 1/(1-p)). Callers gate this on training mode; eval never applies it.
pub fn attention_dropout(probs: &mut Tensor, p: f64, rng: &mut ChaCha8Rng) -> Result<Tensor, ModelError> {
    if !(0.0..1.0).contains(&p) {
        return Err(ModelError::InvalidConfig(format!("dropout p {p} must be in [0, 1)")));
    }
    let mut mask = Tensor::zeros(&probs.shape);
    if p == 0.0 {
        mask.data.fill(1.0);
        return Ok(mask);
    }
    let keep = 1.0 / (1.0 - p);
    for (v, m) in probs.data.iter_mut().zip(&mut mask.data) {
        if rng.random::<f64>() < p {
            *v = 0.0;
            *m = 0.0;
        } else {
            *v *= keep;
            *m = keep;
        }
    }
    Ok(mask)
}

/// Add i.i.d. Gaussian(0, sigma^2) noise to every component. Callers gate
/// this on training mode; eval never applies it.
pub fn token_noise(x: &mut Tensor, sigma: f64, rng: &mut ChaCha8Rng) -> Result<(), ModelError> {
    if sigma < 0.0 {
        return Err(ModelError::InvalidConfig(format!("noise sigma {sigma} must be >= 0")));
    }
    if sigma == 0.0 {
        return Ok(());
    }
    let normal = rand_distr::Normal::new(0.0, sigma).expect("sigma is finite");
    for v in &mut x.data {
        *v += normal.sample(rng);
    }
    Ok(())
}

pub(crate) struct AttnWeights<'a> {
    pub wq: &'a Tensor,
    pub wk: &'a Tensor,
    pub wv: &'a Tensor,
    pub wo: &'a Tensor,
}

pub(crate) struct AttnCache {
    pub xq: Tensor,
    pub xkv: Tensor,
    pub q: Tensor,
    pub k: Tensor,
    pub v: Tensor,
    /// Per-head softmax output, pre-dropout.
    pub probs: Vec<Tensor>,
    /// Per-head dropout scale masks (entries 0 or 1/(1-p)); None in eval.
    pub drop: Option<Vec<Tensor>>,
    pub ctx: Tensor,
    pub mask: BlockMask,
}

fn head_slice(t: &Tensor, head: usize, dh: usize) -> Tensor {
    let rows = t.rows();
    let mut out = Tensor::zeros(&[rows, dh]);
    for r in 0..rows {
        out.row_mut(r).copy_from_slice(&t.row(r)[head * dh..(head + 1) * dh]);
    }
    out
}

fn head_write(dst: &mut Tensor, src: &Tensor, head: usize, dh: usize) {
    for r in 0..src.rows() {
        dst.row_mut(r)[head * dh..(head + 1) * dh].copy_from_slice(src.row(r));
    }
}

/// Multi-head scaled-dot-product attention under a boolean mask. Queries
/// come from `xq` and keys/values from `xkv`, so the same code serves self-
/// and cross-attention. Dropout is applied to the attention probabilities
/// when `dropout_p > 0` and an rng is supplied (training mode).
pub(crate) fn attention_forward(
    xq: &Tensor,
    xkv: &Tensor,
    w: &AttnWeights,
    mask: &BlockMask,
    n_heads: usize,
    dropout_p: f64,
    mut train_rng: Option<&mut ChaCha8Rng>,
) -> Result<(Tensor, AttnCache), ModelError> {
    let q = matmul(xq, w.wq);
    let k = matmul(xkv, w.wk);
    let v = matmul(xkv, w.wv);
    let width = q.cols();
    assert_eq!(width % n_heads, 0, "head split");
    let dh = width / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let rows = q.rows();
    let mut ctx = Tensor::zeros(&[rows, width]);
    let mut probs = Vec::with_capacity(n_heads);
    let mut drops: Vec<Tensor> = Vec::new();
    for h in 0..n_heads {
        let qh = head_slice(&q, h, dh);
        let kh = head_slice(&k, h, dh);
        let vh = head_slice(&v, h, dh);
        let mut scores = matmul_bt(&qh, &kh);
        scores.scale(scale);
        let p = masked_softmax(&scores, mask);
        let p_used = if let Some(rng) = train_rng.as_deref_mut() {
            if dropout_p > 0.0 {
                let mut dropped = p.clone();
                let dmask = attention_dropout(&mut dropped, dropout_p, rng)?;
                drops.push(dmask);
                dropped
            } else {
                p.clone()
            }
        } else {
            p.clone()
        };
        let ctx_h = matmul(&p_used, &vh);
        head_write(&mut ctx, &ctx_h, h, dh);
        probs.push(p);
    }
    let out = matmul(&ctx, w.wo);
    let cache = AttnCache {
        xq: xq.clone(),
        xkv: xkv.clone(),
        q,
        k,
        v,
        probs,
        drop: if drops.is_empty() { None } else { Some(drops) },
        ctx,
        mask: mask.clone(),
    };
    Ok((out, cache))
}

pub(crate) struct AttnGrads {
    pub dxq: Tensor,
    pub dxkv: Tensor,
    pub dwq: Tensor,
    pub dwk: Tensor,
    pub dwv: Tensor,
    pub dwo: Tensor,
}

pub(crate) fn attention_backward(
    cache: &AttnCache,
    w: &AttnWeights,
    n_heads: usize,
    dout: &Tensor,
) -> AttnGrads {
    let width = cache.q.cols();
    let dh = width / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let dctx = matmul_bt(dout, w.wo);
    let dwo = matmul_at(&cache.ctx, dout);

    let mut dq = Tensor::zeros(&cache.q.shape);
    let mut dk = Tensor::zeros(&cache.k.shape);
    let mut dv = Tensor::zeros(&cache.v.shape);
    for h in 0..n_heads {
        let dctx_h = head_slice(&dctx, h, dh);
        let kh = head_slice(&cache.k, h, dh);
        let vh = head_slice(&cache.v, h, dh);
        let qh = head_slice(&cache.q, h, dh);
        let p_pre = &cache.probs[h];
        // Post-dropout probabilities actually used in the forward pass.
        let (p_used, dmask) = match &cache.drop {
            Some(masks) => {
                let mut p = p_pre.clone();
                for (x, m) in p.data.iter_mut().zip(&masks[h].data) {
                    *x *= m;
                }
                (p, Some(&masks[h]))
            }
            None => (p_pre.clone(), None),
        };
        let mut dp = matmul_bt(&dctx_h, &vh);
        let dvh = matmul_at(&p_used, &dctx_h);
        if let Some(m) = dmask {
            for (x, s) in dp.data.iter_mut().zip(&m.data) {
                *x *= s;
            }
        }
        let mut dscores = masked_softmax_backward(p_pre, &dp, &cache.mask);
        dscores.scale(scale);
        let dqh = matmul(&dscores, &kh);
        let dkh = matmul_at(&dscores, &qh);
        head_write(&mut dq, &dqh, h, dh);
        head_write(&mut dk, &dkh, h, dh);
        head_write(&mut dv, &dvh, h, dh);
    }

    let dxq = matmul_bt(&dq, w.wq);
    let dwq = matmul_at(&cache.xq, &dq);
    let dwk = matmul_at(&cache.xkv, &dk);
    let dwv = matmul_at(&cache.xkv, &dv);
    let mut dxkv = matmul_bt(&dk, w.wk);
    dxkv.add_assign(&matmul_bt(&dv, w.wv));
    AttnGrads { dxq, dxkv, dwq, dwk, dwv, dwo }
}
