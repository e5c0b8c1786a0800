//! Gradient verification against central finite differences. The check only
//! evaluates the forward pass and the loss, so it stays independent of the
//! backward implementation it is judging.

use std::collections::BTreeMap;

use rand::Rng;

use super::forward::{forward, loss, ForwardInput};
use super::{backward, init, ModelConfig, ModelError, Parameters};
use crate::rng::{derive_seed, fnv1a, rng_from_seed};
use crate::sampler::HomotokenSequence;
use crate::vocab::TokenId;

#[derive(Clone, Debug)]
pub struct FdReport {
    /// Max relative error per tensor name.
    pub per_tensor: BTreeMap<String, f64>,
    pub max_rel_err: f64,
    pub probes: usize,
}

fn eval_loss(
    params: &Parameters,
    cfg: &ModelConfig,
    input: &ForwardInput,
    targets: &[TokenId],
) -> Result<f64, ModelError> {
    let pass = forward(params, cfg, input, None)?;
    loss(&pass.logits, targets)
}

/// Probe up to `probes_per_tensor` random parameters in every tensor and
/// compare the analytic gradient with (L(p+h) - L(p-h)) / 2h. Relative
/// error uses max(|analytic|, |fd|, 1e-6) as the denominator; the floor
/// sits above the fd roundoff level (~eps * |loss| / h ~ 5e-11 here), so
/// near-zero gradients are still checked without the quotient noise being
/// amplified into spurious failures.
pub fn finite_difference_check(
    cfg: &ModelConfig,
    seed: u64,
    probes_per_tensor: usize,
    h: f64,
) -> Result<FdReport, ModelError> {
    cfg.validate()?;
    let mut params = init(cfg, seed)?;

    // Deterministic probe example exercising multi-subtoken groups (and
    // with them the cross-attention path when enabled).
    let mut rng = rng_from_seed(derive_seed(seed, 0x9d, 0));
    let k = cfg.context_len.clamp(2, 6);
    let canonical_ids: Vec<TokenId> =
        (0..k).map(|_| rng.random_range(0..cfg.vocab_size as u32)).collect();
    let mut targets: Vec<TokenId> = canonical_ids[1..].to_vec();
    targets.push(0);
    let homo = if cfg.homotokens_enabled {
        let mut flat = Vec::new();
        let mut lengths = Vec::new();
        for i in 0..k {
            let len = 1 + (i % cfg.max_subtokens_per_token.min(3));
            lengths.push(len);
            for _ in 0..len {
                flat.push(rng.random_range(0..cfg.vocab_size as u32));
            }
        }
        Some(HomotokenSequence { flat_ids: flat, group_lengths: lengths })
    } else {
        None
    };
    let input = ForwardInput { canonical_ids: &canonical_ids, homotoken: homo.as_ref() };

    let (_, grads) = backward(&params, cfg, &input, &targets, None)?;

    let names: Vec<String> = params.tensors.keys().cloned().collect();
    let mut per_tensor = BTreeMap::new();
    let mut max_rel = 0.0f64;
    let mut probes = 0usize;
    for name in names {
        let len = params.get(&name).len();
        let mut probe_rng = rng_from_seed(derive_seed(seed, fnv1a(&name), 1));
        let n = probes_per_tensor.min(len);
        let mut worst = 0.0f64;
        for _ in 0..n {
            let idx = probe_rng.random_range(0..len);
            let orig = params.get(&name).data[idx];
            params.get_mut(&name).data[idx] = orig + h;
            let up = eval_loss(&params, cfg, &input, &targets)?;
            params.get_mut(&name).data[idx] = orig - h;
            let down = eval_loss(&params, cfg, &input, &targets)?;
            params.get_mut(&name).data[idx] = orig;
            let fd = (up - down) / (2.0 * h);
            let analytic = grads.get(&name).data[idx];
            let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-6);
            worst = worst.max(rel);
            probes += 1;
        }
        per_tensor.insert(name, worst);
        max_rel = max_rel.max(worst);
    }
    Ok(FdReport { per_tensor, max_rel_err: max_rel, probes })
}
