//! Rough kernel throughput probe used while tuning the desk profile.

use std::time::Instant;

use homotok::model::{backward, forward, init, ForwardInput, ModelConfig};
use homotok::sampler::HomotokenSequence;
use homotok::tensor::{matmul, Tensor};

fn main() {
    // big-ish GEMM: logits-shaped
    let a = Tensor::from_vec(&[64, 24], (0..64 * 24).map(|i| i as f64 * 1e-3).collect());
    let b = Tensor::from_vec(&[24, 810], (0..24 * 810).map(|i| (i as f64).sin()).collect());
    let t0 = Instant::now();
    let reps = 20_000;
    let mut sink = 0.0;
    for _ in 0..reps {
        sink += matmul(&a, &b).data[0];
    }
    let el = t0.elapsed().as_secs_f64();
    let flops = 2.0 * 64.0 * 24.0 * 810.0 * reps as f64;
    println!("matmul 64x24x810: {:.2} GFLOP/s (sink {sink:.1})", flops / el / 1e9);

    let cfg = ModelConfig {
        mu: 0.0,
        n_blocks: 2,
        d_model: 24,
        d_enc: 16,
        n_heads: 4,
        n_heads_enc: 2,
        context_len: 64,
        vocab_size: 810,
        max_subtokens_per_token: 16,
        homotokens_enabled: true,
        cross_attn_block: 0,
        attn_dropout_p: 0.0,
        token_noise_sigma: 0.0,
        share_token_embeddings: false,
        encoder_final_norm: true,
    };
    let params = init(&cfg, 1).unwrap();
    let ids: Vec<u32> = (0..64u32).map(|i| i % 800).collect();
    let homo = HomotokenSequence {
        flat_ids: (0..96u32).map(|i| i % 800).collect(),
        group_lengths: (0..64).map(|i| if i % 2 == 0 { 2 } else { 1 }).collect(),
    };
    let targets: Vec<u32> = ids.iter().skip(1).chain([&0]).copied().collect();
    let input = ForwardInput { canonical_ids: &ids, homotoken: Some(&homo) };

    let t0 = Instant::now();
    let n = 200;
    for _ in 0..n {
        let _ = forward(&params, &cfg, &input, None).unwrap();
    }
    println!("forward: {:.2} ms", t0.elapsed().as_secs_f64() * 1e3 / n as f64);

    let t0 = Instant::now();
    for _ in 0..n {
        let _ = backward(&params, &cfg, &input, &targets, None).unwrap();
    }
    println!("fwd+bwd: {:.2} ms", t0.elapsed().as_secs_f64() * 1e3 / n as f64);
}

// appended: isolate encoder+cross cost vs trunk cost
#[allow(dead_code)]
fn isolate() {}
