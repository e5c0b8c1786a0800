//! Operation-level oracle checks that need the full harness: the loss
//! against an independent NLL route, evaluation determinism and degeneracy
//! constructions, and small end-to-end training runs.

use homotok::fixtures::synthetic_corpus;
use homotok::model::{forward, init, loss, ForwardInput, ModelConfig};
use homotok::rng::{derive_seed, fnv1a};
use homotok::sampler::{HomotokenSequence, SamplerConfig};
use homotok::trainer::{evaluate, run_experiment, TrainConfig, Variant};
use homotok::vocab::{TokenId, Vocab};

mod support;

fn tiny_config(vocab_size: usize) -> ModelConfig {
    ModelConfig {
        mu: 0.0,
        n_blocks: 2,
        d_model: 16,
        d_enc: 8,
        n_heads: 2,
        n_heads_enc: 2,
        context_len: 16,
        vocab_size,
        max_subtokens_per_token: 4,
        homotokens_enabled: true,
        cross_attn_block: 0,
        attn_dropout_p: 0.0,
        token_noise_sigma: 0.0,
        share_token_embeddings: false,
        encoder_final_norm: true,
    }
}

fn tiny_train_config(model: ModelConfig, seed: u64) -> TrainConfig {
    TrainConfig {
        repetitions: 1,
        base_lr: 2e-3,
        beta1: 0.9,
        beta2: 0.95,
        eps: 1e-10,
        weight_decay: 0.01,
        batch_size: 8,
        total_steps: None,
        eval_every: 10,
        seed,
        corpus_path: String::new(),
        heldout_fraction: 0.1,
        eval_samples: 1,
        checkpoint_every_evals: None,
        overfit_margin: 0.005,
        overfit_window: 3,
        model,
        sampler: SamplerConfig::default(),
    }
}

#[test]
fn loss_matches_the_independent_nll_oracle() {
    let cfg = tiny_config(11);
    let params = init(&cfg, 21).unwrap();
    let ids = support::probe_ids(9, cfg.vocab_size, 5);
    let homo = HomotokenSequence {
        flat_ids: support::probe_ids(13, cfg.vocab_size, 6),
        group_lengths: vec![2, 1, 1, 2, 1, 3, 1, 1, 1],
    };
    let mut targets: Vec<TokenId> = ids[1..].to_vec();
    targets.push(0);
    let input = ForwardInput { canonical_ids: &ids, homotoken: Some(&homo) };
    let pass = forward(&params, &cfg, &input, None).unwrap();
    let ours = loss(&pass.logits, &targets).unwrap();

    let rows: Vec<Vec<f64>> = (0..pass.logits.rows()).map(|t| pass.logits.row(t).to_vec()).collect();
    let oracle = support::nll_oracle(&rows, &targets);
    assert!((ours - oracle).abs() <= 1e-12, "{ours} vs oracle {oracle}");
}

fn byte_vocab() -> Vocab {
    Vocab::from_pairs((0u16..=255).map(|b| (vec![b as u8], TokenId::from(b)))).unwrap()
}

#[test]
fn evaluate_uniform_logit_model_gives_log_vocab() {
    // zero unembedding -> logits are all zero -> uniform distribution
    let cfg = tiny_config(11);
    let mut params = init(&cfg, 3).unwrap();
    params.get_mut("unembed").data.fill(0.0);
    let vocab = Vocab::from_pairs((0u16..11).map(|b| (vec![b as u8 + b'a'], TokenId::from(b)))).unwrap();
    let heldout: Vec<Vec<TokenId>> = (0..4).map(|i| support::probe_ids(10, 11, i)).collect();
    let got = evaluate(&params, &cfg, &vocab, &heldout, &SamplerConfig::default(), 9, 1).unwrap();
    assert!((got - (11f64).ln()).abs() <= 1e-6, "{got}");
}

#[test]
fn evaluate_is_a_pure_function_of_params_under_a_fixed_seed() {
    // toy vocab: "abc" and friends are divisible, so the sampled
    // segmentations actually depend on the seed
    let cfg = tiny_config(6);
    let params = init(&cfg, 4).unwrap();
    let vocab = homotok::fixtures::toy_vocab();
    let heldout: Vec<Vec<TokenId>> = (0..5).map(|i| support::probe_ids(12, 6, 100 + i)).collect();
    let a = evaluate(&params, &cfg, &vocab, &heldout, &SamplerConfig::default(), 42, 1).unwrap();
    let b = evaluate(&params, &cfg, &vocab, &heldout, &SamplerConfig::default(), 42, 1).unwrap();
    assert_eq!(a.to_bits(), b.to_bits(), "fixed-seed evaluation must be bit-identical");
    let c = evaluate(&params, &cfg, &vocab, &heldout, &SamplerConfig::default(), 43, 1).unwrap();
    assert_ne!(a.to_bits(), c.to_bits(), "different eval seed should resample segmentations");
}

#[test]
fn zeroed_cross_output_makes_the_branch_inert() {
    // same seed -> identical trunk tensors in both configs (init streams
    // are derived per tensor name); zeroing the cross output projection
    // then makes the homotoken forward equal the baseline bit for bit
    let mut homotok_cfg = tiny_config(256);
    homotok_cfg.context_len = 12;
    let mut baseline_cfg = homotok_cfg.clone();
    baseline_cfg.homotokens_enabled = false;

    let mut hp = init(&homotok_cfg, 7).unwrap();
    hp.get_mut("trunk.block00.cross.wo").data.fill(0.0);
    let bp = init(&baseline_cfg, 7).unwrap();

    let vocab = byte_vocab();
    let heldout: Vec<Vec<TokenId>> = (0..6).map(|i| support::probe_ids(12, 256, 50 + i)).collect();
    let sampler = SamplerConfig::default();
    let lh = evaluate(&hp, &homotok_cfg, &vocab, &heldout, &sampler, 3, 1).unwrap();
    let lb = evaluate(&bp, &baseline_cfg, &vocab, &heldout, &sampler, 3, 1).unwrap();
    assert_eq!(lh.to_bits(), lb.to_bits(), "{lh} vs {lb}");
}

#[test]
fn capped_run_produces_the_configured_record_count_and_is_deterministic() {
    let corpus = synthetic_corpus(17, 30_000);
    let vocab = byte_vocab();
    let mut cfg = tiny_train_config(tiny_config(256), 99);
    cfg.total_steps = Some(200);
    cfg.eval_every = 20;
    cfg.batch_size = 4;

    let sink: Option<&mut Vec<u8>> = None;
    let a = run_experiment(&cfg, Variant::Homotok, &vocab, corpus.as_bytes(), sink, None).unwrap();
    assert_eq!(a.records.len(), 200 / 20);
    assert!(a.records.iter().all(|r| r.eval_loss.is_finite() && r.train_loss.is_finite()));

    let sink: Option<&mut Vec<u8>> = None;
    let b = run_experiment(&cfg, Variant::Homotok, &vocab, corpus.as_bytes(), sink, None).unwrap();
    let col = |log: &homotok::trainer::TrainLog| -> Vec<(u64, u64)> {
        log.records.iter().map(|r| (r.train_loss.to_bits(), r.eval_loss.to_bits())).collect()
    };
    assert_eq!(col(&a), col(&b), "same config and seed must be bit-identical");
}

#[test]
fn derived_steps_follow_exact_data_accounting() {
    let corpus = synthetic_corpus(18, 24_000);
    let vocab = byte_vocab();
    let mut cfg = tiny_train_config(tiny_config(256), 5);
    cfg.repetitions = 3;
    cfg.batch_size = 7;
    cfg.eval_every = 1;
    let sink: Option<&mut Vec<u8>> = None;
    let log = run_experiment(&cfg, Variant::Baseline, &vocab, corpus.as_bytes(), sink, None).unwrap();
    let windows = log.meta.train_windows;
    let expect_steps = (windows * 3).div_ceil(7);
    assert_eq!(log.meta.total_steps, expect_steps);
    assert_eq!(log.records.len(), expect_steps);
}

#[test]
fn indivisible_vocab_gives_baseline_like_losses() {
    // with a bytes-only vocabulary every homotoken group is the canonical
    // token itself, so both variants see identical information; their
    // final eval losses should agree up to optimizer noise from the extra
    // (inert-information) branch parameters. The 5% band is an empirical
    // choice for this construction.
    let corpus = synthetic_corpus(19, 60_000);
    let vocab = byte_vocab();
    let cfg = tiny_train_config(tiny_config(256), 31);

    let sink: Option<&mut Vec<u8>> = None;
    let base = run_experiment(&cfg, Variant::Baseline, &vocab, corpus.as_bytes(), sink, None).unwrap();
    let sink: Option<&mut Vec<u8>> = None;
    let homo = run_experiment(&cfg, Variant::Homotok, &vocab, corpus.as_bytes(), sink, None).unwrap();

    // the homotoken stream really is all singletons here
    let canonical = vocab.encode_canonical(&corpus.as_bytes()[..200]).unwrap();
    let mut rng = homotok::rng::rng_from_seed(1);
    let seq =
        homotok::sampler::sample_ids(&vocab, &canonical.ids, &SamplerConfig::default(), &mut rng)
            .unwrap();
    assert!(seq.group_lengths.iter().all(|&l| l == 1));
    assert_eq!(seq.flat_ids, canonical.ids);

    let (b, h) = (base.summary.best_eval_loss, homo.summary.best_eval_loss);
    let rel = (b - h).abs() / b;
    assert!(rel < 0.05, "baseline {b:.4} vs homotok {h:.4} ({:.2}%)", rel * 100.0);
}

#[test]
fn init_trunk_tensors_are_variant_independent() {
    let h = init(&tiny_config(64), 11).unwrap();
    let mut baseline_cfg = tiny_config(64);
    baseline_cfg.homotokens_enabled = false;
    let b = init(&baseline_cfg, 11).unwrap();
    for (name, t) in &b.tensors {
        assert_eq!(t, h.get(name), "trunk tensor {name} differs across variants");
    }
    let _ = derive_seed(0, fnv1a("x"), 0);
}
