//! Corpus ingestion for data-constrained training: tokenize once, chunk
//! into fixed windows, split the held-out tail, and stream shuffled epochs.

use rand::seq::SliceRandom;

use super::TrainError;
use crate::rng::{derive_seed, rng_from_seed};
use crate::vocab::{TokenId, Vocab};

/// Tokenize the corpus canonically and chunk it into non-overlapping
/// windows of `context_len` ids; a trailing partial window is dropped.
pub fn chunk_windows(
    vocab: &Vocab,
    corpus: &[u8],
    context_len: usize,
) -> Result<Vec<Vec<TokenId>>, TrainError> {
    if corpus.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let tokens = vocab.encode_canonical(corpus)?;
    let windows: Vec<Vec<TokenId>> = tokens
        .ids
        .chunks_exact(context_len)
        .map(|w| w.to_vec())
        .collect();
    if windows.is_empty() {
        return Err(TrainError::CorpusTooShort { tokens: tokens.k(), needed: context_len });
    }
    Ok(windows)
}

/// Split off the last `heldout_fraction` of windows before any shuffling,
/// so the split is corpus-position-based and stable across seeds. At least
/// one window lands on each side.
pub fn split_heldout(
    windows: Vec<Vec<TokenId>>,
    heldout_fraction: f64,
) -> Result<(Vec<Vec<TokenId>>, Vec<Vec<TokenId>>), TrainError> {
    if !(0.0..1.0).contains(&heldout_fraction) || heldout_fraction == 0.0 {
        return Err(TrainError::InvalidConfig(format!(
            "heldout_fraction {heldout_fraction} must be in (0, 1)"
        )));
    }
    let n = windows.len();
    let heldout = ((n as f64 * heldout_fraction).round() as usize).clamp(1, n.saturating_sub(1));
    if n < 2 {
        return Err(TrainError::CorpusTooShort { tokens: n, needed: 2 });
    }
    let mut train = windows;
    let held = train.split_off(n - heldout);
    Ok((train, held))
}

/// Tokenize, chunk, and stream: the windows plus an iterator yielding
/// `windows.len() * repetitions` window indices, one shuffled pass per
/// repetition. Homotoken sampling is not baked in here; it happens per
/// draw in the training step so each repetition sees fresh segmentations.
/// Finite epoch stream produced by [`build_dataset`].
pub type WindowStream = std::iter::Take<ExampleStream>;

pub fn build_dataset(
    vocab: &Vocab,
    corpus: &[u8],
    context_len: usize,
    repetitions: usize,
    seed: u64,
) -> Result<(Vec<Vec<TokenId>>, WindowStream), TrainError> {
    let windows = chunk_windows(vocab, corpus, context_len)?;
    let stream = ExampleStream::new(windows.len(), seed).take(windows.len() * repetitions);
    Ok((windows, stream))
}

/// Epoch stream over window indices: each pass visits every window exactly
/// once in an order shuffled with a pass-derived seed, so R passes yield
/// each window exactly R times. The iterator is unbounded; callers stop at
/// `windows * R` draws for exact data accounting, or at a step budget.
pub struct ExampleStream {
    n_windows: usize,
    seed: u64,
    pass: u64,
    order: Vec<usize>,
    cursor: usize,
}

impl ExampleStream {
    pub fn new(n_windows: usize, seed: u64) -> ExampleStream {
        assert!(n_windows > 0, "no windows to stream");
        ExampleStream { n_windows, seed, pass: 0, order: Vec::new(), cursor: 0 }
    }

    fn reshuffle(&mut self) {
        let mut rng = rng_from_seed(derive_seed(self.seed, self.pass, 0));
        self.order = (0..self.n_windows).collect();
        self.order.shuffle(&mut rng);
        self.cursor = 0;
        self.pass += 1;
    }
}

impl Iterator for ExampleStream {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        if self.cursor >= self.order.len() {
            self.reshuffle();
        }
        let idx = self.order[self.cursor];
        self.cursor += 1;
        Some(idx)
    }
}
