//! Homotoken sampling: stochastic meaning-preserving re-segmentation of
//! canonical tokens.
//!
//! A homotoken of a token is any id sequence over the same vocabulary that
//! decodes to the identical byte string. Sampling picks the first subtoken
//! uniformly from the `top_n` longest valid proper prefixes (longest by
//! BYTE length; multi-byte text is ranked by bytes, not code points) and
//! tokenizes the remainder canonically. Tokens with no valid split pass
//! through unchanged.

use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::vocab::{CanonicalTokenization, TokenId, Vocab, VocabError};

/// Flattened subtoken stream aligned to its canonical parents.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HomotokenSequence {
    /// Subtoken ids, length K'.
    pub flat_ids: Vec<TokenId>,
    /// Per-parent group lengths (L_1, ..., L_K); each >= 1 and
    /// sum == flat_ids.len().
    pub group_lengths: Vec<usize>,
}

impl HomotokenSequence {
    pub fn empty() -> Self {
        HomotokenSequence { flat_ids: Vec::new(), group_lengths: Vec::new() }
    }

    /// Number of canonical parents K.
    pub fn k(&self) -> usize {
        self.group_lengths.len()
    }

    /// Total subtoken count K' = sum of group lengths.
    pub fn k_prime(&self) -> usize {
        self.flat_ids.len()
    }

    /// Check the structural and decode invariants against a vocabulary and
    /// the canonical parent ids.
    pub fn validate(&self, vocab: &Vocab, canonical: &[TokenId]) -> Result<(), VocabError> {
        assert_eq!(self.group_lengths.len(), canonical.len(), "K mismatch");
        assert_eq!(
            self.group_lengths.iter().sum::<usize>(),
            self.flat_ids.len(),
            "sum of group lengths != K'"
        );
        let mut start = 0;
        for (i, &len) in self.group_lengths.iter().enumerate() {
            assert!(len >= 1, "group {i} has zero length");
            let group = &self.flat_ids[start..start + len];
            let decoded = vocab.decode(group)?;
            assert_eq!(
                decoded,
                vocab.token_bytes(canonical[i])?,
                "group {i} does not decode to its canonical parent"
            );
            start += len;
        }
        Ok(())
    }
}

/// Sampling behaviour knobs.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Candidate-pool size: the first subtoken is drawn uniformly from the
    /// `top_n` longest valid proper prefixes.
    pub top_n: usize,
    /// When set, remainder tokens are themselves re-sampled recursively
    /// instead of being kept canonical.
    pub recursive: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { top_n: 5, recursive: false }
    }
}

/// Ranked candidate pool for a token's first subtoken: every vocab token
/// that is a proper prefix of the token's string and whose remainder the
/// canonical encoder accepts, longest first (ties by ascending id),
/// truncated to `top_n`. The token itself is excluded.
pub fn prefix_candidates(
    vocab: &Vocab,
    token_id: TokenId,
    top_n: usize,
) -> Result<Vec<TokenId>, VocabError> {
    let bytes = vocab.token_bytes(token_id)?;
    let mut pool: Vec<(usize, TokenId)> = Vec::new();
    for len in 1..bytes.len() {
        if let Some(id) = vocab.id_of(&bytes[..len]) {
            if vocab.encode_canonical(&bytes[len..]).is_ok() {
                pool.push((len, id));
            }
        }
    }
    pool.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    pool.truncate(top_n);
    Ok(pool.into_iter().map(|(_, id)| id).collect())
}

/// Sample one segmentation of a single token. Indivisible tokens are
/// returned as themselves.
pub fn sample_homotoken(
    vocab: &Vocab,
    token_id: TokenId,
    config: &SamplerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<TokenId>, VocabError> {
    let pool = prefix_candidates(vocab, token_id, config.top_n)?;
    if pool.is_empty() {
        return Ok(vec![token_id]);
    }
    let first = pool[rng.random_range(0..pool.len())];
    let bytes = vocab.token_bytes(token_id)?;
    let split = vocab.token_bytes(first)?.len();
    let remainder = vocab.encode_canonical(&bytes[split..])?;
    let mut out = vec![first];
    if config.recursive {
        for &id in &remainder.ids {
            out.extend(sample_homotoken(vocab, id, config, rng)?);
        }
    } else {
        out.extend(remainder.ids);
    }
    Ok(out)
}

/// Sample a fresh homotoken sequence for a canonical tokenization. Each
/// parent token is segmented independently; calling again with an advanced
/// rng yields a different augmentation.
pub fn sample_sequence(
    vocab: &Vocab,
    canonical: &CanonicalTokenization,
    config: &SamplerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<HomotokenSequence, VocabError> {
    sample_ids(vocab, &canonical.ids, config, rng)
}

/// Same as [`sample_sequence`] but over a raw id slice (training windows
/// store plain ids).
pub fn sample_ids(
    vocab: &Vocab,
    ids: &[TokenId],
    config: &SamplerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<HomotokenSequence, VocabError> {
    let mut flat_ids = Vec::with_capacity(ids.len());
    let mut group_lengths = Vec::with_capacity(ids.len());
    for &id in ids {
        let group = sample_homotoken(vocab, id, config, rng)?;
        group_lengths.push(group.len());
        flat_ids.extend(group);
    }
    Ok(HomotokenSequence { flat_ids, group_lengths })
}

/// All segmentations of a token found by exhaustive enumeration, plus a
/// flag set when `limit` stopped the search early.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentationSet {
    pub segmentations: BTreeSet<Vec<TokenId>>,
    pub truncated: bool,
}

/// Brute-force oracle: every id sequence over the vocabulary whose decoded
/// concatenation equals the token string, via depth-first search over split
/// points, capped at `limit` results.
pub fn enumerate_segmentations(
    vocab: &Vocab,
    token_id: TokenId,
    limit: usize,
) -> Result<SegmentationSet, VocabError> {
    let bytes = vocab.token_bytes(token_id)?.to_vec();
    let mut set = SegmentationSet { segmentations: BTreeSet::new(), truncated: false };
    let mut prefix = Vec::new();
    walk(vocab, &bytes, 0, &mut prefix, limit, &mut set);
    Ok(set)
}

fn walk(
    vocab: &Vocab,
    bytes: &[u8],
    offset: usize,
    prefix: &mut Vec<TokenId>,
    limit: usize,
    out: &mut SegmentationSet,
) {
    if out.truncated {
        return;
    }
    if offset == bytes.len() {
        if out.segmentations.len() >= limit {
            out.truncated = true;
        } else {
            out.segmentations.insert(prefix.clone());
        }
        return;
    }
    for len in 1..=bytes.len() - offset {
        if let Some(id) = vocab.id_of(&bytes[offset..offset + len]) {
            prefix.push(id);
            walk(vocab, bytes, offset + len, prefix, limit, out);
            prefix.pop();
        }
    }
}

/// True iff the two id sequences decode to the same byte string.
pub fn is_homotoken(vocab: &Vocab, a: &[TokenId], b: &[TokenId]) -> Result<bool, VocabError> {
    Ok(vocab.decode(a)? == vocab.decode(b)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use crate::vocab::Vocab;
    use std::collections::BTreeMap;

    fn toy() -> Vocab {
        Vocab::load(r#"{"a":0,"b":1,"c":2,"ab":3,"bc":4,"abc":5}"#, crate::vocab::VocabFormat::Json)
            .unwrap()
    }

    #[test]
    fn candidates_for_abc_are_ab_then_a() {
        let v = toy();
        assert_eq!(prefix_candidates(&v, 5, 5).unwrap(), vec![3, 0]);
        assert_eq!(prefix_candidates(&v, 5, 1).unwrap(), vec![3]);
    }

    #[test]
    fn single_byte_token_has_no_candidates() {
        let v = toy();
        assert_eq!(prefix_candidates(&v, 0, 5).unwrap(), Vec::<TokenId>::new());
        assert!(matches!(prefix_candidates(&v, 42, 5), Err(VocabError::UnknownId(42))));
    }

    #[test]
    fn candidates_require_greedy_tokenizable_remainder() {
        // "ab" is a prefix of "abcc" but its remainder "cc" has no cover
        // ("c" is not a token here), so "ab" is filtered out; "a" survives
        // because "bcc" encodes as the single token 3.
        let v = Vocab::from_pairs(vec![
            (b"a".to_vec(), 0),
            (b"ab".to_vec(), 1),
            (b"abcc".to_vec(), 2),
            (b"bcc".to_vec(), 3),
        ])
        .unwrap();
        assert_eq!(prefix_candidates(&v, 2, 5).unwrap(), vec![0]);
        let mut rng = rng_from_seed(1);
        let s = sample_homotoken(&v, 2, &SamplerConfig::default(), &mut rng).unwrap();
        assert_eq!(s, vec![0, 3]);
    }

    #[test]
    fn sample_outcomes_for_abc_cover_both_candidates() {
        let v = toy();
        let cfg = SamplerConfig::default();
        let mut seen = BTreeSet::new();
        for seed in 0..64 {
            let mut rng = rng_from_seed(seed);
            let s = sample_homotoken(&v, 5, &cfg, &mut rng).unwrap();
            // first subtoken "ab" -> remainder "c"; first subtoken "a" -> greedy "bc"
            assert!(s == vec![3, 2] || s == vec![0, 4], "unexpected segmentation {s:?}");
            seen.insert(s);
        }
        assert_eq!(seen.len(), 2);
    }

    #[test]
    fn indivisible_token_passes_through() {
        let v = toy();
        let mut rng = rng_from_seed(9);
        assert_eq!(sample_homotoken(&v, 0, &SamplerConfig::default(), &mut rng).unwrap(), vec![0]);
    }

    #[test]
    fn sample_is_deterministic_under_seed() {
        let v = toy();
        let cfg = SamplerConfig::default();
        for seed in 0..16 {
            let a = sample_homotoken(&v, 5, &cfg, &mut rng_from_seed(seed)).unwrap();
            let b = sample_homotoken(&v, 5, &cfg, &mut rng_from_seed(seed)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn sequence_of_ab_bc_splits_to_single_bytes() {
        let v = toy();
        let canonical = v.encode_canonical(b"abbc").unwrap();
        assert_eq!(canonical.ids, vec![3, 4]);
        let cfg = SamplerConfig::default();
        let mut rng = rng_from_seed(0);
        let seq = sample_sequence(&v, &canonical, &cfg, &mut rng).unwrap();
        // "ab" has only candidate "a" (remainder "b"), "bc" only "b"
        // (remainder "c"), so every seed gives the all-bytes segmentation.
        assert_eq!(seq.flat_ids, vec![0, 1, 1, 2]);
        assert_eq!(seq.group_lengths, vec![2, 2]);
        seq.validate(&v, &canonical.ids).unwrap();
    }

    #[test]
    fn repeated_calls_with_an_advancing_rng_resample() {
        // augmentation semantics: the same canonical sequence drawn twice
        // from one advancing rng yields different segmentations
        let v = toy();
        let canonical = v.encode_canonical(&b"abc".repeat(24)).unwrap();
        let cfg = SamplerConfig::default();
        let mut rng = rng_from_seed(5);
        let first = sample_sequence(&v, &canonical, &cfg, &mut rng).unwrap();
        let second = sample_sequence(&v, &canonical, &cfg, &mut rng).unwrap();
        assert_ne!(first, second);
        first.validate(&v, &canonical.ids).unwrap();
        second.validate(&v, &canonical.ids).unwrap();
    }

    #[test]
    fn empty_canonical_gives_empty_sequence() {
        let v = toy();
        let canonical = v.encode_canonical(b"").unwrap();
        let seq =
            sample_sequence(&v, &canonical, &SamplerConfig::default(), &mut rng_from_seed(3)).unwrap();
        assert_eq!(seq.k(), 0);
        assert_eq!(seq.k_prime(), 0);
    }

    #[test]
    fn enumerate_toy_segmentations() {
        let v = toy();
        let abc = enumerate_segmentations(&v, 5, 1000).unwrap();
        let expect: BTreeSet<Vec<TokenId>> =
            [vec![5], vec![3, 2], vec![0, 4], vec![0, 1, 2]].into_iter().collect();
        assert_eq!(abc.segmentations, expect);
        assert!(!abc.truncated);

        let a = enumerate_segmentations(&v, 0, 1000).unwrap();
        assert_eq!(a.segmentations, [vec![0]].into_iter().collect());

        let ab = enumerate_segmentations(&v, 3, 1000).unwrap();
        assert_eq!(ab.segmentations, [vec![3], vec![0, 1]].into_iter().collect());
    }

    #[test]
    fn enumerate_sets_truncation_flag_at_limit() {
        let v = toy();
        let capped = enumerate_segmentations(&v, 5, 2).unwrap();
        assert!(capped.truncated);
        assert_eq!(capped.segmentations.len(), 2);
    }

    #[test]
    fn is_homotoken_examples() {
        let v = toy();
        assert!(is_homotoken(&v, &[5], &[5]).unwrap());
        assert!(is_homotoken(&v, &[5], &[3, 2]).unwrap());
        assert!(!is_homotoken(&v, &[0], &[1]).unwrap());
        assert!(matches!(is_homotoken(&v, &[0], &[77]), Err(VocabError::UnknownId(77))));
    }

    #[test]
    fn sampled_segmentations_preserve_meaning_and_membership() {
        let v = toy();
        let cfg = SamplerConfig::default();
        let ids: Vec<TokenId> = v.iter().map(|(id, _)| id).collect();
        for id in ids {
            let all = enumerate_segmentations(&v, id, 10_000).unwrap();
            for seed in 0..200 {
                let mut rng = rng_from_seed(seed);
                let s = sample_homotoken(&v, id, &cfg, &mut rng).unwrap();
                assert!(is_homotoken(&v, &s, &[id]).unwrap());
                assert!(all.segmentations.contains(&s), "{s:?} not in oracle set for id {id}");
            }
        }
    }

    #[test]
    fn recursive_mode_still_preserves_meaning() {
        let v = Vocab::from_pairs(vec![
            (b"a".to_vec(), 0),
            (b"b".to_vec(), 1),
            (b"c".to_vec(), 2),
            (b"d".to_vec(), 3),
            (b"ab".to_vec(), 4),
            (b"cd".to_vec(), 5),
            (b"abcd".to_vec(), 6),
            (b"bcd".to_vec(), 7),
        ])
        .unwrap();
        let cfg = SamplerConfig { top_n: 5, recursive: true };
        let all = enumerate_segmentations(&v, 6, 10_000).unwrap();
        for seed in 0..200 {
            let mut rng = rng_from_seed(seed);
            let s = sample_homotoken(&v, 6, &cfg, &mut rng).unwrap();
            assert!(is_homotoken(&v, &s, &[6]).unwrap());
            assert!(all.segmentations.contains(&s));
        }
    }

    #[test]
    fn first_subtoken_distribution_is_uniform() {
        // "abc" has two candidates; over N samples each should appear
        // within 4 sigma of N/2 (binomial).
        let v = toy();
        let cfg = SamplerConfig::default();
        let n = 10_000u32;
        let mut counts: BTreeMap<TokenId, u32> = BTreeMap::new();
        for seed in 0..n {
            let mut rng = rng_from_seed(u64::from(seed));
            let s = sample_homotoken(&v, 5, &cfg, &mut rng).unwrap();
            *counts.entry(s[0]).or_default() += 1;
        }
        let c = 2.0;
        let mean = f64::from(n) / c;
        let sigma = (f64::from(n) * (1.0 / c) * (1.0 - 1.0 / c)).sqrt();
        for (&id, &count) in &counts {
            let dev = (f64::from(count) - mean).abs();
            assert!(dev <= 4.0 * sigma, "candidate {id} count {count} deviates {dev:.1} > 4 sigma");
        }
        assert_eq!(counts.len(), 2);
    }
}
