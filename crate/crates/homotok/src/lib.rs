//! Homotoken augmentation end to end: meaning-preserving re-segmentation of
//! BPE tokens, the block-causal masks that align subtoken streams with
//! canonical tokens, and a small dual-branch causal language model with a
//! data-constrained training harness.

pub mod alignment;
pub mod cli;
pub mod fixtures;
pub mod model;
pub mod report;
pub mod rng;
pub mod sampler;
pub mod tensor;
pub mod trainer;
pub mod vocab;

pub use alignment::{cross_mask, position_indices, self_mask, BlockMask, PositionIndices};
pub use sampler::{HomotokenSequence, SamplerConfig};
pub use vocab::{CanonicalTokenization, TokenId, Vocab, VocabFormat};
