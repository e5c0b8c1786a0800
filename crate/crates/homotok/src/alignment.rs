//! Block-causal attention masks and the intra-/inter-token position indices
//! that align a flattened subtoken stream with its canonical parents.
//!
//! Indexing is 0-based throughout. `true` means attention is allowed;
//! conversion to additive -inf form happens inside the model.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AlignmentError {
    #[error("group length at index {0} must be >= 1")]
    ZeroLength(usize),
}

/// Boolean attention-visibility matrix. Self masks are K' x K', cross masks
/// K x K'.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct BlockMask {
    pub rows: usize,
    pub cols: usize,
    bits: Vec<bool>,
}

impl BlockMask {
    fn new(rows: usize, cols: usize) -> Self {
        BlockMask { rows, cols, bits: vec![false; rows * cols] }
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.bits[r * self.cols + c]
    }

    fn set(&mut self, r: usize, c: usize, v: bool) {
        self.bits[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[bool] {
        &self.bits[r * self.cols..(r + 1) * self.cols]
    }

    /// Rows as nested vectors, for JSON output.
    pub fn to_rows(&self) -> Vec<Vec<bool>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }

    /// Standard causal lower-triangular n x n mask.
    pub fn causal(n: usize) -> Self {
        let mut m = BlockMask::new(n, n);
        for r in 0..n {
            for c in 0..=r {
                m.set(r, c, true);
            }
        }
        m
    }
}

/// Per-subtoken position indices: offset within the group, and index of the
/// parent canonical token.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PositionIndices {
    pub intra: Vec<usize>,
    pub inter: Vec<usize>,
}

fn check(lengths: &[usize]) -> Result<(), AlignmentError> {
    for (i, &len) in lengths.iter().enumerate() {
        if len == 0 {
            return Err(AlignmentError::ZeroLength(i));
        }
    }
    Ok(())
}

/// Map each flat subtoken index to its group index.
fn parents(lengths: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(lengths.iter().sum());
    for (group, &len) in lengths.iter().enumerate() {
        out.extend(std::iter::repeat_n(group, len));
    }
    out
}

/// K' x K' block-causal self mask: bit (r, c) is true iff
/// parent(r) >= parent(c). Diagonal blocks are all-true, so attention is
/// bidirectional within a group and causal across groups.
pub fn self_mask(lengths: &[usize]) -> Result<BlockMask, AlignmentError> {
    check(lengths)?;
    let parent = parents(lengths);
    let kp = parent.len();
    let mut m = BlockMask::new(kp, kp);
    for r in 0..kp {
        for c in 0..kp {
            m.set(r, c, parent[r] >= parent[c]);
        }
    }
    Ok(m)
}

/// K x K' block-causal cross mask: bit (t, c) is true iff parent(c) <= t.
/// Row t lists the subtokens visible to canonical token t.
pub fn cross_mask(lengths: &[usize]) -> Result<BlockMask, AlignmentError> {
    check(lengths)?;
    let parent = parents(lengths);
    let k = lengths.len();
    let kp = parent.len();
    let mut m = BlockMask::new(k, kp);
    for t in 0..k {
        for c in 0..kp {
            m.set(t, c, parent[c] <= t);
        }
    }
    Ok(m)
}

/// Intra index resets to 0 at each group boundary; inter index repeats the
/// group index L_i times.
pub fn position_indices(lengths: &[usize]) -> Result<PositionIndices, AlignmentError> {
    check(lengths)?;
    let kp = lengths.iter().sum();
    let mut intra = Vec::with_capacity(kp);
    let mut inter = Vec::with_capacity(kp);
    for (group, &len) in lengths.iter().enumerate() {
        for offset in 0..len {
            intra.push(offset);
            inter.push(group);
        }
    }
    Ok(PositionIndices { intra, inter })
}
