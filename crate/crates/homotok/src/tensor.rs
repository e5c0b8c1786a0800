//! Dense row-major f64 tensors and the small set of linear-algebra kernels
//! the model needs.
//!
//! All reductions run in ascending index order: `matmul` accumulates over
//! `k = 0, 1, ...` for every output element. This makes every forward pass a
//! fixed sequence of IEEE-754 operations, which the causality probes and the
//! independent-decoder comparison rely on (they assert exact equality).

use serde::{Deserialize, Serialize};

/// Dense row-major tensor of f64 values. Rank 1 and 2 cover everything in
/// this crate; the shape is kept as a vector so checkpoints stay honest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; n] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape/data mismatch");
        Tensor { shape: shape.to_vec(), data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows of a rank-2 tensor (rank-1 tensors are treated as a single row).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            1 => 1,
            2 => self.shape[0],
            r => panic!("rows() on rank-{r} tensor"),
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            1 => self.shape[0],
            2 => self.shape[1],
            r => panic!("cols() on rank-{r} tensor"),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let c = self.cols();
        self.data[i * c + j] = v;
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    /// In-place `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Tensor, scale: f64) {
        assert_eq!(self.shape, other.shape, "add_scaled shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * *b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in &mut self.data {
            *a *= s;
        }
    }
}

/// `C = A @ B` for `A: [m,k]`, `B: [k,n]`. For each `(i,j)` the sum over `k`
/// runs in ascending order (i-k-j loop nest; per-element rounding identical
/// to the textbook i-j-k form).
pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = (a.rows(), a.cols());
    let (kb, n) = (b.rows(), b.cols());
    assert_eq!(k, kb, "matmul inner dim mismatch: {k} vs {kb}");
    let mut c = Tensor::zeros(&[m, n]);
    for i in 0..m {
        let arow = a.row(i);
        let crow = c.row_mut(i);
        for (kk, &aik) in arow.iter().enumerate() {
            let brow = b.row(kk);
            for j in 0..n {
                crow[j] += aik * brow[j];
            }
        }
    }
    c
}

/// `C = Aᵀ @ B` for `A: [k,m]`, `B: [k,n]` (gradient of weights).
pub fn matmul_at(a: &Tensor, b: &Tensor) -> Tensor {
    let (k, m) = (a.rows(), a.cols());
    let (kb, n) = (b.rows(), b.cols());
    assert_eq!(k, kb, "matmul_at inner dim mismatch");
    let mut c = Tensor::zeros(&[m, n]);
    for kk in 0..k {
        let arow = a.row(kk);
        let brow = b.row(kk);
        for (i, &aki) in arow.iter().enumerate() {
            let crow = &mut c.data[i * n..(i + 1) * n];
            for j in 0..n {
                crow[j] += aki * brow[j];
            }
        }
    }
    c
}

/// `C = A @ Bᵀ` for `A: [m,k]`, `B: [n,k]` (attention scores, gradient of
/// inputs). Implemented as transpose-then-multiply; per output element the
/// sum still runs over ascending `k`, identical rounding to a direct dot.
pub fn matmul_bt(a: &Tensor, b: &Tensor) -> Tensor {
    let k = a.cols();
    let (n, kb) = (b.rows(), b.cols());
    assert_eq!(k, kb, "matmul_bt inner dim mismatch");
    let mut bt = Tensor::zeros(&[k, n]);
    for j in 0..n {
        let brow = b.row(j);
        for (kk, &v) in brow.iter().enumerate() {
            bt.data[kk * n + j] = v;
        }
    }
    matmul(a, &bt)
}
