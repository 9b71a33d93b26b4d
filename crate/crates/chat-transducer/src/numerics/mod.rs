//! Minimal dense-tensor numerics with reverse-mode gradients.
//!
//! Just enough for a transducer: matrix multiply, add, ReLU, (masked)
//! softmax, log-softmax, log-sum-exp, embedding lookup, concatenation and
//! narrowing along a dimension. Everything is 64-bit floats, row-major, on
//! one thread.
//!
//! A [`Graph`] is a Wengert tape: forward calls record operations, one
//! [`Graph::backward`] sweep replays them in reverse and accumulates
//! gradients on every node it reaches. A graph and its tensors belong to one
//! forward/backward pass; distinct passes use distinct graphs.

mod graph;
mod tensor;

pub use graph::{Graph, Var};
pub(crate) use graph::log_sum_exp_raw;
pub use tensor::Tensor;

use crate::{Error, Result};

/// log(exp(a) + exp(b)), max-shifted, with -inf treated as probability zero.
pub fn logaddexp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Boolean attention mask over a [rows x cols] score matrix. `true` means
/// position (i, j) may be attended.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    allow: Vec<bool>,
}

impl Mask {
    pub fn new(rows: usize, cols: usize, allow: Vec<bool>) -> Result<Self> {
        if allow.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                op: "mask",
                lhs: vec![rows, cols],
                rhs: vec![allow.len()],
            });
        }
        Ok(Mask { rows, cols, allow })
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut allow = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                allow.push(f(i, j));
            }
        }
        Mask { rows, cols, allow }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn allowed(&self, i: usize, j: usize) -> bool {
        debug_assert!(i < self.rows && j < self.cols);
        self.allow[i * self.cols + j]
    }
}
