//! Dense 64-bit tensors with tape-based reverse-mode automatic differentiation.
//!
//! Everything the network needs is built from the ops recorded on [`Tape`]:
//! matrix products, 1-D "same" convolutions, max pooling, elementwise
//! activations, softmax, dropout, and a stable binary-cross-entropy head.
//! A tape is private to one forward/backward pass; parameters live outside
//! the tape as [`Tensor`] values and are bound onto it per pass.

mod tape;

pub mod gradcheck;

pub use tape::{LstmWeights, Tape, TensorId};

use thiserror::Error;

/// Errors surfaced by tensor construction and tape ops.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("{op}: empty input")]
    EmptyInput { op: &'static str },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("bce_with_logits: target {0} is not 0 or 1")]
    NonBinaryTarget(f64),
    #[error("{op}: index {index} out of range for dimension of size {size}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        size: usize,
    },
    #[error("invalid span [{start}, {end}] for sentence length {len}")]
    InvalidSpan {
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("gold tags not encodable: {0}")]
    GoldTags(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// A dense row-major tensor value, independent of any tape.
///
/// Parameters are `Tensor`s with `requires_grad = true`; their `grad` slot is
/// filled by the trainer after each backward pass.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    #[serde(default = "default_true")]
    pub requires_grad: bool,
    #[serde(skip)]
    pub grad: Option<Vec<f64>>,
}

fn default_true() -> bool {
    true
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::ShapeMismatch {
                op: "Tensor::new",
                detail: format!("shape {:?} wants {} values, got {}", shape, numel, data.len()),
            });
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: true,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
            requires_grad: true,
            grad: None,
        }
    }

    /// Uniform(-scale, scale) initialization from the given RNG.
    pub fn uniform(shape: Vec<usize>, scale: f64, rng: &mut impl rand::Rng) -> Self {
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| rng.gen_range(-scale..scale)).collect();
        Tensor {
            shape,
            data,
            requires_grad: true,
            grad: None,
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Adds `g` into the gradient slot, allocating it on first use.
    pub fn accumulate_grad(&mut self, g: &[f64]) {
        let grad = self.grad.get_or_insert_with(|| vec![0.0; self.data.len()]);
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
