//! Dense `f64` tensors with tape-based reverse-mode autodiff, a GRU cell,
//! Adam, JSON checkpoints and finite-difference gradient checking.

mod adam;
mod embeddings;
mod gradcheck;
mod gru;
mod params;
mod tape;
mod tensor;

pub use adam::AdamState;
pub use embeddings::load_text_embeddings;
pub use gradcheck::{gradient_check, gradient_check_params};
pub use gru::{Gru, GruCell};
pub use params::{
    Checkpoint, NamedTensor, ParamId, ParamStore, Parameter, EMBEDDING_INIT_BOUND, INIT_BOUND,
};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use rand::SeedableRng;

/// Deterministic generator used throughout: identical seed, identical stream.
pub type Rng = rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Global gradient-norm clip applied before every optimizer step.
pub const GRAD_CLIP_NORM: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NnError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("{0}")]
    InvalidArgument(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
