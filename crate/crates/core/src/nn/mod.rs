//! Dense tensors, layer primitives with exact reverse-mode gradients, a small
//! autodiff tape, Adam, learning-rate schedules, width-aware initialization
//! rules and the binary checkpoint format.

mod adam;
mod attention;
mod checkpoint;
mod gradcheck;
mod layers;
mod mup;
mod param;
pub mod rng;
mod schedule;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState, Moments};
pub use attention::{attention_backward, attention_forward, AttentionGrads, AttentionLayout};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, restore_params, write_checkpoint};
pub use gradcheck::{gradient_check, relative_error, GradCheckReport};
pub use layers::{
    dropout_mask, layernorm_backward, layernorm_forward, linear_backward, linear_forward, relu_backward, relu_forward,
    Layer, LayerNormCache, Residuals, LAYERNORM_EPS,
};
pub use mup::{mup_scale, param_scale, Init, MupRules, MupTable, ParamRole, ParamScale, ParamSpec};
pub use param::{Param, ParamStore};
pub use schedule::{lr_at, LrSchedule};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{canonical_sum, matmul, matmul_nt, matmul_tn, Tensor};

use thiserror::Error;

/// Whether stochastic layers are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {context}: expected {expected:?}, found {found:?}")]
    ShapeMismatch { context: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("non-finite input to {context}")]
    NonFinite { context: String },
    #[error("non-finite gradient for parameter `{path}`")]
    NonFiniteGradient { path: String },
    #[error("invalid dropout probability {0}; must lie in [0, 1)")]
    DropoutProbability(f64),
    #[error("invalid schedule: warmup {warmup} must satisfy 0 < warmup < total {total}")]
    InvalidSchedule { warmup: usize, total: usize },
    #[error("epoch {epoch} outside schedule of {total} epochs")]
    EpochOutOfRange { epoch: usize, total: usize },
    #[error("attention row {row} has every key position padded")]
    AllPadded { row: usize },
    #[error("checkpoint: bad magic bytes")]
    BadMagic,
    #[error("checkpoint: unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint: truncated at byte {offset}")]
    Truncated { offset: usize },
    #[error("checkpoint: path is not valid UTF-8 at byte {offset}")]
    InvalidPath { offset: usize },
    #[error("checkpoint: missing parameter `{0}`")]
    MissingParam(String),
    #[error("checkpoint: unexpected parameter `{0}`")]
    UnexpectedParam(String),
    #[error("checkpoint: dimension mismatch for `{path}`: expected {expected:?}, found {found:?}")]
    DimensionMismatch { path: String, expected: Vec<usize>, found: Vec<usize> },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
