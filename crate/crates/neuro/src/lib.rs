//! Small dense-array autodiff for CPU sequence models.
//!
//! The crate provides an eager [`Tape`] with reverse-mode gradients over
//! row-major 2-D arrays, the layers needed for recurrent and attention
//! classifiers and variational autoencoders ([`GruCell`], [`LstmCell`],
//! [`TransformerBlock`], [`BatchNorm1d`], ...), loss primitives, and
//! [`Adam`] with decoupled weight decay.
//!
//! Parameters are always stored as `f32` in a [`ParamSet`]. A tape can run
//! in `f32` for training or in `f64` for finite-difference shadows
//! (see [`gradcheck`]).

pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod optim;
pub mod params;
pub mod scalar;
pub mod tape;

pub use layers::{
    apply_stat_updates, BatchNorm1d, GruCell, LayerNorm, Linear, LstmCell, MultiHeadSelfAttention,
    PositionalEmbedding, TransformerBlock,
};
pub use optim::Adam;
pub use params::{Param, ParamId, ParamSet};
pub use scalar::Scalar;
pub use tape::{standard_normal, Gradients, StatUpdate, Tape, Var};

#[derive(Debug, thiserror::Error)]
pub enum NeuroError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid layer configuration: {0}")]
    Config(String),
    #[error("batch normalization in training mode needs at least 2 rows, got {0}")]
    BatchTooSmall(usize),
}

pub type Result<T, E = NeuroError> = std::result::Result<T, E>;
