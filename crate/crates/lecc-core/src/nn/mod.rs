//! Deterministic neural-network kernel.
//!
//! Everything is generic over [`Scalar`] (f32 for training, f64 for gradient
//! verification), accumulates floats in fixed index order, and draws all
//! randomness from caller-provided seeded generators.

pub mod adamw;
pub mod attention;
pub mod embedding;
pub mod feedforward;
pub mod gradcheck;
pub mod layernorm;
pub mod linear;
pub mod matrix;
pub mod ops;
pub mod param;
pub mod rng;
pub mod scalar;

pub use adamw::{AdamW, AdamWConfig};
pub use attention::MultiHeadAttention;
pub use embedding::Embedding;
pub use feedforward::FeedForward;
pub use layernorm::{LayerNorm, LN_EPSILON};
pub use linear::{Linear, LowRank};
pub use matrix::Matrix;
pub use ops::{cross_entropy, gelu, gelu_grad, softmax_rows};
pub use param::Parameter;
pub use rng::{derive_seed, normal_matrix, seeded};
pub use scalar::{sc, Scalar};
