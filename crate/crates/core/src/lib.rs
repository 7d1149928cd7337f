//! Desk-scale, inference-only decoder transformer built from first
//! principles: a byte-pair-encoding tokenizer, dense `f64` matrix
//! arithmetic with the global and row-wise masked softmax variants,
//! feedforward networks on arbitrary DAGs with the fully-connected MLP as
//! a special case, factorized attention heads (`W_QK = W_Q^T W_K`,
//! `W_OV = W_O W_V`) with virtual-head composition, and the full pipeline
//! from text to next-token probabilities.
//!
//! There is no training, no layer normalization and no dropout; the crate
//! realizes the family of functions indexed by the parameter tensors and
//! checks the structural identities that family satisfies.
//!
//! With the default `parallel` feature the row-parallel kernels run on
//! rayon; disabling it falls back to sequential loops with bit-identical
//! results.

pub mod attention;
pub mod error;
pub mod ffn;
pub mod io;
pub mod model;
pub mod tensor;
pub mod tokenizer;

#[doc(hidden)]
pub mod kernels;

pub use attention::{attention_layer, compose_heads, AttentionHead, MultiHead, VirtualHead};
pub use error::{Error, Result};
pub use ffn::{feedforward_layer, Activation, DagNetwork, DagNetworkBuilder, Mlp};
pub use model::{
    GenerationStrategy, ModelConfig, NextTokenDistribution, ResidualBlock, TransformerModel,
};
pub use tensor::{masked_softmax, softmax_matrix, softmax_vector, Matrix, SoftmaxMode, Vector};
pub use tokenizer::{encode_matrix, BpeModel, MergeRule, Symbol, TokenId, TokenMatrix};
