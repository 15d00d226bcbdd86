//! Contextual word encoders.
//!
//! Both implementations yield a `[CLS]` sentence vector plus one row per
//! token: a small trainable transformer, and a file-backed store of
//! embeddings computed elsewhere.

mod precomputed;
mod toy;
mod vocab;

pub use precomputed::{EmbeddingRecord, PrecomputedEmbeddings, PCEMB_MAGIC};
pub use toy::{ToyTransformer, ToyTransformerConfig, LAYER_NORM_EPS};
pub use vocab::{Vocabulary, UNK_TOKEN};

use crate::numerics::{Tensor, Var};

/// Plain-value encoder output: `cls` is `1 x d_c`, `tokens` is `N x d_c`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextualEncoding<T> {
    pub cls: Tensor<T>,
    pub tokens: Tensor<T>,
}

/// Encoder output living on a tape.
#[derive(Debug, Clone, Copy)]
pub struct EncodedVars {
    pub cls: Var,
    pub tokens: Var,
}
