//! Transformer building blocks, the dimension-alignment adapter, and the
//! parameter store that tracks which weights are frozen.

mod adapter;
mod attention;
mod layers;
mod params;
mod transformer;

pub use adapter::{adapter_param_count, Adapter, AdapterSpec};
pub use attention::{AttentionConfig, MultiHeadAttention};
pub use layers::{Embedding, FeedForward, LayerNorm, Linear, LN_EPS};
pub use params::{join, prefix_matches, Param, ParamBuilder, ParamCounts, ParamId, ParamStore};
pub use transformer::{LayerConfig, TransformerLayer, TransformerStack};

pub use crate::tensor::Mask;

/// `mask[i][j] = j <= i`
pub fn causal_mask(n: usize) -> Mask {
    Mask::causal(n)
}
