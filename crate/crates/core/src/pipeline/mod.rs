//! The seven-stage pipeline: frozen encoder, adapter, causal bridge with
//! cross-attention, frozen LLM, adapter, encoder-style bridge, frozen decoder.

mod model;
mod sampler;
mod train;

pub use model::{check_frozen_backbones, BridgeConfig, StageOutputs, TallConfig, TallModel, FROZEN, TRAINABLE};
pub use sampler::{filtered_distribution, sample_token, SamplerConfig};
pub use train::{
    final_token_loss, new_fit_state, predict_final_word, prepare_example, prepare_prefix, tall_loss, train_tall,
    TallExample,
};
