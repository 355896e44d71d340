//! The frozen backbones: encoder-decoder translators and a causal language model.

mod llm;
mod translator;

pub use llm::{CausalLm, LlmConfig};
pub use translator::{Direction, Seq2Seq, TranslatorConfig, TranslatorDecoder, TranslatorEncoder};
