use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Embedding, LayerConfig, Mask, ParamBuilder, TransformerStack};
use crate::optim::Scored;
use crate::tensor::{kernels, Tape, Var};
use crate::world::vocab::{BOS, EOS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LlmConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub layers: usize,
    pub max_len: usize,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            d_model: 96,
            n_heads: 4,
            d_ff: 192,
            layers: 2,
            max_len: 64,
        }
    }
}

impl LlmConfig {
    pub fn layer(&self) -> LayerConfig {
        LayerConfig {
            d_model: self.d_model,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
            causal: true,
            cross_dim: None,
        }
    }
}

/// Decoder-only language model with a tied output head. Parameters: `embed.*`
/// (token table), `pos.*`, `blocks.*`.
#[derive(Clone, Debug)]
pub struct CausalLm {
    pub cfg: LlmConfig,
    pub embed: Embedding,
    pub pos: Embedding,
    pub blocks: TransformerStack,
}

impl CausalLm {
    pub fn new(b: &mut ParamBuilder, cfg: LlmConfig, vocab: usize) -> Result<Self> {
        let std = (1.0 / cfg.d_model as f64).sqrt();
        Ok(Self {
            cfg,
            embed: Embedding::new(b, "embed", vocab, cfg.d_model, std)?,
            pos: Embedding::new(b, "pos", cfg.max_len, cfg.d_model, std)?,
            blocks: TransformerStack::new(b, "blocks", cfg.layer(), cfg.layers, true)?,
        })
    }

    pub fn vocab(&self) -> usize {
        self.embed.vocab
    }

    /// Runs the blocks over ready-made input embeddings `[L×d]`, adding the
    /// model's own position embeddings first. Returns final-norm hidden states.
    pub fn hidden_from_embeddings(&self, t: &mut Tape, x: Var, mask: Option<&Mask>) -> Result<Var> {
        let len = t.shape(x)[0];
        if len > self.pos.vocab {
            return Err(Error::contract(format!(
                "sequence length {len} exceeds {} positions",
                self.pos.vocab
            )));
        }
        let p = self.pos.positions(t, len)?;
        let x = t.add(x, p)?;
        self.blocks.forward(t, x, None, mask)
    }

    pub fn hidden(&self, t: &mut Tape, ids: &[usize]) -> Result<Var> {
        let x = self.embed.forward(t, ids)?;
        self.hidden_from_embeddings(t, x, None)
    }

    pub fn logits(&self, t: &mut Tape, hidden: Var) -> Result<Var> {
        self.embed.logits(t, hidden)
    }

    /// Next-token cross-entropy over every position of `[BOS] + seq`, with EOS
    /// as the final target.
    pub fn loss(&self, t: &mut Tape, seq: &[usize]) -> Result<Scored> {
        let input: Vec<usize> = [BOS].into_iter().chain(seq.iter().copied()).collect();
        let targets: Vec<usize> = seq.iter().copied().chain([EOS]).collect();
        let h = self.hidden(t, &input)?;
        let logits = self.logits(t, h)?;
        let correct = (0..targets.len())
            .filter(|&i| kernels::argmax(t.value(logits).row(i)) == targets[i])
            .count();
        let wrapped: Vec<Option<usize>> = targets.iter().map(|&x| Some(x)).collect();
        let loss = t.cross_entropy(logits, &wrapped)?;
        Ok(Scored {
            loss,
            correct,
            total: targets.len(),
        })
    }

    /// Logits for the token following `ids` (which should start with BOS).
    pub fn next_logits(&self, t: &mut Tape, ids: &[usize]) -> Result<Vec<f64>> {
        let h = self.hidden(t, ids)?;
        let last = t.slice_rows(h, ids.len() - 1, 1)?;
        let logits = self.logits(t, last)?;
        Ok(t.value(logits).data().to_vec())
    }
}
