use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Embedding, LayerConfig, ParamBuilder, ParamStore, TransformerStack};
use crate::optim::Scored;
use crate::tensor::{Tape, Var};
use crate::world::vocab::{BOS, EOS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TranslatorConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub max_len: usize,
}

impl Default for TranslatorConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_heads: 4,
            d_ff: 128,
            encoder_layers: 2,
            decoder_layers: 2,
            max_len: 32,
        }
    }
}

impl TranslatorConfig {
    pub fn layer(&self, causal: bool, cross: bool) -> LayerConfig {
        LayerConfig {
            d_model: self.d_model,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
            causal,
            cross_dim: cross.then_some(self.d_model),
        }
    }
}

/// Which way a translator runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    Lr2hr,
    Hr2lr,
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::Lr2hr => "lr2hr",
            Direction::Hr2lr => "hr2lr",
        }
    }
}

/// Token embedding, learned positions, and a bidirectional stack with final norm.
#[derive(Clone, Debug)]
pub struct TranslatorEncoder {
    pub embed: Embedding,
    pub pos: Embedding,
    pub blocks: TransformerStack,
}

impl TranslatorEncoder {
    pub fn new(b: &mut ParamBuilder, cfg: &TranslatorConfig, vocab: usize) -> Result<Self> {
        let std = (1.0 / cfg.d_model as f64).sqrt();
        Ok(Self {
            embed: Embedding::new(b, "embed", vocab, cfg.d_model, std)?,
            pos: Embedding::new(b, "pos", cfg.max_len, cfg.d_model, std)?,
            blocks: TransformerStack::new(
                b,
                "blocks",
                cfg.layer(false, false),
                cfg.encoder_layers,
                true,
            )?,
        })
    }

    pub fn forward(&self, t: &mut Tape, src: &[usize]) -> Result<Var> {
        if src.len() > self.pos.vocab {
            return Err(Error::contract(format!(
                "source length {} exceeds {} positions",
                src.len(),
                self.pos.vocab
            )));
        }
        let x = self.embed.forward(t, src)?;
        let p = self.pos.positions(t, src.len())?;
        let x = t.add(x, p)?;
        self.blocks.forward(t, x, None, None)
    }
}

/// Causal stack with cross-attention; its output projection is tied to `embed`.
#[derive(Clone, Debug)]
pub struct TranslatorDecoder {
    pub embed: Embedding,
    pub pos: Embedding,
    pub blocks: TransformerStack,
}

impl TranslatorDecoder {
    pub fn new(b: &mut ParamBuilder, cfg: &TranslatorConfig, vocab: usize) -> Result<Self> {
        let std = (1.0 / cfg.d_model as f64).sqrt();
        Ok(Self {
            embed: Embedding::new(b, "embed", vocab, cfg.d_model, std)?,
            pos: Embedding::new(b, "pos", cfg.max_len, cfg.d_model, std)?,
            blocks: TransformerStack::new(
                b,
                "blocks",
                cfg.layer(true, true),
                cfg.decoder_layers,
                true,
            )?,
        })
    }

    pub fn hidden(&self, t: &mut Tape, memory: Var, tgt_in: &[usize]) -> Result<Var> {
        if tgt_in.len() > self.pos.vocab {
            return Err(Error::contract(format!(
                "target length {} exceeds {} positions",
                tgt_in.len(),
                self.pos.vocab
            )));
        }
        let x = self.embed.forward(t, tgt_in)?;
        let p = self.pos.positions(t, tgt_in.len())?;
        let x = t.add(x, p)?;
        self.blocks.forward(t, x, Some(memory), None)
    }

    /// Logits `[len(tgt_in) × vocab]` through the tied output projection.
    pub fn logits(&self, t: &mut Tape, memory: Var, tgt_in: &[usize]) -> Result<Var> {
        let h = self.hidden(t, memory, tgt_in)?;
        self.embed.logits(t, h)
    }
}

/// Encoder-decoder translator. Parameters live under `encoder.*` and `decoder.*`.
#[derive(Clone, Debug)]
pub struct Seq2Seq {
    pub cfg: TranslatorConfig,
    pub encoder: TranslatorEncoder,
    pub decoder: TranslatorDecoder,
}

impl Seq2Seq {
    pub fn new(
        b: &mut ParamBuilder,
        cfg: TranslatorConfig,
        src_vocab: usize,
        tgt_vocab: usize,
    ) -> Result<Self> {
        Ok(Self {
            cfg,
            encoder: TranslatorEncoder::new(&mut b.scope("encoder"), &cfg, src_vocab)?,
            decoder: TranslatorDecoder::new(&mut b.scope("decoder"), &cfg, tgt_vocab)?,
        })
    }

    /// Teacher-forced cross-entropy over every target position plus EOS.
    pub fn loss(&self, t: &mut Tape, src: &[usize], tgt: &[usize]) -> Result<Scored> {
        let memory = self.encoder.forward(t, src)?;
        let mut tgt_in = Vec::with_capacity(tgt.len() + 1);
        tgt_in.push(BOS);
        tgt_in.extend_from_slice(tgt);
        let targets: Vec<usize> = tgt.iter().copied().chain([EOS]).collect();
        let logits = self.decoder.logits(t, memory, &tgt_in)?;
        let correct = (0..targets.len())
            .filter(|&i| crate::tensor::kernels::argmax(t.value(logits).row(i)) == targets[i])
            .count();
        let wrapped: Vec<Option<usize>> = targets.iter().map(|&x| Some(x)).collect();
        let loss = t.cross_entropy(logits, &wrapped)?;
        Ok(Scored {
            loss,
            correct,
            total: targets.len(),
        })
    }

    /// Greedy decoding until EOS or `max_new` tokens. Specials other than EOS
    /// are emitted as-is; callers decide whether they are acceptable.
    pub fn greedy(&self, store: &ParamStore, src: &[usize], max_new: usize) -> Result<Vec<usize>> {
        if src.is_empty() {
            return Ok(Vec::new());
        }
        let mut t = Tape::with_params(store);
        let memory = self.encoder.forward(&mut t, src)?;
        let mut prefix = vec![BOS];
        let limit = max_new.min(self.cfg.max_len - 1);
        while prefix.len() <= limit {
            let logits = self.decoder.logits(&mut t, memory, &prefix)?;
            let last = t.value(logits).rows() - 1;
            let next = crate::tensor::kernels::argmax(t.value(logits).row(last));
            if next == EOS {
                break;
            }
            prefix.push(next);
        }
        Ok(prefix.split_off(1))
    }
}
