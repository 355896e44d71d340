use serde::{Deserialize, Serialize};

use super::attention::{AttentionConfig, MultiHeadAttention};
use super::layers::{FeedForward, LayerNorm};
use super::params::ParamBuilder;
use crate::error::{Error, Result};
use crate::tensor::{Mask, Tape, Var};

/// Shape of one pre-LayerNorm residual block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub causal: bool,
    /// Width of the cross-attention memory; `None` for encoder-style blocks.
    pub cross_dim: Option<usize>,
}

impl LayerConfig {
    pub fn attention(&self) -> AttentionConfig {
        AttentionConfig {
            d_model: self.d_model,
            n_heads: self.n_heads,
            causal: self.causal,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.attention().validate()?;
        if self.d_ff == 0 || self.cross_dim == Some(0) {
            return Err(Error::Config(format!("layer dims must be positive: {self:?}")));
        }
        Ok(())
    }

    pub fn param_count(&self) -> u64 {
        let d = self.d_model;
        let mut n = LayerNorm::param_count(d)
            + MultiHeadAttention::param_count(d, d)
            + LayerNorm::param_count(d)
            + FeedForward::param_count(d, self.d_ff);
        if let Some(kv) = self.cross_dim {
            n += LayerNorm::param_count(d) + MultiHeadAttention::param_count(d, kv);
        }
        n
    }
}

/// `x + SelfAttn(LN(x))`, then `+ CrossAttn(LN(·), memory)` when configured,
/// then `+ FFN(LN(·))`.
#[derive(Clone, Debug)]
pub struct TransformerLayer {
    pub cfg: LayerConfig,
    pub self_norm: LayerNorm,
    pub self_attn: MultiHeadAttention,
    pub cross: Option<(LayerNorm, MultiHeadAttention)>,
    pub ffn_norm: LayerNorm,
    pub ffn: FeedForward,
}

impl TransformerLayer {
    pub fn new(b: &mut ParamBuilder, name: &str, cfg: LayerConfig) -> Result<Self> {
        cfg.validate()?;
        let mut s = b.scope(name);
        let d = cfg.d_model;
        let self_norm = LayerNorm::new(&mut s, "self_norm", d)?;
        let self_attn = MultiHeadAttention::new(&mut s, "self_attn", cfg.attention(), d)?;
        let cross = match cfg.cross_dim {
            Some(kv) => {
                let cross_cfg = AttentionConfig {
                    causal: false,
                    ..cfg.attention()
                };
                Some((
                    LayerNorm::new(&mut s, "cross_norm", d)?,
                    MultiHeadAttention::new(&mut s, "cross_attn", cross_cfg, kv)?,
                ))
            }
            None => None,
        };
        let ffn_norm = LayerNorm::new(&mut s, "ffn_norm", d)?;
        let ffn = FeedForward::new(&mut s, "ffn", d, cfg.d_ff)?;
        Ok(Self {
            cfg,
            self_norm,
            self_attn,
            cross,
            ffn_norm,
            ffn,
        })
    }

    pub fn forward(
        &self,
        t: &mut Tape,
        x: Var,
        memory: Option<Var>,
        self_mask: Option<&Mask>,
    ) -> Result<Var> {
        let shape = t.shape(x);
        if shape.len() != 2 || shape[1] != self.cfg.d_model {
            return Err(Error::Shape {
                op: "transformer_layer",
                lhs: shape.to_vec(),
                rhs: vec![self.cfg.d_model],
            });
        }
        let h = self.self_norm.forward(t, x)?;
        let h = self.self_attn.forward(t, h, h, self_mask)?;
        let mut x = t.add(x, h)?;
        match (&self.cross, memory) {
            (Some((norm, attn)), Some(mem)) => {
                let h = norm.forward(t, x)?;
                let h = attn.forward(t, h, mem, None)?;
                x = t.add(x, h)?;
            }
            (None, None) => {}
            (Some(_), None) => {
                return Err(Error::contract("cross-attention layer called without memory"))
            }
            (None, Some(_)) => {
                return Err(Error::contract("memory passed to a layer without cross-attention"))
            }
        }
        let h = self.ffn_norm.forward(t, x)?;
        let h = self.ffn.forward(t, h)?;
        t.add(x, h)
    }
}

/// A sequence of identical blocks with an optional closing LayerNorm.
#[derive(Clone, Debug)]
pub struct TransformerStack {
    pub layers: Vec<TransformerLayer>,
    pub final_norm: Option<LayerNorm>,
}

impl TransformerStack {
    pub fn new(
        b: &mut ParamBuilder,
        name: &str,
        cfg: LayerConfig,
        n_layers: usize,
        final_norm: bool,
    ) -> Result<Self> {
        let mut s = b.scope(name);
        let layers = (0..n_layers)
            .map(|i| TransformerLayer::new(&mut s, &format!("layers.{i}"), cfg))
            .collect::<Result<Vec<_>>>()?;
        let final_norm = if final_norm {
            Some(LayerNorm::new(&mut s, "final_norm", cfg.d_model)?)
        } else {
            None
        };
        Ok(Self { layers, final_norm })
    }

    pub fn param_count(cfg: &LayerConfig, n_layers: usize, final_norm: bool) -> u64 {
        n_layers as u64 * cfg.param_count()
            + if final_norm {
                LayerNorm::param_count(cfg.d_model)
            } else {
                0
            }
    }

    pub fn forward(
        &self,
        t: &mut Tape,
        mut x: Var,
        memory: Option<Var>,
        self_mask: Option<&Mask>,
    ) -> Result<Var> {
        for layer in &self.layers {
            x = layer.forward(t, x, memory, self_mask)?;
        }
        match &self.final_norm {
            Some(n) => n.forward(t, x),
            None => Ok(x),
        }
    }
}
