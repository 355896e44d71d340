use serde::{Deserialize, Serialize};

use super::layers::Linear;
use super::params::ParamBuilder;
use crate::error::{Error, Result};
use crate::tensor::{Mask, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttentionConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub causal: bool,
}

impl AttentionConfig {
    pub fn new(d_model: usize, n_heads: usize, causal: bool) -> Result<Self> {
        let cfg = Self {
            d_model,
            n_heads,
            causal,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }
}

/// Scaled dot-product attention with separate query/key/value/output projections.
/// Keys and values are projected from inputs of width `d_kv`.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub cfg: AttentionConfig,
    pub d_kv: usize,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
}

impl MultiHeadAttention {
    pub fn new(b: &mut ParamBuilder, name: &str, cfg: AttentionConfig, d_kv: usize) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let mut s = b.scope(name);
        Ok(Self {
            cfg,
            d_kv,
            q: Linear::new(&mut s, "q", d, d)?,
            k: Linear::new(&mut s, "k", d_kv, d)?,
            v: Linear::new(&mut s, "v", d_kv, d)?,
            o: Linear::new(&mut s, "o", d, d)?,
        })
    }

    pub fn param_count(d: usize, d_kv: usize) -> u64 {
        2 * Linear::param_count(d, d) + 2 * Linear::param_count(d_kv, d)
    }

    /// `q_in[Lq×d]` attends over `kv_in[Lkv×d_kv]`. Without an explicit mask a
    /// causal config masks the future and a non-causal one sees everything.
    pub fn forward(&self, t: &mut Tape, q_in: Var, kv_in: Var, mask: Option<&Mask>) -> Result<Var> {
        let lq = t.shape(q_in)[0];
        let lkv = t.shape(kv_in)[0];
        let built;
        let mask = match mask {
            Some(m) => Some(m),
            None if self.cfg.causal => {
                if lq != lkv {
                    return Err(Error::contract(format!(
                        "causal attention needs square scores, got {lq}x{lkv}"
                    )));
                }
                built = Mask::causal(lq);
                Some(&built)
            }
            None => None,
        };
        let bias = match mask {
            Some(m) => {
                if m.rows() != lq || m.cols() != lkv {
                    return Err(Error::Shape {
                        op: "attention mask",
                        lhs: vec![m.rows(), m.cols()],
                        rhs: vec![lq, lkv],
                    });
                }
                Some(m.additive()?)
            }
            None => None,
        };

        let q = self.q.forward(t, q_in)?;
        let k = self.k.forward(t, kv_in)?;
        let v = self.v.forward(t, kv_in)?;
        let hd = self.cfg.head_dim();
        let scale = 1.0 / (hd as f64).sqrt();
        let mut heads = Vec::with_capacity(self.cfg.n_heads);
        for h in 0..self.cfg.n_heads {
            let (qh, kh, vh) = if self.cfg.n_heads == 1 {
                (q, k, v)
            } else {
                (
                    t.slice_cols(q, h * hd, hd)?,
                    t.slice_cols(k, h * hd, hd)?,
                    t.slice_cols(v, h * hd, hd)?,
                )
            };
            let scores = t.matmul_nt(qh, kh)?;
            let mut scores = t.scale(scores, scale);
            if let Some(bias) = &bias {
                scores = t.add_const(scores, bias)?;
            }
            let weights = t.softmax(scores, 1)?;
            heads.push(t.matmul(weights, vh)?);
        }
        let merged = if heads.len() == 1 {
            heads[0]
        } else {
            t.concat_cols(&heads)?
        };
        self.o.forward(t, merged)
    }
}
