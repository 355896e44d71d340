use super::params::{ParamBuilder, ParamId};
use crate::error::Result;
use crate::tensor::{Tape, Var};

pub const LN_EPS: f64 = 1e-5;

/// `y = x · W + b` with `W` stored as `[d_in × d_out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(b: &mut ParamBuilder, name: &str, d_in: usize, d_out: usize) -> Result<Self> {
        let mut s = b.scope(name);
        let weight = s.normal("weight", &[d_in, d_out], (1.0 / d_in as f64).sqrt())?;
        let bias = s.full("bias", &[d_out], 0.0)?;
        Ok(Self {
            weight,
            bias,
            d_in,
            d_out,
        })
    }

    pub fn param_count(d_in: usize, d_out: usize) -> u64 {
        (d_in * d_out + d_out) as u64
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> Result<Var> {
        let w = t.param(self.weight);
        let b = t.param(self.bias);
        let y = t.matmul(x, w)?;
        t.add_row(y, b)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(b: &mut ParamBuilder, name: &str, d: usize) -> Result<Self> {
        let mut s = b.scope(name);
        let gamma = s.full("gamma", &[d], 1.0)?;
        let beta = s.full("beta", &[d], 0.0)?;
        Ok(Self { gamma, beta })
    }

    pub fn param_count(d: usize) -> u64 {
        2 * d as u64
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> Result<Var> {
        let g = t.param(self.gamma);
        let b = t.param(self.beta);
        t.layer_norm(x, g, b, LN_EPS)
    }
}

/// Lookup table `[vocab × d]`.
#[derive(Clone, Debug)]
pub struct Embedding {
    pub table: ParamId,
    pub vocab: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new(b: &mut ParamBuilder, name: &str, vocab: usize, dim: usize, std: f64) -> Result<Self> {
        let table = b.scope(name).normal("weight", &[vocab, dim], std)?;
        Ok(Self { table, vocab, dim })
    }

    pub fn forward(&self, t: &mut Tape, ids: &[usize]) -> Result<Var> {
        let w = t.param(self.table);
        t.embedding(w, ids)
    }

    /// First `n` rows, used for learned absolute positions.
    pub fn positions(&self, t: &mut Tape, n: usize) -> Result<Var> {
        let w = t.param(self.table);
        t.slice_rows(w, 0, n)
    }

    /// Scores against every row of the table (tied output projection).
    pub fn logits(&self, t: &mut Tape, h: Var) -> Result<Var> {
        let w = t.param(self.table);
        t.matmul_nt(h, w)
    }
}

/// `Linear(d→d_ff) · GELU · Linear(d_ff→d)`
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new(b: &mut ParamBuilder, name: &str, d: usize, d_ff: usize) -> Result<Self> {
        let mut s = b.scope(name);
        Ok(Self {
            up: Linear::new(&mut s, "up", d, d_ff)?,
            down: Linear::new(&mut s, "down", d_ff, d)?,
        })
    }

    pub fn param_count(d: usize, d_ff: usize) -> u64 {
        Linear::param_count(d, d_ff) + Linear::param_count(d_ff, d)
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> Result<Var> {
        let h = self.up.forward(t, x)?;
        let h = t.gelu(h);
        self.down.forward(t, h)
    }
}
