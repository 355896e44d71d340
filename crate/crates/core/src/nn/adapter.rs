//! Dimension-alignment adapter: `Linear → LayerNorm → GELU → Linear → LayerNorm`.
//!
//! This is the only standard two-layer stack whose parameter count matches the
//! reference adapter sizes (bias on both linears, affine LayerNorm at both widths).

use serde::{Deserialize, Serialize};

use super::layers::{LayerNorm, Linear};
use super::params::ParamBuilder;
use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterSpec {
    pub d_in: usize,
    pub d_hidden: usize,
    pub d_out: usize,
}

impl AdapterSpec {
    pub fn new(d_in: usize, d_hidden: usize, d_out: usize) -> Self {
        Self {
            d_in,
            d_hidden,
            d_out,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_in == 0 || self.d_hidden == 0 || self.d_out == 0 {
            return Err(Error::Config(format!("adapter dims must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// `d_in·d_hidden + d_hidden + 2·d_hidden + d_hidden·d_out + d_out + 2·d_out`
pub fn adapter_param_count(spec: &AdapterSpec) -> u64 {
    Linear::param_count(spec.d_in, spec.d_hidden)
        + LayerNorm::param_count(spec.d_hidden)
        + Linear::param_count(spec.d_hidden, spec.d_out)
        + LayerNorm::param_count(spec.d_out)
}

#[derive(Clone, Debug)]
pub struct Adapter {
    pub spec: AdapterSpec,
    pub linear1: Linear,
    pub norm1: LayerNorm,
    pub linear2: Linear,
    pub norm2: LayerNorm,
}

impl Adapter {
    pub fn new(b: &mut ParamBuilder, name: &str, spec: AdapterSpec) -> Result<Self> {
        spec.validate()?;
        let mut s = b.scope(name);
        Ok(Self {
            spec,
            linear1: Linear::new(&mut s, "linear1", spec.d_in, spec.d_hidden)?,
            norm1: LayerNorm::new(&mut s, "norm1", spec.d_hidden)?,
            linear2: Linear::new(&mut s, "linear2", spec.d_hidden, spec.d_out)?,
            norm2: LayerNorm::new(&mut s, "norm2", spec.d_out)?,
        })
    }

    /// Maps `x[…×d_in]` to `[…×d_out]`; leading axes are preserved.
    pub fn forward(&self, t: &mut Tape, x: Var) -> Result<Var> {
        let shape = t.shape(x).to_vec();
        if shape.last() != Some(&self.spec.d_in) || shape.len() < 2 {
            return Err(Error::Shape {
                op: "adapter",
                lhs: shape,
                rhs: vec![self.spec.d_in],
            });
        }
        let rows: usize = shape[..shape.len() - 1].iter().product();
        let flat = if shape.len() == 2 {
            x
        } else {
            t.reshape(x, &[rows, self.spec.d_in])?
        };
        let h = self.linear1.forward(t, flat)?;
        let h = self.norm1.forward(t, h)?;
        let h = t.gelu(h);
        let h = self.linear2.forward(t, h)?;
        let y = self.norm2.forward(t, h)?;
        if shape.len() == 2 {
            Ok(y)
        } else {
            let mut out_shape = shape;
            *out_shape.last_mut().expect("rank >= 2") = self.spec.d_out;
            t.reshape(y, &out_shape)
        }
    }
}
