use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::Rng;
use crate::tensor::kernels;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    /// 0 means argmax.
    pub temperature: f64,
    pub top_k: usize,
    pub top_p: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            temperature: 0.7,
            top_k: 50,
            top_p: 0.95,
            seed: 1,
        }
    }
}

impl SamplerConfig {
    pub fn greedy() -> Self {
        Self {
            temperature: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature >= 0.0) || !self.temperature.is_finite() {
            return Err(Error::Config(format!("sampler temperature {} must be >= 0", self.temperature)));
        }
        if self.top_k == 0 {
            return Err(Error::Config("sampler top_k must be >= 1".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Config(format!("sampler top_p {} must be in (0, 1]", self.top_p)));
        }
        Ok(())
    }

    /// The generator for example `index`; identical whatever order examples run in.
    pub fn rng_for(&self, index: u64) -> Rng {
        crate::seed::rng_indexed(self.seed, "sample", index)
    }
}

/// Candidate ids and their renormalized probabilities after temperature,
/// top-k and top-p filtering, most probable first.
pub fn filtered_distribution(logits: &[f64], cfg: &SamplerConfig) -> Vec<(usize, f64)> {
    let mut order: Vec<usize> = (0..logits.len()).collect();
    // descending by logit, ties by lower id
    order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    order.truncate(cfg.top_k.min(logits.len()).max(1));
    let mut probs: Vec<f64> = order.iter().map(|&i| logits[i] / cfg.temperature).collect();
    kernels::softmax_slice(&mut probs);
    let mut kept = Vec::new();
    let mut cum = 0.0;
    for (&id, &p) in order.iter().zip(&probs) {
        kept.push((id, p));
        cum += p;
        if cum >= cfg.top_p {
            break;
        }
    }
    let mass: f64 = kept.iter().map(|k| k.1).sum();
    kept.iter_mut().for_each(|k| k.1 /= mass);
    kept
}

pub fn sample_token(logits: &[f64], cfg: &SamplerConfig, rng: &mut Rng) -> Result<usize> {
    if logits.is_empty() {
        return Err(Error::Empty("logits"));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("sampler logits".into()));
    }
    if cfg.temperature == 0.0 {
        return Ok(kernels::argmax(logits));
    }
    let dist = filtered_distribution(logits, cfg);
    let u: f64 = rng.random();
    let mut cum = 0.0;
    for &(id, p) in &dist {
        cum += p;
        if u < cum {
            return Ok(id);
        }
    }
    Ok(dist.last().expect("at least one candidate").0)
}
