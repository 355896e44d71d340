//! AdamW, cosine learning-rate schedule, global-norm clipping, and the shared
//! mini-batch update used by every training loop in the crate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ParamId, ParamStore};
use crate::tensor::{Tape, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub warmup_steps: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub grad_clip_norm: f64,
    pub grad_accum_steps: usize,
    pub seed: u64,
    /// Run a dev evaluation every this many optimizer steps (0: once per epoch).
    pub eval_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 0.01,
            warmup_steps: 0,
            epochs: 1,
            batch_size: 16,
            grad_clip_norm: 1.0,
            grad_accum_steps: 1,
            seed: 1,
            eval_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("train config: {what}")));
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.weight_decay < 0.0 {
            return bad("weight_decay must be non-negative");
        }
        if self.batch_size == 0 || self.grad_accum_steps == 0 {
            return bad("batch_size and grad_accum_steps must be positive");
        }
        if !(self.grad_clip_norm > 0.0) {
            return bad("grad_clip_norm must be positive");
        }
        Ok(())
    }

    /// Examples consumed by one optimizer step.
    pub fn examples_per_step(&self) -> usize {
        self.batch_size * self.grad_accum_steps
    }

    pub fn steps_per_epoch(&self, n_examples: usize) -> u64 {
        n_examples.div_ceil(self.examples_per_step()) as u64
    }

    pub fn total_steps(&self, n_examples: usize) -> u64 {
        self.steps_per_epoch(n_examples) * self.epochs as u64
    }
}

/// Linear warmup from 0 to `peak` over `warmup` steps, then
/// `peak·½(1 + cos(π·(step - warmup)/(total - warmup)))`.
pub fn cosine_lr(step: u64, total: u64, warmup: u64, peak: f64) -> f64 {
    if step < warmup {
        return peak * step as f64 / warmup as f64;
    }
    let span = total.saturating_sub(warmup).max(1);
    let progress = ((step - warmup) as f64 / span as f64).min(1.0);
    peak * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Per-parameter gradient sums, indexed like the owning store.
#[derive(Clone, Debug)]
pub struct GradBuffer {
    grads: Vec<Option<Vec<f64>>>,
}

impl GradBuffer {
    pub fn new(store: &ParamStore) -> Self {
        Self {
            grads: vec![None; store.len()],
        }
    }

    pub fn add(&mut self, id: ParamId, g: &[f64]) {
        let slot = self.grads[id.index()].get_or_insert_with(|| vec![0.0; g.len()]);
        for (s, v) in slot.iter_mut().zip(g) {
            *s += v;
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.grads[id.index()].as_deref()
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales so the global norm is at most `max_norm`; returns the norm before clipping.
    pub fn clip(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        let coef = max_norm / (norm + 1e-6);
        if coef < 1.0 {
            self.scale(coef);
        }
        norm
    }
}

/// Decoupled-weight-decay Adam with β = (0.9, 0.999), ε = 1e-8.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub t: u64,
    pub m: Vec<Option<Vec<f64>>>,
    pub v: Vec<Option<Vec<f64>>>,
}

impl AdamW {
    pub fn new(store: &ParamStore, weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: vec![None; store.len()],
            v: vec![None; store.len()],
        }
    }

    /// One update of every trainable parameter that has a gradient. Frozen
    /// entries are skipped and never acquire optimizer state.
    pub fn step(&mut self, store: &mut ParamStore, grads: &GradBuffer, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for id in store.trainable_ids() {
            let Some(g) = grads.get(id) else { continue };
            let i = id.index();
            let m = self.m[i].get_or_insert_with(|| vec![0.0; g.len()]);
            let v = self.v[i].get_or_insert_with(|| vec![0.0; g.len()]);
            let p = store.get_mut(id).tensor.data_mut();
            for j in 0..g.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p[j] -= lr * self.weight_decay * p[j];
                p[j] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// A per-example loss together with how many of its scored predictions were right.
pub struct Scored {
    pub loss: Var,
    pub correct: usize,
    pub total: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub correct: usize,
    pub total: usize,
    pub grad_norm: f64,
    pub lr: f64,
}

/// Runs `loss_fn` on every example (one tape each), sums gradients in example
/// order, and returns the summed loss. Summation order is fixed, so splitting a
/// batch into micro-batches is bitwise equivalent to processing it whole.
pub fn accumulate<E>(
    store: &ParamStore,
    examples: &[&E],
    grads: &mut GradBuffer,
    loss_fn: &dyn Fn(&mut Tape, &E) -> Result<Scored>,
) -> Result<(f64, usize, usize)> {
    let mut loss = 0.0;
    let (mut correct, mut total) = (0, 0);
    for ex in examples {
        let mut tape = Tape::with_params(store);
        let scored = loss_fn(&mut tape, ex)?;
        let value = tape.value(scored.loss).item();
        if !value.is_finite() {
            return Err(Error::NonFinite("training loss".into()));
        }
        loss += value;
        correct += scored.correct;
        total += scored.total;
        let g = tape.backward(scored.loss)?;
        for (id, gv) in g.params() {
            grads.add(id, gv);
        }
    }
    Ok((loss, correct, total))
}

/// Drives optimizer steps over a fixed example list with per-epoch shuffling.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub opt: AdamW,
    pub step: u64,
    pub total_steps: u64,
}

impl Trainer {
    pub fn new(cfg: &TrainConfig, store: &ParamStore, n_examples: usize) -> Result<Self> {
        cfg.validate()?;
        if n_examples == 0 {
            return Err(Error::Empty("training examples"));
        }
        Ok(Self {
            cfg: cfg.clone(),
            opt: AdamW::new(store, cfg.weight_decay),
            step: 0,
            total_steps: cfg.total_steps(n_examples),
        })
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        cosine_lr(
            step,
            self.total_steps,
            self.cfg.warmup_steps,
            self.cfg.learning_rate,
        )
    }

    /// Example indices for every optimizer step of `epoch`, in order.
    pub fn epoch_plan(&self, epoch: usize, n_examples: usize) -> Vec<Vec<usize>> {
        use rand::seq::SliceRandom;
        let mut order: Vec<usize> = (0..n_examples).collect();
        order.shuffle(&mut crate::seed::rng_indexed(
            self.cfg.seed,
            "shuffle",
            epoch as u64,
        ));
        order
            .chunks(self.cfg.examples_per_step())
            .map(<[usize]>::to_vec)
            .collect()
    }

    /// One optimizer step over `batch`, processed in micro-batches of `batch_size`.
    pub fn update<E>(
        &mut self,
        store: &mut ParamStore,
        batch: &[&E],
        loss_fn: &dyn Fn(&mut Tape, &E) -> Result<Scored>,
    ) -> Result<StepStats> {
        let mut grads = GradBuffer::new(store);
        let mut stats = StepStats::default();
        for micro in batch.chunks(self.cfg.batch_size) {
            let (l, c, t) = accumulate(store, micro, &mut grads, loss_fn)?;
            stats.loss += l;
            stats.correct += c;
            stats.total += t;
        }
        let n = batch.len() as f64;
        grads.scale(1.0 / n);
        stats.loss /= n;
        stats.grad_norm = grads.clip(self.cfg.grad_clip_norm);
        if !stats.grad_norm.is_finite() {
            return Err(Error::NonFinite("gradient norm".into()));
        }
        stats.lr = self.lr_at(self.step);
        self.opt.step(store, &grads, stats.lr);
        self.step += 1;
        Ok(stats)
    }
}
