//! The shared training loop: shuffled mini-batch steps, periodic dev
//! evaluation, best-by-dev-loss snapshots, and resumable state.

use crate::checkpoint::Checkpoint;
use crate::error::{CheckpointError, Error, Result};
use crate::metrics::MetricRecord;
use crate::nn::{ParamId, ParamStore};
use crate::optim::{Scored, TrainConfig, Trainer};
use crate::tensor::{Tape, Tensor};

pub type LossFn<'a, E> = dyn Fn(&mut Tape, &E) -> Result<Scored> + 'a;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalSummary {
    pub loss: f64,
    pub accuracy: f64,
    pub perplexity: f64,
}

/// Mean per-example loss, pooled accuracy, and `exp(loss)` without updating anything.
pub fn evaluate<E>(store: &ParamStore, data: &[E], loss_fn: &LossFn<E>) -> Result<EvalSummary> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation split"));
    }
    let mut loss = 0.0;
    let (mut correct, mut total) = (0usize, 0usize);
    for ex in data {
        let mut t = Tape::with_params(store);
        let s = loss_fn(&mut t, ex)?;
        let v = t.value(s.loss).item();
        if !v.is_finite() {
            return Err(Error::NonFinite("evaluation loss".into()));
        }
        loss += v;
        correct += s.correct;
        total += s.total;
    }
    let loss = loss / data.len() as f64;
    Ok(EvalSummary {
        loss,
        accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
        perplexity: loss.exp(),
    })
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Clone, Debug)]
pub struct FitState {
    pub trainer: Trainer,
    pub best_loss: f64,
    pub best_step: u64,
    pub best: Option<Vec<(ParamId, Tensor)>>,
    pub history: Vec<MetricRecord>,
}

impl FitState {
    pub fn new(cfg: &TrainConfig, store: &ParamStore, n_examples: usize) -> Result<Self> {
        Ok(Self {
            trainer: Trainer::new(cfg, store, n_examples)?,
            best_loss: f64::INFINITY,
            best_step: 0,
            best: None,
            history: Vec::new(),
        })
    }

    pub fn step(&self) -> u64 {
        self.trainer.step
    }

    /// Optimizer moments and the best snapshot as named tensors
    /// (`optim.m.*`, `optim.v.*`, `best.*`), plus their scalar bookkeeping.
    pub fn export(&self, store: &ParamStore, out: &mut ParamStore, meta: &mut toml::Table) -> Result<()> {
        for id in store.trainable_ids() {
            let name = store.name(id);
            let shape = store.get(id).tensor.shape().to_vec();
            for (tag, slot) in [("m", &self.trainer.opt.m), ("v", &self.trainer.opt.v)] {
                if let Some(data) = &slot[id.index()] {
                    out.insert(
                        format!("optim.{tag}.{name}"),
                        Tensor::new(shape.clone(), data.clone())?,
                        false,
                    )?;
                }
            }
        }
        if let Some(best) = &self.best {
            for (id, t) in best {
                out.insert(format!("best.{}", store.name(*id)), t.clone(), false)?;
            }
        }
        meta.insert("step".into(), to_int(self.trainer.step)?);
        meta.insert("optim_t".into(), to_int(self.trainer.opt.t)?);
        meta.insert("best_step".into(), to_int(self.best_step)?);
        if self.best_loss.is_finite() {
            meta.insert("best_loss".into(), self.best_loss.into());
        }
        Ok(())
    }

    /// Inverse of [`FitState::export`]. `store` must already hold the
    /// checkpoint's current trainable values.
    pub fn import(
        cfg: &TrainConfig,
        store: &ParamStore,
        n_examples: usize,
        ck: &Checkpoint,
    ) -> Result<Self> {
        let mut state = Self::new(cfg, store, n_examples)?;
        let int = |k: &str| {
            ck.meta_int(k)
                .and_then(|v| u64::try_from(v).ok())
                .ok_or_else(|| CheckpointError::Malformed(format!("metadata `{k}` missing")))
        };
        state.trainer.step = int("step")?;
        state.trainer.opt.t = int("optim_t")?;
        state.best_step = int("best_step")?;
        state.best_loss = ck
            .meta
            .get("best_loss")
            .and_then(toml::Value::as_float)
            .unwrap_or(f64::INFINITY);
        let mut best = Vec::new();
        for id in store.trainable_ids() {
            let name = store.name(id);
            for (tag, slot) in [("m", &mut state.trainer.opt.m), ("v", &mut state.trainer.opt.v)] {
                if let Some(p) = ck.tensors.by_name(&format!("optim.{tag}.{name}")) {
                    slot[id.index()] = Some(p.tensor.data().to_vec());
                }
            }
            if let Some(p) = ck.tensors.by_name(&format!("best.{name}")) {
                best.push((id, p.tensor.clone()));
            }
        }
        if !best.is_empty() {
            state.best = Some(best);
        }
        Ok(state)
    }
}

fn to_int(v: u64) -> Result<toml::Value> {
    i64::try_from(v)
        .map(toml::Value::Integer)
        .map_err(|_| Error::contract("counter exceeds i64"))
}

#[derive(Clone, Debug, Default)]
pub struct FitOptions {
    pub config_hash: String,
    /// Stop once this many optimizer steps have been taken in total.
    pub stop_at: Option<u64>,
    /// Copy the best dev snapshot back into the store when training finishes.
    pub restore_best: bool,
}

fn should_eval(cfg: &TrainConfig, step: u64, steps_per_epoch: u64, total: u64) -> bool {
    if step == total {
        return true;
    }
    if cfg.eval_every > 0 {
        step % cfg.eval_every == 0
    } else {
        step % steps_per_epoch == 0
    }
}

/// Runs optimizer steps from `state.step()` to the configured total.
/// `on_eval` runs after each dev evaluation (the place to write checkpoints).
pub fn fit<E>(
    store: &mut ParamStore,
    state: &mut FitState,
    train: &[E],
    dev: &[E],
    loss_fn: &LossFn<E>,
    opts: &FitOptions,
    on_eval: &mut dyn FnMut(&ParamStore, &FitState) -> Result<()>,
) -> Result<()> {
    let cfg = state.trainer.cfg.clone();
    let spe = cfg.steps_per_epoch(train.len());
    let total = state.trainer.total_steps;
    let end = opts.stop_at.map_or(total, |s| s.min(total));
    let mut plan: Option<(usize, Vec<Vec<usize>>)> = None;
    while state.trainer.step < end {
        let step = state.trainer.step;
        let epoch = (step / spe) as usize;
        if plan.as_ref().map(|p| p.0) != Some(epoch) {
            plan = Some((epoch, state.trainer.epoch_plan(epoch, train.len())));
        }
        let idx = &plan.as_ref().expect("plan set").1[(step % spe) as usize];
        let batch: Vec<&E> = idx.iter().map(|&i| &train[i]).collect();
        let stats = state.trainer.update(store, &batch, loss_fn)?;
        let done = state.trainer.step;
        state.history.push(MetricRecord {
            step: done,
            split: "train".into(),
            loss: stats.loss,
            accuracy: if stats.total == 0 {
                0.0
            } else {
                stats.correct as f64 / stats.total as f64
            },
            perplexity: stats.loss.exp(),
            lr: stats.lr,
            grad_norm: stats.grad_norm,
            config_hash: opts.config_hash.clone(),
        });
        if !dev.is_empty() && should_eval(&cfg, done, spe, total) {
            let ev = evaluate(store, dev, loss_fn)?;
            state.history.push(MetricRecord {
                step: done,
                split: "dev".into(),
                loss: ev.loss,
                accuracy: ev.accuracy,
                perplexity: ev.perplexity,
                lr: stats.lr,
                grad_norm: stats.grad_norm,
                config_hash: opts.config_hash.clone(),
            });
            if ev.loss < state.best_loss {
                state.best_loss = ev.loss;
                state.best_step = done;
                state.best = Some(
                    store
                        .trainable_ids()
                        .into_iter()
                        .map(|id| (id, store.get(id).tensor.clone()))
                        .collect(),
                );
            }
            on_eval(store, state)?;
        }
    }
    if opts.restore_best && state.trainer.step == total {
        if let Some(best) = &state.best {
            for (id, t) in best {
                store.get_mut(*id).tensor = t.clone();
            }
        }
    }
    Ok(())
}
