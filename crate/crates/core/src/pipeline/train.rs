use crate::error::{Error, Result};
use crate::models::Seq2Seq;
use crate::nn::ParamStore;
use crate::optim::{Scored, TrainConfig};
use crate::seed::Rng;
use crate::tensor::{kernels, Tape, Tensor, Var};
use crate::train::{fit, FitOptions, FitState};
use crate::world::vocab::BOS;
use crate::world::Vocabs;

use super::model::{check_frozen_backbones, TallModel};
use super::sampler::{sample_token, SamplerConfig};

/// One sentence prepared for TALL: the LR input without its last word, the
/// frozen translator's HR rendering of it, and the word to predict.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TallExample {
    pub lr_prefix: Vec<usize>,
    /// LLM ids, BOS first.
    pub hr_tokens: Vec<usize>,
    /// `[BOS] + lr_prefix`, the decoder's teacher-forced input.
    pub target_in: Vec<usize>,
    pub gold: usize,
}

/// Prefix-only form of [`TallExample`] for inference, where no gold word exists.
pub fn prepare_prefix(
    lr2hr: &Seq2Seq,
    lr2hr_store: &ParamStore,
    vocabs: &Vocabs,
    lr_prefix: &[usize],
) -> Result<(Vec<usize>, Vec<usize>)> {
    if lr_prefix.is_empty() {
        return Err(Error::Empty("LR prefix"));
    }
    let hr = lr2hr.greedy(lr2hr_store, lr_prefix, lr_prefix.len() + 4)?;
    let hr_tokens: Vec<usize> = [BOS]
        .into_iter()
        .chain(hr.into_iter().map(|t| vocabs.hr_to_llm(t)))
        .collect();
    let target_in = [BOS].into_iter().chain(lr_prefix.iter().copied()).collect();
    Ok((hr_tokens, target_in))
}

pub fn prepare_example(
    lr2hr: &Seq2Seq,
    lr2hr_store: &ParamStore,
    vocabs: &Vocabs,
    lr_sentence: &[usize],
) -> Result<TallExample> {
    let Some((&gold, prefix)) = lr_sentence.split_last().filter(|(_, p)| !p.is_empty()) else {
        return Err(Error::contract("a TALL example needs at least two LR words"));
    };
    let (hr_tokens, target_in) = prepare_prefix(lr2hr, lr2hr_store, vocabs, prefix)?;
    Ok(TallExample {
        lr_prefix: prefix.to_vec(),
        hr_tokens,
        target_in,
        gold,
    })
}

/// Stacks per-example logits `[len_i × V]` into a zero-padded `[B × S × V]`
/// and applies the final-token cross-entropy with `lengths = len_i`.
pub fn final_token_loss(t: &mut Tape, logits: &[Var], golds: &[usize]) -> Result<Var> {
    if logits.is_empty() || logits.len() != golds.len() {
        return Err(Error::contract("final_token_loss needs one gold token per example"));
    }
    let lengths: Vec<usize> = logits.iter().map(|&l| t.shape(l)[0]).collect();
    let vocab = t.shape(logits[0])[1];
    let s = *lengths.iter().max().expect("nonempty");
    let mut rows = Vec::with_capacity(logits.len() * 2);
    let mut targets = Vec::with_capacity(logits.len());
    for ((&l, &len), &gold) in logits.iter().zip(&lengths).zip(golds) {
        rows.push(l);
        if len < s {
            rows.push(t.constant(Tensor::zeros(vec![s - len, vocab])));
        }
        let mut row = vec![0; len];
        row[len - 1] = gold;
        targets.push(row);
    }
    let stacked = t.concat_rows(&rows)?;
    let batched = t.reshape(stacked, &[logits.len(), s, vocab])?;
    t.cross_entropy_last_token(batched, &targets, &lengths)
}

pub fn tall_loss(model: &TallModel, t: &mut Tape, ex: &TallExample) -> Result<Scored> {
    let logits = model.forward(t, &ex.lr_prefix, &ex.hr_tokens, &ex.target_in)?;
    let last = ex.target_in.len() - 1;
    let correct = usize::from(kernels::argmax(t.value(logits).row(last)) == ex.gold);
    let loss = final_token_loss(t, &[logits], &[ex.gold])?;
    Ok(Scored {
        loss,
        correct,
        total: 1,
    })
}

/// Trains adapters and bridges from `state` onward. Refuses to start unless
/// all three backbones are present and frozen.
pub fn train_tall(
    model: &TallModel,
    store: &mut ParamStore,
    state: &mut FitState,
    train: &[TallExample],
    dev: &[TallExample],
    opts: &FitOptions,
    on_eval: &mut dyn FnMut(&ParamStore, &FitState) -> Result<()>,
) -> Result<()> {
    check_frozen_backbones(store)?;
    let loss_fn = |t: &mut Tape, ex: &TallExample| tall_loss(model, t, ex);
    fit(store, state, train, dev, &loss_fn, opts, on_eval)
}

pub fn new_fit_state(cfg: &TrainConfig, store: &ParamStore, n_train: usize) -> Result<FitState> {
    FitState::new(cfg, store, n_train)
}

/// Runs stages 1–6 on the prefix and samples the next LR token from the
/// decoder's output at the end of `[BOS] + prefix`.
pub fn predict_final_word(
    model: &TallModel,
    store: &ParamStore,
    hr_tokens: &[usize],
    target_in: &[usize],
    lr_prefix: &[usize],
    sampler: &SamplerConfig,
    rng: &mut Rng,
) -> Result<usize> {
    if lr_prefix.is_empty() {
        return Err(Error::Empty("LR prefix"));
    }
    let mut t = Tape::with_params(store);
    let logits = model.forward(&mut t, lr_prefix, hr_tokens, target_in)?;
    let last = t.value(logits).rows() - 1;
    sample_token(t.value(logits).row(last), sampler, rng)
}
