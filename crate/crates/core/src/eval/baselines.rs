use crate::error::{Error, Result};
use crate::models::{CausalLm, LlmConfig, Seq2Seq};
use crate::nn::{Mask, ParamBuilder, ParamId, ParamStore};
use crate::optim::{Scored, TrainConfig};
use crate::pipeline::{final_token_loss, predict_final_word, prepare_prefix, sample_token, SamplerConfig, TallModel};
use crate::seed;
use crate::tensor::{kernels, Tape, Var};
use crate::train::{fit, FitOptions, FitState};
use crate::world::vocab::BOS;
use crate::world::{BilingualPair, Vocabs};

use super::{Approach, EvalRecord};

fn split_prefix(p: &BilingualPair) -> Result<(&[usize], usize)> {
    match p.lr.split_last() {
        Some((&gold, prefix)) if !prefix.is_empty() => Ok((prefix, gold)),
        _ => Err(Error::contract("evaluation sentences need at least two words")),
    }
}

/// LR sentences in the LLM's id space, cut to `max_len` tokens.
pub fn lr_sequences(vocabs: &Vocabs, pairs: &[BilingualPair], max_len: usize) -> Vec<Vec<usize>> {
    pairs
        .iter()
        .map(|p| p.lr.iter().take(max_len).map(|&t| vocabs.lr_to_llm(t)).collect())
        .collect()
}

/// Feeds `[BOS] + prefix` (LR ids remapped into the LLM space) to a causal LM
/// and samples the next token. Used for direct, fine-tuned and from-scratch.
pub fn eval_lm(
    approach: Approach,
    llm: &CausalLm,
    store: &ParamStore,
    vocabs: &Vocabs,
    pairs: &[BilingualPair],
    sampler: &SamplerConfig,
) -> Result<Vec<EvalRecord>> {
    if pairs.is_empty() {
        return Err(Error::Empty("evaluation dataset"));
    }
    pairs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let (prefix, gold) = split_prefix(p)?;
            let ids: Vec<usize> = [BOS]
                .into_iter()
                .chain(prefix.iter().map(|&t| vocabs.lr_to_llm(t)))
                .collect();
            let mut t = Tape::with_params(store);
            let logits = llm.next_logits(&mut t, &ids)?;
            let tok = sample_token(&logits, sampler, &mut sampler.rng_for(i as u64))?;
            Ok(EvalRecord::new(i, gold, vocabs.llm_to_lr(tok), approach))
        })
        .collect()
}

/// Translate the prefix to HR, let the LLM continue it by one token,
/// translate the completed sentence back, and score its last LR token.
/// Returns the records and how many back-translations came out empty.
#[allow(clippy::too_many_arguments)]
pub fn eval_naive(
    lr2hr: (&Seq2Seq, &ParamStore),
    llm: (&CausalLm, &ParamStore),
    hr2lr: (&Seq2Seq, &ParamStore),
    vocabs: &Vocabs,
    pairs: &[BilingualPair],
    sampler: &SamplerConfig,
) -> Result<(Vec<EvalRecord>, usize)> {
    if pairs.is_empty() {
        return Err(Error::Empty("evaluation dataset"));
    }
    let mut empty = 0;
    let mut out = Vec::with_capacity(pairs.len());
    for (i, p) in pairs.iter().enumerate() {
        let (prefix, gold) = split_prefix(p)?;
        let mut hr = lr2hr.0.greedy(lr2hr.1, prefix, prefix.len() + 4)?;
        let ids: Vec<usize> = [BOS]
            .into_iter()
            .chain(hr.iter().map(|&t| vocabs.hr_to_llm(t)))
            .collect();
        let mut t = Tape::with_params(llm.1);
        let logits = llm.0.next_logits(&mut t, &ids)?;
        let tok = sample_token(&logits, sampler, &mut sampler.rng_for(i as u64))?;
        let next = vocabs.llm_to_hr(tok);
        if vocabs.word_of(next).is_some() {
            hr.push(next);
        }
        let lr = if hr.is_empty() {
            Vec::new()
        } else {
            hr2lr.0.greedy(hr2lr.1, &hr, hr.len() + 4)?
        };
        let predicted = match lr.last() {
            Some(&w) => w,
            None => {
                empty += 1;
                crate::world::vocab::UNK
            }
        };
        out.push(EvalRecord::new(i, gold, predicted, Approach::Naive));
    }
    Ok((out, empty))
}

pub fn eval_tall(
    model: &TallModel,
    store: &ParamStore,
    lr2hr: (&Seq2Seq, &ParamStore),
    vocabs: &Vocabs,
    pairs: &[BilingualPair],
    sampler: &SamplerConfig,
) -> Result<Vec<EvalRecord>> {
    if pairs.is_empty() {
        return Err(Error::Empty("evaluation dataset"));
    }
    pairs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let (prefix, gold) = split_prefix(p)?;
            let (hr_tokens, target_in) = prepare_prefix(lr2hr.0, lr2hr.1, vocabs, prefix)?;
            let predicted = predict_final_word(
                model,
                store,
                &hr_tokens,
                &target_in,
                prefix,
                sampler,
                &mut sampler.rng_for(i as u64),
            )?;
            Ok(EvalRecord::new(i, gold, predicted, Approach::Tall))
        })
        .collect()
}

/// A frozen LLM (`llm.*`) behind `n_prompt` trainable input vectors
/// (`soft_prompt.embeddings`).
#[derive(Clone, Debug)]
pub struct SoftPromptModel {
    pub llm: CausalLm,
    pub prompt: ParamId,
    pub n_prompt: usize,
}

/// `[BOS] + prefix` and the gold next token, both in LLM ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptExample {
    pub ids: Vec<usize>,
    pub gold: usize,
}

pub fn soft_prompt_examples(vocabs: &Vocabs, pairs: &[BilingualPair]) -> Result<Vec<PromptExample>> {
    pairs
        .iter()
        .map(|p| {
            let (prefix, gold) = split_prefix(p)?;
            Ok(PromptExample {
                ids: [BOS]
                    .into_iter()
                    .chain(prefix.iter().map(|&t| vocabs.lr_to_llm(t)))
                    .collect(),
                gold: vocabs.lr_to_llm(gold),
            })
        })
        .collect()
}

impl SoftPromptModel {
    /// Fresh prompt vectors around a copy of `llm_store`, which is frozen.
    pub fn assemble(cfg: LlmConfig, vocab: usize, n_prompt: usize, init_seed: u64, llm_store: &ParamStore) -> Result<(Self, ParamStore)> {
        if n_prompt == 0 {
            return Err(Error::Config("soft prompt needs at least one vector".into()));
        }
        let mut store = ParamStore::new();
        let mut rng = seed::rng(init_seed, "soft-prompt");
        let mut b = ParamBuilder::new(&mut store, &mut rng);
        let llm = CausalLm::new(&mut b.scope("llm"), cfg, vocab)?;
        let prompt = b
            .scope("soft_prompt")
            .normal("embeddings", &[n_prompt, cfg.d_model], (1.0 / cfg.d_model as f64).sqrt())?;
        store.load_prefixed(llm_store, "llm")?;
        store.freeze("llm")?;
        Ok((Self { llm, prompt, n_prompt }, store))
    }

    /// Attention mask over `[prompt; tokens]`: prompt columns are always
    /// visible, token columns causally.
    pub fn mask(&self, len: usize) -> Mask {
        let n = self.n_prompt;
        Mask::from_fn(n + len, n + len, |i, j| j < n || j <= i)
    }

    /// Next-token logits `[1 × V]` after `ids`.
    pub fn next_logits(&self, t: &mut Tape, ids: &[usize]) -> Result<Var> {
        let prompt = t.param(self.prompt);
        let x = self.llm.embed.forward(t, ids)?;
        let x = t.concat_rows(&[prompt, x])?;
        let mask = self.mask(ids.len());
        let h = self.llm.hidden_from_embeddings(t, x, Some(&mask))?;
        let last = t.slice_rows(h, self.n_prompt + ids.len() - 1, 1)?;
        self.llm.logits(t, last)
    }

    pub fn loss(&self, t: &mut Tape, ex: &PromptExample) -> Result<Scored> {
        let logits = self.next_logits(t, &ex.ids)?;
        let correct = usize::from(kernels::argmax(t.value(logits).row(0)) == ex.gold);
        let loss = final_token_loss(t, &[logits], &[ex.gold])?;
        Ok(Scored {
            loss,
            correct,
            total: 1,
        })
    }

    pub fn evaluate(
        &self,
        store: &ParamStore,
        vocabs: &Vocabs,
        pairs: &[BilingualPair],
        sampler: &SamplerConfig,
    ) -> Result<Vec<EvalRecord>> {
        if pairs.is_empty() {
            return Err(Error::Empty("evaluation dataset"));
        }
        let examples = soft_prompt_examples(vocabs, pairs)?;
        examples
            .iter()
            .enumerate()
            .map(|(i, ex)| {
                let mut t = Tape::with_params(store);
                let logits = self.next_logits(&mut t, &ex.ids)?;
                let tok = sample_token(t.value(logits).row(0), sampler, &mut sampler.rng_for(i as u64))?;
                Ok(EvalRecord::new(
                    i,
                    vocabs.llm_to_lr(ex.gold),
                    vocabs.llm_to_lr(tok),
                    Approach::SoftPrompt,
                ))
            })
            .collect()
    }
}

/// Trains only the prompt vectors on the final-token objective.
pub fn train_soft_prompt(
    model: &SoftPromptModel,
    store: &mut ParamStore,
    train: &[PromptExample],
    dev: &[PromptExample],
    tcfg: &TrainConfig,
    opts: &FitOptions,
) -> Result<FitState> {
    if store.trainable_ids() != vec![model.prompt] {
        return Err(Error::contract("soft prompt training must leave only the prompt trainable"));
    }
    let loss_fn = |t: &mut Tape, ex: &PromptExample| model.loss(t, ex);
    let mut state = FitState::new(tcfg, store, train.len())?;
    fit(store, &mut state, train, dev, &loss_fn, opts, &mut |_, _| Ok(()))?;
    Ok(state)
}

/// Continues next-token training of every LLM parameter on `train`.
pub fn finetune_llm(
    llm: &CausalLm,
    store: &mut ParamStore,
    train: &[Vec<usize>],
    dev: &[Vec<usize>],
    tcfg: &TrainConfig,
    opts: &FitOptions,
) -> Result<FitState> {
    for id in store.ids_with_prefix("") {
        store.get_mut(id).frozen = false;
    }
    let loss_fn = |t: &mut Tape, seq: &Vec<usize>| llm.loss(t, seq);
    let mut state = FitState::new(tcfg, store, train.len())?;
    fit(store, &mut state, train, dev, &loss_fn, opts, &mut |_, _| Ok(()))?;
    Ok(state)
}
