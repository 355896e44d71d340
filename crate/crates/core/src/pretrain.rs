//! Training the frozen stand-ins: the two translators and the HR language model.

use crate::error::Result;
use crate::models::{CausalLm, Direction, LlmConfig, Seq2Seq, TranslatorConfig};
use crate::nn::{ParamBuilder, ParamStore};
use crate::optim::TrainConfig;
use crate::seed;
use crate::train::{evaluate, fit, FitOptions, FitState};
use crate::world::{BilingualPair, Vocabs};

pub fn build_translator(
    direction: Direction,
    cfg: TranslatorConfig,
    vocabs: Vocabs,
    init_seed: u64,
) -> Result<(Seq2Seq, ParamStore)> {
    let mut store = ParamStore::new();
    let mut rng = seed::rng(init_seed, direction.name());
    let (src_v, tgt_v) = match direction {
        Direction::Lr2hr => (vocabs.lr_size(), vocabs.hr_size()),
        Direction::Hr2lr => (vocabs.hr_size(), vocabs.lr_size()),
    };
    let model = Seq2Seq::new(&mut ParamBuilder::new(&mut store, &mut rng), cfg, src_v, tgt_v)?;
    Ok((model, store))
}

pub fn build_llm(cfg: LlmConfig, vocabs: Vocabs, init_seed: u64) -> Result<(CausalLm, ParamStore)> {
    let mut store = ParamStore::new();
    let mut rng = seed::rng(init_seed, "llm");
    let model = CausalLm::new(&mut ParamBuilder::new(&mut store, &mut rng), cfg, vocabs.llm_size())?;
    Ok((model, store))
}

/// `(source, target)` token pairs for one translation direction.
pub fn translation_pairs(direction: Direction, pairs: &[BilingualPair]) -> Vec<(Vec<usize>, Vec<usize>)> {
    pairs
        .iter()
        .map(|p| match direction {
            Direction::Lr2hr => (p.lr.clone(), p.hr.clone()),
            Direction::Hr2lr => (p.hr.clone(), p.lr.clone()),
        })
        .collect()
}

/// Fraction of sources whose greedy translation equals the reference exactly.
pub fn exact_match(model: &Seq2Seq, store: &ParamStore, pairs: &[(Vec<usize>, Vec<usize>)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(crate::Error::Empty("exact-match set"));
    }
    let mut hits = 0;
    for (src, tgt) in pairs {
        if &model.greedy(store, src, tgt.len() + 4)? == tgt {
            hits += 1;
        }
    }
    Ok(hits as f64 / pairs.len() as f64)
}

#[derive(Clone, Debug)]
pub struct PretrainRun<M> {
    pub model: M,
    pub store: ParamStore,
    pub state: FitState,
    /// Greedy exact-match rate for translators, perplexity for the LLM.
    pub heldout_score: f64,
}

/// Full teacher-forced training of a translator. Both directions share one
/// architecture; only the roles of the two vocabularies swap.
pub fn train_translator(
    direction: Direction,
    cfg: TranslatorConfig,
    vocabs: Vocabs,
    train: &[BilingualPair],
    dev: &[BilingualPair],
    heldout: &[BilingualPair],
    tcfg: &TrainConfig,
    opts: &FitOptions,
) -> Result<PretrainRun<Seq2Seq>> {
    let (model, mut store) = build_translator(direction, cfg, vocabs, tcfg.seed)?;
    let train = translation_pairs(direction, train);
    let dev = translation_pairs(direction, dev);
    let loss_fn = |t: &mut crate::Tape, ex: &(Vec<usize>, Vec<usize>)| model.loss(t, &ex.0, &ex.1);
    let mut state = FitState::new(tcfg, &store, train.len())?;
    fit(&mut store, &mut state, &train, &dev, &loss_fn, opts, &mut |_, _| Ok(()))?;
    let heldout_score = exact_match(&model, &store, &translation_pairs(direction, heldout))?;
    Ok(PretrainRun {
        model,
        store,
        state,
        heldout_score,
    })
}

/// HR sentences in the LLM's id space.
pub fn llm_sequences(vocabs: &Vocabs, pairs: &[BilingualPair]) -> Vec<Vec<usize>> {
    pairs
        .iter()
        .map(|p| p.hr.iter().map(|&t| vocabs.hr_to_llm(t)).collect())
        .collect()
}

/// Next-token training of the causal LM over every position.
pub fn train_llm(
    cfg: LlmConfig,
    vocabs: Vocabs,
    train: &[Vec<usize>],
    dev: &[Vec<usize>],
    heldout: &[Vec<usize>],
    tcfg: &TrainConfig,
    opts: &FitOptions,
) -> Result<PretrainRun<CausalLm>> {
    let (model, mut store) = build_llm(cfg, vocabs, tcfg.seed)?;
    let loss_fn = |t: &mut crate::Tape, seq: &Vec<usize>| model.loss(t, seq);
    let mut state = FitState::new(tcfg, &store, train.len())?;
    fit(&mut store, &mut state, train, dev, &loss_fn, opts, &mut |_, _| Ok(()))?;
    let heldout_score = evaluate(&store, heldout, &loss_fn)?.perplexity;
    Ok(PretrainRun {
        model,
        store,
        state,
        heldout_score,
    })
}
