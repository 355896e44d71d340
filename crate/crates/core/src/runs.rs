//! End-to-end runs over a directory of artifacts: pretraining the backbones,
//! training TALL and the trainable baselines, and producing results tables.
//! The command-line tool is a thin layer over this module.

use std::path::{Path, PathBuf};

use crate::checkpoint::Checkpoint;
use crate::config::{Component, RunConfig};
use crate::error::{CheckpointError, Error, Result};
use crate::eval::{
    eval_lm, eval_naive, eval_tall, finetune_llm, lr_sequences, soft_prompt_examples, train_soft_prompt, Approach,
    DatasetInfo, EvalRecord, ResultRow, ResultsTable, SoftPromptModel,
};
use crate::metrics::{read_jsonl, write_jsonl, MetricRecord};
use crate::models::{CausalLm, Direction, Seq2Seq};
use crate::nn::ParamStore;
use crate::pipeline::{
    new_fit_state, prepare_example, train_tall, TallExample, TallModel, TRAINABLE,
};
use crate::pretrain::{build_llm, build_translator, llm_sequences, train_llm, train_translator};
use crate::tensor::Tape;
use crate::train::{fit, FitOptions, FitState};
use crate::world::{dataset_hash, Dataset, Splits, Vocabs, World};

pub const TALL: &str = "tall";
pub const SOFT_PROMPT: &str = "soft_prompt";
pub const FINETUNED: &str = "finetuned";
pub const FROM_SCRATCH: &str = "from_scratch";

/// Where a run's files live: `<kind>.tlcp`, `<kind>.metrics.jsonl`,
/// `results-seed<N>.{json,txt}`.
#[derive(Clone, Debug)]
pub struct Artifacts {
    pub dir: PathBuf,
}

impl Artifacts {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn checkpoint(&self, kind: &str) -> PathBuf {
        self.dir.join(format!("{kind}.tlcp"))
    }

    pub fn results(&self, seed: u64) -> (PathBuf, PathBuf) {
        (
            self.dir.join(format!("results-seed{seed}.json")),
            self.dir.join(format!("results-seed{seed}.txt")),
        )
    }

    pub fn backbones(&self) -> BackbonePaths {
        BackbonePaths {
            lr2hr: self.checkpoint(Component::Lr2hr.name()),
            llm: self.checkpoint(Component::Llm.name()),
            hr2lr: self.checkpoint(Component::Hr2lr.name()),
        }
    }

    pub fn ensure(&self) -> Result<()> {
        std::fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))
    }
}

/// The metrics log that sits next to a checkpoint.
pub fn metrics_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("metrics.jsonl")
}

#[derive(Clone, Debug)]
pub struct BackbonePaths {
    pub lr2hr: PathBuf,
    pub llm: PathBuf,
    pub hr2lr: PathBuf,
}

/// A validated configuration with its world generated.
#[derive(Clone, Debug)]
pub struct Context {
    pub cfg: RunConfig,
    pub hash: String,
    pub vocabs: Vocabs,
    pub splits: Splits,
}

impl Context {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let world = World::new(cfg.world.clone())?;
        let splits = world.splits()?;
        Ok(Self {
            hash: cfg.hash(),
            vocabs: world.vocabs,
            splits,
            cfg,
        })
    }

    fn meta(&self, kind: &str, seed: u64) -> toml::Table {
        let mut m = toml::Table::new();
        m.insert("kind".into(), kind.into());
        m.insert("config_hash".into(), self.hash.clone().into());
        m.insert("seed".into(), toml::Value::Integer(seed as i64));
        m.insert("config".into(), toml::Value::Table(self.cfg.to_table()));
        m
    }

    fn fit_options(&self) -> FitOptions {
        FitOptions {
            config_hash: self.hash.clone(),
            stop_at: None,
            restore_best: true,
        }
    }
}

fn int(v: u64) -> toml::Value {
    toml::Value::Integer(v as i64)
}

fn save(ck: &Checkpoint, path: &Path, history: &[MetricRecord]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    ck.save(path)?;
    write_jsonl(&metrics_path(path), history)
}

fn load(path: &Path, what: &str) -> Result<Checkpoint> {
    Checkpoint::load(path).map_err(|e| match e {
        Error::Checkpoint(CheckpointError::NotFound(p)) => CheckpointError::NotFound(format!("{what} ({p})")).into(),
        other => other,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainSummary {
    pub kind: &'static str,
    pub steps: u64,
    /// Greedy exact match for translators, perplexity for the LLM.
    pub heldout_score: f64,
    pub path: PathBuf,
}

/// Trains one backbone and writes its checkpoint and metrics log to `out`.
pub fn pretrain(ctx: &Context, component: Component, out: &Path) -> Result<PretrainSummary> {
    let cfg = &ctx.cfg;
    let sp = &ctx.splits;
    let opts = ctx.fit_options();
    let (store, state, score, score_name, seed) = match component {
        Component::Lr2hr | Component::Hr2lr => {
            let dir = if component == Component::Lr2hr {
                Direction::Lr2hr
            } else {
                Direction::Hr2lr
            };
            let tc = &cfg.train.translator;
            let run = train_translator(dir, cfg.models.translator, ctx.vocabs, &sp.train, &sp.dev, &sp.heldout, tc, &opts)?;
            (run.store, run.state, run.heldout_score, "heldout_exact_match", tc.seed)
        }
        Component::Llm => {
            let v = &ctx.vocabs;
            let tc = &cfg.train.llm;
            let run = train_llm(
                cfg.models.llm,
                *v,
                &llm_sequences(v, &sp.train),
                &llm_sequences(v, &sp.dev),
                &llm_sequences(v, &sp.heldout),
                tc,
                &opts,
            )?;
            (run.store, run.state, run.heldout_score, "heldout_perplexity", tc.seed)
        }
    };
    let mut meta = ctx.meta(component.name(), seed);
    meta.insert("component_hash".into(), cfg.component_hash(component).into());
    meta.insert("step".into(), int(state.step()));
    meta.insert(score_name.into(), score.into());
    save(&Checkpoint::new(meta, store), out, &state.history)?;
    Ok(PretrainSummary {
        kind: component.name(),
        steps: state.step(),
        heldout_score: score,
        path: out.to_path_buf(),
    })
}

fn check_component(ck: &Checkpoint, ctx: &Context, c: Component) -> Result<()> {
    ck.expect_str("kind", c.name())?;
    ck.expect_str("component_hash", &ctx.cfg.component_hash(c))?;
    Ok(())
}

fn restore_all(ck: &Checkpoint, store: &mut ParamStore) -> Result<()> {
    let n = ck.restore(store, "", "")?;
    if n != ck.tensors.len() {
        return Err(CheckpointError::Malformed(format!(
            "{} tensors in checkpoint, model has {n}",
            ck.tensors.len()
        ))
        .into());
    }
    Ok(())
}

pub fn load_translator(ctx: &Context, direction: Direction, path: &Path) -> Result<(Seq2Seq, ParamStore)> {
    let c = match direction {
        Direction::Lr2hr => Component::Lr2hr,
        Direction::Hr2lr => Component::Hr2lr,
    };
    let ck = load(path, c.name())?;
    check_component(&ck, ctx, c)?;
    let (model, mut store) = build_translator(direction, ctx.cfg.models.translator, ctx.vocabs, 0)?;
    restore_all(&ck, &mut store)?;
    Ok((model, store))
}

pub fn load_llm(ctx: &Context, path: &Path) -> Result<(CausalLm, ParamStore)> {
    let ck = load(path, Component::Llm.name())?;
    check_component(&ck, ctx, Component::Llm)?;
    let (model, mut store) = build_llm(ctx.cfg.models.llm, ctx.vocabs, 0)?;
    restore_all(&ck, &mut store)?;
    Ok((model, store))
}

/// The three frozen components.
#[derive(Clone, Debug)]
pub struct Backbones {
    pub lr2hr: Seq2Seq,
    pub lr2hr_store: ParamStore,
    pub llm: CausalLm,
    pub llm_store: ParamStore,
    pub hr2lr: Seq2Seq,
    pub hr2lr_store: ParamStore,
}

/// Loads all three backbones. A missing or mismatched file is reported with
/// the pipeline stage it feeds.
pub fn load_backbones(ctx: &Context, paths: &BackbonePaths) -> Result<Backbones> {
    let at = |stage: u8| {
        move |e: Error| match e {
            Error::Checkpoint(c) => Error::Checkpoint(match c {
                CheckpointError::NotFound(m) => CheckpointError::NotFound(format!("stage {stage} backbone {m}")),
                CheckpointError::ConfigMismatch(m) => CheckpointError::ConfigMismatch(format!("stage {stage} backbone: {m}")),
                other => other,
            }),
            other => other,
        }
    };
    let (lr2hr, lr2hr_store) = load_translator(ctx, Direction::Lr2hr, &paths.lr2hr).map_err(at(1))?;
    let (llm, llm_store) = load_llm(ctx, &paths.llm).map_err(at(4))?;
    let (hr2lr, hr2lr_store) = load_translator(ctx, Direction::Hr2lr, &paths.hr2lr).map_err(at(7))?;
    Ok(Backbones {
        lr2hr,
        lr2hr_store,
        llm,
        llm_store,
        hr2lr,
        hr2lr_store,
    })
}

#[derive(Clone, Debug, Default)]
pub struct TallOptions {
    /// Check every stage's shapes on one example and stop.
    pub dry_run: bool,
    /// Continue from an existing TALL checkpoint with the same config hash.
    pub resume: bool,
    /// Stop (and checkpoint) once this many optimizer steps are done.
    pub stop_at: Option<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TallSummary {
    pub step: u64,
    pub total_steps: u64,
    pub complete: bool,
    pub resumed_from: Option<u64>,
    pub best_step: u64,
    pub best_loss: f64,
    /// `(stage, output shape)` for stages 1–7, filled by a dry run.
    pub stage_shapes: Vec<(u8, Vec<usize>)>,
}

pub fn prepare_examples(ctx: &Context, bb: &Backbones, pairs: &[crate::world::BilingualPair]) -> Result<Vec<TallExample>> {
    pairs
        .iter()
        .map(|p| prepare_example(&bb.lr2hr, &bb.lr2hr_store, &ctx.vocabs, &p.lr))
        .collect()
}

fn assemble_tall(ctx: &Context, bb: &Backbones) -> Result<(TallModel, ParamStore)> {
    TallModel::assemble(
        ctx.cfg.tall_config(),
        ctx.cfg.train.tall.seed,
        &bb.lr2hr_store,
        &bb.llm_store,
        &bb.hr2lr_store,
    )
}

fn save_tall(ctx: &Context, path: &Path, store: &ParamStore, state: &FitState) -> Result<()> {
    let mut tensors = ParamStore::new();
    for id in store.trainable_ids() {
        tensors.insert(store.name(id), store.get(id).tensor.clone(), false)?;
    }
    let mut meta = ctx.meta(TALL, ctx.cfg.train.tall.seed);
    state.export(store, &mut tensors, &mut meta)?;
    meta.insert("total_steps".into(), int(state.trainer.total_steps));
    meta.insert(
        "complete".into(),
        toml::Value::Boolean(state.step() == state.trainer.total_steps),
    );
    for c in [Component::Lr2hr, Component::Llm, Component::Hr2lr] {
        meta.insert(format!("{}_hash", c.name()), ctx.cfg.component_hash(c).into());
    }
    save(&Checkpoint::new(meta, tensors), path, &state.history)
}

fn restore_trainable(ck: &Checkpoint, store: &mut ParamStore, prefixes: &[&str]) -> Result<()> {
    for p in prefixes {
        ck.restore(store, p, p)?;
    }
    Ok(())
}

/// Trains adapters and bridges on top of `bb`, checkpointing to `out` after
/// every dev evaluation and at the end.
pub fn train_tall_run(ctx: &Context, bb: &Backbones, out: &Path, opts: &TallOptions) -> Result<TallSummary> {
    let tcfg = &ctx.cfg.train.tall;
    let (model, mut store) = assemble_tall(ctx, bb)?;
    let n_train = ctx.splits.train.len();

    if opts.dry_run {
        let first = ctx.splits.train.first().ok_or(Error::Empty("training split"))?;
        let ex = prepare_example(&bb.lr2hr, &bb.lr2hr_store, &ctx.vocabs, &first.lr)?;
        let mut t = Tape::with_params(&store);
        let s = model.stages(&mut t, &ex.lr_prefix, &ex.hr_tokens, &ex.target_in)?;
        let stage_shapes = [s.encoder, s.adapter1, s.bridge1, s.llm, s.adapter2, s.bridge2, s.logits]
            .iter()
            .zip(1..)
            .map(|(&v, i)| (i, t.shape(v).to_vec()))
            .collect();
        let total = tcfg.total_steps(n_train);
        return Ok(TallSummary {
            step: 0,
            total_steps: total,
            complete: false,
            resumed_from: None,
            best_step: 0,
            best_loss: f64::INFINITY,
            stage_shapes,
        });
    }

    let mut resumed_from = None;
    let mut state = if opts.resume && out.exists() {
        let ck = load(out, TALL)?;
        ck.expect_str("kind", TALL)?;
        ck.expect_str("config_hash", &ctx.hash)?;
        restore_trainable(&ck, &mut store, &TRAINABLE)?;
        let mut state = FitState::import(tcfg, &store, n_train, &ck)?;
        let step = state.step();
        let mpath = metrics_path(out);
        if mpath.exists() {
            state.history = read_jsonl(&mpath)?.into_iter().filter(|r| r.step <= step).collect();
        }
        resumed_from = Some(step);
        state
    } else {
        new_fit_state(tcfg, &store, n_train)?
    };

    if state.step() < state.trainer.total_steps {
        let train = prepare_examples(ctx, bb, &ctx.splits.train)?;
        let dev = prepare_examples(ctx, bb, &ctx.splits.dev)?;
        let fo = FitOptions {
            stop_at: opts.stop_at,
            ..ctx.fit_options()
        };
        train_tall(&model, &mut store, &mut state, &train, &dev, &fo, &mut |s, st| save_tall(ctx, out, s, st))?;
        save_tall(ctx, out, &store, &state)?;
    }
    Ok(TallSummary {
        step: state.step(),
        total_steps: state.trainer.total_steps,
        complete: state.step() == state.trainer.total_steps,
        resumed_from,
        best_step: state.best_step,
        best_loss: state.best_loss,
        stage_shapes: Vec::new(),
    })
}

fn check_complete(ck: &Checkpoint, kind: &str) -> Result<()> {
    ck.expect_str("kind", kind)?;
    match ck.meta.get("complete").and_then(toml::Value::as_bool) {
        Some(true) => Ok(()),
        _ => Err(CheckpointError::ConfigMismatch(format!("{kind} checkpoint is from an unfinished run")).into()),
    }
}

/// A finished TALL model read back from `path`.
pub fn load_tall(ctx: &Context, bb: &Backbones, path: &Path) -> Result<(TallModel, ParamStore)> {
    let ck = load(path, TALL)?;
    check_complete(&ck, TALL)?;
    for c in [Component::Lr2hr, Component::Llm, Component::Hr2lr] {
        ck.expect_str(&format!("{}_hash", c.name()), &ctx.cfg.component_hash(c))?;
    }
    let (model, mut store) = assemble_tall(ctx, bb)?;
    restore_trainable(&ck, &mut store, &TRAINABLE)?;
    Ok((model, store))
}

/// The three baselines that need their own training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Baseline {
    SoftPrompt,
    Finetuned,
    FromScratch,
}

impl Baseline {
    pub fn kind(self) -> &'static str {
        match self {
            Baseline::SoftPrompt => SOFT_PROMPT,
            Baseline::Finetuned => FINETUNED,
            Baseline::FromScratch => FROM_SCRATCH,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match Approach::parse(s)? {
            Approach::SoftPrompt => Some(Baseline::SoftPrompt),
            Approach::Finetuned => Some(Baseline::Finetuned),
            Approach::FromScratch => Some(Baseline::FromScratch),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineSummary {
    pub kind: &'static str,
    pub steps: u64,
    pub best_loss: f64,
}

/// Trains one baseline and writes `<out>` plus its metrics log. Soft prompt
/// and fine-tuning start from the LLM checkpoint at `llm_path`.
pub fn train_baseline(ctx: &Context, which: Baseline, llm_path: &Path, out: &Path) -> Result<BaselineSummary> {
    let cfg = &ctx.cfg;
    let v = &ctx.vocabs;
    let sp = &ctx.splits;
    let opts = ctx.fit_options();
    let (tensors, state, seed) = match which {
        Baseline::SoftPrompt => {
            let (_, llm_store) = load_llm(ctx, llm_path)?;
            let tc = &cfg.train.soft_prompt;
            let (model, mut store) =
                SoftPromptModel::assemble(cfg.models.llm, v.llm_size(), cfg.models.baselines.n_prompt, tc.seed, &llm_store)?;
            let train = soft_prompt_examples(v, &sp.train)?;
            let dev = soft_prompt_examples(v, &sp.dev)?;
            let state = train_soft_prompt(&model, &mut store, &train, &dev, tc, &opts)?;
            let mut tensors = ParamStore::new();
            tensors.insert("soft_prompt.embeddings", store.get(model.prompt).tensor.clone(), false)?;
            (tensors, state, tc.seed)
        }
        Baseline::Finetuned => {
            let (llm, mut store) = load_llm(ctx, llm_path)?;
            let tc = &cfg.train.finetune;
            let max = cfg.models.baselines.finetune_max_len;
            let state = finetune_llm(&llm, &mut store, &lr_sequences(v, &sp.train, max), &lr_sequences(v, &sp.dev, max), tc, &opts)?;
            (store, state, tc.seed)
        }
        Baseline::FromScratch => {
            let tc = &cfg.train.from_scratch;
            let (llm, mut store) = build_llm(cfg.models.llm, *v, tc.seed)?;
            let max = cfg.models.llm.max_len - 1;
            let train = lr_sequences(v, &sp.train, max);
            let dev = lr_sequences(v, &sp.dev, max);
            let loss_fn = |t: &mut Tape, seq: &Vec<usize>| llm.loss(t, seq);
            let mut state = FitState::new(tc, &store, train.len())?;
            fit(&mut store, &mut state, &train, &dev, &loss_fn, &opts, &mut |_, _| Ok(()))?;
            (store, state, tc.seed)
        }
    };
    let mut meta = ctx.meta(which.kind(), seed);
    meta.insert("step".into(), int(state.step()));
    meta.insert("complete".into(), toml::Value::Boolean(true));
    meta.insert("llm_hash".into(), cfg.component_hash(Component::Llm).into());
    save(&Checkpoint::new(meta, tensors), out, &state.history)?;
    Ok(BaselineSummary {
        kind: which.kind(),
        steps: state.step(),
        best_loss: state.best_loss,
    })
}

/// Checkpoint locations for every approach that needs one.
#[derive(Clone, Debug)]
pub struct EvalPaths {
    pub backbones: BackbonePaths,
    pub tall: PathBuf,
    pub soft_prompt: PathBuf,
    pub finetuned: PathBuf,
    pub from_scratch: PathBuf,
}

impl EvalPaths {
    pub fn in_dir(art: &Artifacts) -> Self {
        Self {
            backbones: art.backbones(),
            tall: art.checkpoint(TALL),
            soft_prompt: art.checkpoint(SOFT_PROMPT),
            finetuned: art.checkpoint(FINETUNED),
            from_scratch: art.checkpoint(FROM_SCRATCH),
        }
    }
}

fn llm_like(ctx: &Context, path: &Path, kind: &str) -> Result<(CausalLm, ParamStore)> {
    let ck = load(path, kind)?;
    check_complete(&ck, kind)?;
    ck.expect_str("llm_hash", &ctx.cfg.component_hash(Component::Llm))?;
    let (model, mut store) = build_llm(ctx.cfg.models.llm, ctx.vocabs, 0)?;
    restore_all(&ck, &mut store)?;
    Ok((model, store))
}

/// Per-approach records on one dataset; exposed for tests that look past the
/// aggregate numbers.
pub struct Evaluator<'a> {
    ctx: &'a Context,
    paths: &'a EvalPaths,
    lr2hr: Option<(Seq2Seq, ParamStore)>,
    hr2lr: Option<(Seq2Seq, ParamStore)>,
    llm: Option<(CausalLm, ParamStore)>,
    tall: Option<(TallModel, ParamStore)>,
    soft_prompt: Option<(SoftPromptModel, ParamStore)>,
    finetuned: Option<(CausalLm, ParamStore)>,
    from_scratch: Option<(CausalLm, ParamStore)>,
    /// Naive back-translations that came out empty, per dataset.
    pub naive_empty: Vec<(Dataset, usize)>,
}

impl<'a> Evaluator<'a> {
    /// Loads every checkpoint the chosen approaches need, failing before any
    /// evaluation starts if one is missing or mismatched.
    pub fn load(ctx: &'a Context, paths: &'a EvalPaths, approaches: &[Approach]) -> Result<Self> {
        let needs = |a: &[Approach]| approaches.iter().any(|x| a.contains(x));
        let b = &paths.backbones;
        let mut ev = Self {
            ctx,
            paths,
            lr2hr: None,
            hr2lr: None,
            llm: None,
            tall: None,
            soft_prompt: None,
            finetuned: None,
            from_scratch: None,
            naive_empty: Vec::new(),
        };
        if needs(&[Approach::Tall]) {
            let bb = load_backbones(ctx, b)?;
            ev.tall = Some(load_tall(ctx, &bb, &paths.tall)?);
            ev.lr2hr = Some((bb.lr2hr, bb.lr2hr_store));
            ev.hr2lr = Some((bb.hr2lr, bb.hr2lr_store));
            ev.llm = Some((bb.llm, bb.llm_store));
        }
        if needs(&[Approach::Naive]) && ev.lr2hr.is_none() {
            let bb = load_backbones(ctx, b)?;
            ev.lr2hr = Some((bb.lr2hr, bb.lr2hr_store));
            ev.hr2lr = Some((bb.hr2lr, bb.hr2lr_store));
            ev.llm = Some((bb.llm, bb.llm_store));
        }
        if needs(&[Approach::Direct, Approach::SoftPrompt]) && ev.llm.is_none() {
            ev.llm = Some(load_llm(ctx, &b.llm)?);
        }
        if needs(&[Approach::SoftPrompt]) {
            let ck = load(&paths.soft_prompt, SOFT_PROMPT)?;
            check_complete(&ck, SOFT_PROMPT)?;
            ck.expect_str("llm_hash", &ctx.cfg.component_hash(Component::Llm))?;
            let llm_store = &ev.llm.as_ref().expect("llm loaded").1;
            let c = &ctx.cfg;
            let (model, mut store) = SoftPromptModel::assemble(
                c.models.llm,
                ctx.vocabs.llm_size(),
                c.models.baselines.n_prompt,
                0,
                llm_store,
            )?;
            ck.restore(&mut store, "soft_prompt", "soft_prompt")?;
            ev.soft_prompt = Some((model, store));
        }
        if needs(&[Approach::Finetuned]) {
            ev.finetuned = Some(llm_like(ctx, &paths.finetuned, FINETUNED)?);
        }
        if needs(&[Approach::FromScratch]) {
            ev.from_scratch = Some(llm_like(ctx, &paths.from_scratch, FROM_SCRATCH)?);
        }
        Ok(ev)
    }

    pub fn paths(&self) -> &EvalPaths {
        self.paths
    }

    pub fn records(&mut self, approach: Approach, dataset: Dataset) -> Result<Vec<EvalRecord>> {
        let ctx = self.ctx;
        let pairs = ctx.splits.eval(dataset);
        let v = &ctx.vocabs;
        let s = &ctx.cfg.sampler;
        fn get(o: &Option<(CausalLm, ParamStore)>, a: Approach) -> Result<(&CausalLm, &ParamStore)> {
            o.as_ref()
                .map(|(m, st)| (m, st))
                .ok_or_else(|| Error::contract(format!("{} was not loaded", a.name())))
        }
        match approach {
            Approach::Direct => {
                let (m, st) = get(&self.llm, approach)?;
                eval_lm(approach, m, st, v, pairs, s)
            }
            Approach::Finetuned => {
                let (m, st) = get(&self.finetuned, approach)?;
                eval_lm(approach, m, st, v, pairs, s)
            }
            Approach::FromScratch => {
                let (m, st) = get(&self.from_scratch, approach)?;
                eval_lm(approach, m, st, v, pairs, s)
            }
            Approach::Naive => {
                let missing = || Error::contract("naive was not loaded");
                let l2h = self.lr2hr.as_ref().ok_or_else(missing)?;
                let h2l = self.hr2lr.as_ref().ok_or_else(missing)?;
                let (m, st) = get(&self.llm, approach)?;
                let (recs, empty) = eval_naive((&l2h.0, &l2h.1), (m, st), (&h2l.0, &h2l.1), v, pairs, s)?;
                self.naive_empty.push((dataset, empty));
                Ok(recs)
            }
            Approach::SoftPrompt => {
                let (m, st) = self.soft_prompt.as_ref().ok_or_else(|| Error::contract("soft_prompt was not loaded"))?;
                m.evaluate(st, v, pairs, s)
            }
            Approach::Tall => {
                let (m, st) = self.tall.as_ref().ok_or_else(|| Error::contract("tall was not loaded"))?;
                let l2h = self.lr2hr.as_ref().ok_or_else(|| Error::contract("tall was not loaded"))?;
                eval_tall(m, st, (&l2h.0, &l2h.1), v, pairs, s)
            }
        }
    }
}

/// Runs `approaches` (in canonical order) on each dataset with the
/// configured sampler.
pub fn evaluate(ctx: &Context, paths: &EvalPaths, approaches: &[Approach], datasets: &[Dataset]) -> Result<ResultsTable> {
    if approaches.is_empty() || datasets.is_empty() {
        return Err(Error::Config("nothing to evaluate".into()));
    }
    let mut ev = Evaluator::load(ctx, paths, approaches)?;
    let mut rows = Vec::new();
    for &d in datasets {
        for a in Approach::ALL.into_iter().filter(|a| approaches.contains(a)) {
            let recs = ev.records(a, d)?;
            rows.push(ResultRow::from_records(d.name(), a, "toy", &recs)?);
        }
    }
    Ok(ResultsTable {
        config_hash: ctx.hash.clone(),
        sampler: ctx.cfg.sampler,
        datasets: datasets
            .iter()
            .map(|&d| DatasetInfo {
                name: d.name().into(),
                size: ctx.splits.eval(d).len(),
                hash: dataset_hash(ctx.splits.eval(d)),
            })
            .collect(),
        rows,
    })
}

pub fn write_results(table: &ResultsTable, json: &Path, text: &Path) -> Result<()> {
    std::fs::write(json, table.to_json()).map_err(|e| Error::io(json, e))?;
    std::fs::write(text, table.to_text()).map_err(|e| Error::io(text, e))
}
