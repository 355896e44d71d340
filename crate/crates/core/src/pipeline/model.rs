use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{CausalLm, LlmConfig, TranslatorConfig, TranslatorDecoder, TranslatorEncoder};
use crate::nn::{Adapter, AdapterSpec, Embedding, LayerConfig, ParamBuilder, ParamStore, TransformerStack};
use crate::seed;
use crate::tensor::{Tape, Var};

/// Depth and width of a bridge transformer. Its model width is fixed by the
/// components it sits between.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BridgeConfig {
    pub layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    /// Multiplier on the initial weights of every residual-branch output
    /// projection and of the position table, so a fresh bridge starts close
    /// to the identity.
    pub residual_init: f64,
}

impl Default for BridgeConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            n_heads: 4,
            d_ff: 128,
            residual_init: 0.1,
        }
    }
}

/// Every stage's dimensions. Stages 1 and 7 are the two halves of the
/// translators, stage 4 is the LLM; those three are always frozen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TallConfig {
    pub translator: TranslatorConfig,
    pub llm: LlmConfig,
    pub adapter1: AdapterSpec,
    pub bridge1: BridgeConfig,
    pub adapter2: AdapterSpec,
    pub bridge2: BridgeConfig,
    pub lr_vocab: usize,
    pub llm_vocab: usize,
}

/// Parameter prefixes that TALL trains. Everything else is frozen.
pub const TRAINABLE: [&str; 4] = ["adapter1", "bridge1", "adapter2", "bridge2"];
/// Frozen backbone prefixes. The LM head is the decoder's tied embedding.
pub const FROZEN: [&str; 3] = ["encoder", "llm", "decoder"];

impl TallConfig {
    pub fn bridge1_layer(&self) -> LayerConfig {
        LayerConfig {
            d_model: self.llm.d_model,
            n_heads: self.bridge1.n_heads,
            d_ff: self.bridge1.d_ff,
            causal: true,
            cross_dim: Some(self.adapter1.d_out),
        }
    }

    pub fn bridge2_layer(&self) -> LayerConfig {
        LayerConfig {
            d_model: self.adapter2.d_out,
            n_heads: self.bridge2.n_heads,
            d_ff: self.bridge2.d_ff,
            causal: false,
            cross_dim: None,
        }
    }

    /// Checks every stage boundary and names the first stage that does not fit.
    pub fn validate(&self) -> Result<()> {
        let tr = &self.translator;
        let check = |stage: u8, ok: bool, msg: String| if ok { Ok(()) } else { Err(Error::stage(stage, msg)) };
        check(
            1,
            tr.n_heads > 0 && tr.d_model % tr.n_heads == 0 && tr.encoder_layers > 0,
            format!("encoder d_model {} not divisible into {} heads", tr.d_model, tr.n_heads),
        )?;
        self.adapter1.validate().map_err(|e| Error::stage(2, e.to_string()))?;
        check(
            2,
            self.adapter1.d_in == tr.d_model,
            format!("adapter1 input {} != encoder width {}", self.adapter1.d_in, tr.d_model),
        )?;
        check(
            2,
            self.adapter1.d_out == self.llm.d_model,
            format!("adapter1 output {} != LLM width {}", self.adapter1.d_out, self.llm.d_model),
        )?;
        check(3, self.bridge1.layers > 0, "bridge1 needs at least one layer".into())?;
        check(3, self.bridge1.residual_init >= 0.0, "bridge1 residual_init must be >= 0".into())?;
        self.bridge1_layer().validate().map_err(|e| Error::stage(3, e.to_string()))?;
        self.llm.layer().validate().map_err(|e| Error::stage(4, e.to_string()))?;
        check(4, self.llm_vocab > 0, "LLM vocabulary is empty".into())?;
        self.adapter2.validate().map_err(|e| Error::stage(5, e.to_string()))?;
        check(
            5,
            self.adapter2.d_in == self.llm.d_model,
            format!("adapter2 input {} != LLM width {}", self.adapter2.d_in, self.llm.d_model),
        )?;
        check(
            5,
            self.adapter2.d_out == tr.d_model,
            format!("adapter2 output {} != decoder width {}", self.adapter2.d_out, tr.d_model),
        )?;
        check(6, self.bridge2.layers > 0, "bridge2 needs at least one layer".into())?;
        check(6, self.bridge2.residual_init >= 0.0, "bridge2 residual_init must be >= 0".into())?;
        self.bridge2_layer().validate().map_err(|e| Error::stage(6, e.to_string()))?;
        check(
            7,
            tr.decoder_layers > 0 && self.lr_vocab > 0,
            "decoder needs layers and a vocabulary".into(),
        )?;
        Ok(())
    }
}

/// Hidden states at every stage boundary, for inspection and tests.
#[derive(Clone, Copy, Debug)]
pub struct StageOutputs {
    pub encoder: Var,
    pub adapter1: Var,
    pub bridge1: Var,
    pub llm: Var,
    pub adapter2: Var,
    pub bridge2: Var,
    pub logits: Var,
}

#[derive(Clone, Debug)]
pub struct TallModel {
    pub cfg: TallConfig,
    pub encoder: TranslatorEncoder,
    pub adapter1: Adapter,
    pub bridge1_pos: Embedding,
    pub bridge1: TransformerStack,
    pub llm: CausalLm,
    pub adapter2: Adapter,
    pub bridge2_pos: Embedding,
    pub bridge2: TransformerStack,
    pub decoder: TranslatorDecoder,
}

fn at(stage: u8) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Shape { .. } | Error::Index { .. } | Error::Contract(_) => Error::stage(stage, e.to_string()),
        other => other,
    }
}

impl TallModel {
    /// Builds every stage with fresh weights; backbones are overwritten from
    /// checkpoints later.
    pub fn new(b: &mut ParamBuilder, cfg: TallConfig) -> Result<Self> {
        cfg.validate()?;
        let std_llm = (1.0 / cfg.llm.d_model as f64).sqrt();
        let std_dec = (1.0 / cfg.adapter2.d_out as f64).sqrt();
        let encoder = TranslatorEncoder::new(&mut b.scope("encoder"), &cfg.translator, cfg.lr_vocab)?;
        let adapter1 = Adapter::new(b, "adapter1", cfg.adapter1)?;
        let (bridge1_pos, bridge1) = {
            let mut s = b.scope("bridge1");
            (
                Embedding::new(&mut s, "pos", cfg.llm.max_len, cfg.llm.d_model, std_llm)?,
                TransformerStack::new(&mut s, "blocks", cfg.bridge1_layer(), cfg.bridge1.layers, false)?,
            )
        };
        let llm = CausalLm::new(&mut b.scope("llm"), cfg.llm, cfg.llm_vocab)?;
        let adapter2 = Adapter::new(b, "adapter2", cfg.adapter2)?;
        let (bridge2_pos, bridge2) = {
            let mut s = b.scope("bridge2");
            (
                Embedding::new(&mut s, "pos", cfg.llm.max_len, cfg.adapter2.d_out, std_dec)?,
                TransformerStack::new(&mut s, "blocks", cfg.bridge2_layer(), cfg.bridge2.layers, true)?,
            )
        };
        let decoder = TranslatorDecoder::new(&mut b.scope("decoder"), &cfg.translator, cfg.lr_vocab)?;
        Ok(Self {
            cfg,
            encoder,
            adapter1,
            bridge1_pos,
            bridge1,
            llm,
            adapter2,
            bridge2_pos,
            bridge2,
            decoder,
        })
    }

    /// A model with random weights everywhere and the backbones flagged frozen.
    pub fn init(cfg: TallConfig, init_seed: u64) -> Result<(Self, ParamStore)> {
        let mut store = ParamStore::new();
        let mut rng = seed::rng(init_seed, "tall");
        let model = Self::new(&mut ParamBuilder::new(&mut store, &mut rng), cfg)?;
        for (prefix, scale) in [("bridge1", cfg.bridge1.residual_init), ("bridge2", cfg.bridge2.residual_init)] {
            for id in store.ids_with_prefix(prefix) {
                let name = store.name(id);
                if name.ends_with(".o.weight") || name.ends_with(".ffn.down.weight") || name.ends_with(".pos.weight") {
                    store.get_mut(id).tensor.data_mut().iter_mut().for_each(|v| *v *= scale);
                }
            }
        }
        for p in FROZEN {
            store.freeze(p)?;
        }
        Ok((model, store))
    }

    /// Fresh trainable components around backbone weights copied from the
    /// translator and LLM stores: `encoder.*` from the LR→HR translator,
    /// `decoder.*` from the HR→LR one.
    pub fn assemble(
        cfg: TallConfig,
        init_seed: u64,
        lr2hr: &ParamStore,
        llm: &ParamStore,
        hr2lr: &ParamStore,
    ) -> Result<(Self, ParamStore)> {
        let (model, mut store) = Self::init(cfg, init_seed)?;
        let encoder = lr2hr.extract_prefixed("encoder");
        let decoder = hr2lr.extract_prefixed("decoder");
        for (stage, src, prefix) in [(1, &encoder, "encoder"), (4, llm, "llm"), (7, &decoder, "decoder")] {
            let expected = store.ids_with_prefix(prefix).len();
            if src.len() != expected {
                return Err(Error::stage(
                    stage,
                    format!("backbone has {} tensors for `{prefix}`, expected {expected}", src.len()),
                ));
            }
            store
                .load_prefixed(src, prefix)
                .map_err(|e| Error::stage(stage, e.to_string()))?;
        }
        Ok((model, store))
    }

    /// Stages 1–7. `hr_tokens` are LLM ids (BOS first); `target_in` is the
    /// decoder's teacher-forced input in LR ids.
    pub fn stages(&self, t: &mut Tape, lr_prefix: &[usize], hr_tokens: &[usize], target_in: &[usize]) -> Result<StageOutputs> {
        if lr_prefix.is_empty() {
            return Err(Error::stage(1, "empty LR input"));
        }
        if hr_tokens.is_empty() {
            return Err(Error::stage(3, "empty HR token sequence"));
        }
        if target_in.is_empty() {
            return Err(Error::stage(7, "empty decoder input"));
        }
        let encoder = self.encoder.forward(t, lr_prefix).map_err(at(1))?;
        let adapter1 = self.adapter1.forward(t, encoder).map_err(at(2))?;

        let x = self.llm.embed.forward(t, hr_tokens).map_err(at(3))?;
        let p = self.bridge1_pos.positions(t, hr_tokens.len()).map_err(at(3))?;
        let x = t.add(x, p).map_err(at(3))?;
        let bridge1 = self.bridge1.forward(t, x, Some(adapter1), None).map_err(at(3))?;

        let llm = self.llm.hidden_from_embeddings(t, bridge1, None).map_err(at(4))?;
        let adapter2 = self.adapter2.forward(t, llm).map_err(at(5))?;

        let p = self.bridge2_pos.positions(t, hr_tokens.len()).map_err(at(6))?;
        let x = t.add(adapter2, p).map_err(at(6))?;
        let bridge2 = self.bridge2.forward(t, x, None, None).map_err(at(6))?;

        let logits = self.decoder.logits(t, bridge2, target_in).map_err(at(7))?;
        Ok(StageOutputs {
            encoder,
            adapter1,
            bridge1,
            llm,
            adapter2,
            bridge2,
            logits,
        })
    }

    /// Logits `[len(target_in) × V_lr]`.
    pub fn forward(&self, t: &mut Tape, lr_prefix: &[usize], hr_tokens: &[usize], target_in: &[usize]) -> Result<Var> {
        Ok(self.stages(t, lr_prefix, hr_tokens, target_in)?.logits)
    }
}

/// Refuses to train unless the trainable set is exactly the four TALL
/// components and every backbone tensor is frozen.
pub fn check_frozen_backbones(store: &ParamStore) -> Result<()> {
    for p in FROZEN {
        let ids = store.ids_with_prefix(p);
        if ids.is_empty() {
            return Err(Error::contract(format!("backbone `{p}` is missing")));
        }
        if let Some(&id) = ids.iter().find(|&&id| !store.get(id).frozen) {
            return Err(Error::contract(format!(
                "backbone tensor `{}` is not frozen",
                store.name(id)
            )));
        }
    }
    for id in store.trainable_ids() {
        let name = store.name(id);
        if !TRAINABLE.iter().any(|p| crate::nn::prefix_matches(name, p)) {
            return Err(Error::contract(format!("unexpected trainable tensor `{name}`")));
        }
    }
    Ok(())
}
