//! Module-wise parameter accounting for the stitched model, for the two
//! full-size presets (counted from declared shapes) and the toy model
//! (counted from a live parameter store).

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{adapter_param_count, AdapterSpec, LayerConfig, ParamStore};
use crate::pipeline::{TallConfig, TallModel};

use super::format_percent;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Bloomz,
    Qwen,
    Toy,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Bloomz => "bloomz",
            Preset::Qwen => "qwen",
            Preset::Toy => "toy",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "bloomz" => Ok(Preset::Bloomz),
            "qwen" => Ok(Preset::Qwen),
            "toy" => Ok(Preset::Toy),
            other => Err(Error::Config(format!(
                "unknown preset `{other}` (expected bloomz, qwen or toy)"
            ))),
        }
    }
}

/// How a module enters the totals.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Frozen,
    /// Frozen and part of the "LLM only" sum.
    Llm,
    Trainable,
    /// Shares its weights with another row; listed but not added to totals.
    Tied,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleRow {
    pub module: String,
    pub total: u64,
    pub trainable: u64,
    pub role: Role,
    pub note: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub total: u64,
    pub llm_only: u64,
    pub llm_only_percent: String,
    pub trainable: u64,
    pub trainable_percent: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamReport {
    pub preset: Preset,
    pub label: String,
    pub summary: Summary,
    pub modules: Vec<ModuleRow>,
}

fn row(module: &str, total: u64, role: Role, note: &str) -> ModuleRow {
    ModuleRow {
        module: module.to_string(),
        total,
        trainable: if role == Role::Trainable { total } else { 0 },
        role,
        note: note.to_string(),
    }
}

fn summarize(modules: &[ModuleRow]) -> Summary {
    let counted = || modules.iter().filter(|m| m.role != Role::Tied);
    let total: u64 = counted().map(|m| m.total).sum();
    let llm_only: u64 = counted().filter(|m| m.role == Role::Llm).map(|m| m.total).sum();
    let trainable: u64 = counted().map(|m| m.trainable).sum();
    Summary {
        total,
        llm_only,
        llm_only_percent: if total == 0 { "0.0".into() } else { format_percent(llm_only, total, 1) },
        trainable,
        trainable_percent: if total == 0 { "0.00".into() } else { format_percent(trainable, total, 2) },
    }
}

fn enc_layer(d: usize, d_ff: usize) -> LayerConfig {
    LayerConfig {
        d_model: d,
        n_heads: 1,
        d_ff,
        causal: false,
        cross_dim: None,
    }
}

fn dec_layer(d: usize, d_ff: usize, cross: usize) -> LayerConfig {
    LayerConfig {
        d_model: d,
        n_heads: 1,
        d_ff,
        causal: true,
        cross_dim: Some(cross),
    }
}

const fn u(x: usize) -> u64 {
    x as u64
}

// Translation backbones shared by both presets.
const MT_ENC_VOCAB: usize = 60_269;
const MT_ENC_D: usize = 1024;
const MT_ENC_FF: usize = 4096;
const MT_DEC_VOCAB: usize = 65_839;
const MT_DEC_D: usize = 512;
const MT_DEC_FF: usize = 2048;
const MT_LAYERS: usize = 6;
const MT_MAX_POS: usize = 512;

/// Token embeddings + learned positions + encoder layers.
fn mt_encoder() -> u64 {
    u(MT_ENC_VOCAB * MT_ENC_D) + u(1024 * MT_ENC_D) + u(MT_LAYERS) * enc_layer(MT_ENC_D, MT_ENC_FF).param_count()
}

fn mt_decoder() -> u64 {
    u(MT_DEC_VOCAB * MT_DEC_D)
        + u(MT_MAX_POS * MT_DEC_D)
        + u(MT_LAYERS) * dec_layer(MT_DEC_D, MT_DEC_FF, MT_DEC_D).param_count()
}

fn mt_lm_head() -> u64 {
    u(MT_DEC_VOCAB * MT_DEC_D)
}

/// Six cross-attending decoder layers at the LLM width plus 1024 learned positions.
fn bridge1(d_llm: usize) -> u64 {
    u(MT_LAYERS) * dec_layer(d_llm, 4096, d_llm).param_count() + u(1024 * d_llm)
}

/// Six encoder layers at the decoder width plus 512 learned positions.
fn bridge2() -> u64 {
    u(MT_LAYERS) * enc_layer(MT_DEC_D, MT_DEC_FF).param_count() + u(MT_MAX_POS * MT_DEC_D)
}

fn arrow_note(a: &AdapterSpec) -> String {
    format!(
        "Two-layer MLP ({} → {}, {} → {})",
        a.d_in, a.d_hidden, a.d_hidden, a.d_out
    )
}

struct LlmShape {
    d: usize,
    vocab: usize,
    main: u64,
    class: &'static str,
    label: &'static str,
}

fn bloom() -> LlmShape {
    let d = 1024;
    LlmShape {
        d,
        vocab: 250_880,
        // Fused qkv and dense with biases, 4x MLP, two LayerNorms per block,
        // plus the embedding LayerNorm and the final LayerNorm.
        main: 24 * enc_layer(d, 4 * d).param_count() + u(2 * 2 * d),
        class: "BloomModel",
        label: "bloomz TALL",
    }
}

fn qwen() -> LlmShape {
    let (d, kv, ff) = (896, 128, 4864);
    let layer = u(d * d + d) + 2 * u(d * kv + kv) + u(d * d) + 3 * u(d * ff) + 2 * u(d);
    LlmShape {
        d,
        vocab: 151_936,
        main: 24 * layer + u(d),
        class: "Qwen2Model",
        label: "Qwen TALL",
    }
}

fn symbolic(preset: Preset, llm: LlmShape) -> ParamReport {
    let a1 = AdapterSpec::new(MT_ENC_D, 2 * llm.d, llm.d);
    let a2 = AdapterSpec::new(llm.d, 1024, MT_DEC_D);
    let modules = vec![
        row("HE-EN Encoder", mt_encoder(), Role::Frozen, "Frozen encoder"),
        row("LLM Embeddings", u(llm.vocab * llm.d), Role::Llm, "Frozen embedding layer"),
        row("Autoencoder 1", adapter_param_count(&a1), Role::Trainable, &arrow_note(&a1)),
        row("Custom Decoder 1", bridge1(llm.d), Role::Trainable, "Trainable decoder module"),
        row("Main LLM", llm.main, Role::Llm, &format!("Frozen main LLM ({})", llm.class)),
        row("Autoencoder 2", adapter_param_count(&a2), Role::Trainable, &arrow_note(&a2)),
        row("Custom Encoder 2", bridge2(), Role::Trainable, "Trainable encoder module"),
        row("EN-HE Decoder", mt_decoder(), Role::Frozen, "Frozen decoder module"),
        row("LM Head", mt_lm_head(), Role::Tied, "Final linear mapping"),
    ];
    ParamReport {
        preset,
        label: llm.label.to_string(),
        summary: summarize(&modules),
        modules,
    }
}

/// The toy rows, keyed by parameter-name prefixes of a [`TallModel`] store.
const TOY_ROWS: [(&str, &[&str], Role, &str); 9] = [
    ("LR-HR Encoder", &["encoder"], Role::Frozen, "Frozen encoder"),
    ("LLM Embeddings", &["llm.embed", "llm.pos"], Role::Llm, "Frozen embedding layer"),
    ("Adapter 1", &["adapter1"], Role::Trainable, ""),
    ("Bridge 1", &["bridge1"], Role::Trainable, "Trainable decoder module"),
    ("Main LLM", &["llm.blocks"], Role::Llm, "Frozen main LLM"),
    ("Adapter 2", &["adapter2"], Role::Trainable, ""),
    ("Bridge 2", &["bridge2"], Role::Trainable, "Trainable encoder module"),
    ("HR-LR Decoder", &["decoder"], Role::Frozen, "Frozen decoder module"),
    ("LM Head", &["decoder.embed"], Role::Tied, "Tied to the decoder embedding"),
];

/// Counts a live store. Trainable counts come from the store's frozen flags,
/// so a mis-frozen store shows up here.
pub fn from_store(cfg: &TallConfig, store: &ParamStore) -> Result<ParamReport> {
    let mut modules = Vec::with_capacity(TOY_ROWS.len());
    for (name, prefixes, role, note) in TOY_ROWS {
        let (mut total, mut trainable) = (0, 0);
        for p in prefixes {
            let c = store.counts_with_prefix(p);
            total += c.total;
            trainable += c.trainable;
        }
        let note = match name {
            "Adapter 1" => arrow_note(&cfg.adapter1),
            "Adapter 2" => arrow_note(&cfg.adapter2),
            _ => note.to_string(),
        };
        modules.push(ModuleRow {
            module: name.to_string(),
            total,
            trainable: if role == Role::Tied { 0 } else { trainable },
            role,
            note,
        });
    }
    Ok(ParamReport {
        preset: Preset::Toy,
        label: "toy TALL".into(),
        summary: summarize(&modules),
        modules,
    })
}

/// Toy counts from the configuration alone, without allocating tensors.
pub fn toy_symbolic(cfg: &TallConfig) -> ParamReport {
    let tr = &cfg.translator;
    let (dt, dl) = (tr.d_model, cfg.llm.d_model);
    let enc = u(cfg.lr_vocab * dt) + u(tr.max_len * dt) + crate::nn::TransformerStack::param_count(&tr.layer(false, false), tr.encoder_layers, true);
    let dec = u(cfg.lr_vocab * dt) + u(tr.max_len * dt) + crate::nn::TransformerStack::param_count(&tr.layer(true, true), tr.decoder_layers, true);
    let b1 = u(cfg.llm.max_len * dl) + crate::nn::TransformerStack::param_count(&cfg.bridge1_layer(), cfg.bridge1.layers, false);
    let b2 = u(cfg.llm.max_len * cfg.adapter2.d_out)
        + crate::nn::TransformerStack::param_count(&cfg.bridge2_layer(), cfg.bridge2.layers, true);
    let main = crate::nn::TransformerStack::param_count(&cfg.llm.layer(), cfg.llm.layers, true);
    let counts = [
        enc,
        u(cfg.llm_vocab * dl) + u(cfg.llm.max_len * dl),
        adapter_param_count(&cfg.adapter1),
        b1,
        main,
        adapter_param_count(&cfg.adapter2),
        b2,
        dec,
        u(cfg.lr_vocab * dt),
    ];
    let modules: Vec<ModuleRow> = TOY_ROWS
        .iter()
        .zip(counts)
        .map(|(&(name, _, role, note), n)| {
            let note = match name {
                "Adapter 1" => arrow_note(&cfg.adapter1),
                "Adapter 2" => arrow_note(&cfg.adapter2),
                _ => note.to_string(),
            };
            row(name, n, role, &note)
        })
        .collect();
    ParamReport {
        preset: Preset::Toy,
        label: "toy TALL".into(),
        summary: summarize(&modules),
        modules,
    }
}

/// The report for `preset`. The toy preset is counted from a freshly
/// initialized model built from `toy`.
pub fn param_report(preset: Preset, toy: &TallConfig) -> Result<ParamReport> {
    match preset {
        Preset::Bloomz => Ok(symbolic(preset, bloom())),
        Preset::Qwen => Ok(symbolic(preset, qwen())),
        Preset::Toy => {
            let (_, store) = TallModel::init(*toy, 0)?;
            from_store(toy, &store)
        }
    }
}

/// Reference module totals in table order, then total / LLM-only /
/// trainable with their percentages.
struct Expected {
    modules: [(&'static str, u64, u64); 9],
    total: u64,
    llm_only: (u64, &'static str),
    trainable: (u64, &'static str),
}

fn expected(preset: Preset) -> Option<Expected> {
    match preset {
        Preset::Bloomz => Some(Expected {
            modules: [
                ("HE-EN Encoder", 138_341_376, 0),
                ("LLM Embeddings", 256_901_120, 0),
                ("Autoencoder 1", 4_203_520, 4_203_520),
                ("Custom Decoder 1", 101_828_608, 101_828_608),
                ("Main LLM", 302_313_472, 0),
                ("Autoencoder 2", 1_577_472, 1_577_472),
                ("Custom Encoder 2", 19_176_448, 19_176_448),
                ("EN-HE Decoder", 59_195_904, 0),
                ("LM Head", 33_709_568, 0),
            ],
            total: 883_537_920,
            llm_only: (559_214_592, "63.3"),
            trainable: (126_786_048, "14.35"),
        }),
        Preset::Qwen => Some(Expected {
            modules: [
                ("HE-EN Encoder", 138_341_376, 0),
                ("LLM Embeddings", 136_134_656, 0),
                ("Autoencoder 1", 3_448_704, 3_448_704),
                ("Custom Decoder 1", 83_598_080, 83_598_080),
                ("Main LLM", 357_898_112, 0),
                ("Autoencoder 2", 1_446_400, 1_446_400),
                ("Custom Encoder 2", 19_176_448, 19_176_448),
                ("EN-HE Decoder", 59_195_904, 0),
                ("LM Head", 33_709_568, 0),
            ],
            total: 799_239_680,
            llm_only: (494_032_768, "61.8"),
            trainable: (107_669_632, "13.47"),
        }),
        Preset::Toy => None,
    }
}

impl ParamReport {
    /// Differences from the reference tables; empty when every number
    /// matches. The toy preset is instead checked for internal consistency.
    pub fn check(&self) -> Vec<String> {
        let mut bad = Vec::new();
        let s = &self.summary;
        let trainable_sum: u64 = self.modules.iter().map(|m| m.trainable).sum();
        if trainable_sum != s.trainable {
            bad.push(format!("module trainable sum {trainable_sum} != total trainable {}", s.trainable));
        }
        let Some(e) = expected(self.preset) else {
            if let Some(m) = self
                .modules
                .iter()
                .find(|m| m.role != Role::Tied && (m.role == Role::Trainable) != (m.trainable == m.total))
            {
                bad.push(format!("{}: trainable {} of {} disagrees with its role", m.module, m.trainable, m.total));
            }
            return bad;
        };
        if self.modules.len() != e.modules.len() {
            bad.push(format!("{} modules, expected {}", self.modules.len(), e.modules.len()));
        }
        for (m, (name, total, trainable)) in self.modules.iter().zip(e.modules) {
            if m.module != name || m.total != total || m.trainable != trainable {
                bad.push(format!(
                    "{}: {} / {} (expected {name}: {total} / {trainable})",
                    m.module, m.total, m.trainable
                ));
            }
        }
        let mut cmp = |what: &str, got: String, want: String| {
            if got != want {
                bad.push(format!("{what}: {got} (expected {want})"));
            }
        };
        cmp("total", s.total.to_string(), e.total.to_string());
        cmp("llm only", s.llm_only.to_string(), e.llm_only.0.to_string());
        cmp("llm only %", s.llm_only_percent.clone(), e.llm_only.1.to_string());
        cmp("trainable", s.trainable.to_string(), e.trainable.0.to_string());
        cmp("trainable %", s.trainable_percent.clone(), e.trainable.1.to_string());
        bad
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_text(&self) -> String {
        let s = &self.summary;
        let mut out = String::new();
        writeln!(out, "Overall statistics ({})", self.label).unwrap();
        writeln!(out, "{:<24}{:>28}", "Total Parameters", grouped(s.total)).unwrap();
        writeln!(
            out,
            "{:<24}{:>28}",
            "LLM Only Parameters",
            format!("{} ({}%)", grouped(s.llm_only), s.llm_only_percent)
        )
        .unwrap();
        writeln!(
            out,
            "{:<24}{:>28}",
            "Trainable Parameters",
            format!("{} ({}%)", grouped(s.trainable), s.trainable_percent)
        )
        .unwrap();
        writeln!(out).unwrap();
        writeln!(out, "Module-wise breakdown ({})", self.label).unwrap();
        writeln!(out, "{:<20}{:>14}{:>18}  Notes", "Module", "Total Params", "Trainable Params").unwrap();
        for m in &self.modules {
            writeln!(
                out,
                "{:<20}{:>14}{:>18}  {}",
                m.module,
                grouped(m.total),
                grouped(m.trainable),
                m.note
            )
            .unwrap();
        }
        out
    }
}

/// `1234567` → `"1,234,567"`.
pub fn grouped(n: u64) -> String {
    let digits = n.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(c);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;

    #[test]
    fn presets_reproduce_reference_tables() {
        let toy = RunConfig::default().tall_config();
        for p in [Preset::Bloomz, Preset::Qwen] {
            let r = param_report(p, &toy).unwrap();
            assert!(r.check().is_empty(), "{p:?}: {:?}", r.check());
        }
        let b = param_report(Preset::Bloomz, &toy).unwrap();
        assert_eq!(b.modules[2].total, 4_203_520);
        assert_eq!(b.modules[5].total, 1_577_472);
        assert_eq!(b.modules[2].note, "Two-layer MLP (1024 → 2048, 2048 → 1024)");
        let q = param_report(Preset::Qwen, &toy).unwrap();
        assert_eq!(q.modules[2].note, "Two-layer MLP (1024 → 1792, 1792 → 896)");
        assert_eq!(q.modules[5].note, "Two-layer MLP (896 → 1024, 1024 → 512)");
    }

    #[test]
    fn check_flags_a_perturbed_number() {
        let toy = RunConfig::default().tall_config();
        let mut r = param_report(Preset::Bloomz, &toy).unwrap();
        r.modules[3].total += 1;
        assert_eq!(r.check().len(), 1);
        r.summary.trainable_percent = "14.36".into();
        assert_eq!(r.check().len(), 2);
    }

    #[test]
    fn toy_store_matches_symbolic_count() {
        let cfg = RunConfig::default().tall_config();
        let live = param_report(Preset::Toy, &cfg).unwrap();
        assert_eq!(live, toy_symbolic(&cfg));
        assert!(live.check().is_empty(), "{:?}", live.check());
        let (_, store) = TallModel::init(cfg, 3).unwrap();
        assert_eq!(live.summary.total, store.counts().total);
        assert_eq!(live.summary.trainable, store.counts().trainable);
    }

    #[test]
    fn text_layout() {
        let toy = RunConfig::default().tall_config();
        let text = param_report(Preset::Bloomz, &toy).unwrap().to_text();
        assert!(text.contains("126,786,048 (14.35%)"), "{text}");
        assert!(text.contains("559,214,592 (63.3%)"), "{text}");
        assert!(text.contains("Frozen main LLM (BloomModel)"));
        assert_eq!(grouped(0), "0");
        assert_eq!(grouped(999), "999");
        assert_eq!(grouped(1000), "1,000");
        assert!(Preset::parse("llama").is_err());
    }
}
