//! The run configuration: one TOML document covering the world, every model,
//! every training recipe, the sampler, and artifact paths. Unknown keys are
//! rejected everywhere.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::models::{LlmConfig, TranslatorConfig};
use crate::nn::AdapterSpec;
use crate::optim::TrainConfig;
use crate::pipeline::{BridgeConfig, SamplerConfig, TallConfig};
use crate::world::{Vocabs, WorldConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TallDims {
    pub adapter1_hidden: usize,
    pub adapter2_hidden: usize,
    pub bridge1: BridgeConfig,
    pub bridge2: BridgeConfig,
}

impl Default for TallDims {
    fn default() -> Self {
        Self {
            adapter1_hidden: 128,
            adapter2_hidden: 96,
            bridge1: BridgeConfig {
                d_ff: 192,
                ..BridgeConfig::default()
            },
            bridge2: BridgeConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineDims {
    pub n_prompt: usize,
    /// Sequences longer than this are truncated during fine-tuning.
    pub finetune_max_len: usize,
}

impl Default for BaselineDims {
    fn default() -> Self {
        Self {
            n_prompt: 30,
            finetune_max_len: 128,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelsConfig {
    pub translator: TranslatorConfig,
    pub llm: LlmConfig,
    pub tall: TallDims,
    pub baselines: BaselineDims,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSections {
    pub translator: TrainConfig,
    pub llm: TrainConfig,
    pub tall: TrainConfig,
    pub soft_prompt: TrainConfig,
    pub finetune: TrainConfig,
    pub from_scratch: TrainConfig,
}

impl Default for TrainSections {
    fn default() -> Self {
        let base = TrainConfig::default();
        Self {
            translator: TrainConfig {
                learning_rate: 2e-3,
                epochs: 2,
                warmup_steps: 50,
                ..base.clone()
            },
            llm: TrainConfig {
                learning_rate: 2e-3,
                epochs: 2,
                batch_size: 2,
                grad_accum_steps: 8,
                warmup_steps: 50,
                ..base.clone()
            },
            tall: TrainConfig {
                learning_rate: 1e-3,
                epochs: 4,
                ..base.clone()
            },
            soft_prompt: TrainConfig {
                learning_rate: 5e-4,
                warmup_steps: 100,
                epochs: 2,
                ..base.clone()
            },
            finetune: TrainConfig {
                learning_rate: 2e-5,
                epochs: 1,
                ..base.clone()
            },
            from_scratch: TrainConfig {
                learning_rate: 5e-4,
                epochs: 2,
                batch_size: 2,
                grad_accum_steps: 8,
                ..base
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Directory for checkpoints, metrics and result tables.
    pub dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("runs") }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub world: WorldConfig,
    pub models: ModelsConfig,
    pub train: TrainSections,
    pub sampler: SamplerConfig,
    /// Where outputs go has no bearing on them, so it stays out of the
    /// rendering that is hashed and echoed into artifacts.
    #[serde(skip_serializing)]
    pub paths: PathsConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// As a TOML table, for echoing into checkpoint metadata.
    pub fn to_table(&self) -> toml::Table {
        toml::Table::try_from(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.world.grammar.validate()?;
        if !(0.0..=1.0).contains(&self.world.shift_strength) {
            return Err(Error::Config("world.shift_strength must be in [0, 1]".into()));
        }
        let t = &self.train;
        for (name, c) in [
            ("translator", &t.translator),
            ("llm", &t.llm),
            ("tall", &t.tall),
            ("soft_prompt", &t.soft_prompt),
            ("finetune", &t.finetune),
            ("from_scratch", &t.from_scratch),
        ] {
            c.validate()
                .map_err(|e| Error::Config(format!("train.{name}: {e}")))?;
        }
        self.sampler.validate()?;
        if self.models.baselines.n_prompt == 0 {
            return Err(Error::Config("models.baselines.n_prompt must be positive".into()));
        }
        if self.models.baselines.n_prompt + self.world.grammar.max_len + 1 > self.models.llm.max_len {
            return Err(Error::Config(format!(
                "models.llm.max_len {} cannot hold {} prompt vectors plus a sentence",
                self.models.llm.max_len, self.models.baselines.n_prompt
            )));
        }
        if self.world.grammar.max_len + 2 > self.models.translator.max_len {
            return Err(Error::Config("models.translator.max_len is shorter than the longest sentence".into()));
        }
        self.tall_config().validate()
    }

    pub fn vocabs(&self) -> Vocabs {
        Vocabs::new(self.world.grammar.words)
    }

    pub fn tall_config(&self) -> TallConfig {
        let v = self.vocabs();
        let (tr, llm, d) = (self.models.translator, self.models.llm, self.models.tall);
        TallConfig {
            translator: tr,
            llm,
            adapter1: AdapterSpec::new(tr.d_model, d.adapter1_hidden, llm.d_model),
            bridge1: d.bridge1,
            adapter2: AdapterSpec::new(llm.d_model, d.adapter2_hidden, tr.d_model),
            bridge2: d.bridge2,
            lr_vocab: v.lr_size(),
            llm_vocab: v.llm_size(),
        }
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        hash_toml(&self.to_toml())
    }

    /// Hash of the world and the component's architecture: the parts a
    /// checkpoint must agree on to be loadable under this configuration.
    /// Training settings are left out so a backbone can be shared by runs
    /// that differ only downstream.
    pub fn component_hash(&self, component: Component) -> String {
        #[derive(Serialize)]
        struct Key<'a, T: Serialize> {
            world: &'a WorldConfig,
            model: T,
        }
        let text = match component {
            Component::Lr2hr | Component::Hr2lr => toml::to_string(&Key {
                world: &self.world,
                model: self.models.translator,
            }),
            Component::Llm => toml::to_string(&Key {
                world: &self.world,
                model: self.models.llm,
            }),
        }
        .expect("component key serializes");
        hash_toml(&format!("{}\n{text}", component.name()))
    }
}

fn hash_toml(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// The pretrained, later frozen, components.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Component {
    Lr2hr,
    Hr2lr,
    Llm,
}

impl Component {
    pub fn name(self) -> &'static str {
        match self {
            Component::Lr2hr => "translator-lr2hr",
            Component::Hr2lr => "translator-hr2lr",
            Component::Llm => "llm",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_validate() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = RunConfig::from_toml("[world]\ntrain_sise = 3\n").unwrap_err();
        assert!(err.to_string().contains("train_sise"), "{err}");
        let err = RunConfig::from_toml("[train.tall]\nlr = 1.0\n").unwrap_err();
        assert!(err.to_string().contains("lr"), "{err}");
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let cfg = RunConfig::from_toml("[world]\ntrain_size = 50\n[sampler]\ntemperature = 0.0\n").unwrap();
        assert_eq!(cfg.world.train_size, 50);
        assert_eq!(cfg.sampler.top_k, 50);
        assert_ne!(cfg.hash(), RunConfig::default().hash());
    }

    #[test]
    fn component_hash_ignores_unrelated_sections() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.train.tall.learning_rate = 0.5;
        b.train.llm.seed = 9;
        assert_eq!(a.component_hash(Component::Llm), b.component_hash(Component::Llm));
        assert_ne!(a.hash(), b.hash());
        b.models.llm.d_ff = 64;
        assert_ne!(a.component_hash(Component::Llm), b.component_hash(Component::Llm));
        assert_ne!(a.component_hash(Component::Lr2hr), a.component_hash(Component::Hr2lr));
    }

    #[test]
    fn bad_stage_dims_name_the_stage() {
        let mut cfg = RunConfig::default();
        cfg.models.tall.bridge2.n_heads = 5;
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("stage 6"), "{err}");
    }
}
