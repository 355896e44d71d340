//! The synthetic bilingual world standing in for a real language pair: an HR
//! Markov grammar, an invertible HR→LR cipher, and the corpus splits drawn from them.

mod cipher;
mod corpus;
mod grammar;
pub mod vocab;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

pub use cipher::Cipher;
pub use corpus::{dataset_hash, generate_corpus, generate_corpus_excluding, BilingualPair};
pub use grammar::{GrammarConfig, ToyGrammar};
pub use vocab::Vocabs;

use crate::error::Result;
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub grammar: GrammarConfig,
    pub cipher_seed: u64,
    /// Relabel-only LR language (no permutation, no pair swap).
    pub identity_cipher: bool,
    /// Blend weight towards an unrelated transition table for the shifted eval domain.
    pub shift_strength: f64,
    pub shift_seed: u64,
    pub corpus_seed: u64,
    pub train_size: usize,
    pub dev_size: usize,
    pub eval_size: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            grammar: GrammarConfig::default(),
            cipher_seed: 1,
            identity_cipher: false,
            shift_strength: 0.3,
            shift_seed: 1,
            corpus_seed: 1,
            train_size: 6_000,
            dev_size: 200,
            eval_size: 2_000,
        }
    }
}

/// Evaluation domains: fresh sentences from the training grammar, and
/// sentences from the shifted grammar.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Dataset {
    Heldout,
    Shifted,
}

impl Dataset {
    pub const ALL: [Dataset; 2] = [Dataset::Heldout, Dataset::Shifted];

    pub fn name(self) -> &'static str {
        match self {
            Dataset::Heldout => "heldout",
            Dataset::Shifted => "shifted",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|d| d.name() == s)
    }
}

#[derive(Clone, Debug)]
pub struct World {
    pub cfg: WorldConfig,
    pub vocabs: Vocabs,
    pub grammar: ToyGrammar,
    pub eval_grammar: ToyGrammar,
    pub cipher: Cipher,
}

#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Vec<BilingualPair>,
    pub dev: Vec<BilingualPair>,
    pub heldout: Vec<BilingualPair>,
    pub shifted: Vec<BilingualPair>,
}

impl Splits {
    pub fn eval(&self, d: Dataset) -> &[BilingualPair] {
        match d {
            Dataset::Heldout => &self.heldout,
            Dataset::Shifted => &self.shifted,
        }
    }
}

impl World {
    pub fn new(cfg: WorldConfig) -> Result<Self> {
        let grammar = ToyGrammar::new(cfg.grammar)?;
        let eval_grammar = grammar.shifted(cfg.shift_strength, cfg.shift_seed)?;
        let vocabs = grammar.vocabs();
        let cipher = if cfg.identity_cipher {
            Cipher::identity(vocabs)
        } else {
            Cipher::seeded(vocabs, cfg.cipher_seed)
        };
        Ok(Self {
            cfg,
            vocabs,
            grammar,
            eval_grammar,
            cipher,
        })
    }

    /// Train, dev and the two evaluation sets. Dev and evaluation sentences
    /// never occur in the training split.
    pub fn splits(&self) -> Result<Splits> {
        let s = self.cfg.corpus_seed;
        let train = generate_corpus(&self.grammar, &self.cipher, s, self.cfg.train_size)?;
        let mut taken: HashSet<Vec<usize>> = train.iter().map(|p| p.hr.clone()).collect();
        let dev = generate_corpus_excluding(
            &self.grammar,
            &self.cipher,
            seed::mix(s, 1),
            self.cfg.dev_size,
            &taken,
        )?;
        taken.extend(dev.iter().map(|p| p.hr.clone()));
        let heldout = generate_corpus_excluding(
            &self.grammar,
            &self.cipher,
            seed::mix(s, 2),
            self.cfg.eval_size,
            &taken,
        )?;
        let shifted = generate_corpus_excluding(
            &self.eval_grammar,
            &self.cipher,
            seed::mix(s, 3),
            self.cfg.eval_size,
            &taken,
        )?;
        Ok(Splits {
            train,
            dev,
            heldout,
            shifted,
        })
    }
}
