use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::vocab::Vocabs;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrammarConfig {
    pub words: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
    /// Mass on the successor chosen by the previous word alone.
    pub primary_weight: f64,
    /// Mass on the successor chosen by the two previous words.
    pub secondary_weight: f64,
}

impl Default for GrammarConfig {
    fn default() -> Self {
        Self {
            words: 96,
            min_len: 5,
            max_len: 12,
            seed: 1,
            primary_weight: 0.6,
            secondary_weight: 0.25,
        }
    }
}

impl GrammarConfig {
    pub fn validate(&self) -> Result<()> {
        if self.words < 2 {
            return Err(Error::Config("grammar needs at least 2 words".into()));
        }
        if self.min_len < 2 || self.min_len > self.max_len {
            return Err(Error::Config(format!(
                "sentence length bounds {}..={} are invalid (need 2 <= min <= max)",
                self.min_len, self.max_len
            )));
        }
        let w = self.primary_weight + self.secondary_weight;
        if self.primary_weight < 0.0 || self.secondary_weight < 0.0 || w > 1.0 {
            return Err(Error::Config(format!(
                "grammar weights must be non-negative and sum to at most 1, got {w}"
            )));
        }
        Ok(())
    }
}

/// Order-2 Markov chain over HR words. Contexts range over the words plus a
/// sentence-start marker; every row is a probability distribution over words.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyGrammar {
    cfg: GrammarConfig,
    table: Vec<f64>,
}

impl ToyGrammar {
    pub fn new(cfg: GrammarConfig) -> Result<Self> {
        cfg.validate()?;
        let table = build_table(&cfg, cfg.seed);
        Ok(Self { cfg, table })
    }

    /// Same vocabulary, transitions blended towards an independent table:
    /// `row' = (1 - strength)·row + strength·other_row`.
    pub fn shifted(&self, strength: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&strength) {
            return Err(Error::Config(format!("shift strength {strength} outside [0, 1]")));
        }
        let other = build_table(&self.cfg, seed::mix(seed, seed::tag("shift")));
        let table = self
            .table
            .iter()
            .zip(&other)
            .map(|(a, b)| (1.0 - strength) * a + strength * b)
            .collect();
        Ok(Self {
            cfg: self.cfg,
            table,
        })
    }

    pub fn config(&self) -> &GrammarConfig {
        &self.cfg
    }

    pub fn vocabs(&self) -> Vocabs {
        Vocabs::new(self.cfg.words)
    }

    fn start(&self) -> usize {
        self.cfg.words
    }

    /// Distribution over the next word given the two previous context symbols
    /// (word index or the start marker `words`).
    pub fn row(&self, prev2: usize, prev1: usize) -> &[f64] {
        let w = self.cfg.words;
        let ctx = prev2 * (w + 1) + prev1;
        &self.table[ctx * w..(ctx + 1) * w]
    }

    pub fn contexts(&self) -> usize {
        (self.cfg.words + 1) * (self.cfg.words + 1)
    }

    /// Sentence `index` of the stream keyed by `stream_seed`, as HR ids.
    pub fn sentence(&self, stream_seed: u64, index: u64) -> Vec<usize> {
        let mut rng = seed::rng_indexed(stream_seed, "sentence", index);
        let len = rng.random_range(self.cfg.min_len..=self.cfg.max_len);
        let vocabs = self.vocabs();
        let (mut a, mut b) = (self.start(), self.start());
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            let u: f64 = rng.random();
            let row = self.row(a, b);
            let mut acc = 0.0;
            let mut next = row.len() - 1;
            for (i, p) in row.iter().enumerate() {
                acc += p;
                if u < acc {
                    next = i;
                    break;
                }
            }
            out.push(vocabs.word_id(next));
            a = b;
            b = next;
        }
        out
    }
}

fn build_table(cfg: &GrammarConfig, seed: u64) -> Vec<f64> {
    let w = cfg.words;
    let mut rng = seed::rng(seed, "grammar");
    let primary: Vec<usize> = (0..=w).map(|_| rng.random_range(0..w)).collect();
    let rest = 1.0 - cfg.primary_weight - cfg.secondary_weight;
    let mut table = Vec::with_capacity((w + 1) * (w + 1) * w);
    for _a in 0..=w {
        for &p in &primary {
            let secondary = rng.random_range(0..w);
            let mut row = vec![rest / w as f64; w];
            row[p] += cfg.primary_weight;
            row[secondary] += cfg.secondary_weight;
            table.extend(row);
        }
    }
    table
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_are_distributions() {
        let g = ToyGrammar::new(GrammarConfig::default()).unwrap();
        let s = g.shifted(0.3, 5).unwrap();
        for grammar in [&g, &s] {
            for a in 0..=96 {
                for b in 0..=96 {
                    let sum: f64 = grammar.row(a, b).iter().sum();
                    assert!((sum - 1.0).abs() < 1e-9, "row ({a},{b}) sums to {sum}");
                }
            }
        }
        assert_ne!(g, s);
    }

    #[test]
    fn sentences_are_pure_functions_of_seed_and_index() {
        let g = ToyGrammar::new(GrammarConfig::default()).unwrap();
        assert_eq!(g.sentence(3, 17), g.sentence(3, 17));
        assert_ne!(g.sentence(3, 17), g.sentence(3, 18));
        for i in 0..200 {
            let s = g.sentence(9, i);
            assert!((5..=12).contains(&s.len()));
            assert!(s.iter().all(|&t| (4..100).contains(&t)));
        }
    }

    #[test]
    fn bad_bounds_rejected() {
        let cfg = GrammarConfig {
            min_len: 9,
            max_len: 4,
            ..Default::default()
        };
        assert!(ToyGrammar::new(cfg).is_err());
    }
}
