//! The six approaches to missing-final-word prediction, their accuracy, the
//! results table, and the parameter-accounting report.

mod baselines;
pub mod param_report;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::SamplerConfig;

pub use baselines::{
    eval_lm, eval_naive, eval_tall, finetune_llm, lr_sequences, soft_prompt_examples, train_soft_prompt,
    PromptExample, SoftPromptModel,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Approach {
    Direct,
    Finetuned,
    FromScratch,
    Naive,
    SoftPrompt,
    Tall,
}

impl Approach {
    pub const ALL: [Approach; 6] = [
        Approach::Direct,
        Approach::Finetuned,
        Approach::FromScratch,
        Approach::Naive,
        Approach::SoftPrompt,
        Approach::Tall,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Approach::Direct => "direct",
            Approach::Finetuned => "finetuned",
            Approach::FromScratch => "from_scratch",
            Approach::Naive => "naive",
            Approach::SoftPrompt => "soft_prompt",
            Approach::Tall => "tall",
        }
    }

    /// Accepts the canonical names plus the short CLI spellings.
    pub fn parse(s: &str) -> Option<Self> {
        let s = s.replace('-', "_");
        match s.as_str() {
            "finetune" => Some(Approach::Finetuned),
            "scratch" => Some(Approach::FromScratch),
            _ => Self::ALL.into_iter().find(|a| a.name() == s),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub example: usize,
    pub gold: usize,
    pub predicted: usize,
    pub correct: bool,
    pub approach: Approach,
}

impl EvalRecord {
    pub fn new(example: usize, gold: usize, predicted: usize, approach: Approach) -> Self {
        Self {
            example,
            gold,
            predicted,
            correct: gold == predicted,
            approach,
        }
    }
}

pub fn accuracy(records: &[EvalRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Empty("evaluation records"));
    }
    Ok(records.iter().filter(|r| r.correct).count() as f64 / records.len() as f64)
}

/// `100·num/den` rounded half-up to `decimals` places, in integer arithmetic.
pub fn format_percent(num: u64, den: u64, decimals: u32) -> String {
    assert!(den > 0, "percentage of an empty total");
    let scale = 10u128.pow(decimals);
    let (num, den) = (num as u128, den as u128);
    let units = (2 * num * 100 * scale + den) / (2 * den);
    if decimals == 0 {
        return units.to_string();
    }
    format!(
        "{}.{:0width$}",
        units / scale,
        units % scale,
        width = decimals as usize
    )
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultRow {
    pub dataset: String,
    pub approach: Approach,
    pub model: String,
    pub correct: u64,
    pub total: u64,
    pub accuracy_percent: String,
}

impl ResultRow {
    pub fn from_records(dataset: &str, approach: Approach, model: &str, records: &[EvalRecord]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Empty("evaluation records"));
        }
        let correct = records.iter().filter(|r| r.correct).count() as u64;
        let total = records.len() as u64;
        Ok(Self {
            dataset: dataset.to_string(),
            approach,
            model: model.to_string(),
            correct,
            total,
            accuracy_percent: format_percent(correct, total, 2),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub name: String,
    pub size: usize,
    pub hash: String,
}
/// One accuracy row per approach and dataset, plus the
/// configuration and dataset hashes it was produced from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub config_hash: String,
    pub sampler: SamplerConfig,
    pub datasets: Vec<DatasetInfo>,
    pub rows: Vec<ResultRow>,
}

impl ResultsTable {
    pub fn row(&self, dataset: &str, approach: Approach) -> Option<&ResultRow> {
        self.rows
            .iter()
            .find(|r| r.dataset == dataset && r.approach == approach)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("results serialize")
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "config {}", self.config_hash).unwrap();
        writeln!(
            out,
            "sampler T={} top_k={} top_p={} seed={}",
            self.sampler.temperature, self.sampler.top_k, self.sampler.top_p, self.sampler.seed
        )
        .unwrap();
        for d in &self.datasets {
            writeln!(out, "dataset {} n={} sha256 {}", d.name, d.size, d.hash).unwrap();
        }
        writeln!(out).unwrap();
        writeln!(out, "{:<10} {:<14} {:<10} {:>10}", "dataset", "approach", "model", "accuracy%").unwrap();
        for r in &self.rows {
            writeln!(
                out,
                "{:<10} {:<14} {:<10} {:>10}",
                r.dataset,
                r.approach.name(),
                r.model,
                r.accuracy_percent
            )
            .unwrap();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percent_rounds_half_up() {
        assert_eq!(format_percent(1, 8, 2), "12.50");
        assert_eq!(format_percent(1, 3, 2), "33.33");
        assert_eq!(format_percent(2, 3, 2), "66.67");
        // 0.125% of the way: 1/800 = 0.125% → 0.13
        assert_eq!(format_percent(1, 800, 2), "0.13");
        assert_eq!(format_percent(0, 5, 2), "0.00");
        assert_eq!(format_percent(5, 5, 1), "100.0");
        assert_eq!(format_percent(126_786_048, 883_537_920, 2), "14.35");
    }

    #[test]
    fn accuracy_counts() {
        let recs: Vec<EvalRecord> = (0..4)
            .map(|i| EvalRecord::new(i, 5, if i == 2 { 5 } else { 6 }, Approach::Naive))
            .collect();
        assert_eq!(accuracy(&recs).unwrap(), 0.25);
        assert!(accuracy(&[]).is_err());
    }

    #[test]
    fn approach_names_parse() {
        for a in Approach::ALL {
            assert_eq!(Approach::parse(a.name()), Some(a));
        }
        assert_eq!(Approach::parse("soft-prompt"), Some(Approach::SoftPrompt));
        assert_eq!(Approach::parse("finetune"), Some(Approach::Finetuned));
        assert_eq!(Approach::parse("scratch"), Some(Approach::FromScratch));
        assert_eq!(Approach::parse("bogus"), None);
    }
}
