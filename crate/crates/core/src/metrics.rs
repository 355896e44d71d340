//! Line-delimited JSON metrics.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: u64,
    pub split: String,
    pub loss: f64,
    pub accuracy: f64,
    pub perplexity: f64,
    pub lr: f64,
    pub grad_norm: f64,
    pub config_hash: String,
}

impl MetricRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("metric record serializes")
    }
}

/// Appends one JSON object per line.
pub fn write_jsonl(path: &Path, records: &[MetricRecord]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for r in records {
        writeln!(f, "{}", r.to_line()).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<MetricRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l)
                .map_err(|e| Error::Config(format!("{}: bad metrics line: {e}", path.display())))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let recs = vec![MetricRecord {
            step: 4,
            split: "dev".into(),
            loss: 0.25,
            accuracy: 0.5,
            perplexity: 0.25f64.exp(),
            lr: 1e-3,
            grad_norm: 0.0,
            config_hash: "ab".into(),
        }];
        write_jsonl(&path, &recs).unwrap();
        assert_eq!(read_jsonl(&path).unwrap(), recs);
    }
}
