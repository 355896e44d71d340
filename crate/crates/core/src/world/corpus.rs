use std::collections::HashSet;

use sha2::{Digest, Sha256};

use super::cipher::Cipher;
use super::grammar::ToyGrammar;
use crate::error::{Error, Result};

/// An HR sentence and its LR translation, each in its translator's id space.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BilingualPair {
    pub hr: Vec<usize>,
    pub lr: Vec<usize>,
}

/// `n` distinct pairs drawn from the stream keyed by `seed`, skipping any HR
/// sentence in `exclude`. Fails if the retry budget runs out first.
pub fn generate_corpus_excluding(
    grammar: &ToyGrammar,
    cipher: &Cipher,
    seed: u64,
    n: usize,
    exclude: &HashSet<Vec<usize>>,
) -> Result<Vec<BilingualPair>> {
    if n == 0 {
        return Err(Error::Empty("corpus size"));
    }
    let budget = 50 * n as u64 + 1000;
    let mut seen = HashSet::with_capacity(n);
    let mut out = Vec::with_capacity(n);
    for index in 0..budget {
        let hr = grammar.sentence(seed, index);
        if exclude.contains(&hr) || !seen.insert(hr.clone()) {
            continue;
        }
        let lr = cipher.lr_of_hr(&hr)?;
        out.push(BilingualPair { hr, lr });
        if out.len() == n {
            return Ok(out);
        }
    }
    Err(Error::Config(format!(
        "could not draw {n} distinct sentences within {budget} attempts (got {})",
        out.len()
    )))
}

pub fn generate_corpus(
    grammar: &ToyGrammar,
    cipher: &Cipher,
    seed: u64,
    n: usize,
) -> Result<Vec<BilingualPair>> {
    generate_corpus_excluding(grammar, cipher, seed, n, &HashSet::new())
}

/// Hex SHA-256 over the LR and HR token streams of a dataset.
pub fn dataset_hash(pairs: &[BilingualPair]) -> String {
    let mut h = Sha256::new();
    for p in pairs {
        for side in [&p.hr, &p.lr] {
            h.update((side.len() as u32).to_le_bytes());
            for &t in side {
                h.update((t as u32).to_le_bytes());
            }
        }
    }
    hex::encode(h.finalize())
}
