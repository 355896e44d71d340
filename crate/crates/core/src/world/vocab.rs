//! Token id spaces.
//!
//! The high-resource (HR) and low-resource (LR) translators each have their own
//! id space: four specials followed by that language's words. The language model
//! uses a third space holding the specials, every HR word, then every LR word,
//! so LR text can be fed to it even though it was only ever trained on HR text.

use serde::{Deserialize, Serialize};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const N_SPECIAL: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabs {
    /// Word count of each language (specials excluded).
    pub words: usize,
}

impl Vocabs {
    pub fn new(words: usize) -> Self {
        Self { words }
    }

    pub fn hr_size(&self) -> usize {
        N_SPECIAL + self.words
    }

    pub fn lr_size(&self) -> usize {
        N_SPECIAL + self.words
    }

    pub fn llm_size(&self) -> usize {
        N_SPECIAL + 2 * self.words
    }

    pub fn word_id(&self, word: usize) -> usize {
        N_SPECIAL + word
    }

    /// Word index of a translator-space id, if it is a word.
    pub fn word_of(&self, id: usize) -> Option<usize> {
        (N_SPECIAL..N_SPECIAL + self.words)
            .contains(&id)
            .then(|| id - N_SPECIAL)
    }

    /// HR translator id → LM id. HR words keep their ids.
    pub fn hr_to_llm(&self, id: usize) -> usize {
        if id < self.hr_size() {
            id
        } else {
            UNK
        }
    }

    /// LR translator id → LM id.
    pub fn lr_to_llm(&self, id: usize) -> usize {
        match self.word_of(id) {
            Some(w) => N_SPECIAL + self.words + w,
            None if id < N_SPECIAL => id,
            None => UNK,
        }
    }

    /// LM id → HR translator id; LR words and out-of-range ids become UNK.
    pub fn llm_to_hr(&self, id: usize) -> usize {
        if id < self.hr_size() {
            id
        } else {
            UNK
        }
    }

    /// LM id → LR translator id; HR words and out-of-range ids become UNK.
    pub fn llm_to_lr(&self, id: usize) -> usize {
        let lo = N_SPECIAL + self.words;
        if (lo..lo + self.words).contains(&id) {
            N_SPECIAL + id - lo
        } else if id < N_SPECIAL {
            id
        } else {
            UNK
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn remaps_round_trip_on_words() {
        let v = Vocabs::new(10);
        for w in 0..10 {
            let hr = v.word_id(w);
            let lr = v.word_id(w);
            assert_eq!(v.llm_to_hr(v.hr_to_llm(hr)), hr);
            assert_eq!(v.llm_to_lr(v.lr_to_llm(lr)), lr);
            assert_ne!(v.hr_to_llm(hr), v.lr_to_llm(lr));
        }
        assert_eq!(v.llm_to_lr(v.word_id(3)), UNK);
        assert_eq!(v.lr_to_llm(999), UNK);
        assert_eq!(v.llm_size(), 24);
    }
}
