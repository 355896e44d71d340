use rand::seq::SliceRandom;

use super::vocab::Vocabs;
use crate::error::{Error, Result};
use crate::seed;

/// The ground-truth HR→LR translation: substitute every word through a seeded
/// permutation, then swap positions `2i ↔ 2i+1` (a trailing odd token stays).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cipher {
    vocabs: Vocabs,
    forward: Vec<usize>,
    inverse: Vec<usize>,
    swap_pairs: bool,
}

impl Cipher {
    pub fn seeded(vocabs: Vocabs, seed: u64) -> Self {
        let mut forward: Vec<usize> = (0..vocabs.words).collect();
        forward.shuffle(&mut seed::rng(seed, "cipher"));
        Self::from_permutation(vocabs, forward, true)
    }

    /// Degenerate world where LR is HR with relabelled ids only.
    pub fn identity(vocabs: Vocabs) -> Self {
        Self::from_permutation(vocabs, (0..vocabs.words).collect(), false)
    }

    fn from_permutation(vocabs: Vocabs, forward: Vec<usize>, swap_pairs: bool) -> Self {
        let mut inverse = vec![0; forward.len()];
        for (i, &p) in forward.iter().enumerate() {
            inverse[p] = i;
        }
        Self {
            vocabs,
            forward,
            inverse,
            swap_pairs,
        }
    }

    pub fn vocabs(&self) -> Vocabs {
        self.vocabs
    }

    /// LR word id for an HR word id.
    pub fn substitute(&self, hr_id: usize) -> Result<usize> {
        let w = self.vocabs.word_of(hr_id).ok_or(Error::Index {
            op: "lr_of_hr",
            index: hr_id,
            bound: self.vocabs.hr_size(),
        })?;
        Ok(self.vocabs.word_id(self.forward[w]))
    }

    pub fn unsubstitute(&self, lr_id: usize) -> Result<usize> {
        let w = self.vocabs.word_of(lr_id).ok_or(Error::Index {
            op: "hr_of_lr",
            index: lr_id,
            bound: self.vocabs.lr_size(),
        })?;
        Ok(self.vocabs.word_id(self.inverse[w]))
    }

    fn swap(&self, mut ids: Vec<usize>) -> Vec<usize> {
        if self.swap_pairs {
            for pair in ids.chunks_exact_mut(2) {
                pair.swap(0, 1);
            }
        }
        ids
    }

    pub fn lr_of_hr(&self, hr: &[usize]) -> Result<Vec<usize>> {
        let subs = hr
            .iter()
            .map(|&t| self.substitute(t))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.swap(subs))
    }

    pub fn hr_of_lr(&self, lr: &[usize]) -> Result<Vec<usize>> {
        let subs = lr
            .iter()
            .map(|&t| self.unsubstitute(t))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.swap(subs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cipher() -> Cipher {
        Cipher::seeded(Vocabs::new(96), 11)
    }

    #[test]
    fn empty_maps_to_empty() {
        assert!(cipher().lr_of_hr(&[]).unwrap().is_empty());
    }

    #[test]
    fn substitutes_then_swaps_pairs() {
        let c = cipher();
        let [a, b, cc, d] = [10, 20, 30, 40];
        let p = |x| c.substitute(x).unwrap();
        assert_eq!(c.lr_of_hr(&[a, b, cc, d]).unwrap(), vec![p(b), p(a), p(d), p(cc)]);
        assert_eq!(c.lr_of_hr(&[a, b, cc]).unwrap(), vec![p(b), p(a), p(cc)]);
    }

    #[test]
    fn rejects_out_of_vocab() {
        let c = cipher();
        assert!(c.lr_of_hr(&[0]).is_err());
        assert!(c.lr_of_hr(&[100]).is_err());
    }

    #[test]
    fn identity_world_only_relabels() {
        let c = Cipher::identity(Vocabs::new(8));
        assert_eq!(c.lr_of_hr(&[4, 5, 6]).unwrap(), vec![4, 5, 6]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn inverse_composition_is_identity(s in prop::collection::vec(4usize..100, 0..24)) {
            let c = cipher();
            let lr = c.lr_of_hr(&s).unwrap();
            prop_assert_eq!(c.hr_of_lr(&lr).unwrap(), s);
        }
    }
}
