use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::seed::Rng;
use crate::tensor::Tensor;

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub(crate) fn new(i: usize) -> Self {
        Self(i)
    }

    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub tensor: Tensor,
    pub frozen: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ParamCounts {
    pub total: u64,
    pub trainable: u64,
}

/// Named parameters in insertion order, each with a frozen flag.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: IndexMap<String, Param>,
}

/// `prefix` selects `name` when it names the entry itself or one of its dotted ancestors.
pub fn prefix_matches(name: &str, prefix: &str) -> bool {
    if prefix.is_empty() {
        return true;
    }
    let prefix = prefix.strip_suffix('.').unwrap_or(prefix);
    name == prefix
        || (name.starts_with(prefix) && name.as_bytes().get(prefix.len()) == Some(&b'.'))
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor, frozen: bool) -> Result<ParamId> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::contract(format!("duplicate parameter `{name}`")));
        }
        let (i, _) = self.entries.insert_full(name, Param { tensor, frozen });
        Ok(ParamId(i))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.entries.get_index_of(name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.entries[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.entries[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.entries.get(name)
    }

    pub fn name(&self, id: ParamId) -> &str {
        self.entries.get_index(id.0).map(|(k, _)| k.as_str()).unwrap_or("")
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Param)> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, (k, p))| (ParamId(i), k.as_str(), p))
    }

    pub fn ids_with_prefix(&self, prefix: &str) -> Vec<ParamId> {
        self.iter()
            .filter(|(_, name, _)| prefix_matches(name, prefix))
            .map(|(id, _, _)| id)
            .collect()
    }

    fn set_frozen(&mut self, prefix: &str, frozen: bool) -> Result<usize> {
        let ids = self.ids_with_prefix(prefix);
        if ids.is_empty() {
            return Err(Error::UnknownPrefix(prefix.to_string()));
        }
        for &id in &ids {
            self.entries[id.0].frozen = frozen;
        }
        Ok(ids.len())
    }

    /// Freezes every entry under `prefix`; returns how many matched.
    pub fn freeze(&mut self, prefix: &str) -> Result<usize> {
        self.set_frozen(prefix, true)
    }

    pub fn unfreeze(&mut self, prefix: &str) -> Result<usize> {
        self.set_frozen(prefix, false)
    }

    pub fn freeze_all(&mut self) {
        for p in self.entries.values_mut() {
            p.frozen = true;
        }
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.iter()
            .filter(|(_, _, p)| !p.frozen)
            .map(|(id, _, _)| id)
            .collect()
    }

    pub fn counts(&self) -> ParamCounts {
        self.counts_with_prefix("")
    }

    pub fn counts_with_prefix(&self, prefix: &str) -> ParamCounts {
        self.iter()
            .filter(|(_, name, _)| prefix_matches(name, prefix))
            .fold(ParamCounts::default(), |mut c, (_, _, p)| {
                let n = p.tensor.numel() as u64;
                c.total += n;
                if !p.frozen {
                    c.trainable += n;
                }
                c
            })
    }

    /// Copies every tensor of `src` into this store under `prefix`, which must
    /// already hold a same-shaped entry for each.
    pub fn load_prefixed(&mut self, src: &ParamStore, prefix: &str) -> Result<()> {
        for (_, name, p) in src.iter() {
            let full = join(prefix, name);
            let dst = self
                .entries
                .get_mut(&full)
                .ok_or_else(|| Error::UnknownParam(full.clone()))?;
            if dst.tensor.shape() != p.tensor.shape() {
                return Err(Error::Shape {
                    op: "load_prefixed",
                    lhs: dst.tensor.shape().to_vec(),
                    rhs: p.tensor.shape().to_vec(),
                });
            }
            dst.tensor = p.tensor.clone();
        }
        Ok(())
    }

    /// Entries under `prefix`, renamed without it.
    pub fn extract_prefixed(&self, prefix: &str) -> ParamStore {
        let strip = format!("{}.", prefix.strip_suffix('.').unwrap_or(prefix));
        let mut out = ParamStore::new();
        for (_, name, p) in self.iter() {
            if let Some(rest) = name.strip_prefix(&strip) {
                out.entries.insert(rest.to_string(), p.clone());
            }
        }
        out
    }

    /// Copies values (not flags) from a store with identical names and shapes.
    pub fn copy_values_from(&mut self, src: &ParamStore) -> Result<()> {
        for (name, p) in &mut self.entries {
            let s = src
                .by_name(name)
                .ok_or_else(|| Error::UnknownParam(name.clone()))?;
            if s.tensor.shape() != p.tensor.shape() {
                return Err(Error::Shape {
                    op: "copy_values_from",
                    lhs: p.tensor.shape().to_vec(),
                    rhs: s.tensor.shape().to_vec(),
                });
            }
            p.tensor = s.tensor.clone();
        }
        Ok(())
    }
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Registers freshly initialized parameters under a dotted scope.
pub struct ParamBuilder<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut Rng,
    prefix: String,
}

impl<'a> ParamBuilder<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut Rng) -> Self {
        Self {
            store,
            rng,
            prefix: String::new(),
        }
    }

    pub fn scope(&mut self, name: &str) -> ParamBuilder<'_> {
        ParamBuilder {
            prefix: join(&self.prefix, name),
            store: self.store,
            rng: self.rng,
        }
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> Result<ParamId> {
        let t = Tensor::randn(shape.to_vec(), std, self.rng);
        self.store.insert(join(&self.prefix, name), t, false)
    }

    pub fn full(&mut self, name: &str, shape: &[usize], v: f64) -> Result<ParamId> {
        self.store
            .insert(join(&self.prefix, name), Tensor::full(shape.to_vec(), v), false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("a.x", Tensor::zeros(vec![2, 3]), false).unwrap();
        s.insert("a.y", Tensor::zeros(vec![4]), false).unwrap();
        s.insert("ab.z", Tensor::zeros(vec![5]), false).unwrap();
        s
    }

    #[test]
    fn prefix_respects_dotted_components() {
        assert!(prefix_matches("a.x", "a"));
        assert!(prefix_matches("a.x", "a."));
        assert!(!prefix_matches("ab.z", "a"));
        assert!(prefix_matches("ab.z", ""));
    }

    #[test]
    fn freeze_and_count() {
        let mut s = store();
        assert_eq!(s.counts(), ParamCounts { total: 15, trainable: 15 });
        assert_eq!(s.freeze("a").unwrap(), 2);
        assert_eq!(s.counts(), ParamCounts { total: 15, trainable: 5 });
        s.freeze_all();
        assert_eq!(s.counts().trainable, 0);
        assert!(matches!(s.freeze("nope"), Err(Error::UnknownPrefix(_))));
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = store();
        assert!(s.insert("a.x", Tensor::zeros(vec![1]), false).is_err());
    }

    #[test]
    fn extract_and_load_round_trip() {
        let mut s = store();
        s.get_mut(ParamId(0)).tensor.data_mut()[0] = 3.5;
        let sub = s.extract_prefixed("a");
        assert_eq!(sub.len(), 2);
        let mut t = store();
        t.load_prefixed(&sub, "a").unwrap();
        assert_eq!(t.by_name("a.x").unwrap().tensor.data()[0], 3.5);
    }
}
