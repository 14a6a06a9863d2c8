//! Named parameter storage shared by all model components.

use std::collections::BTreeMap;

use super::tensor::Tensor;

/// Trainable weights take part in optimizer updates; buffers (batch-norm
/// running statistics) are serialized but never differentiated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Buffer,
}

#[derive(Clone)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub kind: ParamKind,
}

/// Flat registry of named tensors. Registration order is deterministic
/// (construction order), lookups go through a sorted name index.
#[derive(Clone, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    by_name: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn register(&mut self, name: impl Into<String>, value: Tensor, kind: ParamKind) -> usize {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let grad = Tensor::zeros(value.shape());
        let idx = self.entries.len();
        self.by_name.insert(name.clone(), idx);
        self.entries.push(ParamEntry {
            name,
            value,
            grad,
            kind,
        });
        idx
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, idx: usize) -> &ParamEntry {
        &self.entries[idx]
    }

    pub fn entry_mut(&mut self, idx: usize) -> &mut ParamEntry {
        &mut self.entries[idx]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.index_of(name).map(|i| &self.entries[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamEntry> {
        self.index_of(name).map(move |i| &mut self.entries[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamEntry> {
        self.entries.iter()
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Indices of entries whose name starts with `prefix`.
    pub fn group_indices(&self, prefix: &str) -> Vec<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.name.starts_with(prefix))
            .map(|(i, _)| i)
            .collect()
    }

    /// Bitwise snapshot of a parameter group, for freeze-contract checks.
    pub fn group_bits(&self, prefix: &str) -> Vec<(String, Vec<u64>)> {
        self.entries
            .iter()
            .filter(|e| e.name.starts_with(prefix))
            .map(|e| {
                (
                    e.name.clone(),
                    e.value.data().iter().map(|v| v.to_bits()).collect(),
                )
            })
            .collect()
    }

    /// True when every tensor in both stores is bitwise identical.
    pub fn bits_eq(&self, other: &ParamStore) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|(a, b)| a.name == b.name && a.value.bits_eq(&b.value))
    }

    /// Deep copy of values (grads reset to zero).
    pub fn clone_values(&self) -> ParamStore {
        let mut out = ParamStore::new();
        for e in &self.entries {
            out.register(e.name.clone(), e.value.clone(), e.kind);
        }
        out
    }

    /// Maximum absolute gradient entry within a name-prefix group.
    pub fn group_max_abs_grad(&self, prefix: &str) -> f64 {
        self.entries
            .iter()
            .filter(|e| e.name.starts_with(prefix))
            .flat_map(|e| e.grad.data().iter())
            .fold(0.0f64, |m, &g| m.max(g.abs()))
    }
}
