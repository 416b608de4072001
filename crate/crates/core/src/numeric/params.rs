use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::Tensor;

/// Which sub-model a parameter belongs to. Training phases update one or two
/// groups at a time and freeze the rest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Group {
    /// User encoder (news encoder, dynamic aggregation).
    UserEncoder,
    /// Body encoder and pointer-generator decoder.
    Generator,
    /// Breaking-news classifier.
    Breaking,
    /// A2C value head.
    Critic,
}

impl Group {
    pub const ALL: [Group; 4] = [
        Group::UserEncoder,
        Group::Generator,
        Group::Breaking,
        Group::Critic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Group::UserEncoder => "xi",
            Group::Generator => "theta",
            Group::Breaking => "psi",
            Group::Critic => "critic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub group: Group,
    pub value: Tensor,
}

/// Flat, ordered collection of every learnable tensor in a model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, group: Group, value: Tensor) -> ParamId {
        self.entries.push(ParamEntry {
            name: name.into(),
            group,
            value,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn ids_in(&self, group: Group) -> impl Iterator<Item = ParamId> + '_ {
        self.entries
            .iter()
            .enumerate()
            .filter(move |(_, e)| e.group == group)
            .map(|(i, _)| ParamId(i))
    }

    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// FNV-1a over the raw bit patterns of every value in `group`.
    pub fn checksum(&self, group: Group) -> u64 {
        let mut hash = 0xcbf2_9ce4_8422_2325u64;
        for e in self.entries.iter().filter(|e| e.group == group) {
            for v in e.value.data() {
                for b in v.to_bits().to_le_bytes() {
                    hash ^= b as u64;
                    hash = hash.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        hash
    }

    pub fn checksum_all(&self) -> u64 {
        Group::ALL
            .iter()
            .fold(0u64, |acc, g| acc.rotate_left(17) ^ self.checksum(*g))
    }
}

/// Dense gradient buffer aligned with a [`ParamStore`].
#[derive(Debug, Clone, Default)]
pub struct ParamGrads {
    grads: Vec<Option<Tensor>>,
}

impl ParamGrads {
    pub fn new(len: usize) -> Self {
        Self {
            grads: (0..len).map(|_| None).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn accumulate(&mut self, id: ParamId, grad: &Tensor) {
        if self.grads.len() <= id.0 {
            self.grads.resize(id.0 + 1, None);
        }
        match &mut self.grads[id.0] {
            Some(g) => g.add_assign(grad),
            slot => *slot = Some(grad.clone()),
        }
    }

    pub fn merge(&mut self, other: &ParamGrads) {
        for (i, g) in other.grads.iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(ParamId(i), g);
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.grads.iter_mut().flatten() {
            for v in g.data_mut() {
                *v *= factor;
            }
        }
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(
            self.grads
                .iter()
                .flatten()
                .map(|g| g.dot(g))
                .sum::<f64>(),
        )
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().flatten().all(Tensor::is_finite)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }

    pub fn retain_groups(&mut self, store: &ParamStore, groups: &[Group]) {
        for (i, g) in self.grads.iter_mut().enumerate() {
            if i < store.len() && !groups.contains(&store.entries[i].group) {
                *g = None;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checksum_is_group_local() {
        let mut store = ParamStore::new();
        let a = store.add("a", Group::UserEncoder, Tensor::scalar(1.0));
        store.add("b", Group::Generator, Tensor::scalar(2.0));
        let xi = store.checksum(Group::UserEncoder);
        let theta = store.checksum(Group::Generator);
        store.get_mut(a).data_mut()[0] = 1.5;
        assert_ne!(store.checksum(Group::UserEncoder), xi);
        assert_eq!(store.checksum(Group::Generator), theta);
    }

    #[test]
    fn grads_accumulate_additively() {
        let mut g = ParamGrads::new(1);
        g.accumulate(ParamId(0), &Tensor::scalar(1.5));
        g.accumulate(ParamId(0), &Tensor::scalar(2.0));
        assert_eq!(g.get(ParamId(0)).unwrap().item(), 3.5);
    }
}
