use std::collections::BTreeMap;

use super::tensor::{Real, Tensor};

/// Handle of a tensor registered in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, append-only collection of trainable tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T = f64> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    /// Total element count over `ids`.
    pub fn numel(&self, ids: &[ParamId]) -> usize {
        ids.iter().map(|&id| self.get(id).len()).sum()
    }

    /// Order-sensitive bit-level fingerprint of the selected tensors.
    pub fn checksum(&self, ids: &[ParamId]) -> u64 {
        // FNV-1a over the raw f64 bits
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for &id in ids {
            for &x in self.get(id).data() {
                let bits = x.to_f64().unwrap_or(f64::NAN).to_bits();
                for b in bits.to_le_bytes() {
                    h ^= u64::from(b);
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        h
    }
}

/// Gradients produced by one backward pass.
///
/// Parameters that did not appear on the tape (or appeared only as
/// constants) have no entry; [`Gradients::get_or_zeros`] fills those in.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T = f64> {
    map: BTreeMap<ParamId, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub(crate) fn new(map: BTreeMap<ParamId, Tensor<T>>) -> Self {
        Self { map }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.map.get(&id)
    }

    pub fn get_or_zeros(&self, id: ParamId, store: &ParamStore<T>) -> Tensor<T> {
        self.map
            .get(&id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(store.get(id).shape()))
    }

    /// Euclidean norm over the selected parameters' gradients.
    pub fn norm(&self, ids: &[ParamId]) -> T {
        ids.iter()
            .filter_map(|id| self.map.get(id))
            .map(|g| g.dot(g))
            .sum::<T>()
            .sqrt()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.map.iter().map(|(&k, v)| (k, v))
    }
}
