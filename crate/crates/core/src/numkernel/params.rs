use std::collections::BTreeMap;

use super::{Array, KernelError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
struct Entry {
    name: String,
    array: Array,
    /// Entries that must stay exactly zero (structural zeros of a
    /// block-triangular map). Gradients there are discarded.
    frozen_zero: Option<Vec<bool>>,
}

/// Named collection of trainable arrays, kept in registration order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
    index: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, array: Array) -> Result<ParamId, KernelError> {
        self.add_entry(name, array, None)
    }

    /// Registers an array whose entries flagged in `zero_mask` are forced to
    /// zero now and kept at zero by [`Gradients::apply_structure`].
    pub fn add_structured(
        &mut self,
        name: &str,
        mut array: Array,
        zero_mask: Vec<bool>,
    ) -> Result<ParamId, KernelError> {
        if zero_mask.len() != array.len() {
            return Err(KernelError::Shape(format!("mask for {name} has wrong length")));
        }
        for (v, &z) in array.data_mut().iter_mut().zip(&zero_mask) {
            if z {
                *v = 0.0;
            }
        }
        self.add_entry(name, array, Some(zero_mask))
    }

    fn add_entry(
        &mut self,
        name: &str,
        array: Array,
        frozen_zero: Option<Vec<bool>>,
    ) -> Result<ParamId, KernelError> {
        if self.index.contains_key(name) {
            return Err(KernelError::Contract(format!("duplicate parameter {name}")));
        }
        let id = ParamId(self.entries.len());
        self.entries.push(Entry { name: name.to_string(), array, frozen_zero });
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Array {
        &self.entries[id.0].array
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array {
        &mut self.entries[id.0].array
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn zero_mask(&self, id: ParamId) -> Option<&[bool]> {
        self.entries[id.0].frozen_zero.as_deref()
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

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.array.len()).sum()
    }

    /// Returns the first structural zero that holds a nonzero value, if any.
    pub fn structure_violation(&self) -> Option<(String, usize)> {
        self.entries.iter().find_map(|e| {
            let mask = e.frozen_zero.as_ref()?;
            e.array
                .data()
                .iter()
                .zip(mask)
                .position(|(v, &z)| z && *v != 0.0)
                .map(|i| (e.name.clone(), i))
        })
    }
}

/// Gradient buffers aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    grads: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(params: &ParamStore) -> Self {
        Gradients { grads: params.entries.iter().map(|e| vec![0.0; e.array.len()]).collect() }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.grads[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.grads[id.0]
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.grads.iter_mut().flatten().for_each(|g| *g *= s);
    }

    pub fn global_norm(&self) -> f64 {
        self.grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
    }

    /// Rescales so the global norm is at most `max_norm`; returns the norm
    /// before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm {
            self.scale(max_norm / norm);
        }
        norm
    }

    /// Zeroes gradients at structural zeros.
    pub fn apply_structure(&mut self, params: &ParamStore) {
        for (g, e) in self.grads.iter_mut().zip(&params.entries) {
            if let Some(mask) = &e.frozen_zero {
                for (x, &z) in g.iter_mut().zip(mask) {
                    if z {
                        *x = 0.0;
                    }
                }
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().flatten().all(|g| g.is_finite())
    }
}
