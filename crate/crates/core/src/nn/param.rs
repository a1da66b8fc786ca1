use std::collections::BTreeMap;

use super::rng::fnv1a;
use super::Tensor;

/// A named trainable tensor with its gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub lr_multiplier: f64,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Tensor, lr_multiplier: f64) -> Self {
        assert!(lr_multiplier > 0.0, "lr_multiplier must be positive");
        let grad = Tensor::zeros(value.shape());
        Self { name: name.into(), value, grad, lr_multiplier }
    }
}

/// Path-keyed parameter collection. Iteration order is lexicographic by path.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, param: Param) {
        self.params.insert(param.name.clone(), param);
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Param> {
        self.params.remove(name)
    }

    /// Keeps only parameters whose path satisfies `keep`.
    pub fn retain(&mut self, mut keep: impl FnMut(&str) -> bool) {
        self.params.retain(|k, _| keep(k));
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.values()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.values_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters, |θ|.
    pub fn element_count(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params.values_mut() {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// FNV-1a hash over paths and value bits of the parameters selected by
    /// `filter`.
    pub fn checksum(&self, filter: impl Fn(&str) -> bool) -> u64 {
        let mut bytes = Vec::new();
        for p in self.params.values().filter(|p| filter(&p.name)) {
            bytes.extend_from_slice(p.name.as_bytes());
            for v in p.value.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        fnv1a(&bytes)
    }
}
