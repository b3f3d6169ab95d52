use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use std::collections::HashMap;

/// Which loss pathway a parameter belongs to. Parameters on the common path
/// (encoder stages feeding several branches) receive summed gradient
/// contributions from every loss term that depends on them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OwnershipTag {
    MainExclusive,
    /// 1-based side branch index.
    SideExclusive(usize),
    SharedPath,
}

#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Option<Vec<T>>,
    pub tag: OwnershipTag,
    pub trainable: bool,
}

/// Named tensors in a fixed insertion order (binds checkpoints, Adam slots
/// and initialization to a deterministic layout).
#[derive(Debug, Clone, Default)]
pub struct ParameterSet<T> {
    items: Vec<Param<T>>,
    by_name: HashMap<String, usize>,
}

impl<T: Scalar> ParameterSet<T> {
    pub fn new() -> Self {
        ParameterSet {
            items: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, value: Tensor<T>, tag: OwnershipTag, trainable: bool) {
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter {name}"
        );
        let mut value = value;
        value.requires_grad = trainable;
        self.by_name.insert(name.to_string(), self.items.len());
        self.items.push(Param {
            name: name.to_string(),
            value,
            grad: None,
            tag,
            trainable,
        });
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    pub fn at(&self, idx: usize) -> &Param<T> {
        &self.items[idx]
    }

    pub fn at_mut(&mut self, idx: usize) -> &mut Param<T> {
        &mut self.items[idx]
    }

    pub fn get(&self, name: &str) -> Result<&Param<T>> {
        self.index(name)
            .map(|i| &self.items[i])
            .ok_or_else(|| Error::config(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param<T>> {
        let i = self
            .index(name)
            .ok_or_else(|| Error::config(format!("unknown parameter {name}")))?;
        Ok(&mut self.items[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.items.iter()
    }

    /// Add `grad` into the slot's accumulated gradient.
    pub fn accumulate_grad(&mut self, idx: usize, grad: &[T]) {
        let p = &mut self.items[idx];
        debug_assert_eq!(grad.len(), p.value.numel());
        let slot = p
            .grad
            .get_or_insert_with(|| vec![T::ZERO; grad.len()]);
        for (o, v) in slot.iter_mut().zip(grad.iter()) {
            *o += *v;
        }
    }

    /// Drop all accumulated gradients.
    pub fn clear_grads(&mut self) {
        for p in self.items.iter_mut() {
            p.grad = None;
        }
    }

    /// Total number of trainable scalar values.
    pub fn trainable_count(&self) -> usize {
        self.items
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.numel())
            .sum()
    }
}
