use std::collections::HashMap;

use rand::Rng as _;

use super::Tensor;
use crate::error::{Error, Result};
use crate::seeds::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Param {
    pub name: String,
    pub value: Tensor,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// Named trainable tensors of one network, with Adam moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore {
    pub(crate) params: Vec<Param>,
    index: HashMap<String, ParamId>,
    pub(crate) step: u64,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self { params: Vec::new(), index: HashMap::new(), step: 0 }
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::invalid(format!("duplicate parameter name `{name}`")));
        }
        let id = ParamId(self.params.len());
        let n = value.len();
        self.params.push(Param { name: name.to_string(), value, m: vec![0.0; n], v: vec![0.0; n] });
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    /// Glorot-uniform matrix in ±sqrt(6 / (rows + cols)).
    pub fn add_glorot(&mut self, name: &str, rows: usize, cols: usize, rng: &mut Rng) -> Result<ParamId> {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.random_range(-limit..limit)).collect();
        self.add(name, Tensor::new(rows, cols, data)?)
    }

    pub fn add_zeros(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamId> {
        self.add(name, Tensor::zeros(rows, cols))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Forgets Adam moments and the step counter, e.g. between phases.
    pub fn reset_optimizer(&mut self) {
        self.step = 0;
        for p in &mut self.params {
            p.m.iter_mut().for_each(|x| *x = 0.0);
            p.v.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    /// Copies values from another store with the same names and shapes.
    pub fn load_values_from(&mut self, other: &ParamStore) -> Result<()> {
        for p in &mut self.params {
            let id = other
                .id(&p.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{}`", p.name)))?;
            let src = other.value(id);
            if src.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{}` has shape {} but checkpoint has {}",
                    p.name,
                    p.value.shape_str(),
                    src.shape_str()
                )));
            }
            p.value = src.clone();
        }
        Ok(())
    }
}

/// Gradients for the parameters of one store, indexed by [`ParamId`].
#[derive(Clone, Debug, PartialEq)]
pub struct Grads {
    pub(crate) g: Vec<Option<Vec<f64>>>,
}

impl Grads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self { g: vec![None; store.len()] }
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.g[id.0].as_deref()
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, grad: &[f64]) {
        match &mut self.g[id.0] {
            Some(acc) => acc.iter_mut().zip(grad).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(grad.to_vec()),
        }
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Grads, scale: f64) {
        for (mine, theirs) in self.g.iter_mut().zip(&other.g) {
            if let Some(t) = theirs {
                match mine {
                    Some(m) => m.iter_mut().zip(t).for_each(|(a, b)| *a += scale * b),
                    None => *mine = Some(t.iter().map(|b| scale * b).collect()),
                }
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.g.iter_mut().flatten() {
            g.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.g.iter().flatten().flatten().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.g.iter().flatten().flatten().all(|x| x.is_finite())
    }

    /// Sums a batch of gradients in the given order.
    pub fn sum<'a>(store: &ParamStore, items: impl IntoIterator<Item = &'a Grads>) -> Grads {
        let mut acc = Grads::zeros_like(store);
        for g in items {
            acc.add_scaled(g, 1.0);
        }
        acc
    }
}
