use indexmap::IndexMap;
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::tape::{RunningStats, Tape, Var};
use super::tensor::{Element, Tensor};
use crate::error::{Error, Result};

/// Index of a tensor in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Index of a batch-norm buffer in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BufferId(pub usize);

/// Named trainable tensors plus non-trainable batch-norm statistics, both
/// kept in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<E = f32> {
    params: IndexMap<String, Tensor<E>>,
    buffers: IndexMap<String, RunningStats<E>>,
}

/// Tape handles for every parameter of a store, aligned with [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Routes parameter `id` to another tape variable.
    pub fn replace(&mut self, id: ParamId, var: Var) {
        self.vars[id.0] = var;
    }
}

impl<E: Element> ParamStore<E> {
    pub fn new() -> Self {
        Self {
            params: IndexMap::new(),
            buffers: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<E>) -> Result<ParamId> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter '{name}'")));
        }
        let (idx, _) = self.params.insert_full(name, value);
        Ok(ParamId(idx))
    }

    pub fn insert_buffer(&mut self, name: impl Into<String>, channels: usize) -> Result<BufferId> {
        let name = name.into();
        if self.buffers.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate buffer '{name}'")));
        }
        let (idx, _) = self.buffers.insert_full(name, RunningStats::new(channels));
        Ok(BufferId(idx))
    }

    /// He-normal initialized weight with the given fan-in.
    pub fn insert_he<R: Rng>(&mut self, name: impl Into<String>, shape: &[usize], fan_in: usize, rng: &mut R) -> Result<ParamId> {
        let std = (2.0 / fan_in.max(1) as f64).sqrt();
        let dist = Normal::new(0.0, std).expect("finite std");
        let t = Tensor::from_fn(shape, |_| E::from_f64(dist.sample(rng)));
        self.insert(name, t)
    }

    /// Uniform `±1/√fan_in` initialized tensor.
    pub fn insert_uniform<R: Rng>(&mut self, name: impl Into<String>, shape: &[usize], fan_in: usize, rng: &mut R) -> Result<ParamId> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        let t = Tensor::from_fn(shape, |_| E::from_f64(dist.sample(rng)));
        self.insert(name, t)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<E> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<E> {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<E>> {
        self.params.get(name)
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor<E>> {
        self.params.get_mut(name)
    }

    pub fn buffer(&self, id: BufferId) -> &RunningStats<E> {
        &self.buffers[id.0]
    }

    pub fn buffer_mut(&mut self, id: BufferId) -> &mut RunningStats<E> {
        &mut self.buffers[id.0]
    }

    pub fn buffer_by_name_mut(&mut self, name: &str) -> Option<&mut RunningStats<E>> {
        self.buffers.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<E>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<E>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&str, &RunningStats<E>)> {
        self.buffers.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Records every parameter as a tape leaf.
    pub fn bind(&self, tape: &mut Tape<E>, requires_grad: bool) -> Bound {
        Bound {
            vars: self.params.values().map(|t| tape.leaf(t.clone(), requires_grad)).collect(),
        }
    }

    pub fn cast<F: Element>(&self) -> ParamStore<F> {
        ParamStore {
            params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            buffers: self
                .buffers
                .iter()
                .map(|(k, v)| {
                    let conv = |xs: &[E]| xs.iter().map(|x| F::from_f64(x.to_f64().unwrap_or(f64::NAN))).collect();
                    (k.clone(), RunningStats { mean: conv(&v.mean), var: conv(&v.var) })
                })
                .collect(),
        }
    }
}
