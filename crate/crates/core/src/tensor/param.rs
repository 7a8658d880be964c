use std::collections::HashMap;

use super::tape::{BnStats, Tape, Var};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Weights receive gradients; buffers (batch-norm running statistics) do not.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Buffer,
}

#[derive(Clone, Debug)]
pub struct Parameter<T: Scalar = f32> {
    pub name: String,
    pub value: Tensor<T>,
    pub frozen: bool,
    pub kind: ParamKind,
}

/// Named parameter table of a network, in registration order.
#[derive(Clone, Debug)]
pub struct ParamStore<T: Scalar = f32> {
    params: Vec<Parameter<T>>,
    by_name: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new(), by_name: HashMap::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, kind: ParamKind) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::contract(format!("duplicate parameter name {name}")));
        }
        self.by_name.insert(name.clone(), self.params.len());
        self.params.push(Parameter { name, value, frozen: false, kind });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn weight(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        self.add(name, value, ParamKind::Weight)
    }

    pub fn buffer(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        self.add(name, value, ParamKind::Buffer)
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    /// Number of trainable scalars (buffers excluded).
    pub fn weight_count(&self) -> usize {
        self.params.iter().filter(|p| p.kind == ParamKind::Weight).map(|p| p.value.len()).sum()
    }

    /// Sets the frozen flag on every parameter whose name starts with `prefix`.
    pub fn set_frozen_prefix(&mut self, prefix: &str, frozen: bool) -> usize {
        let mut hits = 0;
        for p in self.params.iter_mut().filter(|p| p.name.starts_with(prefix)) {
            p.frozen = frozen;
            hits += 1;
        }
        hits
    }

    /// Converts every parameter to another precision, keeping names and flags.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter { name: p.name.clone(), value: p.value.cast(), frozen: p.frozen, kind: p.kind })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }
}

/// One forward/backward pass over a [`ParamStore`].
///
/// Parameters become tape leaves the first time a layer asks for them; frozen
/// parameters and buffers are bound without gradient tracking. Batch-norm layers
/// running in training mode record their batch statistics here so the caller can
/// fold them into the running buffers after the step.
pub struct Session<'a, T: Scalar = f32> {
    pub tape: Tape<T>,
    store: &'a ParamStore<T>,
    bound: Vec<Option<Var>>,
    train: bool,
    stats: Vec<(ParamId, ParamId, BnStats<T>)>,
}

impl<'a, T: Scalar> Session<'a, T> {
    pub fn new(store: &'a ParamStore<T>, train: bool) -> Self {
        Self { tape: Tape::new(), store, bound: vec![None; store.len()], train, stats: Vec::new() }
    }

    pub fn store(&self) -> &ParamStore<T> {
        self.store
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let p = self.store.get(id);
        let track = p.kind == ParamKind::Weight && !p.frozen;
        let v = self.tape.leaf(p.value.clone(), track);
        self.bound[id.0] = Some(v);
        v
    }

    pub fn record_stats(&mut self, mean: ParamId, var: ParamId, stats: BnStats<T>) {
        self.stats.push((mean, var, stats));
    }

    pub fn take_stats(&mut self) -> Vec<(ParamId, ParamId, BnStats<T>)> {
        std::mem::take(&mut self.stats)
    }

    /// Gradients of every bound, tracked parameter after [`Tape::backward`].
    pub fn grads(&self) -> Vec<(ParamId, &Tensor<T>)> {
        self.bound
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.and_then(|v| self.tape.grad(v)).map(|g| (ParamId(i), g)))
            .collect()
    }
}

/// Exponential running-average update `r <- (1 - momentum) * r + momentum * batch`.
pub fn apply_bn_stats<T: Scalar>(store: &mut ParamStore<T>, stats: &[(ParamId, ParamId, BnStats<T>)], momentum: f64) {
    let m = T::of(momentum);
    let keep = T::one() - m;
    for (mean_id, var_id, s) in stats {
        for (r, &b) in store.get_mut(*mean_id).value.data_mut().iter_mut().zip(&s.mean) {
            *r = keep * *r + m * b;
        }
        for (r, &b) in store.get_mut(*var_id).value.data_mut().iter_mut().zip(&s.var) {
            *r = keep * *r + m * b;
        }
    }
}
