//! Differentiable building blocks: the autodiff tape, parameter storage,
//! dense/conv layers, batch norm and the four layer-norm variants, and the
//! two networks (critic backbone Φ_ω and generator g_θ).

pub mod checkpoint;
pub mod graph;
pub mod layers;
pub mod network;
pub mod norm;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
pub use graph::{Graph, Var};

/// Optimizer grouping of a parameter; weight decay is set per group.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    /// Φ_ω, including its normalization parameters.
    Backbone,
    /// The K class directions S.
    ClassHead,
    /// The fake direction v.
    FakeHead,
    Generator,
    /// Non-trainable state such as batch-norm running statistics.
    Buffer,
}

impl ParamGroup {
    pub fn is_critic(self) -> bool {
        matches!(
            self,
            ParamGroup::Backbone | ParamGroup::ClassHead | ParamGroup::FakeHead
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub group: ParamGroup,
    pub value: Tensor,
}

/// Flat, ordered collection of every tensor a model owns.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, group: ParamGroup, value: Tensor) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            group,
            value,
        });
        ParamId(self.params.len() - 1)
    }

    /// Adds a weight drawn i.i.d. from N(0, 0.02²).
    pub fn add_normal(
        &mut self,
        name: impl Into<String>,
        group: ParamGroup,
        shape: &[usize],
        rng: &mut impl Rng,
    ) -> ParamId {
        let dist = Normal::new(0.0, 0.02).expect("valid std");
        let n = shape.iter().product();
        let data = (0..n).map(|_| dist.sample(rng)).collect();
        let t = Tensor::new(shape.to_vec(), data).expect("shape matches");
        self.add(name, group, t)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids_where(&self, pred: impl Fn(ParamGroup) -> bool) -> Vec<ParamId> {
        self.iter()
            .filter(|(_, p)| pred(p.group))
            .map(|(id, _)| id)
            .collect()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let cur = &mut self.params[id.0];
        if cur.value.shape() != value.shape() {
            return Err(Error::Shape(format!(
                "{}: {:?} vs {:?}",
                cur.name,
                cur.value.shape(),
                value.shape()
            )));
        }
        cur.value = value;
        Ok(())
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }
}

/// One forward/backward pass over a [`ParamStore`].
///
/// Parameters are bound to graph leaves on first use. Batch-norm layers in
/// training mode record running-statistic updates, which the caller applies
/// with [`Session::finish`] once the store is no longer borrowed.
pub struct Session<'a> {
    pub graph: Graph,
    store: &'a ParamStore,
    bound: Vec<Option<Var>>,
    train: bool,
    buffer_updates: Vec<(ParamId, Tensor)>,
}

impl<'a> Session<'a> {
    pub fn new(store: &'a ParamStore, train: bool) -> Self {
        Self {
            graph: Graph::new(),
            store,
            bound: vec![None; store.len()],
            train,
            buffer_updates: Vec::new(),
        }
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self.graph.leaf(self.store.get(id).clone());
        self.bound[id.0] = Some(v);
        v
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.graph.leaf(t)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.graph.value(v)
    }

    pub(crate) fn record_buffer(&mut self, id: ParamId, value: Tensor) {
        if let Some(slot) = self.buffer_updates.iter_mut().find(|(i, _)| *i == id) {
            slot.1 = value;
        } else {
            self.buffer_updates.push((id, value));
        }
    }

    /// Current value of a buffer, including updates recorded in this session.
    pub(crate) fn buffer(&self, id: ParamId) -> &Tensor {
        self.buffer_updates
            .iter()
            .find(|(i, _)| *i == id)
            .map_or_else(|| self.store.get(id), |(_, t)| t)
    }

    /// Gradient tensors of `loss` for each parameter (zeros if unused).
    pub fn param_grads(&mut self, loss: Var, ids: &[ParamId]) -> Result<Vec<Tensor>> {
        let vars: Vec<Option<Var>> = ids.iter().map(|id| self.bound[id.0]).collect();
        let used: Vec<Var> = vars.iter().flatten().copied().collect();
        let gs = self.graph.grad(loss, &used)?;
        let mut it = gs.into_iter();
        Ok(ids
            .iter()
            .zip(vars)
            .map(|(id, v)| match v {
                Some(_) => self.graph.value(it.next().expect("one grad per var")).clone(),
                None => Tensor::zeros(self.store.get(*id).shape()),
            })
            .collect())
    }

    /// Gradient vars of `loss` for each parameter, kept on the tape.
    pub fn param_grad_vars(&mut self, loss: Var, ids: &[ParamId]) -> Result<Vec<Var>> {
        let vars: Vec<Var> = ids.iter().map(|&id| self.param(id)).collect();
        self.graph.grad(loss, &vars)
    }

    /// Ends the session, returning recorded buffer updates.
    pub fn finish(self) -> Vec<(ParamId, Tensor)> {
        self.buffer_updates
    }
}

pub fn apply_buffer_updates(store: &mut ParamStore, updates: Vec<(ParamId, Tensor)>) {
    for (id, t) in updates {
        *store.get_mut(id) = t;
    }
}
