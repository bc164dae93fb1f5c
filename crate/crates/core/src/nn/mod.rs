//! Neural-network building blocks: autodiff tape, parameter store,
//! layer constructors, and the optimizer.

pub mod graph;
pub mod layers;
pub mod optim;

pub use graph::{Gradients, Graph, Var};

use indexmap::IndexMap;
use ndarray::ArrayD;

/// One named tensor in a [`ParamStore`]. Non-trainable entries hold
/// state such as batch-norm running statistics; they are serialized
/// with the model but skipped by the optimizer.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: ArrayD<f64>,
    pub trainable: bool,
}

/// Ordered collection of named parameters. Insertion order is the
/// serialization order, so models must register parameters
/// deterministically.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: IndexMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: ArrayD<f64>, trainable: bool) {
        let prev = self.entries.insert(name.to_string(), Param { value, trainable });
        assert!(prev.is_none(), "duplicate parameter name `{name}`");
    }

    pub fn get(&self, name: &str) -> &Param {
        self.entries.get(name).unwrap_or_else(|| panic!("unknown parameter `{name}`"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Param {
        self.entries.get_mut(name).unwrap_or_else(|| panic!("unknown parameter `{name}`"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of trainable scalar entries.
    pub fn count_trainable(&self) -> usize {
        self.entries.values().filter(|p| p.trainable).map(|p| p.value.len()).sum()
    }
}

/// Bridges a [`ParamStore`] and a [`Graph`] for one forward/backward
/// pass. Each parameter becomes at most one leaf node, so a weight
/// used several times accumulates a single summed gradient.
pub struct Binder<'a> {
    store: &'a ParamStore,
    bound: IndexMap<String, Var>,
}

impl<'a> Binder<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Binder { store, bound: IndexMap::new() }
    }

    /// Leaf [`Var`] for a named parameter, created on first use.
    /// Non-trainable entries bind as constants.
    pub fn var(&mut self, g: &mut Graph, name: &str) -> Var {
        if let Some(v) = self.bound.get(name) {
            return *v;
        }
        let p = self.store.get(name);
        let v = if p.trainable { g.leaf(p.value.clone()) } else { g.constant(p.value.clone()) };
        self.bound.insert(name.to_string(), v);
        v
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    /// Collect this pass's gradients keyed by parameter name.
    /// Parameters that never bound or never received a gradient are
    /// omitted.
    pub fn grads_by_name(&self, grads: &mut Gradients) -> IndexMap<String, ArrayD<f64>> {
        let mut out = IndexMap::new();
        for (name, var) in &self.bound {
            if let Some(grad) = grads.take(*var) {
                out.insert(name.clone(), grad);
            }
        }
        out
    }
}
