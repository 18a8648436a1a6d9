//! Named parameter storage and per-graph binding.
//!
//! Parameters live outside any graph in a [`ParamStore`] (sorted by name so
//! every walk over them is deterministic). A forward pass binds the ones it
//! touches into its own graph through a [`ParamBinder`], which caches the
//! leaf per name so repeated fetches share one node and gradients accumulate
//! in one place.

use super::{Graph, Tensor};
use crate::error::{Error, Result};
use std::cell::RefCell;
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, shape: &[usize], data: Vec<f64>) -> Result<()> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::contract(format!(
                "param {name}: shape {shape:?} wants {numel} elements, got {}",
                data.len()
            )));
        }
        if self.params.contains_key(name) {
            return Err(Error::contract(format!("param {name} already exists")));
        }
        self.params.insert(name.to_string(), Param { shape: shape.to_vec(), data });
        Ok(())
    }

    /// Insert on first use; later calls must agree on the shape.
    pub fn get_or_insert_with(
        &mut self,
        name: &str,
        shape: &[usize],
        init: impl FnOnce() -> Vec<f64>,
    ) -> &Param {
        let entry = self
            .params
            .entry(name.to_string())
            .or_insert_with(|| Param { shape: shape.to_vec(), data: init() });
        assert_eq!(entry.shape, shape, "param {name} bound with conflicting shapes");
        entry
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

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar count across all parameters.
    pub fn total_len(&self) -> usize {
        self.params.values().map(|p| p.data.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param)> {
        self.params.iter_mut()
    }
}

/// Binds store parameters into one graph as trainable leaves, one node per
/// name no matter how often it is fetched.
pub struct ParamBinder<'a> {
    store: &'a ParamStore,
    graph: Graph,
    bound: RefCell<BTreeMap<String, Tensor>>,
}

impl<'a> ParamBinder<'a> {
    pub fn new(store: &'a ParamStore, graph: &Graph) -> Self {
        Self { store, graph: graph.clone(), bound: RefCell::new(BTreeMap::new()) }
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    pub fn get(&self, name: &str) -> Result<Tensor> {
        if let Some(t) = self.bound.borrow().get(name) {
            return Ok(t.clone());
        }
        let p = self
            .store
            .get(name)
            .ok_or_else(|| Error::contract(format!("unknown param {name}")))?;
        let t = self.graph.leaf(p.data.clone(), &p.shape)?;
        self.bound.borrow_mut().insert(name.to_string(), t.clone());
        Ok(t)
    }

    /// Leaf gradients accumulated by `backward`, keyed by name; parameters the
    /// loss never touched report zeros.
    pub fn grads(&self) -> BTreeMap<String, Vec<f64>> {
        self.bound
            .borrow()
            .iter()
            .map(|(name, t)| {
                let g = t.grad().unwrap_or_else(|| vec![0.0; t.numel()]);
                (name.clone(), g)
            })
            .collect()
    }
}
