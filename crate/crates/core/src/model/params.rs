//! Named parameter storage and the per-forward tape binding.
//!
//! Parameters live in a [`ParamStore`] keyed by dotted path. Each forward
//! pass opens a [`Session`], which lazily copies a parameter onto the tape
//! the first time a layer asks for it and remembers the mapping so gradients
//! can be read back by name after `backward`.

use crate::autodiff::{Gradients, Tape, Tensor, Var};
use crate::error::{Error, Result};
use indexmap::IndexMap;

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    map: IndexMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        let name = name.into();
        let prev = self.map.insert(name.clone(), t);
        assert!(prev.is_none(), "duplicate parameter {name}");
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.map
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        self.map
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total scalar count across all parameters.
    pub fn scalar_count(&self) -> usize {
        self.map.values().map(Tensor::len).sum()
    }

    /// Scalar count of parameters under a dotted prefix.
    pub fn scalar_count_under(&self, prefix: &str) -> usize {
        self.map
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, v)| v.len())
            .sum()
    }

    /// Replaces a tensor, checking the shape stays fixed.
    pub fn set(&mut self, name: &str, t: Tensor) -> Result<()> {
        let cur = self.map.get_mut(name).ok_or_else(|| {
            Error::Checkpoint(format!("unknown parameter {name}"))
        })?;
        if cur.rows != t.rows || cur.cols != t.cols {
            return Err(Error::Checkpoint(format!(
                "parameter {name}: stored {}x{}, expected {}x{}",
                t.rows, t.cols, cur.rows, cur.cols
            )));
        }
        *cur = t;
        Ok(())
    }
}

/// One forward pass: a tape plus the name -> leaf bindings made on it.
pub struct Session<'a> {
    pub tape: Tape,
    store: &'a ParamStore,
    bound: IndexMap<String, Var>,
}

impl<'a> Session<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Session {
            tape: Tape::new(),
            store,
            bound: IndexMap::new(),
        }
    }

    /// Leaf var for a named parameter (bound once per session).
    pub fn param(&mut self, name: &str) -> Var {
        if let Some(&v) = self.bound.get(name) {
            return v;
        }
        let v = self.tape.leaf(self.store.get(name).clone());
        self.bound.insert(name.to_string(), v);
        v
    }

    pub fn bound_names(&self) -> impl Iterator<Item = &str> {
        self.bound.keys().map(String::as_str)
    }

    /// Gradients for every store parameter, keyed by name. Parameters the
    /// loss never touched (including ones this session never bound) get
    /// zero tensors.
    pub fn param_grads(&self, grads: &Gradients) -> IndexMap<String, Tensor> {
        self.store
            .iter()
            .map(|(name, value)| {
                let g = match self.bound.get(name) {
                    Some(&var) => grads.get(&self.tape, var),
                    None => Tensor::zeros(value.rows, value.cols),
                };
                (name.to_string(), g)
            })
            .collect()
    }
}
