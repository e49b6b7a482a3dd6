//! Named parameter tensors grouped for staged unlocking.

use crate::graph::{Gradients, Graph, Var};
use crate::matrix::Matrix;

/// Index of a tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub value: Matrix,
    /// Unlock group; group 0 is conventionally always live.
    pub group: usize,
}

/// Ordered collection of named learnable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor. Panics on duplicate names.
    pub fn add(&mut self, name: impl Into<String>, value: Matrix, group: usize) -> ParamId {
        let name = name.into();
        assert!(
            self.find(&name).is_none(),
            "parameter {name:?} registered twice"
        );
        self.entries.push(ParamEntry { name, value, group });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.entries[id.0].value
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|e| e.value.is_finite())
    }

    /// Records every tensor on `graph`. Tensors whose group is not live are
    /// recorded as constants and therefore receive no gradient.
    pub fn bind(&self, graph: &mut Graph, live: impl Fn(usize) -> bool) -> Bound {
        let mut vars = Vec::with_capacity(self.entries.len());
        let mut live_flags = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            let is_live = live(e.group);
            let v = if is_live {
                graph.leaf(e.value.clone())
            } else {
                graph.constant(e.value.clone())
            };
            vars.push(v);
            live_flags.push(is_live);
        }
        Bound {
            vars,
            live: live_flags,
        }
    }
}

/// Tensors of a [`ParamStore`] recorded on one graph.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
    live: Vec<bool>,
}

impl Bound {
    #[inline]
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn is_live(&self, id: ParamId) -> bool {
        self.live[id.0]
    }

    /// Per-parameter gradients; frozen tensors map to `None`, live tensors
    /// that did not influence the output map to zeros.
    pub fn collect(&self, store: &ParamStore, grads: &mut Gradients) -> Vec<Option<Matrix>> {
        self.vars
            .iter()
            .zip(&self.live)
            .zip(store.entries())
            .map(|((&v, &live), e)| {
                if !live {
                    return None;
                }
                Some(
                    grads
                        .take(v)
                        .unwrap_or_else(|| Matrix::zeros(e.value.rows(), e.value.cols())),
                )
            })
            .collect()
    }
}
