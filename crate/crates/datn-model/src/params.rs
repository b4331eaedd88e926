//! Named parameter collections. Registration order is fixed, which pins
//! both the initialization stream and the checkpoint record order.

use std::collections::HashMap;

use datn_core::rng::uniform_tensor;
use datn_core::{Graph, NodeId, Tensor};
use datn_core::rng::ChaCha8Rng;

use crate::error::ModelError;
use crate::Result;

/// Shared dimension bundle for every model head.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelDims {
    /// Canvas side in pixels; the region grid is `canvas_side / 4` across.
    pub canvas_side: usize,
    /// Region feature width D (also the region GRU hidden width).
    pub feature_width: usize,
    /// Concept count c.
    pub concepts: usize,
    /// Projection width d (= d') inside the semantic attention.
    pub attention_width: usize,
    /// Decoder embedding and hidden width h.
    pub hidden: usize,
    /// Question GRU hidden width q.
    pub question_hidden: usize,
    /// Multimodal projection width h' for question-guided attention.
    pub multimodal_width: usize,
    /// Vocabulary size N0.
    pub vocab: usize,
    /// Answer class count A.
    pub answers: usize,
}

impl ModelDims {
    pub fn grid(&self) -> usize {
        self.canvas_side / 4
    }

    /// Region count C.
    pub fn regions(&self) -> usize {
        self.grid() * self.grid()
    }

    /// Width of the fused semantic vector (D + c).
    pub fn fused_width(&self) -> usize {
        self.feature_width + self.concepts
    }

    pub fn validate(&self) -> Result<()> {
        if self.canvas_side < 16 || self.canvas_side % 4 != 0 {
            return Err(ModelError::Dimensions(format!(
                "canvas_side {} must be a multiple of 4 and at least 16",
                self.canvas_side
            )));
        }
        for (name, v) in [
            ("feature_width", self.feature_width),
            ("concepts", self.concepts),
            ("attention_width", self.attention_width),
            ("hidden", self.hidden),
            ("question_hidden", self.question_hidden),
            ("multimodal_width", self.multimodal_width),
            ("vocab", self.vocab),
        ] {
            if v == 0 {
                return Err(ModelError::Dimensions(format!("{name} must be positive")));
            }
        }
        if self.answers < 2 {
            return Err(ModelError::Dimensions(format!(
                "answers must be at least 2, got {}",
                self.answers
            )));
        }
        Ok(())
    }
}

/// Ordered map of named tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter {name}"
        );
        self.index.insert(name.clone(), self.tensors.len());
        self.names.push(name);
        self.tensors.push(tensor);
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn set(&mut self, name: &str, tensor: Tensor) -> bool {
        match self.index.get(name) {
            Some(&i) => {
                self.tensors[i] = tensor;
                true
            }
            None => false,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    /// Total scalar count across all tensors.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Inserts every tensor into `graph`. Trainable binding uses `param`
    /// nodes; frozen binding uses plain inputs (no gradients).
    pub fn bind(&self, graph: &mut Graph, trainable: bool) -> Bound {
        let ids = self
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    graph.param(t.clone())
                } else {
                    graph.input(t.clone())
                }
            })
            .collect();
        Bound {
            index: self.index.clone(),
            ids,
        }
    }

    /// Reads gradients for every parameter back off the graph, in
    /// registration order. `None` marks parameters the loss never touched.
    pub fn collect_grads(&self, graph: &Graph, bound: &Bound) -> Vec<Option<Tensor>> {
        self.names
            .iter()
            .map(|name| graph.grad(bound.id(name)).cloned())
            .collect()
    }
}

/// Node ids of a `ParamSet` bound into one graph.
#[derive(Debug, Clone)]
pub struct Bound {
    index: HashMap<String, usize>,
    ids: Vec<NodeId>,
}

impl Bound {
    pub fn id(&self, name: &str) -> NodeId {
        match self.index.get(name) {
            Some(&i) => self.ids[i],
            None => panic!("unknown parameter {name}"),
        }
    }

    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }
}

/// Uniform Glorot initialization over `[-a, a]`, `a = sqrt(6/(fan_in+fan_out))`.
pub fn glorot(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform_tensor(rng, shape, -a, a)
}

/// Glorot-initialized dense matrix `[rows, cols]` mapping `cols -> rows`.
pub fn glorot_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    glorot(rng, &[rows, cols], cols, rows)
}

/// Glorot-initialized conv kernel `[co, ci, k, k]`.
pub fn glorot_conv(rng: &mut ChaCha8Rng, co: usize, ci: usize, k: usize) -> Tensor {
    glorot(rng, &[co, ci, k, k], ci * k * k, co * k * k)
}
