//! Hypergraph convolution branch.
//!
//! One layer computes `sigma(D^-1 H W_e B^-1 H^T (X P + c))` where `P, c`
//! is a learnable projection, `W_e = diag(exp(s_e))` holds positive
//! hyperedge weights and `D`, `B` are the weighted node degrees and the
//! hyperedge sizes. The propagation is evaluated sparsely: a mean over each
//! hyperedge, a weighting by `w(e)`, then a weighted mean back onto nodes.

use std::rc::Rc;

use rand::Rng;

use crate::error::{contract, Result};
use crate::graph::{HyperedgeKind, Hypergraph};
use crate::nn::{Activation, Linear};
use crate::optim::{Binder, ParamStore};
use crate::tape::{SparsePattern, Var};
use crate::tensor::Tensor;

/// How hyperedges map onto rows of the learnable log-weight vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightSharing {
    /// One weight per [`HyperedgeKind`], shared across dialogues.
    ByKind,
    /// One weight per hyperedge of the plan.
    PerEdge,
}

/// Sparse propagation operators for a block-diagonal batch of hypergraphs.
#[derive(Clone, Debug)]
pub struct HypergraphPlan {
    num_nodes: usize,
    num_edges: usize,
    /// `|E| x |V|`, entries `(e, v)` weighted `1 / B_ee`.
    gather: Rc<SparsePattern>,
    gather_weights: Tensor,
    /// `|V| x |E|`, entries `(v, e)` with unit weight.
    scatter: Rc<SparsePattern>,
    weight_index: Vec<usize>,
}

impl HypergraphPlan {
    pub fn new(hypergraphs: &[&Hypergraph], sharing: WeightSharing) -> Result<Self> {
        let mut gather = Vec::new();
        let mut gather_weights = Vec::new();
        let mut scatter = Vec::new();
        let mut weight_index = Vec::new();
        let (mut node_offset, mut edge_offset) = (0, 0);
        for h in hypergraphs {
            let mut covered = vec![false; h.num_nodes()];
            for (j, (members, kind)) in h.members().iter().zip(h.kinds()).enumerate() {
                let e = edge_offset + j;
                let inv = 1.0 / members.len() as f64;
                for &v in members {
                    covered[v] = true;
                    gather.push((e, node_offset + v));
                    gather_weights.push(inv);
                    scatter.push((node_offset + v, e));
                }
                weight_index.push(match sharing {
                    WeightSharing::ByKind => kind.index(),
                    WeightSharing::PerEdge => e,
                });
            }
            if covered.iter().any(|c| !c) {
                return contract("every node must belong to at least one hyperedge");
            }
            node_offset += h.num_nodes();
            edge_offset += h.num_edges();
        }
        scatter.sort_unstable();
        Ok(Self {
            num_nodes: node_offset,
            num_edges: edge_offset,
            gather: Rc::new(SparsePattern::new(edge_offset, node_offset, &gather)?),
            gather_weights: Tensor::column(gather_weights),
            scatter: Rc::new(SparsePattern::new(node_offset, edge_offset, &scatter)?),
            weight_index,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.num_edges
    }

    /// `D^-1 H W_e B^-1 H^T X` for `w(e) = exp(log_weights[index(e)])`.
    pub fn propagate<'t>(&self, b: &Binder<'t, '_>, x: Var<'t>, log_weights: Var<'t>) -> Result<Var<'t>> {
        if x.rows() != self.num_nodes {
            return Err(crate::Error::Shape {
                op: "hgnn_propagate",
                lhs: x.shape(),
                rhs: vec![self.num_nodes],
            });
        }
        let edge_means = x.sparse_aggregate(b.constant(self.gather_weights.clone()), &self.gather)?;
        let w = log_weights.gather_rows(&self.weight_index)?.exp();
        let ones = b.constant(Tensor::filled(&[self.scatter.nnz(), 1], 1.0));
        let numerator = edge_means.scale_rows(w)?.sparse_aggregate(ones, &self.scatter)?;
        let degree = w.sparse_aggregate(ones, &self.scatter)?;
        numerator.scale_rows(degree.recip()?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HgnnConfig {
    pub layers: usize,
    pub residual: bool,
    /// Learnable per-layer projection before propagation.
    pub project: bool,
    pub activation: Activation,
}

impl Default for HgnnConfig {
    fn default() -> Self {
        Self {
            layers: 1,
            residual: true,
            project: true,
            activation: Activation::LeakyRelu(0.01),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HgnnBranch {
    pub prefix: String,
    pub dim: usize,
    pub config: HgnnConfig,
}

impl HgnnBranch {
    pub fn new(prefix: impl Into<String>, dim: usize, config: HgnnConfig) -> Self {
        Self {
            prefix: prefix.into(),
            dim,
            config,
        }
    }

    pub fn projection(&self, layer: usize) -> Linear {
        Linear::new(format!("{}.layer{layer}", self.prefix), self.dim, self.dim)
    }

    pub fn edge_weight_param(&self) -> String {
        format!("{}.edge_log_weight", self.prefix)
    }

    /// Projections are uniform-initialized; hyperedge weights start at 1.
    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        if self.config.layers == 0 {
            return contract("hgnn needs at least one layer");
        }
        if self.config.project {
            for l in 0..self.config.layers {
                self.projection(l).init(store, rng)?;
            }
        }
        store.insert(self.edge_weight_param(), Tensor::zeros(&[HyperedgeKind::COUNT, 1]))
    }

    pub fn parameter_names(&self) -> Vec<String> {
        let mut names = vec![self.edge_weight_param()];
        if self.config.project {
            for l in 0..self.config.layers {
                let p = self.projection(l);
                names.push(p.weight());
                names.push(p.bias());
            }
        }
        names
    }

    /// A single layer without the residual connection.
    pub fn layer<'t>(&self, b: &Binder<'t, '_>, x: Var<'t>, plan: &HypergraphPlan, layer: usize) -> Result<Var<'t>> {
        let y = if self.config.project {
            self.projection(layer).forward(b, x)?
        } else {
            x
        };
        let out = plan.propagate(b, y, b.p(&self.edge_weight_param())?)?;
        Ok(self.config.activation.apply(out))
    }

    pub fn forward<'t>(&self, b: &Binder<'t, '_>, x: Var<'t>, plan: &HypergraphPlan) -> Result<Var<'t>> {
        let mut h = x;
        for l in 0..self.config.layers {
            let out = self.layer(b, h, plan, l)?;
            h = if self.config.residual { h.add(out)? } else { out };
        }
        Ok(h)
    }
}
