//! Path branch: attention-weighted aggregation of node features along
//! enumerated paths, injected back into the nodes each path is associated
//! with.
//!
//! For a path `p = (v_1, .., v_l)` with projected features `W h_v`:
//!
//! * context `c_p` is the mean of `W h_{v_j}` over the path;
//! * `alpha_i = softmax_i(LeakyReLU(a^T [W h_{v_i} || c_p]))`;
//! * `h_p = sum_i alpha_i W h_{v_i}`;
//! * `h_v <- h_v + mean_{p in P(v)} h_p`.
//!
//! Splitting `a = [a_1; a_2]`, the attention logit is
//! `a_1^T W h_{v_i} + a_2^T c_p`, which lets the batched forward work on
//! per-node scalars instead of materializing concatenations.

use std::rc::Rc;

use rand::Rng;

use crate::error::{contract, Result};
use crate::graph::PathSet;
use crate::optim::{Binder, ParamStore};
use crate::tape::{SparsePattern, Var};
use crate::tensor::Tensor;

/// Sparse gather/scatter operators for a block-diagonal batch of path sets.
#[derive(Clone, Debug)]
pub struct PathPlan {
    num_nodes: usize,
    num_paths: usize,
    /// `P x V`, entry `k` = `(path, node)` for every path member, path-major.
    members: Rc<SparsePattern>,
    member_mean: Tensor,
    entry_nodes: Vec<usize>,
    entry_paths: Vec<usize>,
    offsets: Vec<usize>,
    /// `V x P`, entries `(v, p)` for `p in P(v)` weighted `1 / |P(v)|`.
    assoc: Rc<SparsePattern>,
    assoc_weights: Tensor,
}

impl PathPlan {
    /// `include_end` also associates every path with its end node.
    pub fn new(path_sets: &[&PathSet], include_end: bool) -> Result<Self> {
        let mut entries = Vec::new();
        let mut member_mean = Vec::new();
        let mut entry_nodes = Vec::new();
        let mut entry_paths = Vec::new();
        let mut offsets = vec![0];
        let mut assoc = Vec::new();
        let mut assoc_weights = Vec::new();
        let (mut node_offset, mut path_offset) = (0, 0);
        for ps in path_sets {
            for (i, path) in ps.paths().iter().enumerate() {
                if path.is_empty() {
                    return contract("empty path");
                }
                let p = path_offset + i;
                let inv = 1.0 / path.len() as f64;
                for &v in path {
                    entries.push((p, node_offset + v));
                    member_mean.push(inv);
                    entry_nodes.push(node_offset + v);
                    entry_paths.push(p);
                }
                offsets.push(entries.len());
            }
            for (v, ids) in ps.associations(include_end).iter().enumerate() {
                if ids.is_empty() {
                    return contract(format!("node {v} has no associated path"));
                }
                let inv = 1.0 / ids.len() as f64;
                for &id in ids {
                    assoc.push((node_offset + v, path_offset + id));
                    assoc_weights.push(inv);
                }
            }
            node_offset += ps.num_nodes();
            path_offset += ps.len();
        }
        Ok(Self {
            num_nodes: node_offset,
            num_paths: path_offset,
            members: Rc::new(SparsePattern::new(path_offset, node_offset, &entries)?),
            member_mean: Tensor::column(member_mean),
            entry_nodes,
            entry_paths,
            offsets,
            assoc: Rc::new(SparsePattern::new(node_offset, path_offset, &assoc)?),
            assoc_weights: Tensor::column(assoc_weights),
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_paths(&self) -> usize {
        self.num_paths
    }

    /// Entry offsets delimiting each path's members.
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }
}

/// Learnable `W: D x D` and `a: 2D x 1` per round.
#[derive(Clone, Debug, PartialEq)]
pub struct PathnnBranch {
    pub prefix: String,
    pub dim: usize,
    pub rounds: usize,
    pub leaky_slope: f64,
}

/// Intermediate values of one round, exposed for inspection.
pub struct PathRound<'t> {
    pub output: Var<'t>,
    /// Attention weights, one per path member, path-major.
    pub attention: Var<'t>,
    /// `h_p` per path (`P x D`).
    pub path_embeddings: Var<'t>,
}

impl PathnnBranch {
    pub fn new(prefix: impl Into<String>, dim: usize, rounds: usize, leaky_slope: f64) -> Self {
        Self {
            prefix: prefix.into(),
            dim,
            rounds,
            leaky_slope,
        }
    }

    pub fn w(&self, round: usize) -> String {
        format!("{}.round{round}.w", self.prefix)
    }

    pub fn a(&self, round: usize) -> String {
        format!("{}.round{round}.a", self.prefix)
    }

    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        if self.rounds == 0 {
            return contract("pathnn needs at least one round");
        }
        for r in 0..self.rounds {
            store.insert_uniform(self.w(r), &[self.dim, self.dim], self.dim, rng)?;
            store.insert_uniform(self.a(r), &[2 * self.dim, 1], 2 * self.dim, rng)?;
        }
        Ok(())
    }

    pub fn parameter_names(&self) -> Vec<String> {
        (0..self.rounds).flat_map(|r| [self.w(r), self.a(r)]).collect()
    }

    pub fn round<'t>(&self, b: &Binder<'t, '_>, x: Var<'t>, plan: &PathPlan, round: usize) -> Result<PathRound<'t>> {
        if x.rows() != plan.num_nodes {
            return Err(crate::Error::Shape {
                op: "pathnn_forward",
                lhs: x.shape(),
                rhs: vec![plan.num_nodes],
            });
        }
        let a = b.p(&self.a(round))?;
        let wh = x.matmul(b.p(&self.w(round))?)?;
        let node_score = wh.matmul(a.slice_rows(0, self.dim)?)?;
        let ctx_part = wh.matmul(a.slice_rows(self.dim, self.dim)?)?;
        let ctx_score = ctx_part.sparse_aggregate(b.constant(plan.member_mean.clone()), &plan.members)?;
        let logits = node_score
            .gather_rows(&plan.entry_nodes)?
            .add(ctx_score.gather_rows(&plan.entry_paths)?)?
            .leaky_relu(self.leaky_slope);
        let attention = logits.segment_softmax(&plan.offsets)?;
        let path_embeddings = wh.sparse_aggregate(attention, &plan.members)?;
        let injected = path_embeddings.sparse_aggregate(b.constant(plan.assoc_weights.clone()), &plan.assoc)?;
        Ok(PathRound {
            output: x.add(injected)?,
            attention,
            path_embeddings,
        })
    }

    pub fn forward<'t>(&self, b: &Binder<'t, '_>, x: Var<'t>, plan: &PathPlan) -> Result<Var<'t>> {
        let mut h = x;
        for r in 0..self.rounds {
            h = self.round(b, h, plan, r)?.output;
        }
        Ok(h)
    }

    /// `c_p`: mean of `W h_v` over the path (`1 x D`).
    pub fn path_context<'t>(&self, b: &Binder<'t, '_>, path: &[usize], x: Var<'t>, round: usize) -> Result<Var<'t>> {
        if path.is_empty() {
            return contract("path_context of an empty path");
        }
        let wh = x.gather_rows(path)?.matmul(b.p(&self.w(round))?)?;
        let mean = b.constant(Tensor::filled(&[1, path.len()], 1.0 / path.len() as f64));
        mean.matmul(wh)
    }

    /// Attention weights over the members of one path (`l x 1`).
    pub fn path_attention<'t>(
        &self,
        b: &Binder<'t, '_>,
        path: &[usize],
        x: Var<'t>,
        context: Var<'t>,
        round: usize,
    ) -> Result<Var<'t>> {
        let wh = x.gather_rows(path)?.matmul(b.p(&self.w(round))?)?;
        let ctx = context.gather_rows(&vec![0; path.len()])?;
        let logits = Var::concat_cols(&[wh, ctx])?
            .matmul(b.p(&self.a(round))?)?
            .leaky_relu(self.leaky_slope);
        logits.softmax(0)
    }

    /// `h_p = sum_i alpha_i W h_{v_i}` (`1 x D`).
    pub fn path_embed<'t>(
        &self,
        b: &Binder<'t, '_>,
        path: &[usize],
        x: Var<'t>,
        attention: Var<'t>,
        round: usize,
    ) -> Result<Var<'t>> {
        let wh = x.gather_rows(path)?.matmul(b.p(&self.w(round))?)?;
        attention.transpose()?.matmul(wh)
    }
}
