//! Per-modality encoders mapping raw utterance features to a shared width.
//!
//! Text runs through a bidirectional GRU per dialogue (sequences never
//! cross dialogue boundaries) followed by a linear projection; audio and
//! visual features go through a single linear layer each.

use rand::Rng;

use crate::error::{contract, Result};
use crate::nn::Linear;
use crate::optim::{Binder, ParamStore};
use crate::tape::Var;
use crate::tensor::Tensor;

/// GRU cell weights stored under `{name}.{w,u,b}_{z,r,h}`.
///
/// `z = sigma(x W_z + h U_z + b_z)`, `r = sigma(x W_r + h U_r + b_r)`,
/// `c = tanh(x W_h + (r * h) U_h + b_h)`, `h' = (1 - z) * h + z * c`.
#[derive(Clone, Debug, PartialEq)]
pub struct GruCell {
    pub name: String,
    pub input: usize,
    pub hidden: usize,
}

const GATES: [&str; 3] = ["z", "r", "h"];

impl GruCell {
    pub fn new(name: impl Into<String>, input: usize, hidden: usize) -> Self {
        Self {
            name: name.into(),
            input,
            hidden,
        }
    }

    pub fn param(&self, kind: &str, gate: &str) -> String {
        format!("{}.{kind}_{gate}", self.name)
    }

    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        for g in GATES {
            store.insert_uniform(self.param("w", g), &[self.input, self.hidden], self.hidden, rng)?;
            store.insert_uniform(self.param("u", g), &[self.hidden, self.hidden], self.hidden, rng)?;
            store.insert_uniform(self.param("b", g), &[1, self.hidden], self.hidden, rng)?;
        }
        Ok(())
    }

    /// Runs the cell over a batch of sequences laid out time-major.
    ///
    /// `inputs` holds, for each step `t`, the rows of all sequences longer
    /// than `t` in a fixed order (sequences sorted by descending length), so
    /// the active sequences at step `t` are a prefix of those at `t - 1`.
    /// `active[t]` is that prefix length. Returns the hidden states in the
    /// same time-major row order.
    pub fn run<'t>(&self, b: &Binder<'t, '_>, inputs: Var<'t>, active: &[usize]) -> Result<Var<'t>> {
        let proj: Vec<Var<'t>> = GATES
            .iter()
            .map(|g| inputs.matmul(b.p(&self.param("w", g))?)?.add_bias(b.p(&self.param("b", g))?))
            .collect::<Result<_>>()?;
        let u: Vec<Var<'t>> = GATES
            .iter()
            .map(|g| b.p(&self.param("u", g)))
            .collect::<Result<_>>()?;
        let mut states = Vec::with_capacity(active.len());
        let mut offset = 0;
        let mut prev: Option<Var<'t>> = None;
        for &n in active {
            let h_prev = match prev {
                Some(p) => p.slice_rows(0, n)?,
                None => b.constant(Tensor::zeros(&[n, self.hidden])),
            };
            let xz = proj[0].slice_rows(offset, n)?;
            let xr = proj[1].slice_rows(offset, n)?;
            let xh = proj[2].slice_rows(offset, n)?;
            let z = xz.add(h_prev.matmul(u[0])?)?.sigmoid();
            let r = xr.add(h_prev.matmul(u[1])?)?.sigmoid();
            let c = xh.add(r.hadamard(h_prev)?.matmul(u[2])?)?.tanh();
            let h = z.one_minus().hadamard(h_prev)?.add(z.hadamard(c)?)?;
            states.push(h);
            prev = Some(h);
            offset += n;
        }
        Var::concat_rows(&states)
    }
}

/// Time-major layout of a batch of variable-length sequences.
struct Layout {
    /// Sequence indices sorted by descending length (stable).
    order: Vec<usize>,
    active: Vec<usize>,
    offsets: Vec<usize>,
}

impl Layout {
    fn new(lengths: &[usize]) -> Self {
        let mut order: Vec<usize> = (0..lengths.len()).collect();
        order.sort_by_key(|&i| std::cmp::Reverse(lengths[i]));
        let max = lengths.iter().copied().max().unwrap_or(0);
        let active: Vec<usize> = (0..max).map(|t| lengths.iter().filter(|&&l| l > t).count()).collect();
        let mut offsets = Vec::with_capacity(max);
        let mut acc = 0;
        for &n in &active {
            offsets.push(acc);
            acc += n;
        }
        Self { order, active, offsets }
    }
}

/// Shared-width encoders for text, audio and visual features.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalityEncoder {
    pub forward_cell: GruCell,
    pub backward_cell: GruCell,
    pub proj_text: Linear,
    pub proj_audio: Linear,
    pub proj_visual: Linear,
}

impl ModalityEncoder {
    pub fn new(prefix: &str, dims: [usize; 3], hidden: usize, model_dim: usize) -> Self {
        Self {
            forward_cell: GruCell::new(format!("{prefix}.gru_fwd"), dims[0], hidden),
            backward_cell: GruCell::new(format!("{prefix}.gru_bwd"), dims[0], hidden),
            proj_text: Linear::new(format!("{prefix}.proj_text"), 2 * hidden, model_dim),
            proj_audio: Linear::new(format!("{prefix}.proj_audio"), dims[1], model_dim),
            proj_visual: Linear::new(format!("{prefix}.proj_visual"), dims[2], model_dim),
        }
    }

    pub fn model_dim(&self) -> usize {
        self.proj_text.output
    }

    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        if self.forward_cell.hidden != self.backward_cell.hidden {
            return contract("forward and backward GRU cells must share a hidden size");
        }
        let d = self.model_dim();
        if self.proj_audio.output != d || self.proj_visual.output != d {
            return contract("all modality projections must emit the same width");
        }
        self.forward_cell.init(store, rng)?;
        self.backward_cell.init(store, rng)?;
        self.proj_text.init(store, rng)?;
        self.proj_audio.init(store, rng)?;
        self.proj_visual.init(store, rng)
    }

    /// Encodes the text of several dialogues; returns their rows stacked in
    /// dialogue order (`sum T_i x D`).
    pub fn encode_text<'t>(&self, b: &Binder<'t, '_>, dialogues: &[&Tensor]) -> Result<Var<'t>> {
        let d_in = self.forward_cell.input;
        let lengths: Vec<usize> = dialogues.iter().map(|t| t.rows()).collect();
        for t in dialogues {
            if t.rows() == 0 || t.shape().len() != 2 {
                return contract("encode_text needs non-empty T x d sequences");
            }
            if t.cols() != d_in {
                return Err(crate::Error::Shape {
                    op: "encode_text",
                    lhs: t.shape().to_vec(),
                    rhs: vec![d_in],
                });
            }
        }
        if dialogues.is_empty() {
            return contract("encode_text needs at least one sequence");
        }
        let layout = Layout::new(&lengths);
        let total: usize = lengths.iter().sum();
        let mut fwd = Vec::with_capacity(total * d_in);
        let mut bwd = Vec::with_capacity(total * d_in);
        for (t, &n) in layout.active.iter().enumerate() {
            for &s in &layout.order[..n] {
                fwd.extend_from_slice(dialogues[s].row_slice(t));
                bwd.extend_from_slice(dialogues[s].row_slice(lengths[s] - 1 - t));
            }
        }
        let fwd_states = self
            .forward_cell
            .run(b, b.constant(Tensor::matrix(total, d_in, fwd)?), &layout.active)?;
        let bwd_states = self
            .backward_cell
            .run(b, b.constant(Tensor::matrix(total, d_in, bwd)?), &layout.active)?;

        let mut rank = vec![0; dialogues.len()];
        for (r, &s) in layout.order.iter().enumerate() {
            rank[s] = r;
        }
        let mut fwd_idx = Vec::with_capacity(total);
        let mut bwd_idx = Vec::with_capacity(total);
        for (s, &len) in lengths.iter().enumerate() {
            for t in 0..len {
                fwd_idx.push(layout.offsets[t] + rank[s]);
                bwd_idx.push(layout.offsets[len - 1 - t] + rank[s]);
            }
        }
        let both = Var::concat_cols(&[fwd_states.gather_rows(&fwd_idx)?, bwd_states.gather_rows(&bwd_idx)?])?;
        self.proj_text.forward(b, both)
    }

    /// Row-wise affine map for audio or visual features.
    pub fn encode_audio_visual<'t>(&self, b: &Binder<'t, '_>, features: &Tensor, proj: &Linear) -> Result<Var<'t>> {
        if features.shape().len() != 2 || features.cols() != proj.input {
            return Err(crate::Error::Shape {
                op: "encode_audio_visual",
                lhs: features.shape().to_vec(),
                rhs: vec![proj.input, proj.output],
            });
        }
        proj.forward(b, b.constant(features.clone()))
    }
}
