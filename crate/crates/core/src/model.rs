//! Full network: shared modality encoder, the two graph branches, their
//! perturbation maps and discriminators, per-branch heads and the fused
//! emotion classifier.
//!
//! Node features are laid out `3 * utterance + modality` across a whole
//! batch, so per-dialogue graph operators stack block-diagonally.

use std::rc::Rc;

use rand::Rng;

use crate::alignment::{Discriminator, Perturbation};
use crate::encoder::ModalityEncoder;
use crate::error::{contract, Result};
use crate::graph::{build_emotion_graph, build_hypergraph, enumerate_paths, Hypergraph, PathConfig, PathSet, MODALITIES};
use crate::hgnn::{HgnnBranch, HgnnConfig, HypergraphPlan, WeightSharing};
use crate::nn::{Activation, Linear};
use crate::optim::{Binder, ParamStore};
use crate::pathnn::{PathPlan, PathnnBranch};
use crate::tape::{SparsePattern, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub dims: [usize; 3],
    pub classes: usize,
    pub model_dim: usize,
    pub gru_hidden: usize,
    pub window: usize,
    pub path_max_len: usize,
    pub path_max_per_node: usize,
    pub path_include_end: bool,
    pub hgnn_layers: usize,
    pub path_rounds: usize,
    pub disc_hidden: usize,
    pub leaky_slope: f64,
    pub delta_hgnn: f64,
    pub delta_pathnn: f64,
    pub use_hgnn: bool,
    pub use_pathnn: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dims: [16, 8, 8],
            classes: 4,
            model_dim: 32,
            gru_hidden: 16,
            window: 2,
            path_max_len: 3,
            path_max_per_node: 16,
            path_include_end: false,
            hgnn_layers: 1,
            path_rounds: 1,
            disc_hidden: 32,
            leaky_slope: 0.01,
            delta_hgnn: 0.1,
            delta_pathnn: 0.1,
            use_hgnn: true,
            use_pathnn: true,
        }
    }
}

/// Parameter-name prefixes of the model's groups.
pub mod groups {
    pub const ENCODER: &str = "enc.";
    pub const HGNN: &str = "hgnn.";
    pub const PATHNN: &str = "path.";
    pub const HGNN_PERTURB: &str = "hgnn_perturb.";
    pub const PATHNN_PERTURB: &str = "path_perturb.";
    pub const HGNN_DISC: &str = "hgnn_disc.";
    pub const PATHNN_DISC: &str = "path_disc.";
    pub const HGNN_HEAD: &str = "hgnn_head.";
    pub const PATHNN_HEAD: &str = "path_head.";
    pub const CLASSIFIER: &str = "classifier.";
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub encoder: ModalityEncoder,
    pub hgnn: HgnnBranch,
    pub pathnn: PathnnBranch,
    pub hgnn_perturb: Perturbation,
    pub path_perturb: Perturbation,
    pub hgnn_disc: Discriminator,
    pub path_disc: Discriminator,
    pub hgnn_head: Linear,
    pub path_head: Linear,
    pub classifier: Linear,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        if !config.use_hgnn && !config.use_pathnn {
            return contract("at least one graph branch must be enabled");
        }
        if config.classes < 2 || config.model_dim == 0 || config.gru_hidden == 0 {
            return contract("model needs >= 2 classes and nonzero widths");
        }
        let d = config.model_dim;
        let branches = usize::from(config.use_hgnn) + usize::from(config.use_pathnn);
        Ok(Self {
            encoder: ModalityEncoder::new("enc", config.dims, config.gru_hidden, d),
            hgnn: HgnnBranch::new(
                "hgnn",
                d,
                HgnnConfig {
                    layers: config.hgnn_layers,
                    activation: Activation::LeakyRelu(config.leaky_slope),
                    ..HgnnConfig::default()
                },
            ),
            pathnn: PathnnBranch::new("path", d, config.path_rounds, config.leaky_slope),
            hgnn_perturb: Perturbation::new("hgnn_perturb", d, config.delta_hgnn, config.leaky_slope),
            path_perturb: Perturbation::new("path_perturb", d, config.delta_pathnn, config.leaky_slope),
            hgnn_disc: Discriminator::new("hgnn_disc", d, config.disc_hidden, config.leaky_slope),
            path_disc: Discriminator::new("path_disc", d, config.disc_hidden, config.leaky_slope),
            hgnn_head: Linear::new("hgnn_head", d, config.classes),
            path_head: Linear::new("path_head", d, config.classes),
            classifier: Linear::new("classifier", branches * d, config.classes),
            config,
        })
    }

    /// Every block is initialized in a fixed order whatever the ablation
    /// flags, so runs differing only in flags start from the same weights.
    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        self.encoder.init(store, rng)?;
        self.hgnn.init(store, rng)?;
        self.pathnn.init(store, rng)?;
        self.hgnn_perturb.init(store, rng)?;
        self.path_perturb.init(store, rng)?;
        self.hgnn_disc.init(store, rng)?;
        self.path_disc.init(store, rng)?;
        self.hgnn_head.init(store, rng)?;
        self.path_head.init(store, rng)?;
        self.classifier.init(store, rng)
    }

    pub fn path_config(&self) -> PathConfig {
        PathConfig {
            max_len: self.config.path_max_len,
            max_per_node: self.config.path_max_per_node,
            ..PathConfig::default()
        }
    }

    pub fn prepare(&self, features: &[Tensor; 3], speakers: &[u32]) -> Result<PreparedDialogue> {
        let n = speakers.len();
        if n == 0 {
            return contract("dialogue without utterances");
        }
        for m in 0..MODALITIES {
            if features[m].shape() != [n, self.config.dims[m]] {
                return Err(crate::Error::Shape {
                    op: "prepare",
                    lhs: features[m].shape().to_vec(),
                    rhs: vec![n, self.config.dims[m]],
                });
            }
        }
        let graph = build_emotion_graph(speakers, self.config.window);
        Ok(PreparedDialogue {
            features: features.clone(),
            hypergraph: build_hypergraph(n),
            paths: enumerate_paths(&graph, &self.path_config()),
        })
    }

    /// Node features `3N x D` for the whole batch.
    pub fn encode<'t>(&self, b: &Binder<'t, '_>, batch: &Batch) -> Result<Var<'t>> {
        let text = self.encoder.encode_text(b, &batch.text.iter().collect::<Vec<_>>())?;
        let audio = self.encoder.encode_audio_visual(b, &batch.audio, &self.encoder.proj_audio)?;
        let visual = self.encoder.encode_audio_visual(b, &batch.visual, &self.encoder.proj_visual)?;
        Var::concat_rows(&[text, audio, visual])?.gather_rows(&batch.node_order)
    }

    /// Utterance-level branch embeddings (`N x D` each, `None` when disabled).
    pub fn embed<'t>(&self, b: &Binder<'t, '_>, batch: &Batch) -> Result<Embeddings<'t>> {
        let x = self.encode(b, batch)?;
        let pool = |h: Var<'t>| h.sparse_aggregate(b.constant(batch.pool_weights.clone()), &batch.pool);
        let hgnn = if self.config.use_hgnn {
            Some(pool(self.hgnn.forward(b, x, &batch.hgnn)?)?)
        } else {
            None
        };
        let pathnn = if self.config.use_pathnn {
            Some(pool(self.pathnn.forward(b, x, &batch.paths)?)?)
        } else {
            None
        };
        Ok(Embeddings { hgnn, pathnn })
    }

    /// Per-branch log-probabilities.
    pub fn branch_log_probs<'t>(&self, b: &Binder<'t, '_>, e: &Embeddings<'t>) -> Result<(Option<Var<'t>>, Option<Var<'t>>)> {
        let h = e.hgnn.map(|h| self.hgnn_head.forward(b, h)?.log_softmax()).transpose()?;
        let p = e.pathnn.map(|p| self.path_head.forward(b, p)?.log_softmax()).transpose()?;
        Ok((h, p))
    }

    /// Fused log-probabilities from the concatenated branch embeddings.
    pub fn fused_log_probs<'t>(&self, b: &Binder<'t, '_>, e: &Embeddings<'t>) -> Result<Var<'t>> {
        let parts: Vec<Var<'t>> = [e.hgnn, e.pathnn].into_iter().flatten().collect();
        let joint = if parts.len() == 1 { parts[0] } else { Var::concat_cols(&parts)? };
        self.classifier.forward(b, joint)?.log_softmax()
    }
}

/// Graph structures of one dialogue, computed once.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedDialogue {
    pub features: [Tensor; 3],
    pub hypergraph: Hypergraph,
    pub paths: PathSet,
}

impl PreparedDialogue {
    pub fn len(&self) -> usize {
        self.features[0].rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Stacked inputs and block-diagonal operators for a set of dialogues.
#[derive(Clone, Debug)]
pub struct Batch {
    pub text: Vec<Tensor>,
    pub audio: Tensor,
    pub visual: Tensor,
    pub node_order: Vec<usize>,
    pub hgnn: HypergraphPlan,
    pub paths: PathPlan,
    pub pool: Rc<SparsePattern>,
    pub pool_weights: Tensor,
    /// Utterance count of each dialogue in batch order.
    pub lengths: Vec<usize>,
}

impl Batch {
    pub fn new(dialogues: &[&PreparedDialogue], include_end: bool) -> Result<Self> {
        if dialogues.is_empty() {
            return contract("empty batch");
        }
        let lengths: Vec<usize> = dialogues.iter().map(|d| d.len()).collect();
        let n: usize = lengths.iter().sum();
        let stack = |m: usize| -> Result<Tensor> {
            let w = dialogues[0].features[m].cols();
            let data = dialogues.iter().flat_map(|d| d.features[m].data().iter().copied()).collect();
            Tensor::matrix(n, w, data)
        };
        let node_order = (0..n)
            .flat_map(|i| (0..MODALITIES).map(move |m| m * n + i))
            .collect();
        let pool_entries: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| (0..MODALITIES).map(move |m| (i, MODALITIES * i + m)))
            .collect();
        let hypergraphs: Vec<&Hypergraph> = dialogues.iter().map(|d| &d.hypergraph).collect();
        let path_sets: Vec<&PathSet> = dialogues.iter().map(|d| &d.paths).collect();
        Ok(Self {
            text: dialogues.iter().map(|d| d.features[0].clone()).collect(),
            audio: stack(1)?,
            visual: stack(2)?,
            node_order,
            hgnn: HypergraphPlan::new(&hypergraphs, WeightSharing::ByKind)?,
            paths: PathPlan::new(&path_sets, include_end)?,
            pool: Rc::new(SparsePattern::new(n, MODALITIES * n, &pool_entries)?),
            pool_weights: Tensor::filled(&[pool_entries.len(), 1], 1.0 / MODALITIES as f64),
            lengths,
        })
    }

    pub fn num_utterances(&self) -> usize {
        self.lengths.iter().sum()
    }
}

#[derive(Clone, Copy)]
pub struct Embeddings<'t> {
    pub hgnn: Option<Var<'t>>,
    pub pathnn: Option<Var<'t>>,
}

impl<'t> Embeddings<'t> {
    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Self> {
        Ok(Self {
            hgnn: self.hgnn.map(|v| v.slice_rows(start, len)).transpose()?,
            pathnn: self.pathnn.map(|v| v.slice_rows(start, len)).transpose()?,
        })
    }
}
