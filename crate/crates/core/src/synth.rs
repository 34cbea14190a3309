//! Synthetic two-domain multimodal conversations and symmetric label noise.
//!
//! Each class `k` and modality `m` gets a source prototype `mu_{k,m}`.
//! Source utterances are `mu + N(0, I)`. Target utterances are
//! `R(rho) mu + s u + N(0, I)` plus a per-dialogue style offset drawn from
//! `N(0, sigma_style^2 I)`, where `R` rotates consecutive coordinate pairs
//! and `u` is a fixed random unit vector. Emotions follow a sticky Markov
//! chain with uniform off-diagonal transitions.
//!
//! Features are rounded to `f32` precision at generation time so a dataset
//! survives a trip through the on-disk format bit for bit.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{contract, Result};
use crate::graph::MODALITIES;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn tag(self) -> u8 {
        match self {
            Domain::Source => 0,
            Domain::Target => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Domain::Source),
            1 => Some(Domain::Target),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Shift {
    /// Magnitude `s` of the common translation.
    pub mean_shift: f64,
    /// Rotation angle in degrees.
    pub rotation_deg: f64,
    /// Standard deviation of the per-dialogue style offset.
    pub style_noise: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub classes: usize,
    /// Feature widths for text, audio and visual.
    pub dims: [usize; 3],
    pub dialogues_per_domain: usize,
    pub min_utterances: usize,
    pub max_utterances: usize,
    pub speakers_per_dialogue: usize,
    /// Standard deviation of the class prototypes.
    pub prototype_scale: f64,
    pub shift: Shift,
    pub stickiness: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            classes: 4,
            dims: [16, 8, 8],
            dialogues_per_domain: 200,
            min_utterances: 4,
            max_utterances: 8,
            speakers_per_dialogue: 2,
            prototype_scale: 0.5,
            shift: Shift {
                mean_shift: 2.0,
                rotation_deg: 15.0,
                style_noise: 0.3,
            },
            stickiness: 0.7,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.classes > u16::MAX as usize {
            return contract(format!("need 2..=65535 classes, got {}", self.classes));
        }
        if self.dims.contains(&0) {
            return contract("feature widths must be >= 1");
        }
        if self.min_utterances == 0 || self.min_utterances > self.max_utterances {
            return contract(format!(
                "bad utterance range [{}, {}]",
                self.min_utterances, self.max_utterances
            ));
        }
        if self.speakers_per_dialogue == 0 || self.speakers_per_dialogue > u16::MAX as usize {
            return contract("speakers_per_dialogue must be in 1..=65535");
        }
        let s = &self.shift;
        if !(s.mean_shift >= 0.0) || !(s.style_noise >= 0.0) || !s.rotation_deg.is_finite() {
            return contract("shift magnitude and style noise must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.stickiness) {
            return contract(format!("stickiness must lie in [0, 1], got {}", self.stickiness));
        }
        if !(self.prototype_scale >= 0.0) {
            return contract("prototype_scale must be >= 0");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dialogue {
    pub id: u32,
    /// One `n x d_m` block per modality.
    pub features: [Tensor; 3],
    pub speakers: Vec<u32>,
    pub labels: Vec<usize>,
}

impl Dialogue {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DomainDataset {
    pub domain: Domain,
    pub classes: usize,
    pub dims: [usize; 3],
    pub dialogues: Vec<Dialogue>,
    /// Per dialogue, per utterance: whether the label was flipped.
    pub noise_mask: Vec<Vec<bool>>,
}

/// Features and speakers of one dialogue, without labels.
#[derive(Clone, Copy, Debug)]
pub struct UnlabeledDialogue<'a> {
    pub features: &'a [Tensor; 3],
    pub speakers: &'a [u32],
}

/// What the training loop is allowed to see: features for both domains,
/// labels only for the source domain.
#[derive(Clone, Copy, Debug)]
pub struct TrainingView<'a> {
    dataset: &'a DomainDataset,
}

impl<'a> TrainingView<'a> {
    pub fn domain(&self) -> Domain {
        self.dataset.domain
    }

    pub fn len(&self) -> usize {
        self.dataset.dialogues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dataset.dialogues.is_empty()
    }

    pub fn dialogue(&self, i: usize) -> UnlabeledDialogue<'a> {
        let d = &self.dataset.dialogues[i];
        UnlabeledDialogue {
            features: &d.features,
            speakers: &d.speakers,
        }
    }

    /// Labels of dialogue `i`, `None` for target data.
    pub fn source_labels(&self, i: usize) -> Option<&'a [usize]> {
        match self.dataset.domain {
            Domain::Source => Some(&self.dataset.dialogues[i].labels),
            Domain::Target => None,
        }
    }

    pub fn noise_mask(&self, i: usize) -> Option<&'a [bool]> {
        match self.dataset.domain {
            Domain::Source => Some(&self.dataset.noise_mask[i]),
            Domain::Target => None,
        }
    }
}

impl DomainDataset {
    pub fn new(domain: Domain, classes: usize, dims: [usize; 3], dialogues: Vec<Dialogue>) -> Result<Self> {
        for d in &dialogues {
            let n = d.labels.len();
            if d.speakers.len() != n || (0..MODALITIES).any(|m| d.features[m].shape() != [n, dims[m]]) {
                return contract(format!("dialogue {} has inconsistent lengths or widths", d.id));
            }
            if d.labels.iter().any(|&y| y >= classes) {
                return contract(format!("dialogue {} has a label outside 0..{classes}", d.id));
            }
        }
        let noise_mask = dialogues.iter().map(|d| vec![false; d.len()]).collect();
        Ok(Self {
            domain,
            classes,
            dims,
            dialogues,
            noise_mask,
        })
    }

    pub fn training_view(&self) -> TrainingView<'_> {
        TrainingView { dataset: self }
    }

    pub fn num_utterances(&self) -> usize {
        self.dialogues.iter().map(Dialogue::len).sum()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.dialogues.iter().flat_map(|d| d.labels.iter().copied()).collect()
    }

    pub fn flat_noise_mask(&self) -> Vec<bool> {
        self.noise_mask.iter().flatten().copied().collect()
    }

    /// Per-utterance concatenation `[text | audio | visual]`.
    pub fn stacked_features(&self) -> Tensor {
        let width: usize = self.dims.iter().sum();
        let mut data = Vec::with_capacity(self.num_utterances() * width);
        for d in &self.dialogues {
            for i in 0..d.len() {
                for m in 0..MODALITIES {
                    data.extend_from_slice(d.features[m].row_slice(i));
                }
            }
        }
        Tensor::matrix(self.num_utterances(), width, data).expect("consistent widths")
    }

    /// Seeded dialogue-level split; the first part holds `round(fraction * n)`
    /// dialogues. Dialogue order within each part follows the original order.
    pub fn split(&self, fraction: f64, seed: u64) -> Result<(DomainDataset, DomainDataset)> {
        if !(0.0..=1.0).contains(&fraction) {
            return contract(format!("split fraction must lie in [0, 1], got {fraction}"));
        }
        let n = self.dialogues.len();
        let take = (fraction * n as f64).round() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut first = vec![false; n];
        for i in sample(&mut rng, n, take) {
            first[i] = true;
        }
        let part = |want: bool| DomainDataset {
            domain: self.domain,
            classes: self.classes,
            dims: self.dims,
            dialogues: (0..n).filter(|&i| first[i] == want).map(|i| self.dialogues[i].clone()).collect(),
            noise_mask: (0..n).filter(|&i| first[i] == want).map(|i| self.noise_mask[i].clone()).collect(),
        };
        Ok((part(true), part(false)))
    }
}

fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

fn unit_vector<R: Rng>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| gaussian(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Rotates coordinate pairs `(0, 1), (2, 3), ..` by `angle` radians; an odd
/// trailing coordinate is left alone.
pub fn rotate_pairs(v: &[f64], angle: f64) -> Vec<f64> {
    let (s, c) = angle.sin_cos();
    let mut out = v.to_vec();
    for pair in out.chunks_exact_mut(2) {
        let (x, y) = (pair[0], pair[1]);
        pair[0] = c * x - s * y;
        pair[1] = s * x + c * y;
    }
    out
}

fn quantize(x: f64) -> f64 {
    x as f32 as f64
}

/// Class prototypes per modality, `[m][k]`.
struct Prototypes {
    source: Vec<Vec<Vec<f64>>>,
    target: Vec<Vec<Vec<f64>>>,
}

fn prototypes<R: Rng>(cfg: &SyntheticConfig, rng: &mut R) -> Prototypes {
    let angle = cfg.shift.rotation_deg.to_radians();
    let mut source = Vec::new();
    let mut target = Vec::new();
    for &d in &cfg.dims {
        let mus: Vec<Vec<f64>> = (0..cfg.classes)
            .map(|_| (0..d).map(|_| cfg.prototype_scale * gaussian(rng)).collect())
            .collect();
        let u = unit_vector(rng, d);
        let shifted = mus
            .iter()
            .map(|mu| {
                rotate_pairs(mu, angle)
                    .iter()
                    .zip(&u)
                    .map(|(r, uj)| r + cfg.shift.mean_shift * uj)
                    .collect()
            })
            .collect();
        source.push(mus);
        target.push(shifted);
    }
    Prototypes { source, target }
}

fn emotion_chain<R: Rng>(rng: &mut R, n: usize, classes: usize, stickiness: f64) -> Vec<usize> {
    let mut labels = Vec::with_capacity(n);
    let mut current = rng.random_range(0..classes);
    for i in 0..n {
        if i > 0 && !rng.random_bool(stickiness) {
            let r = rng.random_range(0..classes - 1);
            current = if r >= current { r + 1 } else { r };
        }
        labels.push(current);
    }
    labels
}

fn generate_domain<R: Rng>(
    cfg: &SyntheticConfig,
    protos: &[Vec<Vec<f64>>],
    style: f64,
    domain: Domain,
    rng: &mut R,
) -> DomainDataset {
    let mut dialogues = Vec::with_capacity(cfg.dialogues_per_domain);
    for id in 0..cfg.dialogues_per_domain {
        let n = rng.random_range(cfg.min_utterances..=cfg.max_utterances);
        let labels = emotion_chain(rng, n, cfg.classes, cfg.stickiness);
        let speakers = (0..n)
            .map(|_| rng.random_range(0..cfg.speakers_per_dialogue) as u32)
            .collect();
        let features = std::array::from_fn(|m| {
            let d = cfg.dims[m];
            let offset: Vec<f64> = (0..d).map(|_| style * gaussian(rng)).collect();
            let mut data = Vec::with_capacity(n * d);
            for &y in &labels {
                for j in 0..d {
                    data.push(quantize(protos[m][y][j] + offset[j] + gaussian(rng)));
                }
            }
            Tensor::matrix(n, d, data).expect("n x d")
        });
        dialogues.push(Dialogue {
            id: id as u32,
            features,
            speakers,
            labels,
        });
    }
    DomainDataset::new(domain, cfg.classes, cfg.dims, dialogues).expect("generated data is consistent")
}

/// Deterministic source/target pair for `cfg.seed`.
pub fn generate_pair(cfg: &SyntheticConfig) -> Result<(DomainDataset, DomainDataset)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let protos = prototypes(cfg, &mut rng);
    let source = generate_domain(cfg, &protos.source, 0.0, Domain::Source, &mut rng);
    let target = generate_domain(cfg, &protos.target, cfg.shift.style_noise, Domain::Target, &mut rng);
    Ok((source, target))
}

/// Upper limit on the noise rate assumed by the noise-robustness analysis.
pub const MAX_NOISE_RATE: f64 = 0.5;

/// Flips exactly `round(eta * N)` labels, chosen without replacement, each
/// to a uniformly random different class.
pub fn inject_label_noise(dataset: &DomainDataset, eta: f64, seed: u64) -> Result<DomainDataset> {
    if !(0.0..=MAX_NOISE_RATE).contains(&eta) {
        return contract(format!(
            "noise rate {eta} outside [0, {MAX_NOISE_RATE}]: symmetric-noise robustness assumes eta <= 0.5"
        ));
    }
    if dataset.noise_mask.iter().flatten().any(|&m| m) {
        return contract("dataset already carries injected noise");
    }
    let mut out = dataset.clone();
    let total = dataset.num_utterances();
    let count = (eta * total as f64).round() as usize;
    let mut index = Vec::with_capacity(total);
    for (d, dia) in dataset.dialogues.iter().enumerate() {
        index.extend((0..dia.len()).map(|u| (d, u)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = sample(&mut rng, total, count).into_vec();
    chosen.sort_unstable();
    for flat in chosen {
        let (d, u) = index[flat];
        let y = out.dialogues[d].labels[u];
        let r = rng.random_range(0..dataset.classes - 1);
        out.dialogues[d].labels[u] = if r >= y { r + 1 } else { r };
        out.noise_mask[d][u] = true;
    }
    Ok(out)
}
