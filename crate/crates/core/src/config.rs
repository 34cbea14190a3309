//! Flat `key=value` configuration for training runs and data generation.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{io_err, Error, Result};
use crate::format::parse_key_values;
use crate::synth::SyntheticConfig;

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse `{value}`: {e}")))
}

fn unknown(key: &str) -> Error {
    Error::Config(format!("unknown key `{key}`"))
}

/// Reads a config file into ordered `(key, value)` pairs.
pub fn read_config_file(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    Ok(parse_key_values(&text)?)
}

/// Parses `--key=value` command-line overrides.
pub fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>> {
    args.iter()
        .map(|a| {
            a.strip_prefix("--")
                .and_then(|s| s.split_once('='))
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| Error::Config(format!("expected --key=value, got `{a}`")))
        })
        .collect()
}

impl SyntheticConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "classes" => self.classes = parse(key, value)?,
            "d_t" => self.dims[0] = parse(key, value)?,
            "d_a" => self.dims[1] = parse(key, value)?,
            "d_v" => self.dims[2] = parse(key, value)?,
            "dialogues_per_domain" => self.dialogues_per_domain = parse(key, value)?,
            "min_utterances" => self.min_utterances = parse(key, value)?,
            "max_utterances" => self.max_utterances = parse(key, value)?,
            "speakers_per_dialogue" => self.speakers_per_dialogue = parse(key, value)?,
            "prototype_scale" => self.prototype_scale = parse(key, value)?,
            "mean_shift" => self.shift.mean_shift = parse(key, value)?,
            "rotation_deg" => self.shift.rotation_deg = parse(key, value)?,
            "style_noise" => self.shift.style_noise = parse(key, value)?,
            "stickiness" => self.stickiness = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            _ => return Err(unknown(key)),
        }
        Ok(())
    }

    pub fn key_values(&self) -> Vec<(String, String)> {
        [
            ("classes", self.classes.to_string()),
            ("d_t", self.dims[0].to_string()),
            ("d_a", self.dims[1].to_string()),
            ("d_v", self.dims[2].to_string()),
            ("dialogues_per_domain", self.dialogues_per_domain.to_string()),
            ("min_utterances", self.min_utterances.to_string()),
            ("max_utterances", self.max_utterances.to_string()),
            ("speakers_per_dialogue", self.speakers_per_dialogue.to_string()),
            ("prototype_scale", self.prototype_scale.to_string()),
            ("mean_shift", self.shift.mean_shift.to_string()),
            ("rotation_deg", self.shift.rotation_deg.to_string()),
            ("style_noise", self.shift.style_noise.to_string()),
            ("stickiness", self.stickiness.to_string()),
            ("seed", self.seed.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

/// Settings of one training run. Unset keys keep the published defaults:
/// learning rate 0.0005, 32 dialogues per batch, `zeta = 0.3`, `lambda = 0.7`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub zeta: f64,
    pub lambda: f64,
    pub beta: f64,
    /// Epoch after which the EMA targets stop moving; `None` never freezes.
    pub ema_freeze_epoch: Option<usize>,
    pub delta_hgnn: f64,
    pub delta_pathnn: f64,
    pub k_disc: usize,
    pub w_adv: f64,
    pub w_couple: f64,
    pub disable_hgnn_branch: bool,
    pub disable_pathnn_branch: bool,
    pub disable_perturb_hgnn: bool,
    pub disable_perturb_pathnn: bool,
    pub disable_coupling: bool,
    pub disable_regularizer: bool,
    pub hard_pseudo_labels: bool,
    /// Also fit the fused classifier on confidently pseudo-labeled target
    /// utterances.
    pub cls_pseudo_labels: bool,
    pub noise_rate: f64,
    pub target_train_fraction: f64,
    pub model_dim: usize,
    pub gru_hidden: usize,
    pub window: usize,
    pub path_max_len: usize,
    pub path_max_per_node: usize,
    pub path_include_end: bool,
    pub hgnn_layers: usize,
    pub path_rounds: usize,
    pub disc_hidden: usize,
    pub source_path: Option<PathBuf>,
    pub target_path: Option<PathBuf>,
    pub synth: SyntheticConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.0005,
            batch_size: 32,
            epochs: 100,
            seed: 0,
            zeta: 0.3,
            lambda: 0.7,
            beta: 0.7,
            ema_freeze_epoch: None,
            delta_hgnn: 0.1,
            delta_pathnn: 0.1,
            k_disc: 1,
            w_adv: 3.0,
            w_couple: 0.3,
            disable_hgnn_branch: false,
            disable_pathnn_branch: false,
            disable_perturb_hgnn: false,
            disable_perturb_pathnn: false,
            disable_coupling: false,
            disable_regularizer: false,
            hard_pseudo_labels: false,
            cls_pseudo_labels: true,
            noise_rate: 0.1,
            target_train_fraction: 0.8,
            model_dim: 32,
            gru_hidden: 16,
            window: 2,
            path_max_len: 3,
            path_max_per_node: 16,
            path_include_end: false,
            hgnn_layers: 1,
            path_rounds: 1,
            disc_hidden: 32,
            source_path: None,
            target_path: None,
            synth: SyntheticConfig::default(),
        }
    }
}

fn opt_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl TrainConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if let Some(k) = key.strip_prefix("synth.") {
            return self.synth.set(k, value);
        }
        match key {
            "lr" => self.lr = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "zeta" => self.zeta = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "beta" => self.beta = parse(key, value)?,
            "ema_freeze_epoch" => {
                self.ema_freeze_epoch = match value {
                    "" | "never" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "delta_hgnn" => self.delta_hgnn = parse(key, value)?,
            "delta_pathnn" => self.delta_pathnn = parse(key, value)?,
            "k_disc" => self.k_disc = parse(key, value)?,
            "w_adv" => self.w_adv = parse(key, value)?,
            "w_couple" => self.w_couple = parse(key, value)?,
            "disable_hgnn_branch" => self.disable_hgnn_branch = parse(key, value)?,
            "disable_pathnn_branch" => self.disable_pathnn_branch = parse(key, value)?,
            "disable_perturb_hgnn" => self.disable_perturb_hgnn = parse(key, value)?,
            "disable_perturb_pathnn" => self.disable_perturb_pathnn = parse(key, value)?,
            "disable_coupling" => self.disable_coupling = parse(key, value)?,
            "disable_regularizer" => self.disable_regularizer = parse(key, value)?,
            "hard_pseudo_labels" => self.hard_pseudo_labels = parse(key, value)?,
            "cls_pseudo_labels" => self.cls_pseudo_labels = parse(key, value)?,
            "noise_rate" => self.noise_rate = parse(key, value)?,
            "target_train_fraction" => self.target_train_fraction = parse(key, value)?,
            "model_dim" => self.model_dim = parse(key, value)?,
            "gru_hidden" => self.gru_hidden = parse(key, value)?,
            "window" => self.window = parse(key, value)?,
            "path_max_len" => self.path_max_len = parse(key, value)?,
            "path_max_per_node" => self.path_max_per_node = parse(key, value)?,
            "path_include_end" => self.path_include_end = parse(key, value)?,
            "hgnn_layers" => self.hgnn_layers = parse(key, value)?,
            "path_rounds" => self.path_rounds = parse(key, value)?,
            "disc_hidden" => self.disc_hidden = parse(key, value)?,
            "source_path" => self.source_path = (!value.is_empty()).then(|| PathBuf::from(value)),
            "target_path" => self.target_path = (!value.is_empty()).then(|| PathBuf::from(value)),
            _ => return Err(unknown(key)),
        }
        Ok(())
    }

    pub fn apply(&mut self, entries: &[(String, String)]) -> Result<()> {
        entries.iter().try_for_each(|(k, v)| self.set(k, v))
    }

    pub fn from_entries(entries: &[(String, String)]) -> Result<Self> {
        let mut c = Self::default();
        c.apply(entries)?;
        Ok(c)
    }

    /// Every field as `key=value`, in a stable order that [`TrainConfig::set`] accepts.
    pub fn key_values(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = [
            ("lr", self.lr.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("seed", self.seed.to_string()),
            ("zeta", self.zeta.to_string()),
            ("lambda", self.lambda.to_string()),
            ("beta", self.beta.to_string()),
            (
                "ema_freeze_epoch",
                self.ema_freeze_epoch.map_or("never".to_string(), |e| e.to_string()),
            ),
            ("delta_hgnn", self.delta_hgnn.to_string()),
            ("delta_pathnn", self.delta_pathnn.to_string()),
            ("k_disc", self.k_disc.to_string()),
            ("w_adv", self.w_adv.to_string()),
            ("w_couple", self.w_couple.to_string()),
            ("disable_hgnn_branch", self.disable_hgnn_branch.to_string()),
            ("disable_pathnn_branch", self.disable_pathnn_branch.to_string()),
            ("disable_perturb_hgnn", self.disable_perturb_hgnn.to_string()),
            ("disable_perturb_pathnn", self.disable_perturb_pathnn.to_string()),
            ("disable_coupling", self.disable_coupling.to_string()),
            ("disable_regularizer", self.disable_regularizer.to_string()),
            ("hard_pseudo_labels", self.hard_pseudo_labels.to_string()),
            ("cls_pseudo_labels", self.cls_pseudo_labels.to_string()),
            ("noise_rate", self.noise_rate.to_string()),
            ("target_train_fraction", self.target_train_fraction.to_string()),
            ("model_dim", self.model_dim.to_string()),
            ("gru_hidden", self.gru_hidden.to_string()),
            ("window", self.window.to_string()),
            ("path_max_len", self.path_max_len.to_string()),
            ("path_max_per_node", self.path_max_per_node.to_string()),
            ("path_include_end", self.path_include_end.to_string()),
            ("hgnn_layers", self.hgnn_layers.to_string()),
            ("path_rounds", self.path_rounds.to_string()),
            ("disc_hidden", self.disc_hidden.to_string()),
            ("source_path", opt_path(&self.source_path)),
            ("target_path", opt_path(&self.target_path)),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        out.extend(self.synth.key_values().into_iter().map(|(k, v)| (format!("synth.{k}"), v)));
        out
    }

    /// Sets both the run seed and the synthetic-data seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.synth.seed = seed;
        self
    }

    /// Source-only baseline: no adversarial term, no perturbation, no coupling.
    pub fn source_only(self) -> Self {
        Self {
            w_adv: 0.0,
            disable_coupling: true,
            disable_perturb_hgnn: true,
            disable_perturb_pathnn: true,
            ..self
        }
    }

    pub fn effective_lambda(&self) -> f64 {
        if self.disable_regularizer {
            0.0
        } else {
            self.lambda
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.lr >= 0.0) {
            return bad(format!("lr must be >= 0, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.beta) {
            return bad(format!("beta must lie in [0, 1), got {}", self.beta));
        }
        if !(self.lambda >= 0.0) || !(self.delta_hgnn >= 0.0) || !(self.delta_pathnn >= 0.0) {
            return bad("lambda and perturbation intensities must be >= 0".into());
        }
        if self.k_disc == 0 {
            return bad("k_disc must be >= 1".into());
        }
        if self.disable_hgnn_branch && self.disable_pathnn_branch {
            return bad("cannot disable both branches".into());
        }
        if !(self.target_train_fraction > 0.0 && self.target_train_fraction < 1.0) {
            return bad("target_train_fraction must lie in (0, 1)".into());
        }
        if self.source_path.is_some() != self.target_path.is_some() {
            return bad("source_path and target_path must be given together".into());
        }
        Ok(())
    }
}
