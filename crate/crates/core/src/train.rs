//! Training loop, evaluation, snapshots and seed/noise sweeps.
//!
//! Each mixed batch runs three phases in order: the adversarial
//! discriminator/encoder alternation, the cross-branch coupling update, and
//! a classification step on the noisy source labels. The EMA targets of the
//! classification loss are refreshed from that step's predictions.

use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::alignment::{adversarial_loss, alternate_step, discriminator_loss, AdversarialPlayers, AlignmentLosses};
use crate::config::TrainConfig;
use crate::coupling::{alternate_branch_update, argmax, cross_entropy, generate_pseudo_labels, BranchOutputs, CouplingPlayers};
use crate::error::{contract, io_err, Result};
use crate::format::{read_features, read_snapshot, write_snapshot};
use crate::metrics::{agreement, MetricsReport};
use crate::model::{groups, Batch, Model, ModelConfig, PreparedDialogue};
use crate::optim::{Adam, AdamConfig, Binder, ParamStore};
use crate::parallel::Execution;
use crate::robust::{cls_loss, EmaTracker};
use crate::synth::{generate_pair, inject_label_noise, DomainDataset};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

const NOISE_SEED_SALT: u64 = 0x6e6f_6973_65;
const SPLIT_SEED_SALT: u64 = 0x7370_6c69_74;
const INIT_SEED_SALT: u64 = 0x696e_6974;

/// Mean losses over the batches of one epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossRecord {
    pub discriminator: f64,
    pub adversarial: f64,
    pub coupling: f64,
    pub classification: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub report: MetricsReport,
    pub losses: LossRecord,
}

pub fn csv_header(classes: usize) -> String {
    let mut cols = vec!["epoch".to_string(), "wf1".to_string()];
    cols.extend((0..classes).map(|k| format!("f1_class{k}")));
    cols.extend(
        ["memorization_rate", "branch_agreement", "L_D", "L_adv", "L_couple", "L_cls"].map(String::from),
    );
    cols.join(",")
}

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        let r = &self.report;
        let l = &self.losses;
        let mut cols = vec![self.epoch.to_string(), r.wf1.to_string()];
        cols.extend(r.per_class_f1.iter().map(f64::to_string));
        cols.extend(
            [
                r.memorization_rate,
                r.branch_agreement,
                l.discriminator,
                l.adversarial,
                l.coupling,
                l.classification,
            ]
            .map(|v| v.to_string()),
        );
        cols.join(",")
    }
}

pub fn history_csv(classes: usize, history: &[EpochRecord]) -> String {
    let mut s = csv_header(classes);
    s.push('\n');
    for r in history {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

pub fn model_config(cfg: &TrainConfig, dims: [usize; 3], classes: usize) -> ModelConfig {
    ModelConfig {
        dims,
        classes,
        model_dim: cfg.model_dim,
        gru_hidden: cfg.gru_hidden,
        window: cfg.window,
        path_max_len: cfg.path_max_len,
        path_max_per_node: cfg.path_max_per_node,
        path_include_end: cfg.path_include_end,
        hgnn_layers: cfg.hgnn_layers,
        path_rounds: cfg.path_rounds,
        disc_hidden: cfg.disc_hidden,
        delta_hgnn: if cfg.disable_perturb_hgnn { 0.0 } else { cfg.delta_hgnn },
        delta_pathnn: if cfg.disable_perturb_pathnn { 0.0 } else { cfg.delta_pathnn },
        use_hgnn: !cfg.disable_hgnn_branch,
        use_pathnn: !cfg.disable_pathnn_branch,
        ..ModelConfig::default()
    }
}

/// Source (noisy labels applied), target training split and held-out
/// target evaluation split.
pub struct Datasets {
    pub source: DomainDataset,
    pub target_train: DomainDataset,
    pub target_eval: DomainDataset,
}

/// Loads or generates the data described by `cfg` and applies label noise
/// and the target split.
pub fn load_datasets(cfg: &TrainConfig) -> Result<Datasets> {
    cfg.validate()?;
    let (source, target) = match (&cfg.source_path, &cfg.target_path) {
        (Some(s), Some(t)) => (read_features(s)?, read_features(t)?),
        _ => generate_pair(&cfg.synth)?,
    };
    if source.dims != target.dims || source.classes != target.classes {
        return contract("source and target disagree on feature widths or class count");
    }
    let already_noisy = source.noise_mask.iter().flatten().any(|&m| m);
    let source = if cfg.noise_rate > 0.0 && !already_noisy {
        inject_label_noise(&source, cfg.noise_rate, cfg.seed ^ NOISE_SEED_SALT)?
    } else {
        source
    };
    let (target_train, target_eval) = target.split(cfg.target_train_fraction, cfg.seed ^ SPLIT_SEED_SALT)?;
    if target_train.dialogues.is_empty() || target_eval.dialogues.is_empty() {
        return contract("target split left an empty part");
    }
    Ok(Datasets {
        source,
        target_train,
        target_eval,
    })
}

/// Argmax predictions over a set of dialogues.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Predictions {
    pub fused: Vec<usize>,
    pub hgnn: Option<Vec<usize>>,
    pub pathnn: Option<Vec<usize>>,
}

fn argmax_rows(t: &Tensor) -> Vec<usize> {
    (0..t.rows()).map(|i| argmax(&t.row_slice(i).iter().map(|v| v.exp()).collect::<Vec<_>>())).collect()
}

pub fn predict(
    model: &Model,
    store: &ParamStore,
    dialogues: &[PreparedDialogue],
    batch_size: usize,
    exec: Execution,
) -> Result<Predictions> {
    let chunks: Vec<&[PreparedDialogue]> = dialogues.chunks(batch_size.max(1)).collect();
    let parts = exec.map(chunks.len(), |c| -> Result<(Vec<usize>, Option<Vec<usize>>, Option<Vec<usize>>)> {
        let refs: Vec<&PreparedDialogue> = chunks[c].iter().collect();
        let batch = Batch::new(&refs, model.config.path_include_end)?;
        let tape = Tape::new();
        let b = Binder::frozen(&tape, store);
        let e = model.embed(&b, &batch)?;
        let fused = argmax_rows(&model.fused_log_probs(&b, &e)?.value());
        let (h, p) = model.branch_log_probs(&b, &e)?;
        Ok((fused, h.map(|v| argmax_rows(&v.value())), p.map(|v| argmax_rows(&v.value()))))
    });
    let mut out = Predictions {
        fused: Vec::new(),
        hgnn: model.config.use_hgnn.then(Vec::new),
        pathnn: model.config.use_pathnn.then(Vec::new),
    };
    for part in parts {
        let (f, h, p) = part?;
        out.fused.extend(f);
        if let (Some(acc), Some(h)) = (out.hgnn.as_mut(), h) {
            acc.extend(h);
        }
        if let (Some(acc), Some(p)) = (out.pathnn.as_mut(), p) {
            acc.extend(p);
        }
    }
    Ok(out)
}

/// Agreement between branch argmaxes; a single enabled branch trivially
/// agrees with itself.
fn branch_agreement(p: &Predictions) -> f64 {
    match (&p.hgnn, &p.pathnn) {
        (Some(h), Some(q)) => agreement(h, q),
        _ => 1.0,
    }
}

/// Fraction of noise-flipped utterances predicted as their flipped label.
pub fn memorization_rate(predictions: &[usize], labels: &[usize], mask: &[bool]) -> f64 {
    let flipped: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    if flipped.is_empty() {
        return 0.0;
    }
    flipped.iter().filter(|&&i| predictions[i] == labels[i]).count() as f64 / flipped.len() as f64
}

pub fn prepare_all(model: &Model, ds: &DomainDataset) -> Result<Vec<PreparedDialogue>> {
    ds.dialogues.iter().map(|d| model.prepare(&d.features, &d.speakers)).collect()
}

/// Evaluates `model` on a labeled dataset. Memorization is measured against
/// the dataset's own noise mask.
pub fn evaluate(model: &Model, store: &ParamStore, ds: &DomainDataset, batch_size: usize, exec: Execution) -> Result<MetricsReport> {
    let prepared = prepare_all(model, ds)?;
    let preds = predict(model, store, &prepared, batch_size, exec)?;
    let labels = ds.labels();
    let mut report = MetricsReport::new(&preds.fused, &labels, ds.classes)?;
    report.branch_agreement = branch_agreement(&preds);
    report.memorization_rate = memorization_rate(&preds.fused, &labels, &ds.flat_noise_mask());
    Ok(report)
}

pub struct TrainOutcome {
    pub model: Model,
    pub store: ParamStore,
    pub history: Vec<EpochRecord>,
}

fn in_groups(prefixes: &'static [&'static str]) -> impl Fn(&str) -> bool {
    move |name| prefixes.iter().any(|p| name.starts_with(p))
}

/// The discriminator keeps its own moments. Every other step shares one
/// optimizer, so the loss weights set the relative size of their updates.
struct Optimizers {
    discriminator: Adam,
    model: Adam,
}

/// Trains on already-loaded data.
pub fn train_on(cfg: &TrainConfig, data: &Datasets) -> Result<TrainOutcome> {
    train_with(cfg, data, Execution::default())
}

pub fn train_with(cfg: &TrainConfig, data: &Datasets, exec: Execution) -> Result<TrainOutcome> {
    cfg.validate()?;
    let classes = data.source.classes;
    let model = Model::new(model_config(cfg, data.source.dims, classes))?;
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ INIT_SEED_SALT);
    model.init(&mut store, &mut rng)?;

    let source = prepare_all(&model, &data.source)?;
    let target = prepare_all(&model, &data.target_train)?;
    let eval = prepare_all(&model, &data.target_eval)?;
    let view = data.source.training_view();
    let mut source_labels = Vec::with_capacity(view.len());
    let mut source_mask = Vec::new();
    let mut offsets = Vec::with_capacity(view.len());
    let mut total = 0;
    for i in 0..view.len() {
        let labels = view.source_labels(i).expect("source view exposes labels");
        offsets.push(total);
        total += labels.len();
        source_labels.push(labels.to_vec());
        source_mask.extend_from_slice(view.noise_mask(i).expect("source view exposes noise"));
    }
    let flat_source_labels: Vec<usize> = source_labels.iter().flatten().copied().collect();
    let eval_labels = data.target_eval.labels();

    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut opt = Optimizers {
        discriminator: Adam::new(adam),
        model: Adam::new(adam),
    };
    let mut ema = EmaTracker::new(total, classes, cfg.beta)?;
    let lambda = cfg.effective_lambda();
    let coupling = !cfg.disable_coupling && model.config.use_hgnn && model.config.use_pathnn;
    let include_end = model.config.path_include_end;

    let is_disc = in_groups(&[groups::HGNN_DISC, groups::PATHNN_DISC]);
    let is_adv_player = in_groups(&[groups::ENCODER, groups::HGNN, groups::PATHNN, groups::HGNN_PERTURB, groups::PATHNN_PERTURB]);
    let is_hgnn_student = in_groups(&[groups::HGNN, groups::HGNN_HEAD]);
    let is_path_student = in_groups(&[groups::PATHNN, groups::PATHNN_HEAD]);
    let is_cls_player = in_groups(&[groups::ENCODER, groups::HGNN, groups::PATHNN, groups::CLASSIFIER]);

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut source_order: Vec<usize> = (0..source.len()).collect();
    let mut target_order: Vec<usize> = (0..target.len()).collect();
    let mut target_cursor = target.len();
    for epoch in 1..=cfg.epochs {
        source_order.shuffle(&mut rng);
        let mut sums = LossRecord::default();
        let mut batches = 0usize;
        for chunk in source_order.chunks(cfg.batch_size) {
            let mut tgt_ids = Vec::with_capacity(chunk.len());
            while tgt_ids.len() < chunk.len().min(target.len()) {
                if target_cursor == target.len() {
                    target_order.shuffle(&mut rng);
                    target_cursor = 0;
                }
                tgt_ids.push(target_order[target_cursor]);
                target_cursor += 1;
            }
            let src_refs: Vec<&PreparedDialogue> = chunk.iter().map(|&i| &source[i]).collect();
            let mixed_refs: Vec<&PreparedDialogue> = src_refs
                .iter()
                .copied()
                .chain(tgt_ids.iter().map(|&i| &target[i]))
                .collect();
            let mixed = Batch::new(&mixed_refs, include_end)?;
            let n_src: usize = src_refs.iter().map(|d| d.len()).sum();
            let n_tgt = mixed.num_utterances() - n_src;
            let src_y: Vec<usize> = chunk.iter().flat_map(|&i| source_labels[i].iter().copied()).collect();

            // Adversarial alignment.
            let align = alternate_step(
                &mut store,
                AdversarialPlayers {
                    is_discriminator: &is_disc,
                    is_encoder: &is_adv_player,
                    discriminator_opt: &mut opt.discriminator,
                    encoder_opt: &mut opt.model,
                },
                cfg.k_disc,
                cfg.w_adv,
                |b| alignment_losses(&model, b, &mixed, n_src, n_tgt),
            )?;
            sums.discriminator += align.discriminator;
            sums.adversarial += align.adversarial;

            // Cross-branch coupling.
            if coupling {
                let rec = alternate_branch_update(
                    &mut store,
                    CouplingPlayers {
                        is_hgnn: &is_hgnn_student,
                        is_pathnn: &is_path_student,
                        opt: &mut opt.model,
                    },
                    &src_y,
                    cfg.zeta,
                    cfg.hard_pseudo_labels,
                    cfg.w_couple,
                    |b| {
                        let e = model.embed(b, &mixed)?;
                        let (h, p) = model.branch_log_probs(b, &e)?;
                        let (h, p) = (h.expect("hgnn enabled"), p.expect("pathnn enabled"));
                        Ok(BranchOutputs {
                            hgnn_src: h.slice_rows(0, n_src)?,
                            hgnn_tgt: h.slice_rows(n_src, n_tgt)?,
                            path_src: p.slice_rows(0, n_src)?,
                            path_tgt: p.slice_rows(n_src, n_tgt)?,
                        })
                    },
                )?;
                sums.coupling += 0.5 * (rec.path_student + rec.hgnn_student);
            }

            // Classification on noisy source labels.
            let sample_ids: Vec<usize> = chunk
                .iter()
                .flat_map(|&i| (offsets[i]..offsets[i] + source_labels[i].len()).collect::<Vec<_>>())
                .collect();
            let targets = ema.targets(&sample_ids);
            let pseudo = coupling && cfg.cls_pseudo_labels;
            let cls_batch = if pseudo { None } else { Some(Batch::new(&src_refs, include_end)?) };
            let (loss_value, probs, grads) = {
                let tape = Tape::new();
                let b = Binder::new(&tape, &store, &is_cls_player);
                let batch = cls_batch.as_ref().unwrap_or(&mixed);
                let e = model.embed(&b, batch)?;
                let fused = model.fused_log_probs(&b, &e)?;
                let src_lp = if pseudo { fused.slice_rows(0, n_src)? } else { fused };
                let mut loss = cls_loss(src_lp, &src_y, &targets, lambda)?;
                if pseudo {
                    if let Some(term) = pseudo_label_term(&model, &b, &e, fused, n_src, n_tgt, cfg.zeta)? {
                        loss = loss.add(term.scalar_mul(cfg.w_couple))?;
                    }
                }
                let probs = src_lp.value();
                let value = loss.item()?;
                (value, probs, tape.backward(loss)?.into_named())
            };
            opt.model.step(&mut store, &grads)?;
            sums.classification += loss_value;
            if cfg.ema_freeze_epoch.is_none_or(|f| epoch <= f) {
                for (row, &id) in sample_ids.iter().enumerate() {
                    let p: Vec<f64> = probs.row_slice(row).iter().map(|v| v.exp()).collect();
                    let s: f64 = p.iter().sum();
                    ema.update(id, &p.iter().map(|v| v / s).collect::<Vec<_>>())?;
                }
            }
            batches += 1;
        }
        let scale = 1.0 / batches.max(1) as f64;
        let losses = LossRecord {
            discriminator: sums.discriminator * scale,
            adversarial: sums.adversarial * scale,
            coupling: sums.coupling * scale,
            classification: sums.classification * scale,
        };
        let eval_preds = predict(&model, &store, &eval, cfg.batch_size, exec)?;
        let mut report = MetricsReport::new(&eval_preds.fused, &eval_labels, classes)?;
        report.branch_agreement = branch_agreement(&eval_preds);
        if source_mask.iter().any(|&m| m) {
            let src_preds = predict(&model, &store, &source, cfg.batch_size, exec)?;
            report.memorization_rate = memorization_rate(&src_preds.fused, &flat_source_labels, &source_mask);
        }
        history.push(EpochRecord { epoch, report, losses });
    }
    Ok(TrainOutcome { model, store, history })
}

fn alignment_losses<'t>(model: &Model, b: &Binder<'t, '_>, batch: &Batch, n_src: usize, n_tgt: usize) -> Result<AlignmentLosses<'t>> {
    let e = model.embed(b, batch)?;
    let mut ld: Option<Var<'t>> = None;
    let mut la: Option<Var<'t>> = None;
    let branches = [
        (e.hgnn, &model.hgnn_perturb, &model.hgnn_disc),
        (e.pathnn, &model.path_perturb, &model.path_disc),
    ];
    for (h, perturb, disc) in branches {
        let Some(h) = h else { continue };
        let d = disc.forward(b, perturb.apply(b, h)?)?;
        let (ds, dt) = (d.slice_rows(0, n_src)?, d.slice_rows(n_src, n_tgt)?);
        let l_d = discriminator_loss(ds, dt)?;
        let l_a = adversarial_loss(dt)?;
        ld = Some(match ld {
            Some(acc) => acc.add(l_d)?,
            None => l_d,
        });
        la = Some(match la {
            Some(acc) => acc.add(l_a)?,
            None => l_a,
        });
    }
    Ok(AlignmentLosses {
        discriminator: ld.expect("one branch enabled"),
        adversarial: la.expect("one branch enabled"),
    })
}

/// Cross-entropy of the fused head on target rows whose averaged branch
/// prediction clears `zeta`, or `None` when no row does.
fn pseudo_label_term<'t>(
    model: &Model,
    b: &Binder<'t, '_>,
    e: &crate::model::Embeddings<'t>,
    fused: Var<'t>,
    n_src: usize,
    n_tgt: usize,
    zeta: f64,
) -> Result<Option<Var<'t>>> {
    let (h, p) = model.branch_log_probs(b, e)?;
    let (h, p) = (h.expect("hgnn enabled").value(), p.expect("pathnn enabled").value());
    let k = h.cols();
    let mut avg = Vec::with_capacity(n_tgt * k);
    for r in n_src..n_src + n_tgt {
        avg.extend(h.row_slice(r).iter().zip(p.row_slice(r)).map(|(a, c)| 0.5 * (a.exp() + c.exp())));
    }
    for row in avg.chunks_mut(k) {
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    let kept = generate_pseudo_labels(&Tensor::matrix(n_tgt, k, avg)?, zeta)?;
    if kept.is_empty() {
        return Ok(None);
    }
    let rows: Vec<usize> = kept.indices.iter().map(|i| n_src + i).collect();
    Ok(Some(cross_entropy(fused.gather_rows(&rows)?, &kept.labels)?))
}

/// Loads data per `cfg` and trains.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    let data = load_datasets(cfg)?;
    train_on(cfg, &data)
}

pub fn save_model(outcome: &TrainOutcome, cfg: &TrainConfig, path: &Path) -> Result<()> {
    let mut extra = cfg.key_values();
    let m = &outcome.model.config;
    extra.push(("model.classes".into(), m.classes.to_string()));
    extra.push(("model.d_t".into(), m.dims[0].to_string()));
    extra.push(("model.d_a".into(), m.dims[1].to_string()));
    extra.push(("model.d_v".into(), m.dims[2].to_string()));
    write_snapshot(&outcome.store, &extra, path)
}

/// Rebuilds a model and its parameters from a snapshot.
pub fn load_model(path: &Path) -> Result<(Model, ParamStore, TrainConfig)> {
    let (store, entries) = read_snapshot(path)?;
    let mut cfg = TrainConfig::default();
    let mut dims = [0; 3];
    let mut classes = 0;
    for (k, v) in &entries {
        let num = || v.parse::<usize>().map_err(|_| crate::Error::Config(format!("{k}: bad value `{v}`")));
        match k.as_str() {
            "model.classes" => classes = num()?,
            "model.d_t" => dims[0] = num()?,
            "model.d_a" => dims[1] = num()?,
            "model.d_v" => dims[2] = num()?,
            "format" | "version" | "parameters" | "sha256" => {}
            _ if k.starts_with("param.") => {}
            _ => cfg.set(k, v)?,
        }
    }
    let model = Model::new(model_config(&cfg, dims, classes))?;
    let mut expected = ParamStore::new();
    model.init(&mut expected, &mut ChaCha8Rng::seed_from_u64(0))?;
    for (name, t) in expected.iter() {
        match store.get(name) {
            Some(s) if s.shape() == t.shape() => {}
            _ => return contract(format!("snapshot lacks parameter `{name}` with shape {:?}", t.shape())),
        }
    }
    Ok((model, store, cfg))
}

pub fn write_history(path: &Path, classes: usize, history: &[EpochRecord]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(io_err(path))?;
    f.write_all(history_csv(classes, history).as_bytes()).map_err(io_err(path))
}

/// One cell of a sweep grid, reporting the final epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub seed: u64,
    pub noise_rate: f64,
    pub final_epoch: Option<EpochRecord>,
}

pub fn sweep_csv(classes: usize, rows: &[SweepRow]) -> String {
    let mut s = format!("seed,noise_rate,{}\n", csv_header(classes));
    for r in rows {
        if let Some(e) = &r.final_epoch {
            s.push_str(&format!("{},{},{}\n", r.seed, r.noise_rate, e.csv_row()));
        }
    }
    s
}

/// Trains every `(seed, noise_rate)` pair of the grid; cells are
/// independent and may run in parallel.
pub fn sweep(base: &TrainConfig, seeds: &[u64], noise_rates: &[f64], exec: Execution) -> Result<Vec<SweepRow>> {
    let grid: Vec<(u64, f64)> = seeds.iter().flat_map(|&s| noise_rates.iter().map(move |&n| (s, n))).collect();
    exec.map(grid.len(), |i| {
        let (seed, noise_rate) = grid[i];
        let cfg = TrainConfig {
            noise_rate,
            ..base.clone().with_seed(seed)
        };
        let data = load_datasets(&cfg)?;
        let out = train_with(&cfg, &data, Execution::Sequential)?;
        Ok(SweepRow {
            seed,
            noise_rate,
            final_epoch: out.history.last().cloned(),
        })
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> TrainConfig {
        let mut c = TrainConfig {
            epochs: 2,
            batch_size: 4,
            model_dim: 4,
            gru_hidden: 3,
            disc_hidden: 4,
            ..TrainConfig::default()
        };
        c.synth.dialogues_per_domain = 10;
        c.synth.dims = [3, 2, 2];
        c
    }

    #[test]
    fn zero_epochs() {
        let out = train(&TrainConfig { epochs: 0, ..tiny() }).unwrap();
        assert!(out.history.is_empty());
        assert!(out.store.len() > 0);
    }

    #[test]
    fn deterministic_history() {
        let a = train(&tiny()).unwrap();
        let b = train(&tiny()).unwrap();
        assert_eq!(history_csv(4, &a.history), history_csv(4, &b.history));
        assert_eq!(a.history.len(), 2);
    }

    #[test]
    fn header_layout() {
        assert_eq!(
            csv_header(2),
            "epoch,wf1,f1_class0,f1_class1,memorization_rate,branch_agreement,L_D,L_adv,L_couple,L_cls"
        );
    }

    #[test]
    fn memorization_counts_flipped_only() {
        assert_eq!(memorization_rate(&[1, 2, 3], &[1, 0, 3], &[true, true, false]), 0.5);
        assert_eq!(memorization_rate(&[1], &[1], &[false]), 0.0);
    }
}
