//! Cross-branch teacher/student coupling on confidently pseudo-labeled
//! target samples.
//!
//! Each branch's objective is the source cross-entropy plus the mean
//! `KL(teacher || student)` over target rows whose teacher confidence
//! exceeds `zeta`. The two branches alternate roles: first the path branch
//! learns from the frozen hypergraph branch, then the reverse.

use crate::error::{contract, Result};
use crate::optim::{Adam, Binder, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Floor applied to the student distribution inside the KL.
pub const KL_FLOOR: f64 = 1e-12;
const SIMPLEX_TOL: f64 = 1e-6;

/// Target rows admitted by the confidence threshold.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PseudoLabelBatch {
    pub indices: Vec<usize>,
    pub labels: Vec<usize>,
    pub confidences: Vec<f64>,
}

impl PseudoLabelBatch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

fn check_row(row: &[f64], what: &str) -> Result<()> {
    let s: f64 = row.iter().sum();
    if row.iter().any(|p| !(*p >= 0.0)) || (s - 1.0).abs() > SIMPLEX_TOL {
        return contract(format!("{what} is not a probability distribution (sum {s})"));
    }
    Ok(())
}

/// Argmax with ties going to the lowest class id.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

/// Keeps row `i` iff `max_k probs[i, k] > zeta`.
pub fn generate_pseudo_labels(probs: &Tensor, zeta: f64) -> Result<PseudoLabelBatch> {
    let mut out = PseudoLabelBatch::default();
    for i in 0..probs.rows() {
        let row = probs.row_slice(i);
        check_row(row, "pseudo-label row")?;
        let k = argmax(row);
        if row[k] > zeta {
            out.indices.push(i);
            out.labels.push(k);
            out.confidences.push(row[k]);
        }
    }
    Ok(out)
}

/// `KL(q || p) = sum_k q_k log(q_k / p_k)` with `p` floored at [`KL_FLOOR`].
pub fn kl_categorical(q: &[f64], p: &[f64]) -> Result<f64> {
    if q.len() != p.len() {
        return Err(crate::Error::Shape {
            op: "kl_categorical",
            lhs: vec![q.len()],
            rhs: vec![p.len()],
        });
    }
    check_row(q, "q")?;
    check_row(p, "p")?;
    Ok(q.iter()
        .zip(p)
        .filter(|(qk, _)| **qk > 0.0)
        .map(|(qk, pk)| qk * (qk / pk.max(KL_FLOOR)).ln())
        .sum())
}

/// ELBO surrogate `E_q[log p - log q] + source_loglik`, which equals
/// `-KL(q || p) + source_loglik`.
pub fn elbo_surrogate(q: &[f64], p: &[f64], source_loglik: f64) -> Result<f64> {
    check_row(q, "q")?;
    check_row(p, "p")?;
    let expectation: f64 = q
        .iter()
        .zip(p)
        .filter(|(qk, _)| **qk > 0.0)
        .map(|(qk, pk)| qk * (pk.max(KL_FLOOR).ln() - qk.ln()))
        .sum();
    Ok(expectation + source_loglik)
}

/// Mean negative log-likelihood of `labels` under row-wise log-probabilities.
pub fn cross_entropy<'t>(log_probs: Var<'t>, labels: &[usize]) -> Result<Var<'t>> {
    let k = log_probs.cols();
    if let Some(bad) = labels.iter().find(|&&y| y >= k) {
        return contract(format!("label {bad} outside 0..{k}"));
    }
    Ok(log_probs.pick(labels)?.mean()?.scalar_mul(-1.0))
}

/// Source cross-entropy plus the thresholded target KL toward the teacher.
///
/// `teacher_probs_tgt` is a plain tensor, so no gradient reaches the
/// teacher. With `hard` set the teacher rows are replaced by one-hot
/// pseudo-labels.
pub fn coupling_loss<'t>(
    student_logp_src: Var<'t>,
    src_labels: &[usize],
    student_logp_tgt: Var<'t>,
    teacher_probs_tgt: &Tensor,
    zeta: f64,
    hard: bool,
) -> Result<Var<'t>> {
    let ce = cross_entropy(student_logp_src, src_labels)?;
    if teacher_probs_tgt.rows() != student_logp_tgt.rows() || teacher_probs_tgt.cols() != student_logp_tgt.cols() {
        return Err(crate::Error::Shape {
            op: "coupling_loss",
            lhs: student_logp_tgt.shape(),
            rhs: teacher_probs_tgt.shape().to_vec(),
        });
    }
    let kept = generate_pseudo_labels(teacher_probs_tgt, zeta)?;
    if kept.is_empty() {
        return Ok(ce);
    }
    let k = teacher_probs_tgt.cols();
    let mut targets = Vec::with_capacity(kept.len() * k);
    let mut entropy_part = 0.0;
    for (&i, &label) in kept.indices.iter().zip(&kept.labels) {
        if hard {
            targets.extend((0..k).map(|c| if c == label { 1.0 } else { 0.0 }));
        } else {
            let row = teacher_probs_tgt.row_slice(i);
            targets.extend_from_slice(row);
            entropy_part += row.iter().filter(|q| **q > 0.0).map(|q| q * q.ln()).sum::<f64>();
        }
    }
    let m = kept.len() as f64;
    let tape_targets = student_logp_tgt.tape().constant(Tensor::matrix(kept.len(), k, targets)?);
    let student = student_logp_tgt
        .gather_rows(&kept.indices)?
        .clamp(KL_FLOOR.ln(), f64::INFINITY);
    let cross = tape_targets.hadamard(student)?.sum();
    // KL = sum q log q - sum q log p, averaged over kept rows
    let kl = cross.scalar_mul(-1.0 / m).add_scalar(entropy_part / m);
    ce.add(kl)
}

/// Branch log-probabilities needed by one coupling update.
pub struct BranchOutputs<'t> {
    pub hgnn_src: Var<'t>,
    pub hgnn_tgt: Var<'t>,
    pub path_src: Var<'t>,
    pub path_tgt: Var<'t>,
}

/// Parameter groups of the two branches and the optimizer that steps them.
/// The groups are disjoint, so one optimizer serves both students.
pub struct CouplingPlayers<'a> {
    pub is_hgnn: &'a dyn Fn(&str) -> bool,
    pub is_pathnn: &'a dyn Fn(&str) -> bool,
    pub opt: &'a mut Adam,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CouplingRecord {
    /// Path branch as student, hypergraph branch as frozen teacher.
    pub path_student: f64,
    /// Hypergraph branch as student, path branch as frozen teacher.
    pub hgnn_student: f64,
    pub kept_a: usize,
    pub kept_b: usize,
}

fn probs_of(log_probs: Var<'_>) -> Tensor {
    let v = log_probs.value();
    let data = v.data().iter().map(|x| x.exp()).collect();
    Tensor::new(v.shape().to_vec(), data).expect("same shape")
}

/// Step A updates the path branch toward the frozen hypergraph teacher,
/// then step B updates the hypergraph branch toward the frozen path teacher.
#[allow(clippy::too_many_arguments)]
pub fn alternate_branch_update<F>(
    store: &mut ParamStore,
    players: CouplingPlayers<'_>,
    src_labels: &[usize],
    zeta: f64,
    hard: bool,
    weight: f64,
    forward: F,
) -> Result<CouplingRecord>
where
    F: for<'t, 's> Fn(&Binder<'t, 's>) -> Result<BranchOutputs<'t>>,
{
    let mut record = CouplingRecord::default();
    let grads = {
        let tape = Tape::new();
        let b = Binder::new(&tape, store, players.is_pathnn);
        let out = forward(&b)?;
        let teacher = probs_of(out.hgnn_tgt);
        record.kept_a = generate_pseudo_labels(&teacher, zeta)?.len();
        let loss = coupling_loss(out.path_src, src_labels, out.path_tgt, &teacher, zeta, hard)?;
        record.path_student = loss.item()?;
        tape.backward(loss.scalar_mul(weight))?.into_named()
    };
    players.opt.step(store, &grads)?;
    let grads = {
        let tape = Tape::new();
        let b = Binder::new(&tape, store, players.is_hgnn);
        let out = forward(&b)?;
        let teacher = probs_of(out.path_tgt);
        record.kept_b = generate_pseudo_labels(&teacher, zeta)?.len();
        let loss = coupling_loss(out.hgnn_src, src_labels, out.hgnn_tgt, &teacher, zeta, hard)?;
        record.hgnn_student = loss.item()?;
        tape.backward(loss.scalar_mul(weight))?.into_named()
    };
    players.opt.step(store, &grads)?;
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pseudo_label_examples() {
        let probs = Tensor::from_rows(&[vec![0.9, 0.05, 0.03, 0.02], vec![0.25; 4]]).unwrap();
        let kept = generate_pseudo_labels(&probs, 0.3).unwrap();
        assert_eq!(kept.indices, vec![0]);
        assert_eq!(kept.labels, vec![0]);
        assert_eq!(kept.confidences, vec![0.9]);
        assert_eq!(generate_pseudo_labels(&probs, 0.0).unwrap().len(), 2);
        let bad = Tensor::from_rows(&[vec![0.5, 0.6]]).unwrap();
        assert!(generate_pseudo_labels(&bad, 0.3).is_err());
    }

    #[test]
    fn ties_go_to_lowest_class() {
        assert_eq!(argmax(&[0.4, 0.4, 0.2]), 0);
        assert_eq!(argmax(&[0.1, 0.45, 0.45]), 1);
    }

    #[test]
    fn kl_closed_forms() {
        let p = [0.1, 0.2, 0.3, 0.4];
        assert_eq!(kl_categorical(&p, &p).unwrap(), 0.0);
        let v = kl_categorical(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-15);
        assert!(kl_categorical(&[0.5, 0.6], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn nothing_kept_means_source_ce() {
        let tape = Tape::new();
        let src = tape.constant(Tensor::from_rows(&[vec![0.2f64.ln(), 0.8f64.ln()]]).unwrap());
        let tgt = tape.constant(Tensor::from_rows(&[vec![0.5f64.ln(), 0.5f64.ln()]]).unwrap());
        let teacher = Tensor::from_rows(&[vec![0.3, 0.7]]).unwrap();
        let l = coupling_loss(src, &[1], tgt, &teacher, 1.0, false).unwrap();
        assert_eq!(l.item().unwrap(), -(0.8f64.ln()));
    }
}
