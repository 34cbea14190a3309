//! Noise-robust classification loss with an EMA prediction regularizer.
//!
//! `L = CE + lambda * mean_i log(1 - <p_i, p_hat_i>)`, where `p_hat_i` is an
//! exponential moving average of past predictions for sample `i`. Pulling
//! predictions toward their own history slows the fitting of flipped labels.

use crate::coupling::cross_entropy;
use crate::error::{contract, Result};
use crate::tape::Var;
use crate::tensor::Tensor;

/// Inner products are clipped to at most `1 - INNER_CLIP` before the log.
pub const INNER_CLIP: f64 = 1e-7;

/// Per-sample moving averages of predicted distributions.
#[derive(Clone, Debug, PartialEq)]
pub struct EmaTracker {
    momentum: f64,
    classes: usize,
    table: Vec<Option<Vec<f64>>>,
}

impl EmaTracker {
    pub fn new(samples: usize, classes: usize, momentum: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return contract(format!("EMA momentum must lie in [0, 1), got {momentum}"));
        }
        Ok(Self {
            momentum,
            classes,
            table: vec![None; samples],
        })
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn get(&self, sample: usize) -> Option<&[f64]> {
        self.table.get(sample).and_then(|r| r.as_deref())
    }

    /// `p_hat <- beta * p_hat + (1 - beta) * probs`; the first observation is
    /// stored as is.
    pub fn update(&mut self, sample: usize, probs: &[f64]) -> Result<()> {
        if probs.len() != self.classes || sample >= self.table.len() {
            return contract(format!(
                "EMA update for sample {sample} with {} classes (tracker: {} samples, {} classes)",
                probs.len(),
                self.table.len(),
                self.classes
            ));
        }
        let s: f64 = probs.iter().sum();
        if probs.iter().any(|p| !(*p >= 0.0)) || (s - 1.0).abs() > 1e-6 {
            return contract(format!("EMA update with a non-distribution (sum {s})"));
        }
        let beta = self.momentum;
        match &mut self.table[sample] {
            Some(row) => row
                .iter_mut()
                .zip(probs)
                .for_each(|(r, p)| *r = beta * *r + (1.0 - beta) * p),
            slot @ None => *slot = Some(probs.to_vec()),
        }
        Ok(())
    }

    /// EMA targets for a batch; rows never observed are all-zero, which
    /// makes their regularizer term vanish.
    pub fn targets(&self, samples: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(samples.len() * self.classes);
        for &s in samples {
            match self.get(s) {
                Some(r) => data.extend_from_slice(r),
                None => data.extend(std::iter::repeat_n(0.0, self.classes)),
            }
        }
        Tensor::matrix(samples.len(), self.classes, data).expect("consistent dims")
    }
}

/// Cross-entropy on (possibly noisy) labels plus `lambda` times the EMA
/// regularizer. `targets` holds one EMA row per sample (zero rows disable
/// the term for that sample). With `lambda == 0` this is exactly the mean
/// cross-entropy.
pub fn cls_loss<'t>(log_probs: Var<'t>, labels: &[usize], targets: &Tensor, lambda: f64) -> Result<Var<'t>> {
    let ce = cross_entropy(log_probs, labels)?;
    if lambda == 0.0 {
        return Ok(ce);
    }
    if targets.shape() != log_probs.shape().as_slice() {
        return Err(crate::Error::Shape {
            op: "cls_loss",
            lhs: log_probs.shape(),
            rhs: targets.shape().to_vec(),
        });
    }
    let t = log_probs.tape().constant(targets.clone());
    let inner = log_probs
        .exp()
        .hadamard(t)?
        .row_sum()?
        .clamp(f64::NEG_INFINITY, 1.0 - INNER_CLIP);
    let reg = inner.one_minus().log()?.mean()?;
    ce.add(reg.scalar_mul(lambda))
}

/// `|p - y~ / (y~ + lambda * y * (1 - p))|`: distance of a predicted
/// true-class probability from the stationary relation of the regularized
/// loss.
pub fn fixed_point_residual(p: f64, y_tilde: f64, y: f64, lambda: f64) -> f64 {
    (p - y_tilde / (y_tilde + lambda * y * (1.0 - p))).abs()
}
