//! Feature perturbation and adversarial source/target alignment.

use rand::Rng;

use crate::error::{contract, Result};
use crate::nn::{Activation, Mlp};
use crate::optim::{Adam, Binder, ParamStore};
use crate::tape::{Tape, Var};

/// Discriminator outputs are floored into `[PROB_FLOOR, 1 - PROB_FLOOR]` before logs.
pub const PROB_FLOOR: f64 = 1e-7;

/// `H~ = H + delta * M(H)` with `M` a two-layer perceptron.
#[derive(Clone, Debug, PartialEq)]
pub struct Perturbation {
    pub delta: f64,
    pub generator: Mlp,
}

impl Perturbation {
    pub fn new(prefix: &str, dim: usize, delta: f64, slope: f64) -> Self {
        Self {
            delta,
            generator: Mlp::new(prefix, dim, dim, dim, Activation::LeakyRelu(slope)),
        }
    }

    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        if self.delta < 0.0 {
            return contract(format!("perturbation intensity must be >= 0, got {}", self.delta));
        }
        self.generator.init(store, rng)
    }

    pub fn apply<'t>(&self, b: &Binder<'t, '_>, h: Var<'t>) -> Result<Var<'t>> {
        if self.delta == 0.0 {
            return Ok(h);
        }
        h.add(self.generator.forward(b, h)?.scalar_mul(self.delta))
    }
}

/// `D -> hidden -> 1` perceptron with a sigmoid output.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub net: Mlp,
}

impl Discriminator {
    pub fn new(prefix: &str, dim: usize, hidden: usize, slope: f64) -> Self {
        Self {
            net: Mlp::new(prefix, dim, hidden, 1, Activation::LeakyRelu(slope)),
        }
    }

    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        self.net.init(store, rng)
    }

    /// Probability that each row comes from the source domain (`n x 1`).
    pub fn forward<'t>(&self, b: &Binder<'t, '_>, h: Var<'t>) -> Result<Var<'t>> {
        Ok(self.net.forward(b, h)?.sigmoid())
    }
}

fn floored_log<'t>(p: Var<'t>) -> Result<Var<'t>> {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR).log()
}

/// `-E[log D(src)] - E[log(1 - D(tgt))]`.
pub fn discriminator_loss<'t>(d_src: Var<'t>, d_tgt: Var<'t>) -> Result<Var<'t>> {
    if d_src.with_value(|t| t.is_empty()) || d_tgt.with_value(|t| t.is_empty()) {
        return contract("discriminator_loss needs non-empty source and target batches");
    }
    let src = floored_log(d_src)?.mean()?;
    let tgt = floored_log(d_tgt.one_minus())?.mean()?;
    Ok(src.add(tgt)?.scalar_mul(-1.0))
}

/// `-E[log D(tgt)]`.
pub fn adversarial_loss<'t>(d_tgt: Var<'t>) -> Result<Var<'t>> {
    if d_tgt.with_value(|t| t.is_empty()) {
        return contract("adversarial_loss needs a non-empty target batch");
    }
    Ok(floored_log(d_tgt)?.mean()?.scalar_mul(-1.0))
}

/// Both alignment losses computed from one forward pass.
pub struct AlignmentLosses<'t> {
    pub discriminator: Var<'t>,
    pub adversarial: Var<'t>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AlternateRecord {
    /// Mean discriminator loss over the discriminator updates.
    pub discriminator: f64,
    /// Adversarial loss seen by the encoder update.
    pub adversarial: f64,
}

/// Parameter groups and optimizers for alternating adversarial updates.
pub struct AdversarialPlayers<'a> {
    pub is_discriminator: &'a dyn Fn(&str) -> bool,
    pub is_encoder: &'a dyn Fn(&str) -> bool,
    pub discriminator_opt: &'a mut Adam,
    pub encoder_opt: &'a mut Adam,
}

/// `k_disc` discriminator updates on `L_D` with encoder leaves frozen, then
/// one encoder update on `adv_weight * L_adv` with the discriminator frozen.
///
/// The encoder update is skipped when `adv_weight` is zero.
pub fn alternate_step<F>(
    store: &mut ParamStore,
    players: AdversarialPlayers<'_>,
    k_disc: usize,
    adv_weight: f64,
    losses: F,
) -> Result<AlternateRecord>
where
    F: for<'t, 's> Fn(&Binder<'t, 's>) -> Result<AlignmentLosses<'t>>,
{
    if k_disc == 0 {
        return contract("k_disc must be >= 1");
    }
    let mut record = AlternateRecord::default();
    for _ in 0..k_disc {
        let grads = {
            let tape = Tape::new();
            let b = Binder::new(&tape, store, players.is_discriminator);
            let l = losses(&b)?;
            record.discriminator += l.discriminator.item()? / k_disc as f64;
            tape.backward(l.discriminator)?.into_named()
        };
        players.discriminator_opt.step(store, &grads)?;
    }
    let grads = {
        let tape = Tape::new();
        let b = Binder::new(&tape, store, players.is_encoder);
        let l = losses(&b)?;
        record.adversarial = l.adversarial.item()?;
        if adv_weight == 0.0 {
            None
        } else {
            Some(tape.backward(l.adversarial.scalar_mul(adv_weight))?.into_named())
        }
    };
    if let Some(g) = grads {
        players.encoder_opt.step(store, &g)?;
    }
    Ok(record)
}
