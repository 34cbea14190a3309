//! Small layer helpers shared by the model blocks.

use rand::Rng;

use crate::error::Result;
use crate::optim::{Binder, ParamStore};
use crate::tape::Var;

/// Elementwise nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Identity,
    LeakyRelu(f64),
}

impl Activation {
    pub fn apply<'t>(self, x: Var<'t>) -> Var<'t> {
        match self {
            Activation::Identity => x,
            Activation::LeakyRelu(slope) => x.leaky_relu(slope),
        }
    }
}

/// Affine map `x W + b` with `W: in x out` stored as `{name}.weight`
/// and `b: 1 x out` as `{name}.bias`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub name: String,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(name: impl Into<String>, input: usize, output: usize) -> Self {
        Self {
            name: name.into(),
            input,
            output,
        }
    }

    pub fn weight(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        store.insert_uniform(self.weight(), &[self.input, self.output], self.input, rng)?;
        store.insert_uniform(self.bias(), &[1, self.output], self.input, rng)
    }

    pub fn forward<'t>(&self, b: &Binder<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        x.matmul(b.p(&self.weight())?)?.add_bias(b.p(&self.bias())?)
    }
}

/// Two affine layers with a hidden nonlinearity.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub first: Linear,
    pub second: Linear,
    pub activation: Activation,
}

impl Mlp {
    pub fn new(name: &str, input: usize, hidden: usize, output: usize, activation: Activation) -> Self {
        Self {
            first: Linear::new(format!("{name}.0"), input, hidden),
            second: Linear::new(format!("{name}.1"), hidden, output),
            activation,
        }
    }

    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        self.first.init(store, rng)?;
        self.second.init(store, rng)
    }

    pub fn forward<'t>(&self, b: &Binder<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        let h = self.activation.apply(self.first.forward(b, x)?);
        self.second.forward(b, h)
    }
}
