//! Named parameter storage, binding onto a tape, and the Adam optimizer.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};

use rand::Rng;

use crate::error::{contract, Error, Result};
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;

/// Learnable tensors keyed by unique name, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return contract(format!("duplicate parameter name `{name}`"));
        }
        self.params.insert(name, value);
        Ok(())
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization.
    pub fn insert_uniform<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) -> Result<()> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        self.insert(name, Tensor::new(shape.to_vec(), data)?)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter `{name}`")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn size(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }
}

/// Lazily binds parameters from a [`ParamStore`] onto a tape.
///
/// Parameters rejected by the `trainable` predicate are recorded as frozen
/// leaves, so backward passes never produce gradients for them.
pub struct Binder<'t, 's> {
    tape: &'t Tape,
    store: &'s ParamStore,
    trainable: Box<dyn Fn(&str) -> bool + 's>,
    bound: RefCell<HashMap<String, Var<'t>>>,
}

impl<'t, 's> Binder<'t, 's> {
    pub fn new(tape: &'t Tape, store: &'s ParamStore, trainable: impl Fn(&str) -> bool + 's) -> Self {
        Self {
            tape,
            store,
            trainable: Box::new(trainable),
            bound: RefCell::new(HashMap::new()),
        }
    }

    /// Everything trainable.
    pub fn all(tape: &'t Tape, store: &'s ParamStore) -> Self {
        Self::new(tape, store, |_| true)
    }

    /// Nothing trainable (pure evaluation).
    pub fn frozen(tape: &'t Tape, store: &'s ParamStore) -> Self {
        Self::new(tape, store, |_| false)
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn p(&self, name: &str) -> Result<Var<'t>> {
        if let Some(v) = self.bound.borrow().get(name) {
            return Ok(*v);
        }
        let value = self.store.require(name)?.clone();
        let v = self.tape.param(name, value, (self.trainable)(name));
        self.bound.borrow_mut().insert(name.to_string(), v);
        Ok(v)
    }

    pub fn constant(&self, t: Tensor) -> Var<'t> {
        self.tape.constant(t)
    }
}

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates and step count for one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamSlot {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

/// Adam with bias correction; state is kept per parameter name.
#[derive(Clone, Debug, Default)]
pub struct Adam {
    pub config: AdamConfig,
    state: BTreeMap<String, AdamSlot>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            state: BTreeMap::new(),
        }
    }

    pub fn slot(&self, name: &str) -> Option<&AdamSlot> {
        self.state.get(name)
    }

    /// Applies one update to every parameter that has a gradient.
    pub fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, g) in grads {
            let p = params
                .get_mut(name)
                .ok_or_else(|| Error::Contract(format!("gradient for unknown parameter `{name}`")))?;
            let slot = self.state.entry(name.clone()).or_insert_with(|| AdamSlot {
                m: vec![0.0; g.len()],
                v: vec![0.0; g.len()],
                t: 0,
            });
            adam_step(p, g, slot, &self.config)?;
        }
        Ok(())
    }

    pub fn step_gradients(&mut self, params: &mut ParamStore, grads: Gradients) -> Result<()> {
        self.step(params, &grads.into_named())
    }
}

/// Single Adam update of `param` in place.
pub fn adam_step(param: &mut Tensor, grad: &Tensor, slot: &mut AdamSlot, cfg: &AdamConfig) -> Result<()> {
    if param.shape() != grad.shape() || slot.m.len() != grad.len() || slot.v.len() != grad.len() {
        return Err(Error::Shape {
            op: "adam_step",
            lhs: param.shape().to_vec(),
            rhs: grad.shape().to_vec(),
        });
    }
    slot.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(slot.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(slot.t as i32);
    for (i, (p, g)) in param.data_mut().iter_mut().zip(grad.data()).enumerate() {
        let m = cfg.beta1 * slot.m[i] + (1.0 - cfg.beta1) * g;
        let v = cfg.beta2 * slot.v[i] + (1.0 - cfg.beta2) * g * g;
        slot.m[i] = m;
        slot.v[i] = v;
        let m_hat = m / bc1;
        let v_hat = v / bc2;
        *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}
