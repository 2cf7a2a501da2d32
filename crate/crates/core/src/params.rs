//! Named parameter tensors and their binding onto a gradient tape.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{Activation, GradTape, Gradients, Rng, Tensor, Var};

pub type ParamMap = BTreeMap<String, Tensor>;

/// Initializes named parameters from a seeded stream.
pub struct ParamInit<'a> {
    pub map: ParamMap,
    rng: &'a mut Rng,
}

impl<'a> ParamInit<'a> {
    pub fn new(rng: &'a mut Rng) -> Self {
        ParamInit {
            map: ParamMap::new(),
            rng,
        }
    }

    pub fn normal(&mut self, name: impl Into<String>, shape: impl Into<Vec<usize>>, std: f64) {
        let t = self.rng.gauss(shape).scale(std);
        self.map.insert(name.into(), t);
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: impl Into<Vec<usize>>) {
        self.map.insert(name.into(), Tensor::zeros(shape));
    }

    pub fn ones(&mut self, name: impl Into<String>, shape: impl Into<Vec<usize>>) {
        self.map.insert(name.into(), Tensor::ones(shape));
    }

    /// `{prefix}.w` with std `1/√din` and a zero `{prefix}.b`.
    pub fn linear(&mut self, prefix: &str, din: usize, dout: usize) {
        self.linear_scaled(prefix, din, dout, 1.0);
    }

    pub fn linear_scaled(&mut self, prefix: &str, din: usize, dout: usize, gain: f64) {
        self.normal(format!("{prefix}.w"), [din, dout], gain / (din as f64).sqrt());
        self.zeros(format!("{prefix}.b"), [dout]);
    }

    /// Two linear layers `{prefix}.fc1`, `{prefix}.fc2`.
    pub fn mlp(&mut self, prefix: &str, din: usize, hidden: usize, dout: usize) {
        self.linear(&format!("{prefix}.fc1"), din, hidden);
        self.linear(&format!("{prefix}.fc2"), hidden, dout);
    }

    pub fn layer_norm(&mut self, prefix: &str, d: usize) {
        self.ones(format!("{prefix}.g"), [d]);
        self.zeros(format!("{prefix}.b"), [d]);
    }
}

/// Parameters placed on a tape as trainable leaves.
pub struct Bound<'t> {
    tape: &'t GradTape,
    vars: BTreeMap<String, Var<'t>>,
}

impl<'t> Bound<'t> {
    pub fn new(tape: &'t GradTape, params: &ParamMap) -> Self {
        let vars = params
            .iter()
            .map(|(k, v)| (k.clone(), tape.param(v.clone())))
            .collect();
        Bound { tape, vars }
    }

    pub fn tape(&self) -> &'t GradTape {
        self.tape
    }

    pub fn get(&self, name: &str) -> Result<Var<'t>> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn has(&self, name: &str) -> bool {
        self.vars.contains_key(name)
    }

    pub fn linear(&self, x: Var<'t>, prefix: &str) -> Result<Var<'t>> {
        x.matmul(self.get(&format!("{prefix}.w"))?)?
            .add_row(self.get(&format!("{prefix}.b"))?)
    }

    pub fn mlp(&self, x: Var<'t>, prefix: &str, act: Activation) -> Result<Var<'t>> {
        let h = self.linear(x, &format!("{prefix}.fc1"))?.activate(act);
        self.linear(h, &format!("{prefix}.fc2"))
    }

    pub fn layer_norm(&self, x: Var<'t>, prefix: &str, eps: f64) -> Result<Var<'t>> {
        x.layer_norm(
            Some(self.get(&format!("{prefix}.g"))?),
            Some(self.get(&format!("{prefix}.b"))?),
            eps,
        )
    }

    /// Gradient for every bound parameter (zeros where none flowed).
    pub fn grads(&self, grads: &Gradients) -> ParamMap {
        self.vars
            .iter()
            .map(|(k, v)| (k.clone(), grads.get_or_zeros(*v)))
            .collect()
    }
}

impl Bound<'_> {
    /// Gradients only for parameters the output actually depends on.
    pub fn present_grads(&self, grads: &Gradients) -> ParamMap {
        self.vars
            .iter()
            .filter_map(|(k, v)| grads.get(*v).map(|g| (k.clone(), g.clone())))
            .collect()
    }
}

pub fn param_count(map: &ParamMap) -> usize {
    map.values().map(Tensor::numel).sum()
}
