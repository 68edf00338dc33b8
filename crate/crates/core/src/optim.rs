//! SGD with momentum and weight decay.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;

use crate::error::{Error, Result};
use crate::graph::{Gradients, ModelGraph, Param};

/// Heavy-ball SGD: `v ← μ·v + (g + λ·w)`, `w ← w − lr·v`. Weight decay
/// applies to every parameter, biases included.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: BTreeMap<String, Param>,
}

impl Sgd {
    pub fn new(model: &ModelGraph, momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) || weight_decay < 0.0 || !weight_decay.is_finite() {
            return Err(Error::Config(format!(
                "momentum must be in [0, 1) and weight decay non-negative, got {momentum} and {weight_decay}"
            )));
        }
        let velocity = model.params().map(|(n, p)| (n.into(), p.zeros_like())).collect();
        Ok(Sgd {
            momentum,
            weight_decay,
            velocity,
        })
    }

    pub fn velocity(&self, layer: &str) -> Option<&Param> {
        self.velocity.get(layer)
    }

    pub fn velocity_mut(&mut self, layer: &str) -> Option<&mut Param> {
        self.velocity.get_mut(layer)
    }

    pub fn step(&mut self, model: &mut ModelGraph, grads: &Gradients, lr: f64) -> Result<()> {
        let (mu, wd) = (self.momentum, self.weight_decay);
        for (name, g) in &grads.layers {
            let v = self
                .velocity
                .get_mut(name)
                .ok_or_else(|| Error::State(format!("no optimizer state for layer {name}")))?;
            let p = model
                .param_mut(name)
                .ok_or_else(|| Error::State(format!("gradient for unknown layer {name}")))?;
            update(p.weight.data_mut(), v.weight.data_mut(), g.weight.data(), mu, wd, lr)?;
            match (&mut p.bias, &mut v.bias, &g.bias) {
                (Some(pb), Some(vb), Some(gb)) => update(pb.data_mut(), vb.data_mut(), gb.data(), mu, wd, lr)?,
                (None, None, None) => {}
                _ => return Err(Error::State(format!("bias mismatch in layer {name}"))),
            }
        }
        Ok(())
    }
}

fn update(w: &mut [f64], v: &mut [f64], g: &[f64], mu: f64, wd: f64, lr: f64) -> Result<()> {
    if w.len() != g.len() || v.len() != g.len() {
        return Err(Error::State("parameter, velocity and gradient sizes differ".into()));
    }
    for ((w, v), g) in w.iter_mut().zip(v.iter_mut()).zip(g) {
        let d = g + wd * *w;
        *v = mu * *v + d;
        *w -= lr * *v;
    }
    Ok(())
}
