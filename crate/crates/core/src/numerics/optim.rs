//! Named parameter storage and the AdamW update.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
struct Slot<T> {
    value: Tensor<T>,
    m: Tensor<T>,
    v: Tensor<T>,
    trainable: bool,
}

/// Named parameters with their AdamW moment accumulators.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    slots: BTreeMap<String, Slot<T>>,
    step: u64,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
        }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            slots: BTreeMap::new(),
            step: 0,
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) {
        let m = Tensor::zeros(value.shape());
        let v = Tensor::zeros(value.shape());
        self.slots.insert(
            name.into(),
            Slot {
                value,
                m,
                v,
                trainable: true,
            },
        );
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor<T>> {
        self.slots.remove(name).map(|s| s.value)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.slots
            .get(name)
            .map(|s| &s.value)
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.slots
            .get_mut(name)
            .map(|s| &mut s.value)
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.slots.contains_key(name)
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.slots.get(name).is_some_and(|s| s.trainable)
    }

    /// Marks exactly the parameters whose names start with one of `prefixes`
    /// as trainable; everything else is frozen.
    pub fn train_only(&mut self, prefixes: &[&str]) {
        for (name, slot) in self.slots.iter_mut() {
            slot.trainable = prefixes.iter().any(|p| name.starts_with(p));
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.slots.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.slots.iter().map(|(k, s)| (k.as_str(), &s.value))
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, name: &str) -> Option<(&Tensor<T>, &Tensor<T>)> {
        self.slots.get(name).map(|s| (&s.m, &s.v))
    }

    /// Zeroes both moment accumulators and the step counter.
    pub fn reset_optimizer(&mut self) {
        for slot in self.slots.values_mut() {
            slot.m = Tensor::zeros(slot.value.shape());
            slot.v = Tensor::zeros(slot.value.shape());
        }
        self.step = 0;
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for (name, slot) in &self.slots {
            out.insert(name.clone(), slot.value.cast());
            if let Some(s) = out.slots.get_mut(name) {
                s.trainable = slot.trainable;
            }
        }
        out
    }
}

/// One decoupled-weight-decay Adam step over every trainable parameter.
///
/// Decay is applied first (`θ ← θ(1 − lr·λ)`), then the bias-corrected Adam
/// update. Every trainable parameter must have a gradient of matching shape.
pub fn adamw_step<T: Scalar>(
    store: &mut ParamStore<T>,
    grads: &BTreeMap<String, Tensor<T>>,
    cfg: &AdamWConfig,
) -> Result<()> {
    for name in grads.keys() {
        if !store.slots.get(name).is_some_and(|s| s.trainable) {
            return Err(Error::Contract(format!("gradient for non-trainable or unknown parameter {name}")));
        }
    }
    for (name, slot) in store.slots.iter().filter(|(_, s)| s.trainable) {
        match grads.get(name) {
            None => return Err(Error::Contract(format!("missing gradient for parameter {name}"))),
            Some(g) if g.shape() != slot.value.shape() => {
                return Err(Error::shape("adamw_step", slot.value.shape(), g.shape()))
            }
            Some(g) => g.ensure_finite(name)?,
        }
    }
    store.step += 1;
    let t = store.step as f64;
    let lr = T::c(cfg.lr);
    let (b1, b2) = (T::c(cfg.beta1), T::c(cfg.beta2));
    let eps = T::c(cfg.eps);
    let decay = T::one() - T::c(cfg.lr * cfg.weight_decay);
    let corr1 = T::c(1.0 - cfg.beta1.powf(t));
    let corr2 = T::c(1.0 - cfg.beta2.powf(t));
    let one = T::one();
    for (name, slot) in store.slots.iter_mut().filter(|(_, s)| s.trainable) {
        let g = &grads[name];
        let Slot { value, m, v, .. } = slot;
        for (((p, mi), vi), &gi) in value
            .data_mut()
            .iter_mut()
            .zip(m.data_mut())
            .zip(v.data_mut())
            .zip(g.data())
        {
            *p = *p * decay;
            *mi = b1 * *mi + (one - b1) * gi;
            *vi = b2 * *vi + (one - b2) * gi * gi;
            let m_hat = *mi / corr1;
            let v_hat = *vi / corr2;
            *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Step-wise learning-rate decay: `base · factor^⌊epoch / interval⌋`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLr {
    pub base: f64,
    pub factor: f64,
    pub interval: usize,
}

impl StepLr {
    pub fn constant(base: f64) -> Self {
        StepLr {
            base,
            factor: 1.0,
            interval: usize::MAX,
        }
    }

    pub fn at(&self, epoch: usize) -> f64 {
        self.base * self.factor.powi((epoch / self.interval.max(1)) as i32)
    }
}
