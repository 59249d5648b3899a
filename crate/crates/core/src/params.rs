//! Named parameter storage, Adam updates, and tape bindings.

use std::collections::BTreeMap;

use rand::Rng;

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One trainable tensor with its gradient accumulator and Adam state.
#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub value: Tensor,
    pub grad: Vec<f32>,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
    /// Number of Adam steps applied to this entry (bias correction).
    pub t: u64,
}

/// Map from string path (e.g. `enc.layer0.weight`) to parameter entries.
/// Iteration order is the lexicographic name order, which keeps every
/// whole-store reduction deterministic.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: BTreeMap<String, ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        let numel = value.numel();
        self.entries.insert(
            name.into(),
            ParamEntry { value, grad: vec![0.0; numel], m: vec![0.0; numel], v: vec![0.0; numel], t: 0 },
        );
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamEntry> {
        self.entries.get_mut(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ParamEntry)> {
        self.entries.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn zero_grads(&mut self) {
        for entry in self.entries.values_mut() {
            entry.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Adds `delta` into the gradient accumulator of `name`.
    pub fn accumulate_grad(&mut self, name: &str, delta: &[f32]) {
        let entry = self.entries.get_mut(name).expect("unknown parameter");
        debug_assert_eq!(entry.grad.len(), delta.len());
        for (g, &d) in entry.grad.iter_mut().zip(delta) {
            *g += d;
        }
    }

    /// Global L2 norm of the gradients of entries selected by `filter`.
    pub fn grad_norm(&self, filter: impl Fn(&str) -> bool) -> f64 {
        let mut sq = 0.0f64;
        for (name, entry) in &self.entries {
            if filter(name) {
                sq += entry.grad.iter().map(|&g| (g as f64) * (g as f64)).sum::<f64>();
            }
        }
        sq.sqrt()
    }

    /// Scales selected gradients so their global norm is at most `max_norm`.
    pub fn clip_grad_norm(&mut self, max_norm: f32, filter: impl Fn(&str) -> bool) {
        if max_norm <= 0.0 {
            return;
        }
        let norm = self.grad_norm(&filter);
        if norm > max_norm as f64 {
            let scale = (max_norm as f64 / norm) as f32;
            for (name, entry) in self.entries.iter_mut() {
                if filter(name) {
                    entry.grad.iter_mut().for_each(|g| *g *= scale);
                }
            }
        }
    }

    /// Adam update (β1=0.9, β2=0.999, ε=1e-8 by default) applied only to
    /// entries accepted by `unfrozen`; their gradients are cleared after
    /// the step. Frozen entries are untouched, bit for bit.
    pub fn adam_step(&mut self, lr: f32, cfg: &AdamConfig, unfrozen: impl Fn(&str) -> bool) {
        for (name, entry) in self.entries.iter_mut() {
            if !unfrozen(name) {
                continue;
            }
            entry.t += 1;
            let bc1 = 1.0 - (cfg.beta1 as f64).powi(entry.t as i32);
            let bc2 = 1.0 - (cfg.beta2 as f64).powi(entry.t as i32);
            let values = entry.value.data_mut();
            for i in 0..values.len() {
                let g = entry.grad[i];
                entry.m[i] = cfg.beta1 * entry.m[i] + (1.0 - cfg.beta1) * g;
                entry.v[i] = cfg.beta2 * entry.v[i] + (1.0 - cfg.beta2) * g * g;
                let m_hat = entry.m[i] / bc1 as f32;
                let v_hat = entry.v[i] / bc2 as f32;
                values[i] -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
            }
            entry.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Raw little-endian bytes of the parameter values under `prefix`
    /// (names sorted). Used by freeze-exactness checks.
    pub fn value_bytes(&self, prefix: &str) -> Vec<u8> {
        let mut out = Vec::new();
        for (name, entry) in &self.entries {
            if name.starts_with(prefix) {
                for v in entry.value.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Glorot-uniform weight plus zero bias for one dense layer, registered as
/// `{prefix}.layer{index}.weight` / `.bias`. The draw comes from a stream
/// named after the parameter, so layer initialization is independent of
/// registration order.
pub fn init_dense_layer(
    store: &mut ParamStore,
    prefix: &str,
    index: usize,
    in_dim: usize,
    out_dim: usize,
    seed: u64,
) {
    let weight_name = format!("{prefix}.layer{index}.weight");
    let limit = (6.0 / (in_dim + out_dim) as f64).sqrt() as f32;
    let mut rng = crate::rng::stream(seed, &format!("init/{weight_name}"));
    let weights: Vec<f32> = (0..in_dim * out_dim).map(|_| rng.random_range(-limit..limit)).collect();
    store.insert(weight_name, Tensor::new(vec![in_dim, out_dim], weights).expect("shape"));
    store.insert(format!("{prefix}.layer{index}.bias"), Tensor::zeros(vec![out_dim]));
}

/// Tape leaves for a set of store parameters, plus the bookkeeping to copy
/// leaf gradients back into the store after a backward pass.
pub struct ParamBinding {
    ids: BTreeMap<String, NodeId>,
}

impl ParamBinding {
    /// Binds every parameter in the store.
    pub fn bind_all(tape: &mut Tape, store: &ParamStore) -> Self {
        Self::bind_filtered(tape, store, |_| true)
    }

    /// Binds parameters whose name passes `filter`.
    pub fn bind_filtered(
        tape: &mut Tape,
        store: &ParamStore,
        filter: impl Fn(&str) -> bool,
    ) -> Self {
        let mut ids = BTreeMap::new();
        for (name, entry) in store.iter() {
            if filter(name) {
                ids.insert(name.clone(), tape.trainable_leaf(entry.value.clone()));
            }
        }
        ParamBinding { ids }
    }

    /// Node for a bound parameter; absence is a wiring bug, not user error.
    pub fn node(&self, name: &str) -> NodeId {
        *self.ids.get(name).unwrap_or_else(|| panic!("parameter {name} not bound"))
    }

    pub fn entries(&self) -> impl Iterator<Item = (&String, &NodeId)> {
        self.ids.iter()
    }

    /// Accumulates each bound leaf's gradient into the store.
    pub fn export_grads(&self, tape: &Tape, store: &mut ParamStore) {
        for (name, &id) in &self.ids {
            store.accumulate_grad(name, tape.grad(id));
        }
    }
}

/// Validates that all values in the store are finite.
pub fn check_finite(store: &ParamStore, context: &str) -> Result<()> {
    for (name, entry) in store.iter() {
        if !entry.value.all_finite() {
            return Err(Error::Data(format!("non-finite parameter {name} ({context})")));
        }
    }
    Ok(())
}
