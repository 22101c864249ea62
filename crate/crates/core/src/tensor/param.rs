use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Real, Tensor};
use crate::error::{Result, VolrigError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    /// Trained by the optimizer.
    Weight,
    /// State updated during forward passes (batch-norm running statistics).
    Buffer,
}

#[derive(Debug, Clone)]
struct Entry<T> {
    name: String,
    kind: ParamKind,
    value: Arc<Tensor<T>>,
    grad: Vec<T>,
    ready: bool,
}

/// Named parameters and buffers of a network, with gradient slots.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    entries: Vec<Entry<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, kind: ParamKind) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(VolrigError::Config(format!("duplicate parameter name {name}")));
        }
        let id = ParamId(self.entries.len());
        self.by_name.insert(name.clone(), id);
        self.entries.push(Entry {
            name,
            kind,
            grad: vec![T::zero(); value.len()],
            value: Arc::new(value),
            ready: false,
        });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn kind(&self, id: ParamId) -> ParamKind {
        self.entries[id.0].kind
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].kind == ParamKind::Weight
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub(crate) fn value_arc(&self, id: ParamId) -> Arc<Tensor<T>> {
        Arc::clone(&self.entries[id.0].value)
    }

    pub fn set(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let e = &mut self.entries[id.0];
        if e.value.shape() != value.shape() {
            return Err(VolrigError::Shape(format!(
                "{}: expected {:?}, got {:?}",
                e.name,
                e.value.shape(),
                value.shape()
            )));
        }
        e.value = Arc::new(value);
        Ok(())
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        Arc::make_mut(&mut self.entries[id.0].value)
    }

    pub fn grad(&self, id: ParamId) -> &[T] {
        &self.entries[id.0].grad
    }

    /// Number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind == ParamKind::Weight)
            .map(|e| e.value.len())
            .sum()
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, g: &Tensor<T>) -> Result<()> {
        let e = &mut self.entries[id.0];
        if g.len() != e.grad.len() {
            return Err(VolrigError::Shape(format!("gradient for {} has {} values", e.name, g.len())));
        }
        for (a, b) in e.grad.iter_mut().zip(g.data()) {
            *a += *b;
        }
        Ok(())
    }

    pub(crate) fn mark_gradients_ready(&mut self) {
        for e in &mut self.entries {
            if e.kind == ParamKind::Weight {
                e.ready = true;
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad.iter_mut().for_each(|g| *g = T::zero());
            e.ready = false;
        }
    }

    /// Scales every gradient, e.g. to average accumulated steps.
    pub fn scale_grad(&mut self, s: T) {
        for e in &mut self.entries {
            e.grad.iter_mut().for_each(|g| *g *= s);
        }
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for e in &self.entries {
            out.add(e.name.clone(), e.value.cast(), e.kind).expect("names already unique");
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub t: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// One bias-corrected update of every trainable entry, then clears the
    /// gradients.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        if let Some(e) = store.entries.iter().find(|e| e.kind == ParamKind::Weight && !e.ready) {
            return Err(VolrigError::MissingGradient(e.name.clone()));
        }
        if self.m.len() != store.entries.len() {
            self.m = store.entries.iter().map(|e| vec![T::zero(); e.grad.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let c = self.config;
        let b1 = T::of(c.beta1);
        let b2 = T::of(c.beta2);
        let bc1 = T::of(1.0 - c.beta1.powi(self.t as i32));
        let bc2 = T::of(1.0 - c.beta2.powi(self.t as i32));
        let lr = T::of(c.lr);
        let eps = T::of(c.eps);
        for (i, e) in store.entries.iter_mut().enumerate() {
            if e.kind != ParamKind::Weight {
                continue;
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let p = Arc::make_mut(&mut e.value).data_mut();
            for j in 0..p.len() {
                let g = e.grad[j];
                m[j] = b1 * m[j] + (T::one() - b1) * g;
                v[j] = b2 * v[j] + (T::one() - b2) * g * g;
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                p[j] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        store.zero_grad();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Graph;

    fn store() -> (ParamStore<f64>, ParamId, ParamId) {
        let mut s = ParamStore::new();
        let a = s.add("a", Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap(), ParamKind::Weight).unwrap();
        let b = s.add("b", Tensor::new(vec![2], vec![4.0, 5.0]).unwrap(), ParamKind::Weight).unwrap();
        (s, a, b)
    }

    #[test]
    fn duplicate_names_rejected() {
        let (mut s, _, _) = store();
        assert!(s.add("a", Tensor::zeros(&[1]), ParamKind::Weight).is_err());
    }

    #[test]
    fn sum_of_squares_gradient_and_unused_param() {
        let (mut s, a, b) = store();
        let g = Graph::with_grad();
        let x = g.param(&s, a);
        let _unused = g.param(&s, b);
        let loss = g.sum_squares(&x).unwrap();
        g.backward(&loss, &mut s).unwrap();
        assert_eq!(s.grad(a), &[2.0, -4.0, 1.0]);
        assert_eq!(s.grad(b), &[0.0, 0.0]);
        assert!(matches!(g.backward(&loss, &mut s), Err(VolrigError::GraphConsumed)));
    }

    #[test]
    fn adam_requires_gradients() {
        let (mut s, _, _) = store();
        let mut opt = Adam::new(AdamConfig::default());
        assert!(matches!(opt.step(&mut s), Err(VolrigError::MissingGradient(_))));
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let (mut s, a, _) = store();
        let before = s.value(a).clone();
        s.mark_gradients_ready();
        Adam::new(AdamConfig::default()).step(&mut s).unwrap();
        assert_eq!(s.value(a), &before);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let (mut s, a, b) = store();
        for g in [0.3, -7.0, 1e-3] {
            s.zero_grad();
            s.accumulate_grad(a, &Tensor::full(&[3], g)).unwrap();
            s.accumulate_grad(b, &Tensor::full(&[2], g)).unwrap();
            s.mark_gradients_ready();
            let before = s.value(a).clone();
            let mut opt = Adam::new(AdamConfig::default());
            opt.step(&mut s).unwrap();
            for (x, y) in s.value(a).data().iter().zip(before.data()) {
                let d = x - y;
                assert!((d.abs() - 1e-4).abs() < 1e-8, "{d}");
                assert_eq!(d.signum(), -g.signum());
            }
        }
    }
}
