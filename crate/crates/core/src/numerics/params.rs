use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Real, Tape, Tensor, Var};
use crate::{Error, Result};

/// One named weight with its Adam state.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T> {
    pub value: Tensor<T>,
    pub grad: Option<Vec<T>>,
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
}

impl<T: Real> Parameter<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let n = value.numel();
        Self {
            value,
            grad: None,
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            step: 0,
        }
    }

    fn cast<U: Real>(&self) -> Parameter<U> {
        let c = |x: &[T]| x.iter().map(|v| U::of(v.as_f64())).collect::<Vec<U>>();
        Parameter {
            value: self.value.cast(),
            grad: self.grad.as_deref().map(c),
            m: c(&self.m),
            v: c(&self.v),
            step: self.step,
        }
    }
}

/// Named parameters, iterated in name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore<T> {
    params: BTreeMap<String, Parameter<T>>,
}

/// Tape handles of a bound store.
#[derive(Debug, Clone, Default)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::MissingGradient(format!("parameter `{name}` is not bound")))
    }

    /// `x [.., in] * W [in, out] + b [out]` with weights `{prefix}.w`, `{prefix}.b`.
    pub fn linear<T: Real>(&self, tape: &mut Tape<T>, prefix: &str, x: Var) -> Result<Var> {
        let w = self.get(&format!("{prefix}.w"))?;
        let b = self.get(&format!("{prefix}.b"))?;
        let y = tape.matmul(x, w)?;
        tape.add(y, b)
    }

    /// Normalization over the last axis followed by `{prefix}.g` scale and `{prefix}.b` shift.
    pub fn layer_norm<T: Real>(&self, tape: &mut Tape<T>, prefix: &str, x: Var) -> Result<Var> {
        let axis = tape.shape(x).len() - 1;
        let y = tape.layer_norm(x, axis)?;
        let g = self.get(&format!("{prefix}.g"))?;
        let b = self.get(&format!("{prefix}.b"))?;
        let y = tape.mul(y, g)?;
        tape.add(y, b)
    }
}

impl<T: Real> ParameterStore<T> {
    pub fn new() -> Self {
        Self {
            params: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) {
        self.params.insert(name.into(), Parameter::new(value));
    }

    pub fn insert_param(&mut self, name: impl Into<String>, p: Parameter<T>) {
        self.params.insert(name.into(), p);
    }

    pub fn get(&self, name: &str) -> Option<&Parameter<T>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Parameter<T>> {
        self.params.get_mut(name)
    }

    /// Value of a parameter that must exist.
    pub fn value(&self, name: &str) -> Result<&Tensor<T>> {
        self.params
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::ConfigMismatch(format!("missing parameter `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Parameter<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Parameter<T>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalars.
    pub fn numel(&self) -> usize {
        self.params.values().map(|p| p.value.numel()).sum()
    }

    /// Records every parameter as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> Bound {
        Bound {
            vars: self
                .params
                .iter()
                .map(|(k, p)| (k.clone(), tape.param(&p.value)))
                .collect(),
        }
    }

    /// Adds `scale` times the tape gradients into the stored gradients.
    pub fn accumulate(&mut self, tape: &Tape<T>, bound: &Bound, scale: T) {
        for (name, p) in self.params.iter_mut() {
            let Some(&var) = bound.vars.get(name) else { continue };
            let Some(g) = tape.grad(var) else { continue };
            let buf = p.grad.get_or_insert_with(|| vec![T::zero(); g.len()]);
            for (b, v) in buf.iter_mut().zip(g) {
                *b += v * scale;
            }
        }
    }

    /// Sets every gradient to zero (present, so an optimizer step is legal).
    pub fn zero_grad(&mut self) {
        for p in self.params.values_mut() {
            p.grad = Some(vec![T::zero(); p.value.numel()]);
        }
    }

    pub fn clear_grad(&mut self) {
        for p in self.params.values_mut() {
            p.grad = None;
        }
    }

    pub fn cast<U: Real>(&self) -> ParameterStore<U> {
        ParameterStore {
            params: self.params.iter().map(|(k, p)| (k.clone(), p.cast())).collect(),
        }
    }

    /// Copies every entry under `prefix` into `self`.
    pub fn extend_prefixed(&mut self, prefix: &str, other: &ParameterStore<T>) {
        for (k, p) in &other.params {
            self.params.insert(format!("{prefix}{k}"), p.clone());
        }
    }

    /// Entries whose names start with `prefix`, with the prefix removed.
    pub fn strip_prefix(&self, prefix: &str) -> ParameterStore<T> {
        ParameterStore {
            params: self
                .params
                .iter()
                .filter_map(|(k, p)| k.strip_prefix(prefix).map(|s| (s.to_string(), p.clone())))
                .collect(),
        }
    }

    /// Glorot-uniform `[in, out]` weight and zero bias.
    pub fn add_linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = Tensor::from_fn(&[fan_in, fan_out], |_| T::of(rng.gen_range(-bound..=bound)));
        self.insert(format!("{prefix}.w"), w);
        self.insert(format!("{prefix}.b"), Tensor::zeros(&[fan_out]));
    }

    /// Linear layer with constant output: zero weights, bias `bias`.
    pub fn add_constant_linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize, bias: f64) {
        self.insert(format!("{prefix}.w"), Tensor::zeros(&[fan_in, fan_out]));
        self.insert(format!("{prefix}.b"), Tensor::full(&[fan_out], T::of(bias)));
    }

    pub fn add_embedding(&mut self, name: &str, rows: usize, dim: usize, rng: &mut impl Rng) {
        let normal = Normal::new(0.0, 0.02).expect("valid sigma");
        let t = Tensor::from_fn(&[rows, dim], |_| T::of(normal.sample(rng)));
        self.insert(name, t);
    }

    pub fn add_layer_norm(&mut self, prefix: &str, dim: usize) {
        self.insert(format!("{prefix}.g"), Tensor::full(&[dim], T::one()));
        self.insert(format!("{prefix}.b"), Tensor::zeros(&[dim]));
    }
}
