//! Named parameter collections and the layers built from them.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};
use crate::weights::NamedTensor;

/// Anything exposing its trainable tensors under stable dotted names.
pub trait Parameters<T: Real> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor<T>));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>));

    fn named_params(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        self.visit(&mut |name, t| out.push((name.to_string(), t.clone())));
        out
    }

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, t| n += t.numel());
        n
    }

    fn zero_grad(&self) {
        self.visit(&mut |_, t| t.zero_grad());
    }

    fn to_named_tensors(&self) -> Vec<NamedTensor> {
        let mut out = Vec::new();
        self.visit(&mut |name, t| out.push(NamedTensor::from_tensor(name, t)));
        out
    }

    /// Replaces every parameter with the entry of the same name in `source`,
    /// removing the entries it consumes. Shapes must match exactly.
    fn assign_from(&mut self, source: &mut BTreeMap<String, NamedTensor>) -> Result<()> {
        let mut missing = Vec::new();
        let mut failure = None;
        self.visit_mut(&mut |name, t| {
            if failure.is_some() {
                return;
            }
            match source.remove(name) {
                None => missing.push(name.to_string()),
                Some(nt) if nt.shape != t.shape() => {
                    failure = Some(Error::TensorShape {
                        name: name.to_string(),
                        expected: t.shape().to_vec(),
                        found: nt.shape,
                    })
                }
                Some(nt) => match nt.to_param() {
                    Ok(p) => *t = p,
                    Err(e) => failure = Some(e),
                },
            }
        });
        if let Some(e) = failure {
            return Err(e);
        }
        if !missing.is_empty() {
            return Err(Error::MissingTensors(missing));
        }
        Ok(())
    }
}

/// Deterministic parameter initializer.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Normal(0, std) truncated to two standard deviations.
    pub fn trunc_normal<T: Real>(&mut self, shape: &[usize], std: f64) -> Tensor<T> {
        let n = shape.iter().product();
        let normal = Normal::new(0.0, std).expect("valid std");
        let data = (0..n)
            .map(|_| loop {
                let v: f64 = normal.sample(&mut self.rng);
                if v.abs() <= 2.0 * std {
                    break T::lit(v);
                }
            })
            .collect();
        Tensor::param(shape, data).expect("shape matches")
    }
}

pub fn zeros_param<T: Real>(shape: &[usize]) -> Tensor<T> {
    Tensor::param(shape, vec![T::zero(); shape.iter().product()]).expect("shape matches")
}

pub fn ones_param<T: Real>(shape: &[usize]) -> Tensor<T> {
    Tensor::param(shape, vec![T::one(); shape.iter().product()]).expect("shape matches")
}

/// `y = x W + b` with `W: [in, out]`.
#[derive(Clone, Debug)]
pub struct Linear<T: Real> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> Linear<T> {
    pub fn new(init: &mut Init, input: usize, output: usize, std: f64) -> Self {
        Self {
            weight: init.trunc_normal(&[input, output], std),
            bias: zeros_param(&[output]),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: zeros_param(&[input, output]),
            bias: zeros_param(&[output]),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.matmul(&self.weight)?.add(&self.bias)
    }

    pub(crate) fn visit(&self, w: &str, b: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f(w, &self.weight);
        f(b, &self.bias);
    }

    pub(crate) fn visit_mut(&mut self, w: &str, b: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(w, &mut self.weight);
        f(b, &mut self.bias);
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm<T: Real> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

pub const LAYER_NORM_EPS: f64 = 1e-6;

impl<T: Real> LayerNorm<T> {
    pub fn new(width: usize) -> Self {
        Self {
            gamma: ones_param(&[width]),
            beta: zeros_param(&[width]),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.layer_norm(&self.gamma, &self.beta, T::lit(LAYER_NORM_EPS))
    }

    pub(crate) fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f(&format!("{prefix}.gamma"), &self.gamma);
        f(&format!("{prefix}.beta"), &self.beta);
    }

    pub(crate) fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&format!("{prefix}.gamma"), &mut self.gamma);
        f(&format!("{prefix}.beta"), &mut self.beta);
    }
}
