//! Adam with bias correction over named parameters.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::Parameters;
use crate::tensor::{Real, Tensor};
use crate::weights::NamedTensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config("eps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Adam<T: Real = f32> {
    pub config: AdamConfig,
    /// Completed steps.
    pub t: u64,
    pub m: BTreeMap<String, Vec<T>>,
    pub v: BTreeMap<String, Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// Applies one update from the gradients accumulated on `params`,
    /// replacing each parameter with a fresh leaf. Parameters without a
    /// gradient are treated as having a zero gradient. Nothing is modified
    /// when any gradient is non-finite.
    pub fn step(&mut self, params: &mut dyn Parameters<T>) -> Result<()> {
        let mut grads: BTreeMap<String, Vec<T>> = BTreeMap::new();
        let mut bad = None;
        params.visit(&mut |name, p| {
            let g = p.grad().unwrap_or_else(|| vec![T::zero(); p.numel()]);
            if bad.is_none() && g.iter().any(|v| !v.is_finite()) {
                bad = Some(name.to_string());
            }
            grads.insert(name.to_string(), g);
        });
        if let Some(tensor) = bad {
            return Err(Error::NonFiniteGradient { tensor });
        }

        self.t += 1;
        let c = self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let bc1 = T::lit(1.0 - c.beta1.powi(self.t as i32));
        let bc2 = T::lit(1.0 - c.beta2.powi(self.t as i32));
        let (lr, eps) = (T::lit(c.lr), T::lit(c.eps));
        let one = T::one();

        for (name, g) in &grads {
            let n = g.len();
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![T::zero(); n]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![T::zero(); n]);
            for i in 0..n {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
            }
        }
        let mut failure = None;
        params.visit_mut(&mut |name, p| {
            let (m, v) = (&self.m[name], &self.v[name]);
            let data = p
                .data()
                .iter()
                .zip(m.iter().zip(v))
                .map(|(&x, (&mi, &vi))| x - lr * (mi / bc1) / ((vi / bc2).sqrt() + eps))
                .collect();
            match Tensor::param(p.shape(), data) {
                Ok(t) => *p = t,
                Err(e) => failure = Some(e),
            }
        });
        failure.map_or(Ok(()), Err)
    }

    /// Moments as `optim.m.<name>` / `optim.v.<name>` tensors.
    pub fn to_named_tensors(&self, params: &dyn Parameters<T>) -> Vec<NamedTensor> {
        let mut out = Vec::new();
        params.visit(&mut |name, p| {
            for (prefix, table) in [("optim.m.", &self.m), ("optim.v.", &self.v)] {
                if let Some(values) = table.get(name) {
                    out.push(NamedTensor::from_values(&format!("{prefix}{name}"), p.shape(), values));
                }
            }
        });
        out
    }

    /// Restores moments saved by [`to_named_tensors`](Self::to_named_tensors),
    /// removing them from `map`.
    pub fn restore(&mut self, t: u64, params: &dyn Parameters<T>, map: &mut BTreeMap<String, NamedTensor>) -> Result<()> {
        self.t = t;
        self.m.clear();
        self.v.clear();
        let mut failure = None;
        params.visit(&mut |name, p| {
            for (prefix, table) in [("optim.m.", &mut self.m), ("optim.v.", &mut self.v)] {
                let key = format!("{prefix}{name}");
                match map.remove(&key) {
                    Some(nt) if nt.shape != p.shape() => {
                        failure.get_or_insert(Error::TensorShape {
                            name: key,
                            expected: p.shape().to_vec(),
                            found: nt.shape,
                        });
                    }
                    Some(nt) => {
                        table.insert(name.to_string(), nt.values());
                    }
                    None if t > 0 => {
                        failure.get_or_insert(Error::MissingTensors(vec![key]));
                    }
                    None => {}
                }
            }
        });
        failure.map_or(Ok(()), Err)
    }
}
