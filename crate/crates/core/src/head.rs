//! Hashing head: encoder states to `K` real-valued hash features.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Init, Linear, Parameters};
use crate::retrieval::BinaryCode;
use crate::tensor::{Real, Tensor};
use crate::vit::{site, Mode, VitConfig};

const HEAD_INIT_STD: f64 = 0.01;

/// Which encoder rows feed the head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    /// All `N+1` token states, flattened.
    All,
    /// The class-token state only.
    ClsOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HashHeadConfig {
    pub bits: usize,
    pub feature_mode: FeatureMode,
    pub hidden_dim: usize,
    pub dropout: f64,
}

impl HashHeadConfig {
    pub fn new(bits: usize, feature_mode: FeatureMode) -> Self {
        Self {
            bits,
            feature_mode,
            hidden_dim: 1024,
            dropout: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bits == 0 {
            return Err(Error::Config("hash length must be at least 1 bit".into()));
        }
        if self.hidden_dim == 0 {
            return Err(Error::Config("hash head hidden size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn input_dim(&self, vit: &VitConfig) -> usize {
        match self.feature_mode {
            FeatureMode::All => vit.num_tokens() * vit.hidden_size,
            FeatureMode::ClsOnly => vit.hidden_size,
        }
    }
}

#[derive(Clone, Debug)]
pub struct HashHead<T: Real = f32> {
    pub config: HashHeadConfig,
    pub proj: Linear<T>,
    pub out: Linear<T>,
}

impl<T: Real> HashHead<T> {
    pub fn new(config: HashHeadConfig, vit: &VitConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut init = Init::new(seed);
        let proj = Linear::new(&mut init, config.input_dim(vit), config.hidden_dim, HEAD_INIT_STD);
        let out = Linear::new(&mut init, config.hidden_dim, config.bits, HEAD_INIT_STD);
        Ok(Self { config, proj, out })
    }

    /// `H_f = relu(dropout(x) W1 + b1) W2 + b2` for `te: [B, N+1, de]`,
    /// giving `[B, K]`.
    pub fn forward(&self, te: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let &[b, tokens, width] = te.shape() else {
            return Err(Error::Shape(format!("hash head expects [B, N+1, de], got {:?}", te.shape())));
        };
        let x = match self.config.feature_mode {
            FeatureMode::All => te.reshape(&[b, tokens * width])?,
            FeatureMode::ClsOnly => te.narrow(1, 0, 1)?.reshape(&[b, width])?,
        };
        if x.shape()[1] != self.proj.weight.shape()[0] {
            return Err(Error::Shape(format!(
                "hash head input width {} does not match W1 {:?}",
                x.shape()[1],
                self.proj.weight.shape()
            )));
        }
        let x = x.dropout(self.config.dropout, mode.is_training(), mode.stream(site::HASH_INPUT))?;
        self.out.forward(&self.proj.forward(&x)?.relu())
    }
}

impl<T: Real> Parameters<T> for HashHead<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.proj.visit("hash.w1", "hash.b1", f);
        self.out.visit("hash.w2", "hash.b2", f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.proj.visit_mut("hash.w1", "hash.b1", f);
        self.out.visit_mut("hash.w2", "hash.b2", f);
    }
}

/// Sign binarization: bit `i` is set iff `h[i] > 0`; exact zero gives 0.
pub fn binarize<T: Real>(h: &[T]) -> Result<BinaryCode> {
    if let Some(i) = h.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("hash feature {i} is not finite")));
    }
    Ok(BinaryCode::from_bits(h.iter().map(|&v| v > T::zero())))
}
