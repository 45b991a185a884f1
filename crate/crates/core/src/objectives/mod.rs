//! Training objectives for the hashing head.

mod centers;
mod losses;
mod similarity;

pub use centers::{hadamard_entry, polarization_targets, HashCenters};
pub use losses::{hashnet_beta, loss_csq, loss_dpn, loss_dsh, loss_greedyhash, loss_hashnet, loss_idhn};
pub use similarity::SimilarityMatrix;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Init, Parameters};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveKind {
    Dsh,
    HashNet,
    GreedyHash,
    Idhn,
    Csq,
    Dpn,
}

impl ObjectiveKind {
    pub const ALL: [ObjectiveKind; 6] = [
        ObjectiveKind::Dsh,
        ObjectiveKind::HashNet,
        ObjectiveKind::GreedyHash,
        ObjectiveKind::Idhn,
        ObjectiveKind::Csq,
        ObjectiveKind::Dpn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ObjectiveKind::Dsh => "dsh",
            ObjectiveKind::HashNet => "hashnet",
            ObjectiveKind::GreedyHash => "greedyhash",
            ObjectiveKind::Idhn => "idhn",
            ObjectiveKind::Csq => "csq",
            ObjectiveKind::Dpn => "dpn",
        }
    }
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ObjectiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown objective '{s}'")))
    }
}

/// Objective choice and its constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub objective: ObjectiveKind,
    /// Contrastive margin; `None` means twice the code length.
    pub dsh_margin: Option<f64>,
    pub dsh_alpha: f64,
    pub hashnet_step_size: f64,
    pub greedyhash_alpha: f64,
    pub idhn_lambda: f64,
    pub idhn_ce_scale: f64,
    pub csq_lambda: f64,
    pub dpn_margin: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self::new(ObjectiveKind::Csq)
    }
}

impl LossConfig {
    pub fn new(objective: ObjectiveKind) -> Self {
        Self {
            objective,
            dsh_margin: None,
            dsh_alpha: 0.01,
            hashnet_step_size: 200.0,
            greedyhash_alpha: 0.1,
            idhn_lambda: 0.1,
            idhn_ce_scale: 0.5,
            csq_lambda: 1e-4,
            dpn_margin: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let scalars = [
            ("dsh_alpha", self.dsh_alpha),
            ("hashnet_step_size", self.hashnet_step_size),
            ("greedyhash_alpha", self.greedyhash_alpha),
            ("idhn_lambda", self.idhn_lambda),
            ("idhn_ce_scale", self.idhn_ce_scale),
            ("csq_lambda", self.csq_lambda),
            ("dpn_margin", self.dpn_margin),
            ("dsh_margin", self.dsh_margin.unwrap_or(0.0)),
        ];
        for (name, v) in scalars {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        if self.hashnet_step_size == 0.0 {
            return Err(Error::Config("hashnet_step_size must be positive".into()));
        }
        Ok(())
    }
}

/// A configured objective with any state it carries: the GreedyHash
/// classifier, CSQ centers or DPN targets.
#[derive(Clone, Debug)]
pub struct Objective<T: Real = f32> {
    pub config: LossConfig,
    pub bits: usize,
    pub num_classes: usize,
    pub w_cls: Option<Tensor<T>>,
    pub centers: Option<HashCenters>,
    pub targets: Option<Vec<Vec<bool>>>,
}

impl<T: Real> Objective<T> {
    pub fn new(config: LossConfig, bits: usize, num_classes: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if bits == 0 || num_classes == 0 {
            return Err(Error::Config("objective needs at least one bit and one class".into()));
        }
        let mut out = Self {
            config,
            bits,
            num_classes,
            w_cls: None,
            centers: None,
            targets: None,
        };
        match out.config.objective {
            ObjectiveKind::GreedyHash => {
                out.w_cls = Some(Init::new(seed ^ 0x0b1e_c71e).trunc_normal(&[bits, num_classes], 0.01));
            }
            ObjectiveKind::Csq => out.centers = Some(HashCenters::new(num_classes, bits, seed)?),
            ObjectiveKind::Dpn => out.targets = Some(polarization_targets(num_classes, bits, seed)?),
            _ => {}
        }
        Ok(out)
    }

    fn class_targets(&self, labels: &[Vec<u32>]) -> Result<Tensor<T>> {
        let c = self.num_classes;
        let mut v = vec![T::zero(); labels.len() * c];
        for (row, ls) in labels.iter().enumerate() {
            if ls.is_empty() {
                return Err(Error::Contract(format!("batch item {row} has no labels")));
            }
            for &l in ls {
                if l as usize >= c {
                    return Err(Error::Contract(format!("class id {l} out of range for {c} classes")));
                }
                v[row * c + l as usize] = T::lit(1.0 / ls.len() as f64);
            }
        }
        Tensor::from_vec(&[labels.len(), c], v)
    }

    /// Scalar loss for hash features `h: [B, K]` of items with the given
    /// label sets at optimizer step `step`.
    pub fn loss(&self, h: &Tensor<T>, labels: &[Vec<u32>], step: u64) -> Result<Tensor<T>> {
        if h.shape().first() != Some(&labels.len()) || h.shape().get(1) != Some(&self.bits) {
            return Err(Error::Shape(format!(
                "features {:?} do not match {} items of {} bits",
                h.shape(),
                labels.len(),
                self.bits
            )));
        }
        let cfg = &self.config;
        match cfg.objective {
            ObjectiveKind::Dsh => {
                let margin = cfg.dsh_margin.unwrap_or(2.0 * self.bits as f64);
                loss_dsh(h, &SimilarityMatrix::from_labels(labels), margin, cfg.dsh_alpha)
            }
            ObjectiveKind::HashNet => {
                let beta = hashnet_beta(step, cfg.hashnet_step_size);
                loss_hashnet(h, &SimilarityMatrix::from_labels(labels), beta)
            }
            ObjectiveKind::GreedyHash => {
                let w = self.w_cls.as_ref().expect("GreedyHash classifier");
                loss_greedyhash(h, w, &self.class_targets(labels)?, cfg.greedyhash_alpha)
            }
            ObjectiveKind::Idhn => {
                loss_idhn(h, &SimilarityMatrix::with_soft(labels), cfg.idhn_ce_scale, cfg.idhn_lambda)
            }
            ObjectiveKind::Csq => {
                let centers = self.centers.as_ref().expect("CSQ centers");
                let bits = labels.iter().map(|l| centers.target(l)).collect::<Result<Vec<_>>>()?;
                loss_csq(h, &bits, cfg.csq_lambda)
            }
            ObjectiveKind::Dpn => {
                let table = self.targets.as_ref().expect("DPN targets");
                let bits = labels.iter().map(|l| centers::majority(table, l)).collect::<Result<Vec<_>>>()?;
                loss_dpn(h, &bits, cfg.dpn_margin)
            }
        }
    }

    /// Whether the loss needs at least two items per batch.
    pub fn is_pairwise(&self) -> bool {
        matches!(
            self.config.objective,
            ObjectiveKind::Dsh | ObjectiveKind::HashNet | ObjectiveKind::Idhn
        )
    }
}

impl<T: Real> Parameters<T> for Objective<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        if let Some(w) = &self.w_cls {
            f("objective.w_cls", w);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        if let Some(w) = &mut self.w_cls {
            f("objective.w_cls", w);
        }
    }
}
