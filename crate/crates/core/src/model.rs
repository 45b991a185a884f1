//! Encoder plus hashing head, with batched code generation and model files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Normalization};
use crate::error::{Error, Result};
use crate::head::{binarize, HashHead, HashHeadConfig};
use crate::image::Image;
use crate::params::Parameters;
use crate::retrieval::BinaryCodeSet;
use crate::tensor::{no_grad, Real, Tensor};
use crate::vit::{Mode, VitConfig, VitEncoder};
use crate::weights::{self, NamedTensor};

pub const ENCODE_BATCH: usize = 64;

/// Everything needed to rebuild a model from its weight file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelMeta {
    pub vit: VitConfig,
    pub head: HashHeadConfig,
    #[serde(default)]
    pub normalization: Normalization,
    #[serde(default)]
    pub epoch: Option<usize>,
    #[serde(default)]
    pub map: Option<f64>,
}

/// `<path>.json` next to a weight file.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

#[derive(Clone, Debug)]
pub struct HashModel<T: Real = f32> {
    pub encoder: VitEncoder<T>,
    pub head: HashHead<T>,
}

impl<T: Real> HashModel<T> {
    pub fn new(vit: VitConfig, head: HashHeadConfig, seed: u64) -> Result<Self> {
        let encoder = VitEncoder::new(vit, seed)?;
        let head = HashHead::new(head, &encoder.config, seed.wrapping_add(1))?;
        Ok(Self { encoder, head })
    }

    pub fn bits(&self) -> usize {
        self.head.config.bits
    }

    /// Hash features `[B, K]` for a patch tensor.
    pub fn features(&self, patches: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let out = self.encoder.forward(patches, mode)?;
        self.head.forward(&out.te, mode)
    }

    /// Eval-mode features for already-normalized images, computed in
    /// batches without recording a graph.
    pub fn eval_features(&self, images: &[&Image]) -> Result<Vec<Vec<T>>> {
        no_grad(|| {
            let mut rows = Vec::with_capacity(images.len());
            for chunk in images.chunks(ENCODE_BATCH) {
                let h = self.features(&self.encoder.patch_batch(chunk)?, Mode::Eval)?;
                rows.extend(h.data().chunks(self.bits()).map(<[T]>::to_vec));
            }
            Ok(rows)
        })
    }

    /// Binary codes for dataset items `indices`.
    pub fn encode_items(&self, dataset: &Dataset, indices: &[usize], norm: &Normalization) -> Result<BinaryCodeSet> {
        norm.validate(self.encoder.config.channels)?;
        let size = self.encoder.config.image_size;
        let mut set = BinaryCodeSet::new(self.bits());
        for chunk in indices.chunks(ENCODE_BATCH) {
            let prepared: Vec<Image> = chunk.iter().map(|&i| norm.prepare(&dataset.items[i].image, size)).collect();
            let refs: Vec<&Image> = prepared.iter().collect();
            for (row, &i) in self.eval_features(&refs)?.iter().zip(chunk) {
                let item = &dataset.items[i];
                set.push(item.id, &item.labels, &binarize(row)?)?;
            }
        }
        Ok(set)
    }

    pub fn save(&self, path: &Path, meta: &ModelMeta) -> Result<()> {
        self.save_with(path, meta, &[])
    }

    /// Saves the model tensors plus `extra` ones (e.g. objective state).
    pub fn save_with(&self, path: &Path, meta: &ModelMeta, extra: &[NamedTensor]) -> Result<()> {
        let mut tensors = self.to_named_tensors();
        tensors.extend_from_slice(extra);
        weights::write_weights(path, &tensors)?;
        let side = sidecar_path(path);
        std::fs::write(&side, serde_json::to_string_pretty(meta)? + "\n").map_err(|e| Error::io(&side, e))
    }

    /// Loads a model file and its sidecar. Tensors under `objective.` are
    /// ignored; any other unknown tensor is an error.
    pub fn load(path: &Path) -> Result<(Self, ModelMeta)> {
        let side = sidecar_path(path);
        let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let meta: ModelMeta = serde_json::from_str(&text)?;
        let model = Self::load_with(path, &meta)?;
        Ok((model, meta))
    }

    pub fn load_with(path: &Path, meta: &ModelMeta) -> Result<Self> {
        let mut map = weights::into_map(weights::read_weights(path)?);
        let mut model = Self::new(meta.vit.clone(), meta.head.clone(), 0)?;
        model.assign_from(&mut map)?;
        map.retain(|k, _| !k.starts_with("objective."));
        weights::ensure_consumed(&map)?;
        Ok(model)
    }
}

impl<T: Real> Parameters<T> for HashModel<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.encoder.visit(f);
        self.head.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.encoder.visit_mut(f);
        self.head.visit_mut(f);
    }
}
