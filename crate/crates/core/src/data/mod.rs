//! Datasets, split protocols, loaders and preprocessing.

mod cifar;
mod file;
mod protocol;
mod resize;
mod synth;

pub use cifar::{load_cifar10, read_batch_file, CIFAR_FILES, CIFAR_RECORD_BYTES};
pub use file::{decode_dataset, encode_dataset, read_dataset, write_dataset, DATASET_MAGIC, DATASET_VERSION};
pub use protocol::{apply_protocol, DatabaseRule, ProtocolSpec, SplitRule};
pub use resize::resize_bilinear;
pub use synth::{synth_dataset, SynthConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// Which source partition an item came from (e.g. train vs test batch files).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Item {
    pub id: u64,
    pub image: Image,
    /// Sorted, deduplicated class ids.
    pub labels: Vec<u32>,
    pub origin: Origin,
}

/// Item indices for each split.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<usize>,
    pub query: Vec<usize>,
    pub database: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Query,
    Database,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "query" => Ok(Split::Query),
            "database" | "db" => Ok(Split::Database),
            _ => Err(Error::Config(format!("unknown split '{s}' (train, query, database)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub items: Vec<Item>,
    pub num_classes: usize,
    pub splits: Option<Splits>,
    pub protocol: Option<String>,
}

impl Dataset {
    pub fn new(items: Vec<Item>, num_classes: usize) -> Result<Self> {
        let out = Self {
            items,
            num_classes,
            splits: None,
            protocol: None,
        };
        out.validate()?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.items.first() else {
            return Ok(());
        };
        let (size, channels) = (first.image.size(), first.image.channels());
        for item in &self.items {
            if item.image.size() != size || item.image.channels() != channels {
                return Err(Error::Shape(format!("item {} has a different image shape", item.id)));
            }
            if item.labels.is_empty() || item.labels.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Contract(format!("item {} needs sorted, distinct labels", item.id)));
            }
            if let Some(&l) = item.labels.iter().find(|&&l| l as usize >= self.num_classes) {
                return Err(Error::Contract(format!("item {} has label {l} >= {}", item.id, self.num_classes)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn image_size(&self) -> Option<usize> {
        self.items.first().map(|i| i.image.size())
    }

    pub fn split(&self, split: Split) -> Result<&[usize]> {
        let s = self
            .splits
            .as_ref()
            .ok_or_else(|| Error::Protocol("dataset has no splits; apply a protocol first".into()))?;
        Ok(match split {
            Split::Train => &s.train,
            Split::Query => &s.query,
            Split::Database => &s.database,
        })
    }

    pub fn labels_of(&self, indices: &[usize]) -> Vec<Vec<u32>> {
        indices.iter().map(|&i| self.items[i].labels.clone()).collect()
    }

    pub fn is_multi_label(&self) -> bool {
        self.items.iter().any(|i| i.labels.len() > 1)
    }
}

/// Per-channel `(v - mean) / std`, applied when batches are built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalization {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            mean: vec![0.5; 3],
            std: vec![0.5; 3],
        }
    }
}

impl Normalization {
    pub fn validate(&self, channels: usize) -> Result<()> {
        if self.mean.len() != channels || self.std.len() != channels {
            return Err(Error::Config(format!("normalization needs {channels} means and stds")));
        }
        if self.std.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::Config("normalization std must be positive".into()));
        }
        Ok(())
    }

    /// Resizes to `size` if needed, then normalizes.
    pub fn prepare(&self, image: &Image, size: usize) -> Image {
        let resized;
        let src = if image.size() == size {
            image
        } else {
            resized = resize_bilinear(image, size);
            &resized
        };
        src.map(|c, v| (v - self.mean[c]) / self.std[c])
    }
}
