//! Class-conditional synthetic images for desk-scale runs.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Item, Origin};
use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub classes: usize,
    pub per_class: usize,
    pub image_size: usize,
    pub channels: usize,
    /// Standard deviation of the per-pixel Gaussian noise.
    pub noise: f64,
    /// Give each item one to three labels and blend their patterns.
    pub multi_label: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            classes: 10,
            per_class: 450,
            image_size: 32,
            channels: 3,
            noise: 0.1,
            multi_label: false,
            seed: 0,
        }
    }
}

/// Items are ordered so that item `i` has primary class `i % classes`.
pub fn synth_dataset(config: &SynthConfig) -> Result<Dataset> {
    if config.classes < 2 {
        return Err(Error::Config("synthetic data needs at least 2 classes".into()));
    }
    if config.image_size == 0 || config.channels == 0 || config.per_class == 0 {
        return Err(Error::Config("synthetic image size, channels and per-class count must be positive".into()));
    }
    if !(config.noise >= 0.0 && config.noise.is_finite()) {
        return Err(Error::Config(format!("noise {} must be finite and non-negative", config.noise)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let len = config.image_size * config.image_size * config.channels;
    let patterns: Vec<Vec<f32>> = (0..config.classes)
        .map(|_| (0..len).map(|_| rng.random_range(0.2f32..0.8)).collect())
        .collect();
    let noise = Normal::new(0.0, config.noise).expect("finite noise");

    let n = config.classes * config.per_class;
    let mut items = Vec::with_capacity(n);
    for i in 0..n {
        let primary = i % config.classes;
        let mut labels = vec![primary as u32];
        if config.multi_label {
            let extra = rng.random_range(0..3usize);
            for j in sample(&mut rng, config.classes, extra.min(config.classes - 1) + 1) {
                if labels.len() <= extra && j != primary {
                    labels.push(j as u32);
                }
            }
            labels.sort_unstable();
        }
        let pixels = (0..len)
            .map(|p| {
                let mean = labels.iter().map(|&l| patterns[l as usize][p]).sum::<f32>() / labels.len() as f32;
                let eps = if config.noise > 0.0 { noise.sample(&mut rng) as f32 } else { 0.0 };
                (mean + eps).clamp(0.0, 1.0)
            })
            .collect();
        items.push(Item {
            id: i as u64,
            image: Image::new(config.image_size, config.channels, pixels)?,
            labels,
            origin: Origin::Train,
        });
    }
    Dataset::new(items, config.classes)
}
