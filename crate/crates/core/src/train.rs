//! Fine-tuning loop: seeded shuffling, Adam updates, periodic retrieval
//! evaluation, best-checkpoint retention and resumable checkpoints.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Normalization, Split};
use crate::error::{Error, Result};
use crate::head::{FeatureMode, HashHeadConfig};
use crate::image::Image;
use crate::model::{sidecar_path, HashModel, ModelMeta};
use crate::objectives::{LossConfig, Objective};
use crate::optim::{Adam, AdamConfig};
use crate::params::Parameters;
use crate::retrieval::{map_at_k, MapOptions};
use crate::tensor::Tensor;
use crate::vit::{Mode, VitConfig};
use crate::weights::{self, NamedTensor};

pub const METRICS_HEADER: &str = "epoch,split,loss,map";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub vit: VitConfig,
    pub head: HashHeadConfig,
    pub loss: LossConfig,
    pub adam: AdamConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub eval_every: usize,
    pub seed: u64,
    pub normalization: Normalization,
    /// Retrieved items per query for mAP; `None` uses the whole database.
    pub map_cutoff: Option<usize>,
    pub exclude_self: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            vit: VitConfig::tiny(),
            head: HashHeadConfig::new(16, FeatureMode::All),
            loss: LossConfig::default(),
            adam: AdamConfig::default(),
            epochs: 150,
            batch_size: 32,
            eval_every: 30,
            seed: 0,
            normalization: Normalization::default(),
            map_cutoff: None,
            exclude_self: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.vit.validate()?;
        self.head.validate()?;
        self.loss.validate()?;
        self.adam.validate()?;
        self.normalization.validate(self.vit.channels)?;
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.eval_every == 0 || self.eval_every > self.epochs {
            return Err(Error::Config(format!(
                "eval_every must lie in 1..={}, got {}",
                self.epochs, self.eval_every
            )));
        }
        if self.map_cutoff == Some(0) {
            return Err(Error::Config("map cutoff must be positive".into()));
        }
        Ok(())
    }
}

/// Progress that, together with parameters and moments, fully determines
/// the rest of a run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps.
    pub step: u64,
    /// Metric CSV data rows so far.
    pub rows: Vec<String>,
    pub train_loss: Vec<f64>,
    pub evals: Vec<(usize, f64)>,
    pub best_epoch: Option<usize>,
    pub best_map: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointMeta {
    config: TrainConfig,
    state: TrainState,
}

/// Model and objective parameters updated together.
struct Trainable<'a> {
    model: &'a mut HashModel<f32>,
    objective: &'a mut Objective<f32>,
}

impl Parameters<f32> for Trainable<'_> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor<f32>)) {
        self.model.visit(f);
        self.objective.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<f32>)) {
        self.model.visit_mut(f);
        self.objective.visit_mut(f);
    }
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(epoch as u64).to_le_bytes());
    key[16..23].copy_from_slice(b"shuffle");
    ChaCha8Rng::from_seed(key)
}

pub struct Trainer<'a> {
    pub config: TrainConfig,
    dataset: &'a Dataset,
    pub model: HashModel<f32>,
    pub objective: Objective<f32>,
    adam: Adam<f32>,
    pub state: TrainState,
    best: Option<Vec<NamedTensor>>,
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig, dataset: &'a Dataset) -> Result<Self> {
        config.validate()?;
        for split in [Split::Train, Split::Query, Split::Database] {
            if dataset.split(split)?.is_empty() {
                return Err(Error::Config(format!("{split:?} split is empty")));
            }
        }
        if let Some(first) = dataset.items.first() {
            if first.image.channels() != config.vit.channels {
                return Err(Error::Config(format!(
                    "dataset images have {} channels, model expects {}",
                    first.image.channels(),
                    config.vit.channels
                )));
            }
        }
        let model = HashModel::new(config.vit.clone(), config.head.clone(), config.seed)?;
        let objective = Objective::new(
            config.loss.clone(),
            config.head.bits,
            dataset.num_classes,
            config.seed.wrapping_add(2),
        )?;
        Ok(Self {
            adam: Adam::new(config.adam),
            config,
            dataset,
            model,
            objective,
            state: TrainState::default(),
            best: None,
        })
    }

    pub fn is_finished(&self) -> bool {
        self.state.epoch >= self.config.epochs
    }

    fn batches(&self, epoch: usize) -> Result<Vec<Vec<usize>>> {
        let mut order = self.dataset.split(Split::Train)?.to_vec();
        order.shuffle(&mut epoch_rng(self.config.seed, epoch));
        let mut batches: Vec<Vec<usize>> = order.chunks(self.config.batch_size).map(<[usize]>::to_vec).collect();
        if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) && self.objective.is_pairwise() {
            let last = batches.pop().unwrap();
            batches.last_mut().unwrap().extend(last);
        }
        Ok(batches)
    }

    fn train_step(&mut self, batch: &[usize]) -> Result<f64> {
        let size = self.config.vit.image_size;
        let norm = &self.config.normalization;
        let images: Vec<Image> = batch.iter().map(|&i| norm.prepare(&self.dataset.items[i].image, size)).collect();
        let refs: Vec<&Image> = images.iter().collect();
        let labels = self.dataset.labels_of(batch);
        let step = self.state.step;
        let mode = Mode::Train {
            seed: self.config.seed,
            step,
        };
        let h = self.model.features(&self.model.encoder.patch_batch(&refs)?, mode)?;
        let loss = self.objective.loss(&h, &labels, step)?;
        let value = loss.item()? as f64;
        if !value.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss at epoch {} step {step}",
                self.state.epoch + 1
            )));
        }
        loss.backward()?;
        let mut params = Trainable {
            model: &mut self.model,
            objective: &mut self.objective,
        };
        self.adam.step(&mut params)?;
        self.state.step += 1;
        Ok(value)
    }

    /// mAP of the current model on the query split against the database.
    pub fn evaluate(&self) -> Result<f64> {
        let norm = &self.config.normalization;
        let q = self.model.encode_items(self.dataset, self.dataset.split(Split::Query)?, norm)?;
        let db = self.model.encode_items(self.dataset, self.dataset.split(Split::Database)?, norm)?;
        let cutoff = self.config.map_cutoff.unwrap_or(db.len());
        let opts = MapOptions {
            exclude_self: self.config.exclude_self,
            ..MapOptions::at(cutoff)
        };
        Ok(map_at_k(&q, &db, opts)?.map)
    }

    /// Trains one epoch (evaluating when due) and returns its new log rows.
    pub fn run_epoch(&mut self) -> Result<Vec<String>> {
        if self.is_finished() {
            return Ok(Vec::new());
        }
        let epoch = self.state.epoch + 1;
        let mut total = 0.0;
        let mut count = 0;
        for batch in self.batches(epoch)? {
            total += self.train_step(&batch)? * batch.len() as f64;
            count += batch.len();
        }
        let loss = total / count as f64;
        let mut rows = vec![format!("{epoch},train,{loss:.6},")];
        self.state.train_loss.push(loss);
        if epoch % self.config.eval_every == 0 || epoch == self.config.epochs {
            let map = self.evaluate()?;
            rows.push(format!("{epoch},query,,{map:.6}"));
            self.state.evals.push((epoch, map));
            if self.state.best_map.is_none_or(|b| map > b) {
                self.state.best_map = Some(map);
                self.state.best_epoch = Some(epoch);
                self.best = Some(self.trainable_tensors());
            }
        }
        self.state.epoch = epoch;
        self.state.rows.extend(rows.iter().cloned());
        Ok(rows)
    }

    /// Runs the remaining epochs, passing each new log row to `on_row`.
    pub fn run(&mut self, mut on_row: impl FnMut(&str)) -> Result<()> {
        while !self.is_finished() {
            for row in self.run_epoch()? {
                on_row(&row);
            }
        }
        Ok(())
    }

    pub fn config_line(&self) -> Result<String> {
        Ok(format!("# config: {}", serde_json::to_string(&self.config)?))
    }

    /// Full metric CSV: config comment, header and all rows so far.
    pub fn metric_log(&self) -> Result<String> {
        let mut out = self.config_line()? + "\n" + METRICS_HEADER + "\n";
        for row in &self.state.rows {
            out.push_str(row);
            out.push('\n');
        }
        Ok(out)
    }

    fn trainable_tensors(&self) -> Vec<NamedTensor> {
        let mut t = self.model.to_named_tensors();
        t.extend(self.objective.to_named_tensors());
        t
    }

    /// Model at the best evaluation so far (current model if none yet).
    pub fn best_model(&self) -> Result<HashModel<f32>> {
        let Some(best) = &self.best else {
            return Ok(self.model.clone());
        };
        let mut map = weights::into_map(best.clone());
        let mut model = self.model.clone();
        model.assign_from(&mut map)?;
        Ok(model)
    }

    pub fn model_meta(&self) -> ModelMeta {
        ModelMeta {
            vit: self.config.vit.clone(),
            head: self.config.head.clone(),
            normalization: self.config.normalization.clone(),
            epoch: self.state.best_epoch,
            map: self.state.best_map,
        }
    }

    /// Writes the best model (with any objective tensors) and its sidecar.
    pub fn save_best(&self, path: &Path) -> Result<()> {
        let model = self.best_model()?;
        let objective: Vec<NamedTensor> = match &self.best {
            Some(best) => best.iter().filter(|t| t.name.starts_with("objective.")).cloned().collect(),
            None => self.objective.to_named_tensors(),
        };
        model.save_with(path, &self.model_meta(), &objective)
    }

    /// Parameters, optimizer moments and best snapshot in one weight file,
    /// with config and progress in the `.json` sidecar.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let params = Trainable {
            model: &mut self.model.clone(),
            objective: &mut self.objective.clone(),
        };
        let mut tensors = self.trainable_tensors();
        tensors.extend(self.adam.to_named_tensors(&params));
        if let Some(best) = &self.best {
            tensors.extend(best.iter().map(|t| NamedTensor::new(format!("best.{}", t.name), t.shape.clone(), t.data.clone())));
        }
        weights::write_weights(path, &tensors)?;
        let meta = CheckpointMeta {
            config: self.config.clone(),
            state: self.state.clone(),
        };
        let side = sidecar_path(path);
        std::fs::write(&side, serde_json::to_string_pretty(&meta)? + "\n").map_err(|e| Error::io(&side, e))
    }

    pub fn resume(path: &Path, dataset: &'a Dataset) -> Result<Self> {
        let side = sidecar_path(path);
        let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let meta: CheckpointMeta = serde_json::from_str(&text)?;
        let mut trainer = Self::new(meta.config, dataset)?;
        let mut map = weights::into_map(weights::read_weights(path)?);
        let mut params = Trainable {
            model: &mut trainer.model,
            objective: &mut trainer.objective,
        };
        params.assign_from(&mut map)?;
        trainer.adam.restore(meta.state.step, &params, &mut map)?;
        let best_keys: Vec<String> = map.keys().filter(|k| k.starts_with("best.")).cloned().collect();
        if !best_keys.is_empty() {
            let mut best = BTreeMap::new();
            for k in best_keys {
                let mut t = map.remove(&k).unwrap();
                t.name = k["best.".len()..].to_string();
                best.insert(t.name.clone(), t);
            }
            let order: Vec<NamedTensor> = trainer
                .trainable_tensors()
                .into_iter()
                .map(|t| best.remove(&t.name).ok_or(Error::MissingTensors(vec![format!("best.{}", t.name)])))
                .collect::<Result<_>>()?;
            if !best.is_empty() {
                return Err(Error::UnknownTensors(best.into_keys().map(|k| format!("best.{k}")).collect()));
            }
            trainer.best = Some(order);
        }
        weights::ensure_consumed(&map)?;
        trainer.state = meta.state;
        Ok(trainer)
    }
}
