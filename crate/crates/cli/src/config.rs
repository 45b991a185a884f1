//! Run configuration: built-in defaults, an optional JSON file, then flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vts_core::data::ProtocolSpec;
use vts_core::head::FeatureMode;
use vts_core::objectives::{LossConfig, ObjectiveKind};
use vts_core::train::TrainConfig;
use vts_core::vit::VitConfig;

use crate::error::{CliError, CliResult};

pub const DEFAULT_MODEL: &str = "tiny";
pub const DEFAULT_OBJECTIVE: ObjectiveKind = ObjectiveKind::Csq;
pub const DEFAULT_BITS: usize = 16;
pub const DEFAULT_PROTOCOL: &str = "synth";

/// Keys accepted in a `--config` file. Every key is optional.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub model: Option<String>,
    /// Full encoder settings; overrides `model`.
    pub vit: Option<VitConfig>,
    pub objective: Option<ObjectiveKind>,
    /// Per-objective constants.
    pub loss: Option<LossConfig>,
    pub bits: Option<usize>,
    pub feature_mode: Option<FeatureMode>,
    pub head_hidden_dim: Option<usize>,
    pub protocol: Option<String>,
    pub data: Option<PathBuf>,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub eval_every: Option<usize>,
    pub lr: Option<f64>,
    pub exclude_self: Option<bool>,
    pub out: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("config {}: {e}", path.display())))
    }
}

/// Flag values for `train`; `None` falls through to the file, then the default.
#[derive(Clone, Debug, Default)]
pub struct TrainFlags {
    pub model: Option<String>,
    pub objective: Option<ObjectiveKind>,
    pub bits: Option<usize>,
    pub feature_mode: Option<FeatureMode>,
    pub protocol: Option<String>,
    pub data: Option<PathBuf>,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub eval_every: Option<usize>,
    pub lr: Option<f64>,
    pub exclude_self: bool,
    pub out: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
}

/// Everything a training run uses, echoed into the metrics CSV.
#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub protocol: ProtocolSpec,
    pub out: PathBuf,
    pub metrics: PathBuf,
    pub train: TrainConfig,
}

pub fn model_config(name: &str) -> CliResult<VitConfig> {
    match name {
        "tiny" => Ok(VitConfig::tiny()),
        "vts16" | "16" => Ok(VitConfig::vts16()),
        "vts32" | "32" => Ok(VitConfig::vts32()),
        _ => Err(CliError::config(format!("unknown model '{name}' (tiny, vts16, vts32)"))),
    }
}

pub fn resolve_train(flags: TrainFlags, file: FileConfig) -> CliResult<RunConfig> {
    let mut cfg = TrainConfig::default();
    cfg.vit = match (&flags.model, &file.vit, &file.model) {
        (Some(m), _, _) => model_config(m)?,
        (None, Some(v), _) => v.clone(),
        (None, None, m) => model_config(m.as_deref().unwrap_or(DEFAULT_MODEL))?,
    };
    cfg.loss = file.loss.unwrap_or_default();
    cfg.loss.objective = flags.objective.or(file.objective).unwrap_or(DEFAULT_OBJECTIVE);
    cfg.head.bits = flags.bits.or(file.bits).unwrap_or(DEFAULT_BITS);
    if let Some(mode) = flags.feature_mode.or(file.feature_mode) {
        cfg.head.feature_mode = mode;
    }
    if let Some(h) = file.head_hidden_dim {
        cfg.head.hidden_dim = h;
    }
    if let Some(v) = flags.seed.or(file.seed) {
        cfg.seed = v;
    }
    if let Some(v) = flags.epochs.or(file.epochs) {
        cfg.epochs = v;
    }
    if let Some(v) = flags.batch_size.or(file.batch_size) {
        cfg.batch_size = v;
    }
    match flags.eval_every.or(file.eval_every) {
        Some(v) => cfg.eval_every = v,
        // the default period never outruns a short run
        None => cfg.eval_every = cfg.eval_every.min(cfg.epochs.max(1)),
    }
    if let Some(v) = flags.lr.or(file.lr) {
        cfg.adam.lr = v;
    }
    cfg.exclude_self = flags.exclude_self || file.exclude_self.unwrap_or(false);
    let protocol = flags.protocol.or(file.protocol).unwrap_or_else(|| DEFAULT_PROTOCOL.into());
    let protocol = ProtocolSpec::resolve(&protocol).map_err(|e| CliError::config(e.to_string()))?;
    cfg.map_cutoff = Some(protocol.cutoff);
    cfg.validate().map_err(|e| CliError::config(e.to_string()))?;
    let out = flags.out.or(file.out).unwrap_or_else(|| PathBuf::from("model.vtsw"));
    let metrics = flags.metrics.or(file.metrics).unwrap_or_else(|| out.with_extension("csv"));
    Ok(RunConfig {
        data: flags.data.or(file.data),
        protocol,
        out,
        metrics,
        train: cfg,
    })
}
