//! Pipeline configuration: a TOML document whose every key has a default.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::GRAPH_RATE;
use crate::error::{Error, Result};
use crate::metrics::{WelchConfig, HIGH_BAND, LEV_GRID, LOW_BAND};
use crate::model::ModelConfig;
use crate::post::{EYEMMV_T0, EYEMMV_T1, MIN_FIXATION};
use crate::synth::{GazePolicy, ScriptConfig};
use crate::train::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AppearanceKind {
    /// Gaze appearance read from detections rasterised onto the mask grid.
    Grid,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DtwScale {
    Pixels,
    Normalized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub train_sequences: usize,
    pub val_sequences: usize,
    pub test_sequences: usize,
    /// Scripted observers per test sequence.
    pub observers: usize,
    /// Steps between consecutive training windows.
    pub stride: usize,
    pub appearance: AppearanceKind,
    pub script: ScriptConfig,
    pub policy: GazePolicy,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            train_sequences: 200,
            val_sequences: 20,
            test_sequences: 10,
            observers: 4,
            stride: 20,
            appearance: AppearanceKind::Grid,
            script: ScriptConfig::default(),
            policy: GazePolicy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub base_lr: f64,
    pub odn_lr_multiplier: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            base_lr: t.base_lr,
            odn_lr_multiplier: t.odn_lr_multiplier,
            weight_decay: t.weight_decay,
            batch_size: t.batch_size,
            epochs: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub horizon: usize,
    pub runs: usize,
    pub record_weights: bool,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            horizon: 100,
            runs: 10,
            record_weights: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixateSection {
    pub t0: f64,
    pub t1: f64,
    pub min_duration: f64,
}

impl Default for FixateSection {
    fn default() -> Self {
        Self {
            t0: EYEMMV_T0,
            t1: EYEMMV_T1,
            min_duration: MIN_FIXATION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SaliencySection {
    pub width: usize,
    pub height: usize,
}

impl Default for SaliencySection {
    fn default() -> Self {
        Self { width: 160, height: 80 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    /// AOI radius as a fraction of image width.
    pub aoi_radius: f64,
    /// Half-width of the gaze-state window (s).
    pub state_window: f64,
    pub lev_grid: (usize, usize),
    pub dtw_scale: DtwScale,
    pub welch: WelchConfig,
    pub low_band: (f64, f64),
    pub high_band: (f64, f64),
}

impl Default for EvaluateSection {
    fn default() -> Self {
        Self {
            aoi_radius: 0.1,
            state_window: 0.5,
            lev_grid: LEV_GRID,
            dtw_scale: DtwScale::Pixels,
            welch: WelchConfig::default(),
            low_band: LOW_BAND,
            high_band: HIGH_BAND,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Window length `T` in graph steps.
    pub window: usize,
    /// Temporal edge offsets.
    pub t_d: Vec<usize>,
    /// Graph rate (Hz).
    pub rate: f64,
    pub frame_dims: (f64, f64),
    pub data: DataSection,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub simulate: SimulateSection,
    pub fixate: FixateSection,
    pub saliency: SaliencySection,
    pub evaluate: EvaluateSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            window: 10,
            t_d: vec![1, 2, 4, 8],
            rate: GRAPH_RATE,
            frame_dims: (640.0, 320.0),
            data: DataSection::default(),
            model: ModelConfig {
                d: 64,
                ffn_hidden: 128,
                ..ModelConfig::default()
            },
            train: TrainSection::default(),
            simulate: SimulateSection::default(),
            fixate: FixateSection::default(),
            saliency: SaliencySection::default(),
            evaluate: EvaluateSection::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if d.train_sequences == 0 || d.val_sequences == 0 || d.test_sequences == 0 {
            return Err(Error::Config("data: every split needs at least one sequence".into()));
        }
        if d.observers < 2 {
            return Err(Error::Config("data.observers must be at least 2".into()));
        }
        if d.stride == 0 {
            return Err(Error::Config("data.stride must be at least 1".into()));
        }
        if d.script.min_objects > d.script.max_objects {
            return Err(Error::Config("data.script.min_objects exceeds max_objects".into()));
        }
        if !(self.frame_dims.0 > 0.0 && self.frame_dims.1 > 0.0) {
            return Err(Error::Config("frame_dims must be positive".into()));
        }
        if self.saliency.width == 0 || self.saliency.height == 0 {
            return Err(Error::Config("saliency size must be positive".into()));
        }
        if self.fixate.t1 > self.fixate.t0 {
            return Err(Error::Config("fixate.t1 must not exceed fixate.t0".into()));
        }
        if !(self.evaluate.aoi_radius > 0.0) {
            return Err(Error::Config("evaluate.aoi_radius must be positive".into()));
        }
        let steps = (d.script.duration * self.rate).floor() as usize;
        if steps < self.window + self.simulate.horizon {
            return Err(Error::Config(format!(
                "sequences of {steps} steps cannot hold window {} plus horizon {}",
                self.window, self.simulate.horizon
            )));
        }
        self.train_config().validate()?;
        self.rollout_config().validate()
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            base_lr: t.base_lr,
            odn_lr_multiplier: t.odn_lr_multiplier,
            weight_decay: t.weight_decay,
            batch_size: t.batch_size,
            epochs: t.epochs,
            seed: self.seed,
            model: self.model.clone(),
            window: self.window,
            offsets: self.t_d.clone(),
        }
    }

    pub fn rollout_config(&self) -> crate::simulate::RolloutConfig {
        crate::simulate::RolloutConfig {
            horizon: self.simulate.horizon,
            runs: self.simulate.runs,
            seed: self.seed,
            window: self.window,
            offsets: self.t_d.clone(),
            record_weights: self.simulate.record_weights,
            rate: self.rate,
            frame_dims: self.frame_dims,
        }
    }

    /// Apply `key.path=value` overrides, where the value is a TOML literal
    /// (bare words are taken as strings).
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        let mut tree = toml::Value::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not of the form key=value")))?;
            set_path(&mut tree, key.trim(), parse_literal(raw.trim()))?;
        }
        from_tree(tree)
    }
}

fn parse_literal(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(tree: &mut toml::Value, key: &str, value: toml::Value) -> Result<()> {
    let mut node = tree;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{}` is not a table", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            table.insert((*part).to_string(), value);
            return Ok(());
        }
        node = table
            .entry((*part).to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    Ok(())
}

// user values laid over the serialised defaults, so nested sections keep
// the pipeline's defaults rather than their own
fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn from_tree(tree: toml::Value) -> Result<PipelineConfig> {
    let cfg: PipelineConfig = tree
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.message().trim().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Parse TOML text over the defaults; unknown keys and type mismatches are
/// configuration errors.
pub fn parse_config_str(text: &str) -> Result<PipelineConfig> {
    let user: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.message().trim().to_string()))?;
    let mut tree = toml::Value::try_from(PipelineConfig::default()).map_err(|e| Error::Config(e.to_string()))?;
    merge(&mut tree, toml::Value::Table(user));
    from_tree(tree)
}

pub fn parse_config(path: &Path) -> Result<PipelineConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text)
}

/// The full configuration as TOML, readable by [`parse_config_str`].
pub fn to_toml(cfg: &PipelineConfig) -> String {
    toml::to_string(cfg).unwrap_or_default()
}
