//! Training and model hyperparameters.
//!
//! Configs are TOML documents. Any key can be overridden with a dotted
//! `key=value` pair (see [`TrainConfig::with_overrides`]); unknown keys are
//! rejected by name.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("override `{0}` is not of the form key=value")]
    Override(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// How neighbor encodings are summarized into the social context.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoolingMode {
    /// Social encoding is always the zero vector.
    None,
    /// Occupancy grid of mean neighbor encodings through one affine + tanh layer.
    GridPool,
}

impl fmt::Display for PoolingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PoolingMode::None => "none",
            PoolingMode::GridPool => "grid-pool",
        })
    }
}

/// Layer widths and coordinate scaling of the encoder-decoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelDims {
    pub encoder_hidden: usize,
    pub decoder_hidden: usize,
    pub social_size: usize,
    /// Multiplier applied to anchor-relative history coordinates (1/m).
    pub input_scale: f64,
    /// Meters per unit of trajectory-head output.
    pub output_scale: f64,
    /// Adds the last observed per-step displacement to every decoded step.
    pub velocity_prior: bool,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            encoder_hidden: 64,
            decoder_hidden: 128,
            social_size: 32,
            input_scale: 0.1,
            output_scale: 1.0,
            velocity_prior: false,
        }
    }
}

/// Longitudinal x lateral occupancy grid centred on the target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub longitudinal_cells: usize,
    pub lateral_cells: usize,
    /// Cell extent along the road, meters.
    pub cell_length: f64,
    /// Cell extent across the road, meters.
    pub cell_width: f64,
    /// Nearest neighbors kept per sample.
    pub max_neighbors: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            longitudinal_cells: 13,
            lateral_cells: 3,
            cell_length: 4.572,
            cell_width: 3.7,
            max_neighbors: 12,
        }
    }
}

impl GridSpec {
    pub fn cells(&self) -> usize {
        self.longitudinal_cells * self.lateral_cells
    }

    /// Cell index of a target-relative `(lateral, longitudinal)` offset, or
    /// `None` outside the grid. Cells are numbered lateral-major.
    pub fn cell_of(&self, offset: [f64; 2]) -> Option<usize> {
        let half_lat = self.lateral_cells as f64 * self.cell_width / 2.0;
        let half_lon = self.longitudinal_cells as f64 * self.cell_length / 2.0;
        let lat = ((offset[0] + half_lat) / self.cell_width).floor();
        let lon = ((offset[1] + half_lon) / self.cell_length).floor();
        if !(lat >= 0.0 && lon >= 0.0) {
            return None;
        }
        let (lat, lon) = (lat as usize, lon as usize);
        if lat >= self.lateral_cells || lon >= self.longitudinal_cells {
            return None;
        }
        Some(lat * self.longitudinal_cells + lon)
    }
}

/// Every hyperparameter of a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Intention modes.
    #[serde(rename = "M")]
    pub intention_modes: usize,
    /// Motion modes per intention.
    #[serde(rename = "N")]
    pub motion_modes: usize,
    /// Weight of the regression term in the total loss.
    pub alpha: f64,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub history_seconds: f64,
    pub future_seconds: f64,
    pub time_step: f64,
    pub pooling: PoolingMode,
    pub probability_threshold: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    /// Train / validation / test fractions.
    pub split: [f64; 3],
    pub model: ModelDims,
    pub grid: GridSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            intention_modes: 3,
            motion_modes: 2,
            alpha: 1.0,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            epochs: 10,
            batch_size: 32,
            seed: 42,
            history_seconds: 3.0,
            future_seconds: 5.0,
            time_step: 0.2,
            pooling: PoolingMode::GridPool,
            probability_threshold: 0.1,
            grad_clip: 10.0,
            split: [0.7, 0.1, 0.2],
            model: ModelDims::default(),
            grid: GridSpec::default(),
        }
    }
}

fn whole_steps(seconds: f64, step: f64) -> Option<usize> {
    let ratio = seconds / step;
    let rounded = ratio.round();
    ((ratio - rounded).abs() < 1e-9 && rounded >= 1.0).then_some(rounded as usize)
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Self::from_toml_with_overrides(text, &[])
    }

    /// Parses `text` and applies `key=value` overrides; overrides win.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        for item in overrides {
            apply_override(&mut table, item)?;
        }
        let config: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Applies overrides to an already parsed config.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self, ConfigError> {
        Self::from_toml_with_overrides(&self.to_toml(), overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |msg: String| Err(ConfigError::Invalid(msg));
        if self.intention_modes == 0 || self.motion_modes == 0 {
            return invalid(format!(
                "M and N must be at least 1 (got M={}, N={})",
                self.intention_modes, self.motion_modes
            ));
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return invalid(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.time_step > 0.0) {
            return invalid(format!("time_step must be positive, got {}", self.time_step));
        }
        if whole_steps(self.history_seconds, self.time_step).is_none() {
            return invalid("history_seconds must be a positive multiple of time_step".into());
        }
        if whole_steps(self.future_seconds, self.time_step).is_none() {
            return invalid("future_seconds must be a positive multiple of time_step".into());
        }
        if self.batch_size == 0 {
            return invalid("batch_size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.probability_threshold) {
            return invalid(format!(
                "probability_threshold must lie in [0, 1), got {}",
                self.probability_threshold
            ));
        }
        if !(self.learning_rate > 0.0) {
            return invalid("learning_rate must be positive".into());
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return invalid("adam betas must lie in [0, 1)".into());
        }
        if !(self.grad_clip >= 0.0) {
            return invalid("grad_clip must be non-negative".into());
        }
        crate::data::validate_ratios(self.split).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let m = &self.model;
        if m.encoder_hidden == 0 || m.decoder_hidden == 0 || m.social_size == 0 {
            return invalid("model widths must be at least 1".into());
        }
        if !(m.input_scale > 0.0) || !(m.output_scale > 0.0) {
            return invalid("model scales must be positive".into());
        }
        let g = &self.grid;
        if g.longitudinal_cells == 0 || g.lateral_cells == 0 || !(g.cell_length > 0.0) || !(g.cell_width > 0.0) {
            return invalid("grid dimensions must be positive".into());
        }
        Ok(())
    }

    /// Total candidate count M x N.
    pub fn mode_count(&self) -> usize {
        self.intention_modes * self.motion_modes
    }

    /// History points including the current one.
    pub fn history_len(&self) -> usize {
        whole_steps(self.history_seconds, self.time_step).expect("validated") + 1
    }

    /// Future points H.
    pub fn horizon(&self) -> usize {
        whole_steps(self.future_seconds, self.time_step).expect("validated")
    }

    /// Frames spanned by one sample window.
    pub fn window_len(&self) -> usize {
        self.history_len() + self.horizon()
    }
}

fn apply_override(table: &mut toml::Table, item: &str) -> Result<(), ConfigError> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| ConfigError::Override(item.to_string()))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(ConfigError::Override(item.to_string()));
    }
    let value = parse_value(raw.trim());
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("split yields at least one part");
    let mut cursor = table;
    for part in parts {
        let entry = cursor
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cursor = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError::Invalid(format!("`{part}` in `{key}` is not a table")))?;
    }
    cursor.insert(last.to_string(), value);
    Ok(())
}

/// Interprets an override value as a TOML literal, falling back to a string.
fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}
