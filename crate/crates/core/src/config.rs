//! Tracker configuration and its flat `key = value` file format.
//!
//! ```text
//! # comments start with '#'
//! stage1.mode = adaptive
//! stage1.match_min = 0.85
//! stage2.provider = cosine
//! lifecycle.enabled_mv_aware = true
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{MotsError, Result};
use crate::lifecycle::LifecycleConfig;
use crate::stage1::Stage1Config;
use crate::stage2::Stage2Config;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage1Mode {
    Adaptive,
    Hungarian,
    Off,
}

impl FromStr for Stage1Mode {
    type Err = MotsError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "adaptive" | "sa" => Ok(Stage1Mode::Adaptive),
            "hungarian" | "h" => Ok(Stage1Mode::Hungarian),
            "off" | "none" => Ok(Stage1Mode::Off),
            other => Err(MotsError::Config(format!("unknown stage 1 mode {other:?}"))),
        }
    }
}

impl fmt::Display for Stage1Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage1Mode::Adaptive => "adaptive",
            Stage1Mode::Hungarian => "hungarian",
            Stage1Mode::Off => "off",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProviderKind {
    Cosine,
    Precomputed,
    None,
}

impl FromStr for ProviderKind {
    type Err = MotsError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cosine" => Ok(ProviderKind::Cosine),
            "precomputed" => Ok(ProviderKind::Precomputed),
            "none" | "off" => Ok(ProviderKind::None),
            other => Err(MotsError::Config(format!("unknown stage 2 provider {other:?}"))),
        }
    }
}

impl fmt::Display for ProviderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProviderKind::Cosine => "cosine",
            ProviderKind::Precomputed => "precomputed",
            ProviderKind::None => "none",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerConfig {
    pub stage1_mode: Stage1Mode,
    pub stage1: Stage1Config,
    /// Maximum `1 - iou` cost accepted by the Hungarian baseline.
    pub baseline_gate: f64,
    pub provider: ProviderKind,
    pub stage2: Stage2Config,
    pub scores_path: Option<PathBuf>,
    pub lifecycle: LifecycleConfig,
    /// Detections below this confidence are dropped before association.
    pub min_confidence: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            stage1_mode: Stage1Mode::Adaptive,
            stage1: Stage1Config::default(),
            baseline_gate: 0.7,
            provider: ProviderKind::Cosine,
            stage2: Stage2Config::default(),
            scores_path: None,
            lifecycle: LifecycleConfig::default(),
            min_confidence: 0.0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| MotsError::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(MotsError::Config(format!("{key}: expected a boolean, got {value:?}"))),
    }
}

/// Parses `WxH` (e.g. `1920x1080`).
pub fn parse_image_size(s: &str) -> Result<(f64, f64)> {
    let (w, h) = s
        .trim()
        .split_once(['x', 'X'])
        .ok_or_else(|| MotsError::Config(format!("image size must look like WxH, got {s:?}")))?;
    let w: f64 = parse("image size", w)?;
    let h: f64 = parse("image size", h)?;
    if !(w > 0.0 && h > 0.0) {
        return Err(MotsError::Config(format!("image size must be positive, got {s:?}")));
    }
    Ok((w, h))
}

impl TrackerConfig {
    /// Sets one key. Unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        match key {
            "stage1.mode" => self.stage1_mode = value.parse()?,
            "stage1.t_n1" => self.stage1.t_n1 = parse(key, value)?,
            "stage1.throd_min" => self.stage1.throd_min = parse(key, value)?,
            "stage1.match_min" => self.stage1.match_min = parse(key, value)?,
            "stage1.norm_cap" => self.stage1.norm_cap = parse(key, value)?,
            "baseline.gate" => self.baseline_gate = parse(key, value)?,
            "stage2.provider" => self.provider = value.parse()?,
            "stage2.sim_min" => self.stage2.sim_min = parse(key, value)?,
            "stage2.scores_path" => self.scores_path = Some(PathBuf::from(value.trim())),
            "lifecycle.enabled_mv_aware" => self.lifecycle.mv_aware = parse_bool(key, value)?,
            "lifecycle.init_hits" => self.lifecycle.init_hits = parse(key, value)?,
            "lifecycle.t_n2" => self.lifecycle.t_n2 = parse(key, value)?,
            "lifecycle.throd_del1" => self.lifecycle.throd_del1 = parse(key, value)?,
            "lifecycle.throd_del2" => self.lifecycle.throd_del2 = parse(key, value)?,
            "lifecycle.boundary_factor" => self.lifecycle.boundary_factor = parse(key, value)?,
            "lifecycle.max_age" => self.lifecycle.max_age = parse(key, value)?,
            "lifecycle.image_size" => self.lifecycle.image_size = Some(parse_image_size(value)?),
            "min_confidence" => self.min_confidence = parse(key, value)?,
            _ => return Err(MotsError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text` on top of the current values.
    pub fn apply_str(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| MotsError::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k, v)
                .map_err(|e| MotsError::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| MotsError::io(path, e))?;
        let mut cfg = TrackerConfig::default();
        cfg.apply_str(&text)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.stage1.validate()?;
        self.stage2.validate()?;
        self.lifecycle.validate()?;
        if !(0.0..=1.0).contains(&self.baseline_gate) {
            return Err(MotsError::Config(format!(
                "baseline.gate must be in [0, 1], got {}",
                self.baseline_gate
            )));
        }
        if self.provider == ProviderKind::Precomputed && self.scores_path.is_none() {
            return Err(MotsError::Config(
                "stage2.provider = precomputed needs stage2.scores_path".into(),
            ));
        }
        Ok(())
    }

    /// The config as `key = value` lines, readable by [`TrackerConfig::apply_str`].
    pub fn to_key_values(&self) -> String {
        let mut lines = vec![
            format!("stage1.mode = {}", self.stage1_mode),
            format!("stage1.t_n1 = {}", self.stage1.t_n1),
            format!("stage1.throd_min = {}", self.stage1.throd_min),
            format!("stage1.match_min = {}", self.stage1.match_min),
            format!("stage1.norm_cap = {}", self.stage1.norm_cap),
            format!("baseline.gate = {}", self.baseline_gate),
            format!("stage2.provider = {}", self.provider),
            format!("stage2.sim_min = {}", self.stage2.sim_min),
        ];
        if let Some(p) = &self.scores_path {
            lines.push(format!("stage2.scores_path = {}", p.display()));
        }
        lines.extend([
            format!("lifecycle.enabled_mv_aware = {}", self.lifecycle.mv_aware),
            format!("lifecycle.init_hits = {}", self.lifecycle.init_hits),
            format!("lifecycle.t_n2 = {}", self.lifecycle.t_n2),
            format!("lifecycle.throd_del1 = {}", self.lifecycle.throd_del1),
            format!("lifecycle.throd_del2 = {}", self.lifecycle.throd_del2),
            format!("lifecycle.boundary_factor = {}", self.lifecycle.boundary_factor),
            format!("lifecycle.max_age = {}", self.lifecycle.max_age),
        ]);
        if let Some((w, h)) = self.lifecycle.image_size {
            lines.push(format!("lifecycle.image_size = {w}x{h}"));
        }
        lines.push(format!("min_confidence = {}", self.min_confidence));
        lines.join("\n") + "\n"
    }
}
