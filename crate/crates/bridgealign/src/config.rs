//! Run configuration: a single JSON document covering simulation, training,
//! evaluation, and sweep settings. Unknown fields are rejected so typos fail
//! loudly instead of silently using defaults.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulator::SimConfig;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Inference window length for stitched tracking.
    pub window: usize,
    pub temperature: f64,
    /// Feature-noise levels at which to report association accuracy.
    pub track_noise_levels: Vec<f64>,
    /// Bridge-deviation scale for the tracking videos; small values keep
    /// adjacent-frame matching unambiguous so the noise-free case is exact.
    pub track_motion_scale: f64,
    /// Videos held out for evaluation (generated after the training set).
    pub held_out_videos: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            window: 3,
            temperature: 1.0,
            track_noise_levels: vec![0.0, 0.05, 0.2],
            track_motion_scale: 0.05,
            held_out_videos: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub delta_grid: Vec<f64>,
    pub frames_grid: Vec<usize>,
    /// Training epochs per sweep cell (kept small; the sweep is a survey).
    pub epochs: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            delta_grid: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            frames_grid: vec![3, 5, 7],
            epochs: 20,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub sim: SimConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.train.validate()?;
        if self.eval.window < 2 {
            return Err(Error::InvalidConfig("eval.window must be >= 2".into()));
        }
        if self.eval.temperature <= 0.0 {
            return Err(Error::InvalidConfig("eval.temperature must be > 0".into()));
        }
        if self.eval.track_motion_scale < 0.0 {
            return Err(Error::InvalidConfig(
                "eval.track_motion_scale must be >= 0".into(),
            ));
        }
        if self.sweep.delta_grid.is_empty() || self.sweep.frames_grid.is_empty() {
            return Err(Error::InvalidConfig("sweep grids must be non-empty".into()));
        }
        if self
            .sweep
            .delta_grid
            .iter()
            .any(|&d| !(0.0..=1.0).contains(&d))
        {
            return Err(Error::InvalidConfig(
                "sweep.delta_grid values must be in [0, 1]".into(),
            ));
        }
        if self.sweep.frames_grid.iter().any(|&t| t < 3) {
            return Err(Error::InvalidConfig(
                "sweep.frames_grid values must be >= 3".into(),
            ));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.sim.categories, 20);
        assert_eq!(cfg.sim.instances_per_category, 40);
        assert_eq!(cfg.sim.frames, 9);
        assert_eq!(cfg.sim.seed, 7);
        assert_eq!(cfg.train.delta, 0.5);
        assert_eq!(cfg.train.k, 5);
        assert_eq!(cfg.sweep.delta_grid.len() * cfg.sweep.frames_grid.len(), 15);
    }

    #[test]
    fn empty_object_uses_defaults() {
        let cfg = RunConfig::from_json("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn partial_override() {
        let cfg =
            RunConfig::from_json(r#"{"sim": {"frames": 5}, "train": {"delta": 0.3}}"#).unwrap();
        assert_eq!(cfg.sim.frames, 5);
        assert_eq!(cfg.sim.categories, 20);
        assert_eq!(cfg.train.delta, 0.3);
    }

    #[test]
    fn unknown_field_rejected() {
        assert!(RunConfig::from_json(r#"{"simm": {}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"sim": {"framez": 5}}"#).is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::from_json(r#"{"eval": {"window": 1}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"sweep": {"delta_grid": [1.5]}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"train": {"temperature": 0.0}}"#).is_err());
    }

    #[test]
    fn round_trips_through_json() {
        let cfg = RunConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);
    }
}
