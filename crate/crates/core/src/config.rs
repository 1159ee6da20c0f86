//! Top-level JSON configuration shared by the command line and the bench.
//!
//! Every section falls back to its defaults, so `{}` is a valid config.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bench::BenchPlan;
use crate::calibration::CalibrationConfig;
use crate::error::{Error, Result};
use crate::estimator::EstimatorConfig;
use crate::model::DefocusGeometry;
use crate::optics::OpticsParams;
use crate::seed::{self, Stream};
use crate::slide::SlideSpec;
use crate::survey::SurveyConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    /// Top-level seed; every stream is derived from it.
    pub seed: u64,
    pub slide: SlideSpec,
    pub geometry: DefocusGeometry,
    pub optics: OpticsParams,
    pub estimator: EstimatorConfig,
    pub calibration: CalibrationConfig,
    pub survey: SurveyConfig,
    pub bench: BenchPlan,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            slide: SlideSpec::default(),
            geometry: DefocusGeometry::default(),
            optics: OpticsParams::default(),
            estimator: EstimatorConfig::default(),
            calibration: CalibrationConfig::default(),
            survey: SurveyConfig::default(),
            bench: BenchPlan::default(),
        }
    }
}

impl AppConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.slide.validate()?;
        self.geometry.validate()?;
        self.optics.validate()?;
        self.survey.validate()?;
        self.bench.validate()?;
        if (self.slide.pixel_pitch - self.geometry.pixel_pitch).abs() > 1e-12 {
            return Err(Error::Config(
                "slide.pixel_pitch and geometry.pixel_pitch differ".into(),
            ));
        }
        Ok(())
    }

    /// Seed of the surveyed slide.
    pub fn slide_seed(&self) -> u64 {
        seed::derive(self.seed, Stream::Slide, &[])
    }

    /// Seed of the calibration captures.
    pub fn calibration_seed(&self) -> u64 {
        seed::derive(self.seed, Stream::Calibration, &[])
    }

    /// Seed of the survey captures.
    pub fn survey_seed(&self) -> u64 {
        seed::derive(self.seed, Stream::Survey, &[])
    }

    /// Seed of the oracle z-stacks.
    pub fn oracle_seed(&self) -> u64 {
        seed::derive(self.seed, Stream::Kohler, &[])
    }
}

/// Flat stained target with one tile per calibration distance, sharing the
/// tile size, pitch and texture statistics of `slide`.
pub fn calibration_target(slide: &SlideSpec, cfg: &CalibrationConfig) -> SlideSpec {
    SlideSpec::flat(1, cfg.d_values.len().max(1)).with_optics_of(slide)
}

impl SlideSpec {
    /// Copy the imaging-related fields (tile size, pitch, texture) of `other`.
    pub fn with_optics_of(self, other: &SlideSpec) -> Self {
        Self {
            tile_px: other.tile_px,
            pixel_pitch: other.pixel_pitch,
            texture_kind: other.texture_kind,
            texture_sigma_px: other.texture_sigma_px,
            ..self
        }
    }
}
