//! Empirical defocus-to-separation calibration on a flat target.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimator::{estimate_shift_with, EstimatorConfig, LagWindow};
use crate::model::{DefocusGeometry, TileIndex, Units};
use crate::optics::{render_dual_led, CaptureRequest, OpticsParams};
use crate::seed::{self, Stream};
use crate::slide::SlideModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FitModel {
    #[default]
    Linear,
    /// Straight segments between the accepted calibration points.
    PiecewiseLinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    /// Calibration defocus distances, um.
    pub d_values: Vec<f64>,
    pub fit_model: FitModel,
    /// Lag window searched during calibration; `None` uses
    /// `[16, tile_px / 2 - 16]`, which assumes nothing about the geometry.
    pub search_window: Option<LagWindow>,
    pub min_accepted_fraction: f64,
    pub max_rms_px: f64,
    /// Tolerance on the detection range when flagging out-of-range readings, um.
    pub range_tolerance_um: f64,
    /// Extra lags on each side of the survey search window, px.
    pub window_guard_px: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            d_values: (0..=12).map(|k| 30.0 + 5.0 * k as f64).collect(),
            fit_model: FitModel::Linear,
            search_window: None,
            min_accepted_fraction: 0.8,
            max_rms_px: 1.0,
            range_tolerance_um: 0.5,
            window_guard_px: 3.0,
        }
    }
}

impl CalibrationConfig {
    /// Calibration distances spanning the detection range of `geom`.
    pub fn for_geometry(geom: &DefocusGeometry) -> Self {
        let (lo, hi) = (geom.detection_z_min, geom.detection_z_max);
        Self {
            d_values: (0..=12).map(|k| lo + (hi - lo) * k as f64 / 12.0).collect(),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub d_um: f64,
    pub separation_px: f64,
    pub quality: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCurve {
    pub slope_px_per_um: f64,
    pub intercept_px: f64,
    pub valid_d_range: (f64, f64),
    /// The fit line evaluated at `valid_d_range`.
    pub valid_lag_window: LagWindow,
    pub rms_residual_px: f64,
    pub sample_points: Vec<CalibrationPoint>,
    pub fit_model: FitModel,
    pub range_tolerance_um: f64,
    pub window_guard_px: f64,
    pub tile_px: usize,
}

impl Units for CalibrationCurve {
    fn units() -> &'static [(&'static str, &'static str)] {
        &[
            ("slope_px_per_um", "px/um"),
            ("intercept_px", "px"),
            ("valid_d_range", "um"),
            ("valid_lag_window", "px"),
            ("rms_residual_px", "px"),
            ("sample_points.d_um", "um"),
            ("sample_points.separation_px", "px"),
            ("range_tolerance_um", "um"),
            ("window_guard_px", "px"),
            ("tile_px", "px"),
        ]
    }
}

/// Result of inverting the calibration for one measured separation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DefocusReading {
    pub d_um: f64,
    pub in_range: bool,
}

/// Ordinary least-squares line `y = slope * x + intercept`.
fn fit_line(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if !(sxx > 1e-12 * (1.0 + mx * mx) * n) {
        return None;
    }
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

fn failed(reason: impl Into<String>, points: Vec<CalibrationPoint>) -> Error {
    Error::CalibrationFailed {
        reason: reason.into(),
        points,
    }
}

impl CalibrationCurve {
    /// Fit a curve to measured points.
    pub fn fit(
        points: Vec<CalibrationPoint>,
        geom: &DefocusGeometry,
        tile_px: usize,
        cfg: &CalibrationConfig,
    ) -> Result<Self> {
        let accepted: Vec<&CalibrationPoint> = points.iter().filter(|p| p.accepted).collect();
        let fraction = accepted.len() as f64 / points.len().max(1) as f64;
        if fraction < cfg.min_accepted_fraction {
            return Err(failed(
                format!(
                    "only {} of {} calibration points passed the quality gate",
                    accepted.len(),
                    points.len()
                ),
                points,
            ));
        }
        let xs: Vec<f64> = accepted.iter().map(|p| p.d_um).collect();
        let ys: Vec<f64> = accepted.iter().map(|p| p.separation_px).collect();
        let Some((slope, intercept)) = fit_line(&xs, &ys) else {
            return Err(failed(
                "rank-deficient fit: calibration distances do not vary",
                points,
            ));
        };
        if !(slope > 0.0) {
            return Err(failed(format!("non-positive slope {slope}"), points));
        }
        let rms = (xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (slope * x + intercept - y).powi(2))
            .sum::<f64>()
            / xs.len() as f64)
            .sqrt();
        if rms > cfg.max_rms_px {
            return Err(failed(
                format!("rms residual {rms:.3} px exceeds {} px", cfg.max_rms_px),
                points,
            ));
        }
        if cfg.fit_model == FitModel::PiecewiseLinear {
            let mut sorted: Vec<(f64, f64)> = xs.iter().copied().zip(ys.iter().copied()).collect();
            sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
            if sorted
                .windows(2)
                .any(|w| !(w[1].0 > w[0].0 && w[1].1 > w[0].1))
            {
                return Err(failed(
                    "piecewise fit needs strictly increasing points",
                    points,
                ));
            }
        }
        let range = (geom.detection_z_min, geom.detection_z_max);
        Ok(Self {
            slope_px_per_um: slope,
            intercept_px: intercept,
            valid_d_range: range,
            valid_lag_window: LagWindow::new(
                slope * range.0 + intercept,
                slope * range.1 + intercept,
            ),
            rms_residual_px: rms,
            sample_points: points,
            fit_model: cfg.fit_model,
            range_tolerance_um: cfg.range_tolerance_um,
            window_guard_px: cfg.window_guard_px,
            tile_px,
        })
    }

    /// Separation predicted by the fit line at defocus `d`.
    pub fn separation_at(&self, d: f64) -> f64 {
        self.slope_px_per_um * d + self.intercept_px
    }

    fn breakpoints(&self) -> Vec<(f64, f64)> {
        let mut pts: Vec<(f64, f64)> = self
            .sample_points
            .iter()
            .filter(|p| p.accepted)
            .map(|p| (p.separation_px, p.d_um))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        pts
    }

    /// Lag window searched during surveys: the valid window widened by the
    /// range tolerance and the guard, clipped to the profile.
    pub fn search_window(&self) -> LagWindow {
        let tol = self.range_tolerance_um * self.slope_px_per_um;
        let lo = (self.valid_lag_window.min_px - tol - self.window_guard_px).max(1.0);
        let hi = (self.valid_lag_window.max_px + tol + self.window_guard_px)
            .min((self.tile_px / 2) as f64 - 1.0);
        LagWindow::new(lo, hi)
    }

    /// Short content hash identifying this curve.
    pub fn id(&self) -> String {
        let json = serde_json::to_vec(self).unwrap_or_default();
        let digest = Sha256::digest(&json);
        digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        crate::model::to_json_with_units(self)
    }
}

/// Convert a measured separation to defocus and flag readings outside the
/// detection range. Out-of-range readings are reported, never clamped.
pub fn defocus_from_separation(curve: &CalibrationCurve, s: f64) -> DefocusReading {
    let d_um = match curve.fit_model {
        FitModel::Linear => (s - curve.intercept_px) / curve.slope_px_per_um,
        FitModel::PiecewiseLinear => {
            let pts = curve.breakpoints();
            if pts.len() < 2 {
                (s - curve.intercept_px) / curve.slope_px_per_um
            } else {
                let i = pts.partition_point(|p| p.0 <= s).clamp(1, pts.len() - 1);
                let (s0, d0) = pts[i - 1];
                let (s1, d1) = pts[i];
                d0 + (s - s0) * (d1 - d0) / (s1 - s0)
            }
        }
    };
    let tol = curve.range_tolerance_um;
    let (lo, hi) = curve.valid_d_range;
    DefocusReading {
        d_um,
        in_range: d_um.is_finite() && d_um >= lo - tol && d_um <= hi + tol,
    }
}

/// Best-focus stage position from a defocus reading taken at `z_stage`.
pub fn focus_from_defocus(d_est: f64, z_stage: f64) -> f64 {
    z_stage - d_est
}

/// Render and measure one static frame per calibration distance on a flat
/// target, then fit the curve.
pub fn run_calibration(
    model: &SlideModel,
    geom: &DefocusGeometry,
    params: &OpticsParams,
    estimator: &EstimatorConfig,
    cfg: &CalibrationConfig,
    seed: u64,
) -> Result<CalibrationCurve> {
    geom.validate()?;
    params.validate()?;
    if model.spec().topo_amplitude != 0.0 {
        return Err(Error::Config(
            "calibration requires a flat target (topo_amplitude = 0)".into(),
        ));
    }
    if cfg.d_values.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
        return Err(Error::Config(
            "calibration distances must be finite and >= 0".into(),
        ));
    }
    let mut distinct = cfg.d_values.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 5 {
        let points = cfg
            .d_values
            .iter()
            .map(|&d| CalibrationPoint {
                d_um: d,
                separation_px: f64::NAN,
                quality: 0.0,
                accepted: false,
            })
            .collect();
        return Err(failed(
            format!(
                "need >= 5 distinct calibration distances, got {}",
                distinct.len()
            ),
            points,
        ));
    }
    let tile_px = model.tile_px();
    let window = cfg
        .search_window
        .unwrap_or_else(|| LagWindow::new(16.0, (tile_px / 2) as f64 - 16.0));
    let grid = model.grid();
    let tiles: Vec<TileIndex> = grid.tiles().collect();
    let z_base = model.z_true(tiles[0])?;

    let points = cfg
        .d_values
        .par_iter()
        .enumerate()
        .map(|(i, &d)| -> Result<CalibrationPoint> {
            let tile = tiles[i % tiles.len()];
            let req = CaptureRequest::dual_led(
                tile,
                z_base + d,
                params.noise_sigma,
                seed::derive(seed, Stream::Calibration, &[i as u64]),
            );
            let frame = render_dual_led(model, geom, params, &req)?;
            let est = estimate_shift_with(&frame, window, estimator);
            Ok(match est {
                Ok(e) => CalibrationPoint {
                    d_um: d,
                    separation_px: e.separation_px,
                    quality: e.quality,
                    accepted: e.accepted,
                },
                Err(Error::Degenerate(_)) => CalibrationPoint {
                    d_um: d,
                    separation_px: f64::NAN,
                    quality: 0.0,
                    accepted: false,
                },
                Err(e) => return Err(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    CalibrationCurve::fit(points, geom, tile_px, cfg)
}
