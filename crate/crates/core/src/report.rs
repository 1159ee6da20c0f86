//! Acquisition check: compare a focus map with the slide's true topography
//! and, optionally, with the Brenner z-stack oracle.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::brenner::{find_focus_brenner, OracleRecord};
use crate::error::{Error, Result};
use crate::model::TileIndex;
use crate::optics::OpticsParams;
use crate::seed::{self, Stream};
use crate::slide::SlideModel;
use crate::survey::{EntrySource, FocusMap};

/// Depth of field of the high-resolution objective under Köhler
/// illumination, um.
pub const DEPTH_OF_FIELD_UM: f64 = 1.3;
/// Exposure of a dual-LED frame, ms.
pub const DUAL_LED_EXPOSURE_MS: f64 = 1.0;
/// Tolerance for dual-LED vs. Brenner agreement, um.
pub const ORACLE_AGREEMENT_UM: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileResidual {
    pub row: usize,
    pub col: usize,
    pub z_true_um: f64,
    pub z_focus_um: f64,
    pub residual_um: f64,
    pub source: EntrySource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrennerComparison {
    pub records: Vec<OracleRecord>,
    /// Fraction of tiles with |z_focus - refined Brenner| <= tolerance.
    pub agreement_fraction: f64,
    pub tolerance_um: f64,
    pub mean_abs_difference_um: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyReport {
    pub n_tiles: usize,
    pub measured_tiles: usize,
    pub interpolated_tiles: usize,
    pub mean_error_um: f64,
    pub std_error_um: f64,
    /// Fraction of tiles whose residual lies within half the depth of field.
    pub in_dof_fraction: f64,
    pub within_half_um_fraction: f64,
    pub depth_of_field_um: f64,
    pub blur_px: f64,
    /// Stage speed implied by the blur at the dual-LED exposure, mm/s.
    pub derived_scan_speed_mm_s: f64,
    pub residuals: Vec<TileResidual>,
    pub brenner: Option<BrennerComparison>,
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Score a complete focus map against the simulator's ground truth.
pub fn verify_acquisition(model: &SlideModel, map: &FocusMap) -> Result<SurveyReport> {
    if !map.is_complete() {
        return Err(Error::Argument("focus map has unfilled entries".into()));
    }
    if map.grid() != model.grid() {
        return Err(Error::Argument("focus map and slide grids differ".into()));
    }
    let residuals = map
        .entries
        .iter()
        .map(|e| {
            let z_true = model.z_true(TileIndex::new(e.row, e.col))?;
            let z = e.z_focus_um.expect("complete map");
            Ok(TileResidual {
                row: e.row,
                col: e.col,
                z_true_um: z_true,
                z_focus_um: z,
                residual_um: (z - z_true).abs(),
                source: e.source,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let errs: Vec<f64> = residuals.iter().map(|r| r.residual_um).collect();
    let (mean, std) = mean_std(&errs);
    let n = errs.len() as f64;
    let frac = |limit: f64| errs.iter().filter(|&&e| e <= limit).count() as f64 / n;
    let blur = map.meta.config.blur_px;
    Ok(SurveyReport {
        n_tiles: errs.len(),
        measured_tiles: map.count(EntrySource::Measured),
        interpolated_tiles: map.count(EntrySource::Interpolated),
        mean_error_um: mean,
        std_error_um: std,
        in_dof_fraction: frac(0.5 * DEPTH_OF_FIELD_UM),
        within_half_um_fraction: frac(0.5),
        depth_of_field_um: DEPTH_OF_FIELD_UM,
        blur_px: blur,
        derived_scan_speed_mm_s: blur * model.spec().pixel_pitch / DUAL_LED_EXPOSURE_MS,
        residuals,
        brenner: None,
    })
}

/// Run the Brenner oracle on every tile, centring each stack on the map's
/// estimate snapped to the stack step, and measure agreement.
pub fn compare_with_brenner(
    model: &SlideModel,
    params: &OpticsParams,
    map: &FocusMap,
    n: usize,
    step: f64,
    seed: u64,
) -> Result<BrennerComparison> {
    if !map.is_complete() {
        return Err(Error::Argument("focus map has unfilled entries".into()));
    }
    let pairs = map
        .entries
        .par_iter()
        .map(|e| {
            let tile = TileIndex::new(e.row, e.col);
            let z = e.z_focus_um.expect("complete map");
            let center = (z / step).round() * step;
            let s = seed::derive(seed, Stream::Kohler, &[e.row as u64, e.col as u64]);
            let r = find_focus_brenner(model, params, tile, center, n, step, true, s)?;
            Ok((
                OracleRecord {
                    row: e.row,
                    col: e.col,
                    z_best: r.z_best_plane,
                    z_best_refined: r.z_best,
                },
                (z - r.z_best).abs(),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let count = pairs.len().max(1) as f64;
    let agree = pairs
        .iter()
        .filter(|(_, d)| *d <= ORACLE_AGREEMENT_UM)
        .count() as f64
        / count;
    let mean_abs = pairs.iter().map(|(_, d)| d).sum::<f64>() / count;
    Ok(BrennerComparison {
        records: pairs.into_iter().map(|(r, _)| r).collect(),
        agreement_fraction: agree,
        tolerance_um: ORACLE_AGREEMENT_UM,
        mean_abs_difference_um: mean_abs,
    })
}
