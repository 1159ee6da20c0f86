//! Focus map surveying with continuous lateral motion.
//!
//! The stage is moved once to the offset plane, the dual LEDs are switched
//! on and every tile is captured while scanning perpendicular to the
//! two-copy axis. Each frame is converted to a focus height through the
//! calibration curve; rejected tiles are interpolated afterwards.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{
    defocus_from_separation, focus_from_defocus, CalibrationCurve, DefocusReading,
};
use crate::error::{Error, Result};
use crate::estimator::{
    autocorrelate_1d, find_separation_with, AutocorrProfile, EstimatorConfig, ShiftEstimate,
    DEFAULT_QUALITY_THRESHOLD,
};
use crate::model::{DefocusGeometry, Grid, Illumination, ScanAxis, TileIndex};
use crate::optics::{render_dual_led, CaptureRequest, Frame, OpticsParams};
use crate::seed::{self, Stream};
use crate::slide::SlideModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurveyConfig {
    /// Stage offset above the nominal focal plane, um.
    pub z_offset: f64,
    pub scan_axis: ScanAxis,
    /// Motion blur per frame along `scan_axis`, px. Zero is static mode.
    pub blur_px: f64,
    pub quality_threshold: f64,
    /// Measure only every n-th tile in scan order.
    pub skip_every: Option<usize>,
    /// Frames averaged per tile (profile averaging).
    pub frames_per_tile: usize,
    /// Permit blur along the two-copy axis.
    pub allow_degraded: bool,
    /// Largest tolerated fraction of rejected or out-of-range tiles.
    pub max_rejected_fraction: f64,
    pub seed: u64,
}

impl Default for SurveyConfig {
    fn default() -> Self {
        Self {
            z_offset: 60.0,
            scan_axis: ScanAxis::Y,
            blur_px: 0.0,
            quality_threshold: DEFAULT_QUALITY_THRESHOLD,
            skip_every: None,
            frames_per_tile: 1,
            allow_degraded: false,
            max_rejected_fraction: 0.5,
            seed: 0,
        }
    }
}

impl SurveyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.z_offset > 0.0 && self.z_offset.is_finite()) {
            return Err(Error::Config(format!(
                "z_offset must be > 0, got {}",
                self.z_offset
            )));
        }
        if !(self.blur_px >= 0.0 && self.blur_px.is_finite()) {
            return Err(Error::Config(format!(
                "blur_px must be >= 0, got {}",
                self.blur_px
            )));
        }
        if self.scan_axis == ScanAxis::X && self.blur_px > 0.0 && !self.allow_degraded {
            return Err(Error::Config(
                "scanning along x blurs the two-copy axis; scan along y or set allow_degraded"
                    .into(),
            ));
        }
        if self.skip_every == Some(0) {
            return Err(Error::Config("skip_every must be >= 1".into()));
        }
        if self.frames_per_tile == 0 {
            return Err(Error::Config("frames_per_tile must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.max_rejected_fraction) {
            return Err(Error::Config(
                "max_rejected_fraction must be in [0, 1]".into(),
            ));
        }
        Ok(())
    }

    fn estimator(&self) -> EstimatorConfig {
        EstimatorConfig {
            quality_threshold: self.quality_threshold,
            ..EstimatorConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntrySource {
    Measured,
    Interpolated,
    /// Not yet filled; only present before [`fill_missing`].
    Missing,
}

impl EntrySource {
    pub fn as_str(&self) -> &'static str {
        match self {
            EntrySource::Measured => "measured",
            EntrySource::Interpolated => "interpolated",
            EntrySource::Missing => "missing",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FocusEntry {
    pub row: usize,
    pub col: usize,
    /// Best-focus stage position, um.
    pub z_focus_um: Option<f64>,
    /// Quality of this tile's own estimate (0 if not measured).
    pub quality: f64,
    pub source: EntrySource,
    pub out_of_range: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyMeta {
    pub config: SurveyConfig,
    pub calibration_id: String,
    pub slide_seed: u64,
    /// Stage height used for every capture, um.
    pub z_stage_um: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FocusMap {
    pub rows: usize,
    pub cols: usize,
    /// Row-major.
    pub entries: Vec<FocusEntry>,
    pub meta: SurveyMeta,
}

pub const FOCUS_MAP_CSV_HEADER: [&str; 6] = [
    "row",
    "col",
    "z_focus_um",
    "quality",
    "source",
    "out_of_range",
];

impl FocusMap {
    pub fn grid(&self) -> Grid {
        Grid::new(self.rows, self.cols)
    }

    pub fn entry(&self, tile: TileIndex) -> &FocusEntry {
        &self.entries[self.grid().index(tile)]
    }

    pub fn is_complete(&self) -> bool {
        self.entries.iter().all(|e| e.z_focus_um.is_some())
    }

    pub fn count(&self, source: EntrySource) -> usize {
        self.entries.iter().filter(|e| e.source == source).count()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(FOCUS_MAP_CSV_HEADER)?;
        for e in &self.entries {
            w.write_record([
                e.row.to_string(),
                e.col.to_string(),
                e.z_focus_um.map(|z| z.to_string()).unwrap_or_default(),
                e.quality.to_string(),
                e.source.as_str().to_string(),
                e.out_of_range.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One stage or illumination event issued by the survey.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "event")]
pub enum StageMove {
    MoveZ { z_um: f64 },
    Illuminate { illumination: Illumination },
    MoveXy { tile: TileIndex },
}

/// Wall-clock split of a survey, seconds summed over tiles.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SurveyTimings {
    pub render_s: f64,
    pub estimate_s: f64,
    pub total_s: f64,
}

/// Everything a survey produces. Only `map` is deterministic output; the
/// timings depend on the machine.
#[derive(Debug, Clone)]
pub struct SurveyRun {
    pub map: FocusMap,
    pub stage_log: Vec<StageMove>,
    pub timings: SurveyTimings,
    /// Per-tile estimates in scan order (measured tiles only).
    pub estimates: Vec<(TileIndex, ShiftEstimate)>,
}

struct TileOutcome {
    tile: TileIndex,
    estimate: ShiftEstimate,
    reading: Option<DefocusReading>,
    render_s: f64,
    estimate_s: f64,
}

/// Render the frames a survey would capture at `tile`.
pub fn capture_tile(
    model: &SlideModel,
    geom: &DefocusGeometry,
    params: &OpticsParams,
    cfg: &SurveyConfig,
    z_stage: f64,
    tile: TileIndex,
) -> Result<Vec<Frame>> {
    (0..cfg.frames_per_tile)
        .map(|k| {
            let s = seed::derive(
                cfg.seed,
                Stream::Survey,
                &[
                    tile.row as u64,
                    tile.col as u64,
                    k as u64,
                    cfg.blur_px.to_bits(),
                    cfg.scan_axis as u64,
                ],
            );
            let req = CaptureRequest::dual_led(tile, z_stage, params.noise_sigma, s)
                .with_blur(cfg.blur_px, cfg.scan_axis);
            render_dual_led(model, geom, params, &req)
        })
        .collect()
}

/// Estimate the separation of one tile from its frame(s).
pub fn estimate_frames(
    frames: &[Frame],
    curve: &CalibrationCurve,
    estimator: &EstimatorConfig,
) -> Result<ShiftEstimate> {
    let window = curve.search_window();
    let profiles: Result<Vec<AutocorrProfile>> = frames.iter().map(autocorrelate_1d).collect();
    match profiles {
        Ok(p) => {
            let profile = if p.len() == 1 {
                p.into_iter().next().unwrap()
            } else {
                AutocorrProfile::average(&p)?
            };
            find_separation_with(&profile, window, estimator)
        }
        // A featureless frame (empty glass, no noise) has nothing to measure.
        Err(Error::Degenerate(_)) => Ok(ShiftEstimate {
            separation_px: 0.0,
            quality: 0.0,
            peak_height: 0.0,
            sharpness: 0.0,
            accepted: false,
            lag_window: window,
        }),
        Err(e) => Err(e),
    }
}

/// Run the survey workflow over every tile of `model`.
pub fn survey(
    model: &SlideModel,
    geom: &DefocusGeometry,
    params: &OpticsParams,
    curve: &CalibrationCurve,
    cfg: &SurveyConfig,
) -> Result<SurveyRun> {
    let started = Instant::now();
    cfg.validate()?;
    geom.validate()?;
    params.validate()?;
    if curve.tile_px != model.tile_px() {
        return Err(Error::Config(format!(
            "calibration was made with {} px tiles, slide uses {} px",
            curve.tile_px,
            model.tile_px()
        )));
    }
    if (model.spec().pixel_pitch - geom.pixel_pitch).abs() > 1e-9 {
        return Err(Error::Config(
            "slide and geometry pixel pitches differ".into(),
        ));
    }
    let (d_lo, d_hi) = curve.valid_d_range;
    if !(cfg.z_offset > d_lo && cfg.z_offset < d_hi) {
        return Err(Error::Config(format!(
            "z_offset {} lies outside the calibrated range [{d_lo}, {d_hi}]",
            cfg.z_offset
        )));
    }

    let grid = model.grid();
    let order = grid.serpentine();
    // Nominal focal plane is z = 0; the offset is applied once.
    let z_stage = cfg.z_offset;
    let mut stage_log = Vec::with_capacity(order.len() + 2);
    stage_log.push(StageMove::MoveZ { z_um: z_stage });
    stage_log.push(StageMove::Illuminate {
        illumination: Illumination::DualLed,
    });
    stage_log.extend(order.iter().map(|&tile| StageMove::MoveXy { tile }));

    let measured: Vec<TileIndex> = order
        .iter()
        .enumerate()
        .filter(|(i, _)| cfg.skip_every.is_none_or(|n| i % n == 0))
        .map(|(_, &t)| t)
        .collect();

    let estimator = cfg.estimator();
    let outcomes = measured
        .par_iter()
        .map(|&tile| -> Result<TileOutcome> {
            let t0 = Instant::now();
            let frames = capture_tile(model, geom, params, cfg, z_stage, tile)?;
            let t1 = Instant::now();
            let estimate = estimate_frames(&frames, curve, &estimator)?;
            let reading = estimate
                .accepted
                .then(|| defocus_from_separation(curve, estimate.separation_px));
            let t2 = Instant::now();
            Ok(TileOutcome {
                tile,
                estimate,
                reading,
                render_s: (t1 - t0).as_secs_f64(),
                estimate_s: (t2 - t1).as_secs_f64(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut entries: Vec<FocusEntry> = grid
        .tiles()
        .map(|t| FocusEntry {
            row: t.row,
            col: t.col,
            z_focus_um: None,
            quality: 0.0,
            source: EntrySource::Missing,
            out_of_range: false,
        })
        .collect();
    let mut timings = SurveyTimings::default();
    let mut unusable = 0usize;
    for o in &outcomes {
        timings.render_s += o.render_s;
        timings.estimate_s += o.estimate_s;
        let e = &mut entries[grid.index(o.tile)];
        e.quality = o.estimate.quality;
        match o.reading {
            Some(r) if r.in_range => {
                e.z_focus_um = Some(focus_from_defocus(r.d_um, z_stage));
                e.source = EntrySource::Measured;
            }
            Some(_) => {
                e.out_of_range = true;
                unusable += 1;
            }
            None => unusable += 1,
        }
    }

    let map = FocusMap {
        rows: grid.rows,
        cols: grid.cols,
        entries,
        meta: SurveyMeta {
            config: cfg.clone(),
            calibration_id: curve.id(),
            slide_seed: model.seed(),
            z_stage_um: z_stage,
        },
    };
    if unusable as f64 > cfg.max_rejected_fraction * measured.len() as f64
        || map.count(EntrySource::Measured) == 0
    {
        return Err(Error::SurveyFailed {
            unusable,
            total: measured.len(),
            partial: Box::new(map),
        });
    }
    let map = fill_missing(&map)?;
    timings.total_s = started.elapsed().as_secs_f64();
    Ok(SurveyRun {
        map,
        stage_log,
        timings,
        estimates: outcomes.into_iter().map(|o| (o.tile, o.estimate)).collect(),
    })
}

/// Maximum number of measured neighbours blended into one filled tile.
pub const FILL_NEIGHBOURS: usize = 4;

/// Fill every missing entry by quality- and inverse-square-distance-weighted
/// averaging of its nearest measured tiles. Measured entries are untouched.
pub fn fill_missing(map: &FocusMap) -> Result<FocusMap> {
    let measured: Vec<(usize, usize, f64, f64)> = map
        .entries
        .iter()
        .filter(|e| e.source == EntrySource::Measured)
        .filter_map(|e| e.z_focus_um.map(|z| (e.row, e.col, z, e.quality)))
        .collect();
    if measured.is_empty() {
        return Err(Error::CannotFill);
    }
    let mut out = map.clone();
    for e in out
        .entries
        .iter_mut()
        .filter(|e| e.source == EntrySource::Missing)
    {
        let mut near: Vec<(f64, usize, usize, f64, f64)> = measured
            .iter()
            .map(|&(r, c, z, q)| {
                let dr = r as f64 - e.row as f64;
                let dc = c as f64 - e.col as f64;
                (dr * dr + dc * dc, r, c, z, q)
            })
            .collect();
        near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        near.truncate(FILL_NEIGHBOURS);
        let (mut num, mut den) = (0.0, 0.0);
        for &(d2, _, _, z, q) in &near {
            let w = q.max(1e-12) / d2;
            num += w * z;
            den += w;
        }
        e.z_focus_um = Some(num / den);
        e.source = EntrySource::Interpolated;
    }
    Ok(out)
}
