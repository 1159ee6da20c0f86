//! Benchmark: survey a roster of synthetic slides at several
//! motion-blur levels and report focusing errors per slide and overall.

use std::fmt::Write as _;
use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::brenner::{DEFAULT_STACK_PLANES, DEFAULT_STACK_STEP_UM};
use crate::calibration::{run_calibration, CalibrationCurve};
use crate::config::{calibration_target, AppConfig};
use crate::error::{Error, Result};
use crate::model::ContrastMode;
use crate::report::{compare_with_brenner, mean_std, verify_acquisition, DEPTH_OF_FIELD_UM};
use crate::seed::{self, Stream};
use crate::slide::{generate_slide, SlideSpec};
use crate::survey::{survey, EntrySource, FocusMap, SurveyConfig, SurveyTimings};

/// A published `mean ± std` focusing error, um.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceValue {
    pub blur_px: f64,
    pub mean_um: f64,
    pub std_um: f64,
}

fn reference_row(values: [(f64, f64); 4]) -> Vec<ReferenceValue> {
    [0.0, 50.0, 90.0, 110.0]
        .iter()
        .zip(values)
        .map(|(&blur_px, (mean_um, std_um))| ReferenceValue {
            blur_px,
            mean_um,
            std_um,
        })
        .collect()
}

/// One slide of the roster. Fields not listed here come from the base
/// slide spec of the config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSlide {
    pub label: String,
    pub rows: usize,
    pub cols: usize,
    pub contrast_mode: ContrastMode,
    pub contrast_gain: f64,
    pub texture_sigma_px: f64,
    #[serde(default)]
    pub reference: Vec<ReferenceValue>,
}

impl BenchSlide {
    pub fn n_tiles(&self) -> usize {
        self.rows * self.cols
    }

    pub fn spec(&self, base: &SlideSpec) -> SlideSpec {
        SlideSpec {
            rows: self.rows,
            cols: self.cols,
            contrast_mode: self.contrast_mode,
            contrast_gain: self.contrast_gain,
            texture_sigma_px: self.texture_sigma_px,
            ..base.clone()
        }
    }

    fn reference_at(&self, blur_px: f64) -> Option<ReferenceValue> {
        self.reference
            .iter()
            .copied()
            .find(|p| p.blur_px == blur_px)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchPlan {
    pub slides: Vec<BenchSlide>,
    /// Motion blur per frame, px; must include the static level 0.
    pub blur_levels: Vec<f64>,
    /// Stage offsets to sweep, um. The first one feeds the summary CSV.
    pub z_offsets: Vec<f64>,
    /// Run the Brenner oracle on the static survey of every slide.
    pub oracle: bool,
    pub oracle_planes: usize,
    pub oracle_step_um: f64,
    /// Published summary row, for side-by-side printing.
    pub reference_summary: Vec<ReferenceValue>,
}

impl Default for BenchPlan {
    fn default() -> Self {
        let slide = |label: &str, rows, mode, gain, sigma, reference| BenchSlide {
            label: label.to_string(),
            rows,
            cols: 10,
            contrast_mode: mode,
            contrast_gain: gain,
            texture_sigma_px: sigma,
            reference: reference_row(reference),
        };
        use ContrastMode::{Stained, Transparent};
        let he = [
            [(0.07, 0.07), (0.07, 0.06), (0.13, 0.12), (0.17, 0.12)],
            [(0.06, 0.05), (0.07, 0.05), (0.11, 0.06), (0.18, 0.13)],
            [(0.06, 0.05), (0.05, 0.05), (0.23, 0.14), (0.11, 0.12)],
            [(0.10, 0.08), (0.10, 0.10), (0.24, 0.10), (0.17, 0.11)],
            [(0.07, 0.07), (0.19, 0.08), (0.17, 0.07), (0.20, 0.13)],
            [(0.07, 0.06), (0.07, 0.08), (0.12, 0.10), (0.11, 0.07)],
            [(0.04, 0.04), (0.16, 0.05), (0.08, 0.06), (0.18, 0.08)],
        ];
        let mut slides = vec![slide(
            "IHC slide (Cytokeratin)",
            10,
            Transparent,
            0.5,
            2.0,
            [(0.13, 0.10), (0.17, 0.10), (0.14, 0.08), (0.13, 0.11)],
        )];
        for (k, reference) in he.into_iter().enumerate() {
            slides.push(slide(
                &format!("H&E slide {}", k + 1),
                5,
                Stained,
                1.0,
                2.0,
                reference,
            ));
        }
        slides.push(slide(
            "Human myocardial infarct sec",
            5,
            Stained,
            0.8,
            3.0,
            [(0.10, 0.09), (0.20, 0.07), (0.14, 0.08), (0.20, 0.14)],
        ));
        slides.push(slide(
            "Unstained mouse kidney",
            10,
            Transparent,
            1.0,
            2.0,
            [(0.06, 0.06), (0.06, 0.05), (0.11, 0.07), (0.21, 0.12)],
        ));
        Self {
            slides,
            blur_levels: vec![0.0, 50.0, 90.0, 110.0],
            z_offsets: vec![60.0],
            oracle: false,
            oracle_planes: DEFAULT_STACK_PLANES,
            oracle_step_um: DEFAULT_STACK_STEP_UM,
            reference_summary: reference_row([
                (0.08, 0.07),
                (0.11, 0.07),
                (0.14, 0.09),
                (0.17, 0.11),
            ]),
        }
    }
}

impl BenchPlan {
    pub fn validate(&self) -> Result<()> {
        if self.slides.is_empty() {
            return Err(Error::Config("bench plan needs at least one slide".into()));
        }
        if self.slides.iter().any(|s| s.n_tiles() == 0) {
            return Err(Error::Config(
                "every bench slide needs at least one tile".into(),
            ));
        }
        if self
            .blur_levels
            .iter()
            .any(|b| !(b.is_finite() && *b >= 0.0))
        {
            return Err(Error::Config("blur levels must be finite and >= 0".into()));
        }
        if !self.blur_levels.contains(&0.0) {
            return Err(Error::Config(
                "blur levels must include the static level 0".into(),
            ));
        }
        if self.z_offsets.is_empty() || self.z_offsets.iter().any(|z| !(z.is_finite() && *z > 0.0))
        {
            return Err(Error::Config(
                "z_offsets must be a non-empty list of positive values".into(),
            ));
        }
        if self.oracle && (self.oracle_planes.is_multiple_of(2) || !(self.oracle_step_um > 0.0)) {
            return Err(Error::Config(
                "oracle needs an odd plane count and a positive step".into(),
            ));
        }
        Ok(())
    }

    pub fn total_tiles(&self) -> usize {
        self.slides.iter().map(BenchSlide::n_tiles).sum()
    }

    /// Seed of slide `index`.
    pub fn slide_seed(&self, top: u64, index: usize) -> u64 {
        seed::derive(top, Stream::Slide, &[index as u64])
    }

    /// Column label of a blur level in the summary CSV.
    pub fn column(blur_px: f64) -> String {
        if blur_px == 0.0 {
            "static".to_string()
        } else {
            format!("{blur_px}px")
        }
    }
}

/// Focusing error of one slide (or the pooled summary) at one blur level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub blur_px: f64,
    pub n_tiles: usize,
    pub mean_um: f64,
    pub std_um: f64,
    pub in_dof_fraction: f64,
    pub within_half_um_fraction: f64,
    pub measured_tiles: usize,
    pub interpolated_tiles: usize,
    pub derived_scan_speed_mm_s: f64,
    pub reference: Option<ReferenceValue>,
}

impl CellStats {
    fn from_residuals(
        blur_px: f64,
        residuals: &[f64],
        measured: usize,
        interpolated: usize,
        speed: f64,
        reference: Option<ReferenceValue>,
    ) -> Self {
        let (mean, std) = mean_std(residuals);
        let n = residuals.len().max(1) as f64;
        let frac = |limit: f64| residuals.iter().filter(|&&e| e <= limit).count() as f64 / n;
        Self {
            blur_px,
            n_tiles: residuals.len(),
            mean_um: mean,
            std_um: std,
            in_dof_fraction: frac(0.5 * DEPTH_OF_FIELD_UM),
            within_half_um_fraction: frac(0.5),
            measured_tiles: measured,
            interpolated_tiles: interpolated,
            derived_scan_speed_mm_s: speed,
            reference,
        }
    }

    /// `mean ± std` with three decimals.
    pub fn cell(&self) -> String {
        format!("{:.3} ± {:.3}", self.mean_um, self.std_um)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSummary {
    pub agreement_fraction: f64,
    pub tolerance_um: f64,
    pub mean_abs_difference_um: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideRow {
    pub label: String,
    pub contrast_mode: Option<ContrastMode>,
    pub n_tiles: usize,
    pub cells: Vec<CellStats>,
    pub oracle: Option<OracleSummary>,
}

impl SlideRow {
    pub fn cell(&self, blur_px: f64) -> Option<&CellStats> {
        self.cells.iter().find(|c| c.blur_px == blur_px)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffsetResult {
    pub z_offset: f64,
    pub rows: Vec<SlideRow>,
    /// Pooled over every tile of every slide.
    pub summary: SlideRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummary {
    pub id: String,
    pub slope_px_per_um: f64,
    pub intercept_px: f64,
    pub rms_residual_px: f64,
}

impl From<&CalibrationCurve> for CalibrationSummary {
    fn from(c: &CalibrationCurve) -> Self {
        Self {
            id: c.id(),
            slope_px_per_um: c.slope_px_per_um,
            intercept_px: c.intercept_px,
            rms_residual_px: c.rms_residual_px,
        }
    }
}

/// Deterministic bench results. Wall-clock timings live in [`BenchRun`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub seed: u64,
    pub blur_levels: Vec<f64>,
    pub calibration: CalibrationSummary,
    pub offsets: Vec<OffsetResult>,
}

impl BenchReport {
    /// Results at the first planned offset.
    pub fn primary(&self) -> Option<&OffsetResult> {
        self.offsets.first()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyTiming {
    pub slide: String,
    pub z_offset: f64,
    pub blur_px: f64,
    pub n_tiles: usize,
    #[serde(flatten)]
    pub timings: SurveyTimings,
}

/// One focus map produced during the bench.
#[derive(Debug, Clone)]
pub struct BenchMap {
    pub slide_index: usize,
    pub z_offset: f64,
    pub blur_px: f64,
    pub map: FocusMap,
}

#[derive(Debug, Clone)]
pub struct BenchRun {
    pub report: BenchReport,
    pub timings: Vec<SurveyTiming>,
    pub maps: Vec<BenchMap>,
    pub calibration: CalibrationCurve,
    pub wall_s: f64,
}

/// Calibrate on a flat target matching the configured slide optics.
pub fn calibrate(app: &AppConfig) -> Result<CalibrationCurve> {
    let target = generate_slide(
        &calibration_target(&app.slide, &app.calibration),
        app.calibration_seed(),
    )?;
    run_calibration(
        &target,
        &app.geometry,
        &app.optics,
        &app.estimator,
        &app.calibration,
        app.calibration_seed(),
    )
}

/// Run the full plan in `app.bench`.
///
/// Slides run in plan order; tiles inside a survey run on the current rayon
/// pool. A hard failure aborts with the rows finished so far.
pub fn run_bench(app: &AppConfig) -> Result<BenchRun> {
    let started = Instant::now();
    app.validate()?;
    let plan = &app.bench;
    let curve = calibrate(app)?;
    let mut report = BenchReport {
        seed: app.seed,
        blur_levels: plan.blur_levels.clone(),
        calibration: CalibrationSummary::from(&curve),
        offsets: Vec::new(),
    };
    let mut timings = Vec::new();
    let mut maps = Vec::new();

    for (oi, &z_offset) in plan.z_offsets.iter().enumerate() {
        let mut rows = Vec::new();
        // Pooled residuals and counts per blur level.
        let mut pooled: Vec<(Vec<f64>, usize, usize)> =
            vec![(Vec::new(), 0, 0); plan.blur_levels.len()];
        let mut speeds = vec![0.0; plan.blur_levels.len()];
        for (si, slide) in plan.slides.iter().enumerate() {
            let abort = |reason: String, report: &BenchReport, rows: &[SlideRow]| {
                let mut partial = report.clone();
                partial.offsets.push(OffsetResult {
                    z_offset,
                    rows: rows.to_vec(),
                    summary: summary_row(plan, &[], &[]),
                });
                Error::BenchFailed {
                    slide: slide.label.clone(),
                    reason,
                    partial: Box::new(partial),
                }
            };
            let model = generate_slide(&slide.spec(&app.slide), plan.slide_seed(app.seed, si))
                .map_err(|e| abort(e.to_string(), &report, &rows))?;
            let mut cells = Vec::new();
            let mut oracle = None;
            for (bi, &blur_px) in plan.blur_levels.iter().enumerate() {
                let cfg = SurveyConfig {
                    z_offset,
                    blur_px,
                    seed: seed::derive(
                        app.seed,
                        Stream::Survey,
                        &[si as u64, bi as u64, oi as u64],
                    ),
                    ..app.survey.clone()
                };
                let run = survey(&model, &app.geometry, &app.optics, &curve, &cfg)
                    .map_err(|e| abort(e.to_string(), &report, &rows))?;
                let sr = verify_acquisition(&model, &run.map)
                    .map_err(|e| abort(e.to_string(), &report, &rows))?;
                let residuals: Vec<f64> = sr.residuals.iter().map(|r| r.residual_um).collect();
                cells.push(CellStats::from_residuals(
                    blur_px,
                    &residuals,
                    sr.measured_tiles,
                    sr.interpolated_tiles,
                    sr.derived_scan_speed_mm_s,
                    slide.reference_at(blur_px),
                ));
                let slot = &mut pooled[bi];
                slot.0.extend(residuals);
                slot.1 += sr.measured_tiles;
                slot.2 += sr.interpolated_tiles;
                speeds[bi] = sr.derived_scan_speed_mm_s;
                timings.push(SurveyTiming {
                    slide: slide.label.clone(),
                    z_offset,
                    blur_px,
                    n_tiles: slide.n_tiles(),
                    timings: run.timings,
                });
                if plan.oracle && blur_px == 0.0 && oi == 0 {
                    let cmp = compare_with_brenner(
                        &model,
                        &app.optics,
                        &run.map,
                        plan.oracle_planes,
                        plan.oracle_step_um,
                        seed::derive(app.seed, Stream::Kohler, &[si as u64]),
                    )
                    .map_err(|e| abort(e.to_string(), &report, &rows))?;
                    oracle = Some(OracleSummary {
                        agreement_fraction: cmp.agreement_fraction,
                        tolerance_um: cmp.tolerance_um,
                        mean_abs_difference_um: cmp.mean_abs_difference_um,
                    });
                }
                maps.push(BenchMap {
                    slide_index: si,
                    z_offset,
                    blur_px,
                    map: run.map,
                });
            }
            rows.push(SlideRow {
                label: slide.label.clone(),
                contrast_mode: Some(slide.contrast_mode),
                n_tiles: slide.n_tiles(),
                cells,
                oracle,
            });
        }
        let summary = summary_row(plan, &pooled, &speeds);
        report.offsets.push(OffsetResult {
            z_offset,
            rows,
            summary,
        });
    }
    Ok(BenchRun {
        report,
        timings,
        maps,
        calibration: curve,
        wall_s: started.elapsed().as_secs_f64(),
    })
}

fn summary_row(plan: &BenchPlan, pooled: &[(Vec<f64>, usize, usize)], speeds: &[f64]) -> SlideRow {
    let cells = pooled
        .iter()
        .zip(&plan.blur_levels)
        .zip(speeds)
        .map(|(((res, measured, interpolated), &blur), &speed)| {
            let reference = plan
                .reference_summary
                .iter()
                .copied()
                .find(|p| p.blur_px == blur);
            CellStats::from_residuals(blur, res, *measured, *interpolated, speed, reference)
        })
        .collect::<Vec<_>>();
    SlideRow {
        label: "Summary".to_string(),
        contrast_mode: None,
        n_tiles: cells.first().map_or(0, |c| c.n_tiles),
        cells,
        oracle: None,
    }
}

/// Focusing-error table: one row per slide plus the summary row.
pub fn write_bench_table_csv<W: Write>(
    result: &OffsetResult,
    blur_levels: &[f64],
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["slide".to_string(), "n_tiles".to_string()];
    header.extend(blur_levels.iter().map(|&b| BenchPlan::column(b)));
    w.write_record(&header)?;
    for row in result.rows.iter().chain(std::iter::once(&result.summary)) {
        let mut rec = vec![row.label.clone(), row.n_tiles.to_string()];
        rec.extend(
            blur_levels
                .iter()
                .map(|&b| row.cell(b).map(CellStats::cell).unwrap_or_default()),
        );
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub const TIMINGS_CSV_HEADER: [&str; 7] = [
    "slide",
    "z_offset",
    "blur_px",
    "n_tiles",
    "render_s",
    "estimate_s",
    "total_s",
];

pub fn write_timings_csv<W: Write>(timings: &[SurveyTiming], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TIMINGS_CSV_HEADER)?;
    for t in timings {
        w.write_record([
            t.slide.clone(),
            t.z_offset.to_string(),
            t.blur_px.to_string(),
            t.n_tiles.to_string(),
            format!("{:.6}", t.timings.render_s),
            format!("{:.6}", t.timings.estimate_s),
            format!("{:.6}", t.timings.total_s),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Plain-text table with measured and published values side by side.
pub fn format_comparison(result: &OffsetResult, blur_levels: &[f64]) -> String {
    let mut s = String::new();
    let _ = write!(s, "{:<30} {:>7}", "slide", "tiles");
    for &b in blur_levels {
        let _ = write!(s, " {:>27}", BenchPlan::column(b));
    }
    s.push('\n');
    for row in result.rows.iter().chain(std::iter::once(&result.summary)) {
        let _ = write!(s, "{:<30} {:>7}", row.label, row.n_tiles);
        for &b in blur_levels {
            let text = match row.cell(b) {
                Some(c) => match c.reference {
                    Some(p) => format!("{} ({:.2} ± {:.2})", c.cell(), p.mean_um, p.std_um),
                    None => c.cell(),
                },
                None => String::new(),
            };
            let _ = write!(s, " {text:>27}");
        }
        s.push('\n');
    }
    s
}

/// Tiles of a map whose focus came from their own measurement.
pub fn measured_fraction(map: &FocusMap) -> f64 {
    map.count(EntrySource::Measured) as f64 / map.entries.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_roster_has_ten_slides_and_600_tiles() {
        let plan = BenchPlan::default();
        assert_eq!(plan.slides.len(), 10);
        assert_eq!(plan.total_tiles(), 600);
        let counts: Vec<usize> = plan.slides.iter().map(BenchSlide::n_tiles).collect();
        assert_eq!(counts, [100, 50, 50, 50, 50, 50, 50, 50, 50, 100]);
        assert!(
            plan.slides
                .iter()
                .filter(|s| s.contrast_mode == ContrastMode::Transparent)
                .count()
                >= 1
        );
        assert!(plan.slides.iter().all(|s| s.reference.len() == 4));
        plan.validate().unwrap();
    }

    #[test]
    fn plan_validation() {
        let bad = BenchPlan {
            blur_levels: vec![50.0, 110.0],
            ..BenchPlan::default()
        };
        assert!(bad.validate().is_err());
        let neg = BenchPlan {
            blur_levels: vec![0.0, -1.0],
            ..BenchPlan::default()
        };
        assert!(neg.validate().is_err());
        let none = BenchPlan {
            slides: vec![],
            ..BenchPlan::default()
        };
        assert!(none.validate().is_err());
    }

    #[test]
    fn slide_seeds_are_distinct() {
        let plan = BenchPlan::default();
        let seeds: std::collections::BTreeSet<u64> =
            (0..10).map(|i| plan.slide_seed(5, i)).collect();
        assert_eq!(seeds.len(), 10);
    }

    #[test]
    fn column_labels() {
        assert_eq!(BenchPlan::column(0.0), "static");
        assert_eq!(BenchPlan::column(110.0), "110px");
    }

    fn tiny_result() -> OffsetResult {
        let cell =
            |b: f64, m: f64| CellStats::from_residuals(b, &[m - 0.01, m + 0.01], 2, 0, 0.0, None);
        OffsetResult {
            z_offset: 60.0,
            rows: vec![SlideRow {
                label: "H&E slide 1".into(),
                contrast_mode: Some(ContrastMode::Stained),
                n_tiles: 2,
                cells: vec![cell(0.0, 0.05), cell(110.0, 0.2)],
                oracle: None,
            }],
            summary: SlideRow {
                label: "Summary".into(),
                contrast_mode: None,
                n_tiles: 2,
                cells: vec![cell(0.0, 0.05), cell(110.0, 0.2)],
                oracle: None,
            },
        }
    }

    #[test]
    fn bench_table_csv_layout() {
        let mut buf = Vec::new();
        write_bench_table_csv(&tiny_result(), &[0.0, 110.0], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "slide,n_tiles,static,110px");
        assert_eq!(lines[1], "H&E slide 1,2,0.050 ± 0.010,0.200 ± 0.010");
        assert!(lines[2].starts_with("Summary,2,"));
    }

    #[test]
    fn timings_csv_header() {
        let mut buf = Vec::new();
        write_timings_csv(&[], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap().trim_end(),
            TIMINGS_CSV_HEADER.join(",")
        );
    }
}
