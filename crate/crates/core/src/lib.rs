//! Dual-LED focus map surveying for whole slide imaging.
//!
//! A defocused sample lit by two symmetric oblique LEDs images as two
//! laterally displaced copies; the copy separation grows linearly with
//! defocus and is read from the first-order peak of the image's 1D
//! autocorrelation. With the stage parked at a fixed offset every tile is
//! defocused with a known sign, so one frame per tile gives its focus
//! height, even while the stage moves perpendicular to the copy axis.
//!
//! The crate contains a synthetic slide simulator ([`slide`], [`optics`]),
//! the estimator ([`estimator`]), calibration ([`calibration`]), the survey
//! workflow ([`survey`]), a Brenner z-stack oracle ([`brenner`]), accuracy
//! reports ([`report`]) and the benchmark harness ([`bench`]).

pub mod bench;
pub mod brenner;
pub mod calibration;
pub mod config;
pub mod error;
pub mod estimator;
pub mod fft;
pub mod model;
pub mod optics;
pub mod pgm;
pub mod report;
pub mod seed;
pub mod slide;
pub mod survey;

pub use bench::{run_bench, BenchPlan, BenchReport, BenchRun};
pub use brenner::{brenner_score, find_focus_brenner, BrennerResult};
pub use calibration::{
    defocus_from_separation, focus_from_defocus, run_calibration, CalibrationConfig,
    CalibrationCurve, CalibrationPoint, DefocusReading, FitModel,
};
pub use config::AppConfig;
pub use error::{Error, Result};
pub use estimator::{
    autocorrelate_1d, estimate_shift, estimate_shift_with, find_separation, find_separation_with,
    AutocorrProfile, EstimatorConfig, LagWindow, ShiftEstimate,
};
pub use model::{
    separation_from_defocus, ContrastMode, DefocusGeometry, Grid, Illumination, ScanAxis, TileIndex,
};
pub use optics::{
    render_dual_led, render_kohler_stack, CaptureRequest, Frame, NoiseModel, OpticsParams,
};
pub use report::{verify_acquisition, SurveyReport};
pub use slide::{generate_slide, SlideModel, SlideSpec, TextureKind};
pub use survey::{
    fill_missing, survey, EntrySource, FocusEntry, FocusMap, SurveyConfig, SurveyRun,
};
