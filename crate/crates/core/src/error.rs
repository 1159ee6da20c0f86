use std::io;

use thiserror::Error;

use crate::bench::BenchReport;
use crate::calibration::CalibrationPoint;
use crate::survey::FocusMap;

/// Errors produced by the simulator and the focus-survey pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("argument error: {0}")]
    Argument(String),

    #[error("tile ({row}, {col}) is outside the {rows}x{cols} grid")]
    TileOutOfRange {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("calibration failed: {reason}")]
    CalibrationFailed {
        reason: String,
        points: Vec<CalibrationPoint>,
    },

    #[error("survey failed: {unusable} of {total} tiles rejected or out of range")]
    SurveyFailed {
        unusable: usize,
        total: usize,
        partial: Box<FocusMap>,
    },

    #[error("bench aborted on slide {slide}: {reason}")]
    BenchFailed {
        slide: String,
        reason: String,
        partial: Box<BenchReport>,
    },

    #[error("cannot fill focus map: no measured entries")]
    CannotFill,

    #[error("invalid PGM data: {0}")]
    Pgm(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
