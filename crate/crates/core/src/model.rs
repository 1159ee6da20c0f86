//! Shared domain types and unit conventions.
//!
//! Lengths along the optical axis are in micrometres, lateral image
//! distances in pixels. The stage `z` axis points away from the objective:
//! a tile with true focus `z_true` imaged at stage position `z_stage` has
//! defocus `d = z_stage - z_true`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sample contrast mechanism.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContrastMode {
    /// Absorbing (stained) specimen: contrast independent of defocus.
    Stained,
    /// Phase-like specimen: no contrast at focus, coherent contrast grows
    /// with defocus.
    Transparent,
}

/// Lateral stage axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanAxis {
    X,
    Y,
}

impl std::str::FromStr for ScanAxis {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "x" | "X" => Ok(ScanAxis::X),
            "y" | "Y" => Ok(ScanAxis::Y),
            other => Err(format!("unknown scan axis `{other}` (expected x or y)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Illumination {
    /// Two oblique point LEDs symmetric in the x-z plane.
    DualLed,
    /// Conventional incoherent brightfield illumination.
    Kohler,
}

/// Tile address `(row, col)` in the slide grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TileIndex {
    pub row: usize,
    pub col: usize,
}

impl TileIndex {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    pub rows: usize,
    pub cols: usize,
}

impl Grid {
    pub const fn new(rows: usize, cols: usize) -> Self {
        Self { rows, cols }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, tile: TileIndex) -> bool {
        tile.row < self.rows && tile.col < self.cols
    }

    pub fn check(&self, tile: TileIndex) -> Result<()> {
        if self.contains(tile) {
            Ok(())
        } else {
            Err(Error::TileOutOfRange {
                row: tile.row,
                col: tile.col,
                rows: self.rows,
                cols: self.cols,
            })
        }
    }

    /// Row-major flat index.
    pub fn index(&self, tile: TileIndex) -> usize {
        tile.row * self.cols + tile.col
    }

    pub fn tiles(&self) -> impl Iterator<Item = TileIndex> + '_ {
        (0..self.rows).flat_map(move |r| (0..self.cols).map(move |c| TileIndex::new(r, c)))
    }

    /// Serpentine (boustrophedon) visiting order: even rows left to right,
    /// odd rows right to left.
    pub fn serpentine(&self) -> Vec<TileIndex> {
        let mut out = Vec::with_capacity(self.len());
        for r in 0..self.rows {
            if r % 2 == 0 {
                out.extend((0..self.cols).map(|c| TileIndex::new(r, c)));
            } else {
                out.extend((0..self.cols).rev().map(|c| TileIndex::new(r, c)));
            }
        }
        out
    }
}

/// Imaging geometry of the dual-LED configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DefocusGeometry {
    /// Stage offset applied before surveying, um.
    pub z_offset: f64,
    /// Tilt of each LED from the optical axis, radians.
    pub led_half_angle: f64,
    /// Sample-plane size of one camera pixel, um/px.
    pub pixel_pitch: f64,
    /// Copy blur from the finite LED emitting area, px per um of defocus.
    pub coherence_alpha: f64,
    /// Overall defocus blur, px per um of defocus.
    pub defocus_beta: f64,
    /// Smallest detectable defocus, um.
    pub detection_z_min: f64,
    /// Largest detectable defocus, um.
    pub detection_z_max: f64,
}

impl Default for DefocusGeometry {
    fn default() -> Self {
        Self {
            z_offset: 60.0,
            led_half_angle: 0.25f64.atan(),
            pixel_pitch: 0.275,
            coherence_alpha: 0.05,
            defocus_beta: 0.02,
            detection_z_min: 30.0,
            detection_z_max: 90.0,
        }
    }
}

impl DefocusGeometry {
    /// Half-width of the default detection range around the offset, um.
    pub const DEFAULT_HALF_RANGE: f64 = 30.0;

    /// Geometry with the detection range re-centred on `z_offset`, keeping
    /// its width.
    pub fn with_offset(&self, z_offset: f64) -> Self {
        let half = 0.5 * (self.detection_z_max - self.detection_z_min);
        Self {
            z_offset,
            detection_z_min: z_offset - half,
            detection_z_max: z_offset + half,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.z_offset,
            self.led_half_angle,
            self.pixel_pitch,
            self.coherence_alpha,
            self.defocus_beta,
            self.detection_z_min,
            self.detection_z_max,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config("geometry contains non-finite values".into()));
        }
        if self.z_offset <= 0.0 {
            return Err(Error::Config(format!(
                "z_offset must be > 0, got {}",
                self.z_offset
            )));
        }
        if !(self.detection_z_min < self.z_offset && self.z_offset < self.detection_z_max) {
            return Err(Error::Config(format!(
                "z_offset {} must lie strictly inside the detection range [{}, {}]",
                self.z_offset, self.detection_z_min, self.detection_z_max
            )));
        }
        if self.detection_z_min < 0.0 {
            return Err(Error::Config("detection_z_min must be >= 0".into()));
        }
        if self.pixel_pitch <= 0.0 {
            return Err(Error::Config("pixel_pitch must be > 0".into()));
        }
        if !(self.led_half_angle > 0.0 && self.led_half_angle < std::f64::consts::FRAC_PI_2) {
            return Err(Error::Config("led_half_angle must be in (0, pi/2)".into()));
        }
        if self.coherence_alpha < 0.0 || self.defocus_beta < 0.0 {
            return Err(Error::Config("blur coefficients must be >= 0".into()));
        }
        Ok(())
    }

    /// Two-copy separation per um of defocus, px/um.
    pub fn slope_px_per_um(&self) -> f64 {
        2.0 * self.led_half_angle.tan() / self.pixel_pitch
    }
}

/// Pixel distance between the two LED copies of a sample at defocus `d`.
pub fn separation_from_defocus(geom: &DefocusGeometry, d: f64) -> Result<f64> {
    if !(d >= 0.0) {
        return Err(Error::Domain(format!(
            "defocus must be >= 0 (the sign is unobservable), got {d}"
        )));
    }
    Ok(d * geom.slope_px_per_um())
}

/// Types whose JSON form carries a `units` sibling object.
pub trait Units {
    fn units() -> &'static [(&'static str, &'static str)];
}

impl Units for DefocusGeometry {
    fn units() -> &'static [(&'static str, &'static str)] {
        &[
            ("z_offset", "um"),
            ("led_half_angle", "rad"),
            ("pixel_pitch", "um/px"),
            ("coherence_alpha", "px/um"),
            ("defocus_beta", "px/um"),
            ("detection_z_min", "um"),
            ("detection_z_max", "um"),
        ]
    }
}

#[derive(Serialize)]
struct WithUnits<'a, T: Serialize> {
    #[serde(flatten)]
    inner: &'a T,
    units: std::collections::BTreeMap<&'static str, &'static str>,
}

/// Pretty JSON of `value` with its `units` object appended.
pub fn to_json_with_units<T: Serialize + Units>(value: &T) -> Result<String> {
    let doc = WithUnits {
        inner: value,
        units: T::units().iter().copied().collect(),
    };
    Ok(serde_json::to_string_pretty(&doc)?)
}

/// Parse JSON written by [`to_json_with_units`]; the `units` object is ignored.
pub fn from_json<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    Ok(serde_json::from_str(text)?)
}
