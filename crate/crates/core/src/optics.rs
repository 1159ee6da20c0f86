//! Forward model for dual-LED and Köhler captures.
//!
//! Every linear stage is applied as a real, even transfer function on the
//! tile spectrum, so displacements are exact for band-limited textures and
//! all boundaries are circular.

use std::f64::consts::PI;

use ndarray::Array2;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft;
use crate::model::{
    separation_from_defocus, ContrastMode, DefocusGeometry, Illumination, ScanAxis, TileIndex,
    Units,
};
use crate::seed::{self, Stream};
use crate::slide::SlideModel;

/// Frames are single-channel intensity images with capture metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pixels: Array2<f64>,
    pub tile: TileIndex,
    pub z_stage: f64,
    pub blur_px: f64,
    pub scan_axis: ScanAxis,
    pub illumination: Illumination,
}

impl Frame {
    /// Wrap `pixels`, checking that every value is finite and non-negative.
    pub fn new(
        pixels: Array2<f64>,
        tile: TileIndex,
        z_stage: f64,
        blur_px: f64,
        scan_axis: ScanAxis,
        illumination: Illumination,
    ) -> Result<Self> {
        if let Some(v) = pixels.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Argument(format!(
                "frame pixel {v} is not finite and non-negative"
            )));
        }
        if !(blur_px >= 0.0) {
            return Err(Error::Argument(format!(
                "blur_px must be >= 0, got {blur_px}"
            )));
        }
        Ok(Self {
            pixels,
            tile,
            z_stage,
            blur_px,
            scan_axis,
            illumination,
        })
    }

    /// Frame without capture metadata, e.g. loaded from disk.
    pub fn from_pixels(pixels: Array2<f64>) -> Result<Self> {
        Self::new(
            pixels,
            TileIndex::new(0, 0),
            0.0,
            0.0,
            ScanAxis::Y,
            Illumination::DualLed,
        )
    }

    pub fn pixels(&self) -> &Array2<f64> {
        &self.pixels
    }

    pub fn into_pixels(self) -> Array2<f64> {
        self.pixels
    }

    pub fn rows(&self) -> usize {
        self.pixels.nrows()
    }

    pub fn cols(&self) -> usize {
        self.pixels.ncols()
    }

    pub fn mean(&self) -> f64 {
        self.pixels.mean().unwrap_or(0.0)
    }

    pub fn std_dev(&self) -> f64 {
        self.pixels.std(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum NoiseModel {
    /// Additive white Gaussian noise with standard deviation `noise_sigma`.
    Gaussian,
    /// Photon shot noise: `Poisson(I * photons_per_unit) / photons_per_unit`,
    /// followed by the additive Gaussian term.
    Shot { photons_per_unit: f64 },
}

/// Simulator parameters that are not part of the imaging geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OpticsParams {
    /// Defocus at which transparent-sample contrast reaches one half, um.
    pub transparent_dc: f64,
    /// Additive noise standard deviation, intensity units.
    pub noise_sigma: f64,
    pub noise_model: NoiseModel,
    /// Uniform illumination level added under the sample contrast.
    pub background: f64,
    /// Köhler defocus blur, px per um of defocus.
    pub kohler_gamma: f64,
    /// Köhler-illumination texture contrast of transparent samples.
    pub kohler_transparent_contrast: f64,
}

impl Default for OpticsParams {
    fn default() -> Self {
        Self {
            transparent_dc: 20.0,
            noise_sigma: 0.01,
            noise_model: NoiseModel::Gaussian,
            background: 0.1,
            kohler_gamma: 1.5,
            kohler_transparent_contrast: 0.3,
        }
    }
}

impl Units for OpticsParams {
    fn units() -> &'static [(&'static str, &'static str)] {
        &[
            ("transparent_dc", "um"),
            ("noise_sigma", "intensity"),
            ("background", "intensity"),
            ("kohler_gamma", "px/um"),
            ("kohler_transparent_contrast", "1"),
        ]
    }
}

impl OpticsParams {
    pub fn noiseless() -> Self {
        Self {
            noise_sigma: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Config("noise_sigma must be >= 0".into()));
        }
        if !(self.transparent_dc > 0.0) {
            return Err(Error::Config("transparent_dc must be > 0".into()));
        }
        if !(self.background >= 0.0) {
            return Err(Error::Config("background must be >= 0".into()));
        }
        if !(self.kohler_gamma >= 0.0) {
            return Err(Error::Config("kohler_gamma must be >= 0".into()));
        }
        if let NoiseModel::Shot { photons_per_unit } = self.noise_model {
            if !(photons_per_unit > 0.0) {
                return Err(Error::Config("photons_per_unit must be > 0".into()));
            }
        }
        Ok(())
    }

    /// Dual-LED contrast factor at defocus `d`.
    pub fn contrast_factor(&self, mode: ContrastMode, d: f64) -> f64 {
        match mode {
            ContrastMode::Stained => 1.0,
            ContrastMode::Transparent => d / (d + self.transparent_dc),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureRequest {
    pub tile: TileIndex,
    pub z_stage: f64,
    pub blur_px: f64,
    pub scan_axis: ScanAxis,
    pub illumination: Illumination,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl CaptureRequest {
    pub fn dual_led(tile: TileIndex, z_stage: f64, noise_sigma: f64, seed: u64) -> Self {
        Self {
            tile,
            z_stage,
            blur_px: 0.0,
            scan_axis: ScanAxis::Y,
            illumination: Illumination::DualLed,
            noise_sigma,
            seed,
        }
    }

    pub fn with_blur(mut self, blur_px: f64, scan_axis: ScanAxis) -> Self {
        self.blur_px = blur_px;
        self.scan_axis = scan_axis;
        self
    }
}

/// `sin(pi x) / (pi x)`.
fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = PI * x;
        px.sin() / px
    }
}

/// Transfer function of a normalized box of `len` px along `axis`
/// (continuous motion during the exposure).
fn box_transfer(len: f64, axis: ScanAxis, fy: f64, fx: f64) -> f64 {
    if len == 0.0 {
        return 1.0;
    }
    match axis {
        ScanAxis::X => sinc(fx * len),
        ScanAxis::Y => sinc(fy * len),
    }
}

fn gaussian_transfer(sigma: f64, f2: f64) -> f64 {
    (-2.0 * PI * PI * sigma * sigma * f2).exp()
}

fn add_noise(pixels: &mut Array2<f64>, params: &OpticsParams, sigma: f64, seed: u64) -> Result<()> {
    let mut rng = seed::rng(seed);
    if let NoiseModel::Shot { photons_per_unit } = params.noise_model {
        for v in pixels.iter_mut() {
            let lambda = (*v * photons_per_unit).max(0.0);
            if lambda > 0.0 {
                let p = Poisson::new(lambda).map_err(|e| Error::Argument(e.to_string()))?;
                *v = p.sample(&mut rng) / photons_per_unit;
            }
        }
    }
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).map_err(|e| Error::Argument(e.to_string()))?;
        for v in pixels.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    pixels.mapv_inplace(|v| v.max(0.0));
    Ok(())
}

fn check_request(model: &SlideModel, req: &CaptureRequest) -> Result<()> {
    model.grid().check(req.tile)?;
    if !(req.noise_sigma >= 0.0) {
        return Err(Error::Argument(format!(
            "noise_sigma must be >= 0, got {}",
            req.noise_sigma
        )));
    }
    if !(req.blur_px >= 0.0) {
        return Err(Error::Argument(format!(
            "blur_px must be >= 0, got {}",
            req.blur_px
        )));
    }
    if !req.z_stage.is_finite() {
        return Err(Error::Argument("z_stage must be finite".into()));
    }
    Ok(())
}

/// Render a dual-LED capture.
///
/// The tile contrast image `c(d) * texture` is split into two copies displaced
/// by `+/- S/2` along x, convolved with the LED-extent Gaussian (x only), the
/// isotropic defocus Gaussian and the motion box along the scan axis, then
/// offset by the background level and corrupted by noise.
pub fn render_dual_led(
    model: &SlideModel,
    geom: &DefocusGeometry,
    params: &OpticsParams,
    req: &CaptureRequest,
) -> Result<Frame> {
    if req.illumination != Illumination::DualLed {
        return Err(Error::Argument(
            "render_dual_led requires dual_led illumination".into(),
        ));
    }
    check_request(model, req)?;
    let d = (req.z_stage - model.z_true(req.tile)?).abs();
    let separation = separation_from_defocus(geom, d)?;
    let contrast = params.contrast_factor(model.contrast_mode(), d);
    let sigma_coh = geom.coherence_alpha * d;
    let sigma_def = geom.defocus_beta * d;

    let n = model.tile_px();
    let hx = fft::sample(n, |fx| {
        contrast
            * (PI * fx * separation).cos()
            * gaussian_transfer(sigma_coh, fx * fx)
            * gaussian_transfer(sigma_def, fx * fx)
            * box_transfer(req.blur_px, req.scan_axis, 0.0, fx)
    });
    let hy = fft::sample(n, |fy| {
        gaussian_transfer(sigma_def, fy * fy) * box_transfer(req.blur_px, req.scan_axis, fy, 0.0)
    });
    let mut pixels = model
        .filtered_texture(req.tile, &[(hy, hx)])?
        .pop()
        .expect("one filter");
    pixels.mapv_inplace(|v| v + params.background);
    add_noise(&mut pixels, params, req.noise_sigma, req.seed)?;
    Frame::new(
        pixels,
        req.tile,
        req.z_stage,
        req.blur_px,
        req.scan_axis,
        Illumination::DualLed,
    )
}

/// Apply continuous motion blur of `blur_px` along `axis` to an existing
/// frame (same transfer function the renderer uses).
pub fn apply_motion_blur(frame: &Frame, blur_px: f64, axis: ScanAxis) -> Result<Frame> {
    if !(blur_px >= 0.0) {
        return Err(Error::Argument(format!(
            "blur_px must be >= 0, got {blur_px}"
        )));
    }
    let mut spectrum = fft::to_complex(frame.pixels());
    fft::fft2(&mut spectrum);
    let (rows, cols) = spectrum.dim();
    let hy = fft::sample(rows, |f| box_transfer(blur_px, axis, f, 0.0));
    let hx = fft::sample(cols, |f| box_transfer(blur_px, axis, 0.0, f));
    fft::apply_separable(&mut spectrum, &hy, &hx);
    fft::ifft2(&mut spectrum);
    let pixels = spectrum.mapv(|v| v.re.max(0.0));
    Frame::new(
        pixels,
        frame.tile,
        frame.z_stage,
        frame.blur_px + blur_px,
        axis,
        frame.illumination,
    )
}

/// Render one Köhler (incoherent, single image) capture at `z_stage`.
pub fn render_kohler(
    model: &SlideModel,
    params: &OpticsParams,
    tile: TileIndex,
    z_stage: f64,
    seed: u64,
) -> Result<Frame> {
    let mut frames = render_kohler_planes(model, params, tile, &[(z_stage, seed)])?;
    Ok(frames.pop().expect("one plane"))
}

fn render_kohler_planes(
    model: &SlideModel,
    params: &OpticsParams,
    tile: TileIndex,
    planes: &[(f64, u64)],
) -> Result<Vec<Frame>> {
    if planes.iter().any(|(z, _)| !z.is_finite()) {
        return Err(Error::Argument("z_stage must be finite".into()));
    }
    let z_true = model.z_true(tile)?;
    let contrast = match model.contrast_mode() {
        ContrastMode::Stained => 1.0,
        ContrastMode::Transparent => params.kohler_transparent_contrast,
    };
    let n = model.tile_px();
    let filters: Vec<(Vec<f64>, Vec<f64>)> = planes
        .iter()
        .map(|&(z, _)| {
            let sigma = params.kohler_gamma * (z - z_true).abs();
            (
                fft::sample(n, |f| contrast * gaussian_transfer(sigma, f * f)),
                fft::sample(n, |f| gaussian_transfer(sigma, f * f)),
            )
        })
        .collect();
    model
        .filtered_texture(tile, &filters)?
        .into_iter()
        .zip(planes)
        .map(|(mut pixels, &(z, seed))| {
            pixels.mapv_inplace(|v| v + params.background);
            add_noise(&mut pixels, params, params.noise_sigma, seed)?;
            Frame::new(pixels, tile, z, 0.0, ScanAxis::Y, Illumination::Kohler)
        })
        .collect()
}

/// Stage positions of an `n`-plane stack centred on `z_center`.
pub fn stack_positions(z_center: f64, n: usize, step: f64) -> Result<Vec<f64>> {
    if n == 0 || n.is_multiple_of(2) {
        return Err(Error::Argument(format!("stack size must be odd, got {n}")));
    }
    if !(step > 0.0) {
        return Err(Error::Argument(format!(
            "stack step must be > 0, got {step}"
        )));
    }
    let half = (n / 2) as i64;
    Ok((-half..=half).map(|k| z_center + k as f64 * step).collect())
}

/// Render an `n`-plane Köhler z-stack around `z_center`.
pub fn render_kohler_stack(
    model: &SlideModel,
    params: &OpticsParams,
    tile: TileIndex,
    z_center: f64,
    n: usize,
    step: f64,
    seed: u64,
) -> Result<Vec<Frame>> {
    let positions = stack_positions(z_center, n, step)?;
    let planes: Vec<(f64, u64)> = positions
        .iter()
        .enumerate()
        .map(|(k, &z)| {
            (
                z,
                seed::derive(
                    seed,
                    Stream::Kohler,
                    &[tile.row as u64, tile.col as u64, k as u64],
                ),
            )
        })
        .collect();
    render_kohler_planes(model, params, tile, &planes)
}
