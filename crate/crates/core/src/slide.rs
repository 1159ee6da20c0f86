//! Synthetic specimens: periodic band-limited texture per tile plus a smooth
//! topography giving each tile's true focus height.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft;
use crate::model::{ContrastMode, Grid, TileIndex, Units};
use crate::seed::{self, Stream};

/// Smallest tile that still leaves room for the autocorrelation lag window.
pub const MIN_TILE_PX: usize = 64;
/// Topography must stay inside the +/-30 um detection range.
pub const MAX_TOPO_AMPLITUDE: f64 = 30.0;

/// How the per-tile texture spectrum is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextureKind {
    /// Low-pass amplitude with uniformly random phase: every tile has the
    /// same power spectrum, so its autocorrelation carries no sampling noise.
    RandomPhase,
    /// Low-pass filtered white noise (Rayleigh-distributed amplitudes).
    WhiteNoise,
}

/// Parameters of a synthetic slide. Only these (plus the seed) are
/// serialized; sampled fields are regenerated on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SlideSpec {
    pub rows: usize,
    pub cols: usize,
    pub tile_px: usize,
    /// Sample-plane um per pixel.
    pub pixel_pitch: f64,
    pub contrast_mode: ContrastMode,
    /// Peak |z_true - topo_offset|, um.
    pub topo_amplitude: f64,
    /// Constant height added to the whole topography, um.
    pub topo_offset: f64,
    /// Upper bound on |z_true| difference between 4-neighbour tiles, um.
    pub adjacent_limit: f64,
    pub texture_kind: TextureKind,
    /// Gaussian low-pass applied to the texture spectrum, px.
    pub texture_sigma_px: f64,
    /// Texture amplitude scale in (0, 1].
    pub contrast_gain: f64,
    /// Number of Gaussian bumps added to the polynomial topography.
    pub bump_count: usize,
    /// Bump width in tiles.
    pub bump_width_tiles: f64,
    /// Fraction of tiles with no specimen (empty glass).
    pub blank_fraction: f64,
}

impl Default for SlideSpec {
    fn default() -> Self {
        Self {
            rows: 10,
            cols: 10,
            tile_px: 512,
            pixel_pitch: 0.275,
            contrast_mode: ContrastMode::Stained,
            topo_amplitude: 8.0,
            topo_offset: 0.0,
            adjacent_limit: 2.0,
            texture_kind: TextureKind::RandomPhase,
            texture_sigma_px: 2.0,
            contrast_gain: 1.0,
            bump_count: 6,
            bump_width_tiles: 1.5,
            blank_fraction: 0.0,
        }
    }
}

impl Units for SlideSpec {
    fn units() -> &'static [(&'static str, &'static str)] {
        &[
            ("tile_px", "px"),
            ("pixel_pitch", "um/px"),
            ("topo_amplitude", "um"),
            ("topo_offset", "um"),
            ("adjacent_limit", "um"),
            ("texture_sigma_px", "px"),
            ("contrast_gain", "1"),
            ("bump_width_tiles", "tiles"),
            ("blank_fraction", "1"),
        ]
    }
}

impl SlideSpec {
    /// Flat calibration-style target: no topography at all.
    pub fn flat(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            topo_amplitude: 0.0,
            ..Self::default()
        }
    }

    pub fn grid(&self) -> Grid {
        Grid::new(self.rows, self.cols)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::Config("slide grid must be at least 1x1".into()));
        }
        if self.tile_px < MIN_TILE_PX {
            return Err(Error::Config(format!(
                "tile_px must be >= {MIN_TILE_PX}, got {}",
                self.tile_px
            )));
        }
        if !(self.pixel_pitch > 0.0) {
            return Err(Error::Config("pixel_pitch must be > 0".into()));
        }
        if !(0.0..=MAX_TOPO_AMPLITUDE).contains(&self.topo_amplitude) {
            return Err(Error::Config(format!(
                "topo_amplitude must be in [0, {MAX_TOPO_AMPLITUDE}] um, got {}",
                self.topo_amplitude
            )));
        }
        if !self.topo_offset.is_finite() {
            return Err(Error::Config("topo_offset must be finite".into()));
        }
        if !(self.adjacent_limit > 0.0) {
            return Err(Error::Config("adjacent_limit must be > 0".into()));
        }
        if !(self.texture_sigma_px >= 0.0) {
            return Err(Error::Config("texture_sigma_px must be >= 0".into()));
        }
        if !(self.contrast_gain > 0.0 && self.contrast_gain <= 1.0) {
            return Err(Error::Config("contrast_gain must be in (0, 1]".into()));
        }
        if !(self.bump_width_tiles > 0.0) {
            return Err(Error::Config("bump_width_tiles must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.blank_fraction) {
            return Err(Error::Config("blank_fraction must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// A periodic tile texture and its (unnormalized) DFT.
#[derive(Debug, Clone)]
pub struct TileTexture {
    /// Values in `[0, 1]`.
    pub pixels: Array2<f64>,
    pub spectrum: Array2<Complex64>,
}

/// A sampled synthetic slide.
///
/// Topography is sampled at tile centres at construction. Textures are
/// regenerated on demand from `(seed, tile)`, which keeps memory bounded
/// for large grids.
#[derive(Debug, Clone)]
pub struct SlideModel {
    spec: SlideSpec,
    seed: u64,
    topography: Array2<f64>,
    blank: Array2<bool>,
}

/// Build a slide from its parameters. Deterministic in `(spec, seed)`.
pub fn generate_slide(spec: &SlideSpec, seed: u64) -> Result<SlideModel> {
    spec.validate()?;
    let topography = sample_topography(spec, seed);
    let mut rng = seed::rng(seed::derive(seed, Stream::Slide, &[0]));
    let blank = Array2::from_shape_fn((spec.rows, spec.cols), |_| {
        spec.blank_fraction > 0.0 && rng.random::<f64>() < spec.blank_fraction
    });
    Ok(SlideModel {
        spec: spec.clone(),
        seed,
        topography,
        blank,
    })
}

fn sample_topography(spec: &SlideSpec, seed: u64) -> Array2<f64> {
    let (rows, cols) = (spec.rows, spec.cols);
    if spec.topo_amplitude == 0.0 {
        return Array2::from_elem((rows, cols), spec.topo_offset);
    }
    let mut rng = seed::rng(seed::derive(seed, Stream::Topography, &[]));

    // Quadratic trend over normalized coordinates in [-1, 1].
    let poly: [f64; 6] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
    let bumps: Vec<(f64, f64, f64)> = (0..spec.bump_count)
        .map(|_| {
            (
                rng.random_range(-0.5..rows as f64 - 0.5),
                rng.random_range(-0.5..cols as f64 - 0.5),
                rng.random_range(-1.0..1.0),
            )
        })
        .collect();
    let norm = |i: usize, n: usize| {
        if n > 1 {
            2.0 * i as f64 / (n - 1) as f64 - 1.0
        } else {
            0.0
        }
    };
    let w2 = 2.0 * spec.bump_width_tiles * spec.bump_width_tiles;
    let mut field = Array2::from_shape_fn((rows, cols), |(r, c)| {
        let (v, u) = (norm(r, rows), norm(c, cols));
        let trend = 0.5
            * (poly[0]
                + poly[1] * u
                + poly[2] * v
                + poly[3] * u * u
                + poly[4] * u * v
                + poly[5] * v * v);
        let bump: f64 = bumps
            .iter()
            .map(|&(br, bc, a)| {
                let dr = r as f64 - br;
                let dc = c as f64 - bc;
                a * (-(dr * dr + dc * dc) / w2).exp()
            })
            .sum();
        trend + bump
    });

    // Remove the mean so the amplitude is used symmetrically, then scale to
    // the requested peak.
    let mean = field.mean().unwrap_or(0.0);
    field.mapv_inplace(|v| v - mean);
    let peak = field.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        let k = spec.topo_amplitude / peak;
        field.mapv_inplace(|v| v * k);
    }
    let max_step = max_adjacent_step(&field);
    if max_step > spec.adjacent_limit {
        let k = spec.adjacent_limit / max_step;
        field.mapv_inplace(|v| v * k);
    }
    let a = spec.topo_amplitude;
    field.mapv(|v| v.clamp(-a, a) + spec.topo_offset)
}

/// Largest |difference| between 4-neighbour entries.
pub fn max_adjacent_step(field: &Array2<f64>) -> f64 {
    let (rows, cols) = field.dim();
    let mut m = 0.0f64;
    for r in 0..rows {
        for c in 0..cols {
            if c + 1 < cols {
                m = m.max((field[[r, c + 1]] - field[[r, c]]).abs());
            }
            if r + 1 < rows {
                m = m.max((field[[r + 1, c]] - field[[r, c]]).abs());
            }
        }
    }
    m
}

impl SlideModel {
    pub fn spec(&self) -> &SlideSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn grid(&self) -> Grid {
        self.spec.grid()
    }

    pub fn tile_px(&self) -> usize {
        self.spec.tile_px
    }

    pub fn contrast_mode(&self) -> ContrastMode {
        self.spec.contrast_mode
    }

    /// Per-tile true focus heights, um.
    pub fn topography(&self) -> &Array2<f64> {
        &self.topography
    }

    pub fn z_true(&self, tile: TileIndex) -> Result<f64> {
        self.grid().check(tile)?;
        Ok(self.topography[[tile.row, tile.col]])
    }

    pub fn is_blank(&self, tile: TileIndex) -> bool {
        self.blank[[tile.row, tile.col]]
    }

    /// Low-passed texture spectrum of `tile` before normalization.
    fn raw_spectrum(&self, tile: TileIndex) -> Array2<Complex64> {
        let n = self.spec.tile_px;
        let mut rng = seed::rng(seed::derive(
            self.seed,
            Stream::Texture,
            &[tile.row as u64, tile.col as u64],
        ));
        let mut spectrum = match self.spec.texture_kind {
            TextureKind::RandomPhase => random_phase_spectrum(n, &mut rng),
            TextureKind::WhiteNoise => {
                let mut noise = Array2::from_shape_simple_fn((n, n), || {
                    let v: f64 = StandardNormal.sample(&mut rng);
                    Complex64::new(v, 0.0)
                });
                fft::fft2(&mut noise);
                noise
            }
        };
        let s2 = 2.0 * (std::f64::consts::PI * self.spec.texture_sigma_px).powi(2);
        let h = fft::sample(n, |f| (-s2 * f * f).exp());
        fft::apply_separable(&mut spectrum, &h, &h);
        spectrum
    }

    /// Normalized texture of `tile` passed through each separable filter
    /// `hy(fy) * hx(fx)` (sampled on the bin frequencies).
    ///
    /// Both the raw field and the filtered fields are real, so they are
    /// packed pairwise into the real and imaginary parts of one inverse
    /// transform. Normalization is affine: a filtered normalized texture is
    /// `scale * (filtered_raw - H(0) * lo)`.
    pub fn filtered_texture(
        &self,
        tile: TileIndex,
        filters: &[(Vec<f64>, Vec<f64>)],
    ) -> Result<Vec<Array2<f64>>> {
        self.grid().check(tile)?;
        let n = self.spec.tile_px;
        if filters
            .iter()
            .any(|(hy, hx)| hy.len() != n || hx.len() != n)
        {
            return Err(Error::Argument(format!(
                "filters must be sampled on {n} bins"
            )));
        }
        if self.is_blank(tile) {
            return Ok(vec![Array2::zeros((n, n)); filters.len()]);
        }
        let raw = self.raw_spectrum(tile);
        let weight = |f: Option<&(Vec<f64>, Vec<f64>)>, r: usize, c: usize| {
            f.map_or(1.0, |(hy, hx)| hy[r] * hx[c])
        };
        let packed = |a: Option<&(Vec<f64>, Vec<f64>)>, b: Option<&(Vec<f64>, Vec<f64>)>| {
            let mut z = raw.clone();
            for ((r, c), v) in z.indexed_iter_mut() {
                *v *= Complex64::new(weight(a, r, c), weight(b, r, c));
            }
            fft::ifft2(&mut z);
            z
        };

        let first = packed(None, filters.first());
        let (lo, hi) = first
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v.re), hi.max(v.re))
            });
        let range = hi - lo;
        let scale = if range > 0.0 {
            self.spec.contrast_gain / range
        } else {
            0.0
        };
        let finish = |f: &(Vec<f64>, Vec<f64>), z: &Array2<Complex64>, imag: bool| {
            let dc = f.0[0] * f.1[0] * lo;
            z.mapv(|v| scale * (if imag { v.im } else { v.re } - dc))
        };

        let mut out = Vec::with_capacity(filters.len());
        if let Some(f) = filters.first() {
            out.push(finish(f, &first, true));
        }
        for pair in filters[1.min(filters.len())..].chunks(2) {
            let z = packed(Some(&pair[0]), pair.get(1));
            out.push(finish(&pair[0], &z, false));
            if let Some(f) = pair.get(1) {
                out.push(finish(f, &z, true));
            }
        }
        Ok(out)
    }

    /// Regenerate the periodic texture of `tile`.
    ///
    /// The low-passed spectrum is transformed back and min-max normalized to
    /// `[0, contrast_gain]`. The returned spectrum is that of the normalized
    /// pixels.
    pub fn tile_texture(&self, tile: TileIndex) -> Result<TileTexture> {
        self.grid().check(tile)?;
        let n = self.spec.tile_px;
        if self.is_blank(tile) {
            return Ok(TileTexture {
                pixels: Array2::zeros((n, n)),
                spectrum: Array2::zeros((n, n)),
            });
        }
        let mut spectrum = self.raw_spectrum(tile);
        let mut spatial = spectrum.clone();
        fft::ifft2(&mut spatial);
        let raw = fft::real_part(&spatial);
        let (lo, hi) = raw
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        let range = hi - lo;
        let scale = if range > 0.0 {
            self.spec.contrast_gain / range
        } else {
            0.0
        };
        let pixels = raw.mapv(|v| ((v - lo) * scale).clamp(0.0, 1.0));
        // Affine map of the spatial field: scale every bin, shift DC.
        spectrum.mapv_inplace(|v| v * scale);
        spectrum[[0, 0]] -= Complex64::new(lo * scale * (n * n) as f64, 0.0);
        Ok(TileTexture { pixels, spectrum })
    }
}

/// Unit-modulus Hermitian spectrum with uniform random phases and no DC.
fn random_phase_spectrum<R: Rng>(n: usize, rng: &mut R) -> Array2<Complex64> {
    let mut spec = Array2::<Complex64>::zeros((n, n));
    for r in 0..n {
        for c in 0..n {
            let (pr, pc) = ((n - r) % n, (n - c) % n);
            if (pr, pc) < (r, c) {
                spec[[r, c]] = spec[[pr, pc]].conj();
            } else if (pr, pc) == (r, c) {
                // Self-conjugate bins must be real.
                spec[[r, c]] = Complex64::new(if rng.random::<bool>() { 1.0 } else { -1.0 }, 0.0);
            } else {
                spec[[r, c]] =
                    Complex64::from_polar(1.0, rng.random_range(0.0..std::f64::consts::TAU));
            }
        }
    }
    spec[[0, 0]] = Complex64::new(0.0, 0.0);
    spec
}
