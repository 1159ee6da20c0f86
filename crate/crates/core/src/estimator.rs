//! Two-copy separation from a single frame.
//!
//! Each row is mean-subtracted and circularly autocorrelated along x; the
//! row profiles are averaged and normalized to one at zero lag. The first
//! order side peak, searched inside a lag window after sliding-median
//! detrending, gives the separation.

use rustfft::num_complex::Complex64;
use rustfft::FftDirection;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft;
use crate::optics::Frame;

/// Minimum frame width accepted by the estimator.
pub const MIN_COLS: usize = 128;

/// Normalized row-averaged autocorrelation, indexed by lag in `[-L/2, L/2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutocorrProfile {
    /// Circular layout: `values[l mod L]` is the value at lag `l`.
    values: Vec<f64>,
}

impl AutocorrProfile {
    /// Build from circularly-indexed values, normalizing to `value(0) = 1`
    /// and enforcing exact even symmetry.
    pub fn from_circular(raw: &[f64]) -> Result<Self> {
        let n = raw.len();
        if n == 0 || !(raw[0] > 0.0) || !raw[0].is_finite() {
            return Err(Error::Degenerate(
                "autocorrelation has no zero-lag energy".into(),
            ));
        }
        let r0 = raw[0];
        let values = (0..n)
            .map(|k| 0.5 * (raw[k] + raw[(n - k) % n]) / r0)
            .collect();
        Ok(Self { values })
    }

    /// Number of lags (the frame width).
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Value at integer lag `lag` (circular).
    pub fn at(&self, lag: i64) -> f64 {
        let n = self.values.len() as i64;
        self.values[lag.rem_euclid(n) as usize]
    }

    /// Smallest and one-past-largest lag, `(-L/2, L/2)`.
    pub fn lag_range(&self) -> (i64, i64) {
        let n = self.values.len() as i64;
        (-(n / 2), n - n / 2)
    }

    /// `(lag, value)` pairs in increasing lag order.
    pub fn pairs(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        let (lo, hi) = self.lag_range();
        (lo..hi).map(move |l| (l, self.at(l)))
    }

    /// Element-wise mean of several profiles of equal length.
    pub fn average(profiles: &[AutocorrProfile]) -> Result<Self> {
        let first = profiles
            .first()
            .ok_or_else(|| Error::Argument("no profiles to average".into()))?;
        if profiles.iter().any(|p| p.len() != first.len()) {
            return Err(Error::Argument("profiles differ in length".into()));
        }
        let k = profiles.len() as f64;
        let values = (0..first.len())
            .map(|i| profiles.iter().map(|p| p.values[i]).sum::<f64>() / k)
            .collect::<Vec<_>>();
        Self::from_circular(&values)
    }
}

/// Row-averaged circular autocorrelation along x.
///
/// Rows are packed two at a time into one complex FFT; the summed power
/// spectrum of the pair is `(|Z_k|^2 + |Z_{-k}|^2) / 2`.
pub fn autocorrelate_1d(frame: &Frame) -> Result<AutocorrProfile> {
    let (rows, cols) = (frame.rows(), frame.cols());
    if rows < 2 || cols < MIN_COLS {
        return Err(Error::Argument(format!(
            "frame must have >= 2 rows and >= {MIN_COLS} columns, got {rows}x{cols}"
        )));
    }
    let px = frame.pixels();
    let fwd = fft::plan(cols, FftDirection::Forward);
    let inv = fft::plan(cols, FftDirection::Inverse);
    let mut scratch = vec![
        Complex64::default();
        fwd.get_inplace_scratch_len()
            .max(inv.get_inplace_scratch_len())
    ];
    let mut buf = vec![Complex64::default(); cols];
    let mut power = vec![0.0f64; cols];
    let mut energy = 0.0f64;

    let row_mean = |r: usize| px.row(r).sum() / cols as f64;
    let mut r = 0;
    while r < rows {
        let ma = row_mean(r);
        let second = if r + 1 < rows {
            Some((r + 1, row_mean(r + 1)))
        } else {
            None
        };
        for c in 0..cols {
            let a = px[[r, c]];
            energy += a * a;
            let b = match second {
                Some((rb, mb)) => {
                    let v = px[[rb, c]];
                    energy += v * v;
                    v - mb
                }
                None => 0.0,
            };
            buf[c] = Complex64::new(a - ma, b);
        }
        fwd.process_with_scratch(&mut buf, &mut scratch);
        for k in 0..cols {
            let kk = (cols - k) % cols;
            power[k] += 0.5 * (buf[k].norm_sqr() + buf[kk].norm_sqr());
        }
        r += 2;
    }

    let mut spec: Vec<Complex64> = power.iter().map(|&p| Complex64::new(p, 0.0)).collect();
    inv.process_with_scratch(&mut spec, &mut scratch);
    let raw: Vec<f64> = spec.iter().map(|v| v.re / (cols * rows) as f64).collect();
    let mean_square = energy / (rows * cols) as f64;
    if !(raw[0] > 1e-20 * mean_square.max(f64::MIN_POSITIVE)) {
        return Err(Error::Degenerate("frame rows have zero variance".into()));
    }
    AutocorrProfile::from_circular(&raw)
}

/// Closed lag interval, px.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LagWindow {
    pub min_px: f64,
    pub max_px: f64,
}

impl LagWindow {
    pub fn new(min_px: f64, max_px: f64) -> Self {
        Self { min_px, max_px }
    }

    pub fn contains(&self, lag: f64) -> bool {
        lag >= self.min_px && lag <= self.max_px
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    /// Sliding-median background length, lags (odd).
    pub median_window: usize,
    /// Minimum detrended peak height over background MAD.
    pub quality_threshold: f64,
    /// Minimum [`ShiftEstimate::sharpness`]. Peaks broader than the median
    /// window lose most of their height to detrending and fail this.
    pub min_sharpness: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            median_window: 31,
            quality_threshold: DEFAULT_QUALITY_THRESHOLD,
            min_sharpness: DEFAULT_MIN_SHARPNESS,
        }
    }
}

/// Default acceptance threshold on [`ShiftEstimate::quality`].
pub const DEFAULT_QUALITY_THRESHOLD: f64 = 8.0;
/// Default lower bound on [`ShiftEstimate::sharpness`].
pub const DEFAULT_MIN_SHARPNESS: f64 = 0.35;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftEstimate {
    pub separation_px: f64,
    pub quality: f64,
    /// Detrended peak height in units of the zero-lag value.
    pub peak_height: f64,
    /// Detrended over raw peak value.
    pub sharpness: f64,
    pub accepted: bool,
    pub lag_window: LagWindow,
}

fn median(values: &mut [f64]) -> f64 {
    debug_assert!(!values.is_empty());
    let mid = values.len() / 2;
    let (_, m, _) = values.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    let upper = *m;
    if values.len() % 2 == 1 {
        upper
    } else {
        let lower = values[..mid]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

/// Vertex offset of the parabola through `(-1, a)`, `(0, b)`, `(1, c)`,
/// clamped to half a sample. Zero when the samples are not concave.
pub fn parabolic_offset(a: f64, b: f64, c: f64) -> f64 {
    let denom = a - 2.0 * b + c;
    if denom < 0.0 {
        (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
    } else {
        0.0
    }
}

/// Locate the first-order peak of `profile` inside `window`.
pub fn find_separation(
    profile: &AutocorrProfile,
    window: LagWindow,
    quality_threshold: f64,
) -> Result<ShiftEstimate> {
    let cfg = EstimatorConfig {
        quality_threshold,
        ..EstimatorConfig::default()
    };
    find_separation_with(profile, window, &cfg)
}

pub fn find_separation_with(
    profile: &AutocorrProfile,
    window: LagWindow,
    cfg: &EstimatorConfig,
) -> Result<ShiftEstimate> {
    let half = (profile.len() / 2) as f64;
    if !(window.min_px > 0.0 && window.min_px < window.max_px && window.max_px < half) {
        return Err(Error::Argument(format!(
            "lag window [{}, {}] must lie inside (0, {half})",
            window.min_px, window.max_px
        )));
    }
    let lo = window.min_px.ceil() as i64;
    let hi = window.max_px.floor() as i64;
    if hi - lo < 2 {
        return Err(Error::Argument(format!(
            "lag window [{}, {}] holds fewer than 3 integer lags",
            window.min_px, window.max_px
        )));
    }
    if cfg.median_window == 0 || cfg.median_window.is_multiple_of(2) {
        return Err(Error::Argument("median_window must be odd".into()));
    }
    let h = (cfg.median_window / 2) as i64;

    let mut buf = Vec::with_capacity(cfg.median_window);
    let detrended: Vec<f64> = (lo..=hi)
        .map(|l| {
            buf.clear();
            buf.extend((l - h..=l + h).map(|j| profile.at(j)));
            profile.at(l) - median(&mut buf)
        })
        .collect();

    // Strict comparison keeps the smallest lag among equal maxima.
    let mut best = 0usize;
    for (i, &v) in detrended.iter().enumerate() {
        if v > detrended[best] {
            best = i;
        }
    }
    let peak_lag = lo + best as i64;
    let on_edge = best == 0 || best + 1 == detrended.len();

    // Refinement uses the raw profile samples; the background estimate only
    // decides where the peak is and how much it stands out.
    let delta = parabolic_offset(
        profile.at(peak_lag - 1),
        profile.at(peak_lag),
        profile.at(peak_lag + 1),
    );
    let separation_px = peak_lag as f64 + if on_edge { 0.0 } else { delta };

    let mut background: Vec<f64> = detrended
        .iter()
        .enumerate()
        .filter(|(i, _)| (*i as i64 - best as i64).abs() > h)
        .map(|(_, &v)| v)
        .collect();
    if background.len() < 5 {
        background = detrended
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != best)
            .map(|(_, &v)| v)
            .collect();
    }
    let center = median(&mut background.clone());
    let mut dev: Vec<f64> = background.iter().map(|v| (v - center).abs()).collect();
    let mad = median(&mut dev).max(1e-15);
    let peak = detrended[best];
    let quality = if peak > 0.0 { peak / mad } else { 0.0 };
    let raw = profile.at(peak_lag);
    let sharpness = if peak > 0.0 && raw > 0.0 {
        peak / raw
    } else {
        0.0
    };

    let accepted = !on_edge
        && quality >= cfg.quality_threshold
        && sharpness >= cfg.min_sharpness
        && window.contains(separation_px);
    Ok(ShiftEstimate {
        separation_px,
        quality,
        peak_height: peak,
        sharpness,
        accepted,
        lag_window: window,
    })
}

/// Autocorrelate `frame` and locate the separation.
pub fn estimate_shift(
    frame: &Frame,
    window: LagWindow,
    quality_threshold: f64,
) -> Result<ShiftEstimate> {
    let profile = autocorrelate_1d(frame)?;
    find_separation(&profile, window, quality_threshold)
}

pub fn estimate_shift_with(
    frame: &Frame,
    window: LagWindow,
    cfg: &EstimatorConfig,
) -> Result<ShiftEstimate> {
    let profile = autocorrelate_1d(frame)?;
    find_separation_with(&profile, window, cfg)
}
