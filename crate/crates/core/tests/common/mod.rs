//! Independent oracles and fixtures shared by the integration tests.

#![allow(dead_code)]

use std::f64::consts::PI;

use dualfocus_core::{
    bench, generate_slide, AppConfig, CalibrationCurve, DefocusGeometry, Frame, LagWindow,
    OpticsParams, SlideModel, SlideSpec, SurveyConfig,
};
use ndarray::Array2;
use rand::Rng;

/// Direct O(L^2) row-averaged circular autocorrelation of the row-mean-free
/// frame, normalized to 1 at lag 0 and indexed circularly.
pub fn direct_autocorrelation(px: &Array2<f64>) -> Vec<f64> {
    let (rows, cols) = px.dim();
    let mut acc = vec![0.0; cols];
    for r in 0..rows {
        let row = px.row(r);
        let mean = row.sum() / cols as f64;
        for (lag, a) in acc.iter_mut().enumerate() {
            for x in 0..cols {
                *a += (row[x] - mean) * (row[(x + lag) % cols] - mean);
            }
        }
    }
    let r0 = acc[0];
    acc.iter().map(|v| v / r0).collect()
}

/// Exhaustive integer-lag argmax of the direct autocorrelation inside
/// `window`, refined with the 3-point parabola vertex.
pub fn oracle_separation(px: &Array2<f64>, window: LagWindow) -> f64 {
    let r = direct_autocorrelation(px);
    let n = r.len();
    let at = |l: i64| r[l.rem_euclid(n as i64) as usize];
    let lo = window.min_px.ceil() as i64;
    let hi = window.max_px.floor() as i64;
    let best = (lo..=hi).max_by(|a, b| at(*a).total_cmp(&at(*b))).unwrap();
    let (a, b, c) = (at(best - 1), at(best), at(best + 1));
    best as f64 + 0.5 * (a - c) / (a - 2.0 * b + c)
}

/// Exact two-copy frame: each row is a band-limited random texture built
/// from integer-frequency sinusoids, evaluated analytically at
/// `x - s/2` and `x + s/2`, so fractional separations carry no
/// interpolation error.
pub fn two_copy_frame(rows: usize, cols: usize, s: f64, sigma_px: f64, seed: u64) -> Array2<f64> {
    let mut rng = dualfocus_core::seed::rng(seed);
    let kmax = cols / 2 - 1;
    let mut px = Array2::zeros((rows, cols));
    for r in 0..rows {
        let terms: Vec<(f64, f64, f64)> = (1..=kmax)
            .map(|k| {
                let w = 2.0 * PI * k as f64 / cols as f64;
                let amp = (-0.5 * (w * sigma_px).powi(2)).exp();
                (w, amp, rng.random::<f64>() * 2.0 * PI)
            })
            .filter(|t| t.1 > 1e-12)
            .collect();
        let texture = |x: f64| {
            terms
                .iter()
                .map(|(w, a, p)| a * (w * x + p).cos())
                .sum::<f64>()
        };
        for c in 0..cols {
            let x = c as f64;
            px[[r, c]] = texture(x - s / 2.0) + texture(x + s / 2.0);
        }
    }
    let min = px.fold(f64::INFINITY, |m, &v| m.min(v));
    px.mapv_inplace(|v| v - min + 0.1);
    px
}

pub fn frame(px: Array2<f64>) -> Frame {
    Frame::from_pixels(px).unwrap()
}

/// Defocus-to-separation slope of `geom` from first principles, px/um.
pub fn analytic_slope(geom: &DefocusGeometry) -> f64 {
    2.0 * geom.led_half_angle.tan() / geom.pixel_pitch
}

/// Noiseless copy of `app`.
pub fn noiseless(app: &AppConfig) -> AppConfig {
    AppConfig {
        optics: OpticsParams {
            noise_sigma: 0.0,
            ..app.optics.clone()
        },
        ..app.clone()
    }
}

/// Config for a small stained slide.
pub fn small_app(rows: usize, cols: usize) -> AppConfig {
    AppConfig {
        slide: SlideSpec {
            rows,
            cols,
            ..SlideSpec::default()
        },
        ..AppConfig::default()
    }
}

pub fn calibrated(app: &AppConfig) -> CalibrationCurve {
    bench::calibrate(app).unwrap()
}

pub fn slide(app: &AppConfig) -> SlideModel {
    generate_slide(&app.slide, app.slide_seed()).unwrap()
}

pub fn survey_cfg(app: &AppConfig, blur_px: f64) -> SurveyConfig {
    SurveyConfig {
        blur_px,
        seed: app.survey_seed(),
        ..app.survey.clone()
    }
}

/// `|z_focus - z_true|` per tile of a complete map, row-major.
pub fn residuals(model: &SlideModel, map: &dualfocus_core::FocusMap) -> Vec<f64> {
    map.entries
        .iter()
        .map(|e| {
            let z = model
                .z_true(dualfocus_core::TileIndex::new(e.row, e.col))
                .unwrap();
            (e.z_focus_um.unwrap() - z).abs()
        })
        .collect()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}
