//! Thin 2D FFT layer over `rustfft` for square and rectangular tiles.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use ndarray::{Array2, Axis};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

type PlanCache = HashMap<(usize, bool), Arc<dyn Fft<f64>>>;

thread_local! {
    static PLANNER: RefCell<(FftPlanner<f64>, PlanCache)> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

pub(crate) fn plan(len: usize, direction: FftDirection) -> Arc<dyn Fft<f64>> {
    let key = (len, direction == FftDirection::Forward);
    PLANNER.with(|p| {
        let (planner, cache) = &mut *p.borrow_mut();
        cache
            .entry(key)
            .or_insert_with(|| planner.plan_fft(len, direction))
            .clone()
    })
}

fn transform_rows(data: &mut Array2<Complex64>, direction: FftDirection) {
    let fft = plan(data.ncols(), direction);
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
    for mut row in data.axis_iter_mut(Axis(0)) {
        let slice = row.as_slice_mut().expect("row-major array");
        fft.process_with_scratch(slice, &mut scratch);
    }
}

/// Cache-blocked transpose of a row-major `rows x cols` buffer.
fn transpose_into(src: &[Complex64], dst: &mut [Complex64], rows: usize, cols: usize) {
    const B: usize = 32;
    for r0 in (0..rows).step_by(B) {
        for c0 in (0..cols).step_by(B) {
            for r in r0..(r0 + B).min(rows) {
                for c in c0..(c0 + B).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

fn transform(data: &mut Array2<Complex64>, direction: FftDirection) {
    let (rows, cols) = data.dim();
    transform_rows(data, direction);
    let mut t = Array2::<Complex64>::zeros((cols, rows));
    {
        let src = data.as_slice().expect("row-major array");
        transpose_into(src, t.as_slice_mut().expect("fresh array"), rows, cols);
    }
    transform_rows(&mut t, direction);
    let dst = data.as_slice_mut().expect("row-major array");
    transpose_into(t.as_slice().expect("fresh array"), dst, cols, rows);
}

/// Unnormalized forward 2D DFT, in place.
pub fn fft2(data: &mut Array2<Complex64>) {
    transform(data, FftDirection::Forward);
}

/// Inverse 2D DFT including the `1 / (rows * cols)` normalization.
pub fn ifft2(data: &mut Array2<Complex64>) {
    transform(data, FftDirection::Inverse);
    let scale = 1.0 / data.len() as f64;
    data.mapv_inplace(|v| v * scale);
}

pub fn to_complex(real: &Array2<f64>) -> Array2<Complex64> {
    real.mapv(|v| Complex64::new(v, 0.0))
}

pub fn real_part(data: &Array2<Complex64>) -> Array2<f64> {
    data.mapv(|v| v.re)
}

/// Signed frequency of DFT bin `k` out of `n`, in cycles per sample.
/// The Nyquist bin maps to `-0.5`; every transfer function used here is
/// even, so the sign there does not matter.
#[inline]
pub fn freq(k: usize, n: usize) -> f64 {
    if 2 * k < n {
        k as f64 / n as f64
    } else {
        k as f64 / n as f64 - 1.0
    }
}

/// Multiply a spectrum in place by a separable-in-index real transfer
/// function `h(fy, fx)`.
pub fn apply_transfer(spectrum: &mut Array2<Complex64>, h: impl Fn(f64, f64) -> f64) {
    let (rows, cols) = spectrum.dim();
    let fx: Vec<f64> = (0..cols).map(|k| freq(k, cols)).collect();
    for (r, mut row) in spectrum.axis_iter_mut(Axis(0)).enumerate() {
        let fy = freq(r, rows);
        for (v, &fxk) in row.iter_mut().zip(&fx) {
            *v *= h(fy, fxk);
        }
    }
}

/// Multiply a spectrum in place by `hy(fy) * hx(fx)`, given the factors
/// already sampled on the bin frequencies.
pub fn apply_separable(spectrum: &mut Array2<Complex64>, hy: &[f64], hx: &[f64]) {
    debug_assert_eq!(spectrum.dim(), (hy.len(), hx.len()));
    for (mut row, &y) in spectrum.axis_iter_mut(Axis(0)).zip(hy) {
        for (v, &x) in row.iter_mut().zip(hx) {
            *v *= y * x;
        }
    }
}

/// Sample `h` on the signed bin frequencies of an `n`-point transform.
pub fn sample(n: usize, h: impl Fn(f64) -> f64) -> Vec<f64> {
    (0..n).map(|k| h(freq(k, n))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_recovers_input() {
        let a = Array2::from_shape_fn((8, 16), |(r, c)| ((r * 7 + c * 3) % 5) as f64 - 1.5);
        let mut s = to_complex(&a);
        fft2(&mut s);
        ifft2(&mut s);
        let back = real_part(&s);
        for (x, y) in a.iter().zip(back.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn dc_bin_is_the_sum() {
        let a = Array2::from_elem((4, 6), 0.5);
        let mut s = to_complex(&a);
        fft2(&mut s);
        assert!((s[[0, 0]].re - 12.0).abs() < 1e-12);
        assert!(s.iter().skip(1).all(|v| v.norm() < 1e-12));
    }

    #[test]
    fn separable_matches_closure() {
        let a = Array2::from_shape_fn((6, 8), |(r, c)| Complex64::new(r as f64, c as f64));
        let (mut x, mut y) = (a.clone(), a);
        apply_transfer(&mut x, |fy, fx| (1.0 + fy) * (2.0 - fx * fx));
        apply_separable(&mut y, &sample(6, |f| 1.0 + f), &sample(8, |f| 2.0 - f * f));
        for (p, q) in x.iter().zip(y.iter()) {
            assert!((p - q).norm() < 1e-12);
        }
    }

    #[test]
    fn signed_frequencies() {
        assert_eq!(freq(0, 8), 0.0);
        assert_eq!(freq(3, 8), 0.375);
        assert_eq!(freq(4, 8), -0.5);
        assert_eq!(freq(7, 8), -0.125);
    }
}
