//! Shared FFT plan cache.
//!
//! rustfft plans are cheap to reuse and expensive to rebuild per call; every
//! module that touches the frequency domain goes through this cache.

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

thread_local! {
    static PLANS: RefCell<PlanCache> = RefCell::new(PlanCache::default());
}

#[derive(Default)]
struct PlanCache {
    forward: HashMap<usize, Arc<dyn Fft<f64>>>,
    inverse: HashMap<usize, Arc<dyn Fft<f64>>>,
}

/// In-place forward FFT (unnormalized, rustfft convention).
pub fn fft_in_place(data: &mut [Complex64]) {
    let n = data.len();
    PLANS.with(|c| {
        let mut c = c.borrow_mut();
        let plan = c
            .forward
            .entry(n)
            .or_insert_with(|| FftPlanner::new().plan_fft_forward(n))
            .clone();
        plan.process(data);
    });
}

/// In-place inverse FFT, normalized by 1/N so `ifft(fft(x)) == x`.
pub fn ifft_in_place(data: &mut [Complex64]) {
    let n = data.len();
    PLANS.with(|c| {
        let mut c = c.borrow_mut();
        let plan = c
            .inverse
            .entry(n)
            .or_insert_with(|| FftPlanner::new().plan_fft_inverse(n))
            .clone();
        plan.process(data);
    });
    let scale = 1.0 / n as f64;
    for v in data.iter_mut() {
        *v *= scale;
    }
}

/// FFT bin center frequency in Hz for bin `k` of an `n`-point transform
/// at sample rate `fs` (negative frequencies for k >= n/2).
pub fn bin_freq_hz(k: usize, n: usize, fs: f64) -> f64 {
    let k = k as f64;
    let n = n as f64;
    if k < n / 2.0 {
        k * fs / n
    } else {
        (k - n) * fs / n
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fft_ifft_round_trip() {
        let mut data: Vec<Complex64> = (0..240)
            .map(|i| Complex64::new((i as f64).sin(), (i as f64 * 0.7).cos()))
            .collect();
        let orig = data.clone();
        fft_in_place(&mut data);
        ifft_in_place(&mut data);
        for (a, b) in data.iter().zip(orig.iter()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn bin_freq_wraps_negative() {
        assert_eq!(bin_freq_hz(0, 8, 8000.0), 0.0);
        assert_eq!(bin_freq_hz(1, 8, 8000.0), 1000.0);
        assert_eq!(bin_freq_hz(4, 8, 8000.0), -4000.0);
        assert_eq!(bin_freq_hz(7, 8, 8000.0), -1000.0);
    }
}
