//! Independent numeric oracles shared by unit and integration tests.
//!
//! Everything here is deliberately brute-force (direct sums, finite
//! differences, naive regressions) so it cannot share a failure mode with the
//! implementation paths it checks.

use crate::signal::IqBuffer;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

/// Circularly-symmetric complex white Gaussian noise with per-sample
/// variance `var` (Box-Muller, independent of the library's AWGN path).
pub fn wgn(n: usize, fs: f64, var: f64, seed: u64) -> IqBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = (var / 2.0).sqrt();
    let samples = (0..n)
        .map(|_| {
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            let r = (-2.0 * u1.ln()).sqrt();
            Complex64::new(
                sigma * r * (2.0 * PI * u2).cos(),
                sigma * r * (2.0 * PI * u2).sin(),
            )
        })
        .collect();
    IqBuffer::new(samples, fs)
}

/// Unwrapped instantaneous phase of a complex sequence.
pub fn unwrap_phase(samples: &[Complex64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(samples.len());
    let mut offset = 0.0f64;
    let mut prev = 0.0f64;
    for (i, s) in samples.iter().enumerate() {
        let raw = s.im.atan2(s.re);
        if i > 0 {
            let mut d = raw - prev;
            while d > PI {
                d -= 2.0 * PI;
                offset -= 2.0 * PI;
            }
            while d < -PI {
                d += 2.0 * PI;
                offset += 2.0 * PI;
            }
        }
        prev = raw;
        out.push(raw + offset);
    }
    out
}

/// Chirp-rate estimate in Hz/s: least-squares slope of the phase-difference
/// instantaneous frequency against time.
pub fn fit_chirp_rate(samples: &[Complex64], fs: f64) -> f64 {
    let phase = unwrap_phase(samples);
    let freqs: Vec<f64> = phase
        .windows(2)
        .map(|w| (w[1] - w[0]) * fs / (2.0 * PI))
        .collect();
    let times: Vec<f64> = (0..freqs.len()).map(|i| (i as f64 + 0.5) / fs).collect();
    linear_slope(&times, &freqs)
}

/// Ordinary least-squares slope of y against x.
pub fn linear_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (xi, yi) in x.iter().zip(y.iter()) {
        num += (xi - mx) * (yi - my);
        den += (xi - mx) * (xi - mx);
    }
    num / den
}

/// Central finite-difference gradient check in f64: perturbs every weight by
/// ±eps, rebuilds the training-mode loss with an identically-seeded RNG (so
/// dropout masks repeat), and compares against the analytic gradient.
/// Returns the worst relative error.
pub fn fd_gradient_check(
    model: &mut crate::nn::Model<f64>,
    batch: &crate::nn::Batch<f64>,
    eps: f64,
    rng_seed: u64,
) -> f64 {
    use rand::SeedableRng;
    let loss_at = |m: &crate::nn::Model<f64>| -> f64 {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(rng_seed);
        m.loss_and_grads(batch, &mut rng).unwrap().0
    };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(rng_seed);
    let (_, analytic) = model.loss_and_grads(batch, &mut rng).unwrap();
    let base = model.params_flat();
    let mut worst = 0.0f64;
    for i in 0..base.len() {
        let mut up = base.clone();
        up[i] += eps;
        model.set_params_flat(&up).unwrap();
        let lp = loss_at(model);
        let mut dn = base.clone();
        dn[i] -= eps;
        model.set_params_flat(&dn).unwrap();
        let lm = loss_at(model);
        let fd = (lp - lm) / (2.0 * eps);
        let denom = fd.abs().max(analytic[i].abs()).max(1e-6);
        worst = worst.max((fd - analytic[i]).abs() / denom);
    }
    model.set_params_flat(&base).unwrap();
    worst
}

/// Fraction of total energy inside [low_hz, high_hz], by direct periodogram
/// integration over an N-point DFT.
pub fn energy_fraction_in_band(buf: &IqBuffer, low_hz: f64, high_hz: f64) -> f64 {
    let mut x: Vec<Complex64> = buf.samples().to_vec();
    crate::fft::fft_in_place(&mut x);
    let n = x.len();
    let fs = buf.sample_rate_hz();
    let mut inside = 0.0f64;
    let mut total = 0.0f64;
    for (k, v) in x.iter().enumerate() {
        let f = crate::fft::bin_freq_hz(k, n, fs);
        let p = v.norm_sqr();
        total += p;
        if f >= low_hz && f <= high_hz {
            inside += p;
        }
    }
    inside / total
}
