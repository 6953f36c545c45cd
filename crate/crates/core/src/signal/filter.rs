//! Band filtering: zero-phase windowed-sinc FIR applied in the frequency domain.
//!
//! The filter is a Blackman-Harris-windowed sinc lowpass (stopband ~92 dB,
//! step overshoot well under 0.1 dB so pulse edges do not inflate peak
//! readings) modulated to the band center. Applying it as a multiplication
//! against the buffer-length FFT of the centered impulse response gives zero
//! group delay and exact linear-phase behavior; buffer edges are treated
//! circularly.

use super::{BandSpec, IqBuffer};
use crate::error::Result;
use crate::fft::{fft_in_place, ifft_in_place};
use num_complex::Complex64;
use std::f64::consts::PI;

/// Tap count for a transition width of bw/6: keeps re-filtering loss under
/// 0.1 dB while staying quasi-static against the fastest catalog chirps
/// (longer filters ring on swept band edges and inflate peak readings).
fn taps_for(band_width_hz: f64, fs: f64, buf_len: usize) -> usize {
    let ideal = (45.0 * fs / band_width_hz).round() as usize;
    let cap = if buf_len > 3 { buf_len - 1 } else { 3 };
    let l = ideal.clamp(31, 4097).min(cap);
    if l % 2 == 0 {
        l - 1
    } else {
        l
    }
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Blackman-Harris-windowed sinc lowpass with cutoff `fc_norm` (fraction of
/// fs, in (0, 0.5]). DC gain normalized to exactly 1.
fn lowpass_taps(len: usize, fc_norm: f64) -> Vec<f64> {
    let m = (len - 1) as f64 / 2.0;
    let mut taps: Vec<f64> = (0..len)
        .map(|n| {
            let x = n as f64 - m;
            let th = 2.0 * PI * n as f64 / (len - 1) as f64;
            let w = 0.35875 - 0.48829 * th.cos() + 0.14128 * (2.0 * th).cos()
                - 0.01168 * (3.0 * th).cos();
            2.0 * fc_norm * sinc(2.0 * fc_norm * x) * w
        })
        .collect();
    let dc: f64 = taps.iter().sum();
    for t in taps.iter_mut() {
        *t /= dc;
    }
    taps
}

/// Filter `buf` to `band`. Output has the same length and sample rate;
/// out-of-band energy is attenuated >= 40 dB, in-band amplitude within ±0.5 dB.
pub fn bandpass(buf: &IqBuffer, band: &BandSpec) -> Result<IqBuffer> {
    band.validate_for(buf)?;
    let n = buf.len();
    if n == 0 {
        return Ok(buf.clone());
    }
    let fs = buf.sample_rate_hz();

    // A band covering the whole Nyquist interval is the identity: the
    // windowed sinc at fc = fs/2 collapses to a unit impulse.
    let full = band.low_hz <= -fs / 2.0 + fs * 1e-12 && band.high_hz >= fs / 2.0 - fs * 1e-12;
    if full {
        return Ok(buf.clone());
    }

    let len = taps_for(band.width_hz(), fs, n);
    let half_width = band.width_hz() / 2.0;
    let fc_norm = (half_width / fs).min(0.5);
    let lp = lowpass_taps(len, fc_norm);
    let center = band.center_hz();

    // Centered impulse response, modulated to the band center and laid out
    // circularly so the filter is zero-phase.
    let m = (len - 1) / 2;
    let mut h = vec![Complex64::new(0.0, 0.0); n];
    for (i, &tap) in lp.iter().enumerate() {
        let k = i as i64 - m as i64;
        let idx = k.rem_euclid(n as i64) as usize;
        let phase = 2.0 * PI * center * k as f64 / fs;
        h[idx] += tap * Complex64::new(phase.cos(), phase.sin());
    }
    fft_in_place(&mut h);

    let mut x: Vec<Complex64> = buf.samples().to_vec();
    fft_in_place(&mut x);
    for (xi, hi) in x.iter_mut().zip(h.iter()) {
        *xi *= hi;
    }
    ifft_in_place(&mut x);

    Ok(IqBuffer::new(x, fs).with_center_freq(buf.center_freq_hz()))
}
