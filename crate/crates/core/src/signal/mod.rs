//! Complex-baseband signal types, band-limited power measurement, and IQ file I/O.
//!
//! Everything downstream (synthesis, scene mixing, feature extraction) trades in
//! [`IqBuffer`]s. Power readings are reported in dBm/MHz against a fixed digital
//! reference so that SINR arithmetic matches link-budget conventions.

mod filter;
mod io;

pub use filter::bandpass;
pub use io::{read_iq_file, write_iq_file, DetectLabel, SceneMeta, IQ_FORMAT_VERSION};

use crate::error::{Error, Result};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Digital-to-dBm reference: a unit-peak-amplitude signal occupying 1 MHz
/// reads REF_DBM dBm/MHz. Only power *ratios* (SINR) affect results; the
/// offset keeps log output comparable to CBRS link budgets.
pub const REF_DBM: f64 = -89.0;

/// A complex baseband sample sequence with sample-rate metadata.
///
/// Samples are dimensionless baseband amplitudes. Buffers are immutable values
/// after construction; all operations on them are pure functions.
#[derive(Debug, Clone, PartialEq)]
pub struct IqBuffer {
    samples: Vec<Complex64>,
    sample_rate_hz: f64,
    center_freq_hz: f64,
}

impl IqBuffer {
    /// Construct a buffer. `sample_rate_hz` must be positive; empty sample
    /// vectors are constructible but rejected by every measurement op.
    pub fn new(samples: Vec<Complex64>, sample_rate_hz: f64) -> Self {
        assert!(
            sample_rate_hz > 0.0 && sample_rate_hz.is_finite(),
            "sample rate must be positive"
        );
        Self {
            samples,
            sample_rate_hz,
            center_freq_hz: 0.0,
        }
    }

    pub fn with_center_freq(mut self, center_freq_hz: f64) -> Self {
        assert!(center_freq_hz >= 0.0);
        self.center_freq_hz = center_freq_hz;
        self
    }

    /// All-zero buffer of `n` samples.
    pub fn zeros(n: usize, sample_rate_hz: f64) -> Self {
        Self::new(vec![Complex64::new(0.0, 0.0); n], sample_rate_hz)
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn center_freq_hz(&self) -> f64 {
        self.center_freq_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz
    }

    /// New buffer with every sample multiplied by a real gain.
    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate_hz: self.sample_rate_hz,
            center_freq_hz: self.center_freq_hz,
        }
    }

    /// Elementwise sum of buffers sharing length and sample rate.
    pub fn sum(parts: &[&IqBuffer]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidInput("sum of zero buffers".into()))?;
        let n = first.len();
        let fs = first.sample_rate_hz;
        for p in parts {
            if p.len() != n {
                return Err(Error::ShapeMismatch(format!(
                    "buffer lengths differ: {} vs {}",
                    p.len(),
                    n
                )));
            }
            if p.sample_rate_hz != fs {
                return Err(Error::ShapeMismatch("sample rates differ".into()));
            }
        }
        let mut samples = vec![Complex64::new(0.0, 0.0); n];
        for p in parts {
            for (acc, s) in samples.iter_mut().zip(p.samples.iter()) {
                *acc += s;
            }
        }
        Ok(Self {
            samples,
            sample_rate_hz: fs,
            center_freq_hz: first.center_freq_hz,
        })
    }

    /// Quantize samples through the on-disk f32 representation.
    pub fn quantized_f32(&self) -> Self {
        Self {
            samples: self
                .samples
                .iter()
                .map(|s| Complex64::new(s.re as f32 as f64, s.im as f32 as f64))
                .collect(),
            sample_rate_hz: self.sample_rate_hz,
            center_freq_hz: self.center_freq_hz,
        }
    }

    /// Delay by `shift` samples (zeros shifted in at the front), keeping length.
    pub fn delayed(&self, shift: usize) -> Self {
        let n = self.samples.len();
        let mut samples = vec![Complex64::new(0.0, 0.0); n];
        if shift < n {
            samples[shift..].copy_from_slice(&self.samples[..n - shift]);
        }
        Self {
            samples,
            sample_rate_hz: self.sample_rate_hz,
            center_freq_hz: self.center_freq_hz,
        }
    }
}

/// Baseband-relative band edges in Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandSpec {
    pub low_hz: f64,
    pub high_hz: f64,
}

impl BandSpec {
    pub fn new(low_hz: f64, high_hz: f64) -> Result<Self> {
        if !(low_hz < high_hz) || !low_hz.is_finite() || !high_hz.is_finite() {
            return Err(Error::InvalidParams(format!(
                "band edges must satisfy low < high, got [{low_hz}, {high_hz}]"
            )));
        }
        Ok(Self { low_hz, high_hz })
    }

    /// Band centered at `center_hz` with total width `width_hz`.
    pub fn centered(center_hz: f64, width_hz: f64) -> Result<Self> {
        Self::new(center_hz - width_hz / 2.0, center_hz + width_hz / 2.0)
    }

    /// Full Nyquist interval of a buffer.
    pub fn full(sample_rate_hz: f64) -> Self {
        Self {
            low_hz: -sample_rate_hz / 2.0,
            high_hz: sample_rate_hz / 2.0,
        }
    }

    pub fn width_hz(&self) -> f64 {
        self.high_hz - self.low_hz
    }

    pub fn width_mhz(&self) -> f64 {
        self.width_hz() / 1e6
    }

    pub fn center_hz(&self) -> f64 {
        (self.low_hz + self.high_hz) / 2.0
    }

    /// Check the band lies within the buffer's Nyquist interval.
    /// A small epsilon absorbs round-off at exactly ±fs/2.
    pub fn validate_for(&self, buf: &IqBuffer) -> Result<()> {
        let nyq = buf.sample_rate_hz / 2.0;
        let eps = nyq * 1e-12;
        if self.low_hz < -nyq - eps || self.high_hz > nyq + eps {
            return Err(Error::BandOutOfRange {
                low_hz: self.low_hz,
                high_hz: self.high_hz,
                nyquist_hz: nyq,
            });
        }
        Ok(())
    }
}

/// Peak and average in-band power density readings for one buffer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerReading {
    pub peak_per_mhz_dbm: f64,
    pub avg_per_mhz_dbm: f64,
}

fn to_dbm_per_mhz(linear: f64, bw_mhz: f64) -> f64 {
    10.0 * (linear / bw_mhz).log10() + REF_DBM
}

/// Peak and average |x|^2 of the band-filtered buffer, in linear units
/// (pre-log). Shared by both measurement ops so that `peak >= avg` holds
/// exactly on the same filtered samples.
pub fn in_band_power_linear(buf: &IqBuffer, band: &BandSpec) -> Result<(f64, f64)> {
    if buf.is_empty() {
        return Err(Error::InvalidInput(
            "cannot measure power of an empty buffer".into(),
        ));
    }
    band.validate_for(buf)?;
    let filtered = bandpass(buf, band)?;
    let mut peak = 0.0f64;
    let mut acc = 0.0f64;
    for s in filtered.samples() {
        let p = s.norm_sqr();
        if p > peak {
            peak = p;
        }
        acc += p;
    }
    Ok((peak, acc / filtered.len() as f64))
}

/// Peak in-band power per MHz in dBm/MHz: `10*log10(max_t |x_band|^2 / BW_MHz) + REF_DBM`.
pub fn measure_peak_power_per_mhz(buf: &IqBuffer, band: &BandSpec) -> Result<f64> {
    let (peak, _) = in_band_power_linear(buf, band)?;
    if peak == 0.0 {
        return Err(Error::NegligiblePower);
    }
    Ok(to_dbm_per_mhz(peak, band.width_mhz()))
}

/// Average in-band power per MHz in dBm/MHz: `10*log10(mean_t |x_band|^2 / BW_MHz) + REF_DBM`.
pub fn measure_avg_power_per_mhz(buf: &IqBuffer, band: &BandSpec) -> Result<f64> {
    let (_, avg) = in_band_power_linear(buf, band)?;
    if avg == 0.0 {
        return Err(Error::NegligiblePower);
    }
    Ok(to_dbm_per_mhz(avg, band.width_mhz()))
}

/// Both readings from a single filter pass.
pub fn measure_power(buf: &IqBuffer, band: &BandSpec) -> Result<PowerReading> {
    let (peak, avg) = in_band_power_linear(buf, band)?;
    if peak == 0.0 || avg == 0.0 {
        return Err(Error::NegligiblePower);
    }
    Ok(PowerReading {
        peak_per_mhz_dbm: to_dbm_per_mhz(peak, band.width_mhz()),
        avg_per_mhz_dbm: to_dbm_per_mhz(avg, band.width_mhz()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::wgn;

    #[test]
    fn constant_buffer_full_band_reads_ref_dbm() {
        // fs = 1 MHz so the full Nyquist band is exactly 1 MHz wide.
        let buf = IqBuffer::new(vec![Complex64::new(1.0, 0.0); 4096], 1e6);
        let band = BandSpec::full(1e6);
        let r = measure_power(&buf, &band).unwrap();
        assert!((r.peak_per_mhz_dbm - REF_DBM).abs() < 1e-9);
        assert!((r.avg_per_mhz_dbm - REF_DBM).abs() < 1e-9);
    }

    #[test]
    fn empty_buffer_rejected() {
        let buf = IqBuffer::new(vec![], 1e6);
        let band = BandSpec::full(1e6);
        assert!(matches!(
            measure_peak_power_per_mhz(&buf, &band),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn zero_buffer_is_negligible_power() {
        let buf = IqBuffer::zeros(1024, 1e6);
        let band = BandSpec::full(1e6);
        assert!(matches!(
            measure_peak_power_per_mhz(&buf, &band),
            Err(Error::NegligiblePower)
        ));
        assert!(matches!(
            measure_avg_power_per_mhz(&buf, &band),
            Err(Error::NegligiblePower)
        ));
    }

    #[test]
    fn band_outside_nyquist_rejected() {
        let buf = IqBuffer::zeros(64, 1e6);
        let band = BandSpec::new(0.0, 0.6e6).unwrap();
        assert!(matches!(
            measure_peak_power_per_mhz(&buf, &band),
            Err(Error::BandOutOfRange { .. })
        ));
    }

    #[test]
    fn wgn_unit_variance_reads_ref_minus_bandwidth() {
        // sigma^2 = 1 white noise over the full Nyquist band of width W MHz
        // must read REF_DBM - 10*log10(W) dBm/MHz.
        let fs = 8e6;
        let buf = wgn(1 << 20, fs, 1.0, 01234);
        let band = BandSpec::full(fs);
        let avg = measure_avg_power_per_mhz(&buf, &band).unwrap();
        let expected = REF_DBM - 10.0 * (fs / 1e6).log10();
        assert!(
            (avg - expected).abs() < 0.3,
            "avg {avg} dBm/MHz, expected {expected}"
        );
    }

    #[test]
    fn independent_noise_sum_gains_3db() {
        let fs = 4e6;
        let a = wgn(1 << 20, fs, 1.0, 7);
        let b = wgn(1 << 20, fs, 1.0, 8);
        let band = BandSpec::full(fs);
        let one = measure_avg_power_per_mhz(&a, &band).unwrap();
        let both = measure_avg_power_per_mhz(&IqBuffer::sum(&[&a, &b]).unwrap(), &band).unwrap();
        assert!(
            (both - one - 3.01).abs() < 0.3,
            "sum gained {} dB",
            both - one
        );
    }

    #[test]
    fn peak_at_least_avg_linear() {
        let fs = 2e6;
        let buf = wgn(1 << 14, fs, 1.0, 99);
        let band = BandSpec::new(-0.4e6, 0.3e6).unwrap();
        let (peak, avg) = in_band_power_linear(&buf, &band).unwrap();
        assert!(peak >= avg);
    }

    #[test]
    fn scaling_shifts_power_by_20log10k() {
        let fs = 2e6;
        let buf = wgn(1 << 14, fs, 1.0, 55);
        let band = BandSpec::new(-0.5e6, 0.25e6).unwrap();
        for k in [0.5, 2.0, 7.3] {
            let base = measure_power(&buf, &band).unwrap();
            let scaled = measure_power(&buf.scaled(k), &band).unwrap();
            let shift = 20.0 * (k as f64).log10();
            assert!(
                (scaled.peak_per_mhz_dbm - base.peak_per_mhz_dbm - shift).abs() < 1e-9,
                "peak shift off"
            );
            assert!(
                (scaled.avg_per_mhz_dbm - base.avg_per_mhz_dbm - shift).abs() < 1e-9,
                "avg shift off"
            );
        }
    }

    #[test]
    fn delayed_shifts_samples() {
        let fs = 1e6;
        let buf = IqBuffer::new(
            (0..8).map(|i| Complex64::new(i as f64, 0.0)).collect(),
            fs,
        );
        let d = buf.delayed(3);
        assert_eq!(d.samples()[0], Complex64::new(0.0, 0.0));
        assert_eq!(d.samples()[3], Complex64::new(0.0, 0.0));
        assert_eq!(d.samples()[4], Complex64::new(1.0, 0.0));
        assert_eq!(d.len(), 8);
    }
}
