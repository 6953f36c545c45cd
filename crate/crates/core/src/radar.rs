//! LFM radar pulse-train synthesis.
//!
//! A pulse train is P copies of a linear-chirp component pulse
//! `x(t) = A*exp(j(phi0 + 2*pi*f0*t + pi*g*t^2))` placed at multiples of the
//! pulse repetition interval and gated by a rectangular window; everything
//! between pulses is exactly zero. The six named waveforms span short
//! high-PRF tracking radars (BIN1) through long-pulse surveillance sets
//! (BIN2/BIN3).

use crate::error::{Error, Result};
use crate::signal::IqBuffer;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// The six catalog waveform identifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WaveformName {
    #[serde(rename = "BIN1-A")]
    Bin1A,
    #[serde(rename = "BIN1-B")]
    Bin1B,
    #[serde(rename = "BIN2-A")]
    Bin2A,
    #[serde(rename = "BIN2-B")]
    Bin2B,
    #[serde(rename = "BIN3-A")]
    Bin3A,
    #[serde(rename = "BIN3-B")]
    Bin3B,
}

impl WaveformName {
    pub const ALL: [WaveformName; 6] = [
        WaveformName::Bin1A,
        WaveformName::Bin1B,
        WaveformName::Bin2A,
        WaveformName::Bin2B,
        WaveformName::Bin3A,
        WaveformName::Bin3B,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            WaveformName::Bin1A => "BIN1-A",
            WaveformName::Bin1B => "BIN1-B",
            WaveformName::Bin2A => "BIN2-A",
            WaveformName::Bin2B => "BIN2-B",
            WaveformName::Bin3A => "BIN3-A",
            WaveformName::Bin3B => "BIN3-B",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|w| w.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidParams(format!("unknown waveform '{s}'")))
    }

    /// Stable class index used by the 6-way identifier.
    pub fn class_index(&self) -> usize {
        Self::ALL.iter().position(|w| w == self).unwrap()
    }
}

impl std::fmt::Display for WaveformName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// PW/PRF/BW parameterization of one waveform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadarWaveformSpec {
    pub name: WaveformName,
    /// Pulse width (seconds).
    pub pw_s: f64,
    /// Pulse repetition frequency (Hz).
    pub prf_hz: f64,
    /// Swept bandwidth (Hz).
    pub bw_hz: f64,
}

impl RadarWaveformSpec {
    /// Chirp rate g = B / PW in Hz/s.
    pub fn chirp_rate_hz_per_s(&self) -> f64 {
        self.bw_hz / self.pw_s
    }

    /// Pulse repetition interval T = 1/PRF in seconds.
    pub fn pri_s(&self) -> f64 {
        1.0 / self.prf_hz
    }

    /// PW * PRF; must not exceed 1.
    pub fn duty_cycle(&self) -> f64 {
        self.pw_s * self.prf_hz
    }
}

/// The six catalog waveforms.
pub fn catalog() -> Vec<RadarWaveformSpec> {
    let mk = |name, pw_us: f64, prf_hz: f64, bw_mhz: f64| RadarWaveformSpec {
        name,
        pw_s: pw_us * 1e-6,
        prf_hz,
        bw_hz: bw_mhz * 1e6,
    };
    vec![
        mk(WaveformName::Bin1A, 1.0, 20_000.0, 1.0),
        mk(WaveformName::Bin1B, 2.0, 30_000.0, 8.0),
        mk(WaveformName::Bin2A, 50.0, 200.0, 20.0),
        mk(WaveformName::Bin2B, 100.0, 200.0, 30.0),
        mk(WaveformName::Bin3A, 10.0, 100.0, 5.0),
        mk(WaveformName::Bin3B, 50.0, 150.0, 15.0),
    ]
}

/// Look up one catalog entry.
pub fn waveform(name: WaveformName) -> RadarWaveformSpec {
    catalog().into_iter().find(|s| s.name == name).unwrap()
}

/// Full parameter set for one pulse train.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseTrainParams {
    pub spec: RadarWaveformSpec,
    /// Pulse amplitude A.
    pub amplitude: f64,
    /// Initial phase offset phi0 in radians.
    pub phase0_rad: f64,
    /// Chirp starting frequency within the sampled band (Hz). The sweep
    /// occupies [f0, f0 + BW].
    pub f0_hz: f64,
    pub num_pulses: usize,
    pub sample_rate_hz: f64,
    pub total_duration_s: f64,
}

impl PulseTrainParams {
    pub fn validate(&self) -> Result<()> {
        let t = self.spec.pri_s();
        if self.spec.duty_cycle() > 1.0 {
            return Err(Error::InvalidParams(format!(
                "duty cycle {} exceeds 1",
                self.spec.duty_cycle()
            )));
        }
        if self.num_pulses == 0 {
            return Err(Error::InvalidParams("num_pulses must be >= 1".into()));
        }
        // Last pulse must start inside the capture: (P-1)*T <= D.
        if (self.num_pulses - 1) as f64 * t > self.total_duration_s {
            return Err(Error::InvalidParams(format!(
                "{} pulses at PRI {t} s exceed duration {} s",
                self.num_pulses, self.total_duration_s
            )));
        }
        validate_sweep(&self.spec, self.f0_hz, self.sample_rate_hz)
    }
}

fn validate_sweep(spec: &RadarWaveformSpec, f0_hz: f64, fs: f64) -> Result<()> {
    if f0_hz + spec.bw_hz > fs / 2.0 || f0_hz < -fs / 2.0 {
        return Err(Error::InvalidParams(format!(
            "sweep [{}, {}] Hz violates Nyquist ±{} Hz",
            f0_hz,
            f0_hz + spec.bw_hz,
            fs / 2.0
        )));
    }
    Ok(())
}

/// Synthesize one component pulse: `round(PW*fs)` samples of
/// `A*exp(j(phi0 + 2*pi*f0*t + pi*g*t^2))` with `t = n/fs`.
pub fn synthesize_pulse(
    spec: &RadarWaveformSpec,
    amplitude: f64,
    phase0_rad: f64,
    f0_hz: f64,
    sample_rate_hz: f64,
) -> Result<IqBuffer> {
    validate_sweep(spec, f0_hz, sample_rate_hz)?;
    let n = (spec.pw_s * sample_rate_hz).round() as usize;
    if (spec.pw_s * sample_rate_hz) < 8.0 {
        return Err(Error::InvalidParams(format!(
            "pulse spans only {:.2} samples at fs={sample_rate_hz}; need >= 8",
            spec.pw_s * sample_rate_hz
        )));
    }
    let g = spec.chirp_rate_hz_per_s();
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / sample_rate_hz;
            let phase = phase0_rad + 2.0 * PI * f0_hz * t + PI * g * t * t;
            amplitude * Complex64::new(phase.cos(), phase.sin())
        })
        .collect();
    Ok(IqBuffer::new(samples, sample_rate_hz))
}

/// Synthesize a gated pulse train: P copies of the component pulse at sample
/// offsets `round(p*T*fs)`, inter-pulse samples exactly zero. A trailing pulse
/// that starts inside the capture but runs past its end is truncated at the
/// buffer edge.
pub fn synthesize_pulse_train(params: &PulseTrainParams) -> Result<IqBuffer> {
    params.validate()?;
    let fs = params.sample_rate_hz;
    let n_total = (params.total_duration_s * fs).round() as usize;
    let pulse = synthesize_pulse(
        &params.spec,
        params.amplitude,
        params.phase0_rad,
        params.f0_hz,
        fs,
    )?;
    let pri_samples = params.spec.pri_s() * fs;
    let mut samples = vec![Complex64::new(0.0, 0.0); n_total];
    let mut prev_end = 0usize;
    for p in 0..params.num_pulses {
        let start = (p as f64 * pri_samples).round() as usize;
        if p > 0 && start < prev_end {
            return Err(Error::InvalidParams(
                "pulses overlap after sample rounding".into(),
            ));
        }
        if start >= n_total {
            break;
        }
        let len = pulse.len().min(n_total - start);
        samples[start..start + len].copy_from_slice(&pulse.samples()[..len]);
        prev_end = start + len;
    }
    Ok(IqBuffer::new(samples, fs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{fit_chirp_rate, unwrap_phase};

    const FS: f64 = 61.44e6;

    #[test]
    fn catalog_matches_published_specs() {
        let cat = catalog();
        assert_eq!(cat.len(), 6);
        let b1b = waveform(WaveformName::Bin1B);
        assert_eq!(b1b.pw_s, 2e-6);
        assert_eq!(b1b.prf_hz, 30_000.0);
        assert_eq!(b1b.bw_hz, 8e6);
        assert!((b1b.chirp_rate_hz_per_s() - 4000e9).abs() / 4000e9 < 1e-12);

        let b2a = waveform(WaveformName::Bin2A);
        assert!((b2a.chirp_rate_hz_per_s() - 400e9).abs() / 400e9 < 1e-12);

        // Expected chirp rates, GHz/s, in catalog order.
        let rates = [1000.0, 4000.0, 400.0, 300.0, 500.0, 300.0];
        for (spec, ghz) in cat.iter().zip(rates) {
            assert!(
                (spec.chirp_rate_hz_per_s() / 1e9 - ghz).abs() < 1e-6,
                "{}: chirp rate mismatch",
                spec.name
            );
            assert!(spec.duty_cycle() <= 1.0);
        }
        // Max duty is BIN1-B at 6%.
        let max_duty = cat.iter().map(|s| s.duty_cycle()).fold(0.0, f64::max);
        assert!((max_duty - 0.06).abs() < 1e-12);
    }

    #[test]
    fn zero_amplitude_pulse_is_zeros_of_right_length() {
        let spec = waveform(WaveformName::Bin1A);
        let p = synthesize_pulse(&spec, 0.0, 0.3, 0.0, FS).unwrap();
        assert_eq!(p.len(), (spec.pw_s * FS).round() as usize);
        assert!(p.samples().iter().all(|s| s.norm_sqr() == 0.0));
    }

    #[test]
    fn bin2b_pulse_has_6144_samples() {
        let spec = waveform(WaveformName::Bin2B);
        let p = synthesize_pulse(&spec, 1.0, 0.0, -spec.bw_hz / 2.0, FS).unwrap();
        assert_eq!(p.len(), 6144);
    }

    #[test]
    fn bin1a_chirp_rate_recovered_within_1pct() {
        let spec = waveform(WaveformName::Bin1A);
        let p = synthesize_pulse(&spec, 1.0, 0.0, 0.0, FS).unwrap();
        let g = fit_chirp_rate(p.samples(), FS);
        assert!(
            (g - 1000e9).abs() / 1000e9 < 0.01,
            "fitted g = {} GHz/s",
            g / 1e9
        );
    }

    #[test]
    fn phase_matches_formula_everywhere() {
        for spec in catalog() {
            let phi0 = 0.7;
            let f0 = -spec.bw_hz / 2.0;
            let p = synthesize_pulse(&spec, 2.0, phi0, f0, FS).unwrap();
            let measured = unwrap_phase(p.samples());
            let g = spec.chirp_rate_hz_per_s();
            for (n, ph) in measured.iter().enumerate() {
                let t = n as f64 / FS;
                let expected = phi0 + 2.0 * PI * f0 * t + PI * g * t * t;
                // unwrap starts from the principal value of phi0; realign by 2*pi*k.
                let diff = (ph - expected) / (2.0 * PI);
                let frac = diff - diff.round();
                assert!(
                    (frac * 2.0 * PI).abs() < 1e-6,
                    "{}: phase off by {} rad at sample {n}",
                    spec.name,
                    frac * 2.0 * PI
                );
            }
        }
    }

    #[test]
    fn nyquist_violation_rejected() {
        let spec = waveform(WaveformName::Bin2B);
        assert!(synthesize_pulse(&spec, 1.0, 0.0, 16e6, FS).is_err());
    }

    #[test]
    fn too_few_samples_per_pulse_rejected() {
        let spec = waveform(WaveformName::Bin1A);
        assert!(synthesize_pulse(&spec, 1.0, 0.0, 0.0, 4e6).is_err());
    }

    #[test]
    fn single_pulse_train_equals_padded_pulse() {
        let spec = waveform(WaveformName::Bin1A);
        let params = PulseTrainParams {
            spec,
            amplitude: 1.0,
            phase0_rad: 0.25,
            f0_hz: -0.5e6,
            num_pulses: 1,
            sample_rate_hz: FS,
            total_duration_s: 20e-6,
        };
        let train = synthesize_pulse_train(&params).unwrap();
        let pulse = synthesize_pulse(&spec, 1.0, 0.25, -0.5e6, FS).unwrap();
        assert_eq!(train.len(), (20e-6 * FS).round() as usize);
        assert_eq!(&train.samples()[..pulse.len()], pulse.samples());
        assert!(train.samples()[pulse.len()..]
            .iter()
            .all(|s| s.norm_sqr() == 0.0));
    }

    #[test]
    fn bin1a_four_pulse_train_sample_accounting() {
        let spec = waveform(WaveformName::Bin1A);
        let params = PulseTrainParams {
            spec,
            amplitude: 1.0,
            phase0_rad: 0.0,
            f0_hz: -0.5e6,
            num_pulses: 4,
            sample_rate_hz: FS,
            total_duration_s: 200e-6,
        };
        let train = synthesize_pulse_train(&params).unwrap();
        let pulse_len = (spec.pw_s * FS).round() as usize; // 61
        let nonzero = train.samples().iter().filter(|s| s.norm_sqr() > 0.0).count();
        assert_eq!(nonzero, 4 * pulse_len);
        // Pulses land at round(p * T * fs) = p * 3072.
        for p in 0..4 {
            let start = p * 3072;
            assert!(train.samples()[start].norm_sqr() > 0.0);
            if p > 0 {
                assert_eq!(train.samples()[start - 1].norm_sqr(), 0.0);
            }
        }
    }

    #[test]
    fn train_energy_is_p_times_pulse_energy() {
        let spec = waveform(WaveformName::Bin1B);
        let params = PulseTrainParams {
            spec,
            amplitude: 1.5,
            phase0_rad: 1.1,
            f0_hz: -4e6,
            num_pulses: 12,
            sample_rate_hz: FS,
            total_duration_s: 12.0 * spec.pri_s() + spec.pw_s,
        };
        let train = synthesize_pulse_train(&params).unwrap();
        let pulse = synthesize_pulse(&spec, 1.5, 1.1, -4e6, FS).unwrap();
        let e_train: f64 = train.samples().iter().map(|s| s.norm_sqr()).sum();
        let e_pulse: f64 = pulse.samples().iter().map(|s| s.norm_sqr()).sum();
        assert!((e_train - 12.0 * e_pulse).abs() / (12.0 * e_pulse) < 1e-6);
    }

    #[test]
    fn too_many_pulses_for_duration_rejected() {
        let spec = waveform(WaveformName::Bin3A); // PRI 10 ms
        let params = PulseTrainParams {
            spec,
            amplitude: 1.0,
            phase0_rad: 0.0,
            f0_hz: -2.5e6,
            num_pulses: 4,
            sample_rate_hz: FS,
            total_duration_s: 20e-3,
        };
        assert!(synthesize_pulse_train(&params).is_err());
    }
}
