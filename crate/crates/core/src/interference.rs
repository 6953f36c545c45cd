//! Interference synthesis: the 5G-like CP-OFDM interferer and AWGN.
//!
//! The OFDM surrogate is deliberately plain — contiguous subcarrier
//! allocation, random payload, cyclic prefix — which reproduces the wideband
//! noise-like texture that matters for detection without any 3GPP frame
//! structure. Externally captured 5G recordings can be ingested through the
//! IQ file format when PHY fidelity matters.

use crate::error::{Error, Result};
use crate::fft::ifft_in_place;
use crate::signal::{IqBuffer, REF_DBM};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Payload constellation for the OFDM surrogate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Modulation {
    #[serde(rename = "QPSK")]
    Qpsk,
    #[serde(rename = "QAM16")]
    Qam16,
}

/// CP-OFDM waveform parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OfdmParams {
    pub bandwidth_hz: f64,
    pub subcarrier_spacing_hz: f64,
    /// Cyclic prefix length as a fraction of the FFT length, in (0, 0.25].
    pub cp_fraction: f64,
    pub modulation: Modulation,
    pub seed: u64,
}

impl Default for OfdmParams {
    fn default() -> Self {
        Self {
            bandwidth_hz: 20e6,
            subcarrier_spacing_hz: 30e3,
            cp_fraction: 0.07,
            modulation: Modulation::Qpsk,
            seed: 0,
        }
    }
}

impl OfdmParams {
    /// Number of occupied subcarriers (DC excluded, contiguous, centered).
    pub fn occupied_subcarriers(&self) -> usize {
        (self.bandwidth_hz / self.subcarrier_spacing_hz).floor() as usize
    }

    fn validate(&self, sample_rate_hz: f64) -> Result<()> {
        if !(self.cp_fraction > 0.0 && self.cp_fraction <= 0.25) {
            return Err(Error::InvalidParams(format!(
                "cp_fraction {} outside (0, 0.25]",
                self.cp_fraction
            )));
        }
        if self.subcarrier_spacing_hz <= 0.0 {
            return Err(Error::InvalidParams("subcarrier spacing must be > 0".into()));
        }
        if self.occupied_subcarriers() == 0 {
            return Err(Error::InvalidParams(
                "bandwidth below one subcarrier spacing: zero occupied subcarriers".into(),
            ));
        }
        if self.bandwidth_hz > sample_rate_hz / 2.0 {
            return Err(Error::InvalidParams(format!(
                "bandwidth {} Hz exceeds fs/2 = {} Hz",
                self.bandwidth_hz,
                sample_rate_hz / 2.0
            )));
        }
        Ok(())
    }
}

/// Synthesize a CP-OFDM buffer of `round(duration_s * fs)` samples with unit
/// average power. Identical params + seed give bitwise-identical output.
pub fn synthesize_ofdm(
    params: &OfdmParams,
    duration_s: f64,
    sample_rate_hz: f64,
) -> Result<IqBuffer> {
    params.validate(sample_rate_hz)?;
    let nfft = (sample_rate_hz / params.subcarrier_spacing_hz).round() as usize;
    if nfft < 8 {
        return Err(Error::InvalidParams(
            "subcarrier spacing too wide for sample rate".into(),
        ));
    }
    let n_occ = params.occupied_subcarriers().min(nfft - 1);
    let half = n_occ / 2;
    let n_occ = half * 2; // symmetric around DC, DC itself nulled
    if n_occ == 0 {
        return Err(Error::InvalidParams(
            "occupied allocation collapsed to zero subcarriers".into(),
        ));
    }
    let cp_len = (params.cp_fraction * nfft as f64).round() as usize;
    let sym_len = nfft + cp_len;
    let n_total = (duration_s * sample_rate_hz).round() as usize;
    let n_syms = n_total.div_ceil(sym_len);

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut out = Vec::with_capacity(n_syms * sym_len);
    let mut freq = vec![Complex64::new(0.0, 0.0); nfft];
    // Unit average power after the IFFT: scale by nfft / sqrt(n_occ).
    let scale = nfft as f64 / (n_occ as f64).sqrt();
    for _ in 0..n_syms {
        for f in freq.iter_mut() {
            *f = Complex64::new(0.0, 0.0);
        }
        for k in 1..=half {
            freq[k] = constellation_point(params.modulation, &mut rng);
            freq[nfft - k] = constellation_point(params.modulation, &mut rng);
        }
        ifft_in_place(&mut freq);
        for f in freq.iter_mut() {
            *f *= scale;
        }
        out.extend_from_slice(&freq[nfft - cp_len..]);
        out.extend_from_slice(&freq);
    }
    out.truncate(n_total);
    Ok(IqBuffer::new(out, sample_rate_hz))
}

fn constellation_point(modulation: Modulation, rng: &mut ChaCha8Rng) -> Complex64 {
    match modulation {
        Modulation::Qpsk => {
            let re = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            let im = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            Complex64::new(re, im) / 2f64.sqrt()
        }
        Modulation::Qam16 => {
            let levels = [-3.0, -1.0, 1.0, 3.0];
            let re = levels[rng.gen_range(0..4)];
            let im = levels[rng.gen_range(0..4)];
            Complex64::new(re, im) / 10f64.sqrt()
        }
    }
}

/// AWGN power knob: target average power density over the full Nyquist band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    pub target_avg_dbm_per_mhz: f64,
    pub seed: u64,
}

/// Circularly-symmetric complex Gaussian noise scaled so that
/// `measure_avg_power_per_mhz` over the full Nyquist band hits the target
/// within ±0.3 dB. Seeded and reproducible.
pub fn synthesize_awgn(
    params: &NoiseParams,
    duration_s: f64,
    sample_rate_hz: f64,
) -> Result<IqBuffer> {
    if !params.target_avg_dbm_per_mhz.is_finite() {
        return Err(Error::InvalidParams("noise target must be finite".into()));
    }
    let n = (duration_s * sample_rate_hz).round() as usize;
    let w_mhz = sample_rate_hz / 1e6;
    // Per-sample complex variance for a flat target density.
    let var = w_mhz * 10f64.powf((params.target_avg_dbm_per_mhz - REF_DBM) / 10.0);
    let sigma = (var / 2.0).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let samples = (0..n)
        .map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(sigma * re, sigma * im)
        })
        .collect();
    Ok(IqBuffer::new(samples, sample_rate_hz))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{measure_avg_power_per_mhz, BandSpec};
    use crate::testutil::energy_fraction_in_band;

    const FS: f64 = 61.44e6;

    #[test]
    fn zero_subcarriers_rejected() {
        let params = OfdmParams {
            bandwidth_hz: 10e3, // below one 30 kHz spacing
            ..OfdmParams::default()
        };
        assert!(matches!(
            synthesize_ofdm(&params, 1e-3, FS),
            Err(Error::InvalidParams(_))
        ));
    }

    #[test]
    fn bandwidth_beyond_half_nyquist_rejected() {
        let params = OfdmParams {
            bandwidth_hz: 40e6,
            ..OfdmParams::default()
        };
        assert!(synthesize_ofdm(&params, 1e-3, FS).is_err());
    }

    #[test]
    fn same_seed_bitwise_identical() {
        let params = OfdmParams {
            seed: 42,
            ..OfdmParams::default()
        };
        let a = synthesize_ofdm(&params, 2e-3, FS).unwrap();
        let b = synthesize_ofdm(&params, 2e-3, FS).unwrap();
        assert_eq!(a.samples(), b.samples());
    }

    #[test]
    fn twenty_mhz_signal_keeps_90pct_energy_in_band() {
        let params = OfdmParams {
            bandwidth_hz: 20e6,
            seed: 7,
            ..OfdmParams::default()
        };
        let buf = synthesize_ofdm(&params, 5e-3, FS).unwrap();
        let frac = energy_fraction_in_band(&buf, -10e6, 10e6);
        assert!(frac >= 0.90, "in-band fraction {frac}");
    }

    #[test]
    fn ofdm_length_and_unit_power() {
        let params = OfdmParams::default();
        let buf = synthesize_ofdm(&params, 1.5e-3, FS).unwrap();
        assert_eq!(buf.len(), (1.5e-3 * FS).round() as usize);
        let p: f64 = buf.samples().iter().map(|s| s.norm_sqr()).sum::<f64>() / buf.len() as f64;
        assert!((p - 1.0).abs() < 0.05, "avg power {p}");
    }

    #[test]
    fn awgn_hits_target_density() {
        let params = NoiseParams {
            target_avg_dbm_per_mhz: -109.0,
            seed: 3,
        };
        let buf = synthesize_awgn(&params, 0.02, FS).unwrap();
        assert!(buf.len() >= 1_000_000);
        let band = BandSpec::full(FS);
        let measured = measure_avg_power_per_mhz(&buf, &band).unwrap();
        assert!(
            (measured + 109.0).abs() < 0.3,
            "measured {measured} dBm/MHz"
        );
    }

    #[test]
    fn awgn_same_seed_identical() {
        let params = NoiseParams {
            target_avg_dbm_per_mhz: -100.0,
            seed: 11,
        };
        let a = synthesize_awgn(&params, 1e-3, FS).unwrap();
        let b = synthesize_awgn(&params, 1e-3, FS).unwrap();
        assert_eq!(a.samples(), b.samples());
    }

    #[test]
    fn awgn_component_means_near_zero() {
        let params = NoiseParams {
            target_avg_dbm_per_mhz: REF_DBM,
            seed: 19,
        };
        let buf = synthesize_awgn(&params, 0.02, FS).unwrap();
        let n = buf.len() as f64;
        let var = 10f64.powf((params.target_avg_dbm_per_mhz - REF_DBM) / 10.0) * FS / 1e6;
        let sigma = (var / 2.0).sqrt();
        let mean_re: f64 = buf.samples().iter().map(|s| s.re).sum::<f64>() / n;
        let mean_im: f64 = buf.samples().iter().map(|s| s.im).sum::<f64>() / n;
        let bound = 4.0 * sigma / n.sqrt();
        assert!(mean_re.abs() < bound, "re mean {mean_re} vs bound {bound}");
        assert!(mean_im.abs() < bound, "im mean {mean_im} vs bound {bound}");
    }
}
