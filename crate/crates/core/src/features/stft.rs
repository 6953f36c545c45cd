//! Short-time Fourier transform, spectrogram tensors, and the Parseval
//! energy guard.

use crate::error::{Error, Result};
use crate::fft::fft_in_place;
use crate::signal::IqBuffer;
use ndarray::{Array2, Array3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

/// Analysis window/hop configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StftConfig {
    pub nfft: usize,
    pub hop: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        // Hann window, 50% overlap.
        Self {
            nfft: 1024,
            hop: 512,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nfft < 2 || self.hop == 0 || self.hop > self.nfft {
            return Err(Error::InvalidParams(format!(
                "bad STFT config nfft={} hop={}",
                self.nfft, self.hop
            )));
        }
        Ok(())
    }
}

/// Periodic Hann window of length `n`.
fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 * (1.0 - (TAU * i as f64 / n as f64).cos()))
        .collect()
}

/// Raw magnitude-squared STFT grid, fftshifted so row 0 is -fs/2.
#[derive(Debug, Clone)]
pub struct Stft {
    /// Power |X|^2, shape (nfft, n_cols).
    pub power: Array2<f64>,
    pub freq_axis_hz: Vec<f64>,
    pub time_axis_s: Vec<f64>,
    pub config: StftConfig,
}

/// Compute the raw STFT power grid of a record.
pub fn stft_grid(buf: &IqBuffer, cfg: &StftConfig) -> Result<Stft> {
    cfg.validate()?;
    let n = buf.len();
    if n < cfg.nfft {
        return Err(Error::InvalidInput(format!(
            "record of {n} samples shorter than one {}-sample window",
            cfg.nfft
        )));
    }
    let fs = buf.sample_rate_hz();
    let nfft = cfg.nfft;
    let hop = cfg.hop;
    let n_cols = (n - nfft) / hop + 1;
    let window = hann(nfft);
    let mut power = Array2::zeros((nfft, n_cols));
    let mut frame = vec![Complex64::new(0.0, 0.0); nfft];
    for m in 0..n_cols {
        let start = m * hop;
        for (i, w) in window.iter().enumerate() {
            frame[i] = buf.samples()[start + i] * *w;
        }
        fft_in_place(&mut frame);
        // fftshift: row r holds bin (r + nfft/2) mod nfft.
        for r in 0..nfft {
            let k = (r + nfft / 2) % nfft;
            power[(r, m)] = frame[k].norm_sqr();
        }
    }
    let freq_axis_hz = (0..nfft)
        .map(|r| (r as f64 - (nfft / 2) as f64) * fs / nfft as f64)
        .collect();
    let time_axis_s = (0..n_cols)
        .map(|m| (m * hop + nfft / 2) as f64 / fs)
        .collect();
    Ok(Stft {
        power,
        freq_axis_hz,
        time_axis_s,
        config: *cfg,
    })
}

/// Reduction used when pooling the raw grid down to tensor resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pool {
    Mean,
    Max,
}

/// How the 3 tensor channels are filled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelMode {
    /// Grayscale replication of one STFT resolution across all 3 channels.
    Replicate,
    /// One STFT resolution per channel (window lengths; hop = nfft/2 each).
    MultiRes([usize; 3]),
}

/// Spectrogram tensor construction parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrogramConfig {
    pub stft: StftConfig,
    /// Output frequency bins.
    pub d0: usize,
    /// Output time bins.
    pub d1: usize,
    /// dB clip floor relative to the per-channel max.
    pub floor_db: f64,
    pub channel_mode: ChannelMode,
    pub freq_pool: Pool,
    pub time_pool: Pool,
}

impl Default for SpectrogramConfig {
    fn default() -> Self {
        Self {
            stft: StftConfig::default(),
            d0: 128,
            d1: 128,
            floor_db: -80.0,
            channel_mode: ChannelMode::Replicate,
            freq_pool: Pool::Mean,
            time_pool: Pool::Max,
        }
    }
}

/// Time-frequency image: shape (d0, d1, 3), values in [0, 1].
#[derive(Debug, Clone)]
pub struct SpectrogramTensor {
    pub values: Array3<f32>,
    pub freq_axis_hz: Vec<f64>,
    pub time_axis_s: Vec<f64>,
    pub source: Option<String>,
}

/// Clip a relative-dB value into [floor_db, 0] and map affinely onto [0, 1].
/// The map is a projection: re-applying it through its own dB embedding is
/// the identity.
pub fn map_db_to_unit(db: f64, floor_db: f64) -> f64 {
    let clipped = db.clamp(floor_db, 0.0);
    (clipped - floor_db) / (-floor_db)
}

fn pool_axis(src: &Array2<f64>, out_len: usize, axis: usize, pool: Pool) -> Array2<f64> {
    let (rows, cols) = (src.shape()[0], src.shape()[1]);
    let in_len = if axis == 0 { rows } else { cols };
    let other = if axis == 0 { cols } else { rows };
    let mut dst = if axis == 0 {
        Array2::zeros((out_len, cols))
    } else {
        Array2::zeros((rows, out_len))
    };
    for o in 0..out_len {
        // Evenly partitioned bucket [lo, hi).
        let lo = o * in_len / out_len;
        let hi = (((o + 1) * in_len) / out_len).max(lo + 1).min(in_len);
        for j in 0..other {
            let mut acc = match pool {
                Pool::Mean => 0.0,
                Pool::Max => f64::NEG_INFINITY,
            };
            for i in lo..hi {
                let v = if axis == 0 { src[(i, j)] } else { src[(j, i)] };
                match pool {
                    Pool::Mean => acc += v,
                    Pool::Max => acc = acc.max(v),
                }
            }
            if let Pool::Mean = pool {
                acc /= (hi - lo) as f64;
            }
            if axis == 0 {
                dst[(o, j)] = acc;
            } else {
                dst[(j, o)] = acc;
            }
        }
    }
    dst
}

fn grid_to_channel(grid: &Stft, cfg: &SpectrogramConfig) -> Result<Array2<f64>> {
    if grid.power.shape()[0] < cfg.d0 || grid.power.shape()[1] < cfg.d1 {
        return Err(Error::InvalidInput(format!(
            "STFT grid {}x{} smaller than tensor {}x{}",
            grid.power.shape()[0],
            grid.power.shape()[1],
            cfg.d0,
            cfg.d1
        )));
    }
    let pooled_f = pool_axis(&grid.power, cfg.d0, 0, cfg.freq_pool);
    let pooled = pool_axis(&pooled_f, cfg.d1, 1, cfg.time_pool);
    let max = pooled.iter().cloned().fold(0.0f64, f64::max);
    let mut out = Array2::zeros((cfg.d0, cfg.d1));
    for ((i, j), v) in pooled.indexed_iter() {
        let db = if *v > 0.0 && max > 0.0 {
            10.0 * (v / max).log10()
        } else {
            f64::NEG_INFINITY
        };
        out[(i, j)] = map_db_to_unit(db, cfg.floor_db);
    }
    Ok(out)
}

/// Build a spectrogram tensor: magnitude STFT in dB, clipped to
/// [floor_db, 0] relative to the (pooled) max, affinely mapped to [0, 1],
/// pooled to (d0, d1), over 3 channels.
pub fn stft_spectrogram(buf: &IqBuffer, cfg: &SpectrogramConfig) -> Result<SpectrogramTensor> {
    let mut values = Array3::zeros((cfg.d0, cfg.d1, 3));
    match &cfg.channel_mode {
        ChannelMode::Replicate => {
            let grid = stft_grid(buf, &cfg.stft)?;
            let ch = grid_to_channel(&grid, cfg)?;
            for ((i, j), v) in ch.indexed_iter() {
                for c in 0..3 {
                    values[(i, j, c)] = *v as f32;
                }
            }
        }
        ChannelMode::MultiRes(nffts) => {
            for (c, &nfft) in nffts.iter().enumerate() {
                let sub = StftConfig {
                    nfft,
                    hop: (nfft / 2).max(1),
                };
                let grid = stft_grid(buf, &sub)?;
                let ch = grid_to_channel(&grid, cfg)?;
                for ((i, j), v) in ch.indexed_iter() {
                    values[(i, j, c)] = *v as f32;
                }
            }
        }
    }
    // Axes at tensor resolution: frequency spans [-fs/2, fs/2), time spans
    // the capture.
    let fs = buf.sample_rate_hz();
    let freq_axis_hz = (0..cfg.d0)
        .map(|i| ((i as f64 + 0.5) / cfg.d0 as f64 - 0.5) * fs)
        .collect();
    let dur = buf.duration_s();
    let time_axis_s = (0..cfg.d1)
        .map(|j| (j as f64 + 0.5) / cfg.d1 as f64 * dur)
        .collect();
    Ok(SpectrogramTensor {
        values,
        freq_axis_hz,
        time_axis_s,
        source: None,
    })
}

/// Window-energy compensation: periodic Hann at hop = nfft/4 tiles
/// sum_m w^2[n - m*hop] = 1.5 exactly.
const HANN_QUARTER_HOP_COMP: f64 = 1.5;

/// Parseval discrepancy `|sum|STFT|^2 / (nfft * 1.5 * sum|x|^2) - 1|` for an
/// energy-COLA configuration (Hann, hop = nfft/4). The analysis pads both
/// ends so every sample has full window coverage. Zero records return 0.
/// Non-energy-COLA hops are rejected as NotApplicable — Hann at 50% overlap
/// is amplitude-COLA but its squared window does not tile flat.
pub fn energy_check(buf: &IqBuffer, cfg: &StftConfig) -> Result<f64> {
    cfg.validate()?;
    if cfg.hop * 4 != cfg.nfft {
        return Err(Error::NotApplicable(format!(
            "hop {} is not nfft/4 = {}; squared-Hann overlap-add is not constant",
            cfg.hop,
            cfg.nfft / 4
        )));
    }
    let signal_energy: f64 = buf.samples().iter().map(|s| s.norm_sqr()).sum();
    if signal_energy == 0.0 {
        return Ok(0.0);
    }
    let nfft = cfg.nfft;
    let hop = cfg.hop;
    let pad_left = nfft - hop;
    let pad_right = nfft;
    let mut padded = vec![Complex64::new(0.0, 0.0); pad_left + buf.len() + pad_right];
    padded[pad_left..pad_left + buf.len()].copy_from_slice(buf.samples());

    let window = hann(nfft);
    let n_cols = (padded.len() - nfft) / hop + 1;
    let mut stft_energy = 0.0f64;
    let mut frame = vec![Complex64::new(0.0, 0.0); nfft];
    for m in 0..n_cols {
        let start = m * hop;
        for (i, w) in window.iter().enumerate() {
            frame[i] = padded[start + i] * *w;
        }
        fft_in_place(&mut frame);
        stft_energy += frame.iter().map(|v| v.norm_sqr()).sum::<f64>();
    }
    let expected = nfft as f64 * HANN_QUARTER_HOP_COMP * signal_energy;
    Ok((stft_energy / expected - 1.0).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radar::{synthesize_pulse, waveform, WaveformName};
    use crate::testutil::{linear_slope, wgn};

    const FS: f64 = 61.44e6;

    fn tone(freq_hz: f64, fs: f64, n: usize) -> IqBuffer {
        let samples = (0..n)
            .map(|i| {
                let ph = TAU * freq_hz * i as f64 / fs;
                Complex64::new(ph.cos(), ph.sin())
            })
            .collect();
        IqBuffer::new(samples, fs)
    }

    #[test]
    fn zero_record_gives_constant_floor_tensor() {
        let buf = IqBuffer::zeros(1 << 15, FS);
        let cfg = SpectrogramConfig {
            d0: 32,
            d1: 16,
            stft: StftConfig { nfft: 256, hop: 128 },
            ..Default::default()
        };
        let t = stft_spectrogram(&buf, &cfg).unwrap();
        assert!(t.values.iter().all(|v| *v == 0.0));
        assert_eq!(t.values.shape(), &[32, 16, 3]);
    }

    #[test]
    fn pure_tone_peaks_at_nearest_bin() {
        let fc = 7.3e6;
        let nfft = 512;
        let buf = tone(fc, FS, 1 << 15);
        let grid = stft_grid(&buf, &StftConfig { nfft, hop: 256 }).unwrap();
        // Shifted bin index of fc: round((fc + fs/2)/fs * nfft).
        let expected = ((fc + FS / 2.0) / FS * nfft as f64).round() as usize;
        for m in 0..grid.power.shape()[1] {
            let col = grid.power.column(m);
            let argmax = col
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(argmax, expected, "column {m}");
        }
    }

    #[test]
    fn shift_covariance_interior_columns() {
        let cfg = StftConfig { nfft: 256, hop: 128 };
        let buf = wgn(1 << 14, FS, 1.0, 5);
        let k = 3usize;
        let delayed = buf.delayed(k * cfg.hop);
        let a = stft_grid(&buf, &cfg).unwrap();
        let b = stft_grid(&delayed, &cfg).unwrap();
        let cols = a.power.shape()[1];
        // Column m of the delayed grid equals column m-k of the original,
        // away from the boundary columns.
        for m in (k + 2)..(cols - 2) {
            for r in 0..cfg.nfft {
                let d = (b.power[(r, m)] - a.power[(r, m - k)]).abs();
                assert!(d < 1e-9, "row {r} col {m} differs by {d}");
            }
        }
    }

    #[test]
    fn bin1a_ridge_slope_recovers_chirp_rate() {
        // Sub-pulse analysis: short windows with fine hop + spectral-centroid
        // ridge extraction resolve the sweep within one 61-sample pulse.
        let spec = waveform(WaveformName::Bin1A);
        let pulse = synthesize_pulse(&spec, 1.0, 0.0, 0.0, FS).unwrap();
        let cfg = StftConfig { nfft: 16, hop: 2 };
        let grid = stft_grid(&pulse, &cfg).unwrap();
        let mut times = Vec::new();
        let mut cents = Vec::new();
        for m in 0..grid.power.shape()[1] {
            let col = grid.power.column(m);
            let total: f64 = col.sum();
            let centroid: f64 = col
                .iter()
                .zip(grid.freq_axis_hz.iter())
                .map(|(p, f)| p * f)
                .sum::<f64>()
                / total;
            times.push(grid.time_axis_s[m]);
            cents.push(centroid);
        }
        let slope = linear_slope(&times, &cents);
        let g = spec.chirp_rate_hz_per_s();
        assert!(
            (slope - g).abs() / g < 0.05,
            "ridge slope {} GHz/s vs {} GHz/s",
            slope / 1e9,
            g / 1e9
        );
    }

    #[test]
    fn parseval_white_noise() {
        let buf = wgn(200_000, FS, 1.0, 77);
        let d = energy_check(&buf, &StftConfig { nfft: 1024, hop: 256 }).unwrap();
        assert!(d < 1e-6, "discrepancy {d}");
    }

    #[test]
    fn parseval_single_pulse() {
        let spec = waveform(WaveformName::Bin2A);
        let pulse = synthesize_pulse(&spec, 1.0, 0.4, -10e6, FS).unwrap();
        let d = energy_check(&pulse, &StftConfig { nfft: 512, hop: 128 }).unwrap();
        assert!(d < 1e-6, "discrepancy {d}");
    }

    #[test]
    fn parseval_zero_record_is_zero() {
        let buf = IqBuffer::zeros(10_000, FS);
        let d = energy_check(&buf, &StftConfig { nfft: 256, hop: 64 }).unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn half_overlap_not_applicable() {
        let buf = wgn(10_000, FS, 1.0, 3);
        assert!(matches!(
            energy_check(&buf, &StftConfig { nfft: 256, hop: 128 }),
            Err(Error::NotApplicable(_))
        ));
    }

    #[test]
    fn db_mapping_is_projection() {
        let floor = -80.0;
        for db in [-200.0, -80.0, -40.0, -0.5, 0.0, 10.0] {
            let y = map_db_to_unit(db, floor);
            assert!((0.0..=1.0).contains(&y));
            // Re-embed into dB and map again: unchanged.
            let again = map_db_to_unit(floor + y * (-floor), floor);
            assert!((again - y).abs() < 1e-12);
        }
    }

    #[test]
    fn spectrogram_deterministic() {
        let buf = wgn(1 << 14, FS, 1.0, 9);
        let cfg = SpectrogramConfig {
            d0: 64,
            d1: 24,
            stft: StftConfig { nfft: 256, hop: 128 },
            ..Default::default()
        };
        let a = stft_spectrogram(&buf, &cfg).unwrap();
        let b = stft_spectrogram(&buf, &cfg).unwrap();
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn multires_channels_differ() {
        let buf = wgn(1 << 14, FS, 1.0, 13);
        let cfg = SpectrogramConfig {
            d0: 32,
            d1: 16,
            channel_mode: ChannelMode::MultiRes([128, 256, 512]),
            ..Default::default()
        };
        let t = stft_spectrogram(&buf, &cfg).unwrap();
        let c0: Vec<f32> = t.values.slice(ndarray::s![.., .., 0]).iter().cloned().collect();
        let c1: Vec<f32> = t.values.slice(ndarray::s![.., .., 1]).iter().cloned().collect();
        assert_ne!(c0, c1);
    }

    #[test]
    fn window_shorter_than_record_required() {
        let buf = IqBuffer::zeros(100, FS);
        assert!(stft_grid(&buf, &StftConfig { nfft: 256, hop: 128 }).is_err());
    }
}
