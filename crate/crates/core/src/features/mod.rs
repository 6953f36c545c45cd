//! Model input representations: fixed-length normalized IQ frames for the
//! IQ pipeline and pooled STFT spectrogram tensors for the spectrogram
//! pipeline.

mod cache;
mod stft;

pub use cache::{export_png, read_tensor, write_tensor};
pub use stft::{
    energy_check, stft_grid, stft_spectrogram, ChannelMode, Pool, SpectrogramConfig,
    SpectrogramTensor, Stft, StftConfig,
};

use crate::error::{Error, Result};
use crate::signal::IqBuffer;
use ndarray::Array2;

/// One fixed-length IQ frame: `d0 x 2` (column 0 = I, column 1 = Q),
/// normalized by the frame's max sample magnitude.
#[derive(Debug, Clone)]
pub struct IqFrame {
    pub values: Array2<f32>,
    pub frame_index: usize,
    /// Sample offset of the frame start in the source record.
    pub start: usize,
}

/// Slice a record into overlapping frames of `d0` samples at the given hop.
/// Frames whose max magnitude is zero are dropped; the rest are scaled so
/// the largest complex magnitude is exactly 1.
pub fn frame_iq(buf: &IqBuffer, d0: usize, hop: usize) -> Result<Vec<IqFrame>> {
    if d0 == 0 || hop == 0 {
        return Err(Error::InvalidParams("frame size and hop must be > 0".into()));
    }
    if buf.len() < d0 {
        return Err(Error::InvalidInput(format!(
            "record has {} samples, shorter than one {d0}-sample frame",
            buf.len()
        )));
    }
    let n_frames = (buf.len() - d0) / hop + 1;
    let mut frames = Vec::with_capacity(n_frames);
    for m in 0..n_frames {
        let start = m * hop;
        let slice = &buf.samples()[start..start + d0];
        let max_mag = slice.iter().map(|s| s.norm()).fold(0.0f64, f64::max);
        if max_mag == 0.0 {
            continue;
        }
        let mut values = Array2::zeros((d0, 2));
        for (i, s) in slice.iter().enumerate() {
            values[(i, 0)] = (s.re / max_mag) as f32;
            values[(i, 1)] = (s.im / max_mag) as f32;
        }
        frames.push(IqFrame {
            values,
            frame_index: m,
            start,
        });
    }
    Ok(frames)
}

/// Number of frames `frame_iq` produces before zero-frame dropping.
pub fn frame_count(record_len: usize, d0: usize, hop: usize) -> usize {
    if record_len < d0 {
        0
    } else {
        (record_len - d0) / hop + 1
    }
}

/// Half-open sample intervals `[start, end)` occupied by radar pulses for a
/// capture described by (delay, PRI, PW). Used to attach frame-level truth
/// to captures whose record-level label says RADAR.
pub fn pulse_intervals(
    record_len: usize,
    sample_rate_hz: f64,
    delay_s: f64,
    pri_s: f64,
    pw_s: f64,
) -> Vec<(usize, usize)> {
    let shift = (delay_s * sample_rate_hz).round() as usize;
    let pulse_len = (pw_s * sample_rate_hz).round() as usize;
    let mut out = Vec::new();
    let mut p = 0usize;
    loop {
        let start = shift + (p as f64 * pri_s * sample_rate_hz).round() as usize;
        if start >= record_len {
            break;
        }
        out.push((start, (start + pulse_len).min(record_len)));
        p += 1;
    }
    out
}

/// Fraction of the pulse-occupied samples of `interval` that fall inside
/// `[frame_start, frame_start + d0)`, relative to the shorter of pulse and
/// frame.
pub fn frame_pulse_overlap(
    frame_start: usize,
    d0: usize,
    intervals: &[(usize, usize)],
) -> f64 {
    let fe = frame_start + d0;
    let mut best = 0.0f64;
    for &(ps, pe) in intervals {
        let lo = frame_start.max(ps);
        let hi = fe.min(pe);
        if hi > lo {
            let denom = d0.min(pe - ps) as f64;
            best = best.max((hi - lo) as f64 / denom);
        }
    }
    best
}
