//! IQ capture file format.
//!
//! A capture is a pair of files sharing a stem: `<name>.iq` holds raw
//! little-endian interleaved 32-bit floats `[I0, Q0, I1, Q1, ...]`, and
//! `<name>.meta.json` is a JSON sidecar describing it. The pair is how
//! externally captured IQ (e.g. SDR recordings) enters the toolkit.

use super::IqBuffer;
use crate::error::{Error, Result};
use crate::radar::WaveformName;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

pub const IQ_FORMAT_VERSION: u32 = 1;

/// Ground-truth detection label carried in capture metadata.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DetectLabel {
    #[serde(rename = "RADAR")]
    Radar,
    #[serde(rename = "NO_RADAR")]
    NoRadar,
}

impl std::fmt::Display for DetectLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DetectLabel::Radar => write!(f, "RADAR"),
            DetectLabel::NoRadar => write!(f, "NO_RADAR"),
        }
    }
}

/// Sidecar metadata for one IQ capture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    pub format_version: u32,
    pub sample_rate_hz: f64,
    pub center_freq_hz: f64,
    pub num_samples: u64,
    pub label_detect: DetectLabel,
    pub label_waveform: Option<WaveformName>,
    pub sinr_db: Option<f64>,
    pub seed: Option<u64>,
}

impl SceneMeta {
    /// Metadata consistent with `buf`.
    pub fn for_buffer(
        buf: &IqBuffer,
        label_detect: DetectLabel,
        label_waveform: Option<WaveformName>,
        sinr_db: Option<f64>,
        seed: Option<u64>,
    ) -> Self {
        Self {
            format_version: IQ_FORMAT_VERSION,
            sample_rate_hz: buf.sample_rate_hz(),
            center_freq_hz: buf.center_freq_hz(),
            num_samples: buf.len() as u64,
            label_detect,
            label_waveform,
            sinr_db,
            seed,
        }
    }
}

/// Resolve `<stem>.iq` / `<stem>.meta.json` from a path that may carry either
/// extension or none.
fn split_paths(path: &Path) -> (PathBuf, PathBuf) {
    let s = path.to_string_lossy();
    let stem = if let Some(p) = s.strip_suffix(".meta.json") {
        p.to_string()
    } else if let Some(p) = s.strip_suffix(".iq") {
        p.to_string()
    } else {
        s.to_string()
    };
    (
        PathBuf::from(format!("{stem}.iq")),
        PathBuf::from(format!("{stem}.meta.json")),
    )
}

/// Write `<name>.iq` + `<name>.meta.json`. Samples are quantized to f32 on
/// the way out; the metadata must agree with the buffer's length and rate.
pub fn write_iq_file(buf: &IqBuffer, meta: &SceneMeta, path: &Path) -> Result<()> {
    if meta.num_samples != buf.len() as u64 {
        return Err(Error::InvalidParams(format!(
            "meta.num_samples {} != buffer length {}",
            meta.num_samples,
            buf.len()
        )));
    }
    if meta.sample_rate_hz != buf.sample_rate_hz() {
        return Err(Error::InvalidParams(
            "meta.sample_rate_hz disagrees with buffer".into(),
        ));
    }
    let (iq_path, meta_path) = split_paths(path);
    let mut w = BufWriter::new(File::create(&iq_path)?);
    for s in buf.samples() {
        w.write_all(&(s.re as f32).to_le_bytes())?;
        w.write_all(&(s.im as f32).to_le_bytes())?;
    }
    w.flush()?;
    let json = serde_json::to_string_pretty(meta)?;
    std::fs::write(&meta_path, json)?;
    Ok(())
}

/// Read a capture pair back. Fails on malformed JSON, truncated payload, or a
/// header/payload length mismatch.
pub fn read_iq_file(path: &Path) -> Result<(IqBuffer, SceneMeta)> {
    let (iq_path, meta_path) = split_paths(path);
    let meta_text = std::fs::read_to_string(&meta_path)?;
    let meta: SceneMeta =
        serde_json::from_str(&meta_text).map_err(|e| Error::MalformedFile {
            path: meta_path.display().to_string(),
            reason: e.to_string(),
        })?;
    if meta.format_version != IQ_FORMAT_VERSION {
        return Err(Error::MalformedFile {
            path: meta_path.display().to_string(),
            reason: format!("unsupported format_version {}", meta.format_version),
        });
    }
    let mut r = BufReader::new(File::open(&iq_path)?);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() % 8 != 0 || (bytes.len() / 8) as u64 != meta.num_samples {
        return Err(Error::MalformedFile {
            path: iq_path.display().to_string(),
            reason: format!(
                "payload holds {} bytes, header promises {} samples",
                bytes.len(),
                meta.num_samples
            ),
        });
    }
    let mut samples = Vec::with_capacity(meta.num_samples as usize);
    for chunk in bytes.chunks_exact(8) {
        let i = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        let q = f32::from_le_bytes([chunk[4], chunk[5], chunk[6], chunk[7]]);
        samples.push(Complex64::new(i as f64, q as f64));
    }
    let buf = IqBuffer::new(samples, meta.sample_rate_hz).with_center_freq(meta.center_freq_hz);
    Ok((buf, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_f32_buffer(n: usize, fs: f64, seed: u64) -> IqBuffer {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let samples = (0..n)
            .map(|_| {
                Complex64::new(
                    rng.gen_range(-1.0f32..1.0) as f64,
                    rng.gen_range(-1.0f32..1.0) as f64,
                )
            })
            .collect();
        IqBuffer::new(samples, fs)
    }

    #[test]
    fn round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let buf = random_f32_buffer(1024, 61.44e6, 3);
        let meta = SceneMeta::for_buffer(&buf, DetectLabel::Radar, None, Some(-5.0), Some(17));
        let path = dir.path().join("cap");
        write_iq_file(&buf, &meta, &path).unwrap();
        let (back, meta2) = read_iq_file(&path).unwrap();
        assert_eq!(meta, meta2);
        assert_eq!(meta2.sinr_db, Some(-5.0));
        assert_eq!(buf.samples(), back.samples());
    }

    #[test]
    fn truncated_payload_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let buf = random_f32_buffer(256, 1e6, 5);
        let meta = SceneMeta::for_buffer(&buf, DetectLabel::NoRadar, None, None, None);
        let path = dir.path().join("cap");
        write_iq_file(&buf, &meta, &path).unwrap();
        // Chop the payload mid-sample.
        let iq_path = dir.path().join("cap.iq");
        let bytes = std::fs::read(&iq_path).unwrap();
        std::fs::write(&iq_path, &bytes[..bytes.len() - 13]).unwrap();
        assert!(matches!(
            read_iq_file(&path),
            Err(Error::MalformedFile { .. })
        ));
    }

    #[test]
    fn accepts_iq_extension_paths() {
        let dir = tempfile::tempdir().unwrap();
        let buf = random_f32_buffer(64, 1e6, 9);
        let meta = SceneMeta::for_buffer(&buf, DetectLabel::NoRadar, None, None, None);
        write_iq_file(&buf, &meta, &dir.path().join("x.iq")).unwrap();
        let (back, _) = read_iq_file(&dir.path().join("x.iq")).unwrap();
        assert_eq!(back.len(), 64);
    }
}
