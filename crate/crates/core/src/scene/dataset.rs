//! Labeled-corpus generation: balanced scenes streamed to disk with a
//! JSON-lines manifest.
//!
//! Record seeds derive from (master_seed, record_index) alone, so the corpus
//! is bit-identical regardless of worker count or retry history of other
//! records.

use super::{mix_scene, plan_scene, record_seed, MixEnv, Scenario};
use crate::error::{Error, Result};
use crate::radar::WaveformName;
use crate::signal::{write_iq_file, DetectLabel, SceneMeta};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

pub const MANIFEST_NAME: &str = "manifest.jsonl";

/// Per-SINR record counts for each scenario category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoryCounts {
    pub radar_only: usize,
    pub fiveg_only: usize,
    pub radar_plus_5g: usize,
}

impl CategoryCounts {
    pub fn total(&self) -> usize {
        self.radar_only + self.fiveg_only + self.radar_plus_5g
    }
}

fn default_sample_rate() -> f64 {
    61.44e6
}
fn default_duration() -> f64 {
    0.02
}
fn default_sinr_grid() -> Vec<f64> {
    vec![-5.0, 0.0, 5.0]
}
fn default_waveforms() -> Vec<WaveformName> {
    WaveformName::ALL.to_vec()
}
fn default_noise_floor_range() -> (f64, f64) {
    (-109.0, -84.0)
}

/// Everything `generate_dataset` needs; serializable as the `gen` config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    #[serde(default = "default_sample_rate")]
    pub sample_rate_hz: f64,
    #[serde(default = "default_duration")]
    pub duration_s: f64,
    #[serde(default = "default_sinr_grid")]
    pub sinr_grid_db: Vec<f64>,
    pub counts: CategoryCounts,
    #[serde(default = "default_waveforms")]
    pub waveforms: Vec<WaveformName>,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    /// Noise-plus-interference floor draw range, dBm/MHz.
    #[serde(default = "default_noise_floor_range")]
    pub noise_floor_range_dbm_per_mhz: (f64, f64),
    #[serde(default)]
    pub mix: MixEnv,
    /// Persist calibrated components next to each capture (debug only).
    #[serde(default)]
    pub debug_components: bool,
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sinr_grid_db.is_empty() {
            return Err(Error::InvalidParams("empty SINR grid".into()));
        }
        if self.counts.total() == 0 {
            return Err(Error::InvalidParams("zero records requested".into()));
        }
        if self.waveforms.is_empty() {
            return Err(Error::InvalidParams("empty waveform list".into()));
        }
        Ok(())
    }

    pub fn total_records(&self) -> usize {
        self.counts.total() * self.sinr_grid_db.len()
    }
}

/// One line of the dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub index: usize,
    /// Path of the `.iq` payload, relative to the manifest's directory.
    pub iq_path: String,
    pub scenario: Scenario,
    pub label_detect: DetectLabel,
    pub label_waveform: Option<WaveformName>,
    /// SINR grid bucket the record belongs to (defined for all categories).
    pub sinr_group_db: f64,
    pub target_sinr_db: Option<f64>,
    pub achieved_sinr_db: Option<f64>,
    pub noise_plus_interference_dbm_per_mhz: f64,
    pub radar_peak_dbm_per_mhz: Option<f64>,
    pub delay_s: Option<f64>,
    pub radar_band_center_hz: Option<f64>,
    pub radar_bw_hz: Option<f64>,
    pub ofdm_bandwidth_hz: Option<f64>,
    pub seed: u64,
    pub num_samples: usize,
    pub iq_sha256: String,
    /// Added by the featurize step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectrogram_path: Option<String>,
}

#[derive(Debug, Clone)]
pub struct GenSummary {
    pub manifest_path: PathBuf,
    pub corpus_sha256: String,
    pub num_records: usize,
}

struct RecordPlan {
    index: usize,
    sinr_group_db: f64,
    scenario: Scenario,
    waveform: Option<WaveformName>,
}

fn plan_records(config: &DatasetConfig) -> Vec<RecordPlan> {
    let mut plans = Vec::with_capacity(config.total_records());
    let mut index = 0usize;
    for &sinr in &config.sinr_grid_db {
        let cats = [
            (Scenario::RadarOnly, config.counts.radar_only),
            (Scenario::FiveGOnly, config.counts.fiveg_only),
            (Scenario::RadarPlus5G, config.counts.radar_plus_5g),
        ];
        for (scenario, count) in cats {
            for i in 0..count {
                let waveform = if scenario.has_radar() {
                    Some(config.waveforms[i % config.waveforms.len()])
                } else {
                    None
                };
                plans.push(RecordPlan {
                    index,
                    sinr_group_db: sinr,
                    scenario,
                    waveform,
                });
                index += 1;
            }
        }
    }
    plans
}

fn f32_bytes(buf: &crate::signal::IqBuffer) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(buf.len() * 8);
    for s in buf.samples() {
        bytes.extend_from_slice(&(s.re as f32).to_le_bytes());
        bytes.extend_from_slice(&(s.im as f32).to_le_bytes());
    }
    bytes
}

fn generate_one(config: &DatasetConfig, plan: &RecordPlan) -> Result<ManifestRecord> {
    let id = format!("rec_{:06}", plan.index);
    let iq_dir = config.output_dir.join("iq");
    let mut last_err = None;
    for attempt in 0..3u64 {
        let seed = record_seed(config.master_seed, plan.index as u64, attempt);
        let spec = plan_scene(
            plan.scenario,
            plan.waveform,
            plan.sinr_group_db,
            config.duration_s,
            config.sample_rate_hz,
            config.noise_floor_range_dbm_per_mhz,
            seed,
        );
        match mix_scene(&spec, &config.mix) {
            Ok(mixed) => {
                let quantized = mixed.record.iq.quantized_f32();
                let bytes = f32_bytes(&quantized);
                let sha = hex_digest(&bytes);
                let iq_path = iq_dir.join(format!("{id}.iq"));
                std::fs::write(&iq_path, &bytes)?;
                let meta = SceneMeta::for_buffer(
                    &quantized,
                    mixed.record.label_detect,
                    mixed.record.label_waveform,
                    mixed.record.achieved_sinr_db,
                    Some(seed),
                );
                let meta_json = serde_json::to_string_pretty(&meta)?;
                std::fs::write(iq_dir.join(format!("{id}.meta.json")), meta_json)?;
                if config.debug_components {
                    write_components(config, &id, &mixed)?;
                }
                let iq_rel = format!("iq/{id}.iq");
                return Ok(ManifestRecord {
                    id,
                    index: plan.index,
                    iq_path: iq_rel,
                    scenario: plan.scenario,
                    label_detect: mixed.record.label_detect,
                    label_waveform: mixed.record.label_waveform,
                    sinr_group_db: plan.sinr_group_db,
                    target_sinr_db: spec.target_sinr_db,
                    achieved_sinr_db: mixed.record.achieved_sinr_db,
                    noise_plus_interference_dbm_per_mhz: spec.noise_plus_interference_dbm_per_mhz,
                    radar_peak_dbm_per_mhz: spec
                        .target_sinr_db
                        .map(|_| spec.radar_peak_dbm_per_mhz),
                    delay_s: plan.scenario.has_radar().then_some(spec.delay_s),
                    radar_band_center_hz: mixed.components.radar_band_center_hz,
                    radar_bw_hz: plan.waveform.map(|w| crate::radar::waveform(w).bw_hz),
                    ofdm_bandwidth_hz: mixed.components.ofdm_bandwidth_hz,
                    seed,
                    num_samples: quantized.len(),
                    iq_sha256: sha,
                    spectrogram_path: None,
                });
            }
            Err(e @ Error::Io(_)) => return Err(e),
            Err(e) => {
                log::warn!("record {id} attempt {attempt} failed: {e}; retrying with fresh seed");
                last_err = Some(e);
            }
        }
    }
    Err(last_err.unwrap_or_else(|| Error::CalibrationFailed(format!("record {id} unproducible"))))
}

fn write_components(config: &DatasetConfig, id: &str, mixed: &super::MixedScene) -> Result<()> {
    let dir = config.output_dir.join("components");
    std::fs::create_dir_all(&dir)?;
    let dump = |name: &str, buf: &crate::signal::IqBuffer| -> Result<()> {
        let meta = SceneMeta::for_buffer(
            &buf.quantized_f32(),
            mixed.record.label_detect,
            mixed.record.label_waveform,
            None,
            Some(mixed.record.spec.seed),
        );
        write_iq_file(
            &buf.quantized_f32(),
            &meta,
            &dir.join(format!("{id}.{name}")),
        )
    };
    if let Some(r) = &mixed.components.radar {
        dump("radar", r)?;
    }
    if let Some(i) = &mixed.components.interference {
        dump("interference", i)?;
    }
    dump("noise", &mixed.components.noise)?;
    Ok(())
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let out = h.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

/// Generate the corpus described by `config`, in parallel over `workers`
/// threads, and write the manifest plus a combined corpus hash.
pub fn generate_dataset(config: &DatasetConfig, workers: usize) -> Result<GenSummary> {
    config.validate()?;
    std::fs::create_dir_all(config.output_dir.join("iq"))?;
    let plans = plan_records(config);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidParams(format!("thread pool: {e}")))?;
    let mut results: Vec<Result<ManifestRecord>> =
        pool.install(|| plans.par_iter().map(|p| generate_one(config, p)).collect());

    let mut records = Vec::with_capacity(results.len());
    for r in results.drain(..) {
        records.push(r?);
    }
    records.sort_by_key(|r| r.index);

    let manifest_path = config.output_dir.join(MANIFEST_NAME);
    write_manifest(&manifest_path, &records)?;

    let corpus_sha256 = corpus_hash(&records);
    std::fs::write(
        config.output_dir.join("corpus_hash.txt"),
        format!("{corpus_sha256}\n"),
    )?;
    let config_json = serde_json::to_string_pretty(config)?;
    std::fs::write(config.output_dir.join("dataset_config.json"), config_json)?;

    Ok(GenSummary {
        manifest_path,
        corpus_sha256,
        num_records: records.len(),
    })
}

/// Combined corpus fingerprint: SHA-256 over the ordered per-record payload
/// hashes.
pub fn corpus_hash(records: &[ManifestRecord]) -> String {
    let mut h = Sha256::new();
    for r in records {
        h.update(r.id.as_bytes());
        h.update(b":");
        h.update(r.iq_sha256.as_bytes());
        h.update(b"\n");
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let f = std::fs::File::open(path).map_err(|e| Error::MalformedFile {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let mut records = Vec::new();
    for (lineno, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord =
            serde_json::from_str(&line).map_err(|e| Error::MalformedFile {
                path: path.display().to_string(),
                reason: format!("line {}: {e}", lineno + 1),
            })?;
        records.push(rec);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(dir: &Path, seed: u64) -> DatasetConfig {
        DatasetConfig {
            sample_rate_hz: 61.44e6,
            duration_s: 0.5e-3,
            sinr_grid_db: vec![0.0, 5.0],
            counts: CategoryCounts {
                radar_only: 2,
                fiveg_only: 2,
                radar_plus_5g: 2,
            },
            waveforms: vec![WaveformName::Bin1A, WaveformName::Bin1B],
            master_seed: seed,
            output_dir: dir.to_path_buf(),
            noise_floor_range_dbm_per_mhz: (-109.0, -84.0),
            mix: MixEnv::default(),
            debug_components: false,
        }
    }

    #[test]
    fn generates_exact_counts_and_labels() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config(dir.path(), 99);
        let summary = generate_dataset(&config, 2).unwrap();
        assert_eq!(summary.num_records, 12);
        let records = read_manifest(&summary.manifest_path).unwrap();
        assert_eq!(records.len(), 12);
        for sinr in [0.0, 5.0] {
            let bucket: Vec<_> = records
                .iter()
                .filter(|r| r.sinr_group_db == sinr)
                .collect();
            assert_eq!(bucket.len(), 6);
            assert_eq!(
                bucket
                    .iter()
                    .filter(|r| r.scenario == Scenario::FiveGOnly)
                    .count(),
                2
            );
        }
        for r in &records {
            // Labels are total and consistent with the scenario.
            assert_eq!(r.label_detect, r.scenario.detect_label());
            assert_eq!(r.label_waveform.is_some(), r.scenario.has_radar());
            if let Some(a) = r.achieved_sinr_db {
                assert!((a - r.target_sinr_db.unwrap()).abs() <= 0.5);
            }
            assert!(dir.path().join(&r.iq_path).exists());
        }
    }

    #[test]
    fn regeneration_reproduces_corpus_hash() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let a = generate_dataset(&tiny_config(dir_a.path(), 7), 2).unwrap();
        // Different worker count must not change anything.
        let b = generate_dataset(&tiny_config(dir_b.path(), 7), 1).unwrap();
        assert_eq!(a.corpus_sha256, b.corpus_sha256);
        let c = generate_dataset(&tiny_config(dir_a.path(), 8), 2).unwrap();
        assert_ne!(a.corpus_sha256, c.corpus_sha256);
    }
}
