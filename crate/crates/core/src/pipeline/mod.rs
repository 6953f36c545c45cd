//! The two end-to-end pipelines and the hierarchical decision chain:
//! binary radar detection followed, only on RADAR decisions, by 6-way
//! waveform identification.

mod eval;
mod metrics;

pub use eval::{
    evaluate, evaluate_hierarchy, measure_latency, tradeoff_report, EvalOptions, EvalTask,
    HierarchyReport, TradeoffReport, TradeoffRow,
};
pub use metrics::{ConfusionMatrix, LatencyStats, MetricsReport};

use crate::error::{Error, Result};
use crate::features::{frame_iq, stft_spectrogram, SpectrogramConfig};
use crate::nn::Model;
use crate::radar::WaveformName;
use crate::signal::{DetectLabel, IqBuffer};
use ndarray::{Array2, ArrayD, Axis, IxDyn};
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// Detection class indices: RADAR first so the documented lowest-index
/// tiebreak resolves an exact (0.5, 0.5) tie to RADAR.
pub const CLASS_RADAR: usize = 0;
pub const CLASS_NO_RADAR: usize = 1;
pub const DETECT_CLASSES: [&str; 2] = ["RADAR", "NO_RADAR"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pipeline {
    #[serde(rename = "P1_IQ")]
    P1Iq,
    #[serde(rename = "P2_SPEC")]
    P2Spec,
}

impl std::fmt::Display for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Pipeline::P1Iq => "P1_IQ",
            Pipeline::P2Spec => "P2_SPEC",
        })
    }
}

/// How per-frame IQ detections combine into one capture-level decision.
///
/// Catalog duty cycles run 0.1%..6%, so for the slow-PRF waveforms only a
/// handful of the ~300 frames of a 20 ms capture contain any pulse energy;
/// a plain majority can never see those captures as RADAR. The default
/// therefore declares RADAR when at least `min_votes` frames vote RADAR.
/// Majority voting (mean-confidence tiebreak) remains available.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule", content = "arg")]
pub enum Aggregation {
    Majority,
    CountAtLeast(usize),
}

impl Default for Aggregation {
    fn default() -> Self {
        Aggregation::CountAtLeast(2)
    }
}

/// IQ-pipeline runtime configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct P1Config {
    pub frame_len: usize,
    pub hop: usize,
    pub aggregation: Aggregation,
}

impl Default for P1Config {
    fn default() -> Self {
        Self {
            frame_len: 4096,
            hop: 4096,
            aggregation: Aggregation::default(),
        }
    }
}

/// Spectrogram-pipeline runtime configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct P2Config {
    pub spectrogram: SpectrogramConfig,
}

/// Feature configuration for whichever pipeline a model was trained for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "pipeline")]
pub enum PipelineConfig {
    #[serde(rename = "P1_IQ")]
    P1(P1Config),
    #[serde(rename = "P2_SPEC")]
    P2(P2Config),
}

impl PipelineConfig {
    pub fn pipeline(&self) -> Pipeline {
        match self {
            PipelineConfig::P1(_) => Pipeline::P1Iq,
            PipelineConfig::P2(_) => Pipeline::P2Spec,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct LatencyBreakdown {
    pub preprocess_s: f64,
    pub inference_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub decision: DetectLabel,
    /// Max entry of the capture-level prediction vector (for the IQ
    /// pipeline: the mean of per-frame probability vectors).
    pub confidence: f32,
    pub pipeline: Pipeline,
    pub latency: LatencyBreakdown,
    /// Frames that voted RADAR (IQ pipeline only).
    pub radar_votes: usize,
    pub total_frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentificationResult {
    pub waveform: WaveformName,
    pub confidence: f32,
    pub pipeline: Pipeline,
}

/// Outcome of the full hierarchical chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum IdentifyOutcome {
    /// Detection said NO_RADAR; the identifier was never invoked.
    NotRadar(DetectionResult),
    Radar {
        detection: DetectionResult,
        identification: IdentificationResult,
    },
}

fn frames_to_batch(frames: &[crate::features::IqFrame]) -> ArrayD<f32> {
    let d0 = frames[0].values.shape()[0];
    let mut arr = ArrayD::<f32>::zeros(IxDyn(&[frames.len(), d0, 2]));
    for (i, f) in frames.iter().enumerate() {
        for j in 0..d0 {
            arr[[i, j, 0]] = f.values[(j, 0)];
            arr[[i, j, 1]] = f.values[(j, 1)];
        }
    }
    arr
}

fn tensor_to_input(t: &crate::features::SpectrogramTensor) -> ArrayD<f32> {
    let s = t.values.shape();
    let mut arr = ArrayD::<f32>::zeros(IxDyn(&[1, s[0], s[1], s[2]]));
    for ((i, j, c), v) in t.values.indexed_iter() {
        arr[[0, i, j, c]] = *v;
    }
    arr
}

/// Capture-level decision from per-frame probabilities.
fn aggregate_frames(probs: &Array2<f32>, rule: &Aggregation) -> (DetectLabel, f32, usize) {
    let n = probs.shape()[0];
    let mut radar_votes = 0usize;
    let mut conf_radar = 0.0f64;
    let mut conf_no = 0.0f64;
    for row in probs.rows() {
        // lowest-index tiebreak: RADAR wins an exact tie
        if row[CLASS_RADAR] >= row[CLASS_NO_RADAR] {
            radar_votes += 1;
            conf_radar += row[CLASS_RADAR] as f64;
        } else {
            conf_no += row[CLASS_NO_RADAR] as f64;
        }
    }
    let decision = match rule {
        Aggregation::Majority => {
            if 2 * radar_votes > n {
                DetectLabel::Radar
            } else if 2 * radar_votes < n {
                DetectLabel::NoRadar
            } else {
                // exact tie: higher mean confidence among the voting frames,
                // then lowest class index (RADAR)
                let mr = conf_radar / radar_votes.max(1) as f64;
                let mn = conf_no / (n - radar_votes).max(1) as f64;
                if mr >= mn {
                    DetectLabel::Radar
                } else {
                    DetectLabel::NoRadar
                }
            }
        }
        Aggregation::CountAtLeast(k) => {
            if radar_votes >= *k {
                DetectLabel::Radar
            } else {
                DetectLabel::NoRadar
            }
        }
    };
    // Capture-level prediction vector: mean of per-frame probabilities.
    let mean = probs.mean_axis(Axis(0)).unwrap();
    let confidence = mean.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    (decision, confidence, radar_votes)
}

/// Run radar detection on one capture.
pub fn detect(
    buf: &IqBuffer,
    model: &Model<f32>,
    cfg: &PipelineConfig,
) -> Result<DetectionResult> {
    match cfg {
        PipelineConfig::P1(p1) => {
            let t0 = Instant::now();
            let frames = frame_iq(buf, p1.frame_len, p1.hop)?;
            if frames.is_empty() {
                return Err(Error::InvalidInput("no usable frames in capture".into()));
            }
            let inputs = frames_to_batch(&frames);
            let preprocess_s = t0.elapsed().as_secs_f64();
            let t1 = Instant::now();
            let probs = model.predict_batch(&inputs)?;
            let inference_s = t1.elapsed().as_secs_f64();
            let (decision, confidence, votes) = aggregate_frames(&probs, &p1.aggregation);
            Ok(DetectionResult {
                decision,
                confidence,
                pipeline: Pipeline::P1Iq,
                latency: LatencyBreakdown {
                    preprocess_s,
                    inference_s,
                },
                radar_votes: votes,
                total_frames: frames.len(),
            })
        }
        PipelineConfig::P2(p2) => {
            let t0 = Instant::now();
            let tensor = stft_spectrogram(buf, &p2.spectrogram)?;
            let input = tensor_to_input(&tensor);
            let preprocess_s = t0.elapsed().as_secs_f64();
            let t1 = Instant::now();
            let probs = model.predict_batch(&input)?;
            let inference_s = t1.elapsed().as_secs_f64();
            let row = probs.row(0);
            let decision = if row[CLASS_RADAR] >= row[CLASS_NO_RADAR] {
                DetectLabel::Radar
            } else {
                DetectLabel::NoRadar
            };
            let confidence = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            Ok(DetectionResult {
                decision,
                confidence,
                pipeline: Pipeline::P2Spec,
                latency: LatencyBreakdown {
                    preprocess_s,
                    inference_s,
                },
                radar_votes: usize::from(decision == DetectLabel::Radar),
                total_frames: 1,
            })
        }
    }
}

/// Waveform identification on a capture already known (or assumed) to hold
/// radar. For the IQ pipeline the per-frame 6-class probabilities are
/// averaged over the frames whose detector vote was RADAR when a detector
/// model is supplied, otherwise over all frames.
pub fn identify_waveform(
    buf: &IqBuffer,
    id_model: &Model<f32>,
    detect_model: Option<&Model<f32>>,
    cfg: &PipelineConfig,
) -> Result<IdentificationResult> {
    let (probs, pipeline) = match cfg {
        PipelineConfig::P1(p1) => {
            let frames = frame_iq(buf, p1.frame_len, p1.hop)?;
            if frames.is_empty() {
                return Err(Error::InvalidInput("no usable frames in capture".into()));
            }
            let inputs = frames_to_batch(&frames);
            let id_probs = id_model.predict_batch(&inputs)?;
            let selected: Vec<usize> = match detect_model {
                Some(dm) => {
                    let det = dm.predict_batch(&inputs)?;
                    let hits: Vec<usize> = det
                        .rows()
                        .into_iter()
                        .enumerate()
                        .filter(|(_, r)| r[CLASS_RADAR] >= r[CLASS_NO_RADAR])
                        .map(|(i, _)| i)
                        .collect();
                    if hits.is_empty() {
                        (0..frames.len()).collect()
                    } else {
                        hits
                    }
                }
                None => (0..frames.len()).collect(),
            };
            let mut mean = vec![0.0f64; id_probs.shape()[1]];
            for &i in &selected {
                for (m, p) in mean.iter_mut().zip(id_probs.row(i).iter()) {
                    *m += *p as f64;
                }
            }
            for m in mean.iter_mut() {
                *m /= selected.len() as f64;
            }
            let arr = Array2::from_shape_vec((1, mean.len()), mean)
                .unwrap()
                .mapv(|v| v as f32);
            (arr, Pipeline::P1Iq)
        }
        PipelineConfig::P2(p2) => {
            let tensor = stft_spectrogram(buf, &p2.spectrogram)?;
            let input = tensor_to_input(&tensor);
            (id_model.predict_batch(&input)?, Pipeline::P2Spec)
        }
    };
    let row = probs.row(0);
    let mut best = 0usize;
    for (i, p) in row.iter().enumerate() {
        if *p > row[best] {
            best = i;
        }
    }
    if best >= WaveformName::ALL.len() {
        return Err(Error::ShapeMismatch(format!(
            "identifier produced {} classes",
            row.len()
        )));
    }
    Ok(IdentificationResult {
        waveform: WaveformName::ALL[best],
        confidence: row[best],
        pipeline,
    })
}

/// Full hierarchical chain: detect, then identify only on RADAR decisions.
/// A NO_RADAR decision never yields a waveform guess.
pub fn identify(
    buf: &IqBuffer,
    detect_model: &Model<f32>,
    id_model: &Model<f32>,
    cfg: &PipelineConfig,
) -> Result<IdentifyOutcome> {
    let detection = detect(buf, detect_model, cfg)?;
    if detection.decision == DetectLabel::NoRadar {
        return Ok(IdentifyOutcome::NotRadar(detection));
    }
    let identification = identify_waveform(buf, id_model, Some(detect_model), cfg)?;
    Ok(IdentifyOutcome::Radar {
        detection,
        identification,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn exact_tie_goes_to_radar_class_zero() {
        let probs = array![[0.5f32, 0.5]];
        let (d, conf, votes) = aggregate_frames(&probs, &Aggregation::Majority);
        assert_eq!(d, DetectLabel::Radar);
        assert_eq!(votes, 1);
        assert!((conf - 0.5).abs() < 1e-6);
    }

    #[test]
    fn count_rule_fires_on_sparse_votes() {
        // 2 confident radar frames among 10: majority says no, count-2 says yes.
        let mut rows = vec![[0.1f32, 0.9]; 8];
        rows.push([0.95, 0.05]);
        rows.push([0.9, 0.1]);
        let probs = Array2::from_shape_vec(
            (10, 2),
            rows.into_iter().flatten().collect::<Vec<f32>>(),
        )
        .unwrap();
        let (maj, _, _) = aggregate_frames(&probs, &Aggregation::Majority);
        let (cnt, _, votes) = aggregate_frames(&probs, &Aggregation::CountAtLeast(2));
        assert_eq!(maj, DetectLabel::NoRadar);
        assert_eq!(cnt, DetectLabel::Radar);
        assert_eq!(votes, 2);
    }

    #[test]
    fn aggregation_is_order_invariant() {
        let rows = [
            [0.9f32, 0.1],
            [0.2, 0.8],
            [0.7, 0.3],
            [0.4, 0.6],
            [0.3, 0.7],
        ];
        let fwd =
            Array2::from_shape_vec((5, 2), rows.iter().flatten().cloned().collect()).unwrap();
        let rev =
            Array2::from_shape_vec((5, 2), rows.iter().rev().flatten().cloned().collect())
                .unwrap();
        for rule in [
            Aggregation::Majority,
            Aggregation::CountAtLeast(1),
            Aggregation::CountAtLeast(2),
        ] {
            let a = aggregate_frames(&fwd, &rule);
            let b = aggregate_frames(&rev, &rule);
            assert_eq!(a.0, b.0);
            assert_eq!(a.2, b.2);
        }
    }
}
