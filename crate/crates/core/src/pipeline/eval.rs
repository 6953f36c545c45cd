//! Corpus evaluation, the hierarchy contract audit, the latency protocol,
//! and the accuracy/latency trade-off report.

use super::metrics::{ConfusionMatrix, LatencyStats, MetricsReport};
use super::{
    detect, identify, identify_waveform, IdentifyOutcome, Pipeline, PipelineConfig, CLASS_RADAR,
    DETECT_CLASSES,
};
use crate::error::{Error, Result};
use crate::nn::Model;
use crate::radar::WaveformName;
use crate::scene::ManifestRecord;
use crate::signal::{read_iq_file, DetectLabel, IqBuffer};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::path::Path;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalTask {
    Detect,
    Identify,
}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    pub workers: usize,
    /// Record ids the model was trained/validated on; evaluation refuses to
    /// run if any appear in the test manifest.
    pub train_ids: Option<HashSet<String>>,
}

fn leakage_check(records: &[ManifestRecord], opts: &EvalOptions) -> Result<()> {
    if let Some(train) = &opts.train_ids {
        let leaked: Vec<&str> = records
            .iter()
            .filter(|r| train.contains(&r.id))
            .map(|r| r.id.as_str())
            .take(5)
            .collect();
        if !leaked.is_empty() {
            return Err(Error::SplitLeakage(format!(
                "{} test records appear in the training split (e.g. {:?})",
                records.iter().filter(|r| train.contains(&r.id)).count(),
                leaked
            )));
        }
    }
    Ok(())
}

fn load_record(root: &Path, rec: &ManifestRecord) -> Result<IqBuffer> {
    let (buf, _) = read_iq_file(&root.join(&rec.iq_path))?;
    Ok(buf)
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidParams(format!("thread pool: {e}")))
}

/// Latency samples following the measurement protocol: the first `warmup`
/// samples are discarded before computing statistics.
fn protocol_stats(mut samples: Vec<f64>, warmup: usize) -> LatencyStats {
    if samples.len() > warmup + 1 {
        samples.drain(..warmup);
    }
    LatencyStats::from_samples(samples)
}

/// Evaluate one model over a test manifest.
///
/// Detection runs on every record; identification runs on the radar-bearing
/// records only (the identifier is scored directly here; the gated chain is
/// audited by [`evaluate_hierarchy`]).
pub fn evaluate(
    dataset_root: &Path,
    records: &[ManifestRecord],
    model: &Model<f32>,
    cfg: &PipelineConfig,
    task: EvalTask,
    opts: &EvalOptions,
) -> Result<MetricsReport> {
    leakage_check(records, opts)?;
    let subset: Vec<&ManifestRecord> = match task {
        EvalTask::Detect => records.iter().collect(),
        EvalTask::Identify => records
            .iter()
            .filter(|r| r.label_waveform.is_some())
            .collect(),
    };
    if subset.is_empty() {
        return Err(Error::InvalidInput("no records to evaluate".into()));
    }

    type Row = (usize, usize, f64, f64);
    let work = |rec: &&ManifestRecord| -> Result<Row> {
        let buf = load_record(dataset_root, rec)?;
        match task {
            EvalTask::Detect => {
                let r = detect(&buf, model, cfg)?;
                let truth = match rec.label_detect {
                    DetectLabel::Radar => 0,
                    DetectLabel::NoRadar => 1,
                };
                let pred = match r.decision {
                    DetectLabel::Radar => 0,
                    DetectLabel::NoRadar => 1,
                };
                Ok((truth, pred, r.latency.preprocess_s, r.latency.inference_s))
            }
            EvalTask::Identify => {
                let t0 = Instant::now();
                let r = identify_waveform(&buf, model, None, cfg)?;
                let total = t0.elapsed().as_secs_f64();
                let truth = rec.label_waveform.unwrap().class_index();
                let pred = r.waveform.class_index();
                Ok((truth, pred, 0.0, total))
            }
        }
    };
    let results: Vec<Result<Row>> = if opts.workers > 1 {
        pool(opts.workers)?.install(|| subset.par_iter().map(work).collect())
    } else {
        subset.iter().map(work).collect()
    };

    let classes: Vec<String> = match task {
        EvalTask::Detect => DETECT_CLASSES.iter().map(|s| s.to_string()).collect(),
        EvalTask::Identify => WaveformName::ALL.iter().map(|w| w.to_string()).collect(),
    };
    let mut cm = ConfusionMatrix::new(classes);
    let mut pre = Vec::with_capacity(results.len());
    let mut inf = Vec::with_capacity(results.len());
    for r in results {
        let (truth, pred, p, i) = r?;
        cm.record(truth, pred);
        pre.push(p);
        inf.push(i);
    }
    let mut report = MetricsReport::from_confusion(
        match task {
            EvalTask::Detect => "detect",
            EvalTask::Identify => "identify",
        },
        cm,
        matches!(task, EvalTask::Detect),
    );
    report.preprocess_latency = protocol_stats(pre, 5);
    report.inference_latency = protocol_stats(inf, 5);
    Ok(report)
}

/// Audit of the hierarchical gating contract over a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyReport {
    pub num_records: u64,
    /// Captures where detection decided RADAR.
    pub detect_radar_count: u64,
    /// Captures where the identifier actually ran.
    pub identify_invoked_count: u64,
    /// FiveG-only truth captures correctly rejected by detection.
    pub fiveg_correctly_rejected: u64,
    /// Of those, how many still produced a waveform output (must be 0).
    pub rejected_with_waveform_output: u64,
    pub detection: MetricsReport,
    /// 6-class metrics over radar-truth captures that reached the identifier.
    pub identification: Option<MetricsReport>,
}

/// Run the full detect-then-identify chain over a corpus and audit the
/// gating invariants.
pub fn evaluate_hierarchy(
    dataset_root: &Path,
    records: &[ManifestRecord],
    detect_model: &Model<f32>,
    id_model: &Model<f32>,
    cfg: &PipelineConfig,
    opts: &EvalOptions,
) -> Result<HierarchyReport> {
    leakage_check(records, opts)?;
    struct Row {
        truth_detect: usize,
        pred_detect: usize,
        invoked: bool,
        waveform_emitted: bool,
        id_pair: Option<(usize, usize)>,
    }
    let work = |rec: &ManifestRecord| -> Result<Row> {
        let buf = load_record(dataset_root, rec)?;
        let outcome = identify(&buf, detect_model, id_model, cfg)?;
        let truth_detect = match rec.label_detect {
            DetectLabel::Radar => 0,
            DetectLabel::NoRadar => 1,
        };
        Ok(match outcome {
            IdentifyOutcome::NotRadar(d) => Row {
                truth_detect,
                pred_detect: match d.decision {
                    DetectLabel::Radar => 0,
                    DetectLabel::NoRadar => 1,
                },
                invoked: false,
                waveform_emitted: false,
                id_pair: None,
            },
            IdentifyOutcome::Radar {
                detection,
                identification,
            } => Row {
                truth_detect,
                pred_detect: match detection.decision {
                    DetectLabel::Radar => 0,
                    DetectLabel::NoRadar => 1,
                },
                invoked: true,
                waveform_emitted: true,
                id_pair: rec
                    .label_waveform
                    .map(|w| (w.class_index(), identification.waveform.class_index())),
            },
        })
    };
    let results: Vec<Result<Row>> = if opts.workers > 1 {
        pool(opts.workers)?.install(|| records.par_iter().map(work).collect())
    } else {
        records.iter().map(work).collect()
    };

    let mut det_cm = ConfusionMatrix::new(DETECT_CLASSES.iter().map(|s| s.to_string()).collect());
    let mut id_cm = ConfusionMatrix::new(WaveformName::ALL.iter().map(|w| w.to_string()).collect());
    let mut detect_radar = 0u64;
    let mut invoked = 0u64;
    let mut rejected = 0u64;
    let mut rejected_with_waveform = 0u64;
    let mut any_id = false;
    for r in results {
        let row = r?;
        det_cm.record(row.truth_detect, row.pred_detect);
        if row.pred_detect == CLASS_RADAR {
            detect_radar += 1;
        }
        if row.invoked {
            invoked += 1;
        }
        if row.truth_detect == 1 && row.pred_detect == 1 {
            rejected += 1;
            if row.waveform_emitted {
                rejected_with_waveform += 1;
            }
        }
        if let Some((t, p)) = row.id_pair {
            id_cm.record(t, p);
            any_id = true;
        }
    }
    Ok(HierarchyReport {
        num_records: records.len() as u64,
        detect_radar_count: detect_radar,
        identify_invoked_count: invoked,
        fiveg_correctly_rejected: rejected,
        rejected_with_waveform_output: rejected_with_waveform,
        detection: MetricsReport::from_confusion("hierarchy.detect", det_cm, true),
        identification: any_id
            .then(|| MetricsReport::from_confusion("hierarchy.identify", id_cm, false)),
    })
}

/// Strict latency protocol on one capture: `warmup` unmeasured runs, then
/// `iters` timed runs of the full preprocess + inference chain.
pub fn measure_latency(
    buf: &IqBuffer,
    model: &Model<f32>,
    cfg: &PipelineConfig,
    warmup: usize,
    iters: usize,
) -> Result<(LatencyStats, LatencyStats)> {
    for _ in 0..warmup {
        detect(buf, model, cfg)?;
    }
    let mut pre = Vec::with_capacity(iters);
    let mut inf = Vec::with_capacity(iters);
    for _ in 0..iters {
        let r = detect(buf, model, cfg)?;
        pre.push(r.latency.preprocess_s);
        inf.push(r.latency.inference_s);
    }
    Ok((
        LatencyStats::from_samples(pre),
        LatencyStats::from_samples(inf),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffRow {
    pub pipeline: Pipeline,
    pub accuracy: f64,
    pub preprocess_mean_s: f64,
    pub inference_mean_s: f64,
    pub total_mean_s: f64,
    pub total_p95_s: f64,
}

/// Accuracy vs end-to-end latency for both pipelines on the same test
/// records (the paper's trade-off view at SINR -5 dB).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffReport {
    pub sinr_db: f64,
    pub rows: Vec<TradeoffRow>,
}

impl TradeoffReport {
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("pipeline,accuracy,preprocess_mean_s,inference_mean_s,total_mean_s,total_p95_s\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                r.pipeline, r.accuracy, r.preprocess_mean_s, r.inference_mean_s, r.total_mean_s,
                r.total_p95_s
            ));
        }
        out
    }
}

/// Evaluate both pipelines on records from one SINR bucket and time them
/// with the strict protocol on a sample capture.
#[allow(clippy::too_many_arguments)]
pub fn tradeoff_report(
    dataset_root: &Path,
    records: &[ManifestRecord],
    sinr_db: f64,
    p1_model: &Model<f32>,
    p1_cfg: &PipelineConfig,
    p2_model: &Model<f32>,
    p2_cfg: &PipelineConfig,
    opts: &EvalOptions,
) -> Result<TradeoffReport> {
    let bucket: Vec<ManifestRecord> = records
        .iter()
        .filter(|r| r.sinr_group_db == sinr_db)
        .cloned()
        .collect();
    if bucket.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no records in the {sinr_db} dB bucket"
        )));
    }
    let sample = load_record(dataset_root, &bucket[0])?;
    let mut rows = Vec::new();
    for (model, cfg) in [(p1_model, p1_cfg), (p2_model, p2_cfg)] {
        let report = evaluate(dataset_root, &bucket, model, cfg, EvalTask::Detect, opts)?;
        let (pre, inf) = measure_latency(&sample, model, cfg, 5, 30)?;
        let totals: LatencyStats = {
            // p95 of the sum approximated by re-timing the full chain
            let mut v = Vec::with_capacity(30);
            for _ in 0..30 {
                let t0 = Instant::now();
                detect(&sample, model, cfg)?;
                v.push(t0.elapsed().as_secs_f64());
            }
            LatencyStats::from_samples(v)
        };
        rows.push(TradeoffRow {
            pipeline: cfg.pipeline(),
            accuracy: report.accuracy,
            preprocess_mean_s: pre.mean_s,
            inference_mean_s: inf.mean_s,
            total_mean_s: totals.mean_s,
            total_p95_s: totals.p95_s,
        });
    }
    Ok(TradeoffReport { sinr_db, rows })
}
