//! Classification metrics: confusion matrix, per-class precision/recall/F1,
//! false-positive accounting, and latency statistics.

use serde::{Deserialize, Serialize};

/// Truth-by-predicted count matrix. Merging is associative, so parallel
/// evaluation shards can be reduced in any grouping without changing totals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    /// counts[truth][predicted]
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: Vec<String>) -> Self {
        let n = classes.len();
        Self {
            classes,
            counts: vec![vec![0; n]; n],
        }
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.classes, other.classes);
        for (row, orow) in self.counts.iter_mut().zip(other.counts.iter()) {
            for (c, oc) in row.iter_mut().zip(orow.iter()) {
                *c += oc;
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn support(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn predicted_total(&self, class: usize) -> u64 {
        self.counts.iter().map(|row| row[class]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        let t = self.total();
        if t == 0 {
            0.0
        } else {
            self.trace() as f64 / t as f64
        }
    }

    pub fn precision(&self, class: usize) -> f64 {
        let p = self.predicted_total(class);
        if p == 0 {
            0.0
        } else {
            self.counts[class][class] as f64 / p as f64
        }
    }

    pub fn recall(&self, class: usize) -> f64 {
        let s = self.support(class);
        if s == 0 {
            0.0
        } else {
            self.counts[class][class] as f64 / s as f64
        }
    }

    pub fn f1(&self, class: usize) -> f64 {
        let p = self.precision(class);
        let r = self.recall(class);
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("truth\\predicted");
        for c in &self.classes {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (i, row) in self.counts.iter().enumerate() {
            out.push_str(&self.classes[i]);
            for v in row {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }
}

/// Wall-clock statistics for one processing phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct LatencyStats {
    pub mean_s: f64,
    pub p95_s: f64,
    pub samples: usize,
}

impl LatencyStats {
    pub fn from_samples(mut samples: Vec<f64>) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let idx = ((samples.len() as f64) * 0.95).ceil() as usize - 1;
        Self {
            mean_s: mean,
            p95_s: samples[idx.min(samples.len() - 1)],
            samples: samples.len(),
        }
    }
}

/// Full evaluation product for one task.
///
/// The source material reports "False Positives 0" without saying whether
/// that is a count or a rate, so both are carried; they are populated only
/// for detection-style tasks (positive class = RADAR).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: String,
    pub accuracy: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub false_positive_count: Option<u64>,
    pub false_positive_rate: Option<f64>,
    pub confusion_matrix: ConfusionMatrix,
    pub num_records: u64,
    pub preprocess_latency: LatencyStats,
    pub inference_latency: LatencyStats,
}

impl MetricsReport {
    /// Compute all derived metrics from a confusion matrix. For detection
    /// tasks the positive class must sit at index 0 (RADAR).
    pub fn from_confusion(task: &str, cm: ConfusionMatrix, detection_positive: bool) -> Self {
        let k = cm.classes.len();
        let precision: Vec<f64> = (0..k).map(|i| cm.precision(i)).collect();
        let recall: Vec<f64> = (0..k).map(|i| cm.recall(i)).collect();
        let f1: Vec<f64> = (0..k).map(|i| cm.f1(i)).collect();
        let (fp_count, fp_rate) = if detection_positive && k == 2 {
            // truth = NO_RADAR (1) predicted RADAR (0)
            let fp = cm.counts[1][0];
            let negatives = cm.support(1);
            (
                Some(fp),
                Some(if negatives == 0 {
                    0.0
                } else {
                    fp as f64 / negatives as f64
                }),
            )
        } else {
            (None, None)
        };
        Self {
            task: task.to_string(),
            accuracy: cm.accuracy(),
            macro_precision: precision.iter().sum::<f64>() / k as f64,
            macro_recall: recall.iter().sum::<f64>() / k as f64,
            macro_f1: f1.iter().sum::<f64>() / k as f64,
            precision,
            recall,
            f1,
            false_positive_count: fp_count,
            false_positive_rate: fp_rate,
            num_records: cm.total(),
            confusion_matrix: cm,
            preprocess_latency: LatencyStats::default(),
            inference_latency: LatencyStats::default(),
        }
    }
}
