//! Shift-detection evaluation: precision/recall/F1 on the shift class plus
//! breakdowns by topic count and by the turn length of the topic being left.
//!
//! Precision with no positive predictions and recall with no gold positives
//! are reported as 0 (never NaN) so logs stay machine-readable; breakdown
//! rows that have no gold positives report their score as absent instead,
//! marking "undefined" rather than "bad".

use super::TrainerError;
use crate::corpus::Sample;

/// Turn-length buckets for the recall breakdown (inclusive bounds).
pub const TURN_LENGTH_BUCKETS: [(u64, u64); 5] = [(1, 3), (4, 6), (7, 9), (10, 12), (13, 17)];

/// One scored sample: gold label, predicted label, and the grouping metadata
/// carried over from extraction.
#[derive(Debug, Clone, Copy)]
pub struct PredRecord {
    pub label: u8,
    pub pred: u8,
    pub topic_count: usize,
    pub prev_topic_turns: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct BaselineMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct TopicCountRow {
    pub topic_count: usize,
    pub samples: usize,
    pub positives: usize,
    /// Absent when the group has no gold positives (F1 undefined).
    pub f1: Option<f64>,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct TurnLengthRow {
    pub bucket: String,
    pub positives: usize,
    pub predicted: usize,
    /// Absent when no gold positive falls into the bucket.
    pub recall: Option<f64>,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct EvalResult {
    pub samples: usize,
    pub true_positive: usize,
    pub false_positive: usize,
    pub false_negative: usize,
    pub true_negative: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// What predicting "shift" on every sample would have scored.
    pub all_positive_baseline: BaselineMetrics,
    pub by_topic_count: Vec<TopicCountRow>,
    pub by_turn_length: Vec<TurnLengthRow>,
}

/// P, R and F1 from confusion counts, with the 0-for-undefined convention.
pub fn precision_recall_f1(tp: usize, fp: usize, fn_: usize) -> (f64, f64, f64) {
    let precision = if tp + fp > 0 {
        tp as f64 / (tp + fp) as f64
    } else {
        0.0
    };
    let recall = if tp + fn_ > 0 {
        tp as f64 / (tp + fn_) as f64
    } else {
        0.0
    };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    (precision, recall, f1)
}

/// Scores labeled samples with the given predictor (0 = no shift, 1 = shift).
pub fn evaluate<P>(samples: &[Sample], mut predict: P) -> Result<EvalResult, TrainerError>
where
    P: FnMut(&Sample) -> Result<u8, TrainerError>,
{
    if samples.is_empty() {
        return Err(TrainerError::EmptySampleSet);
    }
    let mut records = Vec::with_capacity(samples.len());
    for sample in samples {
        records.push(PredRecord {
            label: sample.label,
            pred: predict(sample)?,
            topic_count: sample.topic_count,
            prev_topic_turns: sample.prev_topic_turns,
        });
    }
    Ok(metrics_from_records(&records))
}

pub fn metrics_from_records(records: &[PredRecord]) -> EvalResult {
    let mut tp = 0;
    let mut fp = 0;
    let mut fn_ = 0;
    let mut tn = 0;
    for r in records {
        match (r.label, r.pred) {
            (1, 1) => tp += 1,
            (0, 1) => fp += 1,
            (1, 0) => fn_ += 1,
            _ => tn += 1,
        }
    }
    let (precision, recall, f1) = precision_recall_f1(tp, fp, fn_);

    // All-positive baseline: every sample predicted as a shift.
    let positives = tp + fn_;
    let negatives = fp + tn;
    let (bp, br, bf1) = precision_recall_f1(positives, negatives, 0);
    let all_positive_baseline = BaselineMetrics {
        precision: bp,
        recall: br,
        f1: bf1,
    };

    // F1 per topic-count group.
    let mut groups: std::collections::BTreeMap<usize, Vec<&PredRecord>> =
        std::collections::BTreeMap::new();
    for r in records {
        groups.entry(r.topic_count).or_default().push(r);
    }
    let by_topic_count = groups
        .into_iter()
        .map(|(topic_count, rs)| {
            let tp = rs.iter().filter(|r| r.label == 1 && r.pred == 1).count();
            let fp = rs.iter().filter(|r| r.label == 0 && r.pred == 1).count();
            let fn_ = rs.iter().filter(|r| r.label == 1 && r.pred == 0).count();
            let positives = tp + fn_;
            TopicCountRow {
                topic_count,
                samples: rs.len(),
                positives,
                f1: if positives > 0 {
                    Some(precision_recall_f1(tp, fp, fn_).2)
                } else {
                    None
                },
            }
        })
        .collect();

    // Recall per previous-topic turn-length bucket, over gold positives only.
    let mut by_turn_length = Vec::new();
    let bucketed = |lo: u64, hi: Option<u64>, name: String| {
        let in_bucket = |r: &&PredRecord| {
            let len = r.prev_topic_turns as u64;
            r.label == 1 && len >= lo && hi.is_none_or(|h| len <= h)
        };
        let positives = records.iter().filter(in_bucket).count();
        let predicted = records
            .iter()
            .filter(|r| in_bucket(r) && r.pred == 1)
            .count();
        TurnLengthRow {
            bucket: name,
            positives,
            predicted,
            recall: if positives > 0 {
                Some(predicted as f64 / positives as f64)
            } else {
                None
            },
        }
    };
    for (lo, hi) in TURN_LENGTH_BUCKETS {
        by_turn_length.push(bucketed(lo, Some(hi), format!("{lo}-{hi}")));
    }
    let overflow_start = TURN_LENGTH_BUCKETS[TURN_LENGTH_BUCKETS.len() - 1].1 + 1;
    let overflow = bucketed(overflow_start, None, format!("{overflow_start}+"));
    if overflow.positives > 0 {
        by_turn_length.push(overflow);
    }

    EvalResult {
        samples: records.len(),
        true_positive: tp,
        false_positive: fp,
        false_negative: fn_,
        true_negative: tn,
        precision,
        recall,
        f1,
        all_positive_baseline,
        by_topic_count,
        by_turn_length,
    }
}

/// CSV rendering of the topic-count table (empty score cell = undefined).
pub fn topic_count_csv(result: &EvalResult) -> String {
    let mut out = String::from("topic_count,samples,positives,f1\n");
    for row in &result.by_topic_count {
        let f1 = row.f1.map(|v| format!("{v:.4}")).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{f1}\n",
            row.topic_count, row.samples, row.positives
        ));
    }
    out
}

/// CSV rendering of the turn-length table (empty score cell = undefined).
pub fn turn_length_csv(result: &EvalResult) -> String {
    let mut out = String::from("bucket,positives,predicted,recall\n");
    for row in &result.by_turn_length {
        let recall = row.recall.map(|v| format!("{v:.4}")).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{recall}\n",
            row.bucket, row.positives, row.predicted
        ));
    }
    out
}
