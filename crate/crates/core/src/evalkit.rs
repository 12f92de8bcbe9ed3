//! Classification and event-level metrics, plus the pixel-difference
//! baseline detector.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::FrameSequence;
use crate::summarizer::TransitionEvent;
use crate::Category;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("predictions ({pred}) and truth ({truth}) differ in length")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("no samples to evaluate")]
    Empty,
    #[error("{0} events are not sorted")]
    Unsorted(&'static str),
    #[error("baseline needs at least two frames, got {0}")]
    TooShort(usize),
}

/// Rows are truth, columns are predictions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; Category::COUNT]; Category::COUNT],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn get(&self, truth: Category, pred: Category) -> u64 {
        self.counts[truth.index()][pred.index()]
    }

    pub fn accuracy(&self) -> f64 {
        let correct: u64 = (0..Category::COUNT).map(|i| self.counts[i][i]).sum();
        ratio(correct, self.total())
    }
}

pub fn confusion_matrix(pred: &[Category], truth: &[Category]) -> Result<ConfusionMatrix, EvalError> {
    if pred.len() != truth.len() {
        return Err(EvalError::LengthMismatch {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut m = ConfusionMatrix::default();
    for (&p, &t) in pred.iter().zip(truth) {
        m.counts[t.index()][p.index()] += 1;
    }
    Ok(m)
}

/// `num / den`, with 0/0 taken as 0.
fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prf1Report {
    pub per_category: [Prf; Category::COUNT],
    pub macro_avg: Prf,
}

impl Prf1Report {
    pub fn get(&self, c: Category) -> Prf {
        self.per_category[c.index()]
    }
}

pub fn prf1(m: &ConfusionMatrix) -> Prf1Report {
    let mut per_category = [Prf::default(); Category::COUNT];
    for (c, slot) in per_category.iter_mut().enumerate() {
        let tp = m.counts[c][c];
        let predicted: u64 = (0..Category::COUNT).map(|t| m.counts[t][c]).sum();
        let actual: u64 = m.counts[c].iter().sum();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, actual);
        *slot = Prf {
            precision,
            recall,
            f1: f1(precision, recall),
        };
    }
    let n = Category::COUNT as f64;
    let macro_avg = Prf {
        precision: per_category.iter().map(|p| p.precision).sum::<f64>() / n,
        recall: per_category.iter().map(|p| p.recall).sum::<f64>() / n,
        f1: per_category.iter().map(|p| p.f1).sum::<f64>() / n,
    };
    Prf1Report {
        per_category,
        macro_avg,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventMatchReport {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `(predicted frame, true frame)` pairs.
    pub matched: Vec<(usize, usize)>,
}

/// Greedy one-to-one matching: each true event, in increasing order, takes
/// the nearest still-unmatched prediction within `±tolerance` (earlier
/// prediction on equal distance).
pub fn match_transitions(pred: &[usize], truth: &[usize], tolerance: usize) -> Result<EventMatchReport, EvalError> {
    if pred.windows(2).any(|w| w[0] > w[1]) {
        return Err(EvalError::Unsorted("predicted"));
    }
    if truth.windows(2).any(|w| w[0] > w[1]) {
        return Err(EvalError::Unsorted("true"));
    }
    let mut used = vec![false; pred.len()];
    let mut matched = Vec::new();
    for &t in truth {
        let lo = pred.partition_point(|&p| p + tolerance < t);
        let mut best: Option<usize> = None;
        for (i, &p) in pred.iter().enumerate().skip(lo) {
            if p > t + tolerance {
                break;
            }
            if used[i] {
                continue;
            }
            if best.is_none_or(|b| p.abs_diff(t) < pred[b].abs_diff(t)) {
                best = Some(i);
            }
        }
        if let Some(i) = best {
            used[i] = true;
            matched.push((pred[i], t));
        }
    }
    let tp = matched.len();
    let precision = ratio(tp as u64, pred.len() as u64);
    let recall = ratio(tp as u64, truth.len() as u64);
    Ok(EventMatchReport {
        true_positives: tp,
        false_positives: pred.len() - tp,
        false_negatives: truth.len() - tp,
        precision,
        recall,
        f1: f1(precision, recall),
        matched,
    })
}

/// Mean absolute intensity difference between consecutive frames, indexed
/// by the later frame (entry 0 is always 0).
pub fn frame_differences(seq: &FrameSequence) -> Vec<f64> {
    let mut out = vec![0.0];
    for pair in seq.frames.windows(2) {
        let (a, b) = (&pair[0].pixels, &pair[1].pixels);
        let total: u64 = a.iter().zip(b).map(|(&x, &y)| x.abs_diff(y) as u64).sum();
        out.push(total as f64 / a.len() as f64);
    }
    out
}

/// Flags frames whose mean absolute difference from the previous frame
/// exceeds `threshold`, merges consecutive flagged frames into runs and
/// reports one event per run at its centre.
pub fn pixel_diff_baseline(seq: &FrameSequence, threshold: f64) -> Result<Vec<TransitionEvent>, EvalError> {
    if seq.frames.len() < 2 {
        return Err(EvalError::TooShort(seq.frames.len()));
    }
    let diffs = frame_differences(seq);
    let mut events = Vec::new();
    let mut i = 1;
    while i < diffs.len() {
        if diffs[i] > threshold {
            let start = i;
            let mut peak = diffs[i];
            while i + 1 < diffs.len() && diffs[i + 1] > threshold {
                i += 1;
                peak = peak.max(diffs[i]);
            }
            events.push(TransitionEvent {
                frame_index: (start + i) / 2,
                confidence: (peak / 255.0).clamp(f64::MIN_POSITIVE, 1.0),
            });
        }
        i += 1;
    }
    Ok(events)
}

/// Volume-level metrics and optional event-level matching.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confusion: Option<ConfusionMatrix>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classification: Option<Prf1Report>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub events: Option<EventMatchReport>,
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let (Some(m), Some(c)) = (&self.confusion, &self.classification) {
            writeln!(f, "{:<12} {:>9} {:>9} {:>9}", "category", "precision", "recall", "f1")?;
            for cat in Category::ALL {
                let p = c.get(cat);
                writeln!(f, "{:<12} {:>9.4} {:>9.4} {:>9.4}", cat.as_str(), p.precision, p.recall, p.f1)?;
            }
            let a = c.macro_avg;
            writeln!(f, "{:<12} {:>9.4} {:>9.4} {:>9.4}", "macro", a.precision, a.recall, a.f1)?;
            writeln!(f, "{:<12} {:>9.4}", "accuracy", m.accuracy())?;
            writeln!(f)?;
            writeln!(f, "{:<12} {:>10} {:>10} {:>10}", "truth\\pred", "unchanged", "switch", "transition")?;
            for t in Category::ALL {
                let row = m.counts[t.index()];
                writeln!(f, "{:<12} {:>10} {:>10} {:>10}", t.as_str(), row[0], row[1], row[2])?;
            }
        }
        if let Some(e) = &self.events {
            writeln!(f, "{:<10} {:>6} {:>6} {:>6} {:>9} {:>9} {:>9}", "events", "tp", "fp", "fn", "precision", "recall", "f1")?;
            writeln!(
                f,
                "{:<10} {:>6} {:>6} {:>6} {:>9.4} {:>9.4} {:>9.4}",
                "",
                e.true_positives,
                e.false_positives,
                e.false_negatives,
                e.precision,
                e.recall,
                e.f1
            )?;
        }
        Ok(())
    }
}
