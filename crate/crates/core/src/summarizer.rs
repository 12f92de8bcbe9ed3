//! From per-volume probabilities to transition events, keyframes and an
//! outline.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{self, Fps, Frame, FrameSequence, FrameVolume, IngestError};
use crate::strnet::{Network, StrnetError};
use crate::tensor::Tensor;
use crate::Category;

#[derive(Debug, Error)]
pub enum SummaryError {
    #[error("sequence is empty")]
    EmptySequence,
    #[error("manifest has no keyframes")]
    EmptyManifest,
    #[error("median window must be odd and at least 1, got {0}")]
    Window(usize),
    #[error("{categories} categories for {entries} track entries")]
    Misaligned { categories: usize, entries: usize },
    #[error("events are not sorted")]
    Unsorted,
    #[error("invalid prediction track: {0}")]
    Track(String),
    #[error("keyframe {frame} maps to source frame {source_frame}, beyond a sequence of {len}")]
    KeyframeSource {
        frame: usize,
        source_frame: usize,
        len: usize,
    },
    #[error(transparent)]
    Network(#[from] StrnetError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

pub type Result<T> = std::result::Result<T, SummaryError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackEntry {
    pub start: usize,
    /// Inclusive.
    pub end: usize,
    /// Unchanged, switch, transition.
    pub probs: [f64; 3],
}

/// Network output over one video, in retained-frame coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionTrack {
    pub video_id: String,
    /// Rate of the retained frames.
    pub fps: Fps,
    /// Retained frames in the video.
    pub frame_count: usize,
    /// Source frames per retained frame.
    pub temporal_rate: usize,
    pub entries: Vec<TrackEntry>,
}

impl PredictionTrack {
    pub fn validate(&self) -> Result<()> {
        if self.frame_count == 0 {
            return Err(SummaryError::EmptySequence);
        }
        if self.temporal_rate == 0 {
            return Err(SummaryError::Track("temporal rate must be positive".into()));
        }
        for (i, e) in self.entries.iter().enumerate() {
            if e.start > e.end || e.end >= self.frame_count {
                return Err(SummaryError::Track(format!("entry {i} range {}..={} is invalid", e.start, e.end)));
            }
            if e.probs.iter().any(|p| !(0.0..=1.0).contains(p)) || (e.probs.iter().sum::<f64>() - 1.0).abs() > 1e-4 {
                return Err(SummaryError::Track(format!("entry {i} probabilities {:?} are not a distribution", e.probs)));
            }
        }
        if self.entries.windows(2).any(|w| w[0].start > w[1].start) {
            return Err(SummaryError::Track("entries are not ordered".into()));
        }
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| IngestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let track: Self = serde_json::from_slice(&bytes).map_err(|source| IngestError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        track.validate()?;
        Ok(track)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(ingest::write_json(path.as_ref(), self)?)
    }
}

/// Runs the network over every volume, `batch` volumes at a time.
pub fn predict(
    net: &Network<f32>,
    volumes: &[FrameVolume],
    video_id: &str,
    reduced: &FrameSequence,
    temporal_rate: usize,
    batch: usize,
) -> Result<PredictionTrack> {
    let mut entries = Vec::with_capacity(volumes.len());
    for chunk in volumes.chunks(batch.max(1)) {
        let items: Vec<Tensor<f32>> = chunk.iter().map(|v| v.data.clone()).collect();
        let stacked = Tensor::stack(&items).map_err(StrnetError::from)?;
        let probs = net.forward(&stacked)?;
        for (v, p) in chunk.iter().zip(probs.data().chunks_exact(Category::COUNT)) {
            entries.push(TrackEntry {
                start: v.start,
                end: v.end,
                probs: [p[0] as f64, p[1] as f64, p[2] as f64],
            });
        }
    }
    Ok(PredictionTrack {
        video_id: video_id.to_string(),
        fps: reduced.fps,
        frame_count: reduced.len(),
        temporal_rate,
        entries,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub min_confidence: f64,
    pub median_window: usize,
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self {
            min_confidence: 0.5,
            median_window: 3,
        }
    }
}

/// Majority category in each window (truncated at the ends); a tie for the
/// top count resolves to unchanged.
pub fn median_filter(categories: &[Category], window: usize) -> Result<Vec<Category>> {
    if window == 0 || window % 2 == 0 {
        return Err(SummaryError::Window(window));
    }
    let half = window / 2;
    let n = categories.len();
    Ok((0..n)
        .map(|i| {
            let mut counts = [0usize; Category::COUNT];
            for c in &categories[i.saturating_sub(half)..(i + half + 1).min(n)] {
                counts[c.index()] += 1;
            }
            let top = *counts.iter().max().expect("three counts");
            let mut winners = Category::ALL.into_iter().filter(|c| counts[c.index()] == top);
            match (winners.next(), winners.next()) {
                (Some(c), None) => c,
                _ => Category::Unchanged,
            }
        })
        .collect())
}

pub fn decode_categories(track: &PredictionTrack, params: &DecodeParams) -> Result<Vec<Category>> {
    let raw: Vec<Category> = track
        .entries
        .iter()
        .map(|e| {
            let c = Category::argmax(&e.probs);
            if e.probs[c.index()] < params.min_confidence {
                Category::Unchanged
            } else {
                c
            }
        })
        .collect();
    median_filter(&raw, params.median_window)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionEvent {
    /// Retained-frame coordinates.
    pub frame_index: usize,
    pub confidence: f64,
}

/// Maximal runs of consecutive transition volumes, as index ranges.
fn transition_runs(categories: &[Category]) -> Vec<std::ops::Range<usize>> {
    let mut runs = Vec::new();
    let mut i = 0;
    while i < categories.len() {
        if categories[i] == Category::Transition {
            let start = i;
            while i < categories.len() && categories[i] == Category::Transition {
                i += 1;
            }
            runs.push(start..i);
        } else {
            i += 1;
        }
    }
    runs
}

fn run_span(entries: &[TrackEntry], run: &std::ops::Range<usize>) -> (usize, usize) {
    let lo = entries[run.clone()].iter().map(|e| e.start).min().expect("non-empty run");
    let hi = entries[run.clone()].iter().map(|e| e.end).max().expect("non-empty run");
    (lo, hi)
}

/// One event per maximal transition run, at the centre of the run's frame
/// span; confidence is the largest transition probability in the run.
pub fn merge_transitions(categories: &[Category], entries: &[TrackEntry]) -> Result<Vec<TransitionEvent>> {
    if categories.len() != entries.len() {
        return Err(SummaryError::Misaligned {
            categories: categories.len(),
            entries: entries.len(),
        });
    }
    Ok(transition_runs(categories)
        .into_iter()
        .map(|run| {
            let (lo, hi) = run_span(entries, &run);
            let confidence = entries[run]
                .iter()
                .map(|e| e.probs[Category::Transition.index()])
                .fold(0.0, f64::max);
            TransitionEvent {
                frame_index: (lo + hi) / 2,
                confidence: confidence.clamp(f64::MIN_POSITIVE, 1.0),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    pub frame: usize,
    pub time_s: f64,
    pub confidence: f64,
    /// Half-open `[start, end)`.
    pub segment: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryManifest {
    pub video_id: String,
    pub fps: Fps,
    pub keyframes: Vec<Keyframe>,
}

impl SummaryManifest {
    pub fn frame_count(&self) -> usize {
        self.keyframes.last().map_or(0, |k| k.segment[1])
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}

/// One keyframe per segment. Segments start at 0 and at each event frame.
/// The keyframe of a segment is the first frame of the first unchanged
/// volume that begins inside the segment, after the frames spanned by the
/// transition run that opened it; failing that, the last frame of that run
/// (clamped into the segment). The opening segment falls back to frame 0.
pub fn extract_keyframes(
    events: &[TransitionEvent],
    categories: &[Category],
    track: &PredictionTrack,
) -> Result<SummaryManifest> {
    let total = track.frame_count;
    if total == 0 {
        return Err(SummaryError::EmptySequence);
    }
    let entries = &track.entries;
    if categories.len() != entries.len() {
        return Err(SummaryError::Misaligned {
            categories: categories.len(),
            entries: entries.len(),
        });
    }
    if events.windows(2).any(|w| w[0].frame_index >= w[1].frame_index) {
        return Err(SummaryError::Unsorted);
    }
    let spans: Vec<(usize, usize)> = transition_runs(categories).iter().map(|r| run_span(entries, r)).collect();
    let boundaries: Vec<usize> = events.iter().map(|e| e.frame_index).filter(|&f| f > 0 && f < total).collect();

    let mut starts = vec![0];
    starts.extend(&boundaries);
    let mut keyframes = Vec::with_capacity(starts.len());
    for (i, &seg_start) in starts.iter().enumerate() {
        let seg_end = starts.get(i + 1).copied().unwrap_or(total);
        let (settled_after, fallback, confidence) = if i == 0 {
            (0, 0, 1.0)
        } else {
            let run_end = spans
                .iter()
                .find(|&&(lo, hi)| (lo..=hi).contains(&seg_start))
                .map_or(seg_start, |&(_, hi)| hi);
            let conf = events.iter().find(|e| e.frame_index == seg_start).map_or(1.0, |e| e.confidence);
            (run_end + 1, run_end.min(seg_end - 1), conf)
        };
        let frame = entries
            .iter()
            .zip(categories)
            .find(|(e, &c)| c == Category::Unchanged && e.start >= settled_after.max(seg_start) && e.start < seg_end)
            .map_or(fallback, |(e, _)| e.start);
        keyframes.push(Keyframe {
            frame,
            time_s: track.fps.seconds(frame),
            confidence,
            segment: [seg_start, seg_end],
        });
    }
    Ok(SummaryManifest {
        video_id: track.video_id.clone(),
        fps: track.fps,
        keyframes,
    })
}

/// Decode, merge and extract in one call.
pub fn summarize(track: &PredictionTrack, params: &DecodeParams) -> Result<(Vec<Category>, Vec<TransitionEvent>, SummaryManifest)> {
    track.validate()?;
    let categories = decode_categories(track, params)?;
    let events = merge_transitions(&categories, &track.entries)?;
    let manifest = extract_keyframes(&events, &categories, track)?;
    Ok((categories, events, manifest))
}

/// Full-resolution source frames for each keyframe. `source` is the
/// original, undecimated sequence.
pub fn keyframe_images(manifest: &SummaryManifest, source: &FrameSequence, temporal_rate: usize) -> Result<Vec<Frame>> {
    manifest
        .keyframes
        .iter()
        .map(|k| {
            let source_frame = k.frame * temporal_rate;
            source.frames.get(source_frame).cloned().ok_or(SummaryError::KeyframeSource {
                frame: k.frame,
                source_frame,
                len: source.len(),
            })
        })
        .collect()
}

pub fn write_keyframe_images(dir: impl AsRef<Path>, images: &[Frame]) -> Result<()> {
    for (i, f) in images.iter().enumerate() {
        ingest::write_pgm(dir.as_ref().join(format!("key_{i:04}.pgm")), f)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlineSegment {
    pub index: usize,
    pub keyframe: usize,
    pub start_frame: usize,
    pub end_frame: usize,
    pub start_s: f64,
    pub end_s: f64,
    pub title: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outline {
    pub segments: Vec<OutlineSegment>,
}

fn mmss(seconds: f64) -> String {
    let s = seconds.max(0.0).floor() as u64;
    format!("{:02}:{:02}", s / 60, s % 60)
}

pub fn build_outline(manifest: &SummaryManifest) -> Result<Outline> {
    if manifest.keyframes.is_empty() {
        return Err(SummaryError::EmptyManifest);
    }
    let segments = manifest
        .keyframes
        .iter()
        .enumerate()
        .map(|(i, k)| {
            let start_s = manifest.fps.seconds(k.segment[0]);
            let end_s = manifest.fps.seconds(k.segment[1]);
            OutlineSegment {
                index: i,
                keyframe: k.frame,
                start_frame: k.segment[0],
                end_frame: k.segment[1],
                start_s,
                end_s,
                title: format!("Slide {}, {}\u{2013}{}", i + 1, mmss(start_s), mmss(end_s)),
            }
        })
        .collect();
    Ok(Outline { segments })
}
