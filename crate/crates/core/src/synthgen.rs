//! Synthetic lecture videos with exact ground truth: procedural slides,
//! cuts and short dissolves, camera pan and zoom, cut-aways to a speaker
//! view, and sensor noise.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{self, EventLabel, Fps, Frame, FrameSequence, IngestError, Manifest};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

pub type Result<T> = std::result::Result<T, SynthError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionStyle {
    Cut,
    /// Linear blend over 1 to 3 frames.
    Dissolve(usize),
}

impl TransitionStyle {
    /// Frames occupied by the change.
    pub fn length(self) -> usize {
        match self {
            TransitionStyle::Cut => 1,
            TransitionStyle::Dissolve(l) => l,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduledSlide {
    pub slide_id: u64,
    pub start_frame: usize,
    /// How this slide replaces the previous one; ignored for the first.
    pub style: TransitionStyle,
}

/// Half-open frame range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameRange {
    pub start: usize,
    pub end: usize,
}

impl FrameRange {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, f: usize) -> bool {
        (self.start..self.end).contains(&f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionSegment {
    pub range: FrameRange,
    /// Pan in pixels per frame, `[x, y]`.
    pub pan: [f64; 2],
    /// Zoom change per frame (0.01 grows the image 1% per frame).
    pub zoom: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub width: usize,
    pub height: usize,
    pub total_frames: usize,
    pub fps: Fps,
    pub slides: Vec<ScheduledSlide>,
    pub switch_segments: Vec<FrameRange>,
    pub motion_segments: Vec<MotionSegment>,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SynthSpec {
    /// A single slide and nothing else.
    pub fn new(width: usize, height: usize, total_frames: usize, seed: u64) -> Self {
        Self {
            width,
            height,
            total_frames,
            fps: Fps::integer(30),
            slides: vec![ScheduledSlide {
                slide_id: 1,
                start_frame: 0,
                style: TransitionStyle::Cut,
            }],
            switch_segments: Vec::new(),
            motion_segments: Vec::new(),
            noise_sigma: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SynthError::Spec(m));
        if self.width == 0 || self.height == 0 || self.total_frames == 0 {
            return bad("dimensions and frame count must be positive".into());
        }
        match self.slides.first() {
            None => return bad("slide schedule is empty".into()),
            Some(s) if s.start_frame != 0 => return bad("schedule must start at frame 0".into()),
            _ => {}
        }
        for w in self.slides.windows(2) {
            if w[1].start_frame <= w[0].start_frame {
                return bad("schedule start frames must increase".into());
            }
        }
        for (i, s) in self.slides.iter().enumerate().skip(1) {
            let len = s.style.length();
            if !(1..=3).contains(&len) {
                return bad(format!("dissolve length {len} is outside [1, 3]"));
            }
            let end = s.start_frame + len;
            if end > self.total_frames {
                return bad(format!("slide {i} starts beyond the video"));
            }
            if let Some(next) = self.slides.get(i + 1) {
                if end > next.start_frame {
                    return bad(format!("slide {i} change overlaps the next change"));
                }
            }
            // the change occupies [start, start+len); a switch segment
            // hides frames [s, e) and its exit shows at e
            if let Some(sw) = self
                .switch_segments
                .iter()
                .find(|sw| s.start_frame <= sw.end && sw.start < end)
            {
                return bad(format!(
                    "slide change at frame {} overlaps switch segment [{}, {})",
                    s.start_frame, sw.start, sw.end
                ));
            }
        }
        let mut sorted = self.switch_segments.clone();
        sorted.sort_by_key(|r| r.start);
        for r in &sorted {
            if r.is_empty() || r.end >= self.total_frames {
                return bad(format!("switch segment [{}, {}) must be non-empty and end before the last frame", r.start, r.end));
            }
        }
        if sorted.windows(2).any(|w| w[0].end >= w[1].start) {
            return bad("switch segments overlap or touch".into());
        }
        for m in &self.motion_segments {
            if m.range.is_empty() || m.range.end > self.total_frames {
                return bad(format!("motion segment [{}, {}) is out of range", m.range.start, m.range.end));
            }
            if !m.pan.iter().all(|v| v.is_finite()) || !m.zoom.is_finite() || m.zoom <= -0.5 {
                return bad("motion parameters must be finite, zoom above -0.5".into());
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise sigma must be non-negative".into());
        }
        Ok(())
    }

    /// Ground-truth events in source-frame order.
    pub fn events(&self) -> Vec<EventLabel> {
        let mut events: Vec<EventLabel> = self
            .slides
            .iter()
            .skip(1)
            .map(|s| EventLabel::transition(s.start_frame + s.style.length() / 2))
            .collect();
        for sw in &self.switch_segments {
            events.push(EventLabel::switch(sw.start));
            events.push(EventLabel::switch(sw.end));
        }
        events.sort();
        events
    }

    /// Index into the schedule of the slide fully shown at `frame` (the
    /// incoming slide once a dissolve has started).
    pub fn slide_index_at(&self, frame: usize) -> usize {
        self.slides.partition_point(|s| s.start_frame <= frame).saturating_sub(1)
    }

    pub fn in_switch(&self, frame: usize) -> bool {
        self.switch_segments.iter().any(|r| r.contains(frame))
    }

    /// Camera `(offset_x, offset_y, zoom)` at `frame`.
    pub fn camera_at(&self, frame: usize) -> (f64, f64, f64) {
        let (mut ox, mut oy, mut zoom) = (0.0, 0.0, 1.0);
        for m in &self.motion_segments {
            let t = frame.saturating_sub(m.range.start).min(m.range.len()) as f64;
            ox += m.pan[0] * t;
            oy += m.pan[1] * t;
            zoom += m.zoom * t;
        }
        (ox, oy, zoom.max(0.5))
    }
}

// ------------------------------------------------------------ presets

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Static,
    PanHeavy,
    SwitchHeavy,
    Mixed,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::Static, Preset::PanHeavy, Preset::SwitchHeavy, Preset::Mixed];

    pub fn as_str(self) -> &'static str {
        match self {
            Preset::Static => "static",
            Preset::PanHeavy => "pan-heavy",
            Preset::SwitchHeavy => "switch-heavy",
            Preset::Mixed => "mixed",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Preset::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown preset {s:?} (static, pan-heavy, switch-heavy, mixed)"))
    }
}

/// Random lecture of the given kind: a slide change roughly every 150
/// frames, noise sigma 2, 64x64 frames at 30 fps.
pub fn preset_spec(preset: Preset, total_frames: usize, seed: u64) -> SynthSpec {
    let mut rng = SplitMix64::seed_from_u64(seed ^ 0x5EED_0F_5EC);
    let mut spec = SynthSpec::new(64, 64, total_frames, seed);
    spec.noise_sigma = 2.0;

    let n_slides = (total_frames / 150).max(1);
    let slot = total_frames as f64 / n_slides as f64;
    let mut slides = vec![ScheduledSlide {
        slide_id: rng.random_range(1..1_000_000),
        start_frame: 0,
        style: TransitionStyle::Cut,
    }];
    for i in 1..n_slides {
        let jitter = rng.random_range(-0.2..0.2) * slot;
        let start = ((i as f64 * slot + jitter) as usize).clamp(1, total_frames.saturating_sub(4));
        let style = if rng.random_bool(0.6) {
            TransitionStyle::Cut
        } else {
            TransitionStyle::Dissolve(rng.random_range(1..=3))
        };
        slides.push(ScheduledSlide {
            slide_id: rng.random_range(1..1_000_000),
            start_frame: start,
            style,
        });
    }
    slides.dedup_by_key(|s| s.start_frame);
    spec.slides = slides;

    let (n_switch, n_motion) = match preset {
        Preset::Static => (0, 0),
        Preset::PanHeavy => (0, total_frames / 60),
        Preset::SwitchHeavy => (total_frames / 250, 0),
        Preset::Mixed => ((total_frames / 600).max(1), total_frames / 200),
    };

    // keep switch boundaries more than one volume (at k = 5) away from slide changes
    let margin = 45;
    let mut attempts = 0;
    while spec.switch_segments.len() < n_switch && attempts < 200 {
        attempts += 1;
        let len = rng.random_range(40..90);
        if total_frames < len + 2 * margin + 2 {
            break;
        }
        let start = rng.random_range(margin..total_frames - len - margin);
        let candidate = FrameRange::new(start, start + len);
        let near_change = spec.slides.iter().skip(1).any(|s| {
            let end = s.start_frame + s.style.length();
            s.start_frame < candidate.end + margin && candidate.start < end + margin
        });
        let near_switch = spec
            .switch_segments
            .iter()
            .any(|r| r.start < candidate.end + margin && candidate.start < r.end + margin);
        if !near_change && !near_switch {
            spec.switch_segments.push(candidate);
        }
    }
    spec.switch_segments.sort_by_key(|r| r.start);

    // Pans alternate direction so the camera drifts back and forth.
    let mut direction = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let mut zoom_direction = 1.0;
    for i in 0..n_motion {
        let len = rng.random_range(30..80).min(total_frames);
        let base = i * total_frames / n_motion.max(1);
        let start = (base + rng.random_range(0..(total_frames / n_motion.max(1)).max(1))).min(total_frames - len);
        let speed = rng.random_range(0.25..0.7);
        let pan = [direction * speed, direction * rng.random_range(-0.15..0.15)];
        let zoom = if rng.random_bool(0.3) {
            zoom_direction *= -1.0;
            zoom_direction * rng.random_range(0.001..0.003)
        } else {
            0.0
        };
        spec.motion_segments.push(MotionSegment {
            range: FrameRange::new(start, start + len),
            pan,
            zoom,
        });
        direction = -direction;
    }
    spec
}

// ---------------------------------------------------------- rendering

const PAPER: f32 = 235.0;
const INK: f32 = 40.0;

/// Procedural slide: a title band and rows of word-like bars whose layout
/// derives from `slide_id` alone.
pub fn render_slide(slide_id: u64, width: usize, height: usize) -> Frame {
    let mut rng = SplitMix64::seed_from_u64(slide_id.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0xA5A5);
    let mut px = vec![PAPER; width * height];
    let mut fill = |x0: f64, y0: f64, x1: f64, y1: f64, v: f32| {
        let (x0, x1) = ((x0 * width as f64) as usize, ((x1 * width as f64) as usize).min(width));
        let (y0, y1) = ((y0 * height as f64) as usize, ((y1 * height as f64) as usize).min(height));
        for y in y0..y1 {
            px[y * width + x0..y * width + x1.max(x0)].fill(v);
        }
    };

    // background tint and a title band
    let band = rng.random_range(0.10..0.18);
    let band_shade = rng.random_range(60.0..160.0) as f32;
    fill(0.0, 0.0, 1.0, band, band_shade);
    let title_len = rng.random_range(0.3..0.8);
    let title_x = rng.random_range(0.05..0.95 - title_len);
    fill(title_x, band * 0.3, title_x + title_len, band * 0.75, 245.0);

    // body text
    let indent_choices = [0.06, 0.12, 0.2];
    let mut y = band + rng.random_range(0.05..0.10);
    let line_h = rng.random_range(0.045..0.075);
    let gap = rng.random_range(0.035..0.07);
    while y + line_h < 0.95 {
        if rng.random_bool(0.12) {
            y += line_h + gap;
            continue;
        }
        let mut x = indent_choices[rng.random_range(0..indent_choices.len())];
        let right = rng.random_range(0.55..0.95);
        while x < right {
            let word = rng.random_range(0.04..0.16);
            fill(x, y, (x + word).min(right), y + line_h, INK);
            x += word + rng.random_range(0.02..0.04);
        }
        y += line_h + gap;
    }
    // a figure box on some slides
    if rng.random_bool(0.4) {
        let fx = rng.random_range(0.55..0.7);
        let fy = rng.random_range(band + 0.1..0.6);
        fill(fx, fy, fx + 0.25, fy + 0.25, rng.random_range(90.0..180.0) as f32);
    }
    Frame {
        width,
        height,
        pixels: px.into_iter().map(|v| v as u8).collect(),
    }
}

/// Speaker view: a vertical gradient with a swaying head-and-shoulders blob.
pub fn render_speaker(width: usize, height: usize, frame: usize, seed: u64) -> Vec<f32> {
    let mut rng = SplitMix64::seed_from_u64(seed ^ 0x5BEA_4E12);
    let top: f32 = rng.random_range(60.0..90.0);
    let bottom: f32 = rng.random_range(100.0..130.0);
    let period = rng.random_range(25.0..45.0);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let (w, h) = (width as f64, height as f64);
    let sway = 0.12 * w * (std::f64::consts::TAU * frame as f64 / period + phase).sin();
    let (cx, cy) = (0.5 * w + sway, 0.42 * h);
    let (rx, ry) = (0.16 * w, 0.2 * h);
    let mut out = Vec::with_capacity(width * height);
    for y in 0..height {
        let t = if height > 1 { y as f32 / (height - 1) as f32 } else { 0.0 };
        let base = top + (bottom - top) * t;
        for x in 0..width {
            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
            let head = ((fx - cx) / rx).powi(2) + ((fy - cy) / ry).powi(2);
            let shoulders = fy > cy + 0.8 * ry && ((fx - cx) / (2.2 * rx)).abs() < 1.0;
            let v = if head <= 1.0 {
                200.0 - 30.0 * head as f32
            } else if shoulders {
                50.0
            } else {
                base
            };
            out.push(v);
        }
    }
    out
}

/// Samples `src` through the camera, replicating edge pixels.
fn warp(src: &Frame, camera: (f64, f64, f64), out: &mut [f32]) {
    let (w, h) = (src.width, src.height);
    let (ox, oy, zoom) = camera;
    if ox == 0.0 && oy == 0.0 && zoom == 1.0 {
        for (o, &p) in out.iter_mut().zip(&src.pixels) {
            *o = p as f32;
        }
        return;
    }
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let clamp_x = |v: f64| v.clamp(0.0, (w - 1) as f64);
    let clamp_y = |v: f64| v.clamp(0.0, (h - 1) as f64);
    for y in 0..h {
        let sy = clamp_y(cy + (y as f64 - cy) / zoom + oy);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = (sy - y0 as f64) as f32;
        for x in 0..w {
            let sx = clamp_x(cx + (x as f64 - cx) / zoom + ox);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let fx = (sx - x0 as f64) as f32;
            let p = |xx: usize, yy: usize| src.pixels[yy * w + xx] as f32;
            let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
            let bottom = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
            out[y * w + x] = top * (1.0 - fy) + bottom * fy;
        }
    }
}

/// Renders every frame and returns the sequence with its ground truth.
pub fn generate(spec: &SynthSpec) -> Result<(FrameSequence, Vec<EventLabel>)> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let mut slides: HashMap<u64, Frame> = HashMap::new();
    for s in &spec.slides {
        slides.entry(s.slide_id).or_insert_with(|| render_slide(s.slide_id, w, h));
    }
    let noise = (spec.noise_sigma > 0.0).then(|| Normal::new(0.0f32, spec.noise_sigma as f32).expect("valid sigma"));

    let mut frames = Vec::with_capacity(spec.total_frames);
    let mut cur = vec![0.0f32; w * h];
    let mut prev = vec![0.0f32; w * h];
    for f in 0..spec.total_frames {
        if spec.in_switch(f) {
            cur = render_speaker(w, h, f, spec.seed);
        } else {
            let camera = spec.camera_at(f);
            let idx = spec.slide_index_at(f);
            let entry = &spec.slides[idx];
            warp(&slides[&entry.slide_id], camera, &mut cur);
            let len = entry.style.length();
            if idx > 0 && len > 1 && f < entry.start_frame + len {
                // frame start+j shows (j+1)/(len+1) of the incoming slide
                let alpha = (f - entry.start_frame + 1) as f32 / (len + 1) as f32;
                warp(&slides[&spec.slides[idx - 1].slide_id], camera, &mut prev);
                for (c, p) in cur.iter_mut().zip(&prev) {
                    *c = alpha * *c + (1.0 - alpha) * p;
                }
            }
        }
        if let Some(dist) = &noise {
            let mut rng = SplitMix64::seed_from_u64(spec.seed ^ (f as u64).wrapping_mul(0xD134_2543_DE82_EF95));
            for v in cur.iter_mut() {
                *v += dist.sample(&mut rng);
            }
        }
        frames.push(Frame {
            width: w,
            height: h,
            pixels: cur.iter().map(|&v| v.round().clamp(0.0, 255.0) as u8).collect(),
        });
    }
    let seq = FrameSequence::new(frames, spec.fps)?;
    Ok((seq, spec.events()))
}

/// Writes `manifest.json`, `frame_%05d.pgm` and `events.json` into `dir`.
pub fn write_corpus(dir: impl AsRef<Path>, seq: &FrameSequence, events: &[EventLabel]) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|source| IngestError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut names = Vec::with_capacity(seq.len());
    for (i, f) in seq.frames.iter().enumerate() {
        let name = format!("frame_{i:05}.pgm");
        ingest::write_pgm(dir.join(&name), f)?;
        names.push(name);
    }
    let (width, height) = seq.dims();
    ingest::write_manifest(
        dir.join("manifest.json"),
        &Manifest {
            fps: seq.fps,
            width,
            height,
            frames: names,
        },
    )?;
    ingest::write_events(dir.join("events.json"), events)?;
    Ok(())
}
