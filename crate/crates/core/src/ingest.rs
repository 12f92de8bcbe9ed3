//! Frame input (binary PGM plus a JSON manifest), temporal and spatial
//! downsampling, and grouping of retained frames into labelled volumes.

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;
use crate::Category;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("unsupported image format {0:?}, expected binary P5")]
    UnsupportedFormat(String),
    #[error("malformed PGM header: {0}")]
    Header(String),
    #[error("maxval {0} exceeds 255")]
    MaxVal(u32),
    #[error("truncated pixel data: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("frame dimensions must be positive and match the pixel count")]
    FrameShape,
    #[error("frame {index} is {actual:?}, expected {expected:?}")]
    DimensionMismatch {
        index: usize,
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("frame list is empty")]
    Empty,
    #[error("invalid frame rate {0}")]
    Fps(String),
    #[error("cannot upscale {from:?} to {to:?}")]
    Upscale { from: (usize, usize), to: (usize, usize) },
    #[error("sequence has {len} frames, a volume needs {needed}")]
    TooShort { len: usize, needed: usize },
    #[error("event at frame {index} is outside a sequence of {len} frames")]
    EventOutOfRange { index: usize, len: usize },
    #[error("invalid volume configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("malformed volume file: {0}")]
    VolumeFile(String),
}

pub type Result<T> = std::result::Result<T, IngestError>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One 8-bit grayscale frame, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Frame {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(IngestError::FrameShape);
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn at(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    /// Mean absolute pixel difference; frames must have equal dimensions.
    pub fn mean_abs_diff(&self, other: &Frame) -> f64 {
        assert_eq!(self.dims(), other.dims());
        let total: u64 = self
            .pixels
            .iter()
            .zip(&other.pixels)
            .map(|(&a, &b)| a.abs_diff(b) as u64)
            .sum();
        total as f64 / self.pixels.len() as f64
    }
}

/// A positive rational frame rate, kept in lowest terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Fps {
    num: u32,
    den: u32,
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl Fps {
    pub fn new(num: u32, den: u32) -> Result<Self> {
        if num == 0 || den == 0 {
            return Err(IngestError::Fps(format!("{num}/{den}")));
        }
        let g = gcd(num as u64, den as u64) as u32;
        Ok(Self {
            num: num / g,
            den: den / g,
        })
    }

    pub fn integer(fps: u32) -> Self {
        Self::new(fps, 1).expect("positive frame rate")
    }

    pub fn num(&self) -> u32 {
        self.num
    }

    pub fn den(&self) -> u32 {
        self.den
    }

    pub fn as_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// Rate after keeping every `k`-th frame.
    pub fn decimate(&self, k: u32) -> Self {
        let den = self.den as u64 * k as u64;
        let g = gcd(self.num as u64, den);
        Self {
            num: (self.num as u64 / g) as u32,
            den: (den / g) as u32,
        }
    }

    /// Time in seconds of frame `index`.
    pub fn seconds(&self, index: usize) -> f64 {
        index as f64 * self.den as f64 / self.num as f64
    }
}

impl fmt::Display for Fps {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl FromStr for Fps {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || IngestError::Fps(s.to_string());
        match s.split_once('/') {
            Some((n, d)) => Fps::new(n.trim().parse().map_err(|_| bad())?, d.trim().parse().map_err(|_| bad())?),
            None => Fps::new(s.trim().parse().map_err(|_| bad())?, 1),
        }
    }
}

// Integer rates serialize as JSON numbers, others as "num/den".
impl Serialize for Fps {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.den == 1 {
            s.serialize_u32(self.num)
        } else {
            s.serialize_str(&self.to_string())
        }
    }
}

impl<'de> Deserialize<'de> for Fps {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Int(u32),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Int(n) => Fps::new(n, 1),
            Repr::Text(t) => t.parse(),
        }
        .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub frames: Vec<Frame>,
    pub fps: Fps,
    /// Original frame index of each retained frame.
    pub source_indices: Vec<usize>,
}

impl FrameSequence {
    pub fn new(frames: Vec<Frame>, fps: Fps) -> Result<Self> {
        let n = frames.len();
        Self::with_indices(frames, fps, (0..n).collect())
    }

    pub fn with_indices(frames: Vec<Frame>, fps: Fps, source_indices: Vec<usize>) -> Result<Self> {
        let first = frames.first().ok_or(IngestError::Empty)?.dims();
        for (index, f) in frames.iter().enumerate() {
            if f.dims() != first {
                return Err(IngestError::DimensionMismatch {
                    index,
                    expected: first,
                    actual: f.dims(),
                });
            }
        }
        if source_indices.len() != frames.len() || source_indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(IngestError::Config("source indices must be strictly increasing, one per frame".into()));
        }
        Ok(Self {
            frames,
            fps,
            source_indices,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// `(width, height)`.
    pub fn dims(&self) -> (usize, usize) {
        self.frames[0].dims()
    }

    pub fn time_of(&self, index: usize) -> f64 {
        self.fps.seconds(index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Transition,
    Switch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EventLabel {
    pub frame_index: usize,
    pub kind: EventKind,
}

impl EventLabel {
    pub fn transition(frame_index: usize) -> Self {
        Self {
            frame_index,
            kind: EventKind::Transition,
        }
    }

    pub fn switch(frame_index: usize) -> Self {
        Self {
            frame_index,
            kind: EventKind::Switch,
        }
    }
}

// ---------------------------------------------------------------- PGM

fn skip_space_and_comments(bytes: &[u8], mut pos: usize) -> usize {
    loop {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
        } else {
            return pos;
        }
    }
}

fn header_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<u32> {
    *pos = skip_space_and_comments(bytes, *pos);
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| IngestError::Header(format!("missing {what}")))
}

pub fn parse_pgm(bytes: &[u8]) -> Result<Frame> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        let magic = String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned();
        return Err(IngestError::UnsupportedFormat(magic));
    }
    let mut pos = 2;
    let width = header_number(bytes, &mut pos, "width")? as usize;
    let height = header_number(bytes, &mut pos, "height")? as usize;
    let maxval = header_number(bytes, &mut pos, "maxval")?;
    if maxval > 255 {
        return Err(IngestError::MaxVal(maxval));
    }
    if maxval == 0 {
        return Err(IngestError::Header("maxval 0".into()));
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(IngestError::Header("no separator after maxval".into()));
    }
    let raster = &bytes[pos + 1..];
    let expected = width * height;
    if raster.len() < expected {
        return Err(IngestError::Truncated {
            expected,
            actual: raster.len(),
        });
    }
    let pixels = if maxval == 255 {
        raster[..expected].to_vec()
    } else {
        raster[..expected]
            .iter()
            .map(|&v| ((v.min(maxval as u8) as u32 * 255 + maxval / 2) / maxval) as u8)
            .collect()
    };
    Frame::new(width, height, pixels)
}

pub fn encode_pgm(frame: &Frame) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", frame.width, frame.height).into_bytes();
    out.extend_from_slice(&frame.pixels);
    out
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<Frame> {
    let path = path.as_ref();
    parse_pgm(&fs::read(path).map_err(io_err(path))?)
}

pub fn write_pgm(path: impl AsRef<Path>, frame: &Frame) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(frame)).map_err(io_err(path))
}

// ----------------------------------------------------------- manifest

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub fps: Fps,
    pub width: usize,
    pub height: usize,
    /// Frame file names, relative to the manifest's directory.
    pub frames: Vec<String>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&text).map_err(|source| IngestError::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_vec_pretty(value).map_err(|source| IngestError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push(b'\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    read_json(path.as_ref())
}

pub fn write_manifest(path: impl AsRef<Path>, manifest: &Manifest) -> Result<()> {
    write_json(path.as_ref(), manifest)
}

pub fn load_sequence(manifest_path: impl AsRef<Path>) -> Result<FrameSequence> {
    let manifest_path = manifest_path.as_ref();
    let manifest = read_manifest(manifest_path)?;
    if manifest.frames.is_empty() {
        return Err(IngestError::Empty);
    }
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let expected = (manifest.width, manifest.height);
    let mut frames = Vec::with_capacity(manifest.frames.len());
    for (index, name) in manifest.frames.iter().enumerate() {
        let frame = read_pgm(dir.join(name))?;
        if frame.dims() != expected {
            return Err(IngestError::DimensionMismatch {
                index,
                expected,
                actual: frame.dims(),
            });
        }
        frames.push(frame);
    }
    FrameSequence::new(frames, manifest.fps)
}

pub fn read_events(path: impl AsRef<Path>) -> Result<Vec<EventLabel>> {
    read_json(path.as_ref())
}

pub fn write_events(path: impl AsRef<Path>, events: &[EventLabel]) -> Result<()> {
    write_json(path.as_ref(), &events)
}

// ------------------------------------------------------- downsampling

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VolumeConfig {
    /// Frames per volume.
    pub n: usize,
    pub stride: usize,
    /// Keep every `temporal_rate`-th source frame.
    pub temporal_rate: usize,
    pub target_height: usize,
    pub target_width: usize,
}

impl Default for VolumeConfig {
    fn default() -> Self {
        Self {
            n: 16,
            stride: 8,
            temporal_rate: 5,
            target_height: 112,
            target_width: 112,
        }
    }
}

impl VolumeConfig {
    /// Matches the tiny network preset.
    pub fn tiny() -> Self {
        Self {
            n: 8,
            stride: 2,
            temporal_rate: 5,
            target_height: 32,
            target_width: 32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(IngestError::Config(format!("N must be at least 2, got {}", self.n)));
        }
        if self.stride == 0 || self.temporal_rate == 0 {
            return Err(IngestError::Config("stride and temporal rate must be positive".into()));
        }
        if self.target_height == 0 || self.target_width == 0 {
            return Err(IngestError::Config("target dimensions must be positive".into()));
        }
        Ok(())
    }
}

/// Per output index along one axis: the overlapped source range and the
/// overlap weight of each source index, in units of 1/out so they stay
/// integral.
fn axis_weights(src: usize, out: usize) -> Vec<Vec<(usize, u64)>> {
    // output cell o spans [o*src, (o+1)*src) in a grid of src*out units
    (0..out)
        .map(|o| {
            let lo = o * src;
            let hi = (o + 1) * src;
            (lo / out..hi.div_ceil(out))
                .map(|s| {
                    let a = lo.max(s * out);
                    let b = hi.min((s + 1) * out);
                    (s, (b - a) as u64)
                })
                .collect()
        })
        .collect()
}

/// Area-averaging resize to `(width, height)`; never upscales.
pub fn resize_area(frame: &Frame, width: usize, height: usize) -> Result<Frame> {
    if width > frame.width || height > frame.height {
        return Err(IngestError::Upscale {
            from: frame.dims(),
            to: (width, height),
        });
    }
    if width == 0 || height == 0 {
        return Err(IngestError::FrameShape);
    }
    if (width, height) == frame.dims() {
        return Ok(frame.clone());
    }
    let wx = axis_weights(frame.width, width);
    let wy = axis_weights(frame.height, height);
    // total weight of one output pixel is src_w * src_h
    let denom = (frame.width * frame.height) as u64;
    let mut pixels = Vec::with_capacity(width * height);
    for ys in &wy {
        for xs in &wx {
            let mut acc = 0u64;
            for &(sy, wyv) in ys {
                let row = &frame.pixels[sy * frame.width..];
                for &(sx, wxv) in xs {
                    acc += row[sx] as u64 * wyv * wxv;
                }
            }
            // round half up
            pixels.push(((2 * acc + denom) / (2 * denom)) as u8);
        }
    }
    Frame::new(width, height, pixels)
}

/// Keeps source frames whose index is a multiple of `temporal_rate` and
/// area-averages each onto the target dimensions.
pub fn downsample(seq: &FrameSequence, cfg: &VolumeConfig) -> Result<FrameSequence> {
    cfg.validate()?;
    let (w, h) = seq.dims();
    if cfg.target_width > w || cfg.target_height > h {
        return Err(IngestError::Upscale {
            from: (w, h),
            to: (cfg.target_width, cfg.target_height),
        });
    }
    let mut frames = Vec::new();
    let mut indices = Vec::new();
    for (i, f) in seq.frames.iter().enumerate().step_by(cfg.temporal_rate) {
        frames.push(resize_area(f, cfg.target_width, cfg.target_height)?);
        indices.push(seq.source_indices[i]);
    }
    FrameSequence::with_indices(frames, seq.fps.decimate(cfg.temporal_rate as u32), indices)
}

/// Maps source-frame events to retained-frame coordinates (`floor(f / k)`).
pub fn remap_events(events: &[EventLabel], temporal_rate: usize) -> Vec<EventLabel> {
    events
        .iter()
        .map(|e| EventLabel {
            frame_index: e.frame_index / temporal_rate,
            kind: e.kind,
        })
        .collect()
}

// ------------------------------------------------------------ volumes

#[derive(Debug, Clone, PartialEq)]
pub struct FrameVolume {
    /// `[1, N, H, W]`, intensities scaled to [0, 1].
    pub data: Tensor<f32>,
    pub start: usize,
    /// Inclusive.
    pub end: usize,
    pub category: Option<Category>,
}

pub fn volume_count(len: usize, n: usize, stride: usize) -> usize {
    if len < n {
        0
    } else {
        (len - n) / stride + 1
    }
}

/// Inclusive retained-frame ranges of each volume.
pub fn volume_ranges(len: usize, n: usize, stride: usize) -> Vec<(usize, usize)> {
    (0..volume_count(len, n, stride))
        .map(|i| (i * stride, i * stride + n - 1))
        .collect()
}

pub fn build_volumes(seq: &FrameSequence, cfg: &VolumeConfig) -> Result<Vec<FrameVolume>> {
    cfg.validate()?;
    if seq.len() < cfg.n {
        return Err(IngestError::TooShort {
            len: seq.len(),
            needed: cfg.n,
        });
    }
    let (w, h) = seq.dims();
    let scaled: Vec<Vec<f32>> = seq
        .frames
        .iter()
        .map(|f| f.pixels.iter().map(|&p| p as f32 / 255.0).collect())
        .collect();
    volume_ranges(seq.len(), cfg.n, cfg.stride)
        .into_iter()
        .map(|(start, end)| {
            let mut data = Vec::with_capacity(cfg.n * w * h);
            for f in &scaled[start..=end] {
                data.extend_from_slice(f);
            }
            Ok(FrameVolume {
                data: Tensor::from_vec(&[1, cfg.n, h, w], data).expect("volume shape matches data"),
                start,
                end,
                category: None,
            })
        })
        .collect()
}

/// Category of a frame range by containment: transition beats switch beats
/// unchanged.
pub fn label_range(start: usize, end: usize, events: &[EventLabel]) -> Category {
    let mut category = Category::Unchanged;
    for e in events {
        if (start..=end).contains(&e.frame_index) {
            match e.kind {
                EventKind::Transition => return Category::Transition,
                EventKind::Switch => category = Category::Switch,
            }
        }
    }
    category
}

/// Labels volumes from retained-frame events. `frame_count` is the length
/// of the retained sequence.
pub fn label_volumes(volumes: &mut [FrameVolume], events: &[EventLabel], frame_count: usize) -> Result<()> {
    if let Some(e) = events.iter().find(|e| e.frame_index >= frame_count) {
        return Err(IngestError::EventOutOfRange {
            index: e.frame_index,
            len: frame_count,
        });
    }
    for v in volumes {
        v.category = Some(label_range(v.start, v.end, events));
    }
    Ok(())
}

/// Full ingest path: downsample, build volumes and, when events (in source
/// coordinates) are given, label them.
pub fn prepare(seq: &FrameSequence, events: Option<&[EventLabel]>, cfg: &VolumeConfig) -> Result<(FrameSequence, Vec<FrameVolume>)> {
    let reduced = downsample(seq, cfg)?;
    let mut volumes = build_volumes(&reduced, cfg)?;
    if let Some(events) = events {
        if let Some(e) = events.iter().find(|e| e.frame_index >= seq.len()) {
            return Err(IngestError::EventOutOfRange {
                index: e.frame_index,
                len: seq.len(),
            });
        }
        label_volumes(&mut volumes, &remap_events(events, cfg.temporal_rate), reduced.len())?;
    }
    Ok((reduced, volumes))
}

// --------------------------------------------------------- volume file

const VOLUMES_MAGIC: &[u8; 6] = b"SVOL1\n";

#[derive(Debug, Serialize, Deserialize)]
struct VolumeEntry {
    start: usize,
    end: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    category: Option<Category>,
}

#[derive(Debug, Serialize, Deserialize)]
struct VolumeHeader {
    shape: [usize; 4],
    volumes: Vec<VolumeEntry>,
}

/// Volumes file: `SVOL1\n`, u32 LE header length, JSON header with the
/// volume shape and per-volume ranges and labels, then one byte per voxel
/// (`round(value * 255)`).
pub fn write_volumes(path: impl AsRef<Path>, volumes: &[FrameVolume]) -> Result<()> {
    let path = path.as_ref();
    let first = volumes.first().ok_or(IngestError::Empty)?;
    let shape: [usize; 4] = first
        .data
        .shape()
        .try_into()
        .map_err(|_| IngestError::VolumeFile("volume tensors must be rank 4".into()))?;
    if volumes.iter().any(|v| v.data.shape() != shape) {
        return Err(IngestError::VolumeFile("volumes differ in shape".into()));
    }
    let header = VolumeHeader {
        shape,
        volumes: volumes
            .iter()
            .map(|v| VolumeEntry {
                start: v.start,
                end: v.end,
                category: v.category,
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header).map_err(|e| IngestError::VolumeFile(e.to_string()))?;
    let mut out = Vec::with_capacity(10 + header.len() + volumes.len() * first.data.len());
    out.extend_from_slice(VOLUMES_MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for v in volumes {
        out.extend(v.data.data().iter().map(|&x| (x * 255.0).round().clamp(0.0, 255.0) as u8));
    }
    fs::write(path, out).map_err(io_err(path))
}

pub fn read_volumes(path: impl AsRef<Path>) -> Result<Vec<FrameVolume>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_err(path))?;
    let bad = |m: &str| IngestError::VolumeFile(m.to_string());
    let rest = bytes.strip_prefix(VOLUMES_MAGIC.as_slice()).ok_or_else(|| bad("bad magic"))?;
    let (len, rest) = rest.split_first_chunk::<4>().ok_or_else(|| bad("missing header length"))?;
    let len = u32::from_le_bytes(*len) as usize;
    if rest.len() < len {
        return Err(bad("truncated header"));
    }
    let (header, payload) = rest.split_at(len);
    let header: VolumeHeader = serde_json::from_slice(header).map_err(|e| IngestError::VolumeFile(e.to_string()))?;
    let per: usize = header.shape.iter().product();
    if payload.len() != per * header.volumes.len() {
        return Err(bad("payload length does not match header"));
    }
    header
        .volumes
        .into_iter()
        .zip(payload.chunks_exact(per.max(1)))
        .map(|(e, raw)| {
            Ok(FrameVolume {
                data: Tensor::from_vec(&header.shape, raw.iter().map(|&b| b as f32 / 255.0).collect())
                    .map_err(|e| IngestError::VolumeFile(e.to_string()))?,
                start: e.start,
                end: e.end,
                category: e.category,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(w: usize, h: usize, f: impl Fn(usize, usize) -> u8) -> Frame {
        let mut px = Vec::new();
        for y in 0..h {
            for x in 0..w {
                px.push(f(x, y));
            }
        }
        Frame::new(w, h, px).unwrap()
    }

    #[test]
    fn minimal_p5() {
        let mut bytes = b"P5\n2 2\n255\n".to_vec();
        bytes.extend([0, 64, 128, 255]);
        let f = parse_pgm(&bytes).unwrap();
        assert_eq!((f.width, f.height), (2, 2));
        assert_eq!(f.pixels, vec![0, 64, 128, 255]);
    }

    #[test]
    fn header_comments_allowed() {
        let mut bytes = b"P5 # a comment\n# another\n3 1 # w h\n255\n".to_vec();
        bytes.extend([9, 8, 7]);
        assert_eq!(parse_pgm(&bytes).unwrap().pixels, vec![9, 8, 7]);
    }

    #[test]
    fn pgm_errors() {
        let mut p2 = b"P2\n2 2\n255\n".to_vec();
        p2.extend(b"0 1 2 3");
        assert!(matches!(parse_pgm(&p2), Err(IngestError::UnsupportedFormat(m)) if m == "P2"));
        let mut short = b"P5\n2 2\n255\n".to_vec();
        short.extend([1, 2, 3]);
        assert!(matches!(
            parse_pgm(&short),
            Err(IngestError::Truncated { expected: 4, actual: 3 })
        ));
        assert!(matches!(parse_pgm(b"P5\n1 1\n65535\n\0\0"), Err(IngestError::MaxVal(65535))));
        assert!(matches!(parse_pgm(b"P5\n1\n"), Err(IngestError::Header(_))));
    }

    #[test]
    fn pgm_round_trip() {
        let f = frame(5, 3, |x, y| (x * 40 + y * 7) as u8);
        assert_eq!(parse_pgm(&encode_pgm(&f)).unwrap(), f);
    }

    #[test]
    fn small_maxval_rescaled() {
        let f = parse_pgm(b"P5\n3 1\n15\n\x00\x07\x0f").unwrap();
        assert_eq!(f.pixels, vec![0, 119, 255]);
    }

    #[test]
    fn fps_arithmetic() {
        let f = Fps::integer(30);
        assert_eq!(f.seconds(15), 0.5);
        let d = f.decimate(5);
        assert_eq!((d.num(), d.den()), (6, 1));
        let ntsc: Fps = "30000/1001".parse().unwrap();
        assert_eq!(ntsc.decimate(5).to_string(), "6000/1001");
        assert_eq!(Fps::integer(25).decimate(2).to_string(), "25/2");
        assert_eq!(serde_json::to_string(&Fps::integer(30)).unwrap(), "30");
        assert_eq!(serde_json::from_str::<Fps>("\"25/2\"").unwrap(), Fps::new(25, 2).unwrap());
        assert!(Fps::new(0, 1).is_err());
    }

    fn seq_of(n: usize, w: usize, h: usize) -> FrameSequence {
        FrameSequence::new(
            (0..n).map(|i| frame(w, h, |x, y| (i * 3 + x + y) as u8)).collect(),
            Fps::integer(30),
        )
        .unwrap()
    }

    #[test]
    fn identity_downsample() {
        let s = seq_of(6, 4, 4);
        let cfg = VolumeConfig {
            n: 2,
            stride: 1,
            temporal_rate: 1,
            target_height: 4,
            target_width: 4,
        };
        assert_eq!(downsample(&s, &cfg).unwrap(), s);
    }

    #[test]
    fn temporal_decimation() {
        let cfg = VolumeConfig {
            n: 2,
            stride: 1,
            temporal_rate: 2,
            target_height: 2,
            target_width: 2,
        };
        let d = downsample(&seq_of(10, 2, 2), &cfg).unwrap();
        assert_eq!(d.source_indices, vec![0, 2, 4, 6, 8]);
        assert_eq!(d.fps, Fps::integer(15));
        let again = downsample(&d, &cfg).unwrap();
        assert_eq!(again.source_indices, vec![0, 4, 8]);
    }

    #[test]
    fn block_means() {
        let f = frame(4, 4, |x, y| (y * 4 + x) as u8 * 10);
        let r = resize_area(&f, 2, 2).unwrap();
        for oy in 0..2 {
            for ox in 0..2 {
                let mut sum = 0u32;
                for y in 2 * oy..2 * oy + 2 {
                    for x in 2 * ox..2 * ox + 2 {
                        sum += f.at(x, y) as u32;
                    }
                }
                assert_eq!(r.at(ox, oy) as f64, (sum as f64 / 4.0).round());
            }
        }
    }

    #[test]
    fn fractional_area_weights() {
        // 3 -> 2: output 0 covers source [0, 1.5)
        let f = frame(3, 1, |x, _| [0, 100, 200][x]);
        let r = resize_area(&f, 2, 1).unwrap();
        assert_eq!(r.pixels, vec![33, 167]);
        assert!(matches!(resize_area(&f, 4, 1), Err(IngestError::Upscale { .. })));
    }

    #[test]
    fn volume_examples() {
        assert_eq!(volume_count(100, 16, 8), 11);
        let r = volume_ranges(100, 16, 8);
        assert_eq!(r[0], (0, 15));
        assert_eq!(volume_ranges(64, 16, 16), vec![(0, 15), (16, 31), (32, 47), (48, 63)]);
        let cfg = VolumeConfig::default();
        let s = FrameSequence::new(vec![Frame::filled(112, 112, 0); 10], Fps::integer(6)).unwrap();
        assert!(matches!(build_volumes(&s, &cfg), Err(IngestError::TooShort { len: 10, needed: 16 })));
    }

    #[test]
    fn volume_tensor_contents() {
        let s = seq_of(5, 3, 2);
        let cfg = VolumeConfig {
            n: 3,
            stride: 2,
            temporal_rate: 1,
            target_height: 2,
            target_width: 3,
        };
        let v = build_volumes(&s, &cfg).unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v[1].data.shape(), &[1, 3, 2, 3]);
        assert_eq!((v[1].start, v[1].end), (2, 4));
        // frame 3, pixel (x=1, y=1)
        let expected = s.frames[3].at(1, 1) as f32 / 255.0;
        assert_eq!(v[1].data.get(&[0, 1, 1, 1]).unwrap(), expected);
    }

    #[test]
    fn labelling_rules() {
        let mut vols: Vec<FrameVolume> = volume_ranges(48, 16, 16)
            .into_iter()
            .map(|(start, end)| FrameVolume {
                data: Tensor::zeros(&[1]).unwrap(),
                start,
                end,
                category: None,
            })
            .collect();
        label_volumes(&mut vols, &[], 48).unwrap();
        assert!(vols.iter().all(|v| v.category == Some(Category::Unchanged)));
        label_volumes(
            &mut vols,
            &[EventLabel::transition(20), EventLabel::switch(5), EventLabel::switch(40), EventLabel::transition(41)],
            48,
        )
        .unwrap();
        let cats: Vec<_> = vols.iter().map(|v| v.category.unwrap()).collect();
        assert_eq!(cats, vec![Category::Switch, Category::Transition, Category::Transition]);
        assert!(matches!(
            label_volumes(&mut vols, &[EventLabel::switch(48)], 48),
            Err(IngestError::EventOutOfRange { index: 48, len: 48 })
        ));
    }

    #[test]
    fn volume_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = seq_of(6, 4, 3);
        let cfg = VolumeConfig {
            n: 4,
            stride: 1,
            temporal_rate: 1,
            target_height: 3,
            target_width: 4,
        };
        let (_, vols) = prepare(&s, Some(&[EventLabel::transition(5)]), &cfg).unwrap();
        let path = dir.path().join("v.svol");
        write_volumes(&path, &vols).unwrap();
        assert_eq!(read_volumes(&path).unwrap(), vols);
    }

    #[test]
    fn load_sequence_from_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let mut names = Vec::new();
        for i in 0..3 {
            let name = format!("f{i}.pgm");
            write_pgm(dir.path().join(&name), &Frame::filled(8, 8, i as u8)).unwrap();
            names.push(name);
        }
        let m = Manifest {
            fps: Fps::integer(30),
            width: 8,
            height: 8,
            frames: names.clone(),
        };
        let path = dir.path().join("manifest.json");
        write_manifest(&path, &m).unwrap();
        let s = load_sequence(&path).unwrap();
        assert_eq!(s.len(), 3);
        assert!((s.time_of(2) - 2.0 / 30.0).abs() < 1e-12);

        write_pgm(dir.path().join("f1.pgm"), &Frame::filled(10, 10, 1)).unwrap();
        assert!(matches!(load_sequence(&path), Err(IngestError::DimensionMismatch { index: 1, .. })));

        write_manifest(&path, &Manifest { frames: vec![], ..m.clone() }).unwrap();
        assert!(matches!(load_sequence(&path), Err(IngestError::Empty)));

        write_manifest(&path, &Manifest { frames: vec!["nope.pgm".into()], ..m }).unwrap();
        assert!(matches!(load_sequence(&path), Err(IngestError::Io { .. })));
    }
}
