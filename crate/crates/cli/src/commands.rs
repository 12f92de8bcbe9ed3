use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use slideloc_core::evalkit::{self, match_transitions, pixel_diff_baseline, MetricsReport};
use slideloc_core::ingest::{load_sequence, prepare, read_events, read_volumes, write_volumes, EventKind};
use slideloc_core::strnet::{load_weights, save_weights, Network};
use slideloc_core::summarizer::{build_outline, keyframe_images, predict, summarize as decode, write_keyframe_images, PredictionTrack};
use slideloc_core::synthgen::{generate, preset_spec, write_corpus, SynthSpec};
use slideloc_core::trainer::train_with_validation;
use slideloc_core::Category;
use slideloc_service::{DirStore, Service};

use crate::config::PipelineConfig;
use crate::{BaselineArgs, DetectArgs, EvalArgs, IngestArgs, ServeArgs, SummarizeArgs, SynthArgs, TrainArgs};

/// Event entry as read by `eval`: anything with a frame index, optionally
/// typed.
#[derive(Debug, Serialize, Deserialize)]
struct EventRecord {
    frame_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kind: Option<EventKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    confidence: Option<f64>,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let spec = match &a.spec {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let mut spec: SynthSpec = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            spec.seed = a.seed;
            spec
        }
        None => preset_spec(a.kind, a.frames, a.seed),
    };
    let (seq, events) = generate(&spec)?;
    write_corpus(&a.out, &seq, &events)?;
    write_text(&a.out.join("spec.json"), &to_json(&spec))?;
    eprintln!("{} frames, {} events -> {}", seq.len(), events.len(), a.out.display());
    Ok(())
}

pub fn ingest(a: IngestArgs, cfg: &PipelineConfig) -> Result<()> {
    let seq = load_sequence(&a.manifest)?;
    let events = a.events.as_ref().map(read_events).transpose()?;
    let (reduced, volumes) = prepare(&seq, events.as_deref(), &cfg.volume)?;
    write_volumes(&a.out, &volumes)?;
    eprintln!("{} retained frames, {} volumes -> {}", reduced.len(), volumes.len(), a.out.display());
    Ok(())
}

pub fn train(a: TrainArgs, cfg: &PipelineConfig) -> Result<()> {
    let mut volumes = Vec::new();
    for path in &a.volumes {
        volumes.extend(read_volumes(path)?);
    }
    let validation = a.validation.as_ref().map(read_volumes).transpose()?;
    let mut net_cfg = cfg.network.clone();
    let mut train_cfg = cfg.train.clone();
    if let Some(seed) = a.seed {
        net_cfg.init_seed = seed;
        train_cfg.shuffle_seed = seed;
    }
    if let Some(epochs) = a.epochs {
        train_cfg.epochs = epochs;
    }
    let mut net = Network::build(net_cfg)?;
    let history = train_with_validation(&mut net, &volumes, validation.as_deref(), &train_cfg)?;
    save_weights(&net, &a.out)?;
    match &a.history {
        Some(path) => write_text(path, &history.to_tsv())?,
        None => eprint!("{}", history.to_tsv()),
    }
    Ok(())
}

pub fn detect(a: DetectArgs, cfg: &PipelineConfig) -> Result<()> {
    let net = load_weights(&a.weights)?;
    let seq = load_sequence(&a.manifest)?;
    let (reduced, volumes) = prepare(&seq, None, &cfg.volume)?;
    let video_id = a.video_id.clone().unwrap_or_else(|| {
        a.manifest
            .canonicalize()
            .ok()
            .and_then(|p| p.parent().and_then(|d| d.file_name()).map(|n| n.to_string_lossy().into_owned()))
            .unwrap_or_else(|| "video".into())
    });
    let track = predict(&net, &volumes, &video_id, &reduced, cfg.volume.temporal_rate, cfg.batch_size)?;
    track.write(&a.out)?;
    Ok(())
}

pub fn summarize(a: SummarizeArgs, cfg: &PipelineConfig) -> Result<()> {
    let track = PredictionTrack::read(&a.track)?;
    let (_, events, manifest) = decode(&track, &cfg.decode)?;
    let outline = build_outline(&manifest)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_text(&a.out.join("summary.json"), &manifest.to_json())?;
    write_text(&a.out.join("outline.json"), &to_json(&outline))?;
    let source_events: Vec<EventRecord> = events
        .iter()
        .map(|e| EventRecord {
            frame_index: e.frame_index * track.temporal_rate,
            kind: Some(EventKind::Transition),
            confidence: Some(e.confidence),
        })
        .collect();
    write_text(&a.out.join("transitions.json"), &to_json(&source_events))?;
    if let Some(m) = &a.manifest {
        let source = load_sequence(m)?;
        write_keyframe_images(&a.out, &keyframe_images(&manifest, &source, track.temporal_rate)?)?;
    }
    Ok(())
}

fn read_event_frames(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let records: Vec<EventRecord> = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let mut frames: Vec<usize> = records
        .into_iter()
        .filter(|r| r.kind.is_none_or(|k| k == EventKind::Transition))
        .map(|r| r.frame_index)
        .collect();
    frames.sort_unstable();
    frames.dedup();
    Ok(frames)
}

pub fn eval(a: EvalArgs, _cfg: &PipelineConfig) -> Result<()> {
    let pred = read_event_frames(&a.pred)?;
    let truth = read_event_frames(&a.truth)?;
    let mut report = MetricsReport {
        confusion: None,
        classification: None,
        events: Some(match_transitions(&pred, &truth, a.tol)?),
    };
    if let (Some(track), Some(volumes)) = (&a.track, &a.volumes) {
        let track = PredictionTrack::read(track)?;
        let volumes = read_volumes(volumes)?;
        if track.entries.len() != volumes.len() {
            bail!("track has {} entries, volumes file has {}", track.entries.len(), volumes.len());
        }
        let predicted: Vec<Category> = track.entries.iter().map(|e| Category::argmax(&e.probs)).collect();
        let labels = volumes
            .iter()
            .map(|v| v.category.context("volumes file is unlabelled"))
            .collect::<Result<Vec<_>>>()?;
        let m = evalkit::confusion_matrix(&predicted, &labels)?;
        report.classification = Some(evalkit::prf1(&m));
        report.confusion = Some(m);
    }
    let mut out = std::io::stdout().lock();
    if a.json {
        writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
    } else {
        write!(out, "{report}")?;
    }
    Ok(())
}

pub fn baseline(a: BaselineArgs, cfg: &PipelineConfig) -> Result<()> {
    let seq = load_sequence(&a.manifest)?;
    let threshold = a.threshold.unwrap_or(cfg.baseline_threshold);
    let events: Vec<EventRecord> = pixel_diff_baseline(&seq, threshold)?
        .into_iter()
        .map(|e| EventRecord {
            frame_index: e.frame_index,
            kind: Some(EventKind::Transition),
            confidence: Some(e.confidence),
        })
        .collect();
    write_text(&a.out, &to_json(&events))?;
    eprintln!("{} events", events.len());
    Ok(())
}

pub fn serve(a: ServeArgs) -> Result<()> {
    let store = DirStore::open(&a.store)?;
    let service = Arc::new(Service::new(Arc::new(store)));
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(a.bind).await.with_context(|| format!("binding {}", a.bind))?;
        let addr = listener.local_addr()?;
        println!("listening on {addr}");
        std::io::stdout().flush()?;
        slideloc_service::serve(listener, service).await?;
        Ok(())
    })
}

