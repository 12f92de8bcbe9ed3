use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use slideloc_core::ingest::parse_pgm;
use slideloc_core::summarizer::{Outline, SummaryManifest};

use crate::model::{AnalyticsEvent, Decision, OutlineOp, Session, SessionDoc, Stage, VideoRecord};
use crate::store::Store;
use crate::ServiceError;

#[derive(Debug, Clone)]
pub struct NewVideo {
    pub manifest: SummaryManifest,
    pub outline: Outline,
    /// Binary PGM bytes, one per keyframe.
    pub images: Vec<Vec<u8>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Jsonl,
    Csv,
}

pub struct Service {
    store: Arc<dyn Store>,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

fn check_consistent(v: &NewVideo) -> Result<(), ServiceError> {
    let keys = &v.manifest.keyframes;
    let segs = &v.outline.segments;
    if keys.is_empty() {
        return Err(ServiceError::Invalid("manifest has no keyframes".into()));
    }
    if segs.len() != keys.len() {
        return Err(ServiceError::Invalid(format!(
            "outline has {} segments, manifest has {} keyframes",
            segs.len(),
            keys.len()
        )));
    }
    for (i, (k, s)) in keys.iter().zip(segs).enumerate() {
        if s.index != i || s.keyframe != k.frame || [s.start_frame, s.end_frame] != k.segment {
            return Err(ServiceError::Invalid(format!("outline segment {i} does not match keyframe {i}")));
        }
    }
    if v.images.len() != keys.len() {
        return Err(ServiceError::Invalid(format!(
            "{} keyframe images for {} keyframes",
            v.images.len(),
            keys.len()
        )));
    }
    for (i, img) in v.images.iter().enumerate() {
        parse_pgm(img).map_err(|e| ServiceError::Invalid(format!("keyframe image {i}: {e}")))?;
    }
    Ok(())
}

fn check_kind(kind: &str) -> Result<(), ServiceError> {
    if kind.is_empty() || kind.len() > 64 || !kind.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_') {
        return Err(ServiceError::Invalid(format!("event kind {kind:?} must be 1-64 chars of [a-z0-9_]")));
    }
    Ok(())
}

impl Service {
    pub fn new(store: Arc<dyn Store>) -> Self {
        Self {
            store,
            locks: Mutex::new(HashMap::new()),
        }
    }

    pub fn register_video(&self, video: NewVideo) -> Result<String, ServiceError> {
        check_consistent(&video)?;
        let id = uuid::Uuid::new_v4().to_string();
        let record = VideoRecord {
            keyframes: (0..video.images.len()).map(|k| format!("{id}/key_{k:04}.pgm")).collect(),
            id: id.clone(),
            manifest: video.manifest,
            outline: video.outline,
        };
        self.store.put_video(&record, &video.images)?;
        Ok(id)
    }

    pub fn video(&self, id: &str) -> Result<VideoRecord, ServiceError> {
        self.store.video(id)?.ok_or_else(|| ServiceError::NotFound(format!("video {id}")))
    }

    pub fn keyframe_image(&self, id: &str, index: usize) -> Result<Vec<u8>, ServiceError> {
        self.store
            .keyframe_image(id, index)?
            .ok_or_else(|| ServiceError::NotFound(format!("keyframe {index} of video {id}")))
    }

    pub fn create_session(&self, video_id: &str) -> Result<Session, ServiceError> {
        let video = self.video(video_id)?;
        let session = Session::new(uuid::Uuid::new_v4().to_string(), &video, now_ms());
        self.store.put_session(&SessionDoc {
            session: session.clone(),
            events: Vec::new(),
        })?;
        Ok(session)
    }

    fn doc(&self, id: &str) -> Result<SessionDoc, ServiceError> {
        self.store.session(id)?.ok_or_else(|| ServiceError::NotFound(format!("session {id}")))
    }

    pub fn session(&self, id: &str) -> Result<Session, ServiceError> {
        Ok(self.doc(id)?.session)
    }

    fn lock_for(&self, id: &str) -> Arc<Mutex<()>> {
        self.locks.lock().unwrap().entry(id.to_string()).or_default().clone()
    }

    /// Loads, checks the version, applies `f` to a copy and stores the copy
    /// with one appended event. Nothing is written when any step fails.
    fn update<K: Into<String>>(
        &self,
        id: &str,
        expected_version: Option<u64>,
        f: impl FnOnce(&mut Session) -> Result<(K, Value), ServiceError>,
    ) -> Result<SessionDoc, ServiceError> {
        let lock = self.lock_for(id);
        let _guard = lock.lock().unwrap();
        let mut doc = self.doc(id)?;
        if let Some(expected) = expected_version {
            if expected != doc.session.version {
                return Err(ServiceError::VersionConflict {
                    expected,
                    actual: doc.session.version,
                });
            }
        }
        let mut session = doc.session.clone();
        let (kind, payload) = f(&mut session)?;
        let now = now_ms();
        if expected_version.is_some() {
            session.version += 1;
            session.updated_ms = now;
        }
        doc.session = session;
        doc.events.push(AnalyticsEvent {
            session_id: id.to_string(),
            seq: doc.events.len() as u64 + 1,
            timestamp_ms: now,
            kind: kind.into(),
            payload,
        });
        self.store.put_session(&doc)?;
        Ok(doc)
    }

    pub fn apply_selection(&self, id: &str, keyframe: usize, decision: Decision, expected_version: u64) -> Result<Session, ServiceError> {
        Ok(self.update(id, Some(expected_version), |s| s.select(keyframe, decision))?.session)
    }

    pub fn apply_outline_op(&self, id: &str, op: &OutlineOp, expected_version: u64) -> Result<Session, ServiceError> {
        let video_id = self.session(id)?.video_id;
        let video = self.video(&video_id)?;
        Ok(self.update(id, Some(expected_version), |s| s.apply_outline(op, &video))?.session)
    }

    pub fn set_summary_block(&self, id: &str, node: &str, text: &str, expected_version: u64) -> Result<Session, ServiceError> {
        Ok(self.update(id, Some(expected_version), |s| s.set_block(node, text))?.session)
    }

    pub fn set_stage(&self, id: &str, stage: Stage, expected_version: u64) -> Result<Session, ServiceError> {
        Ok(self.update(id, Some(expected_version), |s| Ok(s.set_stage(stage)))?.session)
    }

    /// Appends a client-reported event. Session state and version are
    /// unchanged.
    pub fn record_event(&self, id: &str, kind: &str, payload: Value) -> Result<AnalyticsEvent, ServiceError> {
        check_kind(kind)?;
        let doc = self.update(id, None, |_| Ok((kind, payload)))?;
        Ok(doc.events.last().cloned().expect("event appended"))
    }

    pub fn list_events(&self, id: &str) -> Result<Vec<AnalyticsEvent>, ServiceError> {
        Ok(self.doc(id)?.events)
    }

    pub fn export_events(&self, id: &str, format: ExportFormat) -> Result<String, ServiceError> {
        let events = self.list_events(id)?;
        match format {
            ExportFormat::Jsonl => Ok(events
                .iter()
                .map(|e| serde_json::to_string(e).expect("event serializes") + "\n")
                .collect()),
            ExportFormat::Csv => {
                let mut w = csv::Writer::from_writer(Vec::new());
                w.write_record(["session_id", "seq", "timestamp_ms", "kind", "payload"])
                    .map_err(|e| ServiceError::Store(e.to_string()))?;
                for e in &events {
                    w.write_record([
                        e.session_id.clone(),
                        e.seq.to_string(),
                        e.timestamp_ms.to_string(),
                        e.kind.clone(),
                        e.payload.to_string(),
                    ])
                    .map_err(|e| ServiceError::Store(e.to_string()))?;
                }
                let bytes = w.into_inner().map_err(|e| ServiceError::Store(e.to_string()))?;
                Ok(String::from_utf8(bytes).expect("csv of utf-8 fields"))
            }
        }
    }
}

pub fn parse_events_jsonl(text: &str) -> Result<Vec<AnalyticsEvent>, ServiceError> {
    text.lines()
        .filter(|l| !l.is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| ServiceError::Invalid(e.to_string())))
        .collect()
}

pub fn parse_events_csv(text: &str) -> Result<Vec<AnalyticsEvent>, ServiceError> {
    let bad = |e: String| ServiceError::Invalid(e);
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.records()
        .map(|rec| {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            if rec.len() != 5 {
                return Err(bad(format!("expected 5 fields, found {}", rec.len())));
            }
            Ok(AnalyticsEvent {
                session_id: rec[0].to_string(),
                seq: rec[1].parse().map_err(|e| bad(format!("seq: {e}")))?,
                timestamp_ms: rec[2].parse().map_err(|e| bad(format!("timestamp_ms: {e}")))?,
                kind: rec[3].to_string(),
                payload: serde_json::from_str(&rec[4]).map_err(|e| bad(format!("payload: {e}")))?,
            })
        })
        .collect()
}
