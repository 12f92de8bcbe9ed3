use std::collections::HashMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::Serialize;
use tempfile::NamedTempFile;

use crate::model::{SessionDoc, VideoRecord};
use crate::ServiceError;

pub trait Store: Send + Sync {
    fn put_video(&self, record: &VideoRecord, images: &[Vec<u8>]) -> Result<(), ServiceError>;
    fn video(&self, id: &str) -> Result<Option<VideoRecord>, ServiceError>;
    fn keyframe_image(&self, id: &str, index: usize) -> Result<Option<Vec<u8>>, ServiceError>;
    fn put_session(&self, doc: &SessionDoc) -> Result<(), ServiceError>;
    fn session(&self, id: &str) -> Result<Option<SessionDoc>, ServiceError>;
}

#[derive(Default)]
pub struct MemoryStore {
    videos: Mutex<HashMap<String, (VideoRecord, Vec<Vec<u8>>)>>,
    sessions: Mutex<HashMap<String, SessionDoc>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Store for MemoryStore {
    fn put_video(&self, record: &VideoRecord, images: &[Vec<u8>]) -> Result<(), ServiceError> {
        self.videos.lock().unwrap().insert(record.id.clone(), (record.clone(), images.to_vec()));
        Ok(())
    }

    fn video(&self, id: &str) -> Result<Option<VideoRecord>, ServiceError> {
        Ok(self.videos.lock().unwrap().get(id).map(|v| v.0.clone()))
    }

    fn keyframe_image(&self, id: &str, index: usize) -> Result<Option<Vec<u8>>, ServiceError> {
        Ok(self.videos.lock().unwrap().get(id).and_then(|v| v.1.get(index).cloned()))
    }

    fn put_session(&self, doc: &SessionDoc) -> Result<(), ServiceError> {
        self.sessions.lock().unwrap().insert(doc.session.id.clone(), doc.clone());
        Ok(())
    }

    fn session(&self, id: &str) -> Result<Option<SessionDoc>, ServiceError> {
        Ok(self.sessions.lock().unwrap().get(id).cloned())
    }
}

/// One JSON document per video and per session under a root directory:
/// `videos/<id>.json`, `videos/<id>/key_NNNN.pgm`, `sessions/<id>.json`.
/// Documents are replaced by writing a temporary file in the same
/// directory and renaming it over the old one.
pub struct DirStore {
    root: PathBuf,
}

fn io_err(path: &Path, e: io::Error) -> ServiceError {
    ServiceError::Store(format!("{}: {e}", path.display()))
}

/// Ids are generated uuids; anything else could escape the store directory.
fn safe_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.bytes().all(|b| b.is_ascii_hexdigit() || b == b'-')
}

impl DirStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, ServiceError> {
        let root = root.into();
        for sub in ["videos", "sessions"] {
            let dir = root.join(sub);
            fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
            // leftovers from writes interrupted before their rename
            for entry in fs::read_dir(&dir).map_err(|e| io_err(&dir, e))? {
                let path = entry.map_err(|e| io_err(&dir, e))?.path();
                if path.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with(".tmp")) {
                    let _ = fs::remove_file(&path);
                }
            }
        }
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn replace(&self, path: &Path, bytes: &[u8]) -> Result<(), ServiceError> {
        let dir = path.parent().expect("store paths have a parent");
        let mut tmp = NamedTempFile::new_in(dir).map_err(|e| io_err(dir, e))?;
        tmp.write_all(bytes).map_err(|e| io_err(path, e))?;
        tmp.as_file().sync_all().map_err(|e| io_err(path, e))?;
        tmp.persist(path).map_err(|e| io_err(path, e.error))?;
        Ok(())
    }

    fn write_json<T: Serialize>(&self, path: &Path, value: &T) -> Result<(), ServiceError> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| ServiceError::Store(e.to_string()))?;
        bytes.push(b'\n');
        self.replace(path, &bytes)
    }

    fn read_json<T: DeserializeOwned>(&self, path: &Path) -> Result<Option<T>, ServiceError> {
        match fs::read(path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map(Some)
                .map_err(|e| ServiceError::Store(format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io_err(path, e)),
        }
    }

    fn video_path(&self, id: &str) -> PathBuf {
        self.root.join("videos").join(format!("{id}.json"))
    }

    fn session_path(&self, id: &str) -> PathBuf {
        self.root.join("sessions").join(format!("{id}.json"))
    }
}

impl Store for DirStore {
    fn put_video(&self, record: &VideoRecord, images: &[Vec<u8>]) -> Result<(), ServiceError> {
        if !safe_id(&record.id) {
            return Err(ServiceError::Invalid(format!("bad id {}", record.id)));
        }
        let dir = self.root.join("videos").join(&record.id);
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        for (rel, bytes) in record.keyframes.iter().zip(images) {
            self.replace(&self.root.join("videos").join(rel), bytes)?;
        }
        // the record goes last so a visible record always has its images
        self.write_json(&self.video_path(&record.id), record)
    }

    fn video(&self, id: &str) -> Result<Option<VideoRecord>, ServiceError> {
        if !safe_id(id) {
            return Ok(None);
        }
        self.read_json(&self.video_path(id))
    }

    fn keyframe_image(&self, id: &str, index: usize) -> Result<Option<Vec<u8>>, ServiceError> {
        let Some(record) = self.video(id)? else {
            return Ok(None);
        };
        let Some(rel) = record.keyframes.get(index) else {
            return Ok(None);
        };
        let path = self.root.join("videos").join(rel);
        fs::read(&path).map(Some).map_err(|e| io_err(&path, e))
    }

    fn put_session(&self, doc: &SessionDoc) -> Result<(), ServiceError> {
        if !safe_id(&doc.session.id) {
            return Err(ServiceError::Invalid(format!("bad id {}", doc.session.id)));
        }
        self.write_json(&self.session_path(&doc.session.id), doc)
    }

    fn session(&self, id: &str) -> Result<Option<SessionDoc>, ServiceError> {
        if !safe_id(id) {
            return Ok(None);
        }
        self.read_json(&self.session_path(id))
    }
}
