//! On-disk session store.
//!
//! ```text
//! <root>/sessions/<id>/session.json
//! <root>/sessions/<id>/input/000000.png ... clip.toml
//! <root>/sessions/<id>/reference/...
//! ```
//!
//! Uploaded frames and the LUT stack are authoritative; graded frames are
//! recomputed on request.

use std::fs;
use std::path::{Path, PathBuf};

use gradeforge_core::frame::frame_file_name;
use gradeforge_core::lut::{compose_luts, Lut3D};
use gradeforge_core::retouch::FeedbackRecord;
use gradeforge_core::{load_clip, save_clip, Frame, VideoClip};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const RECORD_FILE: &str = "session.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Created,
    Loaded,
    Graded,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Input,
    Reference,
}

impl Side {
    fn dir_name(self) -> &'static str {
        match self {
            Side::Input => "input",
            Side::Reference => "reference",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LutSource {
    Generated,
    Catalog { name: String },
}

/// A LUT with its entries at full precision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredLut {
    pub size: usize,
    pub domain_min: [f64; 3],
    pub domain_max: [f64; 3],
    pub entries: Vec<[f64; 3]>,
}

impl From<&Lut3D> for StoredLut {
    fn from(lut: &Lut3D) -> Self {
        StoredLut {
            size: lut.size(),
            domain_min: lut.domain_min(),
            domain_max: lut.domain_max(),
            entries: lut.entries(),
        }
    }
}

impl StoredLut {
    pub fn to_lut(&self) -> Result<Lut3D> {
        Ok(Lut3D::from_entries_with_domain(
            self.size,
            self.domain_min,
            self.domain_max,
            self.entries.clone(),
        )?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackEntry {
    pub source: LutSource,
    pub lut: StoredLut,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyPair {
    pub input_index: usize,
    pub reference_index: usize,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub id: String,
    pub status: Status,
    /// Sampling seed, fixed when the session is created.
    pub seed: u64,
    pub input_frames: Option<usize>,
    pub reference_frames: Option<usize>,
    pub key_pair: Option<KeyPair>,
    pub stack: Vec<StackEntry>,
    pub history: Vec<FeedbackRecord>,
    pub error: Option<String>,
}

impl SessionRecord {
    pub fn new(id: String, seed: u64) -> Self {
        SessionRecord {
            id,
            status: Status::Created,
            seed,
            input_frames: None,
            reference_frames: None,
            key_pair: None,
            stack: Vec::new(),
            history: Vec::new(),
            error: None,
        }
    }

    /// Drops any grade and marks the session as holding uploads.
    pub fn reset_grade(&mut self) {
        self.stack.clear();
        self.history.clear();
        self.key_pair = None;
        self.error = None;
        self.status = Status::Loaded;
    }

    /// Left fold of the stack through `compose_luts`; `None` before grading.
    pub fn current_lut(&self) -> Result<Option<Lut3D>> {
        let mut it = self.stack.iter();
        let Some(first) = it.next() else {
            return Ok(None);
        };
        let mut acc = first.lut.to_lut()?;
        for e in it {
            acc = compose_luts(&acc, &e.lut.to_lut()?)?;
        }
        Ok(Some(acc))
    }

    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        if self.stack.is_empty() != (self.status != Status::Graded) {
            return Err(format!(
                "status {:?} with {} stacked LUTs",
                self.status,
                self.stack.len()
            ));
        }
        let catalog = self
            .stack
            .iter()
            .filter(|e| matches!(e.source, LutSource::Catalog { .. }))
            .count();
        if catalog != self.history.len() {
            return Err(format!(
                "{catalog} catalog LUTs but {} feedback records",
                self.history.len()
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

fn valid_id(id: &str) -> bool {
    uuid::Uuid::parse_str(id).is_ok_and(|u| u.hyphenated().to_string() == id)
}

impl Store {
    pub fn open(root: &Path) -> Result<Self> {
        let sessions = root.join("sessions");
        fs::create_dir_all(&sessions).map_err(|e| Error::io(&sessions, e))?;
        Ok(Store {
            root: root.to_path_buf(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn dir(&self, id: &str) -> Result<PathBuf> {
        if !valid_id(id) {
            return Err(Error::NotFound(format!("session {id}")));
        }
        Ok(self.root.join("sessions").join(id))
    }

    pub fn create(&self, seed: u64) -> Result<SessionRecord> {
        let id = uuid::Uuid::new_v4().hyphenated().to_string();
        let dir = self.dir(&id)?;
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let rec = SessionRecord::new(id, seed);
        self.save(&rec)?;
        Ok(rec)
    }

    pub fn load(&self, id: &str) -> Result<SessionRecord> {
        let path = self.dir(id)?.join(RECORD_FILE);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(Error::NotFound(format!("session {id}"))),
            Err(e) => return Err(Error::io(&path, e)),
        };
        serde_json::from_str(&text).map_err(|e| Error::io(&path, e))
    }

    /// Replaces the record through a rename so a crash leaves either the
    /// old or the new state.
    pub fn save(&self, rec: &SessionRecord) -> Result<()> {
        let dir = self.dir(&rec.id)?;
        let tmp = dir.join(format!("{RECORD_FILE}.tmp"));
        let text = serde_json::to_vec(rec).map_err(|e| Error::io(&tmp, e))?;
        fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
        let path = dir.join(RECORD_FILE);
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }

    pub fn write_clip(&self, id: &str, side: Side, clip: &VideoClip) -> Result<()> {
        let dir = self.dir(id)?;
        let target = dir.join(side.dir_name());
        let tmp = dir.join(format!("{}.tmp", side.dir_name()));
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        }
        save_clip(clip, &tmp)?;
        if target.exists() {
            fs::remove_dir_all(&target).map_err(|e| Error::io(&target, e))?;
        }
        fs::rename(&tmp, &target).map_err(|e| Error::io(&target, e))
    }

    pub fn read_clip(&self, id: &str, side: Side, fps: f64) -> Result<VideoClip> {
        Ok(load_clip(&self.dir(id)?.join(side.dir_name()), fps)?)
    }

    pub fn read_frame(&self, id: &str, side: Side, index: usize) -> Result<Frame> {
        let path = self.dir(id)?.join(side.dir_name()).join(frame_file_name(index));
        Ok(Frame::load(&path)?)
    }

    /// Ids of every stored session, sorted.
    pub fn list(&self) -> Result<Vec<String>> {
        let dir = self.root.join("sessions");
        let mut ids = Vec::new();
        for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let entry = entry.map_err(|e| Error::io(&dir, e))?;
            if let Some(name) = entry.file_name().to_str() {
                if valid_id(name) && entry.path().join(RECORD_FILE).exists() {
                    ids.push(name.to_string());
                }
            }
        }
        ids.sort();
        Ok(ids)
    }
}
