//! Rater sessions and the durable response store behind the study service.
//!
//! Responses go to an append-only JSON-lines log (`responses.jsonl`). Each line is
//! a [`ResponseRecord`] with a strictly increasing sequence number and is flushed
//! to disk before the submission is acknowledged. A resubmission appends a new
//! record naming the sequence number it replaces, so the log is a complete audit
//! trail while the live view keeps one record per (rater, presentation).
//!
//! Every `snapshot_every` appends the live view is written to `snapshot.json`
//! together with the log offset it covers, so a restart replays only the tail.
//! A torn final line (a crash mid-write, never acknowledged) is cut off on open.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::questionnaire::{Answers, QuestionnaireSchema, ValidationIssue};
use crate::study_builder::{Presentation, StudyManifest};

const LOG_FILE: &str = "responses.jsonl";
const SNAPSHOT_FILE: &str = "snapshot.json";

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("unknown strip {0}")]
    UnknownStrip(String),
    #[error("unknown rater {0}")]
    UnknownRater(String),
    #[error("answers are incomplete or invalid: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<ValidationIssue>),
    #[error("strip belongs to subset {subset}; the rater is working on subset {current}")]
    FutureSubset { subset: usize, current: usize },
    #[error("response log is corrupt at line {line}: {message}")]
    CorruptLog { line: usize, message: String },
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

/// One submitted answer set, as stored in the log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub seq: u64,
    pub rater: String,
    pub strip_id: String,
    pub answers: Answers,
    pub submitted_at: DateTime<Utc>,
    pub schema_version: u32,
    /// Sequence number of the record this one supersedes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replaces: Option<u64>,
}

impl ResponseRecord {
    pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<Self>, SessionError> {
        let text = fs::read_to_string(path)?;
        parse_lines(&text)
    }

    pub fn write_jsonl(records: &[Self], path: impl AsRef<Path>) -> Result<(), SessionError> {
        let mut out = Vec::new();
        for r in records {
            serde_json::to_writer(&mut out, r)?;
            out.push(b'\n');
        }
        fs::write(path, out)?;
        Ok(())
    }
}

fn parse_lines(text: &str) -> Result<Vec<ResponseRecord>, SessionError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| SessionError::CorruptLog {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct Snapshot {
    last_seq: u64,
    log_offset: u64,
    live: Vec<ResponseRecord>,
}

/// Live view: the current record per (rater, strip id).
#[derive(Debug, Clone, Default)]
pub struct LiveState {
    pub last_seq: u64,
    pub live: BTreeMap<(String, String), ResponseRecord>,
}

impl LiveState {
    fn apply(&mut self, record: ResponseRecord) {
        self.last_seq = self.last_seq.max(record.seq);
        self.live.insert((record.rater.clone(), record.strip_id.clone()), record);
    }
}

/// The append-only log file plus its in-memory live view.
#[derive(Debug)]
pub struct ResponseLog {
    dir: PathBuf,
    file: File,
    offset: u64,
    state: LiveState,
    snapshot_every: usize,
    since_snapshot: usize,
}

impl ResponseLog {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, SessionError> {
        Self::open_with(dir, 64)
    }

    pub fn open_with(dir: impl AsRef<Path>, snapshot_every: usize) -> Result<Self, SessionError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(dir.join(LOG_FILE))?;
        let len = file.metadata()?.len();

        let snapshot: Snapshot = match fs::read_to_string(dir.join(SNAPSHOT_FILE)) {
            Ok(text) => serde_json::from_str(&text)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Snapshot::default(),
            Err(e) => return Err(e.into()),
        };
        // a snapshot ahead of the log is stale (log replaced); rebuild from scratch
        let snapshot = if snapshot.log_offset <= len {
            snapshot
        } else {
            Snapshot::default()
        };
        let mut state = LiveState::default();
        for r in snapshot.live {
            state.apply(r);
        }
        state.last_seq = state.last_seq.max(snapshot.last_seq);

        file.seek(SeekFrom::Start(snapshot.log_offset))?;
        let mut tail = Vec::new();
        file.read_to_end(&mut tail)?;
        let complete = tail.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
        if complete < tail.len() {
            // torn write: never acknowledged, so dropping it loses nothing
            file.set_len(snapshot.log_offset + complete as u64)?;
            file.sync_all()?;
        }
        let text = std::str::from_utf8(&tail[..complete]).map_err(|e| SessionError::CorruptLog {
            line: 0,
            message: e.to_string(),
        })?;
        for r in parse_lines(text)? {
            state.apply(r);
        }
        let offset = snapshot.log_offset + complete as u64;
        Ok(ResponseLog {
            dir,
            file,
            offset,
            state,
            snapshot_every: snapshot_every.max(1),
            since_snapshot: 0,
        })
    }

    pub fn state(&self) -> &LiveState {
        &self.state
    }

    /// Appends `record` (its `seq` is assigned here) and syncs before returning.
    pub fn append(&mut self, mut record: ResponseRecord) -> Result<ResponseRecord, SessionError> {
        record.seq = self.state.last_seq + 1;
        let mut line = serde_json::to_vec(&record)?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.sync_data()?;
        self.offset += line.len() as u64;
        self.state.apply(record.clone());
        self.since_snapshot += 1;
        if self.since_snapshot >= self.snapshot_every {
            self.snapshot()?;
        }
        Ok(record)
    }

    /// Writes the live view atomically (temp file + rename).
    pub fn snapshot(&mut self) -> Result<(), SessionError> {
        let snap = Snapshot {
            last_seq: self.state.last_seq,
            log_offset: self.offset,
            live: self.state.live.values().cloned().collect(),
        };
        let tmp = self.dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        {
            let mut f = File::create(&tmp)?;
            f.write_all(&serde_json::to_vec(&snap)?)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, self.dir.join(SNAPSHOT_FILE))?;
        self.since_snapshot = 0;
        Ok(())
    }

    /// Every record ever appended, in sequence order.
    pub fn history(&self) -> Result<Vec<ResponseRecord>, SessionError> {
        let text = fs::read_to_string(self.dir.join(LOG_FILE))?;
        parse_lines(&text)
    }
}

/// Progress through one subset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetProgress {
    pub subset: usize,
    pub completed: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub rater: String,
    /// Lowest subset with unanswered strips; `None` when everything is done.
    pub current_subset: Option<usize>,
    pub completed: usize,
    pub total: usize,
    pub subsets: Vec<SubsetProgress>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Acknowledgement {
    pub seq: u64,
    pub strip_id: String,
    /// True when an earlier answer to the same strip was replaced.
    pub replaced: bool,
}

/// One row of the response export.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportRow {
    pub subset: usize,
    pub position: usize,
    #[serde(flatten)]
    pub record: ResponseRecord,
}

/// The study as served: manifest, token table and response log.
///
/// Writes are serialised through one mutex; readers take the latest published
/// [`LiveState`] without waiting for a writer.
#[derive(Debug)]
pub struct SessionService {
    manifest: StudyManifest,
    index: HashMap<String, usize>,
    tokens: HashMap<String, String>,
    writer: Mutex<ResponseLog>,
    published: RwLock<Arc<LiveState>>,
}

impl SessionService {
    pub fn open(manifest: StudyManifest, store: impl AsRef<Path>) -> Result<Self, SessionError> {
        let log = ResponseLog::open(store)?;
        Ok(Self::with_log(manifest, log))
    }

    pub fn with_log(manifest: StudyManifest, log: ResponseLog) -> Self {
        let index = manifest
            .presentations
            .iter()
            .enumerate()
            .map(|(i, p)| (p.id.clone(), i))
            .collect();
        let tokens = manifest
            .raters
            .iter()
            .map(|r| (r.token.clone(), r.id.clone()))
            .collect();
        let published = RwLock::new(Arc::new(log.state().clone()));
        SessionService {
            manifest,
            index,
            tokens,
            writer: Mutex::new(log),
            published,
        }
    }

    pub fn manifest(&self) -> &StudyManifest {
        &self.manifest
    }

    pub fn schema(&self) -> &QuestionnaireSchema {
        &self.manifest.schema
    }

    /// Rater id for a bearer token.
    pub fn authenticate(&self, token: &str) -> Option<&str> {
        self.tokens.get(token).map(String::as_str)
    }

    pub fn is_admin(&self, token: &str) -> bool {
        !self.manifest.admin_token.is_empty() && token == self.manifest.admin_token
    }

    pub fn presentation(&self, id: &str) -> Option<&Presentation> {
        self.index.get(id).map(|&i| &self.manifest.presentations[i])
    }

    fn state(&self) -> Arc<LiveState> {
        self.published.read().expect("state lock poisoned").clone()
    }

    fn answered(state: &LiveState, rater: &str, id: &str) -> bool {
        state.live.contains_key(&(rater.to_string(), id.to_string()))
    }

    fn first_open<'a>(&'a self, state: &LiveState, rater: &str) -> Option<&'a Presentation> {
        self.manifest
            .presentations
            .iter()
            .find(|p| !Self::answered(state, rater, &p.id))
    }

    /// First unanswered presentation of the lowest incomplete subset.
    pub fn next_strip(&self, rater: &str) -> Option<&Presentation> {
        self.first_open(&self.state(), rater)
    }

    pub fn progress(&self, rater: &str) -> Progress {
        let state = self.state();
        let mut subsets: Vec<SubsetProgress> = (0..self.manifest.n_subsets)
            .map(|subset| SubsetProgress {
                subset,
                completed: 0,
                total: 0,
            })
            .collect();
        for p in &self.manifest.presentations {
            if let Some(s) = subsets.get_mut(p.subset) {
                s.total += 1;
                s.completed += usize::from(Self::answered(&state, rater, &p.id));
            }
        }
        Progress {
            rater: rater.to_string(),
            current_subset: self.first_open(&state, rater).map(|p| p.subset),
            completed: subsets.iter().map(|s| s.completed).sum(),
            total: self.manifest.presentations.len(),
            subsets,
        }
    }

    pub fn record_response(&self, rater: &str, strip_id: &str, answers: Answers) -> Result<Acknowledgement, SessionError> {
        self.record_response_at(rater, strip_id, answers, Utc::now())
    }

    pub fn record_response_at(
        &self,
        rater: &str,
        strip_id: &str,
        answers: Answers,
        now: DateTime<Utc>,
    ) -> Result<Acknowledgement, SessionError> {
        if !self.tokens.values().any(|r| r == rater) {
            return Err(SessionError::UnknownRater(rater.to_string()));
        }
        let presentation = self
            .presentation(strip_id)
            .ok_or_else(|| SessionError::UnknownStrip(strip_id.to_string()))?;
        let issues = answers.validate(&self.manifest.schema, presentation.n_leads());
        if !issues.is_empty() {
            return Err(SessionError::Invalid(issues));
        }

        let mut log = self.writer.lock().expect("writer lock poisoned");
        let current = self
            .first_open(log.state(), rater)
            .map_or(self.manifest.n_subsets, |p| p.subset);
        if presentation.subset > current {
            return Err(SessionError::FutureSubset {
                subset: presentation.subset,
                current,
            });
        }
        let previous = log
            .state()
            .live
            .get(&(rater.to_string(), strip_id.to_string()))
            .map(|r| r.seq);
        let stored = log.append(ResponseRecord {
            seq: 0,
            rater: rater.to_string(),
            strip_id: strip_id.to_string(),
            answers,
            submitted_at: now,
            schema_version: self.manifest.schema.version,
            replaces: previous,
        })?;
        *self.published.write().expect("state lock poisoned") = Arc::new(log.state().clone());
        Ok(Acknowledgement {
            seq: stored.seq,
            strip_id: stored.strip_id,
            replaced: previous.is_some(),
        })
    }

    /// Live records ordered by (rater, subset, position).
    pub fn export(&self) -> Vec<ExportRow> {
        export_rows(&self.manifest, &self.state())
    }

    pub fn history(&self) -> Result<Vec<ResponseRecord>, SessionError> {
        self.writer.lock().expect("writer lock poisoned").history()
    }
}

/// Live records of `state` joined with their place in the manifest.
pub fn export_rows(manifest: &StudyManifest, state: &LiveState) -> Vec<ExportRow> {
    let place: HashMap<&str, (usize, usize)> = manifest
        .presentations
        .iter()
        .map(|p| (p.id.as_str(), (p.subset, p.position)))
        .collect();
    let mut rows: Vec<ExportRow> = state
        .live
        .values()
        .filter_map(|r| {
            place.get(r.strip_id.as_str()).map(|&(subset, position)| ExportRow {
                subset,
                position,
                record: r.clone(),
            })
        })
        .collect();
    rows.sort_by(|a, b| (&a.record.rater, a.subset, a.position).cmp(&(&b.record.rater, b.subset, b.position)));
    rows
}

pub fn export_jsonl(rows: &[ExportRow]) -> Result<String, SessionError> {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

/// One row per live record; answers are kept as a JSON column.
pub fn export_csv(rows: &[ExportRow]) -> Result<String, SessionError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "rater",
        "strip_id",
        "subset",
        "position",
        "seq",
        "submitted_at",
        "schema_version",
        "answers",
    ])
    .map_err(std::io::Error::from)?;
    for r in rows {
        w.write_record([
            r.record.rater.clone(),
            r.record.strip_id.clone(),
            r.subset.to_string(),
            r.position.to_string(),
            r.record.seq.to_string(),
            r.record.submitted_at.to_rfc3339(),
            r.record.schema_version.to_string(),
            serde_json::to_string(&r.record.answers)?,
        ])
        .map_err(std::io::Error::from)?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
