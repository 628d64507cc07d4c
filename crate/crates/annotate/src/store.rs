use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use ptg_core::selection::SelectionRound;
use tracing::warn;

use crate::error::ServiceError;
use crate::state::{text_is_valid, AnnotationRecord, Event, LoggedEvent, ServiceState};

#[derive(Debug, Clone, Copy)]
pub struct StoreOptions {
    /// `fsync` after every appended event.
    pub fsync: bool,
}

impl Default for StoreOptions {
    fn default() -> Self {
        Self { fsync: true }
    }
}

/// Result of a submission.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Submission {
    pub record: AnnotationRecord,
    /// Replaced an earlier annotation of the pair.
    pub revised: bool,
    /// A retry of an already stored submission; nothing was logged.
    pub replayed: bool,
}

struct Writer {
    file: File,
    len: u64,
    state: Arc<ServiceState>,
}

/// Event-sourced store. Mutations serialize on one writer lock; reads clone
/// an `Arc` of the last committed state and never touch the log.
pub struct AnnotationStore {
    path: PathBuf,
    options: StoreOptions,
    writer: Mutex<Writer>,
    snapshot: RwLock<Arc<ServiceState>>,
}

/// Replays a log file. A trailing line without its newline is an unacknowledged
/// write and gets dropped; returns the state and the byte length that was kept.
fn replay(path: &Path, bytes: &[u8]) -> Result<(ServiceState, usize), ServiceError> {
    let mut state = ServiceState::default();
    let kept = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    for (n, line) in bytes[..kept].split(|&b| b == b'\n').enumerate() {
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let corrupt = |reason: String| ServiceError::CorruptLog {
            path: path.to_path_buf(),
            line: n + 1,
            reason,
        };
        let logged: LoggedEvent = serde_json::from_slice(line).map_err(|e| corrupt(e.to_string()))?;
        state.apply(&logged).map_err(|e| corrupt(e.to_string()))?;
    }
    Ok((state, kept))
}

impl AnnotationStore {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, ServiceError> {
        Self::open_with(path, StoreOptions::default())
    }

    pub fn open_with(path: impl AsRef<Path>, options: StoreOptions) -> Result<Self, ServiceError> {
        let path = path.as_ref().to_path_buf();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        let mut file = OpenOptions::new().read(true).append(true).create(true).open(&path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;
        let (state, kept) = replay(&path, &bytes)?;
        if kept < bytes.len() {
            warn!(
                path = %path.display(),
                dropped = bytes.len() - kept,
                "discarding torn trailing event"
            );
            file.set_len(kept as u64)?;
            file.sync_all()?;
        }
        let state = Arc::new(state);
        Ok(Self {
            path,
            options,
            writer: Mutex::new(Writer {
                file,
                len: kept as u64,
                state: state.clone(),
            }),
            snapshot: RwLock::new(state),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Latest committed state.
    pub fn snapshot(&self) -> Arc<ServiceState> {
        self.snapshot.read().clone()
    }

    /// Checks, appends and applies one event while holding the writer lock.
    fn commit(&self, writer: &mut Writer, event: Event) -> Result<LoggedEvent, ServiceError> {
        writer.state.check(&event)?;
        let logged = LoggedEvent {
            seq: writer.state.last_seq + 1,
            at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Micros, true),
            event,
        };
        let mut next = (*writer.state).clone();
        next.apply(&logged)?;

        let mut line = serde_json::to_vec(&logged).expect("events serialize");
        line.push(b'\n');
        let written = writer.file.write_all(&line).and_then(|()| {
            if self.options.fsync {
                writer.file.sync_data()
            } else {
                Ok(())
            }
        });
        if let Err(e) = written {
            // leave no half line behind for the next append
            let _ = writer.file.set_len(writer.len);
            return Err(e.into());
        }
        writer.len += line.len() as u64;
        writer.state = Arc::new(next);
        *self.snapshot.write() = writer.state.clone();
        Ok(logged)
    }

    /// Registers a selection round and opens it for annotation.
    pub fn create_round(&self, round: SelectionRound) -> Result<String, ServiceError> {
        let id = round.round_id.clone();
        let mut writer = self.writer.lock();
        self.commit(&mut writer, Event::RoundCreated { round })?;
        Ok(id)
    }

    /// Stores an annotation; a second one for the same pair is logged as a revision.
    pub fn submit_annotation(
        &self,
        round_id: &str,
        pair_id: &str,
        text: &str,
        annotator_id: &str,
        client_nonce: Option<&str>,
    ) -> Result<Submission, ServiceError> {
        if !text_is_valid(text) {
            return Err(ServiceError::EmptyText);
        }
        let mut writer = self.writer.lock();
        let round = writer.state.round(round_id)?;
        if let Some(earlier) = client_nonce.and_then(|n| round.by_nonce(pair_id, n)) {
            return Ok(Submission {
                record: earlier.clone(),
                revised: false,
                replayed: true,
            });
        }
        let revised = round.annotations.contains_key(pair_id);
        let key = (round_id.to_string(), pair_id.to_string());
        let (round_id, pair_id, text, annotator_id) = (
            round_id.to_string(),
            pair_id.to_string(),
            text.to_string(),
            annotator_id.trim().to_string(),
        );
        let client_nonce = client_nonce.map(str::to_string);
        let event = if revised {
            Event::AnnotationRevised {
                round_id,
                pair_id,
                text,
                annotator_id,
                client_nonce,
            }
        } else {
            Event::AnnotationSubmitted {
                round_id,
                pair_id,
                text,
                annotator_id,
                client_nonce,
            }
        };
        self.commit(&mut writer, event)?;
        let record = writer.state.rounds[&key.0].annotations[&key.1].clone();
        Ok(Submission {
            record,
            revised,
            replayed: false,
        })
    }

    /// Marks a fully annotated round exported and returns its manifest. Exporting
    /// an exported round returns the same bytes and logs nothing.
    pub fn export_round(&self, round_id: &str) -> Result<Vec<u8>, ServiceError> {
        let mut writer = self.writer.lock();
        let round = writer.state.round(round_id)?;
        if round.is_exported() {
            return round.manifest();
        }
        self.commit(
            &mut writer,
            Event::RoundExported {
                round_id: round_id.to_string(),
            },
        )?;
        writer.state.round(round_id)?.manifest()
    }

    /// Manifest of an already exported round.
    pub fn exported_manifest(&self, round_id: &str) -> Result<Vec<u8>, ServiceError> {
        let snapshot = self.snapshot();
        let round = snapshot.round(round_id)?;
        if !round.is_exported() {
            return Err(ServiceError::NotExported(round_id.to_string()));
        }
        round.manifest()
    }
}
