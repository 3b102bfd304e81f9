//! File-backed event journal.
//!
//! `journal.jsonl` holds one `{"seq": n, "events": [...]}` document per
//! committed operation. A batch counts as acknowledged only once its line,
//! newline included, has been written and `sync_data` has returned.
//! `snapshot.json` holds `{"seq": n, "state": ...}`; loading replays journal
//! lines with a larger seq on top of it. Writing a snapshot empties the
//! journal.
//!
//! Recovery: trailing bytes after the last newline are the remains of an
//! interrupted write and are cut off. Any newline-terminated line that fails
//! to parse, or a gap in the seq numbers, is corruption and refuses the load.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use evote_core::system::{Event, EventSink, SinkError, State};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const JOURNAL_FILE: &str = "journal.jsonl";
pub const SNAPSHOT_FILE: &str = "snapshot.json";

#[derive(Debug, Error)]
pub enum JournalError {
    #[error("journal io on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("corrupt journal at line {line}: {reason}")]
    CorruptJournal { line: usize, reason: String },
    #[error("corrupt snapshot: {0}")]
    CorruptSnapshot(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> JournalError + '_ {
    move |source| JournalError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Serialize)]
struct LineOut<'a> {
    seq: u64,
    events: &'a [Event],
}

#[derive(Deserialize)]
struct LineIn {
    seq: u64,
    events: Vec<Event>,
}

#[derive(Serialize, Deserialize)]
struct SnapshotDoc {
    seq: u64,
    state: State,
}

/// What [`FileJournal::open`] found on disk.
#[derive(Debug)]
pub struct Recovered {
    /// `None` for an empty data directory.
    pub state: Option<State>,
    pub replayed_batches: usize,
    pub discarded_bytes: u64,
}

#[derive(Debug)]
pub struct FileJournal {
    dir: PathBuf,
    file: File,
    seq: u64,
    batches_since_snapshot: u64,
}

struct Scan {
    recovered: Recovered,
    seq: u64,
    complete_len: u64,
}

fn scan(dir: &Path) -> Result<Scan, JournalError> {
    let snapshot_path = dir.join(SNAPSHOT_FILE);
    let (base_seq, mut state) = match fs::read(&snapshot_path) {
        Ok(bytes) => {
            let doc: SnapshotDoc = serde_json::from_slice(&bytes)
                .map_err(|e| JournalError::CorruptSnapshot(e.to_string()))?;
            (doc.seq, Some(doc.state))
        }
        Err(e) if e.kind() == io::ErrorKind::NotFound => (0, None),
        Err(e) => return Err(io_err(&snapshot_path)(e)),
    };

    let journal_path = dir.join(JOURNAL_FILE);
    let bytes = match fs::read(&journal_path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(io_err(&journal_path)(e)),
    };
    let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);

    let mut seq = base_seq;
    let mut replayed_batches = 0;
    for (i, raw) in bytes[..complete].split(|&b| b == b'\n').enumerate() {
        if raw.is_empty() {
            continue;
        }
        let line: LineIn = serde_json::from_slice(raw).map_err(|e| JournalError::CorruptJournal {
            line: i + 1,
            reason: e.to_string(),
        })?;
        if line.seq <= base_seq {
            continue;
        }
        if line.seq != seq + 1 {
            return Err(JournalError::CorruptJournal {
                line: i + 1,
                reason: format!("expected seq {}, found {}", seq + 1, line.seq),
            });
        }
        let s = state.get_or_insert_with(State::default);
        for event in &line.events {
            s.apply(event);
        }
        seq = line.seq;
        replayed_batches += 1;
    }
    Ok(Scan {
        recovered: Recovered {
            state,
            replayed_batches,
            discarded_bytes: (bytes.len() - complete) as u64,
        },
        seq,
        complete_len: complete as u64,
    })
}

impl FileJournal {
    /// Opens (creating if needed) the journal in `dir` and rebuilds state.
    /// A torn trailing write is cut off the file.
    pub fn open(dir: &Path) -> Result<(Self, Recovered), JournalError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let scan = scan(dir)?;
        let journal_path = dir.join(JOURNAL_FILE);
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&journal_path)
            .map_err(io_err(&journal_path))?;
        if scan.recovered.discarded_bytes > 0 {
            log::warn!(
                "discarding {} bytes of an interrupted journal write",
                scan.recovered.discarded_bytes
            );
            file.set_len(scan.complete_len).map_err(io_err(&journal_path))?;
            file.sync_all().map_err(io_err(&journal_path))?;
        }
        Ok((
            Self {
                dir: dir.to_path_buf(),
                file,
                seq: scan.seq,
                batches_since_snapshot: scan.recovered.replayed_batches as u64,
            },
            scan.recovered,
        ))
    }

    /// Rebuilds state from `dir` without modifying anything on disk.
    pub fn load(dir: &Path) -> Result<Recovered, JournalError> {
        Ok(scan(dir)?.recovered)
    }

    pub fn seq(&self) -> u64 {
        self.seq
    }

    pub fn batches_since_snapshot(&self) -> u64 {
        self.batches_since_snapshot
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn append(&mut self, events: &[Event]) -> Result<(), JournalError> {
        let path = self.dir.join(JOURNAL_FILE);
        let mut line = serde_json::to_vec(&LineOut {
            seq: self.seq + 1,
            events,
        })
        .map_err(|e| io_err(&path)(io::Error::other(e)))?;
        line.push(b'\n');
        let before = self.file.metadata().map_err(io_err(&path))?.len();
        if let Err(e) = self.file.write_all(&line).and_then(|_| self.file.sync_data()) {
            // leave no partial line behind for the next append to follow
            let _ = self.file.set_len(before);
            return Err(io_err(&path)(e));
        }
        self.seq += 1;
        self.batches_since_snapshot += 1;
        Ok(())
    }

    /// Writes `state` (which must reflect every journaled batch) as the new
    /// snapshot, then empties the journal.
    pub fn write_snapshot(&mut self, state: &State) -> Result<(), JournalError> {
        let path = self.dir.join(SNAPSHOT_FILE);
        let tmp = self.dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        let body = serde_json::to_vec(&SnapshotDoc {
            seq: self.seq,
            state: state.clone(),
        })
        .map_err(|e| io_err(&path)(io::Error::other(e)))?;
        {
            let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
            f.write_all(&body).map_err(io_err(&tmp))?;
            f.sync_all().map_err(io_err(&tmp))?;
        }
        fs::rename(&tmp, &path).map_err(io_err(&path))?;
        if let Ok(d) = File::open(&self.dir) {
            let _ = d.sync_all();
        }
        // lines at or below the snapshot seq are skipped on load, so a crash
        // before this truncation is harmless
        let journal = self.dir.join(JOURNAL_FILE);
        self.file.set_len(0).map_err(io_err(&journal))?;
        self.file.sync_all().map_err(io_err(&journal))?;
        self.batches_since_snapshot = 0;
        Ok(())
    }
}

impl EventSink for FileJournal {
    fn record(&mut self, events: &[Event]) -> Result<(), SinkError> {
        self.append(events).map_err(|e| SinkError(e.to_string()))
    }
}

/// Handle that lets the service keep writing snapshots while the election
/// system owns the sink.
#[derive(Debug, Clone)]
pub struct SharedJournal(pub Arc<Mutex<FileJournal>>);

impl SharedJournal {
    pub fn new(journal: FileJournal) -> Self {
        Self(Arc::new(Mutex::new(journal)))
    }

    pub fn lock(&self) -> std::sync::MutexGuard<'_, FileJournal> {
        self.0.lock().unwrap_or_else(|p| p.into_inner())
    }
}

impl EventSink for SharedJournal {
    fn record(&mut self, events: &[Event]) -> Result<(), SinkError> {
        self.lock().record(events)
    }
}
