//! The run transcript: one JSON object per line, ordered by (tick, seq).

use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEvent {
    pub tick: u64,
    pub seq: u64,
    pub source: String,
    pub kind: String,
    pub payload: Value,
}

/// Shared append-only log. The runner moves the tick forward; every other
/// context just pushes.
#[derive(Default)]
pub struct TranscriptLog {
    tick: AtomicU64,
    events: Mutex<Vec<TranscriptEvent>>,
}

impl TranscriptLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_tick(&self, tick: u64) {
        self.tick.store(tick, Ordering::SeqCst);
    }

    pub fn push(&self, source: &str, kind: &str, payload: Value) {
        let mut ev = self.events.lock();
        let seq = ev.len() as u64;
        ev.push(TranscriptEvent {
            tick: self.tick.load(Ordering::SeqCst),
            seq,
            source: source.to_string(),
            kind: kind.to_string(),
            payload,
        });
    }

    pub fn events(&self) -> Vec<TranscriptEvent> {
        self.events.lock().clone()
    }

    pub fn len(&self) -> usize {
        self.events.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn to_jsonl(events: &[TranscriptEvent]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&serde_json::to_string(e).expect("event serializes"));
        out.push('\n');
    }
    out
}

pub fn write_jsonl(path: &Path, events: &[TranscriptEvent]) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(to_jsonl(events).as_bytes())?;
    f.flush()
}

/// Parses a transcript and checks the (tick, seq) ordering.
pub fn read_jsonl(path: &Path) -> Result<Vec<TranscriptEvent>, String> {
    let f = std::fs::File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut events: Vec<TranscriptEvent> = Vec::new();
    for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| format!("{}: {e}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let e: TranscriptEvent =
            serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", i + 1))?;
        if let Some(prev) = events.last() {
            if (e.tick, e.seq) <= (prev.tick, prev.seq) {
                return Err(format!("line {}: events out of order", i + 1));
            }
        }
        events.push(e);
    }
    Ok(events)
}
