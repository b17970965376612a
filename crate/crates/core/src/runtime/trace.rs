//! Newline-delimited JSON trace events.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Spawn,
    TxnStart,
    Co,
    Embed,
    Commit,
    Abort,
    Sync,
    Block,
    Finish,
    Kill,
    StaleDrop,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TraceEvent {
    pub seq: u64,
    pub wall_nanos: u64,
    pub kind: EventKind,
    pub thread: Option<u64>,
    pub txn: Option<u64>,
    /// Transactions from the root down to the node where the event happened.
    pub path: Vec<u64>,
    pub extra: serde_json::Value,
}

pub fn write_ndjson(events: &[TraceEvent], mut out: impl Write) -> io::Result<()> {
    for e in events {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn to_ndjson(events: &[TraceEvent]) -> String {
    let mut buf = Vec::new();
    write_ndjson(events, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("json is utf-8")
}

pub fn read_ndjson(input: impl BufRead) -> io::Result<Vec<TraceEvent>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e = serde_json::from_str(&line)
            .map_err(|err| io::Error::new(io::ErrorKind::InvalidData, format!("line {}: {err}", i + 1)))?;
        out.push(e);
    }
    Ok(out)
}
