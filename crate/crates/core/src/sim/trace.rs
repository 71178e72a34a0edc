use serde::{Deserialize, Serialize};

use crate::digest::Digest;

/// One traced event. Written as one JSON object per line.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub time_us: u64,
    pub node: u32,
    pub event: String,
    pub tournament: u64,
    pub digest: Digest,
}

/// Newline-delimited JSON, one record per line.
pub fn to_ndjson(records: &[TraceRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("trace record serializes"));
        out.push('\n');
    }
    out
}

pub fn from_ndjson(text: &str) -> serde_json::Result<Vec<TraceRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}
