use std::io::{self, Write};

use hybrid_core::hash::Digest256;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub tick: u64,
    pub node: u32,
    pub kind: String,
    pub digest: Digest256,
}

/// Event log; records nothing unless enabled.
#[derive(Clone, Debug, Default)]
pub struct Trace {
    enabled: bool,
    records: Vec<TraceRecord>,
}

impl Trace {
    pub fn new(enabled: bool) -> Self {
        Trace { enabled, records: Vec::new() }
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    pub fn record(&mut self, tick: u64, node: u32, kind: &str, digest: Digest256) {
        if self.enabled {
            self.records.push(TraceRecord { tick, node, kind: kind.to_string(), digest });
        }
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}
