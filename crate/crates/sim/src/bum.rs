//! Gradient-update merging buffer.

use std::collections::VecDeque;

use half::f16;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    Exact,
    /// Accumulate wide, round to 16-bit float on write-back.
    Half,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BumConfig {
    pub entries: usize,
    /// Idle cycles after which an entry is written back.
    pub evict_after: u64,
    pub inputs_per_cycle: usize,
    pub precision: Precision,
}

impl Default for BumConfig {
    fn default() -> Self {
        Self { entries: 16, evict_after: 64, inputs_per_cycle: 8, precision: Precision::Exact }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Writeback {
    pub address: u64,
    pub value: f64,
    /// Cycle in which the write leaves the buffer.
    pub cycle: u64,
    /// Index of the input that caused it; `None` for idle eviction and the final flush.
    pub trigger: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BumOutput {
    pub writes: Vec<Writeback>,
    pub inputs: usize,
    pub merged: usize,
    /// Cycles spent consuming the input, including the flush cycle.
    pub cycles: u64,
}

struct Entry {
    address: u64,
    value: f64,
    last_touch: u64,
}

/// Runs a write stream through the merge buffer.
///
/// A hit accumulates into the entry and resets its idle counter. A miss
/// inserts at the tail; a full buffer first writes back its head (oldest
/// insertion). Entries untouched for `evict_after` cycles are written back
/// and the end of the stream flushes everything left.
pub fn bum_process(stream: &[(u64, f64)], cfg: &BumConfig) -> BumOutput {
    assert!(cfg.entries > 0 && cfg.inputs_per_cycle > 0, "BUM needs capacity and input rate");
    let round = |v: f64| match cfg.precision {
        Precision::Exact => v,
        Precision::Half => f16::from_f64(v).to_f64(),
    };
    let mut buf: VecDeque<Entry> = VecDeque::with_capacity(cfg.entries);
    let mut out = BumOutput { inputs: stream.len(), ..Default::default() };
    let mut cycle = 0u64;

    for (chunk_no, chunk) in stream.chunks(cfg.inputs_per_cycle).enumerate() {
        cycle = chunk_no as u64;
        let mut i = 0;
        while i < buf.len() {
            if cycle - buf[i].last_touch >= cfg.evict_after {
                let e = buf.remove(i).expect("index in range");
                out.writes.push(Writeback { address: e.address, value: round(e.value), cycle, trigger: None });
            } else {
                i += 1;
            }
        }
        for (k, &(address, value)) in chunk.iter().enumerate() {
            let idx = chunk_no * cfg.inputs_per_cycle + k;
            if let Some(e) = buf.iter_mut().find(|e| e.address == address) {
                e.value += value;
                e.last_touch = cycle;
                out.merged += 1;
                continue;
            }
            if buf.len() == cfg.entries {
                let e = buf.pop_front().expect("full buffer");
                out.writes.push(Writeback { address: e.address, value: round(e.value), cycle, trigger: Some(idx) });
            }
            buf.push_back(Entry { address, value, last_touch: cycle });
        }
    }
    if !stream.is_empty() {
        cycle += 1;
        for e in buf.drain(..) {
            out.writes.push(Writeback { address: e.address, value: round(e.value), cycle, trigger: None });
        }
        out.cycles = cycle + 1;
    }
    out
}
