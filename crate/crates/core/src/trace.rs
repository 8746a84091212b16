//! Embedding-table access traces.
//!
//! Every hash-table read issued by forward interpolation and every
//! write-intent produced by the gradient scatter can be captured as an
//! [`AccessRecord`]. Records are kept in emission order. The analyses at the
//! bottom of this module characterise the address stream: the two addresses
//! of each x-adjacent vertex pair ("group"), the spread between groups of the
//! same point, and the number of distinct addresses per window of accesses.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const TRACE_MAGIC: [u8; 4] = *b"I3DT";
pub const TRACE_VERSION: u32 = 1;
pub const RECORD_BYTES: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    Forward,
    Backward,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Branch {
    Color,
    Density,
}

impl Branch {
    pub fn name(self) -> &'static str {
        match self {
            Branch::Color => "color",
            Branch::Density => "density",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AccessKind {
    Read,
    Write,
}

/// One embedding-table access.
///
/// `corner` is the vertex index inside the enclosing lattice cube, with bit 0
/// the x offset, bit 1 the y offset and bit 2 the z offset. The two vertices
/// of a group share y and z, so the group id is `corner >> 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct AccessRecord {
    pub iteration: u32,
    pub phase: Phase,
    pub branch: Branch,
    pub level: u8,
    pub point_id: u32,
    pub corner: u8,
    pub address: u32,
    pub kind: AccessKind,
}

impl AccessRecord {
    pub fn group_id(&self) -> u8 {
        self.corner >> 1
    }

    /// Flag word of the on-disk record.
    ///
    /// bit 0 phase (1 = backward), bit 1 branch (1 = density), bit 2 kind
    /// (1 = write), bits 3..=5 corner, bits 8..=15 level, rest zero.
    pub fn pack_flags(&self) -> u32 {
        let mut flags = 0u32;
        if self.phase == Phase::Backward {
            flags |= 1;
        }
        if self.branch == Branch::Density {
            flags |= 1 << 1;
        }
        if self.kind == AccessKind::Write {
            flags |= 1 << 2;
        }
        flags |= u32::from(self.corner & 0x7) << 3;
        flags |= u32::from(self.level) << 8;
        flags
    }

    pub fn to_bytes(&self) -> [u8; RECORD_BYTES] {
        let mut out = [0u8; RECORD_BYTES];
        out[0..4].copy_from_slice(&self.iteration.to_le_bytes());
        out[4..8].copy_from_slice(&self.address.to_le_bytes());
        out[8..12].copy_from_slice(&self.point_id.to_le_bytes());
        out[12..16].copy_from_slice(&self.pack_flags().to_le_bytes());
        out
    }

    /// Decodes one record; `offset` is only used for error messages.
    pub fn from_bytes(buf: &[u8; RECORD_BYTES], offset: u64) -> Result<Self> {
        let word = |i: usize| u32::from_le_bytes([buf[i], buf[i + 1], buf[i + 2], buf[i + 3]]);
        let flags = word(12);
        if flags & 0xffff_00c0 != 0 {
            return Err(Error::Format {
                offset: offset + 12,
                detail: format!("reserved flag bits set in {flags:#010x}"),
            });
        }
        Ok(Self {
            iteration: word(0),
            address: word(4),
            point_id: word(8),
            phase: if flags & 1 != 0 { Phase::Backward } else { Phase::Forward },
            branch: if flags & 2 != 0 { Branch::Density } else { Branch::Color },
            kind: if flags & 4 != 0 { AccessKind::Write } else { AccessKind::Read },
            corner: ((flags >> 3) & 0x7) as u8,
            level: ((flags >> 8) & 0xff) as u8,
        })
    }
}

/// Table geometry of one branch as seen by the trace consumer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BranchGeometry {
    pub table_size: u32,
    pub levels: u32,
    pub features: u32,
}

impl BranchGeometry {
    /// Total entry count across levels.
    pub fn entries(&self) -> u64 {
        u64::from(self.table_size) * u64::from(self.levels)
    }
}

/// Configuration snapshot stored at the head of a trace file.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceHeader {
    pub density: BranchGeometry,
    pub color: BranchGeometry,
    pub mlp_input: u32,
    pub mlp_hidden: u32,
    pub samples_per_ray: u32,
    pub batch_size: u32,
    pub seed: u64,
}

impl TraceHeader {
    pub fn geometry(&self, branch: Branch) -> BranchGeometry {
        match branch {
            Branch::Color => self.color,
            Branch::Density => self.density,
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (name, g) in [("density", self.density), ("color", self.color)] {
            s.push_str(&format!("{name}.table_size={}\n", g.table_size));
            s.push_str(&format!("{name}.levels={}\n", g.levels));
            s.push_str(&format!("{name}.features={}\n", g.features));
        }
        s.push_str(&format!("mlp.input={}\n", self.mlp_input));
        s.push_str(&format!("mlp.hidden={}\n", self.mlp_hidden));
        s.push_str(&format!("samples_per_ray={}\n", self.samples_per_ray));
        s.push_str(&format!("batch_size={}\n", self.batch_size));
        s.push_str(&format!("seed={}\n", self.seed));
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut map = HashMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::MalformedTrace(format!("header line without '=': {line:?}")))?;
            map.insert(k.trim(), v.trim());
        }
        let get = |key: &str| -> Result<u64> {
            map.get(key)
                .ok_or_else(|| Error::MalformedTrace(format!("header is missing {key}")))?
                .parse::<u64>()
                .map_err(|e| Error::MalformedTrace(format!("header field {key}: {e}")))
        };
        let get32 = |key: &str| -> Result<u32> {
            u32::try_from(get(key)?).map_err(|_| Error::MalformedTrace(format!("header field {key} exceeds u32")))
        };
        let geom = |name: &str| -> Result<BranchGeometry> {
            Ok(BranchGeometry {
                table_size: get32(&format!("{name}.table_size"))?,
                levels: get32(&format!("{name}.levels"))?,
                features: get32(&format!("{name}.features"))?,
            })
        };
        Ok(Self {
            density: geom("density")?,
            color: geom("color")?,
            mlp_input: get32("mlp.input")?,
            mlp_hidden: get32("mlp.hidden")?,
            samples_per_ray: get32("samples_per_ray")?,
            batch_size: get32("batch_size")?,
            seed: get("seed")?,
        })
    }
}

/// Destination for access records.
pub trait TraceSink {
    fn record(&mut self, rec: AccessRecord) -> Result<()>;

    /// Marks the sink as finished. Further `record` calls fail.
    fn close(&mut self) -> Result<()>;

    fn record_all(&mut self, recs: &[AccessRecord]) -> Result<()> {
        for r in recs {
            self.record(*r)?;
        }
        Ok(())
    }
}

/// In-memory sink.
#[derive(Debug, Default)]
pub struct MemorySink {
    records: Vec<AccessRecord>,
    closed: bool,
}

impl MemorySink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> &[AccessRecord] {
        &self.records
    }

    pub fn into_trace(self, header: TraceHeader) -> AccessTrace {
        AccessTrace { header, records: self.records }
    }
}

impl TraceSink for MemorySink {
    fn record(&mut self, rec: AccessRecord) -> Result<()> {
        if self.closed {
            return Err(Error::SinkClosed);
        }
        self.records.push(rec);
        Ok(())
    }

    fn close(&mut self) -> Result<()> {
        self.closed = true;
        Ok(())
    }

    fn record_all(&mut self, recs: &[AccessRecord]) -> Result<()> {
        if self.closed {
            return Err(Error::SinkClosed);
        }
        self.records.extend_from_slice(recs);
        Ok(())
    }
}

/// Streaming writer for the binary trace format.
pub struct FileSink<W: Write> {
    out: Option<W>,
    count: u64,
}

impl FileSink<BufWriter<File>> {
    pub fn create(path: impl AsRef<Path>, header: &TraceHeader) -> Result<Self> {
        let file = File::create(path)?;
        Self::new(BufWriter::new(file), header)
    }
}

impl<W: Write> FileSink<W> {
    pub fn new(mut out: W, header: &TraceHeader) -> Result<Self> {
        let text = header.to_text();
        out.write_all(&TRACE_MAGIC)?;
        out.write_all(&TRACE_VERSION.to_le_bytes())?;
        out.write_all(&(text.len() as u32).to_le_bytes())?;
        out.write_all(text.as_bytes())?;
        Ok(Self { out: Some(out), count: 0 })
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Flushes and hands back the underlying writer.
    pub fn finish(mut self) -> Result<W> {
        let mut out = self.out.take().ok_or(Error::SinkClosed)?;
        out.flush()?;
        Ok(out)
    }
}

impl<W: Write> TraceSink for FileSink<W> {
    fn record(&mut self, rec: AccessRecord) -> Result<()> {
        let out = self.out.as_mut().ok_or(Error::SinkClosed)?;
        out.write_all(&rec.to_bytes())?;
        self.count += 1;
        Ok(())
    }

    fn close(&mut self) -> Result<()> {
        if let Some(mut out) = self.out.take() {
            out.flush()?;
        }
        Ok(())
    }
}

/// A fully materialised trace.
#[derive(Clone, Debug, PartialEq)]
pub struct AccessTrace {
    pub header: TraceHeader,
    pub records: Vec<AccessRecord>,
}

impl AccessTrace {
    pub fn new(header: TraceHeader) -> Self {
        Self { header, records: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records of one branch, in program order.
    pub fn branch_view(&self, branch: Branch) -> impl Iterator<Item = &AccessRecord> + '_ {
        self.records.iter().filter(move |r| r.branch == branch)
    }

    pub fn phase_view(&self, phase: Phase) -> impl Iterator<Item = &AccessRecord> + '_ {
        self.records.iter().filter(move |r| r.phase == phase)
    }

    pub fn iterations(&self) -> Vec<u32> {
        let set: std::collections::BTreeSet<u32> = self.records.iter().map(|r| r.iteration).collect();
        set.into_iter().collect()
    }

    pub fn write_to(&self, out: impl Write) -> Result<()> {
        let mut sink = FileSink::new(out, &self.header)?;
        sink.record_all(&self.records)?;
        sink.finish()?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn read_from(mut input: impl Read) -> Result<Self> {
        let mut buf = Vec::new();
        input.read_to_end(&mut buf)?;
        Self::parse(&buf)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let truncated = |offset: usize, what: &str| Error::Format {
            offset: offset as u64,
            detail: format!("truncated {what}"),
        };
        if bytes.len() < 4 {
            return Err(truncated(0, "magic"));
        }
        if bytes[0..4] != TRACE_MAGIC {
            return Err(Error::Format { offset: 0, detail: "bad magic, expected I3DT".into() });
        }
        let word = |off: usize| -> Result<u32> {
            bytes
                .get(off..off + 4)
                .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .ok_or_else(|| truncated(off, "header word"))
        };
        let version = word(4)?;
        if version != TRACE_VERSION {
            return Err(Error::Format { offset: 4, detail: format!("unsupported trace version {version}") });
        }
        let header_len = word(8)? as usize;
        let header_start = 12;
        let header_end = header_start + header_len;
        let header_bytes = bytes.get(header_start..header_end).ok_or_else(|| truncated(header_start, "header text"))?;
        let text = std::str::from_utf8(header_bytes).map_err(|e| Error::Format {
            offset: (header_start + e.valid_up_to()) as u64,
            detail: "header is not UTF-8".into(),
        })?;
        let header = TraceHeader::from_text(text)?;
        let body = &bytes[header_end..];
        let whole = body.len() / RECORD_BYTES * RECORD_BYTES;
        if whole != body.len() {
            return Err(truncated(header_end + whole, "record"));
        }
        let mut records = Vec::with_capacity(body.len() / RECORD_BYTES);
        for (i, chunk) in body.chunks_exact(RECORD_BYTES).enumerate() {
            let arr: &[u8; RECORD_BYTES] = chunk.try_into().expect("exact chunk");
            records.push(AccessRecord::from_bytes(arr, (header_end + i * RECORD_BYTES) as u64)?);
        }
        Ok(Self { header, records })
    }
}

type GroupKey = (u32, Branch, u8, u32, u8);

/// Collects forward reads per (iteration, branch, level, point, group) and
/// returns the two addresses of each group ordered by the x bit of the corner.
fn collect_groups<'a>(records: impl IntoIterator<Item = &'a AccessRecord>) -> Result<BTreeMap<GroupKey, [u32; 2]>> {
    let mut members: BTreeMap<GroupKey, Vec<(u8, u32)>> = BTreeMap::new();
    for r in records {
        if r.phase != Phase::Forward || r.kind != AccessKind::Read {
            continue;
        }
        members
            .entry((r.iteration, r.branch, r.level, r.point_id, r.group_id()))
            .or_default()
            .push((r.corner & 1, r.address));
    }
    let mut out = BTreeMap::new();
    for (key, mut m) in members {
        if m.len() != 2 {
            return Err(Error::MalformedTrace(format!(
                "group {} of point {} (iteration {}, {} level {}) has {} members",
                key.4,
                key.3,
                key.0,
                key.1.name(),
                key.2,
                m.len()
            )));
        }
        m.sort_by_key(|&(xbit, _)| xbit);
        out.insert(key, [m[0].1, m[1].1]);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntraGroupReport {
    /// Signed delta `addr(x + 1) - addr(x)` for every group, in key order.
    pub deltas: Vec<i64>,
    pub histogram: BTreeMap<i64, u64>,
    pub fraction_within_5: f64,
}

/// Signed post-modulo address delta inside each x-adjacent vertex pair.
pub fn intra_group_distances<'a>(records: impl IntoIterator<Item = &'a AccessRecord>) -> Result<IntraGroupReport> {
    let groups = collect_groups(records)?;
    let deltas: Vec<i64> = groups.values().map(|[lo, hi]| i64::from(*hi) - i64::from(*lo)).collect();
    let mut histogram = BTreeMap::new();
    for &d in &deltas {
        *histogram.entry(d).or_insert(0) += 1;
    }
    let within = deltas.iter().filter(|d| d.abs() <= 5).count();
    let fraction_within_5 = if deltas.is_empty() { 0.0 } else { within as f64 / deltas.len() as f64 };
    Ok(IntraGroupReport { deltas, histogram, fraction_within_5 })
}

#[derive(Clone, Debug, PartialEq)]
pub struct InterGroupReport {
    pub pairs: u64,
    pub mean: f64,
    pub median: f64,
}

/// Pairwise |delta| between the representative (x = 0) addresses of the
/// groups of each point.
pub fn inter_group_distances<'a>(records: impl IntoIterator<Item = &'a AccessRecord>) -> Result<InterGroupReport> {
    let groups = collect_groups(records)?;
    let mut per_point: BTreeMap<(u32, Branch, u8, u32), Vec<u32>> = BTreeMap::new();
    for ((it, br, lvl, pt, _), [lo, _]) in groups {
        per_point.entry((it, br, lvl, pt)).or_default().push(lo);
    }
    let mut dists = Vec::new();
    for reps in per_point.values() {
        for i in 0..reps.len() {
            for j in i + 1..reps.len() {
                dists.push((i64::from(reps[i]) - i64::from(reps[j])).unsigned_abs());
            }
        }
    }
    if dists.is_empty() {
        return Ok(InterGroupReport { pairs: 0, mean: 0.0, median: 0.0 });
    }
    let mean = dists.iter().map(|&d| d as f64).sum::<f64>() / dists.len() as f64;
    dists.sort_unstable();
    let n = dists.len();
    let median = if n % 2 == 1 {
        dists[n / 2] as f64
    } else {
        (dists[n / 2 - 1] as f64 + dists[n / 2] as f64) / 2.0
    };
    Ok(InterGroupReport { pairs: n as u64, mean, median })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WindowMode {
    /// Contiguous windows with stride equal to the window length.
    Tiled,
    /// One window per start offset.
    Sliding,
}

/// Distinct-address count per window of `window` consecutive accesses.
///
/// Addresses are keyed by (branch, level, address) since every level owns a
/// separate table. A trailing partial window is dropped.
pub fn unique_window_series<'a>(
    records: impl IntoIterator<Item = &'a AccessRecord>,
    window: usize,
    mode: WindowMode,
) -> Result<Vec<usize>> {
    if window == 0 {
        return Err(Error::Contract("window must be at least 1".into()));
    }
    let keys: Vec<(Branch, u8, u32)> = records.into_iter().map(|r| (r.branch, r.level, r.address)).collect();
    if keys.len() < window {
        return Ok(Vec::new());
    }
    match mode {
        WindowMode::Tiled => Ok(keys
            .chunks_exact(window)
            .map(|w| w.iter().collect::<HashSet<_>>().len())
            .collect()),
        WindowMode::Sliding => {
            let mut counts: HashMap<(Branch, u8, u32), usize> = HashMap::new();
            for k in &keys[..window] {
                *counts.entry(*k).or_insert(0) += 1;
            }
            let mut out = vec![counts.len()];
            for i in window..keys.len() {
                *counts.entry(keys[i]).or_insert(0) += 1;
                let old = keys[i - window];
                let c = counts.get_mut(&old).expect("key present in window");
                *c -= 1;
                if *c == 0 {
                    counts.remove(&old);
                }
                out.push(counts.len());
            }
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(point_id: u32, corner: u8, address: u32) -> AccessRecord {
        AccessRecord {
            iteration: 0,
            phase: Phase::Forward,
            branch: Branch::Density,
            level: 0,
            point_id,
            corner,
            address,
            kind: AccessKind::Read,
        }
    }

    fn header() -> TraceHeader {
        let g = BranchGeometry { table_size: 1 << 16, levels: 1, features: 2 };
        TraceHeader {
            density: g,
            color: g,
            mlp_input: 31,
            mlp_hidden: 64,
            samples_per_ray: 8,
            batch_size: 4,
            seed: 1,
        }
    }

    #[test]
    fn record_roundtrip_through_sink() {
        let r = AccessRecord {
            iteration: 7,
            phase: Phase::Backward,
            branch: Branch::Color,
            level: 3,
            point_id: 99,
            corner: 5,
            address: 12345,
            kind: AccessKind::Write,
        };
        let mut sink = MemorySink::new();
        sink.record(r).unwrap();
        assert_eq!(sink.records()[0], r);
        let back = AccessRecord::from_bytes(&r.to_bytes(), 0).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.group_id(), 2);
    }

    #[test]
    fn closed_sink_rejects_records() {
        let mut sink = MemorySink::new();
        sink.close().unwrap();
        assert!(matches!(sink.record(rec(0, 0, 0)), Err(Error::SinkClosed)));
        let mut fsink = FileSink::new(Vec::new(), &header()).unwrap();
        fsink.close().unwrap();
        assert!(matches!(fsink.record(rec(0, 0, 0)), Err(Error::SinkClosed)));
    }

    #[test]
    fn million_records_preserved() {
        let mut sink = MemorySink::new();
        for i in 0..1_000_000u32 {
            sink.record(rec(i, (i % 8) as u8, i)).unwrap();
        }
        assert_eq!(sink.records().len(), 1_000_000);
    }

    #[test]
    fn branch_views_partition_trace() {
        let mut t = AccessTrace::new(header());
        for i in 0..100u32 {
            let mut r = rec(i, 0, i);
            r.branch = if i % 3 == 0 { Branch::Color } else { Branch::Density };
            t.records.push(r);
        }
        let c: Vec<_> = t.branch_view(Branch::Color).collect();
        let d: Vec<_> = t.branch_view(Branch::Density).collect();
        assert_eq!(c.len() + d.len(), t.len());
        assert!(c.iter().all(|r| r.branch == Branch::Color));
        assert!(d.iter().all(|r| r.branch == Branch::Density));
        // program order is kept within each view
        assert!(c.windows(2).all(|w| w[0].point_id < w[1].point_id));
    }

    #[test]
    fn file_roundtrip_and_truncation() {
        let mut t = AccessTrace::new(header());
        for i in 0..10 {
            t.records.push(rec(i, (i % 8) as u8, 1000 + i));
        }
        let mut bytes = Vec::new();
        t.write_to(&mut bytes).unwrap();
        assert_eq!(AccessTrace::parse(&bytes).unwrap(), t);

        let cut = &bytes[..bytes.len() - 5];
        match AccessTrace::parse(cut) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset as usize, bytes.len() - 16),
            other => panic!("expected format error, got {other:?}"),
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(AccessTrace::parse(&bad), Err(Error::Format { offset: 0, .. })));
        let mut badver = bytes;
        badver[4] = 9;
        assert!(matches!(AccessTrace::parse(&badver), Err(Error::Format { offset: 4, .. })));
    }

    #[test]
    fn intra_group_examples() {
        let same = [rec(0, 0, 42), rec(0, 1, 42)];
        assert_eq!(intra_group_distances(&same).unwrap().deltas, vec![0]);
        let pair = [rec(0, 2, 100), rec(0, 3, 101)];
        let rep = intra_group_distances(&pair).unwrap();
        assert_eq!(rep.deltas, vec![1]);
        assert_eq!(rep.fraction_within_5, 1.0);
        let lonely = [rec(0, 2, 100)];
        assert!(matches!(intra_group_distances(&lonely), Err(Error::MalformedTrace(_))));
    }

    #[test]
    fn inter_group_examples() {
        let all_same: Vec<_> = (0..8).map(|c| rec(0, c, 7)).collect();
        assert_eq!(inter_group_distances(&all_same).unwrap().mean, 0.0);
        let two = [rec(0, 0, 0), rec(0, 1, 0), rec(0, 2, 60000), rec(0, 3, 60000)];
        let rep = inter_group_distances(&two).unwrap();
        assert_eq!(rep.pairs, 1);
        assert_eq!(rep.mean, 60000.0);
    }

    #[test]
    fn window_examples() {
        let same: Vec<_> = (0..1000).map(|i| rec(i, 0, 5)).collect();
        assert_eq!(unique_window_series(&same, 1000, WindowMode::Tiled).unwrap(), vec![1]);
        let distinct: Vec<_> = (0..1000).map(|i| rec(i, 0, i)).collect();
        assert_eq!(unique_window_series(&distinct, 1000, WindowMode::Tiled).unwrap(), vec![1000]);
        assert!(unique_window_series(&[], 1000, WindowMode::Tiled).unwrap().is_empty());
        assert!(unique_window_series(&distinct, 0, WindowMode::Tiled).is_err());
    }

    #[test]
    fn sliding_matches_brute_force() {
        let recs: Vec<_> = (0..300u32).map(|i| rec(i, 0, (i * 7919) % 37)).collect();
        let fast = unique_window_series(&recs, 25, WindowMode::Sliding).unwrap();
        let brute: Vec<usize> = (0..=recs.len() - 25)
            .map(|s| recs[s..s + 25].iter().map(|r| r.address).collect::<HashSet<_>>().len())
            .collect();
        assert_eq!(fast, brute);
    }

    #[test]
    fn header_text_roundtrip() {
        let h = header();
        assert_eq!(TraceHeader::from_text(&h.to_text()).unwrap(), h);
        assert!(TraceHeader::from_text("density.levels=1\n").is_err());
    }
}
