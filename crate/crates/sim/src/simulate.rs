//! Trace-driven accelerator model.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use instant3d::trace::{AccessKind, AccessRecord, AccessTrace, Branch, BranchGeometry, Phase};
use serde::{Deserialize, Serialize};

use crate::bank::SramBankModel;
use crate::bum::{bum_process, BumConfig};
use crate::error::{contract, Result};
use crate::frm::{frm_cycles, naive_cycles, IssueStats};
use crate::fusion::{select_fusion, table_bytes, FusionMode, BANKS_PER_CORE, GRID_CORES};
use crate::mlp_model::{forward_cycles, MlpUnits};

/// Interpolation corners per point and level.
pub const CORNERS: usize = 8;

/// Bytes streamed from DRAM per point in the forward pass: position and
/// direction in, density and color out, all half precision.
pub const FORWARD_BYTES_PER_POINT: u64 = (3 + 3 + 4) * 2;
/// Upstream gradient of density and color per point.
pub const BACKWARD_BYTES_PER_POINT: u64 = 4 * 2;

pub const CSV_HEADER: &str = "phase,unit,cycles,reads,writes_naive,writes_merged,bank_util";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub row_width: u32,
    pub frm: bool,
    pub frm_window: usize,
    /// Bank cycles per table update; 2 models read-modify-write on a single port.
    pub update_cycles: u64,
    pub bum: bool,
    pub bum_unit: BumConfig,
    /// Forces one fusion mode for both branches instead of sizing by table bytes.
    pub fusion: Option<FusionMode>,
    pub mlp: MlpUnits,
    /// Fixed-function grid stages (coordinate pre-compute, hashing) per phase.
    pub pipeline_depth: u64,
    /// Optional per-iteration host cost; zero leaves host work out of the totals.
    pub host_overhead: u64,
    pub clock_ghz: f64,
    pub dram_gbps: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            row_width: 8,
            frm: true,
            frm_window: 16,
            update_cycles: 2,
            bum: true,
            bum_unit: BumConfig::default(),
            fusion: None,
            mlp: MlpUnits::default(),
            pipeline_depth: 12,
            host_overhead: 0,
            clock_ghz: 0.8,
            dram_gbps: 59.7,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.row_width == 0 || self.frm_window == 0 || self.update_cycles == 0 {
            return Err(contract("row_width, frm_window and update_cycles must be positive"));
        }
        if self.bum_unit.entries == 0 || self.bum_unit.inputs_per_cycle == 0 {
            return Err(contract("BUM needs at least one entry and one input per cycle"));
        }
        if self.mlp.systolic_size == 0 || self.mlp.adder_tree_width == 0 {
            return Err(contract("MLP unit sizes must be positive"));
        }
        if !(self.clock_ghz > 0.0 && self.dram_gbps > 0.0) {
            return Err(contract("clock and DRAM bandwidth must be positive"));
        }
        Ok(())
    }

    pub fn dram_bytes_per_cycle(&self) -> f64 {
        self.dram_gbps / self.clock_ghz
    }

    fn mode_for(&self, geo: &BranchGeometry) -> Result<FusionMode> {
        match self.fusion {
            Some(m) => Ok(m),
            None => select_fusion(table_bytes(u64::from(geo.table_size), u64::from(geo.features))),
        }
    }
}

/// Grid-core totals for one branch in one phase.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GridStats {
    pub cycles: u64,
    pub reads: u64,
    pub writes_naive: u64,
    pub writes_merged: u64,
    /// Bank activations after row sharing.
    pub physical: u64,
}

impl GridStats {
    fn add(&mut self, o: &GridStats) {
        self.cycles += o.cycles;
        self.reads += o.reads;
        self.writes_naive += o.writes_naive;
        self.writes_merged += o.writes_merged;
        self.physical += o.physical;
    }

    /// Activations over all chip banks and cycles.
    pub fn bank_util(&self) -> f64 {
        if self.cycles == 0 {
            0.0
        } else {
            self.physical as f64 / (f64::from(GRID_CORES * BANKS_PER_CORE) * self.cycles as f64)
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PhaseStats {
    pub density: GridStats,
    pub color: GridStats,
    pub mlp: u64,
    pub dram: u64,
    /// Data cycles summed over iterations.
    pub data: u64,
}

impl PhaseStats {
    pub fn grid_cycles(&self) -> u64 {
        self.density.cycles + self.color.cycles
    }

    fn grid(&self) -> GridStats {
        let mut g = self.density;
        g.add(&self.color);
        g
    }

    fn branch_mut(&mut self, b: Branch) -> &mut GridStats {
        match b {
            Branch::Density => &mut self.density,
            Branch::Color => &mut self.color,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub phase: &'static str,
    pub unit: &'static str,
    pub cycles: u64,
    pub reads: u64,
    pub writes_naive: u64,
    pub writes_merged: u64,
    pub bank_util: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimReport {
    pub forward: PhaseStats,
    pub backward: PhaseStats,
    pub iterations: u64,
    pub pipeline_cycles: u64,
    pub host_cycles: u64,
    pub total_cycles: u64,
    pub density_mode: FusionMode,
    pub color_mode: FusionMode,
    pub clock_ghz: f64,
}

impl SimReport {
    pub fn reads_requested(&self) -> u64 {
        self.forward.grid().reads
    }

    /// Every request is eventually issued, so served equals requested.
    pub fn reads_served(&self) -> u64 {
        self.reads_requested()
    }

    pub fn writes_naive(&self) -> u64 {
        self.backward.grid().writes_naive
    }

    pub fn writes_merged(&self) -> u64 {
        self.backward.grid().writes_merged
    }

    /// Forward grid-core cycles.
    pub fn grid_read_cycles(&self) -> u64 {
        self.forward.grid_cycles()
    }

    /// Forward plus backward grid-core cycles.
    pub fn grid_phase_cycles(&self) -> u64 {
        self.forward.grid_cycles() + self.backward.grid_cycles()
    }

    pub fn seconds(&self) -> f64 {
        self.total_cycles as f64 / (self.clock_ghz * 1e9)
    }

    pub fn rows(&self) -> Vec<ReportRow> {
        let mut rows = Vec::new();
        let depth = self.pipeline_cycles / 2;
        for (name, p) in [("forward", &self.forward), ("backward", &self.backward)] {
            let grid_row = |unit, g: &GridStats| ReportRow {
                phase: name,
                unit,
                cycles: g.cycles,
                reads: g.reads,
                writes_naive: g.writes_naive,
                writes_merged: g.writes_merged,
                bank_util: g.bank_util(),
            };
            let plain = |unit, cycles| ReportRow {
                phase: name,
                unit,
                cycles,
                reads: 0,
                writes_naive: 0,
                writes_merged: 0,
                bank_util: 0.0,
            };
            rows.push(grid_row("grid_density", &p.density));
            rows.push(grid_row("grid_color", &p.color));
            rows.push(plain("mlp", p.mlp));
            rows.push(plain("dram_stall", p.data - p.grid_cycles().max(p.mlp).min(p.data)));
            rows.push(plain("pipeline", depth));
            let mut total = grid_row("total", &p.grid());
            total.cycles = p.data + depth;
            rows.push(total);
        }
        let all = {
            let mut g = self.forward.grid();
            g.add(&self.backward.grid());
            g
        };
        rows.push(ReportRow {
            phase: "run",
            unit: "host",
            cycles: self.host_cycles,
            reads: 0,
            writes_naive: 0,
            writes_merged: 0,
            bank_util: 0.0,
        });
        rows.push(ReportRow {
            phase: "run",
            unit: "total",
            cycles: self.total_cycles,
            reads: all.reads,
            writes_naive: all.writes_naive,
            writes_merged: all.writes_merged,
            bank_util: all.bank_util(),
        });
        rows
    }

    pub fn csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in self.rows() {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{:.6}",
                r.phase, r.unit, r.cycles, r.reads, r.writes_naive, r.writes_merged, r.bank_util
            );
        }
        s
    }
}

/// Address streams of one (iteration, phase, branch), split by level.
struct Stream {
    by_level: BTreeMap<u8, Vec<u64>>,
    reads: u64,
}

fn check_record(r: &AccessRecord, geo: &BranchGeometry) -> Result<()> {
    if u32::from(r.level) >= geo.levels {
        return Err(contract(format!(
            "{} level {} outside configured {} levels",
            r.branch.name(),
            r.level,
            geo.levels
        )));
    }
    if r.address >= geo.table_size {
        return Err(contract(format!(
            "{} address {} outside table of {} entries",
            r.branch.name(),
            r.address,
            geo.table_size
        )));
    }
    let expected = match r.phase {
        Phase::Forward => AccessKind::Read,
        Phase::Backward => AccessKind::Write,
    };
    if r.kind != expected {
        return Err(contract(format!("{:?} record with {:?} access", r.phase, r.kind)));
    }
    Ok(())
}

/// Issue stats of one core group's request stream.
fn schedule_reads(addrs: &[u64], cfg: &SimConfig, model: &SramBankModel, cores: u32) -> IssueStats {
    if cfg.frm {
        frm_cycles(addrs, cfg.frm_window * cores as usize, model)
    } else {
        naive_cycles(addrs, CORNERS, model)
    }
}

/// Update slots when each point's eight updates are applied on their own.
/// Updates are entry-granular, so unlike reads they never share a row access.
fn serial_update_cycles(addrs: &[u64], model: &SramBankModel) -> u64 {
    let mut load = vec![0u64; model.bank_count as usize];
    let mut total = 0;
    for batch in addrs.chunks(CORNERS) {
        load.iter_mut().for_each(|l| *l = 0);
        for &a in batch {
            load[model.slot(a).bank as usize] += 1;
        }
        total += load.iter().max().copied().unwrap_or(0);
    }
    total
}

fn schedule_writes(addrs: &[u64], cfg: &SimConfig, model: &SramBankModel, cores: u32) -> GridStats {
    let n = addrs.len() as u64;
    if !cfg.bum {
        return GridStats {
            cycles: serial_update_cycles(addrs, model) * cfg.update_cycles,
            writes_naive: n,
            writes_merged: n,
            physical: n,
            reads: 0,
        };
    }
    let unit = BumConfig {
        entries: cfg.bum_unit.entries * cores as usize,
        inputs_per_cycle: cfg.bum_unit.inputs_per_cycle * cores as usize,
        ..cfg.bum_unit
    };
    let stream: Vec<(u64, f64)> = addrs.iter().map(|&a| (a, 1.0)).collect();
    let out = bum_process(&stream, &unit);
    // banks take write-backs in emission order, one update at a time
    let mut free_at = vec![0u64; model.bank_count as usize];
    let mut finish = 0;
    for w in &out.writes {
        let b = model.slot(w.address).bank as usize;
        free_at[b] = free_at[b].max(w.cycle) + cfg.update_cycles;
        finish = finish.max(free_at[b]);
    }
    GridStats {
        cycles: out.cycles.max(finish),
        writes_naive: n,
        writes_merged: out.writes.len() as u64,
        physical: out.writes.len() as u64,
        reads: 0,
    }
}

fn run_branch(stream: &Stream, phase: Phase, mode: FusionMode, table_size: u64, cfg: &SimConfig) -> GridStats {
    let groups = mode.groups();
    let cores = mode.cores_per_group();
    let model = SramBankModel { bank_count: mode.banks_per_group(), row_width: cfg.row_width };
    let mut per_group: Vec<Vec<u64>> = vec![Vec::new(); groups as usize];
    // levels are dealt round-robin to the independent core groups
    for (&level, addrs) in &stream.by_level {
        let g = u32::from(level) % groups;
        let base = u64::from(level) * table_size;
        per_group[g as usize].extend(addrs.iter().map(|&a| base + a));
    }
    let mut total = GridStats::default();
    for addrs in per_group.iter().filter(|a| !a.is_empty()) {
        let g = match phase {
            Phase::Forward => {
                let s = schedule_reads(addrs, cfg, &model, cores);
                GridStats { cycles: s.cycles, reads: s.requests, physical: s.physical, ..Default::default() }
            }
            Phase::Backward => schedule_writes(addrs, cfg, &model, cores),
        };
        total.cycles = total.cycles.max(g.cycles);
        total.reads += g.reads;
        total.writes_naive += g.writes_naive;
        total.writes_merged += g.writes_merged;
        total.physical += g.physical;
    }
    debug_assert_eq!(total.reads, if phase == Phase::Forward { stream.reads } else { 0 });
    total
}

/// Checks that records arrive as complete runs of eight corners per point and level.
fn check_groups(records: &[&AccessRecord]) -> Result<()> {
    if records.len() % CORNERS != 0 {
        return Err(contract(format!("{} records is not a multiple of {CORNERS}", records.len())));
    }
    for chunk in records.chunks(CORNERS) {
        let head = chunk[0];
        if chunk.iter().any(|r| r.point_id != head.point_id || r.level != head.level) {
            return Err(contract(format!(
                "incomplete corner group for point {} level {}",
                head.point_id, head.level
            )));
        }
    }
    Ok(())
}

/// Replays a trace through the accelerator model.
///
/// Per iteration and phase, each branch runs on the core groups of its fusion
/// mode (levels dealt round-robin across groups, groups in parallel) and the
/// branches run one after the other. The phase takes the longest of the grid,
/// MLP and DRAM times. A constant pipeline fill per phase is added once.
pub fn simulate(trace: &AccessTrace, cfg: &SimConfig) -> Result<SimReport> {
    cfg.validate()?;
    let h = &trace.header;
    let density_mode = cfg.mode_for(&h.density)?;
    let color_mode = cfg.mode_for(&h.color)?;

    let mut keyed: BTreeMap<(u32, Phase, Branch), Vec<&AccessRecord>> = BTreeMap::new();
    let mut order: Vec<u32> = Vec::new();
    let mut points: BTreeMap<u32, HashSet<u32>> = BTreeMap::new();
    for r in &trace.records {
        check_record(r, &h.geometry(r.branch))?;
        if order.last() != Some(&r.iteration) && !order.contains(&r.iteration) {
            order.push(r.iteration);
        }
        if r.phase == Phase::Forward {
            points.entry(r.iteration).or_default().insert(r.point_id);
        }
        keyed.entry((r.iteration, r.phase, r.branch)).or_default().push(r);
    }

    let dims = [u64::from(h.mlp_input), u64::from(h.mlp_hidden), u64::from(h.mlp_hidden), 4];
    let bpc = cfg.dram_bytes_per_cycle();
    let mut forward = PhaseStats::default();
    let mut backward = PhaseStats::default();

    for &it in &order {
        let m = points.get(&it).map_or(0, |s| s.len() as u64);
        let mlp_fwd = if dims.iter().all(|&d| d > 0) { forward_cycles(m, &dims, &cfg.mlp) } else { 0 };
        for (phase, stats) in [(Phase::Forward, &mut forward), (Phase::Backward, &mut backward)] {
            let mut grid = 0;
            for branch in [Branch::Density, Branch::Color] {
                let Some(recs) = keyed.get(&(it, phase, branch)) else { continue };
                check_groups(recs)?;
                let geo = h.geometry(branch);
                let mode = if branch == Branch::Density { density_mode } else { color_mode };
                let mut stream = Stream { by_level: BTreeMap::new(), reads: 0 };
                for r in recs {
                    stream.by_level.entry(r.level).or_default().push(u64::from(r.address));
                }
                if phase == Phase::Forward {
                    stream.reads = recs.len() as u64;
                }
                let g = run_branch(&stream, phase, mode, u64::from(geo.table_size), cfg);
                grid += g.cycles;
                stats.branch_mut(branch).add(&g);
            }
            let (mlp, bytes) = match phase {
                // the backward pass forms both input and weight gradients
                Phase::Forward => (mlp_fwd, m * FORWARD_BYTES_PER_POINT),
                Phase::Backward => (2 * mlp_fwd, m * BACKWARD_BYTES_PER_POINT),
            };
            let dram = (bytes as f64 / bpc).ceil() as u64;
            stats.mlp += mlp;
            stats.dram += dram;
            stats.data += grid.max(mlp).max(dram);
        }
    }

    let iterations = order.len() as u64;
    let pipeline_cycles = 2 * cfg.pipeline_depth;
    let host_cycles = iterations * cfg.host_overhead;
    let total_cycles = forward.data + backward.data + pipeline_cycles + host_cycles;
    Ok(SimReport {
        forward,
        backward,
        iterations,
        pipeline_cycles,
        host_cycles,
        total_cycles,
        density_mode,
        color_mode,
        clock_ghz: cfg.clock_ghz,
    })
}
