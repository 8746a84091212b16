//! Multiresolution hash-grid embedding storage.
//!
//! Each level is a lattice of `resolution^3` vertices whose coordinates are
//! hashed into a table of `table_size` entries with
//! `(pi1*x ^ pi2*y ^ pi3*z) mod T`, evaluated in wrapping 32-bit arithmetic.
//! A query point is mapped to the lattice cube that contains it and the eight
//! corner embeddings are blended with trilinear weights.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{contract, Error, Result};
use crate::trace::{AccessKind, AccessRecord, Branch, Phase, TraceSink};

pub const GRID_MAGIC: [u8; 4] = *b"I3DG";
pub const GRID_VERSION: u32 = 1;

pub const PI1: u32 = 1;
pub const PI2: u32 = 2_654_435_761;
pub const PI3: u32 = 805_459_861;

#[derive(Clone, Debug, PartialEq)]
pub struct HashConfig {
    /// Entries per level; must be a power of two.
    pub table_size: u32,
    pub features: usize,
    /// Lattice vertices per axis at level 0.
    pub base_resolution: u32,
    pub levels: u32,
    pub growth_factor: f64,
    pub primes: [u32; 3],
}

impl Default for HashConfig {
    fn default() -> Self {
        Self {
            table_size: 1 << 14,
            features: 2,
            base_resolution: 16,
            levels: 4,
            growth_factor: 2.0,
            primes: [PI1, PI2, PI3],
        }
    }
}

impl HashConfig {
    pub fn single_level(table_size: u32, resolution: u32) -> Self {
        Self {
            table_size,
            base_resolution: resolution,
            levels: 1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.table_size == 0 || !self.table_size.is_power_of_two() {
            return Err(contract(format!("table size {} is not a power of two", self.table_size)));
        }
        if self.features == 0 {
            return Err(contract("features per entry must be positive"));
        }
        if self.levels == 0 || self.levels > 255 {
            return Err(contract(format!("level count {} outside 1..=255", self.levels)));
        }
        if self.base_resolution < 2 {
            return Err(contract(format!("resolution {} below 2", self.base_resolution)));
        }
        if !(self.growth_factor.is_finite() && self.growth_factor >= 1.0) {
            return Err(contract(format!("growth factor {} must be >= 1", self.growth_factor)));
        }
        Ok(())
    }

    /// Vertices per axis at `level`.
    pub fn resolution(&self, level: u32) -> u32 {
        let r = (f64::from(self.base_resolution) * self.growth_factor.powi(level as i32)).floor();
        (r as u32).max(2)
    }

    /// Length of the interpolated embedding (levels x features).
    pub fn embedding_dim(&self) -> usize {
        self.levels as usize * self.features
    }

    pub fn entries_per_level(&self) -> usize {
        self.table_size as usize * self.features
    }

    /// Storage footprint at 16-bit precision.
    pub fn half_precision_bytes(&self) -> u64 {
        u64::from(self.table_size) * u64::from(self.levels) * self.features as u64 * 2
    }
}

/// `(pi1*x ^ pi2*y ^ pi3*z) mod T` with wrapping 32-bit products.
#[inline]
pub fn hash_index(coord: [u32; 3], config: &HashConfig) -> u32 {
    spatial_hash(coord, config.primes, config.table_size)
}

#[inline]
pub fn spatial_hash(coord: [u32; 3], primes: [u32; 3], table_size: u32) -> u32 {
    let h = coord[0].wrapping_mul(primes[0]) ^ coord[1].wrapping_mul(primes[1]) ^ coord[2].wrapping_mul(primes[2]);
    h & (table_size - 1)
}

/// The eight lattice vertices around a query point at one level.
///
/// Corner `c` has offsets `(c & 1, (c >> 1) & 1, (c >> 2) & 1)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridCube {
    pub vertex_coords: [[u32; 3]; 8],
    pub vertex_addresses: [u32; 8],
    pub weights: [f64; 8],
}

impl Default for GridCube {
    fn default() -> Self {
        Self {
            vertex_coords: [[0; 3]; 8],
            vertex_addresses: [0; 8],
            weights: [0.0; 8],
        }
    }
}

fn check_point(point: [f64; 3]) -> Result<()> {
    if point.iter().all(|c| (0.0..=1.0).contains(c)) {
        Ok(())
    } else {
        Err(Error::Domain(point[0], point[1], point[2]))
    }
}

/// Enclosing cube of `point` at `level`.
///
/// The far face is folded into the last cell so that `point = 1` lands on
/// the upper corner of cell `resolution - 2`.
pub fn neighbor_cube(point: [f64; 3], level: u32, config: &HashConfig) -> Result<GridCube> {
    check_point(point)?;
    Ok(cube_unchecked(point, level, config))
}

#[inline]
fn cube_unchecked(point: [f64; 3], level: u32, config: &HashConfig) -> GridCube {
    let res = config.resolution(level);
    let cells = f64::from(res - 1);
    let mut base = [0u32; 3];
    let mut frac = [0.0f64; 3];
    for a in 0..3 {
        let scaled = point[a] * cells;
        let cell = (scaled.floor() as u32).min(res - 2);
        base[a] = cell;
        frac[a] = scaled - f64::from(cell);
    }
    let mut cube = GridCube::default();
    for c in 0..8 {
        let mut w = 1.0;
        let mut coord = [0u32; 3];
        for a in 0..3 {
            let bit = (c >> a) & 1;
            coord[a] = base[a] + bit as u32;
            w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
        }
        cube.vertex_coords[c] = coord;
        cube.vertex_addresses[c] = hash_index(coord, config);
        cube.weights[c] = w;
    }
    cube
}

/// Per-vertex gradient produced by [`EmbeddingTable::interpolate_backward`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradContribution {
    pub level: u32,
    pub address: u32,
    pub grad: Vec<f64>,
}

/// Identifies the owner of a batch of trace records.
#[derive(Clone, Copy, Debug)]
pub struct RecordContext {
    pub iteration: u32,
    pub branch: Branch,
    pub point_id: u32,
}

/// Emits the eight accesses of one cube.
pub fn emit_cube(
    sink: &mut dyn TraceSink,
    ctx: RecordContext,
    level: u32,
    cube: &GridCube,
    phase: Phase,
    kind: AccessKind,
) -> Result<()> {
    for (c, &address) in cube.vertex_addresses.iter().enumerate() {
        sink.record(AccessRecord {
            iteration: ctx.iteration,
            phase,
            branch: ctx.branch,
            level: level as u8,
            point_id: ctx.point_id,
            corner: c as u8,
            address,
            kind,
        })?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    config: HashConfig,
    /// `[level][entry][feature]`, row-major.
    data: Vec<f64>,
}

impl EmbeddingTable {
    pub fn filled(config: HashConfig, value: f64) -> Result<Self> {
        config.validate()?;
        if !value.is_finite() {
            return Err(contract("table values must be finite"));
        }
        let len = config.entries_per_level() * config.levels as usize;
        Ok(Self { data: vec![value; len], config })
    }

    pub fn zeros(config: HashConfig) -> Result<Self> {
        Self::filled(config, 0.0)
    }

    /// Uniform initialisation in `[-scale, scale]`.
    pub fn uniform(config: HashConfig, scale: f64, seed: u64) -> Result<Self> {
        let mut t = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in &mut t.data {
            *v = rng.gen_range(-scale..=scale);
        }
        Ok(t)
    }

    pub fn from_data(config: HashConfig, data: Vec<f64>) -> Result<Self> {
        config.validate()?;
        if data.len() != config.entries_per_level() * config.levels as usize {
            return Err(contract(format!("table payload has {} values", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(contract("table values must be finite"));
        }
        Ok(Self { config, data })
    }

    pub fn config(&self) -> &HashConfig {
        &self.config
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn offset(&self, level: u32, address: u32) -> usize {
        (level as usize * self.config.table_size as usize + address as usize) * self.config.features
    }

    pub fn entry(&self, level: u32, address: u32) -> &[f64] {
        let o = self.offset(level, address);
        &self.data[o..o + self.config.features]
    }

    pub fn entry_mut(&mut self, level: u32, address: u32) -> &mut [f64] {
        let o = self.offset(level, address);
        let f = self.config.features;
        &mut self.data[o..o + f]
    }

    pub fn interpolate(&self, point: [f64; 3]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.config.embedding_dim()];
        let mut cubes = vec![GridCube::default(); self.config.levels as usize];
        self.interpolate_into(point, &mut out, &mut cubes)?;
        Ok(out)
    }

    /// Writes the embedding into `out` and the per-level cubes into `cubes`.
    pub fn interpolate_into(&self, point: [f64; 3], out: &mut [f64], cubes: &mut [GridCube]) -> Result<()> {
        check_point(point)?;
        let f = self.config.features;
        if out.len() != self.config.embedding_dim() || cubes.len() != self.config.levels as usize {
            return Err(contract("interpolation buffers do not match table shape"));
        }
        out.fill(0.0);
        for level in 0..self.config.levels {
            let cube = cube_unchecked(point, level, &self.config);
            let dst = &mut out[level as usize * f..(level as usize + 1) * f];
            for c in 0..8 {
                let w = cube.weights[c];
                let src = self.entry(level, cube.vertex_addresses[c]);
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
            cubes[level as usize] = cube;
        }
        Ok(())
    }

    /// Interpolates and emits the forward reads of every level.
    pub fn interpolate_recorded(
        &self,
        point: [f64; 3],
        sink: &mut dyn TraceSink,
        ctx: RecordContext,
    ) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.config.embedding_dim()];
        let mut cubes = vec![GridCube::default(); self.config.levels as usize];
        self.interpolate_into(point, &mut out, &mut cubes)?;
        for (level, cube) in cubes.iter().enumerate() {
            emit_cube(sink, ctx, level as u32, cube, Phase::Forward, AccessKind::Read)?;
        }
        Ok(out)
    }

    /// Distributes `upstream` (d loss / d embedding) to the touched vertices.
    pub fn interpolate_backward(&self, point: [f64; 3], upstream: &[f64]) -> Result<Vec<GradContribution>> {
        check_point(point)?;
        if upstream.len() != self.config.embedding_dim() {
            return Err(contract(format!(
                "upstream gradient has {} components, embedding has {}",
                upstream.len(),
                self.config.embedding_dim()
            )));
        }
        let f = self.config.features;
        let mut out = Vec::with_capacity(8 * self.config.levels as usize);
        for level in 0..self.config.levels {
            let cube = cube_unchecked(point, level, &self.config);
            let g = &upstream[level as usize * f..(level as usize + 1) * f];
            for c in 0..8 {
                out.push(GradContribution {
                    level,
                    address: cube.vertex_addresses[c],
                    grad: g.iter().map(|v| v * cube.weights[c]).collect(),
                });
            }
        }
        Ok(out)
    }

    /// Backward pass that also emits the write-intent records.
    pub fn interpolate_backward_recorded(
        &self,
        point: [f64; 3],
        upstream: &[f64],
        sink: &mut dyn TraceSink,
        ctx: RecordContext,
    ) -> Result<Vec<GradContribution>> {
        let contributions = self.interpolate_backward(point, upstream)?;
        for level in 0..self.config.levels {
            let cube = cube_unchecked(point, level, &self.config);
            emit_cube(sink, ctx, level, &cube, Phase::Backward, AccessKind::Write)?;
        }
        Ok(contributions)
    }

    /// Adds `scale * weight * upstream` for each cube corner into a dense
    /// gradient buffer shaped like this table.
    pub fn accumulate_scatter(&self, cubes: &[GridCube], upstream: &[f64], grad: &mut [f64]) {
        let f = self.config.features;
        debug_assert_eq!(grad.len(), self.data.len());
        for (level, cube) in cubes.iter().enumerate() {
            let g = &upstream[level * f..(level + 1) * f];
            for c in 0..8 {
                let w = cube.weights[c];
                let o = self.offset(level as u32, cube.vertex_addresses[c]);
                for (dst, src) in grad[o..o + f].iter_mut().zip(g) {
                    *dst += w * src;
                }
            }
        }
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(&GRID_MAGIC)?;
        for v in [GRID_VERSION, self.config.levels, self.config.table_size, self.config.features as u32] {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads a table written by [`write_to`](Self::write_to). The stored
    /// shape must agree with `config`.
    pub fn read_from(mut r: impl Read, config: HashConfig) -> Result<Self> {
        config.validate()?;
        let mut head = [0u8; 20];
        read_exact_at(&mut r, &mut head, 0)?;
        if head[0..4] != GRID_MAGIC {
            return Err(Error::Format { offset: 0, detail: "bad magic, expected I3DG".into() });
        }
        let word = |i: usize| u32::from_le_bytes([head[i], head[i + 1], head[i + 2], head[i + 3]]);
        if word(4) != GRID_VERSION {
            return Err(Error::Format { offset: 4, detail: format!("unsupported grid version {}", word(4)) });
        }
        let (levels, t, f) = (word(8), word(12), word(16));
        if levels != config.levels || t != config.table_size || f as usize != config.features {
            return Err(Error::Format {
                offset: 8,
                detail: format!("stored shape {levels}x{t}x{f} does not match configuration"),
            });
        }
        let n = config.entries_per_level() * levels as usize;
        let mut bytes = vec![0u8; n * 8];
        read_exact_at(&mut r, &mut bytes, 20)?;
        let data: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Self::from_data(config, data)
    }
}

pub(crate) fn read_exact_at(r: &mut impl Read, buf: &mut [u8], offset: u64) -> Result<()> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => {
                return Err(Error::Format {
                    offset: offset + filled as u64,
                    detail: "unexpected end of data".into(),
                })
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}
