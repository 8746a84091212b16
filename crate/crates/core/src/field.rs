//! Radiance field made of a density grid, a color grid and the shared MLP,
//! plus the batched forward/backward step used by the trainer.

use std::io::{Read, Write};

use crate::error::{contract, Error, Result};
use crate::hash_grid::{emit_cube, EmbeddingTable, GridCube, HashConfig, RecordContext};
use crate::mlp::{MlpCache, MlpGrads, MlpParams, DIRECTION_ENCODING_DIM};
use crate::render::{composite, composite_backward, Ray, SamplePoint, Vec3};
use crate::trace::{AccessKind, Branch, Phase, TraceSink};

/// How the grid parameters are stored.
#[derive(Clone, Debug, PartialEq)]
enum Storage {
    /// Independent density and color tables.
    Split { density: EmbeddingTable, color: EmbeddingTable },
    /// One table whose entries hold the density features followed by the
    /// color features; both branches share every hash lookup.
    Fused { table: EmbeddingTable, density_features: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecomposedField {
    storage: Storage,
    density_config: HashConfig,
    color_config: HashConfig,
    pub mlp: MlpParams,
}

/// Dense gradient buffers shaped like the field parameters.
#[derive(Clone, Debug)]
pub struct FieldGrads {
    /// Split storage: density table gradient. Fused storage: the whole table.
    pub density: Vec<f64>,
    /// Split storage only.
    pub color: Vec<f64>,
    pub mlp: MlpGrads,
}

/// A ray with its sample distances. Empty `t` means the ray misses the
/// scene bounds and renders the background.
#[derive(Clone, Debug, PartialEq)]
pub struct RaySamples {
    pub ray: Ray,
    pub t: Vec<f64>,
    pub t_far: f64,
    /// Sample positions in grid coordinates, parallel to `t`.
    pub points: Vec<Vec3>,
}

/// Which grid branches receive gradients in a step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BranchMask {
    pub density: bool,
    pub color: bool,
}

impl BranchMask {
    pub const ALL: Self = Self { density: true, color: true };
}

/// Trace emission parameters for one step.
pub struct TraceTarget<'a> {
    pub sink: &'a mut dyn TraceSink,
    pub iteration: u32,
    /// Samples per ray used to number points (`ray * n + k`).
    pub samples_per_ray: usize,
}

#[derive(Clone, Debug)]
pub struct StepOutput {
    pub loss: f64,
    pub colors: Vec<Vec3>,
}

const ENTRY_INIT_SCALE: f64 = 1e-4;

impl DecomposedField {
    pub fn new(density: HashConfig, color: HashConfig, seed: u64) -> Result<Self> {
        let density_table = EmbeddingTable::uniform(density.clone(), ENTRY_INIT_SCALE, seed ^ 0xD)?;
        let color_table = EmbeddingTable::uniform(color.clone(), ENTRY_INIT_SCALE, seed ^ 0xC)?;
        Self::from_parts(density_table, color_table, MlpParams::standard(density.embedding_dim() + color.embedding_dim(), seed))
    }

    pub fn from_parts(density: EmbeddingTable, color: EmbeddingTable, mlp: MlpParams) -> Result<Self> {
        let emb = density.config().embedding_dim() + color.config().embedding_dim();
        if mlp.embedding_dim() != emb {
            return Err(contract(format!("network expects {} embedding inputs, grids provide {emb}", mlp.embedding_dim())));
        }
        Ok(Self {
            density_config: density.config().clone(),
            color_config: color.config().clone(),
            storage: Storage::Split { density, color },
            mlp,
        })
    }

    /// The undecomposed baseline: one table with interleaved density and
    /// color features. Requires both grids to share every hash parameter.
    pub fn fused_from(split: &Self) -> Result<Self> {
        let Storage::Split { density, color } = &split.storage else {
            return Err(contract("field is already fused"));
        };
        let (dc, cc) = (density.config(), color.config());
        let same_lattice = dc.table_size == cc.table_size
            && dc.levels == cc.levels
            && dc.base_resolution == cc.base_resolution
            && dc.growth_factor == cc.growth_factor
            && dc.primes == cc.primes;
        if !same_lattice {
            return Err(contract("fused storage requires identical density and color grids"));
        }
        let (fd, fc) = (dc.features, cc.features);
        let mut config = dc.clone();
        config.features = fd + fc;
        let mut data = Vec::with_capacity(density.data().len() + color.data().len());
        for (d, c) in density.data().chunks_exact(fd).zip(color.data().chunks_exact(fc)) {
            data.extend_from_slice(d);
            data.extend_from_slice(c);
        }
        Ok(Self {
            storage: Storage::Fused { table: EmbeddingTable::from_data(config, data)?, density_features: fd },
            density_config: dc.clone(),
            color_config: cc.clone(),
            mlp: split.mlp.clone(),
        })
    }

    pub fn is_fused(&self) -> bool {
        matches!(self.storage, Storage::Fused { .. })
    }

    pub fn density_config(&self) -> &HashConfig {
        &self.density_config
    }

    pub fn color_config(&self) -> &HashConfig {
        &self.color_config
    }

    /// Density and color tables; fused storage is split into copies.
    pub fn tables(&self) -> (EmbeddingTable, EmbeddingTable) {
        match &self.storage {
            Storage::Split { density, color } => (density.clone(), color.clone()),
            Storage::Fused { table, density_features } => {
                let f = table.config().features;
                let mut d = Vec::new();
                let mut c = Vec::new();
                for e in table.data().chunks_exact(f) {
                    d.extend_from_slice(&e[..*density_features]);
                    c.extend_from_slice(&e[*density_features..]);
                }
                (
                    EmbeddingTable::from_data(self.density_config.clone(), d).expect("shape preserved"),
                    EmbeddingTable::from_data(self.color_config.clone(), c).expect("shape preserved"),
                )
            }
        }
    }

    /// Mutable density table (split storage only).
    pub fn density_table_mut(&mut self) -> Option<&mut EmbeddingTable> {
        match &mut self.storage {
            Storage::Split { density, .. } => Some(density),
            Storage::Fused { .. } => None,
        }
    }

    pub fn color_table_mut(&mut self) -> Option<&mut EmbeddingTable> {
        match &mut self.storage {
            Storage::Split { color, .. } => Some(color),
            Storage::Fused { .. } => None,
        }
    }

    fn color_dim(&self) -> usize {
        self.color_config.embedding_dim()
    }

    fn density_dim(&self) -> usize {
        self.density_config.embedding_dim()
    }

    pub fn zero_grads(&self) -> FieldGrads {
        let (d, c) = match &self.storage {
            Storage::Split { density, color } => (density.data().len(), color.data().len()),
            Storage::Fused { table, .. } => (table.data().len(), 0),
        };
        FieldGrads { density: vec![0.0; d], color: vec![0.0; c], mlp: MlpGrads::zeros_like(&self.mlp) }
    }

    /// Writes the network input embedding (color then density) and the
    /// per-level cubes of both branches.
    fn embed(&self, point: Vec3, out: &mut [f64], scratch: &mut [f64], cubes_d: &mut [GridCube], cubes_c: &mut [GridCube]) -> Result<()> {
        let (cd, dd) = (self.color_dim(), self.density_dim());
        match &self.storage {
            Storage::Split { density, color } => {
                color.interpolate_into(point, &mut out[..cd], cubes_c)?;
                density.interpolate_into(point, &mut out[cd..cd + dd], cubes_d)?;
            }
            Storage::Fused { table, density_features } => {
                table.interpolate_into(point, scratch, cubes_d)?;
                cubes_c.copy_from_slice(cubes_d);
                let fd = *density_features;
                let f = table.config().features;
                let fc = f - fd;
                for (l, level) in scratch.chunks_exact(f).enumerate() {
                    out[l * fc..(l + 1) * fc].copy_from_slice(&level[fd..]);
                    out[cd + l * fd..cd + (l + 1) * fd].copy_from_slice(&level[..fd]);
                }
            }
        }
        Ok(())
    }

    fn scatter(&self, d_emb: &[f64], cubes_d: &[GridCube], cubes_c: &[GridCube], mask: BranchMask, grads: &mut FieldGrads, scratch: &mut [f64]) {
        let (cd, dd) = (self.color_dim(), self.density_dim());
        match &self.storage {
            Storage::Split { density, color } => {
                if mask.density {
                    density.accumulate_scatter(cubes_d, &d_emb[cd..cd + dd], &mut grads.density);
                }
                if mask.color {
                    color.accumulate_scatter(cubes_c, &d_emb[..cd], &mut grads.color);
                }
            }
            Storage::Fused { table, density_features } => {
                let fd = *density_features;
                let f = table.config().features;
                let fc = f - fd;
                for (l, level) in scratch.chunks_exact_mut(f).enumerate() {
                    let (dpart, cpart) = level.split_at_mut(fd);
                    if mask.density {
                        dpart.copy_from_slice(&d_emb[cd + l * fd..cd + (l + 1) * fd]);
                    } else {
                        dpart.fill(0.0);
                    }
                    if mask.color {
                        cpart.copy_from_slice(&d_emb[l * fc..(l + 1) * fc]);
                    } else {
                        cpart.fill(0.0);
                    }
                }
                table.accumulate_scatter(cubes_d, scratch, &mut grads.density);
            }
        }
    }

    /// Renders rays through the field without keeping backward state.
    pub fn render(&self, rays: &[RaySamples], background: Vec3) -> Result<Vec<Vec3>> {
        let (colors, _) = self.forward(rays, background, None)?;
        Ok(colors)
    }

    /// Forward pass over a batch. Returns the composited colors and, when
    /// `keep` is provided, the state needed by [`Self::backward`].
    fn forward(&self, rays: &[RaySamples], background: Vec3, mut keep: Option<&mut StepState>) -> Result<(Vec<Vec3>, Option<MlpCache>)> {
        let emb = self.mlp.embedding_dim();
        let in_dim = self.mlp.input_dim();
        let levels_d = self.density_config.levels as usize;
        let levels_c = self.color_config.levels as usize;
        let rows: usize = rays.iter().map(|r| r.t.len()).sum();
        let mut input = vec![0.0; rows * in_dim];
        let mut scratch = vec![0.0; self.fused_width()];
        let mut cd = vec![GridCube::default(); levels_d];
        let mut cc = vec![GridCube::default(); levels_c];
        if let Some(state) = keep.as_deref_mut() {
            state.cubes_d.resize(rows * levels_d, GridCube::default());
            state.cubes_c.resize(rows * levels_c, GridCube::default());
        }
        let mut row = 0;
        for r in rays {
            if r.points.len() != r.t.len() {
                return Err(contract("sample points and distances differ in length"));
            }
            for &p in &r.points {
                let dst = &mut input[row * in_dim..(row + 1) * in_dim];
                let (e, dir) = dst.split_at_mut(emb);
                self.embed(p, e, &mut scratch, &mut cd, &mut cc)?;
                if r.ray.direction.iter().any(|v| !v.is_finite()) {
                    return Err(contract("non-finite ray direction"));
                }
                crate::mlp::encode_direction(r.ray.direction, &mut dir[..DIRECTION_ENCODING_DIM]);
                if let Some(state) = keep.as_deref_mut() {
                    state.cubes_d[row * levels_d..(row + 1) * levels_d].copy_from_slice(&cd);
                    state.cubes_c[row * levels_c..(row + 1) * levels_c].copy_from_slice(&cc);
                }
                row += 1;
            }
        }
        let cache = self.mlp.forward_batch(input, rows)?;
        let mut colors = Vec::with_capacity(rays.len());
        let mut row = 0;
        for r in rays {
            let samples: Vec<SamplePoint> = r
                .t
                .iter()
                .enumerate()
                .map(|(k, &t)| SamplePoint { t, sigma: cache.sigma(row + k), color: cache.color(row + k) })
                .collect();
            row += r.t.len();
            let (c, comp) = composite(&samples, r.t_far, background)?;
            colors.push(c);
            if let Some(state) = keep.as_deref_mut() {
                state.samples.push(samples);
                state.composites.push(comp);
            }
        }
        Ok((colors, keep.map(|_| cache)))
    }

    fn fused_width(&self) -> usize {
        match &self.storage {
            Storage::Fused { table, .. } => table.config().embedding_dim(),
            Storage::Split { .. } => 0,
        }
    }

    /// One forward/backward pass of the squared-error loss over `rays`,
    /// accumulating gradients into `grads`. Grid gradients are only
    /// produced for the branches in `mask`; network gradients always.
    pub fn step(
        &self,
        rays: &[RaySamples],
        background: Vec3,
        mask: BranchMask,
        grads: &mut FieldGrads,
        trace: Option<TraceTarget<'_>>,
    ) -> Result<StepOutput> {
        let mut state = StepState::default();
        let (colors, cache) = self.forward(rays, background, Some(&mut state))?;
        let cache = cache.expect("forward keeps state");
        let mut loss = 0.0;
        let mut upstream = Vec::with_capacity(cache.rows());
        for (i, r) in rays.iter().enumerate() {
            let mut d_c = [0.0; 3];
            for ch in 0..3 {
                let diff = colors[i][ch] - r.ray.ground_truth[ch];
                loss += diff * diff;
                d_c[ch] = 2.0 * diff;
            }
            let g = composite_backward(&state.samples[i], &state.composites[i], d_c)?;
            upstream.extend(g.iter().map(|s| [s.sigma, s.color[0], s.color[1], s.color[2]]));
        }
        let d_input = self.mlp.backward_batch(&cache, &upstream, &mut grads.mlp)?;
        let in_dim = self.mlp.input_dim();
        let (ld, lc) = (self.density_config.levels as usize, self.color_config.levels as usize);
        let mut scratch = vec![0.0; self.fused_width()];
        if mask.density || mask.color {
            for row in 0..cache.rows() {
                self.scatter(
                    &d_input[row * in_dim..row * in_dim + self.mlp.embedding_dim()],
                    &state.cubes_d[row * ld..(row + 1) * ld],
                    &state.cubes_c[row * lc..(row + 1) * lc],
                    mask,
                    grads,
                    &mut scratch,
                );
            }
        }
        if let Some(t) = trace {
            self.emit_trace(rays, &state, mask, t)?;
        }
        Ok(StepOutput { loss, colors })
    }

    /// Forward reads are sample-major across rays (all rays' k-th samples
    /// before any (k+1)-th); backward writes follow the per-ray compositing
    /// backward, ray-major.
    fn emit_trace(&self, rays: &[RaySamples], state: &StepState, mask: BranchMask, t: TraceTarget<'_>) -> Result<()> {
        let (ld, lc) = (self.density_config.levels as usize, self.color_config.levels as usize);
        let n = t.samples_per_ray;
        let mut row_start = Vec::with_capacity(rays.len());
        let mut acc = 0;
        for r in rays {
            if r.t.len() > n {
                return Err(contract("ray has more samples than the trace numbering allows"));
            }
            row_start.push(acc);
            acc += r.t.len();
        }
        let ctx = |ray: usize, k: usize, branch| RecordContext { iteration: t.iteration, branch, point_id: (ray * n + k) as u32 };
        let sink = t.sink;
        let emit_point = |sink: &mut dyn TraceSink, ray: usize, k: usize, row: usize, d: bool, c: bool, phase, kind| -> Result<()> {
            if d {
                for (l, cube) in state.cubes_d[row * ld..(row + 1) * ld].iter().enumerate() {
                    emit_cube(sink, ctx(ray, k, Branch::Density), l as u32, cube, phase, kind)?;
                }
            }
            if c {
                for (l, cube) in state.cubes_c[row * lc..(row + 1) * lc].iter().enumerate() {
                    emit_cube(sink, ctx(ray, k, Branch::Color), l as u32, cube, phase, kind)?;
                }
            }
            Ok(())
        };
        for k in 0..n {
            for (i, r) in rays.iter().enumerate() {
                if k < r.t.len() {
                    emit_point(sink, i, k, row_start[i] + k, true, true, Phase::Forward, AccessKind::Read)?;
                }
            }
        }
        for (i, r) in rays.iter().enumerate() {
            for k in 0..r.t.len() {
                emit_point(sink, i, k, row_start[i] + k, mask.density, mask.color, Phase::Backward, AccessKind::Write)?;
            }
        }
        Ok(())
    }

    /// `theta -= lr * g` on the branches in `mask`.
    pub fn apply_grid_update(&mut self, grads: &FieldGrads, lr: f64, mask: BranchMask) -> Result<()> {
        match &mut self.storage {
            Storage::Split { density, color } => {
                if mask.density {
                    sgd_update(density.data_mut(), &grads.density, lr)?;
                }
                if mask.color {
                    sgd_update(color.data_mut(), &grads.color, lr)?;
                }
            }
            Storage::Fused { table, .. } => {
                if mask.density || mask.color {
                    sgd_update(table.data_mut(), &grads.density, lr)?;
                }
            }
        }
        Ok(())
    }

    pub fn apply_mlp_update(&mut self, grads: &MlpGrads, lr: f64) -> Result<()> {
        for (layer, g) in self.mlp.layers_mut().iter_mut().zip(&grads.layers) {
            sgd_update(&mut layer.weights, &g.weights, lr)?;
            sgd_update(&mut layer.bias, &g.bias, lr)?;
        }
        Ok(())
    }

    /// Checkpoint container: density grid, color grid, then the network.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let (d, c) = self.tables();
        d.write_to(&mut w)?;
        c.write_to(&mut w)?;
        self.mlp.write_to(&mut w)
    }

    pub fn read_from(mut r: impl Read, density: HashConfig, color: HashConfig) -> Result<Self> {
        let d = EmbeddingTable::read_from(&mut r, density.clone())?;
        let c = EmbeddingTable::read_from(&mut r, color.clone())?;
        let offset = grid_bytes(&density) + grid_bytes(&color);
        let mlp = MlpParams::read_from(&mut r, offset)?;
        Self::from_parts(d, c, mlp)
    }
}

fn grid_bytes(c: &HashConfig) -> u64 {
    20 + 8 * (c.entries_per_level() as u64) * u64::from(c.levels)
}

#[derive(Default)]
struct StepState {
    cubes_d: Vec<GridCube>,
    cubes_c: Vec<GridCube>,
    samples: Vec<Vec<SamplePoint>>,
    composites: Vec<crate::render::CompositeCache>,
}

/// `theta <- theta - lr * g`.
pub fn sgd_update(theta: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
    if theta.len() != grad.len() {
        return Err(contract(format!("parameter length {} vs gradient length {}", theta.len(), grad.len())));
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::Diverged { what: format!("gradient component {i}"), iteration: 0 });
    }
    for (t, g) in theta.iter_mut().zip(grad) {
        *t -= lr * g;
    }
    Ok(())
}
