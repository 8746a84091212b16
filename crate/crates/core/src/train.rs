//! Training loop for the decomposed field: pixel batches, ray sampling,
//! update schedules, SGD and metrics.

use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{contract, Error, Result};
use crate::field::{BranchMask, DecomposedField, RaySamples, TraceTarget};
use crate::hash_grid::HashConfig;
use crate::render::{pixel_to_ray, ray_box, sample_along_ray_with, sample_pixels, PixelSampling, Ray, Vec3};
use crate::scene::{Image, Scene};
use crate::trace::{BranchGeometry, TraceHeader, TraceSink};

/// A rational update frequency `num / den` in `(0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UpdateFrequency {
    num: u32,
    den: u32,
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl UpdateFrequency {
    pub const ALWAYS: Self = Self { num: 1, den: 1 };

    pub fn new(num: u32, den: u32) -> Result<Self> {
        if num == 0 || den == 0 || num > den {
            return Err(contract(format!("update frequency {num}/{den} must lie in (0, 1]")));
        }
        let g = gcd(u64::from(num), u64::from(den)) as u32;
        Ok(Self { num: num / g, den: den / g })
    }

    pub fn numerator(self) -> u32 {
        self.num
    }

    pub fn denominator(self) -> u32 {
        self.den
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.num) / f64::from(self.den)
    }

    /// Number of firing iterations among `0..iterations`.
    pub fn count(self, iterations: u32) -> u64 {
        (u64::from(iterations) * u64::from(self.num)).div_ceil(u64::from(self.den))
    }
}

impl FromStr for UpdateFrequency {
    type Err = Error;

    /// Accepts `"p/q"` or a terminating decimal such as `"0.75"`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || contract(format!("cannot parse update frequency {s:?}"));
        if let Some((p, q)) = s.split_once('/') {
            return Self::new(p.trim().parse().map_err(|_| bad())?, q.trim().parse().map_err(|_| bad())?);
        }
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if frac.len() > 9 || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let int: u64 = if int.is_empty() { 0 } else { int.parse().map_err(|_| bad())? };
        let den = 10u64.pow(frac.len() as u32);
        let num = int * den + if frac.is_empty() { 0 } else { frac.parse::<u64>().map_err(|_| bad())? };
        if num > den || num == 0 {
            return Err(contract(format!("update frequency {s} must lie in (0, 1]")));
        }
        let g = gcd(num, den);
        Self::new((num / g) as u32, (den / g) as u32)
    }
}

impl fmt::Display for UpdateFrequency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

/// Whether a branch with frequency `freq` updates at `iteration`.
///
/// Fires when `ceil((i + 1) F) > ceil(i F)`, so the first `n` iterations
/// contain exactly `ceil(n F)` updates and skips are evenly spread.
pub fn apply_schedule(iteration: u32, freq: UpdateFrequency) -> bool {
    freq.count(iteration + 1) > freq.count(iteration)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecomposedFieldConfig {
    pub density: HashConfig,
    pub color: HashConfig,
    pub density_freq: UpdateFrequency,
    pub color_freq: UpdateFrequency,
    /// Step size for grid entries, applied to the summed-loss gradient.
    pub learning_rate: f64,
    /// Step size for network parameters, applied to the summed-loss gradient.
    pub mlp_learning_rate: f64,
    pub iterations: u32,
    pub batch_size: usize,
    pub samples_per_ray: usize,
    pub stratified: bool,
    pub background: Vec3,
    pub seed: u64,
    /// Store both branches in one interleaved table (requires identical
    /// grids and frequencies).
    pub fused_baseline: bool,
    /// Full-image training PSNR is recorded every this many iterations
    /// (0 disables).
    pub eval_every: u32,
}

impl Default for DecomposedFieldConfig {
    fn default() -> Self {
        Self {
            density: HashConfig { table_size: 1 << 14, ..HashConfig::default() },
            color: HashConfig { table_size: 1 << 12, ..HashConfig::default() },
            density_freq: UpdateFrequency::ALWAYS,
            color_freq: UpdateFrequency::ALWAYS,
            learning_rate: 10.0,
            mlp_learning_rate: 1e-2,
            iterations: 500,
            batch_size: 256,
            samples_per_ray: 32,
            stratified: true,
            background: [0.0; 3],
            seed: 0,
            fused_baseline: false,
            eval_every: 0,
        }
    }
}

impl DecomposedFieldConfig {
    /// Checks the configuration. Grids or frequencies where color exceeds
    /// density are rejected unless `allow_inverted`, in which case they are
    /// returned as warnings.
    pub fn validate(&self, allow_inverted: bool) -> Result<Vec<String>> {
        self.density.validate()?;
        self.color.validate()?;
        if self.batch_size == 0 || self.samples_per_ray == 0 {
            return Err(contract("batch size and samples per ray must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0)
            || !(self.mlp_learning_rate.is_finite() && self.mlp_learning_rate >= 0.0)
        {
            return Err(contract("learning rates must be finite and non-negative"));
        }
        if (self.batch_size as u64) * (self.samples_per_ray as u64) > u64::from(u32::MAX) {
            return Err(contract("batch size times samples per ray overflows point ids"));
        }
        let mut warnings = Vec::new();
        if self.color.table_size > self.density.table_size {
            warnings.push(format!(
                "color grid ({} entries) is larger than density grid ({} entries)",
                self.color.table_size, self.density.table_size
            ));
        }
        if self.color_freq.as_f64() > self.density_freq.as_f64() {
            warnings.push(format!(
                "color update frequency {} exceeds density update frequency {}",
                self.color_freq, self.density_freq
            ));
        }
        if !warnings.is_empty() && !allow_inverted {
            return Err(contract(warnings.join("; ")));
        }
        if self.fused_baseline && (self.density_freq != self.color_freq || {
            let (d, c) = (&self.density, &self.color);
            d.table_size != c.table_size || d.levels != c.levels || d.base_resolution != c.base_resolution
        }) {
            return Err(contract("the fused baseline needs identical grids and frequencies"));
        }
        Ok(warnings)
    }

    pub fn trace_header(&self) -> TraceHeader {
        let geom = |c: &HashConfig| BranchGeometry { table_size: c.table_size, levels: c.levels, features: c.features as u32 };
        TraceHeader {
            density: geom(&self.density),
            color: geom(&self.color),
            mlp_input: (self.density.embedding_dim() + self.color.embedding_dim() + crate::mlp::DIRECTION_ENCODING_DIM) as u32,
            mlp_hidden: crate::mlp::HIDDEN_WIDTH as u32,
            samples_per_ray: self.samples_per_ray as u32,
            batch_size: self.batch_size as u32,
            seed: self.seed,
        }
    }
}

/// `-10 log10(MSE)`; identical images give `+inf`.
pub fn psnr(predicted: &Image, reference: &Image) -> Result<f64> {
    if predicted.width != reference.width || predicted.height != reference.height || predicted.data.len() != reference.data.len() {
        return Err(contract(format!(
            "image sizes differ: {}x{} vs {}x{}",
            predicted.width, predicted.height, reference.width, reference.height
        )));
    }
    Ok(psnr_from_mse(mse(&predicted.data, &reference.data)))
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationStat {
    pub iteration: u32,
    pub loss: f64,
    /// PSNR of the rendered batch against its ground truth.
    pub psnr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub history: Vec<IterationStat>,
    pub density_updates: u64,
    pub color_updates: u64,
    pub density_entries: u64,
    pub color_entries: u64,
    /// Full-image PSNR over the training views after the last iteration.
    pub train_psnr: f64,
    pub test_psnr: Option<f64>,
    /// `(iteration, train PSNR)` pairs from periodic evaluation.
    pub eval_history: Vec<(u32, f64)>,
    pub wall_seconds: f64,
}

impl TrainReport {
    pub fn csv(&self) -> String {
        let mut s = String::from("iteration,loss,psnr\n");
        for h in &self.history {
            let _ = writeln!(s, "{},{:.9e},{:.6}", h.iteration, h.loss, h.psnr);
        }
        s
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "iterations: {}", self.history.len());
        let _ = writeln!(s, "final_loss: {:.9e}", self.history.last().map_or(f64::NAN, |h| h.loss));
        let _ = writeln!(s, "train_psnr: {:.4}", self.train_psnr);
        if let Some(t) = self.test_psnr {
            let _ = writeln!(s, "test_psnr: {t:.4}");
        }
        let _ = writeln!(s, "density_updates: {}", self.density_updates);
        let _ = writeln!(s, "color_updates: {}", self.color_updates);
        let _ = writeln!(s, "density_entries: {}", self.density_entries);
        let _ = writeln!(s, "color_entries: {}", self.color_entries);
        let _ = writeln!(s, "wall_seconds: {:.3}", self.wall_seconds);
        s
    }
}

pub struct TrainOutcome {
    pub report: TrainReport,
    pub field: DecomposedField,
}

/// Clips the ray to the scene box and the near/far range, then places `n`
/// samples. Rays that miss get no samples.
pub fn place_samples(scene: &Scene, ray: Ray, n: usize, stratified: bool, rng: &mut ChaCha8Rng) -> Result<RaySamples> {
    let [lo, hi] = scene.bounds;
    let span = ray_box(&ray, lo, hi).map(|(a, b)| (a.max(scene.near), b.min(scene.far)));
    match span {
        Some((a, b)) if b > a => {
            let mut t = vec![0.0; n];
            sample_along_ray_with(rng, a, b, stratified, &mut t)?;
            let points = t.iter().map(|&tk| scene.normalize_point(ray.at(tk))).collect();
            Ok(RaySamples { ray, t, t_far: b, points })
        }
        _ => Ok(RaySamples { ray, t: Vec::new(), t_far: scene.far, points: Vec::new() }),
    }
}

fn iteration_seed(seed: u64, iteration: u32) -> u64 {
    seed ^ (u64::from(iteration) + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Renders every view with midpoint sampling and returns the images.
pub fn render_views(field: &DecomposedField, scene: &Scene, views: &[crate::scene::View], n: usize, background: Vec3) -> Result<Vec<Image>> {
    const CHUNK: usize = 4096;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut out = Vec::with_capacity(views.len());
    for (vi, view) in views.iter().enumerate() {
        let rays = scene.view_rays(view, vi as u32)?;
        let mut img = Image::filled(scene.intrinsics.width, scene.intrinsics.height, [0.0; 3]);
        let w = scene.intrinsics.width as usize;
        for (ci, chunk) in rays.chunks(CHUNK).enumerate() {
            let samples = chunk.iter().map(|r| place_samples(scene, *r, n, false, &mut rng)).collect::<Result<Vec<_>>>()?;
            let colors = field.render(&samples, background)?;
            for (j, c) in colors.into_iter().enumerate() {
                let p = ci * CHUNK + j;
                img.set((p % w) as u32, (p / w) as u32, c);
            }
        }
        out.push(img);
    }
    Ok(out)
}

/// Mean PSNR (from pooled MSE) of the field over `views`.
pub fn evaluate_psnr(field: &DecomposedField, scene: &Scene, views: &[crate::scene::View], n: usize, background: Vec3) -> Result<f64> {
    let images = render_views(field, scene, views, n, background)?;
    let mut se = 0.0;
    let mut count = 0usize;
    for (img, view) in images.iter().zip(views) {
        se += mse(&img.data, &view.image.data) * img.data.len() as f64;
        count += img.data.len();
    }
    Ok(psnr_from_mse(if count == 0 { 0.0 } else { se / count as f64 }))
}

/// Trains a field on `scene`. With a sink attached every grid access is
/// recorded in program order.
pub fn train(scene: &Scene, config: &DecomposedFieldConfig, mut sink: Option<&mut dyn TraceSink>) -> Result<TrainOutcome> {
    scene.validate()?;
    config.validate(true)?;
    let start = Instant::now();
    let split = DecomposedField::new(config.density.clone(), config.color.clone(), config.seed)?;
    let mut field = if config.fused_baseline { DecomposedField::fused_from(&split)? } else { split };
    let mut grads = field.zero_grads();
    let mut report = TrainReport {
        history: Vec::with_capacity(config.iterations as usize),
        density_updates: 0,
        color_updates: 0,
        density_entries: u64::from(config.density.table_size) * u64::from(config.density.levels),
        color_entries: u64::from(config.color.table_size) * u64::from(config.color.levels),
        train_psnr: f64::NAN,
        test_psnr: None,
        eval_history: Vec::new(),
        wall_seconds: 0.0,
    };
    for it in 0..config.iterations {
        let seed = iteration_seed(config.seed, it);
        let batch = sample_pixels(scene, config.batch_size, seed, PixelSampling::WithReplacement)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed.rotate_left(17));
        let per_view = scene.pixels_per_view();
        let rays = batch
            .pixels
            .iter()
            .map(|p| {
                let id = u64::from(p.view) * per_view + u64::from(p.y * scene.intrinsics.width + p.x);
                let ray = pixel_to_ray(p, &scene.camera(&scene.train_views[p.view as usize].pose), id)?;
                place_samples(scene, ray, config.samples_per_ray, config.stratified, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let mask = BranchMask { density: apply_schedule(it, config.density_freq), color: apply_schedule(it, config.color_freq) };
        grads.density.fill(0.0);
        grads.color.fill(0.0);
        grads.mlp = crate::mlp::MlpGrads::zeros_like(&field.mlp);
        let trace = sink.as_deref_mut().map(|s| TraceTarget { sink: s, iteration: it, samples_per_ray: config.samples_per_ray });
        let out = field.step(&rays, config.background, mask, &mut grads, trace)?;
        if !out.loss.is_finite() {
            return Err(Error::Diverged { what: "loss".into(), iteration: it });
        }
        let diverged = |e: Error| match e {
            Error::Diverged { what, .. } => Error::Diverged { what, iteration: it },
            other => other,
        };
        field.apply_grid_update(&grads, config.learning_rate, mask).map_err(diverged)?;
        field.apply_mlp_update(&grads.mlp, config.mlp_learning_rate).map_err(diverged)?;
        report.density_updates += u64::from(mask.density);
        report.color_updates += u64::from(mask.color);
        let batch_mse = out.loss / (3 * rays.len()) as f64;
        report.history.push(IterationStat { iteration: it, loss: out.loss, psnr: psnr_from_mse(batch_mse) });
        if config.eval_every > 0 && (it + 1) % config.eval_every == 0 {
            let p = evaluate_psnr(&field, scene, &scene.train_views, config.samples_per_ray, config.background)?;
            report.eval_history.push((it + 1, p));
        }
    }
    if let Some(s) = sink {
        s.close()?;
    }
    report.train_psnr = evaluate_psnr(&field, scene, &scene.train_views, config.samples_per_ray, config.background)?;
    if !scene.test_views.is_empty() {
        report.test_psnr = Some(evaluate_psnr(&field, scene, &scene.test_views, config.samples_per_ray, config.background)?);
    }
    report.wall_seconds = start.elapsed().as_secs_f64();
    Ok(TrainOutcome { report, field })
}
