//! Pixel sampling, pinhole ray generation, stratified sampling along rays,
//! volume compositing and its backward pass, and the squared-error loss.

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{contract, Error, Result};
use crate::scene::Scene;

pub type Vec3 = [f64; 3];

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn normalize(v: Vec3) -> Vec3 {
    let n = dot(v, v).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics {
    pub width: u32,
    pub height: u32,
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    /// Principal point at the image center.
    pub fn centered(width: u32, height: u32, focal: f64) -> Self {
        Self { width, height, focal, cx: f64::from(width) / 2.0, cy: f64::from(height) / 2.0 }
    }

    pub fn from_fov_x(width: u32, height: u32, camera_angle_x: f64) -> Self {
        Self::centered(width, height, 0.5 * f64::from(width) / (0.5 * camera_angle_x).tan())
    }

    pub fn camera_angle_x(&self) -> f64 {
        2.0 * (0.5 * f64::from(self.width) / self.focal).atan()
    }
}

/// Camera-to-world transform, row-major 4x4. The camera looks down its
/// local -z axis with +y up.
pub type Pose = [[f64; 4]; 4];

pub const IDENTITY_POSE: Pose = [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub intrinsics: Intrinsics,
    pub pose: Pose,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub pixel_id: u64,
    pub ground_truth: Vec3,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        [
            self.origin[0] + t * self.direction[0],
            self.origin[1] + t * self.direction[1],
            self.origin[2] + t * self.direction[2],
        ]
    }
}

/// A pixel of one training view.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pixel {
    pub view: u32,
    pub x: u32,
    pub y: u32,
    pub color: Vec3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PixelBatch {
    pub pixels: Vec<Pixel>,
}

impl PixelBatch {
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PixelSampling {
    WithReplacement,
    WithoutReplacement,
}

/// Draws `batch_size` pixels uniformly from all training images.
pub fn sample_pixels(scene: &Scene, batch_size: usize, seed: u64, mode: PixelSampling) -> Result<PixelBatch> {
    if batch_size == 0 {
        return Err(contract("batch size must be positive"));
    }
    let (w, h) = (scene.intrinsics.width as u64, scene.intrinsics.height as u64);
    let per_view = w * h;
    let total = per_view * scene.train_views.len() as u64;
    if total == 0 {
        return Err(contract("scene has no training pixels"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<u64> = match mode {
        PixelSampling::WithReplacement => (0..batch_size).map(|_| rng.gen_range(0..total)).collect(),
        PixelSampling::WithoutReplacement => {
            if batch_size as u64 > total {
                return Err(contract(format!("cannot draw {batch_size} distinct pixels from {total}")));
            }
            sample_indices(&mut rng, total as usize, batch_size).into_iter().map(|i| i as u64).collect()
        }
    };
    let pixels = ids
        .into_iter()
        .map(|id| {
            let view = (id / per_view) as u32;
            let rem = id % per_view;
            let (x, y) = ((rem % w) as u32, (rem / w) as u32);
            Pixel { view, x, y, color: scene.train_views[view as usize].image.get(x, y) }
        })
        .collect();
    Ok(PixelBatch { pixels })
}

fn det3(p: &Pose) -> f64 {
    p[0][0] * (p[1][1] * p[2][2] - p[1][2] * p[2][1]) - p[0][1] * (p[1][0] * p[2][2] - p[1][2] * p[2][0])
        + p[0][2] * (p[1][0] * p[2][1] - p[1][1] * p[2][0])
}

/// Ray through the center of `pixel`.
pub fn pixel_to_ray(pixel: &Pixel, camera: &Camera, pixel_id: u64) -> Result<Ray> {
    let k = &camera.intrinsics;
    if !(k.focal.is_finite() && k.focal > 0.0) {
        return Err(contract(format!("focal length {} must be positive", k.focal)));
    }
    let p = &camera.pose;
    let det = det3(p);
    if !det.is_finite() || det.abs() < 1e-9 {
        return Err(contract("camera pose rotation is singular"));
    }
    let u = (f64::from(pixel.x) + 0.5 - k.cx) / k.focal;
    let v = -(f64::from(pixel.y) + 0.5 - k.cy) / k.focal;
    let local = [u, v, -1.0];
    let mut world = [0.0; 3];
    for (r, w) in world.iter_mut().enumerate() {
        *w = p[r][0] * local[0] + p[r][1] * local[1] + p[r][2] * local[2];
    }
    Ok(Ray {
        origin: [p[0][3], p[1][3], p[2][3]],
        direction: normalize(world),
        pixel_id,
        ground_truth: pixel.color,
    })
}

/// Slab test against an axis-aligned box; returns the parametric entry and
/// exit distances when the ray overlaps the box for `t >= 0`.
pub fn ray_box(ray: &Ray, min: Vec3, max: Vec3) -> Option<(f64, f64)> {
    let mut t0 = 0.0f64;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        let inv = 1.0 / ray.direction[a];
        let mut near = (min[a] - ray.origin[a]) * inv;
        let mut far = (max[a] - ray.origin[a]) * inv;
        if near > far {
            std::mem::swap(&mut near, &mut far);
        }
        if near.is_nan() || far.is_nan() {
            // direction component is zero and origin lies on a slab face
            continue;
        }
        t0 = t0.max(near);
        t1 = t1.min(far);
    }
    (t0 < t1).then_some((t0, t1))
}

/// `n` distances in `[near, far)`: midpoints of equal sub-intervals, or one
/// uniform draw per sub-interval when `stratified`.
pub fn sample_along_ray(near: f64, far: f64, n: usize, seed: u64, stratified: bool) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0.0; n];
    sample_along_ray_with(&mut rng, near, far, stratified, &mut out)?;
    Ok(out)
}

pub fn sample_along_ray_with(rng: &mut impl Rng, near: f64, far: f64, stratified: bool, out: &mut [f64]) -> Result<()> {
    if !(near.is_finite() && far.is_finite()) || near < 0.0 || near >= far {
        return Err(contract(format!("invalid sampling interval [{near}, {far}]")));
    }
    if out.is_empty() {
        return Err(contract("at least one sample per ray is required"));
    }
    let step = (far - near) / out.len() as f64;
    for (k, t) in out.iter_mut().enumerate() {
        let u: f64 = if stratified { rng.gen() } else { 0.5 };
        *t = near + (k as f64 + u) * step;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplePoint {
    pub t: f64,
    pub sigma: f64,
    pub color: Vec3,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SampleGrad {
    pub sigma: f64,
    pub color: Vec3,
}

/// State retained by [`composite`] for the backward pass.
#[derive(Clone, Debug)]
pub struct CompositeCache {
    samples: Vec<SamplePoint>,
    t_far: f64,
    background: Vec3,
    /// `T_1 ..= T_{N+1}`.
    transmittance: Vec<f64>,
    alpha: Vec<f64>,
}

impl CompositeCache {
    pub fn transmittance(&self) -> &[f64] {
        &self.transmittance
    }

    /// Contribution weight `T_k * alpha_k` of each sample.
    pub fn weights(&self) -> Vec<f64> {
        self.alpha.iter().zip(&self.transmittance).map(|(a, t)| a * t).collect()
    }
}

fn deltas(samples: &[SamplePoint], t_far: f64) -> impl Iterator<Item = f64> + '_ {
    samples
        .iter()
        .enumerate()
        .map(move |(k, s)| samples.get(k + 1).map_or(t_far, |n| n.t) - s.t)
}

/// Alpha-composites samples front to back:
/// `C = sum_k T_k (1 - exp(-sigma_k delta_k)) c_k + T_{N+1} background`,
/// with `delta_k = t_{k+1} - t_k`, `t_{N+1} = t_far` and
/// `T_k = exp(-sum_{j<k} sigma_j delta_j)`.
pub fn composite(samples: &[SamplePoint], t_far: f64, background: Vec3) -> Result<(Vec3, CompositeCache)> {
    for (k, s) in samples.iter().enumerate() {
        if !(s.sigma.is_finite() && s.t.is_finite()) || s.color.iter().any(|c| !c.is_finite()) {
            return Err(contract(format!("non-finite sample {k}")));
        }
        if s.sigma < 0.0 {
            return Err(contract(format!("negative density {} at sample {k}", s.sigma)));
        }
        let next = samples.get(k + 1).map_or(t_far, |n| n.t);
        let strict = k + 1 < samples.len();
        if next < s.t || (strict && next == s.t) {
            return Err(contract(format!("sample distances not increasing at sample {k}")));
        }
    }
    let n = samples.len();
    let mut transmittance = Vec::with_capacity(n + 1);
    let mut alpha = Vec::with_capacity(n);
    let mut color = [0.0; 3];
    let mut optical_depth = 0.0;
    transmittance.push(1.0);
    for (s, delta) in samples.iter().zip(deltas(samples, t_far)) {
        let tk = *transmittance.last().expect("non-empty");
        let tau = s.sigma * delta;
        let a = -(-tau).exp_m1();
        for ch in 0..3 {
            color[ch] += tk * a * s.color[ch];
        }
        optical_depth += tau;
        alpha.push(a);
        transmittance.push((-optical_depth).exp());
    }
    let t_end = transmittance[n];
    for ch in 0..3 {
        color[ch] += t_end * background[ch];
    }
    Ok((color, CompositeCache { samples: samples.to_vec(), t_far, background, transmittance, alpha }))
}

/// Gradient of the composited color with respect to every sample's density
/// and color, given `upstream = d loss / d C`.
pub fn composite_backward(samples: &[SamplePoint], cache: &CompositeCache, upstream: Vec3) -> Result<Vec<SampleGrad>> {
    if samples != cache.samples.as_slice() {
        return Err(Error::StaleCache("samples differ from the composited ones"));
    }
    let n = samples.len();
    let mut grads = vec![SampleGrad::default(); n];
    // suffix = upstream . (sum_{j>k} w_j c_j + T_{N+1} bg)
    let mut suffix = dot(upstream, cache.background) * cache.transmittance[n];
    for (k, delta) in deltas(samples, cache.t_far).enumerate().collect::<Vec<_>>().into_iter().rev() {
        let s = &samples[k];
        let tk = cache.transmittance[k];
        let w = tk * cache.alpha[k];
        grads[k].color = [w * upstream[0], w * upstream[1], w * upstream[2]];
        let t_next = cache.transmittance[k + 1];
        grads[k].sigma = delta * (t_next * dot(upstream, s.color) - suffix);
        suffix += w * dot(upstream, s.color);
    }
    Ok(grads)
}

/// `sum_r |predicted_r - truth_r|^2`.
pub fn reconstruction_loss(predicted: &[Vec3], ground_truth: &[Vec3]) -> Result<f64> {
    if predicted.len() != ground_truth.len() {
        return Err(contract(format!(
            "loss over {} predictions and {} targets",
            predicted.len(),
            ground_truth.len()
        )));
    }
    Ok(predicted
        .iter()
        .zip(ground_truth)
        .map(|(p, g)| (0..3).map(|c| (p[c] - g[c]).powi(2)).sum::<f64>())
        .sum())
}
