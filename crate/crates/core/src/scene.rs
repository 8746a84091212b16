//! Posed image sets: loading from a transforms-style JSON manifest and
//! generating procedural scenes with analytically rendered ground truth.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::render::{dot, normalize, pixel_to_ray, Camera, Intrinsics, Pixel, Pose, Ray, Vec3};

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    /// Row-major RGB in `[0, 1]`.
    pub data: Vec<f64>,
}

impl Image {
    pub fn filled(width: u32, height: u32, color: Vec3) -> Self {
        let mut data = Vec::with_capacity((width * height * 3) as usize);
        for _ in 0..width * height {
            data.extend_from_slice(&color);
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> Vec3 {
        let i = ((y * self.width + x) * 3) as usize;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: u32, y: u32, c: Vec3) {
        let i = ((y * self.width + x) * 3) as usize;
        self.data[i..i + 3].copy_from_slice(&c);
    }

    /// Rounds every channel to the nearest 8-bit level.
    pub fn quantize(&mut self) {
        for v in &mut self.data {
            *v = f64::from(to_u8(*v)) / 255.0;
        }
    }

    pub fn write_ppm(&self, mut w: impl Write) -> Result<()> {
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self.data.iter().map(|&v| to_u8(v)).collect();
        w.write_all(&bytes)?;
        Ok(())
    }

    pub fn save_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(fs::File::create(path)?);
        self.write_ppm(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn read_ppm(r: impl Read) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut tokens = Vec::new();
        let mut line = String::new();
        // P6 header: magic, width, height, maxval; '#' starts a comment
        while tokens.len() < 4 {
            line.clear();
            if r.read_line(&mut line)? == 0 {
                return Err(Error::Load("truncated PPM header".into()));
            }
            let content = line.split('#').next().unwrap_or("");
            tokens.extend(content.split_whitespace().map(str::to_owned));
        }
        if tokens[0] != "P6" || tokens.len() != 4 {
            return Err(Error::Load(format!("unsupported PPM header {:?}", tokens)));
        }
        let parse = |s: &str| s.parse::<u32>().map_err(|_| Error::Load(format!("bad PPM header field {s:?}")));
        let (width, height, maxval) = (parse(&tokens[1])?, parse(&tokens[2])?, parse(&tokens[3])?);
        if maxval != 255 || width == 0 || height == 0 {
            return Err(Error::Load(format!("unsupported PPM geometry {width}x{height} max {maxval}")));
        }
        let mut bytes = vec![0u8; (width * height * 3) as usize];
        r.read_exact(&mut bytes).map_err(|_| Error::Load("truncated PPM pixel data".into()))?;
        Ok(Self { width, height, data: bytes.iter().map(|&b| f64::from(b) / 255.0).collect() })
    }

    /// PNG decode; alpha is premultiplied onto a black background.
    pub fn read_png(mut r: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
        decoder.set_transformations(png::Transformations::normalize_to_color8());
        let mut reader = decoder.read_info().map_err(|e| Error::Load(format!("PNG decode: {e}")))?;
        let mut buf = vec![0u8; reader.output_buffer_size().ok_or_else(|| Error::Load("PNG too large".into()))?];
        let info = reader.next_frame(&mut buf).map_err(|e| Error::Load(format!("PNG decode: {e}")))?;
        let channels = info.color_type.samples();
        let (width, height) = (info.width, info.height);
        let mut data = Vec::with_capacity((width * height * 3) as usize);
        for y in 0..height as usize {
            let row = &buf[y * info.line_size..y * info.line_size + width as usize * channels];
            for px in row.chunks_exact(channels) {
                let (rgb, alpha) = match channels {
                    1 => ([px[0]; 3], 255),
                    2 => ([px[0]; 3], px[1]),
                    3 => ([px[0], px[1], px[2]], 255),
                    _ => ([px[0], px[1], px[2]], px[3]),
                };
                let a = f64::from(alpha) / 255.0;
                data.extend(rgb.iter().map(|&c| f64::from(c) / 255.0 * a));
            }
        }
        Ok(Self { width, height, data })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::Load(format!("missing image {}: {e}", path.display())))?;
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("png") => Self::read_png(file),
            Some("ppm") => Self::read_ppm(file),
            _ => Err(Error::Load(format!("unsupported image format {}", path.display()))),
        }
    }
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub pose: Pose,
    pub image: Image,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub intrinsics: Intrinsics,
    pub train_views: Vec<View>,
    pub test_views: Vec<View>,
    pub near: f64,
    pub far: f64,
    /// World-space box mapped onto the unit cube of the embedding grids.
    pub bounds: [Vec3; 2],
}

pub const DEFAULT_BOUNDS: [Vec3; 2] = [[-1.0; 3], [1.0; 3]];

impl Scene {
    pub fn camera(&self, pose: &Pose) -> Camera {
        Camera { intrinsics: self.intrinsics, pose: *pose }
    }

    pub fn pixels_per_view(&self) -> u64 {
        u64::from(self.intrinsics.width) * u64::from(self.intrinsics.height)
    }

    /// Maps a world point into grid coordinates `[0, 1]^3`, clamping points
    /// that fall a rounding error outside the box.
    pub fn normalize_point(&self, p: Vec3) -> Vec3 {
        let [lo, hi] = self.bounds;
        let mut out = [0.0; 3];
        for a in 0..3 {
            out[a] = ((p[a] - lo[a]) / (hi[a] - lo[a])).clamp(0.0, 1.0);
        }
        out
    }

    /// Every ray of one view in row-major pixel order.
    pub fn view_rays(&self, view: &View, view_index: u32) -> Result<Vec<Ray>> {
        let camera = self.camera(&view.pose);
        let mut rays = Vec::with_capacity(self.pixels_per_view() as usize);
        for y in 0..self.intrinsics.height {
            for x in 0..self.intrinsics.width {
                let pixel = Pixel { view: view_index, x, y, color: view.image.get(x, y) };
                let id = u64::from(view_index) * self.pixels_per_view() + u64::from(y * self.intrinsics.width + x);
                rays.push(pixel_to_ray(&pixel, &camera, id)?);
            }
        }
        Ok(rays)
    }

    pub fn validate(&self) -> Result<()> {
        if self.train_views.is_empty() {
            return Err(Error::Load("empty scene".into()));
        }
        if !(self.near >= 0.0 && self.far > self.near) {
            return Err(Error::Load(format!("invalid near/far {} {}", self.near, self.far)));
        }
        for a in 0..3 {
            if !(self.bounds[1][a] > self.bounds[0][a]) {
                return Err(Error::Load("scene bounds are empty".into()));
            }
        }
        for (i, v) in self.train_views.iter().chain(&self.test_views).enumerate() {
            check_rigid(&v.pose).map_err(|e| Error::Load(format!("frame {i}: {e}")))?;
            if v.image.width != self.intrinsics.width || v.image.height != self.intrinsics.height {
                return Err(Error::Load(format!(
                    "frame {i}: image is {}x{}, expected {}x{}",
                    v.image.width, v.image.height, self.intrinsics.width, self.intrinsics.height
                )));
            }
        }
        Ok(())
    }
}

fn check_rigid(p: &Pose) -> std::result::Result<(), String> {
    if p.iter().flatten().any(|v| !v.is_finite()) {
        return Err("non-finite pose entry".into());
    }
    if p[3] != [0.0, 0.0, 0.0, 1.0] {
        return Err(format!("last pose row is {:?}, expected [0, 0, 0, 1]", p[3]));
    }
    for i in 0..3 {
        for j in 0..3 {
            let d: f64 = (0..3).map(|k| p[k][i] * p[k][j]).sum();
            let expect = if i == j { 1.0 } else { 0.0 };
            if (d - expect).abs() > 1e-4 {
                return Err("rotation is not orthonormal".into());
            }
        }
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestFrame {
    file_path: String,
    transform_matrix: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    camera_angle_x: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fl_x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cx: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    near: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    far: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    aabb: Option<[Vec3; 2]>,
    frames: Vec<ManifestFrame>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    test_frames: Vec<ManifestFrame>,
}

pub const DEFAULT_NEAR: f64 = 2.0;
pub const DEFAULT_FAR: f64 = 6.0;

fn resolve_image(dir: &Path, file_path: &str) -> Result<PathBuf> {
    let p = dir.join(file_path);
    if p.extension().is_some() {
        return Ok(p);
    }
    for ext in ["png", "ppm"] {
        let candidate = p.with_extension(ext);
        if candidate.exists() {
            return Ok(candidate);
        }
    }
    Err(Error::Load(format!("missing image {}", p.display())))
}

fn parse_pose(m: &[Vec<f64>], index: usize) -> Result<Pose> {
    if m.len() != 4 || m.iter().any(|r| r.len() != 4) {
        return Err(Error::Load(format!("frame {index}: transform_matrix must be 4x4")));
    }
    let mut pose = [[0.0; 4]; 4];
    for (r, row) in m.iter().enumerate() {
        pose[r].copy_from_slice(row);
    }
    Ok(pose)
}

/// Loads a scene from a transforms-style JSON manifest. Image paths are
/// relative to the manifest; a path without extension tries `.png` then
/// `.ppm`.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Scene> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::Load(format!("cannot read {}: {e}", path.display())))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Load(format!("malformed manifest {}: {e}", path.display())))?;
    if manifest.frames.is_empty() {
        return Err(Error::Load("empty scene".into()));
    }
    let dir = path.parent().unwrap_or(Path::new("."));
    let load_frames = |frames: &[ManifestFrame], offset: usize| -> Result<Vec<View>> {
        frames
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let pose = parse_pose(&f.transform_matrix, i + offset)?;
                check_rigid(&pose).map_err(|e| Error::Load(format!("frame {}: {e}", i + offset)))?;
                let image = Image::load(&resolve_image(dir, &f.file_path)?)?;
                Ok(View { pose, image })
            })
            .collect()
    };
    let train_views = load_frames(&manifest.frames, 0)?;
    let test_views = load_frames(&manifest.test_frames, manifest.frames.len())?;
    let (w, h) = (train_views[0].image.width, train_views[0].image.height);
    if !(manifest.camera_angle_x > 0.0 && manifest.camera_angle_x < std::f64::consts::PI) && manifest.fl_x.is_none() {
        return Err(Error::Load(format!("camera_angle_x {} out of range", manifest.camera_angle_x)));
    }
    let mut intrinsics = match manifest.fl_x {
        Some(f) => Intrinsics::centered(w, h, f),
        None => Intrinsics::from_fov_x(w, h, manifest.camera_angle_x),
    };
    if let Some(cx) = manifest.cx {
        intrinsics.cx = cx;
    }
    if let Some(cy) = manifest.cy {
        intrinsics.cy = cy;
    }
    if !(intrinsics.focal.is_finite() && intrinsics.focal > 0.0) {
        return Err(Error::Load("focal length must be positive".into()));
    }
    let scene = Scene {
        intrinsics,
        train_views,
        test_views,
        near: manifest.near.unwrap_or(DEFAULT_NEAR),
        far: manifest.far.unwrap_or(DEFAULT_FAR),
        bounds: manifest.aabb.unwrap_or(DEFAULT_BOUNDS),
    };
    scene.validate()?;
    Ok(scene)
}

/// Writes `transforms.json` plus one PPM per view into `dir`.
pub fn save_scene(scene: &Scene, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir.join("images"))?;
    let save = |views: &[View], prefix: &str| -> Result<Vec<ManifestFrame>> {
        views
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let rel = format!("images/{prefix}_{i:03}.ppm");
                v.image.save_ppm(dir.join(&rel))?;
                Ok(ManifestFrame {
                    file_path: rel,
                    transform_matrix: v.pose.iter().map(|r| r.to_vec()).collect(),
                })
            })
            .collect()
    };
    let frames = save(&scene.train_views, "train")?;
    let test_frames = save(&scene.test_views, "test")?;
    let manifest = Manifest {
        camera_angle_x: scene.intrinsics.camera_angle_x(),
        fl_x: Some(scene.intrinsics.focal),
        cx: Some(scene.intrinsics.cx),
        cy: Some(scene.intrinsics.cy),
        near: Some(scene.near),
        far: Some(scene.far),
        aabb: Some(scene.bounds),
        frames,
        test_frames,
    };
    let path = dir.join("transforms.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Load(e.to_string()))?;
    fs::write(&path, text)?;
    Ok(path)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Shape {
    Sphere { center: Vec3, radius: f64 },
    Box { min: Vec3, max: Vec3 },
}

/// A constant-density, constant-color solid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Solid {
    pub shape: Shape,
    pub density: f64,
    pub color: Vec3,
}

impl Solid {
    /// Parametric interval where the ray is inside the solid.
    fn span(&self, ray: &Ray) -> Option<(f64, f64)> {
        match self.shape {
            Shape::Sphere { center, radius } => {
                let oc = [ray.origin[0] - center[0], ray.origin[1] - center[1], ray.origin[2] - center[2]];
                let b = dot(oc, ray.direction);
                let c = dot(oc, oc) - radius * radius;
                let disc = b * b - c;
                if disc <= 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                Some((-b - s, -b + s))
            }
            Shape::Box { min, max } => crate::render::ray_box(ray, min, max),
        }
    }

    pub fn contains(&self, p: Vec3) -> bool {
        match self.shape {
            Shape::Sphere { center, radius } => {
                let d = [p[0] - center[0], p[1] - center[1], p[2] - center[2]];
                dot(d, d) < radius * radius
            }
            Shape::Box { min, max } => (0..3).all(|a| p[a] > min[a] && p[a] < max[a]),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToySceneSpec {
    pub solids: Vec<Solid>,
    pub background: Vec3,
    pub camera_radius: f64,
    pub focal: f64,
    pub near: f64,
    pub far: f64,
}

impl ToySceneSpec {
    fn with(solids: Vec<Solid>) -> Self {
        Self { solids, background: [0.0; 3], camera_radius: 3.0, focal: 64.0, near: 1.0, far: 5.0 }
    }

    pub fn sphere() -> Self {
        Self::with(vec![Solid {
            shape: Shape::Sphere { center: [0.0; 3], radius: 0.6 },
            density: 20.0,
            color: [0.9, 0.45, 0.2],
        }])
    }

    pub fn opaque_sphere() -> Self {
        Self::with(vec![Solid {
            shape: Shape::Sphere { center: [0.0; 3], radius: 0.5 },
            density: 1.0e3,
            color: [0.2, 0.7, 0.4],
        }])
    }

    pub fn spheres() -> Self {
        Self::with(vec![
            Solid { shape: Shape::Sphere { center: [-0.35, 0.0, 0.1], radius: 0.4 }, density: 25.0, color: [0.85, 0.3, 0.25] },
            Solid { shape: Shape::Sphere { center: [0.4, 0.2, -0.1], radius: 0.3 }, density: 25.0, color: [0.2, 0.5, 0.9] },
            Solid { shape: Shape::Box { min: [-0.6, -0.6, -0.7], max: [0.6, 0.6, -0.5] }, density: 15.0, color: [0.8, 0.8, 0.3] },
        ])
    }

    pub fn empty() -> Self {
        Self::with(Vec::new())
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "sphere" => Some(Self::sphere()),
            "opaque-sphere" => Some(Self::opaque_sphere()),
            "spheres" => Some(Self::spheres()),
            "empty" => Some(Self::empty()),
            _ => None,
        }
    }

    /// Density and density-weighted color at a point; overlaps add.
    pub fn field(&self, p: Vec3) -> (f64, Vec3) {
        let mut sigma = 0.0;
        let mut c = [0.0; 3];
        for s in self.solids.iter().filter(|s| s.contains(p)) {
            sigma += s.density;
            for ch in 0..3 {
                c[ch] += s.density * s.color[ch];
            }
        }
        if sigma > 0.0 {
            for v in &mut c {
                *v /= sigma;
            }
        }
        (sigma, c)
    }

    /// Exact volume-rendering integral over `[near, far]`: the field is
    /// piecewise constant between solid boundaries.
    pub fn analytic_color(&self, ray: &Ray, near: f64, far: f64) -> Vec3 {
        let mut cuts = vec![near, far];
        for s in &self.solids {
            if let Some((a, b)) = s.span(ray) {
                cuts.extend([a, b].into_iter().filter(|t| *t > near && *t < far));
            }
        }
        cuts.sort_by(|a, b| a.total_cmp(b));
        let mut color = [0.0; 3];
        let mut transmittance = 1.0;
        for w in cuts.windows(2) {
            let len = w[1] - w[0];
            if len <= 0.0 {
                continue;
            }
            let (sigma, c) = self.field(ray.at(0.5 * (w[0] + w[1])));
            let a = -(-sigma * len).exp_m1();
            for ch in 0..3 {
                color[ch] += transmittance * a * c[ch];
            }
            transmittance *= 1.0 - a;
        }
        for ch in 0..3 {
            color[ch] += transmittance * self.background[ch];
        }
        color
    }
}

/// Camera-to-world pose at `eye` looking at the origin, world +z up.
pub fn look_at_origin(eye: Vec3) -> Pose {
    let z = normalize(eye);
    let up = if z[2].abs() > 0.999 { [0.0, 1.0, 0.0] } else { [0.0, 0.0, 1.0] };
    let x = normalize(cross(up, z));
    let y = cross(z, x);
    [
        [x[0], y[0], z[0], eye[0]],
        [x[1], y[1], z[1], eye[1]],
        [x[2], y[2], z[2], eye[2]],
        [0.0, 0.0, 0.0, 1.0],
    ]
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn render_view(spec: &ToySceneSpec, intrinsics: Intrinsics, pose: Pose) -> Result<Image> {
    let camera = Camera { intrinsics, pose };
    let mut img = Image::filled(intrinsics.width, intrinsics.height, [0.0; 3]);
    for y in 0..intrinsics.height {
        for x in 0..intrinsics.width {
            let ray = pixel_to_ray(&Pixel { view: 0, x, y, color: [0.0; 3] }, &camera, 0)?;
            img.set(x, y, spec.analytic_color(&ray, spec.near, spec.far));
        }
    }
    img.quantize();
    Ok(img)
}

/// Renders `n_views` training views (plus `n_test` held-out views) from
/// cameras on a sphere around the origin. Images are quantized to 8 bits so
/// that a PPM round trip is lossless.
pub fn generate_toy_scene(spec: &ToySceneSpec, n_views: usize, n_test: usize, image_size: u32, seed: u64) -> Result<Scene> {
    if n_views == 0 {
        return Err(Error::Contract("at least one view is required".into()));
    }
    if image_size == 0 {
        return Err(Error::Contract("image size must be positive".into()));
    }
    let intrinsics = Intrinsics::centered(image_size, image_size, spec.focal * f64::from(image_size) / 64.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut make = |count: usize| -> Result<Vec<View>> {
        (0..count)
            .map(|_| {
                let azimuth = rng.gen_range(0.0..std::f64::consts::TAU);
                let elevation: f64 = rng.gen_range(-0.35..1.2);
                let eye = [
                    spec.camera_radius * elevation.cos() * azimuth.cos(),
                    spec.camera_radius * elevation.cos() * azimuth.sin(),
                    spec.camera_radius * elevation.sin(),
                ];
                let pose = look_at_origin(eye);
                Ok(View { pose, image: render_view(spec, intrinsics, pose)? })
            })
            .collect()
    };
    let train_views = make(n_views)?;
    let test_views = make(n_test)?;
    Ok(Scene { intrinsics, train_views, test_views, near: spec.near, far: spec.far, bounds: DEFAULT_BOUNDS })
}
