//! Run configuration file.

use std::path::{Path, PathBuf};

use instant3d::{generate_toy_scene, load_manifest, DecomposedFieldConfig, HashConfig, Scene, ToySceneSpec, UpdateFrequency};
use instant3d_sim::SimConfig;
use serde::Deserialize;

use crate::Failure;

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// `toy:<name>` or a path to a transforms manifest.
    pub scene: Option<String>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub allow_inverted: bool,
    #[serde(default)]
    pub toy: ToySection,
    #[serde(default)]
    pub field: FieldSection,
    #[serde(default)]
    pub trace: TraceSection,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub report: ReportSection,
    /// Directory of the config file; relative paths resolve against it.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToySection {
    pub views: usize,
    pub test_views: usize,
    pub image_size: u32,
    /// Seed of the generated images, independent of the training seed.
    pub seed: u64,
}

impl Default for ToySection {
    fn default() -> Self {
        Self { views: 8, test_views: 2, image_size: 64, seed: 7 }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldSection {
    pub density_table_size: u32,
    pub color_table_size: u32,
    pub levels: u32,
    pub features: usize,
    pub base_resolution: u32,
    pub growth_factor: f64,
    pub density_freq: String,
    pub color_freq: String,
    pub learning_rate: f64,
    pub mlp_learning_rate: f64,
    pub iterations: u32,
    pub batch_size: usize,
    pub samples_per_ray: usize,
    pub stratified: bool,
    pub background: [f64; 3],
    pub fused_baseline: bool,
    pub eval_every: u32,
}

impl Default for FieldSection {
    fn default() -> Self {
        let d = DecomposedFieldConfig::default();
        Self {
            density_table_size: d.density.table_size,
            color_table_size: d.color.table_size,
            levels: d.density.levels,
            features: d.density.features,
            base_resolution: d.density.base_resolution,
            growth_factor: d.density.growth_factor,
            density_freq: d.density_freq.to_string(),
            color_freq: d.color_freq.to_string(),
            learning_rate: d.learning_rate,
            mlp_learning_rate: d.mlp_learning_rate,
            iterations: d.iterations,
            batch_size: d.batch_size,
            samples_per_ray: d.samples_per_ray,
            stratified: d.stratified,
            background: d.background,
            fused_baseline: d.fused_baseline,
            eval_every: d.eval_every,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceSection {
    /// Training iterations captured by `trace` and `compare --simulate`.
    pub iterations: u32,
}

impl Default for TraceSection {
    fn default() -> Self {
        Self { iterations: 1 }
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSection {
    pub dir: Option<PathBuf>,
}

pub fn load(path: Option<&Path>) -> Result<RunConfig, Failure> {
    let Some(path) = path else { return Ok(RunConfig::default()) };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let mut cfg: RunConfig =
        toml::from_str(&text).map_err(|e| Failure::Usage(format!("invalid config {}: {e}", path.display())))?;
    cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(cfg)
}

/// Where the scene comes from after validation.
#[derive(Clone, Debug, PartialEq)]
pub enum SceneSource {
    Toy { name: String, views: usize, test_views: usize, image_size: u32, seed: u64 },
    Manifest(PathBuf),
}

impl RunConfig {
    pub fn scene_source(&self) -> Result<SceneSource, Failure> {
        let raw = self
            .scene
            .as_deref()
            .ok_or_else(|| Failure::Usage("config field `scene` is required (or pass --scene)".into()))?;
        if let Some(name) = raw.strip_prefix("toy:") {
            if ToySceneSpec::by_name(name).is_none() {
                return Err(Failure::Usage(format!("field `scene`: unknown toy scene `{name}`")));
            }
            let t = &self.toy;
            return Ok(SceneSource::Toy {
                name: name.to_string(),
                views: t.views,
                test_views: t.test_views,
                image_size: t.image_size,
                seed: t.seed,
            });
        }
        let p = self.base_dir.join(raw);
        if !p.is_file() {
            return Err(Failure::Usage(format!("field `scene`: no manifest at {}", p.display())));
        }
        Ok(SceneSource::Manifest(p))
    }

    pub fn field_config(&self) -> Result<DecomposedFieldConfig, Failure> {
        let f = &self.field;
        let freq = |name: &str, v: &str| {
            v.parse::<UpdateFrequency>().map_err(|e| Failure::Usage(format!("field `field.{name}`: {e}")))
        };
        let grid = |table_size| HashConfig {
            table_size,
            features: f.features,
            base_resolution: f.base_resolution,
            levels: f.levels,
            growth_factor: f.growth_factor,
            ..HashConfig::default()
        };
        let cfg = DecomposedFieldConfig {
            density: grid(f.density_table_size),
            color: grid(f.color_table_size),
            density_freq: freq("density_freq", &f.density_freq)?,
            color_freq: freq("color_freq", &f.color_freq)?,
            learning_rate: f.learning_rate,
            mlp_learning_rate: f.mlp_learning_rate,
            iterations: f.iterations,
            batch_size: f.batch_size,
            samples_per_ray: f.samples_per_ray,
            stratified: f.stratified,
            background: f.background,
            seed: self.seed.unwrap_or(0),
            fused_baseline: f.fused_baseline,
            eval_every: f.eval_every,
        };
        let warnings = cfg.validate(self.allow_inverted).map_err(|e| Failure::Usage(e.to_string()))?;
        for w in warnings {
            eprintln!("warning: {w}");
        }
        Ok(cfg)
    }

    pub fn report_dir(&self) -> Option<PathBuf> {
        self.report.dir.as_ref().map(|d| self.base_dir.join(d))
    }
}

pub fn build_scene(source: &SceneSource) -> anyhow::Result<Scene> {
    Ok(match source {
        SceneSource::Toy { name, views, test_views, image_size, seed } => {
            let spec = ToySceneSpec::by_name(name).expect("validated toy name");
            generate_toy_scene(&spec, *views, *test_views, *image_size, *seed)?
        }
        SceneSource::Manifest(p) => load_manifest(p)?,
    })
}
