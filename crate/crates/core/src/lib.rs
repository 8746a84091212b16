//! Decomposed hash-grid radiance fields with instrumented embedding-table
//! access recording.
//!
//! The density and color branches each own a multiresolution spatial-hash
//! grid; a small MLP turns their interpolated features and the view
//! direction into density and color, which are alpha-composited along rays.

pub mod error;
pub mod field;
pub mod hash_grid;
pub mod mlp;
pub mod render;
pub mod scene;
pub mod trace;
pub mod train;

pub use error::{Error, Result};
pub use field::{BranchMask, DecomposedField, FieldGrads, RaySamples};
pub use hash_grid::{hash_index, neighbor_cube, EmbeddingTable, GridCube, HashConfig};
pub use mlp::MlpParams;
pub use scene::{generate_toy_scene, load_manifest, save_scene, Image, Scene, ToySceneSpec};
pub use trace::{AccessRecord, AccessTrace, Branch, Phase, TraceHeader, TraceSink};
pub use train::{apply_schedule, psnr, train, DecomposedFieldConfig, TrainReport, UpdateFrequency};
