//! Headless 3D semantic labeling.
//!
//! The crate covers the whole offline pipeline: scene IO and chunking,
//! level-of-detail generation and voxelization, ray-driven paint sessions,
//! multi-annotator fusion with entropy uncertainty, nearest-neighbor filling,
//! label image rendering, and area-weighted evaluation.

pub mod bvh;
pub mod camera;
pub mod error;
pub mod fill;
pub mod fusion;
pub mod geom;
pub mod io;
pub mod labels;
pub mod mesh;
pub mod metrics;
pub mod preprocess;
pub mod raster;
pub mod scene;
pub mod session;
pub mod simulate;
pub mod spatial;
pub mod synth;
pub mod taxonomy;

pub use error::{Error, Result};
pub use fusion::{UncertaintyEntry, UncertaintyMap, VoteHistogram};
pub use labels::{AnnotationSet, ElementKind, LabelId, LabelMap};
pub use mesh::{PointCloud, TriangleMesh};
pub use preprocess::{ChunkSet, PreprocessConfig, VoxelGrid};
pub use session::{Session, Stroke, StrokeTarget};
pub use taxonomy::LabelTaxonomy;
