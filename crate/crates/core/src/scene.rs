//! A preprocessed scene: the paintable level-0 mesh, its chunks, and for
//! point clouds the voxel grid that links cube faces back to points.
//!
//! On disk a scene is a directory:
//!
//! ```text
//! scene.json            id, kind, preprocessing config
//! source.ply            the input mesh or point cloud
//! chunks/index.json     chunk cells, face ranges, LOD coverage
//! chunks/<id>/lod{0,1,2}.ply
//! grid.json, occupied.csv   (point clouds only)
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bvh::Bvh;
use crate::error::{Error, Result};
use crate::fusion::UncertaintyMap;
use crate::geom::Point;
use crate::io::{self, MeshFormat, PlyFormat};
use crate::labels::{ElementKind, LabelMap};
use crate::mesh::{PointCloud, TriangleMesh};
use crate::preprocess::{self, voxel, ChunkSet, PreprocessConfig, VoxelGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SceneKind {
    Mesh,
    Cloud,
}

#[derive(Debug, Clone)]
pub struct VoxelScene {
    pub grid: VoxelGrid,
    /// Cube face -> voxel element id.
    pub face_voxel: Vec<u32>,
    pub cloud: PointCloud,
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub id: String,
    pub config: PreprocessConfig,
    /// Level-0 paint surface; for clouds, the voxel cube mesh.
    pub mesh: TriangleMesh,
    pub chunks: ChunkSet,
    pub voxels: Option<VoxelScene>,
    centroids: Vec<Point>,
    areas: Vec<f64>,
    bvh: Bvh,
}

#[derive(Serialize, Deserialize)]
struct SceneFile {
    scene_id: String,
    kind: SceneKind,
    config: PreprocessConfig,
}

impl Scene {
    fn assemble(
        id: String,
        config: PreprocessConfig,
        mesh: TriangleMesh,
        chunks: ChunkSet,
        voxels: Option<VoxelScene>,
    ) -> Self {
        let centroids = mesh.face_centroids();
        let areas = mesh.face_areas();
        let bvh = Bvh::build(&mesh);
        Self {
            id,
            config,
            mesh,
            chunks,
            voxels,
            centroids,
            areas,
            bvh,
        }
    }

    /// Preprocesses a mesh. Coordinates are first rounded to file precision
    /// so a saved and reloaded scene is identical to the live one.
    pub fn from_mesh(id: impl Into<String>, mesh: TriangleMesh, config: PreprocessConfig) -> Result<Self> {
        let mesh = mesh.to_file_precision();
        let chunks = preprocess::split_chunks(&mesh, &config)?;
        Ok(Self::assemble(id.into(), config, mesh, chunks, None))
    }

    pub fn from_cloud(id: impl Into<String>, cloud: PointCloud, config: PreprocessConfig) -> Result<Self> {
        config.validate()?;
        let cloud = cloud.to_file_precision();
        let grid = voxel::voxelize(&cloud, config.voxel_step, config.min_points)?;
        let (mesh, face_voxel) = voxel::voxel_cube_mesh(&grid);
        if mesh.is_empty() {
            return Err(Error::Invalid(format!(
                "no voxel holds more than {} points at step {}",
                config.min_points, config.voxel_step
            )));
        }
        let chunks = preprocess::split_chunks(&mesh, &config)?;
        Ok(Self::assemble(
            id.into(),
            config,
            mesh,
            chunks,
            Some(VoxelScene {
                grid,
                face_voxel,
                cloud,
            }),
        ))
    }

    pub fn kind(&self) -> SceneKind {
        if self.voxels.is_some() {
            SceneKind::Cloud
        } else {
            SceneKind::Mesh
        }
    }

    pub fn face_count(&self) -> usize {
        self.mesh.face_count()
    }

    pub fn centroids(&self) -> &[Point] {
        &self.centroids
    }

    pub fn areas(&self) -> &[f64] {
        &self.areas
    }

    pub fn bvh(&self) -> &Bvh {
        &self.bvh
    }

    /// Element kind of an exported label map.
    pub fn export_kind(&self) -> ElementKind {
        match self.kind() {
            SceneKind::Mesh => ElementKind::Face,
            SceneKind::Cloud => ElementKind::Point,
        }
    }

    pub fn element_count(&self, kind: ElementKind) -> Result<usize> {
        match (kind, &self.voxels) {
            (ElementKind::Face, _) => Ok(self.mesh.face_count()),
            (ElementKind::Point, Some(v)) => Ok(v.cloud.len()),
            (ElementKind::Voxel, Some(v)) => Ok(v.grid.occupied_count()),
            (k, None) => Err(Error::SceneMismatch(format!("mesh scene has no {k} elements"))),
        }
    }

    /// Positions used for neighbor search: face centroids, points, or voxel
    /// centers.
    pub fn positions(&self, kind: ElementKind) -> Result<Vec<Point>> {
        match (kind, &self.voxels) {
            (ElementKind::Face, _) => Ok(self.centroids.clone()),
            (ElementKind::Point, Some(v)) => Ok(v.cloud.points().to_vec()),
            (ElementKind::Voxel, Some(v)) => Ok(v.grid.element_centers()),
            (k, None) => Err(Error::SceneMismatch(format!("mesh scene has no {k} elements"))),
        }
    }

    /// Per-element evaluation weights: face areas, or 1 per point/voxel.
    pub fn weights(&self, kind: ElementKind) -> Result<Vec<f64>> {
        match kind {
            ElementKind::Face => Ok(self.areas.clone()),
            k => Ok(vec![1.0; self.element_count(k)?]),
        }
    }

    /// Per-face labels for rendering, from a face, voxel or point map.
    pub fn face_labels(&self, labels: &LabelMap) -> Result<LabelMap> {
        self.check_map(labels)?;
        match (labels.kind(), &self.voxels) {
            (ElementKind::Face, _) => Ok(labels.clone()),
            (ElementKind::Voxel, Some(v)) => Ok(voxel::face_labels_from_voxels(labels, &v.face_voxel)),
            (ElementKind::Point, Some(v)) => {
                let vox = voxel::voxel_labels_from_points(&v.grid, &v.cloud, labels)?;
                Ok(voxel::face_labels_from_voxels(&vox, &v.face_voxel))
            }
            (k, None) => Err(Error::SceneMismatch(format!("mesh scene has no {k} elements"))),
        }
    }

    /// Per-face uncertainty for rendering. Elements without an entry count
    /// as fully uncertain; for point maps a voxel takes the mean over its
    /// points.
    pub fn face_uncertainty(&self, u: &UncertaintyMap) -> Result<Vec<f64>> {
        let n = self.element_count(u.kind)?;
        if u.len() != n {
            return Err(Error::SceneMismatch(format!(
                "uncertainty over {} {}s, scene {} has {n}",
                u.len(),
                u.kind,
                self.id
            )));
        }
        let dense = u.dense(1.0);
        match (u.kind, &self.voxels) {
            (ElementKind::Face, _) => Ok(dense),
            (ElementKind::Voxel, Some(v)) => Ok(v.face_voxel.iter().map(|&e| dense[e as usize]).collect()),
            (ElementKind::Point, Some(v)) => {
                let mut sum = vec![(0.0, 0u32); v.grid.occupied_count()];
                for (p, x) in v.cloud.points().iter().zip(&dense) {
                    if let Some(e) = v.grid.voxel_of(p).and_then(|c| v.grid.element_of(v.grid.linear(c))) {
                        sum[e].0 += x;
                        sum[e].1 += 1;
                    }
                }
                Ok(v.face_voxel
                    .iter()
                    .map(|&e| {
                        let (s, c) = sum[e as usize];
                        if c == 0 { 1.0 } else { s / c as f64 }
                    })
                    .collect())
            }
            (k, None) => Err(Error::SceneMismatch(format!("mesh scene has no {k} elements"))),
        }
    }

    /// Checks that a label map's element set fits this scene.
    pub fn check_map(&self, labels: &LabelMap) -> Result<()> {
        let n = self.element_count(labels.kind())?;
        if labels.len() != n {
            return Err(Error::SceneMismatch(format!(
                "label map has {} {}s, scene {} has {n}",
                labels.len(),
                labels.kind(),
                self.id
            )));
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let meta = SceneFile {
            scene_id: self.id.clone(),
            kind: self.kind(),
            config: self.config,
        };
        let p = dir.join("scene.json");
        fs::write(&p, serde_json::to_string_pretty(&meta)? + "\n").map_err(|e| Error::io(&p, e))?;
        match &self.voxels {
            None => io::save_mesh(&self.mesh, &dir.join("source.ply"), PlyFormat::BinaryLittleEndian)?,
            Some(v) => {
                io::save_point_cloud(&v.cloud, &dir.join("source.ply"), PlyFormat::BinaryLittleEndian)?;
                voxel::save_grid(&v.grid, dir)?;
            }
        }
        self.chunks.save(dir)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let p = dir.join("scene.json");
        let meta: SceneFile =
            serde_json::from_str(&fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?)?;
        let chunks = ChunkSet::load(dir)?;
        let source = dir.join("source.ply");
        let (mesh, voxels) = match meta.kind {
            SceneKind::Mesh => (io::load_mesh(&source, MeshFormat::Ply)?.mesh, None),
            SceneKind::Cloud => {
                let cloud = io::load_point_cloud(&source)?;
                let grid = voxel::load_grid(dir)?;
                let (mesh, face_voxel) = voxel::voxel_cube_mesh(&grid);
                (
                    mesh,
                    Some(VoxelScene {
                        grid,
                        face_voxel,
                        cloud,
                    }),
                )
            }
        };
        if chunks.source_face_count != mesh.face_count() {
            return Err(Error::SceneMismatch(format!(
                "chunk index covers {} faces, source has {}",
                chunks.source_face_count,
                mesh.face_count()
            )));
        }
        Ok(Self::assemble(meta.scene_id, meta.config, mesh, chunks, voxels))
    }

    /// Reads a scene from a directory, or preprocesses a single mesh/cloud
    /// file on the fly (a PLY without faces is taken as a point cloud).
    pub fn open(path: &Path, config: &PreprocessConfig) -> Result<Self> {
        if path.is_dir() {
            return Self::load(path);
        }
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scene".into());
        let format = MeshFormat::from_path(path)?;
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let loaded = io::parse_mesh(&bytes, format)?;
        if loaded.mesh.is_empty() && format == MeshFormat::Ply {
            Self::from_cloud(id, io::parse_point_cloud(&bytes)?, *config)
        } else {
            Self::from_mesh(id, loaded.mesh, *config)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    #[test]
    fn mesh_scene_directory_round_trip() {
        let mesh = synth::random_terrain(12, 12, 20.0, 2);
        let s = Scene::from_mesh("t", mesh, PreprocessConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        s.save(dir.path()).unwrap();
        let back = Scene::load(dir.path()).unwrap();
        assert_eq!(back.id, "t");
        assert_eq!(back.face_count(), s.face_count());
        assert_eq!(back.chunks.chunks.len(), s.chunks.chunks.len());
        assert_eq!(back.kind(), SceneKind::Mesh);
    }

    #[test]
    fn cloud_scene_has_voxel_elements() {
        let cloud = synth::random_cloud(5000, [0.0; 3], [1.0, 1.0, 0.5], 8);
        let cfg = PreprocessConfig {
            voxel_step: 0.25,
            ..Default::default()
        };
        let s = Scene::from_cloud("c", cloud, cfg).unwrap();
        let nv = s.element_count(ElementKind::Voxel).unwrap();
        assert_eq!(s.face_count(), 12 * nv);
        let dir = tempfile::tempdir().unwrap();
        s.save(dir.path()).unwrap();
        let back = Scene::load(dir.path()).unwrap();
        assert_eq!(back.kind(), SceneKind::Cloud);
        assert_eq!(back.element_count(ElementKind::Voxel).unwrap(), nv);
        assert_eq!(back.element_count(ElementKind::Point).unwrap(), 5000);
    }
}
