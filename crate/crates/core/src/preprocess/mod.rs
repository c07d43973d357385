//! Spatial chunking, per-chunk levels of detail, voxelization, and the
//! export-side merge back onto the source scene.

pub mod lod;
pub mod voxel;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Point;
use crate::io::{self, MeshFormat, PlyFormat};
use crate::labels::{ElementKind, LabelMap, VOID};
use crate::mesh::{FaceId, TriangleMesh};

pub use lod::{build_lods, decimate, face_target, LodLevel};
pub use voxel::{
    transfer_voxel_labels, voxel_cube_mesh, voxelize, BoundsSignature, VoxelGrid,
};

pub const LOD_LEVELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    /// Edge length of the chunking grid, meters.
    pub cell_size: f64,
    /// Face-count ratio per level; the first must be 1.0.
    pub lod_ratios: [f64; LOD_LEVELS],
    /// Voxel edge length for point clouds, meters.
    pub voxel_step: f64,
    /// A voxel is occupied when it holds more than this many points.
    pub min_points: u32,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            cell_size: 8.0,
            lod_ratios: [1.0, 0.3, 0.1],
            voxel_step: 0.05,
            min_points: 5,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cell_size > 0.0 && self.cell_size.is_finite()) {
            return Err(Error::Invalid(format!("cell size must be positive, got {}", self.cell_size)));
        }
        if !(self.voxel_step > 0.0 && self.voxel_step.is_finite()) {
            return Err(Error::Invalid(format!("voxel step must be positive, got {}", self.voxel_step)));
        }
        let r = self.lod_ratios;
        if r[0] != 1.0 || !(r[1] < r[0] && r[2] < r[1] && r[2] > 0.0) {
            return Err(Error::Invalid(format!(
                "lod ratios must start at 1.0 and strictly decrease to a positive value, got {r:?}"
            )));
        }
        Ok(())
    }
}

/// One spatial chunk: the source faces whose centroid falls in a grid cell,
/// plus its levels of detail (coverage in chunk-local level-0 indices).
#[derive(Debug, Clone, PartialEq)]
pub struct Chunk {
    pub id: u32,
    pub cell: [i64; 3],
    /// Global source face ids, ascending. Local face `i` is `face_ids[i]`.
    pub face_ids: Vec<FaceId>,
    pub lods: Vec<LodLevel>,
}

impl Chunk {
    /// Source faces covered by a face of level `lod`.
    pub fn source_faces(&self, lod: usize, face: usize) -> impl Iterator<Item = FaceId> + '_ {
        self.lods[lod].coverage[face]
            .iter()
            .map(move |&l| self.face_ids[l as usize])
    }

    /// Coverage of a level in global source face ids.
    pub fn global_coverage(&self, lod: usize) -> Vec<Vec<FaceId>> {
        (0..self.lods[lod].coverage.len())
            .map(|f| self.source_faces(lod, f).collect())
            .collect()
    }

    pub fn local_index(&self, global: FaceId) -> Option<usize> {
        self.face_ids.binary_search(&global).ok()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChunkSet {
    pub cell_size: f64,
    pub lod_ratios: [f64; LOD_LEVELS],
    pub source_face_count: usize,
    pub chunks: Vec<Chunk>,
    face_chunk: Vec<u32>,
    cells: BTreeMap<[i64; 3], u32>,
}

pub fn cell_of(p: &Point, cell_size: f64) -> [i64; 3] {
    [
        (p.x / cell_size).floor() as i64,
        (p.y / cell_size).floor() as i64,
        (p.z / cell_size).floor() as i64,
    ]
}

/// Groups face ids by the grid cell containing their centroid, in cell
/// order. Empty cells produce nothing.
pub fn partition_faces(mesh: &TriangleMesh, cell_size: f64) -> Vec<([i64; 3], Vec<FaceId>)> {
    let mut cells: BTreeMap<[i64; 3], Vec<FaceId>> = BTreeMap::new();
    for (f, c) in mesh.face_centroids().iter().enumerate() {
        cells.entry(cell_of(c, cell_size)).or_default().push(f as FaceId);
    }
    cells.into_iter().collect()
}

/// Splits a mesh into grid-cell chunks and builds each chunk's levels of
/// detail.
pub fn split_chunks(mesh: &TriangleMesh, config: &PreprocessConfig) -> Result<ChunkSet> {
    config.validate()?;
    if mesh.is_empty() {
        return Err(Error::Invalid("cannot chunk an empty mesh".into()));
    }
    let parts = partition_faces(mesh, config.cell_size);
    let chunks: Vec<Chunk> = parts
        .into_par_iter()
        .enumerate()
        .map(|(id, (cell, face_ids))| {
            let base = mesh.extract(&face_ids);
            let lods = build_lods(&base, &config.lod_ratios);
            Chunk {
                id: id as u32,
                cell,
                face_ids,
                lods,
            }
        })
        .collect();
    ChunkSet::from_chunks(config.cell_size, config.lod_ratios, mesh.face_count(), chunks)
}

impl ChunkSet {
    fn from_chunks(
        cell_size: f64,
        lod_ratios: [f64; LOD_LEVELS],
        source_face_count: usize,
        chunks: Vec<Chunk>,
    ) -> Result<Self> {
        let mut face_chunk = vec![u32::MAX; source_face_count];
        let mut cells = BTreeMap::new();
        for (i, c) in chunks.iter().enumerate() {
            if c.id as usize != i {
                return Err(Error::Invalid(format!("chunk id {} at position {i}", c.id)));
            }
            cells.insert(c.cell, c.id);
            for &f in &c.face_ids {
                let slot = face_chunk.get_mut(f as usize).ok_or(Error::OutOfRange {
                    what: "face id",
                    index: f as u64,
                    limit: source_face_count as u64,
                })?;
                if *slot != u32::MAX {
                    return Err(Error::Invalid(format!("face {f} assigned to two chunks")));
                }
                *slot = c.id;
            }
        }
        if let Some(f) = face_chunk.iter().position(|&c| c == u32::MAX) {
            return Err(Error::Invalid(format!("face {f} belongs to no chunk")));
        }
        Ok(Self {
            cell_size,
            lod_ratios,
            source_face_count,
            chunks,
            face_chunk,
            cells,
        })
    }

    pub fn chunk_of_face(&self, face: FaceId) -> Option<&Chunk> {
        self.face_chunk
            .get(face as usize)
            .map(|&c| &self.chunks[c as usize])
    }

    pub fn chunk_at_cell(&self, cell: [i64; 3]) -> Option<&Chunk> {
        self.cells.get(&cell).map(|&c| &self.chunks[c as usize])
    }

    /// The chunk itself plus whichever of its 26 neighbor cells hold chunks.
    pub fn neighborhood(&self, chunk: &Chunk) -> Vec<&Chunk> {
        let mut out = Vec::new();
        for dz in -1..=1 {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let c = [chunk.cell[0] + dx, chunk.cell[1] + dy, chunk.cell[2] + dz];
                    if let Some(ch) = self.chunk_at_cell(c) {
                        out.push(ch);
                    }
                }
            }
        }
        out
    }

    /// Splits a source-scene label map into per-chunk maps keyed by
    /// chunk-local level-0 face ids.
    pub fn split_labels(&self, labels: &LabelMap) -> Result<BTreeMap<u32, LabelMap>> {
        if labels.len() != self.source_face_count || labels.kind() != ElementKind::Face {
            return Err(Error::SceneMismatch(format!(
                "label map over {} {}s, scene has {} faces",
                labels.len(),
                labels.kind(),
                self.source_face_count
            )));
        }
        Ok(self
            .chunks
            .iter()
            .map(|c| {
                let l = c.face_ids.iter().map(|&f| labels.get(f as usize)).collect();
                (c.id, LabelMap::from_labels(labels.scene_id(), ElementKind::Face, l))
            })
            .collect())
    }

    /// Writes `chunks/index.json` and `chunks/<id>/lod{0,1,2}.ply` under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let root = dir.join("chunks");
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        let mut entries = Vec::with_capacity(self.chunks.len());
        for c in &self.chunks {
            let cdir = root.join(c.id.to_string());
            fs::create_dir_all(&cdir).map_err(|e| Error::io(&cdir, e))?;
            for (k, l) in c.lods.iter().enumerate() {
                io::save_mesh(&l.mesh, &cdir.join(format!("lod{k}.ply")), PlyFormat::BinaryLittleEndian)?;
            }
            entries.push(IndexChunk {
                id: c.id,
                cell: c.cell,
                face_ranges: to_ranges(&c.face_ids),
                face_counts: c.lods.iter().map(|l| l.mesh.face_count()).collect(),
                coverage: (1..c.lods.len()).map(|k| c.global_coverage(k)).collect(),
            });
        }
        let index = IndexFile {
            cell_size: self.cell_size,
            lod_ratios: self.lod_ratios,
            source_face_count: self.source_face_count,
            chunks: entries,
        };
        let p = root.join("index.json");
        fs::write(&p, serde_json::to_string(&index)? + "\n").map_err(|e| Error::io(&p, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let root = dir.join("chunks");
        let p = root.join("index.json");
        let index: IndexFile =
            serde_json::from_str(&fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?)?;
        let mut chunks = Vec::with_capacity(index.chunks.len());
        for e in index.chunks {
            let face_ids = from_ranges(&e.face_ranges);
            let cdir = root.join(e.id.to_string());
            let mut lods = Vec::with_capacity(LOD_LEVELS);
            for k in 0..e.face_counts.len() {
                let mesh = io::load_mesh(&cdir.join(format!("lod{k}.ply")), MeshFormat::Ply)?.mesh;
                if mesh.face_count() != e.face_counts[k] {
                    return Err(Error::Invalid(format!(
                        "chunk {} lod{k}: {} faces, index says {}",
                        e.id,
                        mesh.face_count(),
                        e.face_counts[k]
                    )));
                }
                let coverage = if k == 0 {
                    (0..mesh.face_count() as u32).map(|f| vec![f]).collect()
                } else {
                    let global = e.coverage.get(k - 1).ok_or_else(|| {
                        Error::Invalid(format!("chunk {} lacks coverage for lod{k}", e.id))
                    })?;
                    global
                        .iter()
                        .map(|srcs| {
                            srcs.iter()
                                .map(|s| {
                                    face_ids.binary_search(s).map(|i| i as u32).map_err(|_| {
                                        Error::Invalid(format!("coverage face {s} outside chunk {}", e.id))
                                    })
                                })
                                .collect::<Result<Vec<u32>>>()
                        })
                        .collect::<Result<Vec<_>>>()?
                };
                lods.push(LodLevel { mesh, coverage });
            }
            chunks.push(Chunk {
                id: e.id,
                cell: e.cell,
                face_ids,
                lods,
            });
        }
        Self::from_chunks(index.cell_size, index.lod_ratios, index.source_face_count, chunks)
    }
}

#[derive(Serialize, Deserialize)]
struct IndexChunk {
    id: u32,
    cell: [i64; 3],
    /// Half-open `[start, end)` runs of global face ids.
    face_ranges: Vec<[u32; 2]>,
    face_counts: Vec<usize>,
    /// Coverage of levels 1.. in global source face ids.
    coverage: Vec<Vec<Vec<u32>>>,
}

#[derive(Serialize, Deserialize)]
struct IndexFile {
    cell_size: f64,
    lod_ratios: [f64; LOD_LEVELS],
    source_face_count: usize,
    chunks: Vec<IndexChunk>,
}

fn to_ranges(ids: &[u32]) -> Vec<[u32; 2]> {
    let mut out: Vec<[u32; 2]> = Vec::new();
    for &i in ids {
        match out.last_mut() {
            Some(r) if r[1] == i => r[1] = i + 1,
            _ => out.push([i, i + 1]),
        }
    }
    out
}

fn from_ranges(r: &[[u32; 2]]) -> Vec<u32> {
    r.iter().flat_map(|&[s, e]| s..e).collect()
}

/// Merges per-chunk label maps (keyed by chunk-local level-0 ids) into one
/// map over the source mesh. Chunks without a map stay void.
pub fn merge_chunks(
    set: &ChunkSet,
    scene_id: &str,
    per_chunk: &BTreeMap<u32, LabelMap>,
) -> Result<LabelMap> {
    let mut out = LabelMap::unlabeled(scene_id, ElementKind::Face, set.source_face_count);
    let mut written = vec![false; set.source_face_count];
    for (&cid, map) in per_chunk {
        let chunk = set
            .chunks
            .get(cid as usize)
            .ok_or_else(|| Error::Invalid(format!("unknown chunk {cid}")))?;
        if map.len() != chunk.face_ids.len() {
            return Err(Error::SceneMismatch(format!(
                "chunk {cid} has {} faces, label map has {}",
                chunk.face_ids.len(),
                map.len()
            )));
        }
        for (local, &global) in chunk.face_ids.iter().enumerate() {
            let g = global as usize;
            if written[g] {
                return Err(Error::Invalid(format!("face {global} assigned by two chunks")));
            }
            written[g] = true;
            let l = map.get(local);
            if l != VOID {
                out.labels_mut()[g] = l;
            }
        }
    }
    Ok(out)
}
