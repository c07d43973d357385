//! Mesh and point cloud file IO.

pub mod obj;
pub mod ply;

use std::fs;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mesh::{PointCloud, TriangleMesh};

pub use ply::PlyFormat;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Ply,
    Obj,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref()
        {
            Some("ply") => Ok(MeshFormat::Ply),
            Some("obj") => Ok(MeshFormat::Obj),
            _ => Err(Error::Invalid(format!(
                "cannot infer mesh format from {}",
                path.display()
            ))),
        }
    }
}

/// Result of loading a mesh, with the number of degenerate faces dropped.
#[derive(Debug, Clone)]
pub struct LoadedMesh {
    pub mesh: TriangleMesh,
    pub degenerate_dropped: usize,
}

fn triangulate(polys: Vec<Vec<u32>>) -> Vec<[u32; 3]> {
    let mut out = Vec::with_capacity(polys.len());
    for p in polys {
        for i in 1..p.len() - 1 {
            out.push([p[0], p[i], p[i + 1]]);
        }
    }
    out
}

pub fn parse_mesh(bytes: &[u8], format: MeshFormat) -> Result<LoadedMesh> {
    let (vertices, colors, polys) = match format {
        MeshFormat::Ply => {
            let d = ply::parse(bytes)?;
            (d.vertices, d.colors, d.faces)
        }
        MeshFormat::Obj => {
            let d = obj::parse(bytes)?;
            (d.vertices, d.colors, d.faces)
        }
    };
    let (mesh, degenerate_dropped) =
        TriangleMesh::dropping_degenerate(vertices, triangulate(polys), colors)?;
    Ok(LoadedMesh {
        mesh,
        degenerate_dropped,
    })
}

pub fn load_mesh(path: &Path, format: MeshFormat) -> Result<LoadedMesh> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_mesh(&bytes, format)
}

pub fn save_mesh(mesh: &TriangleMesh, path: &Path, format: PlyFormat) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    ply::write(&mut w, format, mesh.vertices(), mesh.colors(), Some(mesh.faces()))
        .and_then(|_| std::io::Write::flush(&mut w))
        .map_err(|e| Error::io(path, e))
}

pub fn mesh_to_ply_bytes(mesh: &TriangleMesh, format: PlyFormat) -> Vec<u8> {
    let mut buf = Vec::new();
    ply::write(&mut buf, format, mesh.vertices(), mesh.colors(), Some(mesh.faces()))
        .expect("writing to a Vec cannot fail");
    buf
}

/// Loads the vertex element of a PLY file as a point cloud; faces, if any,
/// are ignored.
pub fn load_point_cloud(path: &Path) -> Result<PointCloud> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_point_cloud(&bytes)
}

pub fn parse_point_cloud(bytes: &[u8]) -> Result<PointCloud> {
    let d = ply::parse(bytes)?;
    if d.vertices.is_empty() {
        return Err(Error::Invalid("point cloud has no points".into()));
    }
    PointCloud::new(d.vertices, d.colors)
}

pub fn save_point_cloud(cloud: &PointCloud, path: &Path, format: PlyFormat) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    ply::write(&mut w, format, cloud.points(), cloud.colors(), None)
        .and_then(|_| std::io::Write::flush(&mut w))
        .map_err(|e| Error::io(path, e))
}
