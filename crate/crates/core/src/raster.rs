//! Label and uncertainty images from a labeled mesh and a pinhole camera.
//!
//! [`rasterize_faces`] is a z-buffer scan converter sampling pixel centers
//! with a top-left fill rule; [`raycast_faces`] casts one ray per pixel
//! center and serves as its reference. Both drop faces with any vertex closer
//! than [`NEAR`] to the camera plane and resolve equal depth to the smaller
//! face id.

use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma, Rgb};
use rayon::prelude::*;

use crate::camera::{CameraModel, Frame};
use crate::error::{Error, Result};
use crate::geom::Point;
use crate::labels::{LabelId, VOID};
use crate::mesh::TriangleMesh;
use crate::taxonomy::LabelTaxonomy;

pub const NEAR: f64 = 1e-4;
pub const BACKGROUND: u32 = u32::MAX;
const BAND_ROWS: usize = 8;

/// Front-most face per pixel, row-major; [`BACKGROUND`] where nothing is
/// visible.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceBuffer {
    pub width: u32,
    pub height: u32,
    pub face: Vec<u32>,
    pub depth: Vec<f64>,
}

impl FaceBuffer {
    fn empty(width: u32, height: u32) -> Self {
        let n = width as usize * height as usize;
        Self {
            width,
            height,
            face: vec![BACKGROUND; n],
            depth: vec![f64::INFINITY; n],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelImage {
    pub width: u32,
    pub height: u32,
    pub labels: Vec<u16>,
    /// `u * 65535`, rounded.
    pub uncertainty: Vec<u16>,
}

pub fn quantize_u(u: f64) -> u16 {
    (u.clamp(0.0, 1.0) * 65535.0).round() as u16
}

impl LabelImage {
    /// Flat per-face attributes; background is label 0, u 0.
    pub fn shade(buf: &FaceBuffer, face_labels: &[LabelId], face_u: Option<&[f64]>) -> Self {
        let labels = buf
            .face
            .iter()
            .map(|&f| if f == BACKGROUND { VOID } else { face_labels[f as usize] })
            .collect();
        let uncertainty = buf
            .face
            .iter()
            .map(|&f| match (f, face_u) {
                (BACKGROUND, _) | (_, None) => 0,
                (f, Some(u)) => quantize_u(u[f as usize]),
            })
            .collect();
        Self {
            width: buf.width,
            height: buf.height,
            labels,
            uncertainty,
        }
    }

    pub fn label(&self, x: u32, y: u32) -> u16 {
        self.labels[(y * self.width + x) as usize]
    }

    /// Pixels whose 4-neighborhood (including themselves) holds at least two
    /// distinct labels.
    pub fn edge_mask(&self) -> Vec<bool> {
        let (w, h) = (self.width as i64, self.height as i64);
        (0..h)
            .flat_map(|y| (0..w).map(move |x| (x, y)))
            .map(|(x, y)| {
                let c = self.labels[(y * w + x) as usize];
                [(x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)]
                    .iter()
                    .filter(|&&(a, b)| a >= 0 && b >= 0 && a < w && b < h)
                    .any(|&(a, b)| self.labels[(b * w + a) as usize] != c)
            })
            .collect()
    }

    pub fn save_labels_png(&self, path: &Path) -> Result<()> {
        save_gray16(self.width, self.height, &self.labels, path)
    }

    pub fn save_uncertainty_png(&self, path: &Path) -> Result<()> {
        save_gray16(self.width, self.height, &self.uncertainty, path)
    }

    pub fn save_color_png(&self, taxonomy: &LabelTaxonomy, path: &Path) -> Result<()> {
        let img: ImageBuffer<Rgb<u8>, Vec<u8>> = ImageBuffer::from_fn(self.width, self.height, |x, y| {
            Rgb(taxonomy.color(self.label(x, y)))
        });
        img.save(path).map_err(Error::from)
    }
}

fn save_gray16(w: u32, h: u32, data: &[u16], path: &Path) -> Result<()> {
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(w, h, data.to_vec()).expect("buffer matches image size");
    img.save(path).map_err(Error::from)
}

pub fn load_gray16(path: &Path) -> Result<(u32, u32, Vec<u16>)> {
    let img = image::open(path)?.into_luma16();
    Ok((img.width(), img.height(), img.into_raw()))
}

/// A face projected to the screen, with inward-oriented edges.
struct ScreenTri {
    face: u32,
    p: [[f64; 2]; 3],
    inv_z: [f64; 3],
    /// Twice the signed area, made positive.
    area2: f64,
    sign: f64,
    bbox: [i64; 4],
}

fn project_faces(mesh: &TriangleMesh, cam: &CameraModel) -> Vec<ScreenTri> {
    (0..mesh.face_count())
        .into_par_iter()
        .filter_map(|f| {
            let tri = mesh.tri(f);
            let pc = tri.map(|v| cam.to_camera(&v));
            if pc.iter().any(|v| !(v.z >= NEAR)) {
                return None;
            }
            let p = pc.map(|v| cam.project(&v));
            let a2 = edge(&p[0], &p[1], &p[2]);
            if a2 == 0.0 || !a2.is_finite() {
                return None;
            }
            let lo = |k: usize| p.iter().map(|q| q[k]).fold(f64::INFINITY, f64::min);
            let hi = |k: usize| p.iter().map(|q| q[k]).fold(f64::NEG_INFINITY, f64::max);
            let bbox = [
                ((lo(0) - 0.5).ceil() as i64).max(0),
                ((hi(0) - 0.5).floor() as i64).min(cam.width as i64 - 1),
                ((lo(1) - 0.5).ceil() as i64).max(0),
                ((hi(1) - 0.5).floor() as i64).min(cam.height as i64 - 1),
            ];
            if bbox[0] > bbox[1] || bbox[2] > bbox[3] {
                return None;
            }
            Some(ScreenTri {
                face: f as u32,
                p,
                inv_z: pc.map(|v| 1.0 / v.z),
                area2: a2.abs(),
                sign: a2.signum(),
                bbox,
            })
        })
        .collect()
}

/// `(b - a) x (q - a)`.
fn edge(a: &[f64; 2], b: &[f64; 2], q: &[f64; 2]) -> f64 {
    (b[0] - a[0]) * (q[1] - a[1]) - (b[1] - a[1]) * (q[0] - a[0])
}

/// Edge function of `a -> b` evaluated in a canonical vertex order, so two
/// triangles sharing the edge get bit-identical magnitudes.
fn edge_canonical(a: &[f64; 2], b: &[f64; 2], q: &[f64; 2]) -> f64 {
    if (a[0], a[1]) <= (b[0], b[1]) {
        edge(a, b, q)
    } else {
        -edge(b, a, q)
    }
}

/// Top-left ownership of an edge whose interior lies on its positive side:
/// the inward normal points right, or straight down (y grows downward).
fn owns_edge(a: &[f64; 2], b: &[f64; 2], sign: f64) -> bool {
    let nx = -(b[1] - a[1]) * sign;
    let ny = (b[0] - a[0]) * sign;
    nx > 0.0 || (nx == 0.0 && ny > 0.0)
}

fn raster_band(tris: &[ScreenTri], width: usize, y0: usize, face: &mut [u32], depth: &mut [f64]) {
    let rows = face.len() / width;
    for t in tris {
        let ys = t.bbox[2].max(y0 as i64);
        let ye = t.bbox[3].min((y0 + rows) as i64 - 1);
        if ys > ye {
            continue;
        }
        let own = [
            owns_edge(&t.p[1], &t.p[2], t.sign),
            owns_edge(&t.p[2], &t.p[0], t.sign),
            owns_edge(&t.p[0], &t.p[1], t.sign),
        ];
        for y in ys..=ye {
            let qy = y as f64 + 0.5;
            for x in t.bbox[0]..=t.bbox[1] {
                let q = [x as f64 + 0.5, qy];
                let w = [
                    edge_canonical(&t.p[1], &t.p[2], &q) * t.sign,
                    edge_canonical(&t.p[2], &t.p[0], &q) * t.sign,
                    edge_canonical(&t.p[0], &t.p[1], &q) * t.sign,
                ];
                if (0..3).any(|k| w[k] < 0.0 || (w[k] == 0.0 && !own[k])) {
                    continue;
                }
                let inv_z = (w[0] * t.inv_z[0] + w[1] * t.inv_z[1] + w[2] * t.inv_z[2]) / t.area2;
                let z = 1.0 / inv_z;
                let i = (y as usize - y0) * width + x as usize;
                if z < depth[i] || (z == depth[i] && t.face < face[i]) {
                    depth[i] = z;
                    face[i] = t.face;
                }
            }
        }
    }
}

/// Z-buffer scan conversion. Row bands are rendered in parallel; each band
/// visits faces in id order, so the result does not depend on thread count.
pub fn rasterize_faces(mesh: &TriangleMesh, cam: &CameraModel) -> Result<FaceBuffer> {
    cam.validate()?;
    let tris = project_faces(mesh, cam);
    let mut buf = FaceBuffer::empty(cam.width, cam.height);
    let w = cam.width as usize;
    buf.face
        .par_chunks_mut(w * BAND_ROWS)
        .zip(buf.depth.par_chunks_mut(w * BAND_ROWS))
        .enumerate()
        .for_each(|(b, (face, depth))| raster_band(&tris, w, b * BAND_ROWS, face, depth));
    Ok(buf)
}

/// Reference renderer: one camera-space ray per pixel center against every
/// face, nearest hit wins.
pub fn raycast_faces(mesh: &TriangleMesh, cam: &CameraModel) -> Result<FaceBuffer> {
    cam.validate()?;
    let faces: Vec<(u32, [Point; 3])> = (0..mesh.face_count())
        .filter_map(|f| {
            let pc = mesh.tri(f).map(|v| cam.to_camera(&v));
            pc.iter().all(|v| v.z >= NEAR).then_some((f as u32, pc))
        })
        .collect();
    let mut buf = FaceBuffer::empty(cam.width, cam.height);
    let w = cam.width as usize;
    buf.face
        .par_iter_mut()
        .zip(buf.depth.par_iter_mut())
        .enumerate()
        .for_each(|(i, (face, depth))| {
            let (x, y) = ((i % w) as f64 + 0.5, (i / w) as f64 + 0.5);
            let d = cam.pixel_direction(x, y);
            let ray = crate::geom::Ray::new(Point::origin(), d);
            for (f, [a, b, c]) in &faces {
                if let Some(t) = crate::geom::intersect_triangle(&ray, a, b, c) {
                    if t < *depth || (t == *depth && *f < *face) {
                        *depth = t;
                        *face = *f;
                    }
                }
            }
        });
    Ok(buf)
}

fn check_attributes(mesh: &TriangleMesh, labels: &[LabelId], u: Option<&[f64]>) -> Result<()> {
    let n = mesh.face_count();
    if labels.len() != n || u.is_some_and(|u| u.len() != n) {
        return Err(Error::SceneMismatch(format!("per-face attributes do not cover {n} faces")));
    }
    Ok(())
}

pub fn rasterize(mesh: &TriangleMesh, labels: &[LabelId], u: Option<&[f64]>, cam: &CameraModel) -> Result<LabelImage> {
    check_attributes(mesh, labels, u)?;
    Ok(LabelImage::shade(&rasterize_faces(mesh, cam)?, labels, u))
}

pub fn raycast_reference(
    mesh: &TriangleMesh,
    labels: &[LabelId],
    u: Option<&[f64]>,
    cam: &CameraModel,
) -> Result<LabelImage> {
    check_attributes(mesh, labels, u)?;
    Ok(LabelImage::shade(&raycast_faces(mesh, cam)?, labels, u))
}

/// Renders every frame into `out_dir` as `<frame>.labels.png` and
/// `<frame>.uncert.png`, plus `<frame>.color.png` when a taxonomy is given.
/// Returns the written paths in frame order.
pub fn render_batch(
    mesh: &TriangleMesh,
    labels: &[LabelId],
    u: Option<&[f64]>,
    frames: &[Frame],
    out_dir: &Path,
    color: Option<&LabelTaxonomy>,
) -> Result<Vec<PathBuf>> {
    check_attributes(mesh, labels, u)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let per_frame: Vec<Result<Vec<PathBuf>>> = frames
        .par_iter()
        .map(|f| {
            let img = rasterize(mesh, labels, u, &f.camera)?;
            let lp = out_dir.join(format!("{}.labels.png", f.id));
            let up = out_dir.join(format!("{}.uncert.png", f.id));
            img.save_labels_png(&lp)?;
            img.save_uncertainty_png(&up)?;
            let mut out = vec![lp, up];
            if let Some(t) = color {
                let cp = out_dir.join(format!("{}.color.png", f.id));
                img.save_color_png(t, &cp)?;
                out.push(cp);
            }
            Ok(out)
        })
        .collect();
    let mut all = Vec::new();
    for r in per_frame {
        all.extend(r?);
    }
    Ok(all)
}
