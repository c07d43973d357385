//! Pinhole cameras and JSON Lines camera trajectories.
//!
//! Camera frame: x right, y down, z forward. A camera-space point
//! `(x, y, z)` projects to pixel `(fx * x / z + cx, fy * y / z + cy)` with the
//! image origin at the top-left corner of the top-left pixel, so pixel
//! `(i, j)` has its center at `(i + 0.5, j + 0.5)`.

use std::collections::BTreeSet;

use nalgebra::{Matrix3, Matrix4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Point, Vector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    /// World-to-camera rotation.
    pub rotation: Matrix3<f64>,
    /// World-to-camera translation.
    pub translation: Vector,
}

impl CameraModel {
    pub fn new(
        [fx, fy, cx, cy]: [f64; 4],
        width: u32,
        height: u32,
        rotation: Matrix3<f64>,
        translation: Vector,
    ) -> Result<Self> {
        let c = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            rotation,
            translation,
        };
        c.validate()?;
        Ok(c)
    }

    /// Camera at `eye` looking at `target`, with `up` pointing roughly up in
    /// the image.
    pub fn look_at(eye: Point, target: Point, up: Vector, intrinsics: [f64; 4], width: u32, height: u32) -> Result<Self> {
        let z = (target - eye).normalize();
        let x = z.cross(&up);
        if x.norm() < 1e-12 {
            return Err(Error::Invalid("look_at up vector is parallel to the view direction".into()));
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let t = -(r * eye.coords);
        Self::new(intrinsics, width, height, r, t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(Error::Invalid(format!("focal lengths must be positive, got {} {}", self.fx, self.fy)));
        }
        if !(self.cx.is_finite() && self.cy.is_finite() && self.translation.iter().all(|v| v.is_finite())) {
            return Err(Error::Invalid("camera parameters must be finite".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Invalid("image size must be at least 1x1".into()));
        }
        let ortho = (self.rotation.transpose() * self.rotation - Matrix3::identity()).abs().max();
        if !(ortho <= 1e-6) || self.rotation.determinant() < 0.0 {
            return Err(Error::Invalid("camera rotation is not a proper orthonormal matrix".into()));
        }
        Ok(())
    }

    pub fn to_camera(&self, p: &Point) -> Point {
        Point::from(self.rotation * p.coords + self.translation)
    }

    /// Pixel coordinates of a camera-space point with `z > 0`.
    pub fn project(&self, pc: &Point) -> [f64; 2] {
        [self.fx * pc.x / pc.z + self.cx, self.fy * pc.y / pc.z + self.cy]
    }

    /// Camera-space direction through pixel position `(u, v)`, scaled so its
    /// `z` component is 1.
    pub fn pixel_direction(&self, u: f64, v: f64) -> Vector {
        Vector::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    pub fn center(&self) -> Point {
        Point::from(-(self.rotation.transpose() * self.translation))
    }

    pub fn k_row_major(&self) -> [f64; 9] {
        [self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0]
    }

    pub fn world_to_camera_row_major(&self) -> [f64; 16] {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[r * 4 + c] = m[(r, c)];
            }
        }
        out
    }
}

/// One trajectory row as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_id: serde_json::Value,
    #[serde(rename = "K")]
    pub k: Vec<f64>,
    /// World-to-camera transform, row-major 4x4.
    #[serde(rename = "T_world_cam")]
    pub t_world_cam: Vec<f64>,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub id: String,
    pub camera: CameraModel,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedRow {
    pub line: usize,
    pub reason: String,
}

impl Frame {
    pub fn record(&self) -> FrameRecord {
        FrameRecord {
            frame_id: serde_json::Value::String(self.id.clone()),
            k: self.camera.k_row_major().to_vec(),
            t_world_cam: self.camera.world_to_camera_row_major().to_vec(),
            width: self.camera.width,
            height: self.camera.height,
        }
    }
}

fn frame_id(v: &serde_json::Value) -> Result<String> {
    let s = match v {
        serde_json::Value::String(s) => s.clone(),
        serde_json::Value::Number(n) if n.is_u64() => n.to_string(),
        _ => return Err(Error::Invalid("frame_id must be a string or non-negative integer".into())),
    };
    let ok = !s.is_empty()
        && !s.starts_with('.')
        && s.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c));
    if !ok {
        return Err(Error::Invalid(format!("frame_id '{s}' is not a safe file name")));
    }
    Ok(s)
}

impl TryFrom<&FrameRecord> for Frame {
    type Error = Error;

    fn try_from(r: &FrameRecord) -> Result<Self> {
        let id = frame_id(&r.frame_id)?;
        let [fx, skew, cx, k3, fy, cy, k6, k7, k8] = <[f64; 9]>::try_from(r.k.as_slice())
            .map_err(|_| Error::Invalid(format!("K has {} values, expected 9", r.k.len())))?;
        if skew != 0.0 || k3 != 0.0 || k6 != 0.0 || k7 != 0.0 || k8 != 1.0 {
            return Err(Error::Invalid("K must be [fx 0 cx; 0 fy cy; 0 0 1]".into()));
        }
        let t: [f64; 16] = r
            .t_world_cam
            .as_slice()
            .try_into()
            .map_err(|_| Error::Invalid(format!("T_world_cam has {} values, expected 16", r.t_world_cam.len())))?;
        if t[12..] != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::Invalid("T_world_cam last row must be 0 0 0 1".into()));
        }
        let rot = Matrix3::new(t[0], t[1], t[2], t[4], t[5], t[6], t[8], t[9], t[10]);
        let trans = Vector::new(t[3], t[7], t[11]);
        let camera = CameraModel::new([fx, fy, cx, cy], r.width, r.height, rot, trans)?;
        Ok(Frame { id, camera })
    }
}

/// Parses a trajectory. Rows that fail to parse or validate, and repeated
/// frame ids, are skipped and reported with their 1-based line number.
pub fn parse_trajectory(text: &str) -> (Vec<Frame>, Vec<SkippedRow>) {
    let mut frames = Vec::new();
    let mut skipped = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<FrameRecord>(line)
            .map_err(Error::from)
            .and_then(|r| Frame::try_from(&r));
        match parsed {
            Ok(f) if !seen.insert(f.id.clone()) => skipped.push(SkippedRow {
                line: i + 1,
                reason: format!("duplicate frame_id '{}'", f.id),
            }),
            Ok(f) => frames.push(f),
            Err(e) => skipped.push(SkippedRow {
                line: i + 1,
                reason: e.to_string(),
            }),
        }
    }
    (frames, skipped)
}

pub fn trajectory_line(frame: &Frame) -> String {
    serde_json::to_string(&frame.record()).expect("frame serializes") + "\n"
}
