//! Read-only Wavefront OBJ support (`v` and `f` records).

use crate::error::{Error, Result};
use crate::geom::Point;
use crate::mesh::Rgb;

pub struct ObjData {
    pub vertices: Vec<Point>,
    pub colors: Option<Vec<Rgb>>,
    pub faces: Vec<Vec<u32>>,
    pub face_offsets: Vec<u64>,
}

pub fn parse(bytes: &[u8]) -> Result<ObjData> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::parse(e.valid_up_to() as u64, "invalid UTF-8"))?;
    let mut vertices = Vec::new();
    let mut colors: Vec<Rgb> = Vec::new();
    let mut any_color = false;
    let mut faces = Vec::new();
    let mut face_offsets = Vec::new();
    let mut offset = 0u64;
    for raw in text.split_inclusive('\n') {
        let at = offset;
        offset += raw.len() as u64;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("v") => {
                let nums: Vec<f64> = tok
                    .map(|t| t.parse::<f64>().map_err(|_| Error::parse(at, format!("invalid number '{t}'"))))
                    .collect::<Result<_>>()?;
                if nums.len() < 3 {
                    return Err(Error::parse(at, "vertex with fewer than 3 coordinates"));
                }
                let p = Point::new(nums[0], nums[1], nums[2]);
                if !p.iter().all(|c| c.is_finite()) {
                    return Err(Error::parse(at, "non-finite vertex coordinate"));
                }
                vertices.push(p);
                if nums.len() >= 6 {
                    any_color = true;
                    let c = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
                    colors.push([c(nums[3]), c(nums[4]), c(nums[5])]);
                } else {
                    colors.push([255, 255, 255]);
                }
            }
            Some("f") => {
                let mut poly = Vec::new();
                for t in tok {
                    let idx = t.split('/').next().unwrap_or("");
                    let i: i64 = idx
                        .parse()
                        .map_err(|_| Error::parse(at, format!("invalid face index '{t}'")))?;
                    let n = vertices.len() as i64;
                    let resolved = if i > 0 { i - 1 } else { n + i };
                    if i == 0 || resolved < 0 || resolved >= n {
                        return Err(Error::parse(at, format!("face index {i} out of range (vertex count {n})")));
                    }
                    poly.push(resolved as u32);
                }
                if poly.len() < 3 {
                    return Err(Error::parse(at, "face with fewer than 3 vertices"));
                }
                faces.push(poly);
                face_offsets.push(at);
            }
            _ => {}
        }
    }
    Ok(ObjData {
        vertices,
        colors: any_color.then_some(colors),
        faces,
        face_offsets,
    })
}
