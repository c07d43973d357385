//! PLY reader and writer (ASCII and binary little-endian, version 1.0).
//!
//! The reader understands arbitrary scalar and list properties so unknown
//! elements can be skipped, but only `vertex` (x, y, z and optional
//! red/green/blue) and `face` (vertex_indices / vertex_index) are kept.

use std::io::Write;

use crate::error::{Error, Result};
use crate::geom::Point;
use crate::mesh::Rgb;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn is_integer(self) -> bool {
        !matches!(self, Scalar::F32 | Scalar::F64)
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone)]
enum PropKind {
    Scalar(Scalar),
    List { count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Property {
    name: String,
    kind: PropKind,
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

/// Raw contents of a PLY file restricted to the elements this crate uses.
#[derive(Debug, Clone, Default)]
pub struct PlyData {
    pub vertices: Vec<Point>,
    pub colors: Option<Vec<Rgb>>,
    /// Polygons as read; triangulation happens in the mesh loader.
    pub faces: Vec<Vec<u32>>,
    /// Byte offset of each face record, kept for error reporting.
    pub face_offsets: Vec<u64>,
}

struct Header {
    format: PlyFormat,
    elements: Vec<Element>,
    body_offset: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let mut offset = 0usize;
    let next_line = |offset: &mut usize| -> Result<(u64, String)> {
        let start = *offset;
        let rel = bytes[start..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::parse(start as u64, "unterminated header"))?;
        *offset = start + rel + 1;
        let line = std::str::from_utf8(&bytes[start..start + rel])
            .map_err(|_| Error::parse(start as u64, "header is not valid UTF-8"))?;
        Ok((start as u64, line.trim_end_matches('\r').to_string()))
    };

    let (_, magic) = next_line(&mut offset)?;
    if magic.trim() != "ply" {
        return Err(Error::parse(0, "missing 'ply' magic"));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let (at, line) = next_line(&mut offset)?;
        let mut tok = line.split_whitespace();
        match tok.next() {
            None => continue,
            Some("comment") | Some("obj_info") => continue,
            Some("format") => {
                let f = tok.next().unwrap_or("");
                let v = tok.next().unwrap_or("");
                if v != "1.0" {
                    return Err(Error::parse(at, format!("unsupported PLY version '{v}'")));
                }
                format = Some(match f {
                    "ascii" => PlyFormat::Ascii,
                    "binary_little_endian" => PlyFormat::BinaryLittleEndian,
                    other => {
                        return Err(Error::parse(at, format!("unsupported PLY format '{other}'")))
                    }
                });
            }
            Some("element") => {
                let name = tok
                    .next()
                    .ok_or_else(|| Error::parse(at, "element without name"))?;
                let count = tok
                    .next()
                    .and_then(|c| c.parse::<usize>().ok())
                    .ok_or_else(|| Error::parse(at, "element without valid count"))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(at, "property before any element"))?;
                let t = tok.next().unwrap_or("");
                let kind = if t == "list" {
                    let count = tok.next().and_then(Scalar::parse);
                    let item = tok.next().and_then(Scalar::parse);
                    match (count, item) {
                        (Some(count), Some(item)) if count.is_integer() => {
                            PropKind::List { count, item }
                        }
                        _ => return Err(Error::parse(at, "malformed list property")),
                    }
                } else {
                    PropKind::Scalar(
                        Scalar::parse(t)
                            .ok_or_else(|| Error::parse(at, format!("unknown type '{t}'")))?,
                    )
                };
                let name = tok
                    .next()
                    .ok_or_else(|| Error::parse(at, "property without name"))?;
                el.props.push(Property {
                    name: name.to_string(),
                    kind,
                });
            }
            Some("end_header") => break,
            Some(other) => {
                return Err(Error::parse(at, format!("unexpected header keyword '{other}'")))
            }
        }
    }
    let format = format.ok_or_else(|| Error::parse(0, "missing format line"))?;
    Ok(Header {
        format,
        elements,
        body_offset: offset,
    })
}

struct VertexLayout {
    xyz: [usize; 3],
    rgb: Option<[usize; 3]>,
}

fn vertex_layout(el: &Element, at: u64) -> Result<VertexLayout> {
    let find = |n: &str| el.props.iter().position(|p| p.name == n);
    let xyz = match (find("x"), find("y"), find("z")) {
        (Some(x), Some(y), Some(z)) => [x, y, z],
        _ => return Err(Error::parse(at, "vertex element lacks x/y/z")),
    };
    for &i in &xyz {
        if matches!(el.props[i].kind, PropKind::List { .. }) {
            return Err(Error::parse(at, "vertex coordinate declared as list"));
        }
    }
    let rgb = match (find("red"), find("green"), find("blue")) {
        (Some(r), Some(g), Some(b)) => Some([r, g, b]),
        _ => None,
    };
    Ok(VertexLayout { xyz, rgb })
}

fn face_prop(el: &Element, at: u64) -> Result<usize> {
    el.props
        .iter()
        .position(|p| {
            (p.name == "vertex_indices" || p.name == "vertex_index")
                && matches!(p.kind, PropKind::List { .. })
        })
        .ok_or_else(|| Error::parse(at, "face element lacks a vertex_indices list"))
}

fn to_color(v: f64, scalar: Scalar) -> u8 {
    if scalar.is_integer() {
        v.clamp(0.0, 255.0) as u8
    } else {
        (v.clamp(0.0, 1.0) * 255.0).round() as u8
    }
}

fn scalar_of(p: &Property) -> Scalar {
    match p.kind {
        PropKind::Scalar(s) => s,
        PropKind::List { item, .. } => item,
    }
}

/// Parses PLY bytes. Face indices are range-checked against the vertex
/// count with the record's byte offset in the error.
pub fn parse(bytes: &[u8]) -> Result<PlyData> {
    let header = parse_header(bytes)?;
    let mut data = PlyData::default();
    let mut pos = header.body_offset;
    let mut ascii = AsciiCursor::new(bytes, pos);

    for el in &header.elements {
        let is_vertex = el.name == "vertex";
        let is_face = el.name == "face";
        let layout = if is_vertex {
            Some(vertex_layout(el, pos as u64)?)
        } else {
            None
        };
        let fprop = if is_face {
            Some(face_prop(el, pos as u64)?)
        } else {
            None
        };
        if is_vertex {
            data.vertices.reserve(el.count);
            if layout.as_ref().unwrap().rgb.is_some() {
                data.colors = Some(Vec::with_capacity(el.count));
            }
        }
        let mut values: Vec<Vec<f64>> = vec![Vec::new(); el.props.len()];
        for _ in 0..el.count {
            let record_at = match header.format {
                PlyFormat::Ascii => ascii.offset() as u64,
                PlyFormat::BinaryLittleEndian => pos as u64,
            };
            for (pi, prop) in el.props.iter().enumerate() {
                let slot = &mut values[pi];
                slot.clear();
                match header.format {
                    PlyFormat::Ascii => match prop.kind {
                        PropKind::Scalar(s) => slot.push(ascii.typed(s)?),
                        PropKind::List { item, .. } => {
                            let at = ascii.offset() as u64;
                            let n = ascii.number()?;
                            if n < 0.0 || n.fract() != 0.0 {
                                return Err(Error::parse(at, "invalid list length"));
                            }
                            for _ in 0..n as usize {
                                slot.push(ascii.typed(item)?);
                            }
                        }
                    },
                    PlyFormat::BinaryLittleEndian => {
                        let mut take = |s: Scalar| -> Result<f64> {
                            let end = pos + s.size();
                            if end > bytes.len() {
                                return Err(Error::parse(pos as u64, "unexpected end of data"));
                            }
                            let v = s.read_le(&bytes[pos..end]);
                            pos = end;
                            Ok(v)
                        };
                        match prop.kind {
                            PropKind::Scalar(s) => {
                                let v = take(s)?;
                                slot.push(v);
                            }
                            PropKind::List { count, item } => {
                                let n = take(count)?;
                                if n < 0.0 {
                                    return Err(Error::parse(pos as u64, "negative list length"));
                                }
                                for _ in 0..n as usize {
                                    let v = take(item)?;
                                    slot.push(v);
                                }
                            }
                        }
                    }
                }
            }
            if let Some(l) = &layout {
                let p = Point::new(values[l.xyz[0]][0], values[l.xyz[1]][0], values[l.xyz[2]][0]);
                if !p.iter().all(|c| c.is_finite()) {
                    return Err(Error::parse(record_at, "non-finite vertex coordinate"));
                }
                data.vertices.push(p);
                if let (Some(rgb), Some(colors)) = (l.rgb, data.colors.as_mut()) {
                    colors.push([
                        to_color(values[rgb[0]][0], scalar_of(&el.props[rgb[0]])),
                        to_color(values[rgb[1]][0], scalar_of(&el.props[rgb[1]])),
                        to_color(values[rgb[2]][0], scalar_of(&el.props[rgb[2]])),
                    ]);
                }
            }
            if let Some(fp) = fprop {
                let mut poly = Vec::with_capacity(values[fp].len());
                for &v in &values[fp] {
                    if v < 0.0 || v.fract() != 0.0 || v >= data.vertices.len() as f64 {
                        return Err(Error::parse(
                            record_at,
                            format!(
                                "face index {v} out of range (vertex count {})",
                                data.vertices.len()
                            ),
                        ));
                    }
                    poly.push(v as u32);
                }
                if poly.len() < 3 {
                    return Err(Error::parse(record_at, "face with fewer than 3 vertices"));
                }
                data.faces.push(poly);
                data.face_offsets.push(record_at);
            }
        }
    }
    Ok(data)
}

struct AsciiCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> AsciiCursor<'a> {
    fn new(bytes: &'a [u8], pos: usize) -> Self {
        Self { bytes, pos }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn offset(&mut self) -> usize {
        self.skip_ws();
        self.pos
    }

    fn token(&mut self) -> Result<(usize, &'a str)> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::parse(start as u64, "unexpected end of data"));
        }
        let tok = std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| Error::parse(start as u64, "invalid UTF-8 in body"))?;
        Ok((start, tok))
    }

    fn number(&mut self) -> Result<f64> {
        let (start, tok) = self.token()?;
        tok.parse::<f64>()
            .map_err(|_| Error::parse(start as u64, format!("invalid number '{tok}'")))
    }

    /// A number read at the declared property type, so `float` text yields
    /// the same value a binary file would.
    fn typed(&mut self, s: Scalar) -> Result<f64> {
        if s != Scalar::F32 {
            return self.number();
        }
        let (start, tok) = self.token()?;
        tok.parse::<f32>()
            .map(f64::from)
            .map_err(|_| Error::parse(start as u64, format!("invalid number '{tok}'")))
    }
}

/// Writes vertices (float32 x/y/z, optional uchar rgb) and optional faces.
pub fn write<W: Write>(
    out: &mut W,
    format: PlyFormat,
    vertices: &[Point],
    colors: Option<&[Rgb]>,
    faces: Option<&[[u32; 3]]>,
) -> std::io::Result<()> {
    let fmt = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    writeln!(out, "ply")?;
    writeln!(out, "format {fmt} 1.0")?;
    writeln!(out, "element vertex {}", vertices.len())?;
    writeln!(out, "property float x")?;
    writeln!(out, "property float y")?;
    writeln!(out, "property float z")?;
    if colors.is_some() {
        writeln!(out, "property uchar red")?;
        writeln!(out, "property uchar green")?;
        writeln!(out, "property uchar blue")?;
    }
    if let Some(f) = faces {
        writeln!(out, "element face {}", f.len())?;
        writeln!(out, "property list uchar int vertex_indices")?;
    }
    writeln!(out, "end_header")?;
    match format {
        PlyFormat::Ascii => {
            for (i, v) in vertices.iter().enumerate() {
                write!(out, "{} {} {}", v.x as f32, v.y as f32, v.z as f32)?;
                if let Some(c) = colors {
                    write!(out, " {} {} {}", c[i][0], c[i][1], c[i][2])?;
                }
                writeln!(out)?;
            }
            for f in faces.unwrap_or(&[]) {
                writeln!(out, "3 {} {} {}", f[0], f[1], f[2])?;
            }
        }
        PlyFormat::BinaryLittleEndian => {
            for (i, v) in vertices.iter().enumerate() {
                for c in [v.x, v.y, v.z] {
                    out.write_all(&(c as f32).to_le_bytes())?;
                }
                if let Some(c) = colors {
                    out.write_all(&c[i])?;
                }
            }
            for f in faces.unwrap_or(&[]) {
                out.write_all(&[3u8])?;
                for &i in f {
                    out.write_all(&(i as i32).to_le_bytes())?;
                }
            }
        }
    }
    Ok(())
}
