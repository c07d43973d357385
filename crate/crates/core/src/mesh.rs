use crate::error::{Error, Result};
use crate::geom::{Aabb, Point, Vector};

pub type FaceId = u32;
pub type Rgb = [u8; 3];

/// Indexed triangle mesh. Faces always reference valid vertices and never
/// repeat a vertex index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<Point>,
    faces: Vec<[u32; 3]>,
    colors: Option<Vec<Rgb>>,
}

impl TriangleMesh {
    /// Builds a mesh, validating indices and rejecting degenerate faces.
    pub fn new(vertices: Vec<Point>, faces: Vec<[u32; 3]>) -> Result<Self> {
        Self::with_colors(vertices, faces, None)
    }

    pub fn with_colors(
        vertices: Vec<Point>,
        faces: Vec<[u32; 3]>,
        colors: Option<Vec<Rgb>>,
    ) -> Result<Self> {
        let n = vertices.len() as u64;
        if let Some(c) = &colors {
            if c.len() != vertices.len() {
                return Err(Error::Invalid(format!(
                    "{} colors for {} vertices",
                    c.len(),
                    vertices.len()
                )));
            }
        }
        for (i, v) in vertices.iter().enumerate() {
            if !v.iter().all(|c| c.is_finite()) {
                return Err(Error::Invalid(format!("vertex {i} has non-finite coordinates")));
            }
        }
        for f in &faces {
            for &i in f {
                if i as u64 >= n {
                    return Err(Error::OutOfRange {
                        what: "vertex index",
                        index: i as u64,
                        limit: n,
                    });
                }
            }
            if is_degenerate(f) {
                return Err(Error::Invalid(format!("degenerate face {f:?}")));
            }
        }
        Ok(Self {
            vertices,
            faces,
            colors,
        })
    }

    /// Builds a mesh dropping faces with repeated vertex indices. Returns the
    /// mesh and the number of dropped faces.
    pub fn dropping_degenerate(
        vertices: Vec<Point>,
        mut faces: Vec<[u32; 3]>,
        colors: Option<Vec<Rgb>>,
    ) -> Result<(Self, usize)> {
        let before = faces.len();
        faces.retain(|f| !is_degenerate(f));
        let dropped = before - faces.len();
        Ok((Self::with_colors(vertices, faces, colors)?, dropped))
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    pub fn colors(&self) -> Option<&[Rgb]> {
        self.colors.as_deref()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    fn check_face(&self, face: FaceId) -> Result<[u32; 3]> {
        self.faces
            .get(face as usize)
            .copied()
            .ok_or(Error::OutOfRange {
                what: "face id",
                index: face as u64,
                limit: self.faces.len() as u64,
            })
    }

    pub fn triangle(&self, face: FaceId) -> Result<[Point; 3]> {
        let [a, b, c] = self.check_face(face)?;
        Ok([
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ])
    }

    /// Unchecked triangle access for hot loops over known-valid ids.
    #[inline]
    pub(crate) fn tri(&self, face: usize) -> [Point; 3] {
        let [a, b, c] = self.faces[face];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    /// Face area in square meters: half the norm of the edge cross product.
    pub fn face_area(&self, face: FaceId) -> Result<f64> {
        let [a, b, c] = self.triangle(face)?;
        Ok(triangle_area(&a, &b, &c))
    }

    /// Mean of the three vertices.
    pub fn face_centroid(&self, face: FaceId) -> Result<Point> {
        let [a, b, c] = self.triangle(face)?;
        Ok(triangle_centroid(&a, &b, &c))
    }

    pub fn face_areas(&self) -> Vec<f64> {
        (0..self.faces.len())
            .map(|f| {
                let [a, b, c] = self.tri(f);
                triangle_area(&a, &b, &c)
            })
            .collect()
    }

    pub fn face_centroids(&self) -> Vec<Point> {
        (0..self.faces.len())
            .map(|f| {
                let [a, b, c] = self.tri(f);
                triangle_centroid(&a, &b, &c)
            })
            .collect()
    }

    /// Unit normal by right-hand winding, or zero for collinear vertices.
    pub fn face_normal(&self, face: FaceId) -> Result<Vector> {
        let [a, b, c] = self.triangle(face)?;
        Ok(triangle_normal(&a, &b, &c))
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::from_points(&self.vertices)
    }

    /// Rounds vertex coordinates to what a float32 file stores.
    pub fn to_file_precision(&self) -> Self {
        Self {
            vertices: self.vertices.iter().map(round_f32).collect(),
            ..self.clone()
        }
    }

    /// Sub-mesh made of the given faces, with vertices compacted and
    /// renumbered in first-use order.
    pub fn extract(&self, faces: &[FaceId]) -> TriangleMesh {
        let mut remap = vec![u32::MAX; self.vertices.len()];
        let mut vertices = Vec::new();
        let mut colors = self.colors.as_ref().map(|_| Vec::new());
        let mut out = Vec::with_capacity(faces.len());
        for &f in faces {
            let tri = self.faces[f as usize];
            let mut local = [0u32; 3];
            for (k, &v) in tri.iter().enumerate() {
                if remap[v as usize] == u32::MAX {
                    remap[v as usize] = vertices.len() as u32;
                    vertices.push(self.vertices[v as usize]);
                    if let (Some(dst), Some(src)) = (colors.as_mut(), self.colors.as_ref()) {
                        dst.push(src[v as usize]);
                    }
                }
                local[k] = remap[v as usize];
            }
            out.push(local);
        }
        TriangleMesh {
            vertices,
            faces: out,
            colors,
        }
    }
}

fn round_f32(p: &Point) -> Point {
    p.map(|c| c as f32 as f64)
}

pub(crate) fn is_degenerate(f: &[u32; 3]) -> bool {
    f[0] == f[1] || f[1] == f[2] || f[0] == f[2]
}

pub fn triangle_area(a: &Point, b: &Point, c: &Point) -> f64 {
    0.5 * (b - a).cross(&(c - a)).norm()
}

pub fn triangle_centroid(a: &Point, b: &Point, c: &Point) -> Point {
    Point::from((a.coords + b.coords + c.coords) / 3.0)
}

pub fn triangle_normal(a: &Point, b: &Point, c: &Point) -> Vector {
    let n = (b - a).cross(&(c - a));
    let len = n.norm();
    if len > 0.0 {
        n / len
    } else {
        Vector::zeros()
    }
}

/// Point sample set with optional colors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    points: Vec<Point>,
    colors: Option<Vec<Rgb>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>, colors: Option<Vec<Rgb>>) -> Result<Self> {
        if let Some(c) = &colors {
            if c.len() != points.len() {
                return Err(Error::Invalid(format!(
                    "{} colors for {} points",
                    c.len(),
                    points.len()
                )));
            }
        }
        if let Some(i) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::Invalid(format!("point {i} has non-finite coordinates")));
        }
        Ok(Self { points, colors })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn colors(&self) -> Option<&[Rgb]> {
        self.colors.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::from_points(&self.points)
    }

    /// Rounds coordinates to what a float32 file stores.
    pub fn to_file_precision(&self) -> Self {
        Self {
            points: self.points.iter().map(round_f32).collect(),
            colors: self.colors.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn p(x: f64, y: f64, z: f64) -> Point {
        Point::new(x, y, z)
    }

    fn single(a: Point, b: Point, c: Point) -> TriangleMesh {
        TriangleMesh::new(vec![a, b, c], vec![[0, 1, 2]]).unwrap()
    }

    #[test]
    fn right_triangle_area() {
        let m = single(p(0., 0., 0.), p(1., 0., 0.), p(0., 1., 0.));
        assert_eq!(m.face_area(0).unwrap(), 0.5);
    }

    #[test]
    fn scaled_triangle_area_quadruples() {
        let m = single(p(0.3, 0.1, 0.), p(1.7, 0.2, 0.5), p(0.4, 1.1, -0.2));
        let s = single(
            p(0.6, 0.2, 0.),
            p(3.4, 0.4, 1.0),
            p(0.8, 2.2, -0.4),
        );
        let a = m.face_area(0).unwrap();
        assert!((s.face_area(0).unwrap() - 4.0 * a).abs() < 1e-12 * a);
    }

    #[test]
    fn area_matches_heron() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let v: Vec<Point> = (0..3)
                .map(|_| p(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)))
                .collect();
            let m = single(v[0], v[1], v[2]);
            let (a, b, c) = ((v[1] - v[0]).norm(), (v[2] - v[1]).norm(), (v[0] - v[2]).norm());
            // Kahan's numerically stable Heron form.
            let mut s = [a, b, c];
            s.sort_by(|x, y| y.partial_cmp(x).unwrap());
            let [a, b, c] = s;
            let heron = 0.25 * ((a + (b + c)) * (c - (a - b)) * (c + (a - b)) * (a + (b - c))).sqrt();
            let area = m.face_area(0).unwrap();
            assert!((area - heron).abs() <= 1e-12 * heron.max(1e-300), "{area} vs {heron}");
        }
    }

    #[test]
    fn centroid_examples() {
        let m = single(p(0., 0., 0.), p(3., 0., 0.), p(0., 3., 0.));
        assert_eq!(m.face_centroid(0).unwrap(), p(1., 1., 0.));
        let h = 3f64.sqrt() / 2.0;
        let m = single(p(1., 0., 0.), p(-0.5, h, 0.), p(-0.5, -h, 0.));
        let c = m.face_centroid(0).unwrap();
        assert!(c.coords.norm() < 1e-15);
    }

    #[test]
    fn centroid_is_vertex_mean() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let v: Vec<Point> = (0..3)
                .map(|_| p(rng.random(), rng.random(), rng.random()))
                .collect();
            let m = single(v[0], v[1], v[2]);
            let expect = Point::from((v[0].coords + v[1].coords + v[2].coords) / 3.0);
            assert_eq!(m.face_centroid(0).unwrap(), expect);
        }
    }

    #[test]
    fn face_id_out_of_range() {
        let m = single(p(0., 0., 0.), p(1., 0., 0.), p(0., 1., 0.));
        assert!(matches!(m.face_area(1), Err(Error::OutOfRange { .. })));
        assert!(matches!(m.face_centroid(5), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn closed_cube_area_is_six() {
        let cube = crate::synth::unit_cube();
        let total: f64 = cube.face_areas().iter().sum();
        assert_eq!(cube.face_count(), 12);
        assert!((total - 6.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_faces_dropped() {
        let (m, dropped) = TriangleMesh::dropping_degenerate(
            vec![p(0., 0., 0.), p(1., 0., 0.), p(0., 1., 0.)],
            vec![[0, 1, 2], [0, 0, 1]],
            None,
        )
        .unwrap();
        assert_eq!(m.face_count(), 1);
        assert_eq!(dropped, 1);
    }

    #[test]
    fn extract_renumbers_vertices() {
        let cube = crate::synth::unit_cube();
        let sub = cube.extract(&[3, 4]);
        assert_eq!(sub.face_count(), 2);
        assert!(sub.vertex_count() <= 6);
        for f in 0..2u32 {
            assert_eq!(sub.triangle(f).unwrap(), cube.triangle(f + 3).unwrap());
        }
    }
}
