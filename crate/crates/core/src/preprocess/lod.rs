//! Quadric-error edge-collapse decimation with source-face coverage.
//!
//! Every decimated face carries the list of input faces it absorbed, so a
//! label painted on a coarse face can be pushed back to full resolution.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::{Matrix3, Vector3};

use crate::geom::{Point, Vector};
use crate::mesh::{triangle_centroid, triangle_normal, Rgb, TriangleMesh};

/// One level of detail of a chunk. `coverage[i]` lists the level-0 faces
/// (chunk-local indices) absorbed by face `i` of `mesh`.
#[derive(Debug, Clone, PartialEq)]
pub struct LodLevel {
    pub mesh: TriangleMesh,
    pub coverage: Vec<Vec<u32>>,
}

impl LodLevel {
    pub fn identity(mesh: TriangleMesh) -> Self {
        let coverage = (0..mesh.face_count() as u32).map(|f| vec![f]).collect();
        Self { mesh, coverage }
    }
}

/// Face budget for a level: `ceil(ratio * faces)`, at least one face.
pub fn face_target(faces: usize, ratio: f64) -> usize {
    ((ratio * faces as f64).ceil() as usize).clamp(1, faces.max(1))
}

/// Builds one level per ratio. The first ratio is expected to be 1.0 and
/// yields the input unchanged.
pub fn build_lods(mesh: &TriangleMesh, ratios: &[f64]) -> Vec<LodLevel> {
    ratios
        .iter()
        .map(|&r| {
            let target = face_target(mesh.face_count(), r);
            if target >= mesh.face_count() {
                LodLevel::identity(mesh.clone())
            } else {
                decimate(mesh, target)
            }
        })
        .collect()
}

#[derive(Clone, Copy, Default)]
struct Quadric([f64; 10]);

impl Quadric {
    fn plane(n: &Vector, d: f64, w: f64) -> Self {
        let (a, b, c) = (n.x, n.y, n.z);
        Quadric([
            w * a * a,
            w * a * b,
            w * a * c,
            w * a * d,
            w * b * b,
            w * b * c,
            w * b * d,
            w * c * c,
            w * c * d,
            w * d * d,
        ])
    }

    fn add(&mut self, o: &Quadric) {
        for i in 0..10 {
            self.0[i] += o.0[i];
        }
    }

    fn sum(a: &Quadric, b: &Quadric) -> Quadric {
        let mut q = *a;
        q.add(b);
        q
    }

    fn eval(&self, p: &Point) -> f64 {
        let q = &self.0;
        let (x, y, z) = (p.x, p.y, p.z);
        q[0] * x * x
            + 2.0 * q[1] * x * y
            + 2.0 * q[2] * x * z
            + 2.0 * q[3] * x
            + q[4] * y * y
            + 2.0 * q[5] * y * z
            + 2.0 * q[6] * y
            + q[7] * z * z
            + 2.0 * q[8] * z
            + q[9]
    }

    fn minimizer(&self) -> Option<Point> {
        let q = &self.0;
        let a = Matrix3::new(q[0], q[1], q[2], q[1], q[4], q[5], q[2], q[5], q[7]);
        let scale = a.abs().max();
        if scale == 0.0 || a.determinant().abs() < 1e-12 * scale * scale * scale {
            return None;
        }
        let x = a.try_inverse()? * Vector3::new(-q[3], -q[6], -q[8]);
        x.iter().all(|v| v.is_finite()).then(|| Point::from(x))
    }
}

#[derive(Clone, Copy)]
struct Candidate {
    cost: f64,
    keep: u32,
    drop: u32,
    ver_keep: u32,
    ver_drop: u32,
    pos: Point,
}

impl PartialEq for Candidate {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Candidate {
    // Reversed so BinaryHeap pops the cheapest collapse first.
    fn cmp(&self, o: &Self) -> Ordering {
        o.cost
            .total_cmp(&self.cost)
            .then(o.keep.cmp(&self.keep))
            .then(o.drop.cmp(&self.drop))
    }
}

const BOUNDARY_WEIGHT: f64 = 100.0;

struct Decimator {
    pos: Vec<Point>,
    colors: Option<Vec<Rgb>>,
    quadric: Vec<Quadric>,
    version: Vec<u32>,
    vert_alive: Vec<bool>,
    vert_faces: Vec<Vec<u32>>,
    faces: Vec<[u32; 3]>,
    face_alive: Vec<bool>,
    sources: Vec<Vec<u32>>,
    alive_faces: usize,
    orphans: Vec<(Vec<u32>, Point, Vector)>,
}

impl Decimator {
    fn new(mesh: &TriangleMesh) -> Self {
        let nv = mesh.vertex_count();
        let mut quadric = vec![Quadric::default(); nv];
        let mut vert_faces = vec![Vec::new(); nv];
        let mut edges: Vec<(u32, u32, u32)> = Vec::with_capacity(mesh.face_count() * 3);
        for (fi, f) in mesh.faces().iter().enumerate() {
            let [a, b, c] = mesh.tri(fi);
            let cross = (b - a).cross(&(c - a));
            let area2 = cross.norm();
            if area2 > 0.0 {
                let n = cross / area2;
                let q = Quadric::plane(&n, -n.dot(&a.coords), 0.5 * area2);
                for &v in f {
                    quadric[v as usize].add(&q);
                }
            }
            for k in 0..3 {
                vert_faces[f[k] as usize].push(fi as u32);
                let (u, v) = (f[k], f[(k + 1) % 3]);
                edges.push((u.min(v), u.max(v), fi as u32));
            }
        }
        // Boundary edges get a perpendicular constraint plane so open chunk
        // borders keep their outline.
        edges.sort_unstable();
        let mut i = 0;
        while i < edges.len() {
            let mut j = i + 1;
            while j < edges.len() && edges[j].0 == edges[i].0 && edges[j].1 == edges[i].1 {
                j += 1;
            }
            if j - i == 1 {
                let (u, v, f) = edges[i];
                let (pu, pv) = (mesh.vertices()[u as usize], mesh.vertices()[v as usize]);
                let [a, b, c] = mesh.tri(f as usize);
                let fnorm = triangle_normal(&a, &b, &c);
                let e = pv - pu;
                let n = e.cross(&fnorm);
                let len = n.norm();
                if len > 0.0 {
                    let n = n / len;
                    let q = Quadric::plane(&n, -n.dot(&pu.coords), BOUNDARY_WEIGHT * e.norm_squared());
                    quadric[u as usize].add(&q);
                    quadric[v as usize].add(&q);
                }
            }
            i = j;
        }
        let nf = mesh.face_count();
        Self {
            pos: mesh.vertices().to_vec(),
            colors: mesh.colors().map(|c| c.to_vec()),
            quadric,
            version: vec![0; nv],
            vert_alive: vec![true; nv],
            vert_faces,
            faces: mesh.faces().to_vec(),
            face_alive: vec![true; nf],
            sources: (0..nf as u32).map(|f| vec![f]).collect(),
            alive_faces: nf,
            orphans: Vec::new(),
        }
    }

    fn face_normal(&self, f: usize) -> Vector {
        let [a, b, c] = self.faces[f];
        triangle_normal(&self.pos[a as usize], &self.pos[b as usize], &self.pos[c as usize])
    }

    fn face_centroid(&self, f: usize) -> Point {
        let [a, b, c] = self.faces[f];
        triangle_centroid(&self.pos[a as usize], &self.pos[b as usize], &self.pos[c as usize])
    }

    fn neighbors(&self, v: u32) -> Vec<u32> {
        let mut out: Vec<u32> = self.vert_faces[v as usize]
            .iter()
            .filter(|&&f| self.face_alive[f as usize])
            .flat_map(|&f| self.faces[f as usize])
            .filter(|&u| u != v)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    fn candidate(&self, u: u32, v: u32) -> Candidate {
        let (keep, drop) = (u.min(v), u.max(v));
        let q = Quadric::sum(&self.quadric[keep as usize], &self.quadric[drop as usize]);
        let pk = self.pos[keep as usize];
        let pd = self.pos[drop as usize];
        let mut best = (q.eval(&pk), pk);
        for p in [pd, nalgebra::center(&pk, &pd)] {
            let c = q.eval(&p);
            if c < best.0 {
                best = (c, p);
            }
        }
        if let Some(p) = q.minimizer() {
            // Keep the solved position local to the edge.
            let reach = (pd - pk).norm() * 2.0;
            let c = q.eval(&p);
            if (p - pk).norm() <= reach && c < best.0 {
                best = (c, p);
            }
        }
        Candidate {
            cost: best.0.max(0.0),
            keep,
            drop,
            ver_keep: self.version[keep as usize],
            ver_drop: self.version[drop as usize],
            pos: best.1,
        }
    }

    fn is_current(&self, c: &Candidate) -> bool {
        self.vert_alive[c.keep as usize]
            && self.vert_alive[c.drop as usize]
            && self.version[c.keep as usize] == c.ver_keep
            && self.version[c.drop as usize] == c.ver_drop
    }

    /// Faces removed by collapsing `keep`-`drop` (those containing both).
    fn removed_faces(&self, keep: u32, drop: u32) -> Vec<u32> {
        self.vert_faces[drop as usize]
            .iter()
            .copied()
            .filter(|&f| self.face_alive[f as usize] && self.faces[f as usize].contains(&keep))
            .collect()
    }

    fn flips(&self, c: &Candidate) -> bool {
        for &v in &[c.keep, c.drop] {
            for &f in &self.vert_faces[v as usize] {
                let fu = f as usize;
                if !self.face_alive[fu] {
                    continue;
                }
                let tri = self.faces[fu];
                if tri.contains(&c.keep) && tri.contains(&c.drop) {
                    continue;
                }
                let old = self.face_normal(fu);
                let moved: Vec<Point> = tri
                    .iter()
                    .map(|&x| if x == c.keep || x == c.drop { c.pos } else { self.pos[x as usize] })
                    .collect();
                let new = triangle_normal(&moved[0], &moved[1], &moved[2]);
                if new == Vector::zeros() || (old != Vector::zeros() && old.dot(&new) < 0.0) {
                    return true;
                }
            }
        }
        false
    }

    fn collapse(&mut self, c: &Candidate) -> Vec<u32> {
        let (keep, drop) = (c.keep as usize, c.drop as usize);
        let removed = self.removed_faces(c.keep, c.drop);
        let removed_info: Vec<(u32, Vector)> =
            removed.iter().map(|&f| (f, self.face_normal(f as usize))).collect();
        for &f in &removed {
            self.face_alive[f as usize] = false;
        }
        self.alive_faces -= removed.len();

        let moved = std::mem::take(&mut self.vert_faces[drop]);
        for &f in &moved {
            let fu = f as usize;
            if !self.face_alive[fu] {
                continue;
            }
            for x in self.faces[fu].iter_mut() {
                if *x == c.drop {
                    *x = c.keep;
                }
            }
        }
        let mut merged = std::mem::take(&mut self.vert_faces[keep]);
        merged.extend(moved);
        merged.retain(|&f| self.face_alive[f as usize]);
        merged.sort_unstable();
        merged.dedup();
        self.vert_faces[keep] = merged;

        self.pos[keep] = c.pos;
        let qd = self.quadric[drop];
        self.quadric[keep].add(&qd);
        self.vert_alive[drop] = false;
        self.version[keep] += 1;
        self.version[drop] += 1;

        for (f, normal) in removed_info {
            let src = std::mem::take(&mut self.sources[f as usize]);
            let heir = self.vert_faces[keep]
                .iter()
                .copied()
                .max_by(|&x, &y| {
                    let dx = self.face_normal(x as usize).dot(&normal);
                    let dy = self.face_normal(y as usize).dot(&normal);
                    dx.total_cmp(&dy).then(y.cmp(&x))
                });
            match heir {
                Some(h) => self.sources[h as usize].extend(src),
                None => {
                    let [a, b, cc] = self.faces[f as usize];
                    let centroid = triangle_centroid(
                        &self.pos[a as usize],
                        &self.pos[b as usize],
                        &self.pos[cc as usize],
                    );
                    self.orphans.push((src, centroid, normal));
                }
            }
        }
        self.neighbors(c.keep)
    }

    fn run(&mut self, target: usize, check_flips: bool) {
        let mut heap = BinaryHeap::new();
        for f in 0..self.faces.len() {
            if !self.face_alive[f] {
                continue;
            }
            let t = self.faces[f];
            for k in 0..3 {
                heap.push(self.candidate(t[k], t[(k + 1) % 3]));
            }
        }
        while self.alive_faces > target {
            let Some(c) = heap.pop() else { break };
            if !self.is_current(&c) {
                continue;
            }
            let removing = self.removed_faces(c.keep, c.drop).len();
            if removing == 0 || removing >= self.alive_faces {
                continue;
            }
            if check_flips && self.flips(&c) {
                continue;
            }
            let nbrs = self.collapse(&c);
            for n in nbrs {
                heap.push(self.candidate(c.keep, n));
            }
        }
    }

    /// Last resort when no collapse can reach the target: drop the smallest
    /// faces, handing their sources to the nearest survivor.
    fn drop_smallest(&mut self, target: usize) {
        while self.alive_faces > target {
            let (f, _) = (0..self.faces.len())
                .filter(|&f| self.face_alive[f])
                .map(|f| {
                    let [a, b, c] = self.faces[f];
                    let area = crate::mesh::triangle_area(
                        &self.pos[a as usize],
                        &self.pos[b as usize],
                        &self.pos[c as usize],
                    );
                    (f, area)
                })
                .min_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(&y.0)))
                .expect("alive faces exceed target >= 1");
            self.face_alive[f] = false;
            self.alive_faces -= 1;
            let src = std::mem::take(&mut self.sources[f]);
            self.orphans.push((src, self.face_centroid(f), self.face_normal(f)));
        }
    }

    fn finish(mut self, source: &TriangleMesh) -> LodLevel {
        let alive: Vec<usize> = (0..self.faces.len()).filter(|&f| self.face_alive[f]).collect();
        let centroids: Vec<Point> = alive.iter().map(|&f| self.face_centroid(f)).collect();
        let normals: Vec<Vector> = alive.iter().map(|&f| self.face_normal(f)).collect();
        let nearest = |p: &Point, n: &Vector| -> usize {
            let mut best: Option<(bool, f64, usize)> = None;
            for (i, c) in centroids.iter().enumerate() {
                let aligned = normals[i].dot(n) > 0.0;
                let d = (c - p).norm_squared();
                let better = match best {
                    None => true,
                    Some((ba, bd, _)) => (aligned && !ba) || (aligned == ba && d < bd),
                };
                if better {
                    best = Some((aligned, d, i));
                }
            }
            best.unwrap().2
        };
        let mut coverage: Vec<Vec<u32>> = alive
            .iter()
            .map(|&f| std::mem::take(&mut self.sources[f]))
            .collect();
        for (src, c, n) in std::mem::take(&mut self.orphans) {
            let i = nearest(&c, &n);
            coverage[i].extend(src);
        }
        // Re-home sources whose absorbing face ended up facing away.
        let src_normals: Vec<Vector> =
            (0..source.face_count()).map(|f| source.face_normal(f as u32).unwrap()).collect();
        let src_centroids = source.face_centroids();
        let mut moves = Vec::new();
        for (i, cov) in coverage.iter().enumerate() {
            for (k, &s) in cov.iter().enumerate() {
                let sn = src_normals[s as usize];
                if sn != Vector::zeros() && normals[i].dot(&sn) <= 0.0 {
                    let j = nearest(&src_centroids[s as usize], &sn);
                    if j != i && normals[j].dot(&sn) > 0.0 {
                        moves.push((i, k, j));
                    }
                }
            }
        }
        for &(i, k, j) in moves.iter().rev() {
            let s = coverage[i].remove(k);
            coverage[j].push(s);
        }
        for c in coverage.iter_mut() {
            c.sort_unstable();
        }

        let mut remap = vec![u32::MAX; self.pos.len()];
        let mut vertices = Vec::new();
        let mut colors = self.colors.as_ref().map(|_| Vec::new());
        let mut faces = Vec::with_capacity(alive.len());
        for &f in &alive {
            let mut t = [0u32; 3];
            for (k, &v) in self.faces[f].iter().enumerate() {
                if remap[v as usize] == u32::MAX {
                    remap[v as usize] = vertices.len() as u32;
                    vertices.push(self.pos[v as usize]);
                    if let (Some(dst), Some(src)) = (colors.as_mut(), self.colors.as_ref()) {
                        dst.push(src[v as usize]);
                    }
                }
                t[k] = remap[v as usize];
            }
            faces.push(t);
        }
        let mesh = TriangleMesh::with_colors(vertices, faces, colors)
            .expect("decimation preserves index validity");
        LodLevel { mesh, coverage }
    }
}

/// Decimates `mesh` to at most `target` faces (and at least one).
pub fn decimate(mesh: &TriangleMesh, target: usize) -> LodLevel {
    let target = target.max(1);
    if mesh.face_count() <= target {
        return LodLevel::identity(mesh.clone());
    }
    let mut d = Decimator::new(mesh);
    d.run(target, true);
    if d.alive_faces > target {
        d.run(target, false);
    }
    if d.alive_faces > target {
        d.drop_smallest(target);
    }
    d.finish(mesh)
}
