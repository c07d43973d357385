//! Deterministic synthetic scenes for tests, benchmarks and acceptance
//! experiments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geom::Point;
use crate::labels::{ElementKind, LabelId, LabelMap};
use crate::mesh::{PointCloud, TriangleMesh};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Closed unit cube, 12 outward-facing triangles.
pub fn unit_cube() -> TriangleMesh {
    let v = [
        [0., 0., 0.],
        [1., 0., 0.],
        [1., 1., 0.],
        [0., 1., 0.],
        [0., 0., 1.],
        [1., 0., 1.],
        [1., 1., 1.],
        [0., 1., 1.],
    ]
    .map(Point::from)
    .to_vec();
    TriangleMesh::new(v, crate::preprocess::voxel::CUBE_FACES.to_vec()).unwrap()
}

/// Planar `nx` x `ny` quad grid in z = 0, two triangles per quad, with
/// optional in-plane vertex jitter (fraction of a cell).
pub fn grid_mesh(nx: usize, ny: usize, cell: f64, jitter: f64, seed: u64) -> TriangleMesh {
    let mut r = rng(seed);
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            let interior = i > 0 && i < nx && j > 0 && j < ny;
            let (dx, dy) = if interior && jitter > 0.0 {
                (
                    r.random_range(-jitter..jitter) * cell,
                    r.random_range(-jitter..jitter) * cell,
                )
            } else {
                (0.0, 0.0)
            };
            vertices.push(Point::new(i as f64 * cell + dx, j as f64 * cell + dy, 0.0));
        }
    }
    let idx = |i: usize, j: usize| (j * (nx + 1) + i) as u32;
    let mut faces = Vec::with_capacity(nx * ny * 2);
    for j in 0..ny {
        for i in 0..nx {
            faces.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
            faces.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
        }
    }
    TriangleMesh::new(vertices, faces).unwrap()
}

/// Height-field terrain spanning `extent` meters with `2 * nx * ny` faces.
pub fn random_terrain(nx: usize, ny: usize, extent: f64, seed: u64) -> TriangleMesh {
    let mut r = rng(seed);
    let phase: [f64; 4] = [r.random(), r.random(), r.random(), r.random()];
    let flat = grid_mesh(nx, ny, extent / nx.max(ny) as f64, 0.3, seed);
    let vertices = flat
        .vertices()
        .iter()
        .map(|p| {
            let z = 0.8 * ((p.x * 0.37 + phase[0] * 6.0).sin() + (p.y * 0.23 + phase[1] * 6.0).cos())
                + 0.2 * ((p.x + p.y) * 1.7 + phase[2] * 6.0).sin();
            Point::new(p.x, p.y, z)
        })
        .collect();
    TriangleMesh::new(vertices, flat.faces().to_vec()).unwrap()
}

/// Latitude/longitude sphere with outward winding.
pub fn uv_sphere(slices: usize, stacks: usize, radius: f64) -> TriangleMesh {
    use std::f64::consts::PI;
    let mut vertices = vec![Point::new(0.0, 0.0, radius)];
    for s in 1..stacks {
        let theta = PI * s as f64 / stacks as f64;
        for k in 0..slices {
            let phi = 2.0 * PI * k as f64 / slices as f64;
            vertices.push(Point::new(
                radius * theta.sin() * phi.cos(),
                radius * theta.sin() * phi.sin(),
                radius * theta.cos(),
            ));
        }
    }
    vertices.push(Point::new(0.0, 0.0, -radius));
    let south = (vertices.len() - 1) as u32;
    let ring = |s: usize, k: usize| (1 + (s - 1) * slices + k % slices) as u32;
    let mut faces = Vec::new();
    for k in 0..slices {
        faces.push([0, ring(1, k), ring(1, k + 1)]);
    }
    for s in 1..stacks - 1 {
        for k in 0..slices {
            faces.push([ring(s, k), ring(s + 1, k), ring(s + 1, k + 1)]);
            faces.push([ring(s, k), ring(s + 1, k + 1), ring(s, k + 1)]);
        }
    }
    for k in 0..slices {
        faces.push([ring(stacks - 1, k), south, ring(stacks - 1, k + 1)]);
    }
    TriangleMesh::new(vertices, faces).unwrap()
}

/// Independent random triangles inside a cube of side `extent`.
pub fn random_triangle_soup(n: usize, seed: u64, extent: f64) -> TriangleMesh {
    let mut r = rng(seed);
    let mut vertices = Vec::with_capacity(n * 3);
    let mut faces = Vec::with_capacity(n);
    for f in 0..n {
        let c = Point::new(
            r.random_range(0.0..extent),
            r.random_range(0.0..extent),
            r.random_range(0.0..extent),
        );
        for _ in 0..3 {
            vertices.push(Point::new(
                c.x + r.random_range(-0.5..0.5),
                c.y + r.random_range(-0.5..0.5),
                c.z + r.random_range(-0.5..0.5),
            ));
        }
        let b = (f * 3) as u32;
        faces.push([b, b + 1, b + 2]);
    }
    TriangleMesh::new(vertices, faces).unwrap()
}

/// Uniform random points in an axis-aligned box.
pub fn random_cloud(n: usize, min: [f64; 3], max: [f64; 3], seed: u64) -> PointCloud {
    let mut r = rng(seed);
    let pts = (0..n)
        .map(|_| {
            Point::new(
                r.random_range(min[0]..max[0]),
                r.random_range(min[1]..max[1]),
                r.random_range(min[2]..max[2]),
            )
        })
        .collect();
    PointCloud::new(pts, None).unwrap()
}

/// Spatially coherent ground truth: each element takes the label of the
/// nearest of `regions` random seeds; seeds cycle through labels
/// `1..=classes`.
pub fn region_labels(
    scene_id: &str,
    kind: ElementKind,
    positions: &[Point],
    regions: usize,
    classes: LabelId,
    seed: u64,
) -> LabelMap {
    let mut r = rng(seed);
    let bounds = crate::geom::Aabb::from_points(positions);
    let seeds: Vec<(Point, LabelId)> = (0..regions)
        .map(|i| {
            let p = Point::new(
                r.random_range(bounds.min.x..=bounds.max.x),
                r.random_range(bounds.min.y..=bounds.max.y),
                r.random_range(bounds.min.z..=bounds.max.z),
            );
            (p, (i % classes as usize) as LabelId + 1)
        })
        .collect();
    let labels = positions
        .iter()
        .map(|p| {
            seeds
                .iter()
                .min_by(|a, b| (a.0 - p).norm_squared().total_cmp(&(b.0 - p).norm_squared()))
                .unwrap()
                .1
        })
        .collect();
    LabelMap::from_labels(scene_id, kind, labels)
}
