use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

use meshlabel_core::bvh::Bvh;
use meshlabel_core::camera::CameraModel;
use meshlabel_core::fill::{fill_unlabeled, FillConfig};
use meshlabel_core::geom::{Point, Ray, Vector};
use meshlabel_core::labels::{ElementKind, LabelMap};
use meshlabel_core::preprocess::{split_chunks, voxelize};
use meshlabel_core::raster::{rasterize, rasterize_faces};
use meshlabel_core::{synth, PreprocessConfig};

fn bench_voxelize(c: &mut Criterion) {
    let mut g = c.benchmark_group("voxelize");
    for n in [100_000usize, 1_000_000] {
        let cloud = synth::random_cloud(n, [0.0; 3], [10.0, 10.0, 3.0], 1);
        g.throughput(Throughput::Elements(n as u64));
        g.bench_with_input(BenchmarkId::from_parameter(n), &cloud, |b, cloud| {
            b.iter(|| voxelize(black_box(cloud), 0.05, 5).unwrap())
        });
    }
    g.finish();
}

fn bench_split_lod(c: &mut Criterion) {
    let mut g = c.benchmark_group("split_and_lod");
    g.sample_size(10);
    let mesh = synth::random_terrain(100, 100, 50.0, 2);
    g.throughput(Throughput::Elements(mesh.face_count() as u64));
    let config = PreprocessConfig::default();
    g.bench_function("terrain_20k", |b| b.iter(|| split_chunks(black_box(&mesh), &config).unwrap()));
    g.finish();
}

fn bench_raycast(c: &mut Criterion) {
    let mesh = synth::random_terrain(100, 100, 50.0, 3);
    let bvh = Bvh::build(&mesh);
    let rays: Vec<Ray> = (0..1024)
        .map(|i| {
            let x = (i % 32) as f64 * 1.5 + 1.0;
            let y = (i / 32) as f64 * 1.5 + 1.0;
            Ray::new(Point::new(x, y, 40.0), -Vector::z())
        })
        .collect();
    let mut g = c.benchmark_group("raycast");
    g.throughput(Throughput::Elements(rays.len() as u64));
    g.bench_function("bvh_first_hit_1024", |b| {
        b.iter(|| rays.iter().filter(|r| bvh.first_hit(&mesh, r).is_some()).count())
    });
    g.bench_function("bvh_build_20k", |b| b.iter(|| Bvh::build(black_box(&mesh))));
    g.finish();
}

fn bench_fill(c: &mut Criterion) {
    let mesh = synth::grid_mesh(150, 150, 1.0, 0.0, 4);
    let positions = mesh.face_centroids();
    let n = positions.len();
    // Every tenth face keeps a label.
    let labels: Vec<u16> = (0..n).map(|i| if i % 10 == 0 { (i % 7 + 1) as u16 } else { 0 }).collect();
    let map = LabelMap::from_labels("bench", ElementKind::Face, labels);
    let mut g = c.benchmark_group("fill");
    g.sample_size(10);
    g.throughput(Throughput::Elements(n as u64));
    for k in [1usize, 5, 15] {
        let config = FillConfig { k, ..FillConfig::default() };
        g.bench_with_input(BenchmarkId::new("knn", k), &config, |b, config| {
            b.iter(|| fill_unlabeled(&map, &positions, config).unwrap())
        });
    }
    g.finish();
}

fn bench_rasterize(c: &mut Criterion) {
    let mesh = synth::random_terrain(100, 100, 50.0, 5);
    let labels: Vec<u16> = (0..mesh.face_count()).map(|i| (i % 11 + 1) as u16).collect();
    let cam = CameraModel::look_at(
        Point::new(25.0, -20.0, 40.0),
        Point::new(25.0, 25.0, 0.0),
        Vector::z(),
        [500.0, 500.0, 320.0, 240.0],
        640,
        480,
    )
    .unwrap();
    let mut g = c.benchmark_group("rasterize");
    g.sample_size(20);
    g.bench_function("faces_640x480", |b| b.iter(|| rasterize_faces(black_box(&mesh), &cam).unwrap()));
    g.bench_function("shaded_640x480", |b| b.iter(|| rasterize(&mesh, &labels, None, &cam).unwrap()));
    g.finish();
}

criterion_group!(benches, bench_voxelize, bench_split_lod, bench_raycast, bench_fill, bench_rasterize);
criterion_main!(benches);
