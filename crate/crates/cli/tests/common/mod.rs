#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use meshlabel_core::camera::{trajectory_line, CameraModel, Frame};
use meshlabel_core::geom::{Point, Vector};
use meshlabel_core::io::{save_mesh, PlyFormat};
use meshlabel_core::labels::save_label_map;
use meshlabel_core::scene::Scene;
use meshlabel_core::session::{log_line, Stroke, StrokeRecord};
use meshlabel_core::{synth, ElementKind, LabelId, LabelMap, LabelTaxonomy, PreprocessConfig, TriangleMesh};
use rand::Rng;

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_meshlabel")
}

pub fn run<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> Output {
    Command::new(bin()).args(args).output().expect("spawn meshlabel")
}

/// Runs the binary and returns stdout; panics with stderr on failure.
pub fn run_ok<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "meshlabel {:?} failed: {}",
        args.iter().map(|a| a.as_ref().to_string_lossy().into_owned()).collect::<Vec<_>>(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub fn p(path: &Path) -> String {
    path.to_str().unwrap().to_string()
}

pub fn demo_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/demo")
}

pub const DEMO_CELL: f64 = 6.0;

pub fn demo_mesh() -> TriangleMesh {
    synth::random_terrain(16, 16, 20.0, 7)
}

/// Paint strokes that mostly follow `gt`; `error` is the chance a stroke
/// uses a wrong label. Every fifth stroke is ray-cast from above.
pub fn strokes_following(scene: &Scene, gt: &LabelMap, n: usize, error: f64, annotator: &str, seed: u64) -> Vec<StrokeRecord> {
    let mut r = synth::rng(seed);
    let classes = 11;
    (0..n)
        .map(|i| {
            let face = r.random_range(0..scene.face_count());
            let mut label = gt.get(face);
            if r.random_bool(error) {
                label = label % classes + 1;
            }
            let radius = r.random_range(0.8..2.0);
            let stroke = if i % 5 == 4 {
                let c = scene.centroids()[face];
                Stroke::ray(Point::new(c.x, c.y, 20.0), -Vector::z(), radius, label)
            } else {
                Stroke::face(face as u32, radius, label)
            };
            StrokeRecord {
                seq: i as u64 + 1,
                stroke: stroke.by(annotator).at(1_700_000_000 + i as u64),
            }
        })
        .collect()
}

pub fn write_strokes(path: &Path, records: &[StrokeRecord]) {
    let text: String = records.iter().map(log_line).collect();
    fs::write(path, text).unwrap();
}

pub fn overhead_frames() -> Vec<Frame> {
    let eyes = [(10.0, -6.0, 14.0), (12.0, 4.0, 24.0), (-4.0, 10.0, 10.0)];
    eyes.iter()
        .enumerate()
        .map(|(i, &(x, y, z))| Frame {
            id: format!("view{i}"),
            camera: CameraModel::look_at(
                Point::new(x, y, z),
                Point::new(10.0, 10.0, 0.0),
                Vector::z(),
                [60.0, 60.0, 32.0, 24.0],
                64,
                48,
            )
            .unwrap(),
        })
        .collect()
}

/// Writes the demo inputs: mesh, ground truth, two annotators' stroke logs
/// and a camera trajectory.
pub fn write_demo_inputs(dir: &Path) {
    fs::create_dir_all(dir).unwrap();
    let mesh = demo_mesh();
    save_mesh(&mesh, &dir.join("demo.ply"), PlyFormat::Ascii).unwrap();
    let cfg = PreprocessConfig { cell_size: DEMO_CELL, ..Default::default() };
    let scene = Scene::from_mesh("demo", mesh, cfg).unwrap();
    let gt = synth::region_labels("demo", ElementKind::Face, scene.centroids(), 9, 6, 11);
    save_label_map(&gt, &LabelTaxonomy::eigen13(), &dir.join("gt")).unwrap();
    write_strokes(&dir.join("alice.jsonl"), &strokes_following(&scene, &gt, 120, 0.05, "alice", 1));
    write_strokes(&dir.join("bob.jsonl"), &strokes_following(&scene, &gt, 90, 0.2, "bob", 2));
    let traj: String = overhead_frames().iter().map(trajectory_line).collect();
    fs::write(dir.join("trajectory.jsonl"), traj).unwrap();
}

/// Ground truth over a synthetic face scene with `n` roughly equal-area faces.
pub fn flat_scene(dir: &Path, nx: usize, ny: usize, classes: LabelId, seed: u64) -> (PathBuf, PathBuf, Scene) {
    fs::create_dir_all(dir).unwrap();
    let mesh = synth::grid_mesh(nx, ny, 1.0, 0.0, seed);
    let ply = dir.join("flat.ply");
    save_mesh(&mesh, &ply, PlyFormat::BinaryLittleEndian).unwrap();
    let scene = Scene::from_mesh("flat", mesh, PreprocessConfig { cell_size: 16.0, ..Default::default() }).unwrap();
    let gt = synth::region_labels("flat", ElementKind::Face, scene.centroids(), 40, classes, seed);
    let gt_path = dir.join("gt");
    save_label_map(&gt, &LabelTaxonomy::eigen13(), &gt_path).unwrap();
    (ply, gt_path, scene)
}
