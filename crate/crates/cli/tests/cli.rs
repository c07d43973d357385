mod common;

use std::fs;
use std::path::Path;

use common::{p, run, run_ok};
use meshlabel_core::labels::{load_label_map, save_label_map};
use meshlabel_core::metrics::MetricsReport;
use meshlabel_core::LabelTaxonomy;

fn labels_of(path: &Path) -> meshlabel_core::LabelMap {
    load_label_map(path, None).unwrap()
}

/// One-line JSON error with a nonzero exit code.
fn assert_error_line(args: &[&str], kind: &str) {
    let out = run(args);
    assert!(!out.status.success(), "{args:?} should fail");
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "stderr not one line: {err:?}");
    let v: serde_json::Value = serde_json::from_str(err.trim()).unwrap();
    assert_eq!(v["error"]["kind"], kind, "{err}");
    assert!(v["error"]["message"].as_str().is_some_and(|m| !m.is_empty()));
}

#[test]
fn fuse_of_one_annotator_is_identity() {
    let t = tempfile::tempdir().unwrap();
    let (_, gt, _) = common::flat_scene(t.path(), 12, 10, 11, 3);
    let ann = t.path().join("ann");
    run_ok(&["simulate-annotators", "--gt", &p(&gt), "--n", "1", "--p", "0.6", "--coverage", "0.7", "--seed", "4", "--out-prefix", &p(&ann)]);
    let a0 = t.path().join("ann0");
    let fused = t.path().join("fused");
    run_ok(&["fuse", &p(&a0), "--out", &p(&fused)]);
    assert_eq!(labels_of(&fused), labels_of(&a0));
    assert_eq!(
        fs::read(t.path().join("fused.labels.csv")).unwrap(),
        fs::read(t.path().join("ann0.labels.csv")).unwrap()
    );
}

#[test]
fn simulate_with_perfect_accuracy_copies_ground_truth() {
    let t = tempfile::tempdir().unwrap();
    let (_, gt, _) = common::flat_scene(t.path(), 10, 10, 11, 5);
    let prefix = t.path().join("sim/a");
    let out = run_ok(&["simulate-annotators", "--gt", &p(&gt), "--n", "3", "--p", "1.0", "--seed", "9", "--out-prefix", &p(&prefix)]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["accuracy"], serde_json::json!([1.0, 1.0, 1.0]));
    for i in 0..3 {
        assert_eq!(labels_of(&t.path().join(format!("sim/a{i}"))), labels_of(&gt));
    }
}

#[test]
fn simulate_is_deterministic_per_seed() {
    let t = tempfile::tempdir().unwrap();
    let (_, gt, _) = common::flat_scene(t.path(), 10, 10, 11, 5);
    for (prefix, seed) in [("x", "3"), ("y", "3"), ("z", "4")] {
        run_ok(&["simulate-annotators", "--gt", &p(&gt), "--n", "2", "--seed", seed, "--out-prefix", &p(&t.path().join(prefix))]);
    }
    let read = |n: &str| fs::read(t.path().join(format!("{n}.labels.csv"))).unwrap();
    assert_eq!(read("x0"), read("y0"));
    assert_eq!(read("x1"), read("y1"));
    assert_ne!(read("x0"), read("z0"));
}

#[test]
fn sweep_at_one_matches_score() {
    let t = tempfile::tempdir().unwrap();
    let (ply, gt, _) = common::flat_scene(t.path(), 16, 12, 11, 8);
    let scene = t.path().join("scene");
    run_ok(&["preprocess", &p(&ply), "--out", &p(&scene)]);
    let prefix = t.path().join("a");
    run_ok(&["simulate-annotators", "--gt", &p(&gt), "--n", "4", "--p", "0.7", "--coverage", "0.8", "--out-prefix", &p(&prefix)]);
    let inputs: Vec<String> = (0..4).map(|i| p(&t.path().join(format!("a{i}")))).collect();
    let fused = t.path().join("fused");
    let mut args = vec!["fuse".to_string()];
    args.extend(inputs.iter().cloned());
    args.extend(["--out".into(), p(&fused), "--uncert-out".into(), p(&fused)]);
    run_ok(&args);

    let score = run_ok(&["score", "--scene", &p(&scene), "--gt", &p(&gt), "--pred", &p(&fused), "--format", "json"]);
    let report: MetricsReport = serde_json::from_str(&score).unwrap();
    let csv = run_ok(&["sweep", "--scene", &p(&scene), "--gt", &p(&gt), "--pred", &p(&fused), "--uncert", &p(&fused), "--th", "1.0"]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "th,miou,perc_area");
    let cols: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(cols[0].parse::<f64>().unwrap(), 1.0);
    assert_eq!(cols[1].parse::<f64>().unwrap(), report.miou.unwrap());
    assert_eq!(cols[2].parse::<f64>().unwrap(), report.perc_area);
}

#[test]
fn score_of_ground_truth_is_perfect_and_text_table_lists_classes() {
    let t = tempfile::tempdir().unwrap();
    let (ply, gt, _) = common::flat_scene(t.path(), 8, 8, 4, 1);
    let out = run_ok(&["score", "--scene", &p(&ply), "--gt", &p(&gt), "--pred", &p(&gt), "--format", "json"]);
    let r: MetricsReport = serde_json::from_str(&out).unwrap();
    assert_eq!(r.miou, Some(1.0));
    assert_eq!(r.perc_area, 100.0);
    let text = run_ok(&["score", "--scene", &p(&ply), "--gt", &p(&gt), "--pred", &p(&gt)]);
    assert!(text.contains("mIoU"));
    // Classes 5..=13 never occur and are shown as excluded.
    assert!(text.contains('-'));
}

#[test]
fn fill_reaches_full_coverage() {
    let t = tempfile::tempdir().unwrap();
    let (ply, gt, _) = common::flat_scene(t.path(), 12, 12, 11, 2);
    let scene = t.path().join("scene");
    run_ok(&["preprocess", &p(&ply), "--out", &p(&scene)]);
    run_ok(&["simulate-annotators", "--gt", &p(&gt), "--n", "1", "--p", "1.0", "--coverage", "0.3", "--out-prefix", &p(&t.path().join("part"))]);
    let part = t.path().join("part0");
    let filled = t.path().join("filled");
    run_ok(&["fill", "--scene", &p(&scene), "--labels", &p(&part), "--out", &p(&filled), "--k", "3"]);
    let m = labels_of(&filled);
    assert_eq!(m.labeled_count(), m.len());
    let r: MetricsReport =
        serde_json::from_str(&run_ok(&["score", "--scene", &p(&scene), "--gt", &p(&gt), "--pred", &p(&filled), "--format", "json"])).unwrap();
    assert_eq!(r.perc_area, 100.0);
}

#[test]
fn errors_are_single_json_lines() {
    let t = tempfile::tempdir().unwrap();
    let (ply, gt, _) = common::flat_scene(t.path(), 4, 4, 3, 1);
    let missing = p(&t.path().join("nope"));
    assert_error_line(&["fuse", &missing, "--out", &p(&t.path().join("o"))], "io");
    assert_error_line(&["frobnicate"], "usage");
    assert_error_line(&["fill", "--scene", &p(&ply)], "usage");
    assert_error_line(&["fill", "--scene", &p(&ply), "--labels", &p(&gt), "--out", &missing, "--th-u", "0.5"], "invalid");
    assert_error_line(&["fill", "--scene", &p(&ply), "--labels", &p(&gt), "--out", &missing, "--weighting", "loud"], "usage");
    assert_error_line(&["--threads", "0", "fuse", &p(&gt), "--out", &missing], "invalid");
    let bad = t.path().join("bad.labels.csv");
    fs::write(&bad, "element_id,label_id\n0,99\n").unwrap();
    fs::copy(t.path().join("gt.labels.json"), t.path().join("bad.labels.json")).unwrap();
    assert_error_line(&["fuse", &p(&bad), "--out", &missing], "unknown_label");
}

#[test]
fn help_documents_flags() {
    let out = run_ok(&["fill", "--help"]);
    for flag in ["--k", "--th-u", "--weighting", "--uncert", "--threads", "--config"] {
        assert!(out.contains(flag), "missing {flag} in help");
    }
}

#[test]
fn config_file_sets_defaults_and_flags_override() {
    let t = tempfile::tempdir().unwrap();
    let (ply, gt, _) = common::flat_scene(t.path(), 10, 10, 11, 6);
    run_ok(&["simulate-annotators", "--gt", &p(&gt), "--n", "1", "--p", "1.0", "--coverage", "0.3", "--out-prefix", &p(&t.path().join("part"))]);
    let cfg = t.path().join("cfg.json");
    fs::write(&cfg, r#"{"fill": {"k": 3, "weighting": "paper-literal"}, "preprocess": {"cell_size": 4.0}}"#).unwrap();
    let out = run_ok(&["--config", &p(&cfg), "fill", "--scene", &p(&ply), "--labels", &p(&t.path().join("part0")), "--out", &p(&t.path().join("f"))]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["k"], 3);
    assert_eq!(v["weighting"], "paper-literal");
    let out = run_ok(&["--config", &p(&cfg), "fill", "--k", "1", "--scene", &p(&ply), "--labels", &p(&t.path().join("part0")), "--out", &p(&t.path().join("f"))]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["k"], 1);
    fs::write(&cfg, r#"{"fil": {}}"#).unwrap();
    assert_error_line(&["--config", &p(&cfg), "fuse", &p(&gt), "--out", &p(&t.path().join("x"))], "json");
}

#[test]
fn custom_taxonomy_is_carried_through() {
    let t = tempfile::tempdir().unwrap();
    let (_, gt, _) = common::flat_scene(t.path(), 6, 6, 3, 2);
    let tax_path = t.path().join("tax.json");
    let tax = r#"[{"id":0,"name":"void","color":[0,0,0]},{"id":1,"name":"a","color":[255,0,0]},{"id":2,"name":"b","color":[0,255,0]},{"id":3,"name":"c","color":[0,0,255]}]"#;
    fs::write(&tax_path, tax).unwrap();
    let tax = LabelTaxonomy::load(&tax_path).unwrap();
    let m = labels_of(&gt);
    save_label_map(&m, &tax, &t.path().join("g3")).unwrap();
    run_ok(&["fuse", &p(&t.path().join("g3")), "--out", &p(&t.path().join("f3"))]);
    let (_, back) = meshlabel_core::labels::load_label_map_with_taxonomy(&t.path().join("f3"), None).unwrap();
    assert_eq!(back.class_count(), 3);
}

/// Runs the demo pipeline and returns (relative name, bytes) of every output.
fn demo_pipeline(work: &Path, threads: &str) -> Vec<(String, Vec<u8>)> {
    let demo = common::demo_dir();
    let scene = work.join("scene");
    let cell = common::DEMO_CELL.to_string();
    let t = |args: &[&str]| {
        let mut v = vec!["--threads", threads];
        v.extend_from_slice(args);
        run_ok(&v)
    };
    t(&["preprocess", &p(&demo.join("demo.ply")), "--out", &p(&scene), "--cell-size", &cell]);
    for who in ["alice", "bob"] {
        t(&["label-replay", "--scene", &p(&scene), "--strokes", &p(&demo.join(format!("{who}.jsonl"))), "--out", &p(&work.join(who))]);
    }
    let fused = work.join("fused");
    t(&["fuse", &p(&work.join("alice")), &p(&work.join("bob")), "--out", &p(&fused), "--uncert-out", &p(&fused)]);
    t(&["uncert", &p(&work.join("alice")), &p(&work.join("bob")), "--out", &p(&work.join("u2"))]);
    let filled = work.join("filled");
    t(&["fill", "--scene", &p(&scene), "--labels", &p(&fused), "--out", &p(&filled)]);
    let refilled = work.join("refilled");
    t(&["fill", "--scene", &p(&scene), "--labels", &p(&fused), "--uncert", &p(&fused), "--th-u", "0.5", "--out", &p(&refilled)]);
    t(&["render", "--scene", &p(&scene), "--labels", &p(&filled), "--uncert", &p(&fused), "--trajectory", &p(&demo.join("trajectory.jsonl")), "--out", &p(&work.join("render")), "--color"]);
    let score = t(&["score", "--scene", &p(&scene), "--gt", &p(&demo.join("gt")), "--pred", &p(&filled), "--format", "json"]);
    fs::write(work.join("score.json"), score).unwrap();
    let sweep = t(&["sweep", "--scene", &p(&scene), "--gt", &p(&demo.join("gt")), "--pred", &p(&fused), "--uncert", &p(&fused)]);
    fs::write(work.join("sweep.csv"), sweep).unwrap();

    let mut names: Vec<String> = [
        "alice.labels.csv",
        "bob.labels.csv",
        "fused.labels.csv",
        "fused.uncert.csv",
        "u2.uncert.csv",
        "filled.labels.csv",
        "refilled.labels.csv",
        "score.json",
        "sweep.csv",
    ]
    .map(String::from)
    .to_vec();
    let mut renders: Vec<String> = fs::read_dir(work.join("render"))
        .unwrap()
        .map(|e| format!("render/{}", e.unwrap().file_name().to_string_lossy()))
        .collect();
    renders.sort();
    names.extend(renders);
    names.into_iter().map(|n| (n.clone(), fs::read(work.join(&n)).unwrap())).collect()
}

#[test]
fn demo_pipeline_matches_golden_outputs() {
    let demo = common::demo_dir();
    let golden = demo.join("golden");
    let update = std::env::var_os("UPDATE_GOLDEN").is_some();
    if update {
        common::write_demo_inputs(&demo);
    }
    let t = tempfile::tempdir().unwrap();
    let outputs = demo_pipeline(t.path(), "2");
    if update {
        let _ = fs::remove_dir_all(&golden);
        for (name, bytes) in &outputs {
            let path = golden.join(name);
            fs::create_dir_all(path.parent().unwrap()).unwrap();
            fs::write(path, bytes).unwrap();
        }
    }
    assert_eq!(outputs.len(), 9 + 9, "three frames x three images expected");
    for (name, bytes) in &outputs {
        let want = fs::read(golden.join(name)).unwrap_or_else(|e| panic!("golden {name}: {e} (run with UPDATE_GOLDEN=1)"));
        assert!(want == *bytes, "{name} differs from golden output");
    }
}

#[test]
fn thread_count_does_not_change_outputs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let one = demo_pipeline(a.path(), "1");
    let four = demo_pipeline(b.path(), "4");
    assert_eq!(one.len(), four.len());
    for ((n1, b1), (n4, b4)) in one.iter().zip(&four) {
        assert_eq!(n1, n4);
        assert!(b1 == b4, "{n1} differs between --threads 1 and 4");
    }
}

#[test]
fn voxelize_writes_grid_files() {
    let t = tempfile::tempdir().unwrap();
    let cloud = meshlabel_core::synth::random_cloud(5000, [0.0; 3], [1.0; 3], 3);
    let ply = t.path().join("c.ply");
    meshlabel_core::io::save_point_cloud(&cloud, &ply, meshlabel_core::io::PlyFormat::BinaryLittleEndian).unwrap();
    let out = run_ok(&["voxelize", &p(&ply), "--out", &p(&t.path().join("g")), "--step", "0.25", "--min-points", "5", "--mesh", &p(&t.path().join("cubes.ply"))]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["points"], 5000);
    assert_eq!(v["occupied"], 64);
    assert!(t.path().join("g/grid.json").exists());
    let occ = fs::read_to_string(t.path().join("g/occupied.csv")).unwrap();
    assert_eq!(occ.lines().count(), 65);
    let cubes = meshlabel_core::io::load_mesh(&t.path().join("cubes.ply"), meshlabel_core::io::MeshFormat::Ply).unwrap();
    assert_eq!(cubes.mesh.face_count(), 64 * 12);
}

#[test]
fn point_cloud_scene_replays_and_exports_points() {
    let t = tempfile::tempdir().unwrap();
    let cloud = meshlabel_core::synth::random_cloud(4000, [0.0; 3], [2.0, 2.0, 0.5], 5);
    let ply = t.path().join("room.ply");
    meshlabel_core::io::save_point_cloud(&cloud, &ply, meshlabel_core::io::PlyFormat::BinaryLittleEndian).unwrap();
    let scene = t.path().join("scene");
    let out = run_ok(&["preprocess", &p(&ply), "--out", &p(&scene), "--voxel-step", "0.25", "--min-points", "2"]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["kind"], "cloud");
    let strokes = t.path().join("s.jsonl");
    fs::write(&strokes, "{\"seq\":1,\"face\":0,\"radius\":0.6,\"label\":3,\"annotator\":\"a\",\"ts\":1}\n").unwrap();
    let out = t.path().join("labels");
    run_ok(&["label-replay", "--scene", &p(&scene), "--strokes", &p(&strokes), "--out", &p(&out)]);
    let m = labels_of(&out);
    assert_eq!(m.kind(), meshlabel_core::ElementKind::Point);
    assert_eq!(m.len(), 4000);
    assert!(m.labeled_count() > 0);
}
