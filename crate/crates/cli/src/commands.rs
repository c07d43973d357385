use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::json;

use meshlabel_core::camera::parse_trajectory;
use meshlabel_core::fill::{fill_unlabeled, fill_with_uncertainty, FillConfig, Weighting};
use meshlabel_core::fusion::{build_histograms, integrate, uncertainty};
use meshlabel_core::io::{self, MeshFormat, PlyFormat};
use meshlabel_core::labels::{load_label_map_with_taxonomy, save_label_map};
use meshlabel_core::metrics::{mean_iou, text_table, uncertainty_sweep, write_sweep_csv};
use meshlabel_core::preprocess::voxel;
use meshlabel_core::raster::render_batch;
use meshlabel_core::scene::Scene;
use meshlabel_core::session::{parse_log, Session, SessionConfig};
use meshlabel_core::simulate::{simulate_annotators, SimulationConfig};
use meshlabel_core::{AnnotationSet, LabelMap, LabelTaxonomy, PreprocessConfig, UncertaintyMap};

use crate::{Cli, Command};

/// Everything a `--config` file may set. Missing sections take defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub preprocess: PreprocessConfig,
    pub fill: FillConfig,
    pub sweep: SweepConfig,
    pub session: SessionConfig,
    pub taxonomy: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub thresholds: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            thresholds: (1..=10).map(|i| i as f64 / 10.0).collect(),
        }
    }
}

pub fn print_error(kind: &str, message: &str) {
    let line = json!({ "error": { "kind": kind, "message": message } });
    eprintln!("{line}");
}

struct Ctx {
    config: PipelineConfig,
    taxonomy: Option<LabelTaxonomy>,
}

impl Ctx {
    /// Explicit taxonomy if one was given, else `fallback`, else the default.
    fn taxonomy_or(&self, fallback: Option<LabelTaxonomy>) -> LabelTaxonomy {
        self.taxonomy
            .clone()
            .or(fallback)
            .unwrap_or_else(LabelTaxonomy::eigen13)
    }

    fn open_scene(&self, path: &Path) -> Result<Scene> {
        Scene::open(path, &self.config.preprocess).with_context(|| format!("opening scene {}", path.display()))
    }

    fn load_labels(&self, path: &Path) -> Result<(LabelMap, LabelTaxonomy)> {
        load_label_map_with_taxonomy(path, self.taxonomy.as_ref())
            .with_context(|| format!("reading labels {}", path.display()))
    }
}

fn print_json(v: &serde_json::Value) -> Result<()> {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{v}")?;
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!(meshlabel_core::Error::Invalid("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let config: PipelineConfig = match &cli.config {
        None => PipelineConfig::default(),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str(&text)
                .map_err(meshlabel_core::Error::from)
                .with_context(|| format!("parsing config {}", p.display()))?
        }
    };
    let tax_path = cli.taxonomy.clone().or_else(|| config.taxonomy.clone());
    let taxonomy = tax_path.as_deref().map(LabelTaxonomy::load).transpose()?;
    let ctx = Ctx { config, taxonomy };
    match cli.command {
        Command::Preprocess(a) => preprocess(&ctx, a),
        Command::Voxelize(a) => voxelize(&ctx, a),
        Command::LabelReplay(a) => label_replay(&ctx, a),
        Command::Fuse(a) => fuse(&ctx, a),
        Command::Uncert(a) => uncert(&ctx, a),
        Command::Fill(a) => fill(&ctx, a),
        Command::Render(a) => render(&ctx, a),
        Command::Score(a) => score(&ctx, a),
        Command::Sweep(a) => sweep(&ctx, a),
        Command::SimulateAnnotators(a) => simulate(&ctx, a),
    }
}

fn parse_lod_ratios(s: &str) -> Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("'{t}': {e}")))
        .collect::<Result<_, _>>()?;
    v.try_into().map_err(|_| "expected three comma-separated ratios".to_string())
}

fn parse_weighting(s: &str) -> Result<Weighting, String> {
    s.parse().map_err(|e: meshlabel_core::Error| e.to_string())
}

#[derive(Args, Debug)]
pub struct PreprocessArgs {
    /// Mesh (.ply/.obj) or point cloud (.ply without faces).
    input: PathBuf,
    /// Scene directory to write.
    #[arg(long)]
    out: PathBuf,
    /// Scene id (default: input file stem).
    #[arg(long)]
    id: Option<String>,
    /// Chunk grid cell size, meters.
    #[arg(long)]
    cell_size: Option<f64>,
    /// Three LOD face ratios, e.g. 1,0.3,0.1.
    #[arg(long, value_parser = parse_lod_ratios)]
    lod_ratios: Option<[f64; 3]>,
    /// Voxel edge length for point clouds, meters.
    #[arg(long)]
    voxel_step: Option<f64>,
    /// Voxels need more than this many points to be occupied.
    #[arg(long)]
    min_points: Option<u32>,
}

fn preprocess(ctx: &Ctx, a: PreprocessArgs) -> Result<()> {
    let mut cfg = ctx.config.preprocess;
    if let Some(v) = a.cell_size {
        cfg.cell_size = v;
    }
    if let Some(v) = a.lod_ratios {
        cfg.lod_ratios = v;
    }
    if let Some(v) = a.voxel_step {
        cfg.voxel_step = v;
    }
    if let Some(v) = a.min_points {
        cfg.min_points = v;
    }
    cfg.validate()?;
    let id = match a.id {
        Some(id) => id,
        None => a
            .input
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scene".into()),
    };
    let format = MeshFormat::from_path(&a.input)?;
    let bytes = fs::read(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let loaded = io::parse_mesh(&bytes, format)?;
    let dropped = loaded.degenerate_dropped;
    let scene = if loaded.mesh.is_empty() && format == MeshFormat::Ply {
        Scene::from_cloud(id, io::parse_point_cloud(&bytes)?, cfg)?
    } else {
        Scene::from_mesh(id, loaded.mesh, cfg)?
    };
    scene.save(&a.out)?;
    let lod_faces: Vec<usize> = (0..3)
        .map(|l| scene.chunks.chunks.iter().map(|c| c.lods[l].mesh.face_count()).sum())
        .collect();
    print_json(&json!({
        "scene_id": scene.id,
        "kind": scene.kind(),
        "faces": scene.face_count(),
        "chunks": scene.chunks.chunks.len(),
        "lod_faces": lod_faces,
        "degenerate_dropped": dropped,
        "voxels": scene.voxels.as_ref().map(|v| v.grid.occupied_count()),
    }))
}

#[derive(Args, Debug)]
pub struct VoxelizeArgs {
    /// Point cloud PLY.
    input: PathBuf,
    /// Directory for grid.json and occupied.csv.
    #[arg(long)]
    out: PathBuf,
    /// Voxel edge length, meters.
    #[arg(long)]
    step: Option<f64>,
    /// Voxels need more than this many points to be occupied.
    #[arg(long)]
    min_points: Option<u32>,
    /// Also write the occupied-voxel cube mesh here (binary PLY).
    #[arg(long)]
    mesh: Option<PathBuf>,
}

fn voxelize(ctx: &Ctx, a: VoxelizeArgs) -> Result<()> {
    let step = a.step.unwrap_or(ctx.config.preprocess.voxel_step);
    let min_points = a.min_points.unwrap_or(ctx.config.preprocess.min_points);
    let cloud = io::load_point_cloud(&a.input)?;
    let grid = voxel::voxelize(&cloud, step, min_points)?;
    voxel::save_grid(&grid, &a.out)?;
    if let Some(p) = &a.mesh {
        let (mesh, _) = voxel::voxel_cube_mesh(&grid);
        io::save_mesh(&mesh, p, PlyFormat::BinaryLittleEndian)?;
    }
    print_json(&json!({
        "points": cloud.len(),
        "dims": grid.dims,
        "occupied": grid.occupied_count(),
    }))
}

#[derive(Args, Debug)]
pub struct ReplayArgs {
    /// Scene directory (or a raw mesh/cloud file).
    #[arg(long)]
    scene: PathBuf,
    /// Stroke log, one JSON record per line.
    #[arg(long)]
    strokes: PathBuf,
    /// Output label map (`<name>`, `<name>.labels.csv` or `.json`).
    #[arg(long)]
    out: PathBuf,
    /// Labels to start from.
    #[arg(long)]
    initial: Option<PathBuf>,
    /// Let strokes reach faces in the 26 neighboring chunks.
    #[arg(long)]
    cross_chunk: bool,
}

fn label_replay(ctx: &Ctx, a: ReplayArgs) -> Result<()> {
    let scene = Arc::new(ctx.open_scene(&a.scene)?);
    let (initial, tax) = match &a.initial {
        Some(p) => {
            let (m, t) = ctx.load_labels(p)?;
            (Some(m), t)
        }
        None => (None, ctx.taxonomy_or(None)),
    };
    let f = fs::File::open(&a.strokes).with_context(|| format!("reading {}", a.strokes.display()))?;
    let records = parse_log(BufReader::new(f)).with_context(|| format!("parsing {}", a.strokes.display()))?;
    let config = SessionConfig {
        cross_chunk: a.cross_chunk || ctx.config.session.cross_chunk,
    };
    let session = Session::replay(scene, tax.clone(), initial.as_ref(), config, &records)?;
    let out = session.export()?;
    save_label_map(&out, &tax, &a.out)?;
    print_json(&json!({
        "strokes": records.len(),
        "elements": out.len(),
        "element_kind": out.kind(),
        "progress": session.progress(),
    }))
}

#[derive(Args, Debug)]
pub struct FuseArgs {
    /// Annotator label maps over the same scene.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Output fused label map.
    #[arg(long)]
    out: PathBuf,
    /// Also write the uncertainty map here.
    #[arg(long)]
    uncert_out: Option<PathBuf>,
}

fn annotation_set(ctx: &Ctx, inputs: &[PathBuf]) -> Result<(AnnotationSet, LabelTaxonomy)> {
    let mut members = Vec::with_capacity(inputs.len());
    let mut first_tax = None;
    for p in inputs {
        let (m, t) = ctx.load_labels(p)?;
        first_tax.get_or_insert(t);
        let name = p
            .file_name()
            .map(|s| s.to_string_lossy().trim_end_matches(".labels.csv").trim_end_matches(".labels.json").to_string())
            .unwrap_or_default();
        members.push((name, m));
    }
    let tax = ctx.taxonomy_or(first_tax);
    Ok((AnnotationSet::new(members)?, tax))
}

fn fuse(ctx: &Ctx, a: FuseArgs) -> Result<()> {
    let (set, tax) = annotation_set(ctx, &a.inputs)?;
    let h = build_histograms(&set);
    let fused = integrate(&h);
    save_label_map(&fused, &tax, &a.out)?;
    if let Some(p) = &a.uncert_out {
        uncertainty(&h, tax.class_count()).save(p)?;
    }
    print_json(&json!({
        "annotators": set.annotator_count(),
        "elements": fused.len(),
        "labeled": fused.labeled_count(),
    }))
}

#[derive(Args, Debug)]
pub struct UncertArgs {
    /// Annotator label maps over the same scene.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Output uncertainty map (`<name>` or `<name>.uncert.csv`).
    #[arg(long)]
    out: PathBuf,
}

fn uncert(ctx: &Ctx, a: UncertArgs) -> Result<()> {
    let (set, tax) = annotation_set(ctx, &a.inputs)?;
    let u = uncertainty(&build_histograms(&set), tax.class_count());
    u.save(&a.out)?;
    let n = u.entries().iter().flatten().count();
    let mean = u.entries().iter().flatten().fold(0.0, |s, e| s + e.u) / n.max(1) as f64;
    print_json(&json!({
        "annotators": set.annotator_count(),
        "elements": u.len(),
        "with_votes": n,
        "mean_u": mean,
    }))
}

#[derive(Args, Debug)]
pub struct FillArgs {
    /// Scene the labels belong to.
    #[arg(long)]
    scene: PathBuf,
    /// Partial label map.
    #[arg(long)]
    labels: PathBuf,
    /// Output label map.
    #[arg(long)]
    out: PathBuf,
    /// Neighbors per vote.
    #[arg(long)]
    k: Option<usize>,
    /// Also relabel elements with u above this threshold (needs --uncert).
    #[arg(long)]
    th_u: Option<f64>,
    /// Neighbor vote weight: confidence (1 - u) or paper-literal (u).
    #[arg(long, value_parser = parse_weighting)]
    weighting: Option<Weighting>,
    /// Uncertainty map matching the labels.
    #[arg(long)]
    uncert: Option<PathBuf>,
}

fn fill(ctx: &Ctx, a: FillArgs) -> Result<()> {
    let mut cfg = ctx.config.fill;
    if let Some(k) = a.k {
        cfg.k = k;
    }
    if a.th_u.is_some() {
        cfg.th_u = a.th_u;
    }
    if let Some(w) = a.weighting {
        cfg.weighting = w;
    }
    cfg.validate()?;
    let scene = ctx.open_scene(&a.scene)?;
    let (labels, tax) = ctx.load_labels(&a.labels)?;
    scene.check_map(&labels)?;
    let positions = scene.positions(labels.kind())?;
    let out = match (cfg.th_u, &a.uncert) {
        (None, _) => fill_unlabeled(&labels, &positions, &cfg)?,
        (Some(_), Some(p)) => {
            let u = UncertaintyMap::load(p).with_context(|| format!("reading uncertainty {}", p.display()))?;
            fill_with_uncertainty(&labels, &u, &positions, &cfg)?
        }
        (Some(_), None) => bail!(meshlabel_core::Error::Invalid(
            "th_u given without an uncertainty map (--uncert)".into()
        )),
    };
    save_label_map(&out, &tax, &a.out)?;
    let changed = out.labels().iter().zip(labels.labels()).filter(|(x, y)| x != y).count();
    print_json(&json!({
        "elements": out.len(),
        "changed": changed,
        "k": cfg.k,
        "th_u": cfg.th_u,
        "weighting": cfg.weighting.as_str(),
    }))
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    /// Scene the labels belong to.
    #[arg(long)]
    scene: PathBuf,
    /// Label map to render.
    #[arg(long)]
    labels: PathBuf,
    /// Optional uncertainty map; without it the uncertainty images are zero.
    #[arg(long)]
    uncert: Option<PathBuf>,
    /// Camera trajectory, one JSON frame per line.
    #[arg(long)]
    trajectory: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Also write palette-colored previews.
    #[arg(long)]
    color: bool,
}

fn render(ctx: &Ctx, a: RenderArgs) -> Result<()> {
    let scene = ctx.open_scene(&a.scene)?;
    let (labels, tax) = ctx.load_labels(&a.labels)?;
    let face_labels = scene.face_labels(&labels)?;
    let face_u = match &a.uncert {
        Some(p) => {
            let u = UncertaintyMap::load(p).with_context(|| format!("reading uncertainty {}", p.display()))?;
            u.check_labels(&labels)?;
            Some(scene.face_uncertainty(&u)?)
        }
        None => None,
    };
    let text = fs::read_to_string(&a.trajectory).with_context(|| format!("reading {}", a.trajectory.display()))?;
    let (frames, skipped) = parse_trajectory(&text);
    let files = render_batch(
        &scene.mesh,
        face_labels.labels(),
        face_u.as_deref(),
        &frames,
        &a.out,
        a.color.then_some(&tax),
    )?;
    print_json(&json!({
        "frames": frames.len(),
        "files": files.len(),
        "skipped": skipped.iter().map(|s| json!({"line": s.line, "reason": s.reason})).collect::<Vec<_>>(),
    }))
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    /// Scene the labels belong to (supplies element areas).
    #[arg(long)]
    scene: PathBuf,
    /// Ground-truth label map.
    #[arg(long)]
    gt: PathBuf,
    /// Predicted label map.
    #[arg(long)]
    pred: PathBuf,
    /// Output format on stdout.
    #[arg(long, value_enum, default_value = "text")]
    format: ScoreFormat,
    /// Also write the JSON report here.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
pub enum ScoreFormat {
    Text,
    Json,
}

fn score(ctx: &Ctx, a: ScoreArgs) -> Result<()> {
    let scene = ctx.open_scene(&a.scene)?;
    let (gt, tax) = ctx.load_labels(&a.gt)?;
    let (pred, _) = load_label_map_with_taxonomy(&a.pred, Some(&tax))
        .with_context(|| format!("reading labels {}", a.pred.display()))?;
    gt.check_compatible(&pred)?;
    let areas = scene.weights(gt.kind())?;
    let report = mean_iou(&gt, &pred, &areas, &tax)?;
    let body = serde_json::to_string_pretty(&report)? + "\n";
    if let Some(p) = &a.json {
        fs::write(p, &body).with_context(|| format!("writing {}", p.display()))?;
    }
    let mut out = std::io::stdout().lock();
    match a.format {
        ScoreFormat::Text => write!(out, "{}", text_table(&[("pred", &report)]))?,
        ScoreFormat::Json => write!(out, "{body}")?,
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// Scene the labels belong to (supplies element areas).
    #[arg(long)]
    scene: PathBuf,
    /// Ground-truth label map.
    #[arg(long)]
    gt: PathBuf,
    /// Predicted label map.
    #[arg(long)]
    pred: PathBuf,
    /// Uncertainty map of the prediction.
    #[arg(long)]
    uncert: PathBuf,
    /// Comma-separated thresholds (default 0.1,0.2,...,1.0).
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    th: Option<Vec<f64>>,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn sweep(ctx: &Ctx, a: SweepArgs) -> Result<()> {
    let scene = ctx.open_scene(&a.scene)?;
    let (gt, tax) = ctx.load_labels(&a.gt)?;
    let (pred, _) = load_label_map_with_taxonomy(&a.pred, Some(&tax))
        .with_context(|| format!("reading labels {}", a.pred.display()))?;
    gt.check_compatible(&pred)?;
    let u = UncertaintyMap::load(&a.uncert).with_context(|| format!("reading uncertainty {}", a.uncert.display()))?;
    let areas = scene.weights(gt.kind())?;
    let ths = a.th.unwrap_or_else(|| ctx.config.sweep.thresholds.clone());
    let rows = uncertainty_sweep(&gt, &pred, &u, &areas, &tax, &ths)?;
    match &a.out {
        Some(p) => {
            let f = fs::File::create(p).with_context(|| format!("writing {}", p.display()))?;
            write_sweep_csv(&rows, f)?;
        }
        None => write_sweep_csv(&rows, std::io::stdout().lock())?,
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Ground-truth label map.
    #[arg(long)]
    gt: PathBuf,
    /// Number of annotators.
    #[arg(long, default_value_t = 5)]
    n: usize,
    /// Per-annotator accuracy.
    #[arg(long, default_value_t = 0.8)]
    p: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Probability that an annotator labels an element at all.
    #[arg(long, default_value_t = 1.0)]
    coverage: f64,
    /// Output prefix; annotator i is written to `<prefix><i>.labels.csv`.
    #[arg(long)]
    out_prefix: PathBuf,
}

fn simulate(ctx: &Ctx, a: SimulateArgs) -> Result<()> {
    let (gt, tax) = ctx.load_labels(&a.gt)?;
    let cfg = SimulationConfig {
        annotators: a.n,
        accuracy: a.p,
        coverage: a.coverage,
        seed: a.seed,
    };
    let maps = simulate_annotators(&gt, tax.class_count(), &cfg)?;
    let mut paths = Vec::with_capacity(maps.len());
    for (i, m) in maps.iter().enumerate() {
        let mut p = a.out_prefix.clone().into_os_string();
        p.push(i.to_string());
        let p = PathBuf::from(p);
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        save_label_map(m, &tax, &p)?;
        paths.push(p.display().to_string());
    }
    let acc: Vec<f64> = maps
        .iter()
        .map(|m| {
            let (mut hit, mut n) = (0usize, 0usize);
            for (x, g) in m.labels().iter().zip(gt.labels()) {
                if *g != 0 {
                    n += 1;
                    hit += usize::from(x == g);
                }
            }
            hit as f64 / n.max(1) as f64
        })
        .collect();
    print_json(&json!({ "annotators": paths, "accuracy": acc }))
}
