//! Content-addressed pipeline jobs: fusion, fill, render and score.
//!
//! A job id is a hash of the job kind, its configuration and the exact
//! input contents, so resubmitting identical work returns the stored job.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use meshlabel_core::camera::parse_trajectory;
use meshlabel_core::fill::{fill_unlabeled, fill_with_uncertainty, FillConfig};
use meshlabel_core::fusion::{build_histograms, integrate, uncertainty};
use meshlabel_core::labels::{label_csv_string, load_label_map, save_label_map};
use meshlabel_core::metrics::mean_iou;
use meshlabel_core::raster::render_batch;
use meshlabel_core::scene::Scene;
use meshlabel_core::{AnnotationSet, LabelId, LabelMap, UncertaintyMap};

use crate::error::{ApiError, ApiResult};
use crate::state::{now, write_json, AppState, SceneRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobKind {
    Fusion,
    Fill,
    Render,
    Score,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Pending,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JobRecord {
    pub id: String,
    pub kind: JobKind,
    pub scene_id: String,
    pub status: JobStatus,
    /// Downloadable outputs, relative to the job directory.
    #[serde(default)]
    pub files: Vec<String>,
    /// Base name of the label map output, for use as a later label source.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<String>,
    /// Base name of the uncertainty output.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uncertainty: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub created: u64,
}

/// Where a job reads a label map from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    /// Current export of a paint session.
    Session(String),
    /// Label output of a finished job.
    Job(String),
    /// Dense labels over the scene's export elements.
    Inline(Vec<LabelId>),
}

#[derive(Debug, Clone, Deserialize)]
pub struct FusionRequest {
    pub scene_id: String,
    pub session_ids: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct FillRequest {
    pub scene_id: String,
    pub labels: LabelSource,
    /// Fusion job whose uncertainty map accompanies the labels.
    #[serde(default)]
    pub uncertainty: Option<String>,
    #[serde(default)]
    pub config: FillConfig,
}

#[derive(Debug, Clone, Deserialize)]
pub struct RenderRequest {
    pub scene_id: String,
    pub labels: LabelSource,
    #[serde(default)]
    pub uncertainty: Option<String>,
    /// Trajectory text, one JSON frame per line.
    pub trajectory: String,
    #[serde(default)]
    pub color: bool,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ScoreRequest {
    pub scene_id: String,
    pub gt: LabelSource,
    pub pred: LabelSource,
}

/// Fully resolved inputs, ready to run off the request path.
enum Work {
    Fusion(AnnotationSet),
    Fill {
        labels: LabelMap,
        uncertainty: Option<UncertaintyMap>,
        config: FillConfig,
    },
    Render {
        labels: LabelMap,
        uncertainty: Option<UncertaintyMap>,
        trajectory: String,
        color: bool,
    },
    Score {
        gt: LabelMap,
        pred: LabelMap,
    },
}

struct Hasher(Sha256);

impl Hasher {
    fn new(kind: JobKind, scene: &SceneRecord) -> Self {
        let mut h = Self(Sha256::new());
        h.field(serde_json::to_string(&kind).unwrap().as_bytes());
        h.field(scene.id.as_bytes());
        h.field(scene.source_hash.as_bytes());
        h
    }

    /// Length-prefixed so adjacent fields cannot run together.
    fn field(&mut self, bytes: &[u8]) {
        self.0.update((bytes.len() as u64).to_le_bytes());
        self.0.update(bytes);
    }

    fn labels(&mut self, m: &LabelMap) {
        self.field(m.kind().to_string().as_bytes());
        self.field(label_csv_string(m).as_bytes());
    }

    fn uncertainty(&mut self, u: Option<&UncertaintyMap>) {
        let mut buf = Vec::new();
        if let Some(u) = u {
            u.write_csv(&mut buf).expect("in-memory write");
            buf.extend_from_slice(serde_json::to_string(&u.sidecar()).unwrap().as_bytes());
        }
        self.field(&buf);
    }

    fn finish(self) -> String {
        hex::encode(&self.0.finalize()[..16])
    }
}

impl AppState {
    async fn resolve_labels(&self, scene: &Scene, source: &LabelSource) -> ApiResult<LabelMap> {
        let map = match source {
            LabelSource::Session(id) => {
                let live = self.session(id)?;
                let live = live.lock().await;
                live.session.export()?
            }
            LabelSource::Job(id) => {
                let job = self.finished_job(id)?;
                let name = job
                    .labels
                    .ok_or_else(|| ApiError::bad_request(format!("job '{id}' produced no labels")))?;
                load_label_map(&self.jobs_dir().join(id).join(name), Some(&self.config.taxonomy))?
            }
            LabelSource::Inline(labels) => {
                let kind = scene.export_kind();
                let n = scene.element_count(kind)?;
                if labels.len() != n {
                    return Err(meshlabel_core::Error::SceneMismatch(format!(
                        "{} inline labels for {n} {kind}s",
                        labels.len()
                    ))
                    .into());
                }
                let m = LabelMap::from_labels(&scene.id, kind, labels.clone());
                m.validate(&self.config.taxonomy)?;
                m
            }
        };
        if map.scene_id() != scene.id {
            return Err(meshlabel_core::Error::SceneMismatch(format!(
                "labels belong to scene '{}', not '{}'",
                map.scene_id(),
                scene.id
            ))
            .into());
        }
        scene.check_map(&map)?;
        Ok(map)
    }

    fn resolve_uncertainty(&self, job: Option<&String>) -> ApiResult<Option<UncertaintyMap>> {
        let Some(id) = job else { return Ok(None) };
        let rec = self.finished_job(id)?;
        let name = rec
            .uncertainty
            .ok_or_else(|| ApiError::bad_request(format!("job '{id}' produced no uncertainty map")))?;
        Ok(Some(UncertaintyMap::load(&self.jobs_dir().join(id).join(name))?))
    }

    fn finished_job(&self, id: &str) -> ApiResult<JobRecord> {
        let job = self.job(id)?;
        if job.status != JobStatus::Done {
            return Err(ApiError::conflict("job_not_done", format!("job '{id}' is not finished")));
        }
        Ok(job)
    }

    pub fn job(&self, id: &str) -> ApiResult<JobRecord> {
        self.jobs
            .lock()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found("job", id))
    }

    pub async fn submit_fusion(self: &Arc<Self>, req: FusionRequest) -> ApiResult<(JobRecord, bool)> {
        let record = self.scene_record(&req.scene_id)?;
        let scene = self.ready_scene(&req.scene_id).await?;
        if req.session_ids.is_empty() {
            return Err(ApiError::bad_request("fusion needs at least one session"));
        }
        let mut h = Hasher::new(JobKind::Fusion, &record);
        let mut members = Vec::with_capacity(req.session_ids.len());
        for id in &req.session_ids {
            let annotator = self.session(id)?.lock().await.record.annotator.clone();
            let m = self.resolve_labels(&scene, &LabelSource::Session(id.clone())).await?;
            h.field(annotator.as_bytes());
            h.labels(&m);
            members.push((annotator, m));
        }
        let set = AnnotationSet::new(members)?;
        self.submit(JobKind::Fusion, scene, h.finish(), Work::Fusion(set)).await
    }

    pub async fn submit_fill(self: &Arc<Self>, req: FillRequest) -> ApiResult<(JobRecord, bool)> {
        let record = self.scene_record(&req.scene_id)?;
        let scene = self.ready_scene(&req.scene_id).await?;
        req.config.validate()?;
        if req.config.th_u.is_some() && req.uncertainty.is_none() {
            return Err(ApiError::new(
                axum::http::StatusCode::UNPROCESSABLE_ENTITY,
                "missing_uncertainty",
                "th_u given without an uncertainty source",
            ));
        }
        let labels = self.resolve_labels(&scene, &req.labels).await?;
        let uncertainty = self.resolve_uncertainty(req.uncertainty.as_ref())?;
        if let Some(u) = &uncertainty {
            u.check_labels(&labels)?;
        }
        let mut h = Hasher::new(JobKind::Fill, &record);
        h.field(serde_json::to_string(&req.config).unwrap().as_bytes());
        h.labels(&labels);
        h.uncertainty(uncertainty.as_ref());
        let work = Work::Fill {
            labels,
            uncertainty,
            config: req.config,
        };
        self.submit(JobKind::Fill, scene, h.finish(), work).await
    }

    pub async fn submit_render(self: &Arc<Self>, req: RenderRequest) -> ApiResult<(JobRecord, bool)> {
        let record = self.scene_record(&req.scene_id)?;
        let scene = self.ready_scene(&req.scene_id).await?;
        let labels = self.resolve_labels(&scene, &req.labels).await?;
        let uncertainty = self.resolve_uncertainty(req.uncertainty.as_ref())?;
        if let Some(u) = &uncertainty {
            u.check_labels(&labels)?;
        }
        let mut h = Hasher::new(JobKind::Render, &record);
        h.field(&[u8::from(req.color)]);
        h.field(req.trajectory.as_bytes());
        h.labels(&labels);
        h.uncertainty(uncertainty.as_ref());
        let work = Work::Render {
            labels,
            uncertainty,
            trajectory: req.trajectory,
            color: req.color,
        };
        self.submit(JobKind::Render, scene, h.finish(), work).await
    }

    pub async fn submit_score(self: &Arc<Self>, req: ScoreRequest) -> ApiResult<(JobRecord, bool)> {
        let record = self.scene_record(&req.scene_id)?;
        let scene = self.ready_scene(&req.scene_id).await?;
        let gt = self.resolve_labels(&scene, &req.gt).await?;
        let pred = self.resolve_labels(&scene, &req.pred).await?;
        gt.check_compatible(&pred)?;
        let mut h = Hasher::new(JobKind::Score, &record);
        h.labels(&gt);
        h.labels(&pred);
        self.submit(JobKind::Score, scene, h.finish(), Work::Score { gt, pred }).await
    }

    /// Returns the existing job for `id` unless it failed; otherwise starts
    /// it. The flag is true when an existing job was returned.
    async fn submit(self: &Arc<Self>, kind: JobKind, scene: Arc<Scene>, id: String, work: Work) -> ApiResult<(JobRecord, bool)> {
        let record = {
            let mut jobs = self.jobs.lock().unwrap();
            if let Some(j) = jobs.get(&id) {
                if j.status != JobStatus::Failed {
                    return Ok((j.clone(), true));
                }
            }
            let r = JobRecord {
                id: id.clone(),
                kind,
                scene_id: scene.id.clone(),
                status: JobStatus::Pending,
                files: Vec::new(),
                labels: None,
                uncertainty: None,
                result: None,
                error: None,
                created: now(),
            };
            jobs.insert(id.clone(), r.clone());
            r
        };
        let dir = self.jobs_dir().join(&id);
        let _ = fs::remove_dir_all(&dir);
        fs::create_dir_all(&dir)?;
        write_json(&dir.join("job.json"), &record)?;

        let state = self.clone();
        tokio::spawn(async move {
            let permit = state.workers.clone().acquire_owned().await;
            state.set_status(&id, |j| j.status = JobStatus::Running);
            let taxonomy = state.config.taxonomy.clone();
            let out_dir = dir.clone();
            let outcome = tokio::task::spawn_blocking(move || {
                let _permit = permit;
                run(&scene, &taxonomy, work, &out_dir)
            })
            .await
            .map_err(|e| e.to_string())
            .and_then(|r| r.map_err(|e| e.to_string()));
            state.set_status(&id, |j| match outcome {
                Ok(o) => {
                    j.status = JobStatus::Done;
                    j.files = o.files;
                    j.labels = o.labels;
                    j.uncertainty = o.uncertainty;
                    j.result = Some(o.result);
                }
                Err(e) => {
                    j.status = JobStatus::Failed;
                    j.error = Some(e);
                }
            });
        });
        Ok((record, false))
    }

    fn set_status(&self, id: &str, f: impl FnOnce(&mut JobRecord)) {
        let mut jobs = self.jobs.lock().unwrap();
        let Some(j) = jobs.get_mut(id) else { return };
        f(j);
        if let Err(e) = write_json(&self.jobs_dir().join(id).join("job.json"), j) {
            tracing::error!(job = %id, "cannot write job record: {e}");
        }
    }
}

struct Output {
    files: Vec<String>,
    labels: Option<String>,
    uncertainty: Option<String>,
    result: Value,
}

fn file_names(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .into_iter()
        .flatten()
        .flatten()
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n != "job.json" && !n.ends_with(".tmp"))
        .collect();
    names.sort();
    names
}

fn run(scene: &Scene, taxonomy: &meshlabel_core::LabelTaxonomy, work: Work, dir: &Path) -> meshlabel_core::Result<Output> {
    let mut labels = None;
    let mut uncertainty_name = None;
    let result = match work {
        Work::Fusion(set) => {
            let h = build_histograms(&set);
            let fused = integrate(&h);
            save_label_map(&fused, taxonomy, &dir.join("fused"))?;
            uncertainty(&h, taxonomy.class_count()).save(&dir.join("fused"))?;
            labels = Some("fused".to_string());
            uncertainty_name = Some("fused".to_string());
            json!({ "annotators": set.annotator_count(), "labeled": fused.labeled_count(), "elements": fused.len() })
        }
        Work::Fill { labels: input, uncertainty: u, config } => {
            let positions = scene.positions(input.kind())?;
            let out = match (&u, config.th_u) {
                (Some(u), Some(_)) => fill_with_uncertainty(&input, u, &positions, &config)?,
                _ => fill_unlabeled(&input, &positions, &config)?,
            };
            save_label_map(&out, taxonomy, &dir.join("filled"))?;
            labels = Some("filled".to_string());
            let changed = out.labels().iter().zip(input.labels()).filter(|(a, b)| a != b).count();
            json!({ "changed": changed, "elements": out.len(), "config": config })
        }
        Work::Render { labels: input, uncertainty: u, trajectory, color } => {
            let face_labels = scene.face_labels(&input)?;
            let face_u = u.as_ref().map(|u| scene.face_uncertainty(u)).transpose()?;
            let (frames, skipped) = parse_trajectory(&trajectory);
            render_batch(&scene.mesh, face_labels.labels(), face_u.as_deref(), &frames, dir, color.then_some(taxonomy))?;
            json!({ "frames": frames.len(), "skipped": skipped })
        }
        Work::Score { gt, pred } => {
            let areas = scene.weights(gt.kind())?;
            let report = mean_iou(&gt, &pred, &areas, taxonomy)?;
            let p = dir.join("metrics.json");
            fs::write(&p, serde_json::to_string_pretty(&report)? + "\n")
                .map_err(|e| meshlabel_core::Error::Io { path: p, source: e })?;
            serde_json::to_value(&report)?
        }
    };
    Ok(Output {
        files: file_names(dir),
        labels,
        uncertainty: uncertainty_name,
        result,
    })
}
