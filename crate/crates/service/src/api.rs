//! Request handlers.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Deserialize;
use serde_json::{json, Value};

use meshlabel_core::io::MeshFormat;
use meshlabel_core::labels::{label_csv_string, save_label_map};
use meshlabel_core::session::{SessionConfig, StrokeRecord};
use meshlabel_core::{PreprocessConfig, Stroke};

use crate::error::{ApiError, ApiResult};
use crate::jobs::{FillRequest, FusionRequest, JobRecord, RenderRequest, ScoreRequest};
use crate::state::{AppState, KindHint, SceneStatus};

type St = State<Arc<AppState>>;

pub async fn taxonomy(State(state): St) -> Json<Value> {
    Json(serde_json::to_value(&state.config.taxonomy).expect("taxonomy serializes"))
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
pub struct UploadQuery {
    kind: KindHint,
    format: Option<String>,
    cell_size: Option<f64>,
    voxel_step: Option<f64>,
    min_points: Option<u32>,
    /// Comma-separated, e.g. `1,0.3,0.1`.
    lod_ratios: Option<String>,
}

impl UploadQuery {
    fn config(&self) -> ApiResult<PreprocessConfig> {
        let mut c = PreprocessConfig::default();
        if let Some(v) = self.cell_size {
            c.cell_size = v;
        }
        if let Some(v) = self.voxel_step {
            c.voxel_step = v;
        }
        if let Some(v) = self.min_points {
            c.min_points = v;
        }
        if let Some(s) = &self.lod_ratios {
            let r: Vec<f64> = s
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| ApiError::bad_request(format!("lod_ratios: {e}")))?;
            c.lod_ratios = r
                .try_into()
                .map_err(|_| ApiError::bad_request("lod_ratios needs three values"))?;
        }
        c.validate()?;
        Ok(c)
    }

    fn format(&self, body: &[u8]) -> ApiResult<MeshFormat> {
        match self.format.as_deref() {
            Some("ply") => Ok(MeshFormat::Ply),
            Some("obj") => Ok(MeshFormat::Obj),
            Some(f) => Err(ApiError::bad_request(format!("unknown format '{f}'"))),
            None if body.starts_with(b"ply") => Ok(MeshFormat::Ply),
            None => Ok(MeshFormat::Obj),
        }
    }
}

pub async fn create_scene(State(state): St, Query(q): Query<UploadQuery>, body: Bytes) -> ApiResult<Response> {
    if body.is_empty() {
        return Err(ApiError::bad_request("empty upload"));
    }
    let config = q.config()?;
    let format = q.format(&body)?;
    let record = state.create_scene(&body, format, q.kind, config)?;
    Ok((StatusCode::ACCEPTED, Json(record)).into_response())
}

pub async fn get_scene(State(state): St, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let record = state.scene_record(&id)?;
    let mut out = serde_json::to_value(&record).expect("record serializes");
    if record.status == SceneStatus::Ready {
        let scene = state.ready_scene(&id).await?;
        let chunks: Vec<Value> = scene
            .chunks
            .chunks
            .iter()
            .map(|c| {
                json!({
                    "id": c.id,
                    "cell": c.cell,
                    "faces": c.face_ids.len(),
                    "lod_faces": c.lods.iter().map(|l| l.mesh.face_count()).collect::<Vec<_>>(),
                })
            })
            .collect();
        out["manifest"] = json!({
            "faces": scene.face_count(),
            "export_kind": scene.export_kind(),
            "export_elements": scene.element_count(scene.export_kind())?,
            "cell_size": scene.chunks.cell_size,
            "lod_ratios": scene.chunks.lod_ratios,
            "chunks": chunks,
        });
    }
    Ok(Json(out))
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
pub struct LodQuery {
    lod: usize,
}

pub async fn get_chunk(
    State(state): St,
    Path((id, chunk)): Path<(String, u32)>,
    Query(q): Query<LodQuery>,
) -> ApiResult<Json<Value>> {
    let scene = state.ready_scene(&id).await?;
    let c = scene
        .chunks
        .chunks
        .iter()
        .find(|c| c.id == chunk)
        .ok_or_else(|| ApiError::not_found("chunk", &chunk.to_string()))?;
    let level = c
        .lods
        .get(q.lod)
        .ok_or_else(|| ApiError::bad_request(format!("lod {} out of range 0..{}", q.lod, c.lods.len())))?;
    let mut out = json!({
        "id": c.id,
        "cell": c.cell,
        "lod": q.lod,
        "face_ids": c.face_ids,
        "lod_faces": level.mesh.face_count(),
        "geometry": format!("/scenes/{id}/chunks/{chunk}/geometry?lod={}", q.lod),
    });
    if q.lod > 0 {
        out["coverage"] = json!(c.global_coverage(q.lod));
    }
    Ok(Json(out))
}

pub async fn get_chunk_geometry(
    State(state): St,
    Path((id, chunk)): Path<(String, u32)>,
    Query(q): Query<LodQuery>,
) -> ApiResult<Response> {
    let scene = state.ready_scene(&id).await?;
    let c = scene
        .chunks
        .chunks
        .iter()
        .find(|c| c.id == chunk)
        .ok_or_else(|| ApiError::not_found("chunk", &chunk.to_string()))?;
    if q.lod >= c.lods.len() {
        return Err(ApiError::bad_request(format!("lod {} out of range 0..{}", q.lod, c.lods.len())));
    }
    let path = state
        .scenes_dir()
        .join(&id)
        .join("chunks")
        .join(chunk.to_string())
        .join(format!("lod{}.ply", q.lod));
    let bytes = tokio::fs::read(&path).await?;
    Ok(([(header::CONTENT_TYPE, "application/octet-stream")], bytes).into_response())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NewSession {
    scene_id: String,
    annotator: String,
    #[serde(default)]
    cross_chunk: bool,
}

pub async fn create_session(State(state): St, Json(req): Json<NewSession>) -> ApiResult<Response> {
    if req.annotator.trim().is_empty() {
        return Err(ApiError::bad_request("annotator must not be empty"));
    }
    let config = SessionConfig {
        cross_chunk: req.cross_chunk,
    };
    let record = state.create_session(&req.scene_id, req.annotator, config).await?;
    Ok((StatusCode::CREATED, Json(record)).into_response())
}

pub async fn get_session(State(state): St, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let live = state.session(&id)?;
    let live = live.lock().await;
    let mut out = serde_json::to_value(&live.record).expect("record serializes");
    out["next_seq"] = json!(live.session.next_seq());
    out["progress"] = json!(live.session.progress());
    Ok(Json(out))
}

#[derive(Debug, Deserialize)]
pub struct StrokeRequest {
    /// Expected sequence number; rejected when it is not the next one.
    #[serde(default)]
    seq: Option<u64>,
    #[serde(flatten)]
    stroke: Stroke,
}

fn now_ms() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

pub async fn post_stroke(State(state): St, Path(id): Path<String>, Json(req): Json<StrokeRequest>) -> ApiResult<Json<Value>> {
    let live = state.session(&id)?;
    let mut live = live.lock_owned().await;
    let expected = live.session.next_seq();
    if let Some(seq) = req.seq {
        if seq != expected {
            return Err(ApiError::conflict("seq_conflict", format!("expected seq {expected}, got {seq}")));
        }
    }
    let mut stroke = req.stroke;
    stroke.annotator = live.record.annotator.clone();
    if stroke.ts == 0 {
        stroke.ts = now_ms();
    }
    // Painting walks the scene, so keep it off the async workers.
    let out = tokio::task::spawn_blocking(move || {
        let affected = live.session.paint(stroke.clone())?;
        let record = StrokeRecord { seq: expected, stroke };
        if let Err(e) = live.append(&record) {
            live.session.undo().expect("stroke just painted");
            return Err(ApiError::internal(format!("cannot persist stroke: {e}")));
        }
        Ok(json!({
            "seq": expected,
            "affected": affected,
            "progress": live.session.progress(),
            "next_seq": live.session.next_seq(),
        }))
    })
    .await??;
    Ok(Json(out))
}

pub async fn get_progress(State(state): St, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let live = state.session(&id)?;
    let live = live.lock().await;
    let s = &live.session;
    Ok(Json(json!({
        "progress": s.progress(),
        "strokes": s.cursor(),
        "unlabeled": s.labels().len() - s.labels().labeled_count(),
        "faces": s.labels().len(),
    })))
}

pub async fn get_unlabeled(State(state): St, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let live = state.session(&id)?;
    let live = live.lock().await;
    Ok(Json(json!({ "faces": live.session.unlabeled_elements() })))
}

pub async fn export_session(State(state): St, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let live = state.session(&id)?;
    let live = live.lock_owned().await;
    let dir = state.sessions_dir().join(&id);
    let taxonomy = state.config.taxonomy.clone();
    let out = tokio::task::spawn_blocking(move || -> ApiResult<Value> {
        let map = live.session.export()?;
        save_label_map(&map, &taxonomy, &dir.join("export"))?;
        Ok(json!({
            "scene_id": map.scene_id(),
            "element_kind": map.kind(),
            "labeled": map.labeled_count(),
            "labels": map.labels(),
            "csv": label_csv_string(&map),
        }))
    })
    .await??;
    Ok(Json(out))
}

fn job_response((job, existed): (JobRecord, bool)) -> Response {
    let status = if existed { StatusCode::OK } else { StatusCode::ACCEPTED };
    (status, Json(job)).into_response()
}

pub async fn job_fusion(State(state): St, Json(req): Json<FusionRequest>) -> ApiResult<Response> {
    Ok(job_response(state.submit_fusion(req).await?))
}

pub async fn job_fill(State(state): St, Json(req): Json<FillRequest>) -> ApiResult<Response> {
    Ok(job_response(state.submit_fill(req).await?))
}

pub async fn job_render(State(state): St, Json(req): Json<RenderRequest>) -> ApiResult<Response> {
    Ok(job_response(state.submit_render(req).await?))
}

pub async fn job_score(State(state): St, Json(req): Json<ScoreRequest>) -> ApiResult<Response> {
    Ok(job_response(state.submit_score(req).await?))
}

pub async fn get_job(State(state): St, Path(id): Path<String>) -> ApiResult<Json<JobRecord>> {
    Ok(Json(state.job(&id)?))
}

pub async fn get_job_file(State(state): St, Path((id, name)): Path<(String, String)>) -> ApiResult<Response> {
    let job = state.job(&id)?;
    if !job.files.contains(&name) {
        return Err(ApiError::not_found("file", &name));
    }
    let bytes = tokio::fs::read(state.jobs_dir().join(&id).join(&name)).await?;
    let mime = match name.rsplit('.').next() {
        Some("png") => "image/png",
        Some("csv") => "text/csv",
        Some("json") => "application/json",
        _ => "application/octet-stream",
    };
    Ok(([(header::CONTENT_TYPE, mime)], bytes).into_response())
}
