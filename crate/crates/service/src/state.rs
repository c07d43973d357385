use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

use meshlabel_core::io::{self, MeshFormat};
use meshlabel_core::scene::{Scene, SceneKind};
use meshlabel_core::session::{log_line, parse_log, Session, SessionConfig, StrokeRecord};
use meshlabel_core::{LabelTaxonomy, PreprocessConfig};

use crate::error::{ApiError, ApiResult};
use crate::jobs::{JobRecord, JobStatus};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    /// Concurrent preprocessing and job workers.
    pub workers: usize,
    pub taxonomy: LabelTaxonomy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SceneStatus {
    Pending,
    Ready,
    Failed,
}

/// What the uploader says the file holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KindHint {
    /// Mesh if the file has faces, else point cloud.
    #[default]
    Auto,
    Mesh,
    Cloud,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneRecord {
    pub id: String,
    pub status: SceneStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    /// SHA-256 of the uploaded bytes.
    pub source_hash: String,
    pub source_file: String,
    pub requested_kind: KindHint,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<SceneKind>,
    pub config: PreprocessConfig,
    pub created: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionRecord {
    pub id: String,
    pub scene_id: String,
    pub annotator: String,
    pub config: SessionConfig,
    pub created: u64,
    pub updated: u64,
}

pub struct LiveSession {
    pub record: SessionRecord,
    pub session: Session,
    log_path: PathBuf,
    record_path: PathBuf,
}

impl LiveSession {
    /// Appends a painted stroke to the log file. The caller reverts the
    /// in-memory stroke if this fails.
    pub fn append(&mut self, record: &StrokeRecord) -> std::io::Result<()> {
        let mut f = fs::OpenOptions::new().append(true).create(true).open(&self.log_path)?;
        f.write_all(log_line(record).as_bytes())?;
        f.sync_data()?;
        self.record.updated = now();
        write_json(&self.record_path, &self.record)
    }
}

pub struct AppState {
    pub config: ServiceConfig,
    scenes: RwLock<HashMap<String, SceneRecord>>,
    loaded: RwLock<HashMap<String, Arc<Scene>>>,
    sessions: RwLock<HashMap<String, Arc<tokio::sync::Mutex<LiveSession>>>>,
    pub(crate) jobs: Mutex<HashMap<String, JobRecord>>,
    pub workers: Arc<Semaphore>,
}

pub fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, serde_json::to_vec_pretty(value)?)?;
    fs::rename(&tmp, path)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

fn subdirs(dir: &Path) -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .into_iter()
        .flatten()
        .flatten()
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    out.sort();
    out
}

/// Reads a stroke log, dropping a trailing line cut short by a crash.
fn read_log(path: &Path) -> anyhow::Result<Vec<StrokeRecord>> {
    let mut text = fs::read_to_string(path).unwrap_or_default();
    if !text.is_empty() && !text.ends_with('\n') {
        let keep = text.rfind('\n').map_or(0, |i| i + 1);
        tracing::warn!(path = %path.display(), "dropping incomplete trailing stroke line");
        text.truncate(keep);
        fs::write(path, &text)?;
    }
    Ok(parse_log(text.as_bytes())?)
}

impl AppState {
    pub fn scenes_dir(&self) -> PathBuf {
        self.config.data_dir.join("scenes")
    }

    pub fn sessions_dir(&self) -> PathBuf {
        self.config.data_dir.join("sessions")
    }

    pub fn jobs_dir(&self) -> PathBuf {
        self.config.data_dir.join("jobs")
    }

    /// Opens the data directory and rebuilds every session by replaying its
    /// stroke log. Scenes left pending by a previous run are preprocessed
    /// again; interrupted jobs are marked failed.
    pub async fn open(config: ServiceConfig) -> anyhow::Result<Arc<Self>> {
        let workers = config.workers.max(1);
        let state = Arc::new(Self {
            config,
            scenes: RwLock::default(),
            loaded: RwLock::default(),
            sessions: RwLock::default(),
            jobs: Mutex::default(),
            workers: Arc::new(Semaphore::new(workers)),
        });
        for d in [state.scenes_dir(), state.sessions_dir(), state.jobs_dir()] {
            fs::create_dir_all(&d)?;
        }

        let mut pending = Vec::new();
        for dir in subdirs(&state.scenes_dir()) {
            match read_json::<SceneRecord>(&dir.join("record.json")) {
                Ok(r) => {
                    if r.status == SceneStatus::Pending {
                        pending.push(r.id.clone());
                    }
                    state.scenes.write().unwrap().insert(r.id.clone(), r);
                }
                Err(e) => tracing::warn!(dir = %dir.display(), "skipping scene: {e}"),
            }
        }
        for id in pending {
            state.clone().spawn_preprocess(id);
        }

        for dir in subdirs(&state.sessions_dir()) {
            if let Err(e) = state.restore_session(&dir).await {
                tracing::warn!(dir = %dir.display(), "skipping session: {}", e.message);
            }
        }

        for dir in subdirs(&state.jobs_dir()) {
            match read_json::<JobRecord>(&dir.join("job.json")) {
                Ok(mut j) => {
                    if matches!(j.status, JobStatus::Pending | JobStatus::Running) {
                        j.status = JobStatus::Failed;
                        j.error = Some("interrupted by a restart".into());
                        write_json(&dir.join("job.json"), &j)?;
                    }
                    state.jobs.lock().unwrap().insert(j.id.clone(), j);
                }
                Err(e) => tracing::warn!(dir = %dir.display(), "skipping job: {e}"),
            }
        }
        tracing::info!(
            scenes = state.scenes.read().unwrap().len(),
            sessions = state.sessions.read().unwrap().len(),
            "data directory loaded"
        );
        Ok(state)
    }

    async fn restore_session(&self, dir: &Path) -> ApiResult<()> {
        let record: SessionRecord =
            read_json(&dir.join("session.json")).map_err(|e| ApiError::internal(e.to_string()))?;
        let scene = self.ready_scene(&record.scene_id).await?;
        let log_path = dir.join("strokes.jsonl");
        let taxonomy = self.config.taxonomy.clone();
        let config = record.config;
        let session = tokio::task::spawn_blocking(move || -> anyhow::Result<Session> {
            let strokes = read_log(&log_path)?;
            Ok(Session::replay(scene, taxonomy, None, config, &strokes)?)
        })
        .await?
        .map_err(|e| ApiError::internal(e.to_string()))?;
        self.insert_session(record, session, dir);
        Ok(())
    }

    fn insert_session(&self, record: SessionRecord, session: Session, dir: &Path) {
        let live = LiveSession {
            record: record.clone(),
            session,
            log_path: dir.join("strokes.jsonl"),
            record_path: dir.join("session.json"),
        };
        self.sessions
            .write()
            .unwrap()
            .insert(record.id, Arc::new(tokio::sync::Mutex::new(live)));
    }

    pub fn scene_record(&self, id: &str) -> ApiResult<SceneRecord> {
        self.scenes
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found("scene", id))
    }

    /// The preprocessed scene, loaded from disk on first use.
    pub async fn ready_scene(&self, id: &str) -> ApiResult<Arc<Scene>> {
        let record = self.scene_record(id)?;
        if record.status != SceneStatus::Ready {
            return Err(ApiError::conflict(
                "scene_not_ready",
                format!("scene '{id}' is {:?}", record.status).to_lowercase(),
            ));
        }
        if let Some(s) = self.loaded.read().unwrap().get(id) {
            return Ok(s.clone());
        }
        let dir = self.scenes_dir().join(id);
        let scene = Arc::new(tokio::task::spawn_blocking(move || Scene::load(&dir)).await??);
        self.loaded.write().unwrap().insert(id.to_string(), scene.clone());
        Ok(scene)
    }

    /// Stores an upload and starts preprocessing it.
    pub fn create_scene(
        self: &Arc<Self>,
        bytes: &[u8],
        format: MeshFormat,
        kind: KindHint,
        config: PreprocessConfig,
    ) -> ApiResult<SceneRecord> {
        use sha2::Digest;
        let id = uuid::Uuid::new_v4().simple().to_string();
        let dir = self.scenes_dir().join(&id);
        fs::create_dir_all(&dir)?;
        let source_file = match format {
            MeshFormat::Ply => "upload.ply",
            MeshFormat::Obj => "upload.obj",
        };
        fs::write(dir.join(source_file), bytes)?;
        let record = SceneRecord {
            id: id.clone(),
            status: SceneStatus::Pending,
            message: None,
            source_hash: hex::encode(sha2::Sha256::digest(bytes)),
            source_file: source_file.into(),
            requested_kind: kind,
            kind: None,
            config,
            created: now(),
        };
        write_json(&dir.join("record.json"), &record)?;
        self.scenes.write().unwrap().insert(id.clone(), record.clone());
        self.clone().spawn_preprocess(id);
        Ok(record)
    }

    fn spawn_preprocess(self: Arc<Self>, id: String) {
        tokio::spawn(async move {
            let Ok(record) = self.scene_record(&id) else { return };
            let permit = self.workers.clone().acquire_owned().await;
            let dir = self.scenes_dir().join(&id);
            let r = record.clone();
            let outcome = tokio::task::spawn_blocking(move || {
                let _permit = permit;
                preprocess(&dir, &r)
            })
            .await
            .map_err(|e| e.to_string())
            .and_then(|r| r.map_err(|e| e.to_string()));
            let mut record = record;
            match outcome {
                Ok(scene) => {
                    record.status = SceneStatus::Ready;
                    record.kind = Some(scene.kind());
                    self.loaded.write().unwrap().insert(id.clone(), Arc::new(scene));
                    tracing::info!(scene = %id, "scene ready");
                }
                Err(e) => {
                    record.status = SceneStatus::Failed;
                    record.message = Some(e);
                    tracing::warn!(scene = %id, "preprocessing failed: {:?}", record.message);
                }
            }
            if let Err(e) = write_json(&self.scenes_dir().join(&id).join("record.json"), &record) {
                tracing::error!(scene = %id, "cannot write scene record: {e}");
            }
            self.scenes.write().unwrap().insert(id, record);
        });
    }

    pub async fn create_session(&self, scene_id: &str, annotator: String, config: SessionConfig) -> ApiResult<SessionRecord> {
        let scene = self.ready_scene(scene_id).await?;
        let session = Session::new(scene, self.config.taxonomy.clone(), None, config)?;
        let t = now();
        let record = SessionRecord {
            id: uuid::Uuid::new_v4().simple().to_string(),
            scene_id: scene_id.to_string(),
            annotator,
            config,
            created: t,
            updated: t,
        };
        let dir = self.sessions_dir().join(&record.id);
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("strokes.jsonl"), b"")?;
        write_json(&dir.join("session.json"), &record)?;
        self.insert_session(record.clone(), session, &dir);
        Ok(record)
    }

    pub fn session(&self, id: &str) -> ApiResult<Arc<tokio::sync::Mutex<LiveSession>>> {
        self.sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found("session", id))
    }
}

/// Parses and preprocesses an upload, writes the scene files, and reloads
/// them so the manifest on disk is known to validate.
fn preprocess(dir: &Path, record: &SceneRecord) -> meshlabel_core::Result<Scene> {
    let path = dir.join(&record.source_file);
    let bytes = fs::read(&path).map_err(|e| meshlabel_core::Error::Io { path: path.clone(), source: e })?;
    let format = MeshFormat::from_path(&path)?;
    let cloud = |b: &[u8]| -> meshlabel_core::Result<Scene> {
        Scene::from_cloud(&record.id, io::parse_point_cloud(b)?, record.config)
    };
    let scene = match record.requested_kind {
        KindHint::Cloud => cloud(&bytes)?,
        KindHint::Mesh | KindHint::Auto => {
            let loaded = io::parse_mesh(&bytes, format)?;
            if !loaded.mesh.is_empty() {
                Scene::from_mesh(&record.id, loaded.mesh, record.config)?
            } else if record.requested_kind == KindHint::Auto && format == MeshFormat::Ply {
                cloud(&bytes)?
            } else {
                return Err(meshlabel_core::Error::Invalid("mesh has no faces".into()));
            }
        }
    };
    scene.save(dir)?;
    Scene::load(dir)
}
