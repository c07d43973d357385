//! REST service over the labeling pipeline.
//!
//! Scenes are uploaded and preprocessed in the background, paint sessions
//! persist every stroke to an append-only log before acknowledging it, and
//! fusion, fill, render and score run as content-addressed jobs.

pub mod api;
mod error;
pub mod jobs;
pub mod state;

use std::sync::Arc;

use axum::extract::DefaultBodyLimit;
use axum::routing::{get, post};
use axum::Router;

pub use error::{ApiError, ApiResult};
pub use state::{AppState, ServiceConfig};

/// Default cap on scene upload size.
pub const DEFAULT_MAX_UPLOAD: usize = 1 << 30;

pub fn router(state: Arc<AppState>, max_upload: usize) -> Router {
    Router::new()
        .route("/taxonomy", get(api::taxonomy))
        .route("/scenes", post(api::create_scene))
        .route("/scenes/{id}", get(api::get_scene))
        .route("/scenes/{id}/chunks/{chunk}", get(api::get_chunk))
        .route("/scenes/{id}/chunks/{chunk}/geometry", get(api::get_chunk_geometry))
        .route("/sessions", post(api::create_session))
        .route("/sessions/{id}", get(api::get_session))
        .route("/sessions/{id}/strokes", post(api::post_stroke))
        .route("/sessions/{id}/progress", get(api::get_progress))
        .route("/sessions/{id}/unlabeled", get(api::get_unlabeled))
        .route("/sessions/{id}/export", post(api::export_session))
        .route("/jobs/fusion", post(api::job_fusion))
        .route("/jobs/fill", post(api::job_fill))
        .route("/jobs/render", post(api::job_render))
        .route("/jobs/score", post(api::job_score))
        .route("/jobs/{id}", get(api::get_job))
        .route("/jobs/{id}/files/{name}", get(api::get_job_file))
        .layer(DefaultBodyLimit::max(max_upload))
        .with_state(state)
}
