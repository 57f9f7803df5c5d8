//! HTTP front end for the audio CNN debugger.

use std::sync::Arc;

use axum::extract::DefaultBodyLimit;
use axum::routing::{get, post};
use axum::Router;
use tokio::net::TcpListener;
use tower_http::services::ServeDir;

pub mod error;
mod routes;
pub mod state;

pub use error::{ApiError, ErrorCode};
pub use routes::{MAX_CLIP_SECONDS, MAX_EDIT_SECONDS, MAX_UPLOAD_BYTES, PREVIEW_POINTS};
pub use state::{input_id, AppState, InputCache, ModelSlot};

/// Multipart framing overhead allowed on top of the per-file limit.
const BODY_SLACK: usize = 64 * 1024;

pub fn router(state: Arc<AppState>) -> Router {
    let api = Router::new()
        .route("/api/predict", post(routes::predict))
        .route("/api/activations", post(routes::activations_handler))
        .route("/api/feature-audio", post(routes::feature_audio))
        .route("/api/edit", post(routes::edit))
        .route("/api/compare", post(routes::compare))
        .route("/api/model/summary", get(routes::model_summary))
        .route("/api/layers/{index}/weights/histogram", get(routes::histogram))
        .route("/api/{*rest}", axum::routing::any(routes::not_found))
        .layer(DefaultBodyLimit::max(2 * MAX_UPLOAD_BYTES + BODY_SLACK));
    let app = match &state.static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir).append_index_html_on_directories(true)),
        None => api.fallback(routes::not_found),
    };
    app.with_state(state)
}

/// Serves on an already bound listener until the process is stopped.
pub async fn serve(state: Arc<AppState>, listener: TcpListener) -> std::io::Result<()> {
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state)).await
}
