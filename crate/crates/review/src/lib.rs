//! HTTP service for the manual amendment round of annotation.
//!
//! Each video gets a [`Session`]: the automatic boxes as a baseline, an
//! append-only edit log next to the annotation file, and the annotations
//! derived by replaying the log. Mutations of one video are serialized;
//! different videos proceed independently.
//!
//! | method | path | body / result |
//! |---|---|---|
//! | GET | `/videos` | `[VideoSummary]` |
//! | GET | `/videos/{id}/frames/{i}` | [`FramePair`] with base64 PNGs |
//! | POST | `/videos/{id}/edits` | edit record, returns boxes of the frame |
//! | POST | `/videos/{id}/tracks/{tid}/interpolate` | dense boxes of the track |
//! | GET | `/videos/{id}/annotations` | annotation file |
//!
//! Unknown videos, frames, tracks and edit targets answer 404; malformed or
//! conflicting edits 422.

mod api;
pub mod session;

use std::net::SocketAddr;
use std::path::PathBuf;

pub use api::{
    router, ApiError, AppState, EditResponse, ErrorBody, FramePair, InterpolateResponse, VideoSummary,
    DEFAULT_CACHE_PAIRS,
};
pub use session::{apply_interpolation, read_log, replay, replay_persisted, LogEntry, Session, SessionError, SessionPaths};

/// Binds `addr` and serves until the process ends.
pub async fn serve(state: AppState, addr: SocketAddr, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state, static_dir)).await
}
