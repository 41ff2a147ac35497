use std::collections::BTreeMap;
use std::io::Cursor;
use std::num::NonZeroUsize;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use image::ImageFormat;
use lru::LruCache;
use nerdd::annotator::{AnnotationError, Edit};
use nerdd::dataset::{DatasetError, RecordingManifest};
use nerdd::events::EventStream;
use nerdd::{AnnotationFile, BoxAnnotation};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::OnceCell;
use tower_http::services::ServeDir;

use crate::session::{LogEntry, Session, SessionError};

pub const DEFAULT_CACHE_PAIRS: usize = 512;

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("unknown video `{0}`")]
    UnknownVideo(String),
    #[error("frame {frame} out of range (video has {frames} frames)")]
    FrameOutOfRange { frame: u32, frames: u32 },
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("{0}")]
    Internal(String),
}

impl ApiError {
    fn status(&self) -> StatusCode {
        match self {
            ApiError::UnknownVideo(_) | ApiError::FrameOutOfRange { .. } => StatusCode::NOT_FOUND,
            ApiError::Session(e) => match e {
                SessionError::FrameOutOfRange { .. }
                | SessionError::UnknownTrack(_)
                | SessionError::Edit(AnnotationError::UnknownTarget { .. }) => StatusCode::NOT_FOUND,
                SessionError::Edit(_) => StatusCode::UNPROCESSABLE_ENTITY,
                _ => StatusCode::INTERNAL_SERVER_ERROR,
            },
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status(), Json(ErrorBody { error: self.to_string() })).into_response()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoSummary {
    pub video_id: String,
    pub frames: u32,
    pub boxes: usize,
    pub frames_with_drone: usize,
    pub dirty: bool,
    pub fps: f64,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramePair {
    pub video_id: String,
    pub frame: u32,
    pub width: u32,
    pub height: u32,
    pub rgb_png_b64: String,
    pub event_png_b64: String,
    pub boxes: Vec<BoxAnnotation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditResponse {
    pub frame: u32,
    pub boxes: Vec<BoxAnnotation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpolateResponse {
    pub track_id: u32,
    /// Every box of the track after interpolation, by frame.
    pub boxes: Vec<BoxAnnotation>,
}

struct Video {
    manifest: RecordingManifest,
    session: Mutex<Session>,
    events: OnceCell<Arc<EventStream>>,
}

struct Images {
    rgb_png_b64: String,
    event_png_b64: String,
}

struct Inner {
    order: Vec<String>,
    videos: BTreeMap<String, Arc<Video>>,
    cache: Mutex<LruCache<(String, u32), Arc<Images>>>,
}

/// Shared state: one serialized session per video and a bounded cache of
/// rendered frame pairs.
#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    pub fn new(manifests: Vec<RecordingManifest>) -> Result<Self, SessionError> {
        Self::with_cache(manifests, DEFAULT_CACHE_PAIRS)
    }

    pub fn with_cache(manifests: Vec<RecordingManifest>, cache_pairs: usize) -> Result<Self, SessionError> {
        let mut order = Vec::with_capacity(manifests.len());
        let mut videos = BTreeMap::new();
        for m in manifests {
            let session = Session::open(&m)?;
            order.push(m.video_id.clone());
            videos.insert(
                m.video_id.clone(),
                Arc::new(Video {
                    manifest: m,
                    session: Mutex::new(session),
                    events: OnceCell::new(),
                }),
            );
        }
        let cap = NonZeroUsize::new(cache_pairs.max(1)).expect("non-zero");
        Ok(Self(Arc::new(Inner {
            order,
            videos,
            cache: Mutex::new(LruCache::new(cap)),
        })))
    }

    fn video(&self, id: &str) -> Result<Arc<Video>, ApiError> {
        self.0.videos.get(id).cloned().ok_or_else(|| ApiError::UnknownVideo(id.to_string()))
    }

    pub fn cached_pairs(&self) -> usize {
        self.0.cache.lock().expect("cache lock").len()
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(format!("worker failed: {e}")))?
}

async fn list_videos(State(st): State<AppState>) -> Result<Json<Vec<VideoSummary>>, ApiError> {
    let mut out = Vec::with_capacity(st.0.order.len());
    for id in &st.0.order {
        let v = st.video(id)?;
        let s = v.session.lock().expect("session lock");
        let frames: std::collections::BTreeSet<u32> = s.boxes().iter().map(|b| b.frame).collect();
        out.push(VideoSummary {
            video_id: id.clone(),
            frames: v.manifest.frames,
            boxes: s.boxes().len(),
            frames_with_drone: frames.len(),
            dirty: s.is_dirty(),
            fps: v.manifest.fps,
            width: v.manifest.width,
            height: v.manifest.height,
        });
    }
    Ok(Json(out))
}

fn png_b64(img: image::DynamicImage) -> Result<String, ApiError> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)
        .map_err(|e| ApiError::Internal(format!("png encoding: {e}")))?;
    Ok(B64.encode(buf.into_inner()))
}

async fn get_frame(State(st): State<AppState>, Path((id, frame)): Path<(String, u32)>) -> Result<Json<FramePair>, ApiError> {
    let v = st.video(&id)?;
    let m = &v.manifest;
    if frame >= m.frames {
        return Err(ApiError::FrameOutOfRange { frame, frames: m.frames });
    }
    let key = (id.clone(), frame);
    let cached = st.0.cache.lock().expect("cache lock").get(&key).cloned();
    let images = match cached {
        Some(c) => c,
        None => {
            let vv = v.clone();
            let stream = v
                .events
                .get_or_try_init(|| async move { blocking(move || Ok(Arc::new(vv.manifest.load_events_synced()?))).await })
                .await?
                .clone();
            let vv = v.clone();
            let images = blocking(move || {
                let rgb = vv.manifest.registered_rgb(frame)?;
                let ev = vv.manifest.registered_event_render(&stream, frame)?;
                Ok(Arc::new(Images {
                    rgb_png_b64: png_b64(rgb.into())?,
                    event_png_b64: png_b64(ev.into())?,
                }))
            })
            .await?;
            st.0.cache.lock().expect("cache lock").put(key, images.clone());
            images
        }
    };
    let boxes = v.session.lock().expect("session lock").boxes_at(frame);
    Ok(Json(FramePair {
        video_id: id,
        frame,
        width: m.width,
        height: m.height,
        rgb_png_b64: images.rgb_png_b64.clone(),
        event_png_b64: images.event_png_b64.clone(),
        boxes,
    }))
}

async fn post_edit(
    State(st): State<AppState>,
    Path(id): Path<String>,
    Json(edit): Json<Edit>,
) -> Result<Json<EditResponse>, ApiError> {
    let v = st.video(&id)?;
    let frame = edit.target().0;
    let boxes = blocking(move || Ok(v.session.lock().expect("session lock").apply(LogEntry::Edit(edit))?)).await?;
    Ok(Json(EditResponse { frame, boxes }))
}

async fn post_interpolate(
    State(st): State<AppState>,
    Path((id, track_id)): Path<(String, u32)>,
) -> Result<Json<InterpolateResponse>, ApiError> {
    let v = st.video(&id)?;
    let boxes = blocking(move || {
        Ok(v.session
            .lock()
            .expect("session lock")
            .apply(LogEntry::interpolate(track_id))?)
    })
    .await?;
    Ok(Json(InterpolateResponse { track_id, boxes }))
}

async fn get_annotations(State(st): State<AppState>, Path(id): Path<String>) -> Result<Json<AnnotationFile>, ApiError> {
    let v = st.video(&id)?;
    let ann = v.session.lock().expect("session lock").annotation_file();
    Ok(Json(ann))
}

/// Routes of the review API; `static_dir`, if given, is served for every
/// other path.
pub fn router(state: AppState, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/videos", get(list_videos))
        .route("/videos/{id}/frames/{frame}", get(get_frame))
        .route("/videos/{id}/edits", post(post_edit))
        .route("/videos/{id}/tracks/{track_id}/interpolate", post(post_interpolate))
        .route("/videos/{id}/annotations", get(get_annotations))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}
