use std::collections::BTreeMap;
use std::fs;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use base64::Engine;
use http_body_util::BodyExt;
use nerdd::dataset::{
    dataset_stats, load_annotations, load_manifest, save_annotations, write_synthetic_dataset, RecordingManifest,
    SyntheticOptions,
};
use nerdd::{AnnotationFile, BoxAnnotation, BoxSource};
use nerdd_review::{replay_persisted, router, AppState, FramePair, SessionPaths, VideoSummary};
use serde_json::{json, Value};
use tower::ServiceExt;

struct Fixture {
    _dir: tempfile::TempDir,
    manifests: Vec<RecordingManifest>,
    static_dir: std::path::PathBuf,
}

/// Three synthetic videos. Auto boxes: track 1 on frames 0..=5 and 20,
/// track 2 on frame 3 only.
fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let (path, recs) = write_synthetic_dataset(dir.path(), 3, &SyntheticOptions::default()).unwrap();
    let manifests = load_manifest(&path).unwrap();
    for (m, rec) in manifests.iter().zip(&recs) {
        let mut ann = AnnotationFile::new(&m.video_id, m.fps, m.width, m.height);
        for b in rec.truth.iter().filter(|b| b.frame <= 5 || b.frame == 20) {
            ann.boxes.push(BoxAnnotation { source: BoxSource::Auto, ..b.clone() });
        }
        ann.boxes.push(BoxAnnotation::new(3, 2, 100.0, 10.0, 6.0, 6.0, BoxSource::Auto));
        save_annotations(&m.annotations, &ann).unwrap();
    }
    let static_dir = dir.path().join("ui");
    fs::create_dir_all(&static_dir).unwrap();
    fs::write(static_dir.join("index.html"), "<html>review</html>").unwrap();
    Fixture {
        _dir: dir,
        manifests,
        static_dir,
    }
}

fn app(f: &Fixture) -> Router {
    router(AppState::new(f.manifests.clone()).unwrap(), Some(f.static_dir.clone()))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = serde_json::from_slice(&bytes).unwrap_or(Value::String(String::from_utf8_lossy(&bytes).into()));
    (status, v)
}

fn boxes(v: &Value) -> Vec<BoxAnnotation> {
    serde_json::from_value(v["boxes"].clone()).unwrap()
}

#[tokio::test]
async fn empty_manifest_lists_nothing() {
    let app = router(AppState::new(Vec::new()).unwrap(), None);
    let (s, v) = call(&app, "GET", "/videos", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v, json!([]));
}

#[tokio::test]
async fn summaries_match_dataset_stats_and_track_dirtiness() {
    let f = fixture();
    let app = app(&f);
    let (_, v) = call(&app, "GET", "/videos", None).await;
    let list: Vec<VideoSummary> = serde_json::from_value(v).unwrap();
    assert_eq!(list.len(), 3);
    let anns: BTreeMap<_, _> = f
        .manifests
        .iter()
        .map(|m| (m.video_id.clone(), load_annotations(&m.annotations).unwrap()))
        .collect();
    let stats = dataset_stats(&f.manifests, &anns);
    assert_eq!(list.iter().map(|s| s.frames_with_drone as u64).sum::<u64>(), stats.frames_with_drone);
    assert_eq!(list.iter().map(|s| s.frames as u64).sum::<u64>(), stats.frames_total);
    assert!(list.iter().all(|s| !s.dirty && s.boxes == 8));

    let (s, _) = call(&app, "POST", "/videos/v001/edits", Some(json!({"kind": "delete", "frame": 3, "track_id": 2}))).await;
    assert_eq!(s, StatusCode::OK);
    let (_, v) = call(&app, "GET", "/videos", None).await;
    let list: Vec<VideoSummary> = serde_json::from_value(v).unwrap();
    assert_eq!(list.iter().map(|s| s.dirty).collect::<Vec<_>>(), [false, true, false]);
    assert_eq!(list[1].boxes, 7);
}

#[tokio::test]
async fn frame_pairs_are_registered() {
    let f = fixture();
    let app = app(&f);
    let (s, v) = call(&app, "GET", "/videos/v000/frames/4", None).await;
    assert_eq!(s, StatusCode::OK);
    let pair: FramePair = serde_json::from_value(v).unwrap();
    let decode = |b64: &str| {
        let raw = base64::engine::general_purpose::STANDARD.decode(b64).unwrap();
        image::load_from_memory(&raw).unwrap()
    };
    let rgb = decode(&pair.rgb_png_b64).to_rgb8();
    let ev = decode(&pair.event_png_b64).to_luma8();
    assert_eq!(rgb.dimensions(), (160, 120));
    assert_eq!(ev.dimensions(), (160, 120));
    let b = pair.boxes.iter().find(|b| b.track_id == 1).unwrap();
    // the same box geometry lands on the target in both images
    let (cx, cy) = ((b.x + b.w / 2.0) as u32, (b.y + b.h / 2.0) as u32);
    assert_eq!(rgb.get_pixel(cx, cy).0, [30, 30, 35]);
    assert_ne!(ev.get_pixel(cx, cy).0[0], 128);
    assert_eq!(b.source, BoxSource::Auto);

    let (s, v) = call(&app, "GET", "/videos/v000/frames/12", None).await;
    assert_eq!(s, StatusCode::OK);
    assert!(boxes(&v).is_empty());
    let (s, v) = call(&app, "GET", "/videos/v000/frames/30", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert!(v["error"].as_str().unwrap().contains("out of range"));
    let (s, _) = call(&app, "GET", "/videos/nope/frames/0", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn frame_cache_is_bounded() {
    let f = fixture();
    let state = AppState::with_cache(f.manifests.clone(), 2).unwrap();
    let app = router(state.clone(), None);
    for i in 0..4 {
        let (s, _) = call(&app, "GET", &format!("/videos/v002/frames/{i}"), None).await;
        assert_eq!(s, StatusCode::OK);
    }
    assert_eq!(state.cached_pairs(), 2);
}

#[tokio::test]
async fn edits_apply_persist_and_reject_bad_targets() {
    let f = fixture();
    let app = app(&f);
    let m = &f.manifests[0];
    let paths = SessionPaths::for_annotations(&m.annotations);

    let (s, v) = call(&app, "POST", "/videos/v000/edits", Some(json!({"kind": "delete", "frame": 3, "track_id": 2}))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["frame"], 3);
    assert_eq!(boxes(&v).len(), 1);

    let add = json!({"kind": "add", "frame": 12, "track_id": 5, "x": 40.0, "y": 30.0, "w": 8.0, "h": 8.0});
    let (s, v) = call(&app, "POST", "/videos/v000/edits", Some(add.clone())).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(boxes(&v)[0].source, BoxSource::Manual);

    let log_before = fs::read(&paths.log).unwrap();
    let (s, v) = call(&app, "POST", "/videos/v000/edits", Some(json!({"kind": "delete", "frame": 9, "track_id": 7}))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert!(v["error"].as_str().unwrap().contains("no box"));
    let (s, _) = call(&app, "POST", "/videos/v000/edits", Some(add)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let degenerate = json!({"kind": "add", "frame": 1, "track_id": 9, "x": 1.0, "y": 1.0, "w": 0.0, "h": 3.0});
    let (s, _) = call(&app, "POST", "/videos/v000/edits", Some(degenerate)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let late = json!({"kind": "add", "frame": 30, "track_id": 9, "x": 1.0, "y": 1.0, "w": 2.0, "h": 3.0});
    let (s, _) = call(&app, "POST", "/videos/v000/edits", Some(late)).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, "POST", "/videos/v000/edits", Some(json!({"kind": "rename"}))).await;
    assert!(s.is_client_error());
    assert_eq!(fs::read(&paths.log).unwrap(), log_before);

    let (_, served) = call(&app, "GET", "/videos/v000/annotations", None).await;
    let served: AnnotationFile = serde_json::from_value(served).unwrap();
    assert_eq!(served, load_annotations(&m.annotations).unwrap());
    assert_eq!(served, replay_persisted(m).unwrap());
    assert_eq!(served.boxes.len(), 8);
}

#[tokio::test]
async fn interpolation_fills_gaps_idempotently() {
    let f = fixture();
    let app = app(&f);
    let (s, v) = call(&app, "POST", "/videos/v000/tracks/1/interpolate", None).await;
    assert_eq!(s, StatusCode::OK);
    let dense = boxes(&v);
    assert_eq!(dense.len(), 21);
    assert_eq!(dense.iter().filter(|b| b.source == BoxSource::Interp).count(), 14);
    let (_, again) = call(&app, "POST", "/videos/v000/tracks/1/interpolate", None).await;
    assert_eq!(boxes(&again), dense);

    // keyframes 10 frames apart give 9 generated boxes
    let modify = json!({"kind": "modify", "frame": 10, "track_id": 1, "x": 60.0, "y": 50.0, "w": 10.0, "h": 8.0});
    call(&app, "POST", "/videos/v000/edits", Some(modify)).await;
    for frame in [1, 2, 3, 4, 5] {
        call(&app, "POST", "/videos/v000/edits", Some(json!({"kind": "delete", "frame": frame, "track_id": 1}))).await;
    }
    let (_, v) = call(&app, "POST", "/videos/v000/tracks/1/interpolate", None).await;
    let dense = boxes(&v);
    let between: Vec<_> = dense.iter().filter(|b| b.frame > 0 && b.frame < 10).collect();
    assert_eq!(between.len(), 9);
    assert!(between.iter().all(|b| b.source == BoxSource::Interp));

    let (_, before) = call(&app, "GET", "/videos/v000/annotations", None).await;
    let (s, v) = call(&app, "POST", "/videos/v000/tracks/2/interpolate", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(boxes(&v).len(), 1);
    let (_, after) = call(&app, "GET", "/videos/v000/annotations", None).await;
    assert_eq!(before, after);
    let (s, _) = call(&app, "POST", "/videos/v000/tracks/42/interpolate", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let m = &f.manifests[0];
    assert_eq!(replay_persisted(m).unwrap(), load_annotations(&m.annotations).unwrap());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_edits_to_different_videos_persist() {
    let f = fixture();
    let app = app(&f);
    let mut tasks = Vec::new();
    for vid in ["v000", "v001", "v002"] {
        for k in 0..10u32 {
            let app = app.clone();
            let body = json!({"kind": "add", "frame": 10 + k, "track_id": 9, "x": 5.0 + k as f64, "y": 5.0, "w": 4.0, "h": 4.0});
            tasks.push(tokio::spawn(async move {
                call(&app, "POST", &format!("/videos/{vid}/edits"), Some(body)).await.0
            }));
        }
    }
    for t in tasks {
        assert_eq!(t.await.unwrap(), StatusCode::OK);
    }
    for m in &f.manifests {
        let on_disk = load_annotations(&m.annotations).unwrap();
        assert_eq!(on_disk.boxes.iter().filter(|b| b.track_id == 9).count(), 10);
        assert_eq!(replay_persisted(m).unwrap(), on_disk);
    }
}

#[tokio::test]
async fn restart_replays_log() {
    let f = fixture();
    let app1 = app(&f);
    call(&app1, "POST", "/videos/v002/edits", Some(json!({"kind": "delete", "frame": 0, "track_id": 1}))).await;
    call(&app1, "POST", "/videos/v002/tracks/1/interpolate", None).await;
    let (_, first) = call(&app1, "GET", "/videos/v002/annotations", None).await;
    drop(app1);
    let app2 = app(&f);
    let (_, second) = call(&app2, "GET", "/videos/v002/annotations", None).await;
    assert_eq!(first, second);
    let (_, list) = call(&app2, "GET", "/videos", None).await;
    assert_eq!(list[2]["dirty"], true);
}

#[tokio::test]
async fn static_assets_served() {
    let f = fixture();
    let app = app(&f);
    let (s, v) = call(&app, "GET", "/index.html", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v, Value::String("<html>review</html>".into()));
}
