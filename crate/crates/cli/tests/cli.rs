use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use nerdd::dataset::{load_annotations, save_annotations, write_synthetic_dataset, SyntheticOptions};
use nerdd::evaluation::Detection;
use nerdd::{AnnotationFile, BoxSource};
use serde_json::Value;

fn nerdd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nerdd")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = nerdd(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Three videos with ground truth in `<dir>/truth`.
fn dataset(dir: &Path, opts: &SyntheticOptions) -> PathBuf {
    let (path, recs) = write_synthetic_dataset(dir, 3, opts).unwrap();
    for r in &recs {
        let m = &r.manifest;
        let mut ann = AnnotationFile::new(&m.video_id, m.fps, m.width, m.height);
        ann.boxes = r.truth.clone();
        save_annotations(dir.join("truth").join(format!("{}.json", m.video_id)), &ann).unwrap();
    }
    path
}

#[test]
fn every_subcommand_is_listed() {
    let help = ok(&["--help"]);
    for cmd in [
        "accumulate", "stats", "sync", "annotate", "interpolate", "grad-check", "train-toy", "detect", "eval", "split", "serve",
    ] {
        assert!(help.contains(cmd), "missing {cmd}");
    }
}

#[test]
fn accumulate_writes_frames_and_counts() {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path(), &SyntheticOptions::default());
    let events = dir.path().join("v000/events.nev");
    let out = dir.path().join("frames");
    ok(&["accumulate", "--events", s(&events), "--fps", "30", "--out", s(&out)]);
    let counts: Value = serde_json::from_str(&std::fs::read_to_string(out.join("counts.json")).unwrap()).unwrap();
    assert_eq!(counts["interval_us"], 33_333);
    let frames = counts["frames"].as_array().unwrap();
    assert_eq!(frames.len(), 30);
    let binned: u64 = frames.iter().map(|f| f["events"].as_u64().unwrap()).sum();
    let stats: Value = serde_json::from_str(&ok(&["stats", "--events", s(&events), "--json"])).unwrap();
    assert_eq!(binned, stats["events"].as_u64().unwrap());
    assert!(out.join("000029.png").exists());
}

#[test]
fn dataset_stats_and_split() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(dir.path(), &SyntheticOptions { visible: (5, 25), ..SyntheticOptions::default() });
    let truth = dir.path().join("truth");
    let v: Value = serde_json::from_str(&ok(&["stats", "--manifest", s(&manifest), "--ann", s(&truth), "--json"])).unwrap();
    assert_eq!(v["frames_total"], 90);
    assert_eq!(v["frames_with_drone"], 60);
    assert_eq!(v["frames_without_drone"], 30);
    assert_eq!(v["resolution"], serde_json::json!([160, 120]));
    let table = ok(&["stats", "--manifest", s(&manifest), "--ann", s(&truth)]);
    assert!(table.contains("Frames with drone"));

    let split: Value = serde_json::from_str(&ok(&["split", "--manifest", s(&manifest), "--seed", "0", "--ratio", "0.8"])).unwrap();
    assert_eq!(split["train"].as_array().unwrap().len(), 2);
    assert_eq!(split["test"].as_array().unwrap().len(), 1);
    assert_eq!(ok(&["split", "--manifest", s(&manifest)]), ok(&["split", "--manifest", s(&manifest)]));
    assert!(!nerdd(&["stats", "--manifest", s(&manifest), "--ann", s(dir.path())]).status.success());
}

#[test]
fn sync_estimates_and_stores_offset() {
    let dir = tempfile::tempdir().unwrap();
    let opts = SyntheticOptions {
        t_offset_us: 7 * 33_333,
        visible: (8, 30),
        ..SyntheticOptions::default()
    };
    let manifest = dataset(dir.path(), &opts);
    // forget the offset, then recover it
    let text = std::fs::read_to_string(&manifest).unwrap().replace("233331", "0");
    std::fs::write(&manifest, text).unwrap();
    assert!(ok(&["sync", "--manifest", s(&manifest)]).contains("t_offset_us 0"));
    let out = ok(&["sync", "--manifest", s(&manifest), "--estimate-offset", "--max-lag", "10"]);
    assert!(out.contains("lag 7 frames"), "{out}");
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(&manifest).unwrap()).unwrap();
    for e in doc.as_array().unwrap() {
        assert_eq!(e["registration"]["t_offset_us"], 233_331);
        assert!(e["events"].as_str().unwrap().starts_with('v'), "paths stay relative");
    }
}

#[test]
fn annotate_then_interpolate() {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path(), &SyntheticOptions::default());
    let ann = dir.path().join("auto.json");
    let out = ok(&["annotate", "--events", s(&dir.path().join("v000/events.nev")), "--fps", "30", "--out", s(&ann)]);
    assert!(out.contains("1 tracks"), "{out}");
    let mut a = load_annotations(&ann).unwrap();
    assert_eq!(a.video_id, "events");
    assert_eq!(a.boxes.len(), 30);
    assert!(a.boxes.iter().all(|b| b.source == BoxSource::Auto && b.track_id == 1));
    a.boxes.retain(|b| b.frame % 10 == 0);
    save_annotations(&ann, &a).unwrap();
    ok(&["interpolate", "--ann", s(&ann)]);
    let dense = load_annotations(&ann).unwrap();
    assert_eq!(dense.boxes.len(), 21);
    assert_eq!(dense.boxes.iter().filter(|b| b.source == BoxSource::Interp).count(), 18);
    assert!(!nerdd(&["interpolate", "--ann", s(&ann), "--track", "9"]).status.success());
}

#[test]
fn grad_check_reports_each_op() {
    let out = ok(&["grad-check", "--op", "pool_fuse"]);
    assert!(out.contains("pool_fuse") && out.contains("ok"));
    assert!(!nerdd(&["grad-check", "--op", "nonsense"]).status.success());
}

#[test]
fn train_detect_eval() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(dir.path(), &SyntheticOptions::default());
    let weights = dir.path().join("w.bin");
    let out = ok(&[
        "train-toy", "--strategy", "pool", "--cutoff", "encoder", "--queries", "3", "--steps", "5", "--d", "8", "--patch", "8",
        "--save", s(&weights),
    ]);
    assert!(out.contains("step     0") && out.contains("AP50"));
    let dets_path = dir.path().join("dets.json");
    ok(&[
        "detect", "--manifest", s(&manifest), "--weights", s(&weights), "--strategy", "pool", "--downsample", "2", "--out",
        s(&dets_path),
    ]);
    let dets: Vec<Detection> = serde_json::from_str(&std::fs::read_to_string(&dets_path).unwrap()).unwrap();
    assert_eq!(dets.len(), 3 * 30 * 3);
    assert!(dets.iter().all(|d| d.x + d.w <= 160.0 + 1e-9 && d.y + d.h <= 120.0 + 1e-9));
    assert!(!nerdd(&["detect", "--manifest", s(&manifest), "--weights", s(&weights), "--strategy", "symmetric"])
        .status
        .success());

    let split = dir.path().join("split.json");
    ok(&["split", "--manifest", s(&manifest), "--out", s(&split)]);
    let truth = dir.path().join("truth");
    let report = ok(&["eval", "--dets", s(&dets_path), "--ann", s(&truth), "--split", "test", "--split-file", s(&split)]);
    assert!(report.contains("AP50:95"));
    // perfect detections from the ground truth itself
    let mut perfect = Vec::new();
    for id in ["v000", "v001", "v002"] {
        for b in load_annotations(truth.join(format!("{id}.json"))).unwrap().boxes {
            perfect.push(serde_json::json!({"video_id": id, "frame": b.frame, "score": 1.0, "x": b.x, "y": b.y, "w": b.w, "h": b.h}));
        }
    }
    std::fs::write(&dets_path, serde_json::to_string(&perfect).unwrap()).unwrap();
    let report = ok(&["eval", "--dets", s(&dets_path), "--ann", s(&truth)]);
    assert!(report.contains("AP50 1.0000  AP75 1.0000  AP50:95 1.0000"), "{report}");
    assert!(!nerdd(&["eval", "--dets", s(&dets_path), "--ann", s(&truth), "--split", "test"]).status.success());
}

fn http_get(port: u16, path: &str) -> Option<String> {
    let mut c = TcpStream::connect(("127.0.0.1", port)).ok()?;
    write!(c, "GET {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n").ok()?;
    let mut out = String::new();
    c.read_to_string(&mut out).ok()?;
    Some(out)
}

#[test]
fn serve_answers_http() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(dir.path(), &SyntheticOptions::default());
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut child = Command::new(env!("CARGO_BIN_EXE_nerdd"))
        .args(["serve", "--manifest", s(&manifest), "--port", &port.to_string()])
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let start = Instant::now();
    let resp = loop {
        if let Some(r) = http_get(port, "/videos") {
            break r;
        }
        assert!(start.elapsed() < Duration::from_secs(20), "server did not start");
        std::thread::sleep(Duration::from_millis(50));
    };
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(resp.starts_with("HTTP/1.1 200"), "{resp}");
    assert!(resp.contains("\"video_id\":\"v002\""));
}
