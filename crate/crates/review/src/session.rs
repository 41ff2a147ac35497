use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use nerdd::annotator::{interpolate_track, merge_manual, AnnotationError, Edit, Track};
use nerdd::dataset::{load_annotations, save_annotations, DatasetError, RecordingManifest};
use nerdd::{AnnotationFile, BoxAnnotation, BoxSource};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("frame {frame} out of range (video has {frames} frames)")]
    FrameOutOfRange { frame: u32, frames: u32 },
    #[error("no keyframes for track {0}")]
    UnknownTrack(u32),
    #[error(transparent)]
    Edit(#[from] AnnotationError),
    #[error("edit log {path}: {message}")]
    Log { path: PathBuf, message: String },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum InterpolateKind {
    Interpolate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpolateEntry {
    kind: InterpolateKind,
    pub track_id: u32,
}

/// One line of the per-video edit log: a box edit, or a re-run of
/// interpolation for one track.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LogEntry {
    Edit(Edit),
    Interpolate(InterpolateEntry),
}

impl LogEntry {
    pub fn interpolate(track_id: u32) -> Self {
        LogEntry::Interpolate(InterpolateEntry {
            kind: InterpolateKind::Interpolate,
            track_id,
        })
    }
}

/// Replaces the `interp` boxes of `track_id` with a fresh interpolation
/// over its manual and auto keyframes. Returns the track's dense boxes.
pub fn apply_interpolation(boxes: &mut Vec<BoxAnnotation>, track_id: u32) -> Result<Vec<BoxAnnotation>, SessionError> {
    let keys: Vec<BoxAnnotation> = boxes
        .iter()
        .filter(|b| b.track_id == track_id && b.source != BoxSource::Interp)
        .cloned()
        .collect();
    if keys.is_empty() {
        return Err(SessionError::UnknownTrack(track_id));
    }
    let mut keys = keys;
    keys.sort_by_key(|b| b.frame);
    let track = Track::new(track_id, keys)?;
    let dense = interpolate_track(&track, None)?;
    boxes.retain(|b| !(b.track_id == track_id && b.source == BoxSource::Interp));
    boxes.extend(dense.iter().filter(|b| b.source == BoxSource::Interp).cloned());
    boxes.sort_by(|a, b| (a.frame, a.track_id).cmp(&(b.frame, b.track_id)));
    Ok(dense)
}

fn check_frame(frame: u32, frames: u32) -> Result<(), SessionError> {
    if frame >= frames {
        return Err(SessionError::FrameOutOfRange { frame, frames });
    }
    Ok(())
}

fn apply(boxes: &mut Vec<BoxAnnotation>, entry: &LogEntry, frames: u32) -> Result<Vec<BoxAnnotation>, SessionError> {
    match entry {
        LogEntry::Edit(e) => {
            let (frame, _) = e.target();
            check_frame(frame, frames)?;
            *boxes = merge_manual(boxes, std::slice::from_ref(e))?;
            Ok(boxes.iter().filter(|b| b.frame == frame).cloned().collect())
        }
        LogEntry::Interpolate(i) => apply_interpolation(boxes, i.track_id),
    }
}

/// Applies `log` to `auto` in order.
pub fn replay(auto: &[BoxAnnotation], log: &[LogEntry], frames: u32) -> Result<Vec<BoxAnnotation>, SessionError> {
    let mut boxes = auto.to_vec();
    boxes.sort_by(|a, b| (a.frame, a.track_id).cmp(&(b.frame, b.track_id)));
    for entry in log {
        apply(&mut boxes, entry, frames)?;
    }
    Ok(boxes)
}

/// Files kept next to a video's annotation file `<stem>.json`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionPaths {
    pub annotations: PathBuf,
    /// Boxes before any manual edit.
    pub auto: PathBuf,
    /// JSON lines of [`LogEntry`].
    pub log: PathBuf,
}

impl SessionPaths {
    pub fn for_annotations(path: &Path) -> Self {
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let dir = path.parent().unwrap_or(Path::new(""));
        Self {
            annotations: path.to_path_buf(),
            auto: dir.join(format!("{stem}.auto.json")),
            log: dir.join(format!("{stem}.edits.jsonl")),
        }
    }
}

pub fn read_log(path: &Path) -> Result<Vec<LogEntry>, SessionError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| SessionError::Log {
            path: path.to_path_buf(),
            message: format!("line {}: {e}", i + 1),
        })?);
    }
    Ok(out)
}

/// Annotation state of one video under review.
#[derive(Debug)]
pub struct Session {
    manifest: RecordingManifest,
    paths: SessionPaths,
    auto: Vec<BoxAnnotation>,
    log: Vec<LogEntry>,
    boxes: Vec<BoxAnnotation>,
}

impl Session {
    /// The first open snapshots the current annotation file (or nothing) as
    /// the auto baseline; later opens replay the log on top of it.
    pub fn open(manifest: &RecordingManifest) -> Result<Self, SessionError> {
        let paths = SessionPaths::for_annotations(&manifest.annotations);
        let log = read_log(&paths.log)?;
        let auto = if paths.auto.exists() {
            load_annotations(&paths.auto)?.boxes
        } else {
            if !log.is_empty() {
                return Err(SessionError::Log {
                    path: paths.log.clone(),
                    message: format!("no baseline {}", paths.auto.display()),
                });
            }
            let base = manifest.load_annotations_or_empty()?;
            if let Some(dir) = paths.auto.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            save_annotations(&paths.auto, &base)?;
            load_annotations(&paths.auto)?.boxes
        };
        let boxes = replay(&auto, &log, manifest.frames)?;
        Ok(Self {
            manifest: manifest.clone(),
            paths,
            auto,
            log,
            boxes,
        })
    }

    pub fn manifest(&self) -> &RecordingManifest {
        &self.manifest
    }

    pub fn paths(&self) -> &SessionPaths {
        &self.paths
    }

    pub fn boxes(&self) -> &[BoxAnnotation] {
        &self.boxes
    }

    pub fn auto(&self) -> &[BoxAnnotation] {
        &self.auto
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    /// Annotations differ from the auto baseline by at least one logged entry.
    pub fn is_dirty(&self) -> bool {
        !self.log.is_empty()
    }

    pub fn boxes_at(&self, frame: u32) -> Vec<BoxAnnotation> {
        self.boxes.iter().filter(|b| b.frame == frame).cloned().collect()
    }

    pub fn annotation_file(&self) -> AnnotationFile {
        let m = &self.manifest;
        AnnotationFile {
            video_id: m.video_id.clone(),
            fps: m.fps,
            width: m.width,
            height: m.height,
            boxes: self.boxes.clone(),
        }
    }

    /// Validates `entry` against the current state, then appends it to the
    /// log and rewrites the annotation file. On error nothing changes.
    pub fn apply(&mut self, entry: LogEntry) -> Result<Vec<BoxAnnotation>, SessionError> {
        let mut next = self.boxes.clone();
        let affected = apply(&mut next, &entry, self.manifest.frames)?;
        let mut line = serde_json::to_string(&entry).expect("log entry serialises");
        line.push('\n');
        let mut f = OpenOptions::new().create(true).append(true).open(&self.paths.log)?;
        f.write_all(line.as_bytes())?;
        f.sync_data()?;
        self.log.push(entry);
        self.boxes = next;
        save_annotations(&self.paths.annotations, &self.annotation_file())?;
        Ok(affected)
    }
}

/// Rebuilds a video's annotations from its persisted baseline and log.
pub fn replay_persisted(manifest: &RecordingManifest) -> Result<AnnotationFile, SessionError> {
    let paths = SessionPaths::for_annotations(&manifest.annotations);
    let auto = load_annotations(&paths.auto)?.boxes;
    let log = read_log(&paths.log)?;
    let mut out = AnnotationFile::new(&manifest.video_id, manifest.fps, manifest.width, manifest.height);
    out.boxes = replay(&auto, &log, manifest.frames)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(frame: u32, track: u32, x: f64, source: BoxSource) -> BoxAnnotation {
        BoxAnnotation::new(frame, track, x, 10.0, 4.0, 4.0, source)
    }

    #[test]
    fn log_entries_round_trip() {
        let entries = vec![
            LogEntry::Edit(Edit::Delete { frame: 1, track_id: 2 }),
            LogEntry::interpolate(3),
        ];
        let text: Vec<String> = entries.iter().map(|e| serde_json::to_string(e).unwrap()).collect();
        assert_eq!(text[1], r#"{"kind":"interpolate","track_id":3}"#);
        assert!(text[0].contains(r#""kind":"delete""#));
        let back: Vec<LogEntry> = text.iter().map(|t| serde_json::from_str(t).unwrap()).collect();
        assert_eq!(back, entries);
    }

    #[test]
    fn interpolation_counts_and_idempotence() {
        let mut boxes = vec![b(0, 1, 0.0, BoxSource::Auto), b(10, 1, 20.0, BoxSource::Manual)];
        let dense = apply_interpolation(&mut boxes, 1).unwrap();
        assert_eq!(dense.len(), 11);
        assert_eq!(boxes.iter().filter(|b| b.source == BoxSource::Interp).count(), 9);
        assert_eq!(boxes.iter().find(|b| b.frame == 5).unwrap().x, 10.0);
        let before = boxes.clone();
        apply_interpolation(&mut boxes, 1).unwrap();
        assert_eq!(boxes, before);

        let mut single = vec![b(4, 2, 0.0, BoxSource::Auto)];
        assert_eq!(apply_interpolation(&mut single, 2).unwrap().len(), 1);
        assert_eq!(single.len(), 1);
        assert!(matches!(apply_interpolation(&mut single, 9), Err(SessionError::UnknownTrack(9))));
    }

    #[test]
    fn moved_keyframe_replaces_old_interp_boxes() {
        let mut boxes = vec![b(0, 1, 0.0, BoxSource::Auto), b(4, 1, 8.0, BoxSource::Auto)];
        apply_interpolation(&mut boxes, 1).unwrap();
        boxes = merge_manual(
            &boxes,
            &[Edit::Modify {
                frame: 4,
                track_id: 1,
                x: 16.0,
                y: 10.0,
                w: 4.0,
                h: 4.0,
            }],
        )
        .unwrap();
        apply_interpolation(&mut boxes, 1).unwrap();
        assert_eq!(boxes.iter().find(|b| b.frame == 2).unwrap().x, 8.0);
        assert_eq!(boxes.len(), 5);
    }
}
