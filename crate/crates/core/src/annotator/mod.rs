//! Semi-automatic ground truth: blobs on event frames are linked into
//! tracks, corrected through an ordered edit log, and gaps between
//! keyframes are filled by linear interpolation.

mod blobs;
mod edits;
mod tracks;

pub use blobs::{detect_blobs, label_components, BlobParams, Component, Connectivity};
pub use edits::{merge_manual, read_edit_log, write_edit_log, Edit};
pub use tracks::{
    auto_annotate, interpolate_track, link_tracks, tracks_from_boxes, LinkMethod, LinkResult,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::BBox;

#[derive(Debug, Error, PartialEq)]
pub enum AnnotationError {
    #[error("edit {edit_index}: no box with frame {frame} and track {track_id}")]
    UnknownTarget {
        edit_index: usize,
        frame: u32,
        track_id: u32,
    },
    #[error("edit {edit_index}: box with frame {frame} and track {track_id} already exists")]
    DuplicateTarget {
        edit_index: usize,
        frame: u32,
        track_id: u32,
    },
    #[error("edit {edit_index}: box must have positive width and height")]
    DegenerateBox { edit_index: usize },
    #[error("track is empty")]
    EmptyTrack,
    #[error("track {track_id}: {reason}")]
    InvalidTrack { track_id: u32, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoxSource {
    Auto,
    Manual,
    Interp,
}

/// Track id carried by boxes that are not linked yet.
pub const UNASSIGNED_TRACK: u32 = 0;

/// A drone box at one frame, top-left pixel coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxAnnotation {
    pub frame: u32,
    pub track_id: u32,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub source: BoxSource,
}

impl BoxAnnotation {
    pub fn new(frame: u32, track_id: u32, x: f64, y: f64, w: f64, h: f64, source: BoxSource) -> Self {
        Self {
            frame,
            track_id,
            x,
            y,
            w,
            h,
            source,
        }
    }

    pub fn bbox(&self) -> BBox {
        BBox::new(self.x, self.y, self.w, self.h)
    }

    pub fn centroid(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn is_valid(&self) -> bool {
        self.w > 0.0 && self.h > 0.0 && [self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite())
    }
}

/// Temporally linked boxes of one object.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub track_id: u32,
    keyframes: Vec<BoxAnnotation>,
}

impl Track {
    pub fn new(track_id: u32, keyframes: Vec<BoxAnnotation>) -> Result<Self, AnnotationError> {
        if let Some(b) = keyframes.iter().find(|b| b.track_id != track_id) {
            return Err(AnnotationError::InvalidTrack {
                track_id,
                reason: format!("box at frame {} has track {}", b.frame, b.track_id),
            });
        }
        if keyframes.windows(2).any(|w| w[0].frame >= w[1].frame) {
            return Err(AnnotationError::InvalidTrack {
                track_id,
                reason: "frames must be strictly increasing".into(),
            });
        }
        Ok(Self {
            track_id,
            keyframes,
        })
    }

    pub fn keyframes(&self) -> &[BoxAnnotation] {
        &self.keyframes
    }

    pub fn len(&self) -> usize {
        self.keyframes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keyframes.is_empty()
    }

    pub fn into_boxes(self) -> Vec<BoxAnnotation> {
        self.keyframes
    }
}

/// Per-video annotation document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationFile {
    pub video_id: String,
    pub fps: f64,
    pub width: u32,
    pub height: u32,
    pub boxes: Vec<BoxAnnotation>,
}

impl AnnotationFile {
    pub fn new(video_id: impl Into<String>, fps: f64, width: u32, height: u32) -> Self {
        Self {
            video_id: video_id.into(),
            fps,
            width,
            height,
            boxes: Vec::new(),
        }
    }

    /// Sorts boxes by `(frame, track_id)`.
    pub fn normalize(&mut self) {
        sort_boxes(&mut self.boxes);
    }

    pub fn boxes_at(&self, frame: u32) -> impl Iterator<Item = &BoxAnnotation> {
        self.boxes.iter().filter(move |b| b.frame == frame)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("annotation serialises")
    }
}

pub(crate) fn sort_boxes(boxes: &mut [BoxAnnotation]) {
    boxes.sort_by(|a, b| (a.frame, a.track_id).cmp(&(b.frame, b.track_id)));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn annotation_json_schema() {
        let mut f = AnnotationFile::new("v001", 30.0, 1280, 720);
        f.boxes.push(BoxAnnotation::new(3, 1, 10.0, 20.0, 5.0, 6.0, BoxSource::Interp));
        let v: serde_json::Value = serde_json::to_value(&f).unwrap();
        assert_eq!(v["video_id"], "v001");
        assert_eq!(v["boxes"][0]["source"], "interp");
        assert_eq!(v["boxes"][0]["track_id"], 1);
        let back: AnnotationFile = serde_json::from_value(v).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn track_invariants() {
        let b = |f| BoxAnnotation::new(f, 2, 0.0, 0.0, 1.0, 1.0, BoxSource::Auto);
        assert!(Track::new(2, vec![b(0), b(1)]).is_ok());
        assert!(Track::new(2, vec![b(1), b(1)]).is_err());
        assert!(Track::new(3, vec![b(0)]).is_err());
    }
}
