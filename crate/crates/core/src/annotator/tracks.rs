use std::collections::BTreeMap;
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use rayon::prelude::*;

use super::{detect_blobs, AnnotationError, BlobParams, BoxAnnotation, BoxSource, Track};
use crate::events::CountFrame;
use crate::matching::{hungarian, CostMatrix};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkMethod {
    /// Closest pairs first.
    #[default]
    Greedy,
    /// Minimum total centroid distance per frame pair.
    Hungarian,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkResult {
    pub tracks: Vec<Track>,
    /// Boxes that ended up in tracks shorter than `min_track_len`.
    pub discarded: usize,
}

struct OpenTrack {
    boxes: Vec<BoxAnnotation>,
}

/// Links per-frame detections into tracks. `per_frame[i]` holds the boxes
/// of frame `i`; a track only continues between consecutive frames.
/// Surviving tracks are numbered from 1 in order of their first frame.
pub fn link_tracks(
    per_frame: &[Vec<BoxAnnotation>],
    params: &BlobParams,
    method: LinkMethod,
) -> LinkResult {
    let mut finished: Vec<OpenTrack> = Vec::new();
    let mut open: Vec<OpenTrack> = Vec::new();

    for (frame, boxes) in per_frame.iter().enumerate() {
        let frame = frame as u32;
        let pairs = match method {
            LinkMethod::Greedy => greedy_pairs(&open, boxes, params.link_distance),
            LinkMethod::Hungarian => optimal_pairs(&open, boxes, params.link_distance),
        };
        let mut taken = vec![false; boxes.len()];
        let mut next_open = Vec::with_capacity(open.len());
        let mut assigned: Vec<Option<usize>> = vec![None; open.len()];
        for (t, b) in pairs {
            assigned[t] = Some(b);
            taken[b] = true;
        }
        for (t, mut track) in open.into_iter().enumerate() {
            match assigned[t] {
                Some(b) => {
                    let mut bx = boxes[b].clone();
                    bx.frame = frame;
                    track.boxes.push(bx);
                    next_open.push(track);
                }
                None => finished.push(track),
            }
        }
        for (b, bx) in boxes.iter().enumerate() {
            if !taken[b] {
                let mut bx = bx.clone();
                bx.frame = frame;
                next_open.push(OpenTrack { boxes: vec![bx] });
            }
        }
        open = next_open;
    }
    finished.extend(open);
    finished.sort_by(|a, b| {
        let (ca, cb) = (a.boxes[0].centroid(), b.boxes[0].centroid());
        a.boxes[0]
            .frame
            .cmp(&b.boxes[0].frame)
            .then(ca.1.total_cmp(&cb.1))
            .then(ca.0.total_cmp(&cb.0))
    });

    let mut discarded = 0;
    let mut tracks = Vec::new();
    for t in finished {
        if t.boxes.len() < params.min_track_len {
            discarded += t.boxes.len();
            continue;
        }
        let id = tracks.len() as u32 + 1;
        let boxes = t
            .boxes
            .into_iter()
            .map(|mut b| {
                b.track_id = id;
                b
            })
            .collect();
        tracks.push(Track::new(id, boxes).expect("frames increase by construction"));
    }
    LinkResult { tracks, discarded }
}

fn distance(a: &BoxAnnotation, b: &BoxAnnotation) -> f64 {
    let (ax, ay) = a.centroid();
    let (bx, by) = b.centroid();
    (ax - bx).hypot(ay - by)
}

fn greedy_pairs(open: &[OpenTrack], boxes: &[BoxAnnotation], max_dist: f64) -> Vec<(usize, usize)> {
    let mut cand: Vec<(f64, usize, usize)> = Vec::new();
    for (t, track) in open.iter().enumerate() {
        let last = track.boxes.last().unwrap();
        for (b, bx) in boxes.iter().enumerate() {
            let d = distance(last, bx);
            if d <= max_dist {
                cand.push((d, t, b));
            }
        }
    }
    cand.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    let mut t_used = vec![false; open.len()];
    let mut b_used = vec![false; boxes.len()];
    let mut out = Vec::new();
    for (_, t, b) in cand {
        if !t_used[t] && !b_used[b] {
            t_used[t] = true;
            b_used[b] = true;
            out.push((t, b));
        }
    }
    out
}

fn optimal_pairs(open: &[OpenTrack], boxes: &[BoxAnnotation], max_dist: f64) -> Vec<(usize, usize)> {
    if open.is_empty() || boxes.is_empty() {
        return Vec::new();
    }
    // gated pairs cost more than any feasible set of in-range pairs
    let gate = (max_dist + 1.0) * (open.len().max(boxes.len()) as f64 + 1.0);
    let data: Vec<f64> = open
        .iter()
        .flat_map(|t| {
            let last = t.boxes.last().unwrap();
            boxes.iter().map(move |b| {
                let d = distance(last, b);
                if d <= max_dist {
                    d
                } else {
                    gate
                }
            })
        })
        .collect();
    let m = CostMatrix::new(open.len(), boxes.len(), data).expect("finite distances");
    let (assignment, _) = hungarian(&m).expect("finite distances");
    assignment
        .pairs()
        .iter()
        .copied()
        .filter(|&(t, b)| m.get(t, b) <= max_dist)
        .collect()
}

/// Blob detection on every frame followed by linking. The surviving
/// boxes are tagged `auto`, ordered by frame then track.
pub fn auto_annotate(frames: &[CountFrame], params: &BlobParams, method: LinkMethod) -> (Vec<BoxAnnotation>, LinkResult) {
    let per_frame: Vec<Vec<BoxAnnotation>> = frames.par_iter().map(|f| detect_blobs(f, params)).collect();
    let linked = link_tracks(&per_frame, params, method);
    let mut boxes: Vec<BoxAnnotation> = linked
        .tracks
        .iter()
        .flat_map(|t| t.keyframes().iter().cloned())
        .map(|b| BoxAnnotation { source: BoxSource::Auto, ..b })
        .collect();
    boxes.sort_by_key(|b| (b.frame, b.track_id));
    (boxes, linked)
}

/// Groups boxes by track id, each track sorted by frame. Boxes with the
/// same `(track_id, frame)` keep only the first occurrence.
pub fn tracks_from_boxes(boxes: &[BoxAnnotation]) -> Vec<Track> {
    let mut by_id: BTreeMap<u32, BTreeMap<u32, BoxAnnotation>> = BTreeMap::new();
    for b in boxes {
        by_id
            .entry(b.track_id)
            .or_default()
            .entry(b.frame)
            .or_insert_with(|| b.clone());
    }
    by_id
        .into_iter()
        .map(|(id, frames)| Track::new(id, frames.into_values().collect()).expect("grouped by id"))
        .collect()
}

/// Densifies a track: keyframes are copied through, frames strictly between
/// consecutive keyframes get per-coordinate linear interpolation tagged
/// `interp`. Nothing is produced outside the keyframe span, and `range`
/// (if any) further limits the output frames.
pub fn interpolate_track(
    track: &Track,
    range: Option<RangeInclusive<u32>>,
) -> Result<Vec<BoxAnnotation>, AnnotationError> {
    let keys = track.keyframes();
    if keys.is_empty() {
        return Err(AnnotationError::EmptyTrack);
    }
    let keep = |f: u32| range.as_ref().is_none_or(|r| r.contains(&f));
    let mut out = Vec::new();
    for (i, k) in keys.iter().enumerate() {
        if keep(k.frame) {
            out.push(k.clone());
        }
        let Some(next) = keys.get(i + 1) else { break };
        let span = (next.frame - k.frame) as f64;
        for f in k.frame + 1..next.frame {
            if !keep(f) {
                continue;
            }
            let a = (f - k.frame) as f64 / span;
            let lerp = |p: f64, q: f64| p + (q - p) * a;
            out.push(BoxAnnotation {
                frame: f,
                track_id: track.track_id,
                x: lerp(k.x, next.x),
                y: lerp(k.y, next.y),
                w: lerp(k.w, next.w),
                h: lerp(k.h, next.h),
                source: BoxSource::Interp,
            });
        }
    }
    Ok(out)
}
