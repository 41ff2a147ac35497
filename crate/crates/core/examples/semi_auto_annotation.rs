//! Automatic boxes from event blobs, a manual correction and track
//! interpolation.

use nerdd::annotator::{auto_annotate, interpolate_track, merge_manual, tracks_from_boxes, BlobParams, Edit, LinkMethod};
use nerdd::dataset::{synthetic_recording, SyntheticOptions};
use nerdd::events::{accumulate, AccumulationConfig};
use nerdd::{BoxSource, Track};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let rec = synthetic_recording("demo", &SyntheticOptions::default())?;
    let cfg = AccumulationConfig::from_fps(30)?;
    let frames = accumulate(&rec.stream, &cfg, 30 * cfg.interval_us()).frames;
    let (boxes, linked) = auto_annotate(&frames, &BlobParams::default(), LinkMethod::Greedy);
    println!("{} tracks, {} boxes, {} discarded", linked.tracks.len(), boxes.len(), linked.discarded);
    let b = &boxes[10];
    let t = rec.truth.iter().find(|t| t.frame == b.frame).unwrap();
    println!("frame {}: auto ({}, {}, {}, {}) truth ({}, {}, {}, {})", b.frame, b.x, b.y, b.w, b.h, t.x, t.y, t.w, t.h);

    let edits = vec![
        Edit::Delete { frame: 3, track_id: 1 },
        Edit::Modify { frame: 4, track_id: 1, x: t.x, y: t.y, w: 12.0, h: 10.0 },
    ];
    let edited = merge_manual(&boxes, &edits)?;
    println!("after edits: {} boxes, {} manual", edited.len(), edited.iter().filter(|b| b.source == BoxSource::Manual).count());

    // keep every fifth frame as a keyframe and fill the rest
    let track = &tracks_from_boxes(&edited)[0];
    let sparse = Track::new(1, track.keyframes().iter().filter(|b| b.frame % 5 == 0).cloned().collect())?;
    let dense = interpolate_track(&sparse, None)?;
    let mid = dense.iter().find(|b| b.frame == 7).unwrap();
    println!("{} keyframes -> {} boxes; frame 7 x={:.2} ({:?})", sparse.len(), dense.len(), mid.x, mid.source);
    Ok(())
}
