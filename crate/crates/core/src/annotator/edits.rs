use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{sort_boxes, AnnotationError, BoxAnnotation, BoxSource};

/// One manual correction. Boxes are addressed by `(frame, track_id)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Edit {
    Modify {
        frame: u32,
        track_id: u32,
        x: f64,
        y: f64,
        w: f64,
        h: f64,
    },
    Add {
        frame: u32,
        track_id: u32,
        x: f64,
        y: f64,
        w: f64,
        h: f64,
    },
    Delete {
        frame: u32,
        track_id: u32,
    },
}

impl Edit {
    pub fn target(&self) -> (u32, u32) {
        match *self {
            Edit::Modify {
                frame, track_id, ..
            }
            | Edit::Add {
                frame, track_id, ..
            }
            | Edit::Delete { frame, track_id } => (frame, track_id),
        }
    }

    fn manual_box(&self) -> Option<BoxAnnotation> {
        match *self {
            Edit::Modify {
                frame,
                track_id,
                x,
                y,
                w,
                h,
            }
            | Edit::Add {
                frame,
                track_id,
                x,
                y,
                w,
                h,
            } => Some(BoxAnnotation::new(frame, track_id, x, y, w, h, BoxSource::Manual)),
            Edit::Delete { .. } => None,
        }
    }
}

/// Applies `edits` in order. Modified and added boxes become `manual`; the
/// result is sorted by `(frame, track_id)`.
pub fn merge_manual(
    auto: &[BoxAnnotation],
    edits: &[Edit],
) -> Result<Vec<BoxAnnotation>, AnnotationError> {
    let mut boxes = auto.to_vec();
    for (edit_index, edit) in edits.iter().enumerate() {
        let (frame, track_id) = edit.target();
        let pos = boxes
            .iter()
            .position(|b| b.frame == frame && b.track_id == track_id);
        if let Some(b) = edit.manual_box() {
            if !b.is_valid() {
                return Err(AnnotationError::DegenerateBox { edit_index });
            }
        }
        match (edit, pos) {
            (Edit::Modify { .. }, Some(i)) => boxes[i] = edit.manual_box().unwrap(),
            (Edit::Add { .. }, None) => boxes.push(edit.manual_box().unwrap()),
            (Edit::Delete { .. }, Some(i)) => {
                boxes.remove(i);
            }
            (Edit::Add { .. }, Some(_)) => {
                return Err(AnnotationError::DuplicateTarget {
                    edit_index,
                    frame,
                    track_id,
                })
            }
            (Edit::Modify { .. } | Edit::Delete { .. }, None) => {
                return Err(AnnotationError::UnknownTarget {
                    edit_index,
                    frame,
                    track_id,
                })
            }
        }
    }
    sort_boxes(&mut boxes);
    Ok(boxes)
}

/// JSON-lines edit log; blank lines are skipped.
pub fn read_edit_log<R: BufRead>(reader: R) -> Result<Vec<Edit>, std::io::Error> {
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

pub fn write_edit_log<W: Write>(mut writer: W, edits: &[Edit]) -> Result<(), std::io::Error> {
    for e in edits {
        serde_json::to_writer(&mut writer, e)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}
