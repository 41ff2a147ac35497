use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{iou, BBox, EvalError};
use crate::annotator::AnnotationFile;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FrameKey {
    pub video_id: String,
    pub frame: u32,
}

impl FrameKey {
    pub fn new(video_id: impl Into<String>, frame: u32) -> Self {
        Self {
            video_id: video_id.into(),
            frame,
        }
    }
}

/// One scored box; also the record format of detection files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub video_id: String,
    pub frame: u32,
    pub score: f64,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl Detection {
    pub fn new(key: &FrameKey, score: f64, b: BBox) -> Self {
        Self {
            video_id: key.video_id.clone(),
            frame: key.frame,
            score,
            x: b.x,
            y: b.y,
            w: b.w,
            h: b.h,
        }
    }

    pub fn key(&self) -> FrameKey {
        FrameKey::new(self.video_id.clone(), self.frame)
    }

    pub fn bbox(&self) -> BBox {
        BBox::new(self.x, self.y, self.w, self.h)
    }
}

/// Ground-truth boxes keyed by frame. Frames without boxes may be absent.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    frames: BTreeMap<FrameKey, Vec<BBox>>,
}

impl GroundTruth {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: FrameKey, b: BBox) {
        self.frames.entry(key).or_default().push(b);
    }

    pub fn from_annotations<'a>(anns: impl IntoIterator<Item = &'a AnnotationFile>) -> Self {
        let mut gt = Self::new();
        for a in anns {
            for b in &a.boxes {
                gt.insert(FrameKey::new(a.video_id.clone(), b.frame), b.bbox());
            }
        }
        gt
    }

    pub fn boxes(&self, key: &FrameKey) -> &[BBox] {
        self.frames.get(key).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn total(&self) -> usize {
        self.frames.values().map(Vec::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&FrameKey, &Vec<BBox>)> {
        self.frames.iter()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdStats {
    pub iou_threshold: f64,
    pub ap: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ap50: f64,
    pub ap75: f64,
    pub ap50_95: f64,
    pub per_threshold: Vec<ThresholdStats>,
}

impl EvalReport {
    pub fn to_table(&self) -> String {
        let mut s = String::from("  IoU      AP      TP      FP      FN\n");
        for t in &self.per_threshold {
            s.push_str(&format!(
                "  {:.2}  {:.4}  {:>6}  {:>6}  {:>6}\n",
                t.iou_threshold, t.ap, t.tp, t.fp, t.fn_
            ));
        }
        s.push_str(&format!(
            "AP50 {:.4}  AP75 {:.4}  AP50:95 {:.4}\n",
            self.ap50, self.ap75, self.ap50_95
        ));
        s
    }
}

/// IoU thresholds 0.50, 0.55, …, 0.95.
pub fn coco_thresholds() -> [f64; 10] {
    std::array::from_fn(|k| (50 + 5 * k) as f64 / 100.0)
}

/// Detections ranked by descending score (stable on ties); each one is
/// matched to the unmatched GT box of its frame with the highest IoU, if
/// that IoU reaches the threshold.
fn rank_and_match(dets: &[Detection], gts: &GroundTruth, thr: f64) -> Vec<bool> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    let mut used: BTreeMap<FrameKey, Vec<bool>> = BTreeMap::new();
    order
        .into_iter()
        .map(|i| {
            let d = &dets[i];
            let key = d.key();
            let gt = gts.boxes(&key);
            let taken = used.entry(key).or_insert_with(|| vec![false; gt.len()]);
            let db = d.bbox();
            let mut best: Option<(usize, f64)> = None;
            for (j, g) in gt.iter().enumerate() {
                if taken[j] {
                    continue;
                }
                let v = iou(&db, g);
                if v >= thr && best.is_none_or(|(_, bv)| v > bv) {
                    best = Some((j, v));
                }
            }
            match best {
                Some((j, _)) => {
                    taken[j] = true;
                    true
                }
                None => false,
            }
        })
        .collect()
}

fn evaluate(dets: &[Detection], gts: &GroundTruth, thr: f64) -> Result<ThresholdStats, EvalError> {
    if let Some(i) = dets.iter().position(|d| !d.score.is_finite()) {
        return Err(EvalError::NonFiniteScore(i));
    }
    let n_gt = gts.total();
    if n_gt == 0 {
        return Err(EvalError::NoGroundTruth);
    }
    let hits = rank_and_match(dets, gts, thr);
    let mut recall = Vec::with_capacity(hits.len());
    let mut precision = Vec::with_capacity(hits.len());
    let mut tp = 0usize;
    for (k, &hit) in hits.iter().enumerate() {
        tp += hit as usize;
        recall.push(tp as f64 / n_gt as f64);
        precision.push(tp as f64 / (k + 1) as f64);
    }
    // precision envelope, right to left
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let mut ap = 0.0;
    let mut prev_r = 0.0;
    for (r, p) in recall.iter().zip(&precision) {
        if *r > prev_r {
            ap += (r - prev_r) * p;
            prev_r = *r;
        }
    }
    Ok(ThresholdStats {
        iou_threshold: thr,
        ap,
        tp,
        fp: hits.len() - tp,
        fn_: n_gt - tp,
    })
}

/// All-point interpolated AP at one IoU threshold.
pub fn average_precision(dets: &[Detection], gts: &GroundTruth, iou_thr: f64) -> Result<f64, EvalError> {
    evaluate(dets, gts, iou_thr).map(|s| s.ap)
}

/// AP at the ten COCO thresholds; AP50:95 is their mean.
pub fn coco_map(dets: &[Detection], gts: &GroundTruth) -> Result<EvalReport, EvalError> {
    let per_threshold = coco_thresholds()
        .iter()
        .map(|&t| evaluate(dets, gts, t))
        .collect::<Result<Vec<_>, _>>()?;
    let ap50_95 = per_threshold.iter().map(|s| s.ap).sum::<f64>() / per_threshold.len() as f64;
    Ok(EvalReport {
        ap50: per_threshold[0].ap,
        ap75: per_threshold[5].ap,
        ap50_95,
        per_threshold,
    })
}
