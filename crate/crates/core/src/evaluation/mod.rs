//! Box geometry, COCO-style average precision and video-wise splits.

mod ap;
mod split;

pub use ap::{
    average_precision, coco_map, coco_thresholds, Detection, EvalReport, FrameKey, GroundTruth,
    ThresholdStats,
};
pub use split::{video_split, SplitSpec};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no ground-truth boxes: AP is undefined")]
    NoGroundTruth,
    #[error("non-finite score at detection {0}")]
    NonFiniteScore(usize),
    #[error("ratio must lie in [0, 1], got {0}")]
    BadRatio(f64),
}

/// Axis-aligned box, top-left corner plus size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    /// From normalised centre/size.
    pub fn from_cxcywh(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self::new(cx - w / 2.0, cy - h / 2.0, w, h)
    }

    pub fn to_cxcywh(&self) -> [f64; 4] {
        [self.x + self.w / 2.0, self.y + self.h / 2.0, self.w, self.h]
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    pub fn x2(&self) -> f64 {
        self.x + self.w
    }

    pub fn y2(&self) -> f64 {
        self.y + self.h
    }

    pub fn scaled(&self, sx: f64, sy: f64) -> Self {
        Self::new(self.x * sx, self.y * sy, self.w * sx, self.h * sy)
    }
}

fn intersection(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2().min(b.x2()) - a.x.max(b.x)).max(0.0);
    let ih = (a.y2().min(b.y2()) - a.y.max(b.y)).max(0.0);
    iw * ih
}

/// Intersection over union; 0 when the union is empty.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = intersection(a, b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Generalised IoU: `IoU − |C \ (A ∪ B)| / |C|`, C the smallest enclosing box.
pub fn giou(a: &BBox, b: &BBox) -> f64 {
    let inter = intersection(a, b);
    let union = a.area() + b.area() - inter;
    let cw = a.x2().max(b.x2()) - a.x.min(b.x);
    let ch = a.y2().max(b.y2()) - a.y.min(b.y);
    let c = cw * ch;
    if union <= 0.0 || c <= 0.0 {
        return 0.0;
    }
    inter / union - (c - union) / c
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Pixel-count areas on a grid fine enough for integer-aligned boxes.
    fn raster_giou(a: &BBox, b: &BBox, res: f64) -> f64 {
        let inside = |bb: &BBox, x: f64, y: f64| x >= bb.x && x < bb.x2() && y >= bb.y && y < bb.y2();
        let (x0, y0) = (a.x.min(b.x), a.y.min(b.y));
        let (x1, y1) = (a.x2().max(b.x2()), a.y2().max(b.y2()));
        let (mut inter, mut uni, mut enclosing) = (0u64, 0u64, 0u64);
        let nx = ((x1 - x0) * res).round() as i64;
        let ny = ((y1 - y0) * res).round() as i64;
        for j in 0..ny {
            for i in 0..nx {
                let x = x0 + (i as f64 + 0.5) / res;
                let y = y0 + (j as f64 + 0.5) / res;
                let (ia, ib) = (inside(a, x, y), inside(b, x, y));
                enclosing += 1;
                if ia || ib {
                    uni += 1;
                }
                if ia && ib {
                    inter += 1;
                }
            }
        }
        inter as f64 / uni as f64 - (enclosing - uni) as f64 / enclosing as f64
    }

    #[test]
    fn iou_cases() {
        let a = BBox::new(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &BBox::new(5.0, 5.0, 1.0, 1.0)), 0.0);
        let b = BBox::new(1.0, 0.0, 2.0, 2.0);
        assert!((iou(&a, &b) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn giou_cases() {
        let a = BBox::new(0.0, 0.0, 1.0, 1.0);
        assert_eq!(giou(&a, &a), 1.0);
        let b = BBox::new(2.0, 0.0, 1.0, 1.0);
        // enclosing 3x1, union 2: 0 - 1/3
        let g = giou(&a, &b);
        assert!((g + 1.0 / 3.0).abs() < 1e-15);
        assert!((g - raster_giou(&a, &b, 8.0)).abs() < 1e-12);
        let c = BBox::new(1.0, 1.0, 3.0, 2.0);
        let d = BBox::new(2.0, 0.0, 1.0, 4.0);
        assert!((giou(&c, &d) - raster_giou(&c, &d, 4.0)).abs() < 1e-12);
    }

    #[test]
    fn cxcywh_round_trip() {
        let b = BBox::from_cxcywh(0.5, 0.25, 0.2, 0.1);
        assert_eq!(b.to_cxcywh(), [0.5, 0.25, 0.2, 0.1]);
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (-10i32..10, -10i32..10, 1i32..8, 1i32..8)
            .prop_map(|(x, y, w, h)| BBox::new(x as f64, y as f64, w as f64, h as f64))
    }

    proptest! {
        #[test]
        fn iou_giou_properties(a in arb_box(), b in arb_box()) {
            let (i, g) = (iou(&a, &b), giou(&a, &b));
            prop_assert!((0.0..=1.0).contains(&i));
            prop_assert!(g > -1.0 && g <= 1.0);
            prop_assert!(g <= i + 1e-15);
            prop_assert_eq!(i, iou(&b, &a));
            prop_assert_eq!(g, giou(&b, &a));
            prop_assert!((g - raster_giou(&a, &b, 1.0)).abs() < 1e-12);
        }
    }
}
