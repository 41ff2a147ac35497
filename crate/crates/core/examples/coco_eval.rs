//! COCO-style AP over a handful of frames.

use nerdd::evaluation::{coco_map, Detection, FrameKey, GroundTruth};
use nerdd::BBox;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut gt = GroundTruth::new();
    let mut dets = Vec::new();
    for f in 0..4 {
        let key = FrameKey::new("v000", f);
        let b = BBox::new(100.0 + 10.0 * f as f64, 50.0, 20.0, 20.0);
        gt.insert(key.clone(), b);
        // shifted by 4 px: IoU 0.6
        dets.push(Detection::new(&key, 0.9 - 0.1 * f as f64, BBox::new(b.x + 4.0, b.y, b.w, b.h)));
    }
    dets.push(Detection::new(&FrameKey::new("v000", 9), 0.3, BBox::new(0.0, 0.0, 10.0, 10.0)));
    let report = coco_map(&dets, &gt)?;
    print!("{}", report.to_table());
    Ok(())
}
