//! A review session without the HTTP layer: edits go to the log, the
//! annotation file follows, and a fresh replay reproduces it.
//!
//! With `--serve`, the same dataset is served on 127.0.0.1:8080 instead.

use nerdd::annotator::Edit;
use nerdd::dataset::{load_annotations, load_manifest, save_annotations, write_synthetic_dataset, SyntheticOptions};
use nerdd::{AnnotationFile, BoxAnnotation, BoxSource};
use nerdd_review::{replay_persisted, AppState, LogEntry, Session};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("nerdd-review-example");
    let _ = std::fs::remove_dir_all(&dir);
    let (path, recs) = write_synthetic_dataset(&dir, 3, &SyntheticOptions::default())?;
    let manifests = load_manifest(&path)?;
    for (m, r) in manifests.iter().zip(&recs) {
        let mut ann = AnnotationFile::new(&m.video_id, m.fps, m.width, m.height);
        // sparse automatic boxes: every tenth frame
        ann.boxes = r
            .truth
            .iter()
            .filter(|b| b.frame % 10 == 0)
            .map(|b| BoxAnnotation { source: BoxSource::Auto, ..b.clone() })
            .collect();
        save_annotations(&m.annotations, &ann)?;
    }

    if std::env::args().any(|a| a == "--serve") {
        let state = AppState::new(manifests)?;
        println!("dataset in {}; serving on http://127.0.0.1:8080/videos", dir.display());
        nerdd_review::serve(state, ([127, 0, 0, 1], 8080).into(), None).await?;
        return Ok(());
    }

    let m = &manifests[0];
    let mut s = Session::open(m)?;
    println!("{}: {} auto boxes, dirty {}", m.video_id, s.boxes().len(), s.is_dirty());
    s.apply(LogEntry::Edit(Edit::Add { frame: 5, track_id: 2, x: 10.0, y: 10.0, w: 6.0, h: 6.0 }))?;
    s.apply(LogEntry::Edit(Edit::Delete { frame: 5, track_id: 2 }))?;
    let dense = s.apply(LogEntry::interpolate(1))?;
    println!("track 1 after interpolation: {} boxes, log has {} entries", dense.len(), s.log().len());
    let on_disk = load_annotations(&m.annotations)?;
    println!("replay matches the saved file: {}", replay_persisted(m)? == on_disk);
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
