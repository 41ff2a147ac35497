//! Writes a small synthetic dataset (events, RGB frames, manifest and
//! ground-truth annotations) for trying the command-line tools.
//!
//! `cargo run --example synthetic_dataset -- /tmp/nerdd-demo 3`

use nerdd::dataset::{save_annotations, write_synthetic_dataset, SyntheticOptions};
use nerdd::AnnotationFile;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let dir = args.next().unwrap_or_else(|| "nerdd-demo".into());
    let n: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(3);
    let dir = std::path::Path::new(&dir);
    let (path, recs) = write_synthetic_dataset(dir, n, &SyntheticOptions { visible: (3, 27), ..SyntheticOptions::default() })?;
    for r in &recs {
        let m = &r.manifest;
        let mut ann = AnnotationFile::new(&m.video_id, m.fps, m.width, m.height);
        ann.boxes = r.truth.clone();
        save_annotations(dir.join("truth").join(format!("{}.json", m.video_id)), &ann)?;
    }
    println!("manifest {}", path.display());
    println!("ground truth in {}", dir.join("truth").display());
    Ok(())
}
