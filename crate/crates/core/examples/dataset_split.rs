//! Video-wise train/test split and dataset statistics.

use std::collections::BTreeMap;

use nerdd::dataset::{dataset_stats, load_manifest, write_synthetic_dataset, SyntheticOptions};
use nerdd::evaluation::video_split;
use nerdd::AnnotationFile;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ids: Vec<String> = (0..115).map(|i| format!("video_{i:03}")).collect();
    let split = video_split(&ids, 0.8, 0)?;
    println!("115 videos at 0.8 -> {} train / {} test", split.train.len(), split.test.len());
    println!("first test videos: {:?}", &split.test[..5]);

    let dir = std::env::temp_dir().join("nerdd-split-example");
    let (path, recs) = write_synthetic_dataset(&dir, 3, &SyntheticOptions { visible: (5, 25), ..SyntheticOptions::default() })?;
    let entries = load_manifest(&path)?;
    let anns: BTreeMap<String, AnnotationFile> = entries
        .iter()
        .zip(&recs)
        .map(|(m, r)| {
            let mut a = AnnotationFile::new(&m.video_id, m.fps, m.width, m.height);
            a.boxes = r.truth.clone();
            (m.video_id.clone(), a)
        })
        .collect();
    println!("{}", dataset_stats(&entries, &anns));
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
