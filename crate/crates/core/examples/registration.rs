//! Spatial and temporal registration of an event/RGB pair.

use image::GrayImage;
use nerdd::dataset::{write_synthetic_dataset, load_manifest, SyntheticOptions};
use nerdd::registration::{shift_project, undistort_image, Direction, Intrinsics, Projected, RegistrationParams};
use nerdd::{BoxAnnotation, BoxSource};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let params = RegistrationParams::identity().with_x_shift(-42);
    let b = BoxAnnotation::new(0, 1, 400.0, 300.0, 24.0, 16.0, BoxSource::Manual);
    let rgb = shift_project(&b, &params, Direction::EventToRgb, 1280, 720);
    println!("event box x={} -> rgb {:?}", b.x, rgb);
    if let Projected::Full(r) = rgb {
        let back = shift_project(&r, &params, Direction::RgbToEvent, 1280, 720).into_box();
        assert_eq!(back.as_ref(), Some(&b));
    }
    let edge = BoxAnnotation::new(0, 1, 10.0, 300.0, 24.0, 16.0, BoxSource::Manual);
    println!("box at the border -> {:?}", shift_project(&edge, &params, Direction::EventToRgb, 1280, 720));

    let img = GrayImage::from_fn(64, 48, |x, y| image::Luma([(x * 3 + y) as u8]));
    let same = undistort_image(&img, &Intrinsics::pinhole(50.0, 50.0, 32.0, 24.0))?;
    println!("zero-distortion undistort is identity: {}", same == img);

    // an event clock running 7 frames ahead of the RGB clock
    let dir = std::env::temp_dir().join("nerdd-registration-example");
    let opts = SyntheticOptions {
        t_offset_us: 7 * 33_333,
        visible: (8, 30),
        ..SyntheticOptions::default()
    };
    let (path, _) = write_synthetic_dataset(&dir, 1, &opts)?;
    let est = load_manifest(&path)?[0].estimate_offset(10)?;
    println!("estimated lag {} frames = {} us (score {:.3})", est.lag_frames, est.offset_us, est.score);
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
