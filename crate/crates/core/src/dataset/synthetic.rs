//! Small synthetic recordings: one drone-like square crossing a sky
//! gradient, seen by both sensors.

use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{save_manifest, CameraIntrinsics, DatasetError, RecordingManifest};
use crate::annotator::{BoxAnnotation, BoxSource};
use crate::events::{write_events_file, AccumulationConfig, Event, EventStream, Polarity};
use crate::registration::RegistrationParams;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticOptions {
    pub width: u32,
    pub height: u32,
    pub frames: u32,
    pub fps: f64,
    /// Column offset from event to RGB coordinates.
    pub x_shift: i32,
    /// Event clock minus RGB clock.
    pub t_offset_us: i64,
    /// The target is visible in frames `[visible.0, visible.1)`.
    pub visible: (u32, u32),
    pub size: (u32, u32),
    pub start: (i64, i64),
    /// Pixels per frame.
    pub velocity: (i64, i64),
    /// Events per target pixel per frame.
    pub target_events: u32,
    /// Background events per frame.
    pub noise_per_frame: usize,
    pub seed: u64,
}

impl Default for SyntheticOptions {
    fn default() -> Self {
        Self {
            width: 160,
            height: 120,
            frames: 30,
            fps: 30.0,
            x_shift: 6,
            t_offset_us: 0,
            visible: (0, 30),
            size: (10, 8),
            start: (20, 40),
            velocity: (3, 1),
            target_events: 2,
            noise_per_frame: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticRecording {
    /// Paths relative to the dataset directory.
    pub manifest: RecordingManifest,
    pub stream: EventStream,
    /// Rendered RGB frames in the RGB camera's own coordinates.
    pub rgb: Vec<RgbImage>,
    /// Target boxes in event coordinates, track 1.
    pub truth: Vec<BoxAnnotation>,
}

/// Builds a recording in memory. Each target pixel fires `target_events`
/// events per frame, ON on the leading half and OFF on the trailing half.
pub fn synthetic_recording(video_id: &str, opts: &SyntheticOptions) -> Result<SyntheticRecording, DatasetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let acc = AccumulationConfig::from_fps_f64(opts.fps)?;
    let dt = acc.interval_us();
    let (w, h) = (opts.width as i64, opts.height as i64);
    let mut truth = Vec::new();
    let mut events = Vec::new();
    let mut rgb = Vec::new();
    for f in 0..opts.frames {
        let t0 = f as u64 * dt;
        let mut push = |x: i64, y: i64, p: Polarity, k: usize, n: usize| {
            let t = t0 as i64 + (k as u64 * dt / n.max(1) as u64) as i64 + opts.t_offset_us;
            if t >= 0 && (0..w).contains(&x) && (0..h).contains(&y) {
                events.push(Event::new(t as u64, x as u16, y as u16, p));
            }
        };
        let visible = (opts.visible.0..opts.visible.1).contains(&f);
        let bx = opts.start.0 + opts.velocity.0 * f as i64;
        let by = opts.start.1 + opts.velocity.1 * f as i64;
        let (bw, bh) = (opts.size.0 as i64, opts.size.1 as i64);
        if visible {
            let reps = opts.target_events as usize;
            let n = (bw * bh) as usize * reps;
            let mut k = 0;
            for _ in 0..reps {
                for y in by..by + bh {
                    for x in bx..bx + bw {
                        let p = if (x - bx) * 2 >= bw { Polarity::On } else { Polarity::Off };
                        push(x, y, p, k, n);
                        k += 1;
                    }
                }
            }
            let (cx0, cy0) = (bx.max(0), by.max(0));
            let (cx1, cy1) = ((bx + bw).min(w), (by + bh).min(h));
            if cx1 > cx0 && cy1 > cy0 {
                truth.push(BoxAnnotation::new(
                    f,
                    1,
                    cx0 as f64,
                    cy0 as f64,
                    (cx1 - cx0) as f64,
                    (cy1 - cy0) as f64,
                    BoxSource::Manual,
                ));
            }
        }
        for k in 0..opts.noise_per_frame {
            let (x, y) = (rng.gen_range(0..w), rng.gen_range(0..h));
            let p = if rng.gen_bool(0.5) { Polarity::On } else { Polarity::Off };
            push(x, y, p, k, opts.noise_per_frame);
        }
        let mut img = RgbImage::from_fn(opts.width, opts.height, |_, y| {
            let v = 150.0 + 80.0 * y as f64 / opts.height as f64;
            Rgb([(v * 0.7) as u8, (v * 0.85) as u8, v as u8])
        });
        if visible {
            for y in by..by + bh {
                for x in bx + opts.x_shift as i64..bx + bw + opts.x_shift as i64 {
                    if (0..w).contains(&x) && (0..h).contains(&y) {
                        img.put_pixel(x as u32, y as u32, Rgb([30, 30, 35]));
                    }
                }
            }
        }
        rgb.push(img);
    }
    let stream = EventStream::from_unsorted(opts.width as u16, opts.height as u16, events)?;
    let manifest = RecordingManifest {
        video_id: video_id.to_string(),
        events: PathBuf::from(video_id).join("events.nev"),
        rgb_dir: PathBuf::from(video_id).join("rgb"),
        fps: opts.fps,
        width: opts.width,
        height: opts.height,
        frames: opts.frames,
        registration: RegistrationParams {
            x_shift: opts.x_shift,
            t_offset_us: opts.t_offset_us,
            ..RegistrationParams::identity()
        },
        intrinsics: CameraIntrinsics::default(),
        annotations: PathBuf::from("annotations").join(format!("{video_id}.json")),
    };
    Ok(SyntheticRecording {
        manifest,
        stream,
        rgb,
        truth,
    })
}

/// Writes `n` recordings (`v000`, `v001`, ...) with per-video seeds under
/// `dir`, plus `dir/manifest.json`. Annotation files are not created.
pub fn write_synthetic_dataset(
    dir: &Path,
    n: usize,
    opts: &SyntheticOptions,
) -> Result<(PathBuf, Vec<SyntheticRecording>), DatasetError> {
    fs::create_dir_all(dir.join("annotations"))?;
    let mut recs = Vec::with_capacity(n);
    for i in 0..n {
        let o = SyntheticOptions {
            seed: opts.seed.wrapping_add(i as u64),
            ..opts.clone()
        };
        let rec = synthetic_recording(&format!("v{i:03}"), &o)?;
        let rgb_dir = dir.join(&rec.manifest.rgb_dir);
        fs::create_dir_all(&rgb_dir)?;
        write_events_file(&dir.join(&rec.manifest.events), &rec.stream)?;
        for (f, img) in rec.rgb.iter().enumerate() {
            img.save(rgb_dir.join(format!("{f:06}.png")))?;
        }
        recs.push(rec);
    }
    let path = dir.join("manifest.json");
    let entries: Vec<_> = recs.iter().map(|r| r.manifest.clone()).collect();
    save_manifest(&path, &entries)?;
    Ok((path, recs))
}
