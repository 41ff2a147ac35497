//! Recording manifests, per-video annotation files and dataset statistics.
//!
//! A dataset manifest is one JSON array of [`RecordingManifest`] entries.
//! Relative paths are resolved against the manifest's directory at load
//! time. Annotations live in one [`AnnotationFile`] per video, named
//! `<video_id>.json` inside an annotation directory.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::{GrayImage, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotator::AnnotationFile;
use crate::fusion::MultiImage;
use crate::events::{accumulate, accumulate_window, render_frame, AccumulationConfig, CountFrame, EventError, EventStream};
use crate::registration::{
    apply_offset, crop_pad_rgb, estimate_temporal_offset, event_activity, rgb_activity, shift_image, undistort_image,
    Intrinsics, OffsetEstimate, RegistrationError, RegistrationParams,
};

mod synthetic;

pub use synthetic::{synthetic_recording, write_synthetic_dataset, SyntheticOptions, SyntheticRecording};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{file}: schema error at `{path}`: {message}")]
    Schema {
        file: String,
        path: String,
        message: String,
    },
    #[error("entry `{video_id}`: {message}")]
    Invalid { video_id: String, message: String },
    #[error("duplicate video_id `{0}`")]
    Duplicate(String),
    #[error("entry `{video_id}`: {what} {path}: {source}")]
    Missing {
        video_id: String,
        what: &'static str,
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Events(#[from] EventError),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

/// Per-camera intrinsics, both optional.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event: Option<Intrinsics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rgb: Option<Intrinsics>,
}

/// One synchronized event/RGB recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordingManifest {
    pub video_id: String,
    /// `.nev` or `.csv` event file.
    pub events: PathBuf,
    /// Directory of RGB frames named `000000.png`, `000001.png`, ...
    pub rgb_dir: PathBuf,
    pub fps: f64,
    /// Registered frame size shared by both modalities.
    pub width: u32,
    pub height: u32,
    /// RGB frames in the recording, one event frame each.
    pub frames: u32,
    pub registration: RegistrationParams,
    #[serde(default)]
    pub intrinsics: CameraIntrinsics,
    /// Annotation file; may not exist yet before the first annotation pass.
    pub annotations: PathBuf,
}

impl RecordingManifest {
    pub fn rgb_frame_path(&self, index: u32) -> PathBuf {
        self.rgb_dir.join(format!("{index:06}.png"))
    }

    pub fn load_rgb_frame(&self, index: u32) -> Result<RgbImage, DatasetError> {
        Ok(image::open(self.rgb_frame_path(index))?.to_rgb8())
    }

    pub fn load_events(&self) -> Result<EventStream, DatasetError> {
        let dims = (clamp_u16(self.width), clamp_u16(self.height));
        Ok(crate::events::read_events_file(&self.events, Some(dims))?)
    }

    /// Event stream moved onto the RGB clock by the registered offset.
    pub fn load_events_synced(&self) -> Result<EventStream, DatasetError> {
        let stream = self.load_events()?;
        if (stream.width() as u32, stream.height() as u32) != (self.width, self.height) {
            return Err(DatasetError::Invalid {
                video_id: self.video_id.clone(),
                message: format!(
                    "event sensor is {}x{}, manifest says {}x{}",
                    stream.width(),
                    stream.height(),
                    self.width,
                    self.height
                ),
            });
        }
        Ok(apply_offset(&stream, self.registration.t_offset_us).0)
    }

    pub fn accumulation(&self) -> Result<AccumulationConfig, DatasetError> {
        Ok(AccumulationConfig::from_fps_f64(self.fps)?)
    }

    /// RGB frame in event coordinates: undistorted, cropped/padded to the
    /// registered size and shifted by `x_shift`.
    pub fn registered_rgb(&self, index: u32) -> Result<RgbImage, DatasetError> {
        let raw = self.load_rgb_frame(index)?;
        let reg = |e: RegistrationError| DatasetError::Invalid {
            video_id: self.video_id.clone(),
            message: e.to_string(),
        };
        let raw = match &self.intrinsics.rgb {
            Some(k) => undistort_image(&raw, k).map_err(reg)?,
            None => raw,
        };
        let placed = crop_pad_rgb(&raw, &self.registration, self.width, self.height).map_err(reg)?;
        Ok(shift_image(&placed, self.registration.x_shift))
    }

    /// Event pseudo-frame `index` of a stream already on the RGB clock.
    pub fn event_frame(&self, synced: &EventStream, index: u32) -> Result<CountFrame, DatasetError> {
        Ok(accumulate_window(synced, &self.accumulation()?, index as usize))
    }

    /// Rendered event frame, undistorted when event intrinsics are given.
    pub fn registered_event_render(&self, synced: &EventStream, index: u32) -> Result<GrayImage, DatasetError> {
        let img = render_frame(&self.event_frame(synced, index)?);
        match &self.intrinsics.event {
            Some(k) => undistort_image(&img, k).map_err(|e| DatasetError::Invalid {
                video_id: self.video_id.clone(),
                message: e.to_string(),
            }),
            None => Ok(img),
        }
    }

    /// Registered event and RGB frame `index` as detector inputs,
    /// box-filtered by `downsample`.
    pub fn model_inputs(
        &self,
        synced: &EventStream,
        index: u32,
        downsample: usize,
    ) -> Result<(MultiImage, MultiImage), DatasetError> {
        let ev = MultiImage::from_count_frame(&self.event_frame(synced, index)?);
        let rgb = MultiImage::from_rgb(&self.registered_rgb(index)?);
        Ok((ev.downsample(downsample), rgb.downsample(downsample)))
    }

    /// Cross-correlates per-frame activity of the raw event stream and the
    /// RGB frames. The estimate replaces, not adds to, the registered offset.
    pub fn estimate_offset(&self, max_lag: usize) -> Result<OffsetEstimate, DatasetError> {
        let cfg = self.accumulation()?;
        let stream = self.load_events()?;
        let frames = accumulate(&stream, &cfg, self.frames as u64 * cfg.interval_us()).frames;
        let rgb = (0..self.frames)
            .map(|i| Ok(image::DynamicImage::from(self.load_rgb_frame(i)?).to_luma8()))
            .collect::<Result<Vec<_>, DatasetError>>()?;
        estimate_temporal_offset(&event_activity(&frames), &rgb_activity(&rgb), max_lag, &cfg).map_err(|e| {
            DatasetError::Invalid {
                video_id: self.video_id.clone(),
                message: e.to_string(),
            }
        })
    }

    /// Loads the annotation file, or an empty one when it does not exist.
    pub fn load_annotations_or_empty(&self) -> Result<AnnotationFile, DatasetError> {
        if self.annotations.exists() {
            load_annotations(&self.annotations)
        } else {
            Ok(AnnotationFile::new(&self.video_id, self.fps, self.width, self.height))
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.frames as f64 / self.fps
    }

    fn validate(&self) -> Result<(), DatasetError> {
        let bad = |message: String| DatasetError::Invalid {
            video_id: self.video_id.clone(),
            message,
        };
        if self.video_id.is_empty() {
            return Err(bad("video_id is empty".into()));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(bad(format!("fps must be positive, got {}", self.fps)));
        }
        if self.width == 0 || self.height == 0 || self.width > u16::MAX as u32 || self.height > u16::MAX as u32 {
            return Err(bad(format!("resolution {}x{} out of range", self.width, self.height)));
        }
        self.registration
            .validate(self.width)
            .map_err(|e| bad(format!("registration: {e}")))?;
        if let Some(k) = self.intrinsics.event {
            k.validate(self.width, self.height)
                .map_err(|e| bad(format!("event intrinsics: {e}")))?;
        }
        // the RGB source size is only known once a frame is read
        if let Some(k) = self.intrinsics.rgb {
            k.validate(u32::MAX, u32::MAX)
                .map_err(|e| bad(format!("rgb intrinsics: {e}")))?;
        }
        Ok(())
    }

    fn resolve(&mut self, base: &Path) {
        for p in [&mut self.events, &mut self.rgb_dir, &mut self.annotations] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    fn check_paths(&self) -> Result<(), DatasetError> {
        let missing = |what, path: &Path, source| DatasetError::Missing {
            video_id: self.video_id.clone(),
            what,
            path: path.to_path_buf(),
            source,
        };
        fs::metadata(&self.events).map_err(|e| missing("event file", &self.events, e))?;
        let meta = fs::metadata(&self.rgb_dir).map_err(|e| missing("rgb directory", &self.rgb_dir, e))?;
        if !meta.is_dir() {
            let e = std::io::Error::new(std::io::ErrorKind::NotADirectory, "not a directory");
            return Err(missing("rgb directory", &self.rgb_dir, e));
        }
        Ok(())
    }
}

fn clamp_u16(v: u32) -> u16 {
    v.min(u16::MAX as u32) as u16
}

/// Parses and validates a manifest document without touching the file
/// system. `origin` names the document in errors.
pub fn parse_manifest(json: &str, origin: &str) -> Result<Vec<RecordingManifest>, DatasetError> {
    let de = &mut serde_json::Deserializer::from_str(json);
    let entries: Vec<RecordingManifest> = serde_path_to_error::deserialize(de).map_err(|e| DatasetError::Schema {
        file: origin.to_string(),
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    let mut seen = BTreeSet::new();
    for m in &entries {
        m.validate()?;
        if !seen.insert(m.video_id.as_str()) {
            return Err(DatasetError::Duplicate(m.video_id.clone()));
        }
    }
    Ok(entries)
}

/// Reads a manifest, resolves relative paths against its directory and
/// checks that every event file and RGB directory exists.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<RecordingManifest>, DatasetError> {
    let path = path.as_ref();
    let mut entries = parse_manifest(&fs::read_to_string(path)?, &path.display().to_string())?;
    let base = path.parent().unwrap_or(Path::new(""));
    for m in &mut entries {
        m.resolve(base);
        m.check_paths()?;
    }
    Ok(entries)
}

pub fn manifest_to_json(entries: &[RecordingManifest]) -> String {
    serde_json::to_string_pretty(entries).expect("manifest serialises")
}

pub fn save_manifest(path: impl AsRef<Path>, entries: &[RecordingManifest]) -> Result<(), DatasetError> {
    write_atomic(path.as_ref(), manifest_to_json(entries).as_bytes())
}

/// Replaces `path` by writing a sibling temporary file and renaming it.
/// Missing parent directories are created.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), DatasetError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| DatasetError::Io(e.error))?;
    Ok(())
}

pub fn load_annotations(path: impl AsRef<Path>) -> Result<AnnotationFile, DatasetError> {
    let path = path.as_ref();
    let raw = fs::read_to_string(path)?;
    let de = &mut serde_json::Deserializer::from_str(&raw);
    serde_path_to_error::deserialize(de).map_err(|e| DatasetError::Schema {
        file: path.display().to_string(),
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

/// Writes boxes sorted by `(frame, track_id)`, atomically.
pub fn save_annotations(path: impl AsRef<Path>, ann: &AnnotationFile) -> Result<(), DatasetError> {
    let mut ann = ann.clone();
    ann.normalize();
    let mut text = ann.to_json_pretty();
    text.push('\n');
    write_atomic(path.as_ref(), text.as_bytes())
}

/// Loads `<dir>/<video_id>.json` for every entry. A missing file is an
/// error naming the video.
pub fn load_annotation_dir(
    dir: impl AsRef<Path>,
    entries: &[RecordingManifest],
) -> Result<BTreeMap<String, AnnotationFile>, DatasetError> {
    let mut out = BTreeMap::new();
    for m in entries {
        let path = dir.as_ref().join(format!("{}.json", m.video_id));
        if !path.exists() {
            return Err(DatasetError::Missing {
                video_id: m.video_id.clone(),
                what: "annotation file",
                path,
                source: std::io::Error::from(std::io::ErrorKind::NotFound),
            });
        }
        let ann = load_annotations(&path)?;
        if ann.video_id != m.video_id {
            return Err(DatasetError::Invalid {
                video_id: m.video_id.clone(),
                message: format!("annotation file is for `{}`", ann.video_id),
            });
        }
        out.insert(m.video_id.clone(), ann);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    /// Frames per modality.
    pub frames_total: u64,
    pub frames_with_drone: u64,
    pub frames_without_drone: u64,
    pub total_seconds: f64,
    pub video_count: usize,
    /// `None` when recordings disagree.
    pub fps: Option<f64>,
    pub resolution: Option<(u32, u32)>,
}

impl DatasetStats {
    pub fn with_drone_fraction(&self) -> f64 {
        if self.frames_total == 0 {
            0.0
        } else {
            self.frames_with_drone as f64 / self.frames_total as f64
        }
    }
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pct = 100.0 * self.with_drone_fraction();
        let total_pct = if self.frames_total == 0 { 0.0 } else { 100.0 };
        writeln!(f, "Frames per modality   {:>10}", self.frames_total)?;
        writeln!(f, "Frames with drone     {:>10}  ({pct:.1}%)", self.frames_with_drone)?;
        writeln!(
            f,
            "Frames without drone  {:>10}  ({:.1}%)",
            self.frames_without_drone,
            total_pct - pct
        )?;
        let secs = self.total_seconds.round() as u64;
        writeln!(f, "Total length          {:>4}h {:02}m {:02}s", secs / 3600, secs / 60 % 60, secs % 60)?;
        writeln!(f, "Videos                {:>10}", self.video_count)?;
        match self.fps {
            Some(v) => writeln!(f, "Frame rate            {v:>10} fps")?,
            None => writeln!(f, "Frame rate                 mixed")?,
        }
        match self.resolution {
            Some((w, h)) => write!(f, "Resolution            {:>10}", format!("{w}x{h}")),
            None => write!(f, "Resolution                 mixed"),
        }
    }
}

fn common<T: PartialEq + Copy>(v: impl IntoIterator<Item = T>) -> Option<T> {
    let mut it = v.into_iter();
    let first = it.next()?;
    it.all(|x| x == first).then_some(first)
}

/// Frame counts come from the manifests; a frame has a drone iff its
/// annotation file holds at least one box for it. Videos without an entry in
/// `annotations` count as drone-free, and boxes past the last frame are
/// ignored.
pub fn dataset_stats(entries: &[RecordingManifest], annotations: &BTreeMap<String, AnnotationFile>) -> DatasetStats {
    let mut frames_total = 0u64;
    let mut with = 0u64;
    let mut seconds = 0.0;
    for m in entries {
        frames_total += m.frames as u64;
        seconds += m.duration_s();
        if let Some(ann) = annotations.get(&m.video_id) {
            let frames: BTreeSet<u32> = ann.boxes.iter().map(|b| b.frame).filter(|&f| f < m.frames).collect();
            with += frames.len() as u64;
        }
    }
    DatasetStats {
        frames_total,
        frames_with_drone: with,
        frames_without_drone: frames_total - with,
        total_seconds: seconds,
        video_count: entries.len(),
        fps: common(entries.iter().map(|m| m.fps)),
        resolution: common(entries.iter().map(|m| (m.width, m.height))),
    }
}
