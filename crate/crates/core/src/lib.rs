//! Toolkit for multimodal (event camera + RGB) drone detection.
//!
//! The crate covers the whole data path of a neuromorphic/RGB detection
//! dataset and the detectors trained on it:
//!
//! - [`events`]: event streams, the `NEV1` container, pseudo-frame accumulation
//!   at the RGB frame rate and rendering.
//! - [`registration`]: undistortion, crop/pad, x-shift projection and
//!   temporal offset estimation between the two sensors.
//! - [`annotator`]: blob detection on pseudo-frames, track linking, manual
//!   edit logs and linear interpolation of tracks.
//! - [`fusion`]: a small DETR-style detector with single-modality, pooling,
//!   asymmetric cross-attention and symmetric fusion variants, with analytic
//!   gradients and a toy training harness.
//! - [`matching`]: Hungarian assignment and the set-prediction loss.
//! - [`evaluation`]: IoU/GIoU, COCO-style AP and video-wise splits.
//! - [`dataset`]: recording manifests, annotation persistence and dataset
//!   statistics.

pub mod annotator;
pub mod dataset;
pub mod evaluation;
pub mod events;
pub mod fusion;
pub mod matching;
pub mod registration;

pub use annotator::{AnnotationFile, BoxAnnotation, BoxSource, Track};
pub use evaluation::BBox;
pub use events::{AccumulationConfig, CountFrame, Event, EventStream, Polarity};
