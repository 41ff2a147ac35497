//! A small DETR-style detector over event and RGB images.
//!
//! Both modalities are cut into patch tokens, refined by self-attention and
//! combined by one of the fusion strategies before learned object queries
//! decode them into class probabilities and boxes. Every block has an
//! analytic backward pass; [`grad_check`] compares them against central
//! differences.
//!
//! The desk-scale defaults are width 64 with one head (DETR itself uses 256
//! and eight heads), a linear patch embedding in place of a CNN backbone,
//! and one encoder and one decoder layer.

mod attention;
mod config;
mod gradcheck;
mod layers;
mod network;
mod params;
mod train;

pub use config::{valid_pairs, Cutoff, FusionConfig, Strategy};
pub use gradcheck::{detect_grad_check, grad_check, GRAD_CHECK_OPS};
pub use layers::{positional_encoding, predict_heads, tokenize};
pub use network::{
    asymmetric_inject, decode_queries, forward_detect, loss_and_grad, pool_fuse,
    self_attention_encode, symmetric_fuse,
};
pub use params::{decode_weights, encode_weights, load_weights, save_weights, ParamStore, Tensors};
pub use train::{
    detections_for, toy_dataset, train_toy, AdamW, ToySample, TrainOptions, TrainReport,
};

pub use crate::matching::DetectionSet;

use ndarray::Array2;
use thiserror::Error;

use crate::matching::MatchError;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("shape: {0}")]
    Shape(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("weights file: {0}")]
    Format(String),
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `N × d` spatial tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSet {
    tokens: Array2<f64>,
}

impl TokenSet {
    pub fn new(tokens: Array2<f64>) -> Result<Self, FusionError> {
        if tokens.nrows() == 0 || tokens.ncols() == 0 {
            return Err(FusionError::Shape("token set must be non-empty".into()));
        }
        if tokens.iter().any(|v| !v.is_finite()) {
            return Err(FusionError::NonFinite("token set".into()));
        }
        Ok(Self { tokens })
    }

    pub fn n(&self) -> usize {
        self.tokens.nrows()
    }

    pub fn d(&self) -> usize {
        self.tokens.ncols()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.tokens
    }

    pub fn into_array(self) -> Array2<f64> {
        self.tokens
    }
}

/// Channel-major image with real-valued pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiImage {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl MultiImage {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            data: self.data.iter().map(|v| v * k).collect(),
            ..self.clone()
        }
    }

    /// RGB pixels scaled to `[0, 1]`.
    pub fn from_rgb(img: &image::RgbImage) -> Self {
        let (w, h) = img.dimensions();
        let mut out = Self::zeros(3, h as usize, w as usize);
        for (x, y, p) in img.enumerate_pixels() {
            for c in 0..3 {
                out.set(c, y as usize, x as usize, f64::from(p[c]) / 255.0);
            }
        }
        out
    }

    /// ON and OFF counts as two channels, each scaled by the frame maximum.
    pub fn from_count_frame(frame: &crate::events::CountFrame) -> Self {
        let (w, h) = (frame.width() as usize, frame.height() as usize);
        let mut out = Self::zeros(2, h, w);
        let max = frame
            .on_counts()
            .iter()
            .chain(frame.off_counts())
            .copied()
            .max()
            .unwrap_or(0)
            .max(1) as f64;
        for y in 0..h {
            for x in 0..w {
                out.set(0, y, x, f64::from(frame.on(x as u16, y as u16)) / max);
                out.set(1, y, x, f64::from(frame.off(x as u16, y as u16)) / max);
            }
        }
        out
    }

    /// Box-filter downsampling by an integer factor.
    pub fn downsample(&self, k: usize) -> Self {
        if k <= 1 {
            return self.clone();
        }
        let (h, w) = (self.height / k, self.width / k);
        let mut out = Self::zeros(self.channels, h, w);
        let norm = (k * k) as f64;
        for c in 0..self.channels {
            for y in 0..h {
                for x in 0..w {
                    let mut s = 0.0;
                    for dy in 0..k {
                        for dx in 0..k {
                            s += self.get(c, y * k + dy, x * k + dx);
                        }
                    }
                    out.set(c, y, x, s / norm);
                }
            }
        }
        out
    }
}
