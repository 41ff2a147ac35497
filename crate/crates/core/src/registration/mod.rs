//! Spatial and temporal alignment of the event and RGB sensors.
//!
//! The two cameras sit side by side on one mount, so after undistortion and
//! a crop/pad of the RGB frame the images overlap up to a horizontal shift.
//! Boxes are stored in event-frame coordinates; [`shift_project`] moves them
//! into the RGB frame and back.

mod sync;
mod undistort;

pub use sync::{
    apply_offset, estimate_temporal_offset, event_activity, rgb_activity, OffsetEstimate,
    OffsetReport,
};
pub use undistort::{undistort_image, Intrinsics};

use image::{ImageBuffer, Pixel};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotator::BoxAnnotation;

#[derive(Debug, Error, PartialEq)]
pub enum RegistrationError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("temporal offset undefined: {0}")]
    UndefinedOffset(String),
}

/// Axis-aligned crop of the source RGB frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

/// Zero padding added around the cropped RGB frame.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Padding {
    pub left: u32,
    pub top: u32,
    pub right: u32,
    pub bottom: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegistrationParams {
    /// Column offset from event to RGB coordinates.
    pub x_shift: i32,
    /// Event clock minus RGB clock, microseconds.
    pub t_offset_us: i64,
    /// `None` keeps the full source frame.
    #[serde(default)]
    pub crop: Option<CropRect>,
    #[serde(default)]
    pub pad: Padding,
}

impl RegistrationParams {
    pub fn identity() -> Self {
        Self {
            x_shift: 0,
            t_offset_us: 0,
            crop: None,
            pad: Padding::default(),
        }
    }

    pub fn with_x_shift(mut self, x_shift: i32) -> Self {
        self.x_shift = x_shift;
        self
    }

    pub fn validate(&self, width: u32) -> Result<(), RegistrationError> {
        if self.x_shift.unsigned_abs() >= width {
            return Err(RegistrationError::Parameter(format!(
                "|x_shift| = {} must be below the width {width}",
                self.x_shift.unsigned_abs()
            )));
        }
        Ok(())
    }
}

impl Default for RegistrationParams {
    fn default() -> Self {
        Self::identity()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    EventToRgb,
    RgbToEvent,
}

/// Result of moving a box between the two domains.
#[derive(Debug, Clone, PartialEq)]
pub enum Projected {
    Full(BoxAnnotation),
    /// Clipped at the destination border.
    Partial(BoxAnnotation),
    OutOfView,
}

impl Projected {
    pub fn into_box(self) -> Option<BoxAnnotation> {
        match self {
            Projected::Full(b) | Projected::Partial(b) => Some(b),
            Projected::OutOfView => None,
        }
    }
}

/// Translates a box by `±x_shift` and clips it to a `width × height` destination.
pub fn shift_project(
    b: &BoxAnnotation,
    params: &RegistrationParams,
    direction: Direction,
    width: u32,
    height: u32,
) -> Projected {
    let dx = match direction {
        Direction::EventToRgb => params.x_shift as f64,
        Direction::RgbToEvent => -(params.x_shift as f64),
    };
    let x0 = b.x + dx;
    let x1 = x0 + b.w;
    let (y0, y1) = (b.y, b.y + b.h);
    let cx0 = x0.max(0.0);
    let cx1 = x1.min(width as f64);
    let cy0 = y0.max(0.0);
    let cy1 = y1.min(height as f64);
    if cx1 <= cx0 || cy1 <= cy0 {
        return Projected::OutOfView;
    }
    let mut out = b.clone();
    if cx0 == x0 && cx1 == x1 && cy0 == y0 && cy1 == y1 {
        out.x = x0;
        return Projected::Full(out);
    }
    out.x = cx0;
    out.y = cy0;
    out.w = cx1 - cx0;
    out.h = cy1 - cy0;
    Projected::Partial(out)
}

/// Crops `params.crop` out of `img`, then places it on a zero canvas of
/// `target_w × target_h` after `pad.left`/`pad.top`. Content that does not
/// fit is cut; uncovered canvas stays 0.
pub fn crop_pad_rgb<P>(
    img: &ImageBuffer<P, Vec<u8>>,
    params: &RegistrationParams,
    target_w: u32,
    target_h: u32,
) -> Result<ImageBuffer<P, Vec<u8>>, RegistrationError>
where
    P: Pixel<Subpixel = u8>,
{
    if target_w == 0 || target_h == 0 {
        return Err(RegistrationError::Parameter(format!(
            "target {target_w}x{target_h} is empty"
        )));
    }
    let (sw, sh) = img.dimensions();
    let crop = params.crop.unwrap_or(CropRect {
        x: 0,
        y: 0,
        w: sw,
        h: sh,
    });
    if crop.w == 0
        || crop.h == 0
        || crop.x.checked_add(crop.w).is_none_or(|r| r > sw)
        || crop.y.checked_add(crop.h).is_none_or(|b| b > sh)
    {
        return Err(RegistrationError::Parameter(format!(
            "crop {crop:?} outside {sw}x{sh} source"
        )));
    }
    let mut out = ImageBuffer::<P, Vec<u8>>::new(target_w, target_h);
    let (left, top) = (params.pad.left, params.pad.top);
    for y in 0..crop.h {
        let ty = top as u64 + y as u64;
        if ty >= target_h as u64 {
            break;
        }
        for x in 0..crop.w {
            let tx = left as u64 + x as u64;
            if tx >= target_w as u64 {
                break;
            }
            out.put_pixel(tx as u32, ty as u32, *img.get_pixel(crop.x + x, crop.y + y));
        }
    }
    Ok(out)
}

/// Resamples an RGB frame into event coordinates: pixel `(x, y)` of the
/// result is pixel `(x + x_shift, y)` of `img`, zero where that falls outside.
pub fn shift_image<P>(img: &ImageBuffer<P, Vec<u8>>, x_shift: i32) -> ImageBuffer<P, Vec<u8>>
where
    P: Pixel<Subpixel = u8>,
{
    let (w, h) = img.dimensions();
    let zeros = vec![0u8; P::CHANNEL_COUNT as usize];
    let zero = *P::from_slice(&zeros);
    ImageBuffer::from_fn(w, h, |x, y| {
        let sx = x as i64 + x_shift as i64;
        if sx >= 0 && sx < w as i64 {
            *img.get_pixel(sx as u32, y)
        } else {
            zero
        }
    })
}
