use image::{ImageBuffer, Pixel};
use serde::{Deserialize, Serialize};

use super::RegistrationError;

/// Pinhole intrinsics with Brown–Conrady distortion (3 radial, 2 tangential).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(default)]
    pub k1: f64,
    #[serde(default)]
    pub k2: f64,
    #[serde(default)]
    pub k3: f64,
    #[serde(default)]
    pub p1: f64,
    #[serde(default)]
    pub p2: f64,
}

impl Intrinsics {
    pub fn pinhole(fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        Self {
            fx,
            fy,
            cx,
            cy,
            k1: 0.0,
            k2: 0.0,
            k3: 0.0,
            p1: 0.0,
            p2: 0.0,
        }
    }

    pub fn validate(&self, width: u32, height: u32) -> Result<(), RegistrationError> {
        let all = [
            self.fx, self.fy, self.cx, self.cy, self.k1, self.k2, self.k3, self.p1, self.p2,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(RegistrationError::Parameter(
                "intrinsics contain non-finite values".into(),
            ));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(RegistrationError::Parameter(format!(
                "focal lengths must be positive, got ({}, {})",
                self.fx, self.fy
            )));
        }
        if self.cx < 0.0 || self.cy < 0.0 || self.cx > width as f64 || self.cy > height as f64 {
            return Err(RegistrationError::Parameter(format!(
                "principal point ({}, {}) outside {width}x{height}",
                self.cx, self.cy
            )));
        }
        Ok(())
    }

    pub fn is_distortion_free(&self) -> bool {
        [self.k1, self.k2, self.k3, self.p1, self.p2]
            .iter()
            .all(|&c| c == 0.0)
    }

    /// Maps an ideal (undistorted) pixel to where the lens images it.
    pub fn distort_pixel(&self, u: f64, v: f64) -> (f64, f64) {
        let x = (u - self.cx) / self.fx;
        let y = (v - self.cy) / self.fy;
        let r2 = x * x + y * y;
        let radial = 1.0 + r2 * (self.k1 + r2 * (self.k2 + r2 * self.k3));
        let xd = x * radial + 2.0 * self.p1 * x * y + self.p2 * (r2 + 2.0 * x * x);
        let yd = y * radial + self.p1 * (r2 + 2.0 * y * y) + 2.0 * self.p2 * x * y;
        (self.fx * xd + self.cx, self.fy * yd + self.cy)
    }
}

/// Output pixel `(u, v)` takes the bilinear sample of `img` at
/// `distort_pixel(u, v)`; samples outside the source are 0.
pub fn undistort_image<P>(
    img: &ImageBuffer<P, Vec<u8>>,
    intr: &Intrinsics,
) -> Result<ImageBuffer<P, Vec<u8>>, RegistrationError>
where
    P: Pixel<Subpixel = u8>,
{
    let (w, h) = img.dimensions();
    intr.validate(w, h)?;
    if intr.is_distortion_free() {
        return Ok(img.clone());
    }
    let channels = P::CHANNEL_COUNT as usize;
    let src = img.as_raw();
    let stride = w as usize * channels;
    let mut out = vec![0u8; src.len()];
    for v in 0..h {
        for u in 0..w {
            let (sx, sy) = intr.distort_pixel(u as f64, v as f64);
            let (sx, sy) = (snap(sx), snap(sy));
            if !(sx >= 0.0 && sy >= 0.0 && sx <= (w - 1) as f64 && sy <= (h - 1) as f64) {
                continue;
            }
            let x0 = sx.floor() as usize;
            let y0 = sy.floor() as usize;
            let x1 = (x0 + 1).min(w as usize - 1);
            let y1 = (y0 + 1).min(h as usize - 1);
            let ax = sx - x0 as f64;
            let ay = sy - y0 as f64;
            let dst = (v as usize * w as usize + u as usize) * channels;
            for c in 0..channels {
                let p = |x: usize, y: usize| src[y * stride + x * channels + c] as f64;
                let top = p(x0, y0) * (1.0 - ax) + p(x1, y0) * ax;
                let bot = p(x0, y1) * (1.0 - ax) + p(x1, y1) * ax;
                out[dst + c] = (top * (1.0 - ay) + bot * ay).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    Ok(ImageBuffer::from_raw(w, h, out).expect("same dimensions as input"))
}

/// Removes floating-point residue so that coordinates that are integral up to
/// rounding sample exactly one pixel.
fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{GrayImage, Luma, Rgb, RgbImage};

    #[test]
    fn zero_coefficients_are_exact_identity() {
        let img = RgbImage::from_fn(13, 9, |x, y| Rgb([x as u8 * 7, y as u8 * 11, (x ^ y) as u8]));
        let intr = Intrinsics::pinhole(10.0, 12.0, 6.3, 4.1);
        assert_eq!(undistort_image(&img, &intr).unwrap(), img);
    }

    #[test]
    fn principal_point_is_fixed() {
        let img = GrayImage::from_fn(33, 33, |x, y| Luma([(x * 3 + y * 5) as u8]));
        let intr = Intrinsics {
            k1: 0.3,
            k2: -0.05,
            k3: 0.01,
            p1: 0.002,
            p2: -0.001,
            ..Intrinsics::pinhole(20.0, 20.0, 16.0, 16.0)
        };
        let out = undistort_image(&img, &intr).unwrap();
        assert_eq!(out.get_pixel(16, 16), img.get_pixel(16, 16));
    }

    #[test]
    fn non_finite_or_bad_focal_rejected() {
        let img = GrayImage::new(4, 4);
        let mut intr = Intrinsics::pinhole(1.0, 1.0, 2.0, 2.0);
        intr.k1 = f64::NAN;
        assert!(undistort_image(&img, &intr).is_err());
        assert!(undistort_image(&img, &Intrinsics::pinhole(0.0, 1.0, 2.0, 2.0)).is_err());
        assert!(undistort_image(&img, &Intrinsics::pinhole(1.0, 1.0, 9.0, 2.0)).is_err());
    }

    /// A blob placed at a distorted location must come out where inverting
    /// the forward model (by Newton iteration) says it should.
    #[test]
    fn corner_displacement_matches_forward_model_inverse() {
        let intr = Intrinsics {
            k1: 0.1,
            ..Intrinsics::pinhole(32.0, 32.0, 31.5, 31.5)
        };
        // Source (distorted) spot near the top-left corner.
        let (sx, sy) = (4.0, 5.0);
        let img = GrayImage::from_fn(64, 64, |x, y| {
            let d2 = (x as f64 - sx).powi(2) + (y as f64 - sy).powi(2);
            Luma([(250.0 * (-d2 / 2.0).exp()).round() as u8])
        });
        let out = undistort_image(&img, &intr).unwrap();

        // Newton on the forward model with a numerical Jacobian.
        let (mut u, mut v) = (sx, sy);
        for _ in 0..50 {
            let (fx, fy) = intr.distort_pixel(u, v);
            let (rx, ry) = (fx - sx, fy - sy);
            let e = 1e-6;
            let (a, c) = {
                let (px, py) = intr.distort_pixel(u + e, v);
                ((px - fx) / e, (py - fy) / e)
            };
            let (b, d) = {
                let (px, py) = intr.distort_pixel(u, v + e);
                ((px - fx) / e, (py - fy) / e)
            };
            let det = a * d - b * c;
            u -= (d * rx - b * ry) / det;
            v -= (-c * rx + a * ry) / det;
        }
        assert!(u > sx && v > sy, "positive k1 pulls corner content inward");

        let (mut m, mut mx, mut my) = (0.0, 0.0, 0.0);
        for (x, y, p) in out.enumerate_pixels() {
            let w = p.0[0] as f64;
            m += w;
            mx += w * x as f64;
            my += w * y as f64;
        }
        let (cx, cy) = (mx / m, my / m);
        assert!(
            (cx - u).abs() < 0.5 && (cy - v).abs() < 0.5,
            "centroid ({cx:.3},{cy:.3}) vs oracle ({u:.3},{v:.3})"
        );
    }
}
