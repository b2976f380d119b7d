//! Dense backward-mapping warp fields.
//!
//! Convention everywhere in this crate: output pixel `p` samples the input
//! image at `p + displacement(p)`. Both optical-flow fields and rasterized
//! spline warps use this representation, so they compose freely.

use std::path::Path;

use crate::core::image::FaceImage;
use crate::error::{Error, Result};

/// Per-pixel (dx, dy) displacement grid, backward-mapping.
#[derive(Clone, Debug, PartialEq)]
pub struct WarpField {
    width: usize,
    height: usize,
    dx: Vec<f32>,
    dy: Vec<f32>,
}

impl WarpField {
    pub fn new(width: usize, height: usize, dx: Vec<f32>, dy: Vec<f32>) -> Result<Self> {
        if dx.len() != width * height || dy.len() != width * height {
            return Err(Error::dims(
                "warp field buffer",
                width * height,
                dx.len().max(dy.len()),
            ));
        }
        if !dx.iter().chain(dy.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("warp displacements"));
        }
        Ok(Self {
            width,
            height,
            dx,
            dy,
        })
    }

    pub fn zero(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            dx: vec![0.0; width * height],
            dy: vec![0.0; width * height],
        }
    }

    pub fn constant(width: usize, height: usize, dx: f32, dy: f32) -> Self {
        Self {
            width,
            height,
            dx: vec![dx; width * height],
            dy: vec![dy; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> (f32, f32) {
        let i = y * self.width + x;
        (self.dx[i], self.dy[i])
    }

    pub fn dx(&self) -> &[f32] {
        &self.dx
    }

    pub fn dy(&self) -> &[f32] {
        &self.dy
    }

    /// Bilinear sample of the displacement itself, clamped at the border.
    pub fn sample(&self, x: f32, y: f32) -> (f32, f32) {
        let xc = x.clamp(0.0, (self.width - 1) as f32);
        let yc = y.clamp(0.0, (self.height - 1) as f32);
        let x0 = xc.floor() as usize;
        let y0 = yc.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = xc - x0 as f32;
        let fy = yc - y0 as f32;
        let lerp = |buf: &[f32]| {
            let v00 = buf[y0 * self.width + x0];
            let v10 = buf[y0 * self.width + x1];
            let v01 = buf[y1 * self.width + x0];
            let v11 = buf[y1 * self.width + x1];
            let top = v00 + (v10 - v00) * fx;
            let bot = v01 + (v11 - v01) * fx;
            top + (bot - top) * fy
        };
        (lerp(&self.dx), lerp(&self.dy))
    }

    /// Backward-warp an image: out(p) = image(p + disp(p)), bilinear with
    /// clamp-to-edge sampling.
    pub fn warp(&self, image: &FaceImage) -> Result<FaceImage> {
        if image.width() != self.width || image.height() != self.height {
            return Err(Error::dims(
                "warp field vs image",
                format!("{}x{}", self.width, self.height),
                format!("{}x{}", image.width(), image.height()),
            ));
        }
        let mut data = Vec::with_capacity(self.width * self.height * 3);
        for y in 0..self.height {
            for x in 0..self.width {
                let (dx, dy) = self.get(x, y);
                let px = image.sample_bilinear(x as f32 + dx, y as f32 + dy);
                data.extend_from_slice(&px);
            }
        }
        FaceImage::new(self.width, self.height, data)
    }

    /// Composition of two backward fields. If `self` warps A toward B and
    /// `then` warps B toward C, the result warps A toward C:
    /// (self ∘ then)(p) = then(p) + self(p + then(p)).
    pub fn compose(&self, then: &WarpField) -> Result<WarpField> {
        if self.width != then.width || self.height != then.height {
            return Err(Error::dims(
                "compose fields",
                format!("{}x{}", self.width, self.height),
                format!("{}x{}", then.width, then.height),
            ));
        }
        let mut dx = vec![0.0f32; self.width * self.height];
        let mut dy = vec![0.0f32; self.width * self.height];
        for y in 0..self.height {
            for x in 0..self.width {
                let (bx, by) = then.get(x, y);
                let (ax, ay) = self.sample(x as f32 + bx, y as f32 + by);
                let i = y * self.width + x;
                dx[i] = bx + ax;
                dy[i] = by + ay;
            }
        }
        WarpField::new(self.width, self.height, dx, dy)
    }

    /// Map a point through the field: p + disp(p), with the displacement read
    /// at subpixel `p` by bilinear interpolation.
    pub fn map_point(&self, x: f32, y: f32) -> (f32, f32) {
        let (dx, dy) = self.sample(x, y);
        (x + dx, y + dy)
    }

    pub fn rms_magnitude(&self) -> f64 {
        let n = (self.width * self.height) as f64;
        let s: f64 = self
            .dx
            .iter()
            .zip(&self.dy)
            .map(|(&a, &b)| (a as f64).powi(2) + (b as f64).powi(2))
            .sum();
        (s / n).sqrt()
    }

    /// Middlebury-style color wheel rendering for debugging, normalized by
    /// the field's own maximum magnitude.
    pub fn save_color_wheel_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let max_mag = self
            .dx
            .iter()
            .zip(&self.dy)
            .map(|(&a, &b)| (a * a + b * b).sqrt())
            .fold(0.0f32, f32::max)
            .max(1e-6);
        let mut buf = image::RgbImage::new(self.width as u32, self.height as u32);
        for y in 0..self.height {
            for x in 0..self.width {
                let (dx, dy) = self.get(x, y);
                let mag = (dx * dx + dy * dy).sqrt() / max_mag;
                let ang = dy.atan2(dx); // [-pi, pi]
                let hue = (ang / std::f32::consts::PI + 1.0) / 2.0 * 6.0;
                let sector = (hue.floor() as i32).rem_euclid(6);
                let f = hue - hue.floor();
                let (r, g, b) = match sector {
                    0 => (1.0, f, 0.0),
                    1 => (1.0 - f, 1.0, 0.0),
                    2 => (0.0, 1.0, f),
                    3 => (0.0, 1.0 - f, 1.0),
                    4 => (f, 0.0, 1.0),
                    _ => (1.0, 0.0, 1.0 - f),
                };
                // fade toward white at zero motion
                let mix = |c: f32| ((1.0 - mag) + mag * c).clamp(0.0, 1.0);
                buf.put_pixel(
                    x as u32,
                    y as u32,
                    image::Rgb([
                        (mix(r) * 255.0).round() as u8,
                        (mix(g) * 255.0).round() as u8,
                        (mix(b) * 255.0).round() as u8,
                    ]),
                );
            }
        }
        buf.save(path.as_ref())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_field_is_identity_warp() {
        let img = FaceImage::from_fn(20, 16, |x, y| {
            [x as f32 / 20.0, y as f32 / 16.0, 0.3]
        })
        .unwrap();
        let out = WarpField::zero(20, 16).warp(&img).unwrap();
        assert_eq!(img, out);
    }

    #[test]
    fn constant_field_shifts_ramp() {
        // linear horizontal ramp shifted by one pixel in the interior
        let img = FaceImage::from_fn(24, 16, |x, _| [x as f32, 0.0, 0.0]).unwrap();
        let out = WarpField::constant(24, 16, 1.0, 0.0).warp(&img).unwrap();
        for y in 0..16 {
            for x in 0..22 {
                let expect = (x + 1) as f32;
                assert!(
                    (out.get(x, y)[0] - expect).abs() < 1e-5,
                    "at ({x},{y}): {} vs {expect}",
                    out.get(x, y)[0]
                );
            }
        }
    }

    #[test]
    fn warp_dimension_mismatch_errors() {
        let img = FaceImage::filled(16, 16, [0.0; 3]).unwrap();
        assert!(WarpField::zero(17, 16).warp(&img).is_err());
    }

    #[test]
    fn compose_identity_element() {
        let f = WarpField::constant(18, 18, 0.75, -0.5);
        let z = WarpField::zero(18, 18);
        assert_eq!(f.compose(&z).unwrap(), f);
        assert_eq!(z.compose(&f).unwrap(), f);
    }

    #[test]
    fn compose_constant_translations_add_in_interior() {
        let a = WarpField::constant(20, 20, 1.5, 0.0);
        let b = WarpField::constant(20, 20, 0.5, -1.0);
        let c = a.compose(&b).unwrap();
        // interior far enough from the clamped border
        for y in 3..16 {
            for x in 3..16 {
                let (dx, dy) = c.get(x, y);
                assert!((dx - 2.0).abs() < 1e-6 && (dy + 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn compose_associative_on_smooth_fields() {
        let w = 32;
        let h = 32;
        let smooth = |k: f32| {
            let mut dx = vec![0.0; w * h];
            let mut dy = vec![0.0; w * h];
            for y in 0..h {
                for x in 0..w {
                    let i = y * w + x;
                    dx[i] = (x as f32 / w as f32 * std::f32::consts::PI).sin() * k;
                    dy[i] = (y as f32 / h as f32 * std::f32::consts::PI).cos() * k * 0.5;
                }
            }
            WarpField::new(w, h, dx, dy).unwrap()
        };
        let (f, g, hh) = (smooth(0.8), smooth(-0.6), smooth(0.4));
        let left = f.compose(&g).unwrap().compose(&hh).unwrap();
        let right = f.compose(&g.compose(&hh).unwrap()).unwrap();
        let mut max_err = 0.0f32;
        for y in 2..h - 2 {
            for x in 2..w - 2 {
                let (ax, ay) = left.get(x, y);
                let (bx, by) = right.get(x, y);
                max_err = max_err.max((ax - bx).abs()).max((ay - by).abs());
            }
        }
        assert!(max_err <= 0.1, "associativity error {max_err}");
    }
}
