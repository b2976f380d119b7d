//! Linear-light RGB raster. All pipeline math happens on `f32` channels in
//! nominal range [0,1]; intermediate results (subspace projections, pyramid
//! bands) may leave that range, so only finiteness is enforced.

use std::path::Path;

use crate::error::{Error, Result};

pub const MIN_IMAGE_DIM: usize = 16;

/// Row-major RGB image with floating-point channels.
///
/// 8-bit inputs are mapped to [0,1] by dividing by 255; no gamma decoding is
/// applied, so averaging and blending operate in stored-value space.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl FaceImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width < MIN_IMAGE_DIM || height < MIN_IMAGE_DIM {
            return Err(Error::InvalidInput(format!(
                "image must be at least {MIN_IMAGE_DIM}x{MIN_IMAGE_DIM}, got {width}x{height}"
            )));
        }
        if data.len() != width * height * 3 {
            return Err(Error::dims("image buffer", width * height * 3, data.len()));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("image channels"));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self::new(width, height, data)
    }

    /// Build from a per-pixel closure returning RGB.
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [f32; 3],
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Overwrite one pixel. Callers are responsible for finiteness; the
    /// invariant is re-checked wherever images cross an API boundary.
    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i] = rgb[0];
        self.data[i + 1] = rgb[1];
        self.data[i + 2] = rgb[2];
    }

    /// Bilinear sample with clamp-to-edge semantics; coordinates are pixel
    /// centers, so (0,0) is the first pixel exactly.
    pub fn sample_bilinear(&self, x: f32, y: f32) -> [f32; 3] {
        let xc = x.clamp(0.0, (self.width - 1) as f32);
        let yc = y.clamp(0.0, (self.height - 1) as f32);
        let x0 = xc.floor() as usize;
        let y0 = yc.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = xc - x0 as f32;
        let fy = yc - y0 as f32;
        let p00 = self.get(x0, y0);
        let p10 = self.get(x1, y0);
        let p01 = self.get(x0, y1);
        let p11 = self.get(x1, y1);
        let mut out = [0.0f32; 3];
        for c in 0..3 {
            let top = p00[c] + (p10[c] - p00[c]) * fx;
            let bot = p01[c] + (p11[c] - p01[c]) * fx;
            out[c] = top + (bot - top) * fy;
        }
        out
    }

    /// Rec. 601 luma of the stored values, one f64 per pixel.
    pub fn luminance(&self) -> Vec<f64> {
        self.data
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
            .collect()
    }

    /// Per-channel mean over the whole image.
    pub fn mean_rgb(&self) -> [f64; 3] {
        let mut sum = [0.0f64; 3];
        for p in self.data.chunks_exact(3) {
            for c in 0..3 {
                sum[c] += p[c] as f64;
            }
        }
        let n = (self.width * self.height) as f64;
        [sum[0] / n, sum[1] / n, sum[2] / n]
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path.as_ref())?.to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let data = img.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
        Self::new(w, h, data)
    }

    /// Writes 8-bit PNG; channels are clamped to [0,1] and scaled by 255.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("buffer size matches dimensions");
        buf.save(path.as_ref())?;
        Ok(())
    }
}
