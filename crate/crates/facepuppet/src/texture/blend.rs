//! Expression-weighted multi-scale blending.
//!
//! Every photo contributes one band-pass pyramid. Per level and per pixel,
//! contributions are combined as a normalized weighted mean whose weight has
//! three factors: how close the photo's expression is to the requested one
//! (a Gaussian in fiducial distance), a uniform floor `τ·l^(−β)` that takes
//! over in coarse levels, and the local detail response `L^α` of the band
//! itself. Level 0 — the low-pass residual — is blended with plain uniform
//! weights so the overall color always reflects the whole collection, while
//! fine levels are free to pick detail from the expression-matched photos.

use crate::core::fiducials::FiducialSet;
use crate::error::{Error, Result};
use crate::texture::pyramid::{Band, Pyramid};

/// Floor for the detail response so high-band weights never vanish entirely.
const RESPONSE_FLOOR: f32 = 1e-4;

/// Knobs of the weighted blend.
///
/// `sigma` is the expression bandwidth in canonical-grid pixels; `alpha`
/// exponentiates the per-pixel detail response; `beta` controls how fast the
/// uniform term fades towards fine levels; `tau` scales it; `depth` picks the
/// pyramid depth (`None` derives it from the image size).
#[derive(Clone, Debug, PartialEq)]
pub struct BlendParams {
    pub sigma: f64,
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
    pub depth: Option<usize>,
}

impl Default for BlendParams {
    fn default() -> Self {
        BlendParams {
            sigma: 10.0,
            alpha: 1.0,
            beta: 20.0,
            tau: 1.0,
            depth: None,
        }
    }
}

impl BlendParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::InvalidInput(format!(
                "expression bandwidth sigma must be positive, got {}",
                self.sigma
            )));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "detail exponent alpha must be non-negative, got {}",
                self.alpha
            )));
        }
        if !self.beta.is_finite() {
            return Err(Error::InvalidInput(format!(
                "level-decay exponent beta must be finite, got {}",
                self.beta
            )));
        }
        if !(self.tau.is_finite() && self.tau >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "uniform-term scale tau must be non-negative, got {}",
                self.tau
            )));
        }
        Ok(())
    }
}

/// Gaussian similarity of two landmark sets: exp(−d²/2σ²) where d is their
/// Frobenius distance. 1 for identical sets, strictly decreasing in d.
pub fn expression_weight(target: &FiducialSet, candidate: &FiducialSet, sigma: f64) -> f64 {
    let d = target.distance(candidate);
    (-d * d / (2.0 * sigma * sigma)).exp()
}

/// The uniform-weight term for a detail level (levels are numbered from the
/// coarsest residual at 0; the residual itself never calls this).
fn uniform_term(level: usize, params: &BlendParams) -> f64 {
    params.tau * (level as f64).powf(-params.beta)
}

/// Per-pixel detail response of a band: L2 magnitude over RGB, smoothed by a
/// 3×3 box (windows are clipped at the borders), floored at a small positive
/// value.
pub fn detail_response(band: &Band) -> Vec<f32> {
    let (w, h) = (band.width(), band.height());
    let data = band.data();
    let mut mag = vec![0.0f32; w * h];
    for (p, m) in mag.iter_mut().enumerate() {
        let i = p * 3;
        *m = (data[i] * data[i] + data[i + 1] * data[i + 1] + data[i + 2] * data[i + 2]).sqrt();
    }
    let mut out = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut sum = 0.0f32;
            let mut count = 0u32;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (sx, sy) = (x as i64 + dx, y as i64 + dy);
                    if sx >= 0 && sy >= 0 && (sx as usize) < w && (sy as usize) < h {
                        sum += mag[sy as usize * w + sx as usize];
                        count += 1;
                    }
                }
            }
            out[y * w + x] = (sum / count as f32).max(RESPONSE_FLOOR);
        }
    }
    out
}

/// The full per-pixel weight map of one photo's band at `level`, given the
/// photo's expression weight. Level 0 is uniform by convention.
pub fn level_weight_map(
    band: &Band,
    expression_w: f64,
    level: usize,
    params: &BlendParams,
) -> Vec<f32> {
    let wh = band.width() * band.height();
    if level == 0 {
        return vec![1.0; wh];
    }
    let scalar = expression_w + uniform_term(level, params);
    detail_response(band)
        .into_iter()
        .map(|r| (scalar * (r as f64).powf(params.alpha)) as f32)
        .collect()
}

/// One photo's pyramid with its per-level detail responses precomputed, so a
/// single preparation step can serve many different blend targets.
#[derive(Clone, Debug)]
pub struct PyramidEntry {
    pyramid: Pyramid,
    responses: Vec<Vec<f32>>,
}

impl PyramidEntry {
    pub fn new(pyramid: Pyramid) -> PyramidEntry {
        let responses = pyramid
            .bands()
            .iter()
            .enumerate()
            .map(|(level, band)| {
                if level == 0 {
                    Vec::new()
                } else {
                    detail_response(band)
                }
            })
            .collect();
        PyramidEntry { pyramid, responses }
    }

    pub fn pyramid(&self) -> &Pyramid {
        &self.pyramid
    }
}

/// What the blend had to do besides straightforward weighting.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BlendDiagnostics {
    /// Pixels (summed over levels) where every weight vanished and the blend
    /// fell back to the unweighted mean.
    pub zero_weight_pixels: usize,
}

/// Blend the entries' pyramids into one. `expression[i]` is photo i's
/// expression weight against the target. Sums run in double precision in the
/// order the entries are given, so the result is deterministic and callers
/// that fix the entry order (collections are id-sorted) get bit-identical
/// outputs regardless of how the inputs were discovered.
pub fn blend_pyramids(
    entries: &[PyramidEntry],
    expression: &[f64],
    params: &BlendParams,
) -> Result<(Pyramid, BlendDiagnostics)> {
    params.validate()?;
    if entries.is_empty() {
        return Err(Error::Empty("pyramid collection".into()));
    }
    if expression.len() != entries.len() {
        return Err(Error::dims(
            "expression weights",
            entries.len(),
            expression.len(),
        ));
    }
    for (i, e) in expression.iter().enumerate() {
        if !(e.is_finite() && *e >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "expression weight {i} must be finite and non-negative, got {e}"
            )));
        }
    }
    let shape: Vec<(usize, usize)> = entries[0]
        .pyramid
        .bands()
        .iter()
        .map(|b| (b.width(), b.height()))
        .collect();
    for entry in entries {
        let this: Vec<(usize, usize)> = entry
            .pyramid
            .bands()
            .iter()
            .map(|b| (b.width(), b.height()))
            .collect();
        if this != shape {
            return Err(Error::dims(
                "pyramid shapes",
                format!("{shape:?}"),
                format!("{this:?}"),
            ));
        }
    }

    let alpha_is_one = params.alpha == 1.0;
    let mut diagnostics = BlendDiagnostics::default();
    let mut bands = Vec::with_capacity(shape.len());
    for (level, &(w, h)) in shape.iter().enumerate() {
        let wh = w * h;
        let mut num = vec![0.0f64; wh * 3];
        let mut den = vec![0.0f64; wh];

        if level == 0 {
            for entry in entries {
                let data = entry.pyramid.band(0).data();
                for (acc, v) in num.iter_mut().zip(data.iter()) {
                    *acc += *v as f64;
                }
            }
            let n = entries.len() as f64;
            let data: Vec<f32> = num.iter().map(|v| (v / n) as f32).collect();
            bands.push(Band::from_raw(w, h, data));
            continue;
        }

        let ul = uniform_term(level, params);
        for (entry, e) in entries.iter().zip(expression.iter()) {
            let scalar = e + ul;
            let resp = &entry.responses[level];
            let data = entry.pyramid.band(level).data();
            for p in 0..wh {
                let r = resp[p] as f64;
                let weight = scalar * if alpha_is_one { r } else { r.powf(params.alpha) };
                den[p] += weight;
                let (i, j) = (p * 3, p * 3);
                num[i] += weight * data[j] as f64;
                num[i + 1] += weight * data[j + 1] as f64;
                num[i + 2] += weight * data[j + 2] as f64;
            }
        }

        let mut data = vec![0.0f32; wh * 3];
        let mut zero_pixels: Vec<usize> = Vec::new();
        for p in 0..wh {
            if den[p] <= 0.0 {
                zero_pixels.push(p);
                continue;
            }
            for c in 0..3 {
                data[p * 3 + c] = (num[p * 3 + c] / den[p]) as f32;
            }
        }
        if !zero_pixels.is_empty() {
            diagnostics.zero_weight_pixels += zero_pixels.len();
            let n = entries.len() as f64;
            let mut mean = vec![0.0f64; zero_pixels.len() * 3];
            for entry in entries {
                let band = entry.pyramid.band(level).data();
                for (k, &p) in zero_pixels.iter().enumerate() {
                    for c in 0..3 {
                        mean[k * 3 + c] += band[p * 3 + c] as f64;
                    }
                }
            }
            for (k, &p) in zero_pixels.iter().enumerate() {
                for c in 0..3 {
                    data[p * 3 + c] = (mean[k * 3 + c] / n) as f32;
                }
            }
        }
        bands.push(Band::from_raw(w, h, data));
    }

    Ok((Pyramid::from_bands(bands), diagnostics))
}
