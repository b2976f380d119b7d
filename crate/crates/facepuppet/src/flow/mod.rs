//! Dense optical flow between frontalized face images.
//!
//! A coarse-to-fine variational solver estimates, for a (source, target)
//! pair, the backward warp field `W` such that `warp_image(source, W)`
//! approximates `target`. The objective combines a robust brightness- and
//! gradient-constancy data term with a robust (Charbonnier) first-order
//! smoothness term; each pyramid level is solved by fixed-point
//! linearization and a coupled point-SOR relaxation of the resulting
//! 2×2-block linear system.

pub mod subspace;

pub use subspace::{align_via_subspace, build_subspace, AppearanceSubspace};

use crate::core::image::FaceImage;
use crate::core::warp::WarpField;
use crate::error::{Error, Result};

/// Robustness epsilon of the data penalty √(s² + ε²).
const DATA_EPS: f64 = 1e-3;
/// Robustness epsilon of the smoothness penalty.
const SMOOTH_EPS: f64 = 1e-3;

/// Solver parameters.
#[derive(Clone, Copy, Debug)]
pub struct FlowParams {
    /// Smoothness weight α.
    pub alpha: f64,
    /// Gradient-constancy weight γ inside the data penalty.
    pub gamma: f64,
    /// Per-level downscale factor of the image pyramid.
    pub pyramid_ratio: f64,
    /// Coarsest pyramid level keeps min(width, height) at or above this.
    pub min_width: usize,
    /// Warping (linearization) iterations per level.
    pub outer_iterations: usize,
    /// Fixed-point reweighting iterations per linearization.
    pub inner_iterations: usize,
    /// SOR sweeps per fixed-point iteration.
    pub sor_iterations: usize,
    /// SOR over-relaxation factor in (0, 2).
    pub sor_omega: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams {
            alpha: 0.02,
            gamma: 1.0,
            pyramid_ratio: 0.85,
            min_width: 20,
            outer_iterations: 4,
            inner_iterations: 1,
            sor_iterations: 40,
            sor_omega: 1.9,
        }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.pyramid_ratio > 0.0 && self.pyramid_ratio < 1.0) {
            return Err(Error::InvalidInput(format!(
                "pyramid ratio must lie in (0, 1), got {}",
                self.pyramid_ratio
            )));
        }
        if self.min_width < 8 {
            return Err(Error::InvalidInput(format!(
                "minimum pyramid width must be at least 8, got {}",
                self.min_width
            )));
        }
        if self.outer_iterations == 0 || self.inner_iterations == 0 || self.sor_iterations == 0 {
            return Err(Error::InvalidInput(
                "iteration counts must be at least 1".into(),
            ));
        }
        if !(self.sor_omega > 0.0 && self.sor_omega < 2.0) {
            return Err(Error::InvalidInput(format!(
                "SOR relaxation factor must lie in (0, 2), got {}",
                self.sor_omega
            )));
        }
        if !(self.alpha > 0.0) || !(self.gamma >= 0.0) {
            return Err(Error::InvalidInput(
                "smoothness weight must be positive and gradient weight non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Energy trace of one pyramid level.
#[derive(Clone, Debug)]
pub struct LevelEnergy {
    pub width: usize,
    pub height: usize,
    /// Objective value at level entry followed by the value after each
    /// accepted warping iteration; non-increasing by construction.
    pub energies: Vec<f64>,
}

/// Solve diagnostics across the pyramid, coarsest level first.
#[derive(Clone, Debug, Default)]
pub struct FlowStats {
    pub levels: Vec<LevelEnergy>,
    /// Warping iterations rolled back because the objective rose.
    pub reverted: usize,
}

/// Estimate the backward warp from `source` onto `target`.
pub fn compute_flow(
    source: &FaceImage,
    target: &FaceImage,
    params: &FlowParams,
) -> Result<WarpField> {
    compute_flow_with_stats(source, target, params).map(|(field, _)| field)
}

/// As [`compute_flow`], also returning the per-level energy trace.
pub fn compute_flow_with_stats(
    source: &FaceImage,
    target: &FaceImage,
    params: &FlowParams,
) -> Result<(WarpField, FlowStats)> {
    params.validate()?;
    if source.width() != target.width() || source.height() != target.height() {
        return Err(Error::dims(
            "flow image pair",
            format!("{}x{}", source.width(), source.height()),
            format!("{}x{}", target.width(), target.height()),
        ));
    }

    let src = Gray::from_image(source);
    let tgt = Gray::from_image(target);
    let pyramid = build_pyramid(&src, &tgt, params);

    let mut stats = FlowStats::default();
    let mut u = vec![0.0f64; 0];
    let mut v = vec![0.0f64; 0];
    let mut prev_size = (0usize, 0usize);

    for (ls, lt) in pyramid.iter().rev() {
        let (w, h) = (ls.width, ls.height);
        if prev_size.0 == 0 {
            u = vec![0.0; w * h];
            v = vec![0.0; w * h];
        } else {
            let su = w as f64 / prev_size.0 as f64;
            let sv = h as f64 / prev_size.1 as f64;
            u = upsample_scaled(&u, prev_size.0, prev_size.1, w, h, su);
            v = upsample_scaled(&v, prev_size.0, prev_size.1, w, h, sv);
        }
        prev_size = (w, h);

        let trace = solve_level(ls, lt, &mut u, &mut v, params, &mut stats.reverted);
        stats.levels.push(LevelEnergy {
            width: w,
            height: h,
            energies: trace,
        });
    }

    let (w, h) = prev_size;
    let dx: Vec<f32> = u.iter().map(|&x| x as f32).collect();
    let dy: Vec<f32> = v.iter().map(|&x| x as f32).collect();
    Ok((WarpField::new(w, h, dx, dy)?, stats))
}

// ---------------------------------------------------------------------------
// grayscale pyramid

struct Gray {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Gray {
    fn from_image(img: &FaceImage) -> Self {
        Gray {
            width: img.width(),
            height: img.height(),
            data: img.luminance(),
        }
    }

    #[inline]
    fn at(&self, x: isize, y: isize) -> f64 {
        let xi = x.clamp(0, self.width as isize - 1) as usize;
        let yi = y.clamp(0, self.height as isize - 1) as usize;
        self.data[yi * self.width + xi]
    }

    fn sample(&self, x: f64, y: f64) -> f64 {
        let xc = x.clamp(0.0, (self.width - 1) as f64);
        let yc = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = xc.floor() as usize;
        let y0 = yc.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = xc - x0 as f64;
        let fy = yc - y0 as f64;
        let a = self.data[y0 * self.width + x0];
        let b = self.data[y0 * self.width + x1];
        let c = self.data[y1 * self.width + x0];
        let d = self.data[y1 * self.width + x1];
        a * (1.0 - fx) * (1.0 - fy) + b * fx * (1.0 - fy) + c * (1.0 - fx) * fy + d * fx * fy
    }

    /// 4th-order five-point derivative stencil, replicated borders.
    fn derivative_x(&self) -> Gray {
        self.map_stencil(|x, y| {
            (self.at(x - 2, y) - 8.0 * self.at(x - 1, y) + 8.0 * self.at(x + 1, y)
                - self.at(x + 2, y))
                / 12.0
        })
    }

    fn derivative_y(&self) -> Gray {
        self.map_stencil(|x, y| {
            (self.at(x, y - 2) - 8.0 * self.at(x, y - 1) + 8.0 * self.at(x, y + 1)
                - self.at(x, y + 2))
                / 12.0
        })
    }

    fn map_stencil(&self, f: impl Fn(isize, isize) -> f64) -> Gray {
        let mut data = Vec::with_capacity(self.width * self.height);
        for y in 0..self.height as isize {
            for x in 0..self.width as isize {
                data.push(f(x, y));
            }
        }
        Gray {
            width: self.width,
            height: self.height,
            data,
        }
    }

    fn gaussian(&self, sigma: f64) -> Gray {
        if sigma <= 0.0 {
            return Gray {
                width: self.width,
                height: self.height,
                data: self.data.clone(),
            };
        }
        let radius = (3.0 * sigma).ceil() as isize;
        let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
        let mut sum = 0.0;
        for i in -radius..=radius {
            let w = (-(i * i) as f64 / (2.0 * sigma * sigma)).exp();
            kernel.push(w);
            sum += w;
        }
        for w in &mut kernel {
            *w /= sum;
        }
        // horizontal pass
        let horiz = self.map_stencil(|x, y| {
            kernel
                .iter()
                .enumerate()
                .map(|(i, &w)| w * self.at(x + i as isize - radius, y))
                .sum()
        });
        horiz.map_stencil(|x, y| {
            kernel
                .iter()
                .enumerate()
                .map(|(i, &w)| w * horiz.at(x, y + i as isize - radius))
                .sum()
        })
    }

    fn resample(&self, nw: usize, nh: usize) -> Gray {
        let sx = if nw > 1 {
            (self.width - 1) as f64 / (nw - 1) as f64
        } else {
            0.0
        };
        let sy = if nh > 1 {
            (self.height - 1) as f64 / (nh - 1) as f64
        } else {
            0.0
        };
        let mut data = Vec::with_capacity(nw * nh);
        for y in 0..nh {
            for x in 0..nw {
                data.push(self.sample(x as f64 * sx, y as f64 * sy));
            }
        }
        Gray {
            width: nw,
            height: nh,
            data,
        }
    }
}

/// Build matched pyramids for both images, finest level first.
fn build_pyramid(src: &Gray, tgt: &Gray, params: &FlowParams) -> Vec<(Gray, Gray)> {
    let ratio = params.pyramid_ratio;
    let sigma = 0.6 * (1.0 / (ratio * ratio) - 1.0).sqrt();
    let (w0, h0) = (src.width, src.height);

    let mut levels: Vec<(Gray, Gray)> = vec![(
        Gray {
            width: w0,
            height: h0,
            data: src.data.clone(),
        },
        Gray {
            width: w0,
            height: h0,
            data: tgt.data.clone(),
        },
    )];
    loop {
        let k = levels.len() as i32;
        let nw = (w0 as f64 * ratio.powi(k)).round() as usize;
        let nh = (h0 as f64 * ratio.powi(k)).round() as usize;
        if nw.min(nh) < params.min_width {
            break;
        }
        let (ps, pt) = levels.last().unwrap();
        let ns = ps.gaussian(sigma).resample(nw, nh);
        let nt = pt.gaussian(sigma).resample(nw, nh);
        levels.push((ns, nt));
    }
    levels
}

/// Bilinear upsample of a displacement component with value scaling.
fn upsample_scaled(
    data: &[f64],
    ow: usize,
    oh: usize,
    nw: usize,
    nh: usize,
    value_scale: f64,
) -> Vec<f64> {
    let grid = Gray {
        width: ow,
        height: oh,
        data: data.to_vec(),
    };
    let up = grid.resample(nw, nh);
    up.data.into_iter().map(|v| v * value_scale).collect()
}

// ---------------------------------------------------------------------------
// per-level solver

struct Linearization {
    ix: Vec<f64>,
    iy: Vec<f64>,
    iz: Vec<f64>,
    ixx: Vec<f64>,
    ixy: Vec<f64>,
    iyy: Vec<f64>,
    ixz: Vec<f64>,
    iyz: Vec<f64>,
    /// false where the warped position leaves the source frame; the data
    /// term is switched off there and smoothness fills in.
    inside: Vec<bool>,
}

struct LevelImages {
    tgt: Vec<f64>,
    tgt_x: Gray,
    tgt_y: Gray,
    tgt_xx: Gray,
    tgt_xy: Gray,
    tgt_yy: Gray,
    src: Gray,
    src_x: Gray,
    src_y: Gray,
    src_xx: Gray,
    src_xy: Gray,
    src_yy: Gray,
}

impl LevelImages {
    fn build(src: &Gray, tgt: &Gray) -> Self {
        let src_x = src.derivative_x();
        let src_y = src.derivative_y();
        let tgt_x = tgt.derivative_x();
        let tgt_y = tgt.derivative_y();
        LevelImages {
            tgt: tgt.data.clone(),
            tgt_xx: tgt_x.derivative_x(),
            tgt_xy: tgt_x.derivative_y(),
            tgt_yy: tgt_y.derivative_y(),
            tgt_x,
            tgt_y,
            src_xx: src_x.derivative_x(),
            src_xy: src_x.derivative_y(),
            src_yy: src_y.derivative_y(),
            src_x,
            src_y,
            src: Gray {
                width: src.width,
                height: src.height,
                data: src.data.clone(),
            },
        }
    }
}

fn solve_level(
    src: &Gray,
    tgt: &Gray,
    u: &mut [f64],
    v: &mut [f64],
    params: &FlowParams,
    reverted: &mut usize,
) -> Vec<f64> {
    let imgs = LevelImages::build(src, tgt);
    let (w, h) = (src.width, src.height);
    let n = w * h;

    let mut energies = vec![level_energy(&imgs, u, v, params)];

    for _ in 0..params.outer_iterations {
        let lin = linearize(&imgs, u, v);
        let mut du = vec![0.0f64; n];
        let mut dv = vec![0.0f64; n];

        for _ in 0..params.inner_iterations {
            // data weights Ψ'(s²) at the current increment
            let mut psi_d = vec![0.0f64; n];
            for i in 0..n {
                if !lin.inside[i] {
                    continue;
                }
                let rb = lin.iz[i] + lin.ix[i] * du[i] + lin.iy[i] * dv[i];
                let rgx = lin.ixz[i] + lin.ixx[i] * du[i] + lin.ixy[i] * dv[i];
                let rgy = lin.iyz[i] + lin.ixy[i] * du[i] + lin.iyy[i] * dv[i];
                let s2 = rb * rb + params.gamma * (rgx * rgx + rgy * rgy);
                psi_d[i] = 0.5 / (s2 + DATA_EPS * DATA_EPS).sqrt();
            }
            // smoothness weights at the current full flow
            let mut psi_s = vec![0.0f64; n];
            for y in 0..h {
                for x in 0..w {
                    let i = y * w + x;
                    let (fu, fv) = (u[i] + du[i], v[i] + dv[i]);
                    let mut s2 = 0.0;
                    if x + 1 < w {
                        let j = i + 1;
                        s2 += (u[j] + du[j] - fu).powi(2) + (v[j] + dv[j] - fv).powi(2);
                    }
                    if y + 1 < h {
                        let j = i + w;
                        s2 += (u[j] + du[j] - fu).powi(2) + (v[j] + dv[j] - fv).powi(2);
                    }
                    psi_s[i] = 0.5 / (s2 + SMOOTH_EPS * SMOOTH_EPS).sqrt();
                }
            }

            for _ in 0..params.sor_iterations {
                sor_sweep(&lin, &psi_d, &psi_s, u, v, &mut du, &mut dv, w, h, params);
            }
        }

        let mut nu: Vec<f64> = u.to_vec();
        let mut nv: Vec<f64> = v.to_vec();
        for i in 0..n {
            nu[i] += du[i];
            nv[i] += dv[i];
        }
        let energy = level_energy(&imgs, &nu, &nv, params);
        let prev = *energies.last().unwrap();
        if energy > prev * (1.0 + 1e-12) + 1e-12 {
            *reverted += 1;
            break; // keep the previous flow; further warping cannot help
        }
        u.copy_from_slice(&nu);
        v.copy_from_slice(&nv);
        energies.push(energy);
    }
    energies
}

/// Warp the source (and its derivatives) by the current flow and form the
/// linearized constancy coefficients, averaging source and target
/// derivatives.
fn linearize(imgs: &LevelImages, u: &[f64], v: &[f64]) -> Linearization {
    let (w, h) = (imgs.src.width, imgs.src.height);
    let n = w * h;
    let mut lin = Linearization {
        ix: vec![0.0; n],
        iy: vec![0.0; n],
        iz: vec![0.0; n],
        ixx: vec![0.0; n],
        ixy: vec![0.0; n],
        iyy: vec![0.0; n],
        ixz: vec![0.0; n],
        iyz: vec![0.0; n],
        inside: vec![false; n],
    };
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let sx = x as f64 + u[i];
            let sy = y as f64 + v[i];
            if sx < 0.0 || sx > (w - 1) as f64 || sy < 0.0 || sy > (h - 1) as f64 {
                continue;
            }
            lin.inside[i] = true;
            let ws = imgs.src.sample(sx, sy);
            let wsx = imgs.src_x.sample(sx, sy);
            let wsy = imgs.src_y.sample(sx, sy);
            lin.iz[i] = ws - imgs.tgt[i];
            lin.ix[i] = 0.5 * (wsx + imgs.tgt_x.data[i]);
            lin.iy[i] = 0.5 * (wsy + imgs.tgt_y.data[i]);
            lin.ixz[i] = wsx - imgs.tgt_x.data[i];
            lin.iyz[i] = wsy - imgs.tgt_y.data[i];
            lin.ixx[i] = 0.5 * (imgs.src_xx.sample(sx, sy) + imgs.tgt_xx.data[i]);
            lin.ixy[i] = 0.5 * (imgs.src_xy.sample(sx, sy) + imgs.tgt_xy.data[i]);
            lin.iyy[i] = 0.5 * (imgs.src_yy.sample(sx, sy) + imgs.tgt_yy.data[i]);
        }
    }
    lin
}

#[allow(clippy::too_many_arguments)]
fn sor_sweep(
    lin: &Linearization,
    psi_d: &[f64],
    psi_s: &[f64],
    u: &[f64],
    v: &[f64],
    du: &mut [f64],
    dv: &mut [f64],
    w: usize,
    h: usize,
    params: &FlowParams,
) {
    let alpha = params.alpha;
    let gamma = params.gamma;
    let omega = params.sor_omega;
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let mut sum_w = 0.0;
            let mut sum_u = 0.0;
            let mut sum_v = 0.0;
            let mut visit = |j: usize| {
                let wpq = 0.5 * (psi_s[i] + psi_s[j]);
                sum_w += wpq;
                sum_u += wpq * (u[j] + du[j] - u[i]);
                sum_v += wpq * (v[j] + dv[j] - v[i]);
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }

            let pd = psi_d[i];
            let (ix, iy) = (lin.ix[i], lin.iy[i]);
            let (ixx, ixy, iyy) = (lin.ixx[i], lin.ixy[i], lin.iyy[i]);
            let a11 = pd * (ix * ix + gamma * (ixx * ixx + ixy * ixy)) + alpha * sum_w;
            let a12 = pd * (ix * iy + gamma * (ixy * (ixx + iyy)));
            let a22 = pd * (iy * iy + gamma * (ixy * ixy + iyy * iyy)) + alpha * sum_w;
            let b1 =
                -pd * (ix * lin.iz[i] + gamma * (ixx * lin.ixz[i] + ixy * lin.iyz[i]))
                    + alpha * sum_u;
            let b2 =
                -pd * (iy * lin.iz[i] + gamma * (ixy * lin.ixz[i] + iyy * lin.iyz[i]))
                    + alpha * sum_v;

            let det = a11 * a22 - a12 * a12;
            if det.abs() < 1e-300 {
                continue;
            }
            let nu = (b1 * a22 - b2 * a12) / det;
            let nv = (a11 * b2 - a12 * b1) / det;
            du[i] += omega * (nu - du[i]);
            dv[i] += omega * (nv - dv[i]);
        }
    }
}

/// True (non-linearized) objective of a flow field at one level.
fn level_energy(imgs: &LevelImages, u: &[f64], v: &[f64], params: &FlowParams) -> f64 {
    let (w, h) = (imgs.src.width, imgs.src.height);
    let mut data = 0.0;
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let sx = x as f64 + u[i];
            let sy = y as f64 + v[i];
            if sx < 0.0 || sx > (w - 1) as f64 || sy < 0.0 || sy > (h - 1) as f64 {
                continue;
            }
            let rb = imgs.src.sample(sx, sy) - imgs.tgt[i];
            let rgx = imgs.src_x.sample(sx, sy) - imgs.tgt_x.data[i];
            let rgy = imgs.src_y.sample(sx, sy) - imgs.tgt_y.data[i];
            let s2 = rb * rb + params.gamma * (rgx * rgx + rgy * rgy);
            data += (s2 + DATA_EPS * DATA_EPS).sqrt();
        }
    }
    let mut smooth = 0.0;
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let mut s2 = 0.0;
            if x + 1 < w {
                s2 += (u[i + 1] - u[i]).powi(2) + (v[i + 1] - v[i]).powi(2);
            }
            if y + 1 < h {
                s2 += (u[i + w] - u[i]).powi(2) + (v[i + w] - v[i]).powi(2);
            }
            smooth += (s2 + SMOOTH_EPS * SMOOTH_EPS).sqrt();
        }
    }
    data + params.alpha * smooth
}
