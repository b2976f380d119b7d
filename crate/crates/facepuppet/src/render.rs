//! Minimal software rasterizer for grid meshes.
//!
//! Renders a [`DepthMesh`] through an arbitrary projection with a z-buffer,
//! optionally textured by an image addressed in mesh grid coordinates. Used
//! to synthesize posed photos, to decide per-pixel visibility when undoing a
//! pose, and to produce flat preview renders of output meshes.

use crate::core::image::FaceImage;
use crate::core::mesh::DepthMesh;
use crate::core::pose::Pose;
use crate::error::Result;

/// Projection into an output raster: pixel position plus a depth where
/// smaller values are closer to the viewer.
pub trait Projector {
    fn project(&self, point: [f64; 3]) -> Option<([f64; 2], f64)>;
}

impl Projector for Pose {
    fn project(&self, point: [f64; 3]) -> Option<([f64; 2], f64)> {
        let uv = Pose::project(self, point)?;
        Some((uv, self.depth(point)))
    }
}

/// Orthographic projection: u = cx + s·x, v = cy − s·y, depth = −z.
pub struct Orthographic {
    pub scale: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Projector for Orthographic {
    fn project(&self, point: [f64; 3]) -> Option<([f64; 2], f64)> {
        Some((
            [
                self.cx + self.scale * point[0],
                self.cy - self.scale * point[1],
            ],
            -point[2],
        ))
    }
}

/// Raster output: color, per-pixel depth (`INFINITY` where nothing landed),
/// and a coverage mask.
pub struct Raster {
    pub image: FaceImage,
    pub depth: Vec<f64>,
    pub mask: Vec<bool>,
}

impl Raster {
    pub fn depth_at(&self, x: usize, y: usize) -> f64 {
        self.depth[y * self.image.width() + x]
    }

    /// Bilinear read of the depth buffer treating uncovered pixels as
    /// infinitely far; returns the minimum of the four neighbours when any
    /// is uncovered, which is the conservative choice for visibility tests.
    pub fn depth_near(&self, x: f64, y: f64) -> f64 {
        let w = self.image.width();
        let h = self.image.height();
        let xc = x.clamp(0.0, (w - 1) as f64);
        let yc = y.clamp(0.0, (h - 1) as f64);
        let x0 = xc.floor() as usize;
        let y0 = yc.floor() as usize;
        let x1 = (x0 + 1).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        [
            self.depth[y0 * w + x0],
            self.depth[y0 * w + x1],
            self.depth[y1 * w + x0],
            self.depth[y1 * w + x1],
        ]
        .into_iter()
        .fold(f64::INFINITY, f64::min)
    }
}

/// Rasterize the valid cells of `mesh` into a `width`×`height` buffer.
///
/// `texture`, when given, is sampled at the interpolated grid coordinates
/// stretched over the full texture; without it the surface renders
/// mid-gray. Depth interpolates linearly in screen space and the closest
/// fragment (smallest depth) wins; exact ties keep the earlier triangle in
/// row-major cell order, so output never depends on evaluation order.
pub fn rasterize(
    mesh: &DepthMesh,
    texture: Option<&FaceImage>,
    projector: &impl Projector,
    width: usize,
    height: usize,
    background: [f32; 3],
) -> Result<Raster> {
    let mut image = FaceImage::filled(width, height, background)?;
    let mut depth = vec![f64::INFINITY; width * height];
    let mut mask = vec![false; width * height];

    let (mw, mh) = (mesh.width(), mesh.height());
    let tex_scale = texture.map(|t| {
        (
            (t.width() - 1) as f64 / (mw - 1) as f64,
            (t.height() - 1) as f64 / (mh - 1) as f64,
        )
    });

    // projected vertices, cached per grid vertex
    let mut proj: Vec<Option<([f64; 2], f64)>> = Vec::with_capacity(mw * mh);
    for v in 0..mh {
        for u in 0..mw {
            proj.push(if mesh.is_valid(u, v) {
                projector.project(mesh.point(u, v))
            } else {
                None
            });
        }
    }

    let shade = |tri: [(usize, usize); 3],
                     image: &mut FaceImage,
                     depth: &mut [f64],
                     mask: &mut [bool]| {
        let (Some(a), Some(b), Some(c)) = (
            proj[tri[0].1 * mw + tri[0].0],
            proj[tri[1].1 * mw + tri[1].0],
            proj[tri[2].1 * mw + tri[2].0],
        ) else {
            return;
        };
        let area = (b.0[0] - a.0[0]) * (c.0[1] - a.0[1]) - (b.0[1] - a.0[1]) * (c.0[0] - a.0[0]);
        if area.abs() < 1e-12 {
            return;
        }
        let min_x = a.0[0].min(b.0[0]).min(c.0[0]).floor().max(0.0) as usize;
        let max_x = (a.0[0].max(b.0[0]).max(c.0[0]).ceil() as usize).min(width - 1);
        let min_y = a.0[1].min(b.0[1]).min(c.0[1]).floor().max(0.0) as usize;
        let max_y = (a.0[1].max(b.0[1]).max(c.0[1]).ceil() as usize).min(height - 1);
        if min_x > max_x || min_y > max_y {
            return;
        }
        for py in min_y..=max_y {
            for px in min_x..=max_x {
                let p = [px as f64, py as f64];
                let w0 = ((b.0[0] - p[0]) * (c.0[1] - p[1]) - (b.0[1] - p[1]) * (c.0[0] - p[0]))
                    / area;
                let w1 = ((c.0[0] - p[0]) * (a.0[1] - p[1]) - (c.0[1] - p[1]) * (a.0[0] - p[0]))
                    / area;
                let w2 = 1.0 - w0 - w1;
                if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                    continue;
                }
                let d = w0 * a.1 + w1 * b.1 + w2 * c.1;
                let idx = py * width + px;
                if d >= depth[idx] {
                    continue;
                }
                depth[idx] = d;
                mask[idx] = true;
                let rgb = match (texture, tex_scale) {
                    (Some(tex), Some((sx, sy))) => {
                        let gu = w0 * tri[0].0 as f64 + w1 * tri[1].0 as f64 + w2 * tri[2].0 as f64;
                        let gv = w0 * tri[0].1 as f64 + w1 * tri[1].1 as f64 + w2 * tri[2].1 as f64;
                        tex.sample_bilinear((gu * sx) as f32, (gv * sy) as f32)
                    }
                    _ => [0.5, 0.5, 0.5],
                };
                image.set(px, py, rgb);
            }
        }
    };

    for v in 0..mh - 1 {
        for u in 0..mw - 1 {
            // same diagonal split as the OBJ exporter
            shade(
                [(u, v), (u, v + 1), (u + 1, v)],
                &mut image,
                &mut depth,
                &mut mask,
            );
            shade(
                [(u + 1, v), (u, v + 1), (u + 1, v + 1)],
                &mut image,
                &mut depth,
                &mut mask,
            );
        }
    }

    Ok(Raster { image, depth, mask })
}
