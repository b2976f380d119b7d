//! Resampling photos into the canonical frontal pose.
//!
//! The canonical grid is the template mesh grid: under the frontal
//! canonical camera, template vertex (u,v) projects exactly to pixel
//! (u,v). Frontalization estimates the photo's rigid pose from its
//! landmarks, then pulls every canonical pixel's color from where the
//! corresponding surface point lands in the photo. Surface regions the
//! photo cannot see (self-occlusion, off-frame) are masked out rather
//! than filled in.

use crate::core::fiducials::{FiducialSet, FIDUCIAL_COUNT};
use crate::core::image::FaceImage;
use crate::core::mesh::DepthMesh;
use crate::core::pose::Pose;
use crate::error::{Error, Result};
use crate::geometry::pnp::estimate_pose;
use crate::render;

/// The neutral reference face: a canonical-grid mesh, its 2D landmarks on
/// that grid, and the landmarks' 3D points on the surface.
pub struct Template {
    pub mesh: DepthMesh,
    pub fiducials: FiducialSet,
    pub anchors: [[f64; 3]; FIDUCIAL_COUNT],
}

/// A photo resampled onto the canonical grid.
pub struct Frontalized {
    pub image: FaceImage,
    /// The photo's landmarks expressed in canonical grid coordinates.
    pub fiducials: FiducialSet,
    /// Per-pixel: true where the photo actually observed the surface.
    pub mask: Vec<bool>,
    /// The recovered rigid pose of the template in the photo.
    pub pose: Pose,
    /// RMS landmark reprojection error of the pose fit, in photo pixels.
    pub rms_residual: f64,
}

impl Frontalized {
    pub fn mask_fraction(&self) -> f64 {
        let total = self.mask.len().max(1);
        self.mask.iter().filter(|&&m| m).count() as f64 / total as f64
    }
}

/// Options for [`frontalize`].
#[derive(Clone, Copy, Debug)]
pub struct FrontalizeParams {
    /// Camera focal length in pixels; `None` uses the photo width.
    pub focal: Option<f64>,
    /// Extra slack (canonical depth units) for the visibility test.
    pub depth_tolerance: f64,
}

impl Default for FrontalizeParams {
    fn default() -> Self {
        FrontalizeParams {
            focal: None,
            depth_tolerance: 0.0,
        }
    }
}

/// Resample `photo` onto the template's canonical grid.
pub fn frontalize(
    photo: &FaceImage,
    photo_fids: &FiducialSet,
    template: &Template,
    params: &FrontalizeParams,
) -> Result<Frontalized> {
    let (pw, ph) = (photo.width(), photo.height());
    let focal = params.focal.unwrap_or(pw as f64);
    let cx = (pw as f64 - 1.0) / 2.0;
    let cy = (ph as f64 - 1.0) / 2.0;

    let estimate = estimate_pose(photo_fids, &template.anchors, focal, cx, cy)?;
    let pose = estimate.pose;

    // Z-buffer of the posed template in the photo plane resolves
    // self-occlusion: a vertex is visible only if nothing renders closer
    // at its projected position.
    let raster = render::rasterize(&template.mesh, None, &pose, pw, ph, [0.0; 3])?;
    let (lo, hi) = template.mesh.bounds();
    if !lo[2].is_finite() {
        return Err(Error::Empty("template mesh has no valid vertices".into()));
    }
    // slack for interpolated depths between raster samples
    let tolerance = 0.02 * (hi[2] - lo[2]).max(1.0) + 1.0 + params.depth_tolerance;

    let (tw, th) = (template.mesh.width(), template.mesh.height());
    let mut mask = vec![false; tw * th];
    let image = FaceImage::from_fn(tw, th, |u, v| {
        if !template.mesh.is_valid(u, v) {
            return [0.0, 0.0, 0.0];
        }
        let point = template.mesh.point(u, v);
        let Some(proj) = pose.project(point) else {
            return [0.0, 0.0, 0.0];
        };
        if proj[0] < 0.0 || proj[0] > (pw - 1) as f64 || proj[1] < 0.0 || proj[1] > (ph - 1) as f64
        {
            return [0.0, 0.0, 0.0];
        }
        let depth = pose.depth(point);
        let nearest = raster.depth_near(proj[0], proj[1]);
        if depth > nearest + tolerance {
            return [0.0, 0.0, 0.0]; // something else is in front
        }
        mask[v * tw + u] = true;
        photo.sample_bilinear(proj[0] as f32, proj[1] as f32)
    })?;

    let fiducials = canonical_fiducials(photo_fids, template, &pose)?;
    Ok(Frontalized {
        image,
        fiducials,
        mask,
        pose,
        rms_residual: estimate.rms_residual,
    })
}

/// Express the photo's landmarks in canonical grid coordinates by
/// inverting the projection of the posed template surface: find (u,v)
/// with project(pose, surface(u,v)) = landmark, by Gauss–Newton from the
/// template's own landmark position.
fn canonical_fiducials(
    photo_fids: &FiducialSet,
    template: &Template,
    pose: &Pose,
) -> Result<FiducialSet> {
    let mesh = &template.mesh;
    let (w, h) = (mesh.width() as f64, mesh.height() as f64);
    let clamp = |p: [f64; 2]| -> [f64; 2] {
        [p[0].clamp(0.0, w - 1.0), p[1].clamp(0.0, h - 1.0)]
    };
    let project_at = |p: [f64; 2]| -> Option<[f64; 2]> {
        mesh.sample(p[0], p[1]).and_then(|x| pose.project(x))
    };

    let mut out = Vec::with_capacity(FIDUCIAL_COUNT);
    for k in 0..FIDUCIAL_COUNT {
        let target = photo_fids.point(k);
        let mut guess = template.fiducials.point(k);
        let mut best = guess;
        let mut best_err = f64::INFINITY;
        for _ in 0..40 {
            let Some(f0) = project_at(guess) else { break };
            let rx = f0[0] - target[0];
            let ry = f0[1] - target[1];
            let err = (rx * rx + ry * ry).sqrt();
            if err < best_err {
                best_err = err;
                best = guess;
            }
            if err < 1e-9 {
                break;
            }
            // finite-difference Jacobian of the projected position
            let hstep = 0.25;
            let (Some(fu), Some(fv)) = (
                project_at(clamp([guess[0] + hstep, guess[1]])),
                project_at(clamp([guess[0], guess[1] + hstep])),
            ) else {
                break;
            };
            let j = [
                [(fu[0] - f0[0]) / hstep, (fv[0] - f0[0]) / hstep],
                [(fu[1] - f0[1]) / hstep, (fv[1] - f0[1]) / hstep],
            ];
            let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
            if det.abs() < 1e-12 {
                break;
            }
            let mut du = (-rx * j[1][1] + ry * j[0][1]) / det;
            let mut dv = (rx * j[1][0] - ry * j[0][0]) / det;
            // keep steps inside the bilinear patch's trust region
            let norm = (du * du + dv * dv).sqrt();
            if norm > 3.0 {
                du *= 3.0 / norm;
                dv *= 3.0 / norm;
            }
            guess = clamp([guess[0] + du, guess[1] + dv]);
        }
        if let Some(f0) = project_at(guess) {
            let err =
                ((f0[0] - target[0]).powi(2) + (f0[1] - target[1]).powi(2)).sqrt();
            if err < best_err {
                best = guess;
            }
        }
        out.push(best);
    }
    FiducialSet::new(out)
}
