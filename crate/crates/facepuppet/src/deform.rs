//! Transferring per-frame 3D deformations from a driver face onto a
//! puppet face.
//!
//! The driver's deformation at each frame is the displacement of its
//! average mesh; the puppet receives, per vertex, a displacement along
//! the driver's deformation direction whose magnitude is re-measured on
//! the puppet's own geometry. Cross-identity correspondence between the
//! two average faces is estimated photometrically, by running dense flow
//! between subspace projections of the average textures: projecting one
//! identity's average into the other's appearance subspace yields a pair
//! that differ only in geometry, which is exactly what flow recovers.

use crate::core::image::FaceImage;
use crate::core::mesh::{DepthMesh, TranslationField, VertexIndex, ScalarField};
use crate::core::warp::WarpField;
use crate::denoise::{rof_huber_denoise, DenoiseParams, DenoiseStats};
use crate::error::{Error, Result};
use crate::flow::{compute_flow, AppearanceSubspace, FlowParams};

/// Deformations below this length (in mesh units) count as "no motion"
/// and pass through exactly.
const PASSTHROUGH_NORM: f64 = 1e-4;

/// Bidirectional grid correspondence between a driver face and a puppet
/// face, both on their average geometry.
pub struct Correspondence {
    forward: WarpField,
    inverse: WarpField,
}

impl Correspondence {
    /// Wrap precomputed fields; `forward` maps driver grid positions into
    /// the puppet grid, `inverse` maps puppet grid positions into the
    /// driver grid. Both live on the shared grid size.
    pub fn new(forward: WarpField, inverse: WarpField) -> Result<Self> {
        if forward.width() != inverse.width() || forward.height() != inverse.height() {
            return Err(Error::dims(
                "correspondence field pair",
                format!("{}x{}", forward.width(), forward.height()),
                format!("{}x{}", inverse.width(), inverse.height()),
            ));
        }
        Ok(Correspondence { forward, inverse })
    }

    /// Identity correspondence (same-identity transfer).
    pub fn identity(width: usize, height: usize) -> Self {
        Correspondence {
            forward: WarpField::zero(width, height),
            inverse: WarpField::zero(width, height),
        }
    }

    pub fn width(&self) -> usize {
        self.forward.width()
    }

    pub fn height(&self) -> usize {
        self.forward.height()
    }

    /// Driver grid position `p` → puppet grid displacement field.
    pub fn forward(&self) -> &WarpField {
        &self.forward
    }

    /// Puppet grid position `q` → driver grid displacement field.
    pub fn inverse(&self) -> &WarpField {
        &self.inverse
    }

    /// RMS distance, in grid units, between each point and the result of
    /// mapping it forward and then back. Small values mean the two fields
    /// are mutually consistent.
    pub fn round_trip_rms(&self) -> f64 {
        let (w, h) = (self.width(), self.height());
        let mut sq = 0.0;
        let mut n = 0usize;
        for y in 0..h {
            for x in 0..w {
                let (fx, fy) = self.inverse.get(x, y);
                let px = x as f32 + fx;
                let py = y as f32 + fy;
                if px < 0.0 || px > (w - 1) as f32 || py < 0.0 || py > (h - 1) as f32 {
                    continue;
                }
                let (bx, by) = self.forward.sample(px, py);
                let rx = (px + bx) as f64 - x as f64;
                let ry = (py + by) as f64 - y as f64;
                sq += rx * rx + ry * ry;
                n += 1;
            }
        }
        if n == 0 {
            return f64::INFINITY;
        }
        (sq / n as f64).sqrt()
    }
}

/// Estimate the correspondence between two identities from their average
/// textures and appearance subspaces.
///
/// The forward field is the flow from the puppet average *as seen through
/// the driver's subspace* onto the driver average seen the same way;
/// projecting both sides through one subspace cancels identity-specific
/// appearance so the flow captures geometry only. The inverse field is
/// built symmetrically through the puppet's subspace.
pub fn cross_identity_correspondence(
    driver_avg: &FaceImage,
    puppet_avg: &FaceImage,
    driver_space: &AppearanceSubspace,
    puppet_space: &AppearanceSubspace,
    params: &FlowParams,
) -> Result<Correspondence> {
    if driver_avg.width() != puppet_avg.width() || driver_avg.height() != puppet_avg.height() {
        return Err(Error::dims(
            "average texture pair",
            format!("{}x{}", driver_avg.width(), driver_avg.height()),
            format!("{}x{}", puppet_avg.width(), puppet_avg.height()),
        ));
    }
    let driver_view_of_puppet = driver_space.project(puppet_avg)?;
    let driver_view_of_driver = driver_space.project(driver_avg)?;
    let forward = compute_flow(&driver_view_of_puppet, &driver_view_of_driver, params)?;

    let puppet_view_of_driver = puppet_space.project(driver_avg)?;
    let puppet_view_of_puppet = puppet_space.project(puppet_avg)?;
    let inverse = compute_flow(&puppet_view_of_driver, &puppet_view_of_puppet, params)?;

    Correspondence::new(forward, inverse)
}

/// Outcome counts of one transferred frame.
#[derive(Clone, Copy, Debug)]
pub struct TransferDiagnostics {
    /// Vertices that received an adjusted deformation.
    pub transferred: usize,
    /// Vertices whose driver deformation was zero (kept exactly).
    pub passthrough: usize,
    /// Vertices flagged invalid because the driver deformation could not
    /// be sampled for them.
    pub invalid: usize,
    pub denoise: DenoiseStats,
    /// Wall-clock time spent inside the denoiser.
    pub denoise_seconds: f64,
}

/// Transfer one driver frame onto the puppet.
///
/// See [`transfer_translation_field`] for the underlying machinery; this
/// entry point takes the driver frame as a full mesh and differences it
/// against the driver average itself.
pub fn transfer_deformation(
    driver_frame: &DepthMesh,
    driver_avg: &DepthMesh,
    puppet_avg: &DepthMesh,
    corr: &Correspondence,
    denoise: &DenoiseParams,
) -> Result<(DepthMesh, TransferDiagnostics)> {
    let field = TranslationField::between(driver_avg, driver_frame)?;
    transfer_translation_field(&field, driver_avg, puppet_avg, corr, denoise)
}

/// Transfer a driver deformation given as a per-vertex translation field
/// over the driver average. This form also serves pure-2D drivers, whose
/// deformation fields come from optical flow against the driver's average
/// texture (see [`translation_field_from_flow`]).
pub fn transfer_translation_field(
    driver_deform: &TranslationField,
    driver_avg: &DepthMesh,
    puppet_avg: &DepthMesh,
    corr: &Correspondence,
    denoise: &DenoiseParams,
) -> Result<(DepthMesh, TransferDiagnostics)> {
    let (dw, dh) = (driver_avg.width(), driver_avg.height());
    let (pw, ph) = (puppet_avg.width(), puppet_avg.height());
    if driver_deform.width() != dw || driver_deform.height() != dh {
        return Err(Error::dims(
            "driver deformation grid",
            format!("{dw}x{dh}"),
            format!("{}x{}", driver_deform.width(), driver_deform.height()),
        ));
    }
    if corr.width() != pw || corr.height() != ph {
        return Err(Error::dims(
            "correspondence grid",
            format!("{pw}x{ph}"),
            format!("{}x{}", corr.width(), corr.height()),
        ));
    }

    let index = VertexIndex::build(driver_avg)?;

    // Per-vertex chains. Directions are kept alongside the scalar
    // magnitudes so the displacement can be reassembled after denoising.
    let mut magnitudes = ScalarField::zero(pw, ph);
    let mut directions = vec![[0.0f64; 3]; pw * ph];
    let mut flags = vec![Flag::Skip; pw * ph];
    let mut out_points: Vec<[f64; 3]> = puppet_avg.points().to_vec();
    let mut out_valid: Vec<bool> = puppet_avg.validity().to_vec();

    for qv in 0..ph {
        for qu in 0..pw {
            let qi = qv * pw + qu;
            magnitudes.invalidate(qu, qv);
            if !puppet_avg.is_valid(qu, qv) {
                continue;
            }
            // (1) follow the inverse correspondence into the driver grid
            let (ix, iy) = corr.inverse().get(qu, qv);
            let px = qu as f64 + ix as f64;
            let py = qv as f64 + iy as f64;

            // (2) driver deformation at that spot
            let (delta, base) = match (driver_deform.sample(px, py), driver_avg.sample(px, py)) {
                (Some(d), Some(b)) => (d, b),
                _ => {
                    // off the driver grid or into an invalid region: the
                    // vertex has no usable driver motion and is flagged
                    out_valid[qi] = false;
                    flags[qi] = Flag::Invalid;
                    continue;
                }
            };
            let norm = (delta[0] * delta[0] + delta[1] * delta[1] + delta[2] * delta[2]).sqrt();
            if norm < PASSTHROUGH_NORM {
                flags[qi] = Flag::Passthrough;
                continue;
            }
            let dir = [delta[0] / norm, delta[1] / norm, delta[2] / norm];

            // (3) land the deformed point back on the driver average and
            //     hop to the corresponding puppet vertex
            let moved = [base[0] + delta[0], base[1] + delta[1], base[2] + delta[2]];
            let (su, sv) = index.nearest(moved);
            let (fx, fy) = corr.forward().get(su, sv);
            let tu = su as f64 + fx as f64;
            let tv = sv as f64 + fy as f64;
            let Some((pu, pv)) = puppet_avg.nearest_valid_grid(tu, tv) else {
                out_valid[qi] = false;
                flags[qi] = Flag::Invalid;
                continue;
            };

            // (4) measure the arrival displacement on the puppet and keep
            //     its component along the driver's deformation direction
            let arrive = puppet_avg.point(pu, pv);
            let here = puppet_avg.point(qu, qv);
            let f = dir[0] * (arrive[0] - here[0])
                + dir[1] * (arrive[1] - here[1])
                + dir[2] * (arrive[2] - here[2]);
            magnitudes.set(qu, qv, f);
            directions[qi] = dir;
            flags[qi] = Flag::Transfer;
        }
    }

    // (5) clean sampling noise off the magnitude field; passthrough and
    //     invalid vertices are excluded via the field's validity mask
    let denoise_start = std::time::Instant::now();
    let (smoothed, stats) = rof_huber_denoise(&magnitudes, denoise)?;
    let denoise_seconds = denoise_start.elapsed().as_secs_f64();

    let mut transferred = 0;
    let mut passthrough = 0;
    let mut invalid = 0;
    for qv in 0..ph {
        for qu in 0..pw {
            let qi = qv * pw + qu;
            match flags[qi] {
                Flag::Transfer => {
                    let f = smoothed.get(qu, qv);
                    let d = directions[qi];
                    out_points[qi] = [
                        out_points[qi][0] + f * d[0],
                        out_points[qi][1] + f * d[1],
                        out_points[qi][2] + f * d[2],
                    ];
                    transferred += 1;
                }
                Flag::Passthrough => passthrough += 1,
                Flag::Invalid => invalid += 1,
                Flag::Skip => {}
            }
        }
    }

    let mesh = DepthMesh::new(pw, ph, out_points, out_valid)?;
    Ok((
        mesh,
        TransferDiagnostics {
            transferred,
            passthrough,
            invalid,
            denoise: stats,
            denoise_seconds,
        },
    ))
}

#[derive(Clone, Copy, PartialEq)]
enum Flag {
    Skip,
    Passthrough,
    Invalid,
    Transfer,
}

/// Lift an optical-flow field on the driver's average texture to a 3D
/// translation field over the driver's average mesh: each vertex moves to
/// where the flow says its grid position went.
pub fn translation_field_from_flow(
    avg_mesh: &DepthMesh,
    flow: &WarpField,
) -> Result<TranslationField> {
    let (w, h) = (avg_mesh.width(), avg_mesh.height());
    if flow.width() != w || flow.height() != h {
        return Err(Error::dims(
            "flow grid",
            format!("{w}x{h}"),
            format!("{}x{}", flow.width(), flow.height()),
        ));
    }
    let mut deltas = vec![[0.0f64; 3]; w * h];
    let mut valid = vec![false; w * h];
    for v in 0..h {
        for u in 0..w {
            if !avg_mesh.is_valid(u, v) {
                continue;
            }
            let (dx, dy) = flow.get(u, v);
            let pu = u as f64 + dx as f64;
            let pv = v as f64 + dy as f64;
            let (Some(there), Some(here)) = (avg_mesh.sample(pu, pv), Some(avg_mesh.point(u, v)))
            else {
                continue;
            };
            deltas[v * w + u] = [
                there[0] - here[0],
                there[1] - here[1],
                there[2] - here[2],
            ];
            valid[v * w + u] = true;
        }
    }
    TranslationField::new(w, h, deltas, valid)
}
