//! Rigid head pose plus the pinhole camera it is observed through.
//!
//! Camera model: the canonical face frame has x to the subject's right,
//! y up, and z toward the camera. A world point `X` maps to camera space as
//! `p = R·X + t` and projects to pixels as
//!
//! ```text
//! u = cx + f·p.x / (f − p.z)
//! v = cy − f·p.y / (f − p.z)
//! ```
//!
//! so the virtual camera sits at distance `f` along +z and image v grows
//! downward. The projective depth `f − p.z` shrinks as a point approaches
//! the camera, which makes "smaller depth wins" the visibility rule.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

const ORTHONORMAL_TOL: f64 = 1e-6;

/// Rotation, translation, and intrinsics bundled as one projection.
#[derive(Clone, Debug, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    focal: f64,
    cx: f64,
    cy: f64,
}

impl Pose {
    pub fn new(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        focal: f64,
        cx: f64,
        cy: f64,
    ) -> Result<Self> {
        if !rotation.iter().all(|v| v.is_finite())
            || !translation.iter().all(|v| v.is_finite())
            || !(focal.is_finite() && cx.is_finite() && cy.is_finite())
        {
            return Err(Error::NonFinite("pose parameters"));
        }
        if focal <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "focal length must be positive, got {focal}"
            )));
        }
        let gram = rotation.transpose() * rotation;
        let ortho_err = (gram - Matrix3::identity()).abs().max();
        if ortho_err > ORTHONORMAL_TOL {
            return Err(Error::InvalidInput(format!(
                "rotation is not orthonormal (max |RᵀR − I| = {ortho_err:.2e})"
            )));
        }
        if rotation.determinant() < 0.0 {
            return Err(Error::InvalidInput(
                "rotation has negative determinant (reflection)".into(),
            ));
        }
        Ok(Self {
            rotation,
            translation,
            focal,
            cx,
            cy,
        })
    }

    /// Frontal pose: no rotation or translation, camera straight ahead.
    pub fn frontal(focal: f64, cx: f64, cy: f64) -> Result<Self> {
        Self::new(Matrix3::identity(), Vector3::zeros(), focal, cx, cy)
    }

    /// Pose from an axis-angle rotation vector (radians · unit axis).
    pub fn from_axis_angle(
        axis_angle: [f64; 3],
        translation: [f64; 3],
        focal: f64,
        cx: f64,
        cy: f64,
    ) -> Result<Self> {
        let rot = nalgebra::Rotation3::from_scaled_axis(Vector3::from(axis_angle));
        Self::new(
            rot.into_inner(),
            Vector3::from(translation),
            focal,
            cx,
            cy,
        )
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.translation
    }

    pub fn focal(&self) -> f64 {
        self.focal
    }

    pub fn principal_point(&self) -> (f64, f64) {
        (self.cx, self.cy)
    }

    /// World point into camera coordinates: R·X + t.
    pub fn transform(&self, point: [f64; 3]) -> [f64; 3] {
        let p = self.rotation * Vector3::from(point) + self.translation;
        [p.x, p.y, p.z]
    }

    /// Projective depth `f − p.z`; smaller means closer to the camera.
    pub fn depth(&self, point: [f64; 3]) -> f64 {
        self.focal - self.transform(point)[2]
    }

    /// Pixel projection, or `None` when the point reaches the camera plane.
    pub fn project(&self, point: [f64; 3]) -> Option<[f64; 2]> {
        let p = self.transform(point);
        let denom = self.focal - p[2];
        if denom <= 1e-9 {
            return None;
        }
        Some([
            self.cx + self.focal * p[0] / denom,
            self.cy - self.focal * p[1] / denom,
        ])
    }
}
