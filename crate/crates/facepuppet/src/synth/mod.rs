//! Procedural face data for demos and tests.
//!
//! Everything here is analytic and deterministic: a parametric face is
//! rendered from smooth soft-edged masks, its 49 landmarks are evaluated
//! from the same curves that drive the rendering, its 3D surface is a dome
//! with a nose ridge whose frontal projection lands exactly on the pixel
//! grid, and expressions displace both pixels and landmarks consistently.
//! That self-consistency is what makes the generator usable as ground truth:
//! alignment, pose recovery, and transfer can all be checked against the
//! parameters the data was built from.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

use crate::core::collection::{PhotoCollection, PhotoRecord};
use crate::core::fiducials::{FiducialSet, FIDUCIAL_COUNT};
use crate::core::image::FaceImage;
use crate::core::mesh::{DepthMesh, TranslationField};
use crate::core::pose::Pose;
use crate::error::{Error, Result};
use crate::geometry::Template;
use crate::render;

/// Canonical grid dimensions used by the bundled template.
pub const CANONICAL_WIDTH: usize = 194;
pub const CANONICAL_HEIGHT: usize = 244;

/// Expression controls, all zero at neutral.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Expression {
    /// Mouth-corner lift and widening, −1 (frown) to 1 (full smile).
    pub smile: f64,
    /// Jaw drop exposing the mouth interior, 0 to 1.
    pub mouth_open: f64,
    /// Eyelid closure, 0 (open) to 1 (closed).
    pub blink: f64,
    /// Eyebrow raise, −1 (furrowed) to 1 (raised).
    pub brow_raise: f64,
}

impl Expression {
    pub const NEUTRAL: Expression = Expression {
        smile: 0.0,
        mouth_open: 0.0,
        blink: 0.0,
        brow_raise: 0.0,
    };

    pub fn smile(amount: f64) -> Self {
        Expression {
            smile: amount,
            ..Self::NEUTRAL
        }
    }

    pub fn blink(amount: f64) -> Self {
        Expression {
            blink: amount,
            ..Self::NEUTRAL
        }
    }
}

/// Full parametric description of one synthetic face under one lighting.
///
/// Geometry fields are in "face units": the face half-width is 1 and the
/// vertical axis grows downward, mirroring image rows. `size` scales face
/// units to pixels (half-width = size·width/2).
#[derive(Clone, Debug)]
pub struct FaceParams {
    pub size: f64,
    pub aspect: f64,
    pub eye_x: f64,
    pub eye_y: f64,
    pub eye_halfwidth: f64,
    pub eye_aperture: f64,
    pub iris_radius: f64,
    pub brow_offset: f64,
    pub brow_arch: f64,
    pub brow_halfspan: f64,
    pub brow_thickness: f64,
    pub nose_halfwidth: f64,
    pub mouth_y: f64,
    pub mouth_halfwidth: f64,
    pub dome_height: f64,
    pub nose_height: f64,
    pub skin: [f32; 3],
    pub lip: [f32; 3],
    pub iris: [f32; 3],
    pub brow_color: [f32; 3],
    pub background: [f32; 3],
    /// Global multiplicative tint applied to the skin (population marker).
    pub tint: [f32; 3],
    /// Directional light: x toward image right, y up, z toward the camera.
    pub light: [f64; 2],
    pub diffuse: f64,
    pub ambient: f64,
    pub expression: Expression,
}

impl Default for FaceParams {
    fn default() -> Self {
        FaceParams {
            size: 0.86,
            aspect: 1.28,
            eye_x: 0.40,
            eye_y: -0.22,
            eye_halfwidth: 0.19,
            eye_aperture: 0.085,
            iris_radius: 0.072,
            brow_offset: 0.26,
            brow_arch: 0.06,
            brow_halfspan: 0.25,
            brow_thickness: 0.045,
            nose_halfwidth: 0.15,
            mouth_y: 0.52,
            mouth_halfwidth: 0.28,
            dome_height: 0.55,
            nose_height: 0.17,
            skin: [0.80, 0.62, 0.52],
            lip: [0.60, 0.32, 0.31],
            iris: [0.25, 0.42, 0.55],
            brow_color: [0.26, 0.19, 0.13],
            background: [0.13, 0.14, 0.17],
            tint: [1.0, 1.0, 1.0],
            light: [0.25, 0.35],
            diffuse: 0.30,
            ambient: 0.78,
            expression: Expression::NEUTRAL,
        }
    }
}

impl FaceParams {
    /// Deterministic identity: proportions and coloring jittered by seed.
    pub fn identity(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut r = |lo: f64, hi: f64| rng.random_range(lo..hi);
        FaceParams {
            size: 0.86 + r(-0.03, 0.03),
            aspect: 1.28 + r(-0.06, 0.06),
            eye_x: 0.40 + r(-0.03, 0.03),
            eye_y: -0.22 + r(-0.03, 0.03),
            eye_halfwidth: 0.19 + r(-0.02, 0.02),
            eye_aperture: 0.085 + r(-0.012, 0.015),
            iris_radius: 0.072 + r(-0.008, 0.008),
            brow_offset: 0.26 + r(-0.03, 0.03),
            brow_arch: 0.06 + r(-0.02, 0.025),
            brow_halfspan: 0.25 + r(-0.02, 0.02),
            brow_thickness: 0.045 + r(-0.008, 0.012),
            nose_halfwidth: 0.15 + r(-0.02, 0.02),
            mouth_y: 0.52 + r(-0.04, 0.04),
            mouth_halfwidth: 0.28 + r(-0.035, 0.035),
            dome_height: 0.55 + r(-0.05, 0.05),
            nose_height: 0.17 + r(-0.03, 0.03),
            skin: [
                0.72 + r(0.0, 0.14) as f32,
                0.55 + r(0.0, 0.12) as f32,
                0.44 + r(0.0, 0.12) as f32,
            ],
            lip: [0.55 + r(0.0, 0.1) as f32, 0.30 + r(0.0, 0.06) as f32, 0.30],
            iris: [
                0.2 + r(0.0, 0.2) as f32,
                0.3 + r(0.0, 0.2) as f32,
                0.35 + r(0.0, 0.3) as f32,
            ],
            ..FaceParams::default()
        }
    }

    pub fn with_expression(mut self, expression: Expression) -> Self {
        self.expression = expression;
        self
    }

    pub fn with_light(mut self, light: [f64; 2], diffuse: f64) -> Self {
        self.light = light;
        self.diffuse = diffuse;
        self
    }

    pub fn with_tint(mut self, tint: [f32; 3]) -> Self {
        self.tint = tint;
        self
    }
}

/// Pixel ↔ face-unit conversion for a given raster size.
#[derive(Clone, Copy)]
struct Frame {
    r: f64,
    cx: f64,
    cy: f64,
}

impl Frame {
    fn new(params: &FaceParams, width: usize, height: usize) -> Frame {
        Frame {
            r: params.size * width as f64 / 2.0,
            cx: (width as f64 - 1.0) / 2.0,
            cy: height as f64 * 0.52,
        }
    }

    fn to_px(&self, p: [f64; 2]) -> [f64; 2] {
        [self.cx + p[0] * self.r, self.cy + p[1] * self.r]
    }

    fn to_fu(&self, x: f64, y: f64) -> (f64, f64) {
        ((x - self.cx) / self.r, (y - self.cy) / self.r)
    }
}

/// Mouth contour curves shared by the renderer and the landmark generator.
/// `t` runs −1..1 from the left corner to the right corner.
struct Mouth {
    half_width: f64,
    center_y: f64,
    lift: f64,
    gap: f64,
}

impl Mouth {
    fn new(p: &FaceParams) -> Mouth {
        let e = &p.expression;
        Mouth {
            half_width: p.mouth_halfwidth * (1.0 + 0.12 * e.smile),
            center_y: p.mouth_y,
            lift: 0.10 * e.smile,
            gap: 0.012 + 0.22 * e.mouth_open,
        }
    }

    fn corner_lift(&self, t: f64) -> f64 {
        -self.lift * t * t
    }

    /// Inner upper lip edge.
    fn inner_upper(&self, t: f64) -> f64 {
        self.center_y + self.corner_lift(t) - 0.010 * (1.0 - t * t)
    }

    /// Inner lower lip edge (jaw drop widens the gap).
    fn inner_lower(&self, t: f64) -> f64 {
        self.inner_upper(t) + self.gap * (1.0 - t * t)
    }

    /// Outer upper lip edge.
    fn outer_upper(&self, t: f64) -> f64 {
        self.inner_upper(t) - 0.052 * (1.0 - t * t)
    }

    /// Outer lower lip edge.
    fn outer_lower(&self, t: f64) -> f64 {
        self.inner_lower(t) + 0.070 * (1.0 - t * t)
    }
}

struct Eye {
    center_x: f64,
    center_y: f64,
    half_width: f64,
    aperture: f64,
}

impl Eye {
    fn new(p: &FaceParams, right: bool) -> Eye {
        Eye {
            center_x: if right { p.eye_x } else { -p.eye_x },
            center_y: p.eye_y,
            half_width: p.eye_halfwidth,
            aperture: p.eye_aperture * (1.0 - 0.92 * p.expression.blink),
        }
    }

    /// Lid curves at parameter t ∈ −1..1 across the eye; ± for upper/lower.
    fn lid(&self, t: f64, upper: bool) -> f64 {
        let h = self.aperture * (1.0 - t * t);
        if upper {
            self.center_y - h
        } else {
            self.center_y + h
        }
    }
}

struct Brow {
    x0: f64,
    x1: f64,
    base_y: f64,
    arch: f64,
    thickness: f64,
}

impl Brow {
    fn new(p: &FaceParams, right: bool) -> Brow {
        let cx = if right { p.eye_x } else { -p.eye_x };
        Brow {
            x0: cx - p.brow_halfspan,
            x1: cx + p.brow_halfspan,
            base_y: p.eye_y - p.brow_offset - 0.07 * p.expression.brow_raise,
            arch: p.brow_arch,
            thickness: p.brow_thickness,
        }
    }

    /// Curve height at parameter t ∈ −1..1 across the span.
    fn curve(&self, t: f64) -> f64 {
        self.base_y - self.arch * (1.0 - t * t)
    }

    fn x_at(&self, t: f64) -> f64 {
        self.x0 + (t + 1.0) / 2.0 * (self.x1 - self.x0)
    }
}

/// The 49 landmarks of a parametric face rendered at `width`×`height`.
pub fn fiducials(params: &FaceParams, width: usize, height: usize) -> FiducialSet {
    let frame = Frame::new(params, width, height);
    let mut pts: Vec<[f64; 2]> = Vec::with_capacity(FIDUCIAL_COUNT);
    let mut push = |p: [f64; 2]| pts.push(frame.to_px(p));

    // brows: left outer→inner, right inner→outer (both left-to-right)
    for right in [false, true] {
        let brow = Brow::new(params, right);
        for i in 0..5 {
            let t = -1.0 + i as f64 * 0.5;
            push([brow.x_at(t), brow.curve(t)]);
        }
    }

    // nose bridge, top to bottom
    for i in 0..4 {
        let y = -0.24 + i as f64 * (0.30 / 3.0);
        push([0.0, y]);
    }

    // nose base: left nostril, left inner, center, right inner, right nostril
    let nw = params.nose_halfwidth;
    push([-nw, 0.185]);
    push([-nw * 0.5, 0.205]);
    push([0.0, 0.17]);
    push([nw * 0.5, 0.205]);
    push([nw, 0.185]);

    // eyes, contour order per the layout table
    for right in [false, true] {
        let eye = Eye::new(params, right);
        let seq: [(f64, i8); 6] = [
            (-1.0, 0),
            (-1.0 / 3.0, 1),
            (1.0 / 3.0, 1),
            (1.0, 0),
            (1.0 / 3.0, -1),
            (-1.0 / 3.0, -1),
        ];
        for (t, lid) in seq {
            let y = match lid {
                1 => eye.lid(t, true),
                -1 => eye.lid(t, false),
                _ => eye.center_y,
            };
            push([eye.center_x + t * eye.half_width, y]);
        }
    }

    // outer lip: left corner, upper left→right, right corner, lower right→left
    let mouth = Mouth::new(params);
    push([-mouth.half_width, mouth.center_y + mouth.corner_lift(-1.0)]);
    for i in 0..5 {
        let t = -2.0 / 3.0 + i as f64 / 3.0;
        push([t * mouth.half_width, mouth.outer_upper(t)]);
    }
    push([mouth.half_width, mouth.center_y + mouth.corner_lift(1.0)]);
    for i in 0..5 {
        let t = 2.0 / 3.0 - i as f64 / 3.0;
        push([t * mouth.half_width, mouth.outer_lower(t)]);
    }

    // inner lip: 3 upper left→right, 3 lower right→left
    for t in [-0.5, 0.0, 0.5] {
        push([t * mouth.half_width, mouth.inner_upper(t)]);
    }
    for t in [0.5, 0.0, -0.5] {
        push([t * mouth.half_width, mouth.inner_lower(t)]);
    }

    FiducialSet::new(pts).expect("synthetic landmarks are finite by construction")
}

/// Cubic soft coverage of a signed distance (negative = inside); `feather`
/// is the transition width in the same units as `d`.
fn soft(d: f64, feather: f64) -> f64 {
    let s = (0.5 - d / feather).clamp(0.0, 1.0);
    s * s * (3.0 - 2.0 * s)
}

fn mix(base: [f32; 3], layer: [f32; 3], cov: f64) -> [f32; 3] {
    let c = cov as f32;
    [
        base[0] + (layer[0] - base[0]) * c,
        base[1] + (layer[1] - base[1]) * c,
        base[2] + (layer[2] - base[2]) * c,
    ]
}

/// Head dome plus nose ridge height (face units) and its gradient.
fn surface_height(p: &FaceParams, nx: f64, ny: f64) -> (f64, f64, f64) {
    let q = nx * nx + (ny / p.aspect) * (ny / p.aspect);
    let (dome, dgx, dgy) = if q < 1.0 {
        let s = (1.0 - q).sqrt().max(0.22);
        (
            p.dome_height * (1.0 - q).sqrt(),
            -p.dome_height * nx / s,
            -p.dome_height * (ny / (p.aspect * p.aspect)) / s,
        )
    } else {
        (0.0, 0.0, 0.0)
    };
    let ex = nx / 0.14;
    let ey = (ny - 0.02) / 0.34;
    let g = (-ex * ex - ey * ey).exp();
    let nose = p.nose_height * g;
    let ngx = nose * (-2.0 * ex / 0.14);
    let ngy = nose * (-2.0 * ey / 0.34);
    (dome + nose, dgx + ngx, dgy + ngy)
}

/// Render the parametric face. Deterministic; all feature edges are
/// feathered so derivatives stay smooth for optical flow.
pub fn render_face(params: &FaceParams, width: usize, height: usize) -> Result<FaceImage> {
    let p = params;
    let frame = Frame::new(p, width, height);
    let feather = 1.6 / frame.r;
    let mouth = Mouth::new(p);
    let eyes = [Eye::new(p, false), Eye::new(p, true)];
    let brows = [Brow::new(p, false), Brow::new(p, true)];

    // normalized light, y up
    let lnorm = (p.light[0] * p.light[0] + p.light[1] * p.light[1] + 1.44).sqrt();
    let light = [p.light[0] / lnorm, p.light[1] / lnorm, 1.2 / lnorm];

    FaceImage::from_fn(width, height, |xi, yi| {
        let (nx, ny) = frame.to_fu(xi as f64, yi as f64);
        let mut color = p.background;

        // head silhouette
        let q = nx * nx + (ny / p.aspect) * (ny / p.aspect);
        let head = soft(q.sqrt() - 1.0, feather);
        if head <= 0.0 {
            return color;
        }

        // Lambertian shading of the dome + nose surface
        let (_, gx, gy) = surface_height(p, nx, ny);
        let nlen = (gx * gx + gy * gy + 1.0).sqrt();
        // image y grows downward; world y grows upward
        let normal = [-gx / nlen, gy / nlen, 1.0 / nlen];
        let ndotl =
            (normal[0] * light[0] + normal[1] * light[1] + normal[2] * light[2]).max(0.0);
        let shade = (p.ambient + p.diffuse * ndotl) as f32;
        let skin = [
            (p.skin[0] * p.tint[0] * shade).clamp(0.0, 1.0),
            (p.skin[1] * p.tint[1] * shade).clamp(0.0, 1.0),
            (p.skin[2] * p.tint[2] * shade).clamp(0.0, 1.0),
        ];
        let mut face = skin;

        // nostrils
        for sx in [-1.0, 1.0] {
            let dx = nx - sx * p.nose_halfwidth * 0.62;
            let dy = ny - 0.19;
            let d = (dx * dx + dy * dy).sqrt() - 0.032;
            let cov = soft(d, feather * 1.5) * 0.55;
            face = mix(face, [0.18, 0.10, 0.09], cov);
        }

        // brows
        for brow in &brows {
            if nx >= brow.x0 - 0.05 && nx <= brow.x1 + 0.05 {
                let t = ((nx - brow.x0) / (brow.x1 - brow.x0) * 2.0 - 1.0).clamp(-1.05, 1.05);
                let half = brow.thickness * (1.0 - 0.35 * t.abs());
                let d = (ny - brow.curve(t)).abs() - half;
                let end = soft(t.abs() - 1.0, 0.12);
                face = mix(face, p.brow_color, soft(d, feather * 1.6) * 0.9 * end);
            }
        }

        // eyes: sclera, iris, pupil, lid shadow
        for eye in &eyes {
            let t = (nx - eye.center_x) / eye.half_width;
            if t.abs() <= 1.2 {
                let tc = t.clamp(-1.0, 1.0);
                let h = eye.aperture * (1.0 - tc * tc);
                let d = (ny - eye.center_y).abs() - h;
                let open = soft(d, feather) * soft(t.abs() - 1.0, feather / eye.half_width);
                if open > 0.0 {
                    let mut eye_color = [0.93, 0.92, 0.90];
                    let ir = ((nx - eye.center_x).powi(2) + (ny - eye.center_y).powi(2)).sqrt();
                    let iris_cov = soft(ir - p.iris_radius, feather * 1.2);
                    let ring = (1.0 - 0.55 * (ir / p.iris_radius).clamp(0.0, 1.0).powi(2)) as f32;
                    eye_color = mix(
                        eye_color,
                        [p.iris[0] * ring, p.iris[1] * ring, p.iris[2] * ring],
                        iris_cov,
                    );
                    let pupil = soft(ir - 0.028, feather);
                    eye_color = mix(eye_color, [0.05, 0.04, 0.04], pupil);
                    face = mix(face, eye_color, open);
                }
                // lash line along the upper lid
                let dl = (ny - eye.lid(tc, true)).abs() - 0.008;
                let lash = soft(dl, feather) * soft(t.abs() - 1.0, 0.1) * 0.45;
                face = mix(face, [0.22, 0.15, 0.12], lash);
            }
        }

        // mouth: interior, then lips over it
        let tm = nx / mouth.half_width;
        if tm.abs() <= 1.1 {
            let t = tm.clamp(-1.0, 1.0);
            let span = soft(tm.abs() - 1.0, feather / mouth.half_width);
            let interior = soft(mouth.inner_upper(t) - ny, feather)
                * soft(ny - mouth.inner_lower(t), feather)
                * span;
            face = mix(face, [0.25, 0.10, 0.10], interior);
            let upper = soft(mouth.outer_upper(t) - ny, feather)
                * soft(ny - mouth.inner_upper(t), feather)
                * span;
            let lower = soft(mouth.inner_lower(t) - ny, feather)
                * soft(ny - mouth.outer_lower(t), feather)
                * span;
            let lip_dark = [p.lip[0] * 0.88, p.lip[1] * 0.85, p.lip[2] * 0.85];
            let lip_lit = [
                (p.lip[0] * 1.1).min(1.0),
                p.lip[1] * 1.05,
                p.lip[2] * 1.05,
            ];
            face = mix(face, lip_dark, upper * 0.92);
            face = mix(face, lip_lit, lower * 0.92);
        }

        color = mix(color, face, head);
        [
            color[0].clamp(0.0, 1.0),
            color[1].clamp(0.0, 1.0),
            color[2].clamp(0.0, 1.0),
        ]
    })
}

/// 3D face surface on the pixel grid, built so that the frontal projection
/// with focal = `width` lands every vertex exactly on its own pixel. Valid
/// inside the head silhouette.
pub fn face_mesh(params: &FaceParams, width: usize, height: usize) -> DepthMesh {
    let frame = Frame::new(params, width, height);
    let f = width as f64;
    let cx = (width as f64 - 1.0) / 2.0;
    let cy = (height as f64 - 1.0) / 2.0;
    let mut points = vec![[0.0; 3]; width * height];
    let mut valid = vec![false; width * height];
    for v in 0..height {
        for u in 0..width {
            let (nx, ny) = frame.to_fu(u as f64, v as f64);
            let q = nx * nx + (ny / params.aspect) * (ny / params.aspect);
            if q > 1.0 {
                continue;
            }
            let (z_fu, _, _) = surface_height(params, nx, ny);
            let z = z_fu * frame.r;
            let scale = (f - z) / f;
            points[v * width + u] = [
                (u as f64 - cx) * scale,
                (cy - v as f64) * scale,
                z,
            ];
            valid[v * width + u] = true;
        }
    }
    DepthMesh::new(width, height, points, valid).expect("synthetic mesh is finite")
}

/// Canonical camera for a given raster: focal = width, principal point at
/// the grid center.
pub fn canonical_pose(width: usize, height: usize) -> Pose {
    Pose::frontal(
        width as f64,
        (width as f64 - 1.0) / 2.0,
        (height as f64 - 1.0) / 2.0,
    )
    .expect("frontal pose is always valid")
}

/// The neutral 194×244 template used for pose estimation and
/// frontalization.
///
/// Anchor depths come from the surface; their x/y are chosen so that the
/// frontal canonical camera projects each anchor exactly onto its 2D
/// landmark (bilinear interpolation alone is not perspective-exact).
pub fn canonical_template() -> Template {
    let params = FaceParams::default();
    let mesh = face_mesh(&params, CANONICAL_WIDTH, CANONICAL_HEIGHT);
    let fids = fiducials(&params, CANONICAL_WIDTH, CANONICAL_HEIGHT);
    let f = CANONICAL_WIDTH as f64;
    let cx = (CANONICAL_WIDTH as f64 - 1.0) / 2.0;
    let cy = (CANONICAL_HEIGHT as f64 - 1.0) / 2.0;
    let mut anchors = [[0.0; 3]; FIDUCIAL_COUNT];
    for (k, a) in anchors.iter_mut().enumerate() {
        let [fx, fy] = fids.point(k);
        let z = mesh
            .sample(fx, fy)
            .expect("all landmarks lie inside the face")[2];
        let scale = (f - z) / f;
        *a = [(fx - cx) * scale, (cy - fy) * scale, z];
    }
    Template {
        mesh,
        fiducials: fids,
        anchors,
    }
}

/// Smooth 3D displacement field for an expression change, on the grid of
/// `face_mesh(params, width, height)`. Displacements are localized bumps
/// around the moving features, consistent in direction with how the
/// renderer and landmarks move.
pub fn expression_field(
    params: &FaceParams,
    width: usize,
    height: usize,
    expr: &Expression,
) -> TranslationField {
    let frame = Frame::new(params, width, height);
    let r = frame.r;
    let mut deltas = vec![[0.0; 3]; width * height];
    let mut valid = vec![true; width * height];
    let gauss = |dx: f64, dy: f64, sx: f64, sy: f64| {
        (-(dx / sx) * (dx / sx) - (dy / sy) * (dy / sy)).exp()
    };
    for v in 0..height {
        for u in 0..width {
            let (nx, ny) = frame.to_fu(u as f64, v as f64);
            let q = nx * nx + (ny / params.aspect) * (ny / params.aspect);
            if q > 1.0 {
                valid[v * width + u] = false;
                continue;
            }
            let mut d = [0.0; 3]; // world frame: x right, y up, z out
            // eyelids slide down (world −y)
            if expr.blink != 0.0 {
                for sx in [-1.0, 1.0] {
                    let g = gauss(
                        nx - sx * params.eye_x,
                        ny - params.eye_y,
                        params.eye_halfwidth * 1.4,
                        params.eye_aperture * 2.8,
                    );
                    d[1] -= expr.blink * 0.055 * g * r;
                    d[2] -= expr.blink * 0.010 * g * r;
                }
            }
            // mouth corners pull outward, up, and slightly back
            if expr.smile != 0.0 {
                for sx in [-1.0, 1.0] {
                    let g = gauss(
                        nx - sx * params.mouth_halfwidth,
                        ny - params.mouth_y,
                        0.17,
                        0.17,
                    );
                    d[0] += sx * expr.smile * 0.045 * g * r;
                    d[1] += expr.smile * 0.060 * g * r;
                    d[2] -= expr.smile * 0.020 * g * r;
                }
            }
            // jaw drop: everything below the mouth line eases downward
            if expr.mouth_open != 0.0 {
                let below = soft(params.mouth_y - 0.04 - ny, 0.18);
                let g = below * (-(nx / 0.45) * (nx / 0.45)).exp();
                d[1] -= expr.mouth_open * 0.11 * g * r;
            }
            // brow raise lifts the forehead band
            if expr.brow_raise != 0.0 {
                for sx in [-1.0, 1.0] {
                    let g = gauss(
                        nx - sx * params.eye_x,
                        ny - (params.eye_y - params.brow_offset),
                        params.brow_halfspan * 1.5,
                        0.13,
                    );
                    d[1] += expr.brow_raise * 0.050 * g * r;
                }
            }
            deltas[v * width + u] = d;
        }
    }
    TranslationField::new(width, height, deltas, valid).expect("finite by construction")
}

/// A photo of the template geometry under a rigid pose: the textured mesh
/// rasterized into the photo plane, plus where the 3D landmark anchors land.
pub fn render_posed_photo(
    mesh: &DepthMesh,
    texture: &FaceImage,
    anchors: &[[f64; 3]],
    pose: &Pose,
    width: usize,
    height: usize,
    background: [f32; 3],
) -> Result<(FaceImage, FiducialSet)> {
    let raster = render::rasterize(mesh, Some(texture), pose, width, height, background)?;
    let mut pts = Vec::with_capacity(anchors.len());
    for (k, anchor) in anchors.iter().enumerate() {
        let uv = pose.project(*anchor).ok_or_else(|| {
            Error::InvalidInput(format!("landmark {k} projects behind the camera"))
        })?;
        pts.push(uv);
    }
    Ok((raster.image, FiducialSet::new(pts)?))
}

/// Random-but-reproducible expression and lighting for collection photos.
fn sample_variation(rng: &mut ChaCha8Rng) -> (Expression, [f64; 2], f64) {
    let expr = Expression {
        smile: rng.random_range(-0.3..1.0),
        mouth_open: rng.random_range(-0.4..0.8f64).max(0.0),
        blink: if rng.random_bool(0.15) {
            rng.random_range(0.5..1.0)
        } else {
            0.0
        },
        brow_raise: rng.random_range(-0.6..0.9),
    };
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let mag = rng.random_range(0.15..0.55);
    let light = [angle.cos() * mag, angle.sin() * mag * 0.7];
    let diffuse = rng.random_range(0.18..0.45);
    (expr, light, diffuse)
}

/// In-memory photo collection of one identity under varied expression and
/// lighting, frontal, with exact landmarks.
pub fn demo_collection(
    identity_seed: u64,
    count: usize,
    width: usize,
    height: usize,
) -> Result<PhotoCollection> {
    let base = FaceParams::identity(identity_seed);
    let mut rng = ChaCha8Rng::seed_from_u64(identity_seed.wrapping_mul(0x9e37_79b9).wrapping_add(7));
    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let (expr, light, diffuse) = sample_variation(&mut rng);
        let params = base.clone().with_expression(expr).with_light(light, diffuse);
        let image = render_face(&params, width, height)?;
        let fids = fiducials(&params, width, height);
        records.push(PhotoRecord {
            id: format!("photo_{i:04}"),
            path: format!("photo_{i:04}.png").into(),
            image,
            fiducials: fids,
        });
    }
    PhotoCollection::new(records)
}

/// Write a demo collection to disk in the ingestion format (PNG + CSV).
pub fn write_demo_collection(
    dir: impl AsRef<Path>,
    identity_seed: u64,
    count: usize,
    width: usize,
    height: usize,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let coll = demo_collection(identity_seed, count, width, height)?;
    for rec in coll.iter() {
        rec.image.save_png(dir.join(format!("{}.png", rec.id)))?;
        rec.fiducials.save_csv(dir.join(format!("{}.csv", rec.id)))?;
    }
    Ok(())
}

/// A synthetic performance: the identity's average (neutral) mesh plus one
/// smooth expression field per frame (blink and smile cycles).
pub fn demo_performance(
    identity_seed: u64,
    frames: usize,
    width: usize,
    height: usize,
) -> (DepthMesh, Vec<TranslationField>) {
    let params = FaceParams::identity(identity_seed);
    let avg = face_mesh(&params, width, height);
    let fields = (0..frames)
        .map(|i| {
            let t = if frames > 1 {
                i as f64 / (frames - 1) as f64
            } else {
                0.0
            };
            let expr = Expression {
                // blink peaks a third of the way in, smile builds to the end
                blink: (-((t - 0.33) / 0.12) * ((t - 0.33) / 0.12)).exp(),
                smile: (t * 1.3).min(1.0) * 0.9,
                mouth_open: 0.5 * (std::f64::consts::PI * t).sin().max(0.0),
                brow_raise: 0.4 * (2.2 * t).sin(),
            };
            expression_field(&params, width, height, &expr)
        })
        .collect();
    (avg, fields)
}
