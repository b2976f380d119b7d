//! Rigid pose recovery from 2D↔3D landmark correspondences.
//!
//! The camera model matches [`Pose`]: a world point X maps to
//! p = R·X + t, then to pixels u = cx + f·pₓ/(f − p_z),
//! v = cy − f·p_y/(f − p_z). The estimate starts from a direct linear
//! transform over all correspondences and is polished by Gauss–Newton on
//! the reprojection error with backtracking line search.

use nalgebra::{DMatrix, Matrix3, Matrix6, Vector3, Vector6};

use crate::core::fiducials::FiducialSet;
use crate::core::pose::Pose;
use crate::error::{Error, Result};

const MAX_ITERATIONS: usize = 100;
const STEP_TOLERANCE: f64 = 1e-10;

/// A recovered rigid pose plus fit diagnostics.
#[derive(Clone, Debug)]
pub struct PoseEstimate {
    pub pose: Pose,
    /// Root-mean-square reprojection error in pixels.
    pub rms_residual: f64,
    /// Gauss–Newton iterations actually taken.
    pub iterations: usize,
}

/// Estimate the pose that projects `anchors` onto `image_points`.
pub fn estimate_pose(
    image_points: &FiducialSet,
    anchors: &[[f64; 3]],
    focal: f64,
    cx: f64,
    cy: f64,
) -> Result<PoseEstimate> {
    estimate_pose_points(image_points.points(), anchors, focal, cx, cy)
}

/// Slice-level pose estimation; needs at least 6 correspondences.
pub fn estimate_pose_points(
    image_points: &[[f64; 2]],
    anchors: &[[f64; 3]],
    focal: f64,
    cx: f64,
    cy: f64,
) -> Result<PoseEstimate> {
    if image_points.len() != anchors.len() {
        return Err(Error::dims(
            "pose correspondences",
            anchors.len(),
            image_points.len(),
        ));
    }
    if image_points.len() < 6 {
        return Err(Error::InvalidInput(format!(
            "pose estimation needs at least 6 correspondences, got {}",
            image_points.len()
        )));
    }
    if !(focal.is_finite() && focal > 0.0) {
        return Err(Error::InvalidInput(format!(
            "focal length must be positive, got {focal}"
        )));
    }
    if image_points.iter().flatten().any(|v| !v.is_finite())
        || anchors.iter().flatten().any(|v| !v.is_finite())
    {
        return Err(Error::NonFinite("pose correspondences"));
    }

    // Try the DLT initialization first, fall back to the frontal pose;
    // keep whichever refinement lands at lower reprojection error.
    let mut best: Option<(Matrix3<f64>, Vector3<f64>, f64, usize)> = None;
    let mut attempts: Vec<f64> = Vec::new();
    let mut inits = Vec::new();
    if let Some(init) = dlt_init(image_points, anchors, focal, cx, cy) {
        inits.push(init);
    }
    inits.push((Matrix3::identity(), Vector3::zeros()));
    for (r0, t0) in inits {
        if let Some((r, t, cost, iters)) =
            gauss_newton(image_points, anchors, focal, cx, cy, r0, t0)
        {
            attempts.push(cost);
            if best.as_ref().is_none_or(|b| cost < b.2) {
                best = Some((r, t, cost, iters));
            }
        }
    }

    let (rotation, translation, cost, iterations) = best.ok_or(Error::Diverged {
        context: "pose estimation",
        residuals: attempts,
    })?;
    let pose = Pose::new(rotation, translation, focal, cx, cy)?;
    Ok(PoseEstimate {
        pose,
        rms_residual: (cost / image_points.len() as f64).sqrt(),
        iterations,
    })
}

/// Direct linear transform: solve the homogeneous projection matrix from
/// all correspondences, then factor it into (R, t) for this camera model.
fn dlt_init(
    image_points: &[[f64; 2]],
    anchors: &[[f64; 3]],
    focal: f64,
    cx: f64,
    cy: f64,
) -> Option<(Matrix3<f64>, Vector3<f64>)> {
    let n = anchors.len();

    // Hartley-style normalization of both point sets for conditioning.
    let mut c2 = [0.0f64; 2];
    let mut c3 = [0.0f64; 3];
    for p in image_points {
        c2[0] += p[0];
        c2[1] += p[1];
    }
    for a in anchors {
        for k in 0..3 {
            c3[k] += a[k];
        }
    }
    for v in &mut c2 {
        *v /= n as f64;
    }
    for v in &mut c3 {
        *v /= n as f64;
    }
    let mut s2 = 0.0;
    let mut s3 = 0.0;
    for p in image_points {
        s2 += ((p[0] - c2[0]).powi(2) + (p[1] - c2[1]).powi(2)).sqrt();
    }
    for a in anchors {
        s3 += ((a[0] - c3[0]).powi(2) + (a[1] - c3[1]).powi(2) + (a[2] - c3[2]).powi(2)).sqrt();
    }
    let s2 = (2.0f64).sqrt() / (s2 / n as f64).max(1e-12);
    let s3 = (3.0f64).sqrt() / (s3 / n as f64).max(1e-12);

    let mut a_mat = DMatrix::<f64>::zeros(2 * n, 12);
    for (i, (p, x)) in image_points.iter().zip(anchors).enumerate() {
        let u = (p[0] - c2[0]) * s2;
        let v = (p[1] - c2[1]) * s2;
        let xh = [
            (x[0] - c3[0]) * s3,
            (x[1] - c3[1]) * s3,
            (x[2] - c3[2]) * s3,
            1.0,
        ];
        for k in 0..4 {
            a_mat[(2 * i, 4 + k)] = -xh[k];
            a_mat[(2 * i, 8 + k)] = v * xh[k];
            a_mat[(2 * i + 1, k)] = xh[k];
            a_mat[(2 * i + 1, 8 + k)] = -u * xh[k];
        }
    }
    let svd = a_mat.svd(false, true);
    let vt = svd.v_t?;
    let last = vt.nrows() - 1;
    let h = vt.row(last);

    // un-normalize: P = T2⁻¹ · P̂ · T3
    let p_hat = Matrix3::from_rows(&[
        nalgebra::RowVector3::new(h[0], h[1], h[2]),
        nalgebra::RowVector3::new(h[4], h[5], h[6]),
        nalgebra::RowVector3::new(h[8], h[9], h[10]),
    ]);
    let p_t = Vector3::new(h[3], h[7], h[11]);
    let t2_inv = Matrix3::new(1.0 / s2, 0.0, c2[0], 0.0, 1.0 / s2, c2[1], 0.0, 0.0, 1.0);
    let t3_rot = Matrix3::identity() * s3;
    let t3_t = Vector3::new(-c3[0] * s3, -c3[1] * s3, -c3[2] * s3);
    let p_rot = t2_inv * p_hat * t3_rot;
    let p_trans = t2_inv * (p_hat * t3_t + p_t);

    // strip the intrinsics: A = K⁻¹·P with K = [f 0 cx; 0 −f cy; 0 0 1]
    let k_inv = Matrix3::new(
        1.0 / focal,
        0.0,
        -cx / focal,
        0.0,
        -1.0 / focal,
        cy / focal,
        0.0,
        0.0,
        1.0,
    );
    let mut m = k_inv * p_rot;
    let mut mt = k_inv * p_trans;

    // fix the projective sign so depths f − p_z come out positive
    let mut w_sum = 0.0;
    for x in anchors {
        w_sum += m.row(2).dot(&Vector3::from(*x).transpose()) + mt[2];
    }
    if w_sum < 0.0 {
        m = -m;
        mt = -mt;
    }

    // A = s·[R₁; R₂; −R₃ | t₁, t₂, f − t₃]: recover scale, orthonormalize
    let scale = (m.row(0).norm() + m.row(1).norm() + m.row(2).norm()) / 3.0;
    if !(scale.is_finite() && scale > 1e-12) {
        return None;
    }
    let r_raw = Matrix3::from_rows(&[
        m.row(0) / scale,
        m.row(1) / scale,
        -m.row(2) / scale,
    ]);
    let svd_r = r_raw.svd(true, true);
    let (u, v_t) = (svd_r.u?, svd_r.v_t?);
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u_fix = u;
        u_fix.set_column(2, &(-u.column(2)));
        r = u_fix * v_t;
    }
    let t = Vector3::new(mt[0] / scale, mt[1] / scale, focal - mt[2] / scale);
    if r.iter().chain(t.iter()).all(|v| v.is_finite()) {
        Some((r, t))
    } else {
        None
    }
}

fn reprojection_cost(
    image_points: &[[f64; 2]],
    anchors: &[[f64; 3]],
    focal: f64,
    cx: f64,
    cy: f64,
    r: &Matrix3<f64>,
    t: &Vector3<f64>,
) -> f64 {
    let mut cost = 0.0;
    for (p2, x) in image_points.iter().zip(anchors) {
        let p = r * Vector3::from(*x) + t;
        let denom = focal - p.z;
        if denom <= 1e-9 {
            return f64::INFINITY;
        }
        let u = cx + focal * p.x / denom;
        let v = cy - focal * p.y / denom;
        cost += (u - p2[0]).powi(2) + (v - p2[1]).powi(2);
    }
    cost
}

/// Gauss–Newton on (axis-angle increment, translation) with backtracking.
/// Rotation increments compose on the left: R ← exp([δω]ₓ)·R.
fn gauss_newton(
    image_points: &[[f64; 2]],
    anchors: &[[f64; 3]],
    focal: f64,
    cx: f64,
    cy: f64,
    mut r: Matrix3<f64>,
    mut t: Vector3<f64>,
) -> Option<(Matrix3<f64>, Vector3<f64>, f64, usize)> {
    let mut cost = reprojection_cost(image_points, anchors, focal, cx, cy, &r, &t);
    if !cost.is_finite() {
        return None;
    }
    let mut iterations = 0;
    for _ in 0..MAX_ITERATIONS {
        let mut jtj = Matrix6::<f64>::zeros();
        let mut jtr = Vector6::<f64>::zeros();
        for (p2, x) in image_points.iter().zip(anchors) {
            let q = r * Vector3::from(*x); // p − t
            let p = q + t;
            let denom = focal - p.z;
            if denom <= 1e-9 {
                return None;
            }
            let u = cx + focal * p.x / denom;
            let v = cy - focal * p.y / denom;
            let du_dp = Vector3::new(focal / denom, 0.0, focal * p.x / (denom * denom));
            let dv_dp = Vector3::new(0.0, -focal / denom, -focal * p.y / (denom * denom));
            // ∂p/∂δω = −[q]ₓ, ∂p/∂δt = I
            let neg_qx = Matrix3::new(0.0, q.z, -q.y, -q.z, 0.0, q.x, q.y, -q.x, 0.0);
            let mut ju = Vector6::<f64>::zeros();
            let mut jv = Vector6::<f64>::zeros();
            let ju_w = neg_qx.transpose() * du_dp;
            let jv_w = neg_qx.transpose() * dv_dp;
            for k in 0..3 {
                ju[k] = ju_w[k];
                jv[k] = jv_w[k];
                ju[3 + k] = du_dp[k];
                jv[3 + k] = dv_dp[k];
            }
            let ru = u - p2[0];
            let rv = v - p2[1];
            jtj += ju * ju.transpose() + jv * jv.transpose();
            jtr += ju * ru + jv * rv;
        }

        let step = (jtj + Matrix6::identity() * 1e-12).lu().solve(&(-jtr))?;
        if !step.iter().all(|v| v.is_finite()) {
            return None;
        }

        // backtracking line search on the full step
        let mut accepted = false;
        let mut scale = 1.0;
        for _ in 0..30 {
            let delta = step * scale;
            let dw = Vector3::new(delta[0], delta[1], delta[2]);
            let dt = Vector3::new(delta[3], delta[4], delta[5]);
            let r_new = nalgebra::Rotation3::from_scaled_axis(dw).into_inner() * r;
            let t_new = t + dt;
            let new_cost =
                reprojection_cost(image_points, anchors, focal, cx, cy, &r_new, &t_new);
            if new_cost < cost {
                r = r_new;
                t = t_new;
                cost = new_cost;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        iterations += 1;
        if !accepted || step.norm() < STEP_TOLERANCE {
            break;
        }
    }
    Some((r, t, cost, iterations))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    fn angular_difference(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
        let rel = a.transpose() * b;
        let trace = rel.trace().clamp(-1.0, 3.0);
        ((trace - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
    }

    fn recover(axis_angle: [f64; 3], translation: [f64; 3]) -> (Pose, PoseEstimate) {
        let template = synth::canonical_template();
        let (w, h) = (400usize, 400usize);
        let focal = w as f64;
        let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
        let pose = Pose::from_axis_angle(axis_angle, translation, focal, cx, cy).unwrap();
        let pts: Vec<[f64; 2]> = template
            .anchors
            .iter()
            .map(|a| pose.project(*a).unwrap())
            .collect();
        let est = estimate_pose_points(&pts, &template.anchors, focal, cx, cy).unwrap();
        (pose, est)
    }

    #[test]
    fn recovers_frontal_pose() {
        let (pose, est) = recover([0.0, 0.0, 0.0], [0.0, 0.0, 0.0]);
        assert!(est.rms_residual < 1e-6, "rms {}", est.rms_residual);
        assert!(angular_difference(pose.rotation(), est.pose.rotation()) < 1e-6);
        assert!((pose.translation() - est.pose.translation()).norm() < 1e-4);
    }

    #[test]
    fn recovers_yaw_pitch_roll_with_translation() {
        let cases = [
            ([0.0, 15f64.to_radians(), 0.0], [8.0, -5.0, 20.0]),
            ([10f64.to_radians(), -20f64.to_radians(), 0.05], [-12.0, 4.0, -15.0]),
            ([-0.12, 0.3, -0.2], [25.0, 18.0, 40.0]),
        ];
        for (axis_angle, trans) in cases {
            let (pose, est) = recover(axis_angle, trans);
            assert!(
                est.rms_residual < 1e-6,
                "rms {} for {axis_angle:?}",
                est.rms_residual
            );
            assert!(
                angular_difference(pose.rotation(), est.pose.rotation()) < 1e-5,
                "rotation off for {axis_angle:?}"
            );
            assert!((pose.translation() - est.pose.translation()).norm() < 1e-3);
        }
    }

    #[test]
    fn tolerates_landmark_noise() {
        use rand::Rng;
        use rand::SeedableRng;
        let template = synth::canonical_template();
        let (w, h) = (400usize, 400usize);
        let focal = w as f64;
        let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
        let pose =
            Pose::from_axis_angle([0.0, 0.25, 0.0], [5.0, -3.0, 10.0], focal, cx, cy).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<[f64; 2]> = template
            .anchors
            .iter()
            .map(|a| {
                let p = pose.project(*a).unwrap();
                [
                    p[0] + rng.random_range(-0.5..0.5),
                    p[1] + rng.random_range(-0.5..0.5),
                ]
            })
            .collect();
        let est = estimate_pose_points(&pts, &template.anchors, focal, cx, cy).unwrap();
        assert!(est.rms_residual < 1.0);
        assert!(angular_difference(pose.rotation(), est.pose.rotation()) < 0.02);
    }

    #[test]
    fn rejects_bad_input_sizes() {
        let pts = vec![[0.0, 0.0]; 5];
        let anchors = vec![[0.0, 0.0, 0.0]; 5];
        assert!(estimate_pose_points(&pts, &anchors, 100.0, 50.0, 50.0).is_err());
        let pts6 = vec![[0.0, 0.0]; 6];
        assert!(estimate_pose_points(&pts6, &anchors, 100.0, 50.0, 50.0).is_err());
    }
}
