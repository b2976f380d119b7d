//! Thin-plate-spline smoothing and warping between landmark sets.
//!
//! A mapping `r` is fitted so that `r(target_i) ≈ source_i`, trading data
//! fidelity against bending energy through the smoothing weight λ:
//!
//! minimize  Σ‖source_i − r(target_i)‖² + λ · (bending energy of r)
//!
//! Fitting in the target→source direction makes `r` directly usable for
//! backward warping: resampling the source image at `r(p)` produces an
//! image aligned to the target landmarks.

use nalgebra::DMatrix;

use crate::core::fiducials::FiducialSet;
use crate::core::warp::WarpField;
use crate::error::{Error, Result};

/// TPS radial kernel φ(d) = d²·log d, with the removable singularity at
/// zero filled in: φ(0) = 0. Takes the squared distance.
fn kernel(r2: f64) -> f64 {
    if r2 > 0.0 {
        0.5 * r2 * r2.ln()
    } else {
        0.0
    }
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

/// A fitted thin-plate-spline map from target coordinates toward source
/// coordinates: r(p) = a₀ + aₓ·pₓ + a_y·p_y + Σᵢ wᵢ·φ(‖p − cᵢ‖).
#[derive(Clone, Debug)]
pub struct TpsMapping {
    controls: Vec<[f64; 2]>,
    sources: Vec<[f64; 2]>,
    weights: Vec<[f64; 2]>,
    /// Per output channel: [constant, x coefficient, y coefficient].
    affine: [[f64; 3]; 2],
    lambda: f64,
}

impl TpsMapping {
    /// Fit the smoothing spline through arbitrary point lists. `target`
    /// points become the control sites; `source` points are the values the
    /// map should (approximately, for λ > 0) reach.
    pub fn fit(source: &[[f64; 2]], target: &[[f64; 2]], lambda: f64) -> Result<Self> {
        if source.len() != target.len() {
            return Err(Error::dims(
                "tps point sets",
                source.len().to_string(),
                target.len().to_string(),
            ));
        }
        let n = target.len();
        if n < 3 {
            return Err(Error::InvalidInput(format!(
                "thin-plate fit needs at least 3 point pairs, got {n}"
            )));
        }
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "smoothing weight must be finite and non-negative, got {lambda}"
            )));
        }
        if source
            .iter()
            .chain(target.iter())
            .any(|p| !(p[0].is_finite() && p[1].is_finite()))
        {
            return Err(Error::NonFinite("tps point coordinates"));
        }

        // Bordered system: [K + λI  P; Pᵀ  0]·[w; a] = [source; 0].
        // The Pᵀw = 0 rows are the side conditions that keep the bending
        // energy finite; λ on the kernel diagonal is the smoothing term.
        let m = n + 3;
        let mut a = DMatrix::<f64>::zeros(m, m);
        let mut rhs = DMatrix::<f64>::zeros(m, 2);
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] = kernel(dist2(target[i], target[j]));
            }
            a[(i, i)] += lambda;
            a[(i, n)] = 1.0;
            a[(i, n + 1)] = target[i][0];
            a[(i, n + 2)] = target[i][1];
            a[(n, i)] = 1.0;
            a[(n + 1, i)] = target[i][0];
            a[(n + 2, i)] = target[i][1];
            rhs[(i, 0)] = source[i][0];
            rhs[(i, 1)] = source[i][1];
        }

        let lu = a.clone().lu();
        let solution = lu
            .solve(&rhs)
            .ok_or_else(|| Error::Degenerate("thin-plate system is singular".into()))?;

        // LU "succeeds" on some near-singular layouts (collinear or
        // duplicated controls) with garbage values; verify the solution
        // actually satisfies the system before trusting it.
        let residual = (&a * &solution - &rhs).abs().max();
        let scale = a.abs().max() * solution.abs().max() + rhs.abs().max();
        if !residual.is_finite() || residual > 1e-8 * (1.0 + scale) {
            return Err(Error::Degenerate(format!(
                "thin-plate system is numerically singular \
                 (relative residual {:.2e}; collinear or duplicate controls?)",
                residual / (1.0 + scale)
            )));
        }

        let weights = (0..n)
            .map(|i| [solution[(i, 0)], solution[(i, 1)]])
            .collect();
        let affine = [
            [solution[(n, 0)], solution[(n + 1, 0)], solution[(n + 2, 0)]],
            [solution[(n, 1)], solution[(n + 1, 1)], solution[(n + 2, 1)]],
        ];
        Ok(TpsMapping {
            controls: target.to_vec(),
            sources: source.to_vec(),
            weights,
            affine,
            lambda,
        })
    }

    /// Map a target-space point toward source space.
    pub fn evaluate(&self, p: [f64; 2]) -> [f64; 2] {
        let mut out = [
            self.affine[0][0] + self.affine[0][1] * p[0] + self.affine[0][2] * p[1],
            self.affine[1][0] + self.affine[1][1] * p[0] + self.affine[1][2] * p[1],
        ];
        for (c, w) in self.controls.iter().zip(&self.weights) {
            let k = kernel(dist2(p, *c));
            out[0] += w[0] * k;
            out[1] += w[1] * k;
        }
        out
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn controls(&self) -> &[[f64; 2]] {
        &self.controls
    }

    pub fn weights(&self) -> &[[f64; 2]] {
        &self.weights
    }

    pub fn affine(&self) -> &[[f64; 3]; 2] {
        &self.affine
    }

    /// Bending energy wᵀKw of the fitted map, summed over both output
    /// channels. Zero (to rounding) exactly when the map is affine.
    pub fn bending_energy(&self) -> f64 {
        self.energy_of(&self.weights)
    }

    fn energy_of(&self, weights: &[[f64; 2]]) -> f64 {
        let n = self.controls.len();
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                let k = kernel(dist2(self.controls[i], self.controls[j]));
                total += k * (weights[i][0] * weights[j][0] + weights[i][1] * weights[j][1]);
            }
        }
        total
    }

    /// The fitting objective Σ‖source − r(target)‖² + λ·bending for
    /// arbitrary coefficients on this mapping's control sites. Evaluating
    /// it at perturbed coefficients is how tests verify the solve reached
    /// the true minimum.
    pub fn objective_of(&self, weights: &[[f64; 2]], affine: &[[f64; 3]; 2]) -> f64 {
        assert_eq!(weights.len(), self.controls.len());
        let mut data = 0.0;
        for (t, s) in self.controls.iter().zip(&self.sources) {
            let mut r = [
                affine[0][0] + affine[0][1] * t[0] + affine[0][2] * t[1],
                affine[1][0] + affine[1][1] * t[0] + affine[1][2] * t[1],
            ];
            for (c, w) in self.controls.iter().zip(weights) {
                let k = kernel(dist2(*t, *c));
                r[0] += w[0] * k;
                r[1] += w[1] * k;
            }
            data += (s[0] - r[0]).powi(2) + (s[1] - r[1]).powi(2);
        }
        data + self.lambda * self.energy_of(weights)
    }

    /// The fitting objective at the solved coefficients.
    pub fn objective(&self) -> f64 {
        self.objective_of(&self.weights, &self.affine)
    }

    /// Residuals ‖source_i − r(target_i)‖ at the control sites. For the
    /// smoothing spline these equal λ·‖wᵢ‖ identically.
    pub fn control_residuals(&self) -> Vec<f64> {
        self.controls
            .iter()
            .zip(&self.sources)
            .map(|(t, s)| {
                let r = self.evaluate(*t);
                ((s[0] - r[0]).powi(2) + (s[1] - r[1]).powi(2)).sqrt()
            })
            .collect()
    }
}

/// Fit the landmark smoothing spline mapping target-set coordinates toward
/// source-set coordinates.
pub fn fit_tps(source: &FiducialSet, target: &FiducialSet, lambda: f64) -> Result<TpsMapping> {
    TpsMapping::fit(source.points(), target.points(), lambda)
}

/// Evaluate the mapping over a pixel grid as a backward warp field:
/// displacement(p) = r(p) − p, so warping the source image by the result
/// aligns it to the target landmarks.
pub fn rasterize_tps(mapping: &TpsMapping, width: usize, height: usize) -> Result<WarpField> {
    let mut dx = vec![0.0f32; width * height];
    let mut dy = vec![0.0f32; width * height];
    for y in 0..height {
        for x in 0..width {
            let r = mapping.evaluate([x as f64, y as f64]);
            dx[y * width + x] = (r[0] - x as f64) as f32;
            dy[y * width + x] = (r[1] - y as f64) as f32;
        }
    }
    WarpField::new(width, height, dx, dy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scatter(seed: u64, n: usize) -> Vec<[f64; 2]> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                [
                    rng.random_range(0.0..190.0),
                    rng.random_range(0.0..240.0),
                ]
            })
            .collect()
    }

    #[test]
    fn zero_lambda_interpolates_exactly() {
        let target = scatter(1, 30);
        let source: Vec<[f64; 2]> = target
            .iter()
            .map(|p| [p[0] + 3.0 * (p[1] / 40.0).sin(), p[1] - 2.0 * (p[0] / 30.0).cos()])
            .collect();
        let map = TpsMapping::fit(&source, &target, 0.0).unwrap();
        for (t, s) in target.iter().zip(&source) {
            let r = map.evaluate(*t);
            assert!((r[0] - s[0]).abs() < 1e-6 && (r[1] - s[1]).abs() < 1e-6);
        }
    }

    #[test]
    fn affine_inputs_give_zero_bending_energy() {
        let target = scatter(2, 25);
        let source: Vec<[f64; 2]> = target
            .iter()
            .map(|p| [1.2 * p[0] - 0.3 * p[1] + 5.0, 0.25 * p[0] + 0.9 * p[1] - 7.0])
            .collect();
        for lambda in [0.0, 10.0, 1e4] {
            let map = TpsMapping::fit(&source, &target, lambda).unwrap();
            assert!(
                map.bending_energy().abs() < 1e-8,
                "bending {} at lambda {lambda}",
                map.bending_energy()
            );
            let r = map.evaluate([50.0, 80.0]);
            assert!((r[0] - (1.2 * 50.0 - 0.3 * 80.0 + 5.0)).abs() < 1e-6);
            assert!((r[1] - (0.25 * 50.0 + 0.9 * 80.0 - 7.0)).abs() < 1e-6);
        }
    }

    #[test]
    fn side_conditions_hold() {
        let target = scatter(3, 40);
        let source: Vec<[f64; 2]> = target
            .iter()
            .map(|p| [p[0] + (p[1] / 25.0).sin() * 4.0, p[1] + (p[0] / 35.0).cos() * 3.0])
            .collect();
        let map = TpsMapping::fit(&source, &target, 10.0).unwrap();
        let mut sums = [0.0f64; 6];
        for (w, c) in map.weights().iter().zip(map.controls()) {
            sums[0] += w[0];
            sums[1] += w[1];
            sums[2] += w[0] * c[0];
            sums[3] += w[1] * c[0];
            sums[4] += w[0] * c[1];
            sums[5] += w[1] * c[1];
        }
        let scale = 1.0
            + map
                .weights()
                .iter()
                .map(|w| w[0].abs() + w[1].abs())
                .sum::<f64>()
                * 240.0;
        for s in sums {
            assert!(s.abs() < 1e-8 * scale, "side condition violated: {s}");
        }
    }

    #[test]
    fn control_residuals_equal_lambda_times_weights() {
        let target = scatter(4, 20);
        let source: Vec<[f64; 2]> = target
            .iter()
            .map(|p| [p[0] + (p[1] / 20.0).sin() * 6.0, p[1] - (p[0] / 26.0).sin() * 5.0])
            .collect();
        let lambda = 7.5;
        let map = TpsMapping::fit(&source, &target, lambda).unwrap();
        for (res, w) in map.control_residuals().iter().zip(map.weights()) {
            let expected = lambda * (w[0] * w[0] + w[1] * w[1]).sqrt();
            assert!((res - expected).abs() < 1e-7 * (1.0 + expected));
        }
    }

    #[test]
    fn objective_is_minimal_under_admissible_perturbations() {
        let target = scatter(5, 18);
        let source: Vec<[f64; 2]> = target
            .iter()
            .map(|p| [p[0] + (p[1] / 18.0).cos() * 5.0, p[1] + (p[0] / 22.0).sin() * 4.0])
            .collect();
        let map = TpsMapping::fit(&source, &target, 4.0).unwrap();
        let base = map.objective();
        let n = target.len();
        let mut rng = ChaCha8Rng::seed_from_u64(99);

        for trial in 0..40 {
            // random perturbation, projected onto the side-condition
            // subspace (Σδ = Σδx = Σδy = 0) so the perturbed coefficients
            // still describe a finite-energy spline
            let mut delta: Vec<[f64; 2]> = (0..n)
                .map(|_| {
                    [
                        rng.random_range(-1e-3..1e-3),
                        rng.random_range(-1e-3..1e-3),
                    ]
                })
                .collect();
            for ch in 0..2 {
                // Gram–Schmidt against the three side-condition rows
                let rows: [Vec<f64>; 3] = [
                    vec![1.0; n],
                    target.iter().map(|p| p[0]).collect(),
                    target.iter().map(|p| p[1]).collect(),
                ];
                // orthonormalize the rows, then subtract projections
                let mut basis: Vec<Vec<f64>> = Vec::new();
                for r in rows {
                    let mut v = r;
                    for b in &basis {
                        let d: f64 = v.iter().zip(b).map(|(a, c)| a * c).sum();
                        for (vi, bi) in v.iter_mut().zip(b) {
                            *vi -= d * bi;
                        }
                    }
                    let norm: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
                    if norm > 1e-12 {
                        for vi in &mut v {
                            *vi /= norm;
                        }
                        basis.push(v);
                    }
                }
                for b in &basis {
                    let d: f64 = delta.iter().zip(b).map(|(dl, bi)| dl[ch] * bi).sum();
                    for (dl, bi) in delta.iter_mut().zip(b) {
                        dl[ch] -= d * bi;
                    }
                }
            }

            let perturbed: Vec<[f64; 2]> = map
                .weights()
                .iter()
                .zip(&delta)
                .map(|(w, d)| [w[0] + d[0], w[1] + d[1]])
                .collect();
            let mut affine = *map.affine();
            affine[0][trial % 3] += rng.random_range(-1e-3..1e-3);
            affine[1][(trial + 1) % 3] += rng.random_range(-1e-3..1e-3);
            let perturbed_obj = map.objective_of(&perturbed, &affine);
            assert!(
                perturbed_obj >= base - 1e-9 * (1.0 + base.abs()),
                "perturbation decreased the objective: {perturbed_obj} < {base}"
            );
        }
    }

    #[test]
    fn translation_equivariance() {
        let target = scatter(6, 22);
        let source: Vec<[f64; 2]> = target
            .iter()
            .map(|p| [p[0] + (p[1] / 21.0).sin() * 3.0, p[1] + (p[0] / 19.0).cos() * 3.0])
            .collect();
        let map = TpsMapping::fit(&source, &target, 2.0).unwrap();
        let shift = [13.5, -7.25];
        let source_s: Vec<[f64; 2]> = source.iter().map(|p| [p[0] + shift[0], p[1] + shift[1]]).collect();
        let target_s: Vec<[f64; 2]> = target.iter().map(|p| [p[0] + shift[0], p[1] + shift[1]]).collect();
        let map_s = TpsMapping::fit(&source_s, &target_s, 2.0).unwrap();
        for q in [[10.0, 20.0], [100.0, 150.0], [180.0, 30.0]] {
            let a = map.evaluate(q);
            let b = map_s.evaluate([q[0] + shift[0], q[1] + shift[1]]);
            assert!((b[0] - a[0] - shift[0]).abs() < 1e-6);
            assert!((b[1] - a[1] - shift[1]).abs() < 1e-6);
        }
    }

    #[test]
    fn huge_lambda_approaches_least_squares_affine() {
        let target = scatter(7, 30);
        let source: Vec<[f64; 2]> = target
            .iter()
            .map(|p| [p[0] * 1.1 + 4.0 + (p[1] / 30.0).sin(), p[1] * 0.95 - 2.0])
            .collect();
        let map = TpsMapping::fit(&source, &target, 1e10).unwrap();
        // direct least-squares affine oracle
        let n = target.len() as f64;
        let mut ata = [[0.0f64; 3]; 3];
        let mut atb = [[0.0f64; 2]; 3];
        for (t, s) in target.iter().zip(&source) {
            let row = [1.0, t[0], t[1]];
            for i in 0..3 {
                for j in 0..3 {
                    ata[i][j] += row[i] * row[j];
                }
                atb[i][0] += row[i] * s[0];
                atb[i][1] += row[i] * s[1];
            }
        }
        let a_mat = nalgebra::Matrix3::from_fn(|i, j| ata[i][j]);
        let b_mat = nalgebra::Matrix3x2::from_fn(|i, j| atb[i][j]);
        let sol = a_mat.lu().solve(&b_mat).unwrap();
        let _ = n;
        for q in [[25.0, 40.0], [160.0, 200.0]] {
            let r = map.evaluate(q);
            let ox = sol[(0, 0)] + sol[(1, 0)] * q[0] + sol[(2, 0)] * q[1];
            let oy = sol[(0, 1)] + sol[(1, 1)] * q[0] + sol[(2, 1)] * q[1];
            assert!((r[0] - ox).abs() < 1e-4, "{} vs {}", r[0], ox);
            assert!((r[1] - oy).abs() < 1e-4);
        }
    }

    #[test]
    fn degenerate_layouts_are_rejected() {
        // collinear controls make the bordered system singular
        let target: Vec<[f64; 2]> = (0..12).map(|i| [i as f64 * 7.0, i as f64 * 3.5]).collect();
        let source = target.clone();
        assert!(matches!(
            TpsMapping::fit(&source, &target, 0.0),
            Err(Error::Degenerate(_))
        ));
        // duplicate controls with no smoothing are singular too
        let mut dup = scatter(8, 10);
        dup[3] = dup[7];
        assert!(matches!(
            TpsMapping::fit(&dup.clone(), &dup, 0.0),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn rasterized_field_matches_pointwise_evaluation() {
        let target = scatter(9, 15);
        let source: Vec<[f64; 2]> = target
            .iter()
            .map(|p| [p[0] + 2.0, p[1] - 1.5])
            .collect();
        let map = TpsMapping::fit(&source, &target, 1.0).unwrap();
        let field = rasterize_tps(&map, 40, 30).unwrap();
        let (dx, dy) = field.get(17, 23);
        let r = map.evaluate([17.0, 23.0]);
        assert!((dx as f64 - (r[0] - 17.0)).abs() < 1e-5);
        assert!((dy as f64 - (r[1] - 23.0)).abs() < 1e-5);
    }
}
