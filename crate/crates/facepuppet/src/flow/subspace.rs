//! Low-rank appearance model of an aligned image collection.
//!
//! The subspace holds the pixelwise mean and the leading principal
//! components of the collection; projecting an image onto it keeps the
//! part of its appearance the collection can explain (lighting, identity,
//! broad expression changes) and discards the rest. Flow computed against
//! the projection instead of the raw mean is far better conditioned,
//! because the projection matches the image's own lighting.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::core::image::FaceImage;
use crate::core::warp::WarpField;
use crate::error::{Error, Result};
use crate::flow::{compute_flow, FlowParams};

/// Rank used by the alignment refinement stage.
pub const ALIGNMENT_RANK: usize = 4;

/// Pixelwise mean and orthonormal principal components of a collection.
pub struct AppearanceSubspace {
    width: usize,
    height: usize,
    mean: Vec<f64>,
    /// Row-major components, each of length 3·width·height, orthonormal.
    basis: Vec<Vec<f64>>,
}

impl AppearanceSubspace {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn rank(&self) -> usize {
        self.basis.len()
    }

    pub fn mean_image(&self) -> Result<FaceImage> {
        FaceImage::new(
            self.width,
            self.height,
            self.mean.iter().map(|&v| v as f32).collect(),
        )
    }

    /// Nearest point of the subspace to `image`:
    /// mean + Σ_j ⟨image − mean, b_j⟩ b_j.
    pub fn project(&self, image: &FaceImage) -> Result<FaceImage> {
        if image.width() != self.width || image.height() != self.height {
            return Err(Error::dims(
                "projection image size",
                format!("{}x{}", self.width, self.height),
                format!("{}x{}", image.width(), image.height()),
            ));
        }
        let x: Vec<f64> = image.data().iter().map(|&v| v as f64).collect();
        let mut out = self.mean.clone();
        for b in &self.basis {
            let coeff: f64 = x
                .iter()
                .zip(&self.mean)
                .zip(b)
                .map(|((&xi, &mi), &bi)| (xi - mi) * bi)
                .sum();
            for (o, &bi) in out.iter_mut().zip(b) {
                *o += coeff * bi;
            }
        }
        FaceImage::new(
            self.width,
            self.height,
            out.into_iter().map(|v| v as f32).collect(),
        )
    }

    /// Expansion coefficients of `image` against the basis.
    pub fn coefficients(&self, image: &FaceImage) -> Result<Vec<f64>> {
        if image.width() != self.width || image.height() != self.height {
            return Err(Error::dims(
                "projection image size",
                format!("{}x{}", self.width, self.height),
                format!("{}x{}", image.width(), image.height()),
            ));
        }
        let x: Vec<f64> = image.data().iter().map(|&v| v as f64).collect();
        Ok(self
            .basis
            .iter()
            .map(|b| {
                x.iter()
                    .zip(&self.mean)
                    .zip(b)
                    .map(|((&xi, &mi), &bi)| (xi - mi) * bi)
                    .sum()
            })
            .collect())
    }
}

/// Principal-component model of `images` with the given rank.
///
/// Needs strictly more images than the rank. Components are computed from
/// the eigendecomposition of the n×n Gram matrix of centred images, which
/// is exact and avoids forming the huge pixel-space covariance. Each
/// component's sign is fixed so its largest-magnitude entry is positive,
/// making the basis deterministic.
pub fn build_subspace(images: &[FaceImage], rank: usize) -> Result<AppearanceSubspace> {
    if rank == 0 {
        return Err(Error::InvalidInput("subspace rank must be positive".into()));
    }
    if images.len() <= rank {
        return Err(Error::InvalidInput(format!(
            "need more than {rank} images to build a rank-{rank} subspace, got {}",
            images.len()
        )));
    }
    let (w, h) = (images[0].width(), images[0].height());
    for img in images {
        if img.width() != w || img.height() != h {
            return Err(Error::dims(
                "collection image size",
                format!("{w}x{h}"),
                format!("{}x{}", img.width(), img.height()),
            ));
        }
    }

    let n = images.len();
    let dim = w * h * 3;
    let mut mean = vec![0.0f64; dim];
    for img in images {
        for (m, &v) in mean.iter_mut().zip(img.data()) {
            *m += v as f64;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }

    let centred: Vec<Vec<f64>> = images
        .iter()
        .map(|img| {
            img.data()
                .iter()
                .zip(&mean)
                .map(|(&v, &m)| v as f64 - m)
                .collect()
        })
        .collect();

    let mut gram = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let dot: f64 = centred[i].iter().zip(&centred[j]).map(|(a, b)| a * b).sum();
            gram[(i, j)] = dot;
            gram[(j, i)] = dot;
        }
    }

    let eig = SymmetricEigen::new(gram);
    // order eigenpairs by decreasing eigenvalue
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut basis = Vec::with_capacity(rank);
    for &k in order.iter().take(rank) {
        let lambda = eig.eigenvalues[k];
        if lambda <= 1e-12 {
            break; // collection has lower rank than requested
        }
        let mut comp = vec![0.0f64; dim];
        for (i, c) in centred.iter().enumerate() {
            let a = eig.eigenvectors[(i, k)];
            for (o, &ci) in comp.iter_mut().zip(c) {
                *o += a * ci;
            }
        }
        let norm = comp.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= 1e-12 {
            break;
        }
        for o in &mut comp {
            *o /= norm;
        }
        // deterministic sign: largest-magnitude entry positive
        let lead = comp
            .iter()
            .copied()
            .max_by(|a, b| a.abs().total_cmp(&b.abs()))
            .unwrap_or(1.0);
        if lead < 0.0 {
            for o in &mut comp {
                *o = -*o;
            }
        }
        basis.push(comp);
    }

    Ok(AppearanceSubspace {
        width: w,
        height: h,
        mean,
        basis,
    })
}

/// Per-image refinement warps: each image is matched against its own
/// rank-4 subspace projection rather than against the raw mean, so the
/// flow target shares the image's lighting and only the residual
/// misalignment is measured. Returns one field per image, in order;
/// warping image i by field i brings it onto the collection's common
/// geometry.
pub fn align_via_subspace(
    images: &[FaceImage],
    params: &FlowParams,
) -> Result<Vec<WarpField>> {
    if images.len() <= ALIGNMENT_RANK {
        return Err(Error::InvalidInput(format!(
            "subspace alignment needs at least {} images, got {}",
            ALIGNMENT_RANK + 1,
            images.len()
        )));
    }
    let space = build_subspace(images, ALIGNMENT_RANK)?;
    images
        .iter()
        .map(|img| {
            let target = space.project(img)?;
            compute_flow(img, &target, params)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pattern(w: usize, h: usize, f: impl Fn(f64, f64) -> f64) -> Vec<f32> {
        let mut data = Vec::with_capacity(w * h * 3);
        for y in 0..h {
            for x in 0..w {
                let v = f(x as f64 / w as f64, y as f64 / h as f64) as f32;
                data.extend_from_slice(&[v, v * 0.8, v * 0.6]);
            }
        }
        data
    }

    /// Collection: mean + random combinations of two fixed patterns.
    fn low_rank_collection(seed: u64, n: usize, w: usize, h: usize) -> Vec<FaceImage> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = pattern(w, h, |_, _| 0.5);
        let p1 = pattern(w, h, |u, _| (u * 6.0).sin() * 0.1);
        let p2 = pattern(w, h, |_, v| (v * 4.0).cos() * 0.1);
        (0..n)
            .map(|_| {
                let (a, b) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                let data: Vec<f32> = base
                    .iter()
                    .zip(&p1)
                    .zip(&p2)
                    .map(|((&m, &x), &y)| m + a as f32 * x + b as f32 * y)
                    .collect();
                FaceImage::new(w, h, data).unwrap()
            })
            .collect()
    }

    #[test]
    fn basis_is_orthonormal() {
        let images = low_rank_collection(1, 8, 24, 20);
        let space = build_subspace(&images, 2).unwrap();
        assert_eq!(space.rank(), 2);
        for i in 0..space.rank() {
            for j in 0..space.rank() {
                let dot: f64 = space.basis[i]
                    .iter()
                    .zip(&space.basis[j])
                    .map(|(a, b)| a * b)
                    .sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-10, "gram[{i}][{j}] = {dot}");
            }
        }
    }

    #[test]
    fn projection_is_idempotent_and_keeps_span_members() {
        let images = low_rank_collection(2, 10, 24, 20);
        let space = build_subspace(&images, 2).unwrap();
        // members of the collection lie in the span: projection reproduces
        for img in images.iter().take(3) {
            let proj = space.project(img).unwrap();
            let mut max_err = 0.0f32;
            for (a, b) in proj.data().iter().zip(img.data()) {
                max_err = max_err.max((a - b).abs());
            }
            assert!(max_err < 1e-4, "span member moved by {max_err}");
        }
        // projecting twice changes nothing
        let once = space.project(&images[0]).unwrap();
        let twice = space.project(&once).unwrap();
        for (a, b) in once.data().iter().zip(twice.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn projection_is_nearest_point_of_span() {
        let images = low_rank_collection(3, 8, 20, 16);
        let space = build_subspace(&images, 2).unwrap();
        // an image off the span projects closer than any nearby span point
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let noise = pattern(20, 16, |u, v| ((u * 31.0).sin() * (v * 17.0).cos()) * 0.05);
        let data: Vec<f32> = images[0]
            .data()
            .iter()
            .zip(&noise)
            .map(|(&a, &b)| a + b)
            .collect();
        let probe = FaceImage::new(20, 16, data).unwrap();
        let proj = space.project(&probe).unwrap();
        let dist =
            |a: &FaceImage, b: &FaceImage| -> f64 {
                a.data()
                    .iter()
                    .zip(b.data())
                    .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
                    .sum()
            };
        let best = dist(&probe, &proj);
        let coeffs = space.coefficients(&probe).unwrap();
        for _ in 0..20 {
            let mut alt = space.mean.clone();
            for (j, b) in space.basis.iter().enumerate() {
                let c = coeffs[j] + rng.random_range(-0.5..0.5);
                for (o, &bi) in alt.iter_mut().zip(b) {
                    *o += c * bi;
                }
            }
            let alt_img = FaceImage::new(
                20,
                16,
                alt.into_iter().map(|v| v as f32).collect::<Vec<f32>>(),
            )
            .unwrap();
            assert!(dist(&probe, &alt_img) + 1e-9 >= best);
        }
    }

    #[test]
    fn rank_and_size_validation() {
        let images = low_rank_collection(4, 3, 20, 16);
        assert!(build_subspace(&images, 3).is_err());
        assert!(build_subspace(&images, 0).is_err());
        assert!(build_subspace(&images, 2).is_ok());
        let space = build_subspace(&images, 2).unwrap();
        let wrong = FaceImage::filled(16, 16, [0.5; 3]).unwrap();
        assert!(space.project(&wrong).is_err());
        assert!(align_via_subspace(&images, &FlowParams::default()).is_err());
    }

    #[test]
    fn aligned_collection_yields_near_zero_refinement() {
        // identical geometry, different lighting: the projection matches
        // each image almost exactly, so the refinement flow is tiny
        let images = low_rank_collection(5, 6, 32, 28);
        let fields = align_via_subspace(&images, &FlowParams::default()).unwrap();
        assert_eq!(fields.len(), 6);
        for f in &fields {
            assert!(f.rms_magnitude() < 0.05, "rms {}", f.rms_magnitude());
        }
    }
}
