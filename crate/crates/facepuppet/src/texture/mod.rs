//! Expression-targeted texture synthesis.
//!
//! Starting from a frontalized photo collection, every photo is warped onto
//! a requested expression (landmark-driven thin-plate warp, then an optional
//! dense refinement through a low-rank appearance subspace and optical
//! flow), decomposed into a band-pass pyramid, and blended level by level
//! with weights that favor expression-matched photos in the fine levels
//! while keeping coarse levels uniform. Collapsing the blended pyramid
//! yields the output texture. The same machinery produces the collection's
//! detail-preserving average, and [`TexturePipeline`] caches the per-photo
//! work so many targets can be synthesized cheaply.

pub mod blend;
pub mod pyramid;

pub use blend::{
    blend_pyramids, detail_response, expression_weight, level_weight_map, BlendDiagnostics,
    BlendParams, PyramidEntry,
};
pub use pyramid::{collapse, decompose, default_depth, Band, Pyramid};

use crate::core::collection::{PhotoCollection, PhotoRecord};
use crate::core::fiducials::FiducialSet;
use crate::core::image::FaceImage;
use crate::core::warp::WarpField;
use crate::error::{Error, Result};
use crate::flow::subspace::{build_subspace, ALIGNMENT_RANK};
use crate::flow::{compute_flow, FlowParams};
use crate::geometry::{fit_tps, rasterize_tps};

/// Smallest collection the expression blend accepts: the dense-alignment
/// subspace needs more images than its rank.
pub const MIN_SYNTHESIS_PHOTOS: usize = ALIGNMENT_RANK + 1;

/// Knobs of the alignment stage.
#[derive(Clone, Debug)]
pub struct AlignParams {
    /// Smoothing weight of the landmark-driven thin-plate warp.
    pub tps_lambda: f64,
    /// Refine the thin-plate alignment with subspace-guided optical flow.
    /// Automatically skipped when the collection is too small for the
    /// subspace (fewer than [`MIN_SYNTHESIS_PHOTOS`] photos).
    pub dense_align: bool,
    pub flow: FlowParams,
}

impl Default for AlignParams {
    fn default() -> Self {
        AlignParams {
            tps_lambda: 10.0,
            dense_align: true,
            flow: FlowParams::default(),
        }
    }
}

impl AlignParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tps_lambda.is_finite() && self.tps_lambda >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "thin-plate smoothing weight must be non-negative, got {}",
                self.tps_lambda
            )));
        }
        self.flow.validate()
    }
}

/// What synthesis did beyond the plain weighted blend.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TextureDiagnostics {
    pub blend: BlendDiagnostics,
    /// Whether dense (flow-based) refinement actually ran.
    pub dense_refined: bool,
}

fn collection_dims(collection: &PhotoCollection) -> Result<(usize, usize)> {
    let first = collection.get(0);
    let (w, h) = (first.image.width(), first.image.height());
    for rec in collection.iter() {
        if rec.image.width() != w || rec.image.height() != h {
            return Err(Error::dims(
                "collection image size",
                format!("{w}x{h}"),
                format!("{}x{} ({})", rec.image.width(), rec.image.height(), rec.id),
            ));
        }
    }
    Ok((w, h))
}

/// Warp one photo so its landmarks land on `target`.
fn tps_warp_to(
    image: &FaceImage,
    fiducials: &FiducialSet,
    target: &FiducialSet,
    lambda: f64,
) -> Result<FaceImage> {
    let mapping = fit_tps(fiducials, target, lambda)?;
    let field = rasterize_tps(&mapping, image.width(), image.height())?;
    field.warp(image)
}

/// Pixel-wise mean of equally sized images.
pub fn mean_image(images: &[FaceImage]) -> Result<FaceImage> {
    if images.is_empty() {
        return Err(Error::Empty("image list".into()));
    }
    let (w, h) = (images[0].width(), images[0].height());
    let mut acc = vec![0.0f64; w * h * 3];
    for img in images {
        if img.width() != w || img.height() != h {
            return Err(Error::dims(
                "image size",
                format!("{w}x{h}"),
                format!("{}x{}", img.width(), img.height()),
            ));
        }
        for (a, &v) in acc.iter_mut().zip(img.data()) {
            *a += v as f64;
        }
    }
    let n = images.len() as f64;
    FaceImage::new(w, h, acc.into_iter().map(|v| (v / n) as f32).collect())
}

/// Resample every photo of the collection onto the target expression.
///
/// First a landmark-driven thin-plate warp per photo, then (when enabled and
/// the collection is large enough) a dense refinement: each warped photo is
/// pushed toward its projection onto a low-rank appearance subspace by
/// optical flow, which tightens alignment without committing to any single
/// photo's lighting. With a `reference` photo the refinement flows are

/// composed with the flow from the reference's projection to the reference
/// itself, so every output adopts the reference's exact appearance frame.
pub fn align_collection(
    collection: &PhotoCollection,
    target: &FiducialSet,
    reference: Option<&PhotoRecord>,
    params: &AlignParams,
) -> Result<Vec<FaceImage>> {
    params.validate()?;
    let (w, h) = collection_dims(collection)?;

    let mut warped = Vec::with_capacity(collection.len());
    for rec in collection.iter() {
        warped.push(tps_warp_to(&rec.image, &rec.fiducials, target, params.tps_lambda)?);
    }

    if !params.dense_align || collection.len() < MIN_SYNTHESIS_PHOTOS {
        return Ok(warped);
    }

    let space = build_subspace(&warped, ALIGNMENT_RANK)?;
    let mut flows = Vec::with_capacity(warped.len());
    for img in &warped {
        let projection = space.project(img)?;
        flows.push(compute_flow(img, &projection, &params.flow)?);
    }

    let reference_flow: Option<WarpField> = match reference {
        Some(rec) => {
            if rec.image.width() != w || rec.image.height() != h {
                return Err(Error::dims(
                    "reference photo size",
                    format!("{w}x{h}"),
                    format!("{}x{}", rec.image.width(), rec.image.height()),
                ));
            }
            let ref_warped = tps_warp_to(&rec.image, &rec.fiducials, target, params.tps_lambda)?;
            let projection = space.project(&ref_warped)?;
            Some(compute_flow(&projection, &ref_warped, &params.flow)?)
        }
        None => None,
    };

    warped
        .iter()
        .zip(flows)
        .map(|(img, flow)| {
            let field = match &reference_flow {
                Some(f2) => flow.compose(f2)?,
                None => flow,
            };
            field.warp(img)
        })
        .collect()
}

pub(crate) fn expression_weights(
    collection: &PhotoCollection,
    target: &FiducialSet,
    sigma: f64,
) -> Vec<f64> {
    collection
        .iter()
        .map(|rec| expression_weight(target, &rec.fiducials, sigma))
        .collect()
}

pub(crate) fn decompose_all(images: Vec<FaceImage>, depth: usize) -> Result<Vec<PyramidEntry>> {
    let mut entries = Vec::with_capacity(images.len());
    for img in images {
        entries.push(PyramidEntry::new(decompose(&img, depth)?));
    }
    Ok(entries)
}

/// Synthesize the collection's appearance under the target expression.
pub fn synthesize_texture(
    collection: &PhotoCollection,
    target: &FiducialSet,
    reference: Option<&PhotoRecord>,
    align: &AlignParams,
    params: &BlendParams,
) -> Result<(FaceImage, TextureDiagnostics)> {
    params.validate()?;
    if collection.len() < MIN_SYNTHESIS_PHOTOS {
        return Err(Error::InvalidInput(format!(
            "expression blending needs at least {MIN_SYNTHESIS_PHOTOS} photos, got {}",
            collection.len()
        )));
    }
    let (w, h) = collection_dims(collection)?;
    let aligned = align_collection(collection, target, reference, align)?;
    let depth = params.depth.unwrap_or_else(|| default_depth(w, h));
    let entries = decompose_all(aligned, depth)?;
    let weights = expression_weights(collection, target, params.sigma);
    let (blended, diag) = blend_pyramids(&entries, &weights, params)?;
    let image = collapse(&blended)?;
    Ok((
        image,
        TextureDiagnostics {
            blend: diag,
            dense_refined: align.dense_align && collection.len() >= MIN_SYNTHESIS_PHOTOS,
        },
    ))
}

/// Intermediate results of [`build_average`], one per stage: the plain mean
/// of the inputs, the mean after the landmark warp, the mean after dense
/// refinement, and the detail-preserving weighted blend.
#[derive(Clone, Debug)]
pub struct AverageStages {
    pub input_mean: FaceImage,
    pub tps_mean: FaceImage,
    pub dense_mean: FaceImage,
    pub blended: FaceImage,
    pub mean_fiducials: FiducialSet,
}

/// Run the averaging pipeline and keep every stage for inspection.
pub fn build_average_stages(
    collection: &PhotoCollection,
    align: &AlignParams,
    params: &BlendParams,
) -> Result<AverageStages> {
    align.validate()?;
    params.validate()?;
    let (w, h) = collection_dims(collection)?;
    let mean_fiducials = collection.mean_fiducials();

    let inputs: Vec<FaceImage> = collection.iter().map(|r| r.image.clone()).collect();
    let input_mean = mean_image(&inputs)?;
    drop(inputs);

    let tps_params = AlignParams {
        dense_align: false,
        ..align.clone()
    };
    let tps_aligned = align_collection(collection, &mean_fiducials, None, &tps_params)?;
    let tps_mean = mean_image(&tps_aligned)?;

    let dense_on = align.dense_align && collection.len() >= MIN_SYNTHESIS_PHOTOS;
    let refined = if dense_on {
        align_collection(collection, &mean_fiducials, None, align)?
    } else {
        tps_aligned
    };
    let dense_mean = mean_image(&refined)?;

    let depth = params.depth.unwrap_or_else(|| default_depth(w, h));
    let entries = decompose_all(refined, depth)?;
    let weights = expression_weights(collection, &mean_fiducials, params.sigma);
    let (blended_pyramid, _) = blend_pyramids(&entries, &weights, params)?;
    let blended = collapse(&blended_pyramid)?;

    Ok(AverageStages {
        input_mean,
        tps_mean,
        dense_mean,
        blended,
        mean_fiducials,
    })
}

/// The collection's aligned, detail-preserving average and its mean
/// landmarks (the natural neutral target for synthesis).
pub fn build_average(
    collection: &PhotoCollection,
    align: &AlignParams,
    params: &BlendParams,
) -> Result<(FaceImage, FiducialSet)> {
    let stages = build_average_stages(collection, align, params)?;
    Ok((stages.blended, stages.mean_fiducials))
}

/// Per-collection preparation cached for repeated synthesis.
///
/// `prepare` aligns the whole collection once onto its mean expression and
/// keeps only pyramids and detail responses. `synthesize` then prices a new
/// target at one weighted blend, one collapse, and one thin-plate re-warp of
/// the single blended image — none of the per-photo work recurs.
#[derive(Clone, Debug)]
pub struct TexturePipeline {
    width: usize,
    height: usize,
    tps_lambda: f64,
    params: BlendParams,
    depth: usize,
    mean_fiducials: FiducialSet,
    photo_fiducials: Vec<FiducialSet>,
    entries: Vec<PyramidEntry>,
    dense_refined: bool,
}

impl TexturePipeline {
    pub fn prepare(
        collection: &PhotoCollection,
        align: &AlignParams,
        params: BlendParams,
    ) -> Result<TexturePipeline> {
        params.validate()?;
        if collection.len() < MIN_SYNTHESIS_PHOTOS {
            return Err(Error::InvalidInput(format!(
                "expression blending needs at least {MIN_SYNTHESIS_PHOTOS} photos, got {}",
                collection.len()
            )));
        }
        let (w, h) = collection_dims(collection)?;
        let mean_fiducials = collection.mean_fiducials();
        let aligned = align_collection(collection, &mean_fiducials, None, align)?;
        let depth = params.depth.unwrap_or_else(|| default_depth(w, h));
        let entries = decompose_all(aligned, depth)?;
        Ok(TexturePipeline {
            width: w,
            height: h,
            tps_lambda: align.tps_lambda,
            dense_refined: align.dense_align,
            params,
            depth,
            mean_fiducials,
            photo_fiducials: collection.iter().map(|r| r.fiducials.clone()).collect(),
            entries,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn photo_count(&self) -> usize {
        self.entries.len()
    }

    pub fn mean_fiducials(&self) -> &FiducialSet {
        &self.mean_fiducials
    }

    fn target_weights(&self, target: &FiducialSet) -> Vec<f64> {
        self.photo_fiducials
            .iter()
            .map(|f| expression_weight(target, f, self.params.sigma))
            .collect()
    }

    /// Blend toward `target` and re-warp the result from the mean expression
    /// onto the target landmarks.
    pub fn synthesize(&self, target: &FiducialSet) -> Result<(FaceImage, TextureDiagnostics)> {
        let (mut image, diag) = self.synthesize_neutral(target)?;
        if self.mean_fiducials.distance(target) > 1e-9 {
            let mapping = fit_tps(&self.mean_fiducials, target, self.tps_lambda)?;
            let field = rasterize_tps(&mapping, self.width, self.height)?;
            image = field.warp(&image)?;
        }
        Ok((image, diag))
    }

    /// Blend toward `target` but keep the result on the mean-expression
    /// grid: detail and color follow the target expression while the
    /// geometry stays neutral, for texturing a mesh that already carries
    /// the deformation.
    pub fn synthesize_neutral(
        &self,
        target: &FiducialSet,
    ) -> Result<(FaceImage, TextureDiagnostics)> {
        let weights = self.target_weights(target);
        let (blended, diag) = blend_pyramids(&self.entries, &weights, &self.params)?;
        let image = collapse(&blended)?;
        Ok((
            image,
            TextureDiagnostics {
                blend: diag,
                dense_refined: self.dense_refined,
            },
        ))
    }

    /// Debug view of the blend: for each pyramid level, the normalized
    /// weight share of the photo whose expression best matches `target`,
    /// upsampled to the output size as a grayscale image. Uniform gray
    /// 1/n means the level ignores the target; bright patches mark where
    /// that photo dominates.
    pub fn weight_maps(&self, target: &FiducialSet) -> Result<Vec<FaceImage>> {
        let weights = self.target_weights(target);
        let best = weights
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .expect("pipeline holds at least one photo");
        let n = self.entries.len() as f32;

        let mut maps = Vec::with_capacity(self.depth + 1);
        for level in 0..=self.depth {
            let per_photo: Vec<Vec<f32>> = self
                .entries
                .iter()
                .zip(&weights)
                .map(|(entry, &e)| {
                    level_weight_map(entry.pyramid().band(level), e, level, &self.params)
                })
                .collect();
            let band = self.entries[best].pyramid().band(level);
            let (bw, bh) = (band.width(), band.height());
            let mut share = vec![0.0f32; bw * bh * 3];
            for p in 0..bw * bh {
                let idx = if per_photo[best].len() == 1 { 0 } else { p };
                let total: f32 = per_photo.iter().map(|m| m[idx]).sum();
                let s = if total > 0.0 {
                    per_photo[best][idx] / total
                } else {
                    1.0 / n
                };
                share[3 * p] = s;
                share[3 * p + 1] = s;
                share[3 * p + 2] = s;
            }
            let up = pyramid::upsample(
                &Band::from_raw(bw, bh, share),
                self.width,
                self.height,
            );
            maps.push(FaceImage::new(self.width, self.height, up.data().to_vec())?);
        }
        Ok(maps)
    }
}

/// The synthesis output next to its ablations, for side-by-side comparison:
/// the full method, the plain mean of landmark-warped photos, the blend with
/// all weighting disabled, and the full weighting without dense refinement.
#[derive(Clone, Debug)]
pub struct TextureBaselines {
    pub full: FaceImage,
    pub tps_average: FaceImage,
    pub uniform_weights: FaceImage,
    pub tps_only_full_weights: FaceImage,
}

/// Synthesize the target plus the three reduced variants, sharing the
/// alignment work between them.
pub fn synthesize_baselines(
    collection: &PhotoCollection,
    target: &FiducialSet,
    align: &AlignParams,
    params: &BlendParams,
) -> Result<TextureBaselines> {
    params.validate()?;
    if collection.len() < MIN_SYNTHESIS_PHOTOS {
        return Err(Error::InvalidInput(format!(
            "expression blending needs at least {MIN_SYNTHESIS_PHOTOS} photos, got {}",
            collection.len()
        )));
    }
    let (width, height) = collection_dims(collection)?;
    let depth = params.depth.unwrap_or_else(|| default_depth(width, height));
    let weights = expression_weights(collection, target, params.sigma);

    let tps_params = AlignParams {
        dense_align: false,
        ..align.clone()
    };
    let tps_aligned = align_collection(collection, target, None, &tps_params)?;
    let tps_average = mean_image(&tps_aligned)?;
    let tps_entries = decompose_all(tps_aligned, depth)?;
    let (pyr, _) = blend_pyramids(&tps_entries, &weights, params)?;
    let tps_only_full_weights = collapse(&pyr)?;
    drop(tps_entries);

    let aligned = align_collection(collection, target, None, align)?;
    let entries = decompose_all(aligned, depth)?;
    let (pyr, _) = blend_pyramids(&entries, &weights, params)?;
    let full = collapse(&pyr)?;

    let uniform_params = BlendParams {
        alpha: 0.0,
        ..params.clone()
    };
    let (pyr, _) = blend_pyramids(&entries, &vec![1.0; entries.len()], &uniform_params)?;
    let uniform_weights = collapse(&pyr)?;

    Ok(TextureBaselines {
        full,
        tps_average,
        uniform_weights,
        tps_only_full_weights,
    })
}

/// Mean luminance-gradient magnitude inside the landmark bounding box
/// (grown by 10% a side): a scalar proxy for perceived detail.
pub fn sharpness(image: &FaceImage, region: &FiducialSet) -> f64 {
    let (w, h) = (image.width(), image.height());
    let lum = image.luminance();
    let (mut x0, mut y0) = (f64::INFINITY, f64::INFINITY);
    let (mut x1, mut y1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in region.points() {
        x0 = x0.min(p[0]);
        y0 = y0.min(p[1]);
        x1 = x1.max(p[0]);
        y1 = y1.max(p[1]);
    }
    let (mx, my) = (0.1 * (x1 - x0), 0.1 * (y1 - y0));
    let xa = ((x0 - mx).floor().max(1.0) as usize).min(w.saturating_sub(2));
    let xb = ((x1 + mx).ceil().min((w - 2) as f64) as usize).max(xa);
    let ya = ((y0 - my).floor().max(1.0) as usize).min(h.saturating_sub(2));
    let yb = ((y1 + my).ceil().min((h - 2) as f64) as usize).max(ya);

    let mut total = 0.0f64;
    let mut count = 0usize;
    for y in ya..=yb {
        for x in xa..=xb {
            let gx = 0.5 * (lum[y * w + x + 1] - lum[y * w + x - 1]);
            let gy = 0.5 * (lum[(y + 1) * w + x] - lum[(y - 1) * w + x]);
            total += (gx * gx + gy * gy).sqrt();
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{demo_collection, fiducials, render_face, Expression, FaceParams};

    fn max_abs_diff(a: &FaceImage, b: &FaceImage) -> f32 {
        a.data()
            .iter()
            .zip(b.data().iter())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f32::max)
    }

    fn records_from(faces: Vec<(String, FaceImage, FiducialSet)>) -> PhotoCollection {
        let records = faces
            .into_iter()
            .map(|(id, image, fiducials)| PhotoRecord {
                path: format!("{id}.png").into(),
                id,
                image,
                fiducials,
            })
            .collect();
        PhotoCollection::new(records).unwrap()
    }

    fn identical_collection(n: usize, w: usize, h: usize) -> (PhotoCollection, FaceImage) {
        let params = FaceParams::identity(11);
        let image = render_face(&params, w, h).unwrap();
        let fids = fiducials(&params, w, h);
        let faces = (0..n)
            .map(|i| (format!("p{i}"), image.clone(), fids.clone()))
            .collect();
        (records_from(faces), image)
    }

    /// Mean RMS distance of each image to the set's pixel mean.
    fn spread(images: &[FaceImage]) -> f64 {
        let mean = mean_image(images).unwrap();
        let mut total = 0.0;
        for img in images {
            let mut acc = 0.0f64;
            for (a, b) in img.data().iter().zip(mean.data().iter()) {
                acc += ((a - b) as f64).powi(2);
            }
            total += (acc / img.data().len() as f64).sqrt();
        }
        total / images.len() as f64
    }

    #[test]
    fn identical_collection_synthesis_is_identity() {
        let (coll, image) = identical_collection(6, 120, 150);
        let target = coll.get(0).fiducials.clone();
        let align = AlignParams::default();
        let (out, diag) =
            synthesize_texture(&coll, &target, None, &align, &BlendParams::default()).unwrap();
        assert!(diag.dense_refined);
        let err = max_abs_diff(&out, &image);
        assert!(err <= 1e-4, "identity synthesis drifted by {err}");

        // A reference photo adds a projection-to-reference flow that is an
        // identity mapping here, so the output must not move.
        let reference = coll.get(0).clone();
        let (with_ref, _) =
            synthesize_texture(&coll, &target, Some(&reference), &align, &BlendParams::default())
                .unwrap();
        let err = max_abs_diff(&with_ref, &out);
        assert!(err <= 1e-3, "identity reference flow moved pixels by {err}");
    }

    #[test]
    fn dense_refinement_tightens_the_alignment() {
        let coll = demo_collection(3, 8, 120, 150).unwrap();
        let target = coll.mean_fiducials();
        let tps_only = AlignParams {
            dense_align: false,
            ..AlignParams::default()
        };
        let coarse = align_collection(&coll, &target, None, &tps_only).unwrap();
        let refined =
            align_collection(&coll, &target, None, &AlignParams::default()).unwrap();
        let (before, after) = (spread(&coarse), spread(&refined));
        assert!(
            after < before,
            "dense refinement must reduce photometric spread: {before} -> {after}"
        );
    }

    #[test]
    fn fine_detail_follows_the_expression_matched_population() {
        // Two sub-populations: neutral mouths with a warm tint, smiling
        // mouths with a cool tint. Fine output bands should correlate with
        // the expression-matched group while the coarse color stays at the
        // whole-collection mean for either target.
        let (w, h) = (120, 150);
        let base = FaceParams::identity(21);
        let mut faces = Vec::new();
        for i in 0..5 {
            let p = base
                .clone()
                .with_expression(Expression::smile(0.05 * i as f64))
                .with_tint([1.05, 0.97, 0.95]);
            faces.push((format!("a{i}"), render_face(&p, w, h).unwrap(), fiducials(&p, w, h)));
        }
        for i in 0..5 {
            let p = base
                .clone()
                .with_expression(Expression::smile(0.9 + 0.02 * i as f64))
                .with_tint([0.95, 0.97, 1.05]);
            faces.push((format!("b{i}"), render_face(&p, w, h).unwrap(), fiducials(&p, w, h)));
        }
        let coll = records_from(faces);
        let align = AlignParams {
            dense_align: false,
            ..AlignParams::default()
        };
        let params = BlendParams::default();
        let depth = default_depth(w, h);

        let mouth_box = |fids: &FiducialSet| {
            let pts = &fids.points()[crate::core::fiducials::MOUTH_LEFT..];
            let (mut x0, mut y0, mut x1, mut y1) =
                (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
            for p in pts {
                x0 = x0.min(p[0]);
                y0 = y0.min(p[1]);
                x1 = x1.max(p[0]);
                y1 = y1.max(p[1]);
            }
            (
                (x0 - 4.0).max(0.0) as usize,
                (y0 - 4.0).max(0.0) as usize,
                (x1 + 4.0).min((w - 1) as f64) as usize,
                (y1 + 4.0).min((h - 1) as f64) as usize,
            )
        };
        let band_patch = |band: &Band, bx: (usize, usize, usize, usize)| -> Vec<f64> {
            let mut out = Vec::new();
            for y in bx.1..=bx.3 {
                for x in bx.0..=bx.2 {
                    let v = band.get(x, y);
                    out.extend([v[0] as f64, v[1] as f64, v[2] as f64]);
                }
            }
            out
        };
        let correlation = |a: &[f64], b: &[f64]| -> f64 {
            let n = a.len() as f64;
            let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
            let (mut num, mut da, mut db) = (0.0, 0.0, 0.0);
            for (x, y) in a.iter().zip(b.iter()) {
                num += (x - ma) * (y - mb);
                da += (x - ma).powi(2);
                db += (y - mb).powi(2);
            }
            num / (da.sqrt() * db.sqrt()).max(1e-12)
        };

        // Mean color over the face (the landmark bounding box).
        let face_mean = |img: &FaceImage, fids: &FiducialSet| -> [f64; 3] {
            let (mut x0, mut y0, mut x1, mut y1) =
                (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
            for p in fids.points() {
                x0 = x0.min(p[0]);
                y0 = y0.min(p[1]);
                x1 = x1.max(p[0]);
                y1 = y1.max(p[1]);
            }
            let (xa, xb) = (x0.max(0.0) as usize, (x1.min((w - 1) as f64)) as usize);
            let (ya, yb) = (y0.max(0.0) as usize, (y1.min((h - 1) as f64)) as usize);
            let mut acc = [0.0f64; 3];
            let mut count = 0.0;
            for y in ya..=yb {
                for x in xa..=xb {
                    let v = img.get(x, y);
                    for c in 0..3 {
                        acc[c] += v[c] as f64;
                    }
                    count += 1.0;
                }
            }
            acc.map(|v| v / count)
        };
        let rel_color = |a: [f64; 3], b: [f64; 3]| {
            let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
            let n = (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt();
            d / n.max(1e-9)
        };

        for (target_idx, matched_range, other_range) in [(0usize, 0..5, 5..10), (5usize, 5..10, 0..5)]
        {
            let target = coll.get(target_idx).fiducials.clone();
            let aligned = align_collection(&coll, &target, None, &align).unwrap();
            let pyramids: Vec<Pyramid> =
                aligned.iter().map(|im| decompose(im, depth).unwrap()).collect();
            let entries: Vec<PyramidEntry> =
                pyramids.iter().map(|p| PyramidEntry::new(p.clone())).collect();
            let weights = expression_weights(&coll, &target, params.sigma);
            let (blended, _) = blend_pyramids(&entries, &weights, &params).unwrap();

            // Fine level: mouth-region detail must track the matched group.
            let finest = blended.bands().last().unwrap();
            let bx = mouth_box(&target);
            let out_patch = band_patch(finest, bx);
            let group_patch = |range: std::ops::Range<usize>| -> Vec<f64> {
                let mut acc = vec![0.0f64; out_patch.len()];
                for i in range.clone() {
                    let patch = band_patch(pyramids[i].bands().last().unwrap(), bx);
                    for (a, v) in acc.iter_mut().zip(patch) {
                        *a += v;
                    }
                }
                acc.iter().map(|v| v / range.len() as f64).collect()
            };
            let c_matched = correlation(&out_patch, &group_patch(matched_range));
            let c_other = correlation(&out_patch, &group_patch(other_range));
            assert!(
                c_matched >= 0.9,
                "fine band correlation with matched group: {c_matched}"
            );
            assert!(
                c_matched > c_other,
                "matched {c_matched} must beat unmatched {c_other}"
            );

            // Color consistency: the collapsed output stays near the
            // whole-collection color (the uniform blend) because the coarse
            // level ignores expression; a single-scale weighted average of
            // the same aligned photos drifts toward the matched tint.
            let output = collapse(&blended).unwrap();
            let uniform_params = BlendParams {
                alpha: 0.0,
                ..params.clone()
            };
            let (uniform, _) =
                blend_pyramids(&entries, &vec![1.0; entries.len()], &uniform_params).unwrap();
            let uniform = collapse(&uniform).unwrap();

            let mut naive = vec![0.0f64; w * h * 3];
            let total: f64 = weights.iter().sum();
            for (img, wgt) in aligned.iter().zip(weights.iter()) {
                for (a, &v) in naive.iter_mut().zip(img.data()) {
                    *a += wgt * v as f64;
                }
            }
            let naive = FaceImage::new(
                w,
                h,
                naive.into_iter().map(|v| (v / total) as f32).collect(),
            )
            .unwrap();

            let reference = face_mean(&uniform, &target);
            let multi_drift = rel_color(face_mean(&output, &target), reference);
            let naive_drift = rel_color(face_mean(&naive, &target), reference);
            assert!(
                multi_drift <= 0.02,
                "multi-scale output color drifted {multi_drift} from the collection mean"
            );
            assert!(
                multi_drift < naive_drift,
                "multi-scale drift {multi_drift} must undercut single-scale drift {naive_drift}"
            );
        }
    }

    #[test]
    fn depth_zero_synthesis_is_the_plain_average_of_aligned_photos() {
        let coll = demo_collection(9, 6, 96, 120).unwrap();
        let target = coll.mean_fiducials();
        let align = AlignParams {
            dense_align: false,
            ..AlignParams::default()
        };
        let params = BlendParams {
            depth: Some(0),
            ..BlendParams::default()
        };
        let (out, _) = synthesize_texture(&coll, &target, None, &align, &params).unwrap();
        let aligned = align_collection(&coll, &target, None, &align).unwrap();
        let mean = mean_image(&aligned).unwrap();
        let err = max_abs_diff(&out, &mean);
        assert!(err <= 1e-6, "single-level blend vs plain average: {err}");
    }

    #[test]
    fn synthesis_ignores_input_ordering() {
        let coll = demo_collection(17, 6, 96, 120).unwrap();
        let mut reversed: Vec<PhotoRecord> = coll.records().to_vec();
        reversed.reverse();
        let shuffled = PhotoCollection::new(reversed).unwrap();
        let target = coll.get(2).fiducials.clone();
        let align = AlignParams {
            dense_align: false,
            ..AlignParams::default()
        };
        let (a, _) =
            synthesize_texture(&coll, &target, None, &align, &BlendParams::default()).unwrap();
        let (b, _) =
            synthesize_texture(&shuffled, &target, None, &align, &BlendParams::default()).unwrap();
        assert_eq!(a.data(), b.data(), "output must not depend on input order");
    }

    #[test]
    fn single_photo_average_is_that_photo() {
        let (coll, image) = identical_collection(1, 96, 120);
        let (avg, fids) =
            build_average(&coll, &AlignParams::default(), &BlendParams::default()).unwrap();
        let err = max_abs_diff(&avg, &image);
        assert!(err <= 1e-4, "single-photo average drifted by {err}");
        assert!(fids.distance(&coll.get(0).fiducials) < 1e-12);
    }

    #[test]
    fn weighted_average_is_at_least_as_sharp_as_the_tps_mean() {
        let coll = demo_collection(5, 8, 120, 150).unwrap();
        let stages =
            build_average_stages(&coll, &AlignParams::default(), &BlendParams::default()).unwrap();
        let fine = sharpness(&stages.blended, &stages.mean_fiducials);
        let coarse = sharpness(&stages.tps_mean, &stages.mean_fiducials);
        assert!(
            fine > coarse,
            "multi-scale weighted average ({fine}) must beat the plain warped mean ({coarse})"
        );
    }

    #[test]
    fn baseline_variants_are_ordered_by_detail() {
        let coll = demo_collection(29, 8, 120, 150).unwrap();
        let target = coll.mean_fiducials();
        let align = AlignParams {
            dense_align: false,
            ..AlignParams::default()
        };
        let b = synthesize_baselines(&coll, &target, &align, &BlendParams::default()).unwrap();
        let full = sharpness(&b.full, &target);
        let tps = sharpness(&b.tps_average, &target);
        assert!(full > tps, "full pipeline {full} must beat plain warped mean {tps}");
        // The ablations must actually differ from the full output.
        assert!(max_abs_diff(&b.full, &b.uniform_weights) > 1e-4);
    }

    #[test]
    fn small_collections_are_rejected_for_synthesis() {
        let (coll, _) = identical_collection(3, 96, 120);
        let target = coll.get(0).fiducials.clone();
        let err = synthesize_texture(
            &coll,
            &target,
            None,
            &AlignParams::default(),
            &BlendParams::default(),
        );
        assert!(err.is_err());
    }
}
