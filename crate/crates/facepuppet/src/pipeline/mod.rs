//! Batch orchestration behind the command-line tool.
//!
//! Each subcommand has a runner here that does the whole job: ingest
//! inputs, execute the library stages, write artifacts under the output
//! directory, and leave a `manifest.txt` (inputs, configuration, artifact
//! hashes — bit-identical on reruns with the same inputs) plus a
//! `timings.csv` (wall-clock measurements, kept out of the manifest so
//! reruns stay comparable). Failures split into two classes mirroring the
//! process exit codes: usage/ingestion problems ([`RunError::usage`],
//! exit 2) and computation failures (exit 1).

pub mod config;
pub mod manifest;

pub use config::{PipelineConfig, TextureMode};
pub use manifest::{sha256_bytes, sha256_file, Manifest, Timings};

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::core::collection::{load_photo_collection, IngestReport, PhotoCollection};
use crate::core::fiducials::{FiducialSet, FIDUCIAL_COUNT};
use crate::core::floatgrid;
use crate::core::image::FaceImage;
use crate::core::mesh::DepthMesh;
use crate::core::obj::{save_obj, save_obj_textured};
use crate::core::pose::Pose;
use crate::deform::{cross_identity_correspondence, transfer_deformation, Correspondence};
use crate::error::Error;
use crate::flow::subspace::{build_subspace, ALIGNMENT_RANK};
use crate::flow::compute_flow;
use crate::geometry::{fit_tps, rasterize_tps};
use crate::render::{rasterize, Orthographic};
use crate::synth;
use crate::texture::{
    align_collection, blend_pyramids, build_average_stages, collapse, decompose_all, default_depth,
    expression_weight, expression_weights, sharpness, synthesize_baselines, synthesize_texture,
    PyramidEntry, TexturePipeline, MIN_SYNTHESIS_PHOTOS,
};

/// A failed run, split by exit-code class.
#[derive(Debug)]
pub struct RunError {
    pub message: String,
    /// True for usage and ingestion problems (exit 2); false for
    /// computation failures (exit 1).
    pub usage: bool,
}

impl RunError {
    pub fn usage(message: impl Into<String>) -> RunError {
        RunError {
            message: message.into(),
            usage: true,
        }
    }

    pub fn failure(message: impl Into<String>) -> RunError {
        RunError {
            message: message.into(),
            usage: false,
        }
    }

    pub fn exit_code(&self) -> i32 {
        if self.usage {
            2
        } else {
            1
        }
    }
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for RunError {}

impl From<Error> for RunError {
    fn from(e: Error) -> RunError {
        RunError::failure(e.to_string())
    }
}

pub type RunResult<T> = std::result::Result<T, RunError>;

fn as_usage<T>(r: crate::error::Result<T>) -> RunResult<T> {
    r.map_err(|e| RunError::usage(e.to_string()))
}

fn ensure_out_dir(out: &Path) -> RunResult<()> {
    std::fs::create_dir_all(out)
        .map_err(|e| RunError::usage(format!("cannot create {}: {e}", out.display())))
}

fn validated(cfg: &PipelineConfig) -> RunResult<()> {
    as_usage(cfg.validate())
}

fn ingest_collection(dir: &Path) -> RunResult<(PhotoCollection, IngestReport)> {
    if !dir.is_dir() {
        return Err(RunError::usage(format!(
            "{} is not a directory",
            dir.display()
        )));
    }
    as_usage(load_photo_collection(dir))
}

/// Content digest of a loaded collection: the per-record file hashes,
/// hashed again in id order.
fn collection_digest(collection: &PhotoCollection) -> RunResult<String> {
    let mut lines = String::new();
    for rec in collection.iter() {
        let png = sha256_file(&rec.path)?;
        let csv = sha256_file(rec.path.with_extension("csv"))?;
        lines.push_str(&rec.id);
        lines.push(':');
        lines.push_str(&png);
        lines.push(':');
        lines.push_str(&csv);
        lines.push('\n');
    }
    Ok(sha256_bytes(lines.as_bytes()))
}

/// Digest of an ordered list of files: `name:hash` lines, hashed.
fn files_digest(paths: &[PathBuf]) -> RunResult<String> {
    let mut lines = String::new();
    for p in paths {
        let name = p
            .file_name()
            .and_then(|s| s.to_str())
            .unwrap_or("(non-utf8)");
        lines.push_str(name);
        lines.push(':');
        lines.push_str(&sha256_file(p)?);
        lines.push('\n');
    }
    Ok(sha256_bytes(lines.as_bytes()))
}

/// Sorted `*.fgrid` paths in `dir`; usage error when empty or missing.
fn list_fgrids(dir: &Path) -> RunResult<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(RunError::usage(format!(
            "{} is not a directory",
            dir.display()
        )));
    }
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| RunError::usage(format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("fgrid"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(RunError::usage(format!(
            "no .fgrid files in {}",
            dir.display()
        )));
    }
    Ok(paths)
}

fn stem_of(path: &Path) -> String {
    path.file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("frame")
        .to_string()
}

fn load_mesh_input(path: &Path) -> RunResult<DepthMesh> {
    as_usage(floatgrid::load_mesh(path))
}

fn ms(seconds: f64) -> String {
    format!("{:.3}", seconds * 1e3)
}

fn record_ingest(manifest: &mut Manifest, name: &str, report: &IngestReport) {
    manifest.insert(format!("{name}.loaded"), report.loaded.to_string());
    manifest.insert(format!("{name}.skipped"), report.skipped.len().to_string());
}

// ---------------------------------------------------------------------------
// average

#[derive(Clone, Debug)]
pub struct AverageOptions {
    pub collection: PathBuf,
    pub out: PathBuf,
}

/// Build the collection's average face and write every pipeline stage for
/// inspection: the raw pixel mean, the landmark-warped mean, the densely
/// aligned mean, and the final detail-preserving blend.
pub fn cmd_average(cfg: &PipelineConfig, opts: &AverageOptions) -> RunResult<()> {
    validated(cfg)?;
    ensure_out_dir(&opts.out)?;
    let (collection, report) = ingest_collection(&opts.collection)?;

    let start = Instant::now();
    let stages = build_average_stages(&collection, &cfg.align_params(), &cfg.blend_params())?;
    let build_seconds = start.elapsed().as_secs_f64();

    stages.blended.save_png(opts.out.join("average.png"))?;
    stages
        .mean_fiducials
        .save_csv(opts.out.join("average_fiducials.csv"))?;
    stages
        .input_mean
        .save_png(opts.out.join("stage_a_input_mean.png"))?;
    stages
        .tps_mean
        .save_png(opts.out.join("stage_b_tps_mean.png"))?;
    stages
        .dense_mean
        .save_png(opts.out.join("stage_c_dense_mean.png"))?;
    stages
        .blended
        .save_png(opts.out.join("stage_d_blended.png"))?;

    let mut manifest = Manifest::new("average");
    manifest.insert_config(cfg);
    manifest.insert(
        "input.collection",
        format!("sha256:{}", collection_digest(&collection)?),
    );
    record_ingest(&mut manifest, "collection", &report);
    for name in [
        "average.png",
        "average_fiducials.csv",
        "stage_a_input_mean.png",
        "stage_b_tps_mean.png",
        "stage_c_dense_mean.png",
        "stage_d_blended.png",
    ] {
        manifest.insert_artifact(&opts.out, name)?;
    }
    manifest.insert(
        "metric.sharpness.blended",
        format!("{:.6}", sharpness(&stages.blended, &stages.mean_fiducials)),
    );
    manifest.insert(
        "metric.sharpness.tps_mean",
        format!("{:.6}", sharpness(&stages.tps_mean, &stages.mean_fiducials)),
    );
    manifest.write(&opts.out)?;

    let mut timings = Timings::new("stage,elapsed_ms");
    timings.push(format!("build_average,{}", ms(build_seconds)));
    timings.write(&opts.out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// texture

/// What expression to synthesize: a landmark file, or a reference photo
/// whose landmarks (and, with dense alignment, residual detail) drive the
/// result.
#[derive(Clone, Debug)]
pub enum TextureTarget {
    Fiducials(PathBuf),
    Reference(PathBuf),
}

#[derive(Clone, Debug)]
pub struct TextureOptions {
    pub collection: PathBuf,
    pub target: TextureTarget,
    pub out: PathBuf,
    /// Also synthesize the reduced variants for side-by-side comparison.
    pub baselines: bool,
    /// Write per-level weight-share maps for the best-matched photo.
    pub dump_weights: bool,
    /// Drop the reference photo from the collection before synthesis.
    pub hold_out: bool,
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (std::fs::canonicalize(a), std::fs::canonicalize(b)) {
        (Ok(ca), Ok(cb)) => ca == cb,
        _ => a == b,
    }
}

/// Synthesize one expression-targeted texture from a collection.
pub fn cmd_texture(cfg: &PipelineConfig, opts: &TextureOptions) -> RunResult<()> {
    validated(cfg)?;
    ensure_out_dir(&opts.out)?;
    let (mut collection, report) = ingest_collection(&opts.collection)?;

    let mut manifest = Manifest::new("texture");
    manifest.insert_config(cfg);

    // Resolve the target expression, and the reference record if any.
    let (target, reference) = match &opts.target {
        TextureTarget::Fiducials(path) => {
            manifest.insert_input("target", path)?;
            (as_usage(FiducialSet::load_csv(path))?, None)
        }
        TextureTarget::Reference(path) => {
            let csv = path.with_extension("csv");
            let image = as_usage(FaceImage::load_png(path))?;
            let fids = as_usage(FiducialSet::load_csv(&csv))?;
            manifest.insert_input("reference", path)?;
            manifest.insert_input("reference_landmarks", &csv)?;
            if opts.hold_out {
                let kept: Vec<_> = collection
                    .records()
                    .iter()
                    .filter(|r| !same_file(&r.path, path))
                    .cloned()
                    .collect();
                let dropped = collection.len() - kept.len();
                manifest.insert("collection.held_out", dropped.to_string());
                collection = as_usage(PhotoCollection::new(kept))?;
            }
            let record = crate::core::collection::PhotoRecord {
                id: stem_of(path),
                path: path.clone(),
                image,
                fiducials: fids.clone(),
            };
            (fids, Some(record))
        }
    };
    manifest.insert(
        "input.collection",
        format!("sha256:{}", collection_digest(&collection)?),
    );
    record_ingest(&mut manifest, "collection", &report);

    let align = cfg.align_params();
    let blend = cfg.blend_params();
    let mut timings = Timings::new("stage,elapsed_ms");

    // The reference path must align against the reference itself, so it
    // takes the direct route; otherwise prepare-once-then-synthesize,
    // which is the cost that matters when many targets reuse a collection.
    let texture = if let Some(record) = &reference {
        let start = Instant::now();
        let (image, diag) = synthesize_texture(&collection, &target, Some(record), &align, &blend)?;
        timings.push(format!("synthesize_direct,{}", ms(start.elapsed().as_secs_f64())));
        manifest.insert("diagnostics.dense_refined", diag.dense_refined.to_string());
        manifest.insert(
            "diagnostics.zero_weight_pixels",
            diag.blend.zero_weight_pixels.to_string(),
        );
        image
    } else {
        let start = Instant::now();
        let pipeline = TexturePipeline::prepare(&collection, &align, blend.clone())?;
        timings.push(format!("prepare,{}", ms(start.elapsed().as_secs_f64())));

        let start = Instant::now();
        let (image, diag) = pipeline.synthesize(&target)?;
        timings.push(format!("synthesize,{}", ms(start.elapsed().as_secs_f64())));
        manifest.insert("diagnostics.dense_refined", diag.dense_refined.to_string());
        manifest.insert(
            "diagnostics.zero_weight_pixels",
            diag.blend.zero_weight_pixels.to_string(),
        );

        if opts.dump_weights {
            let maps = pipeline.weight_maps(&target)?;
            for (level, map) in maps.iter().enumerate() {
                let name = format!("weights_level_{level:02}.png");
                map.save_png(opts.out.join(&name))?;
                manifest.insert_artifact(&opts.out, &name)?;
            }
        }
        image
    };
    texture.save_png(opts.out.join("texture.png"))?;
    manifest.insert_artifact(&opts.out, "texture.png")?;

    if opts.baselines {
        let start = Instant::now();
        let variants = synthesize_baselines(&collection, &target, &align, &blend)?;
        timings.push(format!("baselines,{}", ms(start.elapsed().as_secs_f64())));

        for (name, image) in [
            ("baseline_tps_average.png", &variants.tps_average),
            ("baseline_uniform_weights.png", &variants.uniform_weights),
            ("baseline_tps_only.png", &variants.tps_only_full_weights),
        ] {
            image.save_png(opts.out.join(name))?;
            manifest.insert_artifact(&opts.out, name)?;
        }
        for (key, image) in [
            ("full", &variants.full),
            ("tps_average", &variants.tps_average),
            ("uniform_weights", &variants.uniform_weights),
            ("tps_only", &variants.tps_only_full_weights),
        ] {
            manifest.insert(
                format!("metric.gradient_energy.{key}"),
                format!("{:.6}", sharpness(image, &target)),
            );
        }
    }

    manifest.write(&opts.out)?;
    timings.write(&opts.out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// transfer

#[derive(Clone, Debug)]
pub struct TransferOptions {
    /// Driver's average (neutral) mesh, `.fgrid`.
    pub driver_average: PathBuf,
    /// Directory of per-frame driver meshes, `.fgrid`.
    pub frames: PathBuf,
    /// Puppet's average mesh; defaults to the driver's (self-transfer).
    pub puppet_average: Option<PathBuf>,
    /// Dense correspondence driver→puppet / puppet→driver, `.fgrid` flow
    /// files; identity when omitted (grids must then coincide).
    pub forward_flow: Option<PathBuf>,
    pub inverse_flow: Option<PathBuf>,
    pub out: PathBuf,
}

/// Retarget every driver frame onto the puppet's average mesh.
pub fn cmd_transfer(cfg: &PipelineConfig, opts: &TransferOptions) -> RunResult<()> {
    validated(cfg)?;
    ensure_out_dir(&opts.out)?;

    let driver_avg = load_mesh_input(&opts.driver_average)?;
    let puppet_avg = match &opts.puppet_average {
        Some(path) => load_mesh_input(path)?,
        None => driver_avg.clone(),
    };
    let corr = match (&opts.forward_flow, &opts.inverse_flow) {
        (Some(f), Some(b)) => {
            let forward = as_usage(floatgrid::load_flow(f))?;
            let inverse = as_usage(floatgrid::load_flow(b))?;
            as_usage(Correspondence::new(forward, inverse))?
        }
        (None, None) => Correspondence::identity(puppet_avg.width(), puppet_avg.height()),
        _ => {
            return Err(RunError::usage(
                "forward and inverse flow must be given together",
            ))
        }
    };
    let frames = list_fgrids(&opts.frames)?;
    let denoise = cfg.denoise_params();

    let results: Vec<(String, RunResult<_>)> = frames
        .par_iter()
        .map(|path| {
            let stem = stem_of(path);
            let result = (|| {
                let frame = load_mesh_input(path)?;
                let start = Instant::now();
                let (mesh, diag) =
                    transfer_deformation(&frame, &driver_avg, &puppet_avg, &corr, &denoise)?;
                Ok((mesh, diag, start.elapsed().as_secs_f64()))
            })();
            (stem, result)
        })
        .collect();

    let mut manifest = Manifest::new("transfer");
    manifest.insert_config(cfg);
    manifest.insert_input("driver_average", &opts.driver_average)?;
    if let Some(path) = &opts.puppet_average {
        manifest.insert_input("puppet_average", path)?;
    }
    if let (Some(f), Some(b)) = (&opts.forward_flow, &opts.inverse_flow) {
        manifest.insert_input("forward_flow", f)?;
        manifest.insert_input("inverse_flow", b)?;
    }
    manifest.insert("input.frames", format!("sha256:{}", files_digest(&frames)?));
    manifest.insert("frames", frames.len().to_string());
    manifest.insert(
        "diagnostics.correspondence_round_trip_rms",
        format!("{:.6}", corr.round_trip_rms()),
    );

    let mut timings = Timings::new("frame,total_ms,denoise_ms,denoise_share");
    let (mut transferred, mut passthrough, mut invalid) = (0usize, 0usize, 0usize);
    for (stem, result) in results {
        match result {
            Ok((mesh, diag, seconds)) => {
                let grid = format!("{stem}.fgrid");
                let obj = format!("{stem}.obj");
                floatgrid::save_mesh(opts.out.join(&grid), &mesh)?;
                save_obj(opts.out.join(&obj), &mesh)?;
                manifest.insert_artifact(&opts.out, &grid)?;
                manifest.insert_artifact(&opts.out, &obj)?;
                let share = if seconds > 0.0 {
                    diag.denoise_seconds / seconds
                } else {
                    0.0
                };
                timings.push(format!(
                    "{stem},{},{},{share:.4}",
                    ms(seconds),
                    ms(diag.denoise_seconds)
                ));
                transferred += diag.transferred;
                passthrough += diag.passthrough;
                invalid += diag.invalid;
            }
            Err(e) => {
                manifest.mark_failed(&stem);
                manifest.write(&opts.out)?;
                timings.write(&opts.out)?;
                return Err(RunError {
                    message: format!("frame {stem}: {}", e.message),
                    usage: e.usage,
                });
            }
        }
    }
    manifest.insert("diagnostics.vertices_transferred", transferred.to_string());
    manifest.insert("diagnostics.vertices_passthrough", passthrough.to_string());
    manifest.insert("diagnostics.vertices_invalid", invalid.to_string());
    manifest.write(&opts.out)?;
    timings.write(&opts.out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// puppet

#[derive(Clone, Debug)]
pub struct PuppetOptions {
    /// Driver photo collection (frontalized PNG + landmark CSV pairs).
    pub driver: PathBuf,
    /// Puppet photo collection.
    pub puppet: PathBuf,
    /// Driver's average mesh, `.fgrid`, on the same grid as the photos.
    pub driver_average_mesh: PathBuf,
    /// Puppet's average mesh, `.fgrid`.
    pub puppet_average_mesh: PathBuf,
    /// Directory of per-frame driver meshes, `.fgrid`.
    pub frames: PathBuf,
    pub out: PathBuf,
    /// Also render an orthographic preview PNG per frame.
    pub preview: bool,
}

/// Everything a prepared identity contributes to the puppet run: aligned
/// appearance for correspondence, and decomposed pyramids for texturing.
struct PreparedIdentity {
    mean_fiducials: FiducialSet,
    photo_fiducials: Vec<FiducialSet>,
    average_image: FaceImage,
    subspace: crate::flow::AppearanceSubspace,
    entries: Vec<PyramidEntry>,
}

fn prepare_identity(
    collection: &PhotoCollection,
    cfg: &PipelineConfig,
) -> RunResult<PreparedIdentity> {
    let align = cfg.align_params();
    let blend = cfg.blend_params();
    let mean = collection.mean_fiducials();
    let aligned = align_collection(collection, &mean, None, &align)?;
    let subspace = build_subspace(&aligned, ALIGNMENT_RANK)?;
    let (w, h) = (aligned[0].width(), aligned[0].height());
    let depth = blend.depth.unwrap_or_else(|| default_depth(w, h));
    let entries = decompose_all(aligned, depth)?;
    let weights = expression_weights(collection, &mean, blend.sigma);
    let (pyr, _) = blend_pyramids(&entries, &weights, &blend)?;
    let average_image = collapse(&pyr)?;
    Ok(PreparedIdentity {
        mean_fiducials: mean,
        photo_fiducials: collection.iter().map(|r| r.fiducials.clone()).collect(),
        average_image,
        subspace,
        entries,
    })
}

/// Target landmarks for one driver frame: the driver's deformation at each
/// landmark, observed through a frontal projection, applied to the
/// puppet's mean landmarks.
fn frame_target_fiducials(
    driver_mean: &FiducialSet,
    puppet_mean: &FiducialSet,
    driver_avg_mesh: &DepthMesh,
    frame: &DepthMesh,
    pose: &Pose,
) -> crate::error::Result<FiducialSet> {
    let mut points = Vec::with_capacity(FIDUCIAL_COUNT);
    for k in 0..FIDUCIAL_COUNT {
        let [x, y] = driver_mean.point(k);
        let base = puppet_mean.point(k);
        let offset = driver_avg_mesh
            .nearest_valid_grid(x, y)
            .filter(|&(u, v)| frame.is_valid(u, v))
            .and_then(|(u, v)| {
                let from = pose.project(driver_avg_mesh.point(u, v))?;
                let to = pose.project(frame.point(u, v))?;
                Some([to[0] - from[0], to[1] - from[1]])
            })
            .unwrap_or([0.0, 0.0]);
        points.push([base[0] + offset[0], base[1] + offset[1]]);
    }
    FiducialSet::new(points)
}

/// Orthographic projection that frames the mesh inside a `width`×`height`
/// raster with a small margin.
fn fit_orthographic(mesh: &DepthMesh, width: usize, height: usize) -> Orthographic {
    let (lo, hi) = mesh.bounds();
    let (sx, sy) = ((hi[0] - lo[0]).max(1e-9), (hi[1] - lo[1]).max(1e-9));
    let scale = 0.9 * (width as f64 / sx).min(height as f64 / sy);
    let center = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
    Orthographic {
        scale,
        cx: width as f64 / 2.0 - scale * center[0],
        cy: height as f64 / 2.0 + scale * center[1],
    }
}

/// The full retargeting pipeline: correspondence between the two average
/// faces, per-frame deformation transfer, and a per-frame texture (neutral
/// geometry by default; per-frame mode also warps it onto the target
/// landmarks), exported as texture-mapped OBJ plus mesh grid.
pub fn cmd_puppet(cfg: &PipelineConfig, opts: &PuppetOptions) -> RunResult<()> {
    validated(cfg)?;
    ensure_out_dir(&opts.out)?;

    let (driver, driver_report) = ingest_collection(&opts.driver)?;
    let (puppet, puppet_report) = ingest_collection(&opts.puppet)?;
    for (name, coll) in [("driver", &driver), ("puppet", &puppet)] {
        if coll.len() < MIN_SYNTHESIS_PHOTOS {
            return Err(RunError::usage(format!(
                "{name} collection has {} photos; the pipeline needs at least {MIN_SYNTHESIS_PHOTOS}",
                coll.len()
            )));
        }
    }
    let (dw, dh) = (driver.get(0).image.width(), driver.get(0).image.height());
    let (pw, ph) = (puppet.get(0).image.width(), puppet.get(0).image.height());
    if (dw, dh) != (pw, ph) {
        return Err(RunError::usage(format!(
            "driver photos are {dw}x{dh} but puppet photos are {pw}x{ph}; \
             the correspondence needs a shared grid"
        )));
    }

    let driver_avg_mesh = load_mesh_input(&opts.driver_average_mesh)?;
    let puppet_avg_mesh = load_mesh_input(&opts.puppet_average_mesh)?;
    let frames = list_fgrids(&opts.frames)?;
    for (name, mesh) in [
        ("driver average mesh", &driver_avg_mesh),
        ("puppet average mesh", &puppet_avg_mesh),
    ] {
        if mesh.width() != dw || mesh.height() != dh {
            return Err(RunError::usage(format!(
                "{name} is {}x{} but the photos are {dw}x{dh}; \
                 meshes and photos must share one grid",
                mesh.width(),
                mesh.height()
            )));
        }
    }

    let mut timings = Timings::new("frame,transfer_ms,denoise_ms,texture_ms,total_ms");
    let start = Instant::now();
    let prepared_driver = prepare_identity(&driver, cfg)?;
    let prepared_puppet = prepare_identity(&puppet, cfg)?;
    timings.push(format!("prepare,,,,{}", ms(start.elapsed().as_secs_f64())));

    let start = Instant::now();
    let corr = cross_identity_correspondence(
        &prepared_driver.average_image,
        &prepared_puppet.average_image,
        &prepared_driver.subspace,
        &prepared_puppet.subspace,
        &cfg.flow,
    )?;
    timings.push(format!(
        "correspondence,,,,{}",
        ms(start.elapsed().as_secs_f64())
    ));

    let focal = cfg.focal.unwrap_or(dw as f64);
    let pose = Pose::frontal(focal, (dw - 1) as f64 / 2.0, (dh - 1) as f64 / 2.0)?;
    let denoise = cfg.denoise_params();
    let blend = cfg.blend_params();

    struct FrameOutput {
        mesh: DepthMesh,
        texture: FaceImage,
        transfer_seconds: f64,
        denoise_seconds: f64,
        texture_seconds: f64,
    }

    let results: Vec<(String, RunResult<FrameOutput>)> = frames
        .par_iter()
        .map(|path| {
            let stem = stem_of(path);
            let result = (|| {
                let frame = load_mesh_input(path)?;
                if frame.width() != dw || frame.height() != dh {
                    return Err(RunError::usage(format!(
                        "frame is {}x{}, expected {dw}x{dh}",
                        frame.width(),
                        frame.height()
                    )));
                }
                let t_transfer = Instant::now();
                let (mesh, diag) = transfer_deformation(
                    &frame,
                    &driver_avg_mesh,
                    &puppet_avg_mesh,
                    &corr,
                    &denoise,
                )?;
                let transfer_seconds = t_transfer.elapsed().as_secs_f64();

                let t_texture = Instant::now();
                let target = frame_target_fiducials(
                    &prepared_driver.mean_fiducials,
                    &prepared_puppet.mean_fiducials,
                    &driver_avg_mesh,
                    &frame,
                    &pose,
                )?;
                let weights: Vec<f64> = prepared_puppet
                    .photo_fiducials
                    .iter()
                    .map(|f| expression_weight(&target, f, blend.sigma))
                    .collect();
                let (pyr, _) = blend_pyramids(&prepared_puppet.entries, &weights, &blend)?;
                let mut texture = collapse(&pyr)?;
                if cfg.texture_mode == TextureMode::PerFrame
                    && prepared_puppet.mean_fiducials.distance(&target) > 1e-9
                {
                    let mapping =
                        fit_tps(&prepared_puppet.mean_fiducials, &target, cfg.tps_lambda)?;
                    let field = rasterize_tps(&mapping, dw, dh)?;
                    texture = field.warp(&texture)?;
                }
                let texture_seconds = t_texture.elapsed().as_secs_f64();

                Ok(FrameOutput {
                    mesh,
                    texture,
                    transfer_seconds,
                    denoise_seconds: diag.denoise_seconds,
                    texture_seconds,
                })
            })();
            (stem, result)
        })
        .collect();

    let mut manifest = Manifest::new("puppet");
    manifest.insert_config(cfg);
    manifest.insert(
        "input.driver",
        format!("sha256:{}", collection_digest(&driver)?),
    );
    manifest.insert(
        "input.puppet",
        format!("sha256:{}", collection_digest(&puppet)?),
    );
    manifest.insert_input("driver_average_mesh", &opts.driver_average_mesh)?;
    manifest.insert_input("puppet_average_mesh", &opts.puppet_average_mesh)?;
    manifest.insert("input.frames", format!("sha256:{}", files_digest(&frames)?));
    manifest.insert("frames", frames.len().to_string());
    record_ingest(&mut manifest, "driver", &driver_report);
    record_ingest(&mut manifest, "puppet", &puppet_report);
    manifest.insert(
        "diagnostics.correspondence_round_trip_rms",
        format!("{:.6}", corr.round_trip_rms()),
    );

    for (stem, result) in results {
        match result {
            Ok(output) => {
                let tex_name = format!("{stem}.png");
                let obj_name = format!("{stem}.obj");
                let mtl_name = format!("{stem}.mtl");
                let grid_name = format!("{stem}.fgrid");
                output.texture.save_png(opts.out.join(&tex_name))?;
                save_obj_textured(opts.out.join(&obj_name), &output.mesh, &tex_name)?;
                floatgrid::save_mesh(opts.out.join(&grid_name), &output.mesh)?;
                for name in [&tex_name, &obj_name, &mtl_name, &grid_name] {
                    manifest.insert_artifact(&opts.out, name)?;
                }
                if opts.preview {
                    let projector = fit_orthographic(&output.mesh, dw, dh);
                    let raster = rasterize(
                        &output.mesh,
                        Some(&output.texture),
                        &projector,
                        dw,
                        dh,
                        [0.0, 0.0, 0.0],
                    )?;
                    let preview_name = format!("preview_{stem}.png");
                    raster.image.save_png(opts.out.join(&preview_name))?;
                    manifest.insert_artifact(&opts.out, &preview_name)?;
                }
                let total =
                    output.transfer_seconds + output.texture_seconds;
                timings.push(format!(
                    "{stem},{},{},{},{}",
                    ms(output.transfer_seconds),
                    ms(output.denoise_seconds),
                    ms(output.texture_seconds),
                    ms(total)
                ));
            }
            Err(e) => {
                manifest.mark_failed(&stem);
                manifest.write(&opts.out)?;
                timings.write(&opts.out)?;
                return Err(RunError {
                    message: format!("frame {stem}: {}", e.message),
                    usage: e.usage,
                });
            }
        }
    }
    manifest.write(&opts.out)?;
    timings.write(&opts.out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// flow

#[derive(Clone, Debug)]
pub struct FlowOptions {
    pub source: PathBuf,
    pub target: PathBuf,
    pub out: PathBuf,
}

/// Debug helper: dense flow from one image to another, saved as a flow
/// grid and a color-wheel rendering, plus the source warped by the result.
pub fn cmd_flow(cfg: &PipelineConfig, opts: &FlowOptions) -> RunResult<()> {
    validated(cfg)?;
    ensure_out_dir(&opts.out)?;
    let source = as_usage(FaceImage::load_png(&opts.source))?;
    let target = as_usage(FaceImage::load_png(&opts.target))?;

    let start = Instant::now();
    let field = compute_flow(&source, &target, &cfg.flow)?;
    let flow_seconds = start.elapsed().as_secs_f64();
    let warped = field.warp(&source)?;

    floatgrid::save_flow(opts.out.join("flow.fgrid"), &field)?;
    field.save_color_wheel_png(opts.out.join("flow.png"))?;
    warped.save_png(opts.out.join("warped.png"))?;

    let residual: f64 = warped
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (*a as f64 - *b as f64).abs())
        .sum::<f64>()
        / warped.data().len() as f64;

    let mut manifest = Manifest::new("flow");
    manifest.insert_config(cfg);
    manifest.insert_input("source", &opts.source)?;
    manifest.insert_input("target", &opts.target)?;
    for name in ["flow.fgrid", "flow.png", "warped.png"] {
        manifest.insert_artifact(&opts.out, name)?;
    }
    manifest.insert("metric.mean_abs_residual", format!("{residual:.6}"));
    manifest.write(&opts.out)?;

    let mut timings = Timings::new("stage,elapsed_ms");
    timings.push(format!("flow,{}", ms(flow_seconds)));
    timings.write(&opts.out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// synth

#[derive(Clone, Debug)]
pub struct SynthOptions {
    pub out: PathBuf,
    pub seed: u64,
    /// Photos per generated collection.
    pub photos: usize,
    /// Driver performance frames.
    pub frames: usize,
    pub width: usize,
    pub height: usize,
}

/// Generate a self-contained demo dataset: driver and puppet photo
/// collections, both average meshes, and a driver performance — everything
/// the other subcommands consume.
pub fn cmd_synth(opts: &SynthOptions) -> RunResult<()> {
    ensure_out_dir(&opts.out)?;
    if opts.photos == 0 || opts.frames == 0 {
        return Err(RunError::usage(
            "photo and frame counts must be positive",
        ));
    }
    let (w, h) = (opts.width, opts.height);

    synth::write_demo_collection(opts.out.join("driver"), opts.seed, opts.photos, w, h)?;
    synth::write_demo_collection(opts.out.join("puppet"), opts.seed + 1, opts.photos, w, h)?;

    let (driver_mesh, fields) = synth::demo_performance(opts.seed, opts.frames, w, h);
    let puppet_mesh = synth::face_mesh(&synth::FaceParams::identity(opts.seed + 1), w, h);
    floatgrid::save_mesh(opts.out.join("driver_average.fgrid"), &driver_mesh)?;
    floatgrid::save_mesh(opts.out.join("puppet_average.fgrid"), &puppet_mesh)?;

    let frames_dir = opts.out.join("frames");
    ensure_out_dir(&frames_dir)?;
    for (i, field) in fields.iter().enumerate() {
        let frame = driver_mesh.displaced(field, 1.0)?;
        floatgrid::save_mesh(frames_dir.join(format!("frame_{i:04}.fgrid")), &frame)?;
    }

    let mut manifest = Manifest::new("synth");
    manifest.insert("synth.seed", opts.seed.to_string());
    manifest.insert("synth.photos", opts.photos.to_string());
    manifest.insert("synth.frames", opts.frames.to_string());
    manifest.insert("synth.size", format!("{w}x{h}"));
    manifest.insert_artifact(&opts.out, "driver_average.fgrid")?;
    manifest.insert_artifact(&opts.out, "puppet_average.fgrid")?;
    let (driver, _) = ingest_collection(&opts.out.join("driver"))?;
    let (puppet, _) = ingest_collection(&opts.out.join("puppet"))?;
    manifest.insert(
        "artifact.driver",
        format!("sha256:{}", collection_digest(&driver)?),
    );
    manifest.insert(
        "artifact.puppet",
        format!("sha256:{}", collection_digest(&puppet)?),
    );
    let frame_paths = list_fgrids(&frames_dir)?;
    manifest.insert(
        "artifact.frames",
        format!("sha256:{}", files_digest(&frame_paths)?),
    );
    manifest.write(&opts.out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scratch(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("facepuppet_run_{name}"));
        std::fs::remove_dir_all(&dir).ok();
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn fast_config() -> PipelineConfig {
        PipelineConfig {
            dense_align: false,
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn run_errors_split_into_exit_codes() {
        assert_eq!(RunError::usage("bad flag").exit_code(), 2);
        assert_eq!(RunError::failure("solver died").exit_code(), 1);
        let from_lib: RunError = Error::InvalidInput("x".into()).into();
        assert_eq!(from_lib.exit_code(), 1);
        assert_eq!(from_lib.to_string(), "invalid input: x");
    }

    #[test]
    fn missing_inputs_are_usage_errors() {
        let dir = scratch("missing");
        let err = cmd_average(
            &fast_config(),
            &AverageOptions {
                collection: dir.join("nope"),
                out: dir.join("out"),
            },
        )
        .unwrap_err();
        assert!(err.usage, "missing collection dir should be a usage error");
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn synth_average_and_texture_run_end_to_end() {
        let dir = scratch("texture");
        cmd_synth(&SynthOptions {
            out: dir.clone(),
            seed: 11,
            photos: 5,
            frames: 2,
            width: 48,
            height: 60,
        })
        .unwrap();

        let cfg = fast_config();
        let avg_out = dir.join("avg");
        cmd_average(
            &cfg,
            &AverageOptions {
                collection: dir.join("driver"),
                out: avg_out.clone(),
            },
        )
        .unwrap();
        for name in [
            "average.png",
            "average_fiducials.csv",
            "stage_a_input_mean.png",
            "stage_b_tps_mean.png",
            "stage_c_dense_mean.png",
            "stage_d_blended.png",
            "manifest.txt",
            "timings.csv",
        ] {
            assert!(avg_out.join(name).exists(), "missing {name}");
        }

        let tex_out = dir.join("tex");
        cmd_texture(
            &cfg,
            &TextureOptions {
                collection: dir.join("driver"),
                target: TextureTarget::Fiducials(avg_out.join("average_fiducials.csv")),
                out: tex_out.clone(),
                baselines: true,
                dump_weights: true,
                hold_out: false,
            },
        )
        .unwrap();
        let manifest = std::fs::read_to_string(tex_out.join("manifest.txt")).unwrap();
        for name in [
            "texture.png",
            "baseline_tps_average.png",
            "baseline_uniform_weights.png",
            "baseline_tps_only.png",
            "weights_level_00.png",
        ] {
            assert!(tex_out.join(name).exists(), "missing {name}");
            assert!(manifest.contains(&format!("artifact.{name}")));
        }
        assert!(manifest.contains("metric.gradient_energy.full"));
        assert!(manifest.contains("metric.gradient_energy.tps_average"));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn texture_hold_out_drops_the_reference() {
        let dir = scratch("holdout");
        cmd_synth(&SynthOptions {
            out: dir.clone(),
            seed: 3,
            photos: 6,
            frames: 1,
            width: 48,
            height: 60,
        })
        .unwrap();
        let reference = dir.join("driver").join("photo_0002.png");
        let out = dir.join("out");
        cmd_texture(
            &fast_config(),
            &TextureOptions {
                collection: dir.join("driver"),
                target: TextureTarget::Reference(reference),
                out: out.clone(),
                baselines: false,
                dump_weights: false,
                hold_out: true,
            },
        )
        .unwrap();
        let manifest = std::fs::read_to_string(out.join("manifest.txt")).unwrap();
        assert!(manifest.contains("collection.held_out = 1"));
        assert!(out.join("texture.png").exists());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn transfer_reruns_reproduce_the_manifest() {
        let dir = scratch("transfer");
        cmd_synth(&SynthOptions {
            out: dir.clone(),
            seed: 7,
            photos: 5,
            frames: 2,
            width: 48,
            height: 60,
        })
        .unwrap();

        let cfg = fast_config();
        let run = |out: PathBuf| {
            cmd_transfer(
                &cfg,
                &TransferOptions {
                    driver_average: dir.join("driver_average.fgrid"),
                    frames: dir.join("frames"),
                    puppet_average: None,
                    forward_flow: None,
                    inverse_flow: None,
                    out: out.clone(),
                },
            )
            .unwrap();
            std::fs::read(out.join("manifest.txt")).unwrap()
        };
        let a = run(dir.join("out_a"));
        let b = run(dir.join("out_b"));
        assert_eq!(a, b, "rerun must reproduce the manifest bit for bit");

        for name in ["frame_0000.fgrid", "frame_0000.obj", "timings.csv"] {
            assert!(dir.join("out_a").join(name).exists(), "missing {name}");
        }
        let timings = std::fs::read_to_string(dir.join("out_a").join("timings.csv")).unwrap();
        assert!(timings.starts_with("frame,total_ms,denoise_ms,denoise_share"));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn puppet_runner_reproduces_its_manifest() {
        let dir = scratch("puppet");
        cmd_synth(&SynthOptions {
            out: dir.clone(),
            seed: 21,
            photos: 5,
            frames: 2,
            width: 48,
            height: 60,
        })
        .unwrap();

        let mut cfg = fast_config();
        cfg.texture_mode = TextureMode::PerFrame;
        let run = |out: PathBuf| {
            cmd_puppet(
                &cfg,
                &PuppetOptions {
                    driver: dir.join("driver"),
                    puppet: dir.join("puppet"),
                    driver_average_mesh: dir.join("driver_average.fgrid"),
                    puppet_average_mesh: dir.join("puppet_average.fgrid"),
                    frames: dir.join("frames"),
                    out: out.clone(),
                    preview: true,
                },
            )
            .unwrap();
            std::fs::read(out.join("manifest.txt")).unwrap()
        };
        let a = run(dir.join("out_a"));
        let b = run(dir.join("out_b"));
        assert_eq!(a, b, "rerun must reproduce the manifest bit for bit");

        for name in [
            "frame_0000.png",
            "frame_0000.obj",
            "frame_0000.mtl",
            "frame_0000.fgrid",
            "preview_frame_0000.png",
            "frame_0001.obj",
            "timings.csv",
        ] {
            assert!(dir.join("out_a").join(name).exists(), "missing {name}");
        }
        let manifest = String::from_utf8(a).unwrap();
        assert!(manifest.contains("diagnostics.correspondence_round_trip_rms"));
        assert!(manifest.contains("status = ok"));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn flow_runner_writes_field_and_preview() {
        let dir = scratch("flow");
        cmd_synth(&SynthOptions {
            out: dir.clone(),
            seed: 5,
            photos: 5,
            frames: 1,
            width: 48,
            height: 60,
        })
        .unwrap();
        let out = dir.join("out");
        cmd_flow(
            &fast_config(),
            &FlowOptions {
                source: dir.join("driver").join("photo_0000.png"),
                target: dir.join("driver").join("photo_0001.png"),
                out: out.clone(),
            },
        )
        .unwrap();
        for name in ["flow.fgrid", "flow.png", "warped.png", "manifest.txt"] {
            assert!(out.join(name).exists(), "missing {name}");
        }
        std::fs::remove_dir_all(&dir).ok();
    }
}
