//! Face models from photo collections, and puppetry between them.
//!
//! This crate builds an aligned average face from a collection of
//! landmarked photos, synthesizes expression-dependent textures by blending
//! the collection inside a multi-scale image pyramid, and retargets 3D
//! facial performances from one person's depth meshes onto another's —
//! driving a "puppet" face with a different performer.
//!
//! The major pieces:
//!
//! - [`core`]: images, 49-point landmark sets, dense warp fields, grid
//!   meshes, and their on-disk formats.
//! - [`geometry`]: thin-plate-spline warping, pose estimation from
//!   landmarks, and frontalization of posed photos.
//! - [`flow`]: coarse-to-fine variational optical flow and a small
//!   appearance subspace for lighting-robust alignment.
//! - [`denoise`]: edge-preserving smoothing of scalar fields on mesh grids.
//! - [`deform`]: cross-identity correspondence and per-frame deformation
//!   transfer between face meshes.
//! - [`texture`]: image pyramids, expression-weighted blending, average
//!   construction, and the per-frame texture synthesis pipeline.
//! - [`synth`]: procedural face data for demos and tests.
//! - [`pipeline`]: batch runs, configuration, and reproducibility
//!   manifests behind the command-line tool.
//!
//! Start with the `examples/` directory: each major capability has a
//! runnable example that generates its own data.

pub mod core;
pub mod deform;
pub mod denoise;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod pipeline;
pub mod render;
pub mod synth;
pub mod texture;

pub use error::{Error, Result};
