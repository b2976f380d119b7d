//! Foundation types: images, landmarks, warp fields, grid meshes, and the
//! file formats they travel in.

pub mod collection;
pub mod fiducials;
pub mod floatgrid;
pub mod image;
pub mod mesh;
pub mod obj;
pub mod pose;
pub mod warp;

pub use collection::{load_photo_collection, IngestReport, PhotoCollection, PhotoRecord};
pub use fiducials::{FiducialSet, FIDUCIAL_COUNT};
pub use image::FaceImage;
pub use mesh::{DepthMesh, ScalarField, TranslationField, VertexIndex};
pub use pose::Pose;
pub use warp::WarpField;
