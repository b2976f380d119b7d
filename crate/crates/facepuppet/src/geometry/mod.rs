//! Geometric fitting: landmark-driven image warps, rigid pose recovery,
//! and frontal resampling of photos.

pub mod frontal;
pub mod pnp;
pub mod tps;

pub use frontal::{frontalize, Frontalized, FrontalizeParams, Template};
pub use pnp::{estimate_pose, estimate_pose_points, PoseEstimate};
pub use tps::{fit_tps, rasterize_tps, TpsMapping};
