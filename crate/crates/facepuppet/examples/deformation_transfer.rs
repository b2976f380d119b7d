//! Transfers a synthetic facial performance onto a puppet with different
//! proportions: a 2x-scaled copy of the driver. Transferred displacement
//! magnitudes grow in proportion to the puppet, because the transfer
//! measures arrival distances on the puppet's own surface instead of
//! copying the driver's millimeters; vertex snapping and denoising damp
//! the ratio for motions near the grid resolution, so the performance is
//! amplified here to make the scaling visible.
//!
//!     cargo run --example deformation_transfer [OUT_DIR]

use std::path::PathBuf;

use facepuppet::core::mesh::TranslationField;
use facepuppet::core::obj::save_obj;
use facepuppet::deform::{transfer_deformation, Correspondence};
use facepuppet::denoise::DenoiseParams;
use facepuppet::synth;

fn main() -> facepuppet::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("target/examples/deformation_transfer"));
    std::fs::create_dir_all(&out)?;

    let (width, height) = (96, 120);
    let (driver_avg, fields) = synth::demo_performance(3, 5, width, height);
    let puppet_avg = driver_avg.scaled(2.0)?;
    // Identical grids, so identity correspondence links the two faces.
    let corr = Correspondence::identity(width, height);
    let denoise = DenoiseParams::default();

    for (i, field) in fields.iter().enumerate() {
        let frame = driver_avg.displaced(field, 4.0)?;
        let driver_motion = TranslationField::between(&driver_avg, &frame)?;
        let (mesh, diag) = transfer_deformation(&frame, &driver_avg, &puppet_avg, &corr, &denoise)?;
        let puppet_motion = TranslationField::between(&puppet_avg, &mesh)?;
        let (driver_rms, puppet_rms) =
            (driver_motion.rms_magnitude(), puppet_motion.rms_magnitude());
        let ratio = if driver_rms > 0.0 {
            puppet_rms / driver_rms
        } else {
            0.0
        };
        println!(
            "frame {i}: driver rms {driver_rms:.3} -> puppet rms {puppet_rms:.3} \
             ({ratio:.2}x on the 2x puppet; {} transferred, {} passthrough, \
             denoise {} iters)",
            diag.transferred, diag.passthrough, diag.denoise.iterations,
        );
        if i + 1 == fields.len() {
            save_obj(out.join("puppet_last_frame.obj"), &mesh)?;
            save_obj(out.join("driver_last_frame.obj"), &frame)?;
        }
    }

    println!("wrote {}", out.display());
    Ok(())
}
