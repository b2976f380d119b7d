//! Builds an aligned average face from a synthetic photo collection and
//! saves every stage: the raw pixel mean, the landmark-warped mean, the
//! densely aligned mean, and the final detail-preserving blend.
//!
//!     cargo run --example build_average [OUT_DIR]

use std::path::PathBuf;

use facepuppet::synth;
use facepuppet::texture::{build_average_stages, sharpness, AlignParams, BlendParams};

fn main() -> facepuppet::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("target/examples/build_average"));
    std::fs::create_dir_all(&out)?;

    let collection = synth::demo_collection(17, 12, 120, 150)?;
    println!("collection: {} photos of one identity", collection.len());

    let stages = build_average_stages(
        &collection,
        &AlignParams::default(),
        &BlendParams::default(),
    )?;

    for (name, image) in [
        ("stage_a_input_mean.png", &stages.input_mean),
        ("stage_b_tps_mean.png", &stages.tps_mean),
        ("stage_c_dense_mean.png", &stages.dense_mean),
        ("stage_d_blended.png", &stages.blended),
    ] {
        image.save_png(out.join(name))?;
        println!(
            "{name}: sharpness {:.4}",
            sharpness(image, &stages.mean_fiducials)
        );
    }
    stages
        .mean_fiducials
        .save_csv(out.join("average_fiducials.csv"))?;

    println!("wrote {}", out.display());
    Ok(())
}
