//! Computes dense optical flow between two expressions of one synthetic
//! face and prints the coarse-to-fine energy trace — non-increasing within
//! each level by construction.
//!
//!     cargo run --example optical_flow [OUT_DIR]

use std::path::PathBuf;

use facepuppet::flow::{compute_flow_with_stats, FlowParams};
use facepuppet::synth;

fn main() -> facepuppet::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("target/examples/optical_flow"));
    std::fs::create_dir_all(&out)?;

    let collection = synth::demo_collection(9, 4, 120, 150)?;
    let source = &collection.get(0).image;
    let target = &collection.get(1).image;

    let (field, stats) = compute_flow_with_stats(source, target, &FlowParams::default())?;
    for level in &stats.levels {
        let first = level.energies.first().copied().unwrap_or(0.0);
        let last = level.energies.last().copied().unwrap_or(0.0);
        println!(
            "level {:>3}x{:<3} energy {first:.1} -> {last:.1} ({} warps)",
            level.width,
            level.height,
            level.energies.len().saturating_sub(1),
        );
    }
    println!("reverted warp iterations: {}", stats.reverted);

    source.save_png(out.join("source.png"))?;
    target.save_png(out.join("target.png"))?;
    field.warp(source)?.save_png(out.join("warped.png"))?;
    field.save_color_wheel_png(out.join("flow.png"))?;
    println!("wrote {}", out.display());
    Ok(())
}
