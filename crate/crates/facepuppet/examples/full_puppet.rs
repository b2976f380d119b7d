//! The whole pipeline end to end, exactly as the command-line tool runs
//! it: generate a synthetic driver and puppet, build the cross-identity
//! correspondence, transfer every driver frame onto the puppet, synthesize
//! its per-frame textures, and leave texture-mapped OBJs plus previews and
//! a reproducibility manifest.
//!
//!     cargo run --example full_puppet [OUT_DIR]

use std::path::PathBuf;

use facepuppet::pipeline::{cmd_puppet, cmd_synth, PipelineConfig, PuppetOptions, SynthOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("target/examples/full_puppet"));

    let data = out.join("data");
    cmd_synth(&SynthOptions {
        out: data.clone(),
        seed: 1,
        photos: 8,
        frames: 4,
        width: 96,
        height: 120,
    })?;
    println!("generated driver/puppet collections and a 4-frame performance");

    let run = out.join("run");
    cmd_puppet(
        &PipelineConfig::default(),
        &PuppetOptions {
            driver: data.join("driver"),
            puppet: data.join("puppet"),
            driver_average_mesh: data.join("driver_average.fgrid"),
            puppet_average_mesh: data.join("puppet_average.fgrid"),
            frames: data.join("frames"),
            out: run.clone(),
            preview: true,
        },
    )?;

    let manifest = std::fs::read_to_string(run.join("manifest.txt"))?;
    let artifacts = manifest.lines().filter(|l| l.starts_with("artifact.")).count();
    println!("puppet run wrote {artifacts} artifacts into {}", run.display());
    for line in manifest.lines().filter(|l| l.starts_with("diagnostics.")) {
        println!("{line}");
    }
    println!("\ntimings.csv:");
    print!("{}", std::fs::read_to_string(run.join("timings.csv"))?);
    Ok(())
}
