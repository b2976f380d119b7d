//! Synthesizes expression-dependent textures: prepares a collection once,
//! then blends toward two different targets — the mean expression and the
//! collection's most extreme one — showing how the weights follow the
//! request while the overall color stays put.
//!
//!     cargo run --example expression_texture [OUT_DIR]

use std::path::PathBuf;

use facepuppet::synth;
use facepuppet::texture::{AlignParams, BlendParams, TexturePipeline};

fn main() -> facepuppet::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("target/examples/expression_texture"));
    std::fs::create_dir_all(&out)?;

    let collection = synth::demo_collection(5, 10, 120, 150)?;
    let pipeline = TexturePipeline::prepare(
        &collection,
        &AlignParams::default(),
        BlendParams::default(),
    )?;
    println!(
        "prepared {} photos, pyramid depth {}",
        pipeline.photo_count(),
        pipeline.depth()
    );

    // The photo farthest from the mean expression makes a vivid target.
    let mean = pipeline.mean_fiducials().clone();
    let extreme = collection
        .iter()
        .max_by(|a, b| {
            mean.distance(&a.fiducials)
                .total_cmp(&mean.distance(&b.fiducials))
        })
        .expect("collection is non-empty");
    println!(
        "extreme target: {} at landmark distance {:.2}",
        extreme.id,
        mean.distance(&extreme.fiducials)
    );

    let (neutral, _) = pipeline.synthesize(&mean)?;
    let (expressive, diag) = pipeline.synthesize(&extreme.fiducials)?;
    neutral.save_png(out.join("texture_mean.png"))?;
    expressive.save_png(out.join("texture_extreme.png"))?;
    println!(
        "expressive blend: {} zero-weight pixels, dense refinement {}",
        diag.blend.zero_weight_pixels,
        if diag.dense_refined { "on" } else { "off" }
    );

    // Per-level weight share of the best-matched photo: coarse levels stay
    // near 1/n (uniform), fine levels concentrate on the match.
    for (level, map) in pipeline.weight_maps(&extreme.fiducials)?.iter().enumerate() {
        let mean_share: f32 =
            map.data().iter().sum::<f32>() / map.data().len() as f32;
        println!("level {level}: mean best-photo share {mean_share:.3}");
        map.save_png(out.join(format!("weights_level_{level:02}.png")))?;
    }

    println!("wrote {}", out.display());
    Ok(())
}
