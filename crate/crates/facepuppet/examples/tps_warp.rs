//! Warps one photo's landmarks onto the collection mean with thin-plate
//! splines at several smoothing weights: lambda 0 interpolates the
//! landmarks exactly, larger lambdas trade landmark fit for a stiffer,
//! lower-bending-energy map.
//!
//!     cargo run --example tps_warp [OUT_DIR]

use std::path::PathBuf;

use facepuppet::geometry::{fit_tps, rasterize_tps};
use facepuppet::synth;

fn main() -> facepuppet::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("target/examples/tps_warp"));
    std::fs::create_dir_all(&out)?;

    let collection = synth::demo_collection(23, 8, 120, 150)?;
    let mean = collection.mean_fiducials();
    let record = collection.get(0);
    record.image.save_png(out.join("input.png"))?;

    for lambda in [0.0, 1.0, 10.0, 100.0] {
        // The fit maps mean-grid points back into the photo, so warping
        // with it pulls the photo onto the mean landmarks.
        let mapping = fit_tps(&record.fiducials, &mean, lambda)?;
        let residuals = mapping.control_residuals();
        let max_residual = residuals.iter().cloned().fold(0.0, f64::max);
        println!(
            "lambda {lambda:>5}: bending energy {:.5}, max landmark residual {:.4} px",
            mapping.bending_energy(),
            max_residual,
        );
        let field = rasterize_tps(&mapping, record.image.width(), record.image.height())?;
        field
            .warp(&record.image)?
            .save_png(out.join(format!("aligned_lambda_{lambda}.png")))?;
    }

    println!("wrote {}", out.display());
    Ok(())
}
