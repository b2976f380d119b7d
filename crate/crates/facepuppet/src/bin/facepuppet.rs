//! Command-line frontend: argument parsing and dispatch only — all the
//! work lives in [`facepuppet::pipeline`].
//!
//! Exit codes: 0 success, 1 computation failure, 2 usage or ingestion
//! error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use facepuppet::pipeline::{
    cmd_average, cmd_flow, cmd_puppet, cmd_synth, cmd_texture, cmd_transfer, AverageOptions,
    FlowOptions, PipelineConfig, PuppetOptions, RunError, RunResult, SynthOptions, TextureOptions,
    TextureTarget, TransferOptions,
};

#[derive(Parser)]
#[command(
    name = "facepuppet",
    version,
    about = "Face models from photo collections: aligned averages, \
             expression-dependent textures, and performance retargeting",
    after_help = "Configuration precedence: built-in defaults, then --config \
                  FILE (flat key=value lines), then --set/--sigma flags in \
                  order. Every run writes manifest.txt (inputs, config, \
                  artifact hashes; bit-identical on reruns) and timings.csv \
                  into --out."
)]
struct Cli {
    /// Flat key=value config file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override one config key, e.g. --set sigma=12 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Expression weighting bandwidth; shorthand for --set sigma=F.
    #[arg(long, global = true, value_name = "F")]
    sigma: Option<f64>,

    /// Worker threads (default: all cores). Results are identical for
    /// every thread count; 1 gives fully serial execution.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a collection's aligned average face, keeping every stage.
    Average {
        /// Directory of frontalized photos (PNG) with landmark CSVs.
        #[arg(long, value_name = "DIR")]
        collection: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Synthesize an expression-targeted texture from a collection.
    Texture {
        #[arg(long, value_name = "DIR")]
        collection: PathBuf,
        /// Target landmarks (CSV).
        #[arg(
            long,
            value_name = "CSV",
            conflicts_with = "reference",
            required_unless_present = "reference"
        )]
        target: Option<PathBuf>,
        /// Reference photo (PNG with a sibling landmark CSV); its
        /// landmarks become the target and, with dense alignment on, its
        /// residual detail folds into the result.
        #[arg(long, value_name = "PNG")]
        reference: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Also write the reduced variants (plain warped average, uniform
        /// weights, no dense alignment) with gradient-energy metrics.
        #[arg(long)]
        baselines: bool,
        /// Write per-level weight-share maps of the best-matched photo.
        #[arg(long)]
        dump_weights: bool,
        /// Drop the reference photo from the collection before synthesis.
        #[arg(long, requires = "reference")]
        hold_out: bool,
    },
    /// Retarget per-frame driver meshes onto a puppet's average mesh.
    Transfer {
        /// Driver's average mesh (.fgrid).
        #[arg(long, value_name = "FGRID")]
        driver_average: PathBuf,
        /// Directory of per-frame driver meshes (.fgrid).
        #[arg(long, value_name = "DIR")]
        frames: PathBuf,
        /// Puppet's average mesh; defaults to the driver's own.
        #[arg(long, value_name = "FGRID")]
        puppet_average: Option<PathBuf>,
        /// Driver-to-puppet dense correspondence (.fgrid flow).
        #[arg(long, value_name = "FGRID", requires = "inverse_flow")]
        forward_flow: Option<PathBuf>,
        /// Puppet-to-driver dense correspondence (.fgrid flow).
        #[arg(long, value_name = "FGRID", requires = "forward_flow")]
        inverse_flow: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Full retargeting: correspondence between the average faces, then
    /// per-frame deformation transfer and texture synthesis.
    Puppet {
        /// Driver photo collection directory.
        #[arg(long, value_name = "DIR")]
        driver: PathBuf,
        /// Puppet photo collection directory.
        #[arg(long, value_name = "DIR")]
        puppet: PathBuf,
        /// Driver's average mesh (.fgrid), on the photo grid.
        #[arg(long, value_name = "FGRID")]
        driver_average_mesh: PathBuf,
        /// Puppet's average mesh (.fgrid).
        #[arg(long, value_name = "FGRID")]
        puppet_average_mesh: PathBuf,
        /// Directory of per-frame driver meshes (.fgrid).
        #[arg(long, value_name = "DIR")]
        frames: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Also render an orthographic preview PNG per frame.
        #[arg(long)]
        preview: bool,
        /// neutral | per-frame; shorthand for --set texture_mode=MODE.
        #[arg(long, value_name = "MODE")]
        texture_mode: Option<String>,
    },
    /// Debug: dense optical flow between two images.
    Flow {
        #[arg(long, value_name = "PNG")]
        source: PathBuf,
        #[arg(long, value_name = "PNG")]
        target: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Generate a synthetic demo dataset for the other subcommands.
    Synth {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Photos per generated collection.
        #[arg(long, default_value_t = 20)]
        photos: usize,
        /// Driver performance frames.
        #[arg(long, default_value_t = 10)]
        frames: usize,
        #[arg(long, default_value_t = 194)]
        width: usize,
        #[arg(long, default_value_t = 244)]
        height: usize,
    },
}

fn build_config(cli: &Cli) -> RunResult<PipelineConfig> {
    let mut cfg = PipelineConfig::default();
    if let Some(path) = &cli.config {
        cfg.load_file(path)
            .map_err(|e| RunError::usage(e.to_string()))?;
    }
    for spec in &cli.set {
        cfg.apply_override(spec)
            .map_err(|e| RunError::usage(e.to_string()))?;
    }
    if let Some(sigma) = cli.sigma {
        cfg.set("sigma", &sigma.to_string())
            .map_err(|e| RunError::usage(e.to_string()))?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> RunResult<()> {
    let mut cfg = build_config(&cli)?;
    match cli.command {
        Command::Average { collection, out } => {
            cmd_average(&cfg, &AverageOptions { collection, out })
        }
        Command::Texture {
            collection,
            target,
            reference,
            out,
            baselines,
            dump_weights,
            hold_out,
        } => {
            let target = match (target, reference) {
                (Some(csv), None) => TextureTarget::Fiducials(csv),
                (None, Some(png)) => TextureTarget::Reference(png),
                _ => unreachable!("clap enforces exactly one of --target/--reference"),
            };
            cmd_texture(
                &cfg,
                &TextureOptions {
                    collection,
                    target,
                    out,
                    baselines,
                    dump_weights,
                    hold_out,
                },
            )
        }
        Command::Transfer {
            driver_average,
            frames,
            puppet_average,
            forward_flow,
            inverse_flow,
            out,
        } => cmd_transfer(
            &cfg,
            &TransferOptions {
                driver_average,
                frames,
                puppet_average,
                forward_flow,
                inverse_flow,
                out,
            },
        ),
        Command::Puppet {
            driver,
            puppet,
            driver_average_mesh,
            puppet_average_mesh,
            frames,
            out,
            preview,
            texture_mode,
        } => {
            if let Some(mode) = texture_mode {
                cfg.set("texture_mode", &mode)
                    .map_err(|e| RunError::usage(e.to_string()))?;
            }
            cmd_puppet(
                &cfg,
                &PuppetOptions {
                    driver,
                    puppet,
                    driver_average_mesh,
                    puppet_average_mesh,
                    frames,
                    out,
                    preview,
                },
            )
        }
        Command::Flow {
            source,
            target,
            out,
        } => cmd_flow(&cfg, &FlowOptions { source, target, out }),
        Command::Synth {
            out,
            seed,
            photos,
            frames,
            width,
            height,
        } => cmd_synth(&SynthOptions {
            out,
            seed,
            photos,
            frames,
            width,
            height,
        }),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.threads {
        Some(0) => Err(RunError::usage("--threads must be at least 1")),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| run(cli)),
            Err(e) => Err(RunError::usage(format!("cannot build thread pool: {e}"))),
        },
        None => run(cli),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
