//! Run configuration: one flat key=value namespace shared by the config
//! file and the command line, with precedence CLI > file > built-in
//! defaults. Every knob is echoed into the manifest so a run can be
//! reproduced from its artifacts alone.

use std::collections::BTreeMap;
use std::path::Path;

use crate::denoise::DenoiseParams;
use crate::error::{Error, Result};
use crate::flow::subspace::ALIGNMENT_RANK;
use crate::flow::FlowParams;
use crate::texture::{AlignParams, BlendParams};

/// Which expression geometry synthesized textures use.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TextureMode {
    /// Blend with the target's expression weights but keep the average
    /// (neutral) geometry — the deformed mesh already carries the motion.
    Neutral,
    /// Additionally re-warp the blended texture onto the target landmarks.
    PerFrame,
}

impl TextureMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            TextureMode::Neutral => "neutral",
            TextureMode::PerFrame => "per-frame",
        }
    }
}

/// Every numeric knob and mode flag of the batch pipeline.
#[derive(Clone, Debug)]
pub struct PipelineConfig {
    /// Landmark-warp smoothing weight.
    pub tps_lambda: f64,
    /// Expression bandwidth (canonical-grid pixels).
    pub sigma: f64,
    /// Detail-response exponent.
    pub alpha: f64,
    /// Level-decay exponent of the uniform blend term.
    pub beta: f64,
    /// Uniform blend term scale.
    pub tau: f64,
    /// Pyramid depth; `None` derives it from the image size.
    pub pyramid_depth: Option<usize>,
    /// Magnitude-denoising strength.
    pub tv_weight: f64,
    /// Quadratic-to-linear crossover of the denoiser's edge penalty.
    pub huber_epsilon: f64,
    pub denoise_max_iterations: usize,
    pub denoise_tolerance: f64,
    pub flow: FlowParams,
    /// Refine landmark alignment with subspace-guided optical flow.
    pub dense_align: bool,
    /// Camera focal length in pixels; `None` uses the photo width.
    pub focal: Option<f64>,
    /// Extra slack for the frontalization visibility test.
    pub depth_tolerance: f64,
    pub texture_mode: TextureMode,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            tps_lambda: 10.0,
            sigma: 10.0,
            alpha: 1.0,
            beta: 20.0,
            tau: 1.0,
            pyramid_depth: None,
            tv_weight: 1.0,
            huber_epsilon: 0.05,
            denoise_max_iterations: DenoiseParams::default().max_iterations,
            denoise_tolerance: DenoiseParams::default().tolerance,
            flow: FlowParams::default(),
            dense_align: true,
            focal: None,
            depth_tolerance: 0.0,
            texture_mode: TextureMode::Neutral,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| {
        Error::InvalidInput(format!("config key {key}: cannot parse {value:?}"))
    })
}

impl PipelineConfig {
    /// Set one knob by its config-file name.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "tps_lambda" => self.tps_lambda = parse(key, value)?,
            "sigma" => self.sigma = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "beta" => self.beta = parse(key, value)?,
            "tau" => self.tau = parse(key, value)?,
            "pyramid_depth" => {
                self.pyramid_depth = if value == "auto" {
                    None
                } else {
                    Some(parse(key, value)?)
                }
            }
            "tv_weight" => self.tv_weight = parse(key, value)?,
            "huber_epsilon" => self.huber_epsilon = parse(key, value)?,
            "denoise_max_iterations" => self.denoise_max_iterations = parse(key, value)?,
            "denoise_tolerance" => self.denoise_tolerance = parse(key, value)?,
            "flow_alpha" => self.flow.alpha = parse(key, value)?,
            "flow_gamma" => self.flow.gamma = parse(key, value)?,
            "flow_pyramid_ratio" => self.flow.pyramid_ratio = parse(key, value)?,
            "flow_min_width" => self.flow.min_width = parse(key, value)?,
            "flow_outer_iterations" => self.flow.outer_iterations = parse(key, value)?,
            "flow_inner_iterations" => self.flow.inner_iterations = parse(key, value)?,
            "flow_sor_iterations" => self.flow.sor_iterations = parse(key, value)?,
            "flow_sor_omega" => self.flow.sor_omega = parse(key, value)?,
            "dense_align" => self.dense_align = parse(key, value)?,
            "focal" => {
                self.focal = if value == "auto" {
                    None
                } else {
                    Some(parse(key, value)?)
                }
            }
            "depth_tolerance" => self.depth_tolerance = parse(key, value)?,
            "texture_mode" => {
                self.texture_mode = match value {
                    "neutral" => TextureMode::Neutral,
                    "per-frame" => TextureMode::PerFrame,
                    other => {
                        return Err(Error::InvalidInput(format!(
                            "texture_mode must be neutral or per-frame, got {other:?}"
                        )))
                    }
                }
            }
            other => {
                return Err(Error::InvalidInput(format!(
                    "unknown config key {other:?}"
                )))
            }
        }
        Ok(())
    }

    /// Apply `key=value` lines from a config file. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn load_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    reason: format!("line {}: expected key=value, got {line:?}", lineno + 1),
                });
            };
            self.set(key, value)?;
        }
        Ok(())
    }

    /// Apply one `key=value` override from the command line.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let Some((key, value)) = spec.split_once('=') else {
            return Err(Error::InvalidInput(format!(
                "expected key=value, got {spec:?}"
            )));
        };
        self.set(key, value)
    }

    /// Check every knob against its documented range.
    pub fn validate(&self) -> Result<()> {
        self.align_params().validate()?;
        self.blend_params().validate()?;
        self.denoise_params().validate()?;
        if let Some(f) = self.focal {
            if !(f.is_finite() && f > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "focal must be positive, got {f}"
                )));
            }
        }
        if !(self.depth_tolerance.is_finite() && self.depth_tolerance >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "depth_tolerance must be non-negative, got {}",
                self.depth_tolerance
            )));
        }
        Ok(())
    }

    pub fn align_params(&self) -> AlignParams {
        AlignParams {
            tps_lambda: self.tps_lambda,
            dense_align: self.dense_align,
            flow: self.flow.clone(),
        }
    }

    pub fn blend_params(&self) -> BlendParams {
        BlendParams {
            sigma: self.sigma,
            alpha: self.alpha,
            beta: self.beta,
            tau: self.tau,
            depth: self.pyramid_depth,
        }
    }

    pub fn denoise_params(&self) -> DenoiseParams {
        DenoiseParams {
            tv_weight: self.tv_weight,
            huber_epsilon: self.huber_epsilon,
            max_iterations: self.denoise_max_iterations,
            tolerance: self.denoise_tolerance,
        }
    }

    /// Every knob as sorted text, for the manifest.
    pub fn echo(&self) -> BTreeMap<String, String> {
        let mut map = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            map.insert(k.to_string(), v);
        };
        put("tps_lambda", format!("{}", self.tps_lambda));
        put("sigma", format!("{}", self.sigma));
        put("alpha", format!("{}", self.alpha));
        put("beta", format!("{}", self.beta));
        put("tau", format!("{}", self.tau));
        put(
            "pyramid_depth",
            self.pyramid_depth
                .map_or_else(|| "auto".to_string(), |d| d.to_string()),
        );
        put("tv_weight", format!("{}", self.tv_weight));
        put("huber_epsilon", format!("{}", self.huber_epsilon));
        put(
            "denoise_max_iterations",
            self.denoise_max_iterations.to_string(),
        );
        put("denoise_tolerance", format!("{}", self.denoise_tolerance));
        put("flow_alpha", format!("{}", self.flow.alpha));
        put("flow_gamma", format!("{}", self.flow.gamma));
        put("flow_pyramid_ratio", format!("{}", self.flow.pyramid_ratio));
        put("flow_min_width", self.flow.min_width.to_string());
        put(
            "flow_outer_iterations",
            self.flow.outer_iterations.to_string(),
        );
        put(
            "flow_inner_iterations",
            self.flow.inner_iterations.to_string(),
        );
        put("flow_sor_iterations", self.flow.sor_iterations.to_string());
        put("flow_sor_omega", format!("{}", self.flow.sor_omega));
        put("subspace_rank", ALIGNMENT_RANK.to_string());
        put("dense_align", self.dense_align.to_string());
        put(
            "focal",
            self.focal
                .map_or_else(|| "auto".to_string(), |f| format!("{f}")),
        );
        put("depth_tolerance", format!("{}", self.depth_tolerance));
        put("texture_mode", self.texture_mode.as_str().to_string());
        map
    }
}
