//! Three-layer configuration: built-in defaults, then the TOML config file,
//! then command-line flags. Each subcommand has its own section; unknown keys
//! are rejected so typos fail loudly instead of silently using defaults.

use crate::{CliError, SolveArgs, SynthArgs, TrainArgs};
use blindsr::degrade::DegradationConfig;
use blindsr::gem::GemConfig;
use blindsr::tensor::BoundaryMode;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    #[serde(default)]
    pub synth: SynthSection,
    #[serde(default)]
    pub solve: SolveSection,
    #[serde(default)]
    pub train: TrainSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub scale: Option<usize>,
    pub sigma: Option<f64>,
    pub support: Option<usize>,
    pub rate: Option<f64>,
    pub components: Option<usize>,
    pub boundary: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveSection {
    pub scale: Option<usize>,
    pub sigma: Option<f64>,
    pub support: Option<usize>,
    pub ridge: Option<f64>,
    pub max_outer: Option<usize>,
    pub e_steps: Option<usize>,
    pub m_cg_iters: Option<usize>,
    pub tol_rel: Option<f64>,
    pub n_mc: Option<usize>,
    pub components: Option<usize>,
    pub rate: Option<f64>,
    pub boundary: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub alpha_g: Option<f64>,
    pub alpha_r: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub n_mc: Option<usize>,
    pub fd_step: Option<f64>,
    pub components: Option<usize>,
    pub restore_iters: Option<usize>,
    pub support: Option<usize>,
    pub scale: Option<usize>,
    pub sigma: Option<f64>,
    pub rate: Option<f64>,
    pub boundary: Option<String>,
}

/// Parses the config file when one was given; otherwise all-empty.
pub fn load_file(path: Option<&Path>) -> Result<FileConfig, CliError> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Runtime(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text)
        .map_err(|e| CliError::Usage(format!("bad config {}: {e}", path.display())))
}

fn parse_boundary(name: &str) -> Result<BoundaryMode, CliError> {
    match name {
        "circular" => Ok(BoundaryMode::Circular),
        "replicate" => Ok(BoundaryMode::Replicate),
        other => Err(CliError::Usage(format!(
            "unknown boundary mode '{other}' (expected circular or replicate)"
        ))),
    }
}

fn boundary_name(mode: BoundaryMode) -> &'static str {
    match mode {
        BoundaryMode::Circular => "circular",
        BoundaryMode::Replicate => "replicate",
    }
}

/// Effective synthesis settings after merging all three layers.
#[derive(Debug, Serialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub scale: usize,
    pub sigma: f64,
    pub support: usize,
    pub rate: f64,
    pub components: usize,
    pub boundary: String,
}

impl SynthConfig {
    pub fn merge(args: &SynthArgs, file: &FileConfig, seed: u64) -> Result<Self, CliError> {
        let d = DegradationConfig::default();
        let f = &file.synth;
        let boundary = args
            .boundary
            .clone()
            .or_else(|| f.boundary.clone())
            .unwrap_or_else(|| boundary_name(d.boundary).into());
        parse_boundary(&boundary)?;
        Ok(Self {
            seed,
            scale: args.scale.or(f.scale).unwrap_or(d.scale),
            sigma: args.sigma.or(f.sigma).unwrap_or(d.sigma_n),
            support: args.support.or(f.support).unwrap_or(d.support),
            rate: args.rate.or(f.rate).unwrap_or(0.5),
            components: args.components.or(f.components).unwrap_or(1),
            boundary,
        })
    }

    pub fn degradation(&self, seed: u64) -> Result<DegradationConfig, CliError> {
        Ok(DegradationConfig {
            scale: self.scale,
            sigma_n: self.sigma,
            support: self.support,
            boundary: parse_boundary(&self.boundary)?,
            seed,
        })
    }
}

/// Effective solver settings after merging all three layers.
#[derive(Debug, Serialize)]
pub struct SolveConfig {
    pub seed: u64,
    pub jobs: usize,
    pub scale: usize,
    pub sigma: f64,
    pub support: usize,
    pub ridge: f64,
    pub max_outer: usize,
    pub e_steps: usize,
    pub m_cg_iters: usize,
    pub tol_rel: f64,
    pub n_mc: usize,
    pub components: usize,
    pub rate: f64,
    pub boundary: String,
}

impl SolveConfig {
    pub fn merge(
        args: &SolveArgs,
        file: &FileConfig,
        seed: u64,
        jobs: usize,
    ) -> Result<Self, CliError> {
        let d = GemConfig::default();
        let f = &file.solve;
        let boundary = args
            .boundary
            .clone()
            .or_else(|| f.boundary.clone())
            .unwrap_or_else(|| boundary_name(d.degradation.boundary).into());
        parse_boundary(&boundary)?;
        Ok(Self {
            seed,
            jobs,
            scale: args.scale.or(f.scale).unwrap_or(d.degradation.scale),
            sigma: args.sigma.or(f.sigma).unwrap_or(d.degradation.sigma_n),
            support: args.support.or(f.support).unwrap_or(d.degradation.support),
            ridge: args.ridge.or(f.ridge).unwrap_or(d.ridge),
            max_outer: args.max_outer.or(f.max_outer).unwrap_or(d.max_outer),
            e_steps: args.e_steps.or(f.e_steps).unwrap_or(d.e_steps),
            m_cg_iters: args.m_cg_iters.or(f.m_cg_iters).unwrap_or(d.m_cg_iters),
            tol_rel: args.tol_rel.or(f.tol_rel).unwrap_or(d.tol_rel),
            n_mc: args.n_mc.or(f.n_mc).unwrap_or(d.n_mc),
            components: args.components.or(f.components).unwrap_or(1),
            rate: args.rate.or(f.rate).unwrap_or(0.5),
            boundary,
        })
    }

    /// Solver configuration for one image, seeded with a derived stream.
    pub fn gem(&self, seed: u64) -> Result<GemConfig, CliError> {
        let rates = blindsr::kernel::ExponentialParams::uniform(self.rate, self.components)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        Ok(GemConfig {
            max_outer: self.max_outer,
            e_steps: self.e_steps,
            m_cg_iters: self.m_cg_iters,
            tol_rel: self.tol_rel,
            ridge: self.ridge,
            n_mc: self.n_mc,
            seed,
            lambda_init: rates.clone(),
            lambda_prior: rates,
            degradation: DegradationConfig {
                scale: self.scale,
                sigma_n: self.sigma,
                support: self.support,
                boundary: parse_boundary(&self.boundary)?,
                seed,
            },
        })
    }
}

/// Effective training settings after merging all three layers.
#[derive(Debug, Serialize)]
pub struct TrainCliConfig {
    pub seed: u64,
    pub alpha_g: f64,
    pub alpha_r: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub n_mc: usize,
    pub fd_step: f64,
    pub components: usize,
    pub restore_iters: usize,
    pub support: usize,
    pub scale: usize,
    pub sigma: f64,
    pub rate: f64,
    pub boundary: String,
}

impl TrainCliConfig {
    pub fn merge(args: &TrainArgs, file: &FileConfig, seed: u64) -> Result<Self, CliError> {
        let d = blindsr::estimator::TrainConfig::default();
        let deg = DegradationConfig::default();
        let f = &file.train;
        let boundary = args
            .boundary
            .clone()
            .or_else(|| f.boundary.clone())
            .unwrap_or_else(|| boundary_name(deg.boundary).into());
        parse_boundary(&boundary)?;
        Ok(Self {
            seed,
            alpha_g: args.alpha_g.or(f.alpha_g).unwrap_or(1.0),
            alpha_r: args.alpha_r.or(f.alpha_r).unwrap_or(1.0),
            epochs: args.epochs.or(f.epochs).unwrap_or(d.epochs),
            batch_size: args.batch_size.or(f.batch_size).unwrap_or(d.batch_size),
            learning_rate: args
                .learning_rate
                .or(f.learning_rate)
                .unwrap_or(d.learning_rate),
            n_mc: args.n_mc.or(f.n_mc).unwrap_or(d.n_mc),
            fd_step: args.fd_step.or(f.fd_step).unwrap_or(d.fd_step),
            components: args.components.or(f.components).unwrap_or(1),
            restore_iters: args.restore_iters.or(f.restore_iters).unwrap_or(8),
            support: args.support.or(f.support).unwrap_or(deg.support),
            scale: args.scale.or(f.scale).unwrap_or(deg.scale),
            sigma: args.sigma.or(f.sigma).unwrap_or(deg.sigma_n),
            rate: args.rate.or(f.rate).unwrap_or(0.5),
            boundary,
        })
    }

    pub fn degradation(&self, seed: u64) -> Result<DegradationConfig, CliError> {
        Ok(DegradationConfig {
            scale: self.scale,
            sigma_n: self.sigma,
            support: self.support,
            boundary: parse_boundary(&self.boundary)?,
            seed,
        })
    }
}

/// Serializes an effective config for `--print-config`.
pub fn print_effective<T: Serialize>(cfg: &T) -> Result<(), CliError> {
    let text = toml::to_string(cfg)
        .map_err(|e| CliError::Runtime(format!("cannot serialize config: {e}")))?;
    print!("{text}");
    Ok(())
}
