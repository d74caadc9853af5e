//! Run configuration: a versioned JSON document. Relative paths are resolved
//! against the directory holding the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serialtrack_core::synth::{DeformationSpec, SynthImageSpec};
use serialtrack_core::tracker::TrackingConfig;

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Synth,
    Detect,
    Track,
    Benchmark,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Detect => "detect",
            Command::Track => "track",
            Command::Benchmark => "benchmark",
        }
    }
}

/// Frames to synthesize: a reference frame plus one frame per deformation
/// (each a total deformation of the reference particles).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub image: SynthImageSpec,
    #[serde(default)]
    pub deformations: Vec<DeformationSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub preset: String,
    /// Seeding densities to run; the preset's sweep when absent.
    #[serde(default)]
    pub seeding_densities: Option<Vec<f64>>,
    /// Truncates the sequence to its first `max_steps` pairs.
    #[serde(default)]
    pub max_steps: Option<usize>,
    #[serde(default)]
    pub noise_pct: Option<f64>,
    #[serde(default)]
    pub write_images: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: u32,
    pub command: Command,
    /// Image headers (`.json`) or particle tables (`.csv`), one per frame.
    #[serde(default)]
    pub inputs: Vec<PathBuf>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub max_parallel: Option<usize>,
    /// Replaces the preset's tracking parameters for benchmarks.
    #[serde(default)]
    pub tracking: Option<TrackingConfig>,
    #[serde(default)]
    pub synth: Option<SynthConfig>,
    #[serde(default)]
    pub benchmark: Option<BenchmarkConfig>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::ConfigInvalid(e.to_string()))
    }

    /// Parses `path` and rebases relative paths onto its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|_| CliError::InputMissing(path.to_path_buf()))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.inputs = cfg.inputs.iter().map(|p| base.join(p)).collect();
        cfg.output = cfg.output.map(|p| base.join(p));
        Ok(cfg)
    }

    pub fn tracking(&self) -> TrackingConfig {
        self.tracking.clone().unwrap_or_default()
    }

    /// Checks everything that can be checked before any artifact is written.
    pub fn validate(&self) -> Result<(), CliError> {
        let invalid = |m: String| Err(CliError::ConfigInvalid(m));
        if self.schema != SCHEMA_VERSION {
            return invalid(format!("unsupported schema {} (expected {SCHEMA_VERSION})", self.schema));
        }
        if self.max_parallel == Some(0) {
            return invalid("max_parallel must be at least 1".into());
        }
        if let Some(t) = &self.tracking {
            t.validate().map_err(|e| CliError::ConfigInvalid(e.to_string()))?;
        }
        match self.command {
            Command::Synth => {
                let Some(s) = &self.synth else { return invalid("synth command needs a `synth` section".into()) };
                s.image.validate().map_err(|e| CliError::ConfigInvalid(e.to_string()))?;
                let dim = s.image.dim().map_err(|e| CliError::ConfigInvalid(e.to_string()))?;
                for d in &s.deformations {
                    d.validate(dim).map_err(|e| CliError::ConfigInvalid(e.to_string()))?;
                }
            }
            Command::Detect | Command::Track => {
                let need = if self.command == Command::Track { 2 } else { 1 };
                if self.inputs.len() < need {
                    return invalid(format!("{} needs at least {need} input(s)", self.command.name()));
                }
                for p in &self.inputs {
                    if !p.is_file() {
                        return Err(CliError::InputMissing(p.clone()));
                    }
                    let ext = p.extension().and_then(|e| e.to_str()).unwrap_or("");
                    let ok = match self.command {
                        Command::Detect => ext == "json",
                        _ => ext == "json" || ext == "csv",
                    };
                    if !ok {
                        return invalid(format!("unsupported input {}", p.display()));
                    }
                }
            }
            Command::Benchmark => {
                let Some(b) = &self.benchmark else { return invalid("benchmark command needs a `benchmark` section".into()) };
                if crate::presets::preset(&b.preset).is_none() {
                    return invalid(format!("unknown preset {:?}", b.preset));
                }
                if let Some(sds) = &b.seeding_densities {
                    if sds.is_empty() || sds.iter().any(|s| !(*s > 0.0)) {
                        return invalid("seeding densities must be positive".into());
                    }
                }
                if b.noise_pct.is_some_and(|n| !(n >= 0.0)) {
                    return invalid("noise fraction must be nonnegative".into());
                }
                if b.max_steps == Some(0) {
                    return invalid("max_steps must be at least 1".into());
                }
            }
        }
        Ok(())
    }
}
