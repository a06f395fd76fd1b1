//! Run configuration: a strict TOML or JSON file plus flag overrides.
//!
//! Unknown keys are rejected everywhere so that a typo like `sgima0` fails
//! loudly instead of silently falling back to a default. The fully resolved
//! config is echoed into the output directory of every run.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gmdiffuse_core::hermite::DEFAULT_BASIS_CAP;
use gmdiffuse_core::warm_starts::WarmStartConstants;
use gmdiffuse_core::{MixtureSpec, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Global seed; every random choice derives from it.
    pub seed: u64,
    /// Worker-thread cap; defaults to the number of cores.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixture: Option<MixtureRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample: Option<SampleSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectrum: Option<SpectrumSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gen_mixture: Option<GenMixtureSection>,
}

/// Mixture specification: a path to a JSON file or an inline spec.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureRef {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inline: Option<MixtureSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub eps: f64,
    pub delta: f64,
    #[serde(default = "default_degree")]
    pub degree: usize,
    pub samples_per_level: usize,
    #[serde(default = "default_warm_start_samples")]
    pub warm_start_samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm_bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m2: Option<f64>,
    #[serde(default = "default_c_radius")]
    pub c_radius: f64,
    #[serde(default = "default_c_rounds")]
    pub c_rounds: f64,
    #[serde(default = "default_c_samples")]
    pub c_samples: f64,
    #[serde(default = "default_basis_cap")]
    pub basis_cap: usize,
    /// Train from a CSV of clean samples instead of sampling the mixture.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSection {
    pub count: usize,
    /// Directory produced by `train`.
    pub models: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// CSV of generated samples to evaluate.
    pub generated: PathBuf,
    /// Trained stack; when present, per-level score errors are reported.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub models: Option<PathBuf>,
    #[serde(default = "default_reference_count")]
    pub reference_count: usize,
    #[serde(default = "default_mc_count")]
    pub mc_count: usize,
    #[serde(default = "default_directions")]
    pub directions: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumSection {
    pub sigma_sq: f64,
    pub d_max: usize,
    #[serde(default)]
    pub center: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenMixtureSection {
    pub count: usize,
}

fn default_degree() -> usize {
    4
}
fn default_warm_start_samples() -> usize {
    2000
}
fn default_c_radius() -> f64 {
    4.0
}
fn default_c_rounds() -> f64 {
    4.0
}
fn default_c_samples() -> f64 {
    1.0
}
fn default_basis_cap() -> usize {
    DEFAULT_BASIS_CAP
}
fn default_reference_count() -> usize {
    10_000
}
fn default_mc_count() -> usize {
    2000
}
fn default_directions() -> usize {
    64
}

impl RunConfig {
    /// Parse a TOML (default) or JSON (by extension) config file.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let is_json = path.extension().is_some_and(|e| e == "json");
        let cfg: RunConfig = if is_json {
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        } else {
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        };
        Ok(cfg)
    }

    /// Resolve the mixture spec, loading from disk when referenced by path.
    pub fn load_mixture(&self, config_dir: &Path) -> Result<MixtureSpec> {
        let Some(mixture) = &self.mixture else {
            bail!("this command needs a [mixture] section");
        };
        match (&mixture.path, &mixture.inline) {
            (Some(path), None) => {
                let resolved = resolve_path(config_dir, path);
                let text = std::fs::read_to_string(&resolved)
                    .with_context(|| format!("reading mixture {}", resolved.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing mixture {}", resolved.display()))
            }
            (None, Some(spec)) => Ok(spec.clone()),
            (Some(_), Some(_)) => bail!("mixture: give either path or inline, not both"),
            (None, None) => bail!("mixture: give either path or inline"),
        }
    }

    /// Build a [`TrainConfig`] from the train section plus the mixture's
    /// base noise and locality parameters.
    pub fn train_config(&self, spec: &MixtureSpec) -> Result<TrainConfig> {
        let Some(section) = &self.train else {
            bail!("this command needs a [train] section");
        };
        Ok(TrainConfig {
            eps: section.eps,
            delta: section.delta,
            degree: section.degree,
            samples_per_level: section.samples_per_level,
            warm_start_samples: section.warm_start_samples,
            warm_start: WarmStartConstants {
                radius_factor: section.c_radius,
                round_factor: section.c_rounds,
                sample_factor: section.c_samples,
            },
            seed: self.seed,
            norm_bound: section.norm_bound,
            m2: section.m2,
            basis_cap: section.basis_cap,
            sigma0_sq: spec.sigma0_sq(),
            locality: spec.locality().clone(),
        })
    }
}

/// Interpret relative paths relative to the config file's directory.
pub fn resolve_path(config_dir: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        config_dir.join(path)
    }
}
