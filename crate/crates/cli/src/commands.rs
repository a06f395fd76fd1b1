//! The five subcommands: gen-mixture, train, sample, eval, spectrum.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gmdiffuse_core::diagnostics::{
    hermite_coefficient_spectrum, sample_quality_metrics, score_l2_error, spectrum_csv,
    tv_upper_bound, SampleQualityMetrics, ScoreErrorReport,
};
use gmdiffuse_core::pipeline::{MemorySource, MixtureStream};
use gmdiffuse_core::rng::derive_seed;
use gmdiffuse_core::sampler::generate;
use gmdiffuse_core::{MixtureSpec, TrainedStack};
use nalgebra::DVector;
use serde::Serialize;

use crate::config::{resolve_path, RunConfig};
use crate::io::{read_samples_csv, sha256_dir, sha256_file, write_json, write_samples_csv};

const STREAM_TAG: u64 = 0x11;
const GENERATE_TAG: u64 = 0x22;
const REFERENCE_TAG: u64 = 0x33;
const METRIC_TAG: u64 = 0x44;
const SCORE_MC_TAG: u64 = 0x55;
const GEN_MIXTURE_TAG: u64 = 0x66;

pub struct RunContext {
    pub config: RunConfig,
    pub config_dir: PathBuf,
    pub out: PathBuf,
    pub inputs: BTreeMap<String, String>,
}

impl RunContext {
    fn record_file(&mut self, path: &Path) -> Result<PathBuf> {
        let resolved = resolve_path(&self.config_dir, path);
        self.inputs
            .insert(path.to_string_lossy().into_owned(), sha256_file(&resolved)?);
        Ok(resolved)
    }

    fn record_dir(&mut self, path: &Path) -> Result<PathBuf> {
        let resolved = resolve_path(&self.config_dir, path);
        for (rel, hash) in sha256_dir(&resolved)? {
            self.inputs
                .insert(format!("{}/{rel}", path.to_string_lossy()), hash);
        }
        Ok(resolved)
    }

    fn load_mixture(&mut self) -> Result<MixtureSpec> {
        if let Some(m) = &self.config.mixture {
            if let Some(p) = m.path.clone() {
                self.record_file(&p)?;
            }
        }
        self.config.load_mixture(&self.config_dir)
    }
}

pub fn gen_mixture(ctx: &mut RunContext) -> Result<()> {
    let spec = ctx.load_mixture()?;
    let Some(section) = ctx.config.gen_mixture.clone() else {
        bail!("gen-mixture needs a [gen_mixture] section");
    };
    let seed = derive_seed(ctx.config.seed, GEN_MIXTURE_TAG);
    let samples = spec.sample(section.count, seed);
    write_samples_csv(&ctx.out.join("samples.csv"), &samples, spec.dim())?;
    log::info!(
        "wrote {} samples of dimension {}",
        samples.len(),
        spec.dim()
    );
    Ok(())
}

pub fn train(ctx: &mut RunContext) -> Result<()> {
    let spec = ctx.load_mixture()?;
    let train_cfg = ctx.config.train_config(&spec)?;
    let section = ctx.config.train.clone().expect("train section checked");
    let stack = match &section.samples_csv {
        Some(csv_path) => {
            let resolved = ctx.record_file(csv_path)?;
            let points = read_samples_csv(&resolved)?;
            if points.is_empty() {
                bail!("{}: no samples", resolved.display());
            }
            let mut source = MemorySource::new(points);
            gmdiffuse_core::train(&mut source, &train_cfg)?
        }
        None => {
            let mut source =
                MixtureStream::new(spec.clone(), derive_seed(ctx.config.seed, STREAM_TAG));
            gmdiffuse_core::train(&mut source, &train_cfg)?
        }
    };
    let stack_dir = ctx.out.join("stack");
    stack.save_dir(&stack_dir)?;
    log::info!(
        "trained {} levels into {}",
        stack.schedule().len(),
        stack_dir.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct SampleMeta<'a> {
    schedule: &'a gmdiffuse_core::NoiseSchedule,
    seed: u64,
    count: usize,
    model_hashes: BTreeMap<String, String>,
}

pub fn sample(ctx: &mut RunContext) -> Result<()> {
    let Some(section) = ctx.config.sample.clone() else {
        bail!("sample needs a [sample] section");
    };
    let models_dir = resolve_path(&ctx.config_dir, &section.models);
    if !models_dir.is_dir() {
        bail!("model directory {} does not exist", models_dir.display());
    }
    ctx.record_dir(&section.models)?;
    let stack = TrainedStack::load_dir(&models_dir)
        .with_context(|| format!("loading trained stack from {}", models_dir.display()))?;
    let seed = derive_seed(ctx.config.seed, GENERATE_TAG);
    let samples = generate(&stack, stack.schedule(), section.count, seed)?;
    write_samples_csv(
        &ctx.out.join("samples.csv"),
        &samples,
        stack.schedule().dim(),
    )?;
    let meta = SampleMeta {
        schedule: stack.schedule(),
        seed,
        count: section.count,
        model_hashes: sha256_dir(&models_dir)?,
    };
    write_json(&ctx.out.join("samples.meta.json"), &meta)?;
    Ok(())
}

#[derive(Serialize)]
struct EvalMetrics {
    sample_quality: SampleQualityMetrics,
    /// TV(P_0, P_{t_1}) upper bound when a trained stack is given.
    #[serde(skip_serializing_if = "Option::is_none")]
    tv_bound_at_t_start: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    score_errors: Vec<ScoreErrorReport>,
}

pub fn eval(ctx: &mut RunContext) -> Result<()> {
    let spec = ctx.load_mixture()?;
    let Some(section) = ctx.config.eval.clone() else {
        bail!("eval needs an [eval] section");
    };
    let generated_path = ctx.record_file(&section.generated)?;
    let generated = read_samples_csv(&generated_path)?;
    if generated.is_empty() {
        bail!("{}: no generated samples", generated_path.display());
    }
    let reference = spec.sample(
        section.reference_count,
        derive_seed(ctx.config.seed, REFERENCE_TAG),
    );
    let means: Vec<DVector<f64>> = spec.means();
    let sample_quality = sample_quality_metrics(
        &generated,
        &reference,
        &means,
        section.directions,
        derive_seed(ctx.config.seed, METRIC_TAG),
    );

    let mut tv_bound_at_t_start = None;
    let mut score_errors = Vec::new();
    if let Some(models) = &section.models {
        let models_dir = ctx.record_dir(models)?;
        let stack = TrainedStack::load_dir(&models_dir)
            .with_context(|| format!("loading trained stack from {}", models_dir.display()))?;
        let times = stack.schedule().times();
        tv_bound_at_t_start = Some(tv_upper_bound(times[0], spec.sigma0_sq(), spec.dim()));
        // sample the stack at the bottom, middle, and top of the schedule
        let picks = [0, times.len() / 2, times.len() - 1];
        for (i, &level) in picks.iter().enumerate() {
            let t = times[level];
            let model = &stack.models()[level];
            score_errors.push(score_l2_error(
                |y| model.score(y),
                &spec,
                t,
                section.mc_count,
                derive_seed(ctx.config.seed, SCORE_MC_TAG + i as u64),
            ));
        }
    }

    write_json(
        &ctx.out.join("metrics.json"),
        &EvalMetrics {
            sample_quality,
            tv_bound_at_t_start,
            score_errors,
        },
    )?;
    Ok(())
}

pub fn spectrum(ctx: &mut RunContext) -> Result<()> {
    let spec = ctx.load_mixture()?;
    let Some(section) = ctx.config.spectrum.clone() else {
        bail!("spectrum needs a [spectrum] section");
    };
    let center = if section.center.is_empty() {
        DVector::zeros(spec.dim())
    } else {
        if section.center.len() != spec.dim() {
            bail!(
                "spectrum center has dimension {}, mixture has {}",
                section.center.len(),
                spec.dim()
            );
        }
        DVector::from_vec(section.center.clone())
    };
    let report = hermite_coefficient_spectrum(&spec, section.sigma_sq, &center, section.d_max)?;
    write_json(&ctx.out.join("spectrum.json"), &report)?;
    std::fs::write(ctx.out.join("spectrum.csv"), spectrum_csv(&report))?;
    Ok(())
}
