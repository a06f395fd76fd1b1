//! Learning-phase orchestration: iterate levels from the largest noise time
//! down to the smallest, fit a piecewise Hermite score model at every level,
//! and refresh the warm-start centers with fresh samples each time the
//! noise time has halved.
//!
//! Sample-stream discipline matters for the statistical contract: the
//! regression batch of a level is drawn before its warm-start batch, the
//! two never overlap, and all counts are recorded in the audit log.

use std::collections::HashSet;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use nalgebra::DVector;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hermite::{FeatureBasis, HermiteError, DEFAULT_BASIS_CAP};
use crate::mixture::{KLocalityParams, MixtureSpec};
use crate::regression::{
    build_denoising_dataset, fit_piecewise, PiecewiseScoreModel, RegressionError,
};
use crate::rng::{derive_seed, standard_normal_vector, stream_rng};
use crate::sampler::ScoreSource;
use crate::schedule::{build_schedule, NoiseSchedule, ScheduleError};
use crate::warm_starts::{
    covering_radius, refresh_warm_starts, WarmStartConstants, WarmStartError, WarmStartSet,
};

#[derive(Debug, Error)]
pub enum SampleSourceError {
    #[error("sample source exhausted: requested {requested}, only {available} available")]
    Exhausted { requested: usize, available: usize },
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("drawing second-moment estimation batch: {source}")]
    SecondMomentSamples {
        #[source]
        source: SampleSourceError,
    },
    #[error("drawing samples for level {level}: {source}")]
    Samples {
        level: usize,
        #[source]
        source: SampleSourceError,
    },
    #[error("warm-start refresh at level {level}: {source}")]
    WarmStart {
        level: usize,
        #[source]
        source: WarmStartError,
    },
    #[error("regression at level {level}: {source}")]
    Regression {
        level: usize,
        #[source]
        source: RegressionError,
    },
    #[error(transparent)]
    Basis(#[from] HermiteError),
    #[error("persisting trained stack: {0}")]
    Io(#[from] std::io::Error),
    #[error("loading trained stack: {0}")]
    Load(String),
}

/// A stream of clean samples from the data distribution. Training consumes
/// it strictly in order, which is what keeps regression batches and
/// warm-start refresh batches disjoint.
pub trait SampleSource {
    fn dim(&self) -> usize;

    fn draw(&mut self, count: usize) -> Result<Vec<DVector<f64>>, SampleSourceError>;
}

/// Unbounded stream drawing from a mixture spec.
pub struct MixtureStream {
    spec: MixtureSpec,
    rng: ChaCha8Rng,
}

impl MixtureStream {
    pub fn new(spec: MixtureSpec, seed: u64) -> Self {
        MixtureStream {
            spec,
            rng: stream_rng(seed, 0),
        }
    }
}

impl SampleSource for MixtureStream {
    fn dim(&self) -> usize {
        self.spec.dim()
    }

    fn draw(&mut self, count: usize) -> Result<Vec<DVector<f64>>, SampleSourceError> {
        Ok(self.spec.sample_with(count, &mut self.rng))
    }
}

/// Finite in-memory stream (e.g. loaded from a CSV file).
pub struct MemorySource {
    points: Vec<DVector<f64>>,
    cursor: usize,
}

impl MemorySource {
    pub fn new(points: Vec<DVector<f64>>) -> Self {
        assert!(!points.is_empty(), "memory source needs points");
        MemorySource { points, cursor: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.points.len() - self.cursor
    }
}

impl SampleSource for MemorySource {
    fn dim(&self) -> usize {
        self.points[0].len()
    }

    fn draw(&mut self, count: usize) -> Result<Vec<DVector<f64>>, SampleSourceError> {
        if self.cursor + count > self.points.len() {
            return Err(SampleSourceError::Exhausted {
                requested: count,
                available: self.points.len() - self.cursor,
            });
        }
        let out = self.points[self.cursor..self.cursor + count].to_vec();
        self.cursor += count;
        Ok(out)
    }
}

/// Training knobs. `degree` caps the effective polynomial degree; the
/// formula value is computed and logged per level but desk-scale budgets
/// bind first.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub eps: f64,
    pub delta: f64,
    pub degree: usize,
    pub samples_per_level: usize,
    pub warm_start_samples: usize,
    pub warm_start: WarmStartConstants,
    pub seed: u64,
    /// Coefficient norm bound; defaults to the locality support radius `D`.
    pub norm_bound: Option<f64>,
    /// Data second moment; estimated from the first batch when absent.
    pub m2: Option<f64>,
    pub basis_cap: usize,
    pub sigma0_sq: f64,
    pub locality: KLocalityParams,
}

impl TrainConfig {
    pub fn new(eps: f64, delta: f64, sigma0_sq: f64, locality: KLocalityParams) -> Self {
        TrainConfig {
            eps,
            delta,
            degree: 4,
            samples_per_level: 4000,
            warm_start_samples: 2000,
            warm_start: WarmStartConstants::default(),
            seed: 0,
            norm_bound: None,
            m2: None,
            basis_cap: DEFAULT_BASIS_CAP,
            sigma0_sq,
            locality,
        }
    }

    fn validate(&self) -> Result<(), PipelineError> {
        if !(self.eps > 0.0 && self.eps <= 0.5) {
            return Err(PipelineError::BadConfig(format!(
                "eps must lie in (0, 1/2], got {}",
                self.eps
            )));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(PipelineError::BadConfig(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        if self.samples_per_level == 0 {
            return Err(PipelineError::BadConfig(
                "samples_per_level must be at least 1".into(),
            ));
        }
        if self.sigma0_sq.is_nan() || self.sigma0_sq <= 0.0 {
            return Err(PipelineError::BadConfig(format!(
                "sigma0_sq must be positive, got {}",
                self.sigma0_sq
            )));
        }
        self.locality
            .validate()
            .map_err(|e| PipelineError::BadConfig(e.to_string()))?;
        Ok(())
    }
}

/// The paper-style degree formula `(ln(1/eps)^3 + (R0/sigma0)^6) ln(1/eps)^4`
/// with unit constant, rounded up.
pub fn degree_formula(eps: f64, r0: f64, sigma0_sq: f64) -> usize {
    let l = (1.0 / eps).ln();
    let ratio6 = (r0 / sigma0_sq.sqrt()).powi(6);
    ((l.powi(3) + ratio6) * l.powi(4)).ceil().max(0.0) as usize
}

/// Per-level record of what the learning phase did.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LevelAudit {
    /// 1-based level, matching `schedule.times()[level-1]`.
    pub level: usize,
    pub t: f64,
    pub sigma_sq: f64,
    pub cell_count: usize,
    pub per_cell_counts: Vec<usize>,
    pub empirical_loss: f64,
    pub degree_formula: usize,
    pub degree_used: usize,
    pub regression_samples: usize,
    pub refreshed_warm_starts: bool,
    pub warm_start_samples: usize,
}

/// Warm-start set in effect from (1-based) `level` downward until the next
/// refresh.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WarmStartRecord {
    pub level: usize,
    pub set: WarmStartSet,
}

/// Output of the learning phase: the schedule, one score model per level,
/// the warm-start history, and the audit log.
#[derive(Debug)]
pub struct TrainedStack {
    schedule: NoiseSchedule,
    models: Vec<PiecewiseScoreModel>,
    warm_start_history: Vec<WarmStartRecord>,
    audit: Vec<LevelAudit>,
}

impl TrainedStack {
    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    /// Models aligned with `schedule.times()`.
    pub fn models(&self) -> &[PiecewiseScoreModel] {
        &self.models
    }

    pub fn warm_start_history(&self) -> &[WarmStartRecord] {
        &self.warm_start_history
    }

    pub fn audit(&self) -> &[LevelAudit] {
        &self.audit
    }

    /// The center set after the last refresh.
    pub fn final_warm_starts(&self) -> &WarmStartSet {
        &self
            .warm_start_history
            .last()
            .expect("history always has the initial set")
            .set
    }

    fn time_index(&self, time: f64) -> Option<usize> {
        let times = self.schedule.times();
        if let Some(i) = times.iter().position(|&t| t == time) {
            return Some(i);
        }
        times
            .iter()
            .position(|&t| (t - time).abs() <= 1e-12 * t.abs().max(1.0))
    }

    /// Persist as a directory: `schedule.json`, `models/level_<l>.json`,
    /// `warmstarts.json`, `audit.jsonl`.
    pub fn save_dir(&self, dir: &Path) -> Result<(), PipelineError> {
        fs::create_dir_all(dir.join("models"))?;
        fs::write(
            dir.join("schedule.json"),
            serde_json::to_string_pretty(&self.schedule).expect("schedule serializes"),
        )?;
        for (i, model) in self.models.iter().enumerate() {
            fs::write(
                dir.join("models").join(format!("level_{}.json", i + 1)),
                serde_json::to_string(model).expect("model serializes"),
            )?;
        }
        fs::write(
            dir.join("warmstarts.json"),
            serde_json::to_string_pretty(&self.warm_start_history).expect("history serializes"),
        )?;
        let mut audit = fs::File::create(dir.join("audit.jsonl"))?;
        for entry in &self.audit {
            writeln!(
                audit,
                "{}",
                serde_json::to_string(entry).expect("audit entry serializes")
            )?;
        }
        Ok(())
    }

    pub fn load_dir(dir: &Path) -> Result<Self, PipelineError> {
        let schedule: NoiseSchedule =
            serde_json::from_str(&fs::read_to_string(dir.join("schedule.json"))?)
                .map_err(|e| PipelineError::Load(format!("schedule.json: {e}")))?;
        let mut models = Vec::with_capacity(schedule.len());
        for i in 0..schedule.len() {
            let path = dir.join("models").join(format!("level_{}.json", i + 1));
            let model: PiecewiseScoreModel = serde_json::from_str(&fs::read_to_string(&path)?)
                .map_err(|e| PipelineError::Load(format!("{}: {e}", path.display())))?;
            models.push(model);
        }
        let warm_start_history: Vec<WarmStartRecord> =
            serde_json::from_str(&fs::read_to_string(dir.join("warmstarts.json"))?)
                .map_err(|e| PipelineError::Load(format!("warmstarts.json: {e}")))?;
        let mut audit = Vec::new();
        for line in fs::read_to_string(dir.join("audit.jsonl"))?.lines() {
            if line.trim().is_empty() {
                continue;
            }
            audit.push(
                serde_json::from_str(line)
                    .map_err(|e| PipelineError::Load(format!("audit.jsonl: {e}")))?,
            );
        }
        Ok(TrainedStack {
            schedule,
            models,
            warm_start_history,
            audit,
        })
    }
}

impl ScoreSource for TrainedStack {
    fn dim(&self) -> usize {
        self.schedule.dim()
    }

    fn has_time(&self, time: f64) -> bool {
        self.time_index(time).is_some()
    }

    fn score(&self, time: f64, y: &DVector<f64>) -> Option<DVector<f64>> {
        self.time_index(time).map(|i| self.models[i].score(y))
    }
}

/// Levels (0-based indices into `schedule.times()`) at which the noise time
/// has halved since the last refresh, scanning from the terminal time down,
/// measured on `t + 1`.
pub fn halving_refresh_points(schedule: &NoiseSchedule) -> Vec<usize> {
    let times = schedule.times();
    let mut out = Vec::new();
    let mut last = schedule.t_terminal();
    for idx in (0..times.len()).rev() {
        if times[idx] + 1.0 <= (last + 1.0) / 2.0 {
            out.push(idx);
            last = times[idx];
        }
    }
    out
}

/// Run the learning phase: build the schedule, then from the top level down
/// fit a score model per level and refresh warm starts at halving points.
pub fn train(
    source: &mut dyn SampleSource,
    cfg: &TrainConfig,
) -> Result<TrainedStack, PipelineError> {
    cfg.validate()?;
    let n = source.dim();

    let (m2, mut pending_batch) = match cfg.m2 {
        Some(v) => (v, None),
        None => {
            let batch = source
                .draw(cfg.samples_per_level)
                .map_err(|source| PipelineError::SecondMomentSamples { source })?;
            let m2 = batch.iter().map(|x| x.norm_squared()).sum::<f64>() / batch.len() as f64;
            log::info!(
                "estimated second moment M2 = {m2:.6} from {} samples",
                batch.len()
            );
            (m2, Some(batch))
        }
    };

    let schedule = build_schedule(cfg.eps, cfg.sigma0_sq, n, m2)?;
    let times = schedule.times();
    let n_levels = times.len();
    log::info!(
        "schedule: {n_levels} levels, T = {:.4}, t_1 = {:.6}, kappa = {:.6}",
        schedule.t_terminal(),
        schedule.t_start(),
        schedule.kappa()
    );

    let mut refresh_at: HashSet<usize> = halving_refresh_points(&schedule).into_iter().collect();
    // a refresh at the lowest level would produce a center set nothing
    // consumes; skip it and save the samples
    if refresh_at.remove(&0) {
        log::debug!("skipping warm-start refresh at the final level (output unused)");
    }

    let norm_bound = cfg.norm_bound.unwrap_or(cfg.locality.support_radius);
    let d_formula = degree_formula(cfg.eps, cfg.locality.r0, cfg.sigma0_sq);
    let d_used = d_formula.min(cfg.degree);
    log::info!("degree formula gives {d_formula}, using {d_used}");

    let sigma_top = times[n_levels - 1] + cfg.sigma0_sq;
    let mut warm = WarmStartSet::origin(
        n,
        covering_radius(&cfg.locality, sigma_top, &cfg.warm_start),
        sigma_top,
    );
    let mut history = vec![WarmStartRecord {
        level: n_levels,
        set: warm.clone(),
    }];
    let mut models: Vec<Option<PiecewiseScoreModel>> = (0..n_levels).map(|_| None).collect();
    let mut audit = Vec::with_capacity(n_levels);

    for idx in (0..n_levels).rev() {
        let level = idx + 1;
        let t = times[idx];
        let sigma_sq = t + cfg.sigma0_sq;

        let xs = match pending_batch.take() {
            Some(batch) => batch,
            None => source
                .draw(cfg.samples_per_level)
                .map_err(|source| PipelineError::Samples { level, source })?,
        };
        let regression_samples = xs.len();
        let ds = build_denoising_dataset(
            xs,
            t,
            cfg.sigma0_sq,
            &warm,
            derive_seed(cfg.seed, 2 * idx as u64),
        );
        let basis = FeatureBasis::new(n, d_used, sigma_sq, true, cfg.basis_cap)?;
        let model = fit_piecewise(&ds, &warm, &basis, norm_bound)
            .map_err(|source| PipelineError::Regression { level, source })?;
        let empirical_loss = model
            .empirical_loss(&ds)
            .map_err(|source| PipelineError::Regression { level, source })?;

        let mut per_cell_counts = vec![0usize; warm.len()];
        for &cell in ds.cell_of() {
            per_cell_counts[cell] += 1;
        }

        let refreshing = refresh_at.contains(&idx);
        let mut ws_sample_count = 0;
        if refreshing {
            let ws_xs = source
                .draw(cfg.warm_start_samples)
                .map_err(|source| PipelineError::Samples { level, source })?;
            ws_sample_count = ws_xs.len();
            let mut rng = stream_rng(derive_seed(cfg.seed, 2 * idx as u64 + 1), 0);
            let sqrt_t = t.sqrt();
            let ws_ys: Vec<DVector<f64>> = ws_xs
                .iter()
                .map(|x| x + standard_normal_vector(n, &mut rng) * sqrt_t)
                .collect();
            let delta_level = cfg.delta / (2.0 * n_levels as f64);
            warm = refresh_warm_starts(
                |y| model.score(y),
                &ws_ys,
                &cfg.locality,
                sigma_sq,
                delta_level,
                &cfg.warm_start,
            )
            .map_err(|source| PipelineError::WarmStart { level, source })?;
            history.push(WarmStartRecord {
                level: level - 1,
                set: warm.clone(),
            });
            log::debug!(
                "level {level}: refreshed warm starts, {} centers, radius {:.4}",
                warm.len(),
                warm.radius()
            );
        }

        audit.push(LevelAudit {
            level,
            t,
            sigma_sq,
            cell_count: per_cell_counts.len(),
            per_cell_counts,
            empirical_loss,
            degree_formula: d_formula,
            degree_used: d_used,
            regression_samples,
            refreshed_warm_starts: refreshing,
            warm_start_samples: ws_sample_count,
        });
        models[idx] = Some(model);
    }

    Ok(TrainedStack {
        schedule,
        models: models
            .into_iter()
            .map(|m| m.expect("every level fit"))
            .collect(),
        warm_start_history: history,
        audit,
    })
}
