//! Discrete Gaussian mixtures with exact density, score, and posterior-mean
//! oracles.
//!
//! The data distribution is `P_0 = Q_0 * N(0, sigma0^2 I_n)` where the mixing
//! measure `Q_0` is a list of weighted point masses. At noise time `t` the
//! observed distribution is `P_t = Q_0 * N(0, (t + sigma0^2) I_n)`, so every
//! oracle reduces to softmax averages over the component means with total
//! variance `sigma^2 = t + sigma0^2`. Tweedie's identity ties them together:
//! `f_{sigma^2}(y) = E[mu | Y=y] = y + sigma^2 * grad log p_t(y)`.

use nalgebra::DVector;
use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{standard_normal_vector, stream_rng};
use crate::warm_starts::greedy_cover;

const WEIGHT_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MixtureError {
    #[error("mixture needs at least one component")]
    NoComponents,
    #[error("ambient dimension must be at least 1")]
    ZeroDimension,
    #[error("sigma0_sq must be positive, got {0}")]
    NonPositiveSigma(f64),
    #[error("component {index} has mean of length {got}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        got: usize,
        expected: usize,
    },
    #[error("component {index} has a non-finite mean coordinate")]
    NonFiniteMean { index: usize },
    #[error("component {index} has weight {weight}, expected a value in (0, 1]")]
    BadWeight { index: usize, weight: f64 },
    #[error("weights sum to {0}, expected 1 within 1e-12")]
    WeightSum(f64),
    #[error("locality: R0 must be >= 1, got {0}")]
    SmallBallRadius(f64),
    #[error("locality: alpha_min must lie in (0, 1], got {0}")]
    BadAlphaMin(f64),
    #[error("locality: support radius D must be positive, got {0}")]
    BadSupportRadius(f64),
    #[error("locality: ball count k must be at least 1")]
    ZeroBallCount,
}

/// Parameters of the k-locality assumption on the mixing measure: support
/// coverable by `k` balls of radius `R0`, each mean carrying at least
/// `alpha_min` nearby mass, all inside the ball of radius `D`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KLocalityParams {
    #[serde(rename = "R0")]
    pub r0: f64,
    pub alpha_min: f64,
    #[serde(rename = "D")]
    pub support_radius: f64,
    #[serde(rename = "k")]
    pub ball_count: usize,
}

impl KLocalityParams {
    pub fn validate(&self) -> Result<(), MixtureError> {
        if self.r0 < 1.0 {
            return Err(MixtureError::SmallBallRadius(self.r0));
        }
        if self.alpha_min.is_nan() || self.alpha_min <= 0.0 || self.alpha_min > 1.0 {
            return Err(MixtureError::BadAlphaMin(self.alpha_min));
        }
        if self.support_radius.is_nan() || self.support_radius <= 0.0 {
            return Err(MixtureError::BadSupportRadius(self.support_radius));
        }
        if self.ball_count == 0 {
            return Err(MixtureError::ZeroBallCount);
        }
        if self.alpha_min * self.ball_count as f64 > 1.0 + WEIGHT_SUM_TOL {
            // k balls each holding >= alpha_min mass cannot exceed total mass;
            // kept soft so such specs can still be run through the validator.
            log::warn!(
                "alpha_min = {} exceeds 1/k = {}; no mixture can satisfy k-locality with these parameters",
                self.alpha_min,
                1.0 / self.ball_count as f64
            );
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureComponent {
    pub mean: DVector<f64>,
    pub weight: f64,
}

/// The data distribution `Q_0 * N(0, sigma0^2 I_n)` for a discrete `Q_0`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    dim: usize,
    sigma0_sq: f64,
    components: Vec<MixtureComponent>,
    locality: KLocalityParams,
    log_weights: Vec<f64>,
}

/// One violated clause of the k-locality assumption. Violations are data,
/// not errors: specs that break the assumption are still usable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum KLocalityViolation {
    /// Mean `component` has less than `alpha_min` total weight within `R0`.
    MassDeficit { component: usize, mass: f64 },
    /// The means are not coverable by `k` balls of radius `R0` (greedy check).
    NotCoverable { covered: usize, total: usize },
    /// Mean `component` lies outside the ball of radius `D`.
    OutsideSupport { component: usize, norm: f64 },
}

impl MixtureSpec {
    pub fn new(
        dim: usize,
        sigma0_sq: f64,
        components: Vec<MixtureComponent>,
        locality: KLocalityParams,
    ) -> Result<Self, MixtureError> {
        if dim == 0 {
            return Err(MixtureError::ZeroDimension);
        }
        if !sigma0_sq.is_finite() || sigma0_sq <= 0.0 {
            return Err(MixtureError::NonPositiveSigma(sigma0_sq));
        }
        if components.is_empty() {
            return Err(MixtureError::NoComponents);
        }
        for (index, c) in components.iter().enumerate() {
            if c.mean.len() != dim {
                return Err(MixtureError::DimensionMismatch {
                    index,
                    got: c.mean.len(),
                    expected: dim,
                });
            }
            if !c.mean.iter().all(|x| x.is_finite()) {
                return Err(MixtureError::NonFiniteMean { index });
            }
            if !(c.weight > 0.0 && c.weight <= 1.0) {
                return Err(MixtureError::BadWeight {
                    index,
                    weight: c.weight,
                });
            }
        }
        let sum: f64 = components.iter().map(|c| c.weight).sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(MixtureError::WeightSum(sum));
        }
        locality.validate()?;
        let log_weights = components.iter().map(|c| c.weight.ln()).collect();
        Ok(MixtureSpec {
            dim,
            sigma0_sq,
            components,
            locality,
            log_weights,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sigma0_sq(&self) -> f64 {
        self.sigma0_sq
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    pub fn locality(&self) -> &KLocalityParams {
        &self.locality
    }

    pub fn means(&self) -> Vec<DVector<f64>> {
        self.components.iter().map(|c| c.mean.clone()).collect()
    }

    /// `E ||x||^2` under `P_0`: second moment of the means plus `n sigma0^2`.
    pub fn second_moment(&self) -> f64 {
        let mean_part: f64 = self
            .components
            .iter()
            .map(|c| c.weight * c.mean.norm_squared())
            .sum();
        mean_part + self.dim as f64 * self.sigma0_sq
    }

    /// Check the three k-locality clauses; the report is empty iff all hold.
    pub fn validate_k_locality(&self) -> Vec<KLocalityViolation> {
        let mut report = Vec::new();
        let p = &self.locality;
        // (a) each mean has >= alpha_min total weight within R0 of it
        for (j, c) in self.components.iter().enumerate() {
            let mass: f64 = self
                .components
                .iter()
                .filter(|o| (&o.mean - &c.mean).norm() <= p.r0)
                .map(|o| o.weight)
                .sum();
            if mass + WEIGHT_SUM_TOL < p.alpha_min {
                report.push(KLocalityViolation::MassDeficit { component: j, mass });
            }
        }
        // (b) means coverable by k balls of radius R0, checked greedily
        let means = self.means();
        let centers = greedy_cover(&means, p.r0, p.ball_count);
        let covered = means
            .iter()
            .filter(|m| centers.iter().any(|c| (*m - c).norm() <= p.r0))
            .count();
        if covered < means.len() {
            report.push(KLocalityViolation::NotCoverable {
                covered,
                total: means.len(),
            });
        }
        // (c) all means inside B_D(0)
        for (j, c) in self.components.iter().enumerate() {
            let norm = c.mean.norm();
            if norm > p.support_radius + WEIGHT_SUM_TOL {
                report.push(KLocalityViolation::OutsideSupport { component: j, norm });
            }
        }
        report
    }

    /// Draw `count` samples `mu + sigma0 * xi` from `P_0`.
    pub fn sample(&self, count: usize, seed: u64) -> Vec<DVector<f64>> {
        self.sample_noised(0.0, count, seed)
    }

    /// Draw from `P_0` continuing an existing generator (stream use).
    pub fn sample_with(&self, count: usize, rng: &mut impl Rng) -> Vec<DVector<f64>> {
        self.sample_noised_with(0.0, count, rng)
    }

    /// Draw `count` samples from `P_t = Q_0 * N(0, (t + sigma0^2) I_n)`.
    pub fn sample_noised(&self, t: f64, count: usize, seed: u64) -> Vec<DVector<f64>> {
        self.sample_noised_with(t, count, &mut stream_rng(seed, 0))
    }

    pub fn sample_noised_with(
        &self,
        t: f64,
        count: usize,
        rng: &mut impl Rng,
    ) -> Vec<DVector<f64>> {
        assert!(t >= 0.0, "noise time must be nonnegative");
        let sigma = (t + self.sigma0_sq).sqrt();
        let weights = WeightedIndex::new(self.components.iter().map(|c| c.weight))
            .expect("weights validated at construction");
        (0..count)
            .map(|_| {
                let j = weights.sample(rng);
                &self.components[j].mean + standard_normal_vector(self.dim, rng) * sigma
            })
            .collect()
    }

    /// Posterior softmax weights of the components given `Y = y` at total
    /// noise variance `sigma_sq`, computed with log-sum-exp stabilization.
    pub fn posterior_weights(&self, y: &DVector<f64>, sigma_sq: f64) -> Vec<f64> {
        assert!(sigma_sq > 0.0, "sigma_sq must be positive");
        let logits: Vec<f64> = self
            .components
            .iter()
            .zip(&self.log_weights)
            .map(|(c, lw)| lw + (y.dot(&c.mean) - 0.5 * c.mean.norm_squared()) / sigma_sq)
            .collect();
        softmax(&logits)
    }

    /// `f_{sigma^2}(y) = E[mu | Y=y]`, the Tweedie posterior mean.
    pub fn posterior_mean(&self, y: &DVector<f64>, sigma_sq: f64) -> DVector<f64> {
        let w = self.posterior_weights(y, sigma_sq);
        let mut out = DVector::zeros(self.dim);
        for (wj, c) in w.iter().zip(&self.components) {
            out.axpy(*wj, &c.mean, 1.0);
        }
        out
    }

    /// Exact score `grad log p_t(y)` with `sigma^2 = t + sigma0^2`.
    pub fn exact_score(&self, y: &DVector<f64>, t: f64) -> DVector<f64> {
        assert!(t >= 0.0, "noise time must be nonnegative");
        let sigma_sq = t + self.sigma0_sq;
        (self.posterior_mean(y, sigma_sq) - y) / sigma_sq
    }

    /// `log p_t(y)`: log-sum-exp of component Gaussian log densities with
    /// variance `t + sigma0^2`.
    pub fn log_density(&self, y: &DVector<f64>, t: f64) -> f64 {
        assert!(t >= 0.0, "noise time must be nonnegative");
        let sigma_sq = t + self.sigma0_sq;
        let norm_const = -0.5 * self.dim as f64 * (2.0 * std::f64::consts::PI * sigma_sq).ln();
        let logits: Vec<f64> = self
            .components
            .iter()
            .zip(&self.log_weights)
            .map(|(c, lw)| lw - 0.5 * (y - &c.mean).norm_squared() / sigma_sq)
            .collect();
        norm_const + log_sum_exp(&logits)
    }
}

/// Posterior mean of a bare discrete measure: atoms with log-weights, noise
/// variance `sigma_sq`. This is the shared kernel behind both score forms
/// (conditioning on the mean and conditioning on the clean sample).
pub fn discrete_posterior_mean(
    atoms: &[DVector<f64>],
    log_weights: &[f64],
    y: &DVector<f64>,
    sigma_sq: f64,
) -> DVector<f64> {
    assert_eq!(atoms.len(), log_weights.len());
    assert!(!atoms.is_empty(), "discrete measure needs atoms");
    let logits: Vec<f64> = atoms
        .iter()
        .zip(log_weights)
        .map(|(a, lw)| lw + (y.dot(a) - 0.5 * a.norm_squared()) / sigma_sq)
        .collect();
    let w = softmax(&logits);
    let mut out = DVector::zeros(y.len());
    for (wj, a) in w.iter().zip(atoms) {
        out.axpy(*wj, a, 1.0);
    }
    out
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln()
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = w.iter().sum();
    for v in &mut w {
        *v /= z;
    }
    w
}

// --- serialization -------------------------------------------------------
// JSON shape: {n, sigma0_sq, components: [{mean: [...], weight}], locality}

#[derive(Serialize, Deserialize)]
struct RawComponent {
    mean: Vec<f64>,
    weight: f64,
}

#[derive(Serialize, Deserialize)]
struct RawMixtureSpec {
    n: usize,
    sigma0_sq: f64,
    components: Vec<RawComponent>,
    locality: KLocalityParams,
}

impl Serialize for MixtureSpec {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        RawMixtureSpec {
            n: self.dim,
            sigma0_sq: self.sigma0_sq,
            components: self
                .components
                .iter()
                .map(|c| RawComponent {
                    mean: c.mean.iter().cloned().collect(),
                    weight: c.weight,
                })
                .collect(),
            locality: self.locality.clone(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for MixtureSpec {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = RawMixtureSpec::deserialize(deserializer)?;
        MixtureSpec::new(
            raw.n,
            raw.sigma0_sq,
            raw.components
                .into_iter()
                .map(|c| MixtureComponent {
                    mean: DVector::from_vec(c.mean),
                    weight: c.weight,
                })
                .collect(),
            raw.locality,
        )
        .map_err(serde::de::Error::custom)
    }
}
