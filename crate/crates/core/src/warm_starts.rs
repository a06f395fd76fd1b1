//! Warm-start center maintenance: Voronoi assignment, score-based denoising,
//! and greedy ball cover.
//!
//! A warm-start set is a list of approximate component centers accurate at
//! the current noise resolution. It is refreshed by denoising samples with
//! the current score estimate (`mu_i = y_i + sigma^2 s(y_i)`, Tweedie) and
//! greedily covering the denoised candidates with balls of radius
//! `R = C (R0 + sigma sqrt(ln(1/alpha_min)))`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mixture::KLocalityParams;

/// Centers closer than this are considered duplicates; keeping them apart
/// avoids degenerate Voronoi cells.
pub const CENTER_DEDUP_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum WarmStartError {
    #[error("score estimate returned a non-finite or mismatched value at sample {index}")]
    ScoreEvaluation { index: usize },
    #[error("warm-start refresh needs at least {required} samples, got {actual}")]
    InsufficientSamples { required: usize, actual: usize },
    #[error("warm-start refresh selected no centers (no candidates)")]
    NoCenters,
}

/// Tunable constants of the refresh procedure. The covering radius factor
/// and round budget factor are unspecified universal constants in the
/// underlying analysis; these defaults are desk-scale choices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WarmStartConstants {
    /// `C` in the covering radius `C (R0 + sigma sqrt(ln(1/alpha_min)))`.
    pub radius_factor: f64,
    /// `C'` in the round budget `ceil(C' k ln(1/alpha_min))`.
    pub round_factor: f64,
    /// `c` in the sample precondition `count >= c ln(1/delta) k / alpha_min`.
    pub sample_factor: f64,
}

impl Default for WarmStartConstants {
    fn default() -> Self {
        WarmStartConstants {
            radius_factor: 4.0,
            round_factor: 4.0,
            sample_factor: 1.0,
        }
    }
}

/// The current center set with its covering radius and the noise variance
/// at which it was produced.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStartSet {
    centers: Vec<DVector<f64>>,
    radius: f64,
    noise_level: f64,
}

impl WarmStartSet {
    pub fn new(centers: Vec<DVector<f64>>, radius: f64, noise_level: f64) -> Self {
        assert!(!centers.is_empty(), "warm-start set needs centers");
        assert!(radius > 0.0, "covering radius must be positive");
        let mut kept: Vec<DVector<f64>> = Vec::with_capacity(centers.len());
        for c in centers {
            if kept.iter().all(|k| (k - &c).norm() > CENTER_DEDUP_TOL) {
                kept.push(c);
            }
        }
        WarmStartSet {
            centers: kept,
            radius,
            noise_level,
        }
    }

    /// The single-center set `{0}` used at the highest noise level.
    pub fn origin(dim: usize, radius: f64, noise_level: f64) -> Self {
        WarmStartSet::new(vec![DVector::zeros(dim)], radius, noise_level)
    }

    pub fn centers(&self) -> &[DVector<f64>] {
        &self.centers
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn noise_level(&self) -> f64 {
        self.noise_level
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.centers[0].len()
    }

    /// Whether every point of `targets` lies within the covering radius of
    /// some center.
    pub fn covers(&self, targets: &[DVector<f64>]) -> bool {
        targets
            .iter()
            .all(|t| self.centers.iter().any(|c| (c - t).norm() <= self.radius))
    }
}

/// Index of the center nearest to `y`; ties break to the lowest index.
pub fn assign_voronoi(centers: &[DVector<f64>], y: &DVector<f64>) -> usize {
    assert!(!centers.is_empty(), "Voronoi assignment needs centers");
    let mut best = 0;
    let mut best_d = (y - &centers[0]).norm_squared();
    for (j, c) in centers.iter().enumerate().skip(1) {
        let d = (y - c).norm_squared();
        if d < best_d {
            best = j;
            best_d = d;
        }
    }
    best
}

/// Denoised candidate means `mu_i = y_i + sigma^2 s(y_i)`, order-preserving.
pub fn denoise_points(
    score: impl Fn(&DVector<f64>) -> DVector<f64>,
    ys: &[DVector<f64>],
    sigma_sq: f64,
) -> Result<Vec<DVector<f64>>, WarmStartError> {
    assert!(sigma_sq > 0.0, "sigma_sq must be positive");
    ys.iter()
        .enumerate()
        .map(|(index, y)| {
            let s = score(y);
            if s.len() != y.len() || !s.iter().all(|v| v.is_finite()) {
                return Err(WarmStartError::ScoreEvaluation { index });
            }
            Ok(y + s * sigma_sq)
        })
        .collect()
}

/// Greedy ball cover: repeatedly select the candidate whose radius-ball
/// covers the most still-uncovered candidates (ties to the lowest index),
/// remove the ball, stop when everything is covered or the round budget is
/// spent. Returns the selected centers in selection order.
pub fn greedy_cover(
    candidates: &[DVector<f64>],
    radius: f64,
    max_rounds: usize,
) -> Vec<DVector<f64>> {
    assert!(radius > 0.0, "covering radius must be positive");
    let m = candidates.len();
    let mut uncovered: Vec<bool> = vec![true; m];
    let mut remaining = m;
    let mut selected = Vec::new();
    let r2 = radius * radius;
    for _ in 0..max_rounds {
        if remaining == 0 {
            break;
        }
        let mut best_idx = None;
        let mut best_count = 0usize;
        for i in 0..m {
            if !uncovered[i] {
                continue;
            }
            let mut count = 0;
            for j in 0..m {
                if uncovered[j] && (&candidates[i] - &candidates[j]).norm_squared() <= r2 {
                    count += 1;
                }
            }
            if count > best_count {
                best_count = count;
                best_idx = Some(i);
            }
        }
        let Some(pick) = best_idx else { break };
        selected.push(candidates[pick].clone());
        for j in 0..m {
            if uncovered[j] && (&candidates[pick] - &candidates[j]).norm_squared() <= r2 {
                uncovered[j] = false;
                remaining -= 1;
            }
        }
    }
    if remaining > 0 {
        log::info!(
            "greedy cover stopped with {remaining} of {m} candidates uncovered after round budget"
        );
    }
    selected
}

/// Covering radius used by the refresh at noise variance `sigma_sq`.
pub fn covering_radius(
    params: &KLocalityParams,
    sigma_sq: f64,
    consts: &WarmStartConstants,
) -> f64 {
    let sigma = sigma_sq.sqrt();
    consts.radius_factor * (params.r0 + sigma * (1.0 / params.alpha_min).ln().max(0.0).sqrt())
}

/// Refresh the warm-start set from samples of `P_t` using the current score
/// estimate: denoise every sample, then greedily cover the candidates.
pub fn refresh_warm_starts(
    score: impl Fn(&DVector<f64>) -> DVector<f64>,
    samples: &[DVector<f64>],
    params: &KLocalityParams,
    sigma_sq: f64,
    delta: f64,
    consts: &WarmStartConstants,
) -> Result<WarmStartSet, WarmStartError> {
    assert!(delta > 0.0 && delta < 1.0, "delta must lie in (0,1)");
    let required = (consts.sample_factor * (1.0 / delta).ln() * params.ball_count as f64
        / params.alpha_min)
        .ceil()
        .max(1.0) as usize;
    if samples.len() < required {
        return Err(WarmStartError::InsufficientSamples {
            required,
            actual: samples.len(),
        });
    }
    let radius = covering_radius(params, sigma_sq, consts);
    let rounds = (consts.round_factor * params.ball_count as f64 * (1.0 / params.alpha_min).ln())
        .ceil()
        .max(1.0) as usize;
    let candidates = denoise_points(score, samples, sigma_sq)?;
    let centers = greedy_cover(&candidates, radius, rounds);
    if centers.is_empty() {
        return Err(WarmStartError::NoCenters);
    }
    Ok(WarmStartSet::new(centers, radius, sigma_sq))
}

// --- serialization -------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct RawWarmStartSet {
    centers: Vec<Vec<f64>>,
    radius: f64,
    noise_level: f64,
}

impl Serialize for WarmStartSet {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        RawWarmStartSet {
            centers: self
                .centers
                .iter()
                .map(|c| c.iter().cloned().collect())
                .collect(),
            radius: self.radius,
            noise_level: self.noise_level,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for WarmStartSet {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = RawWarmStartSet::deserialize(deserializer)?;
        if raw.centers.is_empty() {
            return Err(serde::de::Error::custom("warm-start set needs centers"));
        }
        if raw.radius.is_nan() || raw.radius <= 0.0 {
            return Err(serde::de::Error::custom("covering radius must be positive"));
        }
        Ok(WarmStartSet::new(
            raw.centers.into_iter().map(DVector::from_vec).collect(),
            raw.radius,
            raw.noise_level,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixture::test_support::{point_mass, symmetric_pair};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn pts(coords: &[&[f64]]) -> Vec<DVector<f64>> {
        coords
            .iter()
            .map(|c| DVector::from_vec(c.to_vec()))
            .collect()
    }

    #[test]
    fn voronoi_nearest_and_ties() {
        let centers = pts(&[&[0.0, 0.0], &[4.0, 0.0]]);
        assert_eq!(
            assign_voronoi(&centers, &DVector::from_vec(vec![1.0, 1.0])),
            0
        );
        // tie point goes to the lowest index
        assert_eq!(
            assign_voronoi(&centers, &DVector::from_vec(vec![2.0, 0.0])),
            0
        );
        let single = pts(&[&[3.0, 3.0]]);
        assert_eq!(
            assign_voronoi(&single, &DVector::from_vec(vec![-9.0, 2.0])),
            0
        );
    }

    #[test]
    fn denoise_with_exact_point_mass_score() {
        let spec = point_mass(1, 1.0, vec![2.5]);
        let sigma_sq = 1.5;
        let ys = pts(&[&[0.0], &[5.0], &[-3.0]]);
        // score of a point mass is (mu - y)/sigma^2, so candidates equal mu
        let out = denoise_points(
            |y| (spec.posterior_mean(y, sigma_sq) - y) / sigma_sq,
            &ys,
            sigma_sq,
        )
        .unwrap();
        for c in out {
            assert_abs_diff_eq!(c[0], 2.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn denoise_zero_score_is_identity() {
        let ys = pts(&[&[1.0, 2.0], &[-3.0, 0.5]]);
        let out = denoise_points(|y| DVector::zeros(y.len()), &ys, 2.0).unwrap();
        assert_eq!(out, ys);
    }

    #[test]
    fn denoise_symmetric_pair_near_mode() {
        let spec = symmetric_pair(4.0, 1.0);
        let sigma_sq = 1.0;
        let ys = pts(&[&[4.5]]);
        let out = denoise_points(
            |y| (spec.posterior_mean(y, sigma_sq) - y) / sigma_sq,
            &ys,
            sigma_sq,
        )
        .unwrap();
        assert!((out[0][0] - 4.0).abs() < 0.01, "candidate {}", out[0][0]);
    }

    #[test]
    fn denoise_reports_failing_index() {
        let ys = pts(&[&[0.0], &[1.0]]);
        let err = denoise_points(
            |y| {
                if y[0] > 0.5 {
                    DVector::from_vec(vec![f64::NAN])
                } else {
                    DVector::zeros(1)
                }
            },
            &ys,
            1.0,
        )
        .unwrap_err();
        assert!(matches!(err, WarmStartError::ScoreEvaluation { index: 1 }));
    }

    #[test]
    fn greedy_cover_edge_cases() {
        assert!(greedy_cover(&[], 1.0, 5).is_empty());
        // everything within radius of candidate 0
        let cluster = pts(&[&[0.0], &[0.2], &[-0.3]]);
        let picked = greedy_cover(&cluster, 1.0, 5);
        assert_eq!(picked.len(), 1);
    }

    #[test]
    fn greedy_cover_matches_brute_force_minimum() {
        let cands = pts(&[&[0.0], &[0.1], &[5.0], &[5.1], &[10.0]]);
        let picked = greedy_cover(&cands, 1.0, 5);
        assert_eq!(picked.len(), 3);
        // brute force: check no 2-subset of candidate balls covers everything
        let covered_by = |subset: &[usize]| {
            cands
                .iter()
                .all(|p| subset.iter().any(|&i| (&cands[i] - p).norm() <= 1.0))
        };
        for i in 0..cands.len() {
            for j in (i + 1)..cands.len() {
                assert!(!covered_by(&[i, j]), "2 balls should not suffice");
            }
        }
        assert!(cands
            .iter()
            .all(|p| picked.iter().any(|c| (c - p).norm() <= 1.0)));
    }

    #[test]
    fn greedy_cover_respects_round_budget() {
        let cands = pts(&[&[0.0], &[10.0], &[20.0], &[30.0]]);
        let picked = greedy_cover(&cands, 1.0, 2);
        assert_eq!(picked.len(), 2);
    }

    #[test]
    fn refresh_covers_well_separated_means() {
        let spec = crate::mixture::MixtureSpec::new(
            2,
            1.0,
            vec![
                crate::mixture::MixtureComponent {
                    mean: DVector::from_vec(vec![0.0, 0.0]),
                    weight: 1.0 / 3.0,
                },
                crate::mixture::MixtureComponent {
                    mean: DVector::from_vec(vec![12.0, 0.0]),
                    weight: 1.0 / 3.0,
                },
                crate::mixture::MixtureComponent {
                    mean: DVector::from_vec(vec![0.0, 12.0]),
                    weight: 1.0 / 3.0,
                },
            ],
            KLocalityParams {
                r0: 1.0,
                alpha_min: 1.0 / 3.0,
                support_radius: 12.0,
                ball_count: 3,
            },
        )
        .unwrap();
        let t = 0.5;
        let sigma_sq = t + 1.0;
        let samples = spec.sample_noised(t, 2000, 5);
        let set = refresh_warm_starts(
            |y| spec.exact_score(y, t),
            &samples,
            spec.locality(),
            sigma_sq,
            0.05,
            &WarmStartConstants::default(),
        )
        .unwrap();
        assert!(set.covers(&spec.means()), "radius {}", set.radius());
    }

    #[test]
    fn refresh_single_cluster() {
        let spec = point_mass(1, 1.0, vec![0.0]);
        let t = 1.0;
        let samples = spec.sample_noised(t, 500, 8);
        let set = refresh_warm_starts(
            |y| spec.exact_score(y, t),
            &samples,
            spec.locality(),
            t + 1.0,
            0.1,
            &WarmStartConstants::default(),
        )
        .unwrap();
        assert!(set.covers(&spec.means()));
    }

    #[test]
    fn refresh_zero_score_budget_enforced() {
        // zero score at huge sigma: candidates are the raw samples, spread out
        let spec = point_mass(1, 1.0, vec![0.0]);
        let t = 400.0;
        let samples = spec.sample_noised(t, 400, 13);
        let params = KLocalityParams {
            r0: 1.0,
            alpha_min: 0.25,
            support_radius: 5.0,
            ball_count: 2,
        };
        let consts = WarmStartConstants::default();
        let set = refresh_warm_starts(
            |y| DVector::zeros(y.len()),
            &samples,
            &params,
            t + 1.0,
            0.1,
            &consts,
        )
        .unwrap();
        let budget = (consts.round_factor * 2.0 * (1.0f64 / 0.25).ln()).ceil() as usize;
        assert!(set.len() <= budget, "{} > {budget}", set.len());
    }

    #[test]
    fn near_duplicate_centers_are_dropped() {
        let set = WarmStartSet::new(
            vec![
                DVector::from_vec(vec![1.0, 0.0]),
                DVector::from_vec(vec![1.0, 1e-10]),
                DVector::from_vec(vec![2.0, 0.0]),
            ],
            1.0,
            1.0,
        );
        assert_eq!(set.len(), 2);
    }

    #[test]
    fn refresh_rejects_insufficient_samples() {
        let params = KLocalityParams {
            r0: 1.0,
            alpha_min: 0.01,
            support_radius: 5.0,
            ball_count: 10,
        };
        let samples = pts(&[&[0.0]]);
        let err = refresh_warm_starts(
            |y| DVector::zeros(y.len()),
            &samples,
            &params,
            1.0,
            0.05,
            &WarmStartConstants::default(),
        )
        .unwrap_err();
        assert!(matches!(err, WarmStartError::InsufficientSamples { .. }));
    }

    #[test]
    fn refresh_is_deterministic() {
        let spec = symmetric_pair(4.0, 1.0);
        let t = 0.3;
        let samples = spec.sample_noised(t, 600, 21);
        let run = || {
            refresh_warm_starts(
                |y| spec.exact_score(y, t),
                &samples,
                spec.locality(),
                t + 1.0,
                0.05,
                &WarmStartConstants::default(),
            )
            .unwrap()
        };
        assert_eq!(run(), run());
    }

    proptest! {
        #[test]
        fn voronoi_scale_equivariance(
            y0 in -5.0f64..5.0,
            y1 in -5.0f64..5.0,
            lambda in 0.1f64..10.0,
        ) {
            let centers = pts(&[&[1.0, 0.0], &[-2.0, 1.0], &[0.5, -3.0]]);
            let y = DVector::from_vec(vec![y0, y1]);
            let scaled: Vec<DVector<f64>> = centers.iter().map(|c| c * lambda).collect();
            prop_assert_eq!(
                assign_voronoi(&centers, &y),
                assign_voronoi(&scaled, &(&y * lambda))
            );
        }
    }
}
