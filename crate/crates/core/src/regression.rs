//! Denoising dataset construction and per-Voronoi-cell norm-constrained
//! Hermite regression.
//!
//! Each cell solves `min_B sum_i ||B phi(y_i - mu_j) - z_i||^2` subject to
//! `||B||_F <= D`, with targets `z_i = (1 - sigma^2/t) y_i + (sigma^2/t) x_i`
//! whose conditional mean given `y` is the posterior mean `f_{sigma^2}(y)`.
//! The constraint is handled exactly through the trust-region subproblem
//! structure: eigendecompose the Gram matrix once, then the ridge solution
//! norm `||B(lambda)||_F` is an explicit decreasing function of `lambda`,
//! so the boundary case reduces to a scalar bisection.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hermite::{FeatureBasis, HermiteError, DEFAULT_BASIS_CAP};
use crate::rng::{standard_normal_vector, stream_rng};
use crate::warm_starts::{assign_voronoi, WarmStartSet};

const RIDGE_FLOOR_SCALE: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum RegressionError {
    #[error("regression targets are undefined at t = 0")]
    ZeroNoiseTime,
    #[error("cell has no samples; empty cells are handled by the constant-center rule")]
    EmptyCell,
    #[error("feature rows ({features}) and target rows ({targets}) differ")]
    RowMismatch { features: usize, targets: usize },
    #[error("norm bound must be positive, got {0}")]
    BadNormBound(f64),
    #[error("basis variance {basis} does not match dataset variance {dataset}")]
    BasisMismatch { basis: f64, dataset: f64 },
    #[error("model requires the orthonormalized basis")]
    UnnormalizedBasis,
    #[error(transparent)]
    Basis(#[from] HermiteError),
}

/// Paired clean/noised samples at one noise time, with the Voronoi cell of
/// every noised point.
#[derive(Debug, Clone)]
pub struct DenoisingDataset {
    xs: Vec<DVector<f64>>,
    ys: Vec<DVector<f64>>,
    t: f64,
    sigma_sq: f64,
    cell_of: Vec<usize>,
}

impl DenoisingDataset {
    pub fn xs(&self) -> &[DVector<f64>] {
        &self.xs
    }

    pub fn ys(&self) -> &[DVector<f64>] {
        &self.ys
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn sigma_sq(&self) -> f64 {
        self.sigma_sq
    }

    pub fn cell_of(&self) -> &[usize] {
        &self.cell_of
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.xs.first().map_or(0, |x| x.len())
    }
}

/// Noise clean samples to time `t` (`y = x + sqrt(t) xi`) and assign each
/// noised point to its nearest warm-start center. Deterministic given `seed`.
pub fn build_denoising_dataset(
    samples: Vec<DVector<f64>>,
    t: f64,
    sigma0_sq: f64,
    centers: &WarmStartSet,
    seed: u64,
) -> DenoisingDataset {
    assert!(t >= 0.0, "noise time must be nonnegative");
    assert!(sigma0_sq >= 0.0, "base variance must be nonnegative");
    let mut rng = stream_rng(seed, 0);
    let sqrt_t = t.sqrt();
    let ys: Vec<DVector<f64>> = samples
        .iter()
        .map(|x| x + standard_normal_vector(x.len(), &mut rng) * sqrt_t)
        .collect();
    let cell_of = ys
        .iter()
        .map(|y| assign_voronoi(centers.centers(), y))
        .collect();
    DenoisingDataset {
        xs: samples,
        ys,
        t,
        sigma_sq: t + sigma0_sq,
        cell_of,
    }
}

/// Regression targets `(1 - sigma^2/t) y_i + (sigma^2/t) x_i`, whose
/// conditional mean given `y` is the posterior mean.
pub fn regression_targets(ds: &DenoisingDataset) -> Result<Vec<DVector<f64>>, RegressionError> {
    if ds.t == 0.0 {
        return Err(RegressionError::ZeroNoiseTime);
    }
    let ratio = ds.sigma_sq / ds.t;
    Ok(ds
        .xs
        .iter()
        .zip(&ds.ys)
        .map(|(x, y)| y * (1.0 - ratio) + x * ratio)
        .collect())
}

/// Exact solution of `min_B ||Phi B^T - Z||_F^2` s.t. `||B||_F <= norm_bound`.
///
/// `features` has one row per sample, `targets` one row per sample and one
/// column per output coordinate. Returns `B` with shape
/// `(targets.ncols(), features.ncols())`.
pub fn fit_cell(
    features: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    norm_bound: f64,
) -> Result<DMatrix<f64>, RegressionError> {
    if features.nrows() == 0 {
        return Err(RegressionError::EmptyCell);
    }
    if features.nrows() != targets.nrows() {
        return Err(RegressionError::RowMismatch {
            features: features.nrows(),
            targets: targets.nrows(),
        });
    }
    if norm_bound.is_nan() || norm_bound <= 0.0 {
        return Err(RegressionError::BadNormBound(norm_bound));
    }
    let gram = features.transpose() * features;
    let rhs = features.transpose() * targets; // m x n
    let m = gram.nrows();
    let lambda_floor = RIDGE_FLOOR_SCALE * gram.diagonal().sum() / m as f64;

    let eig = SymmetricEigen::new(gram);
    let eigvals: Vec<f64> = eig.eigenvalues.iter().map(|v| v.max(0.0)).collect();
    let w = eig.eigenvectors.transpose() * &rhs; // m x n, rows in eigenbasis
    let row_norms_sq: Vec<f64> = (0..m).map(|j| w.row(j).norm_squared()).collect();

    let norm_sq_at = |lambda: f64| -> f64 {
        row_norms_sq
            .iter()
            .zip(&eigvals)
            .map(|(s, ev)| {
                let d = ev + lambda;
                if *s == 0.0 {
                    0.0
                } else {
                    s / (d * d)
                }
            })
            .sum()
    };

    let mut lambda = lambda_floor.max(f64::MIN_POSITIVE);
    if norm_sq_at(lambda) > norm_bound * norm_bound {
        // boundary case: bisect for ||B(lambda)||_F = norm_bound
        let mut lo = lambda;
        let mut hi = lambda.max(1.0);
        while norm_sq_at(hi) > norm_bound * norm_bound {
            hi *= 2.0;
            assert!(hi.is_finite(), "ridge bisection upper bound diverged");
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if norm_sq_at(mid) > norm_bound * norm_bound {
                lo = mid;
            } else {
                hi = mid;
            }
            if (hi - lo) <= 1e-15 * hi {
                break;
            }
        }
        lambda = hi;
    }

    // B^T = V diag(1/(ev + lambda)) W
    let mut scaled = w;
    for (j, ev) in eigvals.iter().enumerate() {
        let d = ev + lambda;
        let inv = if d > 0.0 { 1.0 / d } else { 0.0 };
        scaled.row_mut(j).scale_mut(inv);
    }
    let bt = &eig.eigenvectors * scaled;
    Ok(bt.transpose())
}

/// Per-cell coefficient blocks of the piecewise Hermite score model.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseScoreModel {
    centers: WarmStartSet,
    degree: usize,
    sigma_sq: f64,
    norm_bound: f64,
    blocks: Vec<DMatrix<f64>>,
    basis: FeatureBasis,
}

impl PiecewiseScoreModel {
    pub fn centers(&self) -> &WarmStartSet {
        &self.centers
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn sigma_sq(&self) -> f64 {
        self.sigma_sq
    }

    pub fn norm_bound(&self) -> f64 {
        self.norm_bound
    }

    pub fn blocks(&self) -> &[DMatrix<f64>] {
        &self.blocks
    }

    pub fn dim(&self) -> usize {
        self.centers.dim()
    }

    /// `(g(y), s(y))` with `s(y) = (g(y) - y)/sigma^2`, using the block of
    /// the Voronoi cell that `y` falls in.
    pub fn evaluate(&self, y: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let j = assign_voronoi(self.centers.centers(), y);
        let phi = self.basis.feature_vector(y, &self.centers.centers()[j]);
        let g = &self.blocks[j] * phi;
        let s = (&g - y) / self.sigma_sq;
        (g, s)
    }

    /// Just the score estimate `s(y)`.
    pub fn score(&self, y: &DVector<f64>) -> DVector<f64> {
        self.evaluate(y).1
    }

    /// Mean squared residual `||g(y_i) - z_i||^2` over a dataset.
    pub fn empirical_loss(&self, ds: &DenoisingDataset) -> Result<f64, RegressionError> {
        let targets = regression_targets(ds)?;
        if ds.is_empty() {
            return Ok(0.0);
        }
        let total: f64 = ds
            .ys
            .iter()
            .zip(&targets)
            .map(|(y, z)| (self.evaluate(y).0 - z).norm_squared())
            .sum();
        Ok(total / ds.len() as f64)
    }
}

/// Fit one block per nonempty Voronoi cell; empty cells get the constant
/// block predicting the cell center (clipped into the norm ball).
pub fn fit_piecewise(
    ds: &DenoisingDataset,
    centers: &WarmStartSet,
    basis: &FeatureBasis,
    norm_bound: f64,
) -> Result<PiecewiseScoreModel, RegressionError> {
    if ds.t == 0.0 {
        return Err(RegressionError::ZeroNoiseTime);
    }
    if norm_bound.is_nan() || norm_bound <= 0.0 {
        return Err(RegressionError::BadNormBound(norm_bound));
    }
    if (basis.sigma_sq() - ds.sigma_sq).abs() > 1e-9 * ds.sigma_sq.max(1.0) {
        return Err(RegressionError::BasisMismatch {
            basis: basis.sigma_sq(),
            dataset: ds.sigma_sq,
        });
    }
    if !basis.is_normalized() {
        return Err(RegressionError::UnnormalizedBasis);
    }
    let targets = regression_targets(ds)?;
    let n = centers.dim();
    let k = centers.len();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &cell) in ds.cell_of.iter().enumerate() {
        members[cell].push(i);
    }
    let blocks: Vec<DMatrix<f64>> = members
        .par_iter()
        .enumerate()
        .map(|(j, idxs)| -> Result<DMatrix<f64>, RegressionError> {
            if idxs.is_empty() {
                return Ok(constant_center_block(
                    &centers.centers()[j],
                    basis.len(),
                    norm_bound,
                ));
            }
            let mut phi = DMatrix::zeros(idxs.len(), basis.len());
            let mut z = DMatrix::zeros(idxs.len(), n);
            for (row, &i) in idxs.iter().enumerate() {
                phi.row_mut(row).copy_from(
                    &basis
                        .feature_vector(&ds.ys[i], &centers.centers()[j])
                        .transpose(),
                );
                z.row_mut(row).copy_from(&targets[i].transpose());
            }
            fit_cell(&phi, &z, norm_bound)
        })
        .collect::<Result<_, _>>()?;
    Ok(PiecewiseScoreModel {
        centers: centers.clone(),
        degree: basis.degree(),
        sigma_sq: ds.sigma_sq,
        norm_bound,
        blocks,
        basis: basis.clone(),
    })
}

/// Block predicting the constant `center` everywhere: coefficient on the
/// constant feature equals the center, everything else zero. The center is
/// scaled into the norm ball if it sticks out.
fn constant_center_block(
    center: &DVector<f64>,
    n_features: usize,
    norm_bound: f64,
) -> DMatrix<f64> {
    let mut block = DMatrix::zeros(center.len(), n_features);
    let scale = if center.norm() > norm_bound {
        norm_bound / center.norm()
    } else {
        1.0
    };
    block.column_mut(0).copy_from(&(center * scale));
    block
}

// --- serialization -------------------------------------------------------
// JSON shape: {sigma_sq, degree, norm_bound, centers: [...], center_radius,
// center_noise_level, blocks: [{cell, coeffs (row-major)}]}

#[derive(Serialize, Deserialize)]
struct RawBlock {
    cell: usize,
    coeffs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawModel {
    sigma_sq: f64,
    degree: usize,
    norm_bound: f64,
    centers: Vec<Vec<f64>>,
    center_radius: f64,
    center_noise_level: f64,
    blocks: Vec<RawBlock>,
}

impl Serialize for PiecewiseScoreModel {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        RawModel {
            sigma_sq: self.sigma_sq,
            degree: self.degree,
            norm_bound: self.norm_bound,
            centers: self
                .centers
                .centers()
                .iter()
                .map(|c| c.iter().cloned().collect())
                .collect(),
            center_radius: self.centers.radius(),
            center_noise_level: self.centers.noise_level(),
            blocks: self
                .blocks
                .iter()
                .enumerate()
                .map(|(cell, b)| RawBlock {
                    cell,
                    // row-major: all coefficients of output coordinate 0 first
                    coeffs: (0..b.nrows())
                        .flat_map(|r| (0..b.ncols()).map(move |c| (r, c)))
                        .map(|(r, c)| b[(r, c)])
                        .collect(),
                })
                .collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for PiecewiseScoreModel {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let raw = RawModel::deserialize(deserializer)?;
        if raw.centers.is_empty() {
            return Err(D::Error::custom("model needs at least one center"));
        }
        let n = raw.centers[0].len();
        let basis = FeatureBasis::new(n, raw.degree, raw.sigma_sq, true, DEFAULT_BASIS_CAP)
            .map_err(D::Error::custom)?;
        let m = basis.len();
        let mut blocks = vec![DMatrix::zeros(n, m); raw.centers.len()];
        let mut seen = vec![false; raw.centers.len()];
        for rb in raw.blocks {
            if rb.cell >= blocks.len() {
                return Err(D::Error::custom(format!(
                    "block cell {} out of range",
                    rb.cell
                )));
            }
            if rb.coeffs.len() != n * m {
                return Err(D::Error::custom(format!(
                    "block {} has {} coefficients, expected {}",
                    rb.cell,
                    rb.coeffs.len(),
                    n * m
                )));
            }
            blocks[rb.cell] = DMatrix::from_row_slice(n, m, &rb.coeffs);
            seen[rb.cell] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(D::Error::custom("missing coefficient block for some cell"));
        }
        Ok(PiecewiseScoreModel {
            centers: WarmStartSet::new(
                raw.centers.into_iter().map(DVector::from_vec).collect(),
                raw.center_radius,
                raw.center_noise_level,
            ),
            degree: raw.degree,
            sigma_sq: raw.sigma_sq,
            norm_bound: raw.norm_bound,
            blocks,
            basis,
        })
    }
}
