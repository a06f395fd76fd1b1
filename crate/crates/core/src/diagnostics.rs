//! Quantitative verification: Monte-Carlo score error, Hermite coefficient
//! spectra with truncation checks, the smoothing TV bound, change-of-measure
//! checks, sample-quality metrics, and the VP/VE parameterization identity.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hermite::{enumerate_multi_indices, MultiIndex};
use crate::mixture::MixtureSpec;
use crate::quadrature::GaussHermite;
use crate::rng::{standard_normal_vector, stream_rng};

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("spectrum computation supports n <= 2, got n = {0}")]
    DimensionTooLarge(usize),
    #[error("spectrum degree cap is 60, got {0}")]
    DegreeTooLarge(usize),
    #[error("truncation degree {degree} exceeds report d_max {d_max}")]
    TruncationDegree { degree: usize, d_max: usize },
    #[error("report carries no quadrature cache (deserialized reports cannot be re-truncated)")]
    MissingCache,
}

/// Monte-Carlo estimate of `E_{P_t} ||grad ln p_t - s||^2`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreErrorReport {
    pub t: f64,
    pub mc_count: usize,
    pub estimate: f64,
    pub std_error: f64,
}

/// Estimate the squared score error of `score` against the exact oracle,
/// sampling `mc_count` points from `P_t`. The standard error is the
/// jackknife estimate (which for a plain mean equals `sd/sqrt(m)`).
pub fn score_l2_error(
    score: impl Fn(&DVector<f64>) -> DVector<f64>,
    spec: &MixtureSpec,
    t: f64,
    mc_count: usize,
    seed: u64,
) -> ScoreErrorReport {
    assert!(mc_count >= 2, "need at least two Monte-Carlo draws");
    let ys = spec.sample_noised(t, mc_count, seed);
    let vals: Vec<f64> = ys
        .iter()
        .map(|y| (spec.exact_score(y, t) - score(y)).norm_squared())
        .collect();
    let m = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / m;
    let jack_var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m * (m - 1.0));
    ScoreErrorReport {
        t,
        mc_count,
        estimate: mean,
        std_error: jack_var.sqrt(),
    }
}

/// Relative L2(P_t) score error `||s_hat - s|| / ||s||`, the headline
/// quantity of the regression benchmarks.
pub fn relative_score_error(
    score: impl Fn(&DVector<f64>) -> DVector<f64>,
    spec: &MixtureSpec,
    t: f64,
    mc_count: usize,
    seed: u64,
) -> f64 {
    let ys = spec.sample_noised(t, mc_count, seed);
    let mut num = 0.0;
    let mut den = 0.0;
    for y in &ys {
        let s = spec.exact_score(y, t);
        num += (score(y) - &s).norm_squared();
        den += s.norm_squared();
    }
    (num / den).sqrt()
}

struct SpectrumCache {
    center: DVector<f64>,
    weights: Vec<f64>,
    values: Vec<DVector<f64>>,
    // per axis, per node along that axis, normalized Hermite values 0..=d_max
    axis_tables: Vec<Vec<Vec<f64>>>,
    node_axes: Vec<Vec<usize>>,
}

/// Orthonormal Hermite coefficients of a vector field and the degree tail
/// sums `tails[d] = ||f||^2 - sum_{|k| < d} ||a_k||^2`.
#[derive(Serialize, Deserialize)]
pub struct SpectrumReport {
    pub sigma_sq: f64,
    pub d_max: usize,
    pub center: Vec<f64>,
    pub indices: Vec<MultiIndex>,
    /// `a_k` in R^n, aligned with `indices`.
    pub coeffs: Vec<Vec<f64>>,
    /// Indexed by degree `d = 0..=d_max+1`; nonincreasing.
    pub tails: Vec<f64>,
    #[serde(skip)]
    cache: Option<SpectrumCache>,
}

impl std::fmt::Debug for SpectrumReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectrumReport")
            .field("sigma_sq", &self.sigma_sq)
            .field("d_max", &self.d_max)
            .field("indices", &self.indices.len())
            .field("tails", &self.tails)
            .finish()
    }
}

/// Spectrum of the posterior mean `f_{sigma^2}` of a discrete mixture,
/// shifted to `center`, via tensor Gauss-Hermite quadrature.
pub fn hermite_coefficient_spectrum(
    spec: &MixtureSpec,
    sigma_sq: f64,
    center: &DVector<f64>,
    d_max: usize,
) -> Result<SpectrumReport, DiagnosticsError> {
    spectrum_of_fn(
        |y| spec.posterior_mean(y, sigma_sq),
        spec.dim(),
        sigma_sq,
        center,
        d_max,
    )
}

/// Spectrum of an arbitrary vector field (test hook; the field need not be
/// a mixture posterior mean).
pub fn spectrum_of_fn(
    f: impl Fn(&DVector<f64>) -> DVector<f64>,
    n: usize,
    sigma_sq: f64,
    center: &DVector<f64>,
    d_max: usize,
) -> Result<SpectrumReport, DiagnosticsError> {
    if n > 2 {
        return Err(DiagnosticsError::DimensionTooLarge(n));
    }
    if d_max > 60 {
        return Err(DiagnosticsError::DegreeTooLarge(d_max));
    }
    assert_eq!(center.len(), n, "center dimension mismatch");
    assert!(sigma_sq > 0.0);
    // at least 2 d_max + 1 nodes per axis; more in practice since the
    // integrand is not a polynomial
    let points_per_axis = (2 * d_max + 1).max(121);
    let quad = GaussHermite::new(points_per_axis);
    let sigma = sigma_sq.sqrt();

    // normalized Hermite values per axis node
    let axis_table: Vec<Vec<f64>> = quad
        .nodes
        .iter()
        .map(|&u| normalized_hermite_values(d_max, u))
        .collect();

    // tensor grid
    let mut node_axes: Vec<Vec<usize>> = Vec::new();
    let mut grid = vec![0usize; n];
    loop {
        node_axes.push(grid.clone());
        let mut axis = 0;
        loop {
            grid[axis] += 1;
            if grid[axis] < quad.nodes.len() {
                break;
            }
            grid[axis] = 0;
            axis += 1;
            if axis == n {
                break;
            }
        }
        if axis == n {
            break;
        }
    }

    let indices =
        enumerate_multi_indices(n, d_max, usize::MAX).expect("spectrum dimension bounded");
    let mut coeffs = vec![DVector::<f64>::zeros(n); indices.len()];
    let mut norm_sq = 0.0;
    let mut weights = Vec::with_capacity(node_axes.len());
    let mut values = Vec::with_capacity(node_axes.len());
    for axes in &node_axes {
        let point = DVector::from_fn(n, |i, _| center[i] + sigma * quad.nodes[axes[i]]);
        let w: f64 = axes.iter().map(|&l| quad.weights[l]).product();
        let val = f(&point);
        norm_sq += w * val.norm_squared();
        for (idx, mi) in indices.iter().enumerate() {
            let h: f64 = mi
                .entries()
                .iter()
                .enumerate()
                .map(|(axis, &k)| axis_table[axes[axis]][k as usize])
                .product();
            // note: axis_table is indexed by node, shared across axes
            coeffs[idx].axpy(w * h, &val, 1.0);
        }
        weights.push(w);
        values.push(val);
    }

    // tails[d] = ||f||^2 - sum over |k| < d
    let mut tails = vec![norm_sq; d_max + 2];
    for (mi, a) in indices.iter().zip(&coeffs) {
        let deg = mi.degree() as usize;
        let mass = a.norm_squared();
        for tail in tails.iter_mut().skip(deg + 1) {
            *tail -= mass;
        }
    }
    for tail in &mut tails {
        *tail = tail.max(0.0);
    }

    let axis_tables = vec![axis_table; n];
    Ok(SpectrumReport {
        sigma_sq,
        d_max,
        center: center.iter().cloned().collect(),
        indices,
        coeffs: coeffs.iter().map(|c| c.iter().cloned().collect()).collect(),
        tails,
        cache: Some(SpectrumCache {
            center: center.clone(),
            weights,
            values,
            axis_tables,
            node_axes,
        }),
    })
}

fn normalized_hermite_values(kmax: usize, u: f64) -> Vec<f64> {
    let mut vals = Vec::with_capacity(kmax + 1);
    vals.push(1.0);
    if kmax == 0 {
        return vals;
    }
    vals.push(u);
    for k in 2..=kmax {
        let kf = k as f64;
        let next = (u * vals[k - 1] - (kf - 1.0).sqrt() * vals[k - 2]) / kf.sqrt();
        vals.push(next);
    }
    vals
}

/// Tail sum at degree `d` and the directly-quadratured L2 error of the
/// degree-`< d` truncation; Parseval makes the two agree.
pub fn truncation_check(report: &SpectrumReport, d: usize) -> Result<(f64, f64), DiagnosticsError> {
    if d > report.d_max + 1 {
        return Err(DiagnosticsError::TruncationDegree {
            degree: d,
            d_max: report.d_max,
        });
    }
    let cache = report
        .cache
        .as_ref()
        .ok_or(DiagnosticsError::MissingCache)?;
    let tail = report.tails[d];
    let n = cache.center.len();
    let kept: Vec<usize> = report
        .indices
        .iter()
        .enumerate()
        .filter(|(_, mi)| (mi.degree() as usize) < d)
        .map(|(i, _)| i)
        .collect();
    let mut err = 0.0;
    for (node_pos, axes) in cache.node_axes.iter().enumerate() {
        let mut g = DVector::<f64>::zeros(n);
        for &idx in &kept {
            let h: f64 = report.indices[idx]
                .entries()
                .iter()
                .enumerate()
                .map(|(axis, &k)| cache.axis_tables[axis][axes[axis]][k as usize])
                .product();
            for (gi, ai) in g.iter_mut().zip(&report.coeffs[idx]) {
                *gi += h * ai;
            }
        }
        err += cache.weights[node_pos] * (&cache.values[node_pos] - g).norm_squared();
    }
    Ok((tail, err))
}

/// CSV body `degree,tail` for plotting, one row per degree.
pub fn spectrum_csv(report: &SpectrumReport) -> String {
    let mut out = String::from("degree,tail\n");
    for (d, tail) in report.tails.iter().enumerate() {
        out.push_str(&format!("{d},{tail:.17e}\n"));
    }
    out
}

/// Smoothing TV bound `sigma^2 sqrt(n) / (sqrt(2) sigma0^2)` on
/// `TV(P_0, P_{sigma^2})`.
pub fn tv_upper_bound(sigma_sq: f64, sigma0_sq: f64, n: usize) -> f64 {
    assert!(sigma0_sq > 0.0, "sigma0_sq must be positive");
    sigma_sq * (n as f64).sqrt() / (2.0f64.sqrt() * sigma0_sq)
}

/// Closed form vs quadrature for the change-of-measure moment
/// `int (dP/dgamma)^{1+a} dgamma` with `P = N(mu, 1)` in 1D.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChangeOfMeasureReport {
    pub mu: f64,
    pub radius: f64,
    pub exponent_a: f64,
    /// `exp(a(1+a) mu^2 / 2)`
    pub closed_form: f64,
    /// `exp(a(1+a) R^2 / 2)`
    pub bound: f64,
    pub quadrature: f64,
    pub holds: bool,
}

pub fn change_of_measure_check(
    mu: f64,
    radius: f64,
    a: f64,
    quad_points: usize,
) -> ChangeOfMeasureReport {
    assert!(mu.abs() <= radius, "check requires |mu| <= R");
    assert!(a >= 0.0);
    let quad = GaussHermite::new(quad_points.max(16));
    // (dP/dgamma)(x) = exp(mu x - mu^2/2)
    let quadrature = quad.integrate(|x| ((1.0 + a) * (mu * x - 0.5 * mu * mu)).exp());
    let closed_form = (a * (1.0 + a) * mu * mu / 2.0).exp();
    let bound = (a * (1.0 + a) * radius * radius / 2.0).exp();
    ChangeOfMeasureReport {
        mu,
        radius,
        exponent_a: a,
        closed_form,
        bound,
        quadrature,
        holds: closed_form <= bound * (1.0 + 1e-12),
    }
}

/// Per-cluster weights/means and the sliced Wasserstein-1 distance between
/// a generated and a reference sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterMetric {
    pub weight_generated: f64,
    pub weight_reference: f64,
    pub weight_error: f64,
    /// Distance between within-cluster means; absent if a side is empty.
    pub mean_error: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleQualityMetrics {
    pub clusters: Vec<ClusterMetric>,
    pub sliced_w1: f64,
    pub directions: usize,
}

pub fn sample_quality_metrics(
    generated: &[DVector<f64>],
    reference: &[DVector<f64>],
    cluster_means: &[DVector<f64>],
    directions: usize,
    seed: u64,
) -> SampleQualityMetrics {
    assert!(!generated.is_empty() && !reference.is_empty());
    assert!(!cluster_means.is_empty());
    let assign = |pts: &[DVector<f64>]| -> Vec<usize> {
        pts.iter()
            .map(|p| crate::warm_starts::assign_voronoi(cluster_means, p))
            .collect()
    };
    let ga = assign(generated);
    let ra = assign(reference);
    let k = cluster_means.len();
    let mut clusters = Vec::with_capacity(k);
    for j in 0..k {
        let gsel: Vec<&DVector<f64>> = generated
            .iter()
            .zip(&ga)
            .filter(|(_, &a)| a == j)
            .map(|(p, _)| p)
            .collect();
        let rsel: Vec<&DVector<f64>> = reference
            .iter()
            .zip(&ra)
            .filter(|(_, &a)| a == j)
            .map(|(p, _)| p)
            .collect();
        let wg = gsel.len() as f64 / generated.len() as f64;
        let wr = rsel.len() as f64 / reference.len() as f64;
        let mean_error = if gsel.is_empty() || rsel.is_empty() {
            None
        } else {
            let dim = generated[0].len();
            let mg = gsel.iter().fold(DVector::zeros(dim), |acc, p| acc + *p) / gsel.len() as f64;
            let mr = rsel.iter().fold(DVector::zeros(dim), |acc, p| acc + *p) / rsel.len() as f64;
            Some((mg - mr).norm())
        };
        clusters.push(ClusterMetric {
            weight_generated: wg,
            weight_reference: wr,
            weight_error: (wg - wr).abs(),
            mean_error,
        });
    }
    SampleQualityMetrics {
        clusters,
        sliced_w1: sliced_wasserstein_1(generated, reference, directions, seed),
        directions,
    }
}

/// Average 1D Wasserstein-1 distance over random unit directions.
pub fn sliced_wasserstein_1(
    a: &[DVector<f64>],
    b: &[DVector<f64>],
    directions: usize,
    seed: u64,
) -> f64 {
    assert!(!a.is_empty() && !b.is_empty());
    assert!(directions > 0);
    let n = a[0].len();
    let mut rng = stream_rng(seed, 0);
    let mut total = 0.0;
    for _ in 0..directions {
        let mut dir = standard_normal_vector(n, &mut rng);
        let norm = dir.norm();
        if norm == 0.0 {
            continue;
        }
        dir /= norm;
        let pa: Vec<f64> = a.iter().map(|p| p.dot(&dir)).collect();
        let pb: Vec<f64> = b.iter().map(|p| p.dot(&dir)).collect();
        total += wasserstein_1d(pa, pb);
    }
    total / directions as f64
}

/// Exact 1D Wasserstein-1 distance between empirical measures, as the L1
/// distance between their CDFs; sample counts may differ.
pub fn wasserstein_1d(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    assert!(!a.is_empty() && !b.is_empty());
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let mut merged: Vec<f64> = a.iter().chain(b.iter()).cloned().collect();
    merged.sort_by(f64::total_cmp);
    let (mut ia, mut ib) = (0usize, 0usize);
    let mut w = 0.0;
    for win in merged.windows(2) {
        let (x0, x1) = (win[0], win[1]);
        while ia < a.len() && a[ia] <= x0 {
            ia += 1;
        }
        while ib < b.len() && b[ib] <= x0 {
            ib += 1;
        }
        let fa = ia as f64 / a.len() as f64;
        let fb = ib as f64 / b.len() as f64;
        w += (fa - fb).abs() * (x1 - x0);
    }
    w
}

/// Marginal mean/variance agreement of the variance-preserving process and
/// the time-changed variance-exploding process, `x_t = e^{-t} y_{e^{2t}-1}`,
/// checked in closed form on a random time grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VpVeReport {
    pub times: Vec<f64>,
    pub max_mean_dev: f64,
    pub max_var_dev: f64,
    pub holds: bool,
}

pub fn vp_ve_equivalence_check(seed: u64) -> VpVeReport {
    use rand::Rng;
    let mut rng = stream_rng(seed, 0);
    let m0: f64 = rng.random_range(-2.0..2.0);
    let v0: f64 = rng.random_range(0.5..2.0);
    let mut times = vec![0.0, std::f64::consts::LN_2];
    for _ in 0..10 {
        times.push(rng.random_range(0.0..3.0));
    }
    let mut max_mean_dev = 0.0f64;
    let mut max_var_dev = 0.0f64;
    for &t in &times {
        // VP marginal of x_t for x_0 ~ N(m0, v0)
        let vp_mean = (-t).exp() * m0;
        let vp_var = (-2.0 * t).exp() * v0 + 1.0 - (-2.0 * t).exp();
        // VE marginal at s = e^{2t} - 1, then scaled by e^{-t}
        let s = (2.0 * t).exp() - 1.0;
        let ve_mean = (-t).exp() * m0;
        let ve_var = (-2.0 * t).exp() * (v0 + s);
        max_mean_dev = max_mean_dev.max((vp_mean - ve_mean).abs());
        max_var_dev = max_var_dev.max((vp_var - ve_var).abs());
    }
    VpVeReport {
        times,
        max_mean_dev,
        max_var_dev,
        holds: max_mean_dev <= 1e-10 && max_var_dev <= 1e-10,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixture::test_support::{point_mass, symmetric_pair};
    use approx::assert_abs_diff_eq;

    #[test]
    fn score_error_of_oracle_is_zero() {
        let spec = symmetric_pair(2.0, 1.0);
        let t = 0.8;
        let report = score_l2_error(|y| spec.exact_score(y, t), &spec, t, 500, 3);
        assert!(report.estimate <= 1e-20, "estimate {}", report.estimate);
    }

    #[test]
    fn score_error_of_zero_model_is_dimension() {
        let spec = point_mass(1, 1.0, vec![0.0]);
        let report = score_l2_error(|y| DVector::zeros(y.len()), &spec, 0.0, 40_000, 5);
        // E||y||^2 = n = 1 under N(0,1); allow 3 standard errors
        assert!(
            (report.estimate - 1.0).abs() <= 3.0 * report.std_error,
            "estimate {} +- {}",
            report.estimate,
            report.std_error
        );
    }

    #[test]
    fn score_error_std_error_scaling() {
        let spec = point_mass(1, 1.0, vec![0.0]);
        let small = score_l2_error(|y| DVector::zeros(y.len()), &spec, 0.0, 10_000, 7);
        let large = score_l2_error(|y| DVector::zeros(y.len()), &spec, 0.0, 20_000, 7);
        let ratio = small.std_error / large.std_error;
        assert!((ratio - 2.0f64.sqrt()).abs() < 0.15, "ratio {ratio}");
    }

    #[test]
    fn spectrum_of_constant_function() {
        let spec = point_mass(1, 1.0, vec![1.5]);
        let report = hermite_coefficient_spectrum(&spec, 1.0, &DVector::zeros(1), 10).unwrap();
        assert_abs_diff_eq!(report.coeffs[0][0], 1.5, epsilon = 1e-10);
        for (mi, a) in report.indices.iter().zip(&report.coeffs).skip(1) {
            assert!(
                a.iter().all(|x| x.abs() < 1e-10),
                "degree {} coefficient {a:?}",
                mi.degree()
            );
        }
        assert!(report.tails[1] < 1e-10);
    }

    #[test]
    fn spectrum_of_identity_function() {
        // f(y) = y has coefficient sigma on k=1 in the orthonormal basis
        let sigma_sq = 2.25;
        let report = spectrum_of_fn(|y| y.clone(), 1, sigma_sq, &DVector::zeros(1), 8).unwrap();
        assert_abs_diff_eq!(report.coeffs[1][0], sigma_sq.sqrt(), epsilon = 1e-10);
        assert!(report.tails[2] < 1e-12);
    }

    #[test]
    fn spectrum_rejects_large_dimension() {
        let spec = point_mass(3, 1.0, vec![0.0, 0.0, 0.0]);
        assert!(matches!(
            hermite_coefficient_spectrum(&spec, 1.0, &DVector::zeros(3), 4),
            Err(DiagnosticsError::DimensionTooLarge(3))
        ));
    }

    #[test]
    fn spectrum_two_dimensional_product_structure() {
        // f(y) = (y0, y1) in 2D: coefficient sigma on each first-degree index
        let sigma_sq = 1.0;
        let report = spectrum_of_fn(|y| y.clone(), 2, sigma_sq, &DVector::zeros(2), 4).unwrap();
        for (mi, a) in report.indices.iter().zip(&report.coeffs) {
            match mi.entries() {
                [1, 0] => assert_abs_diff_eq!(a[0], 1.0, epsilon = 1e-10),
                [0, 1] => assert_abs_diff_eq!(a[1], 1.0, epsilon = 1e-10),
                _ => assert!(a.iter().all(|x| x.abs() < 1e-10)),
            }
        }
    }

    #[test]
    fn truncation_parseval_consistency() {
        let spec = symmetric_pair(1.0, 1.0);
        let report = hermite_coefficient_spectrum(&spec, 1.0, &DVector::zeros(1), 24).unwrap();
        for d in [0, 1, 4, 9, 20] {
            let (tail, direct) = truncation_check(&report, d).unwrap();
            assert_abs_diff_eq!(tail, direct, epsilon = 1e-8);
        }
        // d = 0: tail equals ||f||^2
        let (tail0, _) = truncation_check(&report, 0).unwrap();
        assert_abs_diff_eq!(tail0, 0.394294490398, epsilon = 1e-9);
    }

    #[test]
    fn truncation_of_constant_spectrum() {
        let spec = point_mass(1, 1.0, vec![0.7]);
        let report = hermite_coefficient_spectrum(&spec, 1.0, &DVector::zeros(1), 6).unwrap();
        let (tail, direct) = truncation_check(&report, 1).unwrap();
        assert!(tail < 1e-12 && direct < 1e-12);
        // degrees past every nonzero coefficient leave no tail
        let (tail, _) = truncation_check(&report, 5).unwrap();
        assert!(tail < 1e-12);
    }

    #[test]
    fn tv_bound_values() {
        assert_eq!(tv_upper_bound(0.0, 1.0, 4), 0.0);
        assert_abs_diff_eq!(
            tv_upper_bound(0.1, 1.0, 4),
            0.2 / 2f64.sqrt(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(tv_upper_bound(0.1, 1.0, 4), 0.141421, epsilon = 1e-6);
    }

    #[test]
    fn tv_bound_dominates_numeric_tv() {
        // split the integration at the density crossing points, then Simpson
        let sigma0_sq = 1.0f64;
        for &sigma_sq in &[0.01f64, 0.1, 0.5] {
            let v2 = sigma0_sq + sigma_sq;
            let cross = (v2 * sigma0_sq * (v2 / sigma0_sq).ln() / (v2 - sigma0_sq)).sqrt();
            let pdf = |v: f64, x: f64| {
                (-x * x / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt()
            };
            let diff = |x: f64| (pdf(sigma0_sq, x) - pdf(v2, x)).abs();
            let simpson = |lo: f64, hi: f64, m: usize| {
                let h = (hi - lo) / m as f64;
                let mut acc = diff(lo) + diff(hi);
                for i in 1..m {
                    acc += diff(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
                }
                acc * h / 3.0
            };
            let l = 40.0;
            let tv = 0.5
                * (simpson(-l, -cross, 20_000)
                    + simpson(-cross, cross, 20_000)
                    + simpson(cross, l, 20_000));
            let bound = tv_upper_bound(sigma_sq, sigma0_sq, 1);
            assert!(tv <= bound, "sigma_sq={sigma_sq}: tv {tv} > bound {bound}");
        }
    }

    #[test]
    fn change_of_measure_cases() {
        let r = change_of_measure_check(0.0, 1.0, 1.0, 200);
        assert_abs_diff_eq!(r.closed_form, 1.0, epsilon = 1e-12);
        assert!(r.holds);

        // mu = R = 1, a = 1: both sides equal e
        let r = change_of_measure_check(1.0, 1.0, 1.0, 200);
        assert_abs_diff_eq!(r.closed_form, std::f64::consts::E, epsilon = 1e-12);
        assert_abs_diff_eq!(r.bound, std::f64::consts::E, epsilon = 1e-12);
        assert_abs_diff_eq!(r.quadrature, r.closed_form, epsilon = 1e-8);
        assert!(r.holds);

        // mu = 0.5, R = 1, a = 2: e^{0.75} strictly below e^{3}
        let r = change_of_measure_check(0.5, 1.0, 2.0, 200);
        assert_abs_diff_eq!(r.closed_form, 0.75f64.exp(), epsilon = 1e-10);
        assert!(r.closed_form < r.bound);
        assert!(r.holds);
    }

    #[test]
    fn quality_metrics_identical_sets() {
        let spec = symmetric_pair(4.0, 1.0);
        let pts = spec.sample(500, 3);
        let means = spec.means();
        let m = sample_quality_metrics(&pts, &pts, &means, 16, 5);
        assert_eq!(m.sliced_w1, 0.0);
        for c in &m.clusters {
            assert_eq!(c.weight_error, 0.0);
            assert_eq!(c.mean_error, Some(0.0));
        }
    }

    #[test]
    fn quality_metrics_detect_shift() {
        let spec = point_mass(2, 1.0, vec![0.0, 0.0]);
        let reference = spec.sample(4000, 7);
        let shifted: Vec<DVector<f64>> = reference
            .iter()
            .map(|p| p + DVector::from_vec(vec![1.0, 0.0]))
            .collect();
        let means = vec![DVector::zeros(2)];
        let m = sample_quality_metrics(&shifted, &reference, &means, 32, 9);
        let err = m.clusters[0].mean_error.unwrap();
        assert!((err - 1.0).abs() < 0.05, "mean error {err}");
    }

    #[test]
    fn wasserstein_translation() {
        let a = vec![0.0, 1.0, 2.0];
        let b = vec![0.5, 1.5, 2.5];
        assert_abs_diff_eq!(wasserstein_1d(a, b), 0.5, epsilon = 1e-12);
        // unequal counts: point masses at 0 vs {0, 1}
        assert_abs_diff_eq!(
            wasserstein_1d(vec![0.0], vec![0.0, 1.0]),
            0.5,
            epsilon = 1e-12
        );
    }

    #[test]
    fn vp_ve_marginals_match() {
        for seed in 0..5 {
            let r = vp_ve_equivalence_check(seed);
            assert!(r.holds, "devs {} {}", r.max_mean_dev, r.max_var_dev);
        }
    }
}
