//! Scaled multivariate Hermite polynomials as regression features.
//!
//! `h_{k,sigma^2}(z) = h_{k,1}(z/sigma)` where `h_{k,1}` is the probabilists'
//! Hermite polynomial, satisfying the three-term recurrence
//! `h_k(u) = u h_{k-1}(u) - (k-1) h_{k-2}(u)`. Multivariate polynomials are
//! products over coordinates, indexed by a multi-index, and form an
//! orthogonal basis of `L^2(N(0, sigma^2 I))` with `||h_k||^2 = k!`.
//! The normalized variant divides by `sqrt(k!)` so the basis is orthonormal
//! and a coefficient block's Frobenius norm equals the function's L2 norm.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default ceiling on the feature count `C(n+d, d)`.
pub const DEFAULT_BASIS_CAP: usize = 200_000;

#[derive(Debug, Error)]
pub enum HermiteError {
    #[error("feature basis with n={dim}, d={degree} has {required} indices, exceeding cap {cap}")]
    BasisTooLarge {
        dim: usize,
        degree: usize,
        required: u128,
        cap: usize,
    },
    #[error("ambient dimension must be at least 1")]
    ZeroDimension,
}

/// Per-coordinate degrees of one basis polynomial.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiIndex {
    entries: Vec<u32>,
}

impl MultiIndex {
    pub fn new(entries: Vec<u32>) -> Self {
        MultiIndex { entries }
    }

    pub fn entries(&self) -> &[u32] {
        &self.entries
    }

    /// Total degree `|k|`.
    pub fn degree(&self) -> u32 {
        self.entries.iter().sum()
    }

    pub fn dim(&self) -> usize {
        self.entries.len()
    }
}

/// `C(n+d, d)` without overflow for the sizes we ever accept.
fn basis_size(n: usize, d: usize) -> u128 {
    // C(n+d, d) = prod_{i=1..d} (n+i)/i, exact at every step
    let mut acc: u128 = 1;
    for i in 1..=d as u128 {
        acc = acc.saturating_mul(n as u128 + i) / i;
    }
    acc
}

/// All multi-indices with `|k| <= d` in graded lexicographic order.
///
/// Within each total degree, indices are ordered lexicographically with the
/// leading coordinate largest first, e.g. for n=2, d=1: (0,0), (1,0), (0,1).
/// The ordering is deterministic; callers rely on it for coefficient layout.
pub fn enumerate_multi_indices(
    n: usize,
    d: usize,
    cap: usize,
) -> Result<Vec<MultiIndex>, HermiteError> {
    if n == 0 {
        return Err(HermiteError::ZeroDimension);
    }
    let required = basis_size(n, d);
    if required > cap as u128 {
        return Err(HermiteError::BasisTooLarge {
            dim: n,
            degree: d,
            required,
            cap,
        });
    }
    let mut out = Vec::with_capacity(required as usize);
    let mut scratch = vec![0u32; n];
    for degree in 0..=d as u32 {
        push_compositions(degree, 0, &mut scratch, &mut out);
    }
    debug_assert_eq!(out.len() as u128, required);
    Ok(out)
}

fn push_compositions(remaining: u32, pos: usize, scratch: &mut [u32], out: &mut Vec<MultiIndex>) {
    if pos == scratch.len() - 1 {
        scratch[pos] = remaining;
        out.push(MultiIndex::new(scratch.to_vec()));
        return;
    }
    for v in (0..=remaining).rev() {
        scratch[pos] = v;
        push_compositions(remaining - v, pos + 1, scratch, out);
    }
}

/// `h_{k,sigma^2}(z) = h_{k,1}(z/sigma)` by the three-term recurrence.
pub fn hermite_1d(k: usize, sigma_sq: f64, z: f64) -> f64 {
    let u = z / sigma_sq.sqrt();
    let mut prev = 1.0; // h_0
    if k == 0 {
        return prev;
    }
    let mut cur = u; // h_1
    for j in 2..=k {
        let next = u * cur - (j as f64 - 1.0) * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// Values `h_{0..=kmax}` at one point, orthonormalized when requested.
///
/// The normalized recurrence divides through by `sqrt(k)` at each step,
/// which keeps magnitudes representable far beyond where the raw values
/// overflow.
fn axis_values(kmax: usize, u: f64, normalized: bool) -> Vec<f64> {
    let mut vals = Vec::with_capacity(kmax + 1);
    vals.push(1.0);
    if kmax == 0 {
        return vals;
    }
    if normalized {
        vals.push(u);
        for k in 2..=kmax {
            let kf = k as f64;
            let next = (u * vals[k - 1] - (kf - 1.0).sqrt() * vals[k - 2]) / kf.sqrt();
            vals.push(next);
        }
    } else {
        vals.push(u);
        for k in 2..=kmax {
            let next = u * vals[k - 1] - (k as f64 - 1.0) * vals[k - 2];
            vals.push(next);
        }
    }
    vals
}

/// An ordered Hermite feature basis: all `h_k` with `|k| <= degree`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBasis {
    dim: usize,
    degree: usize,
    sigma_sq: f64,
    normalized: bool,
    indices: Vec<MultiIndex>,
}

impl FeatureBasis {
    pub fn new(
        dim: usize,
        degree: usize,
        sigma_sq: f64,
        normalized: bool,
        cap: usize,
    ) -> Result<Self, HermiteError> {
        assert!(sigma_sq > 0.0, "sigma_sq must be positive");
        let indices = enumerate_multi_indices(dim, degree, cap)?;
        Ok(FeatureBasis {
            dim,
            degree,
            sigma_sq,
            normalized,
            indices,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn sigma_sq(&self) -> f64 {
        self.sigma_sq
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    /// Number of features, `C(n+d, d)`.
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Feature vector at `y`, with polynomials centered at `center`:
    /// entry for multi-index k is `prod_i h_{k_i, sigma^2}(y_i - center_i)`,
    /// divided by `sqrt(k!)` in the normalized basis.
    pub fn feature_vector(&self, y: &DVector<f64>, center: &DVector<f64>) -> DVector<f64> {
        assert_eq!(y.len(), self.dim, "point dimension mismatch");
        assert_eq!(center.len(), self.dim, "center dimension mismatch");
        let sigma = self.sigma_sq.sqrt();
        let per_axis: Vec<Vec<f64>> = (0..self.dim)
            .map(|i| axis_values(self.degree, (y[i] - center[i]) / sigma, self.normalized))
            .collect();
        DVector::from_iterator(
            self.indices.len(),
            self.indices.iter().map(|mi| {
                mi.entries()
                    .iter()
                    .enumerate()
                    .map(|(axis, &k)| per_axis[axis][k as usize])
                    .product::<f64>()
            }),
        )
    }
}
