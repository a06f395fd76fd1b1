//! Gauss–Hermite quadrature against the standard normal weight.
//!
//! Nodes start from the Golub–Welsch eigendecomposition of the Jacobi
//! matrix of the probabilists' Hermite polynomials (tridiagonal, zero
//! diagonal, off-diagonal sqrt(k)) and are then polished by Newton steps on
//! the degree-m polynomial; weights are the Christoffel numbers
//! `1 / sum_{k<m} h_k(x)^2` in the orthonormal basis. The polish matters:
//! raw eigenvalues are only good to ~1e-11 for large rules, which high-degree
//! integrands amplify.

use nalgebra::{DMatrix, SymmetricEigen};

/// An m-point rule: `sum_l weights[l] * f(nodes[l])` approximates
/// `E[f(Z)]` for `Z ~ N(0,1)`, exactly for polynomials of degree <= 2m-1.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// Build the rule with `points` nodes.
    ///
    /// # Panics
    /// Panics if `points == 0`.
    pub fn new(points: usize) -> Self {
        assert!(points > 0, "quadrature rule needs at least one node");
        if points == 1 {
            return GaussHermite {
                nodes: vec![0.0],
                weights: vec![1.0],
            };
        }
        let mut jacobi = DMatrix::<f64>::zeros(points, points);
        for k in 1..points {
            let b = (k as f64).sqrt();
            jacobi[(k - 1, k)] = b;
            jacobi[(k, k - 1)] = b;
        }
        let eig = SymmetricEigen::new(jacobi);
        let mut nodes: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
        nodes.sort_by(f64::total_cmp);
        let mut weights = Vec::with_capacity(points);
        for node in &mut nodes {
            let mut x = *node;
            for _ in 0..4 {
                let (value, derivative, _) = orthonormal_eval(points, x);
                let step = value / derivative;
                x -= step;
                if step.abs() <= 1e-16 * (1.0 + x.abs()) {
                    break;
                }
            }
            *node = x;
            let (_, _, sum_sq) = orthonormal_eval(points, x);
            weights.push(1.0 / sum_sq);
        }
        GaussHermite { nodes, weights }
    }

    /// `E[f(Z)]` for `Z ~ N(0,1)`.
    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// Value and derivative of the orthonormal degree-`m` Hermite polynomial at
/// `x` (derivative via `h_m' = sqrt(m) h_{m-1}`), plus
/// `sum_{k<m} h_k(x)^2` for the Christoffel weight.
fn orthonormal_eval(m: usize, x: f64) -> (f64, f64, f64) {
    debug_assert!(m >= 1);
    let mut prev = 1.0f64; // h_0
    let mut cur = x; // h_1
    let mut sum_sq = prev * prev;
    for k in 2..=m {
        sum_sq += cur * cur;
        let kf = k as f64;
        let next = (x * cur - (kf - 1.0).sqrt() * prev) / kf.sqrt();
        prev = cur;
        cur = next;
    }
    // cur = h_m, prev = h_{m-1}, sum_sq = h_0^2 + ... + h_{m-1}^2
    (cur, (m as f64).sqrt() * prev, sum_sq)
}
