//! Gaussian expectations by Gauss–Hermite quadrature.

use std::f64::consts::PI;
use std::num::NonZeroUsize;

use gauss_quad::hermite::GaussHermite;

use crate::error::{invalid, Result};

/// Nodes and weights for `E[f(Z)]`, `Z ~ N(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussHermiteRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermiteRule {
    pub fn new(n: usize) -> Result<Self> {
        let deg = NonZeroUsize::new(n)
            .filter(|d| d.get() >= 2)
            .ok_or_else(|| invalid(format!("quadrature needs at least 2 nodes, got {n}")))?;
        let rule = GaussHermite::new(deg);
        // physicists' weight e^{-x^2}  ->  standard normal density
        let norm = PI.sqrt();
        let (nodes, weights) = rule
            .iter()
            .map(|(x, _)| {
                let (x, w) = polish(*x, n);
                (std::f64::consts::SQRT_2 * x, w / norm)
            })
            .unzip();
        Ok(Self { nodes, weights })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `(z_k, w_k)` pairs with `Σ w_k = 1`.
    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes.iter().copied().zip(self.weights.iter().copied())
    }

    pub fn expectation<F: FnMut(f64) -> f64>(&self, mut f: F, mean: f64, std: f64) -> f64 {
        self.iter().map(|(z, w)| w * f(mean + std * z)).sum()
    }
}

/// Orthonormal Hermite values `(h_n(x), h_{n-1}(x))`.
fn hermite_pair(x: f64, n: usize) -> (f64, f64) {
    let mut prev = 0.0;
    let mut cur = PI.powf(-0.25);
    for k in 1..=n {
        let next = (2.0 / k as f64).sqrt() * x * cur - ((k - 1) as f64 / k as f64).sqrt() * prev;
        prev = cur;
        cur = next;
    }
    (cur, prev)
}

/// Newton refinement of an eigenvalue-based node, with the weight recomputed
/// from `w = 1 / (n h_{n-1}(x)^2)`.
fn polish(mut x: f64, n: usize) -> (f64, f64) {
    for _ in 0..3 {
        let (h, h_prev) = hermite_pair(x, n);
        let slope = (2.0 * n as f64).sqrt() * h_prev;
        x -= h / slope;
    }
    let (_, h_prev) = hermite_pair(x, n);
    (x, 1.0 / (n as f64 * h_prev * h_prev))
}

pub fn gauss_hermite_expectation<F: FnMut(f64) -> f64>(f: F, mean: f64, std: f64, nodes: usize) -> Result<f64> {
    if !(std >= 0.0) {
        return Err(invalid(format!("standard deviation must be >= 0, got {std}")));
    }
    Ok(GaussHermiteRule::new(nodes)?.expectation(f, mean, std))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Raw moments of N(mean, std^2) by the binomial expansion over the
    /// central moments `E[Z^k] = (k-1)!!` for even k.
    fn analytic_moment(k: u32, mean: f64, std: f64) -> f64 {
        let double_fact = |n: u32| -> f64 { (1..=n).rev().step_by(2).map(f64::from).product() };
        (0..=k)
            .filter(|j| j % 2 == 0)
            .map(|j| {
                let binom = (0..j).fold(1.0, |acc, i| acc * f64::from(k - i) / f64::from(i + 1));
                let central = if j == 0 { 1.0 } else { double_fact(j - 1) };
                binom * mean.powi((k - j) as i32) * std.powi(j as i32) * central
            })
            .sum()
    }

    #[test]
    fn low_order_examples() {
        assert!((gauss_hermite_expectation(|_| 1.0, 0.3, 2.0, 15).unwrap() - 1.0).abs() < 1e-13);
        assert!((gauss_hermite_expectation(|x| x, 3.0, 1.7, 15).unwrap() - 3.0).abs() < 1e-12);
        assert!((gauss_hermite_expectation(|x| x * x, 0.0, 2.0, 15).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn exact_up_to_degree_2n_minus_1() {
        for n in [11usize, 15] {
            for k in 0..(2 * n as u32) {
                let (mean, std) = (0.0, 1.0);
                let got = gauss_hermite_expectation(|x| x.powi(k as i32), mean, std, n).unwrap();
                let want = analytic_moment(k, mean, std);
                // odd moments vanish, so scale by the absolute moment
                let scale = gauss_hermite_expectation(|x| x.abs().powi(k as i32), mean, std, n).unwrap();
                assert!((got - want).abs() / scale < 1e-12, "n={n} k={k}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn shifted_scaled_moments() {
        for k in 0..8u32 {
            let got = gauss_hermite_expectation(|x| x.powi(k as i32), 0.5, 1.5, 15).unwrap();
            let want = analytic_moment(k, 0.5, 1.5);
            assert!((got - want).abs() / want.abs().max(1.0) < 1e-12, "k={k}");
        }
    }

    #[test]
    fn rejects_degenerate_rules() {
        assert!(GaussHermiteRule::new(0).is_err());
        assert!(GaussHermiteRule::new(1).is_err());
        assert!(gauss_hermite_expectation(|x| x, 0.0, -1.0, 11).is_err());
    }
}
