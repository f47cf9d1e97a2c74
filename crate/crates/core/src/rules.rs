//! Gauss-Hermite rules in one dimension and their product grids.
//!
//! Weights follow the Lebesgue-measure convention: `Σ f(x_j) ω_j ≈ ∫ f(x) dx`
//! for `f` close to a Gaussian times a polynomial. Multiplying the weights by
//! the standard normal density recovers the Gaussian-measure rule, which is
//! exact for polynomials of degree up to `2k - 1`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{AghqError, Result};

/// Default cap on the number of points in a product grid.
pub const DEFAULT_GRID_CAP: usize = 10_000_000;

const ZERO_SNAP: f64 = 1e-13;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// How integrand evaluations over a grid are scheduled.
///
/// `Parallel` is only sound when the callback tolerates concurrent calls;
/// results are reduced in node order either way, so the two modes agree
/// bit for bit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Evaluation {
    #[default]
    Sequential,
    Parallel,
}

/// Probabilist Hermite polynomial `He_k(x)` by the three-term recurrence.
pub fn hermite_eval(k: usize, x: f64) -> f64 {
    let mut prev = 1.0;
    if k == 0 {
        return prev;
    }
    let mut cur = x;
    for j in 1..k {
        let next = x * cur - j as f64 * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// `(He_k(x), He_{k-1}(x))` for `k ≥ 1`.
fn hermite_pair(k: usize, x: f64) -> (f64, f64) {
    let mut prev = 1.0;
    let mut cur = x;
    for j in 1..k {
        let next = x * cur - j as f64 * prev;
        prev = cur;
        cur = next;
    }
    (cur, prev)
}

/// A one-dimensional Gauss-Hermite rule with nodes in ascending order.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadRule1D {
    pub k: usize,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Standard normal density.
#[cfg(test)]
pub(crate) fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

/// Builds the `k`-point rule from the Golub-Welsch eigenproblem of the
/// probabilist Hermite Jacobi matrix (zero diagonal, off-diagonal `√j`).
/// Eigenvalues are polished by Newton steps on `He_k` and weights taken from
/// the closed form at the polished nodes.
pub fn ghq_rule_1d(k: usize) -> Result<QuadRule1D> {
    if k == 0 {
        return Err(AghqError::InvalidArgument(
            "number of quadrature points must be at least 1".into(),
        ));
    }
    let mut jacobi = DMatrix::<f64>::zeros(k, k);
    for j in 1..k {
        let b = (j as f64).sqrt();
        jacobi[(j - 1, j)] = b;
        jacobi[(j, j - 1)] = b;
    }
    let eig = SymmetricEigen::new(jacobi);
    let ln_k_factorial: f64 = (2..=k).map(|j| (j as f64).ln()).sum();

    let mut pairs: Vec<(f64, f64)> = eig
        .eigenvalues
        .iter()
        .map(|&x0| {
            // Newton on He_k sharpens the eigenvalue; He_k' = k He_{k-1}.
            let mut x = x0;
            for _ in 0..3 {
                let (hk, hk1) = hermite_pair(k, x);
                let step = hk / (k as f64 * hk1);
                if !step.is_finite() {
                    break;
                }
                x -= step;
            }
            // Gaussian-measure weight k! / (k He_{k-1}(x))², moved to Lebesgue measure by 1/φ(x).
            let (_, hk1) = hermite_pair(k, x);
            let log_w = ln_k_factorial - 2.0 * (k as f64 * hk1).abs().ln() + 0.5 * x * x + LN_SQRT_2PI;
            (x, log_w.exp())
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut nodes: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let mut weights: Vec<f64> = pairs.iter().map(|p| p.1).collect();

    // Enforce exact mirror symmetry; the eigensolver leaves ~1e-16 asymmetry.
    for i in 0..k / 2 {
        let j = k - 1 - i;
        let x = 0.5 * (nodes[j] - nodes[i]);
        let w = 0.5 * (weights[i] + weights[j]);
        nodes[i] = -x;
        nodes[j] = x;
        weights[i] = w;
        weights[j] = w;
    }
    for x in nodes.iter_mut() {
        if x.abs() < ZERO_SNAP {
            *x = 0.0;
        }
    }

    Ok(QuadRule1D { k, nodes, weights })
}

/// A `d`-dimensional product rule with `k` points per dimension.
///
/// Rows are ordered lexicographically with the first coordinate varying
/// fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadRuleProduct {
    pub dim: usize,
    pub k: usize,
    /// `k^d × d`
    pub nodes: DMatrix<f64>,
    pub weights: DVector<f64>,
    /// Per-row index of each coordinate into the 1D rule, `k^d × d`.
    pub(crate) indices: Vec<Vec<usize>>,
    pub(crate) rule_1d: QuadRule1D,
}

impl QuadRuleProduct {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn rule_1d(&self) -> &QuadRule1D {
        &self.rule_1d
    }

    /// Index into the 1D rule of coordinate `coord` for grid row `row`.
    pub fn index(&self, row: usize, coord: usize) -> usize {
        self.indices[row][coord]
    }

    pub fn node(&self, row: usize) -> DVector<f64> {
        self.nodes.row(row).transpose()
    }
}

pub fn product_rule(d: usize, k: usize) -> Result<QuadRuleProduct> {
    product_rule_with_cap(d, k, DEFAULT_GRID_CAP)
}

pub fn product_rule_with_cap(d: usize, k: usize, cap: usize) -> Result<QuadRuleProduct> {
    if d == 0 {
        return Err(AghqError::InvalidArgument("dimension must be at least 1".into()));
    }
    let rule = ghq_rule_1d(k)?;
    let points = (k as u128).checked_pow(d as u32).unwrap_or(u128::MAX);
    if points > cap as u128 {
        return Err(AghqError::GridTooLarge { points, cap });
    }
    let m = points as usize;

    let mut nodes = DMatrix::<f64>::zeros(m, d);
    let mut weights = DVector::<f64>::zeros(m);
    let mut indices = Vec::with_capacity(m);
    let mut idx = vec![0usize; d];
    for row in 0..m {
        let mut w = 1.0;
        for (c, &i) in idx.iter().enumerate() {
            nodes[(row, c)] = rule.nodes[i];
            w *= rule.weights[i];
        }
        weights[row] = w;
        indices.push(idx.clone());
        // odometer, first coordinate fastest
        for slot in idx.iter_mut() {
            *slot += 1;
            if *slot < k {
                break;
            }
            *slot = 0;
        }
    }

    Ok(QuadRuleProduct {
        dim: d,
        k,
        nodes,
        weights,
        indices,
        rule_1d: rule,
    })
}

/// Evaluates `f` at every row of `nodes`, failing on the first non-finite value.
pub(crate) fn evaluate_rows<F>(f: &F, nodes: &DMatrix<f64>, mode: Evaluation) -> Result<Vec<f64>>
where
    F: Fn(&DVector<f64>) -> f64 + Sync,
{
    let eval = |row: usize| -> Result<f64> {
        let x = nodes.row(row).transpose();
        let v = f(&x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(AghqError::non_finite(format!("node {row} ({:?})", x.as_slice()), v))
        }
    };
    match mode {
        Evaluation::Sequential => (0..nodes.nrows()).map(eval).collect(),
        Evaluation::Parallel => (0..nodes.nrows()).into_par_iter().map(eval).collect(),
    }
}

/// `Σ_j f(x_j) ω_j` over the product rule, evaluated in node order.
pub fn quadrature<F>(f: F, rule: &QuadRuleProduct) -> Result<f64>
where
    F: Fn(&DVector<f64>) -> f64 + Sync,
{
    quadrature_with(f, rule, Evaluation::Sequential)
}

pub fn quadrature_with<F>(f: F, rule: &QuadRuleProduct, mode: Evaluation) -> Result<f64>
where
    F: Fn(&DVector<f64>) -> f64 + Sync,
{
    let values = evaluate_rows(&f, &rule.nodes, mode)?;
    Ok(values.iter().zip(rule.weights.iter()).map(|(v, w)| v * w).sum())
}
