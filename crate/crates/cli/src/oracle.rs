//! Brute-force tensor-grid integration for the two-group random-intercept model.

use crate::error::CliError;
use crate::models::PoissonGlmm;

pub const GRID_POINTS: usize = 101;
pub const THETA_RANGE: (f64, f64) = (-12.0, 4.0);
const HALF_WIDTH_SD: f64 = 8.0;

fn simpson(i: usize, n: usize) -> f64 {
    if i == 0 || i == n - 1 {
        1.0 / 3.0
    } else if i % 2 == 1 {
        4.0 / 3.0
    } else {
        2.0 / 3.0
    }
}

/// `log ∫∫∫ π(u₁, u₂, θ, Y)` on a 101³ grid: Simpson in `θ` over
/// [`THETA_RANGE`] and, for each `θ`, Simpson in each `u_i` over ±8
/// conditional standard deviations around the conditional mode.
pub fn dense_grid_log_evidence(model: &PoissonGlmm) -> Result<f64, CliError> {
    if model.groups() != 2 {
        return Err(CliError::Config(format!(
            "the dense-grid oracle needs exactly 2 groups, got {}",
            model.groups()
        )));
    }
    let n = GRID_POINTS;
    let (t0, t1) = THETA_RANGE;
    let ht = (t1 - t0) / (n - 1) as f64;
    let mut terms = Vec::with_capacity(n * n * n);
    for a in 0..n {
        let theta = t0 + ht * a as f64;
        let prior = model.log_prior(theta);
        let axes: Vec<Vec<(f64, f64)>> = (0..2)
            .map(|i| {
                let (centre, sd) = model.conditional_mode(i, theta);
                let lo = centre - HALF_WIDTH_SD * sd;
                let h = 2.0 * HALF_WIDTH_SD * sd / (n - 1) as f64;
                (0..n)
                    .map(|b| {
                        let u = lo + h * b as f64;
                        (model.group_term(i, u, theta), (h * simpson(b, n)).ln())
                    })
                    .collect()
            })
            .collect();
        let base = prior + (ht * simpson(a, n)).ln();
        for (v1, lw1) in &axes[0] {
            for (v2, lw2) in &axes[1] {
                terms.push(base + v1 + lw1 + v2 + lw2);
            }
        }
    }
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln())
}
