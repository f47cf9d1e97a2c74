//! Demo models with simulated data.

use aghq::{LatentBundle, ObjectiveBundle};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use statrs::distribution::{ContinuousCDF, Gamma};
use statrs::function::gamma::ln_gamma;

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `y_i ~ Poisson(λ)` with `λ ~ Exponential(1)`, fitted on `η = log λ`.
#[derive(Debug, Clone)]
pub struct ConjugatePoisson {
    pub y: Vec<f64>,
}

impl ConjugatePoisson {
    pub const TRUE_RATE: f64 = 5.0;

    pub fn simulate(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Poisson::new(Self::TRUE_RATE).expect("positive rate");
        ConjugatePoisson {
            y: (0..n).map(|_| dist.sample(&mut rng)).collect(),
        }
    }

    pub fn n(&self) -> f64 {
        self.y.len() as f64
    }

    pub fn sum(&self) -> f64 {
        self.y.iter().sum()
    }

    fn log_factorials(&self) -> f64 {
        self.y.iter().map(|v| ln_gamma(v + 1.0)).sum()
    }

    /// `log π(η, Y) = η(Σy + 1) − (n + 1)e^η − Σ log y_i!`
    pub fn bundle(&self) -> ObjectiveBundle {
        let (s, n, c) = (self.sum(), self.n(), self.log_factorials());
        ObjectiveBundle::new(1, move |x| x[0] * (s + 1.0) - (n + 1.0) * x[0].exp() - c)
            .with_gradient(move |x| DVector::from_element(1, s + 1.0 - (n + 1.0) * x[0].exp()))
            .with_hessian(move |x| DMatrix::from_element(1, 1, -(n + 1.0) * x[0].exp()))
    }

    pub fn log_evidence(&self) -> f64 {
        let s = self.sum();
        ln_gamma(1.0 + s) - (1.0 + s) * (self.n() + 1.0).ln() - self.log_factorials()
    }

    pub fn mode(&self) -> f64 {
        ((self.sum() + 1.0) / (self.n() + 1.0)).ln()
    }

    /// `λ | Y ~ Gamma(1 + Σy, rate n + 1)`.
    pub fn posterior(&self) -> Gamma {
        Gamma::new(1.0 + self.sum(), self.n() + 1.0).expect("valid gamma parameters")
    }

    pub fn quantile(&self, p: f64) -> f64 {
        self.posterior().inverse_cdf(p)
    }
}

/// Poisson random-intercept model: `y_ij ~ Poisson(exp(β + u_i))`,
/// `u_i ~ N(0, σ²)`, known `β`, `σ ~ Exponential(ln 2)` so that
/// `P(σ > 1) = 1/2`. Latent `W = u`, hyperparameter `θ = log σ`.
#[derive(Debug, Clone)]
pub struct PoissonGlmm {
    pub y: Vec<Vec<f64>>,
    pub beta: f64,
    pub prior_rate: f64,
}

impl PoissonGlmm {
    pub const TRUE_SIGMA: f64 = 0.5;

    pub fn simulate(groups: usize, per_group: usize, seed: u64) -> Self {
        let beta = 3f64.ln();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, Self::TRUE_SIGMA).expect("positive sd");
        let y = (0..groups)
            .map(|_| {
                let u = normal.sample(&mut rng);
                let dist = Poisson::new((beta + u).exp()).expect("positive rate");
                (0..per_group).map(|_| dist.sample(&mut rng)).collect()
            })
            .collect();
        PoissonGlmm {
            y,
            beta,
            prior_rate: 2f64.ln(),
        }
    }

    pub fn groups(&self) -> usize {
        self.y.len()
    }

    fn group_stats(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let sums = self.y.iter().map(|g| g.iter().sum()).collect();
        let counts = self.y.iter().map(|g| g.len() as f64).collect();
        let lg = self
            .y
            .iter()
            .map(|g| g.iter().map(|v| ln_gamma(v + 1.0)).sum())
            .collect();
        (sums, counts, lg)
    }

    /// Log prior of `θ = log σ`, Jacobian included.
    pub fn log_prior(&self, theta: f64) -> f64 {
        self.prior_rate.ln() - self.prior_rate * theta.exp() + theta
    }

    /// Log density of group `i`'s counts and latent `u` at `θ`.
    pub fn group_term(&self, i: usize, u: f64, theta: f64) -> f64 {
        let eta = self.beta + u;
        let g = &self.y[i];
        let lg: f64 = g.iter().map(|v| ln_gamma(v + 1.0)).sum();
        g.iter().sum::<f64>() * eta
            - g.len() as f64 * eta.exp()
            - lg
            - 0.5 * LN_2PI
            - theta
            - 0.5 * u * u * (-2.0 * theta).exp()
    }

    pub fn bundle(&self) -> LatentBundle {
        let m = self.groups();
        let (sums, counts, lg) = self.group_stats();
        let (beta, rate) = (self.beta, self.prior_rate);
        let (s1, c1) = (sums.clone(), counts.clone());
        let c2 = counts.clone();
        LatentBundle::new(
            m,
            1,
            move |u, t| {
                let th = t[0];
                let prec = (-2.0 * th).exp();
                let mut total = rate.ln() - rate * th.exp() + th;
                for i in 0..m {
                    let eta = beta + u[i];
                    total += s1[i] * eta - c1[i] * eta.exp() - lg[i] - 0.5 * LN_2PI - th - 0.5 * u[i] * u[i] * prec;
                }
                total
            },
            move |u, t| {
                let prec = (-2.0 * t[0]).exp();
                DVector::from_fn(m, |i, _| sums[i] - counts[i] * (beta + u[i]).exp() - u[i] * prec)
            },
            move |u, t| {
                let prec = (-2.0 * t[0]).exp();
                DMatrix::from_fn(m, m, |i, j| {
                    if i == j {
                        c2[i] * (beta + u[i]).exp() + prec
                    } else {
                        0.0
                    }
                })
            },
        )
    }

    /// Mode and conditional sd of `u_i` at fixed `θ`, by damped Newton.
    pub fn conditional_mode(&self, i: usize, theta: f64) -> (f64, f64) {
        let s: f64 = self.y[i].iter().sum();
        let n = self.y[i].len() as f64;
        let prec = (-2.0 * theta).exp();
        let mut u = 0.0;
        for _ in 0..200 {
            let g = s - n * (self.beta + u).exp() - u * prec;
            let h = n * (self.beta + u).exp() + prec;
            let step = g / h;
            u += step.clamp(-1.0, 1.0);
            if step.abs() < 1e-14 {
                break;
            }
        }
        let h = n * (self.beta + u).exp() + prec;
        (u, 1.0 / h.sqrt())
    }
}
