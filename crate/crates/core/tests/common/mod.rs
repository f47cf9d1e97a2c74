#![allow(dead_code)]

use aghq::{LatentBundle, ObjectiveBundle};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use statrs::distribution::{ContinuousCDF, Gamma};
use statrs::function::gamma::ln_gamma;

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub fn poisson_counts(n: usize, rate: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Poisson::new(rate).unwrap();
    (0..n).map(|_| dist.sample(&mut rng)).collect()
}

/// Poisson counts with a unit-rate exponential prior on λ, on `η = log λ`.
pub struct Conjugate {
    pub y: Vec<f64>,
    pub bundle: ObjectiveBundle,
}

impl Conjugate {
    pub fn new(y: Vec<f64>) -> Self {
        let s: f64 = y.iter().sum();
        let n = y.len() as f64;
        let c: f64 = y.iter().map(|v| ln_gamma(v + 1.0)).sum();
        let bundle = ObjectiveBundle::new(1, move |x| x[0] * (s + 1.0) - (n + 1.0) * x[0].exp() - c)
            .with_gradient(move |x| DVector::from_element(1, s + 1.0 - (n + 1.0) * x[0].exp()))
            .with_hessian(move |x| DMatrix::from_element(1, 1, -(n + 1.0) * x[0].exp()));
        Conjugate { y, bundle }
    }

    pub fn sum(&self) -> f64 {
        self.y.iter().sum()
    }

    pub fn n(&self) -> f64 {
        self.y.len() as f64
    }

    pub fn log_evidence(&self) -> f64 {
        let s = self.sum();
        ln_gamma(1.0 + s) - (1.0 + s) * (self.n() + 1.0).ln() - self.y.iter().map(|v| ln_gamma(v + 1.0)).sum::<f64>()
    }

    pub fn mode(&self) -> f64 {
        ((self.sum() + 1.0) / (self.n() + 1.0)).ln()
    }

    /// Posterior of λ is Gamma(1 + Σy, rate n + 1).
    pub fn lambda_posterior(&self) -> Gamma {
        Gamma::new(1.0 + self.sum(), self.n() + 1.0).unwrap()
    }

    pub fn lambda_quantile(&self, p: f64) -> f64 {
        self.lambda_posterior().inverse_cdf(p)
    }
}

/// Gaussian log density `c − ½ (x − μ)ᵀ H (x − μ)` with exact derivatives,
/// and its log integral.
pub fn gaussian_bundle(mu: DVector<f64>, h: DMatrix<f64>, c: f64) -> (ObjectiveBundle, f64) {
    let d = mu.len();
    let log_det = 2.0
        * h.clone()
            .cholesky()
            .unwrap()
            .l()
            .diagonal()
            .iter()
            .map(|v| v.ln())
            .sum::<f64>();
    let truth = c + 0.5 * d as f64 * LN_2PI - 0.5 * log_det;
    let (mu2, h2, h3) = (mu.clone(), h.clone(), h.clone());
    let bundle = ObjectiveBundle::new(d, move |x| {
        let r = x - &mu;
        c - 0.5 * r.dot(&(&h * &r))
    })
    .with_gradient(move |x| -(&h2 * (x - &mu2)))
    .with_hessian(move |_| -h3.clone());
    (bundle, truth)
}

/// `AᵀA + 0.5 I` with standard normal entries in `A`.
pub fn random_precision(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
    a.transpose() * a + DMatrix::identity(d, d) * 0.5
}

/// `y_ij = β + u_i + ε_ij` with `u_i ~ N(0, σ_u²)`, `ε ~ N(0, σ²)`, `β ~ N(0, τ²)`;
/// `W = u`, `θ = β`.
pub struct LinearRandomIntercept {
    pub y: Vec<Vec<f64>>,
    pub sigma: f64,
    pub sigma_u: f64,
    pub tau: f64,
}

fn normal_logpdf(x: f64, mean: f64, sd: f64) -> f64 {
    -0.5 * ((x - mean) / sd).powi(2) - sd.ln() - 0.5 * LN_2PI
}

impl LinearRandomIntercept {
    pub fn simulate(groups: usize, per_group: usize, seed: u64) -> Self {
        let (sigma, sigma_u, tau) = (0.8, 1.3, 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut normal = || rng.sample::<f64, _>(rand_distr::StandardNormal);
        let beta = 1.5;
        let y = (0..groups)
            .map(|_| {
                let u = sigma_u * normal();
                (0..per_group).map(|_| beta + u + sigma * normal()).collect()
            })
            .collect();
        LinearRandomIntercept { y, sigma, sigma_u, tau }
    }

    pub fn bundle(&self) -> LatentBundle {
        let m = self.y.len();
        let (y1, y2) = (self.y.clone(), self.y.clone());
        let (s, su, tau) = (self.sigma, self.sigma_u, self.tau);
        let counts: Vec<f64> = self.y.iter().map(|g| g.len() as f64).collect();
        LatentBundle::new(
            m,
            1,
            move |u, t| {
                let mut total = normal_logpdf(t[0], 0.0, tau);
                for (i, group) in y1.iter().enumerate() {
                    total += normal_logpdf(u[i], 0.0, su);
                    total += group.iter().map(|v| normal_logpdf(*v, t[0] + u[i], s)).sum::<f64>();
                }
                total
            },
            move |u, t| {
                DVector::from_fn(m, |i, _| {
                    -u[i] / (su * su) + y2[i].iter().map(|v| v - t[0] - u[i]).sum::<f64>() / (s * s)
                })
            },
            move |_, _| {
                DMatrix::from_fn(m, m, |i, j| {
                    if i == j {
                        1.0 / (su * su) + counts[i] / (s * s)
                    } else {
                        0.0
                    }
                })
            },
        )
    }

    /// `log p(y)` with `y ~ N(0, σ² I + σ_u² Z Zᵀ + τ² 11ᵀ)`.
    pub fn log_evidence(&self) -> f64 {
        let flat: Vec<(usize, f64)> = self
            .y
            .iter()
            .enumerate()
            .flat_map(|(i, g)| g.iter().map(move |v| (i, *v)))
            .collect();
        let n = flat.len();
        let cov = DMatrix::from_fn(n, n, |a, b| {
            let mut c = self.tau * self.tau;
            if flat[a].0 == flat[b].0 {
                c += self.sigma_u * self.sigma_u;
            }
            if a == b {
                c += self.sigma * self.sigma;
            }
            c
        });
        let chol = cov.cholesky().unwrap();
        let y = DVector::from_iterator(n, flat.iter().map(|p| p.1));
        let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        -0.5 * y.dot(&chol.solve(&y)) - 0.5 * log_det - 0.5 * n as f64 * LN_2PI
    }
}

/// `y_ij ~ Poisson(exp(β + u_i))`, `u_i ~ N(0, σ²)`, known `β`,
/// `σ ~ Exponential(rate)` with `θ = log σ`; `W = u`.
pub struct PoissonRandomIntercept {
    pub y: Vec<Vec<f64>>,
    pub beta: f64,
    pub rate: f64,
}

impl PoissonRandomIntercept {
    pub fn new(y: Vec<Vec<f64>>) -> Self {
        PoissonRandomIntercept {
            y,
            beta: 3f64.ln(),
            rate: 2f64.ln(),
        }
    }

    /// Log density of one group's counts and latent given `θ`.
    fn group_term(&self, i: usize, u: f64, theta: f64, lgamma_sum: f64) -> f64 {
        let eta = self.beta + u;
        let g = &self.y[i];
        g.iter().sum::<f64>() * eta
            - g.len() as f64 * eta.exp()
            - lgamma_sum
            - 0.5 * LN_2PI
            - theta
            - 0.5 * u * u * (-2.0 * theta).exp()
    }

    fn theta_prior(&self, theta: f64) -> f64 {
        self.rate.ln() - self.rate * theta.exp() + theta
    }

    pub fn bundle(&self) -> LatentBundle {
        let m = self.y.len();
        let sums: Vec<f64> = self.y.iter().map(|g| g.iter().sum()).collect();
        let counts: Vec<f64> = self.y.iter().map(|g| g.len() as f64).collect();
        let lg: Vec<f64> = self
            .y
            .iter()
            .map(|g| g.iter().map(|v| ln_gamma(v + 1.0)).sum())
            .collect();
        let (beta, rate) = (self.beta, self.rate);
        let (s1, c1, s2, c2, c3) = (sums.clone(), counts.clone(), sums, counts.clone(), counts);
        LatentBundle::new(
            m,
            1,
            move |u, t| {
                let th = t[0];
                let mut total = rate.ln() - rate * th.exp() + th;
                for i in 0..m {
                    let eta = beta + u[i];
                    total += s1[i] * eta
                        - c1[i] * eta.exp()
                        - lg[i]
                        - 0.5 * LN_2PI
                        - th
                        - 0.5 * u[i] * u[i] * (-2.0 * th).exp();
                }
                total
            },
            move |u, t| {
                DVector::from_fn(m, |i, _| {
                    s2[i] - c2[i] * (beta + u[i]).exp() - u[i] * (-2.0 * t[0]).exp()
                })
            },
            move |u, t| {
                DMatrix::from_fn(m, m, |i, j| {
                    if i == j {
                        c3[i] * (beta + u[i]).exp() + (-2.0 * t[0]).exp()
                    } else {
                        0.0
                    }
                })
            },
        )
    }

    /// Brute-force `log ∫∫ π(u, θ, y) du dθ` on a 101³ tensor grid: Simpson
    /// in `θ` over a fixed range and, for each `θ`, Simpson in each `u_i` over
    /// ±8 conditional standard deviations around the conditional mode.
    pub fn dense_grid_log_evidence(&self, theta_range: (f64, f64)) -> f64 {
        assert_eq!(self.y.len(), 2);
        const N: usize = 101;
        let simpson = |i: usize| -> f64 {
            if i == 0 || i == N - 1 {
                1.0 / 3.0
            } else if i % 2 == 1 {
                4.0 / 3.0
            } else {
                2.0 / 3.0
            }
        };
        let lg: Vec<f64> = self
            .y
            .iter()
            .map(|g| g.iter().map(|v| ln_gamma(v + 1.0)).sum())
            .collect();
        let (t0, t1) = theta_range;
        let ht = (t1 - t0) / (N - 1) as f64;
        let mut terms = Vec::with_capacity(N * N * N);
        for a in 0..N {
            let theta = t0 + ht * a as f64;
            let mut axes = Vec::with_capacity(2);
            for i in 0..2 {
                let (centre, sd) = self.conditional_mode(i, theta);
                let (lo, hi) = (centre - 8.0 * sd, centre + 8.0 * sd);
                axes.push((lo, (hi - lo) / (N - 1) as f64));
            }
            for b in 0..N {
                let u1 = axes[0].0 + axes[0].1 * b as f64;
                let v1 = self.group_term(0, u1, theta, lg[0]);
                for c in 0..N {
                    let u2 = axes[1].0 + axes[1].1 * c as f64;
                    let v2 = self.group_term(1, u2, theta, lg[1]);
                    let w = ht * simpson(a) * axes[0].1 * simpson(b) * axes[1].1 * simpson(c);
                    terms.push(self.theta_prior(theta) + v1 + v2 + w.ln());
                }
            }
        }
        let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
    }

    /// Newton iteration for the mode of group `i`'s latent at fixed `θ`.
    fn conditional_mode(&self, i: usize, theta: f64) -> (f64, f64) {
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
