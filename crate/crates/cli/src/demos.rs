//! The three demo runs. Each returns its artifacts in memory; `main` prints
//! and writes them.

use std::collections::BTreeMap;

use aghq::{
    aghq, compute_moment, compute_pdf_and_cdf, compute_quantiles, marginal_laplace, normalize_logpost, optimize_theta,
    sample_marginal, ObjectiveBundle, OptControl, Transformation,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::CliError;
use crate::models::{ConjugatePoisson, PoissonGlmm, LN_2PI};
use crate::oracle::dense_grid_log_evidence;

pub const QUANTILE_PROBS: [f64; 5] = [0.01, 0.25, 0.5, 0.75, 0.99];
pub const GLMM_SAMPLES: usize = 10_000;
pub const GAUSSIAN_TOLERANCE: f64 = 1e-10;
pub const ORACLE_TOLERANCE: f64 = 1e-3;
pub const ORACLE_DEFAULT_K: usize = 21;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Model {
    ConjugatePoisson,
    GlmmPoisson,
    GaussianCheck,
}

#[derive(Debug, Clone)]
pub struct DemoConfig {
    pub model: Model,
    pub k: Option<usize>,
    pub n: Option<usize>,
    pub seed: u64,
    pub format: Format,
    pub rate_sweep: bool,
    pub oracle: bool,
}

impl DemoConfig {
    pub fn new(model: Model) -> Self {
        DemoConfig {
            model,
            k: None,
            n: None,
            seed: 1,
            format: Format::Json,
            rate_sweep: false,
            oracle: false,
        }
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.k == Some(0) {
            return Err(CliError::Config("--k must be at least 1".into()));
        }
        if self.n == Some(0) {
            return Err(CliError::Config("--n must be at least 1".into()));
        }
        Ok(())
    }
}

/// Artifacts of one run. `failures` lists failed internal checks; the process
/// exits nonzero when it is not empty.
#[derive(Debug, Clone, Default)]
pub struct DemoOutput {
    pub stdout: String,
    pub files: Vec<(String, Vec<u8>)>,
    pub failures: Vec<String>,
}

fn prob_key(p: f64) -> String {
    format!("{p}")
}

fn quantile_map(probs: &[f64], values: &[f64]) -> BTreeMap<String, f64> {
    probs.iter().zip(values).map(|(p, v)| (prob_key(*p), *v)).collect()
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>, CliError> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn run(config: &DemoConfig) -> Result<DemoOutput, CliError> {
    config.validate()?;
    match config.model {
        Model::ConjugatePoisson => demo_conjugate(config),
        Model::GlmmPoisson => demo_glmm(config),
        Model::GaussianCheck => demo_gaussian_check(config),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub k: usize,
    pub lognormconst: f64,
    pub abs_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConjugateSummary {
    pub model: &'static str,
    pub k: usize,
    pub n: usize,
    pub seed: u64,
    pub sum_y: f64,
    pub mode: f64,
    pub mode_truth: f64,
    pub lognormconst: f64,
    pub lognormconst_truth: f64,
    pub lognormconst_abs_error: f64,
    pub mean: f64,
    pub mean_truth: f64,
    pub sd: f64,
    pub sd_truth: f64,
    pub quantiles: BTreeMap<String, f64>,
    pub quantiles_truth: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rate_sweep: Option<Vec<SweepRow>>,
}

/// Conjugate Poisson model on `η = log λ`; moments and quantiles are of `λ`.
pub fn demo_conjugate(config: &DemoConfig) -> Result<DemoOutput, CliError> {
    let k = config.k.unwrap_or(3);
    let n = config.n.unwrap_or(10);
    let model = ConjugatePoisson::simulate(n, config.seed);
    let bundle = model.bundle();
    let fit = aghq(&bundle, k, &DVector::zeros(1), None)?;
    let np = &fit.normalized_posterior;

    let moments = compute_moment(np, |x| DVector::from_vec(vec![x[0].exp(), (2.0 * x[0]).exp()]))?;
    let mean = moments[0];
    let sd = (moments[1] - mean * mean).max(0.0).sqrt();
    let marginal = &fit.marginals[0];
    let log = Transformation::log();
    let quantiles = compute_quantiles(marginal, &QUANTILE_PROBS, Some(&log))?;
    let truth_q: Vec<f64> = QUANTILE_PROBS.iter().map(|p| model.quantile(*p)).collect();
    let shape = 1.0 + model.sum();
    let rate = model.n() + 1.0;

    let mut out = DemoOutput::default();
    let rate_sweep = if config.rate_sweep {
        let mut rows = Vec::new();
        for sk in [1, 3, 5, 7] {
            let lnc = normalize_logpost(&bundle, &fit.optresults, sk)?.lognormconst;
            rows.push(SweepRow {
                k: sk,
                lognormconst: lnc,
                abs_error: (lnc - model.log_evidence()).abs(),
            });
        }
        for w in rows.windows(2) {
            if w[1].abs_error > w[0].abs_error {
                out.failures.push(format!(
                    "error grows from k={} ({:e}) to k={} ({:e})",
                    w[0].k, w[0].abs_error, w[1].k, w[1].abs_error
                ));
            }
        }
        let mut csv = String::from("k,lognormconst,lognormconst_truth,abs_error\n");
        for r in &rows {
            csv.push_str(&format!(
                "{},{},{},{}\n",
                r.k,
                r.lognormconst,
                model.log_evidence(),
                r.abs_error
            ));
        }
        out.files.push(("ratesweep.csv".into(), csv.into_bytes()));
        Some(rows)
    } else {
        None
    };

    let summary = ConjugateSummary {
        model: "conjugate-poisson",
        k,
        n,
        seed: config.seed,
        sum_y: model.sum(),
        mode: fit.optresults.mode[0],
        mode_truth: model.mode(),
        lognormconst: fit.lognormconst(),
        lognormconst_truth: model.log_evidence(),
        lognormconst_abs_error: (fit.lognormconst() - model.log_evidence()).abs(),
        mean,
        mean_truth: shape / rate,
        sd,
        sd_truth: shape.sqrt() / rate,
        quantiles: quantile_map(&QUANTILE_PROBS, &quantiles),
        quantiles_truth: quantile_map(&QUANTILE_PROBS, &truth_q),
        rate_sweep,
    };
    let json = json_bytes(&summary)?;

    let table = compute_pdf_and_cdf(marginal, Some(&log), None)?;
    let mut csv = Vec::new();
    table.write_csv(&mut csv)?;

    out.stdout = match config.format {
        Format::Json => String::from_utf8_lossy(&json).into_owned(),
        Format::Csv => String::from_utf8_lossy(&csv).into_owned(),
    };
    out.files.insert(0, ("summary.json".into(), json));
    out.files.insert(1, ("pdfcdf.csv".into(), csv));
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub lognormconst_oracle: f64,
    pub relative_error: f64,
    pub grid_points: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct GlmmSummary {
    pub model: &'static str,
    pub k: usize,
    pub seed: u64,
    pub groups: usize,
    pub per_group: usize,
    pub y: Vec<Vec<f64>>,
    pub beta: f64,
    pub sigma_truth: f64,
    /// Posterior mode of `θ = log σ`.
    pub mode: f64,
    pub lognormconst: f64,
    pub nodes: Vec<f64>,
    pub lambda: Vec<f64>,
    pub lambda_sum: f64,
    /// Moments and quantiles of `σ`.
    pub mean: f64,
    pub sd: f64,
    pub quantiles: BTreeMap<String, f64>,
    pub latent_mean: Vec<f64>,
    pub samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleReport>,
}

/// Poisson random-intercept model through the marginal Laplace approximation.
/// With `oracle`, the model shrinks to 2 groups of 2 (unless `n` says
/// otherwise), `k` defaults to [`ORACLE_DEFAULT_K`] and the evidence is
/// checked against a dense grid.
pub fn demo_glmm(config: &DemoConfig) -> Result<DemoOutput, CliError> {
    let k = config.k.unwrap_or(if config.oracle { ORACLE_DEFAULT_K } else { 3 });
    let (groups, per_group) = if config.oracle {
        (2, config.n.unwrap_or(2))
    } else {
        (5, config.n.unwrap_or(4))
    };
    let model = PoissonGlmm::simulate(groups, per_group, config.seed);
    let fit = marginal_laplace(&model.bundle(), k, &DVector::zeros(groups), &DVector::zeros(1))?;
    let samples = sample_marginal(&fit, GLMM_SAMPLES, config.seed.wrapping_add(1))?;

    let np = &fit.outer.normalized_posterior;
    let moments = compute_moment(np, |x| DVector::from_vec(vec![x[0].exp(), (2.0 * x[0]).exp()]))?;
    let mean = moments[0];
    let sd = (moments[1] - mean * mean).max(0.0).sqrt();
    let quantiles = compute_quantiles(&fit.outer.marginals[0], &QUANTILE_PROBS, Some(&Transformation::log()))?;
    let lambda_sum: f64 = fit.lambda.iter().sum();

    let mut out = DemoOutput::default();
    if (lambda_sum - 1.0).abs() > 1e-12 {
        out.failures.push(format!("mixture weights sum to {lambda_sum}"));
    }
    let oracle = if config.oracle {
        let truth = dense_grid_log_evidence(&model)?;
        let relative_error = ((fit.lognormconst() - truth) / truth).abs();
        if relative_error > ORACLE_TOLERANCE {
            out.failures.push(format!(
                "lognormconst {} is {relative_error:e} from the dense-grid value {truth} (relative)",
                fit.lognormconst()
            ));
        }
        Some(OracleReport {
            lognormconst_oracle: truth,
            relative_error,
            grid_points: crate::oracle::GRID_POINTS,
        })
    } else {
        None
    };

    let summary = GlmmSummary {
        model: "glmm-poisson",
        k,
        seed: config.seed,
        groups,
        per_group,
        y: model.y.clone(),
        beta: model.beta,
        sigma_truth: PoissonGlmm::TRUE_SIGMA,
        mode: fit.outer.optresults.mode[0],
        lognormconst: fit.lognormconst(),
        nodes: fit.modesandhessians.iter().map(|m| m.theta[0]).collect(),
        lambda: fit.lambda.clone(),
        lambda_sum,
        mean,
        sd,
        quantiles: quantile_map(&QUANTILE_PROBS, &quantiles),
        latent_mean: fit.mixture_mean().iter().copied().collect(),
        samples: GLMM_SAMPLES,
        oracle,
    };
    let json = json_bytes(&summary)?;
    let mut csv = Vec::new();
    samples.write_csv(&mut csv)?;

    out.stdout = match config.format {
        Format::Json => String::from_utf8_lossy(&json).into_owned(),
        Format::Csv => String::from_utf8_lossy(&csv).into_owned(),
    };
    out.files.push(("summary.json".into(), json));
    out.files.push(("samples.csv".into(), csv));
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct GaussianCase {
    pub d: usize,
    pub k: usize,
    pub case: String,
    pub lognormconst: f64,
    pub truth: f64,
    pub error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GaussianReport {
    pub model: &'static str,
    pub seed: u64,
    pub tolerance: f64,
    pub max_error: f64,
    pub cases: Vec<GaussianCase>,
    pub failures: Vec<String>,
}

/// Gaussian log density with exact derivatives and its log integral.
pub fn gaussian_bundle(mu: DVector<f64>, h: DMatrix<f64>, c: f64) -> Result<(ObjectiveBundle, f64), CliError> {
    let d = mu.len();
    let chol = h
        .clone()
        .cholesky()
        .ok_or_else(|| CliError::Config("precision matrix is not positive definite".into()))?;
    let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let truth = c + 0.5 * d as f64 * LN_2PI - 0.5 * log_det;
    let (mu2, h2, h3) = (mu.clone(), h.clone(), h.clone());
    let bundle = ObjectiveBundle::new(d, move |x| {
        let r = x - &mu;
        c - 0.5 * r.dot(&(&h * &r))
    })
    .with_gradient(move |x| -(&h2 * (x - &mu2)))
    .with_hessian(move |_| -h3.clone());
    Ok((bundle, truth))
}

fn gaussian_case(
    d: usize,
    k: usize,
    case: String,
    mu: DVector<f64>,
    h: DMatrix<f64>,
    c: f64,
) -> Result<GaussianCase, CliError> {
    let (bundle, truth) = gaussian_bundle(mu, h, c)?;
    let opt = optimize_theta(&bundle, &DVector::zeros(d), &OptControl::default())?;
    let lognormconst = normalize_logpost(&bundle, &opt, k)?.lognormconst;
    Ok(GaussianCase {
        d,
        k,
        case,
        lognormconst,
        truth,
        error: (lognormconst - truth).abs(),
    })
}

/// Seeded random precisions `AᵀA + I/2` for `d = 1..4`, `n` per `(d, k)`, plus
/// two fixed cases with known constants.
pub fn demo_gaussian_check(config: &DemoConfig) -> Result<DemoOutput, CliError> {
    let ks: Vec<usize> = match config.k {
        Some(k) => vec![k],
        None => vec![1, 3, 5],
    };
    let trials = config.n.unwrap_or(5);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut cases = Vec::new();
    for &k in &ks {
        cases.push(gaussian_case(
            1,
            k,
            "unit".into(),
            DVector::zeros(1),
            DMatrix::identity(1, 1),
            0.0,
        )?);
        let h = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 5.0]);
        cases.push(gaussian_case(2, k, "worked".into(), DVector::zeros(2), h, 0.0)?);
    }
    for d in 1..=4 {
        for &k in &ks {
            for trial in 0..trials {
                let a = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
                let h = a.transpose() * a + DMatrix::identity(d, d) * 0.5;
                let mu = DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0));
                let c = rng.random_range(-5.0..5.0);
                cases.push(gaussian_case(d, k, format!("random{}", trial + 1), mu, h, c)?);
            }
        }
    }

    let failures: Vec<String> = cases
        .iter()
        .filter(|c| !(c.error <= GAUSSIAN_TOLERANCE))
        .map(|c| format!("(d={}, k={}) {}: error {:e}", c.d, c.k, c.case, c.error))
        .collect();
    let max_error = cases.iter().map(|c| c.error).fold(0.0, f64::max);
    let report = GaussianReport {
        model: "gaussian-check",
        seed: config.seed,
        tolerance: GAUSSIAN_TOLERANCE,
        max_error,
        cases,
        failures: failures.clone(),
    };
    let json = json_bytes(&report)?;
    let mut csv = String::from("d,k,case,lognormconst,truth,error\n");
    for c in &report.cases {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            c.d, c.k, c.case, c.lognormconst, c.truth, c.error
        ));
    }
    Ok(DemoOutput {
        stdout: match config.format {
            Format::Json => String::from_utf8_lossy(&json).into_owned(),
            Format::Csv => csv.clone(),
        },
        files: vec![
            ("gaussian_check.json".into(), json),
            ("gaussian_check.csv".into(), csv.into_bytes()),
        ],
        failures,
    })
}
