//! Monte Carlo harness for bias/√MSE tables and the leave-one-out influence
//! statistic.
//!
//! Every `(n, replication)` pair owns a ChaCha8 substream of the master seed,
//! so results do not depend on the number of threads.

mod design;
mod influence;
mod report;

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{fit, EstimatorSet, FitOptions};
use crate::family::DensityFamily;
use crate::model::{ModelSpec, ObservationBlock, Structure};

pub use design::ModelKind;
pub use influence::{d_hat, InfluenceStat};
pub use report::{sig6, SimReport, SimRow};

/// Environment variable holding the default worker-thread count.
pub const THREADS_ENV: &str = "ELLIPTIC_BIAS_THREADS";

fn default_reps() -> usize {
    1000
}
fn default_seed() -> u64 {
    SimConfig::DEFAULT_SEED
}
fn default_estimators() -> String {
    "mle,bc,br".into()
}
fn default_tol() -> f64 {
    1e-8
}
fn default_max_iter() -> usize {
    200
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub model: ModelKind,
    /// `normal`, `cauchy`, `student-t`, `power-exponential`.
    pub family: String,
    #[serde(default)]
    pub nu: Option<f64>,
    #[serde(default)]
    pub lambda: Option<f64>,
    /// True θ; the design's default when absent.
    #[serde(default)]
    pub theta: Option<Vec<f64>>,
    pub n: Vec<usize>,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_estimators")]
    pub estimators: String,
    /// Worker threads; `None` uses the environment default or all cores.
    #[serde(default)]
    pub threads: Option<usize>,
    /// Redraw covariates every replication instead of once per `n`.
    #[serde(default)]
    pub redraw_covariates: bool,
    #[serde(default)]
    pub x_range: Option<[f64; 2]>,
    /// Explicit covariate values for scalar-covariate designs; block `i` of
    /// every sample size uses `x[i]`.
    #[serde(default)]
    pub x: Option<Vec<f64>>,
    /// Measurement-error variances `(τ1, τ2)` for the errors-in-variables design.
    #[serde(default)]
    pub tau: Option<[f64; 2]>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

impl SimConfig {
    pub const DEFAULT_SEED: u64 = 20_240_601;

    pub fn new(model: ModelKind, family: &str, n: Vec<usize>, reps: usize, seed: u64) -> Self {
        Self {
            model,
            family: family.into(),
            nu: None,
            lambda: None,
            theta: None,
            n,
            reps,
            seed,
            estimators: default_estimators(),
            threads: None,
            redraw_covariates: false,
            x_range: None,
            x: None,
            tau: None,
            tol: default_tol(),
            max_iter: default_max_iter(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse(format!("simulation config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn family(&self) -> Result<DensityFamily> {
        DensityFamily::from_name(&self.family, self.nu, self.lambda)
    }

    pub fn estimator_set(&self) -> Result<EstimatorSet> {
        EstimatorSet::parse(&self.estimators)
    }

    pub fn truth(&self) -> DVector<f64> {
        DVector::from_vec(self.theta.clone().unwrap_or_else(|| self.model.default_theta()))
    }

    fn x_range(&self) -> [f64; 2] {
        self.x_range.unwrap_or_else(|| self.model.default_x_range())
    }

    fn tau(&self) -> [f64; 2] {
        self.tau.unwrap_or([0.0, 0.0])
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::Config("reps must be at least 1".into()));
        }
        if self.n.is_empty() || self.n.contains(&0) {
            return Err(Error::Config("n must be a non-empty list of positive sizes".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        let [lo, hi] = self.x_range();
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Config(format!("invalid x_range [{lo}, {hi}]")));
        }
        if let Some(x) = &self.x {
            if !self.model.has_scalar_covariate() {
                return Err(Error::Config(format!(
                    "model '{}' takes no explicit covariates",
                    self.model.name()
                )));
            }
            if self.redraw_covariates {
                return Err(Error::Config("explicit covariates cannot be redrawn".into()));
            }
            let need = self.n.iter().copied().max().unwrap_or(0);
            if x.len() < need {
                return Err(Error::Config(format!("x has {} values, largest n is {need}", x.len())));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config("x values must be finite".into()));
            }
        }
        if self.tau().iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
            return Err(Error::Config("tau entries must be finite and non-negative".into()));
        }
        self.family()?;
        self.estimator_set()?;
        self.fit_options().validate()?;
        let p = self.model.structure().n_params();
        if self.truth().len() != p {
            return Err(Error::Config(format!(
                "model '{}' has {p} parameters, theta has {}",
                self.model.name(),
                self.truth().len()
            )));
        }
        Ok(())
    }

    fn fit_options(&self) -> FitOptions {
        FitOptions {
            max_iter: self.max_iter,
            tol: self.tol,
            estimators: self.estimator_set().unwrap_or_default(),
            ..FitOptions::default()
        }
    }
}

/// Thread count: explicit value, else the environment variable, else rayon's default.
pub fn resolve_threads(explicit: Option<usize>) -> Option<usize> {
    explicit.or_else(|| std::env::var(THREADS_ENV).ok()?.parse().ok().filter(|t| *t > 0))
}

/// Substream for replication `rep` at sample size `n`; `rep = u32::MAX` is the covariate stream.
fn stream(seed: u64, n: usize, rep: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((n as u64) << 32) | rep as u64);
    rng
}

const COVARIATE_STREAM: u32 = u32::MAX;

/// Estimates of one replication; `None` where the estimator failed or did not converge.
#[derive(Clone, Debug)]
pub(crate) struct Replication {
    pub estimates: Vec<Option<DVector<f64>>>,
}

struct Design {
    structure: Arc<dyn Structure>,
    family: DensityFamily,
    truth: DVector<f64>,
}

impl Design {
    /// Draws responses at the true θ and binds them to `covariates`.
    fn sample(
        &self,
        covariates: &[ObservationBlock],
        factors: Option<&[(DVector<f64>, DMatrix<f64>)]>,
        rng: &mut ChaCha8Rng,
    ) -> Result<ModelSpec> {
        let mut blocks = covariates.to_vec();
        for (i, b) in blocks.iter_mut().enumerate() {
            let (mu, l) = match factors {
                Some(f) => f[i].clone(),
                None => factor(self.structure.as_ref(), &self.truth, b)?,
            };
            b.y = self.family.sample_with_factor(&mu, &l, rng)?;
        }
        ModelSpec::new(self.structure.clone(), blocks, self.family.clone())
    }
}

fn factor(s: &dyn Structure, theta: &DVector<f64>, b: &ObservationBlock) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let mu = s.location(theta, b)?;
    let l = crate::linalg::cholesky(&s.scale(theta, b)?, "true scale matrix")?.l();
    Ok((mu, l))
}

/// Covariates reused across replications, with the true `(μ_i, chol Σ_i)`.
type FixedDesign = (Vec<ObservationBlock>, Vec<(DVector<f64>, DMatrix<f64>)>);

fn replicate(
    design: &Design,
    cfg: &SimConfig,
    opts: &FitOptions,
    n: usize,
    rep: usize,
    fixed: Option<&FixedDesign>,
) -> Replication {
    let est = opts.estimators;
    let none = || Replication {
        estimates: vec![None; est.names().len()],
    };
    let mut rng = stream(cfg.seed, n, rep as u32);
    let model = match fixed {
        Some((cov, fac)) => design.sample(cov, Some(fac), &mut rng),
        None => {
            let cov = cfg.model.covariates(n, cfg.x_range(), cfg.tau(), &mut rng);
            design.sample(&cov, None, &mut rng)
        }
    };
    let Ok(model) = model else { return none() };
    let Ok(res) = fit(&model, opts) else { return none() };
    let estimates = est
        .names()
        .iter()
        .map(|w| {
            res.estimate(w)
                .filter(|e| e.converged && e.theta.iter().all(|v| v.is_finite()))
                .map(|e| e.theta.clone())
        })
        .collect();
    Replication { estimates }
}

/// Runs the configured experiment. Failed or non-converged fits are excluded
/// from the moments and counted per estimator.
pub fn run_simulation(cfg: &SimConfig) -> Result<SimReport> {
    cfg.validate()?;
    let design = Design {
        structure: cfg.model.structure(),
        family: cfg.family()?,
        truth: cfg.truth(),
    };
    let opts = FitOptions {
        start: crate::estimation::Start::Given(design.truth.clone()),
        ..cfg.fit_options()
    };
    let run = || -> Result<SimReport> {
        let mut report = SimReport::new(cfg, &design.structure.param_names(), &opts.estimators);
        for &n in &cfg.n {
            let fixed = if cfg.redraw_covariates {
                None
            } else {
                let mut rng = stream(cfg.seed, n, COVARIATE_STREAM);
                let mut cov = cfg.model.covariates(n, cfg.x_range(), cfg.tau(), &mut rng);
                if let Some(x) = &cfg.x {
                    cfg.model.set_covariate(&mut cov, x);
                }
                let fac = cov
                    .iter()
                    .map(|b| factor(design.structure.as_ref(), &design.truth, b))
                    .collect::<Result<Vec<_>>>()?;
                Some((cov, fac))
            };
            let reps: Vec<Replication> = (0..cfg.reps)
                .into_par_iter()
                .map(|rep| replicate(&design, cfg, &opts, n, rep, fixed.as_ref()))
                .collect();
            report.add(n, &design.truth, &reps);
        }
        Ok(report)
    };
    match resolve_threads(cfg.threads) {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    }
}
