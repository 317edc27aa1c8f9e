//! Fisher scoring for the MLE and for the root of the bias-reduced score.

use nalgebra::{DMatrix, DVector};

use super::bias::{bias_from_blocks, BiasPath};
use super::criteria::{information_criteria, InformationCriteria};
use super::{factor_information, std_errors};
use crate::blocks::{assemble_blocks, BlockMatrices};
use crate::error::{Error, Result};
use crate::model::ModelSpec;

#[derive(Clone, Debug, PartialEq)]
pub enum Start {
    /// Structure-supplied start, else least squares for location then moments for scale.
    Heuristic,
    Given(DVector<f64>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EstimatorSet {
    pub mle: bool,
    pub bc: bool,
    pub br: bool,
}

impl EstimatorSet {
    pub const ALL: Self = Self {
        mle: true,
        bc: true,
        br: true,
    };
    pub const MLE: Self = Self {
        mle: true,
        bc: false,
        br: false,
    };

    /// Parses a comma-separated list such as `mle,bc,br`.
    pub fn parse(s: &str) -> Result<Self> {
        let mut set = Self {
            mle: false,
            bc: false,
            br: false,
        };
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part.to_ascii_lowercase().as_str() {
                "mle" => set.mle = true,
                "bc" => set.bc = true,
                "br" => set.br = true,
                other => {
                    return Err(Error::Config(format!(
                        "unknown estimator '{other}' (expected mle, bc, br)"
                    )))
                }
            }
        }
        if !(set.mle || set.bc || set.br) {
            return Err(Error::Config("no estimator requested".into()));
        }
        Ok(set)
    }

    pub fn names(&self) -> Vec<&'static str> {
        let mut v = Vec::new();
        if self.mle {
            v.push("mle");
        }
        if self.bc {
            v.push("bc");
        }
        if self.br {
            v.push("br");
        }
        v
    }
}

impl Default for EstimatorSet {
    fn default() -> Self {
        Self::ALL
    }
}

#[derive(Clone, Debug)]
pub struct FitOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub step_halving_max: usize,
    pub start: Start,
    pub estimators: EstimatorSet,
    /// `None` picks the blockwise bias path whenever the model declares a split.
    pub use_orthogonal_path: Option<bool>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tol: 1e-8,
            step_halving_max: 30,
            start: Start::Heuristic,
            estimators: EstimatorSet::ALL,
            use_orthogonal_path: None,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("tolerance must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        Ok(())
    }

    pub fn with_start(mut self, theta: DVector<f64>) -> Self {
        self.start = Start::Given(theta);
        self
    }

    pub fn with_estimators(mut self, estimators: EstimatorSet) -> Self {
        self.estimators = estimators;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub loglik: f64,
    /// `max_r |Δθ_r| / (1 + |θ_r|)` of the accepted step.
    pub change: f64,
    /// `max_r |U_r| / sqrt(K_rr)` before the step (modified score for BR).
    pub score: f64,
    pub halvings: usize,
}

#[derive(Clone, Debug)]
pub struct Estimate {
    pub theta: DVector<f64>,
    /// `sqrt(diag K(θ)⁻¹)` at this estimate; `None` when `K` is singular or θ infeasible there.
    pub std_err: Option<DVector<f64>>,
    pub converged: bool,
    pub iterations: usize,
    pub loglik: f64,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub names: Vec<String>,
    pub n_obs: usize,
    pub requested: EstimatorSet,
    pub mle: Option<Estimate>,
    pub bc: Option<Estimate>,
    pub br: Option<Estimate>,
    /// Estimated bias at the MLE.
    pub bias: Option<DVector<f64>>,
    /// `K(θ̂)⁻¹` at the MLE.
    pub cov: Option<DMatrix<f64>>,
    pub criteria: Option<InformationCriteria>,
    pub trace: Vec<IterationRecord>,
    pub br_trace: Vec<IterationRecord>,
    /// Errors met by individual estimators that did not abort the whole fit.
    pub failures: Vec<String>,
}

impl FitResult {
    pub fn theta_mle(&self) -> Option<&DVector<f64>> {
        self.mle.as_ref().map(|e| &e.theta)
    }

    pub fn theta_bc(&self) -> Option<&DVector<f64>> {
        self.bc.as_ref().map(|e| &e.theta)
    }

    pub fn theta_br(&self) -> Option<&DVector<f64>> {
        self.br.as_ref().map(|e| &e.theta)
    }

    pub fn loglik(&self) -> Option<f64> {
        self.mle.as_ref().or(self.br.as_ref()).map(|e| e.loglik)
    }

    pub fn iterations(&self) -> usize {
        self.mle.as_ref().or(self.br.as_ref()).map_or(0, |e| e.iterations)
    }

    /// Whether the requested estimator is present and converged.
    pub fn estimate(&self, which: &str) -> Option<&Estimate> {
        match which {
            "mle" => self.mle.as_ref(),
            "bc" => self.bc.as_ref(),
            "br" => self.br.as_ref(),
            _ => None,
        }
    }

    /// True when every requested estimator exists and converged.
    pub fn converged(&self) -> bool {
        self.requested
            .names()
            .iter()
            .all(|w| self.estimate(w).is_some_and(|e| e.converged))
    }
}

/// Location-parameter least squares with Σ ignored, then moment estimates for scale.
pub fn heuristic_start(model: &ModelSpec) -> Result<DVector<f64>> {
    let s = model.structure();
    let blocks = model.blocks();
    if let Some(t) = s.initial_guess(blocks) {
        model.check_theta(&t)?;
        return Ok(t);
    }
    let no_start = || Error::Config("model has no start heuristic; supply a start vector".into());
    let p = model.n_params();
    let loc = s.location_start(blocks).ok_or_else(no_start)?;
    if loc.len() > p {
        return Err(Error::Dimension(format!(
            "location start has length {}, model has {p} parameters",
            loc.len()
        )));
    }
    // The scale tail stays zero until scale_start fills it; μ does not read it.
    let mut theta = DVector::zeros(p);
    theta.rows_mut(0, loc.len()).copy_from(&loc);
    model.check_theta(&theta)?;
    if let Some((p1, _)) = model.orthogonal_split() {
        theta = least_squares_location(model, theta, p1)?;
    }
    if loc.len() < p {
        let scale = s.scale_start(&theta, blocks).ok_or_else(no_start)?;
        if scale.len() == p {
            theta = scale;
        } else if loc.len() + scale.len() == p {
            theta.rows_mut(loc.len(), scale.len()).copy_from(&scale);
        } else {
            return Err(Error::Dimension(format!(
                "scale start has length {}, expected {}",
                scale.len(),
                p - loc.len()
            )));
        }
    }
    model.check_theta(&theta)?;
    Ok(theta)
}

fn rss(model: &ModelSpec, theta: &DVector<f64>) -> Result<f64> {
    let mut total = 0.0;
    for (i, b) in model.blocks().iter().enumerate() {
        total += (&b.y - model.location(theta, i)?).norm_squared();
    }
    Ok(total)
}

/// Gauss–Newton on the first `p1` parameters, minimising `Σ |y_i − μ_i|²`.
fn least_squares_location(model: &ModelSpec, mut theta: DVector<f64>, p1: usize) -> Result<DVector<f64>> {
    let mut current = rss(model, &theta)?;
    for _ in 0..100 {
        let mut jtj = DMatrix::zeros(p1, p1);
        let mut jtr = DVector::zeros(p1);
        for (i, b) in model.blocks().iter().enumerate() {
            let a = model.location_jacobian(&theta, i)?;
            let r = &b.y - model.location(&theta, i)?;
            let mut j = DMatrix::zeros(b.q(), p1);
            for (c, col) in a.iter().take(p1).enumerate() {
                j.set_column(c, col);
            }
            jtj += j.transpose() * &j;
            jtr += j.transpose() * r;
        }
        // A touch of Levenberg damping keeps flat directions from blowing up.
        let damp = 1e-10 * (0..p1).map(|c| jtj[(c, c)]).fold(0.0, f64::max);
        for c in 0..p1 {
            jtj[(c, c)] += damp;
        }
        let Some(step) = jtj.lu().solve(&jtr) else {
            break;
        };
        let mut lambda = 1.0;
        let mut moved = false;
        for _ in 0..40 {
            let mut cand = theta.clone();
            for c in 0..p1 {
                cand[c] += lambda * step[c];
            }
            if let Ok(v) = rss(model, &cand) {
                if v.is_finite() && v <= current {
                    let rel = (current - v) / (1.0 + current);
                    theta = cand;
                    current = v;
                    moved = rel > 1e-14;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !moved {
            break;
        }
    }
    Ok(theta)
}

struct Outcome {
    theta: DVector<f64>,
    blocks: BlockMatrices,
    iterations: usize,
    converged: bool,
    trace: Vec<IterationRecord>,
}

fn scaled_sup(g: &DVector<f64>, k: &DMatrix<f64>) -> f64 {
    g.iter()
        .enumerate()
        .map(|(r, v)| v.abs() / k[(r, r)].sqrt())
        .fold(0.0, f64::max)
}

/// Scoring iterations `θ ← θ + K⁻¹U` (MLE) or `θ ← θ + K⁻¹U − bias(θ)` (BR).
fn scoring(model: &ModelSpec, start: DVector<f64>, opts: &FitOptions, reduce: Option<BiasPath>) -> Result<Outcome> {
    let mut theta = start;
    let mut blocks = assemble_blocks(model, &theta)?;
    let mut bias = match reduce {
        Some(path) => Some(bias_from_blocks(model, &theta, &blocks, path)?),
        None => None,
    };
    let mut trace = Vec::new();
    let mut last_change = f64::INFINITY;
    let mut iterations = 0;
    // BR has no objective; excursions of its merit are bounded relative to the best iterate so far.
    let mut best_merit = f64::INFINITY;
    loop {
        let k = blocks.fisher();
        let chol = factor_information(&k)?;
        let mut step = chol.solve(&blocks.score());
        if let Some(b) = &bias {
            step -= b;
        }
        // U for the MLE, U* = U − K·bias for BR.
        let g = &k * &step;
        let score_norm = scaled_sup(&g, &k);
        if !score_norm.is_finite() {
            return Err(Error::Domain("score is not finite".into()));
        }
        if iterations > 0 && last_change < opts.tol && score_norm < opts.tol.sqrt() {
            return Ok(Outcome {
                theta,
                blocks,
                iterations,
                converged: true,
                trace,
            });
        }
        if iterations >= opts.max_iter {
            break;
        }

        let ll = blocks.loglik();
        let merit = g.dot(&step);
        best_merit = best_merit.min(merit);
        let mut lambda = 1.0;
        let mut halvings = 0;
        let accepted = loop {
            let cand = &theta + &step * lambda;
            if let Ok(cb) = assemble_blocks(model, &cand) {
                let cl = cb.loglik();
                if cl.is_finite() {
                    match reduce {
                        None => {
                            if cl >= ll - 1e-12 * (1.0 + ll.abs()) {
                                break Some((cand, cb, None));
                            }
                        }
                        Some(path) => {
                            if let Ok(cbias) = bias_from_blocks(model, &cand, &cb, path) {
                                let ck = cb.fisher();
                                if let Ok(cc) = factor_information(&ck) {
                                    let cstep = cc.solve(&cb.score()) - &cbias;
                                    let cmerit = (&ck * &cstep).dot(&cstep);
                                    if cmerit.is_finite() && cmerit <= 4.0 * best_merit + 1e-300 {
                                        break Some((cand, cb, Some(cbias)));
                                    }
                                }
                            }
                        }
                    }
                }
            }
            if halvings >= opts.step_halving_max {
                break None;
            }
            halvings += 1;
            lambda *= 0.5;
        };
        let Some((cand, cb, cbias)) = accepted else {
            // Step halving exhausted: report the current iterate as not converged.
            break;
        };
        last_change = cand
            .iter()
            .zip(theta.iter())
            .map(|(a, b)| (a - b).abs() / (1.0 + b.abs()))
            .fold(0.0, f64::max);
        theta = cand;
        blocks = cb;
        bias = cbias;
        iterations += 1;
        trace.push(IterationRecord {
            iteration: iterations,
            loglik: blocks.loglik(),
            change: last_change,
            score: score_norm,
            halvings,
        });
    }
    Ok(Outcome {
        theta,
        blocks,
        iterations,
        converged: false,
        trace,
    })
}

/// `U* = U − K·bias` evaluated on precomputed blocks.
fn modified_from_blocks(
    model: &ModelSpec,
    theta: &DVector<f64>,
    blocks: &BlockMatrices,
    path: BiasPath,
) -> Result<DVector<f64>> {
    let b = bias_from_blocks(model, theta, blocks, path)?;
    Ok(blocks.score() - blocks.fisher() * b)
}

const NEWTON_MAX_ITER: usize = 50;
const NEWTON_STALL: usize = 5;

/// Damped Newton on `U*(θ) = 0` with a central-difference Jacobian; the
/// fallback when the fixed-point iteration `θ ← θ + K⁻¹U − bias` stalls.
/// Backtracks on `Σ_r U*_r² / K_rr`, with `K` frozen at the current iterate.
/// Newton either converges within a few steps or creeps without a nearby
/// root, so it gives up after `NEWTON_MAX_ITER` steps or `NEWTON_STALL`
/// consecutive steps that each cut the merit by less than 10%.
fn br_newton(model: &ModelSpec, start: DVector<f64>, opts: &FitOptions, path: BiasPath) -> Result<Outcome> {
    let p = model.n_params();
    let ustar = |t: &DVector<f64>| -> Result<(BlockMatrices, DVector<f64>)> {
        let b = assemble_blocks(model, t)?;
        let u = modified_from_blocks(model, t, &b, path)?;
        if u.iter().all(|v| v.is_finite()) {
            Ok((b, u))
        } else {
            Err(Error::Domain("modified score is not finite".into()))
        }
    };
    let mut theta = start;
    let (mut blocks, mut u) = ustar(&theta)?;
    let mut trace = Vec::new();
    let mut last_change = f64::INFINITY;
    let mut iterations = 0;
    let mut stalled = 0;
    loop {
        let k = blocks.fisher();
        let score_norm = scaled_sup(&u, &k);
        if iterations > 0 && last_change < opts.tol && score_norm < opts.tol.sqrt() {
            return Ok(Outcome {
                theta,
                blocks,
                iterations,
                converged: true,
                trace,
            });
        }
        if iterations >= opts.max_iter.min(NEWTON_MAX_ITER) || stalled >= NEWTON_STALL {
            break;
        }
        let mut jac = DMatrix::zeros(p, p);
        for r in 0..p {
            let h = 1e-6 * (1.0 + theta[r].abs());
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[r] += h;
            tm[r] -= h;
            let col = (ustar(&tp)?.1 - ustar(&tm)?.1) / (2.0 * h);
            jac.set_column(r, &col);
        }
        let Some(step) = jac.lu().solve(&(-&u)) else {
            break;
        };
        let w = k.diagonal().map(|d| 1.0 / d.max(f64::MIN_POSITIVE));
        let merit = |v: &DVector<f64>| v.iter().zip(w.iter()).map(|(a, b)| a * a * b).sum::<f64>();
        let m0 = merit(&u);
        let mut lambda = 1.0;
        let mut halvings = 0;
        let accepted = loop {
            let cand = &theta + &step * lambda;
            if let Ok((cb, cu)) = ustar(&cand) {
                if merit(&cu) < m0 {
                    break Some((cand, cb, cu));
                }
            }
            if halvings >= opts.step_halving_max {
                break None;
            }
            halvings += 1;
            lambda *= 0.5;
        };
        let Some((cand, cb, cu)) = accepted else { break };
        stalled = if merit(&cu) > 0.9 * m0 { stalled + 1 } else { 0 };
        last_change = cand
            .iter()
            .zip(theta.iter())
            .map(|(a, b)| (a - b).abs() / (1.0 + b.abs()))
            .fold(0.0, f64::max);
        theta = cand;
        blocks = cb;
        u = cu;
        iterations += 1;
        trace.push(IterationRecord {
            iteration: iterations,
            loglik: blocks.loglik(),
            change: last_change,
            score: score_norm,
            halvings,
        });
    }
    Ok(Outcome {
        theta,
        blocks,
        iterations,
        converged: false,
        trace,
    })
}

fn choose_path(model: &ModelSpec, opts: &FitOptions) -> BiasPath {
    let orth = opts.use_orthogonal_path.unwrap_or(model.orthogonal_split().is_some());
    if orth {
        BiasPath::Orthogonal
    } else if model.family().is_normal() {
        BiasPath::NormalReduced
    } else {
        BiasPath::General
    }
}

fn estimate_at(
    model: &ModelSpec,
    theta: DVector<f64>,
    converged: bool,
    iterations: usize,
) -> (Estimate, Option<DMatrix<f64>>) {
    let (std_err, cov, loglik) = match assemble_blocks(model, &theta) {
        Ok(b) => match factor_information(&b.fisher()) {
            Ok(ch) => (Some(std_errors(&ch)), Some(ch.inverse()), b.loglik()),
            Err(_) => (None, None, b.loglik()),
        },
        Err(_) => (None, None, f64::NAN),
    };
    (
        Estimate {
            theta,
            std_err,
            converged,
            iterations,
            loglik,
        },
        cov,
    )
}

/// Runs the estimators requested in `opts.estimators`.
///
/// The BR solver starts from a converged MLE when one is available. An error
/// in one estimator is recorded in `failures` unless nothing else succeeds.
pub fn fit(model: &ModelSpec, opts: &FitOptions) -> Result<FitResult> {
    opts.validate()?;
    let est = opts.estimators;
    let path = choose_path(model, opts);
    let start = match &opts.start {
        Start::Given(t) => {
            model.check_theta(t)?;
            t.clone()
        }
        Start::Heuristic => heuristic_start(model)?,
    };
    let mut res = FitResult {
        names: model.param_names(),
        n_obs: model.n_obs(),
        requested: est,
        mle: None,
        bc: None,
        br: None,
        bias: None,
        cov: None,
        criteria: None,
        trace: Vec::new(),
        br_trace: Vec::new(),
        failures: Vec::new(),
    };
    let mut first_err = None;
    let mut mle_ok: Option<DVector<f64>> = None;

    if est.mle || est.bc {
        match scoring(model, start.clone(), opts, None) {
            Ok(out) => {
                res.trace = out.trace;
                if est.bc && out.converged {
                    match bias_from_blocks(model, &out.theta, &out.blocks, path) {
                        Ok(b) => {
                            let theta_bc = &out.theta - &b;
                            res.bc = Some(estimate_at(model, theta_bc, true, 0).0);
                            res.bias = Some(b);
                        }
                        Err(e) => res.failures.push(format!("bc: {e}")),
                    }
                }
                if out.converged {
                    mle_ok = Some(out.theta.clone());
                }
                let (e, cov) = estimate_at(model, out.theta, out.converged, out.iterations);
                res.cov = cov;
                res.mle = Some(e);
            }
            Err(e) => {
                if !est.br {
                    return Err(e);
                }
                res.failures.push(format!("mle: {e}"));
                first_err = Some(e);
            }
        }
    }

    if est.br {
        let br_start = mle_ok.unwrap_or(start);
        let mut attempt = scoring(model, br_start.clone(), opts, Some(path));
        if !matches!(&attempt, Ok(out) if out.converged) {
            let newton_start = res.bc.as_ref().map_or(br_start, |e| e.theta.clone());
            if let Ok(out) = br_newton(model, newton_start, opts, path) {
                if out.converged {
                    attempt = Ok(out);
                }
            }
        }
        match attempt {
            Ok(out) => {
                res.br_trace = out.trace;
                res.br = Some(estimate_at(model, out.theta, out.converged, out.iterations).0);
            }
            Err(e) => {
                if res.mle.is_none() {
                    return Err(first_err.unwrap_or(e));
                }
                res.failures.push(format!("br: {e}"));
            }
        }
    }

    if let Some(ll) = res.loglik() {
        res.criteria = information_criteria(ll, model.n_obs(), model.n_params()).ok();
    }
    if !est.mle {
        res.mle = None;
    }
    Ok(res)
}

pub fn fit_mle(model: &ModelSpec, opts: &FitOptions) -> Result<FitResult> {
    fit(model, &opts.clone().with_estimators(EstimatorSet::MLE))
}

/// MLE followed by `θ̂_BC = θ̂ − bias(θ̂)`.
pub fn fit_bc(model: &ModelSpec, opts: &FitOptions) -> Result<FitResult> {
    let set = EstimatorSet {
        mle: true,
        bc: true,
        br: false,
    };
    fit(model, &opts.clone().with_estimators(set))
}

/// Root of the modified score `U*(θ) = U(θ) − K(θ) bias(θ)`.
pub fn fit_br(model: &ModelSpec, opts: &FitOptions) -> Result<FitResult> {
    let set = EstimatorSet {
        mle: false,
        bc: false,
        br: true,
    };
    fit(model, &opts.clone().with_estimators(set))
}

/// `U*(θ) = U(θ) − K(θ) bias(θ)`, with the bias from the general path.
pub fn modified_score(model: &ModelSpec, theta: &DVector<f64>) -> Result<DVector<f64>> {
    let blocks = assemble_blocks(model, theta)?;
    let b = bias_from_blocks(model, theta, &blocks, BiasPath::General)?;
    Ok(blocks.score() - blocks.fisher() * b)
}
