//! Empirical-Bayes fitting: maximize the log marginal posterior of the
//! hyperparameters on the log scale, then summarize the Gaussian latent
//! conditional at the mode.

use indexmap::IndexMap;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Covariate, RoadPanel, Standardization};
use crate::model::{Components, Evaluation, HyperParams, LatentStructure, ModelError, ModelSpec, PriorConfig, Variant};
use crate::spde::Mesh1D;

/// Standard normal 0.975 quantile.
pub const Z975: f64 = 1.959_963_984_540_054;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InferError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("objective is not finite at the initial point {0:?}")]
    NonFiniteStart(Vec<f64>),
    #[error("invalid optimizer configuration: {0}")]
    Config(String),
    #[error("fit does not match the supplied data: {0}")]
    Mismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub max_iter: usize,
    /// Stop when the objective changes by less than this.
    pub f_tol: f64,
    /// Stop when the largest log-theta step is below this.
    pub step_tol: f64,
    /// Converged when ‖∇‖ ≤ grad_tol·max(1, |f|).
    pub grad_tol: f64,
    /// Number of starts; the first is unperturbed.
    pub restarts: usize,
    pub jitter_sd: f64,
    /// Largest log-theta change per step.
    pub max_step: f64,
    /// Finite-difference step for the curvature.
    pub hessian_step: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iter: 500,
            f_tol: 1e-6,
            step_tol: 1e-6,
            grad_tol: 1e-4,
            restarts: 3,
            jitter_sd: 0.5,
            max_step: 1.0,
            hessian_step: 1e-4,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), InferError> {
        let pos = |x: f64| x > 0.0 && x.is_finite();
        if self.max_iter == 0
            || self.restarts == 0
            || !pos(self.f_tol)
            || !pos(self.step_tol)
            || !pos(self.grad_tol)
            || !pos(self.max_step)
            || !pos(self.hessian_step)
            || !(self.jitter_sd >= 0.0)
        {
            return Err(InferError::Config(format!("{self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Gradient,
    ObjectiveChange,
    Step,
    LineSearch,
    MaxIterations,
    /// Hyperparameters were supplied, not optimized.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub iterations: usize,
    pub starts: usize,
    pub best_start: usize,
    pub stop_reason: StopReason,
    pub objective: f64,
    pub grad_norm: f64,
    /// Curvature was not negative definite; intervals use diagonal terms.
    pub curvature_fallback: bool,
    /// Objective after each accepted step of the winning start.
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q50: f64,
    pub q975: f64,
}

impl Summary {
    pub fn gaussian(mean: f64, sd: f64) -> Self {
        Self { mean, sd, q025: mean - Z975 * sd, q50: mean, q975: mean + Z975 * sd }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaSummary {
    pub name: String,
    /// On the standardized covariate scale.
    pub standardized: Summary,
    /// Per unit of the raw interaction covariate.
    pub raw: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaSummary {
    pub year: i32,
    #[serde(flatten)]
    pub summary: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSummary {
    pub position_m: f64,
    pub mean: f64,
    pub sd: f64,
    pub lo95: f64,
    pub hi95: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub estimate: f64,
    pub lo95: f64,
    pub hi95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XiSummary {
    pub year: i32,
    pub range_m: Interval,
    pub sd: Interval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshSettings {
    pub spacing_m: f64,
    pub buffer_m: f64,
}

/// Serializable outcome of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub variant: Variant,
    pub share_annual_hyperparams: bool,
    pub theta_hat: IndexMap<String, f64>,
    pub theta_ci: IndexMap<String, [f64; 2]>,
    /// Mode on the log scale, bit-exact for reconstruction.
    pub log_theta: Vec<f64>,
    pub betas: Vec<BetaSummary>,
    /// Constant that the raw-scale coefficients move into the base level.
    pub raw_offset: f64,
    pub gammas: Vec<GammaSummary>,
    pub omega: Option<Vec<NodeSummary>>,
    pub xi: Vec<XiSummary>,
    pub log_marginal: f64,
    pub log_posterior: f64,
    pub converged: bool,
    pub convergence: ConvergenceReport,
    pub standardization: Standardization,
    pub years: Vec<i32>,
    pub n_obs: usize,
    pub mesh: Option<MeshSettings>,
    pub seed: u64,
    pub config_hash: String,
}

/// A fit together with the structure it was computed on.
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub structure: LatentStructure,
    pub priors: PriorConfig,
    pub hyper: HyperParams,
    pub evaluation: Evaluation,
    pub result: FitResult,
}

/// Posterior of the linear predictor at one (segment, year).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtaPrediction {
    pub segment: usize,
    pub segment_id: i64,
    pub position_m: f64,
    pub year: i32,
    pub mean: f64,
    pub sd: f64,
}

/// Deterministic starting point.
pub fn initial_theta(spec: &ModelSpec, priors: &PriorConfig, structure: &LatentStructure) -> HyperParams {
    let y = structure.observations();
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = if y.len() > 1 { y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    let sigma_eps = if var > 0.0 { var.sqrt() } else { 1.0 };
    let field = crate::spde::MaternParams { range_m: priors.field.range_median(), marginal_sd: priors.field.sd0 / 2.0 };
    HyperParams {
        sigma_eps,
        sigma_gamma: sigma_eps / 2.0,
        omega: spec.variant.is_spatial().then_some(field),
        xi: vec![field; spec.n_annual(structure.n_years())],
    }
}

struct Point {
    x: Vec<f64>,
    f: f64,
    g: Vec<f64>,
}

struct Run {
    best: Point,
    iterations: usize,
    stop: StopReason,
    trace: Vec<f64>,
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn eval_point(structure: &LatentStructure, priors: &PriorConfig, x: &[f64]) -> Option<Point> {
    let hp = HyperParams::from_log_vec(structure.spec(), structure.n_years(), x).ok()?;
    let ev = structure.evaluate(&hp, priors, true).ok()?;
    let f = ev.objective();
    let g = ev.gradient?;
    (f.is_finite() && g.iter().all(|v| v.is_finite())).then_some(Point { x: x.to_vec(), f, g })
}

/// Search box in log-theta. Ranges far beyond the mesh are
/// indistinguishable from a constant and make the precision singular in
/// floating point, so they are capped at twice the mesh extent.
pub fn log_theta_bounds(structure: &LatentStructure) -> Vec<(f64, f64)> {
    let sd = (-20.0, 20.0);
    let mut b = vec![sd, sd];
    if let Some(mesh) = structure.mesh() {
        let nodes = mesh.nodes();
        let extent = nodes[nodes.len() - 1] - nodes[0];
        let range = (mesh.spacing().ln(), (2.0 * extent).ln());
        while b.len() < structure.n_hyper() {
            b.push(range);
            b.push(sd);
        }
    }
    b
}

fn clamp_to(x: &mut [f64], bounds: &[(f64, f64)]) {
    for (v, &(lo, hi)) in x.iter_mut().zip(bounds) {
        *v = v.clamp(lo, hi);
    }
}

/// Gradient with components that push out of the box at an active bound
/// removed.
fn projected(x: &[f64], g: &[f64], bounds: &[(f64, f64)]) -> Vec<f64> {
    x.iter()
        .zip(g)
        .zip(bounds)
        .map(|((&xi, &gi), &(lo, hi))| if (xi <= lo && gi < 0.0) || (xi >= hi && gi > 0.0) { 0.0 } else { gi })
        .collect()
}

/// Projected BFGS ascent with Armijo backtracking.
fn bfgs(
    structure: &LatentStructure,
    priors: &PriorConfig,
    cfg: &OptimizerConfig,
    bounds: &[(f64, f64)],
    start: Point,
) -> Run {
    let p = start.x.len();
    let mut h = DMatrix::<f64>::identity(p, p);
    let mut cur = start;
    let mut trace = vec![cur.f];
    let mut fresh = true;
    for iter in 0..cfg.max_iter {
        let pg = projected(&cur.x, &cur.g, bounds);
        if norm2(&pg) <= 1e-9 * cur.f.abs().max(1.0) {
            return Run { best: cur, iterations: iter, stop: StopReason::Gradient, trace };
        }
        let g = nalgebra::DVector::from_column_slice(&pg);
        let mut d = &h * &g;
        for i in 0..p {
            if pg[i] == 0.0 && cur.g[i] != 0.0 {
                d[i] = 0.0;
            }
        }
        if d.dot(&g) <= 0.0 {
            h = DMatrix::identity(p, p);
            fresh = true;
            d = g.clone();
        }
        let biggest = d.amax();
        if biggest > cfg.max_step {
            d *= cfg.max_step / biggest;
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let mut trial: Vec<f64> = cur.x.iter().zip(d.iter()).map(|(x, di)| x + alpha * di).collect();
            clamp_to(&mut trial, bounds);
            let gain: f64 = trial.iter().zip(&cur.x).zip(&cur.g).map(|((t, x), gi)| (t - x) * gi).sum();
            if let Some(pt) = eval_point(structure, priors, &trial) {
                if pt.f >= cur.f + 1e-4 * gain {
                    accepted = Some(pt);
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some(next) = accepted else {
            if !fresh {
                h = DMatrix::identity(p, p);
                fresh = true;
                continue;
            }
            return Run { best: cur, iterations: iter, stop: StopReason::LineSearch, trace };
        };
        let s = nalgebra::DVector::from_iterator(p, next.x.iter().zip(&cur.x).map(|(a, b)| a - b));
        // Gradient change of the minimized function −f.
        let yv = nalgebra::DVector::from_iterator(p, next.g.iter().zip(&cur.g).map(|(a, b)| b - a));
        let sy = s.dot(&yv);
        if sy > 1e-12 {
            if fresh {
                let scale = sy / yv.dot(&yv);
                h = DMatrix::identity(p, p) * scale;
            }
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(p, p);
            let left = &i - rho * &s * yv.transpose();
            let right = &i - rho * &yv * s.transpose();
            h = &left * &h * &right + rho * &s * s.transpose();
            fresh = false;
        }
        let df = (next.f - cur.f).abs();
        let step = s.amax();
        cur = next;
        trace.push(cur.f);
        if df < cfg.f_tol {
            return Run { best: cur, iterations: iter + 1, stop: StopReason::ObjectiveChange, trace };
        }
        if step < cfg.step_tol {
            return Run { best: cur, iterations: iter + 1, stop: StopReason::Step, trace };
        }
    }
    Run { best: cur, iterations: cfg.max_iter, stop: StopReason::MaxIterations, trace }
}

/// Negative inverse Hessian of the objective in log-theta, by central
/// differences of the analytic gradient. Falls back to inverse diagonal
/// terms, infinite where undefined, when the curvature is not negative
/// definite.
fn curvature(structure: &LatentStructure, priors: &PriorConfig, x: &[f64], step: f64) -> (DMatrix<f64>, bool) {
    let p = x.len();
    let mut hess = DMatrix::<f64>::zeros(p, p);
    let mut defined = vec![true; p];
    let base = eval_point(structure, priors, x).map(|pt| pt.g);
    for j in 0..p {
        let shifted = |delta: f64| {
            let mut z = x.to_vec();
            z[j] += delta;
            eval_point(structure, priors, &z).map(|pt| pt.g)
        };
        let col: Option<Vec<f64>> = match (shifted(step), shifted(-step), &base) {
            (Some(u), Some(d), _) => Some(u.iter().zip(&d).map(|(a, b)| (a - b) / (2.0 * step)).collect()),
            (Some(u), None, Some(b)) => Some(u.iter().zip(b).map(|(a, c)| (a - c) / step).collect()),
            (None, Some(d), Some(b)) => Some(b.iter().zip(&d).map(|(c, a)| (c - a) / step).collect()),
            _ => None,
        };
        match col {
            Some(c) => {
                for i in 0..p {
                    hess[(i, j)] = c[i];
                }
            }
            None => defined[j] = false,
        }
    }
    let neg = -(&hess + hess.transpose()) * 0.5;
    if defined.iter().all(|&d| d) {
        if let Some(ch) = neg.clone().cholesky() {
            return (ch.inverse(), false);
        }
    }
    let mut cov = DMatrix::<f64>::zeros(p, p);
    for i in 0..p {
        let c = neg[(i, i)];
        cov[(i, i)] = if defined[i] && c > 0.0 { 1.0 / c } else { f64::INFINITY };
    }
    (cov, true)
}

/// Fits the structure's variant by empirical Bayes.
pub fn fit(
    structure: LatentStructure,
    priors: &PriorConfig,
    cfg: &OptimizerConfig,
    seed: u64,
) -> Result<FittedModel, InferError> {
    priors.validate()?;
    cfg.validate()?;
    let spec = *structure.spec();
    let bounds = log_theta_bounds(&structure);
    let mut theta0 = initial_theta(&spec, priors, &structure).to_log_vec();
    clamp_to(&mut theta0, &bounds);
    let Some(start) = eval_point(&structure, priors, &theta0) else {
        return Err(InferError::NonFiniteStart(theta0));
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = Normal::new(0.0, cfg.jitter_sd.max(f64::MIN_POSITIVE)).expect("valid sd");
    let mut runs = vec![bfgs(&structure, priors, cfg, &bounds, start)];
    for _ in 1..cfg.restarts {
        let mut x: Vec<f64> = theta0.iter().map(|v| v + jitter.sample(&mut rng)).collect();
        clamp_to(&mut x, &bounds);
        if let Some(pt) = eval_point(&structure, priors, &x) {
            runs.push(bfgs(&structure, priors, cfg, &bounds, pt));
        }
    }
    let starts = runs.len();
    let (best_start, run) = runs
        .into_iter()
        .enumerate()
        .max_by(|a, b| a.1.best.f.total_cmp(&b.1.best.f).then(b.0.cmp(&a.0)))
        .expect("at least one run");
    let grad_norm = norm2(&projected(&run.best.x, &run.best.g, &bounds));
    let converged = grad_norm <= cfg.grad_tol * run.best.f.abs().max(1.0);
    let (cov, fallback) = curvature(&structure, priors, &run.best.x, cfg.hessian_step);
    let report = ConvergenceReport {
        iterations: run.iterations,
        starts,
        best_start,
        stop_reason: run.stop,
        objective: run.best.f,
        grad_norm,
        curvature_fallback: fallback,
        trace: run.trace,
    };
    let log_sd: Vec<f64> = (0..cov.nrows()).map(|i| cov[(i, i)].sqrt()).collect();
    FittedModel::build(structure, priors, &run.best.x, &log_sd, converged, report, seed)
}

impl FittedModel {
    /// Conditions on supplied hyperparameters; intervals on them are
    /// degenerate and the fit counts as converged.
    pub fn at_hyper(
        structure: LatentStructure,
        priors: &PriorConfig,
        hyper: &HyperParams,
        seed: u64,
    ) -> Result<Self, InferError> {
        let log_theta = hyper.to_log_vec();
        let evaluation = structure.evaluate(hyper, priors, false)?;
        let report = ConvergenceReport {
            iterations: 0,
            starts: 0,
            best_start: 0,
            stop_reason: StopReason::Fixed,
            objective: evaluation.objective(),
            grad_norm: 0.0,
            curvature_fallback: false,
            trace: Vec::new(),
        };
        let zeros = vec![0.0; log_theta.len()];
        Self::build(structure, priors, &log_theta, &zeros, true, report, seed)
    }

    fn build(
        structure: LatentStructure,
        priors: &PriorConfig,
        log_theta: &[f64],
        log_sd: &[f64],
        converged: bool,
        convergence: ConvergenceReport,
        seed: u64,
    ) -> Result<Self, InferError> {
        let spec = *structure.spec();
        let hyper = HyperParams::from_log_vec(&spec, structure.n_years(), log_theta)?;
        let evaluation = structure.evaluate(&hyper, priors, true)?;
        let names = HyperParams::names(&spec, structure.years());
        let mut theta_hat = IndexMap::new();
        let mut theta_ci = IndexMap::new();
        for (k, name) in names.iter().enumerate() {
            theta_hat.insert(name.clone(), log_theta[k].exp());
            let half = Z975 * log_sd[k];
            theta_ci.insert(name.clone(), [(log_theta[k] - half).exp(), (log_theta[k] + half).exp()]);
        }
        let sel = evaluation.selected.as_ref().expect("gradient evaluation keeps the selected inverse");
        let m = &evaluation.conditional.mean;
        let st = structure.standardization();
        let mut raw_offset = 0.0;
        let betas = structure
            .covariates()
            .iter()
            .enumerate()
            .map(|(j, &c)| {
                let idx = structure.beta_index(j);
                let sd = sel.get(idx, idx).expect("diagonal").sqrt();
                let stats = st.stats(c).expect("fitted column");
                raw_offset -= m[idx] * stats.mean / stats.sd;
                BetaSummary {
                    name: beta_name(c).to_string(),
                    standardized: Summary::gaussian(m[idx], sd),
                    raw: Summary::gaussian(m[idx] / stats.sd, sd / stats.sd),
                }
            })
            .collect();
        let gammas = structure
            .years()
            .iter()
            .enumerate()
            .map(|(t, &year)| {
                let idx = structure.gamma_index(t);
                GammaSummary { year, summary: Summary::gaussian(m[idx], sel.get(idx, idx).expect("diagonal").sqrt()) }
            })
            .collect();
        let omega = structure.mesh().map(|mesh| {
            mesh.nodes()
                .iter()
                .enumerate()
                .map(|(i, &x)| {
                    let idx = structure.omega_index(i);
                    let sd = sel.get(idx, idx).expect("diagonal").sqrt();
                    NodeSummary { position_m: x, mean: m[idx], sd, lo95: m[idx] - Z975 * sd, hi95: m[idx] + Z975 * sd }
                })
                .collect()
        });
        let interval = |k: usize| Interval {
            estimate: log_theta[k].exp(),
            lo95: (log_theta[k] - Z975 * log_sd[k]).exp(),
            hi95: (log_theta[k] + Z975 * log_sd[k]).exp(),
        };
        let xi = if spec.variant.is_spatial() {
            structure
                .years()
                .iter()
                .enumerate()
                .map(|(t, &year)| {
                    let k = 4 + 2 * if spec.share_annual_hyperparams { 0 } else { t };
                    XiSummary { year, range_m: interval(k), sd: interval(k + 1) }
                })
                .collect()
        } else {
            Vec::new()
        };
        let result = FitResult {
            variant: spec.variant,
            share_annual_hyperparams: spec.share_annual_hyperparams,
            theta_hat,
            theta_ci,
            log_theta: log_theta.to_vec(),
            betas,
            raw_offset,
            gammas,
            omega,
            xi,
            log_marginal: evaluation.log_marginal,
            log_posterior: evaluation.objective(),
            converged,
            convergence,
            standardization: st.clone(),
            years: structure.years().to_vec(),
            n_obs: structure.n_obs(),
            mesh: structure.mesh().map(|m| MeshSettings { spacing_m: m.spacing(), buffer_m: m.buffer_m() }),
            seed,
            config_hash: String::new(),
        };
        Ok(Self { structure, priors: *priors, hyper, evaluation, result })
    }

    /// Rebuilds a fitted model from a stored result and the data it was fit
    /// on, re-evaluating the conditional at the stored mode.
    pub fn from_result(result: FitResult, panel: &RoadPanel, priors: &PriorConfig) -> Result<Self, InferError> {
        let spec = ModelSpec { variant: result.variant, share_annual_hyperparams: result.share_annual_hyperparams };
        let mesh = match &result.mesh {
            Some(ms) => Mesh1D::for_positions(&panel.positions, ms.spacing_m, ms.buffer_m).map_err(ModelError::from)?,
            None => Mesh1D::for_positions(&panel.positions, 20.0, 0.0).map_err(ModelError::from)?,
        };
        let structure = LatentStructure::assemble(&spec, panel, &mesh)?;
        if structure.n_obs() != result.n_obs || structure.years() != result.years.as_slice() {
            return Err(InferError::Mismatch(format!(
                "fit has {} observations over years {:?}, data has {} over {:?}",
                result.n_obs,
                result.years,
                structure.n_obs(),
                structure.years()
            )));
        }
        if structure.standardization() != &result.standardization {
            return Err(InferError::Mismatch("covariate standardization differs".into()));
        }
        let hyper = HyperParams::from_log_vec(&spec, structure.n_years(), &result.log_theta)?;
        let evaluation = structure.evaluate(&hyper, priors, true)?;
        Ok(Self { structure, priors: *priors, hyper, evaluation, result })
    }

    pub fn variant(&self) -> Variant {
        self.structure.variant()
    }

    pub fn mean(&self) -> &[f64] {
        &self.evaluation.conditional.mean
    }

    pub fn selected_inverse(&self) -> &crate::linalg::SelectedInverse {
        self.evaluation.selected.as_ref().expect("fitted models keep the selected inverse")
    }

    /// Mean and sd of `aᵀx` for a sparse row.
    pub fn linear_form(&self, row: &[(usize, f64)]) -> Result<(f64, f64), InferError> {
        let m = self.mean();
        let mean = row.iter().map(|&(i, a)| a * m[i]).sum();
        let var = self.selected_inverse().quad_form_sparse(row).map_err(ModelError::from)?;
        Ok((mean, var.max(0.0).sqrt()))
    }

    /// Linear predictor restricted to `include` at every (segment, rutting
    /// year) whose covariates are complete.
    pub fn predict_eta(&self, include: Components) -> Result<Vec<EtaPrediction>, InferError> {
        self.structure.check_components(include)?;
        let s = &self.structure;
        let mut out = Vec::new();
        for seg in 0..s.n_segments() {
            for (t, &year) in s.years().iter().enumerate() {
                if s.standardized_covariates(seg, t).is_none() {
                    continue;
                }
                let row = s.design_row(seg, t, include).expect("complete covariates");
                let (mean, sd) = self.linear_form(&row)?;
                out.push(EtaPrediction {
                    segment: seg,
                    segment_id: s.segment_ids()[seg],
                    position_m: s.positions()[seg],
                    year,
                    mean,
                    sd,
                });
            }
        }
        Ok(out)
    }
}

pub fn beta_name(c: Covariate) -> &'static str {
    match c {
        Covariate::Ac => "beta_ac",
        Covariate::Agc => "beta_agc",
        Covariate::Sma => "beta_sma",
        Covariate::DepthPrev => "beta_d1",
        Covariate::Width => "beta_w",
    }
}
