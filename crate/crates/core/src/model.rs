//! Latent Gaussian structure of the six model variants and exact Gaussian
//! conditioning given hyperparameters.
//!
//! Latent ordering. Spatial variants interleave the fields node by node,
//! `[ω_i, ξ_{1,i}, …, ξ_{T,i}]`, so every field block stays banded with
//! bandwidth `2(T + 1)`. The fixed effects β and yearly effects γ follow as
//! dense border rows. Non-spatial variants hold only `[β, γ]`.

use std::f64::consts::{LN_2, PI};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Covariate, IngestError, RoadPanel, Standardization};
use crate::linalg::{dot, Cholesky, EnvelopeLayout, LinalgError, SelectedInverse, SymEnvelope};
use crate::spde::{
    bands_to_matrix, pentadiagonal_layout, FemMatrices, MaternParams, Mesh1D, PcMaternPrior, SpdeBands, SpdeError,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Spde(#[from] SpdeError),
    #[error("factorization failed at log-theta {theta:?}: {source}")]
    Factorization { source: LinalgError, theta: Vec<f64> },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("segment {segment_id} at {position} m is not a mesh node")]
    OffMesh { segment_id: i64, position: f64 },
    #[error("no observations enter the likelihood")]
    NoObservations,
    #[error("expected {expected} hyperparameters, got {found}")]
    HyperDimension { expected: usize, found: usize },
    #[error("invalid hyperparameters: {0}")]
    InvalidHyper(String),
    #[error("invalid prior configuration: {0}")]
    InvalidPrior(String),
    #[error("{0} is not part of model {1}")]
    MissingComponent(&'static str, Variant),
    #[error("unknown model variant `{0}`; expected 1..6")]
    UnknownVariant(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    M1,
    M2,
    M3,
    M4,
    M5,
    M6,
}

const ASPHALT: [Covariate; 3] = [Covariate::Ac, Covariate::Agc, Covariate::Sma];
const ASPHALT_DEPTH: [Covariate; 4] = [Covariate::Ac, Covariate::Agc, Covariate::Sma, Covariate::DepthPrev];

impl Variant {
    pub const ALL: [Variant; 6] = [Variant::M1, Variant::M2, Variant::M3, Variant::M4, Variant::M5, Variant::M6];

    pub fn number(self) -> u8 {
        self as u8 + 1
    }

    pub fn from_number(n: u8) -> Option<Self> {
        Self::ALL.get((n as usize).checked_sub(1)?).copied()
    }

    pub fn is_spatial(self) -> bool {
        matches!(self, Variant::M1 | Variant::M2 | Variant::M3)
    }

    pub fn covariates(self) -> &'static [Covariate] {
        match self {
            Variant::M1 | Variant::M4 => &Covariate::ALL,
            Variant::M2 | Variant::M5 => &ASPHALT_DEPTH,
            Variant::M3 | Variant::M6 => &ASPHALT,
        }
    }

    /// The variant with the same covariates and the other spatial setting.
    pub fn counterpart(self) -> Self {
        Self::ALL[(self as usize + 3) % 6]
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "M{}", self.number())
    }
}

impl FromStr for Variant {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        let digits = t.strip_prefix(['M', 'm']).unwrap_or(t);
        digits
            .parse::<u8>()
            .ok()
            .and_then(Variant::from_number)
            .ok_or_else(|| ModelError::UnknownVariant(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant: Variant,
    pub share_annual_hyperparams: bool,
}

impl ModelSpec {
    pub fn new(variant: Variant) -> Self {
        Self { variant, share_annual_hyperparams: false }
    }

    /// Number of hyperparameters for `n_years` rutting years.
    pub fn n_hyper(&self, n_years: usize) -> usize {
        2 + if self.variant.is_spatial() { 2 + 2 * self.n_annual(n_years) } else { 0 }
    }

    /// Number of distinct annual-field parameter pairs.
    pub fn n_annual(&self, n_years: usize) -> usize {
        if !self.variant.is_spatial() {
            0
        } else if self.share_annual_hyperparams {
            1
        } else {
            n_years
        }
    }
}

/// Prior calibrations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorConfig {
    /// PC prior for every spatial field.
    pub field: PcMaternPrior,
    /// Gamma prior (shape, rate) on the precisions `σ_ε⁻²` and `σ_γ⁻²`.
    pub gamma_shape: f64,
    pub gamma_rate: f64,
    /// Prior precision of each fixed effect.
    pub beta_precision: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self { field: PcMaternPrior::default(), gamma_shape: 1.0, gamma_rate: 5e-5, beta_precision: 0.001 }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        self.field.validate()?;
        if !(self.gamma_shape > 0.0 && self.gamma_rate > 0.0 && self.beta_precision > 0.0)
            || !(self.gamma_shape.is_finite() && self.gamma_rate.is_finite() && self.beta_precision.is_finite())
        {
            return Err(ModelError::InvalidPrior(format!(
                "gamma shape {}, gamma rate {}, beta precision {} must be positive",
                self.gamma_shape, self.gamma_rate, self.beta_precision
            )));
        }
        Ok(())
    }

    /// Log density of `log σ` when the precision `σ⁻²` is Gamma distributed,
    /// and its derivative.
    pub fn precision_log_density(&self, log_sd: f64) -> (f64, f64) {
        let (a, b) = (self.gamma_shape, self.gamma_rate);
        let tau = (-2.0 * log_sd).exp();
        let value = a * b.ln() - ln_gamma(a) + a * tau.ln() - b * tau + LN_2;
        (value, -2.0 * (a - b * tau))
    }
}

fn ln_gamma(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

/// Hyperparameters on the natural scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub sigma_eps: f64,
    pub sigma_gamma: f64,
    pub omega: Option<MaternParams>,
    /// One entry per rutting year, or a single shared entry.
    pub xi: Vec<MaternParams>,
}

impl HyperParams {
    /// Log-scale vector `[σ_ε, σ_γ, ρ_ω, σ_ω, (ρ_t, σ_t)…]`.
    pub fn to_log_vec(&self) -> Vec<f64> {
        let mut v = vec![self.sigma_eps.ln(), self.sigma_gamma.ln()];
        for p in self.omega.iter().chain(&self.xi) {
            v.push(p.range_m.ln());
            v.push(p.marginal_sd.ln());
        }
        v
    }

    pub fn from_log_vec(spec: &ModelSpec, n_years: usize, v: &[f64]) -> Result<Self, ModelError> {
        let expected = spec.n_hyper(n_years);
        if v.len() != expected {
            return Err(ModelError::HyperDimension { expected, found: v.len() });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(ModelError::InvalidHyper(format!("non-finite log-theta {v:?}")));
        }
        let pair = |k: usize| MaternParams::new(v[k].exp(), v[k + 1].exp());
        let (omega, xi) = if spec.variant.is_spatial() {
            let omega = pair(2)?;
            let xi = (0..spec.n_annual(n_years)).map(|t| pair(4 + 2 * t)).collect::<Result<_, _>>()?;
            (Some(omega), xi)
        } else {
            (None, Vec::new())
        };
        let hp = Self { sigma_eps: v[0].exp(), sigma_gamma: v[1].exp(), omega, xi };
        hp.validate()?;
        Ok(hp)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let ok = |x: f64| x > 0.0 && x.is_finite();
        if !ok(self.sigma_eps) || !ok(self.sigma_gamma) {
            return Err(ModelError::InvalidHyper(format!(
                "sigma_eps {} and sigma_gamma {} must be positive",
                self.sigma_eps, self.sigma_gamma
            )));
        }
        Ok(())
    }

    /// Matérn parameters of the annual field for rutting year `t`.
    pub fn xi_for(&self, t: usize) -> &MaternParams {
        if self.xi.len() == 1 {
            &self.xi[0]
        } else {
            &self.xi[t]
        }
    }

    /// Names that line up with [`HyperParams::to_log_vec`].
    pub fn names(spec: &ModelSpec, years: &[i32]) -> Vec<String> {
        let mut names = vec!["sigma_eps".to_string(), "sigma_gamma".to_string()];
        if spec.variant.is_spatial() {
            names.push("range_omega".into());
            names.push("sd_omega".into());
            if spec.share_annual_hyperparams {
                names.push("range_xi".into());
                names.push("sd_xi".into());
            } else {
                for y in years {
                    names.push(format!("range_xi_{y}"));
                    names.push(format!("sd_xi_{y}"));
                }
            }
        }
        names
    }
}

/// Which parts of the linear predictor to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Components {
    pub fixed: bool,
    pub gamma: bool,
    pub omega: bool,
    pub xi: bool,
}

impl Components {
    pub const ALL: Components = Components { fixed: true, gamma: true, omega: true, xi: true };
    pub const NONE: Components = Components { fixed: false, gamma: false, omega: false, xi: false };
    /// Covariates and yearly effect only.
    pub const EXPLAINED: Components = Components { fixed: true, gamma: true, omega: false, xi: false };

    /// Drops the spatial parts for non-spatial variants.
    pub fn available(self, variant: Variant) -> Self {
        if variant.is_spatial() {
            self
        } else {
            Self { omega: false, xi: false, ..self }
        }
    }
}

/// Gaussian conditional of the latent vector.
#[derive(Debug, Clone)]
pub struct Conditional {
    pub chol: Cholesky,
    pub mean: Vec<f64>,
    pub log_marginal: f64,
}

impl Conditional {
    /// Marginal standard deviations (via the selected inverse).
    pub fn marginal_sds(&self) -> Vec<f64> {
        self.chol.selected_inverse().diag().iter().map(|v| v.sqrt()).collect()
    }
}

/// Conditions `x ~ N(0, Q_prior⁻¹)` on `y = A x + ε`, given the ingredients
/// `AᵀA` and `Aᵀy` on the layout of `q_prior`.
pub fn condition(
    q_prior: &SymEnvelope,
    prior_log_det: f64,
    ata: &SymEnvelope,
    aty: &[f64],
    yty: f64,
    n_obs: usize,
    sigma_eps: f64,
) -> Result<Conditional, LinalgError> {
    let s2 = sigma_eps * sigma_eps;
    let mut q_post = q_prior.clone();
    q_post.axpy(1.0 / s2, ata);
    let chol = q_post.cholesky()?;
    let b: Vec<f64> = aty.iter().map(|v| v / s2).collect();
    let mean = chol.solve(&b);
    let log_marginal = 0.5 * prior_log_det
        - 0.5 * chol.log_det()
        - 0.5 * n_obs as f64 * (2.0 * PI * s2).ln()
        - 0.5 * (yty / s2 - dot(&b, &mean));
    Ok(Conditional { chol, mean, log_marginal })
}

/// Convenience form of [`condition`] from explicit sparse design rows.
pub fn condition_rows(
    q_prior: &SymEnvelope,
    rows: &[Vec<(usize, f64)>],
    y: &[f64],
    sigma_eps: f64,
) -> Result<Conditional, LinalgError> {
    if rows.len() != y.len() {
        return Err(LinalgError::DimensionMismatch { expected: rows.len(), found: y.len() });
    }
    let n = q_prior.dim();
    let mut positions = Vec::new();
    for i in 0..n {
        positions.push((i, q_prior.layout().first(i)));
    }
    for row in rows {
        for &(i, _) in row {
            for &(j, _) in row {
                positions.push((i, j));
            }
        }
    }
    let layout = Arc::new(EnvelopeLayout::from_positions(n, positions));
    let mut prior = SymEnvelope::zeros(layout.clone());
    for i in 0..n {
        for j in q_prior.layout().first(i)..=i {
            prior.add(i, j, q_prior.get(i, j))?;
        }
    }
    let prior_log_det = prior.cholesky()?.log_det();
    let (ata, aty, yty) = normal_equations(layout, rows, y)?;
    condition(&prior, prior_log_det, &ata, &aty, yty, rows.len(), sigma_eps)
}

fn normal_equations(
    layout: Arc<EnvelopeLayout>,
    rows: &[Vec<(usize, f64)>],
    y: &[f64],
) -> Result<(SymEnvelope, Vec<f64>, f64), LinalgError> {
    let n = layout.dim();
    let mut ata = SymEnvelope::zeros(layout);
    let mut aty = vec![0.0; n];
    for (row, &yi) in rows.iter().zip(y) {
        for (p, &(i, ai)) in row.iter().enumerate() {
            aty[i] += ai * yi;
            for (q, &(j, aj)) in row[..=p].iter().enumerate() {
                // A repeated index contributes to both triangles of the diagonal.
                let w = if i == j && q != p { 2.0 } else { 1.0 };
                ata.add(i, j, w * ai * aj)?;
            }
        }
    }
    Ok((ata, aty, dot(y, y)))
}

/// A model variant laid out over a panel and mesh.
#[derive(Debug, Clone)]
pub struct LatentStructure {
    spec: ModelSpec,
    covariates: Vec<Covariate>,
    standardization: Standardization,
    segment_ids: Vec<i64>,
    positions: Vec<f64>,
    years: Vec<i32>,
    mesh: Option<Mesh1D>,
    bands: Option<SpdeBands>,
    segment_nodes: Vec<usize>,
    layout: Arc<EnvelopeLayout>,
    field_layout: Option<Arc<EnvelopeLayout>>,
    /// Per field (ω first, then ξ_t), envelope offsets of band entries.
    field_offsets: Vec<[Vec<usize>; 3]>,
    cells: Vec<(usize, usize)>,
    rows: Vec<Vec<(usize, f64)>>,
    y: Vec<f64>,
    ata: SymEnvelope,
    aty: Vec<f64>,
    yty: f64,
    /// Standardized covariates `[segment][rutting year]`.
    z: Vec<Vec<Option<Vec<f64>>>>,
}

/// Value, gradient and conditional at one hyperparameter point.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub log_marginal: f64,
    pub log_prior: f64,
    /// Gradient of `log_marginal + log_prior` in log-theta.
    pub gradient: Option<Vec<f64>>,
    pub conditional: Conditional,
    pub selected: Option<SelectedInverse>,
}

impl Evaluation {
    pub fn objective(&self) -> f64 {
        self.log_marginal + self.log_prior
    }
}

struct FieldPrior {
    chol: Cholesky,
    params: MaternParams,
}

impl LatentStructure {
    pub fn assemble(spec: &ModelSpec, panel: &RoadPanel, mesh: &Mesh1D) -> Result<Self, ModelError> {
        let covariates = spec.variant.covariates().to_vec();
        let standardization = panel.standardization(&covariates)?;
        let cells_all = panel.likelihood_cells(&covariates);
        if cells_all.is_empty() {
            return Err(ModelError::NoObservations);
        }
        let n_years = panel.n_years() - 1;
        let spatial = spec.variant.is_spatial();
        let (segment_nodes, nn) = if spatial {
            let nodes = panel
                .positions
                .iter()
                .zip(&panel.segment_ids)
                .map(|(&p, &id)| mesh.locate(p).ok_or(ModelError::OffMesh { segment_id: id, position: p }))
                .collect::<Result<Vec<_>, _>>()?;
            (nodes, mesh.len())
        } else {
            (Vec::new(), 0)
        };
        let k = covariates.len();
        let block = n_years + 1;
        let dim = nn * block + k + n_years;

        let z: Vec<Vec<Option<Vec<f64>>>> = (0..panel.n_segments())
            .map(|s| {
                (1..panel.n_years())
                    .map(|t| {
                        let row = panel.covariates[s][t]?;
                        covariates
                            .iter()
                            .map(|&c| row.get(c).map(|v| standardization.apply(c, v).expect("fitted column")))
                            .collect::<Option<Vec<f64>>>()
                    })
                    .collect()
            })
            .collect();

        let mut structure = Self {
            spec: *spec,
            covariates,
            standardization,
            segment_ids: panel.segment_ids.clone(),
            positions: panel.positions.clone(),
            years: panel.rutting_years().to_vec(),
            mesh: spatial.then(|| mesh.clone()),
            bands: None,
            segment_nodes,
            layout: Arc::new(EnvelopeLayout::banded(dim, 0)),
            field_layout: None,
            field_offsets: Vec::new(),
            cells: Vec::new(),
            rows: Vec::new(),
            y: Vec::new(),
            ata: SymEnvelope::zeros(Arc::new(EnvelopeLayout::banded(0, 0))),
            aty: Vec::new(),
            yty: 0.0,
            z,
        };
        for (s, t) in cells_all {
            let row = structure.design_row(s, t - 1, Components::ALL).expect("likelihood cell has covariates");
            structure.rows.push(row);
            structure.y.push(panel.rutting[s][t].expect("likelihood cell has rutting"));
            structure.cells.push((s, t - 1));
        }

        let mut positions: Vec<(usize, usize)> = Vec::new();
        if spatial {
            for i in 0..nn {
                for f in 0..block {
                    let r = i * block + f;
                    positions.push((r, i * block));
                    for d in 1..=2.min(i) {
                        positions.push((r, (i - d) * block + f));
                    }
                }
            }
            let first_node = structure.segment_nodes.iter().copied().min().unwrap_or(0);
            for r in nn * block..dim {
                positions.push((r, first_node * block));
            }
        }
        for r in 0..k + n_years {
            positions.push((structure.beta_index(0) + r, structure.beta_index(0)));
        }
        for row in &structure.rows {
            for &(i, _) in row {
                for &(j, _) in row {
                    positions.push((i, j));
                }
            }
        }
        let layout = Arc::new(EnvelopeLayout::from_positions(dim, positions));
        let (ata, aty, yty) = normal_equations(layout.clone(), &structure.rows, &structure.y)?;
        structure.layout = layout;
        structure.ata = ata;
        structure.aty = aty;
        structure.yty = yty;

        if spatial {
            structure.bands = Some(FemMatrices::assemble(mesh)?.operator_bands());
            structure.field_layout = Some(pentadiagonal_layout(nn));
            for f in 0..block {
                let mut offs: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
                for (d, o) in offs.iter_mut().enumerate() {
                    for i in 0..nn {
                        let off = if i + d < nn {
                            structure.layout.offset((i + d) * block + f, i * block + f).expect("field band")
                        } else {
                            usize::MAX
                        };
                        o.push(off);
                    }
                }
                structure.field_offsets.push(offs);
            }
        }
        Ok(structure)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn variant(&self) -> Variant {
        self.spec.variant
    }

    pub fn covariates(&self) -> &[Covariate] {
        &self.covariates
    }

    pub fn standardization(&self) -> &Standardization {
        &self.standardization
    }

    pub fn segment_ids(&self) -> &[i64] {
        &self.segment_ids
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    /// Rutting years.
    pub fn years(&self) -> &[i32] {
        &self.years
    }

    pub fn n_years(&self) -> usize {
        self.years.len()
    }

    pub fn n_segments(&self) -> usize {
        self.segment_ids.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.mesh.as_ref().map_or(0, Mesh1D::len)
    }

    pub fn mesh(&self) -> Option<&Mesh1D> {
        self.mesh.as_ref()
    }

    pub fn n_hyper(&self) -> usize {
        self.spec.n_hyper(self.n_years())
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn layout(&self) -> &Arc<EnvelopeLayout> {
        &self.layout
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    pub fn observations(&self) -> &[f64] {
        &self.y
    }

    /// `(segment, rutting year)` of each observation.
    pub fn cells(&self) -> &[(usize, usize)] {
        &self.cells
    }

    pub fn design_rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }

    /// Standardized covariates of a cell, if complete.
    pub fn standardized_covariates(&self, segment: usize, t: usize) -> Option<&[f64]> {
        self.z[segment][t].as_deref()
    }

    pub fn segment_node(&self, segment: usize) -> Option<usize> {
        self.segment_nodes.get(segment).copied()
    }

    fn block(&self) -> usize {
        self.n_years() + 1
    }

    pub fn beta_index(&self, j: usize) -> usize {
        self.n_nodes() * self.block() + j
    }

    pub fn gamma_index(&self, t: usize) -> usize {
        self.n_nodes() * self.block() + self.covariates.len() + t
    }

    pub fn omega_index(&self, node: usize) -> usize {
        debug_assert!(self.mesh.is_some());
        node * self.block()
    }

    pub fn xi_index(&self, t: usize, node: usize) -> usize {
        debug_assert!(self.mesh.is_some());
        node * self.block() + 1 + t
    }

    /// The linear-predictor row of a cell restricted to `include`. `None`
    /// when fixed effects are requested and the covariates are incomplete.
    pub fn design_row(&self, segment: usize, t: usize, include: Components) -> Option<Vec<(usize, f64)>> {
        let mut row = Vec::with_capacity(self.covariates.len() + 3);
        if include.fixed {
            let z = self.z[segment][t].as_ref()?;
            row.extend(z.iter().enumerate().map(|(j, &v)| (self.beta_index(j), v)));
        }
        if include.gamma {
            row.push((self.gamma_index(t), 1.0));
        }
        if self.mesh.is_some() {
            let node = self.segment_nodes[segment];
            if include.omega {
                row.push((self.omega_index(node), 1.0));
            }
            if include.xi {
                row.push((self.xi_index(t, node), 1.0));
            }
        }
        Some(row)
    }

    /// Rejects spatial components on non-spatial variants.
    pub fn check_components(&self, include: Components) -> Result<(), ModelError> {
        if !self.variant().is_spatial() {
            if include.omega {
                return Err(ModelError::MissingComponent("omega", self.variant()));
            }
            if include.xi {
                return Err(ModelError::MissingComponent("xi", self.variant()));
            }
        }
        Ok(())
    }

    fn check_hyper(&self, hp: &HyperParams) -> Result<(), ModelError> {
        hp.validate()?;
        let spatial = self.variant().is_spatial();
        let expected_xi = self.spec.n_annual(self.n_years());
        if spatial != hp.omega.is_some() || hp.xi.len() != expected_xi {
            return Err(ModelError::HyperDimension {
                expected: self.n_hyper(),
                found: 2 + 2 * (hp.omega.is_some() as usize + hp.xi.len()),
            });
        }
        Ok(())
    }

    /// Prior precision.
    pub fn prior_precision(&self, hp: &HyperParams, priors: &PriorConfig) -> Result<SymEnvelope, ModelError> {
        Ok(self.prior_parts(hp, priors)?.0)
    }

    fn field_params(&self, hp: &HyperParams, f: usize) -> MaternParams {
        if f == 0 {
            hp.omega.expect("spatial hyperparameters")
        } else {
            *hp.xi_for(f - 1)
        }
    }

    fn prior_parts(
        &self,
        hp: &HyperParams,
        priors: &PriorConfig,
    ) -> Result<(SymEnvelope, f64, Vec<FieldPrior>), ModelError> {
        self.check_hyper(hp)?;
        let theta = hp.to_log_vec();
        let mut q = SymEnvelope::zeros(self.layout.clone());
        let k = self.covariates.len();
        let tau_gamma = hp.sigma_gamma.powi(-2);
        let mut log_det = k as f64 * priors.beta_precision.ln() + self.n_years() as f64 * tau_gamma.ln();
        for j in 0..k {
            q.add(self.beta_index(j), self.beta_index(j), priors.beta_precision)?;
        }
        for t in 0..self.n_years() {
            q.add(self.gamma_index(t), self.gamma_index(t), tau_gamma)?;
        }
        let mut fields = Vec::new();
        if let (Some(bands), Some(flayout)) = (&self.bands, &self.field_layout) {
            // Distinct parameter sets: ω, then each ξ (or one shared).
            let distinct = 1 + hp.xi.len();
            for p in 0..distinct {
                let params = if p == 0 { hp.omega.expect("spatial") } else { hp.xi[p - 1] };
                let (a, b, c) = SpdeBands::precision_coefficients(&params);
                let vals = bands.combine(a, b, c);
                let qf = bands_to_matrix(&vals, flayout.clone());
                let chol =
                    qf.cholesky().map_err(|source| ModelError::Factorization { source, theta: theta.clone() })?;
                fields.push(FieldPrior { chol, params });
                let targets: Vec<usize> = if p == 0 {
                    vec![0]
                } else if hp.xi.len() == 1 {
                    (1..=self.n_years()).collect()
                } else {
                    vec![p]
                };
                for f in targets {
                    log_det += fields[p].chol.log_det();
                    let values = q.values_mut();
                    for d in 0..3 {
                        for (i, &off) in self.field_offsets[f][d].iter().enumerate() {
                            if off != usize::MAX {
                                values[off] += vals[d][i];
                            }
                        }
                    }
                }
            }
        }
        Ok((q, log_det, fields))
    }

    /// Log prior density of log-theta and its gradient.
    pub fn log_prior(&self, hp: &HyperParams, priors: &PriorConfig) -> (f64, Vec<f64>) {
        let theta = hp.to_log_vec();
        let mut grad = vec![0.0; theta.len()];
        let (v0, g0) = priors.precision_log_density(theta[0]);
        let (v1, g1) = priors.precision_log_density(theta[1]);
        grad[0] = g0;
        grad[1] = g1;
        let mut value = v0 + v1;
        let mut k = 2;
        while k + 1 < theta.len() {
            let (v, g) = priors.field.log_density_log_scale(theta[k], theta[k + 1]);
            value += v;
            grad[k] = g[0];
            grad[k + 1] = g[1];
            k += 2;
        }
        (value, grad)
    }

    /// Conditional posterior and log marginal likelihood, plus the objective
    /// gradient when requested.
    pub fn evaluate(&self, hp: &HyperParams, priors: &PriorConfig, gradient: bool) -> Result<Evaluation, ModelError> {
        let (q_prior, prior_log_det, fields) = self.prior_parts(hp, priors)?;
        let conditional =
            condition(&q_prior, prior_log_det, &self.ata, &self.aty, self.yty, self.n_obs(), hp.sigma_eps)
                .map_err(|source| ModelError::Factorization { source, theta: hp.to_log_vec() })?;
        let (log_prior, prior_grad) = self.log_prior(hp, priors);
        let (gradient, selected) = if gradient {
            let sel = conditional.chol.selected_inverse();
            let g = self.marginal_gradient(hp, &conditional, &sel, &fields)?;
            let total = g.iter().zip(&prior_grad).map(|(a, b)| a + b).collect();
            (Some(total), Some(sel))
        } else {
            (None, None)
        };
        Ok(Evaluation { log_marginal: conditional.log_marginal, log_prior, gradient, conditional, selected })
    }

    /// Gradient of the log marginal likelihood in log-theta.
    fn marginal_gradient(
        &self,
        hp: &HyperParams,
        cond: &Conditional,
        sel: &SelectedInverse,
        fields: &[FieldPrior],
    ) -> Result<Vec<f64>, ModelError> {
        let m = &cond.mean;
        let s2 = hp.sigma_eps * hp.sigma_eps;
        let mut grad = vec![0.0; self.n_hyper()];

        let mut trace_ata = 0.0;
        let mut rss = 0.0;
        for (row, &yi) in self.rows.iter().zip(&self.y) {
            trace_ata += sel.quad_form_sparse(row)?;
            let fit: f64 = row.iter().map(|&(i, a)| a * m[i]).sum();
            rss += (yi - fit) * (yi - fit);
        }
        grad[0] = trace_ata / s2 - self.n_obs() as f64 + rss / s2;

        let tau_gamma = hp.sigma_gamma.powi(-2);
        let mut gamma_sum = 0.0;
        for t in 0..self.n_years() {
            let g = self.gamma_index(t);
            gamma_sum += sel.get(g, g)? + m[g] * m[g];
        }
        grad[1] = -(self.n_years() as f64) + tau_gamma * gamma_sum;

        let (Some(bands), Some(flayout)) = (&self.bands, &self.field_layout) else {
            return Ok(grad);
        };
        let nn = self.n_nodes();
        let block = self.block();
        for (p, field) in fields.iter().enumerate() {
            let targets: Vec<usize> = if p == 0 {
                vec![0]
            } else if hp.xi.len() == 1 {
                (1..block).collect()
            } else {
                vec![p]
            };
            let params = field.params;
            let (a, b, c) = SpdeBands::precision_coefficients(&params);
            let (da, db, dc) = SpdeBands::range_derivative_coefficients(&params);
            let q_vals = bands.combine(a, b, c);
            let d_vals = bands.combine(da, db, dc);
            let prior_cov = field.chol.selected_inverse();
            let d_mat = bands_to_matrix(&d_vals, flayout.clone());
            let prior_trace = prior_cov.as_matrix().trace_product(&d_mat);
            let mut g_range = 0.0;
            let mut g_sd = 0.0;
            for &f in &targets {
                debug_assert_eq!(self.field_params(hp, f), params);
                let sv = sel.as_matrix().values();
                let mut tr_q = 0.0;
                let mut tr_d = 0.0;
                for d in 0..3 {
                    let w = if d == 0 { 1.0 } else { 2.0 };
                    for (i, &off) in self.field_offsets[f][d].iter().enumerate() {
                        if off != usize::MAX {
                            tr_q += w * sv[off] * q_vals[d][i];
                            tr_d += w * sv[off] * d_vals[d][i];
                        }
                    }
                }
                let mf: Vec<f64> = (0..nn).map(|i| m[i * block + f]).collect();
                let quad_q = band_quad(&q_vals, &mf);
                let quad_d = band_quad(&d_vals, &mf);
                g_range += 0.5 * prior_trace - 0.5 * tr_d - 0.5 * quad_d;
                g_sd += -(nn as f64) + tr_q + quad_q;
            }
            grad[2 + 2 * p] = g_range;
            grad[3 + 2 * p] = g_sd;
        }
        Ok(grad)
    }

    /// Objective only, for finite-difference checks.
    pub fn objective(&self, log_theta: &[f64], priors: &PriorConfig) -> Result<f64, ModelError> {
        let hp = HyperParams::from_log_vec(&self.spec, self.n_years(), log_theta)?;
        Ok(self.evaluate(&hp, priors, false)?.objective())
    }
}

/// `xᵀ B x` for a symmetric pentadiagonal band matrix.
fn band_quad(bands: &[Vec<f64>; 3], x: &[f64]) -> f64 {
    let n = x.len();
    let mut s = 0.0;
    for i in 0..n {
        s += bands[0][i] * x[i] * x[i];
        if i + 1 < n {
            s += 2.0 * bands[1][i] * x[i] * x[i + 1];
        }
        if i + 2 < n {
            s += 2.0 * bands[2][i] * x[i] * x[i + 2];
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::AsphaltType;
    use crate::ingest::CovariateRow;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn toy_panel(n: usize, years: usize, seed: u64) -> RoadPanel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kinds = [AsphaltType::Ac, AsphaltType::Agc, AsphaltType::Sma];
        let mut rutting = vec![vec![None; years + 1]; n];
        let mut covariates = vec![vec![None; years + 1]; n];
        for s in 0..n {
            let kind = kinds[s % 3];
            let width = rng.random_range(2.5..4.0);
            for t in 0..=years {
                let aadt = rng.random_range(0.05..1.8);
                let prev = (t > 0).then(|| rng.random_range(5.0..20.0));
                covariates[s][t] = Some(CovariateRow::new(kind, aadt, prev, width));
                if t > 0 && !(s == 1 && t == 1) {
                    rutting[s][t] = Some(rng.random_range(-1.0..4.0));
                }
            }
        }
        RoadPanel {
            segment_ids: (0..n as i64).collect(),
            positions: (0..n).map(|i| 100.0 + 20.0 * i as f64).collect(),
            years: (2010..2011 + years as i32).collect(),
            rutting,
            covariates,
        }
    }

    fn hyper(spec: &ModelSpec, t: usize) -> HyperParams {
        let mut v = vec![1.3f64.ln(), 0.7f64.ln()];
        if spec.variant.is_spatial() {
            v.extend([60.0f64.ln(), 0.8f64.ln()]);
            for k in 0..spec.n_annual(t) {
                v.extend([(40.0 + 10.0 * k as f64).ln(), (0.5 + 0.1 * k as f64).ln()]);
            }
        }
        HyperParams::from_log_vec(spec, t, &v).unwrap()
    }

    #[test]
    fn variant_metadata() {
        assert_eq!(Variant::M4.covariates(), &Covariate::ALL);
        assert_eq!(Variant::M2.covariates().len(), 4);
        assert_eq!(Variant::M6.covariates().len(), 3);
        assert!(Variant::M3.is_spatial() && !Variant::M4.is_spatial());
        assert_eq!("3".parse::<Variant>().unwrap(), Variant::M3);
        assert_eq!("M5".parse::<Variant>().unwrap(), Variant::M5);
        assert!("7".parse::<Variant>().is_err());
        assert_eq!(Variant::M1.counterpart(), Variant::M4);
        assert_eq!(Variant::M6.counterpart(), Variant::M3);
        let s = ModelSpec::new(Variant::M1);
        assert_eq!(s.n_hyper(10), 24);
        assert_eq!(ModelSpec { share_annual_hyperparams: true, ..s }.n_hyper(10), 6);
        assert_eq!(ModelSpec::new(Variant::M5).n_hyper(10), 2);
    }

    #[test]
    fn latent_dimension_by_variant() {
        let panel = toy_panel(5, 3, 1);
        let mesh = Mesh1D::from_nodes(panel.positions.clone()).unwrap();
        let m6 = LatentStructure::assemble(&ModelSpec::new(Variant::M6), &panel, &mesh).unwrap();
        assert_eq!(m6.dim(), 6);
        let m1 = LatentStructure::assemble(&ModelSpec::new(Variant::M1), &panel, &mesh).unwrap();
        assert_eq!(m1.dim(), 28);
        assert_eq!(m1.n_obs(), 14);
        for row in m1.design_rows() {
            assert_eq!(row.len(), 5 + 3);
        }
        let m4 = LatentStructure::assemble(&ModelSpec::new(Variant::M4), &panel, &mesh).unwrap();
        let row = &m4.design_rows()[0];
        let idx: Vec<usize> = row.iter().map(|e| e.0).collect();
        assert_eq!(idx, vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn off_mesh_positions_are_rejected() {
        let panel = toy_panel(5, 2, 2);
        let mesh = Mesh1D::uniform(0.0, 1000.0, 30.0).unwrap();
        assert!(matches!(
            LatentStructure::assemble(&ModelSpec::new(Variant::M2), &panel, &mesh),
            Err(ModelError::OffMesh { .. })
        ));
        assert!(LatentStructure::assemble(&ModelSpec::new(Variant::M5), &panel, &mesh).is_ok());
    }

    #[test]
    fn scalar_conjugate_update() {
        let q = SymEnvelope::from_triplets(1, &[(0, 0, 1.0)]);
        let c = condition_rows(&q, &[vec![(0, 1.0)]], &[2.0], 1.0).unwrap();
        assert!((c.mean[0] - 1.0).abs() < 1e-15);
        assert!((c.marginal_sds()[0] - 0.5f64.sqrt()).abs() < 1e-15);
        let expect = -0.5 * (2.0 * PI * 2.0).ln() - 0.5 * 4.0 / 2.0;
        assert!((c.log_marginal - expect).abs() < 1e-14);
        let prior = condition_rows(&q, &[], &[], 1.0).unwrap();
        assert_eq!(prior.mean, vec![0.0]);
        assert!((prior.marginal_sds()[0] - 1.0).abs() < 1e-15);
        assert_eq!(prior.log_marginal, 0.0);
    }

    #[test]
    fn scalar_marginal_closed_form() {
        let (s0, se, y) = (1.7f64, 0.6f64, -0.9f64);
        let q = SymEnvelope::from_triplets(1, &[(0, 0, s0.powi(-2))]);
        let c = condition_rows(&q, &[vec![(0, 1.0)]], &[y], se).unwrap();
        let v = s0 * s0 + se * se;
        let expect = -0.5 * (2.0 * PI * v).ln() - 0.5 * y * y / v;
        assert!((c.log_marginal - expect).abs() < 1e-13);
    }

    #[test]
    fn mean_is_stationary_point_of_log_joint() {
        let panel = toy_panel(6, 2, 3);
        let mesh = Mesh1D::for_positions(&panel.positions, 20.0, 40.0).unwrap();
        let spec = ModelSpec::new(Variant::M1);
        let s = LatentStructure::assemble(&spec, &panel, &mesh).unwrap();
        let hp = hyper(&spec, 2);
        let priors = PriorConfig::default();
        let q = s.prior_precision(&hp, &priors).unwrap();
        let ev = s.evaluate(&hp, &priors, false).unwrap();
        let m = &ev.conditional.mean;
        // ∇ of ½xᵀQx + ½‖y − Ax‖²/σ² at the mean.
        let mut g = q.mul_vec(m);
        for (row, &yi) in s.design_rows().iter().zip(s.observations()) {
            let r: f64 = row.iter().map(|&(i, a)| a * m[i]).sum::<f64>() - yi;
            for &(i, a) in row {
                g[i] += a * r / (hp.sigma_eps * hp.sigma_eps);
            }
        }
        let scale = s.observations().iter().map(|v| v.abs()).fold(1.0, f64::max);
        assert!(g.iter().all(|v| v.abs() < 1e-6 * scale), "{g:?}");
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let panel = toy_panel(7, 3, 4);
        let mesh = Mesh1D::for_positions(&panel.positions, 20.0, 60.0).unwrap();
        for (variant, shared) in [(Variant::M1, false), (Variant::M3, true), (Variant::M5, false)] {
            let spec = ModelSpec { variant, share_annual_hyperparams: shared };
            let s = LatentStructure::assemble(&spec, &panel, &mesh).unwrap();
            let hp = hyper(&spec, 3);
            let priors = PriorConfig::default();
            let g = s.evaluate(&hp, &priors, true).unwrap().gradient.unwrap();
            let theta = hp.to_log_vec();
            for k in 0..theta.len() {
                let h = 1e-5;
                let mut up = theta.clone();
                up[k] += h;
                let mut dn = theta.clone();
                dn[k] -= h;
                let fd = (s.objective(&up, &priors).unwrap() - s.objective(&dn, &priors).unwrap()) / (2.0 * h);
                assert!((fd - g[k]).abs() < 1e-5 * (1.0 + fd.abs()), "{variant} k={k}: fd {fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn non_spatial_results_ignore_mesh() {
        let panel = toy_panel(6, 2, 5);
        let spec = ModelSpec::new(Variant::M5);
        let a = LatentStructure::assemble(&spec, &panel, &Mesh1D::for_positions(&panel.positions, 20.0, 0.0).unwrap())
            .unwrap();
        let b = LatentStructure::assemble(&spec, &panel, &Mesh1D::uniform(-7.0, 3.0, 0.5).unwrap()).unwrap();
        let hp = hyper(&spec, 2);
        let priors = PriorConfig::default();
        let ea = a.evaluate(&hp, &priors, false).unwrap();
        let eb = b.evaluate(&hp, &priors, false).unwrap();
        assert_eq!(ea.log_marginal, eb.log_marginal);
        assert_eq!(ea.conditional.mean, eb.conditional.mean);
    }

    #[test]
    fn precision_prior_log_density_integrates_jacobian() {
        let p = PriorConfig { gamma_shape: 2.0, gamma_rate: 0.5, ..PriorConfig::default() };
        // Gamma(2, 0.5) for τ = e^{-2s}: density of s is f(τ)·2τ.
        let s = 0.3f64;
        let tau = (-2.0 * s).exp();
        let direct = (0.25 * tau * (-0.5 * tau).exp() * 2.0 * tau).ln();
        let (v, g) = p.precision_log_density(s);
        assert!((v - direct).abs() < 1e-12);
        let h = 1e-6;
        let fd = (p.precision_log_density(s + h).0 - p.precision_log_density(s - h).0) / (2.0 * h);
        assert!((fd - g).abs() < 1e-7);
    }
}
