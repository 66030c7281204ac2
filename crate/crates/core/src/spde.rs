//! One-dimensional SPDE representation of Matérn fields with smoothness 3/2.
//!
//! The field solves `(κ² − Δ)(τ x) = W` on a line. Linear finite elements with
//! a lumped mass matrix discretize it to the pentadiagonal precision
//! `Q = τ² (κ⁴ C + 2κ² G + G C⁻¹ G)`.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{EnvelopeLayout, LinalgError, SparsePrecision, SymEnvelope};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpdeError {
    #[error("mesh needs at least 3 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("mesh nodes must be strictly increasing (node {index} at {position} m)")]
    NotIncreasing { index: usize, position: f64 },
    #[error("invalid mesh parameter: {0}")]
    InvalidParameter(String),
    #[error("Matérn parameters must be positive and finite (range {range}, sd {sd})")]
    InvalidMatern { range: f64, sd: f64 },
    #[error("precision factorization failed: {0}")]
    Factorization(#[from] LinalgError),
}

const NODE_TOL: f64 = 1e-6;

/// Finite-element mesh along the road.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mesh1D {
    nodes: Vec<f64>,
    spacing: f64,
    buffer_m: f64,
}

impl Mesh1D {
    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self, SpdeError> {
        if nodes.len() < 3 {
            return Err(SpdeError::TooFewNodes(nodes.len()));
        }
        for (i, w) in nodes.windows(2).enumerate() {
            if !(w[1] > w[0]) || !w[1].is_finite() {
                return Err(SpdeError::NotIncreasing { index: i + 1, position: w[1] });
            }
        }
        let spacing = (nodes[nodes.len() - 1] - nodes[0]) / (nodes.len() - 1) as f64;
        Ok(Self { nodes, spacing, buffer_m: 0.0 })
    }

    /// Uniform nodes covering `[start, end]` at the given spacing.
    pub fn uniform(start: f64, end: f64, spacing: f64) -> Result<Self, SpdeError> {
        if !(spacing > 0.0) || !(end > start) {
            return Err(SpdeError::InvalidParameter(format!(
                "uniform mesh needs spacing > 0 and end > start (spacing {spacing}, [{start}, {end}])"
            )));
        }
        let intervals = ((end - start) / spacing - NODE_TOL).ceil().max(2.0) as usize;
        let nodes = (0..=intervals).map(|k| start + k as f64 * spacing).collect();
        let mut mesh = Self::from_nodes(nodes)?;
        mesh.spacing = spacing;
        Ok(mesh)
    }

    /// Uniform mesh through the observation grid, extended by at least
    /// `buffer_m` on each side. Every position lands on a node when the
    /// positions sit on a grid of `spacing` anchored at the first one.
    pub fn for_positions(positions: &[f64], spacing: f64, buffer_m: f64) -> Result<Self, SpdeError> {
        if positions.is_empty() {
            return Err(SpdeError::InvalidParameter("no positions to mesh".into()));
        }
        if !(buffer_m >= 0.0) || !(spacing > 0.0) {
            return Err(SpdeError::InvalidParameter(format!(
                "spacing must be > 0 and buffer >= 0 (spacing {spacing}, buffer {buffer_m})"
            )));
        }
        let lo = positions.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = positions.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let pad = (buffer_m / spacing - NODE_TOL).ceil().max(0.0) as usize;
        let span = ((hi - lo) / spacing).round() as usize;
        let total = span + 2 * pad;
        let start = lo - pad as f64 * spacing;
        let nodes: Vec<f64> = (0..=total.max(2)).map(|k| start + k as f64 * spacing).collect();
        let mut mesh = Self::from_nodes(nodes)?;
        mesh.spacing = spacing;
        mesh.buffer_m = pad as f64 * spacing;
        Ok(mesh)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn buffer_m(&self) -> f64 {
        self.buffer_m
    }

    /// Index of the node at `position`, within 1e-6 m.
    pub fn locate(&self, position: f64) -> Option<usize> {
        let idx = self.nodes.partition_point(|&x| x < position - NODE_TOL);
        (idx < self.nodes.len() && (self.nodes[idx] - position).abs() <= NODE_TOL).then_some(idx)
    }
}

/// Range / marginal standard deviation of a Matérn(ν = 3/2) field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaternParams {
    pub range_m: f64,
    pub marginal_sd: f64,
}

impl MaternParams {
    pub fn new(range_m: f64, marginal_sd: f64) -> Result<Self, SpdeError> {
        if !(range_m > 0.0 && range_m.is_finite() && marginal_sd > 0.0 && marginal_sd.is_finite()) {
            return Err(SpdeError::InvalidMatern { range: range_m, sd: marginal_sd });
        }
        Ok(Self { range_m, marginal_sd })
    }

    /// κ = 2√3 / ρ.
    pub fn kappa(&self) -> f64 {
        2.0 * 3f64.sqrt() / self.range_m
    }

    /// τ from σ² = 1 / (4 κ³ τ²).
    pub fn tau(&self) -> f64 {
        let k = self.kappa();
        1.0 / (2.0 * self.marginal_sd * (k * k * k).sqrt())
    }

    pub fn from_kappa_tau(kappa: f64, tau: f64) -> Result<Self, SpdeError> {
        let range = 2.0 * 3f64.sqrt() / kappa;
        let sd = 1.0 / (2.0 * tau * (kappa * kappa * kappa).sqrt());
        Self::new(range, sd)
    }
}

/// Matérn correlation for ν = 3/2: `(1 + κd) exp(−κd)`.
pub fn matern32_correlation(distance_m: f64, kappa: f64) -> f64 {
    debug_assert!(distance_m >= 0.0 && kappa > 0.0);
    let u = kappa * distance_m;
    (1.0 + u) * (-u).exp()
}

/// Lumped mass (diagonal) and stiffness (tridiagonal) matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct FemMatrices {
    pub mass: Vec<f64>,
    pub stiffness_diag: Vec<f64>,
    /// `stiffness_off[i]` couples nodes `i` and `i + 1`.
    pub stiffness_off: Vec<f64>,
}

impl FemMatrices {
    pub fn assemble(mesh: &Mesh1D) -> Result<Self, SpdeError> {
        let x = mesh.nodes();
        let n = x.len();
        if n < 3 {
            return Err(SpdeError::TooFewNodes(n));
        }
        let mut mass = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut off = vec![0.0; n - 1];
        for i in 0..n - 1 {
            let h = x[i + 1] - x[i];
            if !(h > 0.0) {
                return Err(SpdeError::NotIncreasing { index: i + 1, position: x[i + 1] });
            }
            mass[i] += h / 2.0;
            mass[i + 1] += h / 2.0;
            diag[i] += 1.0 / h;
            diag[i + 1] += 1.0 / h;
            off[i] = -1.0 / h;
        }
        Ok(Self { mass, stiffness_diag: diag, stiffness_off: off })
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    /// The three κ-independent pieces `C`, `G`, `G C⁻¹ G` as pentadiagonal
    /// bands: `bands[d][i]` is entry `(i + d, i)` for `d = 0, 1, 2`.
    pub fn operator_bands(&self) -> SpdeBands {
        let n = self.len();
        let g = |i: usize, j: usize| -> f64 {
            if i == j {
                self.stiffness_diag[i]
            } else if i + 1 == j {
                self.stiffness_off[i]
            } else if j + 1 == i {
                self.stiffness_off[j]
            } else {
                0.0
            }
        };
        let mut c = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        let mut gg = c.clone();
        let mut h = c.clone();
        for i in 0..n {
            c[0][i] = self.mass[i];
            gg[0][i] = self.stiffness_diag[i];
            if i + 1 < n {
                gg[1][i] = self.stiffness_off[i];
            }
            for d in 0..=2usize {
                let j = i + d;
                if j >= n {
                    continue;
                }
                // (G C⁻¹ G)_{j,i} = sum_k G_jk G_ki / C_k, k within one of both.
                let lo = j.saturating_sub(1);
                let hi = (i + 1).min(n - 1);
                let mut s = 0.0;
                for k in lo..=hi {
                    s += g(j, k) * g(k, i) / self.mass[k];
                }
                h[d][i] = s;
            }
        }
        SpdeBands { mass: c, stiffness: gg, biharmonic: h }
    }
}

/// Pentadiagonal building blocks of the SPDE precision.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdeBands {
    pub mass: [Vec<f64>; 3],
    pub stiffness: [Vec<f64>; 3],
    pub biharmonic: [Vec<f64>; 3],
}

impl SpdeBands {
    pub fn len(&self) -> usize {
        self.mass[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Bands of `a·C + b·G + c·GC⁻¹G`.
    pub fn combine(&self, a: f64, b: f64, c: f64) -> [Vec<f64>; 3] {
        let mut out = [Vec::new(), Vec::new(), Vec::new()];
        for (d, slot) in out.iter_mut().enumerate() {
            *slot = self.mass[d]
                .iter()
                .zip(&self.stiffness[d])
                .zip(&self.biharmonic[d])
                .map(|((m, s), h)| a * m + b * s + c * h)
                .collect();
        }
        out
    }

    /// Coefficients `(a, b, c)` of `Q = a C + b G + c GC⁻¹G`.
    pub fn precision_coefficients(params: &MaternParams) -> (f64, f64, f64) {
        // τ² κ⁴ = κ / (4σ²) etc. after substituting τ² = 1/(4κ³σ²).
        let k = params.kappa();
        let s2 = 4.0 * params.marginal_sd * params.marginal_sd;
        (k / s2, 2.0 / (k * s2), 1.0 / (k * k * k * s2))
    }

    /// Coefficients of `∂Q/∂log ρ`.
    pub fn range_derivative_coefficients(params: &MaternParams) -> (f64, f64, f64) {
        let (a, b, c) = Self::precision_coefficients(params);
        // ∂/∂log ρ = −∂/∂log κ; a ∝ κ, b ∝ κ⁻¹, c ∝ κ⁻³.
        (-a, b, 3.0 * c)
    }
}

/// Shared pentadiagonal layout for meshes of a given size.
pub fn pentadiagonal_layout(n: usize) -> Arc<EnvelopeLayout> {
    Arc::new(EnvelopeLayout::banded(n, 2))
}

/// Fills a pentadiagonal envelope from bands.
pub fn bands_to_matrix(bands: &[Vec<f64>; 3], layout: Arc<EnvelopeLayout>) -> SymEnvelope {
    let n = bands[0].len();
    let mut m = SymEnvelope::zeros(layout);
    for i in 0..n {
        for (d, band) in bands.iter().enumerate() {
            if i + d < n {
                m.add(i + d, i, band[i]).expect("pentadiagonal layout");
            }
        }
    }
    m
}

/// SPDE precision on the mesh.
pub fn build_precision(mesh: &Mesh1D, params: &MaternParams) -> Result<SparsePrecision, SpdeError> {
    let bands = FemMatrices::assemble(mesh)?.operator_bands();
    let (a, b, c) = SpdeBands::precision_coefficients(params);
    let q = bands_to_matrix(&bands.combine(a, b, c), pentadiagonal_layout(mesh.len()));
    // Surface indefiniteness here, with the smallest pivot, rather than later.
    q.cholesky()?;
    Ok(q)
}

/// One realization `x = L⁻ᵀ z` with `Q = L Lᵀ`.
pub fn sample_field<R: Rng + ?Sized>(q: &SparsePrecision, rng: &mut R) -> Result<Vec<f64>, SpdeError> {
    Ok(q.cholesky()?.sample(rng))
}

/// Penalized-complexity prior for (range, sd) of a one-dimensional Matérn
/// field, calibrated by `P(ρ < range0) = alpha_range` and
/// `P(σ > sd0) = alpha_sd`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PcMaternPrior {
    pub range0: f64,
    pub alpha_range: f64,
    pub sd0: f64,
    pub alpha_sd: f64,
}

impl Default for PcMaternPrior {
    fn default() -> Self {
        Self { range0: 250.0, alpha_range: 0.15, sd0: 2.5, alpha_sd: 0.05 }
    }
}

impl PcMaternPrior {
    pub fn validate(&self) -> Result<(), SpdeError> {
        let prob_ok = |p: f64| p > 0.0 && p < 1.0;
        if !(self.range0 > 0.0 && self.sd0 > 0.0 && prob_ok(self.alpha_range) && prob_ok(self.alpha_sd)) {
            return Err(SpdeError::InvalidParameter(format!(
                "PC prior needs positive thresholds and tail probabilities in (0, 1): {self:?}"
            )));
        }
        Ok(())
    }

    /// λ_ρ = −log(α₁) √ρ₀.
    pub fn lambda_range(&self) -> f64 {
        -self.alpha_range.ln() * self.range0.sqrt()
    }

    /// λ_σ = −log(α₂) / σ₀.
    pub fn lambda_sd(&self) -> f64 {
        -self.alpha_sd.ln() / self.sd0
    }

    /// `P(ρ < r) = exp(−λ_ρ r^{−1/2})`.
    pub fn range_cdf(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        (-self.lambda_range() / r.sqrt()).exp()
    }

    pub fn range_quantile(&self, p: f64) -> f64 {
        let l = self.lambda_range() / -p.ln();
        l * l
    }

    pub fn range_median(&self) -> f64 {
        self.range_quantile(0.5)
    }

    pub fn sd_survival(&self, s: f64) -> f64 {
        (-self.lambda_sd() * s.max(0.0)).exp()
    }

    pub fn range_log_density(&self, r: f64) -> f64 {
        let l = self.lambda_range();
        (0.5 * l).ln() - 1.5 * r.ln() - l / r.sqrt()
    }

    pub fn sd_log_density(&self, s: f64) -> f64 {
        let l = self.lambda_sd();
        l.ln() - l * s
    }

    /// Joint log density on the natural (ρ, σ) scale.
    pub fn log_density(&self, range: f64, sd: f64) -> f64 {
        self.range_log_density(range) + self.sd_log_density(sd)
    }

    /// Log density of `(log ρ, log σ)` and its gradient.
    pub fn log_density_log_scale(&self, log_range: f64, log_sd: f64) -> (f64, [f64; 2]) {
        let lr = self.lambda_range();
        let ls = self.lambda_sd();
        let e = (-0.5 * log_range).exp();
        let s = log_sd.exp();
        let value = (0.5 * lr).ln() - 0.5 * log_range - lr * e + ls.ln() - ls * s + log_sd;
        (value, [-0.5 + 0.5 * lr * e, 1.0 - ls * s])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matern_closed_form_values() {
        assert_eq!(matern32_correlation(0.0, 3.0), 1.0);
        assert!((matern32_correlation(1.0, 1.0) - 0.735_758_882_342_884_7).abs() < 1e-15);
        let p = MaternParams::new(150.0, 1.0).unwrap();
        let at_range = matern32_correlation(150.0, p.kappa());
        assert!((at_range - 0.139_731_350_192_314_67).abs() < 1e-12, "{at_range}");
    }

    #[test]
    fn fem_three_nodes_unit_spacing() {
        let mesh = Mesh1D::from_nodes(vec![0.0, 1.0, 2.0]).unwrap();
        let fem = FemMatrices::assemble(&mesh).unwrap();
        assert_eq!(fem.mass, vec![0.5, 1.0, 0.5]);
        assert_eq!(fem.stiffness_diag, vec![1.0, 2.0, 1.0]);
        assert_eq!(fem.stiffness_off, vec![-1.0, -1.0]);
    }

    #[test]
    fn precision_three_nodes_corner_entry() {
        let mesh = Mesh1D::from_nodes(vec![0.0, 1.0, 2.0]).unwrap();
        let p = MaternParams::from_kappa_tau(1.0, 1.0).unwrap();
        let q = build_precision(&mesh, &p).unwrap();
        assert!((q.get(0, 0) - 5.5).abs() < 1e-12);
    }

    #[test]
    fn kappa_tau_roundtrip() {
        for &(r, s) in &[(250.0, 2.5), (1.0, 0.01), (8000.0, 0.5)] {
            let p = MaternParams::new(r, s).unwrap();
            let back = MaternParams::from_kappa_tau(p.kappa(), p.tau()).unwrap();
            assert!((back.range_m / r - 1.0).abs() < 1e-12);
            assert!((back.marginal_sd / s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mesh_locates_positions_and_rejects_duplicates() {
        let mesh = Mesh1D::for_positions(&[100.0, 120.0, 160.0], 20.0, 50.0).unwrap();
        assert_eq!(mesh.nodes()[0], 40.0);
        assert_eq!(mesh.buffer_m(), 60.0);
        assert!(mesh.locate(120.0 + 5e-7).is_some());
        assert!(mesh.locate(130.0).is_none());
        assert!(matches!(Mesh1D::from_nodes(vec![0.0, 1.0, 1.0]), Err(SpdeError::NotIncreasing { .. })));
        assert!(matches!(Mesh1D::from_nodes(vec![0.0, 1.0]), Err(SpdeError::TooFewNodes(2))));
    }

    #[test]
    fn pc_prior_calibration_is_exact() {
        let prior = PcMaternPrior::default();
        assert!((prior.range_cdf(250.0) - 0.15).abs() < 1e-12);
        assert!((prior.sd_survival(2.5) - 0.05).abs() < 1e-12);
        let med = prior.range_median();
        let expected = (prior.lambda_range() / std::f64::consts::LN_2).powi(2);
        assert_eq!(med, expected);
        assert!((prior.range_cdf(med) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn log_scale_density_matches_natural_scale_plus_jacobian() {
        let prior = PcMaternPrior::default();
        let (r, s) = (900.0_f64, 0.7_f64);
        let (v, g) = prior.log_density_log_scale(r.ln(), s.ln());
        assert!((v - (prior.log_density(r, s) + r.ln() + s.ln())).abs() < 1e-12);
        let h = 1e-6;
        let fd0 = (prior.log_density_log_scale(r.ln() + h, s.ln()).0
            - prior.log_density_log_scale(r.ln() - h, s.ln()).0)
            / (2.0 * h);
        let fd1 = (prior.log_density_log_scale(r.ln(), s.ln() + h).0
            - prior.log_density_log_scale(r.ln(), s.ln() - h).0)
            / (2.0 * h);
        assert!((fd0 - g[0]).abs() < 1e-7 && (fd1 - g[1]).abs() < 1e-7);
    }
}
