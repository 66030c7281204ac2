//! Dense-linear-algebra oracles and shared simulation designs.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rutfield::ingest::RoadPanel;
use rutfield::model::{HyperParams, LatentStructure, PriorConfig, Variant};
use rutfield::sim::{Anomaly, CovariateGenerator, FieldSpec, SimSpec};
use rutfield::spde::{MaternParams, Mesh1D};

/// `Q = τ²(κ⁴C + 2κ²G + GC⁻¹G)` with lumped mass `C` and linear-element
/// stiffness `G`, assembled densely from the node positions.
pub fn dense_spde_precision(nodes: &[f64], p: &MaternParams) -> DMatrix<f64> {
    let n = nodes.len();
    let mut c = DVector::zeros(n);
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n - 1 {
        let h = nodes[i + 1] - nodes[i];
        c[i] += h / 2.0;
        c[i + 1] += h / 2.0;
        g[(i, i)] += 1.0 / h;
        g[(i + 1, i + 1)] += 1.0 / h;
        g[(i, i + 1)] -= 1.0 / h;
        g[(i + 1, i)] -= 1.0 / h;
    }
    let kappa = 12f64.sqrt() / p.range_m;
    let tau2 = 1.0 / (4.0 * kappa.powi(3) * p.marginal_sd.powi(2));
    let cinv = DMatrix::from_diagonal(&c.map(|v| 1.0 / v));
    let cm = DMatrix::from_diagonal(&c);
    (cm * kappa.powi(4) + &g * (2.0 * kappa * kappa) + &g * cinv * &g) * tau2
}

/// Exact Gaussian conditional computed in covariance form.
pub struct DenseOracle {
    /// Latent blocks in the order β, γ, ω(nodes), ξ_t(nodes) for each t.
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub cov: DMatrix<f64>,
    pub log_marginal: f64,
    pub design: DMatrix<f64>,
    pub y: Vec<f64>,
    pub n_fixed: usize,
    pub n_years: usize,
    pub n_nodes: usize,
}

impl DenseOracle {
    pub fn new(panel: &RoadPanel, variant: Variant, hp: &HyperParams, priors: &PriorConfig, mesh: &Mesh1D) -> Self {
        let covs = variant.covariates();
        let st = panel.standardization(covs).unwrap();
        let cells = panel.likelihood_cells(covs);
        let k = covs.len();
        let t_n = panel.n_years() - 1;
        let spatial = variant.is_spatial();
        let nn = if spatial { mesh.len() } else { 0 };
        let dim = k + t_n + nn * (1 + t_n);
        let mut prior_cov = DMatrix::zeros(dim, dim);
        for j in 0..k {
            prior_cov[(j, j)] = 1.0 / priors.beta_precision;
        }
        for t in 0..t_n {
            prior_cov[(k + t, k + t)] = hp.sigma_gamma.powi(2);
        }
        if spatial {
            let nodes = mesh.nodes();
            let mut put = |off: usize, p: &MaternParams| {
                let s = dense_spde_precision(nodes, p).try_inverse().unwrap();
                prior_cov.view_mut((off, off), (nn, nn)).copy_from(&s);
            };
            put(k + t_n, hp.omega.as_ref().unwrap());
            for t in 0..t_n {
                let p = if hp.xi.len() == 1 { hp.xi[0] } else { hp.xi[t] };
                put(k + t_n + nn * (1 + t), &p);
            }
        }
        let n_obs = cells.len();
        let mut a = DMatrix::zeros(n_obs, dim);
        let mut y = Vec::with_capacity(n_obs);
        for (r, &(s, t)) in cells.iter().enumerate() {
            let row = panel.covariates[s][t].unwrap();
            for (j, &c) in covs.iter().enumerate() {
                a[(r, j)] = st.apply(c, row.get(c).unwrap()).unwrap();
            }
            a[(r, k + t - 1)] = 1.0;
            if spatial {
                let node = mesh.locate(panel.positions[s]).unwrap();
                a[(r, k + t_n + node)] += 1.0;
                a[(r, k + t_n + nn * t + node)] += 1.0;
            }
            y.push(panel.rutting[s][t].unwrap());
        }
        let s2 = hp.sigma_eps.powi(2);
        let marg = &a * &prior_cov * a.transpose() + DMatrix::identity(n_obs, n_obs) * s2;
        let chol = marg.clone().cholesky().unwrap();
        let yv = DVector::from_vec(y.clone());
        let alpha = chol.solve(&yv);
        let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let log_marginal =
            -0.5 * n_obs as f64 * (2.0 * std::f64::consts::PI).ln() - 0.5 * log_det - 0.5 * yv.dot(&alpha);
        let pa = &prior_cov * a.transpose();
        let mean = &pa * &alpha;
        let cov = &prior_cov - &pa * chol.solve(&pa.transpose());
        Self {
            mean: mean.iter().copied().collect(),
            sd: (0..dim).map(|i| cov[(i, i)].sqrt()).collect(),
            cov,
            log_marginal,
            design: a,
            y,
            n_fixed: k,
            n_years: t_n,
            n_nodes: nn,
        }
    }

    /// Library index of every oracle coordinate.
    pub fn library_index(&self, s: &LatentStructure) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.n_fixed).map(|j| s.beta_index(j)).collect();
        idx.extend((0..self.n_years).map(|t| s.gamma_index(t)));
        idx.extend((0..self.n_nodes).map(|v| s.omega_index(v)));
        for t in 0..self.n_years {
            idx.extend((0..self.n_nodes).map(|v| s.xi_index(t, v)));
        }
        idx
    }
}

/// `‖a − b‖∞ / ‖b‖∞`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let num = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let den = b.iter().map(|v| v.abs()).fold(0.0, f64::max);
    num / den.max(f64::MIN_POSITIVE)
}

/// Covariate layout with every asphalt type, short traffic blocks and deep
/// initial ruts, so the repaving rule never triggers.
pub fn mixed_covariates() -> CovariateGenerator {
    CovariateGenerator {
        asphalt_run_mean_m: 500.0,
        aadt_block_m: 500.0,
        depth_init_mm: [15.0, 25.0],
        ..CovariateGenerator::default()
    }
}

/// Parameter-recovery design: model M1 at the default magnitudes.
pub fn recovery_spec(seed: u64) -> SimSpec {
    SimSpec {
        n_segments: 500,
        n_years: 5,
        sigma_eps: 1.4,
        sigma_gamma: 0.9,
        omega: FieldSpec { range_m: 1000.0, sd: 0.5 },
        covariates: mixed_covariates(),
        seed,
        ..SimSpec::default()
    }
}

pub const BUMP: (f64, f64) = (4000.0, 4190.0);

/// Hotspot design: moderate baseline, ten rutting years and a +3 mm/year
/// bump over 200 m.
pub fn hotspot_spec(seed: u64) -> SimSpec {
    let d = SimSpec::default();
    SimSpec {
        n_years: 10,
        beta: d.beta.map(|b| 0.5 * b),
        sigma_gamma: 0.3,
        covariates: CovariateGenerator { aadt_min: 2000.0, aadt_max: 6000.0, ..mixed_covariates() },
        anomalies: vec![Anomaly { start_m: BUMP.0, end_m: BUMP.1, extra_mm_per_year: 3.0 }],
        seed,
        ..d
    }
}

/// Mesh used for every fit: data grid plus twice the prior median range.
pub fn fit_mesh(panel: &RoadPanel, priors: &PriorConfig) -> Mesh1D {
    Mesh1D::for_positions(&panel.positions, 20.0, 2.0 * priors.field.range_median()).unwrap()
}
