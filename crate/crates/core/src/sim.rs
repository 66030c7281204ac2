//! Forward simulation of rutting panels from the hierarchical model.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{AsphaltType, Covariate, IngestConfig, IngestError, RawMeasurement, RoadPanel};
use crate::spde::{build_precision, MaternParams, Mesh1D, SpdeError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid simulation spec: {0}")]
    Spec(String),
    #[error("no segment lies in [{start}, {end}] m")]
    EmptyRange { start: f64, end: f64 },
    #[error(transparent)]
    Spde(#[from] SpdeError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

/// Range and sd of a simulated field; a zero sd switches the field off.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub range_m: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anomaly {
    pub start_m: f64,
    pub end_m: f64,
    pub extra_mm_per_year: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CovariateGenerator {
    pub aadt_min: f64,
    pub aadt_max: f64,
    /// Length of stretches sharing a base AADT.
    pub aadt_block_m: f64,
    /// Sd of the yearly log-AADT jitter.
    pub aadt_jitter: f64,
    /// Mean length of contiguous asphalt runs.
    pub asphalt_run_mean_m: f64,
    pub depth_init_mm: [f64; 2],
    pub road_width_m: [f64; 2],
    pub lane_count: u32,
}

impl Default for CovariateGenerator {
    fn default() -> Self {
        Self {
            aadt_min: 568.0,
            aadt_max: 18_500.0,
            aadt_block_m: 2_000.0,
            aadt_jitter: 0.05,
            asphalt_run_mean_m: 5_000.0,
            depth_init_mm: [5.0, 15.0],
            road_width_m: [6.0, 9.0],
            lane_count: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimSpec {
    pub n_segments: usize,
    /// Rutting years; depths are generated for one extra baseline year.
    pub n_years: usize,
    pub start_year: i32,
    pub spacing_m: f64,
    /// Raw-scale coefficients for `z_ac, z_agc, z_sma, z_d1, z_w`.
    pub beta: [f64; 5],
    pub sigma_eps: f64,
    pub sigma_gamma: f64,
    pub omega: FieldSpec,
    /// One entry per rutting year, or a single entry used for all years.
    pub xi: Vec<FieldSpec>,
    pub covariates: CovariateGenerator,
    pub anomalies: Vec<Anomaly>,
    /// Mesh extension beyond the data; defaults to twice the largest range.
    pub mesh_buffer_m: Option<f64>,
    pub seed: u64,
}

impl Default for SimSpec {
    fn default() -> Self {
        Self {
            n_segments: 500,
            n_years: 5,
            start_year: 2010,
            spacing_m: 20.0,
            beta: [1.2, 1.6, 0.8, 0.05, 0.1],
            sigma_eps: 1.4,
            sigma_gamma: 0.9,
            omega: FieldSpec { range_m: 1000.0, sd: 0.5 },
            xi: vec![FieldSpec { range_m: 300.0, sd: 0.5 }],
            covariates: CovariateGenerator::default(),
            anomalies: Vec::new(),
            mesh_buffer_m: None,
            seed: 1,
        }
    }
}

impl SimSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        let fail = |m: String| Err(SimError::Spec(m));
        if self.n_segments < 2 || self.n_years < 1 {
            return fail(format!("need >= 2 segments and >= 1 year, got {} and {}", self.n_segments, self.n_years));
        }
        if !(self.spacing_m > 0.0) {
            return fail(format!("spacing {} must be positive", self.spacing_m));
        }
        let nonneg = |x: f64| x >= 0.0 && x.is_finite();
        if !nonneg(self.sigma_eps) || !nonneg(self.sigma_gamma) {
            return fail("noise sds must be non-negative".into());
        }
        if !(self.xi.len() == 1 || self.xi.len() == self.n_years) {
            return fail(format!("xi needs 1 or {} entries, got {}", self.n_years, self.xi.len()));
        }
        for f in std::iter::once(&self.omega).chain(&self.xi) {
            if !nonneg(f.sd) || !(f.range_m > 0.0 && f.range_m.is_finite()) {
                return fail(format!("field {f:?} needs range > 0 and sd >= 0"));
            }
        }
        if self.beta.iter().any(|b| !b.is_finite()) {
            return fail("beta must be finite".into());
        }
        let c = &self.covariates;
        if !(c.aadt_min > 0.0 && c.aadt_max >= c.aadt_min)
            || !(c.aadt_block_m > 0.0 && c.asphalt_run_mean_m > 0.0)
            || !(c.aadt_jitter >= 0.0)
            || !(c.depth_init_mm[0] >= 0.0 && c.depth_init_mm[1] >= c.depth_init_mm[0])
            || !(c.road_width_m[0] > 0.0 && c.road_width_m[1] >= c.road_width_m[0])
            || c.lane_count == 0
        {
            return fail(format!("invalid covariate generator {c:?}"));
        }
        for a in &self.anomalies {
            if !(a.end_m >= a.start_m) || !a.extra_mm_per_year.is_finite() {
                return fail(format!("invalid anomaly {a:?}"));
            }
        }
        Ok(())
    }

    fn xi_for(&self, t: usize) -> FieldSpec {
        if self.xi.len() == 1 {
            self.xi[0]
        } else {
            self.xi[t]
        }
    }

    pub fn positions(&self) -> Vec<f64> {
        (0..self.n_segments).map(|i| i as f64 * self.spacing_m).collect()
    }
}

/// Every latent realization behind a simulated panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTruth {
    pub spec: SimSpec,
    pub years: Vec<i32>,
    pub positions: Vec<f64>,
    /// `[rutting year]`.
    pub gamma: Vec<f64>,
    /// Common field at each segment, anomalies included.
    pub omega: Vec<f64>,
    /// `[rutting year][segment]`.
    pub xi: Vec<Vec<f64>>,
    /// `[segment][rutting year]`.
    pub eta: Vec<Vec<f64>>,
    /// `[segment][rutting year]`.
    pub epsilon: Vec<Vec<f64>>,
    pub asphalt: Vec<AsphaltType>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub rows: Vec<RawMeasurement>,
    pub panel: RoadPanel,
    pub truth: SimTruth,
}

fn sample_field_at(
    mesh: &Mesh1D,
    nodes: &[usize],
    field: FieldSpec,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>, SimError> {
    if field.sd == 0.0 {
        return Ok(vec![0.0; nodes.len()]);
    }
    let q = build_precision(mesh, &MaternParams::new(field.range_m, field.sd)?)?;
    let x = crate::spde::sample_field(&q, rng)?;
    Ok(nodes.iter().map(|&i| x[i]).collect())
}

pub fn simulate_panel(spec: &SimSpec) -> Result<Simulation, SimError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_segments;
    let t_rut = spec.n_years;
    let positions = spec.positions();
    let g = &spec.covariates;

    // Asphalt runs and road widths.
    let kinds = [AsphaltType::Ac, AsphaltType::Agc, AsphaltType::Sma];
    let mut asphalt = Vec::with_capacity(n);
    let mut width = Vec::with_capacity(n);
    // Types cycle through a random order and no run exceeds a third of the
    // road, so every type is present.
    let mut order = kinds;
    order.shuffle(&mut rng);
    let cap = (n / 3).max(1);
    let mut run = 0usize;
    while asphalt.len() < n {
        let u: f64 = rng.random();
        let len = ((-u.max(1e-300).ln() * g.asphalt_run_mean_m / spec.spacing_m).round() as usize).clamp(1, cap);
        let kind = order[run % 3];
        run += 1;
        let w = rng.random_range(g.road_width_m[0]..=g.road_width_m[1]);
        for _ in 0..len.min(n - asphalt.len()) {
            asphalt.push(kind);
            width.push(w);
        }
    }
    // Blockwise log-uniform AADT with yearly jitter, for every depth year.
    let (lo, hi) = (g.aadt_min.ln(), g.aadt_max.ln());
    let n_blocks = (positions[n - 1] / g.aadt_block_m).floor() as usize + 1;
    let base: Vec<f64> = (0..n_blocks).map(|_| rng.random_range(lo..=hi)).collect();
    let mut aadt = vec![vec![0.0; t_rut + 1]; n];
    for t in 0..=t_rut {
        let jit: Vec<f64> = (0..n_blocks).map(|_| g.aadt_jitter * rng.sample::<f64, _>(StandardNormal)).collect();
        for s in 0..n {
            let b = (positions[s] / g.aadt_block_m).floor() as usize;
            aadt[s][t] = (base[b] + jit[b]).clamp(lo, hi).exp().round().max(1.0);
        }
    }

    // Latent effects.
    let gamma: Vec<f64> = (0..t_rut).map(|_| spec.sigma_gamma * rng.sample::<f64, _>(StandardNormal)).collect();
    let max_range = std::iter::once(spec.omega.range_m).chain(spec.xi.iter().map(|f| f.range_m)).fold(0.0, f64::max);
    let buffer = spec.mesh_buffer_m.unwrap_or(2.0 * max_range);
    let mesh = Mesh1D::for_positions(&positions, spec.spacing_m, buffer)?;
    let nodes: Vec<usize> = positions.iter().map(|&p| mesh.locate(p).expect("grid positions")).collect();
    let mut omega = sample_field_at(&mesh, &nodes, spec.omega, &mut rng)?;
    let xi: Vec<Vec<f64>> =
        (0..t_rut).map(|t| sample_field_at(&mesh, &nodes, spec.xi_for(t), &mut rng)).collect::<Result<_, _>>()?;
    for a in &spec.anomalies {
        for (s, &p) in positions.iter().enumerate() {
            if p >= a.start_m && p <= a.end_m {
                omega[s] += a.extra_mm_per_year;
            }
        }
    }

    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut depth = vec![vec![0.0; t_rut + 1]; n];
    let mut eta = vec![vec![0.0; t_rut]; n];
    let mut epsilon = vec![vec![0.0; t_rut]; n];
    for s in 0..n {
        depth[s][0] = rng.random_range(g.depth_init_mm[0]..=g.depth_init_mm[1]);
    }
    for t in 1..=t_rut {
        for s in 0..n {
            let lane = width[s] / g.lane_count as f64;
            let a = aadt[s][t] / crate::ingest::AADT_UNIT;
            let row = crate::ingest::CovariateRow::new(asphalt[s], a, Some(depth[s][t - 1]), lane);
            let fixed: f64 =
                Covariate::ALL.iter().zip(&spec.beta).map(|(&c, b)| b * row.get(c).expect("complete row")).sum();
            let e = fixed + gamma[t - 1] + omega[s] + xi[t - 1][s];
            let eps = spec.sigma_eps * noise.sample(&mut rng);
            eta[s][t - 1] = e;
            epsilon[s][t - 1] = eps;
            depth[s][t] = depth[s][t - 1] + e + eps;
        }
    }

    let years: Vec<i32> = (0..=t_rut as i32).map(|k| spec.start_year + k).collect();
    let mut rows = Vec::with_capacity(n * (t_rut + 1));
    for s in 0..n {
        for t in 0..=t_rut {
            rows.push(RawMeasurement {
                segment_id: s as i64,
                position_m: positions[s],
                year: years[t],
                rut_depth_mm: Some(depth[s][t]),
                aadt: aadt[s][t],
                asphalt_type: asphalt[s],
                road_width_m: width[s],
                lane_count: g.lane_count,
            });
        }
    }
    let cfg = IngestConfig { spacing_m: spec.spacing_m, ..IngestConfig::default() };
    let panel = RoadPanel::from_raw(&rows, &cfg)?;
    let truth = SimTruth { spec: spec.clone(), years, positions, gamma, omega, xi, eta, epsilon, asphalt };
    Ok(Simulation { rows, panel, truth })
}

/// Adds `extra` to the common field and to every observed rutting value of
/// segments in `[start_m, end_m]`.
pub fn inject_anomaly(
    panel: &mut RoadPanel,
    truth: &mut SimTruth,
    start_m: f64,
    end_m: f64,
    extra: f64,
) -> Result<usize, SimError> {
    let hits: Vec<usize> =
        panel.positions.iter().enumerate().filter(|(_, &p)| p >= start_m && p <= end_m).map(|(s, _)| s).collect();
    if hits.is_empty() || !(end_m >= start_m) {
        return Err(SimError::EmptyRange { start: start_m, end: end_m });
    }
    for &s in &hits {
        for r in panel.rutting[s].iter_mut().flatten() {
            *r += extra;
        }
        if let Some(t) = truth.positions.iter().position(|&p| p == panel.positions[s]) {
            truth.omega[t] += extra;
            for e in truth.eta[t].iter_mut() {
                *e += extra;
            }
        }
    }
    Ok(hits.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet(seed: u64) -> SimSpec {
        SimSpec {
            n_segments: 60,
            n_years: 3,
            sigma_eps: 0.0,
            sigma_gamma: 0.0,
            omega: FieldSpec { range_m: 200.0, sd: 0.0 },
            xi: vec![FieldSpec { range_m: 100.0, sd: 0.0 }],
            covariates: CovariateGenerator { asphalt_run_mean_m: 200.0, ..CovariateGenerator::default() },
            seed,
            ..SimSpec::default()
        }
    }

    #[test]
    fn noise_free_rutting_equals_fixed_predictor() {
        let spec = quiet(3);
        let sim = simulate_panel(&spec).unwrap();
        for s in 0..spec.n_segments {
            for t in 1..=spec.n_years {
                let row = sim.panel.covariates[s][t].unwrap();
                let fixed: f64 = Covariate::ALL.iter().zip(&spec.beta).map(|(&c, b)| b * row.get(c).unwrap()).sum();
                let r = sim.panel.rutting[s][t].unwrap();
                assert!((r - fixed).abs() < 1e-9, "{r} vs {fixed}");
            }
        }
    }

    #[test]
    fn same_seed_same_panel() {
        let spec = SimSpec { n_segments: 80, seed: 9, ..SimSpec::default() };
        let a = simulate_panel(&spec).unwrap();
        let b = simulate_panel(&spec).unwrap();
        assert_eq!(a, b);
        let mut c = spec.clone();
        c.seed = 10;
        assert_ne!(simulate_panel(&c).unwrap().panel, a.panel);
    }

    #[test]
    fn variance_decomposition() {
        let (so, sx, se) = (0.6, 0.4, 0.8);
        let mut cells = Vec::new();
        for rep in 0..200 {
            let spec = SimSpec {
                n_segments: 40,
                n_years: 1,
                beta: [0.0; 5],
                sigma_eps: se,
                sigma_gamma: 0.0,
                omega: FieldSpec { range_m: 300.0, sd: so },
                xi: vec![FieldSpec { range_m: 200.0, sd: sx }],
                seed: 1000 + rep,
                ..SimSpec::default()
            };
            let sim = simulate_panel(&spec).unwrap();
            // Uncensored rutting of one cell.
            cells.push(sim.truth.eta[20][0] + sim.truth.epsilon[20][0]);
        }
        let n = cells.len() as f64;
        let mean = cells.iter().sum::<f64>() / n;
        let var = cells.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let target: f64 = so * so + sx * sx + se * se;
        let mc_se = target * (2.0 / (n - 1.0)).sqrt();
        assert!((var - target).abs() < 3.0 * mc_se, "{var} vs {target}");
    }

    #[test]
    fn anomaly_injection() {
        let spec = SimSpec { n_segments: 100, n_years: 2, ..SimSpec::default() };
        let sim = simulate_panel(&spec).unwrap();
        let (mut p0, mut t0) = (sim.panel.clone(), sim.truth.clone());
        inject_anomaly(&mut p0, &mut t0, 500.0, 700.0, 0.0).unwrap();
        assert_eq!((p0, t0), (sim.panel.clone(), sim.truth.clone()));

        let (mut p, mut t) = (sim.panel.clone(), sim.truth.clone());
        let hits = inject_anomaly(&mut p, &mut t, 1000.0, 1200.0, 3.0).unwrap();
        assert_eq!(hits, 11);
        let mean_in = |panel: &RoadPanel| {
            let v: Vec<f64> = (50..=60).flat_map(|s| panel.rutting[s].iter().flatten().copied()).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!((mean_in(&p) - mean_in(&sim.panel) - 3.0).abs() < 1e-9);

        let (mut a, mut ta) = (sim.panel.clone(), sim.truth.clone());
        inject_anomaly(&mut a, &mut ta, 100.0, 300.0, 1.0).unwrap();
        inject_anomaly(&mut a, &mut ta, 600.0, 800.0, 2.0).unwrap();
        let (mut b, mut tb) = (sim.panel.clone(), sim.truth.clone());
        inject_anomaly(&mut b, &mut tb, 600.0, 800.0, 2.0).unwrap();
        inject_anomaly(&mut b, &mut tb, 100.0, 300.0, 1.0).unwrap();
        assert_eq!((a, ta), (b, tb));

        let (mut e, mut te) = (sim.panel.clone(), sim.truth.clone());
        assert!(matches!(inject_anomaly(&mut e, &mut te, 5001.0, 5009.0, 1.0), Err(SimError::EmptyRange { .. })));
    }

    #[test]
    fn rejects_invalid_spec() {
        let spec = SimSpec { sigma_eps: -1.0, ..SimSpec::default() };
        assert!(simulate_panel(&spec).is_err());
        let spec = SimSpec { xi: vec![FieldSpec { range_m: 1.0, sd: 1.0 }; 2], ..SimSpec::default() };
        assert!(simulate_panel(&spec).is_err());
    }
}
