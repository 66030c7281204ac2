//! Diagnostics and decision outputs over a finished fit.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::infer::{FittedModel, InferError, Z975};
use crate::ingest::{AsphaltType, Covariate, CovariateRow, RoadPanel, AADT_UNIT};
use crate::model::Components;

/// Default largest lag for the empirical correlation.
pub const DEFAULT_MAX_LAG_M: f64 = 300.0;
/// Daily traffic below which the low-traffic maintenance threshold applies.
pub const DEFAULT_AADT_CUTOFF: f64 = 5000.0;
pub const LOW_TRAFFIC_THRESHOLD_MM: f64 = 25.0;
pub const HIGH_TRAFFIC_THRESHOLD_MM: f64 = 20.0;
/// Standardized distance beyond which a scenario covariate is flagged.
pub const SUPPORT_SD: f64 = 5.0;
pub const DEPTH_BOUNDS_MM: (f64, f64) = (0.0, f64::INFINITY);
pub const WIDTH_BOUNDS_M: (f64, f64) = (2.0, 8.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyzeError {
    #[error(transparent)]
    Infer(#[from] InferError),
    #[error("position {0} m is not on the {1} m grid")]
    OffGrid(f64, f64),
    #[error("need at least two non-missing values, found {0}")]
    TooFewValues(usize),
    #[error("values and positions differ in length ({0} vs {1})")]
    Length(usize, usize),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("year {0} is not a rutting year of the fit")]
    UnknownYear(i32),
    #[error("csv output failed: {0}")]
    Io(String),
}

fn io(e: impl std::fmt::Display) -> AnalyzeError {
    AnalyzeError::Io(e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LagCorrelation {
    pub lag_m: f64,
    pub correlation: f64,
    pub n_pairs: usize,
}

/// Pearson correlation of pairs of values `lag` grid steps apart, for every
/// lag up to `max_lag_m`. Lags with fewer than 3 complete pairs or no
/// spread are omitted.
pub fn empirical_autocorrelation(
    values: &[Option<f64>],
    positions: &[f64],
    spacing_m: f64,
    max_lag_m: f64,
) -> Result<Vec<LagCorrelation>, AnalyzeError> {
    if values.len() != positions.len() {
        return Err(AnalyzeError::Length(values.len(), positions.len()));
    }
    if !(spacing_m > 0.0) || !(max_lag_m >= 0.0) {
        return Err(AnalyzeError::Invalid(format!("spacing {spacing_m}, max lag {max_lag_m}")));
    }
    let mut grid = BTreeMap::new();
    for (&v, &p) in values.iter().zip(positions) {
        let k = (p / spacing_m).round();
        if (p - k * spacing_m).abs() > 1e-6 * spacing_m {
            return Err(AnalyzeError::OffGrid(p, spacing_m));
        }
        if let Some(v) = v.filter(|v| v.is_finite()) {
            grid.insert(k as i64, v);
        }
    }
    if grid.len() < 2 {
        return Err(AnalyzeError::TooFewValues(grid.len()));
    }
    let max_steps = (max_lag_m / spacing_m + 1e-9).floor() as i64;
    let mut out = Vec::new();
    for lag in 0..=max_steps {
        let pairs: Vec<(f64, f64)> = grid.iter().filter_map(|(k, &a)| grid.get(&(k + lag)).map(|&b| (a, b))).collect();
        if pairs.len() < 3 {
            continue;
        }
        let Some(r) = pearson(&pairs) else { continue };
        let correlation = if lag == 0 { 1.0 } else { r };
        out.push(LagCorrelation { lag_m: lag as f64 * spacing_m, correlation, n_pairs: pairs.len() });
    }
    Ok(out)
}

fn pearson(pairs: &[(f64, f64)]) -> Option<f64> {
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn write_autocorrelation_csv<W: Write>(rows: &[LagCorrelation], out: W) -> Result<(), AnalyzeError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["lag_m", "correlation", "n_pairs"]).map_err(io)?;
    for r in rows {
        w.write_record([r.lag_m.to_string(), r.correlation.to_string(), r.n_pairs.to_string()]).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Posterior of a segment's linear predictor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentEta {
    pub segment: usize,
    pub segment_id: i64,
    pub position_m: f64,
    pub eta_hat: f64,
    pub sd: f64,
}

impl SegmentEta {
    pub fn band(&self) -> (f64, f64) {
        (self.eta_hat - Z975 * self.sd, self.eta_hat + Z975 * self.sd)
    }

    /// Gaussian probability that the predictor exceeds `threshold`.
    pub fn exceedance(&self, threshold: f64) -> f64 {
        if self.sd > 0.0 {
            let n = Normal::new(self.eta_hat, self.sd).expect("positive sd");
            n.sf(threshold)
        } else if self.eta_hat > threshold {
            1.0
        } else {
            0.0
        }
    }
}

/// Sums duplicate latent indices of a row.
fn merge(row: impl IntoIterator<Item = (usize, f64)>) -> Vec<(usize, f64)> {
    let mut m = BTreeMap::new();
    for (i, a) in row {
        *m.entry(i).or_insert(0.0) += a;
    }
    m.into_iter().collect()
}

/// Year-averaged covariates and yearly effect plus the common field:
/// `β̂·z̄ + γ̄ + ω̂(s)`, over the years with complete covariates.
pub fn segment_eta(fit: &FittedModel) -> Result<Vec<SegmentEta>, AnalyzeError> {
    let s = &fit.structure;
    let spatial = s.variant().is_spatial();
    let mut out = Vec::new();
    for seg in 0..s.n_segments() {
        let years: Vec<usize> = (0..s.n_years()).filter(|&t| s.standardized_covariates(seg, t).is_some()).collect();
        if years.is_empty() {
            continue;
        }
        let w = 1.0 / years.len() as f64;
        let mut row = Vec::new();
        for &t in &years {
            let r = s.design_row(seg, t, Components::EXPLAINED).expect("complete covariates");
            row.extend(r.into_iter().map(|(i, a)| (i, w * a)));
        }
        if spatial {
            let node = s.segment_node(seg).expect("spatial segments have nodes");
            row.push((s.omega_index(node), 1.0));
        }
        let (mean, sd) = fit.linear_form(&merge(row))?;
        out.push(SegmentEta {
            segment: seg,
            segment_id: s.segment_ids()[seg],
            position_m: s.positions()[seg],
            eta_hat: mean,
            sd,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hotspot {
    pub segment: usize,
    pub segment_id: i64,
    pub position_m: f64,
    pub eta_hat: f64,
    pub lo95: f64,
    pub hi95: f64,
    pub p_exceed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HotspotReport {
    pub threshold_mm: f64,
    /// The predictor includes the common spatial field.
    pub omega_included: bool,
    pub note: Option<String>,
    /// Sorted by position; every `eta_hat` exceeds the threshold.
    pub hotspots: Vec<Hotspot>,
}

/// Segments whose predictor exceeds `threshold_mm`, sorted by position.
pub fn select_hotspots(etas: &[SegmentEta], threshold_mm: f64, omega_included: bool) -> HotspotReport {
    let mut hotspots: Vec<Hotspot> = etas
        .iter()
        .filter(|e| e.eta_hat > threshold_mm)
        .map(|e| {
            let (lo95, hi95) = e.band();
            Hotspot {
                segment: e.segment,
                segment_id: e.segment_id,
                position_m: e.position_m,
                eta_hat: e.eta_hat,
                lo95,
                hi95,
                p_exceed: e.exceedance(threshold_mm),
            }
        })
        .collect();
    hotspots.sort_by(|a, b| a.position_m.total_cmp(&b.position_m).then(a.segment.cmp(&b.segment)));
    let note = (!omega_included).then(|| "non-spatial model: the common spatial field is absent".to_string());
    HotspotReport { threshold_mm, omega_included, note, hotspots }
}

pub fn detect_hotspots(fit: &FittedModel, threshold_mm: f64) -> Result<HotspotReport, AnalyzeError> {
    if !(threshold_mm > 0.0) || !threshold_mm.is_finite() {
        return Err(AnalyzeError::Invalid(format!("threshold must be positive, got {threshold_mm}")));
    }
    Ok(select_hotspots(&segment_eta(fit)?, threshold_mm, fit.variant().is_spatial()))
}

pub fn write_hotspots_csv<W: Write>(report: &HotspotReport, out: W) -> Result<(), AnalyzeError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["position_m", "eta_hat", "lo95", "hi95", "p_exceed"]).map_err(io)?;
    for h in &report.hotspots {
        w.write_record([
            h.position_m.to_string(),
            h.eta_hat.to_string(),
            h.lo95.to_string(),
            h.hi95.to_string(),
            h.p_exceed.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

/// A covariate override.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting<T> {
    #[default]
    Keep,
    Set(T),
}

impl<T: Copy> Setting<T> {
    fn or(self, current: Option<T>) -> Option<T> {
        match self {
            Setting::Keep => current,
            Setting::Set(v) => Some(v),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Best,
    Worse,
}

impl std::str::FromStr for Preset {
    type Err = AnalyzeError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "best" => Ok(Preset::Best),
            "worse" | "worst" => Ok(Preset::Worse),
            _ => Err(AnalyzeError::Invalid(format!("unknown preset {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRequest {
    pub id: String,
    /// Half-open segment index range; `None` covers the whole panel.
    pub segments: Option<(usize, usize)>,
    /// Rutting year; `None` averages over years.
    pub year: Option<i32>,
    pub asphalt: Setting<AsphaltType>,
    pub prev_depth_mm: Setting<f64>,
    pub lane_width_m: Setting<f64>,
    /// Reference level for the exceedance probability.
    pub threshold_mm: f64,
}

impl ScenarioRequest {
    pub fn keep(id: &str) -> Self {
        Self {
            id: id.to_string(),
            segments: None,
            year: None,
            asphalt: Setting::Keep,
            prev_depth_mm: Setting::Keep,
            lane_width_m: Setting::Keep,
            threshold_mm: 2.0,
        }
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Best => Self {
                asphalt: Setting::Set(AsphaltType::Sma),
                prev_depth_mm: Setting::Set(0.01),
                lane_width_m: Setting::Set(6.0),
                ..Self::keep("best")
            },
            Preset::Worse => Self {
                asphalt: Setting::Set(AsphaltType::Agc),
                prev_depth_mm: Setting::Set(25.0),
                lane_width_m: Setting::Set(2.75),
                ..Self::keep("worse")
            },
        }
    }

    pub fn validate(&self) -> Result<(), AnalyzeError> {
        if let Setting::Set(d) = self.prev_depth_mm {
            if !(d >= DEPTH_BOUNDS_MM.0) || !d.is_finite() {
                return Err(AnalyzeError::Invalid(format!("previous depth {d} mm must be ≥ 0")));
            }
        }
        if let Setting::Set(w) = self.lane_width_m {
            if !(WIDTH_BOUNDS_M.0..=WIDTH_BOUNDS_M.1).contains(&w) {
                return Err(AnalyzeError::Invalid(format!("lane width {w} m outside [2, 8]")));
            }
        }
        if let Some((a, b)) = self.segments {
            if a >= b {
                return Err(AnalyzeError::Invalid(format!("empty segment range {a}..{b}")));
            }
        }
        if !(self.threshold_mm > 0.0) {
            return Err(AnalyzeError::Invalid(format!("threshold {} must be positive", self.threshold_mm)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRow {
    pub scenario: String,
    pub segment: usize,
    pub segment_id: i64,
    pub position_m: f64,
    pub eta_hat: f64,
    pub lo95: f64,
    pub hi95: f64,
    pub p_exceed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub rows: Vec<ScenarioRow>,
    pub warnings: Vec<String>,
}

/// Covariate groups in the order they enter the sequential predictor.
pub const SEQUENTIAL_STAGES: [(&str, &[Covariate]); 3] = [
    ("asphalt", &[Covariate::Ac, Covariate::Agc, Covariate::Sma]),
    ("d1", &[Covariate::Ac, Covariate::Agc, Covariate::Sma, Covariate::DepthPrev]),
    ("w", &[Covariate::Ac, Covariate::Agc, Covariate::Sma, Covariate::DepthPrev, Covariate::Width]),
];

fn scenario_covariates(base: &CovariateRow, req: &ScenarioRequest) -> Option<CovariateRow> {
    let inputs = base.decompose();
    if inputs.asphalt.is_none() {
        // Zero traffic zeroes every interaction whatever the overrides.
        let d1 = match req.prev_depth_mm {
            Setting::Keep => base.d1,
            Setting::Set(_) => Some(0.0),
        };
        return Some(CovariateRow { d1, ..*base });
    }
    let asphalt = req.asphalt.or(inputs.asphalt)?;
    let depth = req.prev_depth_mm.or(inputs.prev_depth_mm);
    let width = req.lane_width_m.or(inputs.lane_width_m)?;
    let row = CovariateRow::new(asphalt, inputs.aadt_scaled, depth, width);
    Some(row)
}

/// Predictor under covariate overrides, restricted to the fixed effects in
/// `use_covariates` plus `γ` and `ω̂(s)`.
fn scenario_rows(
    fit: &FittedModel,
    panel: &RoadPanel,
    req: &ScenarioRequest,
    use_covariates: &[Covariate],
    warnings: &mut Vec<String>,
) -> Result<Vec<ScenarioRow>, AnalyzeError> {
    let s = &fit.structure;
    let years: Vec<usize> = match req.year {
        Some(y) => vec![s.years().iter().position(|&v| v == y).ok_or(AnalyzeError::UnknownYear(y))?],
        None => (0..s.n_years()).collect(),
    };
    let (lo, hi) = req.segments.unwrap_or((0, s.n_segments()));
    if hi > s.n_segments() {
        return Err(AnalyzeError::Invalid(format!("segment range ends at {hi}, panel has {}", s.n_segments())));
    }
    let st = s.standardization();
    let spatial = s.variant().is_spatial();
    let mut outside: BTreeMap<Covariate, (usize, f64)> = BTreeMap::new();
    let mut out = Vec::new();
    for seg in lo..hi {
        let mut acc: Vec<(usize, f64)> = Vec::new();
        let mut used = 0usize;
        for &t in &years {
            // Rutting-year index t sits at panel year t + 1.
            let Some(base) = panel.covariates[seg][t + 1] else { continue };
            let Some(row) = scenario_covariates(&base, req) else { continue };
            let mut fixed = Vec::new();
            let mut complete = true;
            for (j, &c) in s.covariates().iter().enumerate() {
                if !use_covariates.contains(&c) {
                    continue;
                }
                let Some(raw) = row.get(c) else {
                    complete = false;
                    break;
                };
                let z = st.apply(c, raw).expect("fitted column");
                if z.abs() > SUPPORT_SD {
                    let e = outside.entry(c).or_insert((0usize, 0.0f64));
                    e.0 += 1;
                    e.1 = e.1.max(z.abs());
                }
                fixed.push((s.beta_index(j), z));
            }
            if !complete {
                continue;
            }
            used += 1;
            acc.extend(fixed);
            acc.push((s.gamma_index(t), 1.0));
        }
        if used == 0 {
            continue;
        }
        let w = 1.0 / used as f64;
        let mut row: Vec<(usize, f64)> = acc.into_iter().map(|(i, a)| (i, w * a)).collect();
        if spatial {
            row.push((s.omega_index(s.segment_node(seg).expect("node")), 1.0));
        }
        let (mean, sd) = fit.linear_form(&merge(row))?;
        let e = SegmentEta {
            segment: seg,
            segment_id: s.segment_ids()[seg],
            position_m: s.positions()[seg],
            eta_hat: mean,
            sd,
        };
        let (lo95, hi95) = e.band();
        out.push(ScenarioRow {
            scenario: req.id.clone(),
            segment: seg,
            segment_id: e.segment_id,
            position_m: e.position_m,
            eta_hat: mean,
            lo95,
            hi95,
            p_exceed: e.exceedance(req.threshold_mm),
        });
    }
    for (c, (count, max)) in outside {
        warnings.push(format!(
            "scenario {}: {} lies more than {SUPPORT_SD} sd outside the fitted support in {count} cells (max {max:.2} sd)",
            req.id,
            c.name()
        ));
    }
    Ok(out)
}

/// `β̂·z + γ + ω̂(s)` per segment with covariates rebuilt under the
/// request's overrides and the fit's stored standardization.
pub fn scenario_predict(
    fit: &FittedModel,
    panel: &RoadPanel,
    req: &ScenarioRequest,
) -> Result<ScenarioReport, AnalyzeError> {
    req.validate()?;
    let mut warnings = Vec::new();
    let rows = scenario_rows(fit, panel, req, &Covariate::ALL, &mut warnings)?;
    Ok(ScenarioReport { rows, warnings })
}

/// The sequential series: asphalt terms only, then adding the previous
/// depth, then the lane width; stages whose covariates the variant lacks
/// are skipped.
pub fn scenario_sequential(
    fit: &FittedModel,
    panel: &RoadPanel,
    req: &ScenarioRequest,
) -> Result<ScenarioReport, AnalyzeError> {
    req.validate()?;
    let mut warnings = Vec::new();
    let mut rows = Vec::new();
    let fitted = fit.structure.covariates();
    for (name, covs) in SEQUENTIAL_STAGES {
        let last = covs[covs.len() - 1];
        if !fitted.contains(&last) {
            continue;
        }
        let stage = ScenarioRequest { id: format!("{}_{name}", req.id), ..req.clone() };
        rows.extend(scenario_rows(fit, panel, &stage, covs, &mut warnings)?);
    }
    Ok(ScenarioReport { rows, warnings })
}

pub fn write_scenario_csv<W: Write>(report: &ScenarioReport, out: W) -> Result<(), AnalyzeError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["scenario", "position_m", "eta_hat", "lo95", "hi95", "p_exceed"]).map_err(io)?;
    for r in &report.rows {
        w.write_record([
            r.scenario.clone(),
            r.position_m.to_string(),
            r.eta_hat.to_string(),
            r.lo95.to_string(),
            r.hi95.to_string(),
            r.p_exceed.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "years")]
pub enum Lifetime {
    Years(f64),
    NoProjectedMaintenance,
}

/// Years until the depth reaches the threshold at a constant rate, rounded
/// to one decimal.
pub fn estimate_lifetime(
    current_depth_mm: f64,
    rate_mm_per_year: f64,
    threshold_mm: f64,
) -> Result<Lifetime, AnalyzeError> {
    if !current_depth_mm.is_finite() || !threshold_mm.is_finite() || rate_mm_per_year.is_nan() {
        return Err(AnalyzeError::Invalid("non-finite lifetime input".into()));
    }
    if threshold_mm < current_depth_mm {
        return Err(AnalyzeError::Invalid(format!(
            "threshold {threshold_mm} mm is below the current depth {current_depth_mm} mm"
        )));
    }
    if rate_mm_per_year <= 0.0 {
        return Ok(Lifetime::NoProjectedMaintenance);
    }
    let years = (threshold_mm - current_depth_mm) / rate_mm_per_year;
    Ok(Lifetime::Years((years * 10.0).round() / 10.0))
}

/// Maintenance depth for a road with the given daily traffic.
pub fn maintenance_threshold(aadt_per_day: f64, cutoff_per_day: f64) -> f64 {
    if aadt_per_day < cutoff_per_day {
        LOW_TRAFFIC_THRESHOLD_MM
    } else {
        HIGH_TRAFFIC_THRESHOLD_MM
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentLifetime {
    pub segment_id: i64,
    pub position_m: f64,
    pub depth_mm: f64,
    pub rate_mm_per_year: f64,
    pub threshold_mm: f64,
    pub lifetime: Lifetime,
}

/// Lifetimes from each segment's latest reconstructable depth and its
/// year-averaged predictor. Segments already past the threshold get 0.
pub fn segment_lifetimes(
    fit: &FittedModel,
    panel: &RoadPanel,
    aadt_cutoff: f64,
) -> Result<Vec<SegmentLifetime>, AnalyzeError> {
    let etas = segment_eta(fit)?;
    let mut out = Vec::new();
    for e in etas {
        let seg = e.segment;
        let latest = (1..panel.n_years()).rev().find_map(|t| {
            let inputs = panel.covariates[seg][t]?.decompose();
            let prev = inputs.prev_depth_mm?;
            Some((prev + panel.rutting[seg][t].unwrap_or(0.0), inputs.aadt_scaled * AADT_UNIT))
        });
        let Some((depth, aadt)) = latest else { continue };
        let depth = depth.max(0.0);
        let threshold = maintenance_threshold(aadt, aadt_cutoff);
        let lifetime =
            if depth >= threshold { Lifetime::Years(0.0) } else { estimate_lifetime(depth, e.eta_hat, threshold)? };
        out.push(SegmentLifetime {
            segment_id: e.segment_id,
            position_m: e.position_m,
            depth_mm: depth,
            rate_mm_per_year: e.eta_hat,
            threshold_mm: threshold,
            lifetime,
        });
    }
    Ok(out)
}

pub fn write_lifetimes_csv<W: Write>(rows: &[SegmentLifetime], out: W) -> Result<(), AnalyzeError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["segment_id", "position_m", "depth_mm", "rate_mm_per_year", "threshold_mm", "years"])
        .map_err(io)?;
    for r in rows {
        let years = match r.lifetime {
            Lifetime::Years(y) => y.to_string(),
            Lifetime::NoProjectedMaintenance => "none".to_string(),
        };
        w.write_record([
            r.segment_id.to_string(),
            r.position_m.to_string(),
            r.depth_mm.to_string(),
            r.rate_mm_per_year.to_string(),
            r.threshold_mm.to_string(),
            years,
        ])
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{HyperParams, LatentStructure, ModelSpec, PriorConfig, Variant};
    use crate::sim::{simulate_panel, CovariateGenerator, FieldSpec, SimSpec};
    use crate::spde::{matern32_correlation, MaternParams, Mesh1D};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn eta(seg: usize, v: f64) -> SegmentEta {
        SegmentEta { segment: seg, segment_id: seg as i64, position_m: 20.0 * seg as f64, eta_hat: v, sd: 0.3 }
    }

    fn small_fit(variant: Variant) -> (FittedModel, RoadPanel) {
        let spec = SimSpec {
            n_segments: 40,
            n_years: 3,
            xi: vec![FieldSpec { range_m: 200.0, sd: 0.3 }],
            omega: FieldSpec { range_m: 300.0, sd: 0.5 },
            covariates: CovariateGenerator { asphalt_run_mean_m: 100.0, aadt_block_m: 200.0, ..Default::default() },
            seed: 4,
            ..SimSpec::default()
        };
        let sim = simulate_panel(&spec).unwrap();
        let mesh = Mesh1D::for_positions(&sim.panel.positions, 20.0, 200.0).unwrap();
        let ms = ModelSpec::new(variant);
        let s = LatentStructure::assemble(&ms, &sim.panel, &mesh).unwrap();
        let hyper = HyperParams {
            sigma_eps: 1.4,
            sigma_gamma: 0.9,
            omega: variant.is_spatial().then(|| MaternParams::new(300.0, 0.5).unwrap()),
            xi: if variant.is_spatial() { vec![MaternParams::new(200.0, 0.3).unwrap(); 3] } else { vec![] },
        };
        (FittedModel::at_hyper(s, &PriorConfig::default(), &hyper, 0).unwrap(), sim.panel)
    }

    #[test]
    fn hotspot_selection_examples() {
        let etas = [eta(0, 1.5), eta(1, 2.5), eta(2, 3.5)];
        let r = select_hotspots(&etas, 2.0, true);
        assert_eq!(r.hotspots.iter().map(|h| h.segment).collect::<Vec<_>>(), vec![1, 2]);
        assert!(select_hotspots(&etas, 10.0, true).hotspots.is_empty());
        assert!(select_hotspots(&etas, 2.0, false).note.is_some());
        let h = &r.hotspots[1];
        assert!((h.lo95 - (3.5 - Z975 * 0.3)).abs() < 1e-15);
        assert!(h.p_exceed > 0.99);
    }

    #[test]
    fn lifetime_examples() {
        assert_eq!(estimate_lifetime(0.0, 2.0, 25.0).unwrap(), Lifetime::Years(12.5));
        assert_eq!(estimate_lifetime(0.0, 4.67, 25.0).unwrap(), Lifetime::Years(5.4));
        assert_eq!(estimate_lifetime(7.0, 1.0, 7.0).unwrap(), Lifetime::Years(0.0));
        assert_eq!(estimate_lifetime(3.0, 0.0, 25.0).unwrap(), Lifetime::NoProjectedMaintenance);
        assert_eq!(estimate_lifetime(3.0, -1.0, 25.0).unwrap(), Lifetime::NoProjectedMaintenance);
        assert!(estimate_lifetime(30.0, 1.0, 25.0).is_err());
        assert_eq!(maintenance_threshold(4999.0, DEFAULT_AADT_CUTOFF), 25.0);
        assert_eq!(maintenance_threshold(5000.0, DEFAULT_AADT_CUTOFF), 20.0);
    }

    #[test]
    fn autocorrelation_lag_zero_and_omission() {
        let pos: Vec<f64> = (0..5).map(|i| 20.0 * i as f64).collect();
        let v = vec![Some(1.0), Some(3.0), None, Some(2.0), Some(5.0)];
        let r = empirical_autocorrelation(&v, &pos, 20.0, 300.0).unwrap();
        assert_eq!(r[0].lag_m, 0.0);
        assert_eq!(r[0].correlation, 1.0);
        assert_eq!(r[0].n_pairs, 4);
        // Only lag 0 has at least 3 complete pairs.
        assert_eq!(r.len(), 1);
        assert!(empirical_autocorrelation(&v, &[0.0, 20.0, 40.0, 61.0, 80.0], 20.0, 300.0).is_err());
        assert!(empirical_autocorrelation(&[Some(1.0), None], &pos[..2], 20.0, 300.0).is_err());
    }

    #[test]
    fn autocorrelation_of_iid_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 2000;
        let v: Vec<Option<f64>> = (0..n).map(|_| Some(StandardNormal.sample(&mut rng))).collect();
        let pos: Vec<f64> = (0..n).map(|i| 20.0 * i as f64).collect();
        let r = empirical_autocorrelation(&v, &pos, 20.0, 300.0).unwrap();
        assert_eq!(r.len(), 16);
        for l in &r[1..] {
            assert!(l.correlation.abs() < 3.0 / (l.n_pairs as f64).sqrt(), "{l:?}");
        }
    }

    #[test]
    fn autocorrelation_of_sampled_field() {
        let rho = 150.0;
        let n = 4000;
        let pos: Vec<f64> = (0..n).map(|i| 20.0 * i as f64).collect();
        let mesh = Mesh1D::for_positions(&pos, 20.0, 2.0 * rho).unwrap();
        let params = MaternParams::new(rho, 1.0).unwrap();
        let q = crate::spde::build_precision(&mesh, &params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = crate::spde::sample_field(&q, &mut rng).unwrap();
        let v: Vec<Option<f64>> = pos.iter().map(|&p| Some(x[mesh.locate(p).unwrap()])).collect();
        let r = empirical_autocorrelation(&v, &pos, 20.0, 300.0).unwrap();
        let at = r.iter().find(|l| l.lag_m == 140.0 || l.lag_m == 160.0).unwrap();
        let target = matern32_correlation(at.lag_m, params.kappa());
        assert!((at.correlation - target).abs() < 0.1, "{at:?} vs {target}");
        let at150 = matern32_correlation(150.0, params.kappa());
        assert!((at150 - 0.1397).abs() < 1e-3);
    }

    #[test]
    fn identity_scenario_matches_predictor() {
        for variant in [Variant::M1, Variant::M4] {
            let (fit, panel) = small_fit(variant);
            let year = fit.structure.years()[1];
            let req = ScenarioRequest { year: Some(year), ..ScenarioRequest::keep("keep") };
            let rep = scenario_predict(&fit, &panel, &req).unwrap();
            let include = Components { omega: variant.is_spatial(), ..Components::EXPLAINED };
            let pred: Vec<_> = fit.predict_eta(include).unwrap().into_iter().filter(|p| p.year == year).collect();
            assert_eq!(rep.rows.len(), pred.len());
            for (a, b) in rep.rows.iter().zip(&pred) {
                assert_eq!(a.segment, b.segment);
                assert!((a.eta_hat - b.mean).abs() < 1e-12);
                assert!((a.hi95 - a.lo95 - 2.0 * Z975 * b.sd).abs() < 1e-9);
            }
            // Year-averaged identity equals the hotspot predictor.
            let avg = scenario_predict(&fit, &panel, &ScenarioRequest::keep("keep")).unwrap();
            let seg = segment_eta(&fit).unwrap();
            for (a, b) in avg.rows.iter().zip(&seg) {
                assert!((a.eta_hat - b.eta_hat).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn asphalt_swap_is_linear_in_raw_coefficients() {
        let (fit, panel) = small_fit(Variant::M1);
        let year = fit.structure.years()[0];
        let base = ScenarioRequest {
            year: Some(year),
            asphalt: Setting::Set(AsphaltType::Agc),
            ..ScenarioRequest::keep("agc")
        };
        let sma = ScenarioRequest { asphalt: Setting::Set(AsphaltType::Sma), ..base.clone() };
        let a = scenario_predict(&fit, &panel, &base).unwrap();
        let b = scenario_predict(&fit, &panel, &sma).unwrap();
        let raw = |name: &str| fit.result.betas.iter().find(|x| x.name == name).unwrap().raw.mean;
        let gap = raw("beta_sma") - raw("beta_agc");
        for (x, y) in a.rows.iter().zip(&b.rows) {
            let aadt = panel.covariates[x.segment][1].unwrap().decompose().aadt_scaled;
            assert!((y.eta_hat - x.eta_hat - gap * aadt).abs() < 1e-10);
        }
        // Arithmetic with realistic coefficient magnitudes.
        assert!(((3.53 - 7.31) * 0.087 - -0.329f64).abs() < 1e-3);
    }

    #[test]
    fn presets_and_bounds() {
        let (fit, panel) = small_fit(Variant::M1);
        let best = scenario_predict(&fit, &panel, &ScenarioRequest::preset(Preset::Best)).unwrap();
        let worse = scenario_predict(&fit, &panel, &ScenarioRequest::preset(Preset::Worse)).unwrap();
        let b = |n: &str| fit.result.betas.iter().find(|x| x.name == n).unwrap().raw.mean;
        if b("beta_d1") >= 0.0 && b("beta_agc") >= b("beta_sma") && b("beta_w") <= 0.0 {
            for (x, y) in best.rows.iter().zip(&worse.rows) {
                assert!(x.eta_hat <= y.eta_hat);
            }
        }
        let bad = ScenarioRequest { lane_width_m: Setting::Set(9.0), ..ScenarioRequest::keep("x") };
        assert!(scenario_predict(&fit, &panel, &bad).is_err());
        let bad = ScenarioRequest { prev_depth_mm: Setting::Set(-1.0), ..ScenarioRequest::keep("x") };
        assert!(scenario_predict(&fit, &panel, &bad).is_err());
        let far = ScenarioRequest { prev_depth_mm: Setting::Set(5000.0), ..ScenarioRequest::keep("far") };
        assert!(!scenario_predict(&fit, &panel, &far).unwrap().warnings.is_empty());
        let seq = scenario_sequential(&fit, &panel, &ScenarioRequest::preset(Preset::Best)).unwrap();
        let ids: std::collections::BTreeSet<_> = seq.rows.iter().map(|r| r.scenario.as_str()).collect();
        assert_eq!(ids.into_iter().collect::<Vec<_>>(), vec!["best_asphalt", "best_d1", "best_w"]);
        let last: Vec<_> = seq.rows.iter().filter(|r| r.scenario == "best_w").collect();
        for (x, y) in last.iter().zip(&best.rows) {
            assert!((x.eta_hat - y.eta_hat).abs() < 1e-12);
        }
    }

    #[test]
    fn non_spatial_hotspots_note_absent_field() {
        let (fit, _) = small_fit(Variant::M4);
        let r = detect_hotspots(&fit, 0.5).unwrap();
        assert!(!r.omega_included && r.note.is_some());
        assert!(detect_hotspots(&fit, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn hotspots_monotone_in_threshold(vals in proptest::collection::vec(-2.0f64..6.0, 1..40), t1 in 0.1f64..5.0, dt in 0.0f64..3.0) {
            let etas: Vec<SegmentEta> = vals.iter().enumerate().map(|(i, &v)| eta(i, v)).collect();
            let lo = select_hotspots(&etas, t1, true);
            let hi = select_hotspots(&etas, t1 + dt, true);
            prop_assert!(hi.hotspots.iter().all(|h| lo.hotspots.iter().any(|g| g.segment == h.segment)));
            prop_assert!(lo.hotspots.iter().all(|h| h.eta_hat > t1));
            prop_assert!(lo.hotspots.windows(2).all(|w| w[0].position_m <= w[1].position_m));
        }

        #[test]
        fn lifetime_decreasing_in_rate(depth in 0.0f64..20.0, r1 in 0.01f64..10.0, f in 1.01f64..3.0) {
            let thr = 25.0;
            let raw = |r: f64| (thr - depth) / r;
            prop_assert!(raw(r1 * f) < raw(r1));
            let (Lifetime::Years(a), Lifetime::Years(b)) =
                (estimate_lifetime(depth, r1, thr).unwrap(), estimate_lifetime(depth, r1 * f, thr).unwrap())
            else { panic!("positive rates give years") };
            prop_assert!(b <= a);
        }

        #[test]
        fn autocorrelation_bounded_and_symmetric(vals in proptest::collection::vec(-5.0f64..5.0, 5..60)) {
            let pos: Vec<f64> = (0..vals.len()).map(|i| 20.0 * i as f64).collect();
            let v: Vec<Option<f64>> = vals.iter().map(|&x| Some(x)).collect();
            let r = empirical_autocorrelation(&v, &pos, 20.0, 300.0).unwrap_or_default();
            prop_assert!(r.iter().all(|l| (-1.0..=1.0).contains(&l.correlation)));
            // Reversing the road swaps pair order.
            let rv: Vec<Option<f64>> = v.iter().rev().copied().collect();
            let s = empirical_autocorrelation(&rv, &pos, 20.0, 300.0).unwrap_or_default();
            prop_assert_eq!(r.len(), s.len());
            for (a, b) in r.iter().zip(&s) {
                prop_assert!((a.correlation - b.correlation).abs() < 1e-9);
            }
        }
    }
}
