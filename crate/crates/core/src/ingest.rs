//! Raw measurement tables, rutting with censoring, traffic-interaction
//! covariates and standardization.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const RAW_HEADER: [&str; 8] =
    ["segment_id", "position_m", "year", "rut_depth_mm", "aadt", "asphalt_type", "road_width_m", "lane_count"];

pub const PANEL_HEADER: [&str; 9] =
    ["segment_id", "position_m", "year", "rutting", "z_ac", "z_agc", "z_sma", "z_d1", "z_w"];

/// AADT enters the interactions in units of ten thousand vehicles per day.
pub const AADT_UNIT: f64 = 10_000.0;

const POSITION_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IngestError {
    #[error("header mismatch: expected `{expected}`, found `{found}`")]
    Header { expected: String, found: String },
    #[error("line {line}: cannot parse `{field}` from `{value}`")]
    Parse { line: usize, field: &'static str, value: String },
    #[error("unknown asphalt type on rows {rows:?} (labels {labels:?}); expected Ac, Agc or Sma")]
    UnknownAsphalt { rows: Vec<usize>, labels: Vec<String> },
    #[error("non-finite rut depth for segment {segment_id}, year {year}")]
    NonFiniteDepth { segment_id: i64, year: i32 },
    #[error("duplicate row for segment {segment_id}, year {year}")]
    Duplicate { segment_id: i64, year: i32 },
    #[error("line {line}: AADT {aadt} outside plausibility window [{min}, {max}]")]
    AadtOutOfRange { line: usize, aadt: f64, min: f64, max: f64 },
    #[error("line {line}: {message}")]
    InvalidValue { line: usize, message: String },
    #[error("segment positions invalid: {0}")]
    Positions(String),
    #[error("years must be consecutive, found {0:?}")]
    Years(Vec<i32>),
    #[error("covariate column `{0}` has zero variance over likelihood rows")]
    ZeroVariance(&'static str),
    #[error("covariate column `{0}` is missing on a likelihood row")]
    MissingCovariate(&'static str),
    #[error("no non-missing rutting values")]
    Empty,
    #[error("need at least two consecutive years of depth data")]
    TooFewYears,
    #[error("csv: {0}")]
    Csv(String),
}

impl From<csv::Error> for IngestError {
    fn from(e: csv::Error) -> Self {
        IngestError::Csv(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AsphaltType {
    Ac,
    Agc,
    Sma,
}

impl FromStr for AsphaltType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ac" => Ok(AsphaltType::Ac),
            "agc" => Ok(AsphaltType::Agc),
            "sma" => Ok(AsphaltType::Sma),
            _ => Err(s.to_string()),
        }
    }
}

impl fmt::Display for AsphaltType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AsphaltType::Ac => "Ac",
            AsphaltType::Agc => "Agc",
            AsphaltType::Sma => "Sma",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawMeasurement {
    pub segment_id: i64,
    pub position_m: f64,
    pub year: i32,
    pub rut_depth_mm: Option<f64>,
    pub aadt: f64,
    pub asphalt_type: AsphaltType,
    pub road_width_m: f64,
    pub lane_count: u32,
}

impl RawMeasurement {
    pub fn lane_width_m(&self) -> f64 {
        self.road_width_m / self.lane_count as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestConfig {
    pub aadt_min: f64,
    pub aadt_max: f64,
    pub spacing_m: f64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self { aadt_min: 1.0, aadt_max: 200_000.0, spacing_m: 20.0 }
    }
}

/// The traffic-interaction explanatory variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Covariate {
    Ac,
    Agc,
    Sma,
    DepthPrev,
    Width,
}

impl Covariate {
    pub const ALL: [Covariate; 5] =
        [Covariate::Ac, Covariate::Agc, Covariate::Sma, Covariate::DepthPrev, Covariate::Width];

    pub fn name(self) -> &'static str {
        match self {
            Covariate::Ac => "z_ac",
            Covariate::Agc => "z_agc",
            Covariate::Sma => "z_sma",
            Covariate::DepthPrev => "z_d1",
            Covariate::Width => "z_w",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }
}

/// Interaction covariates for one (segment, year), AADT in ten-thousands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovariateRow {
    pub ac: f64,
    pub agc: f64,
    pub sma: f64,
    /// Absent when the previous-year depth is unknown.
    pub d1: Option<f64>,
    pub w: f64,
}

/// The physical quantities a [`CovariateRow`] was built from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowInputs {
    pub aadt_scaled: f64,
    pub asphalt: Option<AsphaltType>,
    pub prev_depth_mm: Option<f64>,
    pub lane_width_m: Option<f64>,
}

impl CovariateRow {
    pub fn new(asphalt: AsphaltType, aadt_scaled: f64, prev_depth_mm: Option<f64>, lane_width_m: f64) -> Self {
        let ind = |a: AsphaltType| if a == asphalt { aadt_scaled } else { 0.0 };
        Self {
            ac: ind(AsphaltType::Ac),
            agc: ind(AsphaltType::Agc),
            sma: ind(AsphaltType::Sma),
            d1: prev_depth_mm.map(|d| d * aadt_scaled),
            w: lane_width_m * aadt_scaled,
        }
    }

    pub fn get(&self, c: Covariate) -> Option<f64> {
        match c {
            Covariate::Ac => Some(self.ac),
            Covariate::Agc => Some(self.agc),
            Covariate::Sma => Some(self.sma),
            Covariate::DepthPrev => self.d1,
            Covariate::Width => Some(self.w),
        }
    }

    /// Recovers AADT, asphalt type, depth and lane width. With zero traffic
    /// only the AADT is recoverable.
    pub fn decompose(&self) -> RowInputs {
        let aadt = self.ac + self.agc + self.sma;
        if aadt == 0.0 {
            return RowInputs { aadt_scaled: 0.0, asphalt: None, prev_depth_mm: None, lane_width_m: None };
        }
        let asphalt = if self.ac != 0.0 {
            AsphaltType::Ac
        } else if self.agc != 0.0 {
            AsphaltType::Agc
        } else {
            AsphaltType::Sma
        };
        RowInputs {
            aadt_scaled: aadt,
            asphalt: Some(asphalt),
            prev_depth_mm: self.d1.map(|v| v / aadt),
            lane_width_m: Some(self.w / aadt),
        }
    }
}

/// Censoring rule: a drop of more than half the current depth is treated as
/// repaving and the rutting is missing.
pub fn censor_rutting(depth: Option<f64>, prev_depth: Option<f64>) -> Option<f64> {
    let (d, p) = (depth?, prev_depth?);
    let r = d - p;
    (r >= -d / 2.0).then_some(r)
}

/// Rutting from a `[segment][year]` depth table. Column 0 has no predecessor
/// and is always missing. Errors carry (segment index, year index).
pub fn compute_rutting(depths: &[Vec<Option<f64>>]) -> Result<Vec<Vec<Option<f64>>>, (usize, usize)> {
    let mut out = Vec::with_capacity(depths.len());
    for (s, row) in depths.iter().enumerate() {
        if let Some(t) = row.iter().position(|d| matches!(d, Some(v) if !v.is_finite())) {
            return Err((s, t));
        }
        let mut r = vec![None; row.len()];
        for t in 1..row.len() {
            r[t] = censor_rutting(row[t], row[t - 1]);
        }
        out.push(r);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanRutting {
    pub overall: f64,
    pub count: usize,
    /// `None` for segments with no valid rutting.
    pub per_segment: Vec<Option<f64>>,
}

pub fn mean_rutting(panel: &RoadPanel) -> Result<MeanRutting, IngestError> {
    let mut total = 0.0;
    let mut count = 0usize;
    let per_segment = panel
        .rutting
        .iter()
        .map(|row| {
            let vals: Vec<f64> = row.iter().flatten().copied().collect();
            total += vals.iter().sum::<f64>();
            count += vals.len();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        })
        .collect();
    if count == 0 {
        return Err(IngestError::Empty);
    }
    Ok(MeanRutting { overall: total / count as f64, count, per_segment })
}

/// Covariates for raw rows given each row's previous-year depth.
pub fn build_covariates(rows: &[RawMeasurement], prev_depths: &[Option<f64>]) -> Vec<CovariateRow> {
    rows.iter()
        .zip(prev_depths)
        .map(|(r, &p)| CovariateRow::new(r.asphalt_type, r.aadt / AADT_UNIT, p, r.lane_width_m()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub covariate: Covariate,
    pub mean: f64,
    pub sd: f64,
}

/// Per-column (mean, population sd) used to standardize covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub columns: Vec<ColumnStats>,
}

impl Standardization {
    pub fn stats(&self, c: Covariate) -> Option<&ColumnStats> {
        self.columns.iter().find(|s| s.covariate == c)
    }

    pub fn apply(&self, c: Covariate, raw: f64) -> Option<f64> {
        self.stats(c).map(|s| (raw - s.mean) / s.sd)
    }

    pub fn invert(&self, c: Covariate, standardized: f64) -> Option<f64> {
        self.stats(c).map(|s| standardized * s.sd + s.mean)
    }
}

/// Standardizes each column to mean 0 and population sd 1.
pub fn standardize(
    columns: &[(Covariate, Vec<f64>)],
) -> Result<(Vec<(Covariate, Vec<f64>)>, Standardization), IngestError> {
    let mut out = Vec::with_capacity(columns.len());
    let mut stats = Vec::with_capacity(columns.len());
    for (c, values) in columns {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let sd = var.sqrt();
        if !(sd > 0.0) || !sd.is_finite() || sd <= 1e-12 * mean.abs() {
            return Err(IngestError::ZeroVariance(c.name()));
        }
        out.push((*c, values.iter().map(|v| (v - mean) / sd).collect()));
        stats.push(ColumnStats { covariate: *c, mean, sd });
    }
    Ok((out, Standardization { columns: stats }))
}

pub fn destandardize(columns: &[(Covariate, Vec<f64>)], stats: &Standardization) -> Vec<(Covariate, Vec<f64>)> {
    columns
        .iter()
        .map(|(c, v)| {
            let s = stats.stats(*c).expect("stats for every column");
            (*c, v.iter().map(|x| x * s.sd + s.mean).collect())
        })
        .collect()
}

/// Tidy per-segment, per-year table of rutting and covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadPanel {
    pub segment_ids: Vec<i64>,
    pub positions: Vec<f64>,
    /// All years; the first is the baseline and carries no rutting.
    pub years: Vec<i32>,
    /// `[segment][year]`.
    pub rutting: Vec<Vec<Option<f64>>>,
    /// `[segment][year]`, `None` where no measurement row exists.
    pub covariates: Vec<Vec<Option<CovariateRow>>>,
}

impl RoadPanel {
    pub fn n_segments(&self) -> usize {
        self.segment_ids.len()
    }

    pub fn n_years(&self) -> usize {
        self.years.len()
    }

    /// Years with a predecessor, i.e. those that can carry rutting.
    pub fn rutting_years(&self) -> &[i32] {
        &self.years[1.min(self.years.len())..]
    }

    /// Rows that enter the likelihood: observed rutting and the requested
    /// covariates present.
    pub fn likelihood_cells(&self, covariates: &[Covariate]) -> Vec<(usize, usize)> {
        let mut cells = Vec::new();
        for s in 0..self.n_segments() {
            for t in 1..self.n_years() {
                if self.rutting[s][t].is_none() {
                    continue;
                }
                if let Some(row) = &self.covariates[s][t] {
                    if covariates.iter().all(|&c| row.get(c).is_some()) {
                        cells.push((s, t));
                    }
                }
            }
        }
        cells
    }

    /// Column statistics over the likelihood rows.
    pub fn standardization(&self, covariates: &[Covariate]) -> Result<Standardization, IngestError> {
        let cells = self.likelihood_cells(covariates);
        if cells.is_empty() {
            return Err(IngestError::Empty);
        }
        let columns: Vec<(Covariate, Vec<f64>)> = covariates
            .iter()
            .map(|&c| {
                let v = cells
                    .iter()
                    .map(|&(s, t)| self.covariates[s][t].and_then(|r| r.get(c)).expect("likelihood cell"))
                    .collect();
                (c, v)
            })
            .collect();
        Ok(standardize(&columns)?.1)
    }

    /// Builds the panel from validated raw rows.
    pub fn from_raw(rows: &[RawMeasurement], cfg: &IngestConfig) -> Result<Self, IngestError> {
        validate_raw(rows, cfg)?;
        let mut seg_pos: BTreeMap<i64, f64> = BTreeMap::new();
        let mut years: BTreeSet<i32> = BTreeSet::new();
        for r in rows {
            seg_pos.entry(r.segment_id).or_insert(r.position_m);
            years.insert(r.year);
        }
        let years: Vec<i32> = years.into_iter().collect();
        if years.len() < 2 {
            return Err(IngestError::TooFewYears);
        }
        if years.windows(2).any(|w| w[1] != w[0] + 1) {
            return Err(IngestError::Years(years));
        }
        let segment_ids: Vec<i64> = seg_pos.keys().copied().collect();
        let positions: Vec<f64> = seg_pos.values().copied().collect();
        check_positions(&segment_ids, &positions, cfg.spacing_m)?;

        let seg_index: BTreeMap<i64, usize> = segment_ids.iter().enumerate().map(|(i, &s)| (s, i)).collect();
        let (n, t) = (segment_ids.len(), years.len());
        let mut depth = vec![vec![None; t]; n];
        let mut cells: Vec<Vec<Option<&RawMeasurement>>> = vec![vec![None; t]; n];
        for r in rows {
            let s = seg_index[&r.segment_id];
            let y = (r.year - years[0]) as usize;
            depth[s][y] = r.rut_depth_mm;
            cells[s][y] = Some(r);
        }
        let rutting = compute_rutting(&depth)
            .map_err(|(s, y)| IngestError::NonFiniteDepth { segment_id: segment_ids[s], year: years[y] })?;
        let covariates = (0..n)
            .map(|s| {
                (0..t)
                    .map(|y| {
                        cells[s][y].map(|r| {
                            let prev = if y == 0 { None } else { depth[s][y - 1] };
                            build_covariates(std::slice::from_ref(r), &[prev])[0]
                        })
                    })
                    .collect()
            })
            .collect();
        Ok(Self { segment_ids, positions, years, rutting, covariates })
    }
}

fn check_positions(ids: &[i64], positions: &[f64], spacing: f64) -> Result<(), IngestError> {
    for i in 1..positions.len() {
        let gap = positions[i] - positions[i - 1];
        let steps = (gap / spacing).round();
        if !(gap > 0.0) || steps < 1.0 || (gap - steps * spacing).abs() > POSITION_TOL {
            return Err(IngestError::Positions(format!(
                "segment {} at {} m does not follow segment {} at {} m on a {} m grid",
                ids[i],
                positions[i],
                ids[i - 1],
                positions[i - 1],
                spacing
            )));
        }
    }
    Ok(())
}

/// Row-level checks: unique (segment, year), consistent positions, AADT
/// window, positive widths and lane counts, finite depths.
pub fn validate_raw(rows: &[RawMeasurement], cfg: &IngestConfig) -> Result<(), IngestError> {
    let mut seen = BTreeSet::new();
    let mut pos: BTreeMap<i64, f64> = BTreeMap::new();
    for (k, r) in rows.iter().enumerate() {
        let line = k + 2;
        if !seen.insert((r.segment_id, r.year)) {
            return Err(IngestError::Duplicate { segment_id: r.segment_id, year: r.year });
        }
        if !(r.position_m >= 0.0) || !r.position_m.is_finite() {
            return Err(IngestError::InvalidValue { line, message: format!("position {} m", r.position_m) });
        }
        if let Some(&p) = pos.get(&r.segment_id) {
            if (p - r.position_m).abs() > POSITION_TOL {
                return Err(IngestError::Positions(format!(
                    "segment {} has positions {} and {}",
                    r.segment_id, p, r.position_m
                )));
            }
        } else {
            pos.insert(r.segment_id, r.position_m);
        }
        if let Some(d) = r.rut_depth_mm {
            if !d.is_finite() {
                return Err(IngestError::NonFiniteDepth { segment_id: r.segment_id, year: r.year });
            }
        }
        if !(r.aadt >= cfg.aadt_min && r.aadt <= cfg.aadt_max) {
            return Err(IngestError::AadtOutOfRange { line, aadt: r.aadt, min: cfg.aadt_min, max: cfg.aadt_max });
        }
        if !(r.road_width_m > 0.0) || r.lane_count == 0 {
            return Err(IngestError::InvalidValue {
                line,
                message: format!("road width {} m over {} lanes", r.road_width_m, r.lane_count),
            });
        }
    }
    Ok(())
}

fn check_header(found: &csv::StringRecord, expected: &[&str]) -> Result<(), IngestError> {
    let f: Vec<&str> = found.iter().map(str::trim).collect();
    if f != expected {
        return Err(IngestError::Header { expected: expected.join(","), found: f.join(",") });
    }
    Ok(())
}

fn parse_opt_f64(field: &str) -> Result<Option<f64>, ()> {
    let t = field.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("nan") {
        return Ok(None);
    }
    t.parse::<f64>().map(Some).map_err(|_| ())
}

fn parse_field<T: FromStr>(
    rec: &csv::StringRecord,
    idx: usize,
    line: usize,
    name: &'static str,
) -> Result<T, IngestError> {
    let v = rec.get(idx).unwrap_or("");
    v.trim().parse::<T>().map_err(|_| IngestError::Parse { line, field: name, value: v.to_string() })
}

/// Reads the raw measurement CSV. Missing depths are empty fields or `NaN`.
pub fn read_raw_csv<R: Read>(reader: R) -> Result<Vec<RawMeasurement>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    check_header(rdr.headers()?, &RAW_HEADER)?;
    let mut rows = Vec::new();
    let mut bad_rows = Vec::new();
    let mut bad_labels = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        let depth_field = rec.get(3).unwrap_or("");
        let rut_depth_mm = parse_opt_f64(depth_field).map_err(|_| IngestError::Parse {
            line,
            field: "rut_depth_mm",
            value: depth_field.to_string(),
        })?;
        let label = rec.get(5).unwrap_or("");
        let asphalt_type = match label.parse::<AsphaltType>() {
            Ok(a) => a,
            Err(l) => {
                bad_rows.push(line);
                bad_labels.push(l);
                continue;
            }
        };
        rows.push(RawMeasurement {
            segment_id: parse_field(&rec, 0, line, "segment_id")?,
            position_m: parse_field(&rec, 1, line, "position_m")?,
            year: parse_field(&rec, 2, line, "year")?,
            rut_depth_mm,
            aadt: parse_field(&rec, 4, line, "aadt")?,
            asphalt_type,
            road_width_m: parse_field(&rec, 6, line, "road_width_m")?,
            lane_count: parse_field(&rec, 7, line, "lane_count")?,
        });
    }
    if !bad_rows.is_empty() {
        bad_labels.sort();
        bad_labels.dedup();
        return Err(IngestError::UnknownAsphalt { rows: bad_rows, labels: bad_labels });
    }
    Ok(rows)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_raw_csv<W: Write>(rows: &[RawMeasurement], writer: W) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(RAW_HEADER)?;
    for r in rows {
        w.write_record([
            r.segment_id.to_string(),
            r.position_m.to_string(),
            r.year.to_string(),
            fmt_opt(r.rut_depth_mm),
            r.aadt.to_string(),
            r.asphalt_type.to_string(),
            r.road_width_m.to_string(),
            r.lane_count.to_string(),
        ])?;
    }
    w.flush().map_err(|e| IngestError::Csv(e.to_string()))?;
    Ok(())
}

/// Writes the panel; covariates are on the raw (unstandardized) scale.
pub fn write_panel_csv<W: Write>(panel: &RoadPanel, writer: W) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(PANEL_HEADER)?;
    for s in 0..panel.n_segments() {
        for (t, year) in panel.years.iter().enumerate() {
            let Some(c) = panel.covariates[s][t] else { continue };
            w.write_record([
                panel.segment_ids[s].to_string(),
                panel.positions[s].to_string(),
                year.to_string(),
                fmt_opt(panel.rutting[s][t]),
                c.ac.to_string(),
                c.agc.to_string(),
                c.sma.to_string(),
                fmt_opt(c.d1),
                c.w.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| IngestError::Csv(e.to_string()))?;
    Ok(())
}

pub fn read_panel_csv<R: Read>(reader: R, spacing_m: f64) -> Result<RoadPanel, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    check_header(rdr.headers()?, &PANEL_HEADER)?;
    struct Row {
        seg: i64,
        pos: f64,
        year: i32,
        rut: Option<f64>,
        cov: CovariateRow,
    }
    let mut rows = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        let opt = |idx: usize, name: &'static str| -> Result<Option<f64>, IngestError> {
            let v = rec.get(idx).unwrap_or("");
            match parse_opt_f64(v) {
                Ok(Some(x)) if !x.is_finite() => Err(IngestError::Parse { line, field: name, value: v.into() }),
                Ok(x) => Ok(x),
                Err(()) => Err(IngestError::Parse { line, field: name, value: v.into() }),
            }
        };
        let req = |idx: usize, name: &'static str| -> Result<f64, IngestError> {
            opt(idx, name)?.ok_or(IngestError::Parse { line, field: name, value: String::new() })
        };
        rows.push(Row {
            seg: parse_field(&rec, 0, line, "segment_id")?,
            pos: parse_field(&rec, 1, line, "position_m")?,
            year: parse_field(&rec, 2, line, "year")?,
            rut: opt(3, "rutting")?,
            cov: CovariateRow {
                ac: req(4, "z_ac")?,
                agc: req(5, "z_agc")?,
                sma: req(6, "z_sma")?,
                d1: opt(7, "z_d1")?,
                w: req(8, "z_w")?,
            },
        });
    }
    let mut seg_pos: BTreeMap<i64, f64> = BTreeMap::new();
    let mut years = BTreeSet::new();
    for r in &rows {
        if let Some(&p) = seg_pos.get(&r.seg) {
            if (p - r.pos).abs() > POSITION_TOL {
                return Err(IngestError::Positions(format!("segment {} has positions {} and {}", r.seg, p, r.pos)));
            }
        }
        seg_pos.insert(r.seg, r.pos);
        years.insert(r.year);
    }
    let years: Vec<i32> = years.into_iter().collect();
    if years.len() < 2 {
        return Err(IngestError::TooFewYears);
    }
    if years.windows(2).any(|w| w[1] != w[0] + 1) {
        return Err(IngestError::Years(years));
    }
    let segment_ids: Vec<i64> = seg_pos.keys().copied().collect();
    let positions: Vec<f64> = seg_pos.values().copied().collect();
    check_positions(&segment_ids, &positions, spacing_m)?;
    let idx: BTreeMap<i64, usize> = segment_ids.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    let (n, t) = (segment_ids.len(), years.len());
    let mut rutting = vec![vec![None; t]; n];
    let mut covariates = vec![vec![None; t]; n];
    for r in rows {
        let s = idx[&r.seg];
        let y = (r.year - years[0]) as usize;
        if covariates[s][y].is_some() {
            return Err(IngestError::Duplicate { segment_id: r.seg, year: r.year });
        }
        rutting[s][y] = if y == 0 { None } else { r.rut };
        covariates[s][y] = Some(r.cov);
    }
    Ok(RoadPanel { segment_ids, positions, years, rutting, covariates })
}
