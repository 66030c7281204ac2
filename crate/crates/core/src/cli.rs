//! Command-line front end.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analyze::{self, Lifetime, Preset, ScenarioRequest, Setting};
use crate::error::{Error, Result, EXIT_VALIDATION};
use crate::eval::{self, ScoreConfig};
use crate::infer::{self, FitResult, FittedModel, OptimizerConfig};
use crate::ingest::{self, AsphaltType, IngestConfig, RoadPanel, RAW_HEADER};
use crate::model::{LatentStructure, ModelSpec, PriorConfig, Variant};
use crate::sim::{self, SimSpec};
use crate::spde::Mesh1D;

/// Environment variable holding the log filter.
pub const LOG_ENV: &str = "RUTFIELD_LOG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshConfig {
    pub spacing_m: f64,
    /// Mesh extension beyond the data; defaults to twice the prior median
    /// range.
    pub buffer_m: Option<f64>,
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self { spacing_m: 20.0, buffer_m: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreSection {
    pub n_draws: usize,
    pub force: bool,
}

impl Default for ScoreSection {
    fn default() -> Self {
        Self { n_draws: 1000, force: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeConfig {
    pub threshold_mm: f64,
    pub max_lag_m: f64,
    pub aadt_cutoff: f64,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        Self { threshold_mm: 2.0, max_lag_m: analyze::DEFAULT_MAX_LAG_M, aadt_cutoff: analyze::DEFAULT_AADT_CUTOFF }
    }
}

/// Every setting a run depends on. Read from TOML; flags override it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub share_annual_hyperparams: bool,
    pub priors: PriorConfig,
    pub mesh: MeshConfig,
    pub optimizer: OptimizerConfig,
    pub score: ScoreSection,
    pub ingest: IngestConfig,
    pub analyze: AnalyzeConfig,
    pub simulate: SimSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            share_annual_hyperparams: false,
            priors: PriorConfig::default(),
            mesh: MeshConfig::default(),
            optimizer: OptimizerConfig::default(),
            score: ScoreSection::default(),
            ingest: IngestConfig::default(),
            analyze: AnalyzeConfig::default(),
            simulate: SimSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.priors.validate()?;
        self.optimizer.validate()?;
        if !(self.mesh.spacing_m > 0.0) {
            return Err(Error::Config(format!("mesh spacing {} must be positive", self.mesh.spacing_m)));
        }
        if let Some(b) = self.mesh.buffer_m {
            if !(b >= 0.0) {
                return Err(Error::Config(format!("mesh buffer {b} must be non-negative")));
            }
        }
        if self.score.n_draws < 100 {
            return Err(Error::Config(format!("score.n_draws {} must be at least 100", self.score.n_draws)));
        }
        if self.ingest.spacing_m != self.mesh.spacing_m {
            return Err(Error::Config("ingest.spacing_m and mesh.spacing_m differ".into()));
        }
        Ok(())
    }

    pub fn buffer_m(&self) -> f64 {
        self.mesh.buffer_m.unwrap_or_else(|| 2.0 * self.priors.field.range_median())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex(&Sha256::digest(json.as_bytes()))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Parser)]
#[command(name = "rutfield", version, about = "Spatial latent Gaussian models for road rutting panels")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random choice.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Raw measurement CSV to panel CSV.
    Ingest(IoArgs),
    /// Fit one model variant; writes the fit as JSON.
    Fit(FitArgs),
    /// Fit and score several variants; writes the comparison table.
    Compare(CompareArgs),
    /// Segments whose expected rutting exceeds a threshold.
    Hotspots(HotspotArgs),
    /// Expected rutting under covariate overrides.
    Scenario(ScenarioArgs),
    /// Empirical correlation of rutting against distance.
    Autocorr(AutocorrArgs),
    /// Simulate a raw measurement CSV and its ground truth.
    Simulate(SimulateArgs),
    /// Years until maintenance.
    Lifetime(LifetimeArgs),
}

#[derive(Debug, Args)]
pub struct IoArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub io: IoArgs,
    /// Model variant 1..6.
    #[arg(long, default_value = "1")]
    pub model: Variant,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub io: IoArgs,
    /// Comma-separated variants.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6")]
    pub models: Vec<Variant>,
    /// Variants fitted concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Latent draws per score.
    #[arg(long)]
    pub draws: Option<usize>,
    /// Score fits that did not converge.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct FitInput {
    /// Panel or raw CSV the fit was computed from.
    #[arg(long)]
    pub input: PathBuf,
    /// Fit JSON from `fit`.
    #[arg(long)]
    pub fit: PathBuf,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct HotspotArgs {
    #[command(flatten)]
    pub io: FitInput,
    /// Decision threshold in mm/year.
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    #[command(flatten)]
    pub io: FitInput,
    #[arg(long)]
    pub preset: Option<Preset>,
    /// Asphalt type override (ac, agc, sma).
    #[arg(long)]
    pub asphalt: Option<AsphaltType>,
    /// Previous-year rut depth override in mm.
    #[arg(long)]
    pub depth: Option<f64>,
    /// Lane width override in m.
    #[arg(long)]
    pub width: Option<f64>,
    /// Rutting year; averages over years when absent.
    #[arg(long)]
    pub year: Option<i32>,
    /// Segment index range START:END (end exclusive).
    #[arg(long)]
    pub segments: Option<String>,
    /// Emit the sequential series instead of a single scenario.
    #[arg(long)]
    pub sequential: bool,
    /// Reference level for exceedance probabilities.
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AutocorrArgs {
    #[command(flatten)]
    pub io: IoArgs,
    /// Use one rutting year instead of per-segment means.
    #[arg(long)]
    pub year: Option<i32>,
    #[arg(long)]
    pub max_lag: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Output directory for `raw.csv` and `truth.json`.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub segments: Option<usize>,
    #[arg(long)]
    pub years: Option<usize>,
}

#[derive(Debug, Args)]
pub struct LifetimeArgs {
    /// Current rut depth in mm.
    #[arg(long, requires = "rate", conflicts_with_all = ["input", "fit"])]
    pub depth: Option<f64>,
    /// Rutting rate in mm/year.
    #[arg(long, requires = "depth", allow_negative_numbers = true)]
    pub rate: Option<f64>,
    /// Maintenance depth; from the AADT rule when absent.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Daily traffic for the threshold rule.
    #[arg(long)]
    pub aadt: Option<f64>,
    /// Panel or raw CSV, for per-segment lifetimes.
    #[arg(long, requires = "fit")]
    pub input: Option<PathBuf>,
    #[arg(long, requires = "input")]
    pub fit: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// Provenance written next to every CSV artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub inputs_sha256: Vec<String>,
    pub extra: serde_json::Value,
}

struct Ctx {
    cfg: RunConfig,
    hash: String,
}

/// Parses `argv`, runs the command and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn"))
        .target(env_logger::Target::Stderr)
        .try_init();
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_toml(&read_string(p)?)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

pub fn execute(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli)?;
    if let Command::Simulate(a) = &cli.command {
        if let Some(n) = a.segments {
            cfg.simulate.n_segments = n;
        }
        if let Some(t) = a.years {
            cfg.simulate.n_years = t;
        }
        cfg.simulate.seed = cfg.seed;
    }
    if let Command::Compare(a) = &cli.command {
        if let Some(d) = a.draws {
            cfg.score.n_draws = d;
        }
        cfg.score.force |= a.force;
    }
    if let Command::Hotspots(HotspotArgs { threshold: Some(t), .. }) = &cli.command {
        cfg.analyze.threshold_mm = *t;
    }
    if let Command::Autocorr(AutocorrArgs { max_lag: Some(m), .. }) = &cli.command {
        cfg.analyze.max_lag_m = *m;
    }
    cfg.validate()?;
    let hash = cfg.hash();
    info!("config hash {hash}, seed {}", cfg.seed);
    let ctx = Ctx { cfg, hash };
    match cli.command {
        Command::Ingest(a) => cmd_ingest(&ctx, a),
        Command::Fit(a) => cmd_fit(&ctx, a),
        Command::Compare(a) => cmd_compare(&ctx, a),
        Command::Hotspots(a) => cmd_hotspots(&ctx, a),
        Command::Scenario(a) => cmd_scenario(&ctx, a),
        Command::Autocorr(a) => cmd_autocorr(&ctx, a),
        Command::Simulate(a) => cmd_simulate(&ctx, a),
        Command::Lifetime(a) => cmd_lifetime(&ctx, a),
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.display().to_string(), source }
}

fn read_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex(&Sha256::digest(fs::read(path).map_err(|e| io_err(path, e))?)))
}

/// Reads a panel CSV, or a raw measurement CSV which is ingested on the fly.
fn load_panel(ctx: &Ctx, path: &Path) -> Result<RoadPanel> {
    let text = read_string(path)?;
    let header = text.lines().next().unwrap_or("");
    let fields: Vec<&str> = header.split(',').map(str::trim).collect();
    if fields == RAW_HEADER {
        let rows = ingest::read_raw_csv(text.as_bytes())?;
        Ok(RoadPanel::from_raw(&rows, &ctx.cfg.ingest)?)
    } else {
        Ok(ingest::read_panel_csv(text.as_bytes(), ctx.cfg.mesh.spacing_m)?)
    }
}

fn emit(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => fs::write(p, bytes).map_err(|e| io_err(p, e)),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes).and_then(|_| out.flush()).map_err(|e| io_err(Path::new("<stdout>"), e))
        }
    }
}

fn sidecar_path(p: &Path) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Writes a CSV artifact and, for files, its provenance sidecar.
fn emit_csv(
    ctx: &Ctx,
    path: Option<&Path>,
    bytes: &[u8],
    command: &str,
    inputs: &[&Path],
    extra: serde_json::Value,
) -> Result<()> {
    emit(path, bytes)?;
    let Some(p) = path else { return Ok(()) };
    let prov = Provenance {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.into(),
        config_hash: ctx.hash.clone(),
        seed: ctx.cfg.seed,
        inputs_sha256: inputs.iter().map(|i| sha256_file(i)).collect::<Result<_>>()?,
        extra,
    };
    let side = sidecar_path(p);
    let json = serde_json::to_vec_pretty(&prov).expect("provenance serializes");
    fs::write(&side, json).map_err(|e| io_err(&side, e))
}

fn cmd_ingest(ctx: &Ctx, a: IoArgs) -> Result<()> {
    let text = read_string(&a.input)?;
    let rows = ingest::read_raw_csv(text.as_bytes())?;
    let panel = RoadPanel::from_raw(&rows, &ctx.cfg.ingest)?;
    info!("ingested {} segments over years {:?}", panel.n_segments(), panel.years);
    let mut buf = Vec::new();
    ingest::write_panel_csv(&panel, &mut buf)?;
    emit_csv(ctx, a.output.as_deref(), &buf, "ingest", &[&a.input], serde_json::Value::Null)
}

fn mesh_for(ctx: &Ctx, panel: &RoadPanel) -> Result<Mesh1D> {
    Ok(Mesh1D::for_positions(&panel.positions, ctx.cfg.mesh.spacing_m, ctx.cfg.buffer_m())?)
}

fn fit_variant(ctx: &Ctx, panel: &RoadPanel, mesh: &Mesh1D, variant: Variant) -> Result<FittedModel> {
    let spec = ModelSpec { variant, share_annual_hyperparams: ctx.cfg.share_annual_hyperparams };
    let structure = LatentStructure::assemble(&spec, panel, mesh)?;
    info!("fitting {variant}: {} observations, {} latent", structure.n_obs(), structure.dim());
    let mut fit = infer::fit(structure, &ctx.cfg.priors, &ctx.cfg.optimizer, ctx.cfg.seed)?;
    fit.result.config_hash = ctx.hash.clone();
    if !fit.result.converged {
        warn!("{variant} did not converge: {:?}", fit.result.convergence.stop_reason);
    }
    Ok(fit)
}

fn fit_json(result: &FitResult) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(result).expect("fit serializes");
    v.push(b'\n');
    v
}

fn cmd_fit(ctx: &Ctx, a: FitArgs) -> Result<()> {
    let panel = load_panel(ctx, &a.io.input)?;
    let mesh = mesh_for(ctx, &panel)?;
    let fit = fit_variant(ctx, &panel, &mesh, a.model)?;
    emit(a.io.output.as_deref(), &fit_json(&fit.result))
}

fn cmd_compare(ctx: &Ctx, a: CompareArgs) -> Result<()> {
    if a.models.is_empty() {
        return Err(Error::Usage("--models lists no variant".into()));
    }
    let panel = load_panel(ctx, &a.io.input)?;
    let mesh = mesh_for(ctx, &panel)?;
    let score_cfg =
        ScoreConfig { n_draws: ctx.cfg.score.n_draws, seed: ctx.cfg.seed, force: ctx.cfg.score.force, threads: 1 };
    let one = |v: Variant| -> Result<eval::ModelScore> {
        let fit = fit_variant(ctx, &panel, &mesh, v)?;
        Ok(eval::score(&fit, &score_cfg)?)
    };
    let jobs = a.jobs.clamp(1, a.models.len());
    let results: Vec<Result<eval::ModelScore>> = if jobs == 1 {
        a.models.iter().map(|&v| one(v)).collect()
    } else {
        let mut slots: Vec<Option<Result<eval::ModelScore>>> = (0..a.models.len()).map(|_| None).collect();
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..jobs)
                .map(|k| {
                    let models = &a.models;
                    let one = &one;
                    scope
                        .spawn(move || (k..models.len()).step_by(jobs).map(|i| (i, one(models[i]))).collect::<Vec<_>>())
                })
                .collect();
            for h in handles {
                for (i, r) in h.join().expect("compare worker panicked") {
                    slots[i] = Some(r);
                }
            }
        });
        slots.into_iter().map(|s| s.expect("every variant scored")).collect()
    };
    let scores: Vec<eval::ModelScore> = results.into_iter().collect::<Result<_>>()?;
    let ranking = eval::rank(&scores)?;
    if ranking.tie {
        warn!("DIC tie within {}; selected the simpler {}", eval::DIC_TIE, ranking.selected);
    }
    if ranking.disagreement {
        warn!("DIC prefers {} but WAIC prefers {}", ranking.dic_winner, ranking.waic_winner);
    }
    let mut buf = Vec::new();
    eval::write_comparison_csv(&ranking, &mut buf)?;
    let extra = serde_json::json!({
        "selected": ranking.selected,
        "tie": ranking.tie,
        "dic_winner": ranking.dic_winner,
        "waic_winner": ranking.waic_winner,
        "disagreement": ranking.disagreement,
        "scores": ranking.scores,
    });
    emit_csv(ctx, a.io.output.as_deref(), &buf, "compare", &[&a.io.input], extra)
}

fn load_fit(ctx: &Ctx, io: &FitInput) -> Result<(FittedModel, RoadPanel)> {
    let panel = load_panel(ctx, &io.input)?;
    let text = read_string(&io.fit)?;
    let result: FitResult =
        serde_json::from_str(&text).map_err(|source| Error::Json { path: io.fit.display().to_string(), source })?;
    if result.config_hash != ctx.hash {
        warn!("fit was produced under config {}, running under {}", result.config_hash, ctx.hash);
    }
    Ok((FittedModel::from_result(result, &panel, &ctx.cfg.priors)?, panel))
}

fn cmd_hotspots(ctx: &Ctx, a: HotspotArgs) -> Result<()> {
    let (fit, _) = load_fit(ctx, &a.io)?;
    let report = analyze::detect_hotspots(&fit, ctx.cfg.analyze.threshold_mm)?;
    if let Some(n) = &report.note {
        warn!("{n}");
    }
    let mut buf = Vec::new();
    analyze::write_hotspots_csv(&report, &mut buf)?;
    let extra = serde_json::json!({
        "threshold_mm": report.threshold_mm,
        "omega_included": report.omega_included,
        "variant": fit.variant(),
    });
    emit_csv(ctx, a.io.output.as_deref(), &buf, "hotspots", &[&a.io.input, &a.io.fit], extra)
}

fn parse_range(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Usage(format!("--segments expects START:END, got {s:?}"));
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

fn cmd_scenario(ctx: &Ctx, a: ScenarioArgs) -> Result<()> {
    let (fit, panel) = load_fit(ctx, &a.io)?;
    let mut req = match a.preset {
        Some(p) => ScenarioRequest::preset(p),
        None => ScenarioRequest::keep("custom"),
    };
    if let Some(x) = a.asphalt {
        req.asphalt = Setting::Set(x);
    }
    if let Some(d) = a.depth {
        req.prev_depth_mm = Setting::Set(d);
    }
    if let Some(w) = a.width {
        req.lane_width_m = Setting::Set(w);
    }
    req.year = a.year;
    req.segments = a.segments.as_deref().map(parse_range).transpose()?;
    req.threshold_mm = a.threshold.unwrap_or(ctx.cfg.analyze.threshold_mm);
    let report = if a.sequential {
        analyze::scenario_sequential(&fit, &panel, &req)?
    } else {
        analyze::scenario_predict(&fit, &panel, &req)?
    };
    for w in &report.warnings {
        warn!("{w}");
    }
    let mut buf = Vec::new();
    analyze::write_scenario_csv(&report, &mut buf)?;
    let extra = serde_json::json!({ "request": req, "warnings": report.warnings });
    emit_csv(ctx, a.io.output.as_deref(), &buf, "scenario", &[&a.io.input, &a.io.fit], extra)
}

fn cmd_autocorr(ctx: &Ctx, a: AutocorrArgs) -> Result<()> {
    let panel = load_panel(ctx, &a.io.input)?;
    let values: Vec<Option<f64>> = match a.year {
        Some(y) => {
            let t = panel
                .years
                .iter()
                .skip(1)
                .position(|&v| v == y)
                .ok_or_else(|| Error::Usage(format!("year {y} is not a rutting year of the panel")))?;
            panel.rutting.iter().map(|r| r[t + 1]).collect()
        }
        None => ingest::mean_rutting(&panel)?.per_segment,
    };
    let lags = analyze::empirical_autocorrelation(
        &values,
        &panel.positions,
        ctx.cfg.mesh.spacing_m,
        ctx.cfg.analyze.max_lag_m,
    )?;
    let mut buf = Vec::new();
    analyze::write_autocorrelation_csv(&lags, &mut buf)?;
    emit_csv(ctx, a.io.output.as_deref(), &buf, "autocorr", &[&a.io.input], serde_json::json!({ "year": a.year }))
}

fn cmd_simulate(ctx: &Ctx, a: SimulateArgs) -> Result<()> {
    let sim = sim::simulate_panel(&ctx.cfg.simulate)?;
    fs::create_dir_all(&a.output).map_err(|e| io_err(&a.output, e))?;
    let mut buf = Vec::new();
    ingest::write_raw_csv(&sim.rows, &mut buf)?;
    let raw = a.output.join("raw.csv");
    emit_csv(ctx, Some(&raw), &buf, "simulate", &[], serde_json::Value::Null)?;
    let mut truth = serde_json::to_value(&sim.truth).expect("truth serializes");
    truth["config_hash"] = serde_json::Value::String(ctx.hash.clone());
    truth["seed"] = serde_json::json!(ctx.cfg.seed);
    let path = a.output.join("truth.json");
    let mut json = serde_json::to_vec_pretty(&truth).expect("truth serializes");
    json.push(b'\n');
    fs::write(&path, json).map_err(|e| io_err(&path, e))
}

fn cmd_lifetime(ctx: &Ctx, a: LifetimeArgs) -> Result<()> {
    if let (Some(depth), Some(rate)) = (a.depth, a.rate) {
        let threshold = match (a.threshold, a.aadt) {
            (Some(t), _) => t,
            (None, Some(q)) => analyze::maintenance_threshold(q, ctx.cfg.analyze.aadt_cutoff),
            (None, None) => return Err(Error::Usage("lifetime needs --threshold or --aadt".into())),
        };
        let lifetime = analyze::estimate_lifetime(depth, rate, threshold)?;
        let line = match lifetime {
            Lifetime::Years(y) => format!("{y}\n"),
            Lifetime::NoProjectedMaintenance => "no projected maintenance\n".to_string(),
        };
        return emit(a.output.as_deref(), line.as_bytes());
    }
    let (Some(input), Some(fit_path)) = (a.input, a.fit) else {
        return Err(Error::Usage("lifetime needs --depth and --rate, or --input and --fit".into()));
    };
    let io = FitInput { input, fit: fit_path, output: a.output };
    let (fit, panel) = load_fit(ctx, &io)?;
    let rows = analyze::segment_lifetimes(&fit, &panel, ctx.cfg.analyze.aadt_cutoff)?;
    let mut buf = Vec::new();
    analyze::write_lifetimes_csv(&rows, &mut buf)?;
    emit_csv(ctx, io.output.as_deref(), &buf, "lifetime", &[&io.input, &io.fit], serde_json::Value::Null)
}
