//! Config-driven experiment runs and their artifacts.
//!
//! A run reads one JSON document, calibrates the centering of the law,
//! audits the standing assumptions, estimates `σ̂` and executes one
//! experiment or the whole suite. Artifacts written to the output directory:
//!
//! | file             | content                                            |
//! |------------------|----------------------------------------------------|
//! | `estimates.json` | every Monte Carlo estimate, per experiment         |
//! | `verdicts.json`  | the [`VerdictReport`]s                             |
//! | `summary.csv`    | one row per verdict                                |
//! | `plot_data.csv`  | `(n, b)` rows of the local-probability experiments |
//! | `ensemble.json`  | calibrated law, calibration and assumption audit   |
//! | `metadata.json`  | timestamps and wall time (not reproducible)        |
//!
//! All files but `metadata.json` are a pure function of the config; the
//! worker count and output directory do not enter the config hash.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::ensemble::{
    calibrate_centering, validate_assumptions, AssumptionReport, Calibration, CalibrationParams, EnsembleSpec,
};
use crate::error::{Error, Result};
use crate::estimators::Sigma2Params;
use crate::harness::{self, ExperimentContext, VerdictReport, VerdictStatus};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Exit statuses of a run.
pub mod exit {
    pub const PASS: i32 = 0;
    pub const RUNTIME_ERROR: i32 = 1;
    pub const CONFIG_ERROR: i32 = 2;
    pub const INCONCLUSIVE: i32 = 3;
    pub const FAILED: i32 = 4;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentId {
    CheckLemmaKeylemAudit,
    CheckReverseLemma,
    CheckUnconditionedLlt,
    CheckLocalBoundsUnconditioned,
    CheckConditionedBounds,
    CheckGnedenko,
    #[serde(rename = "check_local_32")]
    CheckLocal32,
    CheckRayleigh,
    CheckHarmonicity,
    CheckSurvivalRate,
    CheckHarmonicConsistency,
    /// Every experiment above, in registry order.
    Suite,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 11] = [
        ExperimentId::CheckLemmaKeylemAudit,
        ExperimentId::CheckReverseLemma,
        ExperimentId::CheckUnconditionedLlt,
        ExperimentId::CheckLocalBoundsUnconditioned,
        ExperimentId::CheckConditionedBounds,
        ExperimentId::CheckGnedenko,
        ExperimentId::CheckLocal32,
        ExperimentId::CheckRayleigh,
        ExperimentId::CheckHarmonicity,
        ExperimentId::CheckSurvivalRate,
        ExperimentId::CheckHarmonicConsistency,
    ];

    pub fn name(&self) -> String {
        serde_json::to_value(self)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default()
    }
}

/// The law, inline or as a path to a JSON file (relative to the config).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EnsembleSource {
    File { path: PathBuf },
    Inline(EnsembleSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SigmaConfig {
    pub horizon: usize,
    pub reps: u64,
}

impl Default for SigmaConfig {
    fn default() -> Self {
        Self {
            horizon: 512,
            reps: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub ensemble: EnsembleSource,
    pub experiment: ExperimentId,
    /// Parameters of the experiment; for the suite, an object keyed by
    /// experiment id.
    #[serde(default)]
    pub experiment_params: Map<String, Value>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Re-center the law before running; disable for exactly centered laws.
    #[serde(default = "default_true")]
    pub calibrate: bool,
    #[serde(default)]
    pub calibration: CalibrationParams,
    /// Matrices sampled by the assumption audit.
    #[serde(default = "default_audit")]
    pub assumption_budget: u64,
    #[serde(default)]
    pub sigma: SigmaConfig,
}

fn default_workers() -> usize {
    1
}

fn default_output() -> PathBuf {
    PathBuf::from("results")
}

fn default_true() -> bool {
    true
}

fn default_audit() -> u64 {
    100_000
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        if let EnsembleSource::File { path: rel } = &cfg.ensemble {
            let base = path.parent().unwrap_or(Path::new("."));
            cfg.ensemble = EnsembleSource::File { path: base.join(rel) };
        }
        Ok(cfg)
    }

    fn resolve_ensemble(&self) -> Result<EnsembleSpec> {
        let spec = match &self.ensemble {
            EnsembleSource::Inline(spec) => spec.clone(),
            EnsembleSource::File { path } => {
                let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            }
        };
        spec.validate()?;
        Ok(spec)
    }

    /// SHA-256 of the canonical config with the resolved law, excluding the
    /// worker count and output directory.
    pub fn hash(&self) -> Result<String> {
        let mut doc = serde_json::to_value(self)?;
        if let Value::Object(map) = &mut doc {
            map.remove("workers");
            map.remove("output_dir");
            map.insert("ensemble".into(), serde_json::to_value(self.resolve_ensemble()?)?);
        }
        Ok(hex(&Sha256::digest(doc.to_string().as_bytes())))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Command-line overrides of config fields.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub output_dir: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        if let Some(o) = &self.output_dir {
            cfg.output_dir = o.clone();
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub verdicts: Vec<VerdictReport>,
    pub output_dir: PathBuf,
    pub config_hash: String,
}

/// Parameters of one experiment, rejecting unknown keys.
fn params_of<P: for<'de> Deserialize<'de>>(id: ExperimentId, raw: Option<&Value>) -> Result<P> {
    let value = raw.cloned().unwrap_or_else(|| json!({}));
    serde_json::from_value(value).map_err(|e| Error::Config(format!("experiment_params of {}: {e}", id.name())))
}

/// Parsed parameters of one experiment, checked before any simulation.
enum Planned {
    Keylem(harness::KeylemAuditParams),
    Reverse(harness::ReverseParams),
    Llt(harness::LltParams),
    LocalBounds(harness::LocalBoundsParams),
    ConditionedBounds(harness::ConditionedBoundsParams),
    Gnedenko(harness::GnedenkoParams),
    Local32(harness::Local32Params),
    Rayleigh(harness::RayleighParams),
    Harmonicity(harness::HarmonicityParams),
    SurvivalRate(harness::SurvivalRateParams),
    HarmonicConsistency(harness::HarmonicConsistencyParams),
}

fn plan(id: ExperimentId, raw: Option<&Value>) -> Result<Planned> {
    use ExperimentId::*;
    Ok(match id {
        CheckLemmaKeylemAudit => Planned::Keylem(params_of(id, raw)?),
        CheckReverseLemma => Planned::Reverse(params_of(id, raw)?),
        CheckUnconditionedLlt => Planned::Llt(params_of(id, raw)?),
        CheckLocalBoundsUnconditioned => Planned::LocalBounds(params_of(id, raw)?),
        CheckConditionedBounds => Planned::ConditionedBounds(params_of(id, raw)?),
        CheckGnedenko => Planned::Gnedenko(params_of(id, raw)?),
        CheckLocal32 => Planned::Local32(params_of(id, raw)?),
        CheckRayleigh => Planned::Rayleigh(params_of(id, raw)?),
        CheckHarmonicity => Planned::Harmonicity(params_of(id, raw)?),
        CheckSurvivalRate => Planned::SurvivalRate(params_of(id, raw)?),
        CheckHarmonicConsistency => Planned::HarmonicConsistency(params_of(id, raw)?),
        Suite => unreachable!("the suite is expanded before planning"),
    })
}

fn execute(planned: &Planned, ctx: &ExperimentContext, seed: u64) -> Result<VerdictReport> {
    match planned {
        Planned::Keylem(p) => harness::check_lemma_keylem_audit(ctx, p, seed),
        Planned::Reverse(p) => harness::check_reverse_lemma(ctx, p, seed),
        Planned::Llt(p) => harness::check_unconditioned_llt(ctx, p, seed),
        Planned::LocalBounds(p) => harness::check_local_bounds_unconditioned(ctx, p, seed),
        Planned::ConditionedBounds(p) => harness::check_conditioned_bounds(ctx, p, seed),
        Planned::Gnedenko(p) => harness::check_gnedenko(ctx, p, seed),
        Planned::Local32(p) => harness::check_local_32(ctx, p, seed),
        Planned::Rayleigh(p) => harness::check_rayleigh(ctx, p, seed),
        Planned::Harmonicity(p) => harness::check_harmonicity(ctx, p, seed),
        Planned::SurvivalRate(p) => harness::check_survival_rate(ctx, p, seed),
        Planned::HarmonicConsistency(p) => harness::check_harmonic_consistency(ctx, p, seed),
    }
}

fn plan_all(cfg: &RunConfig) -> Result<Vec<(ExperimentId, Planned)>> {
    if cfg.experiment != ExperimentId::Suite {
        let raw = Value::Object(cfg.experiment_params.clone());
        return Ok(vec![(cfg.experiment, plan(cfg.experiment, Some(&raw))?)]);
    }
    let names: Vec<String> = ExperimentId::ALL.iter().map(ExperimentId::name).collect();
    if let Some(unknown) = cfg.experiment_params.keys().find(|k| !names.contains(k)) {
        return Err(Error::Config(format!(
            "unknown experiment `{unknown}` in experiment_params"
        )));
    }
    ExperimentId::ALL
        .iter()
        .map(|&id| Ok((id, plan(id, cfg.experiment_params.get(&id.name()))?)))
        .collect()
}

fn exit_code(verdicts: &[VerdictReport]) -> i32 {
    if verdicts.iter().any(|v| v.status == VerdictStatus::Fail) {
        exit::FAILED
    } else if verdicts
        .iter()
        .any(|v| matches!(v.status, VerdictStatus::Inconclusive | VerdictStatus::Skipped))
    {
        exit::INCONCLUSIVE
    } else {
        exit::PASS
    }
}

/// Errors caused by the configuration rather than the computation.
pub fn is_config_error(e: &Error) -> bool {
    matches!(
        e,
        Error::Config(_)
            | Error::Json(_)
            | Error::InvalidParameter(_)
            | Error::InvalidEnsemble(_)
            | Error::InvalidMatrix(_)
            | Error::InvalidSimplexPoint(_)
            | Error::DimensionMismatch { .. }
    )
}

fn unix_seconds() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// Runs `cfg` and writes its artifacts.
pub fn run_config(cfg: &RunConfig) -> Result<RunOutcome> {
    let started = unix_seconds();
    let clock = Instant::now();
    let spec = cfg.resolve_ensemble()?;
    let config_hash = cfg.hash()?;
    let planned = plan_all(cfg)?;
    if cfg.workers == 0 {
        return Err(Error::Config("workers must be at least 1".into()));
    }

    let calibration: Option<Calibration> = if cfg.calibrate {
        Some(calibrate_centering(&spec, &cfg.calibration, cfg.seed, cfg.workers)?)
    } else {
        None
    };
    let spec = calibration.as_ref().map_or(spec, |c| c.spec.clone());
    let assumptions: AssumptionReport = validate_assumptions(&spec, cfg.assumption_budget, cfg.seed, cfg.workers)?;
    let sigma_params = Sigma2Params {
        horizon: cfg.sigma.horizon,
        reps: cfg.sigma.reps,
    };
    let ctx = ExperimentContext::prepare(spec.clone(), &sigma_params, cfg.seed, cfg.workers)?;

    let mut verdicts = Vec::new();
    for (id, p) in &planned {
        let seed = crate::rng::derive_seed(cfg.seed, &id.name());
        verdicts.push(execute(p, &ctx, seed)?);
    }

    let out = &cfg.output_dir;
    fs::create_dir_all(out)?;
    let stamp = json!({"config_hash": config_hash, "version": VERSION});

    let estimates = json!({
        "provenance": stamp,
        "calibration": calibration,
        "sigma": ctx.sigma,
        "experiments": verdicts.iter().map(|v| json!({
            "experiment": v.experiment,
            "inputs_hash": v.inputs_hash,
            "estimates": v.estimates,
        })).collect::<Vec<_>>(),
    });
    write_json(&out.join("estimates.json"), &estimates)?;
    write_json(
        &out.join("verdicts.json"),
        &json!({"provenance": stamp, "verdicts": verdicts}),
    )?;
    write_json(
        &out.join("ensemble.json"),
        &json!({
            "provenance": stamp,
            "ensemble": spec,
            "calibration": calibration,
            "assumptions": assumptions,
        }),
    )?;
    fs::write(out.join("summary.csv"), summary_csv(&verdicts, &config_hash))?;
    fs::write(out.join("plot_data.csv"), plot_csv(&verdicts, &config_hash))?;
    let exit_code = exit_code(&verdicts);
    write_json(
        &out.join("metadata.json"),
        &json!({
            "provenance": stamp,
            "started_unix": started,
            "finished_unix": unix_seconds(),
            "elapsed_seconds": clock.elapsed().as_secs_f64(),
            "workers": cfg.workers,
            "exit_code": exit_code,
        }),
    )?;
    Ok(RunOutcome {
        exit_code,
        verdicts,
        output_dir: out.clone(),
        config_hash,
    })
}

/// Loads `path`, applies `overrides` and runs; returns the exit status.
pub fn run(path: &Path, overrides: &Overrides) -> Result<RunOutcome> {
    let mut cfg = RunConfig::load(path)?;
    overrides.apply(&mut cfg);
    run_config(&cfg)
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn csv_number(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x}"),
        _ => String::new(),
    }
}

fn summary_csv(verdicts: &[VerdictReport], hash: &str) -> String {
    let mut s = String::from("experiment,statistic,threshold,pass,status,inputs_hash,config_hash,version\n");
    for v in verdicts {
        let status = serde_json::to_value(v.status)
            .ok()
            .and_then(|s| s.as_str().map(str::to_string))
            .unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            v.experiment,
            csv_number(Some(v.statistic)),
            csv_number(Some(v.threshold)),
            v.pass,
            status,
            v.inputs_hash,
            hash,
            VERSION
        );
    }
    s
}

fn plot_csv(verdicts: &[VerdictReport], hash: &str) -> String {
    let mut s = String::from(
        "experiment,n,b,estimate,std_error,main_term_paper,main_term_rayleigh,residual,config_hash,version\n",
    );
    for v in verdicts {
        for r in &v.plot_rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                v.experiment,
                r.n,
                csv_number(Some(r.b)),
                csv_number(Some(r.estimate)),
                csv_number(Some(r.std_error)),
                csv_number(r.main_term_paper),
                csv_number(r.main_term_rayleigh),
                csv_number(r.residual),
                hash,
                VERSION
            );
        }
    }
    s
}

/// Text table of the experiment registry.
pub fn list_experiments() -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<34} {:<62} params", "experiment", "reference");
    for e in harness::EXPERIMENTS {
        let _ = writeln!(s, "{:<34} {:<62} {}", e.id, e.reference, e.params);
        let _ = writeln!(s, "{:<34} guards: {}", "", e.guards);
    }
    s
}
