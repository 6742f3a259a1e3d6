//! Experiment configuration and the implementations behind the `hdm` commands.
//!
//! A config is one JSON document with the top-level keys `scenario`,
//! `model` and `experiment`, all optional. Missing values are filled with
//! defaults; the resolved spec serializes back into a config that parses to
//! the same spec.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::behavior::{predict_profile, BehavioralModel};
use crate::error::{Error, Result};
use crate::estimation::{cross_validate, fit_mle, FitResult, ModelFamily, ObservationDataset, SearchConfig};
use crate::fog::{compute_metrics, run_negotiation, FogScenario, MetricsSummary, NegotiationTrace, PriceRule};
use crate::game::NormalFormGame;

pub const OUT_DIR_ENV: &str = "HDM_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "out";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Simulate,
    Fit,
    Predict,
}

/// Game for `predict`: a path to a game JSON file or the game itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GameSource {
    Path(PathBuf),
    Inline(NormalFormGame),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSettings {
    pub mode: Mode,
    pub seeds: Vec<u64>,
    pub noise_sweep: Vec<f64>,
    pub averaging_sweep: Vec<bool>,
    pub price_rule: PriceRule,
    pub output_dir: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub game: Option<GameSource>,
    pub folds: Option<usize>,
    pub cv_seed: u64,
    pub bounds: Option<Vec<(f64, f64)>>,
    pub search: SearchConfig,
}

/// Fully resolved experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub scenario: FogScenario,
    pub model: Option<BehavioralModel>,
    pub experiment: ExperimentSettings,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigInput {
    scenario: Option<ScenarioInput>,
    model: Option<BehavioralModel>,
    experiment: Option<ExperimentInput>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioInput {
    #[serde(rename = "M")]
    m: Option<usize>,
    a: Option<f64>,
    alpha: Option<Vec<f64>>,
    beta: Option<Vec<f64>>,
    c_lower: Option<Vec<f64>>,
    kappa: Option<Vec<f64>>,
    #[serde(rename = "B")]
    budget: Option<f64>,
    c_init: Option<Vec<f64>>,
    c_max: Option<Vec<f64>>,
    eta: Option<f64>,
    noise_rho: Option<f64>,
    averaging: Option<bool>,
    averaging_window: Option<usize>,
    max_rounds: Option<usize>,
    conv_tol: Option<f64>,
    conv_window: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentInput {
    mode: Option<Mode>,
    seeds: Option<Vec<u64>>,
    noise_sweep: Option<Vec<f64>>,
    averaging_sweep: Option<Vec<bool>>,
    price_rule: Option<PriceRule>,
    output_dir: Option<PathBuf>,
    dataset: Option<PathBuf>,
    game: Option<GameSource>,
    folds: Option<usize>,
    cv_seed: Option<u64>,
    bounds: Option<Vec<(f64, f64)>>,
    search: Option<SearchConfig>,
}

impl ScenarioInput {
    fn resolve(self) -> Result<FogScenario> {
        let m = self
            .m
            .or_else(|| self.alpha.as_ref().map(Vec::len))
            .unwrap_or(4);
        let budget = self.budget.unwrap_or(100.0);
        let mut s = FogScenario::with_defaults(m, budget);
        if let Some(v) = self.alpha {
            s.alpha = v;
        }
        if let Some(v) = self.beta {
            s.beta = v;
        }
        if let Some(v) = self.kappa {
            s.kappa = v;
        }
        if let Some(v) = self.c_lower {
            s.c_lower = v;
        }
        // derived defaults follow the values actually configured
        let alpha_sum: f64 = s.alpha.iter().sum();
        s.a = self.a.unwrap_or(if alpha_sum > 0.0 { budget / alpha_sum } else { 1.0 });
        s.c_init = self.c_init.unwrap_or_else(|| s.c_lower.clone());
        s.c_max = self
            .c_max
            .unwrap_or_else(|| s.c_lower.iter().map(|c| c * crate::fog::DEFAULT_PRICE_CEILING_FACTOR).collect());
        if let Some(v) = self.eta {
            s.eta = v;
        }
        if let Some(v) = self.noise_rho {
            s.noise_rho = v;
        }
        if let Some(v) = self.averaging {
            s.averaging = v;
        }
        s.averaging_window = self.averaging_window;
        if let Some(v) = self.max_rounds {
            s.max_rounds = v;
        }
        if let Some(v) = self.conv_tol {
            s.conv_tol = v;
        }
        if let Some(v) = self.conv_window {
            s.conv_window = v;
        }
        s.validate()?;
        Ok(s)
    }
}

fn resolve_path(base: &Path, p: PathBuf, key: &str) -> Result<PathBuf> {
    let joined = if p.is_absolute() { p } else { base.join(p) };
    if !joined.exists() {
        return Err(Error::validation(key, format!("{} does not exist", joined.display())));
    }
    Ok(joined)
}

/// Parses a config; `mode` (from the command line) must agree with the
/// config's own `experiment.mode` when both are given.
pub fn parse_config_str(text: &str, base_dir: &Path, mode: Option<Mode>) -> Result<ExperimentSpec> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let input: ConfigInput = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::Parse(format!("at `{path}`: {}", e.into_inner()))
    })?;
    let scenario = input.scenario.unwrap_or_default().resolve()?;
    let exp = input.experiment.unwrap_or_default();
    let mode = match (exp.mode, mode) {
        (Some(a), Some(b)) if a != b => {
            return Err(Error::validation("mode", format!("config is for {a:?}, command is {b:?}")));
        }
        (Some(a), _) => a,
        (None, Some(b)) => b,
        (None, None) => Mode::Simulate,
    };

    if let Some(model) = &input.model {
        model.validate().map_err(|e| Error::validation("model", e.to_string()))?;
    }
    let seeds = exp.seeds.unwrap_or_default();
    if mode == Mode::Simulate && seeds.is_empty() {
        return Err(Error::validation("seeds", "simulate needs at least one seed"));
    }
    let noise_sweep = exp.noise_sweep.unwrap_or_else(|| vec![scenario.noise_rho]);
    if noise_sweep.is_empty() || noise_sweep.iter().any(|r| !(0.0..1.0).contains(r)) {
        return Err(Error::validation("noise_sweep", "needs values in [0, 1)"));
    }
    let averaging_sweep = exp.averaging_sweep.unwrap_or_else(|| vec![scenario.averaging]);
    if averaging_sweep.is_empty() {
        return Err(Error::validation("averaging_sweep", "must not be empty"));
    }
    let dataset = exp.dataset.map(|p| resolve_path(base_dir, p, "dataset")).transpose()?;
    let game = match exp.game {
        Some(GameSource::Path(p)) => Some(GameSource::Path(resolve_path(base_dir, p, "game")?)),
        other => other,
    };
    let search = exp.search.unwrap_or_default();
    if search.grid_points < 3 {
        return Err(Error::validation("search", "grid_points must be at least 3"));
    }
    if exp.folds.is_some_and(|k| k < 2) {
        return Err(Error::validation("folds", "need at least 2 folds"));
    }

    let mut bounds = exp.bounds;
    match mode {
        Mode::Simulate => {}
        Mode::Fit => {
            let Some(model) = &input.model else {
                return Err(Error::validation("model", "fit needs a model block naming the family"));
            };
            if dataset.is_none() {
                return Err(Error::validation("dataset", "fit needs a dataset path"));
            }
            let family = ModelFamily::new(model.clone());
            let b = bounds.unwrap_or_else(|| family.default_bounds());
            if b.len() != family.scalar_names().len() {
                return Err(Error::validation(
                    "bounds",
                    format!("{} needs bounds for {:?}", family.name(), family.scalar_names()),
                ));
            }
            if b.iter().any(|(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo <= hi)) {
                return Err(Error::validation("bounds", "each pair must be finite with lo <= hi"));
            }
            bounds = Some(b);
        }
        Mode::Predict => {
            if input.model.is_none() {
                return Err(Error::validation("model", "predict needs a model block"));
            }
            if game.is_none() {
                return Err(Error::validation("game", "predict needs a game (path or inline)"));
            }
        }
    }

    Ok(ExperimentSpec {
        scenario,
        model: input.model,
        experiment: ExperimentSettings {
            mode,
            seeds,
            noise_sweep,
            averaging_sweep,
            price_rule: exp.price_rule.unwrap_or_default(),
            output_dir: exp.output_dir,
            dataset,
            game,
            folds: exp.folds,
            cv_seed: exp.cv_seed.unwrap_or(0),
            bounds,
            search,
        },
    })
}

/// Reads and resolves a config file. Relative paths inside it are taken
/// relative to the file's directory.
pub fn parse_config(path: impl AsRef<Path>, mode: Option<Mode>) -> Result<ExperimentSpec> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let base = fs::canonicalize(path)?
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    parse_config_str(&text, &base, mode)
}

impl ExperimentSpec {
    /// Pretty JSON of the resolved spec; parses back to an equal spec.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Failure of a command, split by exit code.
#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("{0}")]
    Validation(Error),
    #[error("{0}")]
    Runtime(Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Validation(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }

    fn classify(e: Error) -> Self {
        if e.is_validation() {
            Failure::Validation(e)
        } else {
            Failure::Runtime(e)
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Worker threads for independent runs; `None` uses all cores.
    pub workers: Option<usize>,
}

impl RunOptions {
    /// Output directory from the flag, else the environment, else the config, else `out`.
    pub fn resolve(flag: Option<PathBuf>, spec: &ExperimentSpec, workers: Option<usize>) -> Self {
        let out_dir = flag
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .or_else(|| spec.experiment.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
        Self { out_dir, workers }
    }
}

fn write_atomic(dir: &Path, name: &str, write: impl FnOnce(&mut fs::File) -> Result<()>) -> Result<PathBuf> {
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    write(tmp.as_file_mut())?;
    tmp.as_file_mut().flush()?;
    let dest = dir.join(name);
    tmp.persist(&dest).map_err(|e| Error::Io(e.error))?;
    Ok(dest)
}

fn write_json_atomic<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf> {
    write_atomic(dir, name, |f| {
        serde_json::to_writer_pretty(&mut *f, value)?;
        f.write_all(b"\n")?;
        Ok(())
    })
}

/// Trace file name for one sweep cell.
pub fn trace_file_name(rho: f64, averaging: bool, seed: u64) -> String {
    format!("trace_{rho}_{}_{seed}.csv", if averaging { "avg" } else { "raw" })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub noise_rho: f64,
    pub averaging: bool,
    /// True when every run of the cell converged.
    pub converged: bool,
    #[serde(flatten)]
    pub metrics: MetricsSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub noise_rho: f64,
    pub averaging: bool,
    pub seed: u64,
    pub status: String,
    pub file: Option<String>,
    pub rounds: Option<usize>,
    pub converged: Option<bool>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ExperimentSpec,
    pub runs: Vec<RunRecord>,
    pub failed: usize,
}

#[derive(Debug, Clone)]
pub struct SimulateOutcome {
    pub summary: Vec<CellSummary>,
    pub manifest: Manifest,
}

fn pool(workers: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        builder = builder.num_threads(n.max(1));
    }
    builder
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))
}

/// Runs every (noise, averaging, seed) cell, writing one trace CSV per run,
/// `summary.json` and `manifest.json`. Outputs of successful runs are kept
/// when others fail; the manifest marks the failures.
pub fn run_simulate(spec: &ExperimentSpec, opts: &RunOptions) -> std::result::Result<SimulateOutcome, Failure> {
    let exp = &spec.experiment;
    if exp.seeds.is_empty() {
        return Err(Failure::Validation(Error::validation("seeds", "simulate needs at least one seed")));
    }
    fs::create_dir_all(&opts.out_dir).map_err(|e| Failure::Runtime(e.into()))?;
    let cells: Vec<(f64, bool, u64)> = exp
        .noise_sweep
        .iter()
        .flat_map(|&rho| {
            exp.averaging_sweep
                .iter()
                .flat_map(move |&avg| exp.seeds.iter().map(move |&seed| (rho, avg, seed)))
        })
        .collect();
    let out = &opts.out_dir;
    let results: Vec<(RunRecord, Option<NegotiationTrace>)> = pool(opts.workers).map_err(Failure::Runtime)?.install(|| {
        cells
            .par_iter()
            .map(|&(rho, avg, seed)| {
                let scenario = spec.scenario.clone().with_noise(rho, avg);
                let name = trace_file_name(rho, avg, seed);
                let run = run_negotiation(&scenario, exp.price_rule, seed)
                    .and_then(|t| write_atomic(out, &name, |f| t.write_csv(f)).map(|_| t));
                let mut record = RunRecord {
                    noise_rho: rho,
                    averaging: avg,
                    seed,
                    status: "ok".into(),
                    file: None,
                    rounds: None,
                    converged: None,
                    error: None,
                };
                match run {
                    Ok(t) => {
                        record.file = Some(name);
                        record.rounds = Some(t.rounds.len());
                        record.converged = Some(t.converged);
                        (record, Some(t))
                    }
                    Err(e) => {
                        record.status = "failed".into();
                        record.error = Some(e.to_string());
                        (record, None)
                    }
                }
            })
            .collect()
    });

    // aggregation is a single sequential pass in sweep order
    let mut summary = Vec::new();
    for &rho in &exp.noise_sweep {
        for &avg in &exp.averaging_sweep {
            let traces: Vec<NegotiationTrace> = results
                .iter()
                .filter(|(r, _)| r.noise_rho == rho && r.averaging == avg)
                .filter_map(|(_, t)| t.clone())
                .collect();
            if let Ok(metrics) = compute_metrics(&traces) {
                summary.push(CellSummary {
                    noise_rho: rho,
                    averaging: avg,
                    converged: traces.iter().all(|t| t.converged),
                    metrics,
                });
            }
        }
    }
    let runs: Vec<RunRecord> = results.into_iter().map(|(r, _)| r).collect();
    let failed = runs.iter().filter(|r| r.status != "ok").count();
    let manifest = Manifest {
        config: spec.clone(),
        runs,
        failed,
    };
    write_json_atomic(out, "summary.json", &summary).map_err(Failure::Runtime)?;
    write_json_atomic(out, "manifest.json", &manifest).map_err(Failure::Runtime)?;
    if failed > 0 {
        let first = manifest
            .runs
            .iter()
            .find_map(|r| r.error.clone())
            .unwrap_or_default();
        return Err(Failure::Runtime(Error::InvalidArgument(format!(
            "{failed} of {} runs failed (first: {first}); see manifest.json",
            manifest.runs.len()
        ))));
    }
    Ok(SimulateOutcome { summary, manifest })
}

/// Fits the configured model family to the dataset and writes `fit_result.json`.
pub fn run_fit(spec: &ExperimentSpec, opts: &RunOptions) -> std::result::Result<FitResult, Failure> {
    let exp = &spec.experiment;
    let (Some(model), Some(path)) = (&spec.model, &exp.dataset) else {
        return Err(Failure::Validation(Error::validation("model", "fit needs a model and a dataset")));
    };
    let data = ObservationDataset::load_jsonl(path).map_err(|e| match e {
        Error::Io(_) => Failure::Runtime(e),
        other => Failure::Validation(other),
    })?;
    if data.is_empty() {
        return Err(Failure::Validation(Error::validation("dataset", "empty dataset")));
    }
    if let Some(k) = exp.folds {
        if k > data.len() {
            return Err(Failure::Validation(Error::validation(
                "folds",
                format!("{k} folds but only {} observations", data.len()),
            )));
        }
    }
    let family = ModelFamily::new(model.clone());
    let bounds = exp.bounds.clone().unwrap_or_else(|| family.default_bounds());
    let pool = pool(opts.workers).map_err(Failure::Runtime)?;
    let result = pool.install(|| -> Result<FitResult> {
        let mut fit = fit_mle(&family, &data, &bounds, exp.search)?;
        if let Some(k) = exp.folds {
            fit.cv_score = Some(cross_validate(&family, &data, k, &bounds, exp.search, exp.cv_seed)?.mean);
        }
        Ok(fit)
    });
    let fit = result.map_err(Failure::classify)?;
    fs::create_dir_all(&opts.out_dir).map_err(|e| Failure::Runtime(e.into()))?;
    write_json_atomic(&opts.out_dir, "fit_result.json", &fit).map_err(Failure::Runtime)?;
    Ok(fit)
}

/// Predicted mixed strategy of every player, as a JSON array of probability vectors.
pub fn run_predict(spec: &ExperimentSpec) -> std::result::Result<String, Failure> {
    let (Some(model), Some(source)) = (&spec.model, &spec.experiment.game) else {
        return Err(Failure::Validation(Error::validation("model", "predict needs a model and a game")));
    };
    let game = match source {
        GameSource::Inline(g) => g.clone(),
        GameSource::Path(p) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::Runtime(e.into()))?;
            serde_json::from_str(&text)
                .map_err(|e| Failure::Validation(Error::validation("game", e.to_string())))?
        }
    };
    let profile = predict_profile(model, &game).map_err(Failure::classify)?;
    let rows: Vec<&[f64]> = profile.iter().map(|s| s.weights()).collect();
    serde_json::to_string(&rows).map_err(|e| Failure::Runtime(e.into()))
}
