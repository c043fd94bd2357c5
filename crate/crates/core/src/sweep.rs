//! Monte-Carlo sweeps over methods, discount factors, one swept setting and
//! seeds, with CSV output and text tables.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::eval::{elrar, sample_std, write_eta_csv, EvalConfig};
use crate::runner::{run_online, ExperimentConfig, Method};
use crate::sim::StateSampler;

pub const DEFAULT_GAMMAS: [f64; 6] = [0.0, 0.2, 0.4, 0.6, 0.8, 0.95];
pub const DEFAULT_SEEDS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    /// Trajectory length `T`.
    S1,
    /// Warm-start length `T0`.
    S2,
    /// Cohesion weight `mu1`.
    S3,
    /// Nothing swept.
    Single,
}

impl Setting {
    pub fn name(self) -> &'static str {
        match self {
            Setting::S1 => "s1",
            Setting::S2 => "s2",
            Setting::S3 => "s3",
            Setting::Single => "single",
        }
    }

    /// Name of the swept field as it appears in the CSV.
    pub fn swept_name(self) -> &'static str {
        match self {
            Setting::S1 => "T",
            Setting::S2 => "T0",
            Setting::S3 => "mu1",
            Setting::Single => "none",
        }
    }

    pub fn default_values(self) -> Vec<f64> {
        match self {
            Setting::S1 => vec![50.0, 80.0, 110.0, 150.0],
            Setting::S2 => vec![5.0, 10.0, 15.0, 20.0],
            Setting::S3 => vec![0.001, 0.01, 0.1, 1.0, 10.0],
            Setting::Single => vec![],
        }
    }

    /// Write `value` into the swept field of `cfg`.
    pub fn apply(self, cfg: &mut ExperimentConfig, value: Option<f64>) -> Result<()> {
        let Some(v) = value else {
            return match self {
                Setting::Single => Ok(()),
                _ => Err(config(format!("setting {} needs a swept value", self.name()))),
            };
        };
        let as_len = |v: f64| {
            if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
                Ok(v as usize)
            } else {
                Err(config(format!("{} must be a nonnegative integer, got {v}", self.swept_name())))
            }
        };
        match self {
            Setting::S1 => cfg.horizon = as_len(v)?,
            Setting::S2 => cfg.warm_start = as_len(v)?,
            Setting::S3 => cfg.mu1 = v,
            Setting::Single => return Err(config("setting single takes no swept values")),
        }
        Ok(())
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s1" => Ok(Setting::S1),
            "s2" => Ok(Setting::S2),
            "s3" => Ok(Setting::S3),
            "single" => Ok(Setting::Single),
            other => Err(config(format!("unknown setting {other:?}; expected s1, s2, s3 or single"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub setting: Setting,
    /// Swept values; empty means the setting's defaults.
    pub values: Vec<f64>,
    pub gammas: Vec<f64>,
    pub methods: Vec<Method>,
    pub seeds: usize,
    /// Cell seeds are `first_seed .. first_seed + seeds`, shared by all methods.
    pub first_seed: u64,
    /// Everything not swept comes from here.
    pub base: ExperimentConfig,
    pub eval: EvalConfig,
    /// Upper bound on concurrently running cells.
    pub workers: usize,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            setting: Setting::Single,
            values: vec![],
            gammas: DEFAULT_GAMMAS.to_vec(),
            methods: Method::ALL.to_vec(),
            seeds: DEFAULT_SEEDS,
            first_seed: 0,
            base: ExperimentConfig::default(),
            eval: EvalConfig::default(),
            workers: 1,
        }
    }
}

impl SweepSpec {
    pub fn swept_values(&self) -> Vec<Option<f64>> {
        match self.setting {
            Setting::Single => vec![None],
            s if self.values.is_empty() => s.default_values().into_iter().map(Some).collect(),
            _ => self.values.iter().copied().map(Some).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds < 1 {
            return Err(config("seeds must be at least 1"));
        }
        if self.gammas.is_empty() || self.methods.is_empty() {
            return Err(config("gamma and method lists must be nonempty"));
        }
        if self.setting == Setting::Single && !self.values.is_empty() {
            return Err(config("setting single takes no swept values"));
        }
        if self.workers < 1 {
            return Err(config("workers must be at least 1"));
        }
        self.eval.validate()
    }

    /// Every cell in output order: swept value, gamma, method, seed.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for value in self.swept_values() {
            for &gamma in &self.gammas {
                for &method in &self.methods {
                    for k in 0..self.seeds {
                        out.push(Cell { method, gamma, value, seed: self.first_seed + k as u64 });
                    }
                }
            }
        }
        out
    }

    pub fn cell_config(&self, cell: &Cell) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig { method: cell.method, gamma: cell.gamma, seed: cell.seed, ..self.base.clone() };
        self.setting.apply(&mut cfg, cell.value)?;
        cfg.validate()?;
        Ok(cfg.resolved())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub method: Method,
    pub gamma: f64,
    pub value: Option<f64>,
    pub seed: u64,
}

impl Cell {
    fn dir_name(&self, setting: Setting) -> String {
        let value = self.value.map_or(String::new(), |v| format!("_{}{v}", setting.swept_name()));
        format!("{}_gamma{}{value}_seed{}", self.method, self.gamma, self.seed)
    }
}

/// One row of the results CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub setting: Setting,
    pub method: Method,
    pub gamma: f64,
    pub swept_name: String,
    pub swept_value: Option<f64>,
    pub seed: u64,
    pub elrar: f64,
    pub std_across_users: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellError {
    pub method: Method,
    pub gamma: f64,
    pub swept_value: Option<f64>,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, Default)]
pub struct SweepOutcome {
    pub results: Vec<CellResult>,
    pub errors: Vec<CellError>,
    /// Per-user values of successful cells as `(seed, user, eta)`, in cell order.
    pub etas: Vec<Vec<(u64, usize, f64)>>,
}

struct CellOutput {
    result: CellResult,
    etas: Vec<(u64, usize, f64)>,
    config: ExperimentConfig,
}

fn run_cell(spec: &SweepSpec, cell: &Cell) -> Result<CellOutput> {
    let clock = Instant::now();
    let cfg = spec.cell_config(cell)?;
    let run = run_online(&cfg)?;
    let sampler = StateSampler::new(&cfg.population.sigma0_matrix()?)?;
    let report = elrar(&run.population, &run.theta, &sampler, &spec.eval, cell.seed)?;
    let etas = report.per_user.iter().enumerate().map(|(n, &eta)| (cell.seed, n, eta)).collect();
    let result = CellResult {
        setting: spec.setting,
        method: cell.method,
        gamma: cell.gamma,
        swept_name: spec.setting.swept_name().to_string(),
        swept_value: cell.value,
        seed: cell.seed,
        elrar: report.elrar,
        std_across_users: report.std_across_users(),
        wall_time_s: clock.elapsed().as_secs_f64(),
    };
    Ok(CellOutput { result, etas, config: cfg })
}

/// Write `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn save_cell(dir: &Path, out: &CellOutput) -> Result<()> {
    write_atomic(&dir.join("config.json"), serde_json::to_string_pretty(&out.config)?.as_bytes())?;
    let mut eta = Vec::new();
    write_eta_csv(&mut eta, &out.etas, true)?;
    write_atomic(&dir.join("eta.csv"), &eta)?;
    let mut row = csv::Writer::from_writer(Vec::new());
    row.serialize(&out.result)?;
    write_atomic(&dir.join("result.csv"), &row.into_inner().map_err(|e| Error::Io(e.into_error()))?)
}

/// Run every cell. Failed cells are collected in the outcome, not returned
/// as an error. With `out` set, each cell writes its own directory as soon
/// as it finishes and the sweep-level files are written at the end.
pub fn run_sweep(spec: &SweepSpec, out: Option<&Path>) -> Result<SweepOutcome> {
    spec.validate()?;
    if let Some(dir) = out {
        fs::create_dir_all(dir.join("cells"))?;
        write_atomic(&dir.join("config.json"), serde_json::to_string_pretty(spec)?.as_bytes())?;
    }
    let cells = spec.cells();
    let work = |cell: &Cell| -> Result<CellOutput> {
        let output = run_cell(spec, cell)?;
        if let Some(dir) = out {
            save_cell(&dir.join("cells").join(cell.dir_name(spec.setting)), &output)?;
        }
        Ok(output)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.workers)
        .build()
        .map_err(|e| config(format!("cannot start worker pool: {e}")))?;
    let outputs: Vec<Result<CellOutput>> = pool.install(|| cells.par_iter().map(work).collect());

    let mut outcome = SweepOutcome::default();
    for (cell, output) in cells.iter().zip(outputs) {
        match output {
            Ok(o) => {
                outcome.results.push(o.result);
                outcome.etas.push(o.etas);
            }
            Err(e) => outcome.errors.push(CellError {
                method: cell.method,
                gamma: cell.gamma,
                swept_value: cell.value,
                seed: cell.seed,
                error: e.to_string(),
            }),
        }
    }
    if let Some(dir) = out {
        write_outcome(dir, &outcome)?;
    }
    Ok(outcome)
}

fn csv_bytes<T: Serialize>(rows: &[T], header: &[&str]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub const RESULTS_HEADER: [&str; 9] =
    ["setting", "method", "gamma", "swept_name", "swept_value", "seed", "elrar", "std_across_users", "wall_time_s"];

/// `results.csv`, `errors.csv`, `eta.csv`, `long.csv` and `table.txt`.
pub fn write_outcome(dir: &Path, outcome: &SweepOutcome) -> Result<()> {
    write_atomic(&dir.join("results.csv"), &csv_bytes(&outcome.results, &RESULTS_HEADER)?)?;
    write_atomic(
        &dir.join("errors.csv"),
        &csv_bytes(&outcome.errors, &["method", "gamma", "swept_value", "seed", "error"])?,
    )?;
    let mut eta = Vec::new();
    write_eta_csv(&mut eta, &outcome.etas.concat(), true)?;
    write_atomic(&dir.join("eta.csv"), &eta)?;
    write_atomic(
        &dir.join("long.csv"),
        &csv_bytes(
            &summarize(&outcome.results),
            &["setting", "method", "gamma", "swept_name", "swept_value", "mean_elrar", "std_across_seeds", "seeds"],
        )?,
    )?;
    write_atomic(&dir.join("table.txt"), render_table(&outcome.results).as_bytes())
}

pub fn read_results_csv(path: &Path) -> Result<Vec<CellResult>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<CellResult>, _>>()?)
}

/// Seed-aggregated value of one (setting, method, gamma, swept value) group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub setting: Setting,
    pub method: Method,
    pub gamma: f64,
    pub swept_name: String,
    pub swept_value: Option<f64>,
    pub mean_elrar: f64,
    /// Sample standard deviation over seeds.
    pub std_across_seeds: f64,
    pub seeds: usize,
}

fn sorted_unique(xs: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = xs.collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

fn option_values(results: &[CellResult]) -> Vec<Option<f64>> {
    let mut vals: Vec<Option<f64>> = Vec::new();
    if results.iter().any(|r| r.swept_value.is_none()) {
        vals.push(None);
    }
    vals.extend(sorted_unique(results.iter().filter_map(|r| r.swept_value)).into_iter().map(Some));
    vals
}

fn methods_in(results: &[CellResult]) -> Vec<Method> {
    let present: BTreeSet<usize> =
        results.iter().map(|r| Method::ALL.iter().position(|&m| m == r.method).unwrap_or(0)).collect();
    present.into_iter().map(|i| Method::ALL[i]).collect()
}

/// Mean and seed dispersion per (method, gamma, swept value).
pub fn summarize(results: &[CellResult]) -> Vec<Summary> {
    let mut out = Vec::new();
    let settings: Vec<Setting> = results.iter().map(|r| r.setting).fold(Vec::new(), |mut acc, s| {
        if !acc.contains(&s) {
            acc.push(s);
        }
        acc
    });
    for setting in settings {
        let rows: Vec<&CellResult> = results.iter().filter(|r| r.setting == setting).collect();
        let owned: Vec<CellResult> = rows.iter().map(|r| (*r).clone()).collect();
        for value in option_values(&owned) {
            for gamma in sorted_unique(owned.iter().map(|r| r.gamma)) {
                for method in methods_in(&owned) {
                    let xs: Vec<f64> = owned
                        .iter()
                        .filter(|r| r.method == method && r.gamma == gamma && r.swept_value == value)
                        .map(|r| r.elrar)
                        .collect();
                    if xs.is_empty() {
                        continue;
                    }
                    out.push(Summary {
                        setting,
                        method,
                        gamma,
                        swept_name: setting.swept_name().to_string(),
                        swept_value: value,
                        mean_elrar: xs.iter().sum::<f64>() / xs.len() as f64,
                        std_across_seeds: sample_std(&xs),
                        seeds: xs.len(),
                    });
                }
            }
        }
    }
    out
}

/// Text grid per swept value: one row per gamma, one column per method,
/// cells `mean±std` over seeds, and an `Avg.` row of the column means.
pub fn render_table(results: &[CellResult]) -> String {
    let summaries = summarize(results);
    let methods = methods_in(results);
    let mut text = String::from("ElrAR, mean±std across seeds\n");
    if results.is_empty() {
        text.push_str("gamma\n");
        return text;
    }
    for value in option_values(results) {
        let block: Vec<&Summary> = summaries.iter().filter(|s| s.swept_value == value).collect();
        if let Some(v) = value {
            let _ = writeln!(text, "\n{} = {v}", block[0].swept_name);
        }
        let _ = write!(text, "{:>6}", "gamma");
        for m in &methods {
            let _ = write!(text, " | {:>16}", m.name());
        }
        text.push('\n');
        let gammas = sorted_unique(block.iter().map(|s| s.gamma));
        let mut sums = vec![(0.0, 0usize); methods.len()];
        for gamma in &gammas {
            let _ = write!(text, "{gamma:>6}");
            for (k, m) in methods.iter().enumerate() {
                match block.iter().find(|s| s.method == *m && s.gamma == *gamma) {
                    Some(s) => {
                        sums[k].0 += s.mean_elrar;
                        sums[k].1 += 1;
                        let _ = write!(text, " | {:>16}", format!("{:.1}±{:.1}", s.mean_elrar, s.std_across_seeds));
                    }
                    None => {
                        let _ = write!(text, " | {:>16}", "-");
                    }
                }
            }
            text.push('\n');
        }
        let _ = write!(text, "{:>6}", "Avg.");
        for (sum, count) in sums {
            let cell = if count == 0 { "-".to_string() } else { format!("{:.1}", sum / count as f64) };
            let _ = write!(text, " | {cell:>16}");
        }
        text.push('\n');
    }
    text
}

/// Default output location for a sweep.
pub fn default_out_dir(setting: Setting) -> PathBuf {
    PathBuf::from(format!("sweep_{}", setting.name()))
}
