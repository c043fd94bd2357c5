use std::fs;
use std::io::{self, BufReader};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cohesion_rl::eval::{elrar, write_eta_csv, EvalConfig};
use cohesion_rl::graph::{build_graph, wst_feature};
use cohesion_rl::rng::UserStreams;
use cohesion_rl::runner::{read_columns, run_online, ExperimentConfig, Method};
use cohesion_rl::sim::{
    draw_warm_start, generate_population, read_jsonl, user_initial_state, Beta, StateSampler, UserModel, BETA_LEN,
};
use cohesion_rl::sweep::{default_out_dir, render_table, run_sweep, Setting, SweepSpec};
use cohesion_rl::{Error, Result};

#[derive(Parser)]
#[command(name = "cohesion-rl", version, about = "Online actor-critic learning with network cohesion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one online experiment and save it to a directory.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        method: Option<Method>,
        #[arg(long, default_value = "run_out")]
        out: PathBuf,
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Sweep methods, discount factors, a setting and seeds.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value = "single")]
        setting: Setting,
        /// Swept values; defaults depend on the setting.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        gamma: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        method: Vec<Method>,
        #[arg(long, default_value_t = cohesion_rl::sweep::DEFAULT_SEEDS)]
        seeds: usize,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Evaluate the policies saved by `run`.
    Eval {
        /// Directory written by `run`.
        #[arg(long)]
        run: PathBuf,
        /// Rollout seed; defaults to the run's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Per-user output; defaults to `<run>/eta.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Build the cohesion graph from warm-start data and print its edge list.
    GraphDump {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Edge-list file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Clone, Copy)]
struct EvalArgs {
    #[arg(long, default_value_t = 5000)]
    eval_horizon: usize,
    #[arg(long, default_value_t = 1000)]
    burn_in: usize,
}

impl From<EvalArgs> for EvalConfig {
    fn from(a: EvalArgs) -> Self {
        EvalConfig { horizon: a.eval_horizon, burn_in: a.burn_in }
    }
}

/// Overrides applied on top of the defaults or of `--config`.
#[derive(Args)]
struct ConfigArgs {
    /// JSON config, e.g. the `config.json` echoed by a previous run.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "T", alias = "horizon")]
    horizon: Option<usize>,
    #[arg(long = "T0", alias = "warm-start")]
    warm_start: Option<usize>,
    #[arg(long)]
    mu1: Option<f64>,
    #[arg(long)]
    mu2: Option<f64>,
    #[arg(long)]
    mu3: Option<f64>,
    #[arg(long)]
    zeta1: Option<f64>,
    #[arg(long)]
    zeta2: Option<f64>,
    #[arg(long)]
    zeta3: Option<f64>,
    #[arg(long)]
    zeta_a: Option<f64>,
    #[arg(long)]
    zeta_c: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    actor_max_iter: Option<usize>,
    #[arg(long)]
    actor_grad_tol: Option<f64>,
    #[arg(long)]
    users_per_group: Option<usize>,
    #[arg(long)]
    sigma_b: Option<f64>,
    #[arg(long)]
    sigma_s: Option<f64>,
    #[arg(long)]
    sigma_r: Option<f64>,
    /// Row-major initial-state covariance, comma separated.
    #[arg(long, value_delimiter = ',')]
    sigma0: Option<Vec<f64>>,
    /// Group vectors of 14 comma-separated values, groups separated by `;`.
    #[arg(long)]
    beta_basic: Option<String>,
}

impl ConfigArgs {
    fn build(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => serde_json::from_str(&fs::read_to_string(path)?)?,
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => { $(if let Some(v) = self.$field { cfg.$field = v; })* };
        }
        set!(horizon, warm_start, mu1, zeta_a, zeta_c, k, seed, actor_max_iter, actor_grad_tol);
        macro_rules! set_opt {
            ($($field:ident),*) => { $(if self.$field.is_some() { cfg.$field = self.$field; })* };
        }
        set_opt!(mu2, mu3, zeta1, zeta2, zeta3);
        let pop = &mut cfg.population;
        if let Some(v) = self.users_per_group {
            pop.users_per_group = v;
        }
        if let Some(v) = self.sigma_b {
            pop.sigma_b = v;
        }
        if let Some(v) = self.sigma_s {
            pop.sigma_s = v;
        }
        if let Some(v) = self.sigma_r {
            pop.sigma_r = v;
        }
        if let Some(flat) = &self.sigma0 {
            let p = (flat.len() as f64).sqrt().round() as usize;
            if p * p != flat.len() {
                return Err(Error::Config(format!("sigma0 needs a square number of entries, got {}", flat.len())));
            }
            pop.sigma0 = flat.chunks(p).map(<[f64]>::to_vec).collect();
        }
        if let Some(text) = &self.beta_basic {
            pop.beta_basic = text.split(';').map(parse_beta).collect::<Result<_>>()?;
        }
        Ok(cfg)
    }
}

fn parse_beta(group: &str) -> Result<Beta> {
    let vals = group
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| Error::Config(format!("bad beta entry {v:?}: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    vals.try_into()
        .map_err(|v: Vec<f64>| Error::Config(format!("each beta group needs {BETA_LEN} values, got {}", v.len())))
}

fn write_eta_file(path: &Path, rows: &[(u64, usize, f64)]) -> Result<()> {
    write_eta_csv(fs::File::create(path)?, rows, true)
}

fn evaluate_dir(dir: &Path, seed: Option<u64>, eval: &EvalConfig, out: &Path) -> Result<f64> {
    let cfg: ExperimentConfig = serde_json::from_str(&fs::read_to_string(dir.join("config.json"))?)?;
    let population: Vec<UserModel> = read_jsonl(BufReader::new(fs::File::open(dir.join("population.jsonl"))?))?;
    let theta = read_columns(&dir.join("theta.csv"))?;
    let seed = seed.unwrap_or(cfg.seed);
    let sampler = StateSampler::new(&cfg.population.sigma0_matrix()?)?;
    let report = elrar(&population, &theta, &sampler, eval, seed)?;
    let rows: Vec<_> = report.per_user.iter().enumerate().map(|(n, &e)| (seed, n, e)).collect();
    write_eta_file(out, &rows)?;
    Ok(report.elrar)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { cfg, gamma, method, out, eval } => {
            let mut cfg = cfg.build()?;
            if let Some(g) = gamma {
                cfg.gamma = g;
            }
            if let Some(m) = method {
                cfg.method = m;
            }
            let result = run_online(&cfg)?;
            result.save(&out)?;
            let value = evaluate_dir(&out, None, &eval.into(), &out.join("eta.csv"))?;
            println!(
                "{} gamma={} T={} T0={} seed={}: ElrAR {value:.1} ({:.2}s, saved to {})",
                cfg.method,
                cfg.gamma,
                cfg.horizon,
                cfg.warm_start,
                cfg.seed,
                result.timing.wall_time_s,
                out.display()
            );
            Ok(true)
        }
        Command::Sweep { cfg, setting, values, gamma, method, seeds, workers, out, eval } => {
            let base = cfg.build()?;
            let mut spec = SweepSpec {
                setting,
                values,
                seeds,
                first_seed: base.seed,
                base,
                eval: eval.into(),
                workers,
                ..SweepSpec::default()
            };
            if !gamma.is_empty() {
                spec.gammas = gamma;
            }
            if !method.is_empty() {
                spec.methods = method;
            }
            let out = out.unwrap_or_else(|| default_out_dir(setting));
            let outcome = run_sweep(&spec, Some(&out))?;
            print!("{}", render_table(&outcome.results));
            for e in &outcome.errors {
                eprintln!(
                    "cell {} gamma={} value={:?} seed={} failed: {}",
                    e.method, e.gamma, e.swept_value, e.seed, e.error
                );
            }
            eprintln!(
                "{} cells, {} failed; output in {}",
                outcome.results.len() + outcome.errors.len(),
                outcome.errors.len(),
                out.display()
            );
            Ok(outcome.errors.is_empty())
        }
        Command::Eval { run, seed, out, eval } => {
            let out = out.unwrap_or_else(|| run.join("eta.csv"));
            let value = evaluate_dir(&run, seed, &eval.into(), &out)?;
            println!("ElrAR {value:.1}; per-user values in {}", out.display());
            Ok(true)
        }
        Command::GraphDump { cfg, out } => {
            let cfg = cfg.build()?;
            let population = generate_population(&cfg.population, cfg.seed)?;
            let sampler = StateSampler::new(&cfg.population.sigma0_matrix()?)?;
            let features = population
                .iter()
                .map(|u| {
                    let mut streams = UserStreams::training(cfg.seed, u.user_id);
                    let s0 = user_initial_state(&sampler, cfg.seed, u.user_id);
                    wst_feature(&draw_warm_start(u, s0, cfg.warm_start, &mut streams)?, cfg.warm_start)
                })
                .collect::<Result<Vec<_>>>()?;
            let graph = build_graph(&features, cfg.k)?;
            match out {
                Some(path) => graph.write_edge_list(fs::File::create(path)?)?,
                None => graph.write_edge_list(io::stdout().lock())?,
            }
            eprintln!("{} edges, {} components", graph.edges().len(), graph.components().len());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
