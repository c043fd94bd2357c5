//! The online actor-critic loop shared by all three methods.
//!
//! Time-major: every user takes step `t` before any parameter is updated,
//! then one joint critic solve and one joint actor update follow.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::actor::{actor_update, ActorParams, ActorState};
use crate::critic::{
    assemble_block_operators, critic_update_alg1, critic_update_alg2, lstdq_separate, reward_matrix, CriticParams,
    UserDesign,
};
use crate::error::{config, Error, Result};
use crate::graph::{build_graph, wst_feature, CohesionGraph};
use crate::policy::{policy_dim, sample_action, value_dim};
use crate::rng::UserStreams;
use crate::sim::{
    draw_warm_start, generate_population, transition, user_initial_state, write_jsonl, PopulationSpec, StateSampler,
    Trajectory, UserModel,
};

/// Stand-in for a ridge weight that "tends to zero": small enough to leave
/// the estimates unchanged in practice, large enough to keep solves regular.
pub const ZETA_FLOOR: f64 = 1e-6;

/// Below this value of `mu1` the cohesion methods switch on the ridge weights.
pub const SMALL_COHESION: f64 = 1e-4;

/// Ridge weight used by the separate learner and by weakly coupled cohesion runs.
pub const DEFAULT_ZETA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Separate,
    Cohesion1,
    Cohesion2,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Separate, Method::Cohesion1, Method::Cohesion2];

    pub fn name(self) -> &'static str {
        match self {
            Method::Separate => "separate",
            Method::Cohesion1 => "cohesion1",
            Method::Cohesion2 => "cohesion2",
        }
    }

    pub fn uses_graph(self) -> bool {
        self != Method::Separate
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "separate" => Ok(Method::Separate),
            "cohesion1" => Ok(Method::Cohesion1),
            "cohesion2" => Ok(Method::Cohesion2),
            other => Err(config(format!("unknown method {other:?}; expected separate, cohesion1 or cohesion2"))),
        }
    }
}

/// Everything that determines a run.
///
/// `mu2`, `mu3` and the cohesion ridge weights may be left unset; they then
/// follow `mu1`: `mu3 = mu1`, `mu2 = mu1 / 100`, and `zeta1 = zeta2 = zeta3`
/// equal [`DEFAULT_ZETA`] when `mu1 <= 1e-4` and [`ZETA_FLOOR`] otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: Method,
    /// Total trajectory length `T`.
    pub horizon: usize,
    /// Warm-start length `T0`.
    pub warm_start: usize,
    pub gamma: f64,
    pub mu1: f64,
    pub mu2: Option<f64>,
    pub mu3: Option<f64>,
    pub zeta1: Option<f64>,
    pub zeta2: Option<f64>,
    pub zeta3: Option<f64>,
    /// Actor ridge weight of the separate learner.
    pub zeta_a: f64,
    /// Critic ridge weight of the separate learner.
    pub zeta_c: f64,
    /// Neighbors per user in the cohesion graph.
    pub k: usize,
    pub population: PopulationSpec,
    pub seed: u64,
    pub actor_max_iter: usize,
    pub actor_grad_tol: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            method: Method::Cohesion2,
            horizon: 80,
            warm_start: 10,
            gamma: 0.8,
            mu1: 0.1,
            mu2: None,
            mu3: None,
            zeta1: None,
            zeta2: None,
            zeta3: None,
            zeta_a: DEFAULT_ZETA,
            zeta_c: DEFAULT_ZETA,
            k: 8,
            population: PopulationSpec::default(),
            seed: 0,
            actor_max_iter: 200,
            actor_grad_tol: 1e-6,
        }
    }
}

impl ExperimentConfig {
    pub fn mu2(&self) -> f64 {
        self.mu2.unwrap_or(0.01 * self.mu1)
    }

    pub fn mu3(&self) -> f64 {
        self.mu3.unwrap_or(self.mu1)
    }

    fn default_cohesion_zeta(&self) -> f64 {
        if self.mu1 <= SMALL_COHESION {
            DEFAULT_ZETA
        } else {
            ZETA_FLOOR
        }
    }

    pub fn zeta1(&self) -> f64 {
        self.zeta1.unwrap_or_else(|| self.default_cohesion_zeta())
    }

    pub fn zeta2(&self) -> f64 {
        self.zeta2.unwrap_or_else(|| self.default_cohesion_zeta())
    }

    pub fn zeta3(&self) -> f64 {
        self.zeta3.unwrap_or_else(|| self.default_cohesion_zeta())
    }

    /// Copy with every derived weight written out explicitly.
    pub fn resolved(&self) -> Self {
        Self {
            mu2: Some(self.mu2()),
            mu3: Some(self.mu3()),
            zeta1: Some(self.zeta1()),
            zeta2: Some(self.zeta2()),
            zeta3: Some(self.zeta3()),
            ..self.clone()
        }
    }

    pub fn num_users(&self) -> usize {
        self.population.num_users()
    }

    pub fn critic_params(&self) -> CriticParams {
        CriticParams { gamma: self.gamma, mu1: self.mu1, zeta1: self.zeta1(), mu2: self.mu2(), zeta2: self.zeta2() }
    }

    pub fn actor_params(&self) -> ActorParams {
        let (mu3, zeta3) = match self.method {
            Method::Separate => (0.0, self.zeta_a),
            _ => (self.mu3(), self.zeta3()),
        };
        ActorParams { mu3, zeta3, max_iter: self.actor_max_iter, grad_tol: self.actor_grad_tol }
    }

    pub fn validate(&self) -> Result<()> {
        if self.warm_start < 1 {
            return Err(config("warm_start must be at least 1"));
        }
        if self.horizon <= self.warm_start {
            return Err(config(format!("horizon ({}) must exceed warm_start ({})", self.horizon, self.warm_start)));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(config(format!("gamma must lie in [0, 1), got {}", self.gamma)));
        }
        for (name, v) in [
            ("mu1", self.mu1),
            ("mu2", self.mu2()),
            ("mu3", self.mu3()),
            ("zeta1", self.zeta1()),
            ("zeta2", self.zeta2()),
            ("zeta3", self.zeta3()),
            ("zeta_a", self.zeta_a),
            ("zeta_c", self.zeta_c),
            ("actor_grad_tol", self.actor_grad_tol),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(config(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        self.population.validate()?;
        if self.method.uses_graph() && self.k >= self.num_users() {
            return Err(config(format!("k = {} needs more than {} users", self.k, self.k)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall_time_s: f64,
    pub critic_s: f64,
    pub actor_s: f64,
    pub updates: usize,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    /// The resolved configuration.
    pub config: ExperimentConfig,
    pub population: Vec<UserModel>,
    pub trajectories: Vec<Trajectory>,
    /// `None` for the separate learner.
    pub graph: Option<CohesionGraph>,
    /// `m x N` policy parameters.
    pub theta: DMatrix<f64>,
    /// `u x N` critic weights.
    pub w: DMatrix<f64>,
    pub timing: Timing,
}

impl RunResult {
    /// Write `config.json`, `population.jsonl`, `trajectories.jsonl`,
    /// `theta.csv`, `w.csv`, `timing.json` and, for cohesion runs, `graph.txt`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.json"), serde_json::to_string_pretty(&self.config)?)?;
        write_jsonl(fs::File::create(dir.join("population.jsonl"))?, &self.population)?;
        write_jsonl(fs::File::create(dir.join("trajectories.jsonl"))?, &self.trajectories)?;
        write_columns(&dir.join("theta.csv"), "theta", &self.theta)?;
        write_columns(&dir.join("w.csv"), "w", &self.w)?;
        fs::write(dir.join("timing.json"), serde_json::to_string_pretty(&self.timing)?)?;
        if let Some(graph) = &self.graph {
            graph.write_edge_list(fs::File::create(dir.join("graph.txt"))?)?;
        }
        Ok(())
    }
}

/// One row per user: `user_id, {prefix}_0, ...`.
pub fn write_columns(path: &Path, prefix: &str, m: &DMatrix<f64>) -> Result<()> {
    let mut out = csv::Writer::from_path(path)?;
    let mut header = vec!["user_id".to_string()];
    header.extend((0..m.nrows()).map(|j| format!("{prefix}_{j}")));
    out.write_record(&header)?;
    for n in 0..m.ncols() {
        let mut row = vec![n.to_string()];
        row.extend(m.column(n).iter().map(|v| v.to_string()));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Read a file written by [`write_columns`] back into a parameter matrix.
pub fn read_columns(path: &Path) -> Result<DMatrix<f64>> {
    let mut input = csv::Reader::from_path(path)?;
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for record in input.records() {
        let record = record?;
        let values = record
            .iter()
            .skip(1)
            .map(|v| v.trim().parse::<f64>().map_err(|e| config(format!("{}: bad number {v:?}: {e}", path.display()))))
            .collect::<Result<Vec<_>>>()?;
        if cols.first().is_some_and(|c| c.len() != values.len()) {
            return Err(config(format!("{}: ragged rows", path.display())));
        }
        cols.push(values);
    }
    let rows = cols.first().map_or(0, Vec::len);
    Ok(DMatrix::from_fn(rows, cols.len(), |i, n| cols[n][i]))
}

fn critic_step(
    method: Method,
    cfg: &ExperimentConfig,
    designs: &[UserDesign],
    laplacian: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    match method {
        Method::Separate => {
            let u = designs.first().map_or(0, UserDesign::feature_dim);
            let mut w = DMatrix::zeros(u, designs.len());
            for (n, d) in designs.iter().enumerate() {
                w.set_column(n, &lstdq_separate(&d.x, &d.y, &d.r, cfg.gamma, cfg.zeta_c)?);
            }
            Ok(w)
        }
        Method::Cohesion1 => {
            let ops = assemble_block_operators(designs)?;
            critic_update_alg1(&ops, laplacian, &reward_matrix(designs)?, &cfg.critic_params())
        }
        Method::Cohesion2 => {
            let ops = assemble_block_operators(designs)?;
            critic_update_alg2(&ops, laplacian, &reward_matrix(designs)?, cfg.gamma, cfg.mu1, cfg.zeta1())
        }
    }
}

/// Run the full online protocol.
///
/// Steps `1..=T0` use coin-flip actions. The graph is then built from the
/// warm-start data (cohesion methods only). Each later step `t` has every
/// user act under its current policy, after which the critic and the actor
/// are each updated once, giving `T - T0` updates in total. Policies start at
/// `Theta = 0`.
pub fn run_online(cfg: &ExperimentConfig) -> Result<RunResult> {
    cfg.validate()?;
    let cfg = cfg.resolved();
    let start = Instant::now();
    let population = generate_population(&cfg.population, cfg.seed)?;
    let n = population.len();
    let p = cfg.population.state_dim();
    let sampler = StateSampler::new(&cfg.population.sigma0_matrix()?)?;

    let mut streams: Vec<UserStreams> = (0..n).map(|i| UserStreams::training(cfg.seed, i)).collect();
    let mut trajectories = population
        .iter()
        .zip(streams.iter_mut())
        .map(|(user, st)| {
            draw_warm_start(user, user_initial_state(&sampler, cfg.seed, user.user_id), cfg.warm_start, st)
        })
        .collect::<Result<Vec<_>>>()?;

    let graph = if cfg.method.uses_graph() {
        let features = trajectories.iter().map(|t| wst_feature(t, cfg.warm_start)).collect::<Result<Vec<_>>>()?;
        Some(build_graph(&features, cfg.k)?)
    } else {
        None
    };
    let laplacian = graph.as_ref().map_or_else(|| DMatrix::zeros(n, n), |g| g.laplacian().clone());

    let mut actor = ActorState { theta: DMatrix::zeros(policy_dim(p), n), params: cfg.actor_params() };
    let mut w = DMatrix::zeros(value_dim(p), n);
    let mut timing = Timing::default();

    for t in cfg.warm_start + 1..=cfg.horizon {
        let at_step = |e: Error| Error::Step { step: t, source: Box::new(e) };
        for (k, user) in population.iter().enumerate() {
            let traj = &mut trajectories[k];
            let s = traj.last_state().cloned().expect("warm start is nonempty");
            let a = sample_action(actor.theta.column(k).as_slice(), &s, &mut streams[k].action);
            let tuple = transition(user, s, a, &mut streams[k]).map_err(at_step)?;
            traj.tuples.push(tuple);
        }

        let clock = Instant::now();
        let designs = trajectories
            .iter()
            .enumerate()
            .map(|(k, traj)| UserDesign::from_trajectory(traj, actor.theta.column(k).as_slice()))
            .collect::<Result<Vec<_>>>()
            .map_err(at_step)?;
        w = critic_step(cfg.method, &cfg, &designs, &laplacian).map_err(at_step)?;
        timing.critic_s += clock.elapsed().as_secs_f64();

        let clock = Instant::now();
        actor.theta = actor_update(&actor, &w, &trajectories, &laplacian).map_err(at_step)?.theta;
        timing.actor_s += clock.elapsed().as_secs_f64();
        timing.updates += 1;
    }
    timing.wall_time_s = start.elapsed().as_secs_f64();

    Ok(RunResult { config: cfg, population, trajectories, graph, theta: actor.theta, w, timing })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(method: Method) -> ExperimentConfig {
        ExperimentConfig {
            method,
            horizon: 16,
            warm_start: 6,
            k: 2,
            population: PopulationSpec { users_per_group: 3, ..PopulationSpec::default() },
            seed: 11,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn derived_weights_follow_mu1() {
        let cfg = ExperimentConfig::default();
        assert_eq!((cfg.mu2(), cfg.mu3()), (0.01 * 0.1, 0.1));
        assert_eq!(cfg.zeta1(), ZETA_FLOOR);
        let weak = ExperimentConfig { mu1: 1e-4, ..cfg.clone() };
        assert_eq!((weak.zeta1(), weak.zeta2(), weak.zeta3()), (0.1, 0.1, 0.1));
        let pinned = ExperimentConfig { zeta2: Some(0.5), mu3: Some(2.0), ..cfg };
        assert_eq!((pinned.zeta2(), pinned.mu3()), (0.5, 2.0));
        let r = pinned.resolved();
        assert_eq!(r.resolved(), r);
        assert_eq!(r.zeta1, Some(ZETA_FLOOR));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let base = small(Method::Cohesion1);
        for bad in [
            ExperimentConfig { warm_start: 0, ..base.clone() },
            ExperimentConfig { horizon: 6, ..base.clone() },
            ExperimentConfig { gamma: 1.0, ..base.clone() },
            ExperimentConfig { mu1: -1.0, ..base.clone() },
            ExperimentConfig { k: 9, ..base.clone() },
        ] {
            assert!(matches!(run_online(&bad), Err(Error::Config(_))), "{bad:?}");
        }
        // The separate learner never builds a graph, so k is irrelevant.
        assert!(ExperimentConfig { k: 100, method: Method::Separate, ..base }.validate().is_ok());
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.name()));
        }
        assert!("cohesion3".parse::<Method>().is_err());
    }

    #[test]
    fn runs_are_deterministic_and_chained() {
        for method in Method::ALL {
            let cfg = small(method);
            let a = run_online(&cfg).unwrap();
            let b = run_online(&cfg).unwrap();
            assert_eq!(a.theta, b.theta);
            assert_eq!(a.w, b.w);
            assert_eq!(a.trajectories, b.trajectories);
            assert_eq!(a.graph, b.graph);
            assert_eq!(a.graph.is_some(), method.uses_graph());
            assert_eq!(a.timing.updates, 10);
            for traj in &a.trajectories {
                assert_eq!(traj.len(), 16);
                assert!(traj.is_chained());
            }
            assert!(a.theta.iter().chain(a.w.iter()).all(|v| v.is_finite()));
        }
    }

    #[test]
    fn one_update_at_the_boundary() {
        let cfg = ExperimentConfig { horizon: 7, ..small(Method::Cohesion1) };
        let res = run_online(&cfg).unwrap();
        assert_eq!(res.timing.updates, 1);
        assert!(res.trajectories.iter().all(|t| t.len() == 7));
        assert!(res.theta.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn single_user_separate_run() {
        let cfg = ExperimentConfig {
            population: PopulationSpec {
                beta_basic: vec![crate::sim::BETA_BASIC[0]],
                users_per_group: 1,
                ..Default::default()
            },
            ..small(Method::Separate)
        };
        let res = run_online(&cfg).unwrap();
        assert!(res.graph.is_none());
        assert_eq!(res.theta.shape(), (4, 1));
    }

    #[test]
    fn warm_start_is_shared_across_methods() {
        let runs: Vec<_> = Method::ALL.iter().map(|&m| run_online(&small(m)).unwrap()).collect();
        for r in &runs[1..] {
            for (a, b) in r.trajectories.iter().zip(&runs[0].trajectories) {
                assert_eq!(a.tuples[..6], b.tuples[..6]);
            }
        }
        assert_eq!(runs[1].graph, runs[2].graph);
    }

    #[test]
    fn save_and_reload() {
        let dir = tempfile::tempdir().unwrap();
        let res = run_online(&small(Method::Cohesion2)).unwrap();
        res.save(dir.path()).unwrap();
        let echoed: ExperimentConfig =
            serde_json::from_str(&fs::read_to_string(dir.path().join("config.json")).unwrap()).unwrap();
        assert_eq!(echoed, res.config);
        assert_eq!(read_columns(&dir.path().join("theta.csv")).unwrap(), res.theta);
        assert_eq!(read_columns(&dir.path().join("w.csv")).unwrap(), res.w);
        let graph = CohesionGraph::read_edge_list(std::io::BufReader::new(
            fs::File::open(dir.path().join("graph.txt")).unwrap(),
        ))
        .unwrap();
        assert_eq!(Some(graph), res.graph);
        let rerun = run_online(&echoed).unwrap();
        assert_eq!(rerun.theta, res.theta);
    }
}
