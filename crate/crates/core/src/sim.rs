//! Generative mobile-health MDP.
//!
//! Each simulated user is a linear-Gaussian system driven by a 14-entry
//! coefficient vector. Users are synthesized in groups around hand-designed
//! basic coefficient vectors, so that users in one group behave alike but
//! never identically.
//!
//! State transition for action `a` in `{0, 1}`:
//!
//! ```text
//! s1' = b1 s1 + e1
//! s2' = b2 s2 + b3 a + e2
//! s3' = b4 s3 + b5 s3 a + b6 a + e3
//! sj' = b7 sj + ej                      (j >= 4)
//! r   = b14 [b8 + a (b9 + b10 s1' + b11 s2') + b12 s1' - b13 s3' + rho]
//! ```
//!
//! with `e ~ N(0, sigma_s^2)` per component and `rho ~ N(0, sigma_r^2)`.
//! The reward reads the post-transition state. The `-b13 s3'` term models
//! treatment fatigue.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::rng::{self, Purpose, UserStreams};

pub const BETA_LEN: usize = 14;

/// Default state dimension.
pub const STATE_DIM: usize = 3;

pub type Beta = [f64; BETA_LEN];

/// The three basic coefficient vectors used for the HeartSteps-style population.
pub const BETA_BASIC: [Beta; 3] = [
    [0.40, 0.25, 0.35, 0.65, 0.10, 0.50, 0.22, 2.00, 0.15, 0.20, 0.32, 0.10, 0.45, 800.0],
    [0.35, 0.30, 0.30, 0.60, 0.05, 0.65, 0.28, 2.60, 0.35, 0.45, 0.45, 0.15, 0.50, 650.0],
    [0.20, 0.50, 0.20, 0.62, 0.06, 0.52, 0.27, 3.00, 0.15, 0.15, 0.50, 0.16, 0.70, 450.0],
];

pub type State = Vec<f64>;

/// Binary intervention decision: 0 = no intervention, 1 = intervene.
pub type Action = usize;

/// One simulated individual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserModel {
    pub user_id: usize,
    pub group: usize,
    pub beta: Beta,
    pub sigma_s: f64,
    pub sigma_r: f64,
}

impl UserModel {
    pub fn new(user_id: usize, group: usize, beta: Beta, sigma_s: f64, sigma_r: f64) -> Result<Self> {
        let user = Self { user_id, group, beta, sigma_s, sigma_r };
        user.validate()?;
        Ok(user)
    }

    pub fn validate(&self) -> Result<()> {
        if self.beta.iter().any(|b| !b.is_finite()) {
            return Err(config(format!("user {}: non-finite beta", self.user_id)));
        }
        // Zero noise is allowed; it gives the deterministic system.
        if !(self.sigma_s >= 0.0 && self.sigma_s.is_finite()) {
            return Err(config(format!("user {}: invalid sigma_s {}", self.user_id, self.sigma_s)));
        }
        if !(self.sigma_r >= 0.0 && self.sigma_r.is_finite()) {
            return Err(config(format!("user {}: invalid sigma_r {}", self.user_id, self.sigma_r)));
        }
        Ok(())
    }
}

/// One observed transition `(s, a, r, s')`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tuple {
    pub s: State,
    pub a: Action,
    pub r: f64,
    pub s_next: State,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub user_id: usize,
    pub tuples: Vec<Tuple>,
}

impl Trajectory {
    pub fn new(user_id: usize) -> Self {
        Self { user_id, tuples: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    /// State the user is currently in, i.e. `s'` of the last tuple.
    pub fn last_state(&self) -> Option<&State> {
        self.tuples.last().map(|t| &t.s_next)
    }

    /// True when every tuple starts where the previous one ended.
    pub fn is_chained(&self) -> bool {
        self.tuples.windows(2).all(|w| w[0].s_next == w[1].s)
    }
}

/// Recipe for a grouped population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub beta_basic: Vec<Beta>,
    pub users_per_group: usize,
    /// Standard deviation of the per-coordinate perturbation of `beta`.
    pub sigma_b: f64,
    pub sigma_s: f64,
    pub sigma_r: f64,
    /// Initial-state covariance, row-major `p x p`.
    pub sigma0: Vec<Vec<f64>>,
}

impl Default for PopulationSpec {
    fn default() -> Self {
        Self {
            beta_basic: BETA_BASIC.to_vec(),
            users_per_group: 15,
            sigma_b: 0.05,
            sigma_s: 0.5,
            sigma_r: 1.0,
            sigma0: identity_rows(STATE_DIM),
        }
    }
}

pub(crate) fn identity_rows(p: usize) -> Vec<Vec<f64>> {
    (0..p).map(|i| (0..p).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

impl PopulationSpec {
    pub fn num_users(&self) -> usize {
        self.beta_basic.len() * self.users_per_group
    }

    pub fn state_dim(&self) -> usize {
        self.sigma0.len()
    }

    pub fn sigma0_matrix(&self) -> Result<DMatrix<f64>> {
        let p = self.sigma0.len();
        if self.sigma0.iter().any(|row| row.len() != p) {
            return Err(config("sigma0 must be square"));
        }
        Ok(DMatrix::from_fn(p, p, |i, j| self.sigma0[i][j]))
    }

    pub fn validate(&self) -> Result<()> {
        if self.beta_basic.is_empty() {
            return Err(config("at least one group is required"));
        }
        if self.users_per_group == 0 {
            return Err(config("users_per_group must be at least 1"));
        }
        if self.beta_basic.iter().flatten().any(|b| !b.is_finite()) {
            return Err(config("beta_basic entries must be finite"));
        }
        for (name, v) in [("sigma_b", self.sigma_b), ("sigma_s", self.sigma_s), ("sigma_r", self.sigma_r)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(config(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        if self.state_dim() < STATE_DIM {
            return Err(config(format!("state dimension must be at least {STATE_DIM}")));
        }
        StateSampler::new(&self.sigma0_matrix()?)?;
        Ok(())
    }
}

/// Build `V * N_v` users; user `i` of group `v` gets `beta_basic[v] + delta`,
/// `delta ~ N(0, sigma_b^2 I)`. Users are numbered group-major.
pub fn generate_population(spec: &PopulationSpec, seed: u64) -> Result<Vec<UserModel>> {
    spec.validate()?;
    let mut users = Vec::with_capacity(spec.num_users());
    for (group, basic) in spec.beta_basic.iter().enumerate() {
        for k in 0..spec.users_per_group {
            let user_id = group * spec.users_per_group + k;
            let mut rng = rng::stream(seed, Purpose::BetaPerturbation, user_id, 0);
            let mut beta = *basic;
            for b in beta.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *b += spec.sigma_b * z;
            }
            users.push(UserModel::new(user_id, group, beta, spec.sigma_s, spec.sigma_r)?);
        }
    }
    Ok(users)
}

/// Draws from `N(0, Sigma0)` for a positive semi-definite `Sigma0`.
///
/// Uses a symmetric square root so degenerate covariances (including the
/// zero matrix) are handled.
#[derive(Debug, Clone)]
pub struct StateSampler {
    root: DMatrix<f64>,
}

impl StateSampler {
    pub fn new(sigma0: &DMatrix<f64>) -> Result<Self> {
        let p = sigma0.nrows();
        if p == 0 || sigma0.ncols() != p {
            return Err(config("sigma0 must be a nonempty square matrix"));
        }
        if sigma0.iter().any(|v| !v.is_finite()) {
            return Err(config("sigma0 has non-finite entries"));
        }
        let scale = sigma0.amax().max(1.0);
        if (sigma0 - sigma0.transpose()).amax() > 1e-12 * scale {
            return Err(config("sigma0 must be symmetric"));
        }
        let eig = SymmetricEigen::new(sigma0.clone());
        if eig.eigenvalues.min() < -1e-10 * scale {
            return Err(config(format!(
                "sigma0 is not positive semi-definite (smallest eigenvalue {})",
                eig.eigenvalues.min()
            )));
        }
        let sqrt_vals = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
        let root = &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals);
        Ok(Self { root })
    }

    pub fn dim(&self) -> usize {
        self.root.nrows()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> State {
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        (&self.root * z).iter().copied().collect()
    }
}

/// Sample an initial state from `N(0, sigma0)`.
pub fn initial_state<R: Rng + ?Sized>(sigma0: &DMatrix<f64>, rng: &mut R) -> Result<State> {
    Ok(StateSampler::new(sigma0)?.sample(rng))
}

/// Advance one user by one step, returning `(s', r)`.
///
/// Noise is always drawn, even when the scales are zero, so that stream
/// positions do not depend on the noise settings.
pub fn step<R1: Rng + ?Sized, R2: Rng + ?Sized>(
    user: &UserModel,
    s: &[f64],
    a: Action,
    state_noise: &mut R1,
    reward_noise: &mut R2,
) -> Result<(State, f64)> {
    if a > 1 {
        return Err(Error::Domain(format!("action {a} is not in {{0, 1}}")));
    }
    if s.len() < STATE_DIM {
        return Err(Error::Domain(format!("state has {} components, need at least {STATE_DIM}", s.len())));
    }
    let b = &user.beta;
    let af = a as f64;
    let mut next = Vec::with_capacity(s.len());
    let mut noise = || user.sigma_s * state_noise.sample::<f64, _>(StandardNormal);
    next.push(b[0] * s[0] + noise());
    next.push(b[1] * s[1] + b[2] * af + noise());
    next.push(b[3] * s[2] + b[4] * s[2] * af + b[5] * af + noise());
    for &sj in &s[3..] {
        next.push(b[6] * sj + noise());
    }
    let rho = user.sigma_r * reward_noise.sample::<f64, _>(StandardNormal);
    let r = b[13] * (b[7] + af * (b[8] + b[9] * next[0] + b[10] * next[1]) + b[11] * next[0] - b[12] * next[2] + rho);
    Ok((next, r))
}

/// Step and package the result as a tuple.
pub fn transition(user: &UserModel, s: State, a: Action, streams: &mut UserStreams) -> Result<Tuple> {
    let (s_next, r) = step(user, &s, a, &mut streams.state_noise, &mut streams.reward_noise)?;
    Ok(Tuple { s, a, r, s_next })
}

/// Coin-flip action of the micro-randomized warm-start policy.
pub fn warm_start_action<R: Rng + ?Sized>(rng: &mut R) -> Action {
    usize::from(rng.random::<f64>() < 0.5)
}

/// Collect `t0` tuples under the state-independent `P(a = 1) = 0.5` policy,
/// starting from `s0`.
pub fn draw_warm_start(user: &UserModel, s0: State, t0: usize, streams: &mut UserStreams) -> Result<Trajectory> {
    if t0 < 1 {
        return Err(config("warm-start length must be at least 1"));
    }
    let mut traj = Trajectory::new(user.user_id);
    let mut s = s0;
    for _ in 0..t0 {
        let a = warm_start_action(&mut streams.action);
        let tuple = transition(user, s, a, streams)?;
        s = tuple.s_next.clone();
        traj.tuples.push(tuple);
    }
    Ok(traj)
}

/// Initial state of `user` under `master`, drawn from its own stream.
pub fn user_initial_state(sampler: &StateSampler, master: u64, user: usize) -> State {
    sampler.sample(&mut rng::stream(master, Purpose::InitialState, user, 0))
}

/// Write one JSON object per line.
pub fn write_jsonl<T: Serialize, W: Write>(mut out: W, items: &[T]) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Read one JSON object per nonblank line.
pub fn read_jsonl<T: for<'de> Deserialize<'de>, R: BufRead>(input: R) -> Result<Vec<T>> {
    let mut items = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        items.push(serde_json::from_str(&line)?);
    }
    Ok(items)
}
