//! Long-run average reward of learned policies.

use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{config, shape, Result};
use crate::policy::sample_action;
use crate::rng::{stream, Purpose, UserStreams};
use crate::sim::{step, StateSampler, UserModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Rollout length.
    pub horizon: usize,
    /// Leading steps excluded from the average.
    pub burn_in: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { horizon: 5000, burn_in: 1000 }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon <= self.burn_in {
            return Err(config(format!(
                "evaluation horizon ({}) must exceed burn-in ({})",
                self.horizon, self.burn_in
            )));
        }
        Ok(())
    }
}

/// Rewards of one on-policy rollout of `horizon` steps from a fresh initial
/// state drawn from `N(0, sigma0)`.
pub fn rollout_rewards(
    user: &UserModel,
    theta: &[f64],
    sampler: &StateSampler,
    horizon: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut streams = UserStreams::evaluation(seed, user.user_id);
    let mut s = sampler.sample(&mut stream(seed, Purpose::EvalInitialState, user.user_id, 0));
    let mut rewards = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let a = sample_action(theta, &s, &mut streams.action);
        let (next, r) = step(user, &s, a, &mut streams.state_noise, &mut streams.reward_noise)?;
        rewards.push(r);
        s = next;
    }
    Ok(rewards)
}

/// Mean of `rewards[burn_in..]`, i.e. steps `burn_in + 1 ..= len` counted from one.
pub fn average_after_burn_in(rewards: &[f64], burn_in: usize) -> f64 {
    let tail = &rewards[burn_in.min(rewards.len())..];
    tail.iter().sum::<f64>() / tail.len() as f64
}

/// `eta` of one user under `pi_theta`.
pub fn long_run_avg_reward(
    user: &UserModel,
    theta: &[f64],
    sampler: &StateSampler,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<f64> {
    cfg.validate()?;
    let rewards = rollout_rewards(user, theta, sampler, cfg.horizon, seed)?;
    Ok(average_after_burn_in(&rewards, cfg.burn_in))
}

/// Population-level summary of one evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ElrarReport {
    /// Mean of `per_user`.
    pub elrar: f64,
    pub per_user: Vec<f64>,
}

impl ElrarReport {
    /// Sample standard deviation of the per-user values (0 for one user).
    pub fn std_across_users(&self) -> f64 {
        sample_std(&self.per_user)
    }
}

/// Evaluate column `n` of `theta` on user `n` and average over users.
pub fn elrar(
    population: &[UserModel],
    theta: &DMatrix<f64>,
    sampler: &StateSampler,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<ElrarReport> {
    if population.len() != theta.ncols() || population.is_empty() {
        return Err(shape(format!("{} users but {} policy columns", population.len(), theta.ncols())));
    }
    let per_user = population
        .iter()
        .enumerate()
        .map(|(n, user)| long_run_avg_reward(user, theta.column(n).as_slice(), sampler, cfg, seed))
        .collect::<Result<Vec<_>>>()?;
    let elrar = per_user.iter().sum::<f64>() / per_user.len() as f64;
    Ok(ElrarReport { elrar, per_user })
}

pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Append per-user values as `run_seed,user_id,eta` rows, writing the header
/// when `header` is set.
pub fn write_eta_csv<W: Write>(out: W, rows: &[(u64, usize, f64)], header: bool) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    if header {
        w.write_record(["run_seed", "user_id", "eta"])?;
    }
    for (seed, user, eta) in rows {
        w.write_record(&[seed.to_string(), user.to_string(), eta.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
