//! Properties of the online protocol that only show up across whole runs.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cohesion_rl::{run_online, ExperimentConfig, Method};

/// Absolute difference in mean state between treated and untreated steps,
/// summed over state coordinates.
fn imbalance(states: &[Vec<f64>], actions: &[usize]) -> f64 {
    let dim = states[0].len();
    let mut sums = [vec![0.0; dim], vec![0.0; dim]];
    let mut counts = [0usize; 2];
    for (s, &a) in states.iter().zip(actions) {
        counts[a] += 1;
        for (acc, v) in sums[a].iter_mut().zip(s) {
            *acc += v;
        }
    }
    (0..dim).map(|j| (sums[1][j] / counts[1] as f64 - sums[0][j] / counts[0] as f64).abs()).sum()
}

#[test]
fn warm_start_actions_ignore_the_state() {
    let cfg =
        ExperimentConfig { method: Method::Separate, horizon: 40, warm_start: 20, seed: 11, ..Default::default() };
    let run = run_online(&cfg).unwrap();
    let (mut states, mut actions) = (Vec::new(), Vec::new());
    for traj in &run.trajectories {
        for tp in &traj.tuples[..cfg.warm_start] {
            states.push(tp.s.clone());
            actions.push(tp.a);
        }
    }
    let n = actions.len() as f64;
    let treated = actions.iter().sum::<usize>() as f64;
    assert!((treated - n / 2.0).abs() < 3.0 * (n / 4.0).sqrt(), "{treated} of {n} treated");

    let observed = imbalance(&states, &actions);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let draws = 2000;
    let mut shuffled = actions.clone();
    let extreme = (0..draws)
        .filter(|_| {
            shuffled.shuffle(&mut rng);
            imbalance(&states, &shuffled) >= observed
        })
        .count();
    let p = (extreme + 1) as f64 / (draws + 1) as f64;
    assert!(p > 0.01, "permutation p-value {p}");
}

#[test]
fn zero_cohesion_reduces_to_separate_learning() {
    let base = ExperimentConfig {
        horizon: 30,
        warm_start: 5,
        mu1: 0.0,
        mu2: Some(0.0),
        mu3: Some(0.0),
        seed: 21,
        ..Default::default()
    };
    let sep = run_online(&ExperimentConfig { method: Method::Separate, ..base.clone() }).unwrap();
    let coh = run_online(&ExperimentConfig { method: Method::Cohesion2, ..base }).unwrap();
    assert_eq!(sep.trajectories, coh.trajectories);
    assert!((&sep.theta - &coh.theta).amax() < 1e-8);
    assert!((&sep.w - &coh.w).amax() < 1e-8);
}
