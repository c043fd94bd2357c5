//! Run the online protocol for each method and compare long-run rewards.
//!
//! cargo run --release --example online_run -- [seed]

use cohesion_rl::eval::{elrar, EvalConfig};
use cohesion_rl::runner::{run_online, ExperimentConfig, Method};
use cohesion_rl::sim::StateSampler;

fn main() -> cohesion_rl::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(0);
    for method in Method::ALL {
        let cfg = ExperimentConfig { method, horizon: 50, seed, ..ExperimentConfig::default() };
        let run = run_online(&cfg)?;
        let sampler = StateSampler::new(&cfg.population.sigma0_matrix()?)?;
        let report = elrar(&run.population, &run.theta, &sampler, &EvalConfig::default(), seed)?;
        let treated: usize = run.trajectories.iter().map(|t| t.tuples.iter().filter(|x| x.a == 1).count()).sum();
        println!(
            "{method:<10} ElrAR {:.1} (std across users {:.1}); {} updates in {:.2}s; {:.0}% of actions treated",
            report.elrar,
            report.std_across_users(),
            run.timing.updates,
            run.timing.wall_time_s,
            100.0 * treated as f64 / (run.trajectories.len() * cfg.horizon) as f64
        );
    }
    let dir = std::env::temp_dir().join("cohesion_rl_online_run");
    run_online(&ExperimentConfig { horizon: 20, seed, ..ExperimentConfig::default() })?.save(&dir)?;
    println!("a short cohesion#2 run was saved to {}", dir.display());
    Ok(())
}
