//! Generate the grouped population, roll out coin-flip warm starts and
//! write both as JSON lines.
//!
//! cargo run --example simulate_population -- [out_dir]

use std::fs::File;
use std::path::PathBuf;

use cohesion_rl::rng::UserStreams;
use cohesion_rl::sim::{
    draw_warm_start, generate_population, user_initial_state, write_jsonl, PopulationSpec, StateSampler,
};

fn main() -> cohesion_rl::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(std::env::temp_dir);
    let spec = PopulationSpec::default();
    let seed = 7;
    let users = generate_population(&spec, seed)?;
    let sampler = StateSampler::new(&spec.sigma0_matrix()?)?;

    let trajectories = users
        .iter()
        .map(|u| {
            let mut streams = UserStreams::training(seed, u.user_id);
            draw_warm_start(u, user_initial_state(&sampler, seed, u.user_id), 10, &mut streams)
        })
        .collect::<cohesion_rl::Result<Vec<_>>>()?;

    for group in 0..spec.beta_basic.len() {
        let members: Vec<_> = users.iter().filter(|u| u.group == group).collect();
        let mean_reward: f64 =
            members.iter().flat_map(|u| trajectories[u.user_id].tuples.iter().map(|t| t.r)).sum::<f64>()
                / (members.len() * 10) as f64;
        let mean_b14 = members.iter().map(|u| u.beta[13]).sum::<f64>() / members.len() as f64;
        println!(
            "group {group}: {} users, mean beta14 {mean_b14:.2}, mean warm-start reward {mean_reward:.1}",
            members.len()
        );
    }

    write_jsonl(File::create(out.join("population.jsonl"))?, &users)?;
    write_jsonl(File::create(out.join("warm_start.jsonl"))?, &trajectories)?;
    println!("wrote population.jsonl and warm_start.jsonl to {}", out.display());
    Ok(())
}
