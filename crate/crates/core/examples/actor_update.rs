//! One actor step against a fixed critic, with and without cohesion.
//!
//! cargo run --example actor_update

use cohesion_rl::actor::{actor_gradient, actor_update, ActorParams, ActorState};
use cohesion_rl::critic::{lstdq_separate, UserDesign};
use cohesion_rl::graph::{build_graph, wst_feature};
use cohesion_rl::rng::UserStreams;
use cohesion_rl::sim::{draw_warm_start, generate_population, user_initial_state, PopulationSpec, StateSampler};
use nalgebra::DMatrix;

fn main() -> cohesion_rl::Result<()> {
    let spec = PopulationSpec { users_per_group: 4, ..PopulationSpec::default() };
    let seed = 2;
    let t = 25;
    let users = generate_population(&spec, seed)?;
    let sampler = StateSampler::new(&spec.sigma0_matrix()?)?;
    let trajs = users
        .iter()
        .map(|u| {
            let mut streams = UserStreams::training(seed, u.user_id);
            draw_warm_start(u, user_initial_state(&sampler, seed, u.user_id), t, &mut streams)
        })
        .collect::<cohesion_rl::Result<Vec<_>>>()?;
    let features = trajs.iter().map(|tr| wst_feature(tr, t)).collect::<cohesion_rl::Result<Vec<_>>>()?;
    let lap = build_graph(&features, 3)?.laplacian().clone();

    let mut w = DMatrix::zeros(8, users.len());
    for (n, tr) in trajs.iter().enumerate() {
        let d = UserDesign::from_trajectory(tr, &[0.0; 4])?;
        w.set_column(n, &lstdq_separate(&d.x, &d.y, &d.r, 0.8, 0.1)?);
    }

    for mu3 in [0.0, 1.0, 100.0] {
        let state = ActorState {
            theta: DMatrix::zeros(4, users.len()),
            params: ActorParams { mu3, zeta3: 0.1, ..Default::default() },
        };
        let out = actor_update(&state, &w, &trajs, &lap)?;
        let grad = actor_gradient(&out.theta, &w, &trajs, &lap, mu3, 0.1)?;
        let mean = out.theta.column_mean();
        let spread = (0..users.len()).map(|n| (out.theta.column(n) - &mean).norm()).sum::<f64>() / users.len() as f64;
        println!(
            "mu3 = {mu3:>5}: objective {:.1} -> {:.1} in {} iterations, |grad| {:.1e}, spread of theta {:.3}",
            out.objective_before,
            out.objective_after,
            out.iterations,
            grad.amax(),
            spread
        );
    }
    Ok(())
}
