//! The three critic estimators on the same batch of trajectories.
//!
//! cargo run --example critic_solvers

use cohesion_rl::critic::{
    assemble_block_operators, check_spd, critic_update_alg1, critic_update_alg2, lstdq_separate, projection_operator,
    reward_matrix, CriticParams, UserDesign,
};
use cohesion_rl::graph::{build_graph, wst_feature};
use cohesion_rl::rng::UserStreams;
use cohesion_rl::sim::{draw_warm_start, generate_population, user_initial_state, PopulationSpec, StateSampler};
use nalgebra::DMatrix;

fn main() -> cohesion_rl::Result<()> {
    let spec = PopulationSpec { users_per_group: 5, ..PopulationSpec::default() };
    let seed = 5;
    let t = 30;
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
    let graph = build_graph(&features, 4)?;
    let lap = graph.laplacian();

    let theta = [0.0; 4];
    let designs =
        trajs.iter().map(|tr| UserDesign::from_trajectory(tr, &theta)).collect::<cohesion_rl::Result<Vec<_>>>()?;
    let ops = assemble_block_operators(&designs)?;
    let rewards = reward_matrix(&designs)?;
    let gamma = 0.8;

    let mut separate = DMatrix::zeros(8, users.len());
    for (n, d) in designs.iter().enumerate() {
        separate.set_column(n, &lstdq_separate(&d.x, &d.y, &d.r, gamma, 0.1)?);
    }
    let params = CriticParams { gamma, mu1: 0.1, zeta1: 1e-6, mu2: 0.001, zeta2: 1e-6 };
    let w1 = critic_update_alg1(&ops, lap, &rewards, &params)?;
    let w2 = critic_update_alg2(&ops, lap, &rewards, gamma, 0.1, 1e-6)?;

    let spread = |w: &DMatrix<f64>| {
        let mean = w.column_mean();
        (0..w.ncols()).map(|n| (w.column(n) - &mean).norm()).sum::<f64>() / w.ncols() as f64
    };
    println!("mean distance of w_n to the population mean");
    println!("  separate   {:.2}", spread(&separate));
    println!("  cohesion#1 {:.2}", spread(&w1));
    println!("  cohesion#2 {:.2}", spread(&w2));

    // Without coupling, cohesion#2 is the separate estimator.
    let w0 = critic_update_alg2(&ops, lap, &rewards, gamma, 0.0, 0.1)?;
    println!("max |cohesion#2(mu=0) - separate| = {:.2e}", (w0 - &separate).amax());

    let p = projection_operator(&ops, lap, gamma, 0.1, 1e-6)?;
    let report = check_spd(&p, lap, 0.001, 0.0)?;
    println!("P^T P + L(mu2, 0): Cholesky {}, min eigenvalue {:.3e}", report.factorizes, report.min_eigenvalue);
    Ok(())
}
