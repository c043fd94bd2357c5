//! Learn the user network from warm-start data and inspect it.
//!
//! cargo run --example cohesion_graph -- [K]

use cohesion_rl::graph::{build_graph, laplacian_quadratic, pairwise_penalty, wst_feature};
use cohesion_rl::rng::UserStreams;
use cohesion_rl::sim::{draw_warm_start, generate_population, user_initial_state, PopulationSpec, StateSampler};
use nalgebra::DMatrix;

fn main() -> cohesion_rl::Result<()> {
    let k: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(8);
    let spec = PopulationSpec::default();
    let seed = 3;
    let t0 = 10;
    let users = generate_population(&spec, seed)?;
    let sampler = StateSampler::new(&spec.sigma0_matrix()?)?;
    let features = users
        .iter()
        .map(|u| {
            let mut streams = UserStreams::training(seed, u.user_id);
            wst_feature(&draw_warm_start(u, user_initial_state(&sampler, seed, u.user_id), t0, &mut streams)?, t0)
        })
        .collect::<cohesion_rl::Result<Vec<_>>>()?;
    let graph = build_graph(&features, k)?;

    let edges = graph.edges();
    let same_group = edges.iter().filter(|&&(i, j)| users[i].group == users[j].group).count();
    println!("K = {k}: {} edges, {} within a group, {} components", edges.len(), same_group, graph.components().len());
    println!("smallest Laplacian eigenvalue: {:.2e}", graph.laplacian_min_eigenvalue());
    for i in [0, 15, 30] {
        println!("user {i} (group {}): neighbors {:?}", users[i].group, graph.neighbors(i).collect::<Vec<_>>());
    }

    // Tr(M L M^T) equals the pairwise penalty over unordered pairs.
    let m = DMatrix::from_fn(2, users.len(), |r, n| (r + 1) as f64 * users[n].beta[r]);
    println!(
        "Tr(M L M^T) = {:.6}, sum over edges = {:.6}",
        laplacian_quadratic(graph.laplacian(), &m)?,
        pairwise_penalty(graph.adjacency(), &m)?
    );
    graph.write_edge_list(std::io::stdout().lock())?;
    Ok(())
}
