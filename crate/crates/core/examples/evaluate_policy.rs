//! Long-run average reward of fixed reference policies.
//!
//! cargo run --release --example evaluate_policy

use cohesion_rl::eval::{elrar, EvalConfig};
use cohesion_rl::sim::{generate_population, PopulationSpec, StateSampler};
use nalgebra::DMatrix;

fn main() -> cohesion_rl::Result<()> {
    let spec = PopulationSpec::default();
    let users = generate_population(&spec, 0)?;
    let sampler = StateSampler::new(&spec.sigma0_matrix()?)?;
    let cfg = EvalConfig::default();
    // The last policy entry multiplies the action indicator.
    for (name, bias) in [("never treat", 50.0), ("coin flip", 0.0), ("always treat", -50.0)] {
        let theta = DMatrix::from_fn(4, users.len(), |i, _| if i == 3 { bias } else { 0.0 });
        let report = elrar(&users, &theta, &sampler, &cfg, 1)?;
        let by_group: Vec<String> = (0..3)
            .map(|g| {
                let v: Vec<f64> = users.iter().filter(|u| u.group == g).map(|u| report.per_user[u.user_id]).collect();
                format!("{:.0}", v.iter().sum::<f64>() / v.len() as f64)
            })
            .collect();
        println!("{name:<13} ElrAR {:.1}; by group {}", report.elrar, by_group.join(" / "));
    }
    Ok(())
}
