//! Features and the two-action softmax policy.
//!
//! cargo run --example softmax_policy

use cohesion_rl::policy::{next_value_feature, policy_feature, policy_prob, sample_action, value_feature};
use cohesion_rl::rng::{stream, Purpose};

fn main() {
    let s = [0.5, -1.0, 0.2];
    println!("x(s, 0)   = {:?}", value_feature(&s, 0).as_slice());
    println!("x(s, 1)   = {:?}", value_feature(&s, 1).as_slice());
    println!("phi(s, 1) = {:?}", policy_feature(&s, 1).as_slice());

    // pi(a|s) ∝ exp(-theta . phi(s, a)): a negative last entry favors a = 1.
    for theta in [[0.0; 4], [0.0, 0.0, 0.0, -2.0], [1.0, 0.0, 0.0, 0.0]] {
        let p = policy_prob(&theta, &s);
        let mut rng = stream(1, Purpose::ActionDraw, 0, 0);
        let ones = (0..10_000).filter(|_| sample_action(&theta, &s, &mut rng) == 1).count();
        println!(
            "theta {theta:?}: pi = [{:.4}, {:.4}], sampled P(a=1) = {:.4}, y(s) = {:?}",
            p[0],
            p[1],
            ones as f64 / 10_000.0,
            next_value_feature(&theta, &s).iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>()
        );
    }
}
