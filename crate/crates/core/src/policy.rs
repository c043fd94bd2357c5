//! Value and policy features, and the linear-exponent softmax policy.
//!
//! The policy is `pi(a|s) ∝ exp(-theta . phi(s, a))` with the minus sign kept
//! as written in the model. Flipping the sign of `theta` maps to the usual
//! convention.

use nalgebra::DVector;
use rand::Rng;

use crate::sim::Action;

/// Number of actions in the intervention problem.
pub const N_ACTIONS: usize = 2;

/// Smallest probability passed to a logarithm.
pub const PROB_FLOOR: f64 = 1e-300;

/// Length of the value feature, `u = 2p + 2`.
pub fn value_dim(p: usize) -> usize {
    2 * p + 2
}

/// Length of the policy feature, `m = p + 1`.
pub fn policy_dim(p: usize) -> usize {
    p + 1
}

/// `x(s, a) = [1, s, a, a s]`.
pub fn value_feature(s: &[f64], a: Action) -> DVector<f64> {
    let mut x = DVector::zeros(value_dim(s.len()));
    write_value_feature(s, a as f64, x.as_mut_slice());
    x
}

pub(crate) fn write_value_feature(s: &[f64], a: f64, out: &mut [f64]) {
    let p = s.len();
    out[0] = 1.0;
    out[1..=p].copy_from_slice(s);
    out[p + 1] = a;
    for (o, &sj) in out[p + 2..].iter_mut().zip(s) {
        *o = a * sj;
    }
}

/// `phi(s, a) = [a s, a]`; zero for `a = 0`.
pub fn policy_feature(s: &[f64], a: Action) -> DVector<f64> {
    let af = a as f64;
    let mut phi = DVector::zeros(policy_dim(s.len()));
    for (o, &sj) in phi.iter_mut().zip(s) {
        *o = af * sj;
    }
    phi[s.len()] = af;
    phi
}

/// `theta . phi(s, a)` without building the feature.
#[inline]
pub fn policy_score(theta: &[f64], s: &[f64], a: Action) -> f64 {
    let p = s.len();
    let af = a as f64;
    af * (theta[..p].iter().zip(s).map(|(t, x)| t * x).sum::<f64>() + theta[p])
}

/// Fill `out` with `pi(a|s)` for `a = 0..out.len()`.
pub fn policy_probs_into(theta: &[f64], s: &[f64], out: &mut [f64]) {
    debug_assert_eq!(theta.len(), policy_dim(s.len()));
    let mut max = f64::NEG_INFINITY;
    for (a, o) in out.iter_mut().enumerate() {
        *o = -policy_score(theta, s, a);
        max = max.max(*o);
    }
    let mut total = 0.0;
    for o in out.iter_mut() {
        *o = (*o - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// `pi(.|s)` over the binary action set.
pub fn policy_prob(theta: &[f64], s: &[f64]) -> [f64; N_ACTIONS] {
    let mut out = [0.0; N_ACTIONS];
    policy_probs_into(theta, s, &mut out);
    out
}

/// `log pi(a|s)` with the probability floored at [`PROB_FLOOR`].
pub fn log_policy_prob(theta: &[f64], s: &[f64], a: Action) -> f64 {
    policy_prob(theta, s)[a].clamp(PROB_FLOOR, 1.0).ln()
}

/// `d pi(a|s) / d theta = pi(a|s) (E_pi[phi] - phi(s, a))`.
pub fn policy_prob_gradient(theta: &[f64], s: &[f64], a: Action) -> DVector<f64> {
    let probs = policy_prob(theta, s);
    let mut mean_phi = DVector::zeros(theta.len());
    for (b, &pb) in probs.iter().enumerate() {
        mean_phi.axpy(pb, &policy_feature(s, b), 1.0);
    }
    (mean_phi - policy_feature(s, a)) * probs[a]
}

/// Draw an action from `pi_theta(.|s)` by inverting the CDF with one uniform.
pub fn sample_action<R: Rng + ?Sized>(theta: &[f64], s: &[f64], rng: &mut R) -> Action {
    let probs = policy_prob(theta, s);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (a, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return a;
        }
    }
    N_ACTIONS - 1
}

/// Expected next value feature `y(s'; theta) = sum_a x(s', a) pi(a|s')`.
pub fn next_value_feature(theta: &[f64], s_next: &[f64]) -> DVector<f64> {
    let mut y = DVector::zeros(value_dim(s_next.len()));
    write_next_value_feature(theta, s_next, y.as_mut_slice());
    y
}

pub(crate) fn write_next_value_feature(theta: &[f64], s_next: &[f64], out: &mut [f64]) {
    // x(s', a) is affine in a, so the mixture is x(s', E[a]).
    let probs = policy_prob(theta, s_next);
    let mean_a: f64 = probs.iter().enumerate().map(|(a, p)| a as f64 * p).sum();
    write_value_feature(s_next, mean_a, out);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use proptest::prelude::*;

    #[test]
    fn value_feature_layout() {
        let s = [1.0, 2.0, 3.0];
        assert_eq!(value_feature(&s, 0).as_slice(), &[1.0, 1.0, 2.0, 3.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(value_feature(&s, 1).as_slice(), &[1.0, 1.0, 2.0, 3.0, 1.0, 1.0, 2.0, 3.0]);
        assert_eq!(value_dim(3), 8);
        assert_eq!(policy_dim(3), 4);
    }

    #[test]
    fn policy_feature_layout() {
        let s = [1.0, -2.0, 0.5];
        assert_eq!(policy_feature(&s, 0).as_slice(), &[0.0; 4]);
        assert_eq!(policy_feature(&s, 1).as_slice(), &[1.0, -2.0, 0.5, 1.0]);
    }

    #[test]
    fn zero_theta_is_uniform() {
        for s in [[0.0; 3], [5.0, -3.0, 1.0]] {
            assert_eq!(policy_prob(&[0.0; 4], &s), [0.5, 0.5]);
        }
    }

    #[test]
    fn negative_exponent_convention() {
        // Large positive theta . phi(s, 1) pushes pi(1|s) to zero.
        let probs = policy_prob(&[0.0, 0.0, 0.0, 800.0], &[0.1, 0.2, 0.3]);
        assert_eq!(probs[1], 0.0);
        assert_eq!(probs[0], 1.0);
        assert!(log_policy_prob(&[0.0, 0.0, 0.0, 800.0], &[0.1, 0.2, 0.3], 1).is_finite());
        let probs = policy_prob(&[0.0, 0.0, 0.0, -2.0], &[0.0; 3]);
        assert!(probs[1] > probs[0]);
    }

    #[test]
    fn sampling_frequency_and_replay() {
        let mut rng = stream(5, Purpose::ActionDraw, 0, 0);
        let ones = (0..10_000).filter(|_| sample_action(&[0.0; 4], &[0.3, 0.1, 0.2], &mut rng) == 1).count();
        let frac = ones as f64 / 10_000.0;
        assert!((0.48..=0.52).contains(&frac), "P(1) = {frac}");

        let theta = [0.0, 0.0, 0.0, -1e3];
        let mut rng = stream(5, Purpose::ActionDraw, 1, 0);
        assert!((0..100).all(|_| sample_action(&theta, &[0.0; 3], &mut rng) == 1));

        let draw = || {
            let mut rng = stream(9, Purpose::ActionDraw, 2, 0);
            (0..20).map(|_| sample_action(&[0.3, -0.2, 0.1, 0.4], &[1.0, 0.5, -0.5], &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(), draw());
    }

    #[test]
    fn next_value_feature_mixtures() {
        let s = [0.4, -1.0, 2.0];
        let y = next_value_feature(&[0.0; 4], &s);
        let expect = (value_feature(&s, 0) + value_feature(&s, 1)) * 0.5;
        assert!((y - expect).amax() < 1e-15);

        let y = next_value_feature(&[0.0, 0.0, 0.0, -1e4], &s);
        assert_eq!(y, value_feature(&s, 1));
        assert_eq!(next_value_feature(&[3.0, 1.0, -2.0, 0.5], &s)[0], 1.0);
    }

    fn arb_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (prop::collection::vec(-20.0..20.0f64, 4), prop::collection::vec(-5.0..5.0f64, 3))
    }

    proptest! {
        #[test]
        fn probabilities_normalize((theta, s) in arb_pair()) {
            let p = policy_prob(&theta, &s);
            prop_assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        }

        #[test]
        fn shift_invariance((theta, s) in arb_pair(), c in -500.0..500.0f64) {
            let p = policy_prob(&theta, &s);
            // Naive evaluation with a common shift in both exponents.
            let z: Vec<f64> = (0..2).map(|a| -policy_score(&theta, &s, a) + c).collect();
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
            let tot: f64 = e.iter().sum();
            for a in 0..2 {
                prop_assert!((p[a] - e[a] / tot).abs() < 1e-12);
            }
        }

        #[test]
        fn next_feature_is_between_endpoints((theta, s) in arb_pair()) {
            let y = next_value_feature(&theta, &s);
            let x0 = value_feature(&s, 0);
            let x1 = value_feature(&s, 1);
            for k in 0..y.len() {
                let (lo, hi) = if x0[k] <= x1[k] { (x0[k], x1[k]) } else { (x1[k], x0[k]) };
                prop_assert!(y[k] >= lo - 1e-12 && y[k] <= hi + 1e-12);
            }
        }

        #[test]
        fn probability_gradient_matches_central_differences(
            theta in prop::collection::vec(-2.0..2.0f64, 4),
            s in prop::collection::vec(-2.0..2.0f64, 3),
            a in 0usize..2,
        ) {
            let g = policy_prob_gradient(&theta, &s, a);
            let h = 1e-6;
            for k in 0..4 {
                let mut tp = theta.clone();
                let mut tm = theta.clone();
                tp[k] += h;
                tm[k] -= h;
                let fd = (policy_prob(&tp, &s)[a] - policy_prob(&tm, &s)[a]) / (2.0 * h);
                let scale = g[k].abs().max(1e-3);
                prop_assert!((fd - g[k]).abs() / scale < 1e-6, "k={} fd={} g={}", k, fd, g[k]);
            }
        }
    }
}
