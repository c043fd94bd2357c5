//! Policy improvement against a fixed critic.
//!
//! The actor maximizes
//!
//! ```text
//! J(Theta) = sum_n mean_{s in D_n} sum_a Q(s, a; w_n) pi_{theta_n}(a|s)
//!            - mu3/2 Tr(Theta L Theta^T) - zeta3/2 |Theta|_F^2
//! ```
//!
//! over all users' policy parameters at once, with the critic weights `W`
//! held at their current values. The states of each user's own trajectory
//! serve as the reference distribution.

use nalgebra::{DMatrix, DVector};

use crate::critic::q_value;
use crate::error::{shape, Error, Result};
use crate::graph::laplacian_quadratic;
use crate::optim::{maximize, AscentOptions};
use crate::policy::{policy_dim, policy_probs_into, N_ACTIONS};
use crate::sim::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActorParams {
    pub mu3: f64,
    pub zeta3: f64,
    pub max_iter: usize,
    pub grad_tol: f64,
}

impl Default for ActorParams {
    fn default() -> Self {
        Self { mu3: 0.0, zeta3: 0.1, max_iter: 200, grad_tol: 1e-6 }
    }
}

impl ActorParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("mu3", self.mu3), ("zeta3", self.zeta3)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ActorState {
    /// `m x N`, one column per user.
    pub theta: DMatrix<f64>,
    pub params: ActorParams,
}

/// Result of one actor update.
#[derive(Debug, Clone)]
pub struct ActorOutcome {
    pub theta: DMatrix<f64>,
    pub objective_before: f64,
    pub objective_after: f64,
    pub iterations: usize,
}

/// Critic values at every visited state, which do not depend on `Theta`.
struct UserData {
    states: Vec<Vec<f64>>,
    q: Vec<[f64; N_ACTIONS]>,
}

struct Problem {
    users: Vec<UserData>,
    m: usize,
}

impl Problem {
    fn new(
        theta: &DMatrix<f64>,
        w: &DMatrix<f64>,
        trajectories: &[Trajectory],
        laplacian: &DMatrix<f64>,
    ) -> Result<Self> {
        let n = theta.ncols();
        if w.ncols() != n || trajectories.len() != n || laplacian.shape() != (n, n) {
            return Err(shape(format!(
                "actor: Theta has {n} columns, W {}, {} trajectories, Laplacian {:?}",
                w.ncols(),
                trajectories.len(),
                laplacian.shape()
            )));
        }
        let mut users = Vec::with_capacity(n);
        for (k, traj) in trajectories.iter().enumerate() {
            if traj.is_empty() {
                return Err(shape(format!("actor: user {k} has an empty trajectory")));
            }
            let p = traj.tuples[0].s.len();
            if theta.nrows() != policy_dim(p) || w.nrows() != 2 * p + 2 {
                return Err(shape(format!("actor: parameter sizes do not fit state dimension {p}")));
            }
            let wk = w.column(k);
            let states: Vec<Vec<f64>> = traj.tuples.iter().map(|t| t.s.clone()).collect();
            let q = states.iter().map(|s| std::array::from_fn(|a| q_value(wk.as_slice(), s, a))).collect();
            users.push(UserData { states, q });
        }
        Ok(Self { users, m: theta.nrows() })
    }

    /// Data term of one user and its gradient added into `grad`.
    fn user_term(&self, n: usize, theta: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let data = &self.users[n];
        let scale = 1.0 / data.states.len() as f64;
        let mut probs = [0.0; N_ACTIONS];
        let mut value = 0.0;
        let mut gacc = vec![0.0; if grad.is_some() { self.m } else { 0 }];
        for (s, q) in data.states.iter().zip(&data.q) {
            policy_probs_into(theta, s, &mut probs);
            value += q.iter().zip(&probs).map(|(qa, pa)| qa * pa).sum::<f64>();
            if !gacc.is_empty() {
                // phi(s, a) = a [s, 1], so d pi_a = pi_a (E[a] - a) [s, 1].
                let mean_a: f64 = probs.iter().enumerate().map(|(a, p)| a as f64 * p).sum();
                let coef: f64 = (0..N_ACTIONS).map(|a| q[a] * probs[a] * (mean_a - a as f64)).sum();
                let p = s.len();
                for j in 0..p {
                    gacc[j] += coef * s[j];
                }
                gacc[p] += coef;
            }
        }
        if let Some(g) = grad {
            for (gj, v) in g.iter_mut().zip(&gacc) {
                *gj += scale * v;
            }
        }
        scale * value
    }

    /// Objective and gradient restricted to `members`, with `x` holding their
    /// columns back to back and `lap` the matching Laplacian block.
    fn restricted(
        &self,
        members: &[usize],
        lap: &DMatrix<f64>,
        params: &ActorParams,
        x: &DVector<f64>,
    ) -> (f64, DVector<f64>) {
        let m = self.m;
        let k = members.len();
        let mut grad = DVector::zeros(m * k);
        let mut value = 0.0;
        for (a, &n) in members.iter().enumerate() {
            let theta = &x.as_slice()[a * m..(a + 1) * m];
            value += self.user_term(n, theta, Some(&mut grad.as_mut_slice()[a * m..(a + 1) * m]));
        }
        let th = DMatrix::from_column_slice(m, k, x.as_slice());
        let th_l = &th * lap;
        value -= 0.5 * params.mu3 * th_l.component_mul(&th).sum() + 0.5 * params.zeta3 * x.norm_squared();
        grad -= DVector::from_column_slice((th_l * params.mu3 + &th * params.zeta3).as_slice());
        (value, grad)
    }
}

/// Value of the actor objective.
pub fn actor_objective(
    theta: &DMatrix<f64>,
    w: &DMatrix<f64>,
    trajectories: &[Trajectory],
    laplacian: &DMatrix<f64>,
    mu3: f64,
    zeta3: f64,
) -> Result<f64> {
    let problem = Problem::new(theta, w, trajectories, laplacian)?;
    let data: f64 = (0..theta.ncols()).map(|n| problem.user_term(n, theta.column(n).as_slice(), None)).sum();
    Ok(data - 0.5 * mu3 * laplacian_quadratic(laplacian, theta)? - 0.5 * zeta3 * theta.norm_squared())
}

/// Exact gradient of [`actor_objective`] with respect to `Theta`.
pub fn actor_gradient(
    theta: &DMatrix<f64>,
    w: &DMatrix<f64>,
    trajectories: &[Trajectory],
    laplacian: &DMatrix<f64>,
    mu3: f64,
    zeta3: f64,
) -> Result<DMatrix<f64>> {
    let problem = Problem::new(theta, w, trajectories, laplacian)?;
    let mut grad = -(theta * laplacian) * mu3 - theta * zeta3;
    for n in 0..theta.ncols() {
        problem.user_term(n, theta.column(n).as_slice(), Some(grad.column_mut(n).as_mut_slice()));
    }
    Ok(grad)
}

fn coupled_groups(laplacian: &DMatrix<f64>, coupled: bool) -> Vec<Vec<usize>> {
    let n = laplacian.nrows();
    if !coupled {
        return (0..n).map(|i| vec![i]).collect();
    }
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut members = vec![start];
        let mut head = 0;
        while head < members.len() {
            let i = members[head];
            head += 1;
            for j in 0..n {
                if !seen[j] && laplacian[(i, j)] != 0.0 && i != j {
                    seen[j] = true;
                    members.push(j);
                }
            }
        }
        members.sort_unstable();
        out.push(members);
    }
    out
}

/// Quasi-Newton ascent on the actor objective, warm-started at `state.theta`.
///
/// The objective separates over connected components of the graph (and over
/// single users when `mu3 = 0`), so each component is optimized on its own.
/// The returned `Theta` never has a lower objective than the starting one.
pub fn actor_update(
    state: &ActorState,
    w: &DMatrix<f64>,
    trajectories: &[Trajectory],
    laplacian: &DMatrix<f64>,
) -> Result<ActorOutcome> {
    let params = &state.params;
    params.validate()?;
    let theta0 = &state.theta;
    if theta0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("actor: starting parameters are not finite".into()));
    }
    let problem = Problem::new(theta0, w, trajectories, laplacian)?;
    let before = actor_objective(theta0, w, trajectories, laplacian, params.mu3, params.zeta3)?;
    if !before.is_finite() {
        return Err(Error::Numerical("actor: objective is not finite at the starting point".into()));
    }
    let opts = AscentOptions { max_iter: params.max_iter, grad_tol: params.grad_tol, ..AscentOptions::default() };
    let m = theta0.nrows();
    let mut theta = theta0.clone();
    let mut iterations = 0;
    for members in coupled_groups(laplacian, params.mu3 != 0.0) {
        let k = members.len();
        let lap = DMatrix::from_fn(k, k, |a, b| laplacian[(members[a], members[b])]);
        let mut x0 = DVector::zeros(m * k);
        for (a, &n) in members.iter().enumerate() {
            x0.rows_mut(a * m, m).copy_from(&theta0.column(n));
        }
        let report = maximize(|x| problem.restricted(&members, &lap, params, x), x0, &opts)?;
        iterations = iterations.max(report.iterations);
        for (a, &n) in members.iter().enumerate() {
            theta.column_mut(n).copy_from(&report.x.rows(a * m, m));
        }
    }
    let after = actor_objective(&theta, w, trajectories, laplacian, params.mu3, params.zeta3)?;
    if after < before {
        // Summation order across components can shift the last bits.
        return Ok(ActorOutcome {
            theta: theta0.clone(),
            objective_before: before,
            objective_after: before,
            iterations,
        });
    }
    Ok(ActorOutcome { theta, objective_before: before, objective_after: after, iterations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::CohesionGraph;
    use crate::policy::policy_prob;
    use crate::rng::{stream, Purpose};
    use crate::sim::Tuple;
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_instance(
        rng: &mut ChaCha8Rng,
        n: usize,
        t: usize,
    ) -> (DMatrix<f64>, DMatrix<f64>, Vec<Trajectory>) {
        let theta = DMatrix::from_fn(4, n, |_, _| rng.random_range(-1.0..1.0));
        let w = DMatrix::from_fn(8, n, |_, _| rng.random_range(-2.0..2.0));
        let trajs = (0..n)
            .map(|user_id| Trajectory {
                user_id,
                tuples: (0..t)
                    .map(|_| Tuple {
                        s: (0..3).map(|_| rng.random_range(-1.5..1.5)).collect(),
                        a: rng.random_range(0..2),
                        r: 0.0,
                        s_next: vec![0.0; 3],
                    })
                    .collect(),
            })
            .collect();
        (theta, w, trajs)
    }

    fn path_laplacian(n: usize) -> DMatrix<f64> {
        let edges: Vec<_> = (0..n - 1).map(|i| (i, i + 1)).collect();
        CohesionGraph::from_edges(n, 1, &edges).unwrap().laplacian().clone()
    }

    #[test]
    fn uniform_policy_single_user() {
        let mut rng = stream(1, Purpose::ActionDraw, 0, 0);
        let (_, w, trajs) = random_instance(&mut rng, 1, 6);
        let theta = DMatrix::zeros(4, 1);
        let j = actor_objective(&theta, &w, &trajs, &DMatrix::zeros(1, 1), 0.0, 0.0).unwrap();
        let expect = trajs[0]
            .tuples
            .iter()
            .map(|t| 0.5 * (q_value(w.column(0).as_slice(), &t.s, 0) + q_value(w.column(0).as_slice(), &t.s, 1)))
            .sum::<f64>()
            / 6.0;
        assert!((j - expect).abs() < 1e-12);
    }

    #[test]
    fn equal_columns_have_no_cohesion_penalty() {
        let mut rng = stream(2, Purpose::ActionDraw, 0, 0);
        let (theta, w, trajs) = random_instance(&mut rng, 4, 5);
        let shared = DMatrix::from_fn(4, 4, |i, _| theta[(i, 0)]);
        let lap = path_laplacian(4);
        let with = actor_objective(&shared, &w, &trajs, &lap, 3.0, 0.0).unwrap();
        let without = actor_objective(&shared, &w, &trajs, &lap, 0.0, 0.0).unwrap();
        assert!((with - without).abs() < 1e-12);
    }

    #[test]
    fn objective_matches_straight_loop() {
        let mut rng = stream(3, Purpose::ActionDraw, 0, 0);
        let (theta, w, trajs) = random_instance(&mut rng, 3, 7);
        let g = CohesionGraph::from_edges(3, 1, &[(0, 2), (1, 2)]).unwrap();
        let (mu3, zeta3) = (0.7, 0.3);
        let mut naive = 0.0;
        for n in 0..3 {
            let th: Vec<f64> = theta.column(n).iter().copied().collect();
            let wn: Vec<f64> = w.column(n).iter().copied().collect();
            let mut acc = 0.0;
            for t in &trajs[n].tuples {
                let p = policy_prob(&th, &t.s);
                for a in 0..2 {
                    let x = crate::policy::value_feature(&t.s, a);
                    let q: f64 = x.iter().zip(&wn).map(|(a, b)| a * b).sum();
                    acc += q * p[a];
                }
            }
            naive += acc / trajs[n].len() as f64;
        }
        for (i, j) in g.edges() {
            naive -= 0.5 * mu3 * (theta.column(i) - theta.column(j)).norm_squared();
        }
        naive -= 0.5 * zeta3 * theta.iter().map(|v| v * v).sum::<f64>();
        let j = actor_objective(&theta, &w, &trajs, g.laplacian(), mu3, zeta3).unwrap();
        assert!((j - naive).abs() < 1e-12, "{j} vs {naive}");
    }

    #[test]
    fn gradient_matches_central_differences() {
        for seed in 0..5 {
            let mut rng = stream(10 + seed, Purpose::ActionDraw, 0, 0);
            let (theta, w, trajs) = random_instance(&mut rng, 3, 6);
            let lap = path_laplacian(3);
            let (mu3, zeta3) = (0.4, 0.15);
            let g = actor_gradient(&theta, &w, &trajs, &lap, mu3, zeta3).unwrap();
            let h = 1e-6;
            for idx in 0..theta.len() {
                let mut tp = theta.clone();
                let mut tm = theta.clone();
                tp[idx] += h;
                tm[idx] -= h;
                let fd = (actor_objective(&tp, &w, &trajs, &lap, mu3, zeta3).unwrap()
                    - actor_objective(&tm, &w, &trajs, &lap, mu3, zeta3).unwrap())
                    / (2.0 * h);
                let scale = g[idx].abs().max(1e-3);
                assert!((fd - g[idx]).abs() / scale < 1e-5, "idx {idx}: fd {fd} vs {}", g[idx]);
            }
        }
    }

    #[test]
    fn gradient_decouples_without_cohesion() {
        let mut rng = stream(4, Purpose::ActionDraw, 0, 0);
        let (theta, w, trajs) = random_instance(&mut rng, 3, 5);
        let lap = path_laplacian(3);
        let joint = actor_gradient(&theta, &w, &trajs, &lap, 0.0, 0.2).unwrap();
        for n in 0..3 {
            let single = actor_gradient(
                &theta.columns(n, 1).into_owned(),
                &w.columns(n, 1).into_owned(),
                &trajs[n..=n],
                &DMatrix::zeros(1, 1),
                0.0,
                0.2,
            )
            .unwrap();
            assert!((joint.column(n) - single.column(0)).amax() < 1e-14);
        }
    }

    #[test]
    fn update_is_monotone_and_idempotent() {
        let mut rng = stream(5, Purpose::ActionDraw, 0, 0);
        let (theta, w, trajs) = random_instance(&mut rng, 4, 8);
        let lap = path_laplacian(4);
        let params = ActorParams { mu3: 0.5, zeta3: 0.2, ..ActorParams::default() };
        let state = ActorState { theta, params };
        let out = actor_update(&state, &w, &trajs, &lap).unwrap();
        assert!(out.objective_after >= out.objective_before - 1e-12);
        let grad = actor_gradient(&out.theta, &w, &trajs, &lap, 0.5, 0.2).unwrap();
        assert!(grad.amax() < 1e-6, "gradient {}", grad.amax());

        let again = actor_update(&ActorState { theta: out.theta.clone(), params }, &w, &trajs, &lap).unwrap();
        assert!((again.theta - &out.theta).amax() < 1e-6);
    }

    #[test]
    fn joint_update_matches_per_user_updates_without_cohesion() {
        let mut rng = stream(8, Purpose::ActionDraw, 0, 0);
        let (theta, w, trajs) = random_instance(&mut rng, 4, 6);
        let params = ActorParams { mu3: 0.0, zeta3: 0.3, ..ActorParams::default() };
        let joint = actor_update(&ActorState { theta: theta.clone(), params }, &w, &trajs, &path_laplacian(4)).unwrap();
        for n in 0..4 {
            let single = actor_update(
                &ActorState { theta: theta.columns(n, 1).into_owned(), params },
                &w.columns(n, 1).into_owned(),
                &trajs[n..=n],
                &DMatrix::zeros(1, 1),
            )
            .unwrap();
            assert!((joint.theta.column(n) - single.theta.column(0)).amax() < 1e-6);
        }
    }

    #[test]
    fn strong_cohesion_pulls_policies_together() {
        let mut rng = stream(9, Purpose::ActionDraw, 0, 0);
        let (_, w, trajs) = random_instance(&mut rng, 5, 6);
        let lap = path_laplacian(5);
        let mut last = f64::INFINITY;
        for mu3 in [1.0, 1e2, 1e4, 1e6] {
            let params = ActorParams { mu3, zeta3: 0.1, ..ActorParams::default() };
            let out = actor_update(&ActorState { theta: DMatrix::zeros(4, 5), params }, &w, &trajs, &lap).unwrap();
            let spread: f64 = (0..5)
                .flat_map(|i| (i + 1..5).map(move |j| (i, j)))
                .map(|(i, j)| (out.theta.column(i) - out.theta.column(j)).norm())
                .sum();
            assert!(spread < last, "mu3 = {mu3}: spread {spread} did not shrink below {last}");
            last = spread;
        }
        assert!(last < 1e-3, "{last}");
    }

    #[test]
    fn penalty_only_drives_theta_to_zero() {
        let mut rng = stream(6, Purpose::ActionDraw, 0, 0);
        let (theta, _, trajs) = random_instance(&mut rng, 3, 4);
        let w = DMatrix::zeros(8, 3);
        let params = ActorParams { mu3: 1.0, zeta3: 0.5, ..ActorParams::default() };
        let out = actor_update(&ActorState { theta, params }, &w, &trajs, &path_laplacian(3)).unwrap();
        assert!(out.theta.norm() < 1e-6, "{}", out.theta.norm());
    }

    #[test]
    fn non_finite_start_is_rejected() {
        let mut rng = stream(7, Purpose::ActionDraw, 0, 0);
        let (mut theta, w, trajs) = random_instance(&mut rng, 2, 3);
        theta[(0, 0)] = f64::NAN;
        let state = ActorState { theta, params: ActorParams::default() };
        assert!(actor_update(&state, &w, &trajs, &DMatrix::zeros(2, 2)).is_err());
    }
}
