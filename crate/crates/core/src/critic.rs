//! Q-value estimation by least-squares temporal differences.
//!
//! Three estimators share one data layout. For user `n` with `t` tuples,
//! `X_n` holds the value features `x(s_i, a_i)` as columns, `Y_n` the
//! expected next features `y(s_i'; theta_n)`, and `r_n` the rewards.
//!
//! * [`lstdq_separate`]: one ridge-regularized LSTDQ per user,
//!   `w = [X (X - gamma Y)^T + zeta I]^{-1} X r`.
//! * [`critic_update_alg1`]: graph-regularized projection step followed by a
//!   graph-regularized fixed-point step,
//!   `vec(W) = [P^T P + L(mu2, zeta2)]^{-1} P^T F2 vec(R)` with
//!   `P = F1 + L(mu1, zeta1) - gamma F3`.
//! * [`critic_update_alg2`]: regularized projection with the plain fixed-point
//!   condition `W = H`, `vec(W) = [F1 - gamma F3 + L(mu1, zeta1)]^{-1} F2 vec(R)`.
//!
//! Here `F1 = sum_n E_n ⊗ X_n X_n^T`, `F2 = sum_n E_n ⊗ X_n`,
//! `F3 = sum_n E_n ⊗ X_n Y_n^T` and `L(mu, zeta) = (mu L + zeta I_N) ⊗ I_u`.
//! `F1` and `F3` are block diagonal and `L(mu, zeta)` only couples users that
//! share a graph component, so every solve is split per connected component
//! and only those blocks are ever materialized.

use nalgebra::{DMatrix, DVector};

use crate::error::{shape, Error, Result};
use crate::linalg::{kron, solve_general, solve_spd};
use crate::policy::{value_dim, write_next_value_feature, write_value_feature};
use crate::sim::Trajectory;

/// Observation matrices of one user.
#[derive(Debug, Clone, PartialEq)]
pub struct UserDesign {
    /// `u x t` value features.
    pub x: DMatrix<f64>,
    /// `u x t` expected next value features under the current policy.
    pub y: DMatrix<f64>,
    /// `t` rewards.
    pub r: DVector<f64>,
}

impl UserDesign {
    pub fn new(x: DMatrix<f64>, y: DMatrix<f64>, r: DVector<f64>) -> Result<Self> {
        if x.shape() != y.shape() || x.ncols() != r.len() {
            return Err(shape(format!(
                "design: X is {:?}, Y is {:?}, r has {} entries",
                x.shape(),
                y.shape(),
                r.len()
            )));
        }
        Ok(Self { x, y, r })
    }

    /// Build the design from a trajectory and the user's policy parameters.
    pub fn from_trajectory(traj: &Trajectory, theta: &[f64]) -> Result<Self> {
        let t = traj.len();
        let p = traj.tuples.first().map_or(0, |tp| tp.s.len());
        let u = value_dim(p);
        let mut x = DMatrix::zeros(u, t);
        let mut y = DMatrix::zeros(u, t);
        let mut r = DVector::zeros(t);
        for (i, tuple) in traj.tuples.iter().enumerate() {
            if tuple.s.len() != p || tuple.s_next.len() != p {
                return Err(shape(format!("user {}: inconsistent state dimension", traj.user_id)));
            }
            write_value_feature(&tuple.s, tuple.a as f64, x.column_mut(i).as_mut_slice());
            write_next_value_feature(theta, &tuple.s_next, y.column_mut(i).as_mut_slice());
            r[i] = tuple.r;
        }
        Ok(Self { x, y, r })
    }

    pub fn feature_dim(&self) -> usize {
        self.x.nrows()
    }

    pub fn len(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.x.ncols() == 0
    }
}

/// Per-user blocks of `F1`, `F2` and `F3`.
#[derive(Debug, Clone)]
pub struct BlockOperators {
    /// `X_n X_n^T`, the blocks of `F1`.
    pub gram: Vec<DMatrix<f64>>,
    /// `X_n`, the blocks of `F2`.
    pub features: Vec<DMatrix<f64>>,
    /// `X_n Y_n^T`, the blocks of `F3`.
    pub cross: Vec<DMatrix<f64>>,
}

impl BlockOperators {
    pub fn num_users(&self) -> usize {
        self.gram.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.gram.first().map_or(0, |g| g.nrows())
    }

    pub fn horizon(&self) -> usize {
        self.features.first().map_or(0, |x| x.ncols())
    }

    /// Blocks of `F2 vec(R)`, i.e. `X_n r_n`.
    fn projected_rewards(&self, rewards: &DMatrix<f64>) -> Result<Vec<DVector<f64>>> {
        if rewards.ncols() != self.num_users() || rewards.nrows() != self.horizon() {
            return Err(shape(format!(
                "reward matrix is {:?}, expected {}x{}",
                rewards.shape(),
                self.horizon(),
                self.num_users()
            )));
        }
        Ok(self.features.iter().enumerate().map(|(n, x)| x * rewards.column(n)).collect())
    }
}

/// Compute the per-user blocks. All users must share `u` and `t`.
pub fn assemble_block_operators(designs: &[UserDesign]) -> Result<BlockOperators> {
    if let Some(first) = designs.first() {
        let dims = (first.feature_dim(), first.len());
        if let Some(bad) = designs.iter().position(|d| (d.feature_dim(), d.len()) != dims) {
            return Err(shape(format!("user {bad} design shape differs from user 0")));
        }
    }
    Ok(BlockOperators {
        gram: designs.iter().map(|d| &d.x * d.x.transpose()).collect(),
        features: designs.iter().map(|d| d.x.clone()).collect(),
        cross: designs.iter().map(|d| &d.x * d.y.transpose()).collect(),
    })
}

/// Stack the designs' rewards into the `t x N` matrix `R`.
pub fn reward_matrix(designs: &[UserDesign]) -> Result<DMatrix<f64>> {
    let t = designs.first().map_or(0, UserDesign::len);
    if designs.iter().any(|d| d.len() != t) {
        return Err(shape("users have different trajectory lengths"));
    }
    Ok(DMatrix::from_fn(t, designs.len(), |i, n| designs[n].r[i]))
}

/// Weights of the two cohesion critics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticParams {
    pub gamma: f64,
    pub mu1: f64,
    pub zeta1: f64,
    pub mu2: f64,
    pub zeta2: f64,
}

impl CriticParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must lie in [0, 1), got {}", self.gamma)));
        }
        for (name, v) in [("mu1", self.mu1), ("zeta1", self.zeta1), ("mu2", self.mu2), ("zeta2", self.zeta2)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Per-user regularized LSTDQ: `[X (X - gamma Y)^T + zeta I]^{-1} X r`.
pub fn lstdq_separate(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    r: &DVector<f64>,
    gamma: f64,
    zeta: f64,
) -> Result<DVector<f64>> {
    if x.shape() != y.shape() || x.ncols() != r.len() {
        return Err(shape("lstdq: X, Y and r disagree"));
    }
    // Same operation order as the cohesion block solve, so that zero graph
    // weights reproduce this estimator bit for bit.
    let mut a = x * x.transpose() - (x * y.transpose()) * gamma;
    for d in 0..x.nrows() {
        a[(d, d)] += zeta;
    }
    solve_general(a, &(x * r), "separate LSTDQ")
}

/// `(mu L + zeta I_N) ⊗ I_u`.
pub fn kron_laplacian(laplacian: &DMatrix<f64>, mu: f64, zeta: f64, u: usize) -> DMatrix<f64> {
    let n = laplacian.nrows();
    let left = laplacian * mu + DMatrix::identity(n, n) * zeta;
    kron(&left, &DMatrix::identity(u, u))
}

fn check_laplacian(laplacian: &DMatrix<f64>, n: usize) -> Result<()> {
    if laplacian.shape() != (n, n) {
        return Err(shape(format!("Laplacian is {:?}, expected {n}x{n}", laplacian.shape())));
    }
    let scale = laplacian.amax().max(1.0);
    if (laplacian - laplacian.transpose()).amax() > 1e-12 * scale {
        return Err(shape("Laplacian must be symmetric"));
    }
    Ok(())
}

/// Groups of users coupled through nonzero off-diagonal Laplacian entries.
fn coupled_groups(laplacian: &DMatrix<f64>, coupled: bool) -> Vec<Vec<usize>> {
    let n = laplacian.nrows();
    if !coupled {
        return (0..n).map(|i| vec![i]).collect();
    }
    let mut seen = vec![false; n];
    let mut groups = Vec::new();
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
                if !seen[j] && j != i && laplacian[(i, j)] != 0.0 {
                    seen[j] = true;
                    members.push(j);
                }
            }
        }
        members.sort_unstable();
        groups.push(members);
    }
    groups
}

/// Dense `F1 + L(mu1, zeta1) - gamma F3` restricted to `members`.
fn projection_block(
    ops: &BlockOperators,
    laplacian: &DMatrix<f64>,
    members: &[usize],
    gamma: f64,
    mu1: f64,
    zeta1: f64,
) -> DMatrix<f64> {
    let u = ops.feature_dim();
    let k = members.len();
    let mut p = DMatrix::zeros(u * k, u * k);
    for (a, &n) in members.iter().enumerate() {
        let block = &ops.gram[n] - &ops.cross[n] * gamma;
        p.view_mut((a * u, a * u), (u, u)).copy_from(&block);
        for (b, &m) in members.iter().enumerate() {
            let coef = mu1 * laplacian[(n, m)] + if a == b { zeta1 } else { 0.0 };
            if coef != 0.0 {
                for d in 0..u {
                    p[(a * u + d, b * u + d)] += coef;
                }
            }
        }
    }
    p
}

fn add_kron_identity(
    mat: &mut DMatrix<f64>,
    laplacian: &DMatrix<f64>,
    members: &[usize],
    mu: f64,
    zeta: f64,
    u: usize,
) {
    for (a, &n) in members.iter().enumerate() {
        for (b, &m) in members.iter().enumerate() {
            let coef = mu * laplacian[(n, m)] + if a == b { zeta } else { 0.0 };
            if coef != 0.0 {
                for d in 0..u {
                    mat[(a * u + d, b * u + d)] += coef;
                }
            }
        }
    }
}

fn stack(blocks: &[DVector<f64>], members: &[usize], u: usize) -> DVector<f64> {
    let mut out = DVector::zeros(u * members.len());
    for (a, &n) in members.iter().enumerate() {
        out.rows_mut(a * u, u).copy_from(&blocks[n]);
    }
    out
}

fn scatter(w: &mut DMatrix<f64>, sol: &DVector<f64>, members: &[usize], u: usize) {
    for (a, &n) in members.iter().enumerate() {
        w.column_mut(n).copy_from(&sol.rows(a * u, u));
    }
}

/// Dense `P = F1 + L(mu1, zeta1) - gamma F3` over all users.
pub fn projection_operator(
    ops: &BlockOperators,
    laplacian: &DMatrix<f64>,
    gamma: f64,
    mu1: f64,
    zeta1: f64,
) -> Result<DMatrix<f64>> {
    check_laplacian(laplacian, ops.num_users())?;
    let all: Vec<usize> = (0..ops.num_users()).collect();
    Ok(projection_block(ops, laplacian, &all, gamma, mu1, zeta1))
}

/// Projection step followed by the graph-regularized fixed-point step.
///
/// The fixed-point system `P^T P + L(mu2, zeta2)` is symmetric positive
/// definite whenever `zeta2 > 0` or `P` has full column rank, so it is solved
/// by Cholesky. A factorization failure is reported as a numerical error.
pub fn critic_update_alg1(
    ops: &BlockOperators,
    laplacian: &DMatrix<f64>,
    rewards: &DMatrix<f64>,
    params: &CriticParams,
) -> Result<DMatrix<f64>> {
    params.validate()?;
    let n = ops.num_users();
    check_laplacian(laplacian, n)?;
    let u = ops.feature_dim();
    let xr = ops.projected_rewards(rewards)?;
    let mut w = DMatrix::zeros(u, n);
    for members in coupled_groups(laplacian, params.mu1 != 0.0 || params.mu2 != 0.0) {
        let p = projection_block(ops, laplacian, &members, params.gamma, params.mu1, params.zeta1);
        let mut b = p.transpose() * &p;
        add_kron_identity(&mut b, laplacian, &members, params.mu2, params.zeta2, u);
        let rhs = p.transpose() * stack(&xr, &members, u);
        let sol = solve_spd(b, &rhs, "cohesion critic #1 fixed-point step")?;
        scatter(&mut w, &sol, &members, u);
    }
    Ok(w)
}

/// Regularized projection with `W = H`: one general square solve per component.
pub fn critic_update_alg2(
    ops: &BlockOperators,
    laplacian: &DMatrix<f64>,
    rewards: &DMatrix<f64>,
    gamma: f64,
    mu1: f64,
    zeta1: f64,
) -> Result<DMatrix<f64>> {
    CriticParams { gamma, mu1, zeta1, mu2: 0.0, zeta2: 0.0 }.validate()?;
    let n = ops.num_users();
    check_laplacian(laplacian, n)?;
    let u = ops.feature_dim();
    let xr = ops.projected_rewards(rewards)?;
    let mut w = DMatrix::zeros(u, n);
    for members in coupled_groups(laplacian, mu1 != 0.0) {
        let a = projection_block(ops, laplacian, &members, gamma, mu1, zeta1);
        let sol = solve_general(a, &stack(&xr, &members, u), "cohesion critic #2")?;
        scatter(&mut w, &sol, &members, u);
    }
    Ok(w)
}

/// Diagnostic for `B = P^T P + L(mu2, zeta2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpdReport {
    /// `max |B - B^T|`.
    pub symmetry_defect: f64,
    /// Whether a Cholesky factorization succeeded.
    pub factorizes: bool,
    /// Smallest eigenvalue of the symmetric part of `B`.
    pub min_eigenvalue: f64,
}

impl SpdReport {
    pub fn is_spd(&self) -> bool {
        self.factorizes && self.symmetry_defect < 1e-10
    }
}

pub fn check_spd(p: &DMatrix<f64>, laplacian: &DMatrix<f64>, mu2: f64, zeta2: f64) -> Result<SpdReport> {
    let n = laplacian.nrows();
    if p.nrows() != p.ncols() || n == 0 || !p.nrows().is_multiple_of(n) {
        return Err(shape(format!("P is {:?}, Laplacian is {n}x{n}", p.shape())));
    }
    let u = p.nrows() / n;
    let b = p.transpose() * p + kron_laplacian(laplacian, mu2, zeta2, u);
    let symmetry_defect = (&b - b.transpose()).amax();
    let factorizes = b.clone().cholesky().is_some();
    let sym = (&b + b.transpose()) * 0.5;
    let min_eigenvalue = sym.symmetric_eigenvalues().min();
    Ok(SpdReport { symmetry_defect, factorizes, min_eigenvalue })
}

/// `Q(s, a; w) = x(s, a) . w`.
pub fn q_value(w: &[f64], s: &[f64], a: usize) -> f64 {
    let p = s.len();
    let af = a as f64;
    let mut q = w[0] + w[p + 1] * af;
    for (j, &sj) in s.iter().enumerate() {
        q += (w[1 + j] + af * w[p + 2 + j]) * sj;
    }
    q
}
