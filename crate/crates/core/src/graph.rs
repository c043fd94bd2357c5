//! User-similarity network learned from warm-start trajectories.
//!
//! Each user is summarized by the sorted multiset of all state components and
//! rewards observed during warm start. Sorting removes the temporal order so
//! that the random warm-start actions matter less. Users are then linked by a
//! symmetrized K-nearest-neighbor rule: `i ~ j` when either is among the
//! other's `K` nearest neighbors.
//!
//! Pairwise penalties in this crate count each unordered pair once, so that
//! `sum_{i<j} c_ij |m_i - m_j|^2 = Tr(M L M^T)` with `L = D - C`.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{config, shape, Result};
use crate::sim::Trajectory;

/// Sorted warm-start summary of one user.
#[derive(Debug, Clone, PartialEq)]
pub struct WstFeature(pub Vec<f64>);

impl WstFeature {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Stack `[s_1, r_1, ..., s_T0, r_T0]` and sort ascending.
pub fn wst_feature(traj: &Trajectory, t0: usize) -> Result<WstFeature> {
    if traj.len() != t0 {
        return Err(config(format!(
            "user {}: warm-start feature needs exactly {t0} tuples, got {}",
            traj.user_id,
            traj.len()
        )));
    }
    let mut v: Vec<f64> = traj.tuples.iter().flat_map(|t| t.s.iter().copied().chain(std::iter::once(t.r))).collect();
    if v.iter().any(|x| !x.is_finite()) {
        return Err(config(format!("user {}: non-finite warm-start data", traj.user_id)));
    }
    v.sort_by(f64::total_cmp);
    Ok(WstFeature(v))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohesionGraph {
    k: usize,
    adjacency: DMatrix<f64>,
    laplacian: DMatrix<f64>,
}

impl CohesionGraph {
    /// Graph with the given undirected edges over `n` nodes.
    pub fn from_edges(n: usize, k: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adjacency = DMatrix::zeros(n, n);
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(config(format!("edge ({i}, {j}) out of range for {n} nodes")));
            }
            if i == j {
                return Err(config(format!("self loop at node {i}")));
            }
            adjacency[(i, j)] = 1.0;
            adjacency[(j, i)] = 1.0;
        }
        Ok(Self::from_adjacency(k, adjacency))
    }

    /// Graph with no edges.
    pub fn empty(n: usize) -> Self {
        Self::from_adjacency(0, DMatrix::zeros(n, n))
    }

    fn from_adjacency(k: usize, adjacency: DMatrix<f64>) -> Self {
        let n = adjacency.nrows();
        let mut laplacian = -adjacency.clone();
        for i in 0..n {
            laplacian[(i, i)] = adjacency.row(i).sum();
        }
        Self { k, adjacency, laplacian }
    }

    pub fn num_nodes(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn adjacency(&self) -> &DMatrix<f64> {
        &self.adjacency
    }

    pub fn laplacian(&self) -> &DMatrix<f64> {
        &self.laplacian
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[(i, j)] != 0.0
    }

    /// Edges `(i, j)` with `i < j`, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.num_nodes();
        (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).filter(|&(i, j)| self.has_edge(i, j)).collect()
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_nodes()).filter(move |&j| self.has_edge(i, j))
    }

    /// Connected components, each sorted, ordered by smallest member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.num_nodes();
        let mut label = vec![usize::MAX; n];
        let mut out = Vec::new();
        for start in 0..n {
            if label[start] != usize::MAX {
                continue;
            }
            let id = out.len();
            let mut members = vec![start];
            label[start] = id;
            let mut head = 0;
            while head < members.len() {
                let i = members[head];
                head += 1;
                for j in self.neighbors(i) {
                    if label[j] == usize::MAX {
                        label[j] = id;
                        members.push(j);
                    }
                }
            }
            members.sort_unstable();
            out.push(members);
        }
        out
    }

    /// Smallest eigenvalue of the Laplacian.
    pub fn laplacian_min_eigenvalue(&self) -> f64 {
        if self.num_nodes() == 0 {
            return 0.0;
        }
        SymmetricEigen::new(self.laplacian.clone()).eigenvalues.min()
    }

    /// Edge list: a `#` header line, then one `i j` line per edge with `i < j`.
    pub fn write_edge_list<W: Write>(&self, mut out: W) -> Result<()> {
        let edges = self.edges();
        writeln!(out, "# nodes={} k={} edges={}", self.num_nodes(), self.k, edges.len())?;
        for (i, j) in edges {
            writeln!(out, "{i} {j}")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_edge_list<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines.next().ok_or_else(|| config("empty edge list"))??;
        let mut n = None;
        let mut k = 0;
        for field in header.trim_start_matches('#').split_whitespace() {
            if let Some(v) = field.strip_prefix("nodes=") {
                n = Some(v.parse().map_err(|_| config(format!("bad node count {v:?}")))?);
            } else if let Some(v) = field.strip_prefix("k=") {
                k = v.parse().map_err(|_| config(format!("bad k {v:?}")))?;
            }
        }
        let n = n.ok_or_else(|| config("edge list header lacks nodes="))?;
        let mut edges = Vec::new();
        for line in lines {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut it = line.split_whitespace().map(str::parse::<usize>);
            match (it.next(), it.next(), it.next()) {
                (Some(Ok(i)), Some(Ok(j)), None) => edges.push((i, j)),
                _ => return Err(config(format!("bad edge line {line:?}"))),
            }
        }
        Self::from_edges(n, k, &edges)
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Symmetrized K-nearest-neighbor graph over the features.
///
/// Distance ties go to the lower user index; a node is never its own neighbor.
pub fn build_graph(features: &[WstFeature], k: usize) -> Result<CohesionGraph> {
    let n = features.len();
    if k >= n {
        return Err(config(format!("K = {k} needs more than {k} users, got {n}")));
    }
    if let Some(first) = features.first() {
        if features.iter().any(|f| f.0.len() != first.0.len()) {
            return Err(shape("warm-start features have different lengths"));
        }
    }
    let mut adjacency = DMatrix::zeros(n, n);
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(n);
    for j in 0..n {
        order.clear();
        order.extend((0..n).filter(|&i| i != j).map(|i| (squared_distance(&features[i].0, &features[j].0), i)));
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, i) in order.iter().take(k) {
            adjacency[(i, j)] = 1.0;
            adjacency[(j, i)] = 1.0;
        }
    }
    Ok(CohesionGraph::from_adjacency(k, adjacency))
}

/// `Tr(M L M^T)` for `M` with one column per node.
pub fn laplacian_quadratic(laplacian: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<f64> {
    if laplacian.nrows() != laplacian.ncols() || m.ncols() != laplacian.nrows() {
        return Err(shape(format!(
            "Laplacian is {}x{}, matrix has {} columns",
            laplacian.nrows(),
            laplacian.ncols(),
            m.ncols()
        )));
    }
    Ok((m * laplacian).component_mul(m).sum())
}

/// `sum_{i<j} c_ij |m_i - m_j|^2`, the pairwise form of [`laplacian_quadratic`].
pub fn pairwise_penalty(adjacency: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<f64> {
    let n = adjacency.nrows();
    if adjacency.ncols() != n || m.ncols() != n {
        return Err(shape("adjacency and column count disagree"));
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let c = adjacency[(i, j)];
            if c != 0.0 {
                total += c * (m.column(i) - m.column(j)).norm_squared();
            }
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::Tuple;
    use proptest::prelude::*;

    fn tuple(s: f64, r: f64) -> Tuple {
        Tuple { s: vec![s], a: 0, r, s_next: vec![0.0] }
    }

    #[test]
    fn wst_feature_sorts_states_and_rewards() {
        let traj = Trajectory { user_id: 0, tuples: vec![tuple(3.0, 5.0), tuple(1.0, 2.0)] };
        assert_eq!(wst_feature(&traj, 2).unwrap().0, vec![1.0, 2.0, 3.0, 5.0]);
        let swapped = Trajectory { user_id: 0, tuples: vec![tuple(1.0, 2.0), tuple(3.0, 5.0)] };
        assert_eq!(wst_feature(&swapped, 2).unwrap(), wst_feature(&traj, 2).unwrap());
        assert!(wst_feature(&traj, 3).is_err());
    }

    #[test]
    fn wst_feature_length() {
        let tuples =
            (0..10).map(|i| Tuple { s: vec![i as f64, 0.5, -0.5], a: i % 2, r: 1.0, s_next: vec![0.0; 3] }).collect();
        let traj = Trajectory { user_id: 0, tuples };
        assert_eq!(wst_feature(&traj, 10).unwrap().0.len(), 40);
    }

    #[test]
    fn identical_features_break_ties_by_index() {
        let f = vec![WstFeature(vec![1.0, 2.0]); 3];
        assert_eq!(build_graph(&f, 1).unwrap().edges(), vec![(0, 1), (0, 2)]);
        assert_eq!(build_graph(&f, 2).unwrap().edges(), vec![(0, 1), (0, 2), (1, 2)]);
    }

    #[test]
    fn three_points_on_a_line() {
        let pts = [0.0, 1.0, 10.0];
        let f: Vec<_> = pts.iter().map(|&x| WstFeature(vec![x])).collect();
        // Exhaustive distance table: d(0,1)=1, d(0,10)=10, d(1,10)=9.
        // Nearest of 0 is 1, nearest of 1 is 0, nearest of 10 is 1.
        let g = build_graph(&f, 1).unwrap();
        assert_eq!(g.edges(), vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn k_must_be_below_n() {
        let f = vec![WstFeature(vec![0.0]); 3];
        assert!(build_graph(&f, 3).is_err());
        assert!(build_graph(&f, 2).is_ok());
    }

    #[test]
    fn two_node_quadratic_form() {
        let g = CohesionGraph::from_edges(2, 1, &[(0, 1)]).unwrap();
        let m = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        let trace = laplacian_quadratic(g.laplacian(), &m).unwrap();
        let pairs = pairwise_penalty(g.adjacency(), &m).unwrap();
        assert_eq!(trace, 1.0);
        assert_eq!(pairs, 1.0);
    }

    #[test]
    fn quadratic_form_null_space_and_scaling() {
        let g = CohesionGraph::from_edges(4, 1, &[(0, 1), (1, 2), (2, 3), (0, 3)]).unwrap();
        let constant = DMatrix::from_fn(3, 4, |i, _| i as f64 + 0.5);
        assert!(laplacian_quadratic(g.laplacian(), &constant).unwrap().abs() < 1e-12);
        let m = DMatrix::from_fn(3, 4, |i, j| (i * 4 + j) as f64 * 0.37 - 1.0);
        let q = laplacian_quadratic(g.laplacian(), &m).unwrap();
        let q3 = laplacian_quadratic(g.laplacian(), &(&m * 3.0)).unwrap();
        assert!((q3 - 9.0 * q).abs() < 1e-10 * q.abs().max(1.0));
        assert!(laplacian_quadratic(g.laplacian(), &DMatrix::zeros(3, 5)).is_err());
    }

    #[test]
    fn edge_list_round_trip() {
        let g = CohesionGraph::from_edges(5, 2, &[(0, 3), (1, 2), (2, 4)]).unwrap();
        let mut buf = Vec::new();
        g.write_edge_list(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# nodes=5 k=2 edges=3\n"));
        assert_eq!(CohesionGraph::read_edge_list(buf.as_slice()).unwrap(), g);
    }

    #[test]
    fn components_of_two_triangles() {
        let g = CohesionGraph::from_edges(6, 2, &[(0, 1), (1, 2), (0, 2), (3, 5), (4, 5)]).unwrap();
        assert_eq!(g.components(), vec![vec![0, 1, 2], vec![3, 4, 5]]);
        assert_eq!(CohesionGraph::empty(3).components(), vec![vec![0], vec![1], vec![2]]);
    }

    /// Directed KNN sets from a full distance table, then OR-symmetrized.
    fn brute_force_edges(points: &[Vec<f64>], k: usize) -> Vec<(usize, usize)> {
        let n = points.len();
        let dist: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| points[i].iter().zip(&points[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
                    .collect()
            })
            .collect();
        let mut linked = vec![vec![false; n]; n];
        for j in 0..n {
            let mut chosen = Vec::new();
            while chosen.len() < k {
                let mut best: Option<usize> = None;
                for i in 0..n {
                    if i == j || chosen.contains(&i) {
                        continue;
                    }
                    if best.is_none_or(|b| dist[i][j] < dist[b][j]) {
                        best = Some(i);
                    }
                }
                chosen.push(best.unwrap());
            }
            for i in chosen {
                linked[i][j] = true;
                linked[j][i] = true;
            }
        }
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if linked[i][j] {
                    edges.push((i, j));
                }
            }
        }
        edges
    }

    fn arb_points() -> impl Strategy<Value = (Vec<Vec<f64>>, usize)> {
        (2usize..=10, 1usize..5)
            .prop_flat_map(|(n, d)| (prop::collection::vec(prop::collection::vec(-3.0..3.0f64, d), n), 1..n))
    }

    proptest! {
        #[test]
        fn matches_brute_force_knn((points, k) in arb_points()) {
            let feats: Vec<_> = points.iter().map(|p| WstFeature(p.clone())).collect();
            let g = build_graph(&feats, k).unwrap();
            prop_assert_eq!(g.edges(), brute_force_edges(&points, k));
            prop_assert_eq!(g.adjacency(), &g.adjacency().transpose());
            for i in 0..points.len() {
                prop_assert_eq!(g.adjacency()[(i, i)], 0.0);
                prop_assert!(g.laplacian().row(i).sum().abs() < 1e-12);
            }
            prop_assert!(g.laplacian_min_eigenvalue() >= -1e-10);
        }

        #[test]
        fn edges_grow_with_k((points, k) in arb_points()) {
            let feats: Vec<_> = points.iter().map(|p| WstFeature(p.clone())).collect();
            prop_assume!(k + 1 < points.len());
            let small = build_graph(&feats, k).unwrap();
            let large = build_graph(&feats, k + 1).unwrap();
            for (i, j) in small.edges() {
                prop_assert!(large.has_edge(i, j));
            }
        }

        #[test]
        fn trace_equals_pairwise_sum(
            n in 2usize..8,
            u in 1usize..4,
            bits in prop::collection::vec(any::<bool>(), 28),
            vals in prop::collection::vec(-5.0..5.0f64, 32),
        ) {
            let mut edges = Vec::new();
            let mut b = bits.iter();
            for i in 0..n {
                for j in i + 1..n {
                    if *b.next().unwrap() {
                        edges.push((i, j));
                    }
                }
            }
            let g = CohesionGraph::from_edges(n, 0, &edges).unwrap();
            let m = DMatrix::from_fn(u, n, |r, c| vals[r * 8 + c]);
            let t = laplacian_quadratic(g.laplacian(), &m).unwrap();
            let p = pairwise_penalty(g.adjacency(), &m).unwrap();
            prop_assert!((t - p).abs() <= 1e-10 * p.abs().max(1.0));
        }
    }
}
