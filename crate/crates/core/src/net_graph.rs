//! Communication topologies, Metropolis gossip weights and the spectral gap.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use nalgebra::SymmetricEigen;
use rand::Rng;

use crate::error::{Error, Result};
use crate::{rng, Matrix, Vector};

/// Above this size the spectral gap is computed by power iteration.
pub const DENSE_EIG_LIMIT: usize = 512;
/// Number of Erdős–Rényi draws before giving up on connectivity.
pub const ER_MAX_ATTEMPTS: usize = 100;
/// Tolerance for row/column sums in doubly stochastic checks.
pub const STOCHASTIC_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TopologyKind {
    Ring,
    Path,
    Star,
    Complete,
    ErdosRenyi,
    /// Loaded from an edge list.
    Custom,
}

impl TopologyKind {
    pub fn name(self) -> &'static str {
        match self {
            TopologyKind::Ring => "ring",
            TopologyKind::Path => "path",
            TopologyKind::Star => "star",
            TopologyKind::Complete => "complete",
            TopologyKind::ErdosRenyi => "erdos_renyi",
            TopologyKind::Custom => "custom",
        }
    }
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TopologyKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "ring" => Ok(TopologyKind::Ring),
            "path" => Ok(TopologyKind::Path),
            "star" => Ok(TopologyKind::Star),
            "complete" => Ok(TopologyKind::Complete),
            "erdos_renyi" | "er" => Ok(TopologyKind::ErdosRenyi),
            "custom" => Ok(TopologyKind::Custom),
            other => Err(format!("unknown topology '{other}'")),
        }
    }
}

/// Undirected connected graph without self-loops.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    m: usize,
    edges: Vec<(usize, usize)>,
    kind: TopologyKind,
}

impl Graph {
    /// Validates and normalises an edge set. Pairs are stored as `(i, j)`
    /// with `i < j`, sorted and deduplicated.
    pub fn new(m: usize, edges: &[(usize, usize)], kind: TopologyKind) -> Result<Self> {
        if m < 2 {
            return Err(Error::InvalidParams(format!(
                "need at least 2 nodes, got {m}"
            )));
        }
        let mut set = BTreeSet::new();
        for &(a, b) in edges {
            if a >= m || b >= m {
                return Err(Error::InvalidParams(format!(
                    "edge ({a},{b}) out of range for m={m}"
                )));
            }
            if a == b {
                return Err(Error::InvalidParams(format!("self-loop at node {a}")));
            }
            set.insert((a.min(b), a.max(b)));
        }
        let g = Graph {
            m,
            edges: set.into_iter().collect(),
            kind,
        };
        if !g.is_connected() {
            return Err(Error::Disconnected);
        }
        Ok(g)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn kind(&self) -> TopologyKind {
        self.kind
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.binary_search(&(i.min(j), i.max(j))).is_ok()
    }

    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut nb = vec![Vec::new(); self.m];
        for &(a, b) in &self.edges {
            nb[a].push(b);
            nb[b].push(a);
        }
        nb
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.neighbors().iter().map(Vec::len).collect()
    }

    pub fn is_connected(&self) -> bool {
        is_connected(self.m, &self.edges)
    }

    /// Edge-list text: first line `m k`, then `k` lines `i j`.
    pub fn to_edge_list(&self) -> String {
        let mut out = format!("{} {}\n", self.m, self.edges.len());
        for (a, b) in &self.edges {
            out.push_str(&format!("{a} {b}\n"));
        }
        out
    }

    pub fn from_edge_list(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (hl, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "empty edge list".into(),
        })?;
        let nums = parse_pair(header, hl + 1)?;
        let (m, k) = nums;
        let mut edges = Vec::with_capacity(k);
        for (ln, line) in lines {
            edges.push(parse_pair(line, ln + 1)?);
        }
        if edges.len() != k {
            return Err(Error::Parse {
                line: hl + 1,
                msg: format!("header announces {k} edges, found {}", edges.len()),
            });
        }
        Graph::new(m, &edges, TopologyKind::Custom)
    }
}

fn parse_pair(line: &str, ln: usize) -> Result<(usize, usize)> {
    let parts: Vec<&str> = line.split_whitespace().collect();
    let bad = || Error::Parse {
        line: ln,
        msg: format!("expected two non-negative integers, got '{line}'"),
    };
    if parts.len() != 2 {
        return Err(bad());
    }
    let a = parts[0].parse().map_err(|_| bad())?;
    let b = parts[1].parse().map_err(|_| bad())?;
    Ok((a, b))
}

/// Breadth-first connectivity check.
pub fn is_connected(m: usize, edges: &[(usize, usize)]) -> bool {
    if m == 0 {
        return false;
    }
    let mut nb = vec![Vec::new(); m];
    for &(a, b) in edges {
        nb[a].push(b);
        nb[b].push(a);
    }
    let mut seen = vec![false; m];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    let mut count = 1;
    while let Some(u) = queue.pop_front() {
        for &v in &nb[u] {
            if !seen[v] {
                seen[v] = true;
                count += 1;
                queue.push_back(v);
            }
        }
    }
    count == m
}

/// Builds one of the standard topologies. `p` is the edge probability and
/// is only used (and required) for Erdős–Rényi graphs.
pub fn build_topology(kind: TopologyKind, m: usize, p: Option<f64>, seed: u64) -> Result<Graph> {
    if m < 2 {
        return Err(Error::InvalidParams(format!(
            "need at least 2 nodes, got {m}"
        )));
    }
    let edges: Vec<(usize, usize)> = match kind {
        TopologyKind::Ring => (0..m).map(|i| (i, (i + 1) % m)).collect(),
        TopologyKind::Path => (0..m - 1).map(|i| (i, i + 1)).collect(),
        TopologyKind::Star => (1..m).map(|i| (0, i)).collect(),
        TopologyKind::Complete => (0..m)
            .flat_map(|i| (i + 1..m).map(move |j| (i, j)))
            .collect(),
        TopologyKind::ErdosRenyi => {
            let p = p.ok_or_else(|| {
                Error::InvalidParams("erdos_renyi needs an edge probability".into())
            })?;
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::InvalidParams(format!(
                    "edge probability {p} outside (0,1]"
                )));
            }
            let mut r = rng::aux_stream(seed, 0x6572);
            for _ in 0..ER_MAX_ATTEMPTS {
                let mut edges = Vec::new();
                for i in 0..m {
                    for j in i + 1..m {
                        if r.random::<f64>() < p {
                            edges.push((i, j));
                        }
                    }
                }
                if is_connected(m, &edges) {
                    return Graph::new(m, &edges, kind);
                }
            }
            return Err(Error::DisconnectedAfterRetries(ER_MAX_ATTEMPTS));
        }
        TopologyKind::Custom => {
            return Err(Error::InvalidParams(
                "custom graphs are loaded from edge lists".into(),
            ))
        }
    };
    Graph::new(m, &edges, kind)
}

/// Doubly stochastic gossip matrix together with its spectral gap.
#[derive(Clone, Debug)]
pub struct WeightMatrix {
    w: Matrix,
    rho: f64,
    rows: Vec<Vec<(usize, f64)>>,
}

impl WeightMatrix {
    /// Wraps an arbitrary doubly stochastic matrix.
    pub fn from_matrix(w: Matrix) -> Result<Self> {
        let rho = spectral_gap(&w)?;
        let rows = (0..w.nrows())
            .map(|i| {
                (0..w.ncols())
                    .filter(|&j| w[(i, j)] != 0.0)
                    .map(|j| (j, w[(i, j)]))
                    .collect()
            })
            .collect();
        Ok(WeightMatrix { w, rho, rows })
    }

    pub fn w(&self) -> &Matrix {
        &self.w
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn m(&self) -> usize {
        self.w.nrows()
    }

    /// One gossip exchange: returns `sum_j w_ij u_j` for every node.
    pub fn mix(&self, u: &[Vector]) -> Vec<Vector> {
        self.rows.iter().map(|row| self.mix_row(row, u)).collect()
    }

    /// Gossip result for node `i` only.
    pub fn mix_node(&self, i: usize, u: &[Vector]) -> Vector {
        self.mix_row(&self.rows[i], u)
    }

    fn mix_row(&self, row: &[(usize, f64)], u: &[Vector]) -> Vector {
        let mut acc = Vector::zeros(u[0].len());
        for &(j, wij) in row {
            acc.axpy(wij, &u[j], 1.0);
        }
        acc
    }
}

/// Metropolis rule: `w_ij = 1/(1 + max(deg_i, deg_j))` on edges, diagonal
/// fills the row to one.
pub fn metropolis_weights(g: &Graph) -> WeightMatrix {
    let m = g.m();
    let deg = g.degrees();
    let mut w = Matrix::zeros(m, m);
    for &(a, b) in g.edges() {
        let v = 1.0 / (1.0 + deg[a].max(deg[b]) as f64);
        w[(a, b)] = v;
        w[(b, a)] = v;
    }
    for i in 0..m {
        let off: f64 = (0..m).filter(|&j| j != i).map(|j| w[(i, j)]).sum();
        w[(i, i)] = 1.0 - off;
    }
    WeightMatrix::from_matrix(w).expect("Metropolis weights are doubly stochastic")
}

fn stochastic_deviation(w: &Matrix) -> f64 {
    let mut dev: f64 = 0.0;
    for i in 0..w.nrows() {
        dev = dev.max((w.row(i).sum() - 1.0).abs());
    }
    for j in 0..w.ncols() {
        dev = dev.max((w.column(j).sum() - 1.0).abs());
    }
    dev
}

fn centered(w: &Matrix) -> Matrix {
    let m = w.nrows();
    w - Matrix::from_element(m, m, 1.0 / m as f64)
}

/// `rho = ||W - 11^T/m||^2`, the squared second-largest singular value.
pub fn spectral_gap(w: &Matrix) -> Result<f64> {
    if w.nrows() != w.ncols() || w.nrows() == 0 {
        return Err(Error::InvalidDimensions(format!(
            "{}x{} weight matrix",
            w.nrows(),
            w.ncols()
        )));
    }
    let dev = stochastic_deviation(w);
    if !(dev <= STOCHASTIC_TOL) {
        return Err(Error::NotDoublyStochastic(dev));
    }
    if w.nrows() <= DENSE_EIG_LIMIT {
        Ok(spectral_gap_eig(w))
    } else {
        Ok(spectral_gap_power(w, 1e-10))
    }
}

/// Largest eigenvalue of `(W-J)^T (W-J)` from a dense eigendecomposition.
pub fn spectral_gap_eig(w: &Matrix) -> f64 {
    let c = centered(w);
    let gram = c.transpose() * &c;
    let eig = SymmetricEigen::new(gram);
    eig.eigenvalues.iter().cloned().fold(0.0, f64::max).max(0.0)
}

/// Same quantity by power iteration on `(W-J)^T (W-J)`. Stops when the
/// eigen-residual drops below `tol`.
pub fn spectral_gap_power(w: &Matrix, tol: f64) -> f64 {
    let m = w.nrows();
    let c = centered(w);
    let gram = c.transpose() * &c;
    let mut r = rng::aux_stream(0, 0x706f776572);
    let mut x = Vector::from_fn(m, |_, _| r.random::<f64>() - 0.5);
    let n = x.norm();
    if n == 0.0 {
        return 0.0;
    }
    x /= n;
    let mut est = 0.0;
    for _ in 0..1_000_000 {
        let y = &gram * &x;
        est = x.dot(&y);
        let resid = (&y - &x * est).norm();
        let ny = y.norm();
        if ny == 0.0 {
            return 0.0;
        }
        if resid <= tol {
            break;
        }
        x = y / ny;
    }
    est.max(0.0)
}

/// One failed check of the gossip-matrix assumptions.
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    Shape { rows: usize, cols: usize, m: usize },
    Asymmetric { i: usize, j: usize, diff: f64 },
    Negative { i: usize, j: usize, value: f64 },
    RowSum { i: usize, sum: f64 },
    ColSum { j: usize, sum: f64 },
    ZeroOnEdge { i: usize, j: usize },
    NonzeroOffEdge { i: usize, j: usize, value: f64 },
    SpectralGap { rho: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Shape { rows, cols, m } => {
                write!(f, "matrix is {rows}x{cols}, graph has {m} nodes")
            }
            Violation::Asymmetric { i, j, diff } => {
                write!(f, "w[{i}][{j}] != w[{j}][{i}] (diff {diff:e})")
            }
            Violation::Negative { i, j, value } => write!(f, "w[{i}][{j}] = {value} is negative"),
            Violation::RowSum { i, sum } => write!(f, "row {i} sums to {sum}"),
            Violation::ColSum { j, sum } => write!(f, "column {j} sums to {sum}"),
            Violation::ZeroOnEdge { i, j } => write!(f, "w[{i}][{j}]=0 on edge ({i},{j})"),
            Violation::NonzeroOffEdge { i, j, value } => {
                write!(f, "w[{i}][{j}] = {value} but ({i},{j}) is not an edge")
            }
            Violation::SpectralGap { rho } => write!(f, "spectral gap rho = {rho} is not below 1"),
        }
    }
}

/// Checks symmetry, sign, sparsity pattern, stochasticity and `rho < 1`.
/// An empty report means every check passed.
pub fn validate_assumption1(w: &Matrix, g: &Graph) -> Vec<Violation> {
    let m = g.m();
    if w.nrows() != m || w.ncols() != m {
        return vec![Violation::Shape {
            rows: w.nrows(),
            cols: w.ncols(),
            m,
        }];
    }
    let mut out = Vec::new();
    for i in 0..m {
        for j in 0..m {
            let v = w[(i, j)];
            if j > i && v != w[(j, i)] {
                out.push(Violation::Asymmetric {
                    i,
                    j,
                    diff: v - w[(j, i)],
                });
            }
            if v < 0.0 {
                out.push(Violation::Negative { i, j, value: v });
            }
            if i != j {
                let edge = g.has_edge(i, j);
                if edge && v == 0.0 {
                    out.push(Violation::ZeroOnEdge { i, j });
                } else if !edge && v != 0.0 {
                    out.push(Violation::NonzeroOffEdge { i, j, value: v });
                }
            }
        }
    }
    for i in 0..m {
        let s = w.row(i).sum();
        if (s - 1.0).abs() > STOCHASTIC_TOL {
            out.push(Violation::RowSum { i, sum: s });
        }
        let c = w.column(i).sum();
        if (c - 1.0).abs() > STOCHASTIC_TOL {
            out.push(Violation::ColSum { j: i, sum: c });
        }
    }
    let rho = spectral_gap_eig(w);
    if !(rho < 1.0) {
        out.push(Violation::SpectralGap { rho });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ring_and_star_edges() {
        let g = build_topology(TopologyKind::Ring, 4, None, 0).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (0, 3), (1, 2), (2, 3)]);
        let s = build_topology(TopologyKind::Star, 4, None, 0).unwrap();
        assert_eq!(s.edges(), &[(0, 1), (0, 2), (0, 3)]);
        assert_eq!(s.degrees(), vec![3, 1, 1, 1]);
    }

    #[test]
    fn rejects_bad_graphs() {
        assert!(matches!(
            Graph::new(3, &[(0, 1)], TopologyKind::Custom),
            Err(Error::Disconnected)
        ));
        assert!(Graph::new(3, &[(0, 0), (1, 2)], TopologyKind::Custom).is_err());
        assert!(Graph::new(3, &[(0, 3)], TopologyKind::Custom).is_err());
        assert!(build_topology(TopologyKind::Ring, 1, None, 0).is_err());
        assert!(build_topology(TopologyKind::ErdosRenyi, 5, Some(0.0), 0).is_err());
        assert!(build_topology(TopologyKind::ErdosRenyi, 5, None, 0).is_err());
    }

    #[test]
    fn er_gives_up_when_sparse() {
        let r = build_topology(TopologyKind::ErdosRenyi, 40, Some(1e-4), 1);
        assert!(matches!(r, Err(Error::DisconnectedAfterRetries(100))));
    }

    #[test]
    fn path_metropolis() {
        let g = build_topology(TopologyKind::Path, 3, None, 0).unwrap();
        let w = metropolis_weights(&g);
        let expect = Matrix::from_row_slice(
            3,
            3,
            &[
                2. / 3.,
                1. / 3.,
                0.,
                1. / 3.,
                1. / 3.,
                1. / 3.,
                0.,
                1. / 3.,
                2. / 3.,
            ],
        );
        assert!((w.w() - expect).amax() < 1e-15);
        assert!((w.rho() - 4.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn complete_two_nodes() {
        let g = build_topology(TopologyKind::Complete, 2, None, 0).unwrap();
        let w = metropolis_weights(&g);
        assert!((w.w() - Matrix::from_element(2, 2, 0.5)).amax() < 1e-15);
        assert!(w.rho().abs() < 1e-15);
    }

    #[test]
    fn averaging_matrix_has_zero_gap() {
        let j = Matrix::from_element(3, 3, 1.0 / 3.0);
        assert!(spectral_gap(&j).unwrap().abs() < 1e-15);
    }

    #[test]
    fn non_stochastic_rejected() {
        let mut w = Matrix::identity(3, 3);
        w[(0, 0)] = 1.1;
        assert!(matches!(
            spectral_gap(&w),
            Err(Error::NotDoublyStochastic(_))
        ));
    }

    #[test]
    fn validation_reports() {
        let g = build_topology(TopologyKind::Ring, 5, None, 0).unwrap();
        assert!(validate_assumption1(metropolis_weights(&g).w(), &g).is_empty());

        let mut w = metropolis_weights(&g).w().clone();
        w[(0, 0)] += 0.1;
        let rep = validate_assumption1(&w, &g);
        assert!(rep.contains(&Violation::RowSum {
            i: 0,
            sum: w.row(0).sum()
        }));

        let rep = validate_assumption1(&Matrix::identity(5, 5), &g);
        assert!(rep
            .iter()
            .any(|v| matches!(v, Violation::ZeroOnEdge { .. })));
        assert!(rep
            .iter()
            .any(|v| matches!(v, Violation::SpectralGap { .. })));
        assert!(rep.iter().any(|v| v.to_string().contains("=0 on edge")));
    }

    #[test]
    fn edge_list_round_trip() {
        let g = build_topology(TopologyKind::ErdosRenyi, 8, Some(0.5), 7).unwrap();
        let text = g.to_edge_list();
        let back = Graph::from_edge_list(&text).unwrap();
        assert_eq!(back.edges(), g.edges());
        assert!(Graph::from_edge_list("3 2\n0 1\n").is_err());
        assert!(Graph::from_edge_list("3 1\n0 x\n").is_err());
    }

    #[test]
    fn mix_matches_matrix_product() {
        let g = build_topology(TopologyKind::Star, 4, None, 0).unwrap();
        let w = metropolis_weights(&g);
        let u: Vec<Vector> = (0..4)
            .map(|i| Vector::from_vec(vec![i as f64, 1.0]))
            .collect();
        let mixed = w.mix(&u);
        for i in 0..4 {
            let mut e = Vector::zeros(2);
            for j in 0..4 {
                e += &u[j] * w.w()[(i, j)];
            }
            assert!((&mixed[i] - e).norm() < 1e-15);
        }
    }
}
