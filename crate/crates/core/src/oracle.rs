//! Combinatorial oracle for the path matrix: every entry is assembled from
//! simple paths and disjoint-cycle corrections instead of a matrix inverse.
//! Deliberately brute force, capped at [`ORACLE_NODE_CAP`] nodes, and kept
//! independent of the linear-algebra route so the two can cross-check each
//! other.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::graph::DirectedGraph;
use crate::sem::{LinearSem, SV_TOL};

/// Enumeration cap; combinatorial cost explodes beyond this.
pub const ORACLE_NODE_CAP: usize = 10;

#[derive(Clone, Copy)]
struct Cycle {
    mask: u32,
    product: f64,
}

/// Total causal effect of `j` on `i`, for every pair, computed by summing
/// over simple paths `j ~> i` the product of edge weights times a signed
/// correction over collections of node-disjoint cycles avoiding the path,
/// normalized by `det(I - A)` (evaluated numerically).
///
/// `weight(from, to)` must return the coefficient attached to each edge of
/// `graph`; it is only called on existing edges.
pub fn path_matrix_oracle(
    graph: &DirectedGraph,
    weight: impl Fn(usize, usize) -> f64,
) -> Result<DMatrix<f64>> {
    let n = graph.node_count();
    if n > ORACLE_NODE_CAP {
        return Err(Error::OracleScaleExceeded { nodes: n, cap: ORACLE_NODE_CAP });
    }
    let mut a = DMatrix::zeros(n, n);
    for (from, to) in graph.edges() {
        a[(to, from)] = weight(from, to);
    }
    let i_minus_a = DMatrix::identity(n, n) - &a;
    let sv = i_minus_a.singular_values();
    if !(sv.min() > SV_TOL * sv.max()) {
        return Err(Error::NonInvertibleSem { min_singular: sv.min() });
    }
    let det = i_minus_a.determinant();

    // Sorted child lists keep the DFS order deterministic.
    let children: Vec<Vec<usize>> = (0..n).map(|u| graph.children(u)).collect();
    let cycles = enumerate_cycles(n, &children, &a);

    let mut out = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..n {
            let paths = if i == j {
                vec![(1u32 << j, 1.0)]
            } else {
                let mut acc = Vec::new();
                collect_paths(&children, &a, j, i, 1 << j, 1.0, &mut acc);
                acc
            };
            let mut total = 0.0;
            for (mask, product) in paths {
                total += product * disjoint_cycle_factor(&cycles, mask);
            }
            out[(i, j)] = total / det;
        }
    }
    Ok(out)
}

/// DFS over simple paths from `cur`'s frontier to `target`.
fn collect_paths(
    children: &[Vec<usize>],
    a: &DMatrix<f64>,
    cur: usize,
    target: usize,
    mask: u32,
    product: f64,
    acc: &mut Vec<(u32, f64)>,
) {
    for &c in &children[cur] {
        let w = a[(c, cur)];
        if c == target {
            acc.push((mask | (1 << c), product * w));
        } else if mask & (1 << c) == 0 {
            collect_paths(children, a, c, target, mask | (1 << c), product * w, acc);
        }
    }
}

/// All simple directed cycles, each enumerated once with its minimal node as
/// the canonical starting point.
fn enumerate_cycles(n: usize, children: &[Vec<usize>], a: &DMatrix<f64>) -> Vec<Cycle> {
    fn dfs(
        children: &[Vec<usize>],
        a: &DMatrix<f64>,
        start: usize,
        cur: usize,
        mask: u32,
        product: f64,
        acc: &mut Vec<Cycle>,
    ) {
        for &c in &children[cur] {
            let w = a[(c, cur)];
            if c == start {
                acc.push(Cycle { mask, product: product * w });
            } else if c > start && mask & (1 << c) == 0 {
                dfs(children, a, start, c, mask | (1 << c), product * w, acc);
            }
        }
    }
    let mut acc = Vec::new();
    for s in 0..n {
        dfs(children, a, s, s, 1 << s, 1.0, &mut acc);
    }
    acc
}

/// `sum over collections of pairwise disjoint cycles avoiding `used` of
/// `(-1)^q * prod(cycle products)`, including the empty collection (`1`).
fn disjoint_cycle_factor(cycles: &[Cycle], used: u32) -> f64 {
    fn rec(cycles: &[Cycle], idx: usize, used: u32) -> f64 {
        if idx == cycles.len() {
            return 1.0;
        }
        let mut total = rec(cycles, idx + 1, used);
        let c = cycles[idx];
        if c.mask & used == 0 {
            total -= c.product * rec(cycles, idx + 1, used | c.mask);
        }
        total
    }
    rec(cycles, 0, used)
}

impl LinearSem {
    /// [`path_matrix_oracle`] applied to this SEM's graph and coefficients.
    pub fn path_matrix_oracle(&self) -> Result<DMatrix<f64>> {
        let a = self.coefficients().clone();
        path_matrix_oracle(&self.graph(), |from, to| a[(to, from)])
    }
}
