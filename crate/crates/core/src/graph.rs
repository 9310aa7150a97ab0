//! Directed graphs over node indices, with the closure queries used by the
//! SEM machinery: parents/children/ancestors/descendants and zig-zag
//! reachability through latent nodes.

use std::collections::{BTreeSet, VecDeque};

use crate::error::{Error, Result};

/// A directed graph on nodes `0..node_count`. An edge `(j, i)` points from
/// `j` to `i`, matching the convention that coefficient `a_ij` is the direct
/// effect of node `j` on node `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectedGraph {
    node_count: usize,
    edges: BTreeSet<(usize, usize)>,
    labels: Option<Vec<String>>,
}

/// Parents, children, ancestors and descendants of one node.
///
/// A node lying on a directed cycle through itself is its own ancestor and
/// descendant; otherwise the closures exclude the node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Relatives {
    pub parents: BTreeSet<usize>,
    pub children: BTreeSet<usize>,
    pub ancestors: BTreeSet<usize>,
    pub descendants: BTreeSet<usize>,
}

impl DirectedGraph {
    /// Build a graph from explicit edges. Rejects self-loops and
    /// out-of-range endpoints.
    pub fn new(node_count: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (from, to) in edges {
            if from == to {
                return Err(Error::InvalidConfig(format!("self-loop at node {from}")));
            }
            if from >= node_count || to >= node_count {
                return Err(Error::InvalidConfig(format!(
                    "edge ({from}, {to}) out of range for {node_count} nodes"
                )));
            }
            set.insert((from, to));
        }
        Ok(Self { node_count, edges: set, labels: None })
    }

    /// Attach display labels, one per node.
    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.node_count {
            return Err(Error::DimensionMismatch { expected: self.node_count, got: labels.len() });
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.edges.contains(&(from, to))
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    /// Nodes with an edge into `node`, in ascending order.
    pub fn parents(&self, node: usize) -> Vec<usize> {
        self.edges.iter().filter(|(_, i)| *i == node).map(|(j, _)| *j).collect()
    }

    /// Nodes `node` points to, in ascending order.
    pub fn children(&self, node: usize) -> Vec<usize> {
        let mut out: Vec<usize> =
            self.edges.iter().filter(|(j, _)| *j == node).map(|(_, i)| *i).collect();
        out.sort_unstable();
        out
    }

    /// Parents, children, ancestors and descendants of `node`.
    pub fn relatives(&self, node: usize) -> Result<Relatives> {
        if node >= self.node_count {
            return Err(Error::InvalidConfig(format!("node {node} out of range")));
        }
        let parents: BTreeSet<usize> = self.parents(node).into_iter().collect();
        let children: BTreeSet<usize> = self.children(node).into_iter().collect();
        Ok(Relatives {
            parents,
            children,
            ancestors: self.reach(node, Direction::Backward),
            descendants: self.reach(node, Direction::Forward),
        })
    }

    /// Nodes reachable from `start` by at least one edge (forward) or that
    /// reach `start` (backward). `start` itself appears only when it lies on
    /// a cycle.
    fn reach(&self, start: usize, dir: Direction) -> BTreeSet<usize> {
        let mut seen = BTreeSet::new();
        let mut queue: VecDeque<usize> = match dir {
            Direction::Forward => self.children(start).into(),
            Direction::Backward => self.parents(start).into(),
        };
        while let Some(node) = queue.pop_front() {
            if !seen.insert(node) {
                continue;
            }
            let next = match dir {
                Direction::Forward => self.children(node),
                Direction::Backward => self.parents(node),
            };
            queue.extend(next);
        }
        seen
    }

    /// Observed nodes reachable from `latent_start` through directed paths
    /// whose interior nodes are all latent.
    pub(crate) fn latent_reach(&self, latent_start: usize, latent: &BTreeSet<usize>) -> BTreeSet<usize> {
        let mut observed_hits = BTreeSet::new();
        let mut seen_latent = BTreeSet::new();
        let mut queue = VecDeque::from([latent_start]);
        seen_latent.insert(latent_start);
        while let Some(node) = queue.pop_front() {
            for child in self.children(node) {
                if latent.contains(&child) {
                    if seen_latent.insert(child) {
                        queue.push_back(child);
                    }
                } else {
                    observed_hits.insert(child);
                }
            }
        }
        observed_hits
    }
}

#[derive(Clone, Copy)]
enum Direction {
    Forward,
    Backward,
}

/// Whether observed nodes `i` and `j` are linked by a chain of shared latent
/// sources: each hop connects two observed nodes that are both reachable
/// from one latent node through latent-interior paths. Such chains are
/// exactly where the marginalized noise precision may be non-zero.
///
/// `i == j` is trivially reachable. Panics are avoided; out-of-range or
/// latent endpoints simply yield `false`.
pub fn zigzag_reachable(graph: &DirectedGraph, latent: &BTreeSet<usize>, i: usize, j: usize) -> bool {
    if i >= graph.node_count() || j >= graph.node_count() {
        return false;
    }
    if latent.contains(&i) || latent.contains(&j) {
        return false;
    }
    if i == j {
        return true;
    }
    // Union-find style BFS over the "shares a latent source" relation.
    let groups: Vec<BTreeSet<usize>> =
        latent.iter().map(|&l| graph.latent_reach(l, latent)).collect();
    let mut connected = BTreeSet::from([i]);
    let mut grew = true;
    while grew {
        grew = false;
        for group in &groups {
            if group.iter().any(|n| connected.contains(n)) {
                for &n in group {
                    if connected.insert(n) {
                        grew = true;
                    }
                }
            }
        }
    }
    connected.contains(&j)
}
