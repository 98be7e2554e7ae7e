//! Cluster communication graphs and their broadcast/reduce schedules.

mod build;
mod file;
mod schedule;

pub use build::{
    build_optimal_tree, build_ring, build_ring_of_rings, build_star, build_tree, build_tree_from_parents,
    parse_ring_spec, RingNode,
};
pub use file::{ClusterLayout, NodeEntry};
pub use schedule::{broadcast_schedule, reduce_schedule, ring_exchange_rounds, ring_order, BroadcastSchedule};

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    Star,
    Tree,
    Ring,
    RingOfRings,
    OptimalTree,
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TopologyKind::Star => "star",
            TopologyKind::Tree => "tree",
            TopologyKind::Ring => "ring",
            TopologyKind::RingOfRings => "ring_of_rings",
            TopologyKind::OptimalTree => "optimal_tree",
        };
        f.write_str(s)
    }
}

/// An undirected communication graph over nodes `0..node_count`.
///
/// Rooted kinds (star, tree, optimal tree) are trees with node 0 as the
/// master; `parents` records the tree structure. Optimal trees also carry
/// the creation-step label of every node.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    kind: TopologyKind,
    node_count: usize,
    edges: Vec<(usize, usize)>,
    root: Option<usize>,
    labels: Option<Vec<u32>>,
    parents: Option<Vec<Option<usize>>>,
    children: Vec<Vec<usize>>,
}

impl Topology {
    pub(crate) fn rooted(kind: TopologyKind, parents: Vec<Option<usize>>, labels: Option<Vec<u32>>) -> Self {
        let edges = parents
            .iter()
            .enumerate()
            .filter_map(|(child, p)| p.map(|p| (p, child)))
            .collect();
        let mut children = vec![Vec::new(); parents.len()];
        for (child, p) in parents.iter().enumerate() {
            if let Some(p) = p {
                children[*p].push(child);
            }
        }
        let label = |n: usize| labels.as_ref().map_or(0, |l| l[n]);
        for kids in &mut children {
            kids.sort_by_key(|&c| (label(c), c));
        }
        Self { kind, node_count: parents.len(), edges, root: Some(0), labels, parents: Some(parents), children }
    }

    pub(crate) fn unrooted(kind: TopologyKind, node_count: usize, edges: Vec<(usize, usize)>) -> Self {
        Self { kind, node_count, edges, root: None, labels: None, parents: None, children: vec![Vec::new(); node_count] }
    }

    pub fn kind(&self) -> TopologyKind {
        self.kind
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn root(&self) -> Option<usize> {
        self.root
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn parent(&self, node: usize) -> Option<usize> {
        self.parents.as_ref().and_then(|p| p[node])
    }

    /// Neighbour lists, each sorted by node id.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.node_count];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        for n in &mut adj {
            n.sort_unstable();
        }
        adj
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.adjacency().iter().map(Vec::len).collect()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.iter().any(|&(x, y)| (x == a && y == b) || (x == b && y == a))
    }

    /// Children of `node` in service order: lowest creation label first,
    /// ties by id. Empty for unrooted graphs.
    pub fn children(&self, node: usize) -> &[usize] {
        &self.children[node]
    }

    /// All nodes in the subtree rooted at `node`, including it.
    pub fn subtree(&self, node: usize) -> Vec<usize> {
        let mut out = vec![node];
        let mut i = 0;
        while i < out.len() {
            let n = out[i];
            out.extend_from_slice(self.children(n));
            i += 1;
        }
        out.sort_unstable();
        out
    }

    pub fn is_connected(&self) -> bool {
        if self.node_count == 0 {
            return false;
        }
        let adj = self.adjacency();
        let mut seen = vec![false; self.node_count];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(n) = stack.pop() {
            for &m in &adj[n] {
                if !seen[m] {
                    seen[m] = true;
                    stack.push(m);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Plain-text edge list, one `a,b` pair per line after an `a,b` header.
    pub fn edge_list_csv(&self) -> String {
        let mut s = String::from("a,b\n");
        for (a, b) in &self.edges {
            s.push_str(&format!("{a},{b}\n"));
        }
        s
    }
}
