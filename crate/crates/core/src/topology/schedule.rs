use std::fmt::Write as _;

use super::Topology;
use crate::error::{Error, Result};

/// Rounds of simultaneous point-to-point transfers, `(sender, receiver)`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BroadcastSchedule {
    pub rounds: Vec<Vec<(usize, usize)>>,
}

impl BroadcastSchedule {
    pub fn round_count(&self) -> usize {
        self.rounds.len()
    }

    pub fn transfer_count(&self) -> usize {
        self.rounds.iter().map(Vec::len).sum()
    }

    /// The same transfers in reverse round order with directions flipped.
    pub fn reversed(&self) -> BroadcastSchedule {
        BroadcastSchedule {
            rounds: self
                .rounds
                .iter()
                .rev()
                .map(|r| r.iter().map(|&(s, d)| (d, s)).collect())
                .collect(),
        }
    }

    /// Checks the broadcast invariants: senders already hold the datum, no
    /// node appears twice in a round, every pair is a link, and every node
    /// holds the datum at the end.
    pub fn validate_broadcast(&self, topology: &Topology, root: usize) -> Result<()> {
        let n = topology.node_count();
        let mut has = vec![false; n];
        has[root] = true;
        for (r, round) in self.rounds.iter().enumerate() {
            let mut seen = vec![false; n];
            for &(s, d) in round {
                if s >= n || d >= n {
                    return Err(Error::validation(format!("round {r}: node out of range in ({s},{d})")));
                }
                if !has[s] {
                    return Err(Error::validation(format!("round {r}: sender {s} does not hold the datum")));
                }
                if has[d] {
                    return Err(Error::validation(format!("round {r}: receiver {d} already holds the datum")));
                }
                if seen[s] || seen[d] || s == d {
                    return Err(Error::validation(format!("round {r}: node used twice")));
                }
                if !topology.has_edge(s, d) {
                    return Err(Error::validation(format!("round {r}: ({s},{d}) is not a link")));
                }
                seen[s] = true;
                seen[d] = true;
            }
            for &(_, d) in round {
                has[d] = true;
            }
        }
        if let Some(missing) = has.iter().position(|h| !h) {
            return Err(Error::validation(format!("node {missing} never receives the datum")));
        }
        Ok(())
    }

    /// `round,sender,receiver` CSV, rounds numbered from 1.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("round,sender,receiver\n");
        for (r, round) in self.rounds.iter().enumerate() {
            for (a, b) in round {
                let _ = writeln!(s, "{},{a},{b}", r + 1);
            }
        }
        s
    }
}

/// Every informed node sends, each round, to its not-yet-served child with
/// the smallest creation label (ties by id). For the optimal tree this takes
/// `ceil(log2 p)` rounds.
pub fn broadcast_schedule(t: &Topology) -> Result<BroadcastSchedule> {
    let root = t
        .root()
        .ok_or_else(|| Error::UnsupportedSchedule(format!("{} topology has no root; use ring_allreduce", t.kind())))?;
    let n = t.node_count();
    let mut informed = vec![root];
    let mut next_child = vec![0usize; n];
    let mut count = 1;
    let mut rounds = Vec::new();
    while count < n {
        let mut round = Vec::new();
        for &node in &informed {
            let kids = t.children(node);
            if let Some(&c) = kids.get(next_child[node]) {
                next_child[node] += 1;
                round.push((node, c));
            }
        }
        if round.is_empty() {
            return Err(Error::validation("topology is not connected from the root"));
        }
        count += round.len();
        informed.extend(round.iter().map(|&(_, c)| c));
        informed.sort_unstable();
        round.sort_unstable();
        rounds.push(round);
    }
    Ok(BroadcastSchedule { rounds })
}

/// Exact reversal of the broadcast: partial results flow child to parent.
pub fn reduce_schedule(t: &Topology) -> Result<BroadcastSchedule> {
    Ok(broadcast_schedule(t)?.reversed())
}

/// Node ids of a simple cycle in traversal order from node 0. A single link
/// between two nodes counts as a ring of two.
pub fn ring_order(ring: &Topology) -> Result<Vec<usize>> {
    let q = ring.node_count();
    if q < 2 {
        return Err(Error::validation("a ring needs at least two nodes"));
    }
    if q == 2 {
        return if ring.edges().len() == 1 {
            Ok(vec![0, 1])
        } else {
            Err(Error::validation("two-node ring must have exactly one link"))
        };
    }
    let adj = ring.adjacency();
    if ring.edges().len() != q || adj.iter().any(|n| n.len() != 2) {
        return Err(Error::validation("topology is not a simple cycle"));
    }
    let mut order = vec![0];
    let mut prev = 0;
    let mut cur = adj[0][0];
    while cur != 0 && order.len() <= q {
        order.push(cur);
        let next = if adj[cur][0] == prev { adj[cur][1] } else { adj[cur][0] };
        prev = cur;
        cur = next;
    }
    if order.len() != q {
        return Err(Error::validation("topology is not a single connected cycle"));
    }
    Ok(order)
}

/// Neighbour-exchange rounds on a ring. Nodes at even positions (E) send to
/// their left neighbours (R) in the even round; in the odd round every E
/// receives from its right neighbour. Each link carries exactly one transfer
/// per two rounds. An odd ring needs a third round for its closing link.
pub fn ring_exchange_rounds(ring: &Topology) -> Result<Vec<Vec<(usize, usize)>>> {
    let order = ring_order(ring)?;
    let q = order.len();
    let left = |p: usize| order[(p + q - 1) % q];
    let right = |p: usize| order[(p + 1) % q];
    let even_positions: Vec<usize> = (0..q).step_by(2).collect();
    let mut even = Vec::new();
    let mut odd = Vec::new();
    let mut closing = Vec::new();
    for &p in &even_positions {
        let me = order[p];
        if q % 2 == 1 && p == 0 {
            // Position 0 and q-1 are both E on an odd ring.
            closing.push((me, left(p)));
        } else {
            even.push((me, left(p)));
        }
        if p + 1 < q {
            odd.push((right(p), me));
        }
    }
    let mut rounds = vec![even, odd];
    if !closing.is_empty() {
        rounds.push(closing);
    }
    Ok(rounds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{build_optimal_tree, build_ring, build_star, build_tree, build_tree_from_parents};

    fn ceil_log2(p: usize) -> usize {
        let mut r = 0;
        while (1usize << r) < p {
            r += 1;
        }
        r
    }

    #[test]
    fn star_of_ten_takes_nine_rounds() {
        let s = broadcast_schedule(&build_star(10)).unwrap();
        assert_eq!(s.round_count(), 9);
        for (r, round) in s.rounds.iter().enumerate() {
            assert_eq!(round, &vec![(0, r + 1)]);
        }
        assert_eq!(broadcast_schedule(&build_star(16)).unwrap().round_count(), 15);
    }

    #[test]
    fn optimal_tree_round_counts() {
        assert_eq!(broadcast_schedule(&build_optimal_tree(2)).unwrap().round_count(), 1);
        assert_eq!(broadcast_schedule(&build_optimal_tree(16)).unwrap().round_count(), 4);
        assert_eq!(broadcast_schedule(&build_optimal_tree(9)).unwrap().round_count(), 4);
        assert_eq!(broadcast_schedule(&build_optimal_tree(1024)).unwrap().round_count(), 10);
        assert_eq!(broadcast_schedule(&build_star(1024)).unwrap().round_count(), 1023);
        assert_eq!(broadcast_schedule(&build_optimal_tree(1)).unwrap().round_count(), 0);
    }

    #[test]
    fn optimal_tree_schedule_valid_and_minimal() {
        for p in 2..=300 {
            let t = build_optimal_tree(p);
            let s = broadcast_schedule(&t).unwrap();
            s.validate_broadcast(&t, 0).unwrap();
            assert_eq!(s.round_count(), ceil_log2(p), "p={p}");
        }
    }

    #[test]
    fn no_idle_informed_node_in_optimal_tree() {
        for p in [5, 13, 16, 37, 100] {
            let t = build_optimal_tree(p);
            let s = broadcast_schedule(&t).unwrap();
            let mut has = vec![false; p];
            has[0] = true;
            let mut served = vec![0usize; p];
            for round in &s.rounds {
                for node in 0..p {
                    if has[node] && served[node] < t.children(node).len() {
                        assert!(round.iter().any(|&(a, _)| a == node), "node {node} idle");
                    }
                }
                for &(a, b) in round {
                    served[a] += 1;
                    has[b] = true;
                }
            }
        }
    }

    #[test]
    fn reduce_is_reversed_broadcast() {
        let t = build_optimal_tree(6);
        let b = broadcast_schedule(&t).unwrap();
        let r = reduce_schedule(&t).unwrap();
        assert_eq!(r.round_count(), b.round_count());
        assert_eq!(r.rounds[0], b.rounds.last().unwrap().iter().map(|&(s, d)| (d, s)).collect::<Vec<_>>());
        assert_eq!(r.reversed(), b);
    }

    #[test]
    fn two_level_tree_versus_star_of_seven() {
        // Enumerated by hand: root serves both mid nodes in rounds 1-2; the
        // second mid node needs two more rounds for its leaves.
        let tree = build_tree(&[2, 2]).unwrap();
        assert_eq!(reduce_schedule(&tree).unwrap().round_count(), 4);
        assert_eq!(reduce_schedule(&build_star(7)).unwrap().round_count(), 6);
    }

    #[test]
    fn mixed_depth_collection_takes_three_rounds() {
        // MM(0) with children Ms1(1), Ms2(2), S3(3); S1(4) under Ms1, S2(5) under Ms2.
        let t = build_tree_from_parents(&[None, Some(0), Some(0), Some(0), Some(1), Some(2)]).unwrap();
        assert_eq!(reduce_schedule(&t).unwrap().round_count(), 3);
        assert_eq!(reduce_schedule(&build_star(6)).unwrap().round_count(), 5);
    }

    #[test]
    fn one_level_tree_schedule_equals_star() {
        for q in 1..20 {
            let a = broadcast_schedule(&build_tree(&[q.max(1)]).unwrap()).unwrap();
            let b = broadcast_schedule(&build_star(q + 1)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn rings_have_no_broadcast_schedule() {
        let r = build_ring(5).unwrap();
        assert!(matches!(broadcast_schedule(&r), Err(Error::UnsupportedSchedule(_))));
    }

    #[test]
    fn even_ring_exchange_uses_each_link_once() {
        let ring = build_ring(6).unwrap();
        let rounds = ring_exchange_rounds(&ring).unwrap();
        assert_eq!(rounds.len(), 2);
        let mut used: Vec<(usize, usize)> = rounds
            .iter()
            .flatten()
            .map(|&(a, b)| (a.min(b), a.max(b)))
            .collect();
        used.sort_unstable();
        let mut links: Vec<(usize, usize)> = ring.edges().iter().map(|&(a, b)| (a.min(b), a.max(b))).collect();
        links.sort_unstable();
        assert_eq!(used, links);
        for round in &rounds {
            let mut nodes: Vec<usize> = round.iter().flat_map(|&(a, b)| [a, b]).collect();
            nodes.sort_unstable();
            nodes.dedup();
            assert_eq!(nodes.len(), 2 * round.len());
        }
        // E nodes (even) send left in the even round.
        assert!(rounds[0].iter().all(|&(a, _)| a % 2 == 0));
        assert!(rounds[1].iter().all(|&(_, b)| b % 2 == 0));
    }

    #[test]
    fn odd_ring_exchange_needs_three_rounds() {
        let ring = build_ring(5).unwrap();
        let rounds = ring_exchange_rounds(&ring).unwrap();
        assert_eq!(rounds.len(), 3);
        assert_eq!(rounds.iter().map(Vec::len).sum::<usize>(), 5);
    }
}
