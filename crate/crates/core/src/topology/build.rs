use super::{Topology, TopologyKind};
use crate::error::{Error, Result};

/// Master (node 0) directly linked to every other node.
pub fn build_star(q: usize) -> Topology {
    let q = q.max(1);
    let parents = (0..q).map(|i| if i == 0 { None } else { Some(0) }).collect();
    Topology::rooted(TopologyKind::Star, parents, None)
}

/// Level-ordered tree: the root has `fanouts[0]` children, each of those has
/// `fanouts[1]` children and so on. Ids are assigned breadth-first.
pub fn build_tree(fanouts: &[usize]) -> Result<Topology> {
    if fanouts.is_empty() {
        return Err(Error::validation("tree needs at least one level"));
    }
    if fanouts.contains(&0) {
        return Err(Error::validation("tree fanouts must be at least 1"));
    }
    let mut parents = vec![None];
    let mut level = vec![0usize];
    for &f in fanouts {
        let mut next = Vec::with_capacity(level.len() * f);
        for &p in &level {
            for _ in 0..f {
                next.push(parents.len());
                parents.push(Some(p));
            }
        }
        level = next;
    }
    Ok(Topology::rooted(TopologyKind::Tree, parents, None))
}

/// Arbitrary rooted tree from a parent table; node 0 must be the only root.
pub fn build_tree_from_parents(parents: &[Option<usize>]) -> Result<Topology> {
    let n = parents.len();
    if n == 0 {
        return Err(Error::validation("tree needs at least one node"));
    }
    if parents[0].is_some() {
        return Err(Error::validation("node 0 must be the root"));
    }
    for (i, p) in parents.iter().enumerate().skip(1) {
        match p {
            None => return Err(Error::validation(format!("node {i} has no parent; only node 0 may be the root"))),
            Some(p) if *p >= n => return Err(Error::validation(format!("node {i} has unknown parent {p}"))),
            Some(p) if *p == i => return Err(Error::validation(format!("node {i} is its own parent"))),
            _ => {}
        }
    }
    // Every node must reach the root.
    for start in 0..n {
        let mut cur = start;
        let mut hops = 0;
        while let Some(p) = parents[cur] {
            cur = p;
            hops += 1;
            if hops > n {
                return Err(Error::validation(format!("parent table has a cycle through node {start}")));
            }
        }
    }
    Ok(Topology::rooted(TopologyKind::Tree, parents.to_vec(), None))
}

/// Simple cycle `0 - 1 - ... - (q-1) - 0`.
pub fn build_ring(q: usize) -> Result<Topology> {
    if q < 3 {
        return Err(Error::validation(format!("ring size {q} is below 3")));
    }
    let edges = (0..q).map(|i| (i, (i + 1) % q)).collect();
    Ok(Topology::unrooted(TopologyKind::Ring, q, edges))
}

/// One position of a ring: a plain machine, or a lower-level ring whose
/// first member is the junction machine occupying this position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RingNode {
    Machine,
    Ring(Vec<RingNode>),
}

impl RingNode {
    /// Subring of `n` plain machines.
    pub fn ring_of(n: usize) -> RingNode {
        RingNode::Ring(vec![RingNode::Machine; n])
    }
}

/// Ring of rings. Each node belongs to at most two rings, so no node has
/// more than four links.
pub fn build_ring_of_rings(top: &[RingNode]) -> Result<Topology> {
    let mut edges = Vec::new();
    let mut next_id = 0usize;
    place_ring(top, None, &mut next_id, &mut edges)?;
    Ok(Topology::unrooted(TopologyKind::RingOfRings, next_id, edges))
}

fn place_ring(
    members: &[RingNode],
    junction: Option<usize>,
    next_id: &mut usize,
    edges: &mut Vec<(usize, usize)>,
) -> Result<()> {
    if members.len() < 3 {
        return Err(Error::validation(format!("ring size {} is below 3", members.len())));
    }
    if junction.is_some() && members[0] != RingNode::Machine {
        return Err(Error::validation("the junction position of a subring must be a plain machine"));
    }
    let mut ids = Vec::with_capacity(members.len());
    for (pos, m) in members.iter().enumerate() {
        let id = match (pos, junction) {
            (0, Some(j)) => j,
            _ => {
                let id = *next_id;
                *next_id += 1;
                id
            }
        };
        ids.push(id);
        if let RingNode::Ring(sub) = m {
            place_ring(sub, Some(id), next_id, edges)?;
        }
    }
    for i in 0..ids.len() {
        edges.push((ids[i], ids[(i + 1) % ids.len()]));
    }
    Ok(())
}

/// Parses `[4,4,4]` (three subrings of four), `[m,m,[m,m,5],m]` and the like.
/// `m` is a plain machine, a number `n >= 3` a subring of `n` machines, and a
/// bracketed list a nested ring. A bare number is a simple ring.
pub fn parse_ring_spec(text: &str) -> Result<Vec<RingNode>> {
    let chars: Vec<char> = text.chars().filter(|c| !c.is_whitespace()).collect();
    if let Ok(n) = chars.iter().collect::<String>().parse::<usize>() {
        return Ok(vec![RingNode::Machine; n]);
    }
    let mut pos = 0;
    let ring = parse_list(&chars, &mut pos)?;
    if pos != chars.len() {
        return Err(Error::validation(format!("trailing input in ring spec at offset {pos}")));
    }
    Ok(ring)
}

fn parse_list(chars: &[char], pos: &mut usize) -> Result<Vec<RingNode>> {
    if chars.get(*pos) != Some(&'[') {
        return Err(Error::validation(format!("expected '[' at offset {pos}")));
    }
    *pos += 1;
    let mut items = Vec::new();
    loop {
        match chars.get(*pos) {
            Some('[') => items.push(RingNode::Ring(parse_list(chars, pos)?)),
            Some('m') | Some('M') => {
                *pos += 1;
                items.push(RingNode::Machine);
            }
            Some(c) if c.is_ascii_digit() => {
                let start = *pos;
                while chars.get(*pos).is_some_and(|c| c.is_ascii_digit()) {
                    *pos += 1;
                }
                let n: usize = chars[start..*pos].iter().collect::<String>().parse().unwrap();
                items.push(if n == 1 { RingNode::Machine } else { RingNode::ring_of(n) });
            }
            other => return Err(Error::validation(format!("unexpected {other:?} in ring spec at offset {pos}"))),
        }
        match chars.get(*pos) {
            Some(',') => *pos += 1,
            Some(']') => {
                *pos += 1;
                return Ok(items);
            }
            other => return Err(Error::validation(format!("expected ',' or ']' at offset {pos}, found {other:?}"))),
        }
    }
}

/// Doubling construction: node 0 carries label 0; at step `s` every existing
/// node gains one child labelled `s`. After `k = floor(log2 p)` steps there
/// are `2^k` nodes; the remaining `p - 2^k` nodes hang as leaves labelled
/// `k + 1` from the lowest-labelled nodes, one per node.
pub fn build_optimal_tree(p: usize) -> Topology {
    let p = p.max(1);
    let k = usize::BITS - 1 - p.leading_zeros();
    let mut parents: Vec<Option<usize>> = vec![None];
    let mut labels: Vec<u32> = vec![0];
    for step in 1..=k {
        let existing = parents.len();
        for node in 0..existing {
            parents.push(Some(node));
            labels.push(step);
        }
    }
    // Ids follow creation order, so label order is id order.
    let extra = p - parents.len();
    for node in 0..extra {
        parents.push(Some(node));
        labels.push(k + 1);
    }
    Topology::rooted(TopologyKind::OptimalTree, parents, Some(labels))
}
