use std::fmt::Write as _;

use super::{build_tree_from_parents, Topology};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeEntry {
    pub id: usize,
    pub parent: Option<usize>,
    pub endpoint: String,
}

/// A rooted topology plus one `host:port` endpoint per node.
///
/// Text form: one line per node, `id parent endpoint`, separated by commas
/// or whitespace; the root's parent is `-`. Blank lines and `#` comments are
/// ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterLayout {
    pub topology: Topology,
    pub endpoints: Vec<String>,
}

impl ClusterLayout {
    pub fn new(topology: Topology, endpoints: Vec<String>) -> Result<Self> {
        if topology.root().is_none() {
            return Err(Error::validation("cluster layouts need a rooted topology"));
        }
        if endpoints.len() != topology.node_count() {
            return Err(Error::validation(format!(
                "{} endpoints for {} nodes",
                endpoints.len(),
                topology.node_count()
            )));
        }
        Ok(Self { topology, endpoints })
    }

    /// Loopback endpoints on consecutive ports starting at `base_port`.
    pub fn loopback(topology: Topology, base_port: u16) -> Result<Self> {
        let endpoints = (0..topology.node_count()).map(|i| format!("127.0.0.1:{}", base_port as usize + i)).collect();
        Self::new(topology, endpoints)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<NodeEntry> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(|c: char| c == ',' || c.is_whitespace()).filter(|f| !f.is_empty()).collect();
            let parse_err = |message: String| Error::Parse { line: lineno + 1, message };
            if fields.len() != 3 {
                return Err(parse_err(format!("expected `id parent endpoint`, got {} fields", fields.len())));
            }
            let id = fields[0].parse::<usize>().map_err(|e| parse_err(format!("bad node id: {e}")))?;
            let parent = match fields[1] {
                "-" => None,
                p => Some(p.parse::<usize>().map_err(|e| parse_err(format!("bad parent id: {e}")))?),
            };
            let endpoint = fields[2].to_string();
            if !endpoint.contains(':') {
                return Err(parse_err(format!("endpoint `{endpoint}` is not host:port")));
            }
            entries.push(NodeEntry { id, parent, endpoint });
        }
        if entries.is_empty() {
            return Err(Error::validation("topology file lists no nodes"));
        }
        entries.sort_by_key(|e| e.id);
        for (i, e) in entries.iter().enumerate() {
            if e.id != i {
                return Err(Error::validation(format!("node ids must be 0..{} without gaps", entries.len())));
            }
        }
        let parents: Vec<Option<usize>> = entries.iter().map(|e| e.parent).collect();
        let topology = build_tree_from_parents(&parents)?;
        Self::new(topology, entries.into_iter().map(|e| e.endpoint).collect())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# id parent endpoint\n");
        for (i, ep) in self.endpoints.iter().enumerate() {
            let parent = self.topology.parent(i).map_or("-".to_string(), |p| p.to_string());
            let _ = writeln!(s, "{i} {parent} {ep}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{broadcast_schedule, build_optimal_tree};

    #[test]
    fn text_round_trip_keeps_schedule() {
        let layout = ClusterLayout::loopback(build_optimal_tree(11), 7100).unwrap();
        let back = ClusterLayout::parse(&layout.to_text()).unwrap();
        assert_eq!(back.endpoints, layout.endpoints);
        assert_eq!(
            broadcast_schedule(&back.topology).unwrap(),
            broadcast_schedule(&layout.topology).unwrap()
        );
    }

    #[test]
    fn accepts_commas_and_comments() {
        let text = "# cluster\n0,-,10.0.0.1:9000\n1, 0, 10.0.0.2:9000  # slave\n\n2 0 10.0.0.3:9000\n";
        let l = ClusterLayout::parse(text).unwrap();
        assert_eq!(l.topology.node_count(), 3);
        assert_eq!(l.endpoints[1], "10.0.0.2:9000");
    }

    #[test]
    fn reports_line_numbers() {
        let err = ClusterLayout::parse("0 - a:1\n1 x a:2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        assert!(ClusterLayout::parse("0 - a:1\n2 0 a:2\n").is_err());
        assert!(ClusterLayout::parse("").is_err());
        assert!(ClusterLayout::parse("0 - nohost\n").is_err());
    }
}
