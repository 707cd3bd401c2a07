//! Static port-level connectivity graph.

use std::collections::VecDeque;

use crate::engine::{NodeId, PortId};

#[derive(Debug, Clone, Default)]
pub struct Topology {
    /// adjacency[n] = (local port, neighbour, neighbour port)
    adjacency: Vec<Vec<(PortId, NodeId, PortId)>>,
}

impl Topology {
    pub fn new(nodes: usize) -> Self {
        Topology {
            adjacency: vec![Vec::new(); nodes],
        }
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn connect(&mut self, a: (NodeId, PortId), b: (NodeId, PortId)) {
        self.adjacency[a.0 .0].push((a.1, b.0, b.1));
        self.adjacency[b.0 .0].push((b.1, a.0, a.1));
    }

    pub fn neighbours(&self, node: NodeId) -> &[(PortId, NodeId, PortId)] {
        &self.adjacency[node.0]
    }

    pub fn peer(&self, node: NodeId, port: PortId) -> Option<(NodeId, PortId)> {
        self.adjacency[node.0]
            .iter()
            .find(|(p, _, _)| *p == port)
            .map(|&(_, n, np)| (n, np))
    }

    /// Shortest path as a list of `(node, egress port)` hops, excluding the destination.
    /// Neighbours are explored in port order, so ties resolve deterministically.
    pub fn path(&self, from: NodeId, to: NodeId) -> Option<Vec<(NodeId, PortId)>> {
        if from == to {
            return Some(Vec::new());
        }
        let n = self.adjacency.len();
        let mut prev: Vec<Option<(NodeId, PortId)>> = vec![None; n];
        let mut seen = vec![false; n];
        seen[from.0] = true;
        let mut frontier = VecDeque::from([from]);
        while let Some(u) = frontier.pop_front() {
            let mut nbrs = self.adjacency[u.0].clone();
            nbrs.sort_by_key(|(p, _, _)| *p);
            for (port, v, _) in nbrs {
                if seen[v.0] {
                    continue;
                }
                seen[v.0] = true;
                prev[v.0] = Some((u, port));
                if v == to {
                    let mut hops = Vec::new();
                    let mut cur = to;
                    while let Some((p, port)) = prev[cur.0] {
                        hops.push((p, port));
                        cur = p;
                    }
                    hops.reverse();
                    return Some(hops);
                }
                frontier.push_back(v);
            }
        }
        None
    }

    pub fn is_connected(&self) -> bool {
        if self.adjacency.is_empty() {
            return true;
        }
        let start = NodeId(0);
        (0..self.adjacency.len()).all(|i| self.path(start, NodeId(i)).is_some())
    }
}
