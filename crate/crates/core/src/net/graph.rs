//! Node lattice of the nested encoder–decoder.
//!
//! Node `x[k][v]` sits at depth `k` and lateral position `v`. Encoders are
//! `v = 0, k < D`, the bottleneck is `(D, 0)`, decoders are `v = D − k`, and
//! everything strictly between is an intermediate node. A node with `v > 0`
//! consumes `x[k][0..v]` plus the upsampled `x[k+1][v−1]`, so it has `v + 1`
//! inputs.

use std::fmt;

use crate::net::config::NetConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId {
    pub k: usize,
    pub v: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeRole {
    Encoder,
    Bottleneck,
    Intermediate,
    Decoder,
}

impl NodeId {
    pub fn new(k: usize, v: usize) -> Self {
        Self { k, v }
    }

    pub fn role(&self, depth: usize) -> NodeRole {
        if self.k == depth {
            NodeRole::Bottleneck
        } else if self.v == 0 {
            NodeRole::Encoder
        } else if self.v == depth - self.k {
            NodeRole::Decoder
        } else {
            NodeRole::Intermediate
        }
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "x[{},{}]", self.k, self.v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgeKind {
    /// Strided-conv downsampling into the next encoder.
    Down,
    /// Same-level skip connection.
    Skip,
    /// Transposed-conv upsampling from the level below.
    Up,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Edge {
    pub from: NodeId,
    pub to: NodeId,
    pub kind: EdgeKind,
}

#[derive(Clone, Debug)]
pub struct NodeGraph {
    pub depth: usize,
    /// Nodes in a valid evaluation order.
    pub nodes: Vec<NodeId>,
    pub edges: Vec<Edge>,
}

impl NodeGraph {
    /// Incoming edges of `node` in concatenation order: skips by ascending
    /// `v`, then the upsampled input.
    pub fn inputs(&self, node: NodeId) -> Vec<Edge> {
        self.edges.iter().copied().filter(|e| e.to == node).collect()
    }

    pub fn in_degree(&self, node: NodeId) -> usize {
        self.edges.iter().filter(|e| e.to == node).count()
    }

    pub fn decoder(&self, k: usize) -> NodeId {
        NodeId::new(k, self.depth - k)
    }

    /// Position of each node in `nodes`; every edge must point forward.
    pub fn is_topologically_ordered(&self) -> bool {
        let pos = |n: NodeId| self.nodes.iter().position(|&m| m == n);
        self.edges.iter().all(|e| match (pos(e.from), pos(e.to)) {
            (Some(a), Some(b)) => a < b,
            _ => false,
        })
    }
}

/// Builds the lattice for `cfg` (nested or plain skips).
pub fn node_graph(cfg: &NetConfig) -> NodeGraph {
    let d = cfg.depth;
    assert!(d >= 1, "depth must be at least 1");
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    for k in 0..=d {
        let n = NodeId::new(k, 0);
        nodes.push(n);
        if k > 0 {
            edges.push(Edge {
                from: NodeId::new(k - 1, 0),
                to: n,
                kind: EdgeKind::Down,
            });
        }
    }
    for v in 1..=d {
        for k in 0..=(d - v) {
            let is_decoder = v == d - k;
            if !cfg.use_nested && !is_decoder {
                continue;
            }
            let n = NodeId::new(k, v);
            nodes.push(n);
            let skips = if cfg.use_nested { v } else { 1 };
            for i in 0..skips {
                edges.push(Edge {
                    from: NodeId::new(k, i),
                    to: n,
                    kind: EdgeKind::Skip,
                });
            }
            edges.push(Edge {
                from: NodeId::new(k + 1, v - 1),
                to: n,
                kind: EdgeKind::Up,
            });
        }
    }
    NodeGraph { depth: d, nodes, edges }
}
