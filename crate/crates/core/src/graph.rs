//! Computation graphs: operation nodes, data-dependency edges, structural
//! statistics and the on-disk JSON schema.
//!
//! Each node is either a single operation or a pre-grouped block of
//! operations. Compute time is stored in integer microseconds so that files
//! round-trip exactly; [`OpNode::compute_time`] gives seconds.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Node times are stored in integer microseconds.
pub const US_PER_SEC: f64 = 1e6;

/// Dense node index, contiguous `0..N` within a graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpNode {
    pub id: NodeId,
    pub name: String,
    pub compute_time_us: u64,
    pub output_bytes: u64,
    pub memory_bytes: u64,
}

impl OpNode {
    /// Compute time in seconds.
    #[inline]
    pub fn compute_time(&self) -> f64 {
        self.compute_time_us as f64 / US_PER_SEC
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub src: NodeId,
    pub dst: NodeId,
}

/// A directed graph of operations. Adjacency lists are derived from the edge
/// list at construction and kept in edge-insertion order.
#[derive(Clone, Debug)]
pub struct ComputationGraph {
    nodes: Vec<OpNode>,
    edges: Vec<Edge>,
    preds: Vec<Vec<NodeId>>,
    succs: Vec<Vec<NodeId>>,
}

impl PartialEq for ComputationGraph {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes && self.edges == other.edges
    }
}

impl ComputationGraph {
    /// Assembles a graph from raw parts. Node ids must equal their position and
    /// every edge endpoint must name an existing node; everything else
    /// (cycles, duplicates, connectivity) is reported by [`validate`].
    pub fn from_parts(nodes: Vec<OpNode>, edges: Vec<Edge>) -> Result<Self> {
        for (pos, node) in nodes.iter().enumerate() {
            if node.id.0 != pos {
                return Err(Error::parse(
                    format!("nodes[{pos}].id"),
                    format!("expected id {pos}, found {}", node.id.0),
                ));
            }
        }
        let n = nodes.len();
        let mut preds = vec![Vec::new(); n];
        let mut succs = vec![Vec::new(); n];
        for (pos, e) in edges.iter().enumerate() {
            for (field, end) in [("src", e.src), ("dst", e.dst)] {
                if end.0 >= n {
                    return Err(Error::parse(
                        format!("edges[{pos}].{field}"),
                        format!("unknown node id {}", end.0),
                    ));
                }
            }
            succs[e.src.0].push(e.dst);
            preds[e.dst.0].push(e.src);
        }
        Ok(Self {
            nodes,
            edges,
            preds,
            succs,
        })
    }

    pub fn nodes(&self) -> &[OpNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node(&self, id: NodeId) -> &OpNode {
        &self.nodes[id.0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn preds(&self, id: NodeId) -> &[NodeId] {
        &self.preds[id.0]
    }

    pub fn succs(&self, id: NodeId) -> &[NodeId] {
        &self.succs[id.0]
    }

    pub fn node_ids(&self) -> impl ExactSizeIterator<Item = NodeId> + '_ {
        (0..self.nodes.len()).map(NodeId)
    }

    pub fn find(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().find(|n| n.name == name).map(|n| n.id)
    }

    pub fn name_index(&self) -> HashMap<&str, NodeId> {
        self.nodes.iter().map(|n| (n.name.as_str(), n.id)).collect()
    }

    /// Sum of all compute times in seconds, rounded once.
    pub fn total_compute(&self) -> f64 {
        self.nodes.iter().map(|n| n.compute_time_us).sum::<u64>() as f64 / US_PER_SEC
    }

    pub fn total_memory(&self) -> u64 {
        self.nodes.iter().map(|n| n.memory_bytes).sum()
    }

    /// Rank of every node when sorted by name (byte order).
    pub fn name_ranks(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = (0..self.nodes.len()).collect();
        ids.sort_by(|&a, &b| self.nodes[a].name.as_bytes().cmp(self.nodes[b].name.as_bytes()));
        let mut rank = vec![0; ids.len()];
        for (r, id) in ids.into_iter().enumerate() {
            rank[id] = r;
        }
        rank
    }

    /// Longest directed path weighted by compute time, in seconds.
    pub fn critical_path(&self) -> Result<f64> {
        let order = kahn(self).ok_or_else(|| Error::Cycle(self.len()))?;
        let mut finish = vec![0u64; self.len()];
        let mut best = 0u64;
        for v in order {
            let start = self.preds[v.0].iter().map(|p| finish[p.0]).max().unwrap_or(0);
            finish[v.0] = start + self.nodes[v.0].compute_time_us;
            best = best.max(finish[v.0]);
        }
        Ok(best as f64 / US_PER_SEC)
    }
}

/// Plain Kahn's algorithm in id order; `None` when a cycle exists.
pub(crate) fn kahn(graph: &ComputationGraph) -> Option<Vec<NodeId>> {
    let n = graph.len();
    let mut indeg: Vec<usize> = (0..n).map(|v| graph.preds[v].len()).collect();
    let mut queue: VecDeque<NodeId> = (0..n).filter(|&v| indeg[v] == 0).map(NodeId).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(v) = queue.pop_front() {
        order.push(v);
        for &w in &graph.succs[v.0] {
            indeg[w.0] -= 1;
            if indeg[w.0] == 0 {
                queue.push_back(w);
            }
        }
    }
    (order.len() == n).then_some(order)
}

/// Incremental construction used by the generators and tests.
#[derive(Debug, Default)]
pub struct GraphBuilder {
    nodes: Vec<OpNode>,
    edges: Vec<Edge>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(
        &mut self,
        name: impl Into<String>,
        compute_time_us: u64,
        output_bytes: u64,
        memory_bytes: u64,
    ) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(OpNode {
            id,
            name: name.into(),
            compute_time_us,
            output_bytes,
            memory_bytes,
        });
        id
    }

    pub fn add_edge(&mut self, src: NodeId, dst: NodeId) -> &mut Self {
        self.edges.push(Edge { src, dst });
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn build(self) -> Result<ComputationGraph> {
        ComputationGraph::from_parts(self.nodes, self.edges)
    }

    /// Builds and rejects graphs with any validation violation.
    pub fn build_valid(self) -> Result<ComputationGraph> {
        let graph = self.build()?;
        let violations = validate(&graph);
        if violations.is_empty() {
            Ok(graph)
        } else {
            Err(Error::Validation(violations))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    Empty,
    DuplicateName { name: String, ids: Vec<NodeId> },
    NonPositiveComputeTime { node: String },
    SelfLoop { node: String },
    DuplicateEdge { src: String, dst: String },
    /// Nodes that could not be topologically ordered.
    Cycle { nodes: Vec<String> },
    /// Nodes outside the weak component containing node 0.
    Disconnected { nodes: Vec<String> },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Empty => write!(f, "graph has no nodes"),
            Violation::DuplicateName { name, ids } => {
                let ids: Vec<String> = ids.iter().map(|i| i.0.to_string()).collect();
                write!(f, "duplicate node name {name:?} (ids {})", ids.join(", "))
            }
            Violation::NonPositiveComputeTime { node } => {
                write!(f, "node {node:?} has non-positive compute time")
            }
            Violation::SelfLoop { node } => write!(f, "self loop on {node:?}"),
            Violation::DuplicateEdge { src, dst } => {
                write!(f, "duplicate edge {src:?} -> {dst:?}")
            }
            Violation::Cycle { nodes } => write!(f, "cycle among {}", nodes.join(", ")),
            Violation::Disconnected { nodes } => {
                write!(f, "disconnected nodes {}", nodes.join(", "))
            }
        }
    }
}

/// Checks every structural invariant of a computation graph. An empty result
/// means the graph is a non-empty, weakly connected DAG with unique names.
pub fn validate(graph: &ComputationGraph) -> Vec<Violation> {
    let mut out = Vec::new();
    if graph.is_empty() {
        out.push(Violation::Empty);
        return out;
    }
    let name_of = |id: NodeId| graph.nodes[id.0].name.clone();

    let mut by_name: HashMap<&str, Vec<NodeId>> = HashMap::new();
    for n in &graph.nodes {
        by_name.entry(n.name.as_str()).or_default().push(n.id);
    }
    let mut dups: Vec<_> = by_name.into_iter().filter(|(_, ids)| ids.len() > 1).collect();
    dups.sort();
    for (name, ids) in dups {
        out.push(Violation::DuplicateName {
            name: name.to_string(),
            ids,
        });
    }

    for n in &graph.nodes {
        if n.compute_time_us == 0 {
            out.push(Violation::NonPositiveComputeTime {
                node: n.name.clone(),
            });
        }
    }

    let mut seen = HashSet::new();
    for e in &graph.edges {
        if e.src == e.dst {
            out.push(Violation::SelfLoop { node: name_of(e.src) });
        } else if !seen.insert((e.src, e.dst)) {
            out.push(Violation::DuplicateEdge {
                src: name_of(e.src),
                dst: name_of(e.dst),
            });
        }
    }

    if kahn(graph).is_none() {
        let order = partial_kahn(graph);
        let placed: HashSet<NodeId> = order.into_iter().collect();
        let nodes = graph
            .node_ids()
            .filter(|v| !placed.contains(v))
            .map(name_of)
            .collect();
        out.push(Violation::Cycle { nodes });
    }

    let comp = undirected_bfs(graph, NodeId(0));
    let unreached: Vec<String> = graph
        .node_ids()
        .filter(|v| comp[v.0] == usize::MAX)
        .map(name_of)
        .collect();
    if !unreached.is_empty() {
        out.push(Violation::Disconnected { nodes: unreached });
    }
    out
}

fn partial_kahn(graph: &ComputationGraph) -> Vec<NodeId> {
    let n = graph.len();
    let mut indeg: Vec<usize> = (0..n).map(|v| graph.preds[v].len()).collect();
    let mut stack: Vec<NodeId> = (0..n).filter(|&v| indeg[v] == 0).map(NodeId).collect();
    let mut order = Vec::new();
    while let Some(v) = stack.pop() {
        order.push(v);
        for &w in &graph.succs[v.0] {
            indeg[w.0] -= 1;
            if indeg[w.0] == 0 {
                stack.push(w);
            }
        }
    }
    order
}

/// Hop distances from `start` ignoring edge direction; unreachable = `usize::MAX`.
fn undirected_bfs(graph: &ComputationGraph, start: NodeId) -> Vec<usize> {
    let mut dist = vec![usize::MAX; graph.len()];
    let mut queue = VecDeque::new();
    dist[start.0] = 0;
    queue.push_back(start);
    while let Some(v) = queue.pop_front() {
        let d = dist[v.0] + 1;
        for &w in graph.preds[v.0].iter().chain(&graph.succs[v.0]) {
            if dist[w.0] == usize::MAX {
                dist[w.0] = d;
                queue.push_back(w);
            }
        }
    }
    dist
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub num_nodes: usize,
    pub num_edges: usize,
    /// Edges per node.
    pub avg_degree: f64,
    /// Longest shortest path (hops) in the undirected view.
    pub diameter: usize,
    /// Longest directed path in hops.
    pub longest_path: usize,
    pub num_sources: usize,
    pub num_sinks: usize,
}

pub fn graph_stats(graph: &ComputationGraph) -> GraphStats {
    let n = graph.len();
    let diameter = graph
        .node_ids()
        .map(|v| {
            undirected_bfs(graph, v)
                .into_iter()
                .filter(|&d| d != usize::MAX)
                .max()
                .unwrap_or(0)
        })
        .max()
        .unwrap_or(0);

    let mut longest_path = 0;
    if let Some(order) = kahn(graph) {
        let mut depth = vec![0usize; n];
        for v in order {
            for &w in &graph.succs[v.0] {
                depth[w.0] = depth[w.0].max(depth[v.0] + 1);
                longest_path = longest_path.max(depth[w.0]);
            }
        }
    }

    GraphStats {
        num_nodes: n,
        num_edges: graph.edges.len(),
        avg_degree: if n == 0 {
            0.0
        } else {
            graph.edges.len() as f64 / n as f64
        },
        diameter,
        longest_path,
        num_sources: sources(graph).len(),
        num_sinks: sinks(graph).len(),
    }
}

fn sorted_by_name(graph: &ComputationGraph, mut ids: Vec<NodeId>) -> Vec<NodeId> {
    ids.sort_by(|a, b| graph.nodes[a.0].name.as_bytes().cmp(graph.nodes[b.0].name.as_bytes()));
    ids
}

/// Nodes with in-degree zero, in name order.
pub fn sources(graph: &ComputationGraph) -> Vec<NodeId> {
    let ids = graph.node_ids().filter(|v| graph.preds[v.0].is_empty()).collect();
    sorted_by_name(graph, ids)
}

/// Nodes with out-degree zero, in name order.
pub fn sinks(graph: &ComputationGraph) -> Vec<NodeId> {
    let ids = graph.node_ids().filter(|v| graph.succs[v.0].is_empty()).collect();
    sorted_by_name(graph, ids)
}

#[derive(Serialize, Deserialize)]
struct GraphFile {
    nodes: Vec<OpNode>,
    edges: Vec<Edge>,
}

pub fn to_json(graph: &ComputationGraph) -> String {
    let file = GraphFile {
        nodes: graph.nodes.clone(),
        edges: graph.edges.clone(),
    };
    serde_json::to_string_pretty(&file).expect("graph serialization is infallible")
}

/// Parses and validates a graph document.
pub fn from_json(text: &str, context: &str) -> Result<ComputationGraph> {
    let file: GraphFile = serde_json::from_str(text).map_err(|e| Error::parse(context, e))?;
    let graph = ComputationGraph::from_parts(file.nodes, file.edges).map_err(|e| match e {
        Error::Parse { context: field, message } => Error::parse(format!("{context}: {field}"), message),
        other => other,
    })?;
    let violations = validate(&graph);
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    Ok(graph)
}

pub fn load_graph(path: impl AsRef<Path>) -> Result<ComputationGraph> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_json(&text, &path.display().to_string())
}

pub fn save_graph(graph: &ComputationGraph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_json(graph)).map_err(|e| Error::io(path, e))
}
