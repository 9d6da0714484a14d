//! The six node orderings used to sequence per-node placement decisions.
//!
//! Every order is deterministic: whenever several nodes are eligible, the one
//! whose name sorts first (byte order) wins. DFS and BFS start from all
//! source nodes, taken in name order.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{sources, ComputationGraph, NodeId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraversalKind {
    Topo,
    ReversedTopo,
    DfsPreorder,
    DfsPostorder,
    Bfs,
    Lexico,
}

impl TraversalKind {
    pub const ALL: [TraversalKind; 6] = [
        TraversalKind::Topo,
        TraversalKind::ReversedTopo,
        TraversalKind::DfsPreorder,
        TraversalKind::DfsPostorder,
        TraversalKind::Bfs,
        TraversalKind::Lexico,
    ];

    /// Column order of the best-order tables; also the tie-break precedence.
    pub const TABLE_ORDER: [TraversalKind; 6] = [
        TraversalKind::Lexico,
        TraversalKind::Topo,
        TraversalKind::DfsPreorder,
        TraversalKind::ReversedTopo,
        TraversalKind::DfsPostorder,
        TraversalKind::Bfs,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TraversalKind::Topo => "topo",
            TraversalKind::ReversedTopo => "reversed-topo",
            TraversalKind::DfsPreorder => "dfs-preorder",
            TraversalKind::DfsPostorder => "dfs-postorder",
            TraversalKind::Bfs => "bfs",
            TraversalKind::Lexico => "lexico",
        }
    }

    /// Short table header label.
    pub fn column(self) -> &'static str {
        match self {
            TraversalKind::Topo => "topo",
            TraversalKind::ReversedTopo => "rev_topo",
            TraversalKind::DfsPreorder => "dfs_pre",
            TraversalKind::DfsPostorder => "dfs_post",
            TraversalKind::Bfs => "bfs",
            TraversalKind::Lexico => "lexico",
        }
    }

    pub fn precedence(self) -> usize {
        Self::TABLE_ORDER.iter().position(|&k| k == self).unwrap()
    }
}

impl fmt::Display for TraversalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TraversalKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == norm || k.column().replace('_', "-") == norm)
            .ok_or_else(|| Error::parse("traversal kind", format!("unknown order {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Traversal {
    pub kind: TraversalKind,
    pub order: Vec<NodeId>,
}

impl Traversal {
    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Position of every node in the sequence.
    pub fn positions(&self) -> Vec<usize> {
        let mut pos = vec![usize::MAX; self.order.len()];
        for (i, v) in self.order.iter().enumerate() {
            pos[v.0] = i;
        }
        pos
    }
}

/// Children of `v` sorted by name rank.
fn sorted_succs(graph: &ComputationGraph, ranks: &[usize]) -> Vec<Vec<NodeId>> {
    graph
        .node_ids()
        .map(|v| {
            let mut s = graph.succs(v).to_vec();
            s.sort_by_key(|w| ranks[w.0]);
            s.dedup();
            s
        })
        .collect()
}

pub fn topo_order(graph: &ComputationGraph) -> Result<Traversal> {
    let ranks = graph.name_ranks();
    let mut indeg: Vec<usize> = graph.node_ids().map(|v| graph.preds(v).len()).collect();
    let mut ready: BinaryHeap<Reverse<(usize, NodeId)>> = graph
        .node_ids()
        .filter(|v| indeg[v.0] == 0)
        .map(|v| Reverse((ranks[v.0], v)))
        .collect();
    let mut order = Vec::with_capacity(graph.len());
    while let Some(Reverse((_, v))) = ready.pop() {
        order.push(v);
        for &w in graph.succs(v) {
            indeg[w.0] -= 1;
            if indeg[w.0] == 0 {
                ready.push(Reverse((ranks[w.0], w)));
            }
        }
    }
    if order.len() != graph.len() {
        return Err(Error::Cycle(graph.len() - order.len()));
    }
    Ok(Traversal {
        kind: TraversalKind::Topo,
        order,
    })
}

pub fn reversed_topo_order(graph: &ComputationGraph) -> Result<Traversal> {
    let mut t = topo_order(graph)?;
    t.order.reverse();
    t.kind = TraversalKind::ReversedTopo;
    Ok(t)
}

/// Shared DFS: returns (preorder, postorder).
fn dfs(graph: &ComputationGraph) -> (Vec<NodeId>, Vec<NodeId>) {
    let ranks = graph.name_ranks();
    let children = sorted_succs(graph, &ranks);
    let mut visited = vec![false; graph.len()];
    let mut pre = Vec::with_capacity(graph.len());
    let mut post = Vec::with_capacity(graph.len());
    let mut stack: Vec<(NodeId, usize)> = Vec::new();
    for root in sources(graph) {
        if visited[root.0] {
            continue;
        }
        visited[root.0] = true;
        pre.push(root);
        stack.push((root, 0));
        while let Some((v, next)) = stack.last_mut() {
            let v = *v;
            if let Some(&w) = children[v.0].get(*next) {
                *next += 1;
                if !visited[w.0] {
                    visited[w.0] = true;
                    pre.push(w);
                    stack.push((w, 0));
                }
            } else {
                post.push(v);
                stack.pop();
            }
        }
    }
    (pre, post)
}

pub fn dfs_preorder(graph: &ComputationGraph) -> Traversal {
    Traversal {
        kind: TraversalKind::DfsPreorder,
        order: dfs(graph).0,
    }
}

pub fn dfs_postorder(graph: &ComputationGraph) -> Traversal {
    Traversal {
        kind: TraversalKind::DfsPostorder,
        order: dfs(graph).1,
    }
}

pub fn bfs_order(graph: &ComputationGraph) -> Traversal {
    let ranks = graph.name_ranks();
    let children = sorted_succs(graph, &ranks);
    let mut visited = vec![false; graph.len()];
    let mut queue = VecDeque::new();
    for s in sources(graph) {
        visited[s.0] = true;
        queue.push_back(s);
    }
    let mut order = Vec::with_capacity(graph.len());
    while let Some(v) = queue.pop_front() {
        order.push(v);
        for &w in &children[v.0] {
            if !visited[w.0] {
                visited[w.0] = true;
                queue.push_back(w);
            }
        }
    }
    Traversal {
        kind: TraversalKind::Bfs,
        order,
    }
}

/// Nodes sorted by byte-wise name comparison; a strict prefix sorts first.
pub fn lexico_order(graph: &ComputationGraph) -> Result<Traversal> {
    let mut order: Vec<NodeId> = graph.node_ids().collect();
    order.sort_by(|a, b| {
        graph
            .node(*a)
            .name
            .as_bytes()
            .cmp(graph.node(*b).name.as_bytes())
    });
    if let Some(w) = order
        .windows(2)
        .find(|w| graph.node(w[0]).name == graph.node(w[1]).name)
    {
        return Err(Error::parse(
            "node names",
            format!("duplicate name {:?}", graph.node(w[0]).name),
        ));
    }
    Ok(Traversal {
        kind: TraversalKind::Lexico,
        order,
    })
}

pub fn traverse(graph: &ComputationGraph, kind: TraversalKind) -> Result<Traversal> {
    match kind {
        TraversalKind::Topo => topo_order(graph),
        TraversalKind::ReversedTopo => reversed_topo_order(graph),
        TraversalKind::DfsPreorder => Ok(dfs_preorder(graph)),
        TraversalKind::DfsPostorder => Ok(dfs_postorder(graph)),
        TraversalKind::Bfs => Ok(bfs_order(graph)),
        TraversalKind::Lexico => lexico_order(graph),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::fixtures::*;

    fn seq(g: &ComputationGraph, kind: TraversalKind) -> Vec<String> {
        names(g, &traverse(g, kind).unwrap().order)
    }

    #[test]
    fn diamond_orders() {
        let d = diamond();
        assert_eq!(seq(&d, TraversalKind::Topo), ["a", "b", "c", "d"]);
        assert_eq!(seq(&d, TraversalKind::ReversedTopo), ["d", "c", "b", "a"]);
        assert_eq!(seq(&d, TraversalKind::DfsPreorder), ["a", "b", "d", "c"]);
        assert_eq!(seq(&d, TraversalKind::DfsPostorder), ["d", "b", "c", "a"]);
        assert_eq!(seq(&d, TraversalKind::Bfs), ["a", "b", "c", "d"]);
        assert_eq!(seq(&d, TraversalKind::Lexico), ["a", "b", "c", "d"]);
    }

    #[test]
    fn path_orders() {
        let p = graph(&[("a", 1), ("b", 1), ("c", 1)], &[("a", "b"), ("b", "c")]);
        assert_eq!(seq(&p, TraversalKind::Topo), ["a", "b", "c"]);
        assert_eq!(seq(&p, TraversalKind::ReversedTopo), ["c", "b", "a"]);
        assert_eq!(seq(&p, TraversalKind::DfsPreorder), ["a", "b", "c"]);
        assert_eq!(seq(&p, TraversalKind::DfsPostorder), ["c", "b", "a"]);
        assert_eq!(seq(&p, TraversalKind::Bfs), ["a", "b", "c"]);
    }

    #[test]
    fn single_node_orders() {
        let g = graph(&[("only", 1)], &[]);
        for kind in TraversalKind::ALL {
            assert_eq!(seq(&g, kind), ["only"]);
        }
    }

    #[test]
    fn dfs_sources_in_name_order() {
        let g = graph(
            &[("y", 1), ("r2", 1), ("x", 1), ("r1", 1), ("j", 1)],
            &[("r1", "x"), ("r2", "y"), ("x", "j"), ("y", "j")],
        );
        // Two source subtrees joined at a common sink so the graph stays connected.
        assert_eq!(seq(&g, TraversalKind::DfsPreorder), ["r1", "x", "j", "r2", "y"]);

        let disjoint = graph(&[("y", 1), ("r2", 1), ("x", 1), ("r1", 1)], &[("r1", "x"), ("r2", "y")]);
        assert_eq!(seq(&disjoint, TraversalKind::DfsPreorder), ["r1", "x", "r2", "y"]);
    }

    #[test]
    fn star_bfs() {
        let g = graph(
            &[("a", 1), ("d", 1), ("c", 1), ("b", 1)],
            &[("a", "d"), ("a", "c"), ("a", "b")],
        );
        assert_eq!(seq(&g, TraversalKind::Bfs), ["a", "b", "c", "d"]);
    }

    #[test]
    fn lexico_prefix_and_digits() {
        let g = graph(
            &[
                ("decoder/attention_decoder/attn_10/concat", 1),
                ("decoder/attention_decoder/attn_1/concat", 1),
                ("decoder/attention_decoder/attn_0/concat", 1),
            ],
            &[],
        );
        assert_eq!(
            seq(&g, TraversalKind::Lexico),
            [
                "decoder/attention_decoder/attn_0/concat",
                "decoder/attention_decoder/attn_1/concat",
                "decoder/attention_decoder/attn_10/concat",
            ]
        );
        let g = graph(&[("b", 1), ("a", 1), ("ab", 1)], &[]);
        assert_eq!(seq(&g, TraversalKind::Lexico), ["a", "ab", "b"]);
    }

    #[test]
    fn topo_rejects_cycle() {
        let g = graph(&[("a", 1), ("b", 1)], &[("a", "b"), ("b", "a")]);
        assert!(matches!(topo_order(&g), Err(Error::Cycle(2))));
    }

    #[test]
    fn kind_parsing() {
        for k in TraversalKind::ALL {
            assert_eq!(k.as_str().parse::<TraversalKind>().unwrap(), k);
            assert_eq!(k.column().parse::<TraversalKind>().unwrap(), k);
        }
        assert!("spiral".parse::<TraversalKind>().is_err());
    }

    #[test]
    fn deterministic() {
        let d = diamond();
        for k in TraversalKind::ALL {
            assert_eq!(traverse(&d, k).unwrap(), traverse(&d, k).unwrap());
        }
    }
}
