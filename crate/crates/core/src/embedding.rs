//! Node embeddings by bidirectional message passing, plus a mean-pooled
//! global summary, with exact reverse-mode gradients.
//!
//! ```text
//! h0(v) = W_in f(v) + b_in
//! hr(v) = relu(A_self h(v) + Σ_{u→v} A_pred h(u) + Σ_{v→w} A_succ h(w))
//! g     = mean_v hR(v)
//! ```
//! where every `A_*` is affine (bias included once per message).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ComputationGraph, NodeId};
use crate::linalg::{Affine, ParamSet};
use crate::simulator::Placement;

pub const DEFAULT_DIM: usize = 16;
pub const DEFAULT_ROUNDS: usize = 2;

/// Per-node input attributes for one decision state.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeFeatures {
    pub compute_time_norm: f64,
    pub output_bytes_norm: f64,
    pub device_one_hot: Vec<f64>,
    pub is_current_flag: f64,
    pub is_placed_flag: f64,
}

impl NodeFeatures {
    pub fn width(num_devices: usize) -> usize {
        num_devices + 4
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.device_one_hot.len() + 4);
        v.push(self.compute_time_norm);
        v.push(self.output_bytes_norm);
        v.extend_from_slice(&self.device_one_hot);
        v.push(self.is_current_flag);
        v.push(self.is_placed_flag);
        v
    }
}

/// Row-major `|V| × width` feature matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub width: usize,
    pub data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn from_features(features: &[NodeFeatures]) -> Self {
        let width = features.first().map_or(0, |f| f.device_one_hot.len() + 4);
        Self {
            width,
            data: features.iter().flat_map(|f| f.to_vec()).collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.data.len().checked_div(self.width).unwrap_or(0)
    }

    pub fn row(&self, v: usize) -> &[f64] {
        &self.data[v * self.width..(v + 1) * self.width]
    }
}

/// Precomputed normalized node attributes for one graph.
#[derive(Clone, Debug)]
pub struct FeatureEncoder {
    compute_norm: Vec<f64>,
    output_norm: Vec<f64>,
    num_devices: usize,
}

impl FeatureEncoder {
    pub fn new(graph: &ComputationGraph, num_devices: usize) -> Self {
        let max_ct = graph.nodes().iter().map(|n| n.compute_time_us).max().unwrap_or(1).max(1) as f64;
        let max_ob = graph.nodes().iter().map(|n| n.output_bytes).max().unwrap_or(0);
        Self {
            compute_norm: graph
                .nodes()
                .iter()
                .map(|n| n.compute_time_us as f64 / max_ct)
                .collect(),
            output_norm: graph
                .nodes()
                .iter()
                .map(|n| {
                    if max_ob == 0 {
                        0.0
                    } else {
                        n.output_bytes as f64 / max_ob as f64
                    }
                })
                .collect(),
            num_devices,
        }
    }

    pub fn width(&self) -> usize {
        NodeFeatures::width(self.num_devices)
    }

    pub fn encode_into(
        &self,
        placement: &Placement,
        current: Option<NodeId>,
        placed: &[bool],
        out: &mut FeatureMatrix,
    ) {
        let w = self.width();
        let n = self.compute_norm.len();
        out.width = w;
        out.data.clear();
        out.data.resize(n * w, 0.0);
        for v in 0..n {
            self.write_row(out, NodeId(v), placement.assignment[v], current == Some(NodeId(v)), placed[v]);
        }
    }

    /// Rewrites the row of `v` in a matrix produced by this encoder.
    pub fn write_row(&self, out: &mut FeatureMatrix, v: NodeId, device: usize, is_current: bool, is_placed: bool) {
        let w = self.width();
        let row = &mut out.data[v.0 * w..(v.0 + 1) * w];
        row[0] = self.compute_norm[v.0];
        row[1] = self.output_norm[v.0];
        row[2..2 + self.num_devices].iter_mut().for_each(|x| *x = 0.0);
        row[2 + device] = 1.0;
        row[w - 2] = if is_current { 1.0 } else { 0.0 };
        row[w - 1] = if is_placed { 1.0 } else { 0.0 };
    }

    pub fn encode(&self, placement: &Placement, current: Option<NodeId>, placed: &[bool]) -> FeatureMatrix {
        let mut m = FeatureMatrix {
            width: self.width(),
            data: Vec::new(),
        };
        self.encode_into(placement, current, placed, &mut m);
        m
    }
}

/// Node attributes normalized by the graph maximum, the current device as a
/// one-hot vector, and the current / already-placed flags.
pub fn raw_features(
    graph: &ComputationGraph,
    placement: &Placement,
    current_node: Option<NodeId>,
    placed: &[bool],
    num_devices: usize,
) -> Vec<NodeFeatures> {
    let m = FeatureEncoder::new(graph, num_devices).encode(placement, current_node, placed);
    (0..m.rows())
        .map(|v| {
            let row = m.row(v);
            NodeFeatures {
                compute_time_norm: row[0],
                output_bytes_norm: row[1],
                device_one_hot: row[2..2 + num_devices].to_vec(),
                is_current_flag: row[m.width - 2],
                is_placed_flag: row[m.width - 1],
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundParams {
    pub self_loop: Affine,
    pub pred: Affine,
    pub succ: Affine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingParams {
    pub dim: usize,
    pub feature_width: usize,
    pub input: Affine,
    pub rounds: Vec<RoundParams>,
}

impl EmbeddingParams {
    pub fn zeros(feature_width: usize, dim: usize, rounds: usize) -> Self {
        Self {
            dim,
            feature_width,
            input: Affine::zeros(dim, feature_width),
            rounds: (0..rounds)
                .map(|_| RoundParams {
                    self_loop: Affine::zeros(dim, dim),
                    pred: Affine::zeros(dim, dim),
                    succ: Affine::zeros(dim, dim),
                })
                .collect(),
        }
    }

    pub fn init<R: Rng + ?Sized>(feature_width: usize, dim: usize, rounds: usize, rng: &mut R) -> Self {
        let input = Affine::uniform(dim, feature_width, rng);
        let rounds = (0..rounds)
            .map(|_| RoundParams {
                self_loop: Affine::uniform(dim, dim, rng),
                pred: Affine::uniform(dim, dim, rng),
                succ: Affine::uniform(dim, dim, rng),
            })
            .collect();
        Self {
            dim,
            feature_width,
            input,
            rounds,
        }
    }

    /// Zeroed parameters with the same layout.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.feature_width, self.dim, self.rounds.len())
    }
}

impl ParamSet for EmbeddingParams {
    fn slices(&self) -> Vec<&[f64]> {
        let mut s = self.input.slices();
        for r in &self.rounds {
            s.extend(r.self_loop.slices());
            s.extend(r.pred.slices());
            s.extend(r.succ.slices());
        }
        s
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut s = self.input.slices_mut();
        for r in &mut self.rounds {
            s.extend(r.self_loop.slices_mut());
            s.extend(r.pred.slices_mut());
            s.extend(r.succ.slices_mut());
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingOutput {
    pub dim: usize,
    /// Row-major `|V| × dim`.
    pub per_node: Vec<f64>,
    pub global_summary: Vec<f64>,
}

impl EmbeddingOutput {
    pub fn node(&self, v: NodeId) -> &[f64] {
        &self.per_node[v.0 * self.dim..(v.0 + 1) * self.dim]
    }
}

/// Activations kept for the backward pass: `hidden[r]` is `h^r` for every node.
#[derive(Clone, Debug, Default)]
pub(crate) struct Tape {
    hidden: Vec<Vec<f64>>,
}

fn check_shapes(graph: &ComputationGraph, features: &FeatureMatrix, params: &EmbeddingParams) -> Result<()> {
    if features.width != params.feature_width {
        return Err(Error::Shape(format!(
            "feature width {} but embedding expects {}",
            features.width, params.feature_width
        )));
    }
    if features.rows() != graph.len() {
        return Err(Error::Shape(format!(
            "{} feature rows for {} nodes",
            features.rows(),
            graph.len()
        )));
    }
    Ok(())
}

/// Forward activations that can be refreshed after a few feature rows
/// change. Only the rows within `r` hops of a change are recomputed in round
/// `r`, and every row is computed by the same code as a full pass, so the
/// result is bit-identical to recomputing from scratch.
pub(crate) struct EmbeddingState<'a> {
    graph: &'a ComputationGraph,
    params: &'a EmbeddingParams,
    features: FeatureMatrix,
    hidden: Vec<Vec<f64>>,
    msg_pred: Vec<Vec<f64>>,
    msg_succ: Vec<Vec<f64>>,
    global: Vec<f64>,
    stamp: Vec<u64>,
    epoch: u64,
}

impl<'a> EmbeddingState<'a> {
    pub(crate) fn new(graph: &'a ComputationGraph, features: FeatureMatrix, params: &'a EmbeddingParams) -> Result<Self> {
        check_shapes(graph, &features, params)?;
        let n = graph.len();
        let size = n * params.dim;
        let rounds = params.rounds.len();
        let mut state = Self {
            graph,
            params,
            features,
            hidden: vec![vec![0.0; size]; rounds + 1],
            msg_pred: vec![vec![0.0; size]; rounds],
            msg_succ: vec![vec![0.0; size]; rounds],
            global: vec![0.0; params.dim],
            stamp: vec![0; n],
            epoch: 0,
        };
        let all: Vec<usize> = (0..n).collect();
        state.propagate(all)?;
        Ok(state)
    }

    /// Replaces rows `changed` with the matching rows of `features`.
    pub(crate) fn update(&mut self, features: &FeatureMatrix, changed: &[usize]) -> Result<()> {
        check_shapes(self.graph, features, self.params)?;
        let w = self.features.width;
        let mut rows = Vec::with_capacity(changed.len());
        for &v in changed {
            let src = &features.data[v * w..(v + 1) * w];
            let dst = &mut self.features.data[v * w..(v + 1) * w];
            if src != dst {
                dst.copy_from_slice(src);
                rows.push(v);
            }
        }
        rows.sort_unstable();
        rows.dedup();
        if rows.is_empty() {
            return Ok(());
        }
        self.propagate(rows)
    }

    fn propagate(&mut self, mut dirty: Vec<usize>) -> Result<()> {
        let dim = self.params.dim;
        let graph = self.graph;
        for &v in &dirty {
            self.params
                .input
                .apply(self.features.row(v), &mut self.hidden[0][v * dim..(v + 1) * dim]);
            if !self.hidden[0][v * dim..(v + 1) * dim].iter().all(|x| x.is_finite()) {
                return Err(Error::Numeric("non-finite embedding at input layer".into()));
            }
        }
        for (r, round) in self.params.rounds.iter().enumerate() {
            let h_in = &self.hidden[r];
            for &v in &dirty {
                let hv = &h_in[v * dim..(v + 1) * dim];
                round.pred.apply(hv, &mut self.msg_pred[r][v * dim..(v + 1) * dim]);
                round.succ.apply(hv, &mut self.msg_succ[r][v * dim..(v + 1) * dim]);
            }
            // Rows whose inputs changed: the dirty rows and their neighbours.
            self.epoch += 1;
            let mut next = Vec::with_capacity(dirty.len() * 3);
            for &v in &dirty {
                let id = NodeId(v);
                for u in std::iter::once(id).chain(graph.preds(id).iter().copied()).chain(graph.succs(id).iter().copied()) {
                    if self.stamp[u.0] != self.epoch {
                        self.stamp[u.0] = self.epoch;
                        next.push(u.0);
                    }
                }
            }
            next.sort_unstable();
            let (done, rest) = self.hidden.split_at_mut(r + 1);
            let (h_in, h_out) = (&done[r], &mut rest[0]);
            let (mp, ms) = (&self.msg_pred[r], &self.msg_succ[r]);
            for &v in &next {
                let id = NodeId(v);
                let zv = &mut h_out[v * dim..(v + 1) * dim];
                round.self_loop.apply(&h_in[v * dim..(v + 1) * dim], zv);
                for &u in graph.preds(id) {
                    for k in 0..dim {
                        zv[k] += mp[u.0 * dim + k];
                    }
                }
                for &w in graph.succs(id) {
                    for k in 0..dim {
                        zv[k] += ms[w.0 * dim + k];
                    }
                }
                for x in zv.iter_mut() {
                    *x = x.max(0.0);
                }
                if !zv.iter().all(|x| x.is_finite()) {
                    return Err(Error::Numeric(format!("non-finite embedding in round {}", r + 1)));
                }
            }
            dirty = next;
        }
        let n = graph.len();
        let h = self.hidden.last().expect("at least the input layer");
        self.global.iter_mut().for_each(|g| *g = 0.0);
        for v in 0..n {
            for k in 0..dim {
                self.global[k] += h[v * dim + k];
            }
        }
        if n > 0 {
            self.global.iter_mut().for_each(|g| *g /= n as f64);
        }
        Ok(())
    }

    pub(crate) fn node(&self, v: NodeId) -> &[f64] {
        let dim = self.params.dim;
        &self.hidden.last().expect("at least the input layer")[v.0 * dim..(v.0 + 1) * dim]
    }

    pub(crate) fn global_summary(&self) -> &[f64] {
        &self.global
    }

    pub(crate) fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    pub(crate) fn tape(&self) -> Tape {
        Tape {
            hidden: self.hidden.clone(),
        }
    }

    fn into_parts(self) -> (EmbeddingOutput, Tape) {
        let per_node = self.hidden.last().cloned().expect("at least the input layer");
        let tape = Tape { hidden: self.hidden };
        (
            EmbeddingOutput {
                dim: self.params.dim,
                per_node,
                global_summary: self.global,
            },
            tape,
        )
    }
}

pub(crate) fn forward(
    graph: &ComputationGraph,
    features: &FeatureMatrix,
    params: &EmbeddingParams,
) -> Result<(EmbeddingOutput, Tape)> {
    EmbeddingState::new(graph, features.clone(), params).map(EmbeddingState::into_parts)
}

pub fn message_pass(
    graph: &ComputationGraph,
    features: &FeatureMatrix,
    params: &EmbeddingParams,
) -> Result<EmbeddingOutput> {
    forward(graph, features, params).map(|(out, _)| out)
}

/// Accumulates parameter gradients into `grad` given upstream sensitivities
/// of the final per-node embeddings and of the global summary.
pub(crate) fn backward(
    graph: &ComputationGraph,
    features: &FeatureMatrix,
    params: &EmbeddingParams,
    tape: &Tape,
    upstream_per_node: &[f64],
    upstream_global: &[f64],
    grad: &mut EmbeddingParams,
) {
    let n = graph.len();
    let dim = params.dim;
    let mut g = upstream_per_node.to_vec();
    if n > 0 {
        let share: Vec<f64> = upstream_global.iter().map(|x| x / n as f64).collect();
        for v in 0..n {
            for k in 0..dim {
                g[v * dim + k] += share[k];
            }
        }
    }
    let mut gz_pred = vec![0.0; dim];
    let mut gz_succ = vec![0.0; dim];
    for r in (0..params.rounds.len()).rev() {
        let round = &params.rounds[r];
        let h_in = &tape.hidden[r];
        let h_out = &tape.hidden[r + 1];
        // relu'(z) = 1 where the output is positive.
        for (gi, &o) in g.iter_mut().zip(h_out) {
            if o <= 0.0 {
                *gi = 0.0;
            }
        }
        let gz = g;
        let mut g_prev = vec![0.0; n * dim];
        let gr = &mut grad.rounds[r];
        for v in graph.node_ids() {
            let i = v.0;
            let hv = &h_in[i * dim..(i + 1) * dim];
            let gzv = &gz[i * dim..(i + 1) * dim];
            gr.self_loop.accumulate(gzv, hv);
            round.self_loop.add_transpose_apply(gzv, &mut g_prev[i * dim..(i + 1) * dim]);

            // Node v sent a pred-message to each successor and a succ-message
            // to each predecessor.
            gz_pred.iter_mut().for_each(|x| *x = 0.0);
            for &w in graph.succs(v) {
                for k in 0..dim {
                    gz_pred[k] += gz[w.0 * dim + k];
                }
            }
            gz_succ.iter_mut().for_each(|x| *x = 0.0);
            for &u in graph.preds(v) {
                for k in 0..dim {
                    gz_succ[k] += gz[u.0 * dim + k];
                }
            }
            let gpv = &mut g_prev[i * dim..(i + 1) * dim];
            if !graph.succs(v).is_empty() {
                gr.pred.accumulate(&gz_pred, hv);
                round.pred.add_transpose_apply(&gz_pred, gpv);
            }
            if !graph.preds(v).is_empty() {
                gr.succ.accumulate(&gz_succ, hv);
                round.succ.add_transpose_apply(&gz_succ, gpv);
            }
        }
        g = g_prev;
    }
    for v in 0..n {
        grad.input.accumulate(&g[v * dim..(v + 1) * dim], features.row(v));
    }
}

pub fn embedding_gradients(
    graph: &ComputationGraph,
    features: &FeatureMatrix,
    params: &EmbeddingParams,
    upstream_per_node: &[f64],
    upstream_global: &[f64],
) -> Result<EmbeddingParams> {
    if upstream_per_node.len() != graph.len() * params.dim {
        return Err(Error::Shape(format!(
            "per-node upstream has {} entries, expected {}",
            upstream_per_node.len(),
            graph.len() * params.dim
        )));
    }
    if upstream_global.len() != params.dim {
        return Err(Error::Shape(format!(
            "global upstream has {} entries, expected {}",
            upstream_global.len(),
            params.dim
        )));
    }
    let (_, tape) = forward(graph, features, params)?;
    let mut grad = params.zeros_like();
    backward(graph, features, params, &tape, upstream_per_node, upstream_global, &mut grad);
    if !grad.all_finite() {
        return Err(Error::Numeric("non-finite embedding gradient".into()));
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::fixtures::{diamond, graph};
    use crate::graph::GraphBuilder;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn features_for(g: &ComputationGraph, devices: usize, rng: &mut ChaCha8Rng) -> FeatureMatrix {
        let placement = Placement {
            assignment: (0..g.len()).map(|_| rng.random_range(0..devices)).collect(),
        };
        let placed: Vec<bool> = (0..g.len()).map(|_| rng.random()).collect();
        FeatureEncoder::new(g, devices).encode(&placement, Some(NodeId(0)), &placed)
    }

    #[test]
    fn normalization_and_flags() {
        let mut b = GraphBuilder::new();
        let x = b.add_node("x", 50, 10, 0);
        let y = b.add_node("y", 200, 40, 0);
        let z = b.add_node("z", 100, 20, 0);
        b.add_edge(x, y).add_edge(y, z);
        let g = b.build().unwrap();
        let p = Placement::single_device(3, 0);
        let f = raw_features(&g, &p, Some(z), &[false, false, false], 3);
        assert_eq!(f[1].compute_time_norm, 1.0);
        assert_eq!(f[1].output_bytes_norm, 1.0);
        assert!(f.iter().all(|n| n.device_one_hot == vec![1.0, 0.0, 0.0]));
        assert_eq!(f[2].is_current_flag, 1.0);
        assert_eq!(f[0].is_current_flag, 0.0);

        // Identical attributes: vectors differ only in the current flag.
        let g = graph(&[("p", 10), ("q", 10)], &[("p", "q")]);
        let f = raw_features(&g, &Placement::single_device(2, 0), Some(NodeId(1)), &[false, false], 2);
        let (a, b) = (f[0].to_vec(), f[1].to_vec());
        let diff: Vec<usize> = (0..a.len()).filter(|&i| a[i] != b[i]).collect();
        assert_eq!(diff, vec![a.len() - 2]);
    }

    #[test]
    fn zero_params_give_zero_embeddings() {
        let g = diamond();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = features_for(&g, 2, &mut rng);
        let p = EmbeddingParams::zeros(f.width, 8, 2);
        let out = message_pass(&g, &f, &p).unwrap();
        assert!(out.per_node.iter().chain(&out.global_summary).all(|&x| x == 0.0));
    }

    #[test]
    fn isolated_node_uses_only_its_features() {
        let g = graph(&[("solo", 5)], &[]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = features_for(&g, 2, &mut rng);
        let p = EmbeddingParams::init(f.width, 4, 2, &mut rng);
        let mut manual = vec![0.0; 4];
        p.input.apply(f.row(0), &mut manual);
        for r in &p.rounds {
            let mut z = vec![0.0; 4];
            r.self_loop.apply(&manual, &mut z);
            manual = z.into_iter().map(|x| x.max(0.0)).collect();
        }
        let out = message_pass(&g, &f, &p).unwrap();
        assert_eq!(out.per_node, manual);
        assert_eq!(out.global_summary, manual);
    }

    #[test]
    fn relabeling_permutes_embeddings() {
        let g = graph(
            &[("a", 3), ("b", 5), ("c", 7), ("d", 2)],
            &[("a", "b"), ("a", "c"), ("b", "d"), ("c", "d")],
        );
        // Same graph with node ids reversed.
        let perm = [3usize, 2, 1, 0];
        let mut b = GraphBuilder::new();
        let mut new_ids = [NodeId(0); 4];
        for old in (0..4).rev() {
            let n = g.node(NodeId(old));
            new_ids[old] = b.add_node(n.name.clone(), n.compute_time_us, n.output_bytes, n.memory_bytes);
        }
        for e in g.edges() {
            b.add_edge(new_ids[e.src.0], new_ids[e.dst.0]);
        }
        let h = b.build().unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f = features_for(&g, 3, &mut rng);
        let mut fp = f.clone();
        for old in 0..4 {
            let new = perm[old];
            fp.data[new * f.width..(new + 1) * f.width].copy_from_slice(f.row(old));
        }
        let p = EmbeddingParams::init(f.width, 6, 2, &mut rng);
        let a = message_pass(&g, &f, &p).unwrap();
        let b = message_pass(&h, &fp, &p).unwrap();
        for old in 0..4 {
            let x = a.node(NodeId(old));
            let y = b.node(NodeId(perm[old]));
            for (p, q) in x.iter().zip(y) {
                assert!((p - q).abs() < 1e-12);
            }
        }
        for (p, q) in a.global_summary.iter().zip(&b.global_summary) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_edge_cases() {
        let g = diamond();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = features_for(&g, 2, &mut rng);
        let p = EmbeddingParams::init(f.width, 5, 2, &mut rng);
        let zero = embedding_gradients(&g, &f, &p, &[0.0; 4 * 5], &[0.0; 5]).unwrap();
        assert_eq!(zero.l2_norm(), 0.0);

        assert!(matches!(
            embedding_gradients(&g, &f, &p, &[0.0; 3], &[0.0; 5]),
            Err(Error::Shape(_))
        ));

        let p0 = EmbeddingParams::init(f.width, 5, 0, &mut rng);
        let grad = embedding_gradients(&g, &f, &p0, &[1.0; 20], &[1.0; 5]).unwrap();
        assert!(grad.rounds.is_empty());
        assert!(grad.input.l2_norm() > 0.0);
    }

    #[test]
    fn width_mismatch_is_shape_error() {
        let g = diamond();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = features_for(&g, 2, &mut rng);
        let p = EmbeddingParams::zeros(f.width + 1, 4, 1);
        assert!(matches!(message_pass(&g, &f, &p), Err(Error::Shape(_))));
    }
}
