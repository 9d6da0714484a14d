//! Synthetic graph families with the structural statistics of three
//! benchmark model collections: convolutional cells, attention-based
//! encoder-decoders and recurrent language models.
//!
//! Node names encode structural position ("cell_3/branch_1/op_2") so the
//! lexicographic order groups nodes the way framework scope names would.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ComputationGraph, GraphBuilder, NodeId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    CnnLike,
    NmtLike,
    PtbLike,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::CnnLike, Family::NmtLike, Family::PtbLike];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::CnnLike => "cnn-like",
            Family::NmtLike => "nmt-like",
            Family::PtbLike => "ptb-like",
        }
    }

    /// Average node count of the benchmark collection this family imitates.
    pub fn full_scale_nodes(self) -> usize {
        match self {
            Family::CnnLike => 300,
            Family::NmtLike => 180,
            Family::PtbLike => 500,
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        Family::ALL
            .into_iter()
            .find(|f| f.as_str() == key || f.as_str().trim_end_matches("-like") == key)
            .ok_or_else(|| Error::Config(format!("unknown graph family {s:?} (expected cnn-like, nmt-like or ptb-like)")))
    }
}

/// Log-uniform attribute ranges; memory is `memory_factor * output_bytes`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttributeRanges {
    pub compute_time_us: (u64, u64),
    pub output_bytes: (u64, u64),
    pub memory_factor: f64,
}

impl Default for AttributeRanges {
    fn default() -> Self {
        Self {
            compute_time_us: (100, 10_000),
            output_bytes: (1_000, 10_000_000),
            memory_factor: 1.0,
        }
    }
}

impl AttributeRanges {
    fn check(&self) -> Result<()> {
        let (c0, c1) = self.compute_time_us;
        let (o0, o1) = self.output_bytes;
        if c0 == 0 || c0 > c1 || o0 == 0 || o0 > o1 {
            return Err(Error::Config(format!("bad attribute ranges {self:?}")));
        }
        if !(self.memory_factor.is_finite() && self.memory_factor >= 0.0) {
            return Err(Error::Config("memory_factor must be finite and non-negative".into()));
        }
        Ok(())
    }
}

fn log_uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (u64, u64)) -> u64 {
    if lo == hi {
        return lo;
    }
    let x = rng.random_range((lo as f64).ln()..(hi as f64).ln());
    (x.exp().round() as u64).clamp(lo, hi)
}

/// Generation parameters. Structural knobs left as `None` are derived from
/// `target_nodes`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FamilySpec {
    pub family: Family,
    pub target_nodes: usize,
    /// cnn-like: number of cells.
    pub blocks: Option<usize>,
    /// cnn-like: parallel branches per cell.
    pub branches: usize,
    /// cnn-like: inclusive range of branch chain lengths.
    pub branch_length: (usize, usize),
    /// nmt-like: encoder/decoder steps. ptb-like: recurrent chain length.
    pub unrolled_steps: Option<usize>,
    /// nmt-like: stacked recurrent layers.
    pub recurrent_depth: usize,
    /// nmt-like: encoder steps each attention node reads.
    pub attention_window: usize,
    pub attributes: AttributeRanges,
    pub seed: u64,
}

impl Default for FamilySpec {
    fn default() -> Self {
        Self::new(Family::CnnLike, 300, 0)
    }
}

impl FamilySpec {
    pub fn new(family: Family, target_nodes: usize, seed: u64) -> Self {
        Self {
            family,
            target_nodes,
            blocks: None,
            branches: 3,
            branch_length: (1, 2),
            unrolled_steps: None,
            recurrent_depth: 1,
            attention_window: 3,
            attributes: AttributeRanges::default(),
            seed,
        }
    }

    pub fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("{} spec: {m}", self.family)));
        if self.target_nodes < 4 && self.blocks.is_none() && self.unrolled_steps.is_none() {
            return bad("target_nodes must be at least 4");
        }
        if self.branches == 0 || self.branch_length.0 == 0 || self.branch_length.0 > self.branch_length.1 {
            return bad("branches and branch lengths must be positive");
        }
        if self.recurrent_depth == 0 || self.attention_window == 0 {
            return bad("recurrent_depth and attention_window must be positive");
        }
        if self.blocks == Some(0) || self.unrolled_steps == Some(0) {
            return bad("blocks and unrolled_steps must be positive");
        }
        self.attributes.check()
    }
}

/// Full-scale calibration targets for one family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyStatsTarget {
    pub family: Family,
    pub nodes: f64,
    pub edges: f64,
    pub avg_degree: f64,
    pub degree_tolerance: f64,
    pub mean_diameter: f64,
    /// Undirected diameter range across the collection.
    pub diameter: (usize, usize),
}

impl FamilyStatsTarget {
    pub fn full_scale(family: Family) -> Self {
        let (nodes, edges, avg_degree, mean_diameter, diameter) = match family {
            Family::CnnLike => (303.44, 444.22, 1.47, 95.63, (74, 154)),
            Family::NmtLike => (179.44, 476.25, 2.65, 63.13, (41, 69)),
            Family::PtbLike => (500.75, 1285.44, 2.56, 316.09, (216, 450)),
        };
        Self {
            family,
            nodes,
            edges,
            avg_degree,
            degree_tolerance: 0.25,
            mean_diameter,
            diameter,
        }
    }

    /// Diameter as a fraction of node count.
    pub fn diameter_ratio(&self) -> f64 {
        self.mean_diameter / self.nodes
    }
}

struct Emitter {
    builder: GraphBuilder,
    rng: ChaCha8Rng,
    attributes: AttributeRanges,
    edges: BTreeSet<(usize, usize)>,
}

impl Emitter {
    fn new(spec: &FamilySpec) -> Self {
        Self {
            builder: GraphBuilder::new(),
            rng: ChaCha8Rng::seed_from_u64(spec.seed),
            attributes: spec.attributes.clone(),
            edges: BTreeSet::new(),
        }
    }

    fn node(&mut self, name: String) -> NodeId {
        let compute = log_uniform(&mut self.rng, self.attributes.compute_time_us);
        let output = log_uniform(&mut self.rng, self.attributes.output_bytes);
        let memory = (output as f64 * self.attributes.memory_factor).round() as u64;
        self.builder.add_node(name, compute, output, memory)
    }

    fn edge(&mut self, src: NodeId, dst: NodeId) {
        if self.edges.insert((src.0, dst.0)) {
            self.builder.add_edge(src, dst);
        }
    }

    fn finish(self) -> ComputationGraph {
        self.builder
            .build_valid()
            .expect("generator constructions are valid by design")
    }
}

/// Cells chained one after another. Each cell fans out from an input node
/// into parallel branch chains that merge into a concat node; the input of
/// cell k also reads the output of cell k-2.
pub fn gen_cnn_like(spec: &FamilySpec) -> Result<ComputationGraph> {
    spec.check()?;
    let mut em = Emitter::new(spec);
    let (lmin, lmax) = spec.branch_length;
    let mut concats: Vec<NodeId> = Vec::new();
    let mut k = 0;
    loop {
        let done = match spec.blocks {
            Some(b) => k >= b,
            None => k > 0 && em.builder.len() >= spec.target_nodes,
        };
        if done {
            break;
        }
        k += 1;
        let input = em.node(format!("cell_{k}/input"));
        if let Some(&prev) = concats.last() {
            em.edge(prev, input);
        }
        if concats.len() >= 2 {
            em.edge(concats[concats.len() - 2], input);
        }
        let mut tails = Vec::with_capacity(spec.branches);
        for b in 1..=spec.branches {
            let len = em.rng.random_range(lmin..=lmax);
            let mut prev = input;
            for i in 1..=len {
                let op = em.node(format!("cell_{k}/branch_{b}/op_{i}"));
                em.edge(prev, op);
                prev = op;
            }
            tails.push(prev);
        }
        let concat = em.node(format!("cell_{k}/concat"));
        for t in tails {
            em.edge(t, concat);
        }
        concats.push(concat);
    }
    Ok(em.finish())
}

/// Nodes per unrolled step of the nmt-like construction.
fn nmt_nodes_per_step(depth: usize) -> usize {
    12 * depth + 4
}

/// One recurrent layer-step: four gates reading the layer input, the
/// previous hidden state and (for the input and forget gates) the previous
/// cell state, merged into a cell and hidden output.
#[derive(Clone, Copy)]
struct LstmState {
    cell: NodeId,
    hidden: NodeId,
}

fn lstm_step(em: &mut Emitter, scope: &str, inputs: &[NodeId], prev: Option<LstmState>) -> LstmState {
    let gates: Vec<NodeId> = ["i", "f", "g", "o"]
        .iter()
        .map(|g| em.node(format!("{scope}/gate_{g}")))
        .collect();
    let cell = em.node(format!("{scope}/cell"));
    let hidden = em.node(format!("{scope}/hidden"));
    for (k, &g) in gates.iter().enumerate() {
        for &x in inputs {
            em.edge(x, g);
        }
        if let Some(p) = prev {
            em.edge(p.hidden, g);
            if k < 2 {
                em.edge(p.cell, g);
            }
        }
        em.edge(g, cell);
    }
    if let Some(p) = prev {
        em.edge(p.cell, cell);
    }
    em.edge(cell, hidden);
    em.edge(gates[3], hidden);
    LstmState { cell, hidden }
}

/// Stacked recurrent encoder and decoder of `u` steps each. Attention node
/// `attn_t` reads the top encoder outputs of a window of steps centred on
/// `t` (all of them when `u` fits in the window) and feeds decoder step `t`.
/// The window keeps the diameter growing with `u`.
pub fn gen_nmt_like(spec: &FamilySpec) -> Result<ComputationGraph> {
    spec.check()?;
    let depth = spec.recurrent_depth;
    let u = spec
        .unrolled_steps
        .unwrap_or_else(|| (spec.target_nodes as f64 / nmt_nodes_per_step(depth) as f64).round() as usize)
        .max(1);
    let w = spec.attention_window.min(u);
    let mut em = Emitter::new(spec);

    let mut enc: Vec<Vec<LstmState>> = Vec::with_capacity(u);
    for t in 1..=u {
        let mut below = vec![em.node(format!("encoder/step_{t}/embed"))];
        let mut layers = Vec::with_capacity(depth);
        for l in 1..=depth {
            let prev = enc.last().map(|p: &Vec<LstmState>| p[l - 1]);
            let s = lstm_step(&mut em, &format!("encoder/step_{t}/lstm_{l}"), &below, prev);
            below = vec![s.hidden];
            layers.push(s);
        }
        enc.push(layers);
    }
    let mut dec: Vec<Vec<LstmState>> = Vec::with_capacity(u);
    for t in 1..=u {
        let attn = em.node(format!("attn_{t}/concat"));
        let start = (t - 1).saturating_sub(w / 2).min(u - w);
        for e in &enc[start..start + w] {
            em.edge(e[depth - 1].hidden, attn);
        }
        let embed = em.node(format!("decoder/step_{t}/embed"));
        // The first decoder step starts from the final encoder state.
        let prev_step = if t == 1 { enc.last() } else { dec.last() };
        let mut below = vec![embed, attn];
        let mut layers = Vec::with_capacity(depth);
        for l in 1..=depth {
            let s = lstm_step(&mut em, &format!("decoder/step_{t}/lstm_{l}"), &below, prev_step.map(|p| p[l - 1]));
            below = vec![s.hidden];
            layers.push(s);
        }
        let proj = em.node(format!("decoder/step_{t}/proj"));
        em.edge(layers[depth - 1].hidden, proj);
        em.edge(attn, proj);
        dec.push(layers);
    }
    Ok(em.finish())
}

/// Sizes of a ptb-like graph of about `n` nodes.
#[derive(Clone, Copy, Debug, PartialEq)]
struct PtbLayout {
    chain: usize,
    siblings: usize,
    head_width: usize,
    head_layers: usize,
}

impl PtbLayout {
    fn edges(&self) -> usize {
        let sib = if self.siblings > 0 { 3 * self.siblings - 1 } else { 0 };
        (self.chain - 1) + sib + self.head_width * self.head_width * (self.head_layers - 1) + self.head_width
    }

    /// Picks the layout whose diameter and edge count best match the
    /// full-scale ratios at `n` nodes.
    fn fit(n: usize, steps: Option<usize>) -> Self {
        let target = FamilyStatsTarget::full_scale(Family::PtbLike);
        let n = n.max(8);
        let diameter = ((target.diameter_ratio() * n as f64).round() as usize).max(4);
        let want = target.avg_degree * n as f64;
        let mut best: Option<(f64, PtbLayout)> = None;
        for head_width in 2..=12 {
            for head_layers in 1..diameter {
                let chain = match steps {
                    Some(s) => s,
                    None if diameter > head_layers + 1 => diameter - head_layers - 1,
                    None => break,
                };
                if chain < 3 || n < chain + head_width * head_layers {
                    continue;
                }
                let siblings = n - chain - head_width * head_layers;
                if siblings > chain - 2 {
                    continue;
                }
                let layout = PtbLayout {
                    chain,
                    siblings,
                    head_width,
                    head_layers,
                };
                let err = (layout.edges() as f64 - want).abs();
                if best.is_none_or(|(e, _)| err < e) {
                    best = Some((err, layout));
                }
            }
        }
        best.map(|(_, l)| l).unwrap_or(PtbLayout {
            chain: steps.unwrap_or(n - 2).max(3),
            siblings: 0,
            head_width: 2,
            head_layers: 1,
        })
    }
}

/// A long recurrent chain, a parallel run of sibling ops alongside part of
/// it, and a layered fully connected output head. Sibling `s_t` reads step
/// `t-1`, feeds step `t+1` and its successor sibling, so it runs alongside
/// step `t` without shortening the chain.
pub fn gen_ptb_like(spec: &FamilySpec) -> Result<ComputationGraph> {
    spec.check()?;
    let layout = PtbLayout::fit(spec.target_nodes, spec.unrolled_steps);
    let mut em = Emitter::new(spec);
    let chain = layout.chain;
    let cells: Vec<NodeId> = (1..=chain).map(|t| em.node(format!("rnn/step_{t}/cell"))).collect();
    for pair in cells.windows(2) {
        em.edge(pair[0], pair[1]);
    }
    // Siblings occupy a contiguous run of steps in 2..chain.
    let room = chain - 2 - layout.siblings;
    let first = 1 + em.rng.random_range(0..=room);
    let mut prev: Option<NodeId> = None;
    for t in first..first + layout.siblings {
        let s = em.node(format!("rnn/step_{}/proj", t + 1));
        em.edge(cells[t - 1], s);
        em.edge(s, cells[t + 1]);
        if let Some(p) = prev {
            em.edge(p, s);
        }
        prev = Some(s);
    }
    let mut below = vec![cells[chain - 1]];
    for l in 1..=layout.head_layers {
        let layer: Vec<NodeId> = (1..=layout.head_width)
            .map(|k| em.node(format!("softmax/layer_{l}/shard_{k}")))
            .collect();
        for &b in &below {
            for &x in &layer {
                em.edge(b, x);
            }
        }
        below = layer;
    }
    Ok(em.finish())
}

pub fn generate(spec: &FamilySpec) -> Result<ComputationGraph> {
    match spec.family {
        Family::CnnLike => gen_cnn_like(spec),
        Family::NmtLike => gen_nmt_like(spec),
        Family::PtbLike => gen_ptb_like(spec),
    }
}

/// `count` graphs of one family around `target_nodes`. Each graph gets its
/// own seed and a swept size knob (cells, unrolled steps or chain length) so
/// the collection varies in size; nmt-like unroll counts are distinct.
pub fn gen_dataset(family: Family, count: usize, target_nodes: usize, base_seed: u64) -> Result<Vec<ComputationGraph>> {
    if count == 0 {
        return Err(Error::Config("dataset count must be at least 1".into()));
    }
    let mut seeder = ChaCha8Rng::seed_from_u64(base_seed ^ (family as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    (0..count)
        .map(|i| {
            let mut spec = FamilySpec::new(family, target_nodes, seeder.random());
            // Offsets spread symmetrically around the target: 0, +1, -1, +2, ...
            let offset = if i % 2 == 1 { (i as i64 + 1) / 2 } else { -(i as i64 / 2) };
            match family {
                Family::CnnLike => {
                    let per_cell = 2.0 + spec.branches as f64 * (spec.branch_length.0 + spec.branch_length.1) as f64 / 2.0;
                    let base = (target_nodes as f64 / per_cell).round() as i64;
                    spec.blocks = Some((base + offset).max(1) as usize);
                }
                Family::NmtLike => {
                    let base = (target_nodes as f64 / nmt_nodes_per_step(spec.recurrent_depth) as f64).round() as i64;
                    // Shift the sweep up when small targets would clip it at 1.
                    let low = base - (count as i64) / 2;
                    let shift = if low < 1 { 1 - low } else { 0 };
                    spec.unrolled_steps = Some((base + offset + shift) as usize);
                }
                Family::PtbLike => {
                    let jitter = (target_nodes as f64 * 0.2 * offset as f64 / count.max(1) as f64).round() as i64;
                    spec.target_nodes = (target_nodes as i64 + jitter).max(4) as usize;
                }
            }
            generate(&spec)
        })
        .collect()
}

/// A connected random DAG: node `j` reads from one uniformly chosen earlier
/// node plus each other earlier node with probability `extra_edge_prob`.
/// Intended for tests and benchmarks.
pub fn gen_random_dag(num_nodes: usize, extra_edge_prob: f64, seed: u64) -> Result<ComputationGraph> {
    if num_nodes == 0 {
        return Err(Error::Config("random DAG needs at least one node".into()));
    }
    let spec = FamilySpec::new(Family::CnnLike, num_nodes.max(4), seed);
    let mut em = Emitter::new(&spec);
    // Names are shuffled relative to insertion so name order is not topological.
    let mut labels: Vec<usize> = (0..num_nodes).collect();
    for i in (1..num_nodes).rev() {
        let j = em.rng.random_range(0..=i);
        labels.swap(i, j);
    }
    let ids: Vec<NodeId> = labels.iter().map(|l| em.node(format!("op_{l}"))).collect();
    for j in 1..num_nodes {
        let first = em.rng.random_range(0..j);
        em.edge(ids[first], ids[j]);
        for i in 0..j {
            if i != first && em.rng.random_bool(extra_edge_prob.clamp(0.0, 1.0)) {
                em.edge(ids[i], ids[j]);
            }
        }
    }
    Ok(em.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{graph_stats, validate};

    fn mean_stats(family: Family, nodes: usize, seeds: u64) -> (f64, f64) {
        let (mut deg, mut diam) = (0.0, 0.0);
        for s in 0..seeds {
            let g = generate(&FamilySpec::new(family, nodes, s)).unwrap();
            assert!(validate(&g).is_empty());
            let st = graph_stats(&g);
            deg += st.avg_degree;
            diam += st.diameter as f64;
        }
        (deg / seeds as f64, diam / seeds as f64)
    }

    #[test]
    fn cnn_small_construction() {
        let spec = FamilySpec {
            blocks: Some(2),
            branches: 2,
            branch_length: (2, 2),
            ..FamilySpec::new(Family::CnnLike, 12, 1)
        };
        let g = gen_cnn_like(&spec).unwrap();
        assert_eq!(g.len(), 12);
        // 2 cells of 2*(2+1) edges plus the link between them.
        assert_eq!(g.edges().len(), 13);
        let input2 = g.find("cell_2/input").unwrap();
        assert_eq!(g.preds(input2), &[g.find("cell_1/concat").unwrap()]);
        assert_eq!(g.succs(g.find("cell_1/input").unwrap()).len(), 2);
        assert!(validate(&g).is_empty());
    }

    #[test]
    fn cnn_full_scale_degree() {
        let (deg, _) = mean_stats(Family::CnnLike, 300, 10);
        assert!((deg - 1.47).abs() <= 0.15, "cnn degree {deg}");
    }

    #[test]
    fn nmt_attention_in_degree() {
        let spec = FamilySpec {
            unrolled_steps: Some(3),
            recurrent_depth: 1,
            ..FamilySpec::new(Family::NmtLike, 12, 2)
        };
        let g = gen_nmt_like(&spec).unwrap();
        for t in 1..=3 {
            let a = g.find(&format!("attn_{t}/concat")).unwrap();
            assert_eq!(g.preds(a).len(), 3);
        }
    }

    #[test]
    fn nmt_full_scale_degree() {
        let (deg, _) = mean_stats(Family::NmtLike, 180, 10);
        assert!((deg - 2.65).abs() <= 0.25, "nmt degree {deg}");
    }

    #[test]
    fn nmt_diameter_tracks_unroll_count() {
        let stats = |u: usize, depth: usize| {
            let spec = FamilySpec {
                unrolled_steps: Some(u),
                recurrent_depth: depth,
                ..FamilySpec::new(Family::NmtLike, 4, 0)
            };
            graph_stats(&gen_nmt_like(&spec).unwrap())
        };
        // Doubling the depth roughly doubles the node count but barely moves
        // the diameter; doubling the steps moves it a lot.
        let base = stats(20, 1);
        let deeper = stats(20, 2);
        let longer = stats(40, 1);
        assert!(deeper.num_nodes as f64 > 1.6 * base.num_nodes as f64);
        assert!(deeper.diameter <= base.diameter + 4);
        assert!(longer.diameter as f64 >= 1.6 * base.diameter as f64);
    }

    #[test]
    fn ptb_full_scale() {
        let (deg, diam) = mean_stats(Family::PtbLike, 500, 10);
        assert!((deg - 2.56).abs() <= 0.25, "ptb degree {deg}");
        assert!((216.0..=450.0).contains(&diam), "ptb diameter {diam}");
    }

    #[test]
    fn ptb_scaled_diameter_ratio() {
        for s in 0..5 {
            let g = gen_ptb_like(&FamilySpec::new(Family::PtbLike, 60, s)).unwrap();
            let d = graph_stats(&g).diameter as f64;
            assert!((d - 0.63 * 60.0).abs() <= 0.2 * 0.63 * 60.0, "diameter {d}");
        }
    }

    #[test]
    fn datasets_are_deterministic() {
        for f in Family::ALL {
            let a = gen_dataset(f, 4, 40, 7).unwrap();
            let b = gen_dataset(f, 4, 40, 7).unwrap();
            assert_eq!(a, b);
            assert_eq!(gen_dataset(f, 1, 40, 7).unwrap().len(), 1);
        }
        assert!(gen_dataset(Family::CnnLike, 0, 40, 7).is_err());
    }

    #[test]
    fn nmt_dataset_unroll_counts_distinct() {
        let ds = gen_dataset(Family::NmtLike, 32, 180, 3).unwrap();
        let mut steps: Vec<usize> = ds
            .iter()
            .map(|g| g.nodes().iter().filter(|n| n.name.starts_with("attn_")).count())
            .collect();
        steps.sort_unstable();
        steps.dedup();
        assert_eq!(steps.len(), 32);
        let small = gen_dataset(Family::NmtLike, 8, 12, 3).unwrap();
        assert_eq!(small.len(), 8);
    }

    #[test]
    fn attributes_in_range() {
        let g = generate(&FamilySpec::new(Family::PtbLike, 80, 5)).unwrap();
        for n in g.nodes() {
            assert!((100..=10_000).contains(&n.compute_time_us));
            assert!((1_000..=10_000_000).contains(&n.output_bytes));
            assert_eq!(n.memory_bytes, n.output_bytes);
        }
    }

    #[test]
    fn random_dag_is_valid() {
        for s in 0..20 {
            let g = gen_random_dag(1 + s as usize * 3, 0.1, s).unwrap();
            assert!(validate(&g).is_empty());
        }
    }

    #[test]
    fn family_parsing() {
        assert_eq!("ptb".parse::<Family>().unwrap(), Family::PtbLike);
        assert_eq!("nmt_like".parse::<Family>().unwrap(), Family::NmtLike);
        assert!("rnn".parse::<Family>().is_err());
    }
}
