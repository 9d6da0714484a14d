//! The placement agent: a two-layer policy over node embeddings, episode
//! rollout in a fixed traversal order, and REINFORCE training.
//!
//! One episode visits every node exactly once. At each step the agent sees
//! the current placement, samples a device for the visited node, and is
//! rewarded with the resulting makespan improvement scaled by the initial
//! single-device makespan, minus a penalty while any device is over its
//! memory capacity. The unpenalized rewards of an episode telescope to
//! `(initial - final) / time_scale`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{self, EmbeddingOutput, EmbeddingParams, FeatureEncoder, FeatureMatrix, NodeFeatures};
use crate::error::{Error, Result};
use crate::graph::{ComputationGraph, NodeId};
use crate::linalg::{softmax, Affine, ParamSet};
use crate::simulator::{check_memory, ClusterSpec, Placement, Simulator};
use crate::traversal::{traverse, Traversal, TraversalKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    /// Input is `node embedding ⊕ global summary`.
    pub hidden: Affine,
    pub output: Affine,
}

impl PolicyParams {
    pub fn zeros(embed_dim: usize, hidden: usize, num_devices: usize) -> Self {
        Self {
            hidden: Affine::zeros(hidden, 2 * embed_dim),
            output: Affine::zeros(num_devices, hidden),
        }
    }

    pub fn init<R: Rng + ?Sized>(embed_dim: usize, hidden: usize, num_devices: usize, rng: &mut R) -> Self {
        Self {
            hidden: Affine::uniform(hidden, 2 * embed_dim, rng),
            output: Affine::uniform(num_devices, hidden, rng),
        }
    }

    pub fn num_devices(&self) -> usize {
        self.output.rows
    }
}

impl ParamSet for PolicyParams {
    fn slices(&self) -> Vec<&[f64]> {
        let mut s = self.hidden.slices();
        s.extend(self.output.slices());
        s
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut s = self.hidden.slices_mut();
        s.extend(self.output.slices_mut());
        s
    }
}

struct PolicyCache {
    input: Vec<f64>,
    hidden: Vec<f64>,
    probs: Vec<f64>,
}

fn forward_cached(params: &PolicyParams, node_embedding: &[f64], global_summary: &[f64]) -> Result<PolicyCache> {
    let mut input = Vec::with_capacity(node_embedding.len() + global_summary.len());
    input.extend_from_slice(node_embedding);
    input.extend_from_slice(global_summary);
    if input.len() != params.hidden.cols {
        return Err(Error::Shape(format!(
            "policy input width {} but layer expects {}",
            input.len(),
            params.hidden.cols
        )));
    }
    let mut hidden = vec![0.0; params.hidden.rows];
    params.hidden.apply(&input, &mut hidden);
    hidden.iter_mut().for_each(|h| *h = h.max(0.0));
    let mut logits = vec![0.0; params.output.rows];
    params.output.apply(&hidden, &mut logits);
    if !logits.iter().all(|l| l.is_finite()) {
        return Err(Error::Numeric("non-finite policy logits".into()));
    }
    Ok(PolicyCache {
        input,
        hidden,
        probs: softmax(&logits),
    })
}

/// Device probabilities for one node.
pub fn policy_forward(params: &PolicyParams, node_embedding: &[f64], global_summary: &[f64]) -> Result<Vec<f64>> {
    forward_cached(params, node_embedding, global_summary).map(|c| c.probs)
}

/// Backpropagates `scale * d log p[action]`; returns the sensitivity of the
/// policy input.
fn backward(params: &PolicyParams, cache: &PolicyCache, action: usize, scale: f64, grad: &mut PolicyParams) -> Vec<f64> {
    let dlogits: Vec<f64> = cache
        .probs
        .iter()
        .enumerate()
        .map(|(d, p)| scale * (if d == action { 1.0 } else { 0.0 } - p))
        .collect();
    grad.output.accumulate(&dlogits, &cache.hidden);
    let mut dhidden = vec![0.0; cache.hidden.len()];
    params.output.add_transpose_apply(&dlogits, &mut dhidden);
    for (g, &h) in dhidden.iter_mut().zip(&cache.hidden) {
        if h <= 0.0 {
            *g = 0.0;
        }
    }
    grad.hidden.accumulate(&dhidden, &cache.input);
    let mut dinput = vec![0.0; cache.input.len()];
    params.hidden.add_transpose_apply(&dhidden, &mut dinput);
    dinput
}

/// Embedding and policy parameters trained jointly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentParams {
    pub embedding: EmbeddingParams,
    pub policy: PolicyParams,
}

impl AgentParams {
    pub fn init<R: Rng + ?Sized>(num_devices: usize, config: &TrainConfig, rng: &mut R) -> Self {
        let width = NodeFeatures::width(num_devices);
        Self {
            embedding: EmbeddingParams::init(width, config.dim, config.rounds, rng),
            policy: PolicyParams::init(config.dim, config.hidden, num_devices, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            embedding: self.embedding.zeros_like(),
            policy: PolicyParams::zeros(self.embedding.dim, self.policy.hidden.rows, self.policy.num_devices()),
        }
    }
}

impl ParamSet for AgentParams {
    fn slices(&self) -> Vec<&[f64]> {
        let mut s = self.embedding.slices();
        s.extend(self.policy.slices());
        s
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut s = self.embedding.slices_mut();
        s.extend(self.policy.slices_mut());
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub episodes: usize,
    pub learning_rate: f64,
    pub hidden: usize,
    pub dim: usize,
    pub rounds: usize,
    pub memory_penalty: f64,
    pub grad_clip: f64,
    pub baseline_decay: f64,
    pub checkpoints: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 50,
            learning_rate: 1e-2,
            hidden: 32,
            dim: embedding::DEFAULT_DIM,
            rounds: embedding::DEFAULT_ROUNDS,
            memory_penalty: 1.0,
            grad_clip: 5.0,
            baseline_decay: 0.9,
            checkpoints: vec![9, 19, 49],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub node: NodeId,
    pub action: usize,
    pub log_prob: f64,
    /// Scaled makespan improvement minus `penalty`.
    pub reward: f64,
    pub penalty: f64,
    /// Makespan after this step's update.
    pub makespan: f64,
    pub feasible: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeTrace {
    pub initial_placement: Placement,
    pub initial_makespan: f64,
    pub time_scale: f64,
    pub steps: Vec<StepRecord>,
    pub final_placement: Placement,
    pub final_makespan: f64,
}

impl EpisodeTrace {
    pub fn unpenalized_return(&self) -> f64 {
        self.steps.iter().map(|s| s.reward + s.penalty).sum()
    }

    /// Lowest makespan among memory-feasible placements visited, including
    /// the starting placement when it is feasible.
    pub fn best_feasible(&self, initial_feasible: bool) -> Option<(usize, f64)> {
        let mut best = initial_feasible.then_some((0, self.initial_makespan));
        for (i, s) in self.steps.iter().enumerate() {
            if s.feasible && best.is_none_or(|(_, b)| s.makespan < b) {
                best = Some((i + 1, s.makespan));
            }
        }
        best
    }
}

/// Everything fixed for one training run on one graph and cluster.
pub struct Environment<'g> {
    graph: &'g ComputationGraph,
    cluster: &'g ClusterSpec,
    simulator: Simulator<'g>,
    encoder: FeatureEncoder,
    pub time_scale: f64,
    pub memory_penalty: f64,
}

impl<'g> Environment<'g> {
    /// `time_scale` is the single-device makespan (sum of compute times).
    pub fn new(graph: &'g ComputationGraph, cluster: &'g ClusterSpec, memory_penalty: f64) -> Result<Self> {
        cluster.check()?;
        let simulator = Simulator::new(graph)?;
        let time_scale = simulator.makespan(&Placement::single_device(graph.len(), 0), cluster);
        Ok(Self {
            graph,
            cluster,
            simulator,
            encoder: FeatureEncoder::new(graph, cluster.num_devices()),
            time_scale,
            memory_penalty,
        })
    }

    pub fn graph(&self) -> &'g ComputationGraph {
        self.graph
    }

    pub fn cluster(&self) -> &'g ClusterSpec {
        self.cluster
    }

    fn penalty(&self, placement: &Placement) -> (f64, bool) {
        let violations = check_memory(self.graph, placement, self.cluster);
        let over: f64 = violations.iter().map(|v| v.overflow_ratio()).sum();
        (self.memory_penalty * over, violations.is_empty())
    }

    fn embed(&self, placement: &Placement, current: NodeId, placed: &[bool], params: &EmbeddingParams, scratch: &mut FeatureMatrix) -> Result<(EmbeddingOutput, embedding::Tape)> {
        self.encoder.encode_into(placement, Some(current), placed, scratch);
        embedding::forward(self.graph, scratch, params)
    }

    fn play<R: Rng + ?Sized>(
        &self,
        traversal: &Traversal,
        params: &AgentParams,
        initial_placement: &Placement,
        rng: &mut R,
        keep: bool,
    ) -> Result<(EpisodeTrace, Vec<StepCache>)> {
        if traversal.len() != self.graph.len() {
            return Err(Error::Shape(format!(
                "traversal has {} nodes, graph has {}",
                traversal.len(),
                self.graph.len()
            )));
        }
        let mut placement = initial_placement.clone();
        let initial_makespan = self.simulator.makespan(&placement, self.cluster);
        let mut prev = initial_makespan;
        let mut placed = vec![false; self.graph.len()];
        let mut steps = Vec::with_capacity(traversal.len());
        let mut caches = Vec::with_capacity(if keep { traversal.len() } else { 0 });
        let mut features = self
            .encoder
            .encode(&placement, traversal.order.first().copied(), &placed);
        let mut state = embedding::EmbeddingState::new(self.graph, features.clone(), &params.embedding)?;
        let mut last: Option<NodeId> = None;

        for &node in &traversal.order {
            if let Some(p) = last {
                self.encoder.write_row(&mut features, p, placement.device_of(p), false, true);
                self.encoder.write_row(&mut features, node, placement.device_of(node), true, placed[node.0]);
                state.update(&features, &[p.0, node.0])?;
            }
            let policy = forward_cached(&params.policy, state.node(node), state.global_summary())?;
            let action = sample(&policy.probs, rng);
            let log_prob = policy.probs[action].ln();
            if keep {
                caches.push(StepCache {
                    features: state.features().clone(),
                    tape: state.tape(),
                    policy,
                });
            }
            placement.set(node, action);
            placed[node.0] = true;
            let makespan = self.simulator.makespan(&placement, self.cluster);
            let (penalty, feasible) = self.penalty(&placement);
            steps.push(StepRecord {
                node,
                action,
                log_prob,
                reward: (prev - makespan) / self.time_scale - penalty,
                penalty,
                makespan,
                feasible,
            });
            prev = makespan;
            last = Some(node);
        }
        let trace = EpisodeTrace {
            initial_placement: initial_placement.clone(),
            initial_makespan,
            time_scale: self.time_scale,
            steps,
            final_placement: placement,
            final_makespan: prev,
        };
        Ok((trace, caches))
    }

    pub fn run_episode<R: Rng + ?Sized>(
        &self,
        traversal: &Traversal,
        params: &AgentParams,
        initial_placement: &Placement,
        rng: &mut R,
    ) -> Result<EpisodeTrace> {
        self.play(traversal, params, initial_placement, rng, false).map(|(t, _)| t)
    }

    /// Like [`run_episode`](Self::run_episode) but keeps every step's
    /// activations so the policy gradient needs no second forward pass.
    pub fn rollout<R: Rng + ?Sized>(
        &self,
        traversal: &Traversal,
        params: &AgentParams,
        initial_placement: &Placement,
        rng: &mut R,
    ) -> Result<Rollout> {
        self.play(traversal, params, initial_placement, rng, true)
            .map(|(trace, steps)| Rollout { trace, steps })
    }

    fn step_backward(&self, params: &AgentParams, cache: &StepCache, node: NodeId, action: usize, scale: f64, grad: &mut AgentParams) {
        let dim = params.embedding.dim;
        let dinput = backward(&params.policy, &cache.policy, action, scale, &mut grad.policy);
        let mut up_node = vec![0.0; self.graph.len() * dim];
        up_node[node.0 * dim..(node.0 + 1) * dim].copy_from_slice(&dinput[..dim]);
        embedding::backward(
            self.graph,
            &cache.features,
            &params.embedding,
            &cache.tape,
            &up_node,
            &dinput[dim..],
            &mut grad.embedding,
        );
    }

    /// `Σ_k A_k log π(a_k | s_k)` averaged over traces, with the gradient
    /// with respect to every agent parameter.
    pub fn surrogate_gradient(
        &self,
        params: &AgentParams,
        traces: &[EpisodeTrace],
        advantages: &[Vec<f64>],
    ) -> Result<(f64, AgentParams)> {
        let mut grad = params.zeros_like();
        let mut objective = 0.0;
        let n = self.graph.len();
        let mut scratch = FeatureMatrix { width: 0, data: Vec::new() };
        let weight = 1.0 / traces.len().max(1) as f64;

        for (trace, adv) in traces.iter().zip(advantages) {
            let mut placement = trace.initial_placement.clone();
            let mut placed = vec![false; n];
            for (step, &a) in trace.steps.iter().zip(adv) {
                let node = step.node;
                if a != 0.0 {
                    let (emb, tape) = self.embed(&placement, node, &placed, &params.embedding, &mut scratch)?;
                    let policy = forward_cached(&params.policy, emb.node(node), &emb.global_summary)?;
                    objective += weight * a * policy.probs[step.action].ln();
                    let cache = StepCache {
                        features: std::mem::replace(&mut scratch, FeatureMatrix { width: 0, data: Vec::new() }),
                        tape,
                        policy,
                    };
                    self.step_backward(params, &cache, node, step.action, weight * a, &mut grad);
                    scratch = cache.features;
                }
                placement.set(node, step.action);
                placed[node.0] = true;
            }
        }
        if !grad.all_finite() {
            return Err(Error::Numeric("non-finite policy gradient".into()));
        }
        Ok((objective, grad))
    }

    /// [`surrogate_gradient`](Self::surrogate_gradient) from cached
    /// activations; `params` must be the parameters the rollouts used.
    pub fn surrogate_gradient_cached(
        &self,
        params: &AgentParams,
        rollouts: &[Rollout],
        advantages: &[Vec<f64>],
    ) -> Result<(f64, AgentParams)> {
        let mut grad = params.zeros_like();
        let mut objective = 0.0;
        let weight = 1.0 / rollouts.len().max(1) as f64;
        for (r, adv) in rollouts.iter().zip(advantages) {
            for ((step, cache), &a) in r.trace.steps.iter().zip(&r.steps).zip(adv) {
                if a != 0.0 {
                    objective += weight * a * cache.policy.probs[step.action].ln();
                    self.step_backward(params, cache, step.node, step.action, weight * a, &mut grad);
                }
            }
        }
        if !grad.all_finite() {
            return Err(Error::Numeric("non-finite policy gradient".into()));
        }
        Ok((objective, grad))
    }

    pub fn surrogate_objective(&self, params: &AgentParams, traces: &[EpisodeTrace], advantages: &[Vec<f64>]) -> Result<f64> {
        let n = self.graph.len();
        let mut scratch = FeatureMatrix { width: 0, data: Vec::new() };
        let weight = 1.0 / traces.len().max(1) as f64;
        let mut objective = 0.0;
        for (trace, adv) in traces.iter().zip(advantages) {
            let mut placement = trace.initial_placement.clone();
            let mut placed = vec![false; n];
            for (step, &a) in trace.steps.iter().zip(adv) {
                let (emb, _) = self.embed(&placement, step.node, &placed, &params.embedding, &mut scratch)?;
                let probs = policy_forward(&params.policy, emb.node(step.node), &emb.global_summary)?;
                objective += weight * a * probs[step.action].ln();
                placement.set(step.node, step.action);
                placed[step.node.0] = true;
            }
        }
        Ok(objective)
    }
}

struct StepCache {
    features: FeatureMatrix,
    tape: embedding::Tape,
    policy: PolicyCache,
}

/// An episode together with the activations of every step.
pub struct Rollout {
    pub trace: EpisodeTrace,
    steps: Vec<StepCache>,
}

fn sample<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// One rollout from `initial_placement`; see [`Environment::run_episode`].
pub fn run_episode<R: Rng + ?Sized>(
    graph: &ComputationGraph,
    traversal: &Traversal,
    params: &AgentParams,
    cluster: &ClusterSpec,
    initial_placement: &Placement,
    memory_penalty: f64,
    rng: &mut R,
) -> Result<EpisodeTrace> {
    Environment::new(graph, cluster, memory_penalty)?.run_episode(traversal, params, initial_placement, rng)
}

/// Exponential moving average of returns-to-go, one entry per step position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub decay: f64,
    pub values: Option<Vec<f64>>,
}

impl Baseline {
    pub fn new(decay: f64) -> Self {
        Self { decay, values: None }
    }

    /// Advantages against the current estimate; the baseline counts as zero
    /// before the first update.
    pub fn advantages(&self, returns: &[f64]) -> Vec<f64> {
        match &self.values {
            Some(b) => returns.iter().zip(b).map(|(g, b)| g - b).collect(),
            None => returns.to_vec(),
        }
    }

    pub fn update(&mut self, returns: &[f64]) {
        match &mut self.values {
            Some(b) => {
                for (b, g) in b.iter_mut().zip(returns) {
                    *b = self.decay * *b + (1.0 - self.decay) * g;
                }
            }
            None => self.values = Some(returns.to_vec()),
        }
    }
}

/// Reward-to-go from every step to the end of the episode.
pub fn returns_to_go(trace: &EpisodeTrace) -> Vec<f64> {
    let mut out = vec![0.0; trace.steps.len()];
    let mut acc = 0.0;
    for (i, s) in trace.steps.iter().enumerate().rev() {
        acc += s.reward;
        out[i] = acc;
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateStats {
    pub objective: f64,
    pub grad_norm: f64,
    pub clipped: bool,
}

fn apply_gradient(
    params: &mut AgentParams,
    mut grad: AgentParams,
    objective: f64,
    learning_rate: f64,
    grad_clip: f64,
) -> UpdateStats {
    let grad_norm = grad.l2_norm();
    let clipped = grad_clip > 0.0 && grad_norm > grad_clip;
    if clipped {
        grad.scale(grad_clip / grad_norm);
    }
    params.add_scaled(&grad, learning_rate);
    UpdateStats {
        objective,
        grad_norm,
        clipped,
    }
}

/// Gradient ascent on the REINFORCE surrogate with baseline-subtracted
/// returns-to-go and global gradient-norm clipping.
pub fn reinforce_update(
    env: &Environment<'_>,
    params: &mut AgentParams,
    traces: &[EpisodeTrace],
    baseline: &mut Baseline,
    learning_rate: f64,
    grad_clip: f64,
) -> Result<UpdateStats> {
    if traces.is_empty() {
        return Err(Error::Config("reinforce update needs at least one trace".into()));
    }
    let returns: Vec<Vec<f64>> = traces.iter().map(returns_to_go).collect();
    let advantages: Vec<Vec<f64>> = returns.iter().map(|g| baseline.advantages(g)).collect();
    let (objective, grad) = env.surrogate_gradient(params, traces, &advantages)?;
    for g in &returns {
        baseline.update(g);
    }
    Ok(apply_gradient(params, grad, objective, learning_rate, grad_clip))
}

/// [`reinforce_update`] on rollouts made with the current `params`.
pub fn reinforce_update_cached(
    env: &Environment<'_>,
    params: &mut AgentParams,
    rollouts: &[Rollout],
    baseline: &mut Baseline,
    learning_rate: f64,
    grad_clip: f64,
) -> Result<UpdateStats> {
    if rollouts.is_empty() {
        return Err(Error::Config("reinforce update needs at least one trace".into()));
    }
    let returns: Vec<Vec<f64>> = rollouts.iter().map(|r| returns_to_go(&r.trace)).collect();
    let advantages: Vec<Vec<f64>> = returns.iter().map(|g| baseline.advantages(g)).collect();
    let (objective, grad) = env.surrogate_gradient_cached(params, rollouts, &advantages)?;
    for g in &returns {
        baseline.update(g);
    }
    Ok(apply_gradient(params, grad, objective, learning_rate, grad_clip))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub episode: usize,
    pub makespan: f64,
    /// Best feasible makespan seen so far (infinite until one is found).
    pub best_so_far: f64,
    pub unpenalized_return: f64,
    /// `(initial - final) / time_scale` for this episode.
    pub scaled_improvement: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub kind: TraversalKind,
    pub seed: u64,
    pub initial_makespan: f64,
    pub episodes: Vec<EpisodeSummary>,
    pub checkpoints: Vec<(usize, f64)>,
    pub best_placement: Option<Placement>,
}

impl TrainingRecord {
    pub fn best_at(&self, episode: usize) -> Option<f64> {
        self.episodes.get(episode).map(|e| e.best_so_far)
    }
}

/// Trains a fresh agent with a fixed traversal order. Every episode starts
/// from all nodes on device 0.
pub fn train(
    graph: &ComputationGraph,
    kind: TraversalKind,
    cluster: &ClusterSpec,
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainingRecord> {
    let env = Environment::new(graph, cluster, config.memory_penalty)?;
    let traversal = traverse(graph, kind)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = AgentParams::init(cluster.num_devices(), config, &mut rng);
    let mut baseline = Baseline::new(config.baseline_decay);
    let initial = Placement::single_device(graph.len(), 0);
    let initial_feasible = check_memory(graph, &initial, cluster).is_empty();

    let mut best: Option<(f64, Placement)> = None;
    let mut episodes = Vec::with_capacity(config.episodes);
    for episode in 0..config.episodes {
        let rollout = env.rollout(&traversal, &params, &initial, &mut rng)?;
        let trace = &rollout.trace;
        if let Some((idx, m)) = trace.best_feasible(initial_feasible) {
            if best.as_ref().is_none_or(|(b, _)| m < *b) {
                best = Some((m, placement_after(trace, idx)));
            }
        }
        episodes.push(EpisodeSummary {
            episode,
            makespan: trace.final_makespan,
            best_so_far: best.as_ref().map_or(f64::INFINITY, |(b, _)| *b),
            unpenalized_return: trace.unpenalized_return(),
            scaled_improvement: (trace.initial_makespan - trace.final_makespan) / trace.time_scale,
        });
        reinforce_update_cached(
            &env,
            &mut params,
            std::slice::from_ref(&rollout),
            &mut baseline,
            config.learning_rate,
            config.grad_clip,
        )?;
    }
    let checkpoints = config
        .checkpoints
        .iter()
        .filter(|&&c| c < episodes.len())
        .map(|&c| (c, episodes[c].best_so_far))
        .collect();
    Ok(TrainingRecord {
        kind,
        seed,
        initial_makespan: env.time_scale,
        episodes,
        checkpoints,
        best_placement: best.map(|(_, p)| p),
    })
}

/// Placement after the first `steps` updates of `trace`.
fn placement_after(trace: &EpisodeTrace, steps: usize) -> Placement {
    let mut p = trace.initial_placement.clone();
    for s in &trace.steps[..steps] {
        p.set(s.node, s.action);
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::fixtures::{diamond, graph};

    #[test]
    fn zero_policy_is_uniform() {
        let p = PolicyParams::zeros(3, 4, 3);
        let probs = policy_forward(&p, &[0.5, 0.1, 0.2], &[1.0, 2.0, 3.0]).unwrap();
        for q in probs {
            assert!((q - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn bias_shift_leaves_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut p = PolicyParams::init(4, 6, 3, &mut rng);
        let e = [0.3, -0.2, 0.9, 0.0];
        let g = [0.1, 0.2, 0.3, 0.4];
        let before = policy_forward(&p, &e, &g).unwrap();
        p.output.bias.iter_mut().for_each(|b| *b += 7.5);
        let after = policy_forward(&p, &e, &g).unwrap();
        for (a, b) in before.iter().zip(&after) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((after.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(after.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn wrong_input_width_is_rejected() {
        let p = PolicyParams::zeros(3, 4, 2);
        assert!(matches!(policy_forward(&p, &[0.0; 2], &[0.0; 3]), Err(Error::Shape(_))));
    }

    #[test]
    fn single_node_single_device_episode() {
        let g = graph(&[("only", 100)], &[]);
        let c = ClusterSpec::homogeneous(1, 1 << 20, 1e9, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = AgentParams::init(1, &TrainConfig::default(), &mut rng);
        let t = traverse(&g, TraversalKind::Topo).unwrap();
        let trace = run_episode(&g, &t, &params, &c, &Placement::single_device(1, 0), 1.0, &mut rng).unwrap();
        assert_eq!(trace.steps.len(), 1);
        assert_eq!(trace.steps[0].action, 0);
        assert_eq!(trace.steps[0].reward, 0.0);
        assert_eq!(trace.steps[0].log_prob, 0.0);
    }

    #[test]
    fn forced_device_zero_gives_serial_sum() {
        let g = diamond();
        let c = ClusterSpec::homogeneous(3, 1 << 20, 1.0, 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut params = AgentParams::init(3, &TrainConfig::default(), &mut rng);
        params.policy.output = Affine::zeros(3, params.policy.output.cols);
        params.policy.output.bias[0] = 1e3;
        let t = traverse(&g, TraversalKind::Bfs).unwrap();
        let start = Placement {
            assignment: vec![1, 2, 0, 1],
        };
        let trace = run_episode(&g, &t, &params, &c, &start, 1.0, &mut rng).unwrap();
        assert!(trace.final_placement.assignment.iter().all(|&d| d == 0));
        assert_eq!(trace.final_makespan, g.total_compute());
    }

    #[test]
    fn rewards_telescope() {
        let g = diamond();
        let c = ClusterSpec::homogeneous(2, 1 << 20, 1e3, 1e-6);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = AgentParams::init(2, &TrainConfig::default(), &mut rng);
        let t = traverse(&g, TraversalKind::DfsPostorder).unwrap();
        for _ in 0..5 {
            let start = Placement {
                assignment: (0..4).map(|_| rng.random_range(0..2)).collect(),
            };
            let trace = run_episode(&g, &t, &params, &c, &start, 1.0, &mut rng).unwrap();
            let expected = (trace.initial_makespan - trace.final_makespan) / trace.time_scale;
            assert!((trace.unpenalized_return() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn memory_overflow_is_penalized() {
        let mut b = crate::graph::GraphBuilder::new();
        let x = b.add_node("x", 10, 0, 8);
        let y = b.add_node("y", 10, 0, 8);
        b.add_edge(x, y);
        let g = b.build().unwrap();
        let c = ClusterSpec::homogeneous(2, 10, 1.0, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut params = AgentParams::init(2, &TrainConfig::default(), &mut rng);
        params.policy.output = Affine::zeros(2, params.policy.output.cols);
        params.policy.output.bias[0] = 1e3;
        let t = traverse(&g, TraversalKind::Topo).unwrap();
        let start = Placement { assignment: vec![1, 1] };
        let trace = run_episode(&g, &t, &params, &c, &start, 2.0, &mut rng).unwrap();
        // After the second step both nodes sit on device 0: 16 > 10.
        let last = trace.steps[1];
        assert!(!last.feasible);
        assert!((last.penalty - 2.0 * 0.6).abs() < 1e-12);
        assert!(trace.steps[0].feasible);
    }

    #[test]
    fn zero_advantage_leaves_params() {
        let g = diamond();
        let c = ClusterSpec::homogeneous(2, 1 << 20, 1.0, 0.0);
        let env = Environment::new(&g, &c, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut params = AgentParams::init(2, &TrainConfig::default(), &mut rng);
        let t = traverse(&g, TraversalKind::Topo).unwrap();
        let trace = env.run_episode(&t, &params, &Placement::single_device(4, 0), &mut rng).unwrap();
        let mut baseline = Baseline::new(0.9);
        baseline.values = Some(returns_to_go(&trace));
        let before = params.clone();
        reinforce_update(&env, &mut params, &[trace], &mut baseline, 0.1, 5.0).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn positive_advantage_raises_action_probability() {
        let g = diamond();
        let c = ClusterSpec::homogeneous(3, 1 << 20, 1.0, 0.0);
        let env = Environment::new(&g, &c, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let params = AgentParams::init(3, &TrainConfig::default(), &mut rng);
        let t = Traversal {
            kind: TraversalKind::Topo,
            order: vec![NodeId(2)],
        };
        let start = Placement::single_device(4, 0);
        let node = NodeId(2);
        let prob = |p: &AgentParams, action: usize| {
            let f = env.encoder.encode(&start, Some(node), &[false; 4]);
            let emb = embedding::message_pass(&g, &f, &p.embedding).unwrap();
            policy_forward(&p.policy, emb.node(node), &emb.global_summary).unwrap()[action]
        };
        let trace = EpisodeTrace {
            initial_placement: start.clone(),
            initial_makespan: 4.0e-6,
            time_scale: 4.0e-6,
            steps: vec![StepRecord {
                node,
                action: 1,
                log_prob: prob(&params, 1).ln(),
                reward: 0.5,
                penalty: 0.0,
                makespan: 3.0e-6,
                feasible: true,
            }],
            final_placement: start.clone(),
            final_makespan: 3.0e-6,
        };
        assert_eq!(t.len(), 1);
        let mut updated = params.clone();
        let mut baseline = Baseline::new(0.9);
        reinforce_update(&env, &mut updated, &[trace], &mut baseline, 0.05, 5.0).unwrap();
        assert!(prob(&updated, 1) > prob(&params, 1));
    }

    #[test]
    fn baseline_ema() {
        let mut b = Baseline::new(0.9);
        assert_eq!(b.advantages(&[1.0, 2.0]), vec![1.0, 2.0]);
        b.update(&[1.0, 2.0]);
        assert_eq!(b.advantages(&[1.0, 2.0]), vec![0.0, 0.0]);
        b.update(&[2.0, 2.0]);
        let v = b.values.clone().unwrap();
        assert!((v[0] - 1.1).abs() < 1e-12 && (v[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn training_is_seeded_and_monotone() {
        let g = diamond();
        let c = ClusterSpec::homogeneous(2, 1 << 20, 1e6, 1e-6);
        let cfg = TrainConfig {
            episodes: 12,
            ..TrainConfig::default()
        };
        let a = train(&g, TraversalKind::Bfs, &c, &cfg, 42).unwrap();
        let b = train(&g, TraversalKind::Bfs, &c, &cfg, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.episodes.windows(2).all(|w| w[1].best_so_far <= w[0].best_so_far));
        assert_eq!(a.checkpoints.len(), 1);
        assert_eq!(a.checkpoints[0].0, 9);
    }

    #[test]
    fn cached_gradient_matches_recomputed() {
        let g = crate::generators::gen_random_dag(12, 0.2, 9).unwrap();
        let c = ClusterSpec::homogeneous(3, 1 << 30, 1e6, 1e-6);
        let env = Environment::new(&g, &c, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let params = AgentParams::init(3, &TrainConfig::default(), &mut rng);
        let start = Placement {
            assignment: (0..12).map(|i| i % 3).collect(),
        };
        for kind in TraversalKind::ALL {
            let t = traverse(&g, kind).unwrap();
            let mut r1 = ChaCha8Rng::seed_from_u64(11);
            let mut r2 = r1.clone();
            let rollout = env.rollout(&t, &params, &start, &mut r1).unwrap();
            let trace = env.run_episode(&t, &params, &start, &mut r2).unwrap();
            assert_eq!(rollout.trace, trace);
            let adv = vec![trace.steps.iter().map(|s| s.reward - 0.01).collect::<Vec<_>>()];
            let (o1, g1) = env.surrogate_gradient_cached(&params, std::slice::from_ref(&rollout), &adv).unwrap();
            let (o2, g2) = env.surrogate_gradient(&params, &[trace], &adv).unwrap();
            assert_eq!(o1, o2);
            assert_eq!(g1, g2);
        }
    }
}
