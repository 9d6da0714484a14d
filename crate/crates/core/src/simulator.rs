//! Makespan simulation of a placement on a homogeneous device cluster.
//!
//! Cost model: each device runs one node at a time; a node becomes ready once
//! every predecessor has finished and its output has arrived. Cross-device
//! edges cost `latency + output_bytes / bandwidth`, links are dedicated and
//! never contend. When a device is idle it starts the ready node with the
//! smallest topological index. Memory violations are reported alongside the
//! timing but never change it.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ComputationGraph, NodeId, US_PER_SEC};
use crate::traversal::topo_order;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceSpec {
    pub id: usize,
    pub memory_capacity_bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub devices: Vec<DeviceSpec>,
    pub bandwidth_bytes_per_sec: f64,
    pub transfer_latency_sec: f64,
}

impl ClusterSpec {
    pub fn homogeneous(
        num_devices: usize,
        memory_capacity_bytes: u64,
        bandwidth_bytes_per_sec: f64,
        transfer_latency_sec: f64,
    ) -> Self {
        Self {
            devices: (0..num_devices)
                .map(|id| DeviceSpec {
                    id,
                    memory_capacity_bytes,
                })
                .collect(),
            bandwidth_bytes_per_sec,
            transfer_latency_sec,
        }
    }

    pub fn num_devices(&self) -> usize {
        self.devices.len()
    }

    pub fn check(&self) -> Result<()> {
        if self.devices.is_empty() {
            return Err(Error::Config("cluster needs at least one device".into()));
        }
        for (i, d) in self.devices.iter().enumerate() {
            if d.id != i {
                return Err(Error::Config(format!("device ids must be 0..N, found {} at {i}", d.id)));
            }
            if d.memory_capacity_bytes == 0 {
                return Err(Error::Config(format!("device {i} has zero memory capacity")));
            }
        }
        if !(self.bandwidth_bytes_per_sec > 0.0 && self.bandwidth_bytes_per_sec.is_finite()) {
            return Err(Error::Config("bandwidth must be positive and finite".into()));
        }
        if !(self.transfer_latency_sec >= 0.0 && self.transfer_latency_sec.is_finite()) {
            return Err(Error::Config("transfer latency must be non-negative".into()));
        }
        Ok(())
    }

    fn uniform_memory(&self) -> bool {
        self.devices
            .windows(2)
            .all(|w| w[0].memory_capacity_bytes == w[1].memory_capacity_bytes)
    }

    #[inline]
    fn transfer_time(&self, bytes: u64) -> f64 {
        self.transfer_latency_sec + bytes as f64 / self.bandwidth_bytes_per_sec
    }
}

/// Node-indexed device assignment.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Placement {
    pub assignment: Vec<usize>,
}

impl Placement {
    pub fn single_device(num_nodes: usize, device: usize) -> Self {
        Self {
            assignment: vec![device; num_nodes],
        }
    }

    #[inline]
    pub fn device_of(&self, node: NodeId) -> usize {
        self.assignment[node.0]
    }

    pub fn set(&mut self, node: NodeId, device: usize) {
        self.assignment[node.0] = device;
    }

    fn check(&self, graph: &ComputationGraph, cluster: &ClusterSpec) -> Result<()> {
        if self.assignment.len() != graph.len() {
            return Err(Error::Shape(format!(
                "placement covers {} nodes, graph has {}",
                self.assignment.len(),
                graph.len()
            )));
        }
        if let Some((v, &d)) = self
            .assignment
            .iter()
            .enumerate()
            .find(|(_, &d)| d >= cluster.num_devices())
        {
            return Err(Error::Shape(format!(
                "node {} placed on device {d}, cluster has {}",
                graph.node(NodeId(v)).name,
                cluster.num_devices()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryViolation {
    pub device: usize,
    pub required_bytes: u64,
    pub capacity_bytes: u64,
}

impl MemoryViolation {
    pub fn overflow_ratio(&self) -> f64 {
        (self.required_bytes - self.capacity_bytes) as f64 / self.capacity_bytes as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub makespan_sec: f64,
    pub per_device_busy_sec: Vec<f64>,
    pub cross_device_bytes: u64,
    pub memory_violations: Vec<MemoryViolation>,
}

impl SimulationResult {
    pub fn feasible(&self) -> bool {
        self.memory_violations.is_empty()
    }

    /// Busy fraction of the makespan per device.
    pub fn utilization(&self) -> Vec<f64> {
        self.per_device_busy_sec
            .iter()
            .map(|b| b / self.makespan_sec)
            .collect()
    }
}

pub fn check_memory(
    graph: &ComputationGraph,
    placement: &Placement,
    cluster: &ClusterSpec,
) -> Vec<MemoryViolation> {
    let mut used = vec![0u64; cluster.num_devices()];
    for (v, &d) in placement.assignment.iter().enumerate() {
        used[d] += graph.node(NodeId(v)).memory_bytes;
    }
    used.into_iter()
        .zip(&cluster.devices)
        .filter(|(u, dev)| *u > dev.memory_capacity_bytes)
        .map(|(u, dev)| MemoryViolation {
            device: dev.id,
            required_bytes: u,
            capacity_bytes: dev.memory_capacity_bytes,
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Time(f64);

impl Eq for Time {}

impl PartialOrd for Time {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Time {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Event {
    // Finish sorts before Arrive so devices free up before dispatch.
    Finish(usize),
    Arrive(usize),
}

/// Per-graph simulation state that is reused across many placements.
#[derive(Clone, Debug)]
pub struct Simulator<'g> {
    graph: &'g ComputationGraph,
    topo_rank: Vec<usize>,
    /// Microseconds, so sums of compute times stay exact.
    compute_us: Vec<f64>,
}

impl<'g> Simulator<'g> {
    pub fn new(graph: &'g ComputationGraph) -> Result<Self> {
        let topo = topo_order(graph)?;
        Ok(Self {
            graph,
            topo_rank: topo.positions(),
            compute_us: graph.nodes().iter().map(|n| n.compute_time_us as f64).collect(),
        })
    }

    pub fn graph(&self) -> &'g ComputationGraph {
        self.graph
    }

    /// Makespan only, skipping the memory check and byte accounting.
    pub fn makespan(&self, placement: &Placement, cluster: &ClusterSpec) -> f64 {
        self.run(placement, cluster).0
    }

    pub fn simulate(&self, placement: &Placement, cluster: &ClusterSpec) -> Result<SimulationResult> {
        placement.check(self.graph, cluster)?;
        let (makespan_sec, per_device_busy_sec) = self.run(placement, cluster);

        let mut sent = std::collections::HashSet::new();
        let mut cross_device_bytes = 0u64;
        for e in self.graph.edges() {
            let (ds, dd) = (placement.device_of(e.src), placement.device_of(e.dst));
            if ds != dd && sent.insert((e.src, dd)) {
                cross_device_bytes += self.graph.node(e.src).output_bytes;
            }
        }

        Ok(SimulationResult {
            makespan_sec,
            per_device_busy_sec,
            cross_device_bytes,
            memory_violations: check_memory(self.graph, placement, cluster),
        })
    }

    fn run(&self, placement: &Placement, cluster: &ClusterSpec) -> (f64, Vec<f64>) {
        let g = self.graph;
        let n = g.len();
        let num_dev = cluster.num_devices();
        let mut remaining: Vec<usize> = g.node_ids().map(|v| g.preds(v).len()).collect();
        let mut ready_at = vec![0.0f64; n];
        let mut idle = vec![true; num_dev];
        let mut busy = vec![0.0f64; num_dev];
        let mut queues: Vec<BinaryHeap<Reverse<(usize, usize)>>> = vec![BinaryHeap::new(); num_dev];
        let mut events: BinaryHeap<Reverse<(Time, Event)>> = BinaryHeap::new();

        for v in 0..n {
            if remaining[v] == 0 {
                events.push(Reverse((Time(0.0), Event::Arrive(v))));
            }
        }

        let mut makespan = 0.0f64;
        while let Some(&Reverse((Time(now), _))) = events.peek() {
            while let Some(&Reverse((Time(t), ev))) = events.peek() {
                if t != now {
                    break;
                }
                events.pop();
                match ev {
                    Event::Finish(v) => {
                        let dv = placement.assignment[v];
                        idle[dv] = true;
                        makespan = makespan.max(now);
                        for &w in g.succs(NodeId(v)) {
                            let w = w.0;
                            let arrival = if placement.assignment[w] == dv {
                                now
                            } else {
                                now + cluster.transfer_time(g.nodes()[v].output_bytes) * US_PER_SEC
                            };
                            ready_at[w] = ready_at[w].max(arrival);
                            remaining[w] -= 1;
                            if remaining[w] == 0 {
                                events.push(Reverse((Time(ready_at[w]), Event::Arrive(w))));
                            }
                        }
                    }
                    Event::Arrive(v) => {
                        queues[placement.assignment[v]].push(Reverse((self.topo_rank[v], v)));
                    }
                }
            }
            for d in 0..num_dev {
                if idle[d] {
                    if let Some(Reverse((_, v))) = queues[d].pop() {
                        idle[d] = false;
                        busy[d] += self.compute_us[v];
                        events.push(Reverse((Time(now + self.compute_us[v]), Event::Finish(v))));
                    }
                }
            }
        }
        (
            makespan / US_PER_SEC,
            busy.into_iter().map(|b| b / US_PER_SEC).collect(),
        )
    }
}

pub fn simulate(
    graph: &ComputationGraph,
    placement: &Placement,
    cluster: &ClusterSpec,
) -> Result<SimulationResult> {
    Simulator::new(graph)?.simulate(placement, cluster)
}

pub const DEFAULT_NODE_LIMIT: usize = 10;
pub const MAX_BRUTE_FORCE_DEVICES: usize = 3;

/// Exhaustive search over every memory-feasible placement. With uniform
/// device memory, placements equivalent under device relabeling are visited
/// once (restricted-growth labelings).
pub fn brute_force_optimal(
    graph: &ComputationGraph,
    cluster: &ClusterSpec,
    node_limit: usize,
) -> Result<(Placement, f64)> {
    let n = graph.len();
    let k = cluster.num_devices();
    if n > node_limit {
        return Err(Error::TooLarge(format!("{n} nodes exceeds limit {node_limit}")));
    }
    if k > MAX_BRUTE_FORCE_DEVICES {
        return Err(Error::TooLarge(format!(
            "{k} devices exceeds limit {MAX_BRUTE_FORCE_DEVICES}"
        )));
    }
    let sim = Simulator::new(graph)?;
    let symmetric = cluster.uniform_memory();
    let mut assign = vec![0usize; n];
    let mut best: Option<(Placement, f64)> = None;

    loop {
        let placement = Placement {
            assignment: assign.clone(),
        };
        if check_memory(graph, &placement, cluster).is_empty() {
            let m = sim.makespan(&placement, cluster);
            if best.as_ref().is_none_or(|(_, b)| m < *b) {
                best = Some((placement, m));
            }
        }
        if !next_assignment(&mut assign, k, symmetric) {
            break;
        }
    }
    best.ok_or(Error::Infeasible)
}

/// Advances `assign` to the next labeling; false once exhausted. In symmetric
/// mode each label is at most one more than the largest label before it.
fn next_assignment(assign: &mut [usize], k: usize, symmetric: bool) -> bool {
    let n = assign.len();
    for i in (0..n).rev() {
        let cap = if symmetric {
            let prefix_max = assign[..i].iter().copied().max().map_or(0, |m| m + 1);
            prefix_max.min(k - 1)
        } else {
            k - 1
        };
        if assign[i] < cap {
            assign[i] += 1;
            for a in &mut assign[i + 1..] {
                *a = 0;
            }
            return true;
        }
    }
    false
}

#[derive(Serialize, Deserialize)]
struct ClusterFile {
    devices: usize,
    memory_capacity_bytes: Vec<u64>,
    bandwidth_bytes_per_sec: f64,
    transfer_latency_sec: f64,
}

pub fn load_cluster(path: impl AsRef<Path>) -> Result<ClusterSpec> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    cluster_from_json(&text, &path.display().to_string())
}

pub fn cluster_from_json(text: &str, context: &str) -> Result<ClusterSpec> {
    let file: ClusterFile = serde_json::from_str(text).map_err(|e| Error::parse(context, e))?;
    let caps = match file.memory_capacity_bytes.len() {
        1 => vec![file.memory_capacity_bytes[0]; file.devices],
        n if n == file.devices => file.memory_capacity_bytes,
        n => {
            return Err(Error::parse(
                format!("{context}: memory_capacity_bytes"),
                format!("expected 1 or {} entries, found {n}", file.devices),
            ))
        }
    };
    let cluster = ClusterSpec {
        devices: caps
            .into_iter()
            .enumerate()
            .map(|(id, memory_capacity_bytes)| DeviceSpec {
                id,
                memory_capacity_bytes,
            })
            .collect(),
        bandwidth_bytes_per_sec: file.bandwidth_bytes_per_sec,
        transfer_latency_sec: file.transfer_latency_sec,
    };
    cluster.check()?;
    Ok(cluster)
}

pub fn cluster_to_json(cluster: &ClusterSpec) -> String {
    let file = ClusterFile {
        devices: cluster.num_devices(),
        memory_capacity_bytes: cluster.devices.iter().map(|d| d.memory_capacity_bytes).collect(),
        bandwidth_bytes_per_sec: cluster.bandwidth_bytes_per_sec,
        transfer_latency_sec: cluster.transfer_latency_sec,
    };
    serde_json::to_string_pretty(&file).expect("cluster serialization is infallible")
}

/// Placement files map node name to device id.
pub fn placement_from_json(graph: &ComputationGraph, text: &str, context: &str) -> Result<Placement> {
    let map: HashMap<String, usize> = serde_json::from_str(text).map_err(|e| Error::parse(context, e))?;
    let index = graph.name_index();
    let mut assignment = vec![usize::MAX; graph.len()];
    for (name, dev) in map {
        let id = index
            .get(name.as_str())
            .ok_or_else(|| Error::parse(context, format!("unknown node {name:?}")))?;
        assignment[id.0] = dev;
    }
    if let Some(v) = assignment.iter().position(|&d| d == usize::MAX) {
        return Err(Error::parse(
            context,
            format!("node {:?} has no device", graph.node(NodeId(v)).name),
        ));
    }
    Ok(Placement { assignment })
}

pub fn load_placement(graph: &ComputationGraph, path: impl AsRef<Path>) -> Result<Placement> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    placement_from_json(graph, &text, &path.display().to_string())
}

pub fn placement_to_json(graph: &ComputationGraph, placement: &Placement) -> String {
    let map: std::collections::BTreeMap<&str, usize> = graph
        .nodes()
        .iter()
        .map(|n| (n.name.as_str(), placement.device_of(n.id)))
        .collect();
    serde_json::to_string_pretty(&map).expect("placement serialization is infallible")
}
