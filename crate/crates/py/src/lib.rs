//! Python bindings for graph generation, traversal, simulation and training.

use std::collections::HashMap;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use placelab::graph::{self as g, ComputationGraph};
use placelab::harness::{self, ExperimentConfig};
use placelab::policy::{self, TrainConfig};
use placelab::simulator::{self as sim, ClusterSpec, Placement};
use placelab::{generators, traversal, Error, TraversalKind};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse_order(order: &str) -> PyResult<TraversalKind> {
    order.parse().map_err(to_py)
}

/// A validated operator DAG.
#[pyclass(name = "Graph", module = "placelab_py", frozen)]
struct PyGraph {
    inner: ComputationGraph,
}

#[pymethods]
impl PyGraph {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        g::load_graph(path).map(|inner| Self { inner }).map_err(to_py)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        g::from_json(text, "<string>").map(|inner| Self { inner }).map_err(to_py)
    }

    fn to_json(&self) -> String {
        g::to_json(&self.inner)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        g::save_graph(&self.inner, path).map_err(to_py)
    }

    #[getter]
    fn num_nodes(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn num_edges(&self) -> usize {
        self.inner.edges().len()
    }

    fn names(&self) -> Vec<String> {
        self.inner.nodes().iter().map(|n| n.name.clone()).collect()
    }

    /// Node count, edge count, degree, diameter and friends.
    fn stats<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let s = g::graph_stats(&self.inner);
        let d = PyDict::new(py);
        d.set_item("num_nodes", s.num_nodes)?;
        d.set_item("num_edges", s.num_edges)?;
        d.set_item("avg_degree", s.avg_degree)?;
        d.set_item("diameter", s.diameter)?;
        d.set_item("longest_path", s.longest_path)?;
        d.set_item("num_sources", s.num_sources)?;
        d.set_item("num_sinks", s.num_sinks)?;
        Ok(d)
    }

    /// Longest compute-only path in seconds.
    fn critical_path(&self) -> PyResult<f64> {
        self.inner.critical_path().map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Graph(nodes={}, edges={})", self.inner.len(), self.inner.edges().len())
    }
}

/// Devices joined by one uniform link.
#[pyclass(name = "Cluster", module = "placelab_py", frozen)]
struct PyCluster {
    inner: ClusterSpec,
}

#[pymethods]
impl PyCluster {
    #[new]
    #[pyo3(signature = (devices, memory_capacity_bytes = 4 << 30, bandwidth_bytes_per_sec = 1e9, transfer_latency_sec = 1e-5))]
    fn new(devices: usize, memory_capacity_bytes: u64, bandwidth_bytes_per_sec: f64, transfer_latency_sec: f64) -> PyResult<Self> {
        let inner = ClusterSpec::homogeneous(devices, memory_capacity_bytes, bandwidth_bytes_per_sec, transfer_latency_sec);
        inner.check().map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        sim::load_cluster(path).map(|inner| Self { inner }).map_err(to_py)
    }

    #[getter]
    fn num_devices(&self) -> usize {
        self.inner.num_devices()
    }

    fn to_json(&self) -> String {
        sim::cluster_to_json(&self.inner)
    }

    fn __repr__(&self) -> String {
        format!(
            "Cluster(devices={}, bandwidth={}, latency={})",
            self.inner.num_devices(),
            self.inner.bandwidth_bytes_per_sec,
            self.inner.transfer_latency_sec
        )
    }
}

fn placement_from_map(graph: &ComputationGraph, map: &HashMap<String, usize>) -> PyResult<Placement> {
    let index = graph.name_index();
    let mut assignment = vec![usize::MAX; graph.len()];
    for (name, &dev) in map {
        let id = index
            .get(name.as_str())
            .ok_or_else(|| PyValueError::new_err(format!("unknown node {name:?}")))?;
        assignment[id.0] = dev;
    }
    if let Some(v) = assignment.iter().position(|&d| d == usize::MAX) {
        return Err(PyValueError::new_err(format!("node {:?} has no device", graph.nodes()[v].name)));
    }
    Ok(Placement { assignment })
}

fn placement_to_map(graph: &ComputationGraph, p: &Placement) -> HashMap<String, usize> {
    graph
        .nodes()
        .iter()
        .zip(&p.assignment)
        .map(|(n, &d)| (n.name.clone(), d))
        .collect()
}

/// One synthetic graph of the given family.
#[pyfunction]
fn generate(family: &str, nodes: usize, seed: u64) -> PyResult<PyGraph> {
    let family: generators::Family = family.parse().map_err(to_py)?;
    let spec = generators::FamilySpec::new(family, nodes, seed);
    generators::generate(&spec).map(|inner| PyGraph { inner }).map_err(to_py)
}

#[pyfunction]
fn gen_dataset(family: &str, count: usize, nodes: usize, seed: u64) -> PyResult<Vec<PyGraph>> {
    let family: generators::Family = family.parse().map_err(to_py)?;
    let graphs = generators::gen_dataset(family, count, nodes, seed).map_err(to_py)?;
    Ok(graphs.into_iter().map(|inner| PyGraph { inner }).collect())
}

#[pyfunction]
#[pyo3(signature = (nodes, extra_edge_prob = 0.2, seed = 0))]
fn random_dag(nodes: usize, extra_edge_prob: f64, seed: u64) -> PyResult<PyGraph> {
    generators::gen_random_dag(nodes, extra_edge_prob, seed)
        .map(|inner| PyGraph { inner })
        .map_err(to_py)
}

/// Node names in the requested order.
#[pyfunction]
fn traverse(graph: &PyGraph, order: &str) -> PyResult<Vec<String>> {
    let t = traversal::traverse(&graph.inner, parse_order(order)?).map_err(to_py)?;
    Ok(t.order.iter().map(|&v| graph.inner.node(v).name.clone()).collect())
}

#[pyfunction]
fn orders() -> Vec<&'static str> {
    TraversalKind::ALL.iter().map(|k| k.as_str()).collect()
}

/// Simulate a `{node name: device}` placement.
#[pyfunction]
fn simulate<'py>(
    py: Python<'py>,
    graph: &PyGraph,
    placement: HashMap<String, usize>,
    cluster: &PyCluster,
) -> PyResult<Bound<'py, PyDict>> {
    let p = placement_from_map(&graph.inner, &placement)?;
    let r = sim::simulate(&graph.inner, &p, &cluster.inner).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("makespan_sec", r.makespan_sec)?;
    d.set_item("utilization", r.utilization())?;
    d.set_item("per_device_busy_sec", r.per_device_busy_sec.clone())?;
    d.set_item("cross_device_bytes", r.cross_device_bytes)?;
    d.set_item("feasible", r.feasible())?;
    Ok(d)
}

/// Train one agent; returns the per-episode record as plain Python data.
#[pyfunction]
#[pyo3(signature = (graph, order, cluster, episodes = 50, seed = 0, learning_rate = 1e-2))]
fn train<'py>(
    py: Python<'py>,
    graph: &PyGraph,
    order: &str,
    cluster: &PyCluster,
    episodes: usize,
    seed: u64,
    learning_rate: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let kind = parse_order(order)?;
    let config = TrainConfig {
        episodes,
        learning_rate,
        checkpoints: [9, 19, 49].into_iter().filter(|&c| c < episodes).collect(),
        ..TrainConfig::default()
    };
    let rec = py
        .detach(|| policy::train(&graph.inner, kind, &cluster.inner, &config, seed))
        .map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("order", rec.kind.as_str())?;
    d.set_item("seed", rec.seed)?;
    d.set_item("initial_makespan", rec.initial_makespan)?;
    d.set_item("makespan", rec.episodes.iter().map(|e| e.makespan).collect::<Vec<_>>())?;
    d.set_item("best_so_far", rec.episodes.iter().map(|e| e.best_so_far).collect::<Vec<_>>())?;
    d.set_item(
        "unpenalized_return",
        rec.episodes.iter().map(|e| e.unpenalized_return).collect::<Vec<_>>(),
    )?;
    d.set_item("checkpoints", rec.checkpoints.clone())?;
    d.set_item(
        "best_placement",
        rec.best_placement.as_ref().map(|p| placement_to_map(&graph.inner, p)),
    )?;
    Ok(d)
}

#[pyfunction]
fn cell_seed(base_seed: u64, graph_id: &str, devices: usize, order: &str, repeat: usize) -> PyResult<u64> {
    Ok(harness::cell_seed(base_seed, graph_id, devices, parse_order(order)?, repeat))
}

/// Run a grid from JSON config text, write the report and return the failed cell count.
#[pyfunction]
#[pyo3(signature = (config_json, output_dir = None))]
fn run_experiment(py: Python<'_>, config_json: &str, output_dir: Option<String>) -> PyResult<usize> {
    let mut cfg = ExperimentConfig::from_json(config_json, "<string>").map_err(to_py)?;
    if let Some(d) = output_dir {
        cfg.output_dir = d.into();
    }
    py.detach(|| -> placelab::Result<usize> {
        let records = harness::run_grid(&cfg)?;
        let failed = records.iter().filter(|r| !r.ok()).count();
        let table = if failed == 0 {
            harness::best_order_counts(&records, &cfg.checkpoints, cfg.aggregate)?
        } else {
            Default::default()
        };
        let phases = harness::phase_report(&records, &cfg.checkpoints);
        harness::write_report(&cfg.output_dir, Some(&cfg), &records, &table, &phases)?;
        Ok(failed)
    })
    .map_err(to_py)
}

#[pymodule]
fn placelab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGraph>()?;
    m.add_class::<PyCluster>()?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(gen_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(random_dag, m)?)?;
    m.add_function(wrap_pyfunction!(traverse, m)?)?;
    m.add_function(wrap_pyfunction!(orders, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(cell_seed, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
