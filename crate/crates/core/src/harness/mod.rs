//! Experiment grid: every (graph, device count, order, repeat) cell trains a
//! fresh agent; results are aggregated into best-order counts and a
//! per-phase learning-speed summary.
//!
//! Cell seeds are a stable hash of the cell coordinates, so the record set
//! does not depend on how many workers run it.

mod report;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generators::{gen_dataset, Family};
use crate::graph::{load_graph, ComputationGraph};
use crate::policy::{train, EpisodeSummary, TrainConfig};
use crate::simulator::ClusterSpec;
use crate::traversal::TraversalKind;

pub use report::{
    read_curves, read_records, render_table_text, write_report, ReportPaths, CURVE_HEADER, RECORD_HEADER_PREFIX,
};

/// Where the graphs of one dataset come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DatasetSource {
    /// Every `*.json` graph file in `path`, in file-name order.
    Directory { name: String, path: PathBuf },
    Generated {
        family: Family,
        count: usize,
        target_nodes: usize,
        /// Defaults to the experiment base seed.
        #[serde(default)]
        seed: Option<u64>,
    },
}

impl DatasetSource {
    pub fn name(&self) -> String {
        match self {
            DatasetSource::Directory { name, .. } => name.clone(),
            DatasetSource::Generated { family, .. } => family.to_string(),
        }
    }

    /// `(graph id, graph)` pairs.
    pub fn load(&self, base_seed: u64) -> Result<Vec<(String, ComputationGraph)>> {
        match self {
            DatasetSource::Directory { path, .. } => {
                let entries = std::fs::read_dir(path).map_err(|e| Error::io(path, e))?;
                let mut files: Vec<PathBuf> = entries
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.extension().is_some_and(|x| x == "json"))
                    .collect();
                files.sort();
                if files.is_empty() {
                    return Err(Error::Config(format!("no graph files in {}", path.display())));
                }
                files
                    .iter()
                    .map(|f| {
                        let id = f.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                        load_graph(f).map(|g| (id, g))
                    })
                    .collect()
            }
            DatasetSource::Generated {
                family,
                count,
                target_nodes,
                seed,
            } => {
                let graphs = gen_dataset(*family, *count, *target_nodes, seed.unwrap_or(base_seed))?;
                let width = count.to_string().len().max(2);
                Ok(graphs
                    .into_iter()
                    .enumerate()
                    .map(|(i, g)| (format!("{family}-{i:0width$}"), g))
                    .collect())
            }
        }
    }
}

/// Cluster parameters shared by every device count in the grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterParams {
    pub memory_capacity_bytes: u64,
    pub bandwidth_bytes_per_sec: f64,
    pub transfer_latency_sec: f64,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            memory_capacity_bytes: 4 << 30,
            bandwidth_bytes_per_sec: 1e9,
            transfer_latency_sec: 1e-5,
        }
    }
}

impl ClusterParams {
    pub fn cluster(&self, devices: usize) -> ClusterSpec {
        ClusterSpec::homogeneous(
            devices,
            self.memory_capacity_bytes,
            self.bandwidth_bytes_per_sec,
            self.transfer_latency_sec,
        )
    }
}

/// Agent hyperparameters other than the episode budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentHyperparams {
    pub learning_rate: f64,
    pub hidden: usize,
    pub dim: usize,
    pub rounds: usize,
    pub memory_penalty: f64,
    pub grad_clip: f64,
    pub baseline_decay: f64,
}

impl Default for AgentHyperparams {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            learning_rate: t.learning_rate,
            hidden: t.hidden,
            dim: t.dim,
            rounds: t.rounds,
            memory_penalty: t.memory_penalty,
            grad_clip: t.grad_clip,
            baseline_decay: t.baseline_decay,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregate {
    #[default]
    Mean,
    Median,
}

impl Aggregate {
    pub fn apply(self, values: &[f64]) -> f64 {
        match self {
            Aggregate::Mean => values.iter().sum::<f64>() / values.len() as f64,
            Aggregate::Median => {
                let mut v = values.to_vec();
                v.sort_by(f64::total_cmp);
                let m = v.len() / 2;
                if v.len() % 2 == 1 {
                    v[m]
                } else {
                    (v[m - 1] + v[m]) / 2.0
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub datasets: Vec<DatasetSource>,
    pub device_counts: Vec<usize>,
    pub orders: Vec<TraversalKind>,
    pub repeats: usize,
    pub episodes: usize,
    pub checkpoints: Vec<usize>,
    pub cluster: ClusterParams,
    pub agent: AgentHyperparams,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
    pub base_seed: u64,
    pub aggregate: Aggregate,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            datasets: Family::ALL
                .into_iter()
                .map(|family| DatasetSource::Generated {
                    family,
                    count: 32,
                    target_nodes: family.full_scale_nodes(),
                    seed: None,
                })
                .collect(),
            device_counts: vec![3, 5, 8],
            orders: TraversalKind::ALL.to_vec(),
            repeats: 10,
            episodes: 50,
            checkpoints: vec![9, 19, 49],
            cluster: ClusterParams::default(),
            agent: AgentHyperparams::default(),
            workers: 1,
            base_seed: 0,
            aggregate: Aggregate::Mean,
            output_dir: PathBuf::from("results"),
        }
    }
}

impl ExperimentConfig {
    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.datasets.is_empty() {
            return bad("at least one dataset is required".into());
        }
        if self.repeats == 0 {
            return bad("repeats must be at least 1".into());
        }
        if self.episodes == 0 {
            return bad("episodes must be at least 1".into());
        }
        if let Some(&c) = self.checkpoints.iter().find(|&&c| c >= self.episodes) {
            return bad(format!("checkpoint {c} is not below episodes = {}", self.episodes));
        }
        if self.checkpoints.windows(2).any(|w| w[0] >= w[1]) {
            return bad("checkpoints must be strictly increasing".into());
        }
        if self.device_counts.is_empty() || self.device_counts.contains(&0) {
            return bad("device counts must be non-empty and positive".into());
        }
        if self.orders.is_empty() {
            return bad("at least one traversal order is required".into());
        }
        let names: BTreeSet<String> = self.datasets.iter().map(DatasetSource::name).collect();
        if names.len() != self.datasets.len() {
            return bad("dataset names must be unique".into());
        }
        self.cluster(1).check()
    }

    fn cluster(&self, devices: usize) -> ClusterSpec {
        self.cluster.cluster(devices)
    }

    pub fn train_config(&self) -> TrainConfig {
        let a = &self.agent;
        TrainConfig {
            episodes: self.episodes,
            learning_rate: a.learning_rate,
            hidden: a.hidden,
            dim: a.dim,
            rounds: a.rounds,
            memory_penalty: a.memory_penalty,
            grad_clip: a.grad_clip,
            baseline_decay: a.baseline_decay,
            checkpoints: self.checkpoints.clone(),
        }
    }

    pub fn from_json(text: &str, context: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::parse(context, e))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// 64-bit FNV-1a; stable across platforms and releases.
struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }

    fn bytes(mut self, data: &[u8]) -> Self {
        for &b in data {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
        self
    }

    fn field(self, data: &[u8]) -> Self {
        // Length prefix keeps ("ab", "c") and ("a", "bc") apart.
        self.bytes(&(data.len() as u64).to_le_bytes()).bytes(data)
    }
}

pub fn cell_seed(base_seed: u64, graph_id: &str, devices: usize, order: TraversalKind, repeat: usize) -> u64 {
    Fnv::new()
        .field(&base_seed.to_le_bytes())
        .field(graph_id.as_bytes())
        .field(&(devices as u64).to_le_bytes())
        .field(order.as_str().as_bytes())
        .field(&(repeat as u64).to_le_bytes())
        .0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub dataset: String,
    pub graph_id: String,
    pub num_nodes: usize,
    pub devices: usize,
    pub order: TraversalKind,
    pub repeat: usize,
    pub seed: u64,
    pub initial_makespan: f64,
    /// `(episode, best-so-far makespan)`.
    pub checkpoints: Vec<(usize, f64)>,
    pub curve: Vec<EpisodeSummary>,
    /// Wall-clock training time; kept out of the result files.
    pub duration_sec: f64,
    pub error: Option<String>,
}

impl ExperimentRecord {
    pub fn ok(&self) -> bool {
        self.error.is_none()
    }

    pub fn cell(&self) -> String {
        cell_label(&self.dataset, &self.graph_id, self.devices, self.order, self.repeat)
    }

    pub fn best_at(&self, episode: usize) -> Option<f64> {
        self.checkpoints.iter().find(|(e, _)| *e == episode).map(|&(_, v)| v)
    }
}

fn cell_label(dataset: &str, graph: &str, devices: usize, order: TraversalKind, repeat: usize) -> String {
    format!("{dataset}/{graph}/{devices}dev/{order}/r{repeat}")
}

/// Loaded graphs of every dataset, in config order.
pub struct LoadedDataset {
    pub name: String,
    pub graphs: Vec<(String, ComputationGraph)>,
}

pub fn load_datasets(config: &ExperimentConfig) -> Result<Vec<LoadedDataset>> {
    config
        .datasets
        .iter()
        .map(|d| {
            Ok(LoadedDataset {
                name: d.name(),
                graphs: d.load(config.base_seed)?,
            })
        })
        .collect()
}

struct Cell<'a> {
    dataset: &'a str,
    graph_id: &'a str,
    graph: &'a ComputationGraph,
    devices: usize,
    order: TraversalKind,
    repeat: usize,
}

fn run_cell(cell: &Cell<'_>, config: &ExperimentConfig, train_config: &TrainConfig) -> ExperimentRecord {
    let seed = cell_seed(config.base_seed, cell.graph_id, cell.devices, cell.order, cell.repeat);
    let start = Instant::now();
    let cluster = config.cluster(cell.devices);
    let outcome = train(cell.graph, cell.order, &cluster, train_config, seed);
    let duration_sec = start.elapsed().as_secs_f64();
    let mut record = ExperimentRecord {
        dataset: cell.dataset.to_string(),
        graph_id: cell.graph_id.to_string(),
        num_nodes: cell.graph.len(),
        devices: cell.devices,
        order: cell.order,
        repeat: cell.repeat,
        seed,
        initial_makespan: f64::NAN,
        checkpoints: Vec::new(),
        curve: Vec::new(),
        duration_sec,
        error: None,
    };
    match outcome {
        Ok(r) => {
            record.initial_makespan = r.initial_makespan;
            record.checkpoints = r.checkpoints;
            record.curve = r.episodes;
        }
        Err(e) => record.error = Some(e.to_string()),
    }
    record
}

/// Runs every cell of the grid on a pool of `config.workers` threads. Cell
/// failures become records with `error` set; the grid itself only fails on
/// configuration or loading errors.
pub fn run_grid(config: &ExperimentConfig) -> Result<Vec<ExperimentRecord>> {
    config.check()?;
    let datasets = load_datasets(config)?;
    run_grid_on(config, &datasets)
}

pub fn run_grid_on(config: &ExperimentConfig, datasets: &[LoadedDataset]) -> Result<Vec<ExperimentRecord>> {
    config.check()?;
    let mut cells = Vec::new();
    for d in datasets {
        for (id, g) in &d.graphs {
            for &devices in &config.device_counts {
                for &order in &config.orders {
                    for repeat in 0..config.repeats {
                        cells.push(Cell {
                            dataset: &d.name,
                            graph_id: id,
                            graph: g,
                            devices,
                            order,
                            repeat,
                        });
                    }
                }
            }
        }
    }
    let train_config = config.train_config();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(|| cells.par_iter().map(|c| run_cell(c, config, &train_config)).collect()))
}

/// One row of a best-order table: how many graphs each order won.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub dataset: String,
    pub devices: usize,
    pub checkpoint: usize,
    /// Indexed like [`TraversalKind::TABLE_ORDER`].
    pub counts: [usize; 6],
    pub graphs: usize,
}

impl TableRow {
    pub fn count(&self, kind: TraversalKind) -> usize {
        self.counts[kind.precedence()]
    }
}

/// Several orders shared the lowest aggregate for one graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tie {
    pub dataset: String,
    pub graph_id: String,
    pub devices: usize,
    pub checkpoint: usize,
    pub value: f64,
    pub orders: Vec<TraversalKind>,
    pub credited: TraversalKind,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BestOrderTable {
    pub rows: Vec<TableRow>,
    pub ties: Vec<Tie>,
}

impl BestOrderTable {
    pub fn row(&self, dataset: &str, devices: usize, checkpoint: usize) -> Option<&TableRow> {
        self.rows
            .iter()
            .find(|r| r.dataset == dataset && r.devices == devices && r.checkpoint == checkpoint)
    }
}

type CellKey<'a> = (&'a str, &'a str, usize, TraversalKind);

/// Successful records grouped by `(dataset, graph, devices, order)`.
fn group<'a>(records: &'a [ExperimentRecord]) -> BTreeMap<CellKey<'a>, Vec<&'a ExperimentRecord>> {
    let mut map: BTreeMap<CellKey<'a>, Vec<&'a ExperimentRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.ok()) {
        map.entry((&r.dataset, &r.graph_id, r.devices, r.order)).or_default().push(r);
    }
    map
}

/// Cells of the full product of the coordinates seen in `records` that have
/// no successful record.
pub fn missing_cells(records: &[ExperimentRecord]) -> Vec<String> {
    let mut graphs: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    let mut devices = BTreeSet::new();
    let mut orders = BTreeSet::new();
    let mut repeats = BTreeSet::new();
    for r in records {
        graphs.entry(&r.dataset).or_default().insert(&r.graph_id);
        devices.insert(r.devices);
        orders.insert(r.order);
        repeats.insert(r.repeat);
    }
    let present: BTreeSet<String> = records.iter().filter(|r| r.ok()).map(|r| r.cell()).collect();
    let mut missing = Vec::new();
    for (d, ids) in &graphs {
        for g in ids {
            for &dev in &devices {
                for &o in &orders {
                    for &rep in &repeats {
                        let label = cell_label(d, g, dev, o, rep);
                        if !present.contains(&label) {
                            missing.push(label);
                        }
                    }
                }
            }
        }
    }
    missing
}

/// Per dataset, device count and checkpoint, credits each graph to the
/// order with the lowest aggregate best-so-far makespan over repeats. Ties
/// go to the earliest order in [`TraversalKind::TABLE_ORDER`] and are
/// listed in [`BestOrderTable::ties`].
pub fn best_order_counts(records: &[ExperimentRecord], checkpoints: &[usize], aggregate: Aggregate) -> Result<BestOrderTable> {
    let missing = missing_cells(records);
    if !missing.is_empty() {
        return Err(Error::IncompleteGrid(missing));
    }
    let grouped = group(records);
    let mut datasets: Vec<&str> = Vec::new();
    for r in records {
        if !datasets.contains(&r.dataset.as_str()) {
            datasets.push(&r.dataset);
        }
    }
    let device_counts: BTreeSet<usize> = records.iter().map(|r| r.devices).collect();
    let orders: BTreeSet<TraversalKind> = records.iter().map(|r| r.order).collect();
    let mut ranked: Vec<TraversalKind> = orders.into_iter().collect();
    ranked.sort_by_key(|k| k.precedence());

    let mut table = BestOrderTable::default();
    for dataset in datasets {
        let graphs: BTreeSet<&str> = records
            .iter()
            .filter(|r| r.dataset == dataset)
            .map(|r| r.graph_id.as_str())
            .collect();
        for &devices in &device_counts {
            for &cp in checkpoints {
                let mut counts = [0usize; 6];
                for &g in &graphs {
                    let mut best: Option<(f64, TraversalKind)> = None;
                    let mut values = Vec::with_capacity(ranked.len());
                    for &o in &ranked {
                        let runs = &grouped[&(dataset, g, devices, o)];
                        let vals: Vec<f64> = runs
                            .iter()
                            .map(|r| {
                                r.best_at(cp).ok_or_else(|| {
                                    Error::Config(format!("record {} has no checkpoint {cp}", r.cell()))
                                })
                            })
                            .collect::<Result<_>>()?;
                        let v = aggregate.apply(&vals);
                        values.push((o, v));
                        // Strictly lower only: earlier precedence keeps ties.
                        if best.is_none_or(|(b, _)| v < b) {
                            best = Some((v, o));
                        }
                    }
                    let (value, winner) = best.expect("at least one order");
                    counts[winner.precedence()] += 1;
                    let tied: Vec<TraversalKind> = values
                        .iter()
                        .filter(|(_, v)| *v == value || (v.is_infinite() && value.is_infinite()))
                        .map(|(o, _)| *o)
                        .collect();
                    if tied.len() > 1 {
                        table.ties.push(Tie {
                            dataset: dataset.to_string(),
                            graph_id: g.to_string(),
                            devices,
                            checkpoint: cp,
                            value,
                            orders: tied,
                            credited: winner,
                        });
                    }
                }
                table.rows.push(TableRow {
                    dataset: dataset.to_string(),
                    devices,
                    checkpoint: cp,
                    counts,
                    graphs: graphs.len(),
                });
            }
        }
    }
    Ok(table)
}

/// Mean relative best-so-far improvement of one order within one phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub dataset: String,
    pub devices: usize,
    pub order: TraversalKind,
    /// First and last episode index of the phase.
    pub start: usize,
    pub end: usize,
    pub mean_improvement: f64,
    /// Curves contributing (those with a finite value at the phase start).
    pub samples: usize,
}

/// Phase boundaries from checkpoints: `[9, 19, 49]` gives episodes 1-9,
/// 10-19 and 20-49, each measured against the best-so-far at the episode
/// before the phase.
pub fn phase_bounds(checkpoints: &[usize]) -> Vec<(usize, usize)> {
    let mut prev = 0;
    checkpoints
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let b = (prev + 1, c);
            prev = c;
            b
        })
        .collect()
}

/// `(b[start-1] - b[end]) / b[start-1]` averaged over successful curves,
/// per dataset, device count and order.
pub fn phase_report(records: &[ExperimentRecord], checkpoints: &[usize]) -> Vec<PhaseSummary> {
    let bounds = phase_bounds(checkpoints);
    let mut out = Vec::new();
    let mut keys: Vec<(&str, usize, TraversalKind)> = Vec::new();
    for r in records.iter().filter(|r| r.ok()) {
        let k = (r.dataset.as_str(), r.devices, r.order);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    for (dataset, devices, order) in keys {
        let curves: Vec<&[EpisodeSummary]> = records
            .iter()
            .filter(|r| r.ok() && r.dataset == dataset && r.devices == devices && r.order == order)
            .map(|r| r.curve.as_slice())
            .collect();
        for &(start, end) in &bounds {
            let gains: Vec<f64> = curves
                .iter()
                .filter(|c| c.len() > end)
                .filter_map(|c| {
                    let before = c[start - 1].best_so_far;
                    let after = c[end].best_so_far;
                    (before.is_finite() && before > 0.0).then(|| (before - after) / before)
                })
                .collect();
            let mean_improvement = if gains.is_empty() {
                0.0
            } else {
                gains.iter().sum::<f64>() / gains.len() as f64
            };
            out.push(PhaseSummary {
                dataset: dataset.to_string(),
                devices,
                order,
                start,
                end,
                mean_improvement,
                samples: gains.len(),
            });
        }
    }
    out
}
