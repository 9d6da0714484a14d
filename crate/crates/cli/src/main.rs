//! Command-line front end for the placement lab.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use placelab::generators::{gen_dataset, Family};
use placelab::graph::{graph_stats, load_graph, save_graph};
use placelab::harness::{self, best_order_counts, phase_report, read_curves, read_records, render_table_text, write_report, ExperimentConfig};
use placelab::policy::{train, TrainConfig};
use placelab::simulator::{load_cluster, load_placement, simulate};
use placelab::traversal::traverse;
use placelab::{ClusterSpec, TraversalKind};

#[derive(Parser)]
#[command(name = "placelab", version, about = "Device placement experiments over fixed node traversal orders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic graph dataset.
    Gen {
        #[arg(long)]
        family: Family,
        #[arg(long)]
        nodes: usize,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Print a traversal order, one node name per line.
    Traverse {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        order: TraversalKind,
    },
    /// Simulate one placement and print makespan and utilization.
    Simulate {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        placement: PathBuf,
        #[arg(long)]
        cluster: PathBuf,
    },
    /// Train one agent and write its per-episode record.
    Train(TrainArgs),
    /// Run an experiment grid from a JSON config.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Rebuild tables, phases and plots from a records file.
    Report {
        #[arg(long)]
        records: PathBuf,
        /// Defaults to `curves.csv` next to the records file.
        #[arg(long)]
        curves: Option<PathBuf>,
        /// Defaults to the records file's directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        checkpoints: Option<Vec<usize>>,
        #[arg(long)]
        median: bool,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    order: TraversalKind,
    #[arg(long, default_value_t = 3)]
    devices: usize,
    #[arg(long, default_value_t = 50)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Cluster file; overrides --devices and the link flags.
    #[arg(long)]
    cluster: Option<PathBuf>,
    #[arg(long, default_value_t = 4 << 30)]
    memory: u64,
    #[arg(long, default_value_t = 1e9)]
    bandwidth: f64,
    #[arg(long, default_value_t = 1e-5)]
    latency: f64,
    #[arg(long, default_value_t = 1e-2)]
    learning_rate: f64,
    #[arg(long)]
    out: PathBuf,
}

fn parent_or_cwd(p: &Path) -> PathBuf {
    p.parent().filter(|d| !d.as_os_str().is_empty()).map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Gen {
            family,
            nodes,
            count,
            seed,
            out_dir,
        } => {
            fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
            let graphs = gen_dataset(family, count, nodes, seed)?;
            let width = count.to_string().len().max(2);
            for (i, g) in graphs.iter().enumerate() {
                let path = out_dir.join(format!("{family}-{i:0width$}.json"));
                save_graph(g, &path)?;
                let s = graph_stats(g);
                println!(
                    "{}\tnodes={} edges={} avg_degree={:.3} diameter={} longest_path={}",
                    path.display(),
                    s.num_nodes,
                    s.num_edges,
                    s.avg_degree,
                    s.diameter,
                    s.longest_path
                );
            }
        }
        Command::Traverse { graph, order } => {
            let g = load_graph(&graph)?;
            let mut out = io::BufWriter::new(io::stdout().lock());
            for v in traverse(&g, order)?.order {
                writeln!(out, "{}", g.node(v).name)?;
            }
            out.flush()?;
        }
        Command::Simulate {
            graph,
            placement,
            cluster,
        } => {
            let g = load_graph(&graph)?;
            let c = load_cluster(&cluster)?;
            let p = load_placement(&g, &placement)?;
            let r = simulate(&g, &p, &c)?;
            println!("makespan_sec\t{}", r.makespan_sec);
            for (d, u) in r.utilization().iter().enumerate() {
                println!("device_{d}_utilization\t{u:.6}");
            }
            println!("cross_device_bytes\t{}", r.cross_device_bytes);
            for v in &r.memory_violations {
                println!(
                    "memory_violation\tdevice {} needs {} bytes, capacity {}",
                    v.device, v.required_bytes, v.capacity_bytes
                );
            }
        }
        Command::Train(a) => {
            let g = load_graph(&a.graph)?;
            let cluster = match &a.cluster {
                Some(p) => load_cluster(p)?,
                None => ClusterSpec::homogeneous(a.devices, a.memory, a.bandwidth, a.latency),
            };
            let checkpoints = [9, 19, 49].into_iter().filter(|&c| c < a.episodes).collect();
            let config = TrainConfig {
                episodes: a.episodes,
                learning_rate: a.learning_rate,
                checkpoints,
                ..TrainConfig::default()
            };
            let record = train(&g, a.order, &cluster, &config, a.seed)?;
            let mut w = csv::Writer::from_path(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
            w.write_record(["episode", "makespan", "best_so_far", "unpenalized_return", "scaled_improvement"])?;
            for e in &record.episodes {
                w.write_record([
                    e.episode.to_string(),
                    e.makespan.to_string(),
                    e.best_so_far.to_string(),
                    e.unpenalized_return.to_string(),
                    e.scaled_improvement.to_string(),
                ])?;
            }
            w.flush()?;
            println!("initial_makespan\t{}", record.initial_makespan);
            for (ep, v) in &record.checkpoints {
                println!("best_at_episode_{ep}\t{v}");
            }
        }
        Command::Experiment { config, out_dir } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(d) = out_dir {
                cfg.output_dir = d;
            }
            let records = harness::run_grid(&cfg)?;
            let failed: Vec<_> = records.iter().filter(|r| !r.ok()).collect();
            for r in &failed {
                eprintln!("cell {} failed: {}", r.cell(), r.error.as_deref().unwrap_or(""));
            }
            let table = if failed.is_empty() {
                best_order_counts(&records, &cfg.checkpoints, cfg.aggregate)?
            } else {
                Default::default()
            };
            let phases = phase_report(&records, &cfg.checkpoints);
            let paths = write_report(&cfg.output_dir, Some(&cfg), &records, &table, &phases)?;
            print!("{}", render_table_text(&table));
            for t in &table.ties {
                eprintln!(
                    "tie: {}/{} {} devices episode {}: {} (credited {})",
                    t.dataset,
                    t.graph_id,
                    t.devices,
                    t.checkpoint,
                    t.orders.iter().map(|o| o.as_str()).collect::<Vec<_>>().join(", "),
                    t.credited
                );
            }
            println!("records written to {}", paths.records.display());
            if !failed.is_empty() {
                eprintln!("{} of {} cells failed", failed.len(), records.len());
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Report {
            records,
            curves,
            out_dir,
            checkpoints,
            median,
        } => {
            let mut recs = read_records(&records)?;
            let curves = curves.unwrap_or_else(|| parent_or_cwd(&records).join("curves.csv"));
            if curves.exists() {
                read_curves(&curves, &mut recs)?;
            }
            if recs.is_empty() {
                bail!("{} holds no records", records.display());
            }
            let cps = checkpoints.unwrap_or_else(|| {
                let mut c: Vec<usize> = recs.iter().flat_map(|r| r.checkpoints.iter().map(|c| c.0)).collect();
                c.sort_unstable();
                c.dedup();
                c
            });
            let aggregate = if median { harness::Aggregate::Median } else { harness::Aggregate::Mean };
            let table = best_order_counts(&recs, &cps, aggregate)?;
            let phases = phase_report(&recs, &cps);
            let out = out_dir.unwrap_or_else(|| parent_or_cwd(&records));
            write_report(&out, None, &recs, &table, &phases)?;
            print!("{}", render_table_text(&table));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.downcast_ref::<io::Error>().is_some_and(|e| e.kind() == io::ErrorKind::BrokenPipe)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
