//! Result files: delimited text tables, learning curves, SVG plots and a
//! run manifest.
//!
//! | file          | columns |
//! |---------------|---------|
//! | `records.csv` | `dataset,graph_id,num_nodes,devices,order,repeat,seed,status,initial_makespan,error,best_ep<k>...` |
//! | `curves.csv`  | `dataset,graph_id,devices,order,repeat,episode,makespan,best_so_far,unpenalized_return,scaled_improvement` |
//! | `tables.csv`  | `dataset,devices,episode,lexico,topo,dfs_pre,rev_topo,dfs_post,bfs,graphs` |
//! | `ties.csv`    | `dataset,graph_id,devices,episode,value,orders,credited` |
//! | `phases.csv`  | `dataset,devices,order,start,end,mean_improvement,samples` |
//! | `timings.csv` | `cell,duration_sec` |
//!
//! Everything except `timings.csv` and `manifest.json` is a pure function of
//! the configuration. Makespans are in seconds.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{BestOrderTable, ExperimentConfig, ExperimentRecord, PhaseSummary, TableRow};
use crate::error::{Error, Result};
use crate::policy::EpisodeSummary;
use crate::traversal::TraversalKind;

pub const RECORD_HEADER_PREFIX: [&str; 10] = [
    "dataset",
    "graph_id",
    "num_nodes",
    "devices",
    "order",
    "repeat",
    "seed",
    "status",
    "initial_makespan",
    "error",
];

pub const CURVE_HEADER: [&str; 10] = [
    "dataset",
    "graph_id",
    "devices",
    "order",
    "repeat",
    "episode",
    "makespan",
    "best_so_far",
    "unpenalized_return",
    "scaled_improvement",
];

#[derive(Clone, Debug, PartialEq)]
pub struct ReportPaths {
    pub records: PathBuf,
    pub curves: PathBuf,
    pub tables: PathBuf,
    pub tables_text: PathBuf,
    pub ties: PathBuf,
    pub phases: PathBuf,
    pub timings: PathBuf,
    pub manifest: Option<PathBuf>,
    pub plots: Vec<PathBuf>,
}

impl ReportPaths {
    /// Files whose bytes depend only on the configuration.
    pub fn deterministic(&self) -> Vec<&Path> {
        let mut v: Vec<&Path> = vec![&self.records, &self.curves, &self.tables, &self.tables_text, &self.ties, &self.phases];
        v.extend(self.plots.iter().map(PathBuf::as_path));
        v
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(path.display().to_string(), format!("{other:?}")),
    }
}

fn write_rows<I, R>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.write_record(row.into_iter().collect::<Vec<_>>()).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn checkpoint_columns(records: &[ExperimentRecord]) -> Vec<usize> {
    let mut cps: Vec<usize> = records.iter().flat_map(|r| r.checkpoints.iter().map(|c| c.0)).collect();
    cps.sort_unstable();
    cps.dedup();
    cps
}

fn record_rows(records: &[ExperimentRecord], cps: &[usize]) -> Vec<Vec<String>> {
    records
        .iter()
        .map(|r| {
            let mut row = vec![
                r.dataset.clone(),
                r.graph_id.clone(),
                r.num_nodes.to_string(),
                r.devices.to_string(),
                r.order.to_string(),
                r.repeat.to_string(),
                r.seed.to_string(),
                if r.ok() { "ok" } else { "failed" }.to_string(),
                r.initial_makespan.to_string(),
                r.error.clone().unwrap_or_default(),
            ];
            row.extend(cps.iter().map(|&c| r.best_at(c).map(|v| v.to_string()).unwrap_or_default()));
            row
        })
        .collect()
}

fn curve_rows(records: &[ExperimentRecord]) -> impl Iterator<Item = Vec<String>> + '_ {
    records.iter().flat_map(|r| {
        r.curve.iter().map(move |e| {
            vec![
                r.dataset.clone(),
                r.graph_id.clone(),
                r.devices.to_string(),
                r.order.to_string(),
                r.repeat.to_string(),
                e.episode.to_string(),
                e.makespan.to_string(),
                e.best_so_far.to_string(),
                e.unpenalized_return.to_string(),
                e.scaled_improvement.to_string(),
            ]
        })
    })
}

fn table_header() -> Vec<&'static str> {
    let mut h = vec!["dataset", "devices", "episode"];
    h.extend(TraversalKind::TABLE_ORDER.iter().map(|k| k.column()));
    h.push("graphs");
    h
}

fn table_row(r: &TableRow) -> Vec<String> {
    let mut row = vec![r.dataset.clone(), r.devices.to_string(), r.checkpoint.to_string()];
    row.extend(r.counts.iter().map(|c| c.to_string()));
    row.push(r.graphs.to_string());
    row
}

/// Fixed-width text rendering, one block per dataset.
pub fn render_table_text(table: &BestOrderTable) -> String {
    let mut out = String::new();
    let mut datasets: Vec<&str> = Vec::new();
    for r in &table.rows {
        if !datasets.contains(&r.dataset.as_str()) {
            datasets.push(&r.dataset);
        }
    }
    for d in datasets {
        let rows: Vec<&TableRow> = table.rows.iter().filter(|r| r.dataset == d).collect();
        let graphs = rows.first().map_or(0, |r| r.graphs);
        let _ = writeln!(out, "Best traversal order on {d} ({graphs} graphs)");
        let _ = write!(out, "{:>7} {:>7}", "devices", "episode");
        for k in TraversalKind::TABLE_ORDER {
            let _ = write!(out, " {:>8}", k.column());
        }
        out.push('\n');
        for r in rows {
            let _ = write!(out, "{:>7} {:>7}", r.devices, r.checkpoint);
            for c in r.counts {
                let _ = write!(out, " {c:>8}");
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    dependencies: BTreeMap<&'static str, &'static str>,
    config: &'a ExperimentConfig,
    cells: Vec<ManifestCell>,
}

#[derive(Serialize)]
struct ManifestCell {
    cell: String,
    seed: u64,
}

fn svg_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

const PALETTE: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

/// Mean best-so-far curve per order for one graph and device count.
fn plot_svg(title: &str, series: &[(TraversalKind, Vec<f64>)]) -> String {
    let (w, h, left, right, top, bottom) = (640.0, 400.0, 70.0, 130.0, 30.0, 40.0);
    let finite = series.iter().flat_map(|(_, v)| v.iter().copied()).filter(|v| v.is_finite());
    let (mut lo, mut hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        hi = lo + lo.abs().max(1e-9) * 0.01;
    }
    let episodes = series.iter().map(|(_, v)| v.len()).max().unwrap_or(1).max(2);
    let px = |e: usize| left + (w - left - right) * e as f64 / (episodes - 1) as f64;
    let py = |v: f64| top + (h - top - bottom) * (hi - v) / (hi - lo);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{left}" y="18" font-size="13">{}</text>"#, svg_escape(title));
    let (x0, x1, y0, y1) = (left, w - right, top, h - bottom);
    let _ = writeln!(
        s,
        r#"<path d="M{x0} {y0} L{x0} {y1} L{x1} {y1}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{:.4}</text>"#, x0 - 4.0, y0 + 4.0, hi);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{:.4}</text>"#, x0 - 4.0, y1, lo);
    let _ = writeln!(s, r#"<text x="{x0}" y="{}">0</text>"#, y1 + 14.0);
    let _ = writeln!(s, r#"<text x="{x1}" y="{}" text-anchor="end">{}</text>"#, y1 + 14.0, episodes - 1);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">episode</text>"#,
        (x0 + x1) / 2.0,
        y1 + 28.0
    );
    for (i, (kind, values)) in series.iter().enumerate() {
        let color = PALETTE[kind.precedence() % PALETTE.len()];
        let points: Vec<String> = values
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .map(|(e, &v)| format!("{:.2},{:.2}", px(e), py(v)))
            .collect();
        if !points.is_empty() {
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                points.join(" ")
            );
        }
        let ly = top + 14.0 * i as f64 + 10.0;
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            x1 + 10.0,
            x1 + 30.0,
            x1 + 35.0,
            ly + 4.0,
            kind
        );
    }
    s.push_str("</svg>\n");
    s
}

fn file_safe(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn write_plots(dir: &Path, records: &[ExperimentRecord]) -> Result<Vec<PathBuf>> {
    let mut groups: BTreeMap<(&str, &str, usize), BTreeMap<TraversalKind, Vec<&ExperimentRecord>>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.ok() && !r.curve.is_empty()) {
        groups
            .entry((&r.dataset, &r.graph_id, r.devices))
            .or_default()
            .entry(r.order)
            .or_default()
            .push(r);
    }
    if groups.is_empty() {
        return Ok(Vec::new());
    }
    let plot_dir = dir.join("plots");
    fs::create_dir_all(&plot_dir).map_err(|e| Error::io(&plot_dir, e))?;
    let mut paths = Vec::new();
    for ((dataset, graph, devices), by_order) in groups {
        let mut series: Vec<(TraversalKind, Vec<f64>)> = by_order
            .into_iter()
            .map(|(kind, runs)| {
                let len = runs.iter().map(|r| r.curve.len()).min().unwrap_or(0);
                let mean = (0..len)
                    .map(|e| runs.iter().map(|r| r.curve[e].best_so_far).sum::<f64>() / runs.len() as f64)
                    .collect();
                (kind, mean)
            })
            .collect();
        series.sort_by_key(|(k, _)| k.precedence());
        let title = format!("{dataset} / {graph} / {devices} devices: mean best-so-far makespan (s)");
        let path = plot_dir.join(format!("{}_{}_{}dev.svg", file_safe(dataset), file_safe(graph), devices));
        fs::write(&path, plot_svg(&title, &series)).map_err(|e| Error::io(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}

/// Writes every result file into `dir`. The manifest is written only when
/// the configuration is known.
pub fn write_report(
    dir: impl AsRef<Path>,
    config: Option<&ExperimentConfig>,
    records: &[ExperimentRecord],
    table: &BestOrderTable,
    phases: &[PhaseSummary],
) -> Result<ReportPaths> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = ReportPaths {
        records: dir.join("records.csv"),
        curves: dir.join("curves.csv"),
        tables: dir.join("tables.csv"),
        tables_text: dir.join("tables.txt"),
        ties: dir.join("ties.csv"),
        phases: dir.join("phases.csv"),
        timings: dir.join("timings.csv"),
        manifest: config.map(|_| dir.join("manifest.json")),
        plots: write_plots(dir, records)?,
    };

    let cps = checkpoint_columns(records);
    let mut header: Vec<String> = RECORD_HEADER_PREFIX.iter().map(|s| s.to_string()).collect();
    header.extend(cps.iter().map(|c| format!("best_ep{c}")));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    write_rows(&paths.records, &header_refs, record_rows(records, &cps))?;
    write_rows(&paths.curves, &CURVE_HEADER, curve_rows(records))?;
    write_rows(&paths.tables, &table_header(), table.rows.iter().map(table_row))?;
    fs::write(&paths.tables_text, render_table_text(table)).map_err(|e| Error::io(&paths.tables_text, e))?;
    write_rows(
        &paths.ties,
        &["dataset", "graph_id", "devices", "episode", "value", "orders", "credited"],
        table.ties.iter().map(|t| {
            vec![
                t.dataset.clone(),
                t.graph_id.clone(),
                t.devices.to_string(),
                t.checkpoint.to_string(),
                t.value.to_string(),
                t.orders.iter().map(|o| o.as_str()).collect::<Vec<_>>().join(" "),
                t.credited.to_string(),
            ]
        }),
    )?;
    write_rows(
        &paths.phases,
        &["dataset", "devices", "order", "start", "end", "mean_improvement", "samples"],
        phases.iter().map(|p| {
            vec![
                p.dataset.clone(),
                p.devices.to_string(),
                p.order.to_string(),
                p.start.to_string(),
                p.end.to_string(),
                p.mean_improvement.to_string(),
                p.samples.to_string(),
            ]
        }),
    )?;
    write_rows(
        &paths.timings,
        &["cell", "duration_sec"],
        records.iter().map(|r| vec![r.cell(), format!("{:.6}", r.duration_sec)]),
    )?;
    if let (Some(cfg), Some(path)) = (config, &paths.manifest) {
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            dependencies: BTreeMap::from([
                ("csv", "1"),
                ("rand", "0.9"),
                ("rand_chacha", "0.9"),
                ("rayon", "1"),
                ("serde_json", "1"),
            ]),
            config: cfg,
            cells: records
                .iter()
                .map(|r| ManifestCell {
                    cell: r.cell(),
                    seed: r.seed,
                })
                .collect(),
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))?;
    }
    Ok(paths)
}

fn field<'r>(rec: &'r csv::StringRecord, idx: &BTreeMap<String, usize>, name: &str, ctx: &str) -> Result<&'r str> {
    idx.get(name)
        .and_then(|&i| rec.get(i))
        .ok_or_else(|| Error::parse(ctx, format!("missing column {name}")))
}

fn num<T: std::str::FromStr>(s: &str, ctx: &str, name: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    s.trim()
        .parse()
        .map_err(|e| Error::parse(ctx, format!("column {name}: {e} ({s:?})")))
}

fn open_csv(path: &Path) -> Result<(csv::Reader<fs::File>, BTreeMap<String, usize>)> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let idx = rdr
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .enumerate()
        .map(|(i, h)| (h.to_string(), i))
        .collect();
    Ok((rdr, idx))
}

/// Reads `records.csv`. Curves are left empty; see [`read_curves`].
pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<ExperimentRecord>> {
    let path = path.as_ref();
    let (mut rdr, idx) = open_csv(path)?;
    let cps: Vec<(usize, usize)> = idx
        .iter()
        .filter_map(|(h, &i)| h.strip_prefix("best_ep").and_then(|c| c.parse().ok()).map(|c| (c, i)))
        .collect();
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let ctx = format!("{} row {}", path.display(), line + 2);
        let f = |name: &str| field(&rec, &idx, name, &ctx);
        let status = f("status")?;
        let error = match status {
            "ok" => None,
            "failed" => Some(f("error")?.to_string()),
            other => return Err(Error::parse(&ctx, format!("bad status {other:?}"))),
        };
        let mut checkpoints = Vec::new();
        if error.is_none() {
            let mut sorted = cps.clone();
            sorted.sort_unstable();
            for (c, i) in sorted {
                let v = rec.get(i).unwrap_or("");
                if !v.is_empty() {
                    checkpoints.push((c, num(v, &ctx, "best_ep")?));
                }
            }
        }
        out.push(ExperimentRecord {
            dataset: f("dataset")?.to_string(),
            graph_id: f("graph_id")?.to_string(),
            num_nodes: num(f("num_nodes")?, &ctx, "num_nodes")?,
            devices: num(f("devices")?, &ctx, "devices")?,
            order: f("order")?.parse()?,
            repeat: num(f("repeat")?, &ctx, "repeat")?,
            seed: num(f("seed")?, &ctx, "seed")?,
            initial_makespan: num(f("initial_makespan")?, &ctx, "initial_makespan")?,
            checkpoints,
            curve: Vec::new(),
            duration_sec: 0.0,
            error,
        });
    }
    Ok(out)
}

/// Attaches the rows of `curves.csv` to the matching records.
pub fn read_curves(path: impl AsRef<Path>, records: &mut [ExperimentRecord]) -> Result<()> {
    let path = path.as_ref();
    let (mut rdr, idx) = open_csv(path)?;
    let mut pos: BTreeMap<String, usize> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        pos.insert(r.cell(), i);
    }
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let ctx = format!("{} row {}", path.display(), line + 2);
        let f = |name: &str| field(&rec, &idx, name, &ctx);
        let label = super::cell_label(
            f("dataset")?,
            f("graph_id")?,
            num(f("devices")?, &ctx, "devices")?,
            f("order")?.parse()?,
            num(f("repeat")?, &ctx, "repeat")?,
        );
        let &i = pos
            .get(&label)
            .ok_or_else(|| Error::parse(&ctx, format!("curve row for unknown cell {label}")))?;
        records[i].curve.push(EpisodeSummary {
            episode: num(f("episode")?, &ctx, "episode")?,
            makespan: num(f("makespan")?, &ctx, "makespan")?,
            best_so_far: num(f("best_so_far")?, &ctx, "best_so_far")?,
            unpenalized_return: num(f("unpenalized_return")?, &ctx, "unpenalized_return")?,
            scaled_improvement: num(f("scaled_improvement")?, &ctx, "scaled_improvement")?,
        });
    }
    Ok(())
}
