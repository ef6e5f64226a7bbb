//! Batch experiment driver.
//!
//! A plan is a TOML file:
//!
//! ```toml
//! output_dir = "results"
//! parallelism = 4
//! baseline = "mcf/baseline"
//!
//! [[run]]
//! label = "mcf"
//! trace = "traces/mcf.trace"
//! config = "default.toml"          # optional, built-in defaults otherwise
//! schemes = ["baseline", "nvm-only", "page-buffer", "o-sram"]
//! overrides = { "pb.threshold" = 6 }
//! sweep = { key = "llc.slice_size", values = ["4MB", "8MB", "16MB", "32MB"] }
//! ```
//!
//! Each `[[run]]` expands to one simulation per scheme and sweep value. The
//! expanded label is `label[/scheme][@key=value]`; `scheme = "..."` (singular)
//! keeps the bare label. Paths are relative to the plan file.
//!
//! The summary CSV has one row per expanded run, in plan order, with the
//! columns of [`COLUMNS`].

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::Deserialize;

use crate::config::{Scheme, SimConfig};
use crate::error::{Error, Result};
use crate::hierarchy::{run_trace, SimOptions};
use crate::metrics::{Report, RunMetrics};
use crate::trace::{load_trace, TraceRecord};

/// Overrides the plan's `output_dir` when set.
pub const OUT_DIR_ENV: &str = "PBSIM_OUT_DIR";
pub const SUMMARY_FILE: &str = "summary.csv";

/// Summary CSV columns, in order.
pub const COLUMNS: [&str; 27] = [
    "label",
    "group",
    "trace",
    "scheme",
    "sweep_key",
    "sweep_value",
    "records",
    "instructions",
    "cycles",
    "ipc",
    "l2_mpki",
    "llc_mpki",
    "llc_hit_rate",
    "pb_hit_fraction",
    "promotion_utilization",
    "avg_l2_miss_response",
    "llc_read_service_cycles",
    "ptr_received",
    "ptr_promoted",
    "ptr_eligibility",
    "energy_j",
    "ed2",
    "speedup",
    "norm_l2_miss_response",
    "norm_ed2",
    "audits",
    "audit_violations",
];

/// Metrics that get a plot-data file.
pub const PLOT_METRICS: [&str; 6] =
    ["speedup", "norm_l2_miss_response", "norm_ed2", "llc_mpki", "pb_hit_fraction", "ipc"];

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanFile {
    output_dir: Option<PathBuf>,
    parallelism: Option<usize>,
    baseline: Option<String>,
    seed: Option<u64>,
    #[serde(default)]
    run: Vec<RunSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunSpec {
    label: String,
    trace: PathBuf,
    config: Option<PathBuf>,
    scheme: Option<String>,
    schemes: Option<Vec<String>>,
    #[serde(default)]
    overrides: toml::Table,
    sweep: Option<SweepSpec>,
    baseline: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepSpec {
    key: String,
    values: Vec<toml::Value>,
}

/// One fully expanded simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedRun {
    pub label: String,
    /// The `[[run]]` label this run was expanded from.
    pub group: String,
    pub config: Option<PathBuf>,
    pub overrides: Vec<(String, toml::Value)>,
    pub trace: PathBuf,
    pub scheme: Option<Scheme>,
    /// Sweep key and the value as written in the plan.
    pub sweep: Option<(String, toml::Value)>,
    pub baseline: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub runs: Vec<PlannedRun>,
    pub output_dir: PathBuf,
    pub parallelism: usize,
}

/// Accepts `4MB`-style sizes wherever an integer is expected.
fn normalize_value(v: toml::Value) -> toml::Value {
    let toml::Value::String(s) = &v else { return v };
    let t = s.trim();
    let units = [("KB", 1i64 << 10), ("MB", 1 << 20), ("GB", 1 << 30)];
    for (suffix, mult) in units {
        if let Some(n) = t.strip_suffix(suffix).and_then(|n| n.trim().parse::<i64>().ok()) {
            return toml::Value::Integer(n * mult);
        }
    }
    v
}

fn value_text(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

impl ExperimentPlan {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        Self::from_toml_str(&text, base)
    }

    /// Parses a plan; relative paths are resolved against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let file: PlanFile = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base_dir.join(p) };
        let mut runs = Vec::new();
        for spec in file.run {
            let schemes: Vec<Option<Scheme>> = match (&spec.scheme, &spec.schemes) {
                (Some(_), Some(_)) => {
                    return Err(Error::config(format!("run `{}`: give scheme or schemes, not both", spec.label)))
                }
                (Some(s), None) => vec![Some(s.parse()?)],
                (None, Some(list)) => {
                    list.iter().map(|s| s.parse().map(Some)).collect::<Result<Vec<_>>>()?
                }
                (None, None) => vec![None],
            };
            let mut overrides: Vec<(String, toml::Value)> =
                spec.overrides.into_iter().map(|(k, v)| (k, normalize_value(v))).collect();
            if let Some(seed) = file.seed {
                overrides.push(("core.seed".into(), toml::Value::Integer(seed as i64)));
            }
            let sweep_points: Vec<Option<(String, toml::Value)>> = match &spec.sweep {
                Some(s) if s.values.is_empty() => {
                    return Err(Error::config(format!("run `{}`: empty sweep", spec.label)))
                }
                Some(s) => s.values.iter().map(|v| Some((s.key.clone(), v.clone()))).collect(),
                None => vec![None],
            };
            for scheme in &schemes {
                for point in &sweep_points {
                    let mut label = spec.label.clone();
                    if let (Some(sc), Some(_)) = (scheme, &spec.schemes) {
                        label = format!("{label}/{sc}");
                    }
                    if let Some((k, v)) = point {
                        label = format!("{label}@{k}={}", value_text(v));
                    }
                    runs.push(PlannedRun {
                        label,
                        group: spec.label.clone(),
                        config: spec.config.as_deref().map(resolve),
                        overrides: overrides.clone(),
                        trace: resolve(&spec.trace),
                        scheme: *scheme,
                        sweep: point.clone(),
                        baseline: spec.baseline.clone().or_else(|| file.baseline.clone()),
                    });
                }
            }
        }
        let plan = ExperimentPlan {
            runs,
            output_dir: resolve(&file.output_dir.unwrap_or_else(|| PathBuf::from("results"))),
            parallelism: file.parallelism.unwrap_or(1).max(1),
        };
        plan.check_labels()?;
        Ok(plan)
    }

    fn check_labels(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.runs {
            if !seen.insert(r.label.as_str()) {
                return Err(Error::config(format!("duplicate run label `{}`", r.label)));
            }
        }
        for r in &self.runs {
            if let Some(b) = &r.baseline {
                if !seen.contains(b.as_str()) {
                    return Err(Error::config(format!("baseline label `{b}` names no run")));
                }
            }
        }
        Ok(())
    }

    /// `PBSIM_OUT_DIR` if set, else the plan's directory.
    pub fn effective_output_dir(&self) -> PathBuf {
        std::env::var_os(OUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| self.output_dir.clone())
    }
}

impl PlannedRun {
    /// Config file (or defaults), then the scheme, then the overrides and sweep point.
    pub fn build_config(&self) -> Result<SimConfig> {
        let mut cfg = match &self.config {
            Some(path) => SimConfig::from_file(path)?,
            None => SimConfig::default(),
        };
        if let Some(s) = self.scheme {
            s.apply(&mut cfg);
        }
        let table = toml::Table::try_from(&cfg).map_err(|e| Error::config(e.to_string()))?;
        let mut overrides = self.overrides.clone();
        overrides.extend(self.sweep.clone().map(|(k, v)| (k, normalize_value(v))));
        SimConfig::from_table(table, &overrides)
            .map_err(|e| Error::config(format!("run `{}`: {e}", self.label)))
    }
}

#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub run: PlannedRun,
    pub scheme_name: String,
    pub metrics: RunMetrics,
    pub report: Report<f64>,
}

#[derive(Debug, Clone)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
}

/// Runs every simulation of `plan` on `plan.parallelism` threads.
pub fn run_plan(plan: &ExperimentPlan) -> Result<Summary> {
    let configs: Vec<SimConfig> = plan.runs.iter().map(PlannedRun::build_config).collect::<Result<_>>()?;
    let mut traces: HashMap<&Path, Arc<Vec<TraceRecord>>> = HashMap::new();
    for r in &plan.runs {
        if !traces.contains_key(r.trace.as_path()) {
            traces.insert(&r.trace, Arc::new(load_trace(&r.trace)?));
        }
    }
    let jobs: Vec<(&PlannedRun, &SimConfig, Arc<Vec<TraceRecord>>)> = plan
        .runs
        .iter()
        .zip(&configs)
        .map(|(r, c)| (r, c, Arc::clone(&traces[r.trace.as_path()])))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.parallelism)
        .build()
        .map_err(|e| Error::config(format!("thread pool: {e}")))?;
    let results: Vec<Result<RunMetrics>> = pool.install(|| {
        jobs.par_iter()
            .map(|(_, cfg, trace)| run_trace(cfg, trace, SimOptions::default()).map(|o| o.metrics))
            .collect()
    });
    let mut rows = Vec::with_capacity(results.len());
    for ((run, cfg, _), res) in jobs.into_iter().zip(results) {
        let metrics = res?;
        rows.push(SummaryRow {
            run: run.clone(),
            scheme_name: run.scheme.or_else(|| cfg.scheme()).map_or("custom", Scheme::name).to_string(),
            report: metrics.finalize(cfg),
            metrics,
        });
    }
    Ok(Summary { rows })
}

/// `%g`-style formatting with six significant digits.
pub fn fmt_sig6(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').unwrap();
    let exp: i32 = exp.parse().unwrap();
    if (-5..6).contains(&exp) {
        let fixed = format!("{:.*}", (5 - exp) as usize, v);
        trim_zeros(&fixed).to_string()
    } else {
        format!("{}e{exp}", trim_zeros(mantissa))
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_sig6).unwrap_or_default()
}

fn ratio(n: u64, d: u64) -> Option<f64> {
    (d > 0).then(|| n as f64 / d as f64)
}

impl Summary {
    fn baseline_of(&self, row: &SummaryRow) -> Option<&SummaryRow> {
        let label = row.run.baseline.as_ref()?;
        self.rows.iter().find(|r| &r.run.label == label)
    }

    /// (speedup, normalized L2 miss response, normalized ED²) against the
    /// row's baseline; each is a ratio of the raw sums.
    pub fn normalized(&self, row: &SummaryRow) -> [Option<f64>; 3] {
        let Some(base) = self.baseline_of(row) else { return [None; 3] };
        let (m, b) = (&row.metrics, &base.metrics);
        let speedup = ratio(b.cycles, m.cycles);
        let resp = match (ratio(m.l2_miss_response_cycles, m.l2_load_misses), ratio(b.l2_miss_response_cycles, b.l2_load_misses)) {
            (Some(x), Some(y)) if y > 0.0 => Some(x / y),
            _ => None,
        };
        let ed2 = (base.report.ed2 > 0.0).then(|| row.report.ed2 / base.report.ed2);
        [speedup, resp, ed2]
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(COLUMNS)?;
        for row in &self.rows {
            let (m, r) = (&row.metrics, &row.report);
            let [speedup, resp, ed2] = self.normalized(row);
            let (sk, sv) = match &row.run.sweep {
                Some((k, v)) => (k.clone(), value_text(v)),
                None => (String::new(), String::new()),
            };
            let rec = [
                row.run.label.clone(),
                row.run.group.clone(),
                row.run.trace.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
                row.scheme_name.clone(),
                sk,
                sv,
                m.records.to_string(),
                m.instructions.to_string(),
                m.cycles.to_string(),
                opt(r.ipc),
                opt(r.l2_mpki),
                opt(r.llc_mpki),
                opt(r.llc_hit_rate),
                opt(r.pb_hit_fraction),
                opt(r.promotion_utilization),
                opt(r.avg_l2_miss_response),
                m.llc_read_service_cycles.to_string(),
                m.ptr_received.to_string(),
                m.ptr_promoted.to_string(),
                opt(r.ptr_eligibility),
                fmt_sig6(r.energy.total),
                fmt_sig6(r.ed2),
                opt(speedup),
                opt(resp),
                opt(ed2),
                m.audits.to_string(),
                m.audit_violations.to_string(),
            ];
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }
}

/// Splits a summary CSV into per-metric TSV tables.
///
/// Runs without a sweep go to `<metric>.tsv` with one row per group and one
/// column per scheme. Swept runs go to `<metric>_vs_<key>.tsv` with one row
/// per sweep value and one column per `group/scheme`. Missing cells are empty.
pub fn emit_plot_data(csv_text: &str) -> Result<Vec<(String, String)>> {
    let mut rd = csv::Reader::from_reader(csv_text.as_bytes());
    let headers = rd.headers()?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::config(format!("summary lacks column `{name}`")))
    };
    let (group_c, scheme_c, key_c, value_c) = (col("group")?, col("scheme")?, col("sweep_key")?, col("sweep_value")?);
    let records: Vec<csv::StringRecord> = rd.records().collect::<std::result::Result<_, _>>()?;

    // sweep key -> ordered x values, ordered series, cells
    type Table = (Vec<String>, Vec<String>, HashMap<(String, String), usize>);
    let mut tables: BTreeMap<String, Table> = BTreeMap::new();
    for (i, rec) in records.iter().enumerate() {
        let key = rec[key_c].to_string();
        let (x, series) = if key.is_empty() {
            (rec[group_c].to_string(), rec[scheme_c].to_string())
        } else {
            (rec[value_c].to_string(), format!("{}/{}", &rec[group_c], &rec[scheme_c]))
        };
        let t = tables.entry(key).or_default();
        if !t.0.contains(&x) {
            t.0.push(x.clone());
        }
        if !t.1.contains(&series) {
            t.1.push(series.clone());
        }
        t.2.insert((x, series), i);
    }

    let mut files = Vec::new();
    for metric in PLOT_METRICS {
        let mc = col(metric)?;
        for (key, (xs, series, cells)) in &tables {
            let name = if key.is_empty() {
                format!("{metric}.tsv")
            } else {
                format!("{metric}_vs_{}.tsv", key.replace('.', "_"))
            };
            let mut out = String::from("x");
            for s in series {
                write!(out, "\t{s}").unwrap();
            }
            out.push('\n');
            for x in xs {
                out.push_str(x);
                for s in series {
                    let cell = cells.get(&(x.clone(), s.clone())).map(|&i| &records[i][mc]).unwrap_or("");
                    write!(out, "\t{cell}").unwrap();
                }
                out.push('\n');
            }
            files.push((name, out));
        }
    }
    Ok(files)
}

/// Writes `summary.csv` and the plot tables into `dir`; returns the CSV path.
pub fn write_outputs(summary: &Summary, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    let csv_text = summary.to_csv()?;
    let csv_path = dir.join(SUMMARY_FILE);
    std::fs::write(&csv_path, &csv_text).map_err(|e| Error::file(&csv_path, e))?;
    for (name, body) in emit_plot_data(&csv_text)? {
        let p = dir.join(name);
        std::fs::write(&p, body).map_err(|e| Error::file(&p, e))?;
    }
    Ok(csv_path)
}
