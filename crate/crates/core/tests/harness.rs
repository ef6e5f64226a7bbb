use std::path::Path;

use pbsim::harness::{emit_plot_data, run_plan, write_outputs, ExperimentPlan, COLUMNS, PLOT_METRICS};
use pbsim::synth::{generate, SynthParams};
use pbsim::trace::save_trace;

fn trace_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let t = generate(&SynthParams { accesses: 20_000, page_pool: 512, seed: 3, ..SynthParams::default() }).unwrap();
    save_trace(&dir.path().join("w.trace"), &t, false).unwrap();
    dir
}

fn column<'a>(csv: &'a str, name: &str) -> Vec<&'a str> {
    let i = COLUMNS.iter().position(|c| *c == name).unwrap();
    csv.lines().skip(1).map(|l| l.split(',').nth(i).unwrap()).collect()
}

fn run(dir: &Path, plan: &str) -> String {
    let plan = ExperimentPlan::from_toml_str(plan, dir).unwrap();
    run_plan(&plan).unwrap().to_csv().unwrap()
}

#[test]
fn baseline_alone_normalizes_to_one() {
    let dir = trace_dir();
    let csv = run(dir.path(), "baseline = \"b\"\n[[run]]\nlabel = \"b\"\ntrace = \"w.trace\"\nscheme = \"baseline\"\n");
    assert_eq!(csv.lines().next().unwrap(), COLUMNS.join(","));
    for col in ["speedup", "norm_l2_miss_response", "norm_ed2"] {
        assert_eq!(column(&csv, col), ["1"], "{col}");
    }
}

#[test]
fn normalized_columns_are_ratios_of_sums() {
    let dir = trace_dir();
    let plan = ExperimentPlan::from_toml_str(
        "baseline = \"w/baseline\"\n[[run]]\nlabel = \"w\"\ntrace = \"w.trace\"\nschemes = [\"baseline\", \"page-buffer\"]\n",
        dir.path(),
    )
    .unwrap();
    let s = run_plan(&plan).unwrap();
    let (b, p) = (&s.rows[0].metrics, &s.rows[1].metrics);
    let [speedup, resp, ed2] = s.normalized(&s.rows[1]);
    assert_eq!(speedup, Some(b.cycles as f64 / p.cycles as f64));
    let avg = |m: &pbsim::RunMetrics| m.l2_miss_response_cycles as f64 / m.l2_load_misses as f64;
    assert_eq!(resp, Some(avg(p) / avg(b)));
    assert_eq!(ed2, Some(s.rows[1].report.ed2 / s.rows[0].report.ed2));
}

#[test]
fn llc_size_sweep_gives_four_rows_per_scheme() {
    let dir = trace_dir();
    let csv = run(
        dir.path(),
        "[[run]]\nlabel = \"w\"\ntrace = \"w.trace\"\n\
         schemes = [\"nvm-only\", \"page-buffer\", \"o-sram\"]\n\
         sweep = { key = \"llc.slice_size\", values = [\"4MB\", \"8MB\", \"16MB\", \"32MB\"] }\n",
    );
    let schemes = column(&csv, "scheme");
    assert_eq!(schemes.len(), 12);
    for s in ["nvm-only", "page-buffer", "o-sram"] {
        assert_eq!(schemes.iter().filter(|x| **x == s).count(), 4);
    }
    assert_eq!(&column(&csv, "sweep_value")[..4], ["4MB", "8MB", "16MB", "32MB"]);
}

#[test]
fn read_latency_sweep_slows_nvm() {
    let dir = trace_dir();
    let plan = ExperimentPlan::from_toml_str(
        "[[run]]\nlabel = \"w\"\ntrace = \"w.trace\"\nschemes = [\"nvm-only\", \"page-buffer\"]\n\
         sweep = { key = \"llc.nvm_read_extra\", values = [10, 20, 30] }\n",
        dir.path(),
    )
    .unwrap();
    let s = run_plan(&plan).unwrap();
    assert_eq!(s.rows.len(), 6);
    for w in s.rows[..3].windows(2) {
        assert!(w[0].metrics.llc_read_service_cycles <= w[1].metrics.llc_read_service_cycles);
    }
}

#[test]
fn plot_data_shapes() {
    let dir = trace_dir();
    let plan = ExperimentPlan::from_toml_str(
        "baseline = \"w/baseline\"\n\
         [[run]]\nlabel = \"w\"\ntrace = \"w.trace\"\nschemes = [\"baseline\", \"nvm-only\", \"page-buffer\", \"o-sram\"]\n\
         [[run]]\nlabel = \"s\"\ntrace = \"w.trace\"\nschemes = [\"nvm-only\", \"page-buffer\"]\n\
         sweep = { key = \"llc.nvm_read_extra\", values = [10, 20, 30] }\n",
        dir.path(),
    )
    .unwrap();
    let out = dir.path().join("out");
    let csv_path = write_outputs(&run_plan(&plan).unwrap(), &out).unwrap();
    let files = emit_plot_data(&std::fs::read_to_string(csv_path).unwrap()).unwrap();
    assert_eq!(files.len(), 2 * PLOT_METRICS.len());
    let get = |n: &str| files.iter().find(|(f, _)| f == n).unwrap().1.clone();

    let speedup = get("speedup.tsv");
    assert_eq!(speedup.lines().next().unwrap(), "x\tbaseline\tnvm-only\tpage-buffer\to-sram");
    assert_eq!(speedup.lines().count(), 2);
    assert!(speedup.lines().nth(1).unwrap().starts_with("w\t1\t"));

    let sweep = get("ipc_vs_llc_nvm_read_extra.tsv");
    assert_eq!(sweep.lines().next().unwrap(), "x\ts/nvm-only\ts/page-buffer");
    let xs: Vec<_> = sweep.lines().skip(1).map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(xs, ["10", "20", "30"]);

    for (name, body) in &files {
        assert!(out.join(name).exists(), "{name} not written");
        let widths: Vec<usize> = body.lines().map(|l| l.split('\t').count()).collect();
        assert!(widths.windows(2).all(|w| w[0] == w[1]), "{name} is ragged");
    }
}
