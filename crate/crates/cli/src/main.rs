use std::collections::HashSet;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pbsim::harness::{run_plan, write_outputs, ExperimentPlan};
use pbsim::synth::{generate, SynthParams};
use pbsim::trace::{load_trace, save_trace};
use pbsim::{Error, Op};

#[derive(Parser)]
#[command(name = "pbsim", version, about = "NVM last-level cache simulator with SRAM page buffers")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run an experiment plan and write summary.csv plus plot tables.
    Run {
        #[arg(long)]
        plan: PathBuf,
        /// Overrides the plan's parallelism.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Generate a synthetic trace.
    Gen {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Write the binary format instead of text.
        #[arg(long)]
        binary: bool,
    },
    /// Print statistics about a trace.
    Inspect {
        #[arg(long)]
        trace: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        _ if e.is_trace_error() => 3,
        Error::Config(_) | Error::File { .. } => 2,
        _ => 1,
    }
}

fn run(cmd: Cmd) -> pbsim::Result<()> {
    match cmd {
        Cmd::Run { plan, jobs } => {
            let mut plan = ExperimentPlan::from_file(&plan)?;
            if let Some(j) = jobs {
                plan.parallelism = j.max(1);
            }
            let summary = run_plan(&plan)?;
            let dir = plan.effective_output_dir();
            let csv = write_outputs(&summary, &dir)?;
            let violations: u64 = summary.rows.iter().map(|r| r.metrics.audit_violations).sum();
            println!("{} runs -> {}", summary.rows.len(), csv.display());
            if violations > 0 {
                eprintln!("warning: {violations} audit violations");
            }
        }
        Cmd::Gen { params, out, binary } => {
            let p = SynthParams::from_file(&params)?;
            let records = generate(&p)?;
            save_trace(&out, &records, binary)?;
            println!("{} records -> {}", records.len(), out.display());
        }
        Cmd::Inspect { trace } => {
            let records = load_trace(&trace)?;
            let writes = records.iter().filter(|r| r.op == Op::Write).count();
            let lines: HashSet<u64> = records.iter().map(|r| r.vaddr >> 6).collect();
            let pages: HashSet<u64> = records.iter().map(|r| r.vaddr >> 12).collect();
            let gaps: u64 = records.iter().map(|r| r.gap).sum();
            println!("records      {}", records.len());
            println!("reads        {}", records.len() - writes);
            println!("writes       {writes}");
            println!("instructions {}", gaps + records.len() as u64);
            println!("lines        {}", lines.len());
            println!("pages        {}", pages.len());
            println!("footprint    {} bytes", pages.len() as u64 * 4096);
            if !pages.is_empty() {
                println!("lines/page   {:.2}", lines.len() as f64 / pages.len() as f64);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pbsim: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
