use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use tricolor_cli::analyze::{cmd_analyze, AnalyzeOptions};
use tricolor_cli::io::to_json;
use tricolor_cli::phase::{phase_from_analyses, phase_from_table, write_phase};
use tricolor_cli::plan::{cmd_plan, env_output_dir, Manifest};
use tricolor_cli::run::{cmd_run, parse_sample_range, RunOptions};
use tricolor_cli::validate::{compare_golden, regenerate_golden, run_suite, ValidateOptions, SUITES};
use tricolor_core::analysis::Threshold;
use tricolor_core::mc::Fault;

#[derive(Parser)]
#[command(name = "tricolor", version, about = "Monte Carlo studies of the tricolored Z2xZ2 gauge theory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum InjectedFault {
    /// Metropolis decisions with the sign of ΔE reversed.
    DeltaSign,
}

#[derive(Subcommand)]
enum Command {
    /// Expand a study config into a manifest of seeded jobs.
    Plan {
        config: PathBuf,
        /// Output directory (default: TRICOLOR_OUTPUT_DIR, the config's `output`, or ./<name>).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Execute manifest jobs, resuming from checkpoints.
    Run {
        manifest: PathBuf,
        /// Output directory (default: TRICOLOR_OUTPUT_DIR or the manifest's directory).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, short = 'j', default_value_t = 1)]
        workers: usize,
        /// Only jobs with this error rate p.
        #[arg(long)]
        p: Option<f64>,
        /// Only jobs with this layer size L.
        #[arg(long = "size")]
        l: Option<usize>,
        /// Sample indices, `a..b` (half-open) or a single index.
        #[arg(long)]
        samples: Option<String>,
        /// Stop every job after this many sweeps, leaving a checkpoint.
        #[arg(long)]
        max_sweeps: Option<u64>,
        /// Sweeps between checkpoints (overrides the config; 0 disables).
        #[arg(long)]
        checkpoint_interval: Option<u64>,
    },
    /// Disorder-averaged skewness analysis of one (p, q, L, M) group.
    Analyze {
        /// Group directories or measurement CSV files.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = tricolor_core::analysis::DEFAULT_RESAMPLES)]
        resamples: usize,
    },
    /// Phase boundary, finite-size extrapolation and threshold.
    Phase {
        /// analysis.json files or directories containing them.
        inputs: Vec<PathBuf>,
        /// Read a `p tc err` table instead of analyses.
        #[arg(long, conflicts_with = "inputs")]
        boundary: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Coupling J of the Nishimori line.
        #[arg(long, default_value_t = 1.0)]
        j: f64,
    },
    /// Run invariant suites: geometry, gauge, oracle, estimators, or all.
    Validate {
        #[arg(default_values_t = ["all".to_string()])]
        suites: Vec<String>,
        #[arg(long, value_enum)]
        inject_fault: Option<InjectedFault>,
        /// Measurement sweeps for the oracle comparison.
        #[arg(long)]
        oracle_sweeps: Option<u64>,
        /// Also compare archived exact values in this directory.
        #[arg(long)]
        golden: Option<PathBuf>,
        /// Rewrite the archived exact values into this directory and exit.
        #[arg(long)]
        regenerate_golden: Option<PathBuf>,
        /// Write the JSON report here instead of standard output.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn run_dir(out: Option<PathBuf>, manifest: &Path) -> PathBuf {
    out.or_else(env_output_dir).unwrap_or_else(|| {
        manifest
            .parent()
            .map(Path::to_path_buf)
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or_else(|| PathBuf::from("."))
    })
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Plan { config, out } => {
            let (path, m) = cmd_plan(&config, out.as_deref())?;
            println!("{}: {} jobs in {} groups", path.display(), m.jobs.len(), m.groups.len());
            Ok(true)
        }
        Command::Run {
            manifest,
            out,
            workers,
            p,
            l,
            samples,
            max_sweeps,
            checkpoint_interval,
        } => {
            let m = Manifest::read(&manifest)?;
            let dir = run_dir(out, &manifest);
            let opts = RunOptions {
                workers,
                p,
                l,
                samples: samples.as_deref().map(parse_sample_range).transpose()?,
                max_sweeps,
                checkpoint_interval,
            };
            let s = cmd_run(&m, &dir, &opts)?;
            println!(
                "completed {}, already done {}, halted {}, failed {}; merged groups: {}",
                s.completed,
                s.already_done,
                s.halted,
                s.failed.len(),
                if s.merged.is_empty() { "none".into() } else { s.merged.join(", ") }
            );
            for (id, e) in &s.failed {
                eprintln!("{id}: {e}");
            }
            Ok(s.failed.is_empty())
        }
        Command::Analyze { inputs, out, resamples } => {
            let opts = AnalyzeOptions {
                resamples,
                ..AnalyzeOptions::default()
            };
            let (dir, doc) = cmd_analyze(&inputs, out.as_deref(), opts)?;
            match doc.transition() {
                Some(e) => {
                    let how = if doc.refined.is_some() { "reweighted" } else { "interpolated" };
                    println!("{}: T_c* = {:.4} ± {:.4} ({how})", dir.display(), e.tc, e.error)
                }
                None => println!("{}: no zero crossing", dir.display()),
            }
            Ok(true)
        }
        Command::Phase { inputs, boundary, out, j } => {
            let doc = match boundary {
                Some(b) => phase_from_table(&b, j)?,
                None if inputs.is_empty() => bail!("give analysis inputs or --boundary"),
                None => phase_from_analyses(&inputs, j)?,
            };
            write_phase(&doc, &out)?;
            for w in &doc.warnings {
                eprintln!("warning: {w}");
            }
            match &doc.threshold {
                Some(Threshold::Found { p_c, error }) => println!("p_c = {p_c:.4} ± {error:.4}"),
                Some(Threshold::OutsideRange) => println!("boundary does not meet the Nishimori line in range"),
                None => println!("no threshold: {}", doc.threshold_note.as_deref().unwrap_or("")),
            }
            Ok(true)
        }
        Command::Validate {
            suites,
            inject_fault,
            oracle_sweeps,
            golden,
            regenerate_golden: regen,
            report,
        } => {
            if let Some(dir) = regen {
                for name in regenerate_golden(&dir)? {
                    println!("{}", dir.join(name).display());
                }
                return Ok(true);
            }
            let opts = ValidateOptions {
                fault: inject_fault.map(|InjectedFault::DeltaSign| Fault::DeltaEnergySign),
                oracle_sweeps,
            };
            let names: Vec<String> = if suites.iter().any(|s| s == "all") {
                SUITES.iter().map(|s| s.to_string()).collect()
            } else {
                suites
            };
            let mut reports = Vec::new();
            for name in &names {
                let mut r = run_suite(name, &opts)?;
                if name == "oracle" {
                    if let Some(dir) = &golden {
                        r.checks.extend(compare_golden(dir)?);
                        r.passed = r.checks.iter().all(|c| c.passed);
                    }
                }
                eprintln!("{} {}", if r.passed { "PASS" } else { "FAIL" }, name);
                for c in r.checks.iter().filter(|c| !c.passed) {
                    eprintln!("  FAIL {}: {}", c.name, c.detail);
                }
                reports.push(r);
            }
            let json = to_json(&reports)?;
            match report {
                Some(path) => tricolor_cli::io::atomic_write(&path, &json)?,
                None => print!("{}", String::from_utf8(json).context("report encoding")?),
            }
            Ok(reports.iter().all(|r| r.passed))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
