//! Execution of manifest jobs.
//!
//! Layout under the output directory, per group `p…_q…_L…_M…`:
//!
//! * `jobs/sNNNN.csv`, `jobs/sNNNN.joint.tsv`, `jobs/sNNNN.equilibration.json`:
//!   one disorder sample; the CSV is written last and marks completion.
//! * `checkpoints/sNNNN.json`: resumable state, removed on completion.
//! * `measurements.csv`, `joint.tsv`, `equilibration.json`: the merged group,
//!   written once every sample is complete.
//!
//! CSV columns: `sample_id, temp_index, temperature, n_meas, mean_w,
//! mean_w2, mean_w3, mean_E, mean_E2, acc_frac, swap_rate`, preceded by `#`
//! comment lines with the code version, digests and seeds. `mean_E` is the
//! total energy. Joint files list `sample_id temp_index level energy count`,
//! the measurement counts per exact Wilson-loop level `k` (`w = −1 +
//! 2k/N_hex`) and exact energy; they are empty when histograms are off.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tricolor_core::mc::{check_equilibration, Checkpoint, EquilibrationStatus, LogBinnedSeries, Progress, SampleRun, System};
use tricolor_core::observables::JointCell;
use tricolor_core::{build_lattice, sample_disorder, Couplings, Series};

use crate::io::{atomic_write, read_to_string, to_json, CODE_VERSION};
use crate::plan::{GroupInfo, Job, Manifest};

pub const MEASUREMENT_FORMAT: &str = "# tricolor-measurements 1";
pub const JOINT_FORMAT: &str = "# tricolor-joint 1";
pub const CSV_COLUMNS: &str = "sample_id,temp_index,temperature,n_meas,mean_w,mean_w2,mean_w3,mean_E,mean_E2,acc_frac,swap_rate";
pub const MEASUREMENTS_FILE: &str = "measurements.csv";
pub const JOINT_FILE: &str = "joint.tsv";
pub const EQUILIBRATION_FILE: &str = "equilibration.json";

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub workers: usize,
    pub p: Option<f64>,
    pub l: Option<usize>,
    /// Half-open range of sample indices.
    pub samples: Option<(usize, usize)>,
    /// Stop each job after this many sweeps in this invocation.
    pub max_sweeps: Option<u64>,
    pub checkpoint_interval: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum JobOutcome {
    Completed,
    AlreadyDone,
    Halted,
}

#[derive(Clone, Debug, Default)]
pub struct RunSummary {
    pub completed: usize,
    pub already_done: usize,
    pub halted: usize,
    pub failed: Vec<(String, String)>,
    pub merged: Vec<String>,
}

pub struct JobPaths {
    pub csv: PathBuf,
    pub joint: PathBuf,
    pub equilibration: PathBuf,
    pub checkpoint: PathBuf,
}

pub fn job_paths(dir: &Path, job: &Job) -> JobPaths {
    let g = dir.join(&job.group);
    let stem = format!("s{:04}", job.sample);
    JobPaths {
        csv: g.join("jobs").join(format!("{stem}.csv")),
        joint: g.join("jobs").join(format!("{stem}.joint.tsv")),
        equilibration: g.join("jobs").join(format!("{stem}.equilibration.json")),
        checkpoint: g.join("checkpoints").join(format!("{stem}.json")),
    }
}

fn selected(job: &Job, opts: &RunOptions) -> bool {
    opts.p.map_or(true, |p| (p - job.p).abs() < 1e-12)
        && opts.l.map_or(true, |l| l == job.l)
        && opts.samples.map_or(true, |(a, b)| (a..b).contains(&job.sample))
}

fn group_header(manifest: &Manifest, group: &GroupInfo) -> String {
    let mut h = String::new();
    let _ = writeln!(h, "{MEASUREMENT_FORMAT}");
    let _ = writeln!(h, "# code_version {CODE_VERSION}");
    let _ = writeln!(h, "# config_digest {}", manifest.config_digest);
    let _ = writeln!(h, "# study_digest {}", manifest.study_digest);
    let _ = writeln!(h, "# master_seed {}", manifest.settings.master_seed);
    let _ = writeln!(
        h,
        "# group {} p {} q {} L {} M {} n_sites {} n_hexagons {}",
        group.name,
        group.p,
        group.q,
        group.l,
        group.m,
        3 * group.l * group.l * group.m,
        group.l * group.l * group.m
    );
    h
}

fn verdict(e: &Option<EquilibrationStatus>) -> &'static str {
    match e {
        Some(s) if s.passed => "passed",
        Some(_) => "failed",
        None => "unchecked",
    }
}

fn sample_line(job: &Job, series: &Series) -> String {
    format!(
        "# sample {} seed {} t_eq {} doublings {} equilibration {}\n",
        job.sample,
        job.seed,
        series.t_eq,
        series.doublings,
        verdict(&series.equilibration)
    )
}

fn csv_rows(job: &Job, series: &Series) -> String {
    let mut out = String::new();
    for (i, slot) in series.slots.iter().enumerate() {
        let m = slot.moments();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            job.sample, i, slot.temperature, m.n, m.mean_w, m.mean_w2, m.mean_w3, m.mean_e, m.mean_e2, slot.acceptance, slot.swap_rate
        );
    }
    out
}

fn joint_header(study_digest: &str, group: &str, n_hexagons: usize) -> String {
    format!("{JOINT_FORMAT}\n# study_digest {study_digest}\n# group {group}\n# n_hexagons {n_hexagons}\nsample_id\ttemp_index\tlevel\tenergy\tcount\n")
}

fn joint_rows(job: &Job, series: &Series) -> String {
    let mut out = String::new();
    for (i, slot) in series.slots.iter().enumerate() {
        if let Some(j) = &slot.joint {
            for c in j.cells() {
                let _ = writeln!(out, "{}\t{}\t{}\t{}\t{}", job.sample, i, c.level, c.energy, c.count);
            }
        }
    }
    out
}

/// Per-sample equilibration record kept for the group report.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SampleEquilibration {
    pub sample: usize,
    pub seed: u64,
    pub t_eq: u64,
    pub doublings: u32,
    pub status: Option<EquilibrationStatus>,
    /// Logarithmic bins of the lowest-temperature slot over the whole run.
    pub log_bins: LogBinnedSeries,
}

pub fn run_job(manifest: &Manifest, dir: &Path, job: &Job, opts: &RunOptions) -> Result<JobOutcome> {
    let paths = job_paths(dir, job);
    if paths.csv.exists() {
        return Ok(JobOutcome::AlreadyDone);
    }
    let group = manifest.group(&job.group).ok_or_else(|| anyhow!("job {} names unknown group", job.id))?;
    let g = build_lattice(job.spec()?)?;
    let disorder = sample_disorder(&g, job.noise()?, job.seed);
    let ladder = job.ladder(&manifest.settings)?;
    let mut config = job.run_config(&manifest.settings, group.samples);
    if let Some(c) = opts.checkpoint_interval {
        config.checkpoint_interval = c;
    }
    let sys = System::new(&g, &disorder, Couplings::unit());
    let mut run = if paths.checkpoint.exists() {
        let ck: Checkpoint<i64> = serde_json::from_str(&read_to_string(&paths.checkpoint)?)
            .with_context(|| format!("parsing {}", paths.checkpoint.display()))?;
        SampleRun::resume(sys, &ladder, config.clone(), job.seed, ck)
            .with_context(|| format!("refusing to resume {} from {}", job.id, paths.checkpoint.display()))?
    } else {
        SampleRun::new(sys, &ladder, config.clone(), job.seed)?
    };
    let ck_path = paths.checkpoint.clone();
    let progress = run.advance(opts.max_sweeps, |ck| {
        atomic_write(&ck_path, &serde_json::to_vec(ck)?).map_err(|e| tricolor_core::Error::Io(std::io::Error::other(e.to_string())))
    })?;
    if progress == Progress::Halted {
        return Ok(JobOutcome::Halted);
    }
    let series = run.finish();
    let eq = SampleEquilibration {
        sample: job.sample,
        seed: job.seed,
        t_eq: series.t_eq,
        doublings: series.doublings,
        status: series.equilibration.clone(),
        log_bins: series.log_bins[0].clone(),
    };
    atomic_write(&paths.equilibration, &to_json(&eq)?)?;
    let mut joint = joint_header(&manifest.study_digest, &job.group, job.l * job.l * job.m);
    joint.push_str(&joint_rows(job, &series));
    atomic_write(&paths.joint, joint.as_bytes())?;
    let mut csv = group_header(manifest, group);
    csv.push_str(&sample_line(job, &series));
    csv.push_str(CSV_COLUMNS);
    csv.push('\n');
    csv.push_str(&csv_rows(job, &series));
    atomic_write(&paths.csv, csv.as_bytes())?;
    if paths.checkpoint.exists() {
        fs::remove_file(&paths.checkpoint)?;
    }
    Ok(JobOutcome::Completed)
}

/// Group-level equilibration report: per-sample verdicts and the verdict
/// on disorder-averaged logarithmic bins of the lowest temperature.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GroupEquilibration {
    pub code_version: String,
    pub study_digest: String,
    pub group: String,
    pub samples: usize,
    pub passed_samples: usize,
    pub failed_samples: Vec<usize>,
    pub unchecked_samples: Vec<usize>,
    pub disorder_averaged: Option<EquilibrationStatus>,
    pub disorder_averaged_note: Option<String>,
}

/// Merge a complete group into its group files. Returns false when some
/// sample is still missing.
pub fn merge_group(manifest: &Manifest, dir: &Path, group: &GroupInfo) -> Result<bool> {
    let jobs: Vec<&Job> = manifest.jobs.iter().filter(|j| j.group == group.name).collect();
    if jobs.iter().any(|j| !job_paths(dir, j).csv.exists()) {
        return Ok(false);
    }
    let mut header = group_header(manifest, group);
    let mut rows = String::new();
    let mut joint = joint_header(&manifest.study_digest, &group.name, group.l * group.l * group.m);
    let mut eqs = Vec::new();
    for job in &jobs {
        let paths = job_paths(dir, job);
        let text = read_to_string(&paths.csv)?;
        for line in text.lines() {
            if line.starts_with("# sample ") {
                header.push_str(line);
                header.push('\n');
            } else if !line.starts_with('#') && line != CSV_COLUMNS {
                rows.push_str(line);
                rows.push('\n');
            }
        }
        for line in read_to_string(&paths.joint)?.lines() {
            if !line.starts_with('#') && !line.starts_with("sample_id") {
                joint.push_str(line);
                joint.push('\n');
            }
        }
        let eq: SampleEquilibration = serde_json::from_str(&read_to_string(&paths.equilibration)?)?;
        eqs.push(eq);
    }
    header.push_str(CSV_COLUMNS);
    header.push('\n');
    header.push_str(&rows);
    let bins: Vec<&LogBinnedSeries> = eqs.iter().map(|e| &e.log_bins).collect();
    let (averaged, note) = match check_equilibration(&bins, 0) {
        Ok(s) => (Some(s), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let report = GroupEquilibration {
        code_version: CODE_VERSION.into(),
        study_digest: manifest.study_digest.clone(),
        group: group.name.clone(),
        samples: eqs.len(),
        passed_samples: eqs.iter().filter(|e| e.status.as_ref().is_some_and(|s| s.passed)).count(),
        failed_samples: eqs.iter().filter(|e| e.status.as_ref().is_some_and(|s| !s.passed)).map(|e| e.sample).collect(),
        unchecked_samples: eqs.iter().filter(|e| e.status.is_none()).map(|e| e.sample).collect(),
        disorder_averaged: averaged,
        disorder_averaged_note: note,
    };
    let gdir = dir.join(&group.name);
    atomic_write(&gdir.join(EQUILIBRATION_FILE), &to_json(&report)?)?;
    atomic_write(&gdir.join(JOINT_FILE), joint.as_bytes())?;
    atomic_write(&gdir.join(MEASUREMENTS_FILE), header.as_bytes())?;
    Ok(true)
}

/// `run`: execute the selected jobs on a pool of `workers` threads, then
/// merge every complete group.
pub fn cmd_run(manifest: &Manifest, dir: &Path, opts: &RunOptions) -> Result<RunSummary> {
    let jobs: Vec<&Job> = manifest.jobs.iter().filter(|j| selected(j, opts)).collect();
    if jobs.is_empty() {
        bail!("no job matches the filters");
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.max(1))
        .build()
        .context("building worker pool")?;
    let outcomes: Vec<(String, Result<JobOutcome>)> = pool.install(|| {
        jobs.par_iter()
            .map(|job| {
                let r = run_job(manifest, dir, job, opts);
                match &r {
                    Ok(o) => info!("{}: {o:?}", job.id),
                    Err(e) => log::error!("{}: {e:#}", job.id),
                }
                (job.id.clone(), r)
            })
            .collect()
    });
    let mut summary = RunSummary::default();
    for (id, r) in outcomes {
        match r {
            Ok(JobOutcome::Completed) => summary.completed += 1,
            Ok(JobOutcome::AlreadyDone) => summary.already_done += 1,
            Ok(JobOutcome::Halted) => summary.halted += 1,
            Err(e) => summary.failed.push((id, format!("{e:#}"))),
        }
    }
    let mut touched: Vec<&str> = jobs.iter().map(|j| j.group.as_str()).collect();
    touched.dedup();
    for name in touched {
        let group = manifest.group(name).expect("group of a manifest job");
        if merge_group(manifest, dir, group)? {
            summary.merged.push(name.to_string());
        }
    }
    Ok(summary)
}

/// Parse `a..b` (half-open) or a single index.
pub fn parse_sample_range(s: &str) -> Result<(usize, usize)> {
    match s.split_once("..") {
        Some((a, b)) => {
            let (a, b): (usize, usize) = (a.trim().parse()?, b.trim().parse()?);
            if a >= b {
                bail!("empty sample range {s}");
            }
            Ok((a, b))
        }
        None => {
            let a: usize = s.trim().parse()?;
            Ok((a, a + 1))
        }
    }
}

/// Joint cells grouped by `(sample, temp_index)`.
pub type JointTable = BTreeMap<(usize, usize), Vec<JointCell>>;

/// Read a joint file: its hexagon count and its cells.
pub fn read_joint(path: &Path) -> Result<(usize, JointTable)> {
    let text = read_to_string(path)?;
    let mut n_hex = None;
    let mut out = JointTable::new();
    for (i, line) in text.lines().enumerate() {
        if let Some(b) = line.strip_prefix("# n_hexagons ") {
            n_hex = Some(b.trim().parse::<usize>().map_err(|_| anyhow!("{}:{}: bad hexagon count", path.display(), i + 1))?);
            continue;
        }
        if line.starts_with('#') || line.starts_with("sample_id") || line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            bail!("{}:{}: expected 5 tab-separated fields", path.display(), i + 1);
        }
        let bad = |what: &str| anyhow!("{}:{}: bad {what}", path.display(), i + 1);
        let sample: usize = f[0].parse().map_err(|_| bad("sample_id"))?;
        let t: usize = f[1].parse().map_err(|_| bad("temp_index"))?;
        out.entry((sample, t)).or_default().push(JointCell {
            level: f[2].parse().map_err(|_| bad("level"))?,
            energy: f[3].parse().map_err(|_| bad("energy"))?,
            count: f[4].parse().map_err(|_| bad("count"))?,
        });
    }
    let n_hex = n_hex.ok_or_else(|| anyhow!("{}: missing '# n_hexagons' header", path.display()))?;
    Ok((n_hex, out))
}
