//! Expansion of a study plan into seeded jobs, and the manifest file.
//!
//! Each job is one disorder sample of one `(p, q, L, M)` group. Its seed is
//! `derive_seed([master_seed, p_index, L, sample])`, where `p_index` numbers
//! the distinct `(p, q)` pairs in order of first appearance in the config.
//! The same seed drives the disorder signs (stream 0), replica exchange
//! (stream 1) and replica `k` (stream `2 + k`). Raising `samples` only
//! appends jobs; existing seeds stay put.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use tricolor_core::mc::{RunConfig, TemperatureLadder};
use tricolor_core::rng::derive_seed;
use tricolor_core::{LatticeSpec, NoiseParameters};

use crate::config::{parse_config, StudyPlan, StudySettings};
use crate::io::{atomic_write, read_to_string, sha256_hex, to_json, CODE_VERSION};

pub const MANIFEST_FORMAT: &str = "tricolor-manifest";
pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub id: String,
    pub group: String,
    pub row: usize,
    pub p_index: usize,
    pub p: f64,
    pub q: f64,
    pub l: usize,
    pub m: usize,
    pub b: u32,
    pub sample: usize,
    pub seed: u64,
    pub t_min: f64,
    pub t_max: f64,
    pub n_t: usize,
}

impl Job {
    pub fn spec(&self) -> Result<LatticeSpec> {
        Ok(LatticeSpec::new(self.l, self.m)?)
    }

    pub fn noise(&self) -> Result<NoiseParameters> {
        Ok(NoiseParameters::new(self.p, self.q)?)
    }

    pub fn ladder(&self, settings: &StudySettings) -> Result<TemperatureLadder> {
        Ok(TemperatureLadder::new(self.t_min, self.t_max, self.n_t, settings.spacing)?)
    }

    pub fn run_config(&self, settings: &StudySettings, samples: usize) -> RunConfig {
        let mut c = RunConfig::new(self.b);
        c.measurement_sweeps = settings.measurement_sweeps.unwrap_or(1u64 << self.b);
        c.measurement_interval = settings.measurement_interval;
        c.n_samples = samples;
        c.master_seed = settings.master_seed;
        c.checkpoint_interval = settings.checkpoint_interval;
        c.energy_check_interval = settings.energy_check_interval;
        c.max_doublings = settings.max_doublings;
        c.joint_counts = settings.histograms;
        c
    }
}

pub fn group_name(p: f64, q: f64, l: usize, m: usize) -> String {
    format!("p{p:.4}_q{q:.4}_L{l}_M{m}")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupInfo {
    pub name: String,
    pub p: f64,
    pub q: f64,
    pub l: usize,
    pub m: usize,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub code_version: String,
    /// SHA-256 of the config file text.
    pub config_digest: String,
    /// SHA-256 of the settings and job list; independent of the output
    /// location.
    pub study_digest: String,
    pub settings: StudySettings,
    pub groups: Vec<GroupInfo>,
    pub jobs: Vec<Job>,
}

impl Manifest {
    pub fn group(&self, name: &str) -> Option<&GroupInfo> {
        self.groups.iter().find(|g| g.name == name)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let m: Manifest = serde_json::from_str(&read_to_string(path)?).with_context(|| format!("parsing {}", path.display()))?;
        if m.format != MANIFEST_FORMAT || m.version != MANIFEST_VERSION {
            bail!("{}: not a version {MANIFEST_VERSION} manifest", path.display());
        }
        if m.study_digest != study_digest(&m.settings, &m.jobs)? {
            bail!("{}: study digest does not match the job list (edited by hand?)", path.display());
        }
        Ok(m)
    }
}

fn study_digest(settings: &StudySettings, jobs: &[Job]) -> Result<String> {
    let mut s = settings.clone();
    s.output = None;
    Ok(sha256_hex(&serde_json::to_vec(&(s, jobs))?))
}

pub fn expand(plan: &StudyPlan, config_text: &str) -> Result<Manifest> {
    let mut pairs: Vec<(f64, f64)> = Vec::new();
    let mut jobs = Vec::new();
    let mut groups: Vec<GroupInfo> = Vec::new();
    for (row_index, row) in plan.rows.iter().enumerate() {
        for &p in &row.p {
            let q = row.q.unwrap_or(p);
            let p_index = match pairs.iter().position(|&x| x == (p, q)) {
                Some(i) => i,
                None => {
                    pairs.push((p, q));
                    pairs.len() - 1
                }
            };
            for size in &row.sizes {
                let group = group_name(p, q, size.l, size.m);
                if groups.iter().any(|g| g.p == p && g.q == q && g.l == size.l) {
                    bail!("row at line {}: p={p}, L={} already declared by an earlier row", row.line, size.l);
                }
                groups.push(GroupInfo {
                    name: group.clone(),
                    p,
                    q,
                    l: size.l,
                    m: size.m,
                    samples: row.samples,
                });
                for sample in 0..row.samples {
                    let seed = derive_seed(&[plan.settings.master_seed, p_index as u64, size.l as u64, sample as u64]);
                    jobs.push(Job {
                        id: format!("{group}/s{sample:04}"),
                        group: group.clone(),
                        row: row_index,
                        p_index,
                        p,
                        q,
                        l: size.l,
                        m: size.m,
                        b: size.b,
                        sample,
                        seed,
                        t_min: row.t_min,
                        t_max: row.t_max,
                        n_t: row.n_t,
                    });
                }
            }
        }
    }
    Ok(Manifest {
        format: MANIFEST_FORMAT.into(),
        version: MANIFEST_VERSION,
        code_version: CODE_VERSION.into(),
        config_digest: sha256_hex(config_text.as_bytes()),
        study_digest: study_digest(&plan.settings, &jobs)?,
        settings: plan.settings.clone(),
        groups,
        jobs,
    })
}

/// Output directory: the explicit choice, else `TRICOLOR_OUTPUT_DIR`, else
/// the study's `output` setting, else `./<name>`.
pub fn output_dir(explicit: Option<&Path>, settings: &StudySettings) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .or_else(env_output_dir)
        .or_else(|| settings.output.clone())
        .unwrap_or_else(|| PathBuf::from(&settings.name))
}

pub const OUTPUT_DIR_ENV: &str = "TRICOLOR_OUTPUT_DIR";

pub fn env_output_dir() -> Option<PathBuf> {
    std::env::var_os(OUTPUT_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from)
}

/// `plan`: parse, validate, expand and write the manifest.
pub fn cmd_plan(config: &Path, out: Option<&Path>) -> Result<(PathBuf, Manifest)> {
    let text = read_to_string(config)?;
    let plan = parse_config(&text).map_err(|e| anyhow::anyhow!("{}: {e}", config.display()))?;
    let manifest = expand(&plan, &text)?;
    let dir = output_dir(out, &plan.settings);
    let path = dir.join(MANIFEST_FILE);
    atomic_write(&path, &to_json(&manifest)?)?;
    Ok((path, manifest))
}
