//! Disorder-averaged analysis of one group of measurements.
//!
//! Inputs are group directories (their `measurements.csv`) or measurement
//! CSV files; every input must belong to the same `(p, q, L, M)` group and
//! temperature ladder. Joint files next to the CSVs (`joint.tsv` beside
//! `measurements.csv`, `sNNNN.joint.tsv` beside `sNNNN.csv`) enable the
//! histogram results.
//!
//! Outputs, in the output directory:
//!
//! * `analysis.json`: provenance, the skewness curve, the specific-heat
//!   peak, the zero crossing, its reweighted refinement, the Maxwell
//!   cross-check and the `f(w)` split.
//!
//! The crossing on the ladder is a linear interpolation between the two
//! bracketing temperatures. With joint counts it is refined by combining
//! each sample's counts from the bracketing slots as multiple histograms
//! and locating the zero of the reweighted curve (see [`refine_crossing`]);
//! the refined value, when present, is the transition estimate used
//! downstream, and `f(w)` is evaluated there from the same histograms.
//! * `zeta.tsv`: `T zeta zeta_err c mean_w`.
//! * `fw.tsv`: `w f` at the transition estimate.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use tricolor_core::analysis::{
    bracket_histograms, find_zero_crossing, maxwell_crosscheck, refine_crossing, skewness_curve, specific_heat_peak, split_double_peak,
    CurveMeta, Crossing, HeatPeak, MaxwellOptions, MaxwellResult, Orientation, PeakSplit, Refinement, TransitionEstimate,
    DEFAULT_RESAMPLES, REFINEMENT_GRID,
};
use tricolor_core::observables::{pooled_level_histogram, reweighted_joint_histogram, JointCounts, DEFAULT_HISTOGRAM_BINS};
use tricolor_core::{Curve, Histogram, Moments};

use crate::io::{atomic_write, display_name, read_to_string, sha256_hex, to_json, CODE_VERSION};
use crate::run::{read_joint, CSV_COLUMNS, EQUILIBRATION_FILE, MEASUREMENTS_FILE, MEASUREMENT_FORMAT};

pub const ANALYSIS_FORMAT: &str = "tricolor-analysis";
pub const ANALYSIS_VERSION: u32 = 1;
pub const ANALYSIS_FILE: &str = "analysis.json";
pub const ZETA_FILE: &str = "zeta.tsv";
pub const FW_FILE: &str = "fw.tsv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupKey {
    pub p: f64,
    pub q: f64,
    pub l: usize,
    pub m: usize,
    pub n_sites: usize,
    pub n_hexagons: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputFile {
    pub file: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSeed {
    pub sample: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub code_version: String,
    /// Code versions that produced the measurements.
    pub measured_with: Vec<String>,
    pub study_digests: Vec<String>,
    pub master_seed: Option<u64>,
    pub inputs: Vec<InputFile>,
    pub samples: Vec<SampleSeed>,
    pub resamples: usize,
}

/// Weight split of `f(w)` at one temperature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionAtTransition {
    pub temperature: f64,
    /// What `temperature` is: the zero crossing or the specific-heat peak.
    pub reference: String,
    /// Ladder slots whose measurements were reweighted: the crossing's
    /// bracket (combined as multiple histograms), or the single nearest slot.
    pub source_slots: Vec<usize>,
    pub histogram: Histogram,
    pub split: Option<PeakSplit<f64>>,
    pub ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisDoc {
    pub format: String,
    pub version: u32,
    pub group: GroupKey,
    pub provenance: Provenance,
    pub curve: Curve,
    pub heat_peak: HeatPeak<f64>,
    /// Interpolated between ladder points.
    pub crossing: Crossing<f64>,
    /// The crossing relocated on the reweighted curve.
    pub refined: Option<Refinement>,
    pub maxwell: Option<MaxwellResult<f64>>,
    pub distribution: Option<DistributionAtTransition>,
    /// Disorder-averaged equilibration verdict of the group, when known.
    pub equilibration_passed: Option<bool>,
}

impl AnalysisDoc {
    pub fn read(path: &Path) -> Result<Self> {
        let doc: Self = serde_json::from_str(&read_to_string(path)?).with_context(|| format!("parsing {}", path.display()))?;
        if doc.format != ANALYSIS_FORMAT || doc.version != ANALYSIS_VERSION {
            bail!("{}: not a version {ANALYSIS_VERSION} analysis file", path.display());
        }
        Ok(doc)
    }

    /// The refined crossing when there is one, else the interpolated one.
    pub fn transition(&self) -> Option<&TransitionEstimate<f64>> {
        self.refined.as_ref().map(|r| &r.estimate).or(self.crossing.estimate())
    }
}

#[derive(Clone, Debug)]
struct Row {
    sample: usize,
    temp_index: usize,
    temperature: f64,
    moments: Moments,
}

#[derive(Clone, Debug)]
struct ParsedCsv {
    path: PathBuf,
    digest: String,
    code_version: Option<String>,
    study_digest: Option<String>,
    master_seed: Option<u64>,
    key: GroupKey,
    seeds: Vec<SampleSeed>,
    rows: Vec<Row>,
}

fn header_value<'a>(fields: &'a [&'a str], name: &str) -> Option<&'a str> {
    fields.iter().position(|f| *f == name).and_then(|i| fields.get(i + 1).copied())
}

fn parse_csv(path: &Path) -> Result<ParsedCsv> {
    let text = read_to_string(path)?;
    let at = |line: usize, msg: String| anyhow!("{}:{line}: {msg}", path.display());
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l == MEASUREMENT_FORMAT => {}
        _ => bail!("{}: not a measurement file (expected '{MEASUREMENT_FORMAT}')", path.display()),
    }
    let (mut code_version, mut study_digest, mut master_seed, mut key, mut seeds, mut rows) = (None, None, None, None, vec![], vec![]);
    let mut columns_seen = false;
    for (i, line) in lines {
        let n = i + 1;
        if let Some(rest) = line.strip_prefix("# ") {
            let f: Vec<&str> = rest.split_whitespace().collect();
            let num = |name: &str| -> Result<f64> {
                header_value(&f, name)
                    .ok_or_else(|| at(n, format!("header lacks {name}")))?
                    .parse()
                    .map_err(|_| at(n, format!("bad {name}")))
            };
            match f.first().copied() {
                Some("code_version") => code_version = f.get(1).map(|s| s.to_string()),
                Some("study_digest") => study_digest = f.get(1).map(|s| s.to_string()),
                Some("master_seed") => master_seed = f.get(1).and_then(|s| s.parse().ok()),
                Some("group") => {
                    key = Some(GroupKey {
                        p: num("p")?,
                        q: num("q")?,
                        l: num("L")? as usize,
                        m: num("M")? as usize,
                        n_sites: num("n_sites")? as usize,
                        n_hexagons: num("n_hexagons")? as usize,
                    })
                }
                Some("sample") => seeds.push(SampleSeed {
                    sample: num("sample")? as usize,
                    seed: header_value(&f, "seed")
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| at(n, "bad seed".into()))?,
                }),
                _ => {}
            }
            continue;
        }
        if line == CSV_COLUMNS {
            columns_seen = true;
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        if !columns_seen {
            return Err(at(n, "data before the column header".into()));
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 11 {
            return Err(at(n, format!("expected 11 fields, found {}", f.len())));
        }
        let float = |k: usize| -> Result<f64> { f[k].parse().map_err(|_| at(n, format!("bad number '{}'", f[k]))) };
        let int = |k: usize| -> Result<u64> { f[k].parse().map_err(|_| at(n, format!("bad integer '{}'", f[k]))) };
        rows.push(Row {
            sample: int(0)? as usize,
            temp_index: int(1)? as usize,
            temperature: float(2)?,
            moments: Moments {
                n: int(3)?,
                mean_w: float(4)?,
                mean_w2: float(5)?,
                mean_w3: float(6)?,
                mean_e: float(7)?,
                mean_e2: float(8)?,
            },
        });
    }
    let key = key.ok_or_else(|| anyhow!("{}: missing '# group' header", path.display()))?;
    Ok(ParsedCsv {
        path: path.to_path_buf(),
        digest: sha256_hex(text.as_bytes()),
        code_version,
        study_digest,
        master_seed,
        key,
        seeds,
        rows,
    })
}

/// The measurement CSV named by an input, and its joint file if present.
fn resolve_input(path: &Path) -> Result<(PathBuf, Option<PathBuf>)> {
    if path.is_dir() {
        let csv = path.join(MEASUREMENTS_FILE);
        if !csv.exists() {
            bail!("{}: no {MEASUREMENTS_FILE} (group incomplete or not run)", path.display());
        }
        let joint = path.join(crate::run::JOINT_FILE);
        return Ok((csv, joint.exists().then_some(joint)));
    }
    let name = display_name(path);
    let joint = if name == MEASUREMENTS_FILE {
        path.with_file_name(crate::run::JOINT_FILE)
    } else {
        path.with_extension("joint.tsv")
    };
    Ok((path.to_path_buf(), joint.exists().then_some(joint)))
}

#[derive(Clone, Copy, Debug)]
pub struct AnalyzeOptions {
    pub resamples: usize,
    pub maxwell: MaxwellOptions,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        Self {
            resamples: DEFAULT_RESAMPLES,
            maxwell: MaxwellOptions::default(),
        }
    }
}

/// Ladder slot nearest to `t` in `β`.
fn nearest_slot(temperatures: &[f64], t: f64) -> usize {
    let gap = |x: f64| (1.0 / x - 1.0 / t).abs();
    let mut best = 0;
    for (i, &x) in temperatures.iter().enumerate() {
        if gap(x) < gap(temperatures[best]) {
            best = i;
        }
    }
    best
}

/// Analyze the inputs. Missing or duplicated (sample, temperature) rows are
/// errors naming the files involved.
pub fn analyze(inputs: &[PathBuf], opts: AnalyzeOptions) -> Result<AnalysisDoc> {
    if inputs.is_empty() {
        bail!("no inputs to analyze");
    }
    let mut parsed = Vec::new();
    let mut joints = Vec::new();
    let mut equilibration_passed = None;
    for input in inputs {
        let (csv, joint) = resolve_input(input)?;
        parsed.push(parse_csv(&csv)?);
        joints.push(joint);
        if input.is_dir() {
            let eq = input.join(EQUILIBRATION_FILE);
            if eq.exists() {
                let v: serde_json::Value = serde_json::from_str(&read_to_string(&eq)?)?;
                let passed = v["disorder_averaged"]["passed"].as_bool();
                equilibration_passed = match (equilibration_passed, passed) {
                    (Some(false), _) | (_, Some(false)) => Some(false),
                    (_, p) => p,
                };
            }
        }
    }
    let key = parsed[0].key.clone();
    if let Some(other) = parsed.iter().find(|c| c.key != key) {
        bail!(
            "{} and {} belong to different groups; analyze one (p, q, L, M) group at a time",
            display_name(&parsed[0].path),
            display_name(&other.path)
        );
    }

    // (sample, temp_index) -> (row, file)
    let mut table: BTreeMap<(usize, usize), (Row, usize)> = BTreeMap::new();
    let mut temperatures: BTreeMap<usize, f64> = BTreeMap::new();
    for (fi, c) in parsed.iter().enumerate() {
        for r in &c.rows {
            if let Some(&t) = temperatures.get(&r.temp_index) {
                if t != r.temperature {
                    bail!(
                        "{}: temperature index {} is T = {} here but T = {t} elsewhere",
                        display_name(&c.path),
                        r.temp_index,
                        r.temperature
                    );
                }
            }
            temperatures.insert(r.temp_index, r.temperature);
            if let Some((_, prev)) = table.insert((r.sample, r.temp_index), (r.clone(), fi)) {
                bail!(
                    "sample {} temperature index {} appears in both {} and {}",
                    r.sample,
                    r.temp_index,
                    display_name(&parsed[prev].path),
                    display_name(&c.path)
                );
            }
        }
    }
    let n_t = temperatures.len();
    if temperatures.keys().copied().ne(0..n_t) {
        bail!("temperature indices are not contiguous from 0: {:?}", temperatures.keys().collect::<Vec<_>>());
    }
    let temps: Vec<f64> = temperatures.values().copied().collect();
    let samples: Vec<usize> = {
        let mut s: Vec<usize> = table.keys().map(|k| k.0).collect();
        s.dedup();
        s
    };
    let mut missing = Vec::new();
    for &s in &samples {
        let files: Vec<usize> = (0..n_t).filter_map(|t| table.get(&(s, t)).map(|x| x.1)).collect();
        if files.len() != n_t {
            let absent: Vec<usize> = (0..n_t).filter(|t| !table.contains_key(&(s, *t))).collect();
            let file = display_name(&parsed[files.first().copied().unwrap_or(0)].path);
            missing.push(format!("sample {s} in {file} lacks temperature indices {absent:?}"));
        }
    }
    if !missing.is_empty() {
        bail!("incomplete measurements: {}", missing.join("; "));
    }
    if samples.len() < 2 {
        bail!("disorder averaging needs at least two samples, found {}", samples.len());
    }

    let moments: Vec<Vec<Moments>> = (0..n_t)
        .map(|t| samples.iter().map(|&s| table[&(s, t)].0.moments).collect())
        .collect();
    let meta = CurveMeta {
        p: key.p,
        q: key.q,
        l: key.l,
        m: key.m,
        n_sites: key.n_sites,
        n_samples: samples.len(),
    };
    let curve = skewness_curve(meta, &temps, &moments, Orientation::OrderedPositive, opts.resamples)?;
    let heat_peak = specific_heat_peak(&curve.temperatures, &curve.specific_heat)?;
    let crossing = find_zero_crossing(&curve, Some(heat_peak.t_peak))?;

    // Per-sample joint counts at every slot, in `samples` order.
    let mut joint_slots: Option<Vec<Vec<JointCounts>>> = None;
    if joints.iter().all(Option::is_some) {
        let mut by_key: BTreeMap<(usize, usize), JointCounts> = BTreeMap::new();
        for j in joints.iter().flatten() {
            let (n_hex, cells) = read_joint(j)?;
            if n_hex != key.n_hexagons {
                bail!("{}: {n_hex} hexagons, the measurements have {}", display_name(j), key.n_hexagons);
            }
            for ((s, t), c) in cells {
                if t >= n_t {
                    bail!("{}: temperature index {t} beyond the ladder", display_name(j));
                }
                by_key.insert((s, t), JointCounts::from_cells(n_hex, &c)?);
            }
        }
        if by_key.is_empty() {
            // measured without histograms
        } else if by_key.len() == samples.len() * n_t && samples.iter().all(|&s| (0..n_t).all(|t| by_key.contains_key(&(s, t)))) {
            joint_slots = Some((0..n_t).map(|t| samples.iter().map(|&s| by_key[&(s, t)].clone()).collect()).collect());
        } else {
            log::warn!("joint counts do not cover every sample and temperature; skipping f(w) and the refinement");
        }
    }

    let refined = match (&joint_slots, crossing.estimate()) {
        (Some(slots), Some(e)) => refine_crossing(e, &temps, slots, curve.orientation, REFINEMENT_GRID, opts.resamples)?,
        _ => None,
    };
    let transition = refined.as_ref().map(|r| &r.estimate).or(crossing.estimate());

    let (maxwell, distribution) = match &joint_slots {
        None => (None, None),
        Some(slots) => {
            let hs: Vec<(f64, Histogram)> = temps
                .iter()
                .zip(slots)
                .map(|(&t, s)| {
                    let refs: Vec<&JointCounts> = s.iter().collect();
                    reweighted_joint_histogram(&refs, 1.0 / t, 1.0 / t, DEFAULT_HISTOGRAM_BINS).map(|h| (t, h))
                })
                .collect::<tricolor_core::Result<_>>()?;
            let maxwell = maxwell_crosscheck(&hs, opts.maxwell)?;
            let (t_ref, reference) = match transition {
                Some(e) => (e.tc, "zero_crossing"),
                None => (heat_peak.t_peak, "specific_heat_peak"),
            };
            let count = |sources: &[usize]| -> u64 { sources.iter().flat_map(|&t| &slots[t]).map(JointCounts::total).sum() };
            let (source_slots, histogram): (Vec<usize>, Histogram) = match &refined {
                Some(r) => {
                    let (a, b) = r.estimate.bracket;
                    let masses: Vec<Vec<f64>> = bracket_histograms(&temps, slots, (a, b))?
                        .iter()
                        .map(|h| h.level_mass(1.0 / t_ref))
                        .collect();
                    let sources: Vec<usize> = (a..=b).collect();
                    let n = count(&sources);
                    (sources, pooled_level_histogram(&masses, DEFAULT_HISTOGRAM_BINS, n)?)
                }
                None => {
                    let slot = nearest_slot(&temps, t_ref);
                    let refs: Vec<&JointCounts> = slots[slot].iter().collect();
                    let h = reweighted_joint_histogram(&refs, 1.0 / temps[slot], 1.0 / t_ref, DEFAULT_HISTOGRAM_BINS)?;
                    (vec![slot], h)
                }
            };
            let split = split_double_peak(&histogram, opts.maxwell);
            let ratio = split.as_ref().map(|s| s.ratio());
            (
                Some(maxwell),
                Some(DistributionAtTransition {
                    temperature: t_ref,
                    reference: reference.into(),
                    source_slots,
                    histogram,
                    split,
                    ratio,
                }),
            )
        }
    };

    let mut measured_with: Vec<String> = parsed.iter().filter_map(|c| c.code_version.clone()).collect();
    measured_with.sort();
    measured_with.dedup();
    let mut study_digests: Vec<String> = parsed.iter().filter_map(|c| c.study_digest.clone()).collect();
    study_digests.sort();
    study_digests.dedup();
    let mut inputs_meta: Vec<InputFile> = parsed
        .iter()
        .map(|c| InputFile {
            file: display_name(&c.path),
            sha256: c.digest.clone(),
        })
        .collect();
    for j in joints.iter().flatten() {
        inputs_meta.push(InputFile {
            file: display_name(j),
            sha256: sha256_hex(read_to_string(j)?.as_bytes()),
        });
    }
    let mut seeds: Vec<SampleSeed> = parsed.iter().flat_map(|c| c.seeds.clone()).collect();
    seeds.sort_by_key(|s| s.sample);
    seeds.dedup();
    let master_seeds: Vec<u64> = parsed.iter().filter_map(|c| c.master_seed).collect();
    let master_seed = master_seeds.first().copied().filter(|m| master_seeds.iter().all(|x| x == m));

    Ok(AnalysisDoc {
        format: ANALYSIS_FORMAT.into(),
        version: ANALYSIS_VERSION,
        group: key,
        provenance: Provenance {
            code_version: CODE_VERSION.into(),
            measured_with,
            study_digests,
            master_seed,
            inputs: inputs_meta,
            samples: seeds,
            resamples: opts.resamples,
        },
        curve,
        heat_peak,
        crossing,
        refined,
        maxwell,
        distribution,
        equilibration_passed,
    })
}

pub fn zeta_table(curve: &Curve) -> String {
    let mut out = String::from("T\tzeta\tzeta_err\tc\tmean_w\n");
    for i in 0..curve.temperatures.len() {
        let z = curve.zeta[i].map_or("nan".to_string(), |z| z.to_string());
        let _ = writeln!(
            out,
            "{}\t{z}\t{}\t{}\t{}",
            curve.temperatures[i], curve.errors[i], curve.specific_heat[i], curve.mean_w[i]
        );
    }
    out
}

pub fn fw_table(d: &DistributionAtTransition) -> String {
    let mut out = format!("# T {} ({})\nw\tf\n", d.temperature, d.reference);
    for (w, f) in d.histogram.centers().iter().zip(&d.histogram.mass) {
        let _ = writeln!(out, "{w}\t{f}");
    }
    out
}

/// `analyze`: write the analysis files into `out`, which defaults to the
/// single group directory given as input.
pub fn cmd_analyze(inputs: &[PathBuf], out: Option<&Path>, opts: AnalyzeOptions) -> Result<(PathBuf, AnalysisDoc)> {
    let doc = analyze(inputs, opts)?;
    let out = match out {
        Some(o) => o.to_path_buf(),
        None if inputs.len() == 1 && inputs[0].is_dir() => inputs[0].clone(),
        None => bail!("--out is required unless a single group directory is analyzed"),
    };
    atomic_write(&out.join(ANALYSIS_FILE), &to_json(&doc)?)?;
    atomic_write(&out.join(ZETA_FILE), zeta_table(&doc.curve).as_bytes())?;
    if let Some(d) = &doc.distribution {
        atomic_write(&out.join(FW_FILE), fw_table(d).as_bytes())?;
    }
    Ok((out, doc))
}
