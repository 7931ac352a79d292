//! Phase boundary and threshold from per-size analyses.
//!
//! Inputs are `analysis.json` files (directories are searched recursively),
//! or a boundary table of `p tc err` lines. Per error rate, the crossings of
//! two or more sizes are extrapolated in `1/N`; a single size is used as is
//! and flagged. The boundary is intersected with the Nishimori line.
//!
//! Outputs: `phase.json`, `phase.tsv` (`p tc err sizes extrapolated`) and
//! `nishimori.tsv` (`p T_N`) sampled over the boundary's range.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Result};
use serde::{Deserialize, Serialize};
use tricolor_core::analysis::{
    extrapolate_tc, intersect_nishimori, nishimori_curve, BoundaryPoint, Extrapolation, Orientation, Threshold,
    TransitionEstimate,
};
use tricolor_core::Boundary;

use crate::analyze::{AnalysisDoc, ANALYSIS_FILE};
use crate::io::{atomic_write, display_name, read_to_string, to_json, CODE_VERSION};

pub const PHASE_FORMAT: &str = "tricolor-phase";
pub const PHASE_VERSION: u32 = 1;
pub const NISHIMORI_POINTS: usize = 101;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeResult {
    pub l: usize,
    pub m: usize,
    pub n_sites: usize,
    pub n_samples: usize,
    pub estimate: Option<TransitionEstimate<f64>>,
    pub source: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateResult {
    pub p: f64,
    pub q: f64,
    pub sizes: Vec<SizeResult>,
    pub extrapolation: Option<Extrapolation<f64>>,
    /// The boundary point: extrapolated, or the single size with a crossing.
    pub point: Option<BoundaryPoint<f64>>,
    pub extrapolated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseDoc {
    pub format: String,
    pub version: u32,
    pub code_version: String,
    pub j: f64,
    pub rates: Vec<RateResult>,
    pub boundary: Boundary,
    pub threshold: Option<Threshold<f64>>,
    pub threshold_note: Option<String>,
    pub warnings: Vec<String>,
}

fn collect_analysis_files(path: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(path)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
        entries.sort();
        for e in entries {
            if e.is_dir() {
                collect_analysis_files(&e, out)?;
            } else if e.file_name().is_some_and(|n| n == ANALYSIS_FILE) {
                out.push(e);
            }
        }
        Ok(())
    } else if path.exists() {
        out.push(path.to_path_buf());
        Ok(())
    } else {
        bail!("{}: no such file or directory", path.display())
    }
}

/// Read a boundary table: whitespace-separated `p tc err` lines; `#` starts
/// a comment and a non-numeric first line is taken as a header.
pub fn read_boundary_table(path: &Path) -> Result<Vec<BoundaryPoint<f64>>> {
    let text = read_to_string(path)?;
    let mut points = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if points.is_empty() && f.first().is_some_and(|s| s.parse::<f64>().is_err()) {
            continue;
        }
        if f.len() != 3 {
            bail!("{}:{}: expected 'p tc err'", display_name(path), i + 1);
        }
        let num = |k: usize| -> Result<f64> {
            f[k].parse()
                .map_err(|_| anyhow!("{}:{}: bad number '{}'", display_name(path), i + 1, f[k]))
        };
        points.push(BoundaryPoint {
            p: num(0)?,
            tc: num(1)?,
            error: num(2)?,
        });
    }
    points.sort_by(|a, b| a.p.total_cmp(&b.p));
    Ok(points)
}

fn finish(rates: Vec<RateResult>, points: Vec<BoundaryPoint<f64>>, j: f64, warnings: Vec<String>) -> Result<PhaseDoc> {
    let boundary = Boundary::new(points, j)?;
    let (threshold, note) = match intersect_nishimori(&boundary) {
        Ok(t) => (Some(t), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(PhaseDoc {
        format: PHASE_FORMAT.into(),
        version: PHASE_VERSION,
        code_version: CODE_VERSION.into(),
        j,
        rates,
        boundary,
        threshold,
        threshold_note: note,
        warnings,
    })
}

/// Build the boundary from analysis documents.
pub fn phase_from_analyses(inputs: &[PathBuf], j: f64) -> Result<PhaseDoc> {
    let mut files = Vec::new();
    for i in inputs {
        collect_analysis_files(i, &mut files)?;
    }
    if files.is_empty() {
        bail!("no {ANALYSIS_FILE} found in the inputs");
    }
    let docs: Vec<(PathBuf, AnalysisDoc)> = files
        .into_iter()
        .map(|f| AnalysisDoc::read(&f).map(|d| (f, d)))
        .collect::<Result<_>>()?;
    let mut warnings = Vec::new();
    let first = &docs[0].1;
    for (f, d) in &docs {
        if d.curve.orientation != Orientation::OrderedPositive {
            bail!("{}: skewness orientation {:?} differs from the crossing convention", f.display(), d.curve.orientation);
        }
        if d.provenance.code_version != first.provenance.code_version {
            bail!(
                "{} was analyzed by {} but {} by {}",
                f.display(),
                d.provenance.code_version,
                docs[0].0.display(),
                first.provenance.code_version
            );
        }
        if d.provenance.study_digests != first.provenance.study_digests {
            warnings.push(format!("{} comes from a different study than {}", f.display(), docs[0].0.display()));
        }
        if d.equilibration_passed == Some(false) {
            warnings.push(format!("{}: equilibration check failed", f.display()));
        }
    }

    let mut by_rate: BTreeMap<(u64, u64), Vec<(PathBuf, AnalysisDoc)>> = BTreeMap::new();
    for (f, d) in docs {
        by_rate.entry((d.group.p.to_bits(), d.group.q.to_bits())).or_default().push((f, d));
    }
    let mut ps: Vec<f64> = by_rate.keys().map(|k| f64::from_bits(k.0)).collect();
    ps.dedup();
    if ps.len() != by_rate.len() {
        bail!("several q values for one p; the boundary needs one q per p");
    }

    let mut rates = Vec::new();
    let mut points = Vec::new();
    for ((pb, qb), mut group) in by_rate {
        group.sort_by_key(|(_, d)| d.group.n_sites);
        if let Some(w) = group.windows(2).find(|w| w[0].1.group.n_sites == w[1].1.group.n_sites) {
            bail!("{} and {} analyze the same size", w[0].0.display(), w[1].0.display());
        }
        let sizes: Vec<SizeResult> = group
            .iter()
            .map(|(f, d)| SizeResult {
                l: d.group.l,
                m: d.group.m,
                n_sites: d.group.n_sites,
                n_samples: d.curve.meta.n_samples,
                estimate: d.transition().cloned(),
                source: f.display().to_string(),
            })
            .collect();
        let p = f64::from_bits(pb);
        let found: Vec<TransitionEstimate<f64>> = sizes.iter().filter_map(|s| s.estimate.clone()).collect();
        for s in sizes.iter().filter(|s| s.estimate.is_none()) {
            warnings.push(format!("p = {p}, L = {}: no zero crossing", s.l));
        }
        let (extrapolation, point, extrapolated) = match found.len() {
            0 => (None, None, false),
            1 => (
                None,
                Some(BoundaryPoint {
                    p,
                    tc: found[0].tc,
                    error: found[0].error,
                }),
                false,
            ),
            _ => {
                let e = extrapolate_tc(&found)?;
                let pt = BoundaryPoint { p, tc: e.tc, error: e.error };
                (Some(e), Some(pt), true)
            }
        };
        if let Some(pt) = &point {
            points.push(pt.clone());
        }
        rates.push(RateResult {
            p,
            q: f64::from_bits(qb),
            sizes,
            extrapolation,
            point,
            extrapolated,
        });
    }
    rates.sort_by(|a, b| a.p.total_cmp(&b.p));
    points.sort_by(|a, b| a.p.total_cmp(&b.p));
    finish(rates, points, j, warnings)
}

pub fn phase_from_table(path: &Path, j: f64) -> Result<PhaseDoc> {
    let points = read_boundary_table(path)?;
    finish(Vec::new(), points, j, Vec::new())
}

pub fn phase_table(doc: &PhaseDoc) -> String {
    let mut out = String::from("p\ttc\terr\tsizes\textrapolated\n");
    if doc.rates.is_empty() {
        for pt in &doc.boundary.points {
            let _ = writeln!(out, "{}\t{}\t{}\t-\t-", pt.p, pt.tc, pt.error);
        }
    }
    for r in &doc.rates {
        if let Some(pt) = &r.point {
            let _ = writeln!(out, "{}\t{}\t{}\t{}\t{}", pt.p, pt.tc, pt.error, r.sizes.len(), r.extrapolated);
        }
    }
    out
}

pub fn nishimori_table(doc: &PhaseDoc) -> Result<String> {
    let mut out = String::from("p\tT_N\n");
    let pts = &doc.boundary.points;
    let lo = pts.iter().map(|p| p.p).find(|&p| p > 0.0).unwrap_or(0.01);
    let hi = pts.last().map_or(0.1, |p| p.p).max(lo * 2.0).min(0.49);
    for (p, t) in nishimori_curve(lo, hi, NISHIMORI_POINTS, doc.j)? {
        let _ = writeln!(out, "{p}\t{t}");
    }
    Ok(out)
}

pub fn write_phase(doc: &PhaseDoc, out: &Path) -> Result<()> {
    atomic_write(&out.join("phase.json"), &to_json(doc)?)?;
    atomic_write(&out.join("phase.tsv"), phase_table(doc).as_bytes())?;
    atomic_write(&out.join("nishimori.tsv"), nishimori_table(doc)?.as_bytes())?;
    Ok(())
}
