//! Study configuration files.
//!
//! Line-oriented `key = value` pairs grouped in sections. `#` and `;` start
//! comments. One `[study]` section holds run-wide settings; each `[row]`
//! section declares one line of the parameter table.
//!
//! ```text
//! [study]
//! name = desk
//! master_seed = 1
//! nishimori = true          # reject rows outside the Nishimori domain
//!
//! [row]
//! p = 0.03, 0.033           # one or more error rates; q defaults to p
//! sizes = 6x6, 9            # LxM, or L alone for M in {L, L-1} made even
//! samples = 32
//! b = 12, 13                # one value, or one per size
//! t_min = 0.7
//! t_max = 1.4
//! n_t = 32
//! ```
//!
//! [study] keys: `name`, `master_seed`, `output`, `nishimori`,
//! `isotropic` (require `M ∈ {L, L−1}`, default true),
//! `measurement_interval` (default 10), `measurement_sweeps` (default
//! `2^b` per row), `checkpoint_interval` (default 0, off),
//! `energy_check_interval` (default 1000), `max_doublings` (default 0),
//! `histograms` (keep joint energy/Wilson-loop counts, default true),
//! `spacing` (`linear` or `geometric`, default linear).
//!
//! [row] keys: `p`, `q`, `sizes`, `samples`, `b`, `t_min`, `t_max`, `n_t`.

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use tricolor_core::mc::Spacing;
use tricolor_core::LatticeSpec;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub line: usize,
    pub field: Option<String>,
    pub msg: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.field {
            Some(field) => write!(f, "line {}, field '{}': {}", self.line, field, self.msg),
            None => write!(f, "line {}: {}", self.line, self.msg),
        }
    }
}

impl std::error::Error for ConfigError {}

fn fail<T>(line: usize, field: &str, msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError {
        line,
        field: Some(field.to_string()),
        msg: msg.into(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudySettings {
    pub name: String,
    pub master_seed: u64,
    pub output: Option<PathBuf>,
    pub nishimori: bool,
    pub isotropic: bool,
    pub measurement_interval: u64,
    pub measurement_sweeps: Option<u64>,
    pub checkpoint_interval: u64,
    pub energy_check_interval: u64,
    pub max_doublings: u32,
    pub histograms: bool,
    pub spacing: Spacing,
}

impl Default for StudySettings {
    fn default() -> Self {
        Self {
            name: "study".into(),
            master_seed: 0,
            output: None,
            nishimori: false,
            isotropic: true,
            measurement_interval: 10,
            measurement_sweeps: None,
            checkpoint_interval: 0,
            energy_check_interval: 1000,
            max_doublings: 0,
            histograms: true,
            spacing: Spacing::Linear,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeEntry {
    pub l: usize,
    pub m: usize,
    pub b: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanRow {
    /// Line of the `[row]` header.
    pub line: usize,
    pub p: Vec<f64>,
    /// `None` means `q = p`.
    pub q: Option<f64>,
    pub sizes: Vec<SizeEntry>,
    pub samples: usize,
    pub t_min: f64,
    pub t_max: f64,
    pub n_t: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyPlan {
    pub settings: StudySettings,
    pub rows: Vec<PlanRow>,
}

impl StudyPlan {
    /// Number of jobs the plan expands to.
    pub fn job_count(&self) -> usize {
        self.rows.iter().map(|r| r.p.len() * r.sizes.len() * r.samples).sum()
    }
}

fn parse_num<T: std::str::FromStr>(line: usize, field: &str, v: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    v.trim()
        .parse()
        .or_else(|e: T::Err| fail(line, field, format!("cannot parse '{}': {e}", v.trim())))
}

fn parse_bool(line: usize, field: &str, v: &str) -> Result<bool, ConfigError> {
    match v.trim() {
        "true" | "yes" | "on" => Ok(true),
        "false" | "no" | "off" => Ok(false),
        other => fail(line, field, format!("expected true or false, got '{other}'")),
    }
}

fn list(v: &str) -> impl Iterator<Item = &str> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty())
}

fn parse_probability(line: usize, field: &str, v: &str) -> Result<f64, ConfigError> {
    let x: f64 = parse_num(line, field, v)?;
    if !(0.0..=1.0).contains(&x) {
        return fail(line, field, format!("probability must lie in [0, 1] (got {x})"));
    }
    Ok(x)
}

/// `LxM` entries, or `L` alone paired with the even member of `{L, L−1}`.
fn parse_sizes(line: usize, v: &str, isotropic: bool) -> Result<Vec<(usize, usize)>, ConfigError> {
    let mut out = Vec::new();
    for item in list(v) {
        let (l, m) = match item.split_once(['x', 'X']) {
            Some((l, m)) => (parse_num::<usize>(line, "sizes", l)?, Some(parse_num::<usize>(line, "sizes", m)?)),
            None => (parse_num::<usize>(line, "sizes", item)?, None),
        };
        let m = m.unwrap_or(if l % 2 == 0 { l } else { l.saturating_sub(1) });
        if let Err(e) = LatticeSpec::new(l, m) {
            let msg = e.to_string();
            return fail(line, "sizes", msg.trim_start_matches("invalid lattice: ").to_string());
        }
        if isotropic && m != l && m + 1 != l {
            return fail(line, "sizes", format!("M must be L or L-1 (got {l}x{m}); set isotropic = false to allow"));
        }
        if out.iter().any(|&(a, _)| a == l) {
            return fail(line, "sizes", format!("L={l} listed twice"));
        }
        out.push((l, m));
    }
    if out.is_empty() {
        return fail(line, "sizes", "no sizes given");
    }
    Ok(out)
}

#[derive(Default)]
struct RowDraft {
    line: usize,
    fields: Vec<(usize, String, String)>,
}

pub fn parse_config(text: &str) -> Result<StudyPlan, ConfigError> {
    enum Section {
        None,
        Study,
        Row,
    }
    let mut section = Section::None;
    let mut study_fields: Vec<(usize, String, String)> = Vec::new();
    let mut saw_study = false;
    let mut drafts: Vec<RowDraft> = Vec::new();
    let mut last_line = 0;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        last_line = line;
        let content = raw.split(['#', ';']).next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            match name.trim() {
                "study" if saw_study => {
                    return Err(ConfigError {
                        line,
                        field: None,
                        msg: "[study] may appear only once".into(),
                    })
                }
                "study" => {
                    saw_study = true;
                    section = Section::Study;
                }
                "row" => {
                    drafts.push(RowDraft { line, fields: vec![] });
                    section = Section::Row;
                }
                other => {
                    return Err(ConfigError {
                        line,
                        field: None,
                        msg: format!("unknown section [{other}] (expected [study] or [row])"),
                    })
                }
            }
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(ConfigError {
                line,
                field: None,
                msg: format!("expected 'key = value', got '{content}'"),
            });
        };
        let (key, value) = (key.trim().to_string(), value.trim().to_string());
        let fields = match section {
            Section::None => {
                return fail(line, &key, "key outside any section");
            }
            Section::Study => &mut study_fields,
            Section::Row => &mut drafts.last_mut().expect("row section open").fields,
        };
        if fields.iter().any(|(_, k, _)| *k == key) {
            return fail(line, &key, "given twice in the same section");
        }
        fields.push((line, key, value));
    }

    let mut settings = StudySettings::default();
    for (line, key, v) in &study_fields {
        let (line, key) = (*line, key.as_str());
        match key {
            "name" => settings.name = v.clone(),
            "master_seed" => settings.master_seed = parse_num(line, key, v)?,
            "output" => settings.output = Some(PathBuf::from(v)),
            "nishimori" => settings.nishimori = parse_bool(line, key, v)?,
            "isotropic" => settings.isotropic = parse_bool(line, key, v)?,
            "measurement_interval" => {
                settings.measurement_interval = parse_num(line, key, v)?;
                if settings.measurement_interval == 0 {
                    return fail(line, key, "must be at least 1");
                }
            }
            "measurement_sweeps" => settings.measurement_sweeps = Some(parse_num(line, key, v)?),
            "checkpoint_interval" => settings.checkpoint_interval = parse_num(line, key, v)?,
            "energy_check_interval" => settings.energy_check_interval = parse_num(line, key, v)?,
            "max_doublings" => settings.max_doublings = parse_num(line, key, v)?,
            "histograms" => settings.histograms = parse_bool(line, key, v)?,
            "spacing" => settings.spacing = v.parse().or_else(|e: tricolor_core::Error| fail(line, key, e.to_string()))?,
            _ => return fail(line, key, "unknown [study] key"),
        }
    }

    let mut rows = Vec::new();
    for draft in drafts {
        rows.push(build_row(&draft, &settings)?);
    }
    if rows.is_empty() {
        return Err(ConfigError {
            line: last_line.max(1),
            field: None,
            msg: "no [row] sections".into(),
        });
    }
    Ok(StudyPlan { settings, rows })
}

fn build_row(draft: &RowDraft, settings: &StudySettings) -> Result<PlanRow, ConfigError> {
    let get = |key: &str| draft.fields.iter().find(|(_, k, _)| k == key).map(|(l, _, v)| (*l, v.as_str()));
    let need = |key: &str| {
        get(key).ok_or_else(|| ConfigError {
            line: draft.line,
            field: Some(key.into()),
            msg: "missing in [row]".into(),
        })
    };
    if let Some((line, key, _)) = draft
        .fields
        .iter()
        .find(|(_, k, _)| !["p", "q", "sizes", "samples", "b", "t_min", "t_max", "n_t"].contains(&k.as_str()))
    {
        return fail(*line, key, "unknown [row] key");
    }
    let (pl, pv) = need("p")?;
    let p: Vec<f64> = list(pv).map(|x| parse_probability(pl, "p", x)).collect::<Result<_, _>>()?;
    if p.is_empty() {
        return fail(pl, "p", "no error rates given");
    }
    if p.windows(2).any(|w| w[0] >= w[1]) {
        return fail(pl, "p", "error rates must increase strictly");
    }
    let q = match get("q") {
        None => None,
        Some((_, "p")) => None,
        Some((l, v)) => Some(parse_probability(l, "q", v)?),
    };
    if settings.nishimori {
        if let Some(&bad) = p.iter().find(|&&x| x >= 0.5) {
            return fail(pl, "p", format!("Nishimori analysis needs p < 1/2 (got {bad})"));
        }
        if let (Some(qv), Some(ql)) = (q, get("q")) {
            return fail(ql.0, "q", format!("Nishimori analysis needs q = p (got q = {qv})"));
        }
    }
    let (sl, sv) = need("sizes")?;
    let sizes = parse_sizes(sl, sv, settings.isotropic)?;
    let (bl, bv) = need("b")?;
    let bs: Vec<u32> = list(bv).map(|x| parse_num(bl, "b", x)).collect::<Result<_, _>>()?;
    let bs = match bs.len() {
        1 => vec![bs[0]; sizes.len()],
        n if n == sizes.len() => bs,
        n => return fail(bl, "b", format!("give one value or one per size ({} sizes, {n} values)", sizes.len())),
    };
    if let Some(&bad) = bs.iter().find(|&&b| !(1..=40).contains(&b)) {
        return fail(bl, "b", format!("b must lie in [1, 40] (got {bad})"));
    }
    let (nl, nv) = need("samples")?;
    let samples: usize = parse_num(nl, "samples", nv)?;
    if samples < 2 {
        return fail(nl, "samples", "need at least 2 disorder samples for disorder averages");
    }
    let (tl, tv) = need("t_min")?;
    let t_min: f64 = parse_num(tl, "t_min", tv)?;
    let (ul, uv) = need("t_max")?;
    let t_max: f64 = parse_num(ul, "t_max", uv)?;
    let (kl, kv) = need("n_t")?;
    let n_t: usize = parse_num(kl, "n_t", kv)?;
    if !(t_min > 0.0 && t_min.is_finite()) {
        return fail(tl, "t_min", format!("must be positive (got {t_min})"));
    }
    if !(t_max > t_min && t_max.is_finite()) {
        return fail(ul, "t_max", format!("must exceed t_min = {t_min} (got {t_max})"));
    }
    if n_t < 3 {
        return fail(kl, "n_t", format!("need at least 3 temperatures (got {n_t})"));
    }
    Ok(PlanRow {
        line: draft.line,
        p,
        q,
        sizes: sizes
            .into_iter()
            .zip(bs)
            .map(|((l, m), b)| SizeEntry { l, m, b })
            .collect(),
        samples,
        t_min,
        t_max,
        n_t,
    })
}
