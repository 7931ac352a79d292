//! Acceptance criteria 1–8, one PASS/FAIL line each.
//!
//! Criterion 5 (disordered bracket, tens of core-minutes even reduced) runs
//! only with `TRICOLOR_ACCEPTANCE_EXTENDED=1`; otherwise it reports SKIP.
//! `TRICOLOR_ACCEPTANCE_ONLY=3,4` restricts the run to listed criteria.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::Exp1;
use tricolor_cli::analyze::{analyze, AnalysisDoc, AnalyzeOptions};
use tricolor_cli::phase::phase_from_table;
use tricolor_cli::plan::cmd_plan;
use tricolor_cli::run::{cmd_run, RunOptions};
use tricolor_cli::validate::{run_suite, ValidateOptions};
use tricolor_core::analysis::Threshold;
use tricolor_core::lattice::LayerKind;
use tricolor_core::model::nishimori_temperature;
use tricolor_core::observables::{skewness, specific_heat};
use tricolor_core::rng::stream;
use tricolor_core::{build_lattice, LatticeSpec, Moments};

// Pinned tolerances and budgets.
const STRUCTURE_BUDGET: Duration = Duration::from_secs(1);
const GAUGE_BUDGET: Duration = Duration::from_secs(60);
const ORACLE_BUDGET: Duration = Duration::from_secs(15 * 60);
const ESTIMATOR_BUDGET: Duration = Duration::from_secs(60);
const DETERMINISM_BUDGET: Duration = Duration::from_secs(10 * 60);
const CLEAN_WINDOW: (f64, f64) = (1.2, 2.0);
const PEAK_RATIO: (f64, f64) = (0.5, 2.0);
const DISORDERED_WINDOW: (f64, f64) = (0.7, 1.4);
const THRESHOLD_TARGET: f64 = 0.05;
const THRESHOLD_TOLERANCE: f64 = 5e-4;
const SKEWNESS_TARGET: f64 = 2.0;
const SKEWNESS_TOLERANCE: f64 = 0.10;
const EXPONENTIAL_DRAWS: usize = 100_000;
const NISHIMORI_TOLERANCE: f64 = 1e-6;

struct Outcome {
    passed: Option<bool>,
    detail: String,
}

fn pass_if(passed: bool, detail: String) -> Outcome {
    Outcome {
        passed: Some(passed),
        detail,
    }
}

fn workdir(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    if dir.exists() {
        fs::remove_dir_all(&dir).unwrap();
    }
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn structure() -> Outcome {
    let start = Instant::now();
    let g = build_lattice(LatticeSpec::new(6, 6).unwrap()).unwrap();
    let counts = (g.n_sites(), g.n_five_body(), g.n_hexagons());
    let mut degrees = vec![(0usize, 0usize); g.n_sites()];
    for t in g.five_body_terms() {
        for &s in t {
            degrees[s as usize].0 += 1;
        }
    }
    for h in g.hexagon_terms() {
        for &s in h {
            degrees[s as usize].1 += 1;
        }
    }
    let bad_degree = (0..g.n_sites()).find(|&i| {
        let want = match g.site(i).kind {
            LayerKind::T => (6, 0),
            LayerKind::H => (2, 3),
        };
        degrees[i] != want
    });
    // Proper coloring: the hexagons around every honeycomb site differ.
    let mut around: Vec<Vec<usize>> = vec![Vec::new(); g.n_sites()];
    for (k, h) in g.hexagon_terms().iter().enumerate() {
        for &s in h {
            around[s as usize].push(k);
        }
    }
    let colors = g.hexagon_colors();
    let improper = around
        .iter()
        .filter(|hs| hs.len() == 3)
        .find(|hs| colors[hs[0]] == colors[hs[1]] || colors[hs[1]] == colors[hs[2]] || colors[hs[0]] == colors[hs[2]]);
    let elapsed = start.elapsed();
    pass_if(
        counts == (648, 432, 216) && bad_degree.is_none() && improper.is_none() && elapsed < STRUCTURE_BUDGET,
        format!(
            "(N_sites, N_5, N_hex) = {counts:?}; degree violations {}; coloring {}; {:.3} s",
            bad_degree.map_or("none".into(), |i| format!("at site {i}")),
            if improper.is_none() { "proper" } else { "improper" },
            elapsed.as_secs_f64()
        ),
    )
}

fn suite(name: &str, budget: Duration) -> Outcome {
    let start = Instant::now();
    let report = run_suite(name, &ValidateOptions::default()).unwrap();
    let elapsed = start.elapsed();
    let failures: Vec<String> = report.checks.iter().filter(|c| !c.passed).map(|c| format!("{}: {}", c.name, c.detail)).collect();
    let mut detail = format!("{} checks, {} failed, {:.1} s", report.checks.len(), failures.len(), elapsed.as_secs_f64());
    for f in &failures {
        let _ = write!(detail, "\n    {f}");
    }
    pass_if(report.passed && elapsed <= budget, detail)
}

fn oracle() -> Outcome {
    let start = Instant::now();
    let report = run_suite("oracle", &ValidateOptions::default()).unwrap();
    let elapsed = start.elapsed();
    let mut detail = format!("{:.0} s", elapsed.as_secs_f64());
    for c in &report.checks {
        let _ = write!(detail, "\n    {} {}: {}", if c.passed { "ok" } else { "FAILED" }, c.name, c.detail);
    }
    pass_if(report.passed && elapsed <= ORACLE_BUDGET, detail)
}

/// `+ → −` sign changes whose bracketing values both exceed their errors,
/// with the bracket inside `window`.
fn significant_crossings(doc: &AnalysisDoc, window: (f64, f64)) -> Vec<(f64, f64)> {
    let c = &doc.curve;
    let pts: Vec<(f64, f64, f64)> = (0..c.temperatures.len())
        .filter_map(|i| c.zeta[i].map(|z| (c.temperatures[i], z, c.errors[i])))
        .collect();
    pts.windows(2)
        .filter(|w| w[0].1 > 0.0 && w[1].1 < 0.0)
        .filter(|w| w[0].1.abs() > w[0].2 && w[1].1.abs() > w[1].2)
        .filter(|w| w[0].0 >= window.0 && w[1].0 <= window.1)
        .map(|w| (w[0].0, w[1].0))
        .collect()
}

/// Plan, run and analyze a study; one analysis per group, smallest first.
fn study(dir: &Path, text: &str) -> Vec<AnalysisDoc> {
    let cfg = dir.join("study.cfg");
    fs::write(&cfg, text).unwrap();
    let out = dir.join("out");
    let (_, manifest) = cmd_plan(&cfg, Some(&out)).unwrap();
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let summary = cmd_run(&manifest, &out, &RunOptions { workers, ..RunOptions::default() }).unwrap();
    assert!(summary.failed.is_empty(), "{:?}", summary.failed);
    let mut docs: Vec<AnalysisDoc> = manifest
        .groups
        .iter()
        .map(|g| analyze(&[out.join(&g.name)], AnalyzeOptions::default()).unwrap())
        .collect();
    docs.sort_by_key(|d| d.group.n_sites);
    docs
}

fn clean_bracket() -> Outcome {
    let start = Instant::now();
    let docs = study(
        &workdir("clean"),
        "[study]\nname = clean\nmaster_seed = 2024\nmeasurement_interval = 10\n\
         [row]\np = 0\nsizes = 6x6, 9x8\nsamples = 32\nb = 12, 13\nt_min = 1.2\nt_max = 2.0\nn_t = 32\n",
    );
    let mut ok = true;
    let mut detail = String::new();
    for d in &docs {
        let crossings = significant_crossings(d, CLEAN_WINDOW);
        let tc = d.transition().map(|e| (e.tc, e.error));
        let in_window = tc.is_some_and(|(t, _)| (CLEAN_WINDOW.0..=CLEAN_WINDOW.1).contains(&t));
        let ratio = d.distribution.as_ref().and_then(|f| f.ratio);
        let double = ratio.is_some_and(|r| (PEAK_RATIO.0..=PEAK_RATIO.1).contains(&r));
        ok &= crossings.len() == 1 && in_window && double;
        let _ = write!(
            detail,
            "\n    L={} M={}: T_c* = {}, significant crossings {:?}, f(w) peak ratio {}, equilibration {:?}",
            d.group.l,
            d.group.m,
            tc.map_or("none".into(), |(t, e)| format!("{t:.4} ± {e:.4}")),
            crossings,
            ratio.map_or("no double peak".into(), |r| format!("{r:.3}")),
            d.equilibration_passed
        );
    }
    pass_if(ok, format!("{:.0} s{detail}", start.elapsed().as_secs_f64()))
}

fn disordered_bracket() -> Outcome {
    if std::env::var("TRICOLOR_ACCEPTANCE_EXTENDED").as_deref() != Ok("1") {
        return Outcome {
            passed: None,
            detail: "extended criterion; set TRICOLOR_ACCEPTANCE_EXTENDED=1 to run".into(),
        };
    }
    let start = Instant::now();
    let docs = study(
        &workdir("disordered"),
        "[study]\nname = disordered\nmaster_seed = 2025\nnishimori = true\nmeasurement_interval = 10\n\
         [row]\np = 0.03\nsizes = 6x6, 9x8\nsamples = 100\nb = 13, 14\nt_min = 0.7\nt_max = 1.4\nn_t = 24\n",
    );
    let mut ok = true;
    let mut detail = String::new();
    for d in &docs {
        let tc = d.transition().map(|e| (e.tc, e.error));
        ok &= tc.is_some_and(|(t, _)| (DISORDERED_WINDOW.0..=DISORDERED_WINDOW.1).contains(&t));
        let _ = write!(
            detail,
            "\n    L={} M={}: T_c* = {}, significant crossings {:?}",
            d.group.l,
            d.group.m,
            tc.map_or("none".into(), |(t, e)| format!("{t:.4} ± {e:.4}")),
            significant_crossings(d, DISORDERED_WINDOW)
        );
    }
    pass_if(ok, format!("{:.0} s{detail}", start.elapsed().as_secs_f64()))
}

fn threshold() -> Outcome {
    let dir = workdir("threshold");
    // A falling boundary through (0.05, T_N(0.05)).
    let tn = nishimori_temperature(THRESHOLD_TARGET, 1.0).unwrap();
    let mut table = String::from("p\ttc\terr\n");
    for p in [0.0, 0.02, 0.03, 0.04, 0.045, 0.055, 0.06] {
        let _ = writeln!(table, "{p}\t{}\t0.005", tn + 12.0 * (THRESHOLD_TARGET - p));
    }
    let path = dir.join("boundary.tsv");
    fs::write(&path, table).unwrap();
    let doc = phase_from_table(&path, 1.0).unwrap();
    match doc.threshold {
        Some(Threshold::Found { p_c, error }) => pass_if(
            (p_c - THRESHOLD_TARGET).abs() <= THRESHOLD_TOLERANCE,
            format!("p_c = {p_c:.5} ± {error:.5}"),
        ),
        other => pass_if(false, format!("{other:?}")),
    }
}

fn estimators() -> Outcome {
    let start = Instant::now();
    let mut rng = stream(0xACCE, 7);
    let draws: Vec<f64> = (0..EXPONENTIAL_DRAWS).map(|_| rng.sample(Exp1)).collect();
    // Two equal halves stand in for two disorder samples of one distribution.
    let halves: Vec<Moments> = draws.chunks(EXPONENTIAL_DRAWS / 2).map(Moments::from_w_series).collect();
    let z = skewness(&halves).unwrap().unwrap();
    let t = nishimori_temperature(0.119203_f64, 1.0).unwrap();
    let flat = Moments {
        n: 1000,
        mean_w: 0.25,
        mean_w2: 0.0625,
        mean_w3: 0.015625,
        mean_e: -7.0,
        mean_e2: 49.0,
    };
    let c = specific_heat(&[flat, flat], 0.8, 648).unwrap();
    let elapsed = start.elapsed();
    pass_if(
        (z - SKEWNESS_TARGET).abs() <= SKEWNESS_TOLERANCE && (t - 1.0).abs() <= NISHIMORI_TOLERANCE && c == 0.0 && elapsed < ESTIMATOR_BUDGET,
        format!("exponential skewness {z:.4}; T_N(0.119203) = {t:.8}; zero-variance c = {c}"),
    )
}

fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn determinism() -> Outcome {
    let start = Instant::now();
    let text = "[study]\nname = det\nmaster_seed = 99\nmeasurement_interval = 5\n\
                [row]\np = 0, 0.05\nsizes = 6x6\nsamples = 4\nb = 9\nt_min = 1.0\nt_max = 2.0\nn_t = 6\n";
    let run = |name: &str, workers: usize, halts: &[u64]| {
        let dir = workdir(name);
        let cfg = dir.join("study.cfg");
        fs::write(&cfg, text).unwrap();
        let out = dir.join("out");
        let (_, m) = cmd_plan(&cfg, Some(&out)).unwrap();
        for &h in halts {
            let opts = RunOptions {
                workers,
                max_sweeps: Some(h),
                checkpoint_interval: Some(100),
                ..RunOptions::default()
            };
            cmd_run(&m, &out, &opts).unwrap();
        }
        let s = cmd_run(&m, &out, &RunOptions { workers, ..RunOptions::default() }).unwrap();
        assert!(s.failed.is_empty());
        snapshot(&out)
    };
    let one = run("workers1", 1, &[]);
    let eight = run("workers8", 8, &[]);
    let resumed = run("resumed", 2, &[137, 300]);
    let csvs = one.keys().filter(|k| k.extension().is_some_and(|e| e == "csv")).count();
    let same = |a: &BTreeMap<PathBuf, Vec<u8>>, b: &BTreeMap<PathBuf, Vec<u8>>| a == b;
    let elapsed = start.elapsed();
    pass_if(
        same(&one, &eight) && same(&one, &resumed) && csvs > 0 && elapsed < DETERMINISM_BUDGET,
        format!(
            "{} files ({csvs} CSV); workers 1 vs 8 {}; interrupted twice and resumed {}; {:.1} s",
            one.len(),
            if same(&one, &eight) { "identical" } else { "DIFFER" },
            if same(&one, &resumed) { "identical" } else { "DIFFER" },
            elapsed.as_secs_f64()
        ),
    )
}

fn main() -> ExitCode {
    let only: Option<Vec<usize>> = std::env::var("TRICOLOR_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let criteria: [(usize, &str, fn() -> Outcome); 8] = [
        (1, "structural exactness", structure),
        (2, "gauge invariance", || suite("gauge", GAUGE_BUDGET)),
        (3, "oracle equivalence", oracle),
        (4, "clean transition bracket", clean_bracket),
        (5, "disordered transition bracket", disordered_bracket),
        (6, "threshold pipeline", threshold),
        (7, "estimator exactness", estimators),
        (8, "determinism and resume", determinism),
    ];
    let mut failed = false;
    for (n, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let o = f();
        let tag = match o.passed {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "SKIP",
        };
        failed |= o.passed == Some(false);
        println!("criterion {n} {tag} ({name}): {}", o.detail);
    }
    if failed {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
