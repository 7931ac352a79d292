use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use tricolor_cli::analyze::{analyze, cmd_analyze, AnalysisDoc, AnalyzeOptions};
use tricolor_cli::phase::{phase_from_analyses, phase_from_table, write_phase};
use tricolor_cli::plan::cmd_plan;
use tricolor_cli::run::{cmd_run, RunOptions, CSV_COLUMNS, MEASUREMENT_FORMAT};
use tricolor_core::analysis::{Crossing, Threshold};
use tricolor_core::model::nishimori_temperature;

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

/// A measurement file whose samples have the given `(mean_w, mean_w2,
/// mean_w3)` at every temperature.
fn write_samples(path: &Path, l: usize, samples: &[(usize, [f64; 3])], temps: &[f64]) {
    let m = if l % 2 == 0 { l } else { l - 1 };
    let mut s = format!(
        "{MEASUREMENT_FORMAT}\n# code_version test\n# study_digest abc\n# master_seed 1\n# group g p 0 q 0 L {l} M {m} n_sites {} n_hexagons {}\n",
        3 * l * l * m,
        l * l * m
    );
    for (id, _) in samples {
        let _ = writeln!(s, "# sample {id} seed {} t_eq 1 doublings 0 equilibration passed", 100 + id);
    }
    s.push_str(CSV_COLUMNS);
    s.push('\n');
    for (id, [w, w2, w3]) in samples {
        for (i, t) in temps.iter().enumerate() {
            let _ = writeln!(s, "{id},{i},{t},100,{w},{w2},{w3},-10,101,0.5,0.5");
        }
    }
    fs::write(path, s).unwrap();
}

#[test]
fn symmetric_samples_give_a_vanishing_curve() {
    let d = tempfile::tempdir().unwrap();
    let temps = [1.0, 1.5, 2.0];
    // Two samples mirrored about zero, each with zero third central moment.
    write_samples(&d.path().join("a.csv"), 6, &[(0, [0.2, 0.05, 0.0])], &temps);
    write_samples(&d.path().join("b.csv"), 6, &[(1, [-0.2, 0.05, 0.0])], &temps);
    let doc = analyze(&[d.path().join("a.csv"), d.path().join("b.csv")], AnalyzeOptions::default()).unwrap();
    assert_eq!(doc.curve.zeta, vec![Some(0.0); 3]);
    assert_eq!(doc.curve.errors.len(), 3);
    assert!(doc.curve.errors.iter().all(|e| e.is_finite()));
    assert_eq!(doc.provenance.samples.len(), 2);
    assert_eq!(doc.provenance.inputs.len(), 2);
    assert_eq!(doc.crossing, Crossing::NoTransition);
}

#[test]
fn missing_temperature_names_the_file() {
    let d = tempfile::tempdir().unwrap();
    write_samples(&d.path().join("full.csv"), 6, &[(0, [0.2, 0.05, 0.0])], &[1.0, 1.5, 2.0]);
    write_samples(&d.path().join("short.csv"), 6, &[(1, [0.1, 0.05, 0.0])], &[1.0, 1.5]);
    let e = analyze(&[d.path().join("full.csv"), d.path().join("short.csv")], AnalyzeOptions::default()).unwrap_err();
    let msg = e.to_string();
    assert!(msg.contains("short.csv") && msg.contains("[2]"), "{msg}");
}

#[test]
fn mixed_groups_are_refused() {
    let d = tempfile::tempdir().unwrap();
    write_samples(&d.path().join("a.csv"), 6, &[(0, [0.2, 0.05, 0.0])], &[1.0, 2.0]);
    write_samples(&d.path().join("b.csv"), 9, &[(1, [0.2, 0.05, 0.0])], &[1.0, 2.0]);
    let e = analyze(&[d.path().join("a.csv"), d.path().join("b.csv")], AnalyzeOptions::default()).unwrap_err();
    assert!(e.to_string().contains("different groups"), "{e}");
}

fn normalized(path: &Path) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    v["provenance"]["code_version"] = serde_json::Value::Null;
    v
}

#[test]
fn archived_small_run_is_reproduced() {
    // The archived group comes from running the archived study.
    let d = tempfile::tempdir().unwrap();
    let (_, m) = cmd_plan(&fixtures().join("small_group/study.cfg"), Some(&d.path().join("run"))).unwrap();
    cmd_run(&m, &d.path().join("run"), &RunOptions::default()).unwrap();
    let group = d.path().join("run").join(&m.groups[0].name);
    for f in ["measurements.csv", "joint.tsv", "equilibration.json"] {
        let fresh = fs::read_to_string(group.join(f)).unwrap();
        let archived = fs::read_to_string(fixtures().join("small_group").join(f)).unwrap();
        assert!(fresh.replace("0.1.0", "") == archived.replace("0.1.0", ""), "{f} differs from the archive");
    }

    // And its analysis is reproduced exactly.
    let out = d.path().join("analysis");
    cmd_analyze(&[fixtures().join("small_group")], Some(&out), AnalyzeOptions::default()).unwrap();
    let expected = fixtures().join("small_group_expected");
    assert_eq!(normalized(&out.join("analysis.json")), normalized(&expected.join("analysis.json")));
    for f in ["zeta.tsv", "fw.tsv"] {
        assert_eq!(fs::read(out.join(f)).unwrap(), fs::read(expected.join(f)).unwrap(), "{f}");
    }
    let doc = AnalysisDoc::read(&out.join("analysis.json")).unwrap();
    assert!(doc.distribution.is_some());
    // Reweighting keeps the crossing inside its ladder bracket.
    let (r, e) = (doc.refined.as_ref().unwrap(), doc.crossing.estimate().unwrap());
    let (a, b) = e.bracket;
    assert!((doc.curve.temperatures[a]..=doc.curve.temperatures[b]).contains(&r.estimate.tc));
    assert_eq!(doc.transition(), Some(&r.estimate));
    assert!(doc.curve.errors.iter().all(|e| *e >= 0.0));
}

fn write_table(path: &Path, rows: &[(f64, f64, f64)]) {
    let mut s = String::from("p\ttc\terr\n");
    for (p, t, e) in rows {
        let _ = writeln!(s, "{p}\t{t}\t{e}");
    }
    fs::write(path, s).unwrap();
}

#[test]
fn synthetic_boundary_meets_the_nishimori_line_at_five_percent() {
    let d = tempfile::tempdir().unwrap();
    let tn = nishimori_temperature(0.05_f64, 1.0).unwrap();
    let rows: Vec<(f64, f64, f64)> = [0.0, 0.02, 0.04, 0.05, 0.06].iter().map(|&p| (p, tn + 15.0 * (0.05 - p), 0.01)).collect();
    let path = d.path().join("boundary.tsv");
    write_table(&path, &rows);
    let doc = phase_from_table(&path, 1.0).unwrap();
    match doc.threshold {
        Some(Threshold::Found { p_c, error }) => {
            assert!((p_c - 0.05).abs() <= 5e-4, "{p_c}");
            assert!(error > 0.0 && error < 0.01, "{error}");
        }
        other => panic!("{other:?}"),
    }
    write_phase(&doc, d.path()).unwrap();
    let nish = fs::read_to_string(d.path().join("nishimori.tsv")).unwrap();
    assert!(nish.lines().count() > 50);
    assert!(fs::read_to_string(d.path().join("phase.tsv")).unwrap().lines().count() == 6);
}

#[test]
fn boundary_below_the_line_is_outside_range() {
    let d = tempfile::tempdir().unwrap();
    let path = d.path().join("boundary.tsv");
    write_table(&path, &[(0.01, 2.0, 0.01), (0.02, 1.9, 0.01), (0.03, 1.8, 0.01)]);
    let doc = phase_from_table(&path, 1.0).unwrap();
    assert_eq!(doc.threshold, Some(Threshold::OutsideRange));
}

#[test]
fn nishimori_samples_pass_through_unit_temperature() {
    let t = nishimori_temperature(0.119203_f64, 1.0).unwrap();
    assert!((t - 1.0).abs() < 1e-6, "{t}");
}

fn analysis_copy(dir: &Path, name: &str, edit: impl FnOnce(&mut serde_json::Value)) -> PathBuf {
    let mut v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(fixtures().join("small_group_expected/analysis.json")).unwrap()).unwrap();
    edit(&mut v);
    let sub = dir.join(name);
    fs::create_dir_all(&sub).unwrap();
    fs::write(sub.join("analysis.json"), serde_json::to_vec(&v).unwrap()).unwrap();
    sub
}

#[test]
fn inconsistent_analyses_are_refused() {
    let d = tempfile::tempdir().unwrap();
    analysis_copy(d.path(), "a", |_| {});
    analysis_copy(d.path(), "b", |v| v["provenance"]["code_version"] = "9.9.9".into());
    let e = phase_from_analyses(&[d.path().to_path_buf()], 1.0).unwrap_err();
    assert!(e.to_string().contains("9.9.9"), "{e}");

    let d = tempfile::tempdir().unwrap();
    analysis_copy(d.path(), "a", |_| {});
    analysis_copy(d.path(), "b", |_| {});
    let e = phase_from_analyses(&[d.path().to_path_buf()], 1.0).unwrap_err();
    assert!(e.to_string().contains("same size"), "{e}");
}

#[test]
fn two_sizes_are_extrapolated() {
    let d = tempfile::tempdir().unwrap();
    analysis_copy(d.path(), "small", |_| {});
    analysis_copy(d.path(), "large", |v| {
        v["group"]["n_sites"] = 1944.into();
        v["group"]["l"] = 9.into();
        v["crossing"]["Found"]["n_sites"] = 1944.into();
        v["crossing"]["Found"]["tc"] = 1.9.into();
        v["refined"]["estimate"]["n_sites"] = 1944.into();
        v["refined"]["estimate"]["tc"] = 1.9.into();
    });
    let doc = phase_from_analyses(&[d.path().to_path_buf()], 1.0).unwrap();
    assert_eq!(doc.rates.len(), 1);
    let r = &doc.rates[0];
    assert!(r.extrapolated);
    assert_eq!(r.sizes.len(), 2);
    let e = r.extrapolation.as_ref().unwrap();
    assert_eq!(e.points, 2);
    // The larger system sits closer to the intercept.
    assert!((e.tc - 1.9).abs() < (e.tc - r.sizes[0].estimate.as_ref().unwrap().tc).abs());
    assert!(doc.threshold.is_none(), "one rate cannot give a threshold");
}
