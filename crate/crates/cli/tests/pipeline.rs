use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use tricolor_cli::plan::{cmd_plan, Manifest};
use tricolor_cli::run::{cmd_run, job_paths, RunOptions};

const STUDY: &str = "\
[study]
name = tiny
master_seed = 11
measurement_interval = 3
[row]
p = 0, 0.05
sizes = 3x2
samples = 3
b = 7
t_min = 1.0
t_max = 2.5
n_t = 4
";

fn plan(dir: &Path, text: &str) -> Manifest {
    let cfg = dir.join("study.cfg");
    fs::write(&cfg, text).unwrap();
    cmd_plan(&cfg, Some(&dir.join("out"))).unwrap().1
}

/// Every file under `root`, keyed by relative path.
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

fn opts(workers: usize) -> RunOptions {
    RunOptions {
        workers,
        ..RunOptions::default()
    }
}

#[test]
fn worker_count_does_not_change_outputs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ma = plan(a.path(), STUDY);
    let mb = plan(b.path(), STUDY);
    let sa = cmd_run(&ma, &a.path().join("out"), &opts(1)).unwrap();
    let sb = cmd_run(&mb, &b.path().join("out"), &opts(8)).unwrap();
    assert_eq!((sa.completed, sb.completed), (6, 6));
    assert_eq!(sa.merged.len(), 2);
    let (xa, xb) = (snapshot(&a.path().join("out")), snapshot(&b.path().join("out")));
    assert_eq!(xa.keys().collect::<Vec<_>>(), xb.keys().collect::<Vec<_>>());
    for (k, v) in &xa {
        assert!(v == &xb[k], "{} differs between 1 and 8 workers", k.display());
    }
    assert!(xa.keys().any(|k| k.ends_with("measurements.csv")));
}

#[test]
fn interrupted_run_resumes_bit_identically() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ma = plan(a.path(), STUDY);
    let mb = plan(b.path(), STUDY);
    let out_a = a.path().join("out");
    cmd_run(&ma, &out_a, &opts(1)).unwrap();

    let out_b = b.path().join("out");
    let halting = |n| RunOptions {
        max_sweeps: Some(n),
        checkpoint_interval: Some(17),
        ..opts(2)
    };
    let s = cmd_run(&mb, &out_b, &halting(50)).unwrap();
    assert_eq!((s.halted, s.completed), (6, 0));
    for job in &mb.jobs {
        let p = job_paths(&out_b, job);
        assert!(p.checkpoint.exists() && !p.csv.exists());
    }
    cmd_run(&mb, &out_b, &halting(70)).unwrap();
    let s = cmd_run(&mb, &out_b, &opts(3)).unwrap();
    assert_eq!(s.completed, 6);
    for job in &mb.jobs {
        assert!(!job_paths(&out_b, job).checkpoint.exists());
    }
    let s = cmd_run(&mb, &out_b, &opts(1)).unwrap();
    assert_eq!(s.already_done, 6);

    let (xa, xb) = (snapshot(&out_a), snapshot(&out_b));
    assert_eq!(xa.keys().collect::<Vec<_>>(), xb.keys().collect::<Vec<_>>());
    for (k, v) in &xa {
        assert!(v == &xb[k], "{} differs after interruption", k.display());
    }
}

#[test]
fn foreign_checkpoint_is_refused() {
    let d = tempfile::tempdir().unwrap();
    let m = plan(d.path(), STUDY);
    let out = d.path().join("out");
    let halting = RunOptions {
        max_sweeps: Some(20),
        ..opts(1)
    };
    cmd_run(&m, &out, &halting).unwrap();
    let (first, second) = (job_paths(&out, &m.jobs[0]), job_paths(&out, &m.jobs[1]));
    fs::copy(&first.checkpoint, &second.checkpoint).unwrap();
    let s = cmd_run(&m, &out, &opts(1)).unwrap();
    assert_eq!(s.failed.len(), 1);
    assert_eq!(s.failed[0].0, m.jobs[1].id);
    assert!(s.failed[0].1.contains("refusing to resume"), "{}", s.failed[0].1);
}

#[test]
fn clean_l6_job_records_an_equilibration_verdict() {
    let d = tempfile::tempdir().unwrap();
    let text = "[study]\nmaster_seed = 3\n[row]\np = 0\nsizes = 6x6\nsamples = 2\nb = 8\nt_min = 1.2\nt_max = 2.0\nn_t = 4\n";
    let m = plan(d.path(), text);
    let out = d.path().join("out");
    let s = cmd_run(&m, &out, &RunOptions { samples: Some((0, 1)), ..opts(1) }).unwrap();
    assert_eq!(s.completed, 1);
    let csv = fs::read_to_string(job_paths(&out, &m.jobs[0]).csv).unwrap();
    let line = csv.lines().find(|l| l.starts_with("# sample 0 ")).unwrap();
    assert!(line.ends_with("equilibration passed") || line.ends_with("equilibration failed"), "{line}");
    assert!(csv.contains("# code_version ") && csv.contains("# config_digest ") && csv.contains("seed "));
    let eq: serde_json::Value = serde_json::from_str(&fs::read_to_string(job_paths(&out, &m.jobs[0]).equilibration).unwrap()).unwrap();
    assert!(eq["status"]["passed"].is_boolean());
    assert!(!out.join(&m.jobs[0].group).join("measurements.csv").exists(), "group merged before completion");
}

#[test]
fn exit_status_reflects_validation() {
    let bin = env!("CARGO_BIN_EXE_tricolor");
    let ok = Command::new(bin).args(["validate", "estimators"]).output().unwrap();
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    let report: serde_json::Value = serde_json::from_slice(&ok.stdout).unwrap();
    assert_eq!(report[0]["passed"], true);

    let bad = Command::new(bin)
        .args(["validate", "oracle", "--inject-fault", "delta-sign", "--oracle-sweeps", "16384"])
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("FAIL oracle"));
}

#[test]
fn output_directory_comes_from_the_environment() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("s.cfg");
    fs::write(&cfg, STUDY).unwrap();
    let target = d.path().join("elsewhere");
    let status = Command::new(env!("CARGO_BIN_EXE_tricolor"))
        .args(["plan", cfg.to_str().unwrap()])
        .env("TRICOLOR_OUTPUT_DIR", &target)
        .current_dir(d.path())
        .status()
        .unwrap();
    assert!(status.success());
    assert!(target.join("manifest.json").exists());
}
