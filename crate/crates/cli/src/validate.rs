//! Invariant suites: `geometry`, `gauge`, `oracle`, `estimators`.
//!
//! Each suite yields a list of named checks; the report is JSON and the
//! command exits nonzero when any check fails.

use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Result};
use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};
use tricolor_core::analysis::{intersect_nishimori, BoundaryPoint, Threshold};
use tricolor_core::mc::{Fault, System};
use tricolor_core::model::{apply_gauge, energy, nishimori_temperature, SpinConfiguration};
use tricolor_core::observables::{plaquette_sum, skewness, specific_heat};
use tricolor_core::oracle::{
    compare_with_mc, density_of_states, exact_from_dos, golden_records, mc_estimates, GoldenRecord, TermSystem, GOLDEN_SEED,
    GOLDEN_TEMPERATURES,
};
use tricolor_core::rng::stream;
use tricolor_core::{
    build_lattice, sample_disorder, validate_geometry, Boundary, Couplings, DisorderRealization, LatticeSpec, Moments,
    NoiseParameters,
};

use crate::io::{atomic_write, CODE_VERSION};

pub const SUITES: [&str; 4] = ["geometry", "gauge", "oracle", "estimators"];
pub const GAUGE_TRIPLES: usize = 10_000;
pub const GAUGE_RATE: f64 = 0.3;
pub const ORACLE_SIGMA: f64 = 3.0;
pub const ORACLE_MAX_ERROR: f64 = 0.01;
pub const ORACLE_SWEEPS: u64 = 1 << 21;
pub const ORACLE_EQUILIBRATION: u64 = 1 << 14;
pub const ORACLE_BLOCK: u64 = 1 << 12;
pub const ORACLE_MC_SEED: u64 = 0x0AC1E;
pub const EXPONENTIAL_DRAWS: usize = 100_000;
pub const VALIDATION_SEED: u64 = 0xC0DE;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: String,
    pub code_version: String,
    pub passed: bool,
    pub seconds: f64,
    pub checks: Vec<CheckResult>,
}

#[derive(Clone, Debug, Default)]
pub struct ValidateOptions {
    pub fault: Option<Fault>,
    /// Measurement sweeps for the oracle comparison.
    pub oracle_sweeps: Option<u64>,
}

fn check(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> CheckResult {
    CheckResult {
        name: name.into(),
        passed,
        detail: detail.into(),
    }
}

fn geometry_suite() -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for (l, m) in [(3, 2), (6, 6), (9, 8), (12, 12)] {
        let spec = LatticeSpec::new(l, m)?;
        let g = build_lattice(spec)?;
        for c in validate_geometry(&g).checks {
            out.push(check(format!("L={l} M={m} {}", c.name), c.passed, c.detail));
        }
    }
    let g = build_lattice(LatticeSpec::new(6, 6)?)?;
    let counts = (g.n_sites(), g.n_five_body(), g.n_hexagons());
    out.push(check(
        "L=6 M=6 term counts",
        counts == (648, 432, 216),
        format!("(sites, five-body, hexagons) = {counts:?}"),
    ));
    Ok(out)
}

fn gauge_suite() -> Result<Vec<CheckResult>> {
    let g = build_lattice(LatticeSpec::new(6, 6)?)?;
    let noise = NoiseParameters::equal(GAUGE_RATE)?;
    let mut rng = stream(VALIDATION_SEED, 0);
    let couplings = Couplings::unit();
    let generators = g.gauge_generators();
    let (mut energy_moved, mut w_moved) = (0usize, 0usize);
    let mut disorder = sample_disorder(&g, noise, VALIDATION_SEED);
    for i in 0..GAUGE_TRIPLES {
        if i % 100 == 0 {
            disorder = sample_disorder(&g, noise, rng.gen());
        }
        let spins = SpinConfiguration::random(g.n_sites(), &mut rng);
        let gen = &generators[rng.gen_range(0..generators.len())];
        let moved = apply_gauge(&spins, gen);
        if energy(&g, &disorder, &couplings, &spins) != energy(&g, &disorder, &couplings, &moved) {
            energy_moved += 1;
        }
        if plaquette_sum(&g, &spins) != plaquette_sum(&g, &moved) {
            w_moved += 1;
        }
    }
    Ok(vec![
        check(
            "gauge transformations keep the energy",
            energy_moved == 0,
            format!("{energy_moved} of {GAUGE_TRIPLES} triples changed E (L=6 M=6 p=q={GAUGE_RATE})"),
        ),
        check(
            "gauge transformations keep w",
            w_moved == 0,
            format!("{w_moved} of {GAUGE_TRIPLES} triples changed w"),
        ),
    ])
}

fn oracle_realizations() -> Result<Vec<(f64, DisorderRealization)>> {
    let g = build_lattice(LatticeSpec::degenerate(3)?)?;
    let mut out = Vec::new();
    for p in [0.0, 0.1] {
        out.push((p, sample_disorder(&g, NoiseParameters::equal(p)?, GOLDEN_SEED)));
    }
    Ok(out)
}

fn oracle_suite(opts: &ValidateOptions) -> Result<Vec<CheckResult>> {
    let g = build_lattice(LatticeSpec::degenerate(3)?)?;
    let couplings = Couplings::unit();
    let sweeps = opts.oracle_sweeps.unwrap_or(ORACLE_SWEEPS);
    let mut out = Vec::new();
    for (p, disorder) in oracle_realizations()? {
        let dos = density_of_states(&TermSystem::from_lattice(&g, &disorder))?;
        let mut sys = System::new(&g, &disorder, couplings);
        if let Some(f) = opts.fault {
            sys = sys.with_fault(f);
        }
        let estimates = mc_estimates(&sys, &GOLDEN_TEMPERATURES, ORACLE_EQUILIBRATION, sweeps, ORACLE_BLOCK, ORACLE_MC_SEED)?;
        for (&t, mc) in GOLDEN_TEMPERATURES.iter().zip(&estimates) {
            let exact = exact_from_dos(&dos, &g, &disorder, &couplings, 1.0 / t);
            let cmp = compare_with_mc(&exact, mc, ORACLE_SIGMA)?;
            out.push(check(
                format!("p={p} T={t} agreement"),
                cmp.passed,
                format!(
                    "E {:.6}±{:.6} vs {:.6} (z {:.2}); w {:.6}±{:.6} vs {:.6} (z {:.2}); w² {:.6}±{:.6} vs {:.6} (z {:.2})",
                    mc.energy.0,
                    mc.energy.1,
                    exact.values.mean_e,
                    cmp.z_energy,
                    mc.w.0,
                    mc.w.1,
                    exact.values.mean_w,
                    cmp.z_w,
                    mc.w2.0,
                    mc.w2.1,
                    exact.values.mean_w2,
                    cmp.z_w2
                ),
            ));
            out.push(check(
                format!("p={p} T={t} precision"),
                mc.max_error() <= ORACLE_MAX_ERROR,
                format!("largest standard error {:.6} (limit {ORACLE_MAX_ERROR})", mc.max_error()),
            ));
        }
    }
    Ok(out)
}

fn estimator_suite() -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let mut rng = stream(VALIDATION_SEED, 1);
    let draws: Vec<f64> = (0..EXPONENTIAL_DRAWS).map(|_| rng.sample(Exp1)).collect();
    let halves: Vec<Moments> = draws.chunks(EXPONENTIAL_DRAWS / 2).map(Moments::from_w_series).collect();
    let z = skewness(&halves)?.unwrap_or(f64::NAN);
    out.push(check(
        "skewness of exponential draws",
        (z - 2.0).abs() <= 0.10,
        format!("{z:.4} from {EXPONENTIAL_DRAWS} draws, expected 2.00 ± 0.10"),
    ));

    let symmetric: Vec<Moments> = [[-1.0, 0.0, 1.0], [-0.5, 0.0, 0.5]].iter().map(|d| Moments::from_w_series(d)).collect();
    let z0 = skewness(&symmetric)?;
    out.push(check(
        "skewness of symmetric samples",
        z0 == Some(0.0),
        format!("{z0:?}"),
    ));

    let t = nishimori_temperature(0.119203_f64, 1.0)?;
    out.push(check(
        "Nishimori temperature at p = 0.119203",
        (t - 1.0).abs() <= 1e-6,
        format!("{t:.9}"),
    ));

    let constant = Moments {
        n: 10,
        mean_w: 0.5,
        mean_w2: 0.25,
        mean_w3: 0.125,
        mean_e: -3.0,
        mean_e2: 9.0,
    };
    let c = specific_heat(&[constant, constant], 1.0, 27)?;
    out.push(check("specific heat of a constant series", c == 0.0, format!("{c}")));

    let fixture = threshold_fixture(0.05)?;
    let found = intersect_nishimori(&fixture)?;
    let (ok, detail) = match found {
        Threshold::Found { p_c, error } => ((p_c - 0.05).abs() <= 5e-4, format!("p_c = {p_c:.6} ± {error:.6}")),
        Threshold::OutsideRange => (false, "no crossing".into()),
    };
    out.push(check("threshold of a boundary crossing at p = 0.05", ok, detail));
    Ok(out)
}

/// A straight boundary through `(p_c, T_N(p_c))`, falling faster than the
/// Nishimori line rises, sampled at five error rates.
pub fn threshold_fixture(p_c: f64) -> Result<Boundary> {
    let t_c = nishimori_temperature(p_c, 1.0)?;
    let points = [0.03, 0.04, 0.045, 0.055, 0.06]
        .iter()
        .map(|&p| BoundaryPoint {
            p,
            tc: t_c - 20.0 * (p - p_c),
            error: 0.002,
        })
        .collect();
    Ok(Boundary::new(points, 1.0)?)
}

pub fn run_suite(name: &str, opts: &ValidateOptions) -> Result<SuiteReport> {
    let start = Instant::now();
    let checks = match name {
        "geometry" => geometry_suite()?,
        "gauge" => gauge_suite()?,
        "oracle" => oracle_suite(opts)?,
        "estimators" => estimator_suite()?,
        other => bail!("unknown suite '{other}'; choose one of {}", SUITES.join(", ")),
    };
    Ok(SuiteReport {
        suite: name.into(),
        code_version: CODE_VERSION.into(),
        passed: checks.iter().all(|c| c.passed),
        seconds: start.elapsed().as_secs_f64(),
        checks,
    })
}

/// Write the archived exact values for the 27-spin geometry into `dir`.
pub fn regenerate_golden(dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for (name, record) in golden_records()? {
        let mut buf = Vec::new();
        record.write(&mut buf)?;
        atomic_write(&dir.join(&name), &buf)?;
        names.push(name);
    }
    Ok(names)
}

/// Compare archived files in `dir` against a fresh enumeration.
pub fn compare_golden(dir: &Path) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for (name, fresh) in golden_records()? {
        let path = dir.join(&name);
        let archived = GoldenRecord::read(std::io::BufReader::new(std::fs::File::open(&path)?))?;
        let (a, f) = (&archived.values, &fresh.values);
        let close = |x: f64, y: f64| (x - y).abs() <= 1e-12 * x.abs().max(y.abs()).max(1.0);
        let scalars = [
            (a.ln_z, f.ln_z),
            (a.mean_e, f.mean_e),
            (a.mean_e2, f.mean_e2),
            (a.mean_w, f.mean_w),
            (a.mean_w2, f.mean_w2),
            (a.mean_w3, f.mean_w3),
            (a.specific_heat, f.specific_heat),
        ];
        let same = archived.disorder == fresh.disorder
            && scalars.iter().all(|&(x, y)| close(x, y))
            && a.f_w.len() == f.f_w.len()
            && a.f_w.iter().zip(&f.f_w).all(|(x, y)| close(*x, *y));
        out.push(check(format!("archived {name}"), same, if same { "identical" } else { "values differ" }));
    }
    Ok(out)
}
