//! Exact enumeration for tiny systems.
//!
//! Every state is visited once in Gray-code order, flipping one spin per step
//! and updating three integer sums incrementally: the five-body sum
//! `A = Σ γ Πσ`, the hexagon sum `B = Σ γ Πσ`, and the plaquette sum
//! `W = Σ Πσ` over raw spins. The result is the exact number of states for
//! each `(A, B, W)`, i.e. a joint density of states. Since `E = −J·A − K·B`,
//! thermal averages at any couplings and temperature follow from a short sum
//! over that table with a log-sum-exp shift, and integer counts leave no
//! room for accumulated rounding during the traversal.

use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lattice::{LatticeGeometry, LatticeSpec};
use crate::mc::ensemble::{ReplicaEnsemble, System};
use crate::model::{CouplingSet, DisorderRealization, NoiseParameters};
use crate::num::Scalar;
use crate::observables::BlockedSeries;

pub const MAX_ENUMERATION_SPINS: usize = 28;
/// Incremental sums are checked against a from-scratch evaluation at this
/// many randomly chosen steps of each traversal.
pub const TRAVERSAL_CHECKS: u64 = 10_000;
pub const GOLDEN_FORMAT: &str = "# tricolor-golden 1";

/// A ±1 spin system given by explicit term lists.
#[derive(Clone, Debug, PartialEq)]
pub struct TermSystem {
    n_spins: usize,
    five: Vec<(Vec<u32>, i8)>,
    hex: Vec<(Vec<u32>, i8)>,
    plaquettes: Vec<Vec<u32>>,
}

impl TermSystem {
    /// Terms are site multisets with a sign; plaquettes are unsigned.
    pub fn new(
        n_spins: usize,
        five: Vec<(Vec<u32>, i8)>,
        hex: Vec<(Vec<u32>, i8)>,
        plaquettes: Vec<Vec<u32>>,
    ) -> Result<Self> {
        let all_sites = five
            .iter()
            .chain(&hex)
            .flat_map(|(s, _)| s.iter())
            .chain(plaquettes.iter().flatten());
        if let Some(bad) = all_sites.into_iter().find(|&&s| s as usize >= n_spins) {
            return Err(Error::Shape(format!("site {bad} outside {n_spins} spins")));
        }
        if five.iter().chain(&hex).any(|(_, g)| g.abs() != 1) {
            return Err(Error::Domain("term signs must be ±1".into()));
        }
        Ok(Self {
            n_spins,
            five,
            hex,
            plaquettes,
        })
    }

    pub fn from_lattice(g: &LatticeGeometry, disorder: &DisorderRealization) -> Self {
        let five = g
            .five_body_terms()
            .iter()
            .zip(disorder.five_body_signs())
            .map(|(t, &s)| (t.to_vec(), s))
            .collect();
        let hex = g
            .hexagon_terms()
            .iter()
            .zip(disorder.hexagon_signs())
            .map(|(t, &s)| (t.to_vec(), s))
            .collect();
        let plaquettes = g.hexagon_terms().iter().map(|t| t.to_vec()).collect();
        Self {
            n_spins: g.n_sites(),
            five,
            hex,
            plaquettes,
        }
    }

    pub fn n_spins(&self) -> usize {
        self.n_spins
    }

    fn product(spins: &[i8], sites: &[u32]) -> i8 {
        sites.iter().fold(1, |a, &s| a * spins[s as usize])
    }

    /// `(A, B, W)` from scratch.
    pub fn sums(&self, spins: &[i8]) -> (i64, i64, i64) {
        let a = self.five.iter().map(|(s, g)| (g * Self::product(spins, s)) as i64).sum();
        let b = self.hex.iter().map(|(s, g)| (g * Self::product(spins, s)) as i64).sum();
        let w = self.plaquettes.iter().map(|s| Self::product(spins, s) as i64).sum();
        (a, b, w)
    }

    /// Per site, the terms whose product changes sign when it flips (odd
    /// multiplicity).
    fn flip_lists(&self, terms: &[Vec<u32>]) -> Vec<Vec<u32>> {
        let mut lists = vec![Vec::new(); self.n_spins];
        for (t, sites) in terms.iter().enumerate() {
            for s in 0..self.n_spins as u32 {
                if sites.iter().filter(|&&x| x == s).count() % 2 == 1 {
                    lists[s as usize].push(t as u32);
                }
            }
        }
        lists
    }
}

/// Exact number of states per `(A, B, W)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DensityOfStates {
    pub n_spins: usize,
    pub n_five: usize,
    pub n_hex: usize,
    pub n_plaquettes: usize,
    /// Dense table indexed by `((A + n_five)/2, (B + n_hex)/2, (W + n_plaquettes)/2)`.
    counts: Vec<u64>,
    /// From-scratch checks performed during the traversal.
    pub checks: u64,
}

impl DensityOfStates {
    fn empty(n_spins: usize, n_five: usize, n_hex: usize, n_plaquettes: usize) -> Self {
        Self {
            n_spins,
            n_five,
            n_hex,
            n_plaquettes,
            counts: vec![0; (n_five + 1) * (n_hex + 1) * (n_plaquettes + 1)],
            checks: 0,
        }
    }

    #[inline]
    fn index(&self, a: i64, b: i64, w: i64) -> usize {
        let ia = ((a + self.n_five as i64) / 2) as usize;
        let ib = ((b + self.n_hex as i64) / 2) as usize;
        let iw = ((w + self.n_plaquettes as i64) / 2) as usize;
        (ia * (self.n_hex + 1) + ib) * (self.n_plaquettes + 1) + iw
    }

    /// Non-empty cells as `(A, B, W, count)`.
    pub fn cells(&self) -> impl Iterator<Item = (i64, i64, i64, u64)> + '_ {
        let (nb, nw) = (self.n_hex + 1, self.n_plaquettes + 1);
        self.counts.iter().enumerate().filter(|(_, &c)| c > 0).map(move |(i, &c)| {
            let (ia, rest) = (i / (nb * nw), i % (nb * nw));
            let (ib, iw) = (rest / nw, rest % nw);
            (
                2 * ia as i64 - self.n_five as i64,
                2 * ib as i64 - self.n_hex as i64,
                2 * iw as i64 - self.n_plaquettes as i64,
                c,
            )
        })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Thermal averages at `β` for the given couplings. Weights are
    /// `count · e^{−β(E − E_min)}`, so at `β = 0` every sum is an exact
    /// integer sum.
    pub fn thermal<S: Scalar>(&self, couplings: &CouplingSet<S>, beta: f64) -> ThermalValues {
        let (j, k) = (couplings.j.as_f64(), couplings.k.as_f64());
        let n_plaq = self.n_plaquettes as i64;
        let cells: Vec<(f64, i64, u64)> = self.cells().map(|(a, b, w, c)| (-j * a as f64 - k * b as f64, w, c)).collect();
        let shift = cells.iter().map(|&(e, _, _)| -beta * e).fold(f64::NEG_INFINITY, f64::max);
        let mut z = Neumaier::default();
        let mut sums = [Neumaier::default(); 5];
        let mut f_w = vec![0.0; self.n_plaquettes + 1];
        for &(e, w_sum, c) in &cells {
            let p = c as f64 * (-beta * e - shift).exp();
            let w = w_sum as f64 / n_plaq.max(1) as f64;
            z.add(p);
            for (acc, x) in sums.iter_mut().zip([e, e * e, w, w * w, w * w * w]) {
                acc.add(p * x);
            }
            f_w[((w_sum + n_plaq) / 2) as usize] += p;
        }
        let z = z.total();
        let [mean_e, mean_e2, mean_w, mean_w2, mean_w3] = sums.map(|s| s.total() / z);
        f_w.iter_mut().for_each(|f| *f /= z);
        ThermalValues {
            beta,
            ln_z: z.ln() + shift,
            mean_e,
            mean_e2,
            mean_w,
            mean_w2,
            mean_w3,
            specific_heat: beta * beta * (mean_e2 - mean_e * mean_e) / self.n_spins as f64,
            f_w,
        }
    }
}

/// Compensated summation.
#[derive(Clone, Copy, Debug, Default)]
struct Neumaier {
    sum: f64,
    carry: f64,
}

impl Neumaier {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn total(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Exact averages at one temperature. `f_w[k]` is the probability of
/// `w = −1 + 2k/N_plaquettes`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThermalValues {
    pub beta: f64,
    pub ln_z: f64,
    pub mean_e: f64,
    pub mean_e2: f64,
    pub mean_w: f64,
    pub mean_w2: f64,
    pub mean_w3: f64,
    /// `β² Var(E) / N`.
    pub specific_heat: f64,
    pub f_w: Vec<f64>,
}

fn check_size(n: usize) -> Result<()> {
    if n > MAX_ENUMERATION_SPINS {
        return Err(Error::TooLarge(n, MAX_ENUMERATION_SPINS));
    }
    Ok(())
}

/// Gray-code traversal of all `2^N` states.
pub fn density_of_states(sys: &TermSystem) -> Result<DensityOfStates> {
    let n = sys.n_spins;
    check_size(n)?;
    let five_sites: Vec<Vec<u32>> = sys.five.iter().map(|(s, _)| s.clone()).collect();
    let hex_sites: Vec<Vec<u32>> = sys.hex.iter().map(|(s, _)| s.clone()).collect();
    let (flip5, fliph, flipw) = (
        sys.flip_lists(&five_sites),
        sys.flip_lists(&hex_sites),
        sys.flip_lists(&sys.plaquettes),
    );
    let mut dos = DensityOfStates::empty(n, sys.five.len(), sys.hex.len(), sys.plaquettes.len());
    let mut spins = vec![1i8; n];
    let mut c5: Vec<i8> = sys.five.iter().map(|(_, g)| *g).collect();
    let mut ch: Vec<i8> = sys.hex.iter().map(|(_, g)| *g).collect();
    let mut cw: Vec<i8> = vec![1; sys.plaquettes.len()];
    let (mut a, mut b, mut w) = sys.sums(&spins);
    let first = dos.index(a, b, w);
    dos.counts[first] += 1;
    let states = 1u64 << n;
    let mut rng = crate::rng::stream(n as u64, 0);
    let mut check_at: Vec<u64> = (0..TRAVERSAL_CHECKS.min(states - 1))
        .map(|_| rng.gen_range(1..states))
        .collect();
    check_at.sort_unstable();
    check_at.dedup();
    let mut next_check = check_at.iter().copied().peekable();
    for i in 1..states {
        let s = i.trailing_zeros() as usize;
        spins[s] = -spins[s];
        for &t in &flip5[s] {
            let t = t as usize;
            c5[t] = -c5[t];
            a += 2 * c5[t] as i64;
        }
        for &t in &fliph[s] {
            let t = t as usize;
            ch[t] = -ch[t];
            b += 2 * ch[t] as i64;
        }
        for &t in &flipw[s] {
            let t = t as usize;
            cw[t] = -cw[t];
            w += 2 * cw[t] as i64;
        }
        let idx = dos.index(a, b, w);
        dos.counts[idx] += 1;
        if next_check.next_if_eq(&i).is_some() {
            let fresh = sys.sums(&spins);
            if fresh != (a, b, w) {
                return Err(Error::EnergyDrift {
                    cached: format!("{:?}", (a, b, w)),
                    recomputed: format!("{fresh:?}"),
                });
            }
            dos.checks += 1;
        }
    }
    Ok(dos)
}

/// Straightforward enumeration evaluating every state from scratch; for
/// cross-checking the traversal on small systems.
pub fn density_of_states_naive(sys: &TermSystem) -> Result<DensityOfStates> {
    let n = sys.n_spins;
    check_size(n)?;
    let mut dos = DensityOfStates::empty(n, sys.five.len(), sys.hex.len(), sys.plaquettes.len());
    let mut spins = vec![0i8; n];
    for state in 0..(1u64 << n) {
        for (i, s) in spins.iter_mut().enumerate() {
            *s = if state >> i & 1 == 1 { -1 } else { 1 };
        }
        let (a, b, w) = sys.sums(&spins);
        let idx = dos.index(a, b, w);
        dos.counts[idx] += 1;
    }
    Ok(dos)
}

/// Identifies what an exact or Monte Carlo result belongs to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub spec: LatticeSpec,
    pub disorder_seed: u64,
    pub j: f64,
    pub k: f64,
    pub beta: f64,
}

impl Provenance {
    fn matches(&self, other: &Self) -> bool {
        let close = |x: f64, y: f64| (x - y).abs() <= 1e-12 * x.abs().max(y.abs()).max(1.0);
        self.spec == other.spec
            && self.disorder_seed == other.disorder_seed
            && close(self.j, other.j)
            && close(self.k, other.k)
            && close(self.beta, other.beta)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactResult {
    pub provenance: Provenance,
    pub values: ThermalValues,
}

/// Exact thermal averages of a lattice system at `β`.
pub fn enumerate<S: Scalar>(
    g: &LatticeGeometry,
    disorder: &DisorderRealization,
    couplings: &CouplingSet<S>,
    beta: f64,
) -> Result<ExactResult> {
    let dos = density_of_states(&TermSystem::from_lattice(g, disorder))?;
    Ok(exact_from_dos(&dos, g, disorder, couplings, beta))
}

pub fn exact_from_dos<S: Scalar>(
    dos: &DensityOfStates,
    g: &LatticeGeometry,
    disorder: &DisorderRealization,
    couplings: &CouplingSet<S>,
    beta: f64,
) -> ExactResult {
    ExactResult {
        provenance: Provenance {
            spec: g.spec(),
            disorder_seed: disorder.seed,
            j: couplings.j.as_f64(),
            k: couplings.k.as_f64(),
            beta,
        },
        values: dos.thermal(couplings, beta),
    }
}

/// Monte Carlo means with standard errors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub provenance: Provenance,
    pub energy: (f64, f64),
    pub w: (f64, f64),
    pub w2: (f64, f64),
    pub measurements: u64,
}

impl McEstimate {
    /// Exact values dressed as an estimate with zero errors.
    pub fn from_exact(exact: &ExactResult) -> Self {
        Self {
            provenance: exact.provenance.clone(),
            energy: (exact.values.mean_e, 0.0),
            w: (exact.values.mean_w, 0.0),
            w2: (exact.values.mean_w2, 0.0),
            measurements: 0,
        }
    }

    pub fn max_error(&self) -> f64 {
        self.energy.1.max(self.w.1).max(self.w2.1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub z_energy: f64,
    pub z_w: f64,
    pub z_w2: f64,
    pub sigma: f64,
    pub passed: bool,
}

fn z_score(estimate: (f64, f64), exact: f64) -> f64 {
    let diff = estimate.0 - exact;
    if diff == 0.0 {
        0.0
    } else if estimate.1 == 0.0 {
        f64::INFINITY
    } else {
        diff / estimate.1
    }
}

/// z-scores of `⟨E⟩, ⟨w⟩, ⟨w²⟩`; passes when all lie within `sigma`.
pub fn compare_with_mc(exact: &ExactResult, mc: &McEstimate, sigma: f64) -> Result<Comparison> {
    if !exact.provenance.matches(&mc.provenance) {
        return Err(Error::Shape(format!(
            "provenance differs: exact {:?}, Monte Carlo {:?}",
            exact.provenance, mc.provenance
        )));
    }
    let z_energy = z_score(mc.energy, exact.values.mean_e);
    let z_w = z_score(mc.w, exact.values.mean_w);
    let z_w2 = z_score(mc.w2, exact.values.mean_w2);
    Ok(Comparison {
        z_energy,
        z_w,
        z_w2,
        sigma,
        passed: [z_energy, z_w, z_w2].iter().all(|z| z.abs() <= sigma),
    })
}

/// Parallel-tempering estimates at the given temperatures (ascending):
/// `equilibration` discarded sweeps, then a measurement after every one of
/// `sweeps` sweeps, with errors from blocks of `block_len` measurements.
pub fn mc_estimates<S: Scalar>(
    sys: &System<S>,
    temperatures: &[f64],
    equilibration: u64,
    sweeps: u64,
    block_len: u64,
    seed: u64,
) -> Result<Vec<McEstimate>> {
    let betas: Vec<f64> = temperatures.iter().map(|t| 1.0 / t).collect();
    let n = betas.len();
    let mut ens = ReplicaEnsemble::new(sys, betas.clone(), seed);
    for _ in 0..equilibration {
        for slot in 0..n {
            ens.metropolis_sweep(sys, slot);
        }
        ens.pt_exchange();
    }
    let n_hex = sys.geometry.n_hexagons() as f64;
    let mut series: Vec<[BlockedSeries; 3]> = (0..n)
        .map(|_| std::array::from_fn(|_| BlockedSeries::new(block_len)))
        .collect();
    for _ in 0..sweeps {
        for slot in 0..n {
            ens.metropolis_sweep(sys, slot);
        }
        ens.pt_exchange();
        for (slot, s) in series.iter_mut().enumerate() {
            let w = ens.plaquette_sum(slot) as f64 / n_hex;
            s[0].push(ens.energy(slot).as_f64());
            s[1].push(w);
            s[2].push(w * w);
        }
    }
    ens.verify_energies(sys)?;
    series
        .iter()
        .zip(&betas)
        .map(|(s, &beta)| {
            let get = |i: usize| {
                s[i].mean_error()
                    .ok_or_else(|| Error::InsufficientData("fewer than two measurement blocks".into()))
            };
            Ok(McEstimate {
                provenance: Provenance {
                    spec: sys.geometry.spec(),
                    disorder_seed: sys.disorder.seed,
                    j: sys.couplings.j.as_f64(),
                    k: sys.couplings.k.as_f64(),
                    beta,
                },
                energy: get(0)?,
                w: get(1)?,
                w2: get(2)?,
                measurements: sweeps,
            })
        })
        .collect()
}

/// Archived exact values together with everything needed to recompute them.
#[derive(Clone, Debug, PartialEq)]
pub struct GoldenRecord {
    pub spec: LatticeSpec,
    pub noise: NoiseParameters,
    pub disorder: DisorderRealization,
    pub j: f64,
    pub k: f64,
    pub code_version: String,
    pub values: ThermalValues,
}

fn signs_string(signs: &[i8]) -> String {
    signs.iter().map(|&s| if s > 0 { '+' } else { '-' }).collect()
}

fn parse_signs(s: &str) -> Option<Vec<i8>> {
    s.chars()
        .map(|c| match c {
            '+' => Some(1),
            '-' => Some(-1),
            _ => None,
        })
        .collect()
}

impl GoldenRecord {
    fn body(&self) -> Vec<String> {
        let v = &self.values;
        let mut lines = vec![
            format!("spec {} {} {}", self.spec.l, self.spec.m, self.spec.degenerate_ok),
            format!("p {:e}", self.noise.p),
            format!("q {:e}", self.noise.q),
            format!("disorder_seed {}", self.disorder.seed),
            format!("five_signs {}", signs_string(self.disorder.five_body_signs())),
            format!("hex_signs {}", signs_string(self.disorder.hexagon_signs())),
            format!("j {:e}", self.j),
            format!("k {:e}", self.k),
            format!("beta {:e}", v.beta),
            format!("code_version {}", self.code_version),
            format!("ln_z {:e}", v.ln_z),
            format!("mean_e {:e}", v.mean_e),
            format!("mean_e2 {:e}", v.mean_e2),
            format!("mean_w {:e}", v.mean_w),
            format!("mean_w2 {:e}", v.mean_w2),
            format!("mean_w3 {:e}", v.mean_w3),
            format!("specific_heat {:e}", v.specific_heat),
        ];
        lines.extend(v.f_w.iter().enumerate().map(|(k, f)| format!("f_w {k} {f:e}")));
        lines
    }

    fn digest(lines: &[String]) -> String {
        let mut h = Sha256::new();
        for l in lines {
            h.update(l.as_bytes());
            h.update(b"\n");
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        let body = self.body();
        writeln!(out, "{GOLDEN_FORMAT}")?;
        writeln!(out, "# regenerate with: tricolor validate oracle --regenerate-golden <dir>")?;
        for l in &body {
            writeln!(out, "{l}")?;
        }
        writeln!(out, "digest {}", Self::digest(&body))?;
        Ok(())
    }

    /// Parse and verify the digest.
    pub fn read<R: BufRead>(input: R) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            what: "golden file",
            line,
            msg,
        };
        let mut body = Vec::new();
        let mut digest = None;
        let mut saw_header = false;
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            if line.starts_with('#') {
                saw_header |= line == GOLDEN_FORMAT;
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            if let Some(d) = line.strip_prefix("digest ") {
                digest = Some((lineno, d.trim().to_string()));
            } else {
                body.push((lineno, line));
            }
        }
        if !saw_header {
            return Err(err(1, format!("missing header '{GOLDEN_FORMAT}'")));
        }
        let (dline, digest) = digest.ok_or_else(|| err(body.len() + 1, "missing digest".into()))?;
        let lines: Vec<String> = body.iter().map(|(_, l)| l.clone()).collect();
        if Self::digest(&lines) != digest {
            return Err(err(dline, "digest does not match contents".into()));
        }
        let mut fields = std::collections::HashMap::new();
        let mut f_w = Vec::new();
        for (lineno, l) in &body {
            let mut parts = l.split_whitespace();
            let key = parts.next().unwrap_or_default();
            let rest: Vec<&str> = parts.collect();
            if key == "f_w" {
                let (k, v) = match rest.as_slice() {
                    [k, v] => (k.parse::<usize>(), v.parse::<f64>()),
                    _ => return Err(err(*lineno, "f_w needs a level and a value".into())),
                };
                let (k, v) = (k.map_err(|e| err(*lineno, e.to_string()))?, v.map_err(|e| err(*lineno, e.to_string()))?);
                if k != f_w.len() {
                    return Err(err(*lineno, "f_w levels out of order".into()));
                }
                f_w.push(v);
            } else {
                fields.insert(key.to_string(), (*lineno, rest.join(" ")));
            }
        }
        let get = |k: &str| fields.get(k).ok_or_else(|| err(0, format!("missing field '{k}'")));
        let num = |k: &str| -> Result<f64> {
            let (line, v) = get(k)?;
            v.parse().map_err(|e: std::num::ParseFloatError| err(*line, format!("{k}: {e}")))
        };
        let (sline, spec) = get("spec")?;
        let sp: Vec<&str> = spec.split_whitespace().collect();
        let spec = match sp.as_slice() {
            [l, m, d] => LatticeSpec {
                l: l.parse().map_err(|_| err(*sline, "bad L".into()))?,
                m: m.parse().map_err(|_| err(*sline, "bad M".into()))?,
                degenerate_ok: d.parse().map_err(|_| err(*sline, "bad degenerate flag".into()))?,
            },
            _ => return Err(err(*sline, "spec needs L M degenerate".into())),
        };
        spec.check()?;
        let sign_field = |k: &str| -> Result<Vec<i8>> {
            let (line, v) = get(k)?;
            parse_signs(v).ok_or_else(|| err(*line, format!("{k} must be a +/- string")))
        };
        let (seed_line, seed) = get("disorder_seed")?;
        let seed: u64 = seed.parse().map_err(|_| err(*seed_line, "bad seed".into()))?;
        let disorder = DisorderRealization::from_signs(spec, seed, sign_field("five_signs")?, sign_field("hex_signs")?)?;
        Ok(Self {
            spec,
            noise: NoiseParameters::new(num("p")?, num("q")?)?,
            disorder,
            j: num("j")?,
            k: num("k")?,
            code_version: get("code_version")?.1.clone(),
            values: ThermalValues {
                beta: num("beta")?,
                ln_z: num("ln_z")?,
                mean_e: num("mean_e")?,
                mean_e2: num("mean_e2")?,
                mean_w: num("mean_w")?,
                mean_w2: num("mean_w2")?,
                mean_w3: num("mean_w3")?,
                specific_heat: num("specific_heat")?,
                f_w,
            },
        })
    }
}

/// Disorder seed of the archived realizations.
pub const GOLDEN_SEED: u64 = 7;
/// Temperatures of the archived reference values.
pub const GOLDEN_TEMPERATURES: [f64; 3] = [0.8, 1.5, 3.0];
/// Error rates of the archived realizations (`q = p`).
pub const GOLDEN_RATES: [f64; 2] = [0.0, 0.1];

/// File name of the archived record for `(p, T)`.
pub fn golden_file_name(p: f64, t: f64) -> String {
    format!("degenerate_l3_p{p:.3}_t{t:.3}.golden")
}

/// Recompute every archived record on the 27-spin geometry. One traversal
/// per realization serves all temperatures.
pub fn golden_records() -> Result<Vec<(String, GoldenRecord)>> {
    let spec = LatticeSpec::degenerate(3)?;
    let g = crate::lattice::build_lattice(spec)?;
    let couplings = CouplingSet::<i64>::unit();
    let mut out = Vec::new();
    for p in GOLDEN_RATES {
        let noise = NoiseParameters::equal(p)?;
        let disorder = crate::model::sample_disorder(&g, noise, GOLDEN_SEED);
        let dos = density_of_states(&TermSystem::from_lattice(&g, &disorder))?;
        for t in GOLDEN_TEMPERATURES {
            let record = GoldenRecord {
                spec,
                noise,
                disorder: disorder.clone(),
                j: 1.0,
                k: 1.0,
                code_version: env!("CARGO_PKG_VERSION").to_string(),
                values: dos.thermal(&couplings, 1.0 / t),
            };
            out.push((golden_file_name(p, t), record));
        }
    }
    Ok(out)
}
