//! Hamiltonian, quenched disorder and gauge transformations.
//!
//! ```text
//! H(σ) = −J Σ_five γ_five Π σ  −  K Σ_hex γ_hex Π σ
//! ```
//!
//! Products run over term multisets, so a site listed twice in a term drops
//! out of it.

use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{LatticeGeometry, LatticeSpec};
use crate::num::{Real, Scalar};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct CouplingSet<S> {
    /// Five-body coupling.
    pub j: S,
    /// Hexagon coupling.
    pub k: S,
}

impl<S: Scalar> CouplingSet<S> {
    pub fn new(j: S, k: S) -> Result<Self> {
        if !(j > S::zero() && k > S::zero()) {
            return Err(Error::Domain(format!("couplings must be positive (J={j}, K={k})")));
        }
        Ok(Self { j, k })
    }

    /// `J = K = 1`.
    pub fn unit() -> Self {
        Self {
            j: S::one(),
            k: S::one(),
        }
    }

    /// Energy from the signed term sums `A = Σ γΠσ` (five-body) and
    /// `B = Σ γΠσ` (hexagons).
    #[inline]
    pub fn energy_from_sums(&self, five: i64, hex: i64) -> S {
        S::zero() - self.j * S::from_i64_lossy(five) - self.k * S::from_i64_lossy(hex)
    }
}

/// Qubit and measurement error rates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseParameters {
    pub p: f64,
    pub q: f64,
}

impl NoiseParameters {
    pub fn new(p: f64, q: f64) -> Result<Self> {
        for (name, v) in [("p", p), ("q", q)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Domain(format!("{name}={v} is not a probability")));
            }
        }
        Ok(Self { p, q })
    }

    /// `p = q`, the line studied here.
    pub fn equal(p: f64) -> Result<Self> {
        Self::new(p, p)
    }
}

/// Quenched coupling signs for one disorder sample.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisorderRealization {
    pub spec: LatticeSpec,
    pub seed: u64,
    five_body: Vec<i8>,
    hexagon: Vec<i8>,
}

impl DisorderRealization {
    /// All couplings positive.
    pub fn clean(g: &LatticeGeometry) -> Self {
        Self {
            spec: g.spec(),
            seed: 0,
            five_body: vec![1; g.n_five_body()],
            hexagon: vec![1; g.n_hexagons()],
        }
    }

    pub fn from_signs(spec: LatticeSpec, seed: u64, five_body: Vec<i8>, hexagon: Vec<i8>) -> Result<Self> {
        if five_body.len() != spec.n_five_body() || hexagon.len() != spec.n_hexagons() {
            return Err(Error::Shape(format!(
                "disorder lengths ({}, {}) do not fit {spec}",
                five_body.len(),
                hexagon.len()
            )));
        }
        if five_body.iter().chain(&hexagon).any(|&s| s != 1 && s != -1) {
            return Err(Error::Domain("coupling signs must be ±1".into()));
        }
        Ok(Self {
            spec,
            seed,
            five_body,
            hexagon,
        })
    }

    pub fn five_body_signs(&self) -> &[i8] {
        &self.five_body
    }

    pub fn hexagon_signs(&self) -> &[i8] {
        &self.hexagon
    }

    pub fn five_body_signs_mut(&mut self) -> &mut [i8] {
        &mut self.five_body
    }

    pub fn hexagon_signs_mut(&mut self) -> &mut [i8] {
        &mut self.hexagon
    }

    /// Sign of a term by unified id (five-body first, then hexagons).
    #[inline]
    pub fn sign(&self, term: usize) -> i8 {
        let n5 = self.five_body.len();
        if term < n5 {
            self.five_body[term]
        } else {
            self.hexagon[term - n5]
        }
    }

    pub fn n_negative(&self) -> usize {
        self.five_body.iter().chain(&self.hexagon).filter(|&&s| s < 0).count()
    }

    fn check_shape(&self, g: &LatticeGeometry) {
        assert!(
            self.five_body.len() == g.n_five_body() && self.hexagon.len() == g.n_hexagons(),
            "disorder realization drawn for {} used on {}",
            self.spec,
            g.spec()
        );
    }

    /// Text format `tricolor-disorder 1`: one header line, then
    /// `term_id sign` per term in unified term order.
    pub fn write<W: Write>(&self, mut out: W, noise: Option<NoiseParameters>) -> Result<()> {
        write!(
            out,
            "# tricolor-disorder 1 L={} M={} degenerate={} seed={}",
            self.spec.l, self.spec.m, self.spec.degenerate_ok, self.seed
        )?;
        if let Some(n) = noise {
            write!(out, " p={} q={}", n.p, n.q)?;
        }
        writeln!(out)?;
        for (t, s) in self.five_body.iter().chain(&self.hexagon).enumerate() {
            writeln!(out, "{t} {s}")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self> {
        let err = |line: usize, msg: &str| Error::Parse {
            what: "disorder file",
            line,
            msg: msg.to_string(),
        };
        let mut lines = input.lines();
        let header = lines.next().ok_or_else(|| err(1, "empty file"))??;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.get(..3) != Some(&["#", "tricolor-disorder", "1"]) {
            return Err(err(1, "unsupported header"));
        }
        let kv = |key: &str| {
            fields[3..]
                .iter()
                .find_map(|f| f.strip_prefix(key))
                .ok_or_else(|| err(1, "incomplete header"))
        };
        let spec = LatticeSpec {
            l: kv("L=")?.parse().map_err(|_| err(1, "bad L"))?,
            m: kv("M=")?.parse().map_err(|_| err(1, "bad M"))?,
            degenerate_ok: kv("degenerate=")? == "true",
        };
        let seed = kv("seed=")?.parse().map_err(|_| err(1, "bad seed"))?;
        let mut signs = Vec::with_capacity(spec.n_five_body() + spec.n_hexagons());
        for (i, line) in lines.enumerate() {
            let line = line?;
            let lineno = i + 2;
            if line.trim().is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let id: usize = it
                .next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| err(lineno, "bad term id"))?;
            if id != signs.len() {
                return Err(err(lineno, "term ids must be dense and ordered"));
            }
            let s: i8 = it
                .next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| err(lineno, "bad sign"))?;
            signs.push(s);
        }
        if signs.len() != spec.n_five_body() + spec.n_hexagons() {
            return Err(Error::Shape(format!("expected {} signs, found {}", spec.n_five_body() + spec.n_hexagons(), signs.len())));
        }
        let hexagon = signs.split_off(spec.n_five_body());
        Self::from_signs(spec, seed, signs, hexagon)
    }
}

/// Draw signs independently: five-body negative with probability `p`,
/// hexagons with probability `q`. Uses stream 0 of `seed`.
pub fn sample_disorder(g: &LatticeGeometry, noise: NoiseParameters, seed: u64) -> DisorderRealization {
    let mut rng = rng::stream(seed, rng::DISORDER_STREAM);
    let mut draw = |prob: f64| if rng.gen::<f64>() < prob { -1 } else { 1 };
    let five_body = (0..g.n_five_body()).map(|_| draw(noise.p)).collect();
    let hexagon = (0..g.n_hexagons()).map(|_| draw(noise.q)).collect();
    DisorderRealization {
        spec: g.spec(),
        seed,
        five_body,
        hexagon,
    }
}

/// One ±1 spin per site.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct SpinConfiguration(Vec<i8>);

impl SpinConfiguration {
    pub fn all_up(n: usize) -> Self {
        Self(vec![1; n])
    }

    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        Self((0..n).map(|_| if rng.gen::<bool>() { 1 } else { -1 }).collect())
    }

    pub fn from_vec(v: Vec<i8>) -> Result<Self> {
        if v.iter().any(|&s| s != 1 && s != -1) {
            return Err(Error::Domain("spins must be ±1".into()));
        }
        Ok(Self(v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize) -> i8 {
        self.0[i]
    }

    #[inline]
    pub fn flip(&mut self, i: usize) {
        self.0[i] = -self.0[i];
    }

    pub fn as_slice(&self) -> &[i8] {
        &self.0
    }

    #[inline]
    pub fn product(&self, sites: &[u32]) -> i8 {
        sites.iter().fold(1i8, |acc, &s| acc * self.0[s as usize])
    }
}

impl From<SpinConfiguration> for String {
    fn from(s: SpinConfiguration) -> String {
        s.0.iter().map(|&v| if v > 0 { '+' } else { '-' }).collect()
    }
}

impl TryFrom<String> for SpinConfiguration {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.chars()
            .map(|c| match c {
                '+' => Ok(1),
                '-' => Ok(-1),
                other => Err(format!("invalid spin character {other:?}")),
            })
            .collect::<Result<Vec<i8>, String>>()
            .map(SpinConfiguration)
    }
}

/// Signed term sums `(Σ_five γΠσ, Σ_hex γΠσ)`.
pub fn term_sums(g: &LatticeGeometry, disorder: &DisorderRealization, spins: &SpinConfiguration) -> (i64, i64) {
    disorder.check_shape(g);
    assert_eq!(spins.len(), g.n_sites(), "spin configuration does not fit the geometry");
    let five = g
        .five_body_terms()
        .iter()
        .zip(disorder.five_body_signs())
        .map(|(t, &s)| (s * spins.product(t)) as i64)
        .sum();
    let hex = g
        .hexagon_terms()
        .iter()
        .zip(disorder.hexagon_signs())
        .map(|(h, &s)| (s * spins.product(h)) as i64)
        .sum();
    (five, hex)
}

pub fn energy<S: Scalar>(
    g: &LatticeGeometry,
    disorder: &DisorderRealization,
    couplings: &CouplingSet<S>,
    spins: &SpinConfiguration,
) -> S {
    let (five, hex) = term_sums(g, disorder, spins);
    couplings.energy_from_sums(five, hex)
}

/// Local field sums `(Σ γΠσ over five-body, over hexagons)` restricted to the
/// terms whose product changes sign when `site` flips.
#[inline]
pub fn local_sums(g: &LatticeGeometry, disorder: &DisorderRealization, spins: &SpinConfiguration, site: usize) -> (i64, i64) {
    let five = g
        .flip_five(site)
        .iter()
        .map(|&t| (disorder.sign(t as usize) * spins.product(g.term_sites(t as usize))) as i64)
        .sum();
    let hex = g
        .flip_hex(site)
        .iter()
        .map(|&t| (disorder.sign(t as usize) * spins.product(g.term_sites(t as usize))) as i64)
        .sum();
    (five, hex)
}

/// `H(σ with site flipped) − H(σ)` from the incident terms only.
pub fn delta_energy<S: Scalar>(
    g: &LatticeGeometry,
    disorder: &DisorderRealization,
    couplings: &CouplingSet<S>,
    spins: &SpinConfiguration,
    site: usize,
) -> S {
    assert!(site < g.n_sites(), "site {site} out of range");
    let (five, hex) = local_sums(g, disorder, spins, site);
    let two = S::one() + S::one();
    two * (couplings.j * S::from_i64_lossy(five) + couplings.k * S::from_i64_lossy(hex))
}

/// Flip the eight spins of a gauge generator (a repeated site flips back).
pub fn apply_gauge_in_place(spins: &mut SpinConfiguration, generator: &[u32]) {
    for &s in generator {
        spins.flip(s as usize);
    }
}

pub fn apply_gauge(spins: &SpinConfiguration, generator: &[u32]) -> SpinConfiguration {
    let mut out = spins.clone();
    apply_gauge_in_place(&mut out, generator);
    out
}

/// Temperature on the Nishimori line, `T = 2J / ln((1 − p)/p)`, for `p = q`
/// and `J = K`.
pub fn nishimori_temperature<F: Real>(p: F, j: F) -> Result<F> {
    let half = F::lit(0.5);
    if !(p > F::zero() && p < half) {
        return Err(Error::Domain(format!(
            "Nishimori temperature needs 0 < p < 1/2 (got p={p})"
        )));
    }
    Ok((j + j) / ((F::one() - p) / p).ln())
}

/// Inverse of [`nishimori_temperature`]: `p = 1 / (1 + e^{2J/T})`.
pub fn nishimori_probability<F: Real>(t: F, j: F) -> F {
    F::one() / (F::one() + ((j + j) / t).exp())
}
