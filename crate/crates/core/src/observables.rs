//! Wilson-loop and energy measurements, thermal moments and the
//! disorder-averaged estimators built from them.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::LatticeGeometry;
use crate::model::{energy, CouplingSet, DisorderRealization, SpinConfiguration};
use crate::num::{Real, Scalar};

/// Number of uniform bins on `[-1, 1]` used for reported histograms.
pub const DEFAULT_HISTOGRAM_BINS: usize = 50;
pub const DEFAULT_BOOTSTRAP_RESAMPLES: usize = 1000;

/// One measurement of the elementary Wilson loops and the energy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct MeasurementRecord<S> {
    /// `Σ_hex Π σ` over raw spins.
    pub plaquette_sum: i64,
    pub n_hexagons: u32,
    pub energy: S,
}

impl<S: Scalar> MeasurementRecord<S> {
    /// Average elementary Wilson loop.
    pub fn w(&self) -> f64 {
        self.plaquette_sum as f64 / self.n_hexagons as f64
    }

    /// Index `k` of `w = −1 + 2k / N_hex`.
    pub fn level(&self) -> usize {
        ((self.plaquette_sum + self.n_hexagons as i64) / 2) as usize
    }
}

/// Sum of the hexagon products, disorder signs excluded.
pub fn plaquette_sum(g: &LatticeGeometry, spins: &SpinConfiguration) -> i64 {
    g.hexagon_terms().iter().map(|h| spins.product(h) as i64).sum()
}

pub fn measure<S: Scalar>(
    g: &LatticeGeometry,
    disorder: &DisorderRealization,
    couplings: &CouplingSet<S>,
    spins: &SpinConfiguration,
) -> MeasurementRecord<S> {
    MeasurementRecord {
        plaquette_sum: plaquette_sum(g, spins),
        n_hexagons: g.n_hexagons() as u32,
        energy: energy(g, disorder, couplings, spins),
    }
}

/// Running sums for one (disorder sample, temperature). The plaquette sum is
/// accumulated unnormalized so that integer inputs stay exact and merging is
/// order-insensitive.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ThermalAccumulator {
    pub n: u64,
    pub sum_p: f64,
    pub sum_p2: f64,
    pub sum_p3: f64,
    pub sum_e: f64,
    pub sum_e2: f64,
}

impl ThermalAccumulator {
    #[inline]
    pub fn push(&mut self, plaquette_sum: i64, energy: f64) {
        let p = plaquette_sum as f64;
        self.n += 1;
        self.sum_p += p;
        self.sum_p2 += p * p;
        self.sum_p3 += p * p * p;
        self.sum_e += energy;
        self.sum_e2 += energy * energy;
    }

    pub fn push_record<S: Scalar>(&mut self, r: &MeasurementRecord<S>) {
        self.push(r.plaquette_sum, r.energy.as_f64());
    }

    pub fn merge(&mut self, other: &Self) {
        self.n += other.n;
        self.sum_p += other.sum_p;
        self.sum_p2 += other.sum_p2;
        self.sum_p3 += other.sum_p3;
        self.sum_e += other.sum_e;
        self.sum_e2 += other.sum_e2;
    }

    pub fn moments(&self, n_hexagons: usize) -> ThermalMoments<f64> {
        let n = self.n.max(1) as f64;
        let h = n_hexagons as f64;
        ThermalMoments {
            n: self.n,
            mean_w: self.sum_p / n / h,
            mean_w2: self.sum_p2 / n / (h * h),
            mean_w3: self.sum_p3 / n / (h * h * h),
            mean_e: self.sum_e / n,
            mean_e2: self.sum_e2 / n,
        }
    }
}

/// Thermal averages `⟨w⟩, ⟨w²⟩, ⟨w³⟩, ⟨E⟩, ⟨E²⟩` for one sample at one
/// temperature.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThermalMoments<F> {
    pub n: u64,
    pub mean_w: F,
    pub mean_w2: F,
    pub mean_w3: F,
    pub mean_e: F,
    pub mean_e2: F,
}

impl<F: Real> ThermalMoments<F> {
    /// Moments of a plain series of `w` values (energies set to zero).
    pub fn from_w_series(ws: &[F]) -> Self {
        let n = F::count(ws.len().max(1));
        let (mut s1, mut s2, mut s3) = (F::zero(), F::zero(), F::zero());
        for &w in ws {
            s1 = s1 + w;
            s2 = s2 + w * w;
            s3 = s3 + w * w * w;
        }
        Self {
            n: ws.len() as u64,
            mean_w: s1 / n,
            mean_w2: s2 / n,
            mean_w3: s3 / n,
            mean_e: F::zero(),
            mean_e2: F::zero(),
        }
    }

    /// `⟨(w − μ)²⟩` and `⟨(w − μ)³⟩` expanded from the raw moments.
    pub fn central_about(&self, mu: F) -> (F, F) {
        let three = F::lit(3.0);
        let two = F::lit(2.0);
        let m2 = self.mean_w2 - two * mu * self.mean_w + mu * mu;
        let m3 = self.mean_w3 - three * mu * self.mean_w2 + three * mu * mu * self.mean_w - mu * mu * mu;
        (m2, m3)
    }

    pub fn energy_variance(&self) -> F {
        (self.mean_e2 - self.mean_e * self.mean_e).max(F::zero())
    }

    /// Same moments for the mirrored variable `−w`.
    pub fn mirrored(&self) -> Self {
        Self {
            mean_w: -self.mean_w,
            mean_w3: -self.mean_w3,
            ..*self
        }
    }
}

/// `ζ = [⟨w̃³⟩]_av / [⟨w̃²⟩]_av^{3/2}` with `w̃ = w − [⟨w⟩]_av`.
///
/// Two passes: the global mean first, then per-sample central moments about
/// it, averaged over samples separately for numerator and denominator.
/// `Ok(None)` signals a vanishing denominator.
pub fn skewness<F: Real>(samples: &[ThermalMoments<F>]) -> Result<Option<F>> {
    if samples.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "skewness needs at least 2 disorder samples, got {}",
            samples.len()
        )));
    }
    Ok(skewness_of(samples.iter()))
}

pub(crate) fn skewness_of<'a, F: Real>(samples: impl Iterator<Item = &'a ThermalMoments<F>> + Clone) -> Option<F> {
    let count = F::count(samples.clone().count());
    let mu = samples.clone().fold(F::zero(), |a, s| a + s.mean_w) / count;
    let (m2, m3) = samples.fold((F::zero(), F::zero()), |(a2, a3), s| {
        let (c2, c3) = s.central_about(mu);
        (a2 + c2, a3 + c3)
    });
    let (m2, m3) = (m2 / count, m3 / count);
    if m2 <= F::zero() {
        return None;
    }
    Some(m3 / m2.powf(F::lit(1.5)))
}

/// `c = β² [⟨E²⟩ − ⟨E⟩²]_av / N`.
pub fn specific_heat<F: Real>(samples: &[ThermalMoments<F>], beta: F, n_sites: usize) -> Result<F> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("specific heat needs a sample".into()));
    }
    let var = samples.iter().fold(F::zero(), |a, s| a + s.energy_variance()) / F::count(samples.len());
    Ok(beta * beta * var / F::count(n_sites))
}

/// Mean and spread of a statistic over bootstrap resamples of whole samples.
/// Resamples where the statistic is undefined are dropped; `None` if all are.
pub fn bootstrap<T, R, F>(data: &[T], resamples: usize, rng: &mut R, stat: F) -> Option<(f64, f64)>
where
    R: Rng + ?Sized,
    F: Fn(&[&T]) -> Option<f64>,
{
    let mut scratch: Vec<&T> = Vec::with_capacity(data.len());
    let (mut n, mut sum, mut sum_sq) = (0usize, 0.0, 0.0);
    for _ in 0..resamples {
        scratch.clear();
        scratch.extend((0..data.len()).map(|_| data.choose(rng).expect("non-empty data")));
        if let Some(v) = stat(&scratch) {
            n += 1;
            sum += v;
            sum_sq += v * v;
        }
    }
    if n == 0 {
        return None;
    }
    let mean = sum / n as f64;
    let var = (sum_sq / n as f64 - mean * mean).max(0.0);
    Some((mean, var.sqrt()))
}

/// Bootstrap standard deviation of [`skewness`] over disorder samples.
pub fn bootstrap_skewness<R: Rng + ?Sized>(samples: &[ThermalMoments<f64>], resamples: usize, rng: &mut R) -> Option<f64> {
    if samples.len() < 2 {
        return None;
    }
    bootstrap(samples, resamples, rng, |pick| skewness_of(pick.iter().copied())).map(|(_, sd)| sd)
}

/// Mean and standard error of a correlated series by equal-size block
/// averaging (trailing remainder dropped).
pub fn blocked_mean_error(series: &[f64], n_blocks: usize) -> (f64, f64) {
    let len = series.len() / n_blocks * n_blocks;
    let block = len / n_blocks;
    assert!(block > 0, "series too short for {n_blocks} blocks");
    let means: Vec<f64> = series[..len]
        .chunks(block)
        .map(|c| c.iter().sum::<f64>() / block as f64)
        .collect();
    let mean = means.iter().sum::<f64>() / n_blocks as f64;
    let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (n_blocks - 1) as f64;
    (mean, (var / n_blocks as f64).sqrt())
}

/// Normalized histogram of `w` on `[-1, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WilsonHistogram<F> {
    pub bins: usize,
    /// Probability mass per bin; sums to one.
    pub mass: Vec<F>,
    /// Number of measurements pooled.
    pub count: u64,
}

impl<F: Real> WilsonHistogram<F> {
    pub fn edges(&self) -> Vec<F> {
        (0..=self.bins)
            .map(|i| F::lit(-1.0) + F::lit(2.0) * F::count(i) / F::count(self.bins))
            .collect()
    }

    pub fn centers(&self) -> Vec<F> {
        (0..self.bins)
            .map(|i| F::lit(-1.0) + (F::lit(2.0) * F::count(i) + F::one()) / F::count(self.bins))
            .collect()
    }

    pub fn total(&self) -> F {
        self.mass.iter().fold(F::zero(), |a, &m| a + m)
    }

    /// Bin `w` levels `k ∈ [0, N_hex]` (with `w = −1 + 2k/N_hex`) from exact
    /// level counts.
    pub fn from_level_counts(counts: &[u64], bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::Domain("histogram needs at least one bin".into()));
        }
        let n_hex = counts.len().saturating_sub(1).max(1);
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::InsufficientData("histogram of no measurements".into()));
        }
        let mut raw = vec![0u64; bins];
        for (k, &c) in counts.iter().enumerate() {
            raw[level_bin(k, n_hex, bins)] += c;
        }
        let t = F::from_u64(total).expect("count representable");
        Ok(Self {
            bins,
            mass: raw.iter().map(|&c| F::from_u64(c).unwrap() / t).collect(),
            count: total,
        })
    }
}

#[inline]
fn level_bin(k: usize, n_hex: usize, bins: usize) -> usize {
    (k * bins / n_hex).min(bins - 1)
}

/// Pool records into a normalized histogram.
pub fn histogram<S: Scalar, F: Real>(records: &[MeasurementRecord<S>], bins: usize) -> Result<WilsonHistogram<F>> {
    let first = records
        .first()
        .ok_or_else(|| Error::InsufficientData("histogram of no records".into()))?;
    let n_hex = first.n_hexagons as usize;
    let mut counts = vec![0u64; n_hex + 1];
    for r in records {
        if r.n_hexagons as usize != n_hex {
            return Err(Error::Shape("records from different lattices".into()));
        }
        counts[r.level()] += 1;
    }
    WilsonHistogram::from_level_counts(&counts, bins)
}

/// Histogram at `beta_to` from records taken at `beta_from`, one slice per
/// disorder sample. Each record is weighted by `e^{−(β_to − β_from)E}`; every
/// sample is normalized on its own before pooling so that all samples count
/// equally, as in the disorder average.
pub fn reweighted_histogram<S: Scalar, F: Real>(
    samples: &[&[MeasurementRecord<S>]],
    beta_from: f64,
    beta_to: f64,
    bins: usize,
) -> Result<WilsonHistogram<F>> {
    if bins == 0 {
        return Err(Error::Domain("histogram needs at least one bin".into()));
    }
    let n_hex = samples
        .iter()
        .flat_map(|s| s.first())
        .map(|r| r.n_hexagons as usize)
        .next()
        .ok_or_else(|| Error::InsufficientData("reweighting of no records".into()))?;
    let dbeta = beta_to - beta_from;
    let mut pooled = vec![0.0f64; bins];
    let (mut used, mut count) = (0usize, 0u64);
    for records in samples.iter().filter(|s| !s.is_empty()) {
        let exps: Vec<f64> = records.iter().map(|r| -dbeta * r.energy.as_f64()).collect();
        let shift = exps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut mass = vec![0.0f64; bins];
        for (r, x) in records.iter().zip(&exps) {
            if r.n_hexagons as usize != n_hex {
                return Err(Error::Shape("records from different lattices".into()));
            }
            mass[level_bin(r.level(), n_hex, bins)] += (x - shift).exp();
        }
        let total: f64 = mass.iter().sum();
        for (p, m) in pooled.iter_mut().zip(&mass) {
            *p += m / total;
        }
        used += 1;
        count += records.len() as u64;
    }
    Ok(WilsonHistogram {
        bins,
        mass: pooled.iter().map(|m| F::lit(m / used as f64)).collect(),
        count,
    })
}

/// One cell of a [`JointCounts`] table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointCell {
    /// Wilson-loop level `k`, `w = −1 + 2k/N_hex`.
    pub level: u32,
    pub energy: f64,
    pub count: u64,
}

/// Measurement counts per (exact `w` level, exact energy): everything
/// single-histogram reweighting needs for `f(w)` and the `w` moments at a
/// nearby temperature. There are never more cells than measurements.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "JointTable", into = "JointTable")]
pub struct JointCounts {
    n_hexagons: usize,
    /// Keyed by level and the bit pattern of the energy.
    cells: std::collections::BTreeMap<(u32, u64), u64>,
}

#[derive(Serialize, Deserialize)]
struct JointTable {
    n_hexagons: usize,
    cells: Vec<JointCell>,
}

impl From<JointTable> for JointCounts {
    fn from(t: JointTable) -> Self {
        let mut j = JointCounts::new(t.n_hexagons);
        for c in t.cells {
            *j.cells.entry((c.level, c.energy.to_bits())).or_default() += c.count;
        }
        j
    }
}

impl From<JointCounts> for JointTable {
    fn from(j: JointCounts) -> Self {
        JointTable {
            n_hexagons: j.n_hexagons,
            cells: j.cells(),
        }
    }
}

impl JointCounts {
    pub fn new(n_hexagons: usize) -> Self {
        assert!(n_hexagons > 0, "joint counts need at least one hexagon");
        Self {
            n_hexagons,
            cells: Default::default(),
        }
    }

    pub fn n_hexagons(&self) -> usize {
        self.n_hexagons
    }

    pub fn push<S: Scalar>(&mut self, r: &MeasurementRecord<S>) {
        debug_assert_eq!(r.n_hexagons as usize, self.n_hexagons);
        // +0.0 and −0.0 must share a cell
        let e = r.energy.as_f64() + 0.0;
        *self.cells.entry((r.level() as u32, e.to_bits())).or_default() += 1;
    }

    pub fn from_cells(n_hexagons: usize, cells: &[JointCell]) -> Result<Self> {
        if n_hexagons == 0 {
            return Err(Error::Domain("joint counts need at least one hexagon".into()));
        }
        if let Some(c) = cells.iter().find(|c| c.level as usize > n_hexagons) {
            return Err(Error::Shape(format!("level {} above N_hex = {n_hexagons}", c.level)));
        }
        Ok(JointTable {
            n_hexagons,
            cells: cells.to_vec(),
        }
        .into())
    }

    /// Cells ordered by level, then energy.
    pub fn cells(&self) -> Vec<JointCell> {
        let mut v: Vec<JointCell> = self
            .cells
            .iter()
            .map(|(&(level, bits), &count)| JointCell {
                level,
                energy: f64::from_bits(bits),
                count,
            })
            .collect();
        v.sort_by(|a, b| a.level.cmp(&b.level).then(a.energy.total_cmp(&b.energy)));
        v
    }

    pub fn total(&self) -> u64 {
        self.cells.values().sum()
    }

    /// `(level, energy, weight)` with weights `∝ count·e^{−Δβ·E}` summing to one.
    fn weights(&self, dbeta: f64) -> Result<Vec<(u32, f64, f64)>> {
        if self.cells.is_empty() {
            return Err(Error::InsufficientData("reweighting of no measurements".into()));
        }
        let shift = self
            .cells
            .keys()
            .map(|&(_, b)| -dbeta * f64::from_bits(b))
            .fold(f64::NEG_INFINITY, f64::max);
        let mut out: Vec<(u32, f64, f64)> = self
            .cells
            .iter()
            .map(|(&(level, bits), &count)| {
                let e = f64::from_bits(bits);
                (level, e, count as f64 * (-dbeta * e - shift).exp())
            })
            .collect();
        let total: f64 = out.iter().map(|c| c.2).sum();
        out.iter_mut().for_each(|c| c.2 /= total);
        Ok(out)
    }

    /// Normalized mass per level `0..=N_hex` after weighting each
    /// measurement by `e^{−Δβ·E}`.
    pub fn reweighted(&self, dbeta: f64) -> Result<Vec<f64>> {
        let mut mass = vec![0.0; self.n_hexagons + 1];
        for (level, _, p) in self.weights(dbeta)? {
            mass[level as usize] += p;
        }
        Ok(mass)
    }

    /// Thermal moments at `β + Δβ`. `n` stays the number of measurements.
    pub fn reweighted_moments(&self, dbeta: f64) -> Result<ThermalMoments<f64>> {
        let n_hex = self.n_hexagons as f64;
        let mut m = ThermalMoments {
            n: self.total(),
            mean_w: 0.0,
            mean_w2: 0.0,
            mean_w3: 0.0,
            mean_e: 0.0,
            mean_e2: 0.0,
        };
        for (level, e, p) in self.weights(dbeta)? {
            let w = -1.0 + 2.0 * level as f64 / n_hex;
            m.mean_w += p * w;
            m.mean_w2 += p * w * w;
            m.mean_w3 += p * w * w * w;
            m.mean_e += p * e;
            m.mean_e2 += p * e * e;
        }
        Ok(m)
    }
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Multiple-histogram (Ferrenberg–Swendsen) combination of one sample's
/// joint counts taken at several inverse temperatures: a single estimate of
/// the density of (level, energy) states, usable at any `β` between them.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiHistogram {
    n_hexagons: usize,
    /// `(level, energy, ln Ω)` per occupied cell.
    cells: Vec<(u32, f64, f64)>,
    /// `ln Z` per run, relative to the first.
    log_z: Vec<f64>,
}

impl MultiHistogram {
    pub const TOLERANCE: f64 = 1e-10;
    pub const MAX_ITERATIONS: usize = 100_000;

    pub fn new(runs: &[(&JointCounts, f64)]) -> Result<Self> {
        let n_hexagons = runs
            .first()
            .ok_or_else(|| Error::InsufficientData("multiple histogram of no runs".into()))?
            .0
            .n_hexagons;
        let mut pooled: std::collections::BTreeMap<(u32, u64), u64> = Default::default();
        let mut log_n = Vec::with_capacity(runs.len());
        for (j, _) in runs {
            if j.n_hexagons != n_hexagons {
                return Err(Error::Shape("joint counts from different lattices".into()));
            }
            if j.cells.is_empty() {
                return Err(Error::InsufficientData("multiple histogram of an empty run".into()));
            }
            for (&k, &c) in &j.cells {
                *pooled.entry(k).or_default() += c;
            }
            log_n.push((j.total() as f64).ln());
        }
        let betas: Vec<f64> = runs.iter().map(|r| r.1).collect();
        let cells: Vec<(u32, f64, f64)> = pooled
            .into_iter()
            .map(|((level, bits), c)| (level, f64::from_bits(bits), (c as f64).ln()))
            .collect();
        let mut log_z = vec![0.0; runs.len()];
        let mut log_omega = vec![0.0; cells.len()];
        for iteration in 0.. {
            for (o, &(_, e, log_h)) in log_omega.iter_mut().zip(&cells) {
                *o = log_h - log_sum_exp((0..betas.len()).map(|j| log_n[j] - betas[j] * e - log_z[j]));
            }
            let mut next: Vec<f64> = betas
                .iter()
                .map(|&b| log_sum_exp(cells.iter().zip(&log_omega).map(|(c, o)| o - b * c.1)))
                .collect();
            let shift = next[0];
            next.iter_mut().for_each(|z| *z -= shift);
            let change = next.iter().zip(&log_z).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            log_z = next;
            if change < Self::TOLERANCE {
                break;
            }
            if iteration == Self::MAX_ITERATIONS {
                return Err(Error::Domain(format!(
                    "multiple histogram did not converge in {} iterations (last change {change:e})",
                    Self::MAX_ITERATIONS
                )));
            }
        }
        Ok(Self {
            n_hexagons,
            cells: cells.iter().zip(log_omega).map(|(c, o)| (c.0, c.1, o)).collect(),
            log_z,
        })
    }

    /// `ln Z(β_j) − ln Z(β_0)` for every run.
    pub fn log_partition_ratios(&self) -> &[f64] {
        &self.log_z
    }

    fn weights(&self, beta: f64) -> Vec<(u32, f64, f64)> {
        let shift = self.cells.iter().map(|c| c.2 - beta * c.1).fold(f64::NEG_INFINITY, f64::max);
        let mut out: Vec<(u32, f64, f64)> = self
            .cells
            .iter()
            .map(|&(level, e, o)| (level, e, (o - beta * e - shift).exp()))
            .collect();
        let total: f64 = out.iter().map(|c| c.2).sum();
        out.iter_mut().for_each(|c| c.2 /= total);
        out
    }

    /// Normalized mass per level `0..=N_hex` at `beta`.
    pub fn level_mass(&self, beta: f64) -> Vec<f64> {
        let mut mass = vec![0.0; self.n_hexagons + 1];
        for (level, _, p) in self.weights(beta) {
            mass[level as usize] += p;
        }
        mass
    }

    /// Thermal moments at `beta`; `n` is left at zero.
    pub fn moments(&self, beta: f64) -> ThermalMoments<f64> {
        let n_hex = self.n_hexagons as f64;
        let mut m = ThermalMoments {
            n: 0,
            mean_w: 0.0,
            mean_w2: 0.0,
            mean_w3: 0.0,
            mean_e: 0.0,
            mean_e2: 0.0,
        };
        for (level, e, p) in self.weights(beta) {
            let w = -1.0 + 2.0 * level as f64 / n_hex;
            m.mean_w += p * w;
            m.mean_w2 += p * w * w;
            m.mean_w3 += p * w * w * w;
            m.mean_e += p * e;
            m.mean_e2 += p * e * e;
        }
        m
    }
}

/// Sample-averaged `bins`-bin histogram from per-sample level masses.
pub fn pooled_level_histogram<F: Real>(masses: &[Vec<f64>], bins: usize, count: u64) -> Result<WilsonHistogram<F>> {
    let n_hex = masses
        .first()
        .ok_or_else(|| Error::InsufficientData("histogram of no samples".into()))?
        .len()
        .checked_sub(1)
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Shape("level masses need N_hex + 1 entries".into()))?;
    if bins == 0 {
        return Err(Error::Domain("histogram needs at least one bin".into()));
    }
    let mut pooled = vec![0.0; bins];
    for m in masses {
        if m.len() != n_hex + 1 {
            return Err(Error::Shape("level masses from different lattices".into()));
        }
        for (k, x) in m.iter().enumerate() {
            pooled[level_bin(k, n_hex, bins)] += x;
        }
    }
    let n = masses.len() as f64;
    Ok(WilsonHistogram {
        bins,
        mass: pooled.iter().map(|m| F::lit(m / n)).collect(),
        count,
    })
}

/// Disorder-averaged `bins`-bin histogram at `beta_to` from per-sample joint
/// counts taken at `beta_from`; every sample is normalized on its own.
pub fn reweighted_joint_histogram<F: Real>(
    samples: &[&JointCounts],
    beta_from: f64,
    beta_to: f64,
    bins: usize,
) -> Result<WilsonHistogram<F>> {
    let masses = samples
        .iter()
        .map(|s| s.reweighted(beta_to - beta_from))
        .collect::<Result<Vec<_>>>()?;
    pooled_level_histogram(&masses, bins, samples.iter().map(|s| s.total()).sum())
}

/// Streaming mean with a standard error from fixed-length block averages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockedSeries {
    block_len: u64,
    open_sum: f64,
    open_n: u64,
    block_means: Vec<f64>,
}

impl BlockedSeries {
    pub fn new(block_len: u64) -> Self {
        assert!(block_len > 0, "blocks need at least one entry");
        Self {
            block_len,
            open_sum: 0.0,
            open_n: 0,
            block_means: Vec::new(),
        }
    }

    pub fn push(&mut self, x: f64) {
        self.open_sum += x;
        self.open_n += 1;
        if self.open_n == self.block_len {
            self.block_means.push(self.open_sum / self.block_len as f64);
            self.open_sum = 0.0;
            self.open_n = 0;
        }
    }

    pub fn blocks(&self) -> usize {
        self.block_means.len()
    }

    /// Mean and standard error over complete blocks; `None` below two blocks.
    pub fn mean_error(&self) -> Option<(f64, f64)> {
        let n = self.block_means.len();
        if n < 2 {
            return None;
        }
        let mean = self.block_means.iter().sum::<f64>() / n as f64;
        let var = self.block_means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        Some((mean, (var / n as f64).sqrt()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_lattice, LatticeSpec, LayerKind};
    use crate::model::{apply_gauge, sample_disorder, NoiseParameters};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn all_up_and_single_flip() {
        let g = build_lattice(LatticeSpec::new(3, 2).unwrap()).unwrap();
        let d = DisorderRealization::clean(&g);
        let c = CouplingSet::<i64>::unit();
        let mut s = SpinConfiguration::all_up(g.n_sites());
        let r = measure(&g, &d, &c, &s);
        assert_eq!(r.w(), 1.0);
        assert_eq!(r.energy, -54);
        let h = (0..g.n_sites()).find(|&i| g.site(i).kind == LayerKind::H).unwrap();
        s.flip(h);
        let r = measure(&g, &d, &c, &s);
        assert_eq!(r.plaquette_sum, 18 - 2 * 3);
        assert!((r.w() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn wilson_average_is_gauge_invariant_and_on_lattice() {
        let g = build_lattice(LatticeSpec::new(6, 4).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let s = SpinConfiguration::random(g.n_sites(), &mut rng);
            let p = plaquette_sum(&g, &s);
            assert_eq!((p + g.n_hexagons() as i64) % 2, 0);
            for gen in g.gauge_generators() {
                assert_eq!(plaquette_sum(&g, &apply_gauge(&s, gen)), p);
            }
        }
        let _ = sample_disorder(&g, NoiseParameters::equal(0.1).unwrap(), 0);
    }

    #[test]
    fn symmetric_samples_have_zero_skewness() {
        // each sample: w = μ ± a with equal probability
        let samples: Vec<ThermalMoments<f64>> = [0.1, 0.3, 0.5]
            .iter()
            .map(|&a| ThermalMoments::from_w_series(&[0.2 - a, 0.2 + a]))
            .collect();
        let z = skewness(&samples).unwrap().unwrap();
        assert!(z.abs() < 1e-12, "{z}");
    }

    #[test]
    fn exponential_skewness_is_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let samples: Vec<ThermalMoments<f64>> = (0..10)
            .map(|_| {
                let draws: Vec<f64> = (0..10_000).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
                ThermalMoments::from_w_series(&draws)
            })
            .collect();
        let z = skewness(&samples).unwrap().unwrap();
        assert!((z - 2.0).abs() < 0.1, "{z}");
        let z32: Vec<ThermalMoments<f32>> = samples
            .iter()
            .map(|s| ThermalMoments {
                n: s.n,
                mean_w: s.mean_w as f32,
                mean_w2: s.mean_w2 as f32,
                mean_w3: s.mean_w3 as f32,
                mean_e: 0.0,
                mean_e2: 0.0,
            })
            .collect();
        assert!((skewness(&z32).unwrap().unwrap() - 2.0).abs() < 0.1);
    }

    #[test]
    fn skewness_edge_cases() {
        let one = [ThermalMoments::from_w_series(&[0.5f64, 0.7])];
        assert!(matches!(skewness(&one), Err(Error::InsufficientData(_))));
        let frozen = vec![ThermalMoments::from_w_series(&[0.5f64]); 3];
        assert_eq!(skewness(&frozen).unwrap(), None);
    }

    #[test]
    fn skewness_sign_follows_tail() {
        // mass bunched right, tail to the left
        let left_tail: Vec<f64> = [0.9; 8].iter().copied().chain([0.1, 0.2]).collect();
        let s = vec![ThermalMoments::from_w_series(&left_tail); 2];
        assert!(skewness(&s).unwrap().unwrap() < 0.0);
        let mirrored: Vec<_> = s.iter().map(|m| m.mirrored()).collect();
        assert!(skewness(&mirrored).unwrap().unwrap() > 0.0);
    }

    #[test]
    fn specific_heat_cases() {
        let frozen = vec![
            ThermalMoments {
                n: 10,
                mean_w: 1.0,
                mean_w2: 1.0,
                mean_w3: 1.0,
                mean_e: -54.0,
                mean_e2: 2916.0,
            };
            4
        ];
        assert_eq!(specific_heat(&frozen, 0.7, 54).unwrap(), 0.0);
        let mut noisy = frozen.clone();
        noisy[0].mean_e2 = 2920.0;
        assert_eq!(specific_heat(&noisy, 0.0, 54).unwrap(), 0.0);
        let c: f64 = specific_heat(&noisy, 2.0, 54).unwrap();
        assert!((c - 4.0 * 1.0 / 54.0).abs() < 1e-12);
        assert!(specific_heat::<f64>(&[], 1.0, 1).is_err());
    }

    #[test]
    fn histogram_top_bin_and_errors() {
        let recs = vec![
            MeasurementRecord {
                plaquette_sum: 18,
                n_hexagons: 18,
                energy: 0i64,
            };
            5
        ];
        let h: WilsonHistogram<f64> = histogram(&recs, DEFAULT_HISTOGRAM_BINS).unwrap();
        assert_eq!(h.mass[49], 1.0);
        assert_eq!(h.total(), 1.0);
        assert_eq!(h.edges().len(), 51);
        assert!(histogram::<i64, f64>(&[], 50).is_err());
    }

    #[test]
    fn accumulator_merge_is_exact() {
        let mut a = ThermalAccumulator::default();
        let mut b = ThermalAccumulator::default();
        let mut whole = ThermalAccumulator::default();
        for i in 0..1000i64 {
            let (p, e) = (i % 37 - 18, -(i % 101) as f64);
            whole.push(p, e);
            if i % 3 == 0 { a.push(p, e) } else { b.push(p, e) }
        }
        let mut ab = a;
        ab.merge(&b);
        let mut ba = b;
        ba.merge(&a);
        assert_eq!(ab, whole);
        assert_eq!(ba, whole);
        let m = whole.moments(18);
        assert!(m.mean_w2 >= m.mean_w * m.mean_w);
        assert!(m.mean_e2 >= m.mean_e * m.mean_e);
    }

    #[test]
    fn blocked_error_of_iid_series() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xs: Vec<f64> = (0..64_000).map(|_| rng.gen::<f64>()).collect();
        let (m, se) = blocked_mean_error(&xs, 64);
        let expect = (1.0f64 / 12.0 / 64_000.0).sqrt();
        assert!((m - 0.5).abs() < 4.0 * expect);
        assert!(se > 0.5 * expect && se < 1.5 * expect, "{se} vs {expect}");
    }

    #[test]
    fn bootstrap_spread_shrinks_with_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data: Vec<f64> = (0..400).map(|_| rng.gen::<f64>()).collect();
        let mean = |p: &[&f64]| Some(p.iter().copied().sum::<f64>() / p.len() as f64);
        let (_, sd) = bootstrap(&data, 1000, &mut rng, mean).unwrap();
        let expect = (1.0f64 / 12.0 / 400.0).sqrt();
        assert!((sd - expect).abs() < 0.15 * expect);
    }

    proptest::proptest! {
        #[test]
        fn skewness_shift_and_relabel_invariant(
            ws in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 3..20), 2..6),
            shift in -0.5f64..0.5,
        ) {
            let samples: Vec<_> = ws.iter().map(|w| ThermalMoments::from_w_series(w)).collect();
            let shifted: Vec<_> = ws
                .iter()
                .map(|w| ThermalMoments::from_w_series(&w.iter().map(|v| v + shift).collect::<Vec<_>>()))
                .collect();
            let mut reversed = samples.clone();
            reversed.reverse();
            let (a, b, c) = (skewness(&samples).unwrap(), skewness(&shifted).unwrap(), skewness(&reversed).unwrap());
            if let (Some(a), Some(b), Some(c)) = (a, b, c) {
                let m2 = skewness_denominator(&samples);
                if m2 > 1e-6 {
                    proptest::prop_assert!((a - b).abs() < 1e-6 * (1.0 + a.abs()));
                    proptest::prop_assert!((a - c).abs() < 1e-9 * (1.0 + a.abs()));
                }
            }
        }
    }

    fn skewness_denominator(samples: &[ThermalMoments<f64>]) -> f64 {
        let mu = samples.iter().map(|s| s.mean_w).sum::<f64>() / samples.len() as f64;
        samples.iter().map(|s| s.central_about(mu).0).sum::<f64>() / samples.len() as f64
    }

    #[test]
    fn reweighting_without_shift_is_the_plain_histogram() {
        let recs: Vec<MeasurementRecord<i64>> = (0..40)
            .map(|i| MeasurementRecord { plaquette_sum: (i % 5) * 2 - 4, n_hexagons: 4, energy: -(i % 3) })
            .collect();
        let plain: WilsonHistogram<f64> = histogram(&recs, 5).unwrap();
        let same: WilsonHistogram<f64> = reweighted_histogram(&[&recs], 0.7, 0.7, 5).unwrap();
        for (a, b) in plain.mass.iter().zip(&same.mass) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn reweighting_two_levels() {
        // equal counts at w = −1 (E = 2) and w = 1 (E = 0): the weight ratio
        // after reweighting by Δβ must be e^{2Δβ}
        let recs: Vec<MeasurementRecord<i64>> = (0..10)
            .flat_map(|_| {
                [
                    MeasurementRecord { plaquette_sum: -2, n_hexagons: 2, energy: 2 },
                    MeasurementRecord { plaquette_sum: 2, n_hexagons: 2, energy: 0 },
                ]
            })
            .collect();
        let h: WilsonHistogram<f64> = reweighted_histogram(&[&recs, &recs[..2]], 1.0, 1.3, 2).unwrap();
        assert!((h.mass[1] / h.mass[0] - (0.6f64).exp()).abs() < 1e-12);
        assert!((h.total() - 1.0).abs() < 1e-14);
        assert!(reweighted_histogram::<i64, f64>(&[], 1.0, 1.0, 2).is_err());
    }

    #[test]
    fn joint_counts_reweight_like_records() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let per_sample: Vec<Vec<MeasurementRecord<i64>>> = (0..3)
            .map(|_| {
                (0..500)
                    .map(|_| {
                        let k = rng.gen_range(0..=18i64);
                        MeasurementRecord {
                            plaquette_sum: 2 * k - 18,
                            n_hexagons: 18,
                            energy: -2 * k - 2 * rng.gen_range(0..6i64),
                        }
                    })
                    .collect()
            })
            .collect();
        let joints: Vec<JointCounts> = per_sample
            .iter()
            .map(|recs| {
                let mut j = JointCounts::new(18);
                recs.iter().for_each(|r| j.push(r));
                j
            })
            .collect();
        let slices: Vec<&[MeasurementRecord<i64>]> = per_sample.iter().map(|v| v.as_slice()).collect();
        let direct: WilsonHistogram<f64> = reweighted_histogram(&slices, 0.7, 0.75, 10).unwrap();
        let refs: Vec<&JointCounts> = joints.iter().collect();
        let joint: WilsonHistogram<f64> = reweighted_joint_histogram(&refs, 0.7, 0.75, 10).unwrap();
        assert_eq!(joint.count, direct.count);
        for (a, b) in joint.mass.iter().zip(&direct.mass) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        let back: JointCounts = serde_json::from_str(&serde_json::to_string(&joints[0]).unwrap()).unwrap();
        assert_eq!(back, joints[0]);
    }

    #[test]
    fn reweighted_moments_match_explicit_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let recs: Vec<MeasurementRecord<i64>> = (0..400)
            .map(|_| {
                let k = rng.gen_range(0..=12i64);
                MeasurementRecord {
                    plaquette_sum: 2 * k - 12,
                    n_hexagons: 12,
                    energy: -3 * k + rng.gen_range(-4..5i64),
                }
            })
            .collect();
        let mut j = JointCounts::new(12);
        recs.iter().for_each(|r| j.push(r));
        for dbeta in [0.0, 0.2, -0.35] {
            let ws: Vec<(f64, f64, f64)> = recs
                .iter()
                .map(|r| (r.plaquette_sum as f64 / 12.0, r.energy as f64, (-dbeta * r.energy as f64).exp()))
                .collect();
            let z: f64 = ws.iter().map(|x| x.2).sum();
            let avg = |f: &dyn Fn(f64, f64) -> f64| ws.iter().map(|&(w, e, p)| p * f(w, e)).sum::<f64>() / z;
            let m = j.reweighted_moments(dbeta).unwrap();
            assert_eq!(m.n, 400);
            for (got, want) in [
                (m.mean_w, avg(&|w, _| w)),
                (m.mean_w2, avg(&|w, _| w * w)),
                (m.mean_w3, avg(&|w, _| w * w * w)),
                (m.mean_e, avg(&|_, e| e)),
                (m.mean_e2, avg(&|_, e| e * e)),
            ] {
                assert!((got - want).abs() < 1e-10 * (1.0 + want.abs()), "{got} vs {want}");
            }
        }
    }

    #[test]
    fn multi_histogram_recovers_an_exact_density_of_states() {
        // (level, energy, degeneracy) of a toy system with N_hex = 4.
        let states = [(0u32, 0.0, 70.0), (1, -2.0, 56.0), (2, -4.0, 28.0), (3, -6.0, 8.0), (4, -10.0, 1.0)];
        let exact = |beta: f64| -> Vec<f64> {
            let w: Vec<f64> = states.iter().map(|s| s.2 * (-beta * s.1).exp()).collect();
            let z: f64 = w.iter().sum();
            w.iter().map(|x| x / z).collect()
        };
        let counts_at = |beta: f64| {
            let cells: Vec<JointCell> = states
                .iter()
                .zip(exact(beta))
                .map(|(s, p)| JointCell {
                    level: s.0,
                    energy: s.1,
                    count: (p * 1e12).round() as u64,
                })
                .collect();
            JointCounts::from_cells(4, &cells).unwrap()
        };
        let (b0, b1) = (0.2, 0.6);
        let (j0, j1) = (counts_at(b0), counts_at(b1));
        let mh = MultiHistogram::new(&[(&j0, b0), (&j1, b1)]).unwrap();
        let ln_z = |beta: f64| states.iter().map(|s| s.2 * (-beta * s.1).exp()).sum::<f64>().ln();
        assert!((mh.log_partition_ratios()[1] - (ln_z(b1) - ln_z(b0))).abs() < 1e-8);
        for beta in [0.2, 0.35, 0.47, 0.6] {
            for (got, want) in mh.level_mass(beta).iter().zip(exact(beta)) {
                assert!((got - want).abs() < 1e-9, "β = {beta}: {got} vs {want}");
            }
            let m = mh.moments(beta);
            let want_e: f64 = states.iter().zip(exact(beta)).map(|(s, p)| p * s.1).sum();
            assert!((m.mean_e - want_e).abs() < 1e-8);
        }
    }

    #[test]
    fn blocked_series_matches_slice_blocking() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 7919) % 101) as f64).collect();
        let mut b = BlockedSeries::new(50);
        xs.iter().for_each(|&x| b.push(x));
        let (m, e) = b.mean_error().unwrap();
        let (m2, e2) = blocked_mean_error(&xs, 20);
        assert_eq!(b.blocks(), 20);
        assert!((m - m2).abs() < 1e-12 && (e - e2).abs() < 1e-12);
        assert!(BlockedSeries::new(5000).mean_error().is_none());
    }
}
