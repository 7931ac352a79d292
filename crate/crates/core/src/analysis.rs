//! From per-sample moments to transition temperatures and the threshold.
//!
//! The skewness curve is reported with the ordered side positive: below the
//! transition the Wilson-loop distribution is bunched near `w = 1` with a
//! tail towards the disordered peak, and that shape counts as `ζ > 0`. In
//! terms of the textbook skewness this is `ζ = −skew(w) = skew(−w)`, which
//! [`Orientation::OrderedPositive`] computes from mirrored moments. The
//! transition is then a `+ → −` crossing with increasing temperature.
//!
//! Every resampling step draws from a generator seeded with
//! [`RESAMPLING_SEED`], so all operations are pure functions of their inputs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::nishimori_temperature;
use crate::num::Real;
use crate::observables::{
    bootstrap_skewness, skewness, skewness_of, specific_heat, JointCounts, MultiHistogram, ThermalMoments, WilsonHistogram,
};

pub const RESAMPLING_SEED: u64 = 0x5EED_0F_7C;
pub const DEFAULT_RESAMPLES: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Orientation {
    /// `ζ > 0` when the mass sits on the ordered (large `w`) side.
    OrderedPositive,
    /// Textbook sign: `ζ > 0` for a long tail towards large `w`.
    Standard,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveMeta {
    pub p: f64,
    pub q: f64,
    pub l: usize,
    pub m: usize,
    /// Total spins `3L²M`, the `N` of the `1/N` extrapolation.
    pub n_sites: usize,
    pub n_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "F: Real + Serialize", deserialize = "F: Real + Deserialize<'de>"))]
pub struct SkewnessCurve<F> {
    pub meta: CurveMeta,
    pub orientation: Orientation,
    pub temperatures: Vec<F>,
    /// `None` where every sample is frozen and `ζ` is undefined.
    pub zeta: Vec<Option<F>>,
    /// Bootstrap standard deviation over disorder samples.
    #[serde(with = "crate::num::nan_as_null_vec")]
    pub errors: Vec<F>,
    #[serde(with = "crate::num::nan_as_null_vec")]
    pub specific_heat: Vec<F>,
    #[serde(with = "crate::num::nan_as_null_vec")]
    pub mean_w: Vec<F>,
}

impl<F: Real> SkewnessCurve<F> {
    pub fn new(meta: CurveMeta, temperatures: Vec<F>, zeta: Vec<Option<F>>, errors: Vec<F>) -> Result<Self> {
        let n = temperatures.len();
        if zeta.len() != n || errors.len() != n {
            return Err(Error::Shape("skewness curve arrays differ in length".into()));
        }
        if temperatures.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Domain("curve temperatures must increase strictly".into()));
        }
        Ok(Self {
            meta,
            orientation: Orientation::OrderedPositive,
            temperatures,
            zeta,
            errors,
            specific_heat: Vec::new(),
            mean_w: Vec::new(),
        })
    }
}

/// `ζ(T)`, its bootstrap errors and `c(T)` from `moments[t][sample]`.
pub fn skewness_curve(
    meta: CurveMeta,
    temperatures: &[f64],
    moments: &[Vec<ThermalMoments<f64>>],
    orientation: Orientation,
    resamples: usize,
) -> Result<SkewnessCurve<f64>> {
    if moments.len() != temperatures.len() {
        return Err(Error::Shape(format!(
            "{} temperatures but moments for {}",
            temperatures.len(),
            moments.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(RESAMPLING_SEED);
    let (mut zeta, mut errors, mut heat, mut mean_w) = (vec![], vec![], vec![], vec![]);
    for (&t, per) in temperatures.iter().zip(moments) {
        let oriented: Vec<ThermalMoments<f64>> = match orientation {
            Orientation::OrderedPositive => per.iter().map(|m| m.mirrored()).collect(),
            Orientation::Standard => per.clone(),
        };
        zeta.push(skewness(&oriented)?);
        errors.push(bootstrap_skewness(&oriented, resamples, &mut rng).unwrap_or(f64::NAN));
        heat.push(specific_heat(per, 1.0 / t, meta.n_sites)?);
        mean_w.push(per.iter().map(|m| m.mean_w).sum::<f64>() / per.len() as f64);
    }
    let mut curve = SkewnessCurve::new(meta, temperatures.to_vec(), zeta, errors)?;
    curve.orientation = orientation;
    curve.specific_heat = heat;
    curve.mean_w = mean_w;
    Ok(curve)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "F: Real + Serialize", deserialize = "F: Real + Deserialize<'de>"))]
pub struct TransitionEstimate<F> {
    pub tc: F,
    #[serde(with = "crate::num::nan_as_null")]
    pub error: F,
    pub n_sites: usize,
    /// Ladder indices of the bracketing points.
    pub bracket: (usize, usize),
    /// Both bracketing values exceed their errors in magnitude.
    pub significant: bool,
    /// Number of `+ → −` crossings on the curve.
    pub crossings: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "F: Real + Serialize", deserialize = "F: Real + Deserialize<'de>"))]
pub enum Crossing<F> {
    Found(TransitionEstimate<F>),
    NoTransition,
}

impl<F> Crossing<F> {
    pub fn estimate(&self) -> Option<&TransitionEstimate<F>> {
        match self {
            Crossing::Found(e) => Some(e),
            Crossing::NoTransition => None,
        }
    }
}

fn interpolate_zero<F: Real>(t0: F, z0: F, t1: F, z1: F) -> F {
    t0 + (t1 - t0) * z0 / (z0 - z1)
}

fn gaussian<F: Real>(rng: &mut ChaCha8Rng) -> F {
    let z: f64 = StandardNormal.sample(rng);
    F::lit(z)
}

fn spread<F: Real>(vals: &[F]) -> F {
    if vals.len() < 2 {
        return F::zero();
    }
    let n = F::count(vals.len());
    let mean = vals.iter().fold(F::zero(), |a, &v| a + v) / n;
    let var = vals.iter().fold(F::zero(), |a, &v| a + (v - mean) * (v - mean)) / (n - F::one());
    var.sqrt()
}

/// The lowest-temperature `+ → −` sign change of `ζ` whose bracketing values
/// both exceed their errors; failing that, the crossing nearest
/// `heat_peak` (or the lowest one without a peak). Undefined points are
/// skipped. The error comes from re-interpolating Gaussian draws of the two
/// bracketing values, clamped to the bracket.
pub fn find_zero_crossing<F: Real>(curve: &SkewnessCurve<F>, heat_peak: Option<F>) -> Result<Crossing<F>> {
    let defined: Vec<(usize, F)> = curve
        .zeta
        .iter()
        .enumerate()
        .filter_map(|(i, z)| z.map(|v| (i, v)))
        .collect();
    if curve.temperatures.len() < 2 {
        return Err(Error::InsufficientData("crossing search needs two temperatures".into()));
    }
    let mut candidates = Vec::new();
    let mut last_positive: Option<(usize, F)> = None;
    for &(i, z) in &defined {
        if z > F::zero() {
            last_positive = Some((i, z));
        } else if z < F::zero() {
            if let Some(a) = last_positive.take() {
                candidates.push((a.0, i));
            }
        }
    }
    if candidates.is_empty() {
        return Ok(Crossing::NoTransition);
    }
    let t = &curve.temperatures;
    let z = |i: usize| curve.zeta[i].expect("defined point");
    let tc_of = |(a, b): (usize, usize)| interpolate_zero(t[a], z(a), t[b], z(b));
    let significant = |(a, b): (usize, usize)| z(a).abs() > curve.errors[a] && z(b).abs() > curve.errors[b];
    let chosen = candidates.iter().copied().find(|&c| significant(c)).unwrap_or_else(|| match heat_peak {
        Some(peak) => candidates
            .iter()
            .copied()
            .min_by(|&x, &y| {
                (tc_of(x) - peak)
                    .abs()
                    .partial_cmp(&(tc_of(y) - peak).abs())
                    .expect("finite temperatures")
            })
            .expect("non-empty"),
        None => candidates[0],
    });
    let (a, b) = chosen;
    let tc = tc_of(chosen);
    let mut rng = ChaCha8Rng::seed_from_u64(RESAMPLING_SEED);
    let (ea, eb) = (curve.errors[a], curve.errors[b]);
    let draws: Vec<F> = (0..DEFAULT_RESAMPLES)
        .map(|_| {
            let za = z(a) + ea * gaussian::<F>(&mut rng);
            let zb = z(b) + eb * gaussian::<F>(&mut rng);
            if za == zb {
                tc
            } else {
                interpolate_zero(t[a], za, t[b], zb).max(t[a]).min(t[b])
            }
        })
        .collect();
    let error = if ea.is_finite() && eb.is_finite() { spread(&draws) } else { F::nan() };
    Ok(Crossing::Found(TransitionEstimate {
        tc,
        error,
        n_sites: curve.meta.n_sites,
        bracket: chosen,
        significant: significant(chosen),
        crossings: candidates.len(),
    }))
}

/// Grid points used by [`refine_crossing`] inside the bracketing interval.
pub const REFINEMENT_GRID: usize = 201;

/// A crossing located on a reweighted curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Refinement {
    /// The refined temperature and error; bracket and counts are those of
    /// the crossing it refines.
    pub estimate: TransitionEstimate<f64>,
    pub grid: usize,
    pub resamples: usize,
    /// Resamples whose curve changes sign inside the bracket; the error
    /// comes from these alone.
    pub resolved: usize,
}

/// First `+ → −` sign change on a sampled curve, linearly interpolated
/// between neighbouring grid points.
fn first_descent(ts: &[f64], zs: &[Option<f64>]) -> Option<f64> {
    let mut last: Option<(f64, f64)> = None;
    for (&t, z) in ts.iter().zip(zs) {
        match *z {
            Some(z) if z > 0.0 => last = Some((t, z)),
            Some(z) if z < 0.0 => {
                if let Some((t0, z0)) = last {
                    return Some(interpolate_zero(t0, z0, t, z));
                }
            }
            _ => {}
        }
    }
    None
}

/// Per-sample multiple-histogram estimates from the ladder slots
/// `bracket.0..=bracket.1`; `joint[slot][sample]` holds each sample's
/// (level, energy) counts at `temperatures[slot]`.
pub fn bracket_histograms(
    temperatures: &[f64],
    joint: &[Vec<JointCounts>],
    bracket: (usize, usize),
) -> Result<Vec<MultiHistogram>> {
    if joint.len() != temperatures.len() {
        return Err(Error::Shape(format!(
            "{} temperatures but joint counts for {}",
            temperatures.len(),
            joint.len()
        )));
    }
    let (a, b) = bracket;
    if a > b || b >= temperatures.len() {
        return Err(Error::Domain(format!("bad bracket ({a}, {b})")));
    }
    let n_samples = joint[a].len();
    if joint[a..=b].iter().any(|s| s.len() != n_samples) {
        return Err(Error::Shape("slots hold different numbers of samples".into()));
    }
    (0..n_samples)
        .map(|s| {
            let runs: Vec<(&JointCounts, f64)> = (a..=b).map(|t| (&joint[t][s], 1.0 / temperatures[t])).collect();
            MultiHistogram::new(&runs)
        })
        .collect()
}

/// Relocates `estimate` by multiple-histogram reweighting.
///
/// Every sample's counts from all slots of the bracket are combined into
/// one density-of-states estimate ([`MultiHistogram`]); on a uniform grid
/// across the bracket `ζ` is recomputed from the reweighted moments and the
/// zero is the first `+ → −` change on that grid. The error is the spread of
/// the same construction over bootstrap resamples of whole samples. `None`
/// if the reweighted curve never changes sign in the bracket.
pub fn refine_crossing(
    estimate: &TransitionEstimate<f64>,
    temperatures: &[f64],
    joint: &[Vec<JointCounts>],
    orientation: Orientation,
    grid: usize,
    resamples: usize,
) -> Result<Option<Refinement>> {
    if grid < 2 {
        return Err(Error::Domain("refinement grid needs two points".into()));
    }
    let (a, b) = estimate.bracket;
    if a >= b {
        return Err(Error::Domain(format!("bad bracket ({a}, {b})")));
    }
    let histograms = bracket_histograms(temperatures, joint, (a, b))?;
    let n_samples = histograms.len();
    if n_samples < 2 {
        return Err(Error::InsufficientData("refinement needs at least 2 samples".into()));
    }
    let (t0, t1) = (temperatures[a], temperatures[b]);
    let ts: Vec<f64> = (0..grid).map(|i| t0 + (t1 - t0) * i as f64 / (grid - 1) as f64).collect();
    // moments[g][sample], oriented
    let moments: Vec<Vec<ThermalMoments<f64>>> = ts
        .iter()
        .map(|&t| {
            histograms
                .iter()
                .map(|h| {
                    let m = h.moments(1.0 / t);
                    match orientation {
                        Orientation::OrderedPositive => m.mirrored(),
                        Orientation::Standard => m,
                    }
                })
                .collect()
        })
        .collect();
    let curve_of = |pick: &[usize]| -> Vec<Option<f64>> {
        moments.iter().map(|row| skewness_of(pick.iter().map(|&s| &row[s]))).collect()
    };
    let all: Vec<usize> = (0..n_samples).collect();
    let Some(tc) = first_descent(&ts, &curve_of(&all)) else {
        return Ok(None);
    };
    let mut rng = ChaCha8Rng::seed_from_u64(RESAMPLING_SEED);
    let mut found = Vec::with_capacity(resamples);
    let mut pick = vec![0; n_samples];
    for _ in 0..resamples {
        pick.iter_mut().for_each(|s| *s = rand::Rng::gen_range(&mut rng, 0..n_samples));
        if let Some(t) = first_descent(&ts, &curve_of(&pick)) {
            found.push(t);
        }
    }
    let error = if found.len() >= 2 { spread(&found) } else { f64::NAN };
    Ok(Some(Refinement {
        estimate: TransitionEstimate {
            tc,
            error,
            ..estimate.clone()
        },
        grid,
        resamples,
        resolved: found.len(),
    }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "F: Real + Serialize", deserialize = "F: Real + Deserialize<'de>"))]
pub struct Extrapolation<F> {
    /// Thermodynamic-limit value, the intercept at `1/N = 0`.
    pub tc: F,
    #[serde(with = "crate::num::nan_as_null")]
    pub error: F,
    #[serde(with = "crate::num::nan_as_null")]
    pub slope: F,
    pub points: usize,
    /// Whether the errors were used as weights (all positive and finite).
    pub weighted: bool,
}

/// Weighted least-squares line `T_c*(N) = T_c + a/N`. Points without a
/// usable error make the fit unweighted, with the intercept error then taken
/// from the residual scatter.
pub fn extrapolate_tc<F: Real>(estimates: &[TransitionEstimate<F>]) -> Result<Extrapolation<F>> {
    if estimates.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "extrapolation needs at least two sizes, got {}",
            estimates.len()
        )));
    }
    let xs: Vec<F> = estimates.iter().map(|e| F::one() / F::count(e.n_sites)).collect();
    if xs.windows(2).all(|w| w[0] == w[1]) {
        return Err(Error::Domain("extrapolation needs two distinct sizes".into()));
    }
    let weighted = estimates.iter().all(|e| e.error.is_finite() && e.error > F::zero());
    let ws: Vec<F> = estimates
        .iter()
        .map(|e| if weighted { F::one() / (e.error * e.error) } else { F::one() })
        .collect();
    let sum = |f: &dyn Fn(usize) -> F| (0..xs.len()).fold(F::zero(), |a, i| a + f(i));
    let s = sum(&|i| ws[i]);
    let sx = sum(&|i| ws[i] * xs[i]);
    let sy = sum(&|i| ws[i] * estimates[i].tc);
    let sxx = sum(&|i| ws[i] * xs[i] * xs[i]);
    let sxy = sum(&|i| ws[i] * xs[i] * estimates[i].tc);
    let det = s * sxx - sx * sx;
    let slope = (s * sxy - sx * sy) / det;
    let tc = (sxx * sy - sx * sxy) / det;
    let mut var = sxx / det;
    if !weighted {
        let dof = xs.len().saturating_sub(2);
        let rss = sum(&|i| {
            let r = estimates[i].tc - tc - slope * xs[i];
            r * r
        });
        var = if dof > 0 { var * rss / F::count(dof) } else { F::zero() };
    }
    Ok(Extrapolation {
        tc,
        error: var.sqrt(),
        slope,
        points: xs.len(),
        weighted,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaxwellOptions {
    /// The smaller peak bin must hold at least this much mass.
    pub min_peak_mass: f64,
    /// The valley must lie below this fraction of the smaller peak.
    pub max_valley_ratio: f64,
}

impl Default for MaxwellOptions {
    fn default() -> Self {
        Self {
            min_peak_mass: 0.01,
            max_valley_ratio: 0.8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeakSplit<F> {
    /// Bin indices of the low-`w` and high-`w` peaks.
    pub peaks: (usize, usize),
    pub valley: usize,
    pub low_weight: F,
    pub high_weight: F,
}

impl<F: Real> PeakSplit<F> {
    /// Ordered over disordered weight.
    pub fn ratio(&self) -> F {
        self.high_weight / self.low_weight
    }
}

/// Split a histogram at the minimum between its two largest local maxima.
/// The valley bin is shared equally. `None` without a qualifying double peak.
pub fn split_double_peak<F: Real>(h: &WilsonHistogram<F>, opts: MaxwellOptions) -> Option<PeakSplit<F>> {
    let m = &h.mass;
    let n = m.len();
    let mut maxima: Vec<usize> = (0..n)
        .filter(|&i| {
            let left = if i == 0 { F::neg_infinity() } else { m[i - 1] };
            let right = if i + 1 == n { F::neg_infinity() } else { m[i + 1] };
            m[i] > F::zero() && m[i] >= left && m[i] > right
        })
        .collect();
    if maxima.len() < 2 {
        return None;
    }
    maxima.sort_by(|&a, &b| m[b].partial_cmp(&m[a]).expect("finite mass").then(a.cmp(&b)));
    let (lo, hi) = (maxima[0].min(maxima[1]), maxima[0].max(maxima[1]));
    let valley = (lo..=hi)
        .min_by(|&a, &b| m[a].partial_cmp(&m[b]).expect("finite mass"))
        .expect("non-empty range");
    let smaller = m[lo].min(m[hi]);
    if smaller < F::lit(opts.min_peak_mass) || m[valley] > F::lit(opts.max_valley_ratio) * smaller {
        return None;
    }
    let half = m[valley] / F::lit(2.0);
    let low = m[..valley].iter().fold(F::zero(), |a, &v| a + v) + half;
    let high = m[valley + 1..].iter().fold(F::zero(), |a, &v| a + v) + half;
    Some(PeakSplit {
        peaks: (lo, hi),
        valley,
        low_weight: low,
        high_weight: high,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum MaxwellResult<F> {
    /// Temperature where the ordered/disordered weight ratio crosses one.
    Found { tc: F, bracket: (usize, usize) },
    Inconclusive,
}

/// Equal-weight temperature from histograms ordered by temperature. Ratios
/// are interpolated linearly in `ln(ratio)` between consecutive double-peaked
/// temperatures.
pub fn maxwell_crosscheck<F: Real>(histograms: &[(F, WilsonHistogram<F>)], opts: MaxwellOptions) -> Result<MaxwellResult<F>> {
    if histograms.windows(2).any(|w| w[0].0 >= w[1].0) {
        return Err(Error::Domain("histogram temperatures must increase strictly".into()));
    }
    let logs: Vec<(usize, F)> = histograms
        .iter()
        .enumerate()
        .filter_map(|(i, (_, h))| split_double_peak(h, opts).map(|s| (i, s.ratio().ln())))
        .filter(|(_, r)| r.is_finite())
        .collect();
    if let Some(&(i, _)) = logs.iter().find(|(_, r)| *r == F::zero()) {
        return Ok(MaxwellResult::Found {
            tc: histograms[i].0,
            bracket: (i, i),
        });
    }
    for w in logs.windows(2) {
        let ((a, ra), (b, rb)) = (w[0], w[1]);
        if ra > F::zero() && rb < F::zero() {
            let tc = interpolate_zero(histograms[a].0, ra, histograms[b].0, rb);
            return Ok(MaxwellResult::Found { tc, bracket: (a, b) });
        }
    }
    Ok(MaxwellResult::Inconclusive)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatPeak<F> {
    pub t_peak: F,
    pub c_peak: F,
    /// The maximum sits at an end of the ladder; the location is unreliable.
    pub at_boundary: bool,
}

/// Vertex of the parabola through the largest `c` and its two neighbours.
pub fn specific_heat_peak<F: Real>(temperatures: &[F], c: &[F]) -> Result<HeatPeak<F>> {
    if temperatures.len() != c.len() {
        return Err(Error::Shape("temperatures and specific heat differ in length".into()));
    }
    if c.len() < 3 {
        return Err(Error::InsufficientData("peak search needs three temperatures".into()));
    }
    let k = (0..c.len())
        .max_by(|&a, &b| c[a].partial_cmp(&c[b]).expect("finite specific heat"))
        .expect("non-empty");
    if k == 0 || k + 1 == c.len() {
        return Ok(HeatPeak {
            t_peak: temperatures[k],
            c_peak: c[k],
            at_boundary: true,
        });
    }
    let (x0, x1, x2) = (temperatures[k - 1], temperatures[k], temperatures[k + 1]);
    let (y0, y1, y2) = (c[k - 1], c[k], c[k + 1]);
    let d01 = (y1 - y0) / (x1 - x0);
    let d12 = (y2 - y1) / (x2 - x1);
    let a = (d12 - d01) / (x2 - x0);
    if a >= F::zero() {
        return Ok(HeatPeak {
            t_peak: x1,
            c_peak: y1,
            at_boundary: false,
        });
    }
    let b = d01 - a * (x0 + x1);
    let t = -b / (F::lit(2.0) * a);
    let c_peak = y1 + d01 * (t - x1) + a * (t - x0) * (t - x1);
    Ok(HeatPeak {
        t_peak: t,
        c_peak,
        at_boundary: false,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "F: Real + Serialize", deserialize = "F: Real + Deserialize<'de>"))]
pub struct BoundaryPoint<F> {
    pub p: F,
    pub tc: F,
    #[serde(with = "crate::num::nan_as_null")]
    pub error: F,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "F: Real + Serialize", deserialize = "F: Real + Deserialize<'de>"))]
pub struct PhaseBoundary<F> {
    pub points: Vec<BoundaryPoint<F>>,
    /// Coupling `J` entering the Nishimori temperature.
    pub j: F,
}

impl<F: Real> PhaseBoundary<F> {
    pub fn new(points: Vec<BoundaryPoint<F>>, j: F) -> Result<Self> {
        if points.windows(2).any(|w| w[0].p >= w[1].p) {
            return Err(Error::Domain("boundary error rates must be distinct and ascending".into()));
        }
        if let Some(bad) = points.iter().find(|pt| pt.p < F::zero() || pt.p >= F::lit(0.5)) {
            return Err(Error::Domain(format!("boundary error rate {} outside [0, 1/2)", bad.p)));
        }
        Ok(Self { points, j })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "F: Real + Serialize", deserialize = "F: Real + Deserialize<'de>"))]
pub enum Threshold<F> {
    Found {
        p_c: F,
        #[serde(with = "crate::num::nan_as_null")]
        error: F,
    },
    OutsideRange,
}

/// Nishimori temperature with the `p → 0` limit `T = 0` included.
fn nishimori_or_zero<F: Real>(p: F, j: F) -> F {
    if p == F::zero() {
        F::zero()
    } else {
        nishimori_temperature(p, j).expect("p inside (0, 1/2)")
    }
}

fn crossing_with_nishimori<F: Real>(ps: &[F], tcs: &[F], j: F) -> Option<F> {
    let gap = |i: usize| tcs[i] - nishimori_or_zero(ps[i], j);
    for i in 0..ps.len() {
        let g0 = gap(i);
        if g0 == F::zero() {
            return Some(ps[i]);
        }
        if i + 1 == ps.len() {
            break;
        }
        let g1 = gap(i + 1);
        if g1 == F::zero() {
            return Some(ps[i + 1]);
        }
        if (g0 > F::zero()) != (g1 > F::zero()) {
            let (p0, p1) = (ps[i], ps[i + 1]);
            let interp = |p: F| tcs[i] + (tcs[i + 1] - tcs[i]) * (p - p0) / (p1 - p0);
            let f = |p: F| interp(p) - nishimori_or_zero(p, j);
            let (mut lo, mut hi, mut flo) = (p0, p1, g0);
            for _ in 0..200 {
                let mid = (lo + hi) / F::lit(2.0);
                if mid <= lo || mid >= hi {
                    break;
                }
                let fm = f(mid);
                if fm == F::zero() {
                    return Some(mid);
                }
                if (fm > F::zero()) == (flo > F::zero()) {
                    lo = mid;
                    flo = fm;
                } else {
                    hi = mid;
                }
            }
            return Some((lo + hi) / F::lit(2.0));
        }
    }
    None
}

/// Error rate where the piecewise-linear `T_c(p)` meets the Nishimori line.
/// The error is the spread over Gaussian draws of every `T_c` within its
/// error, each redone by the same root search.
pub fn intersect_nishimori<F: Real>(boundary: &PhaseBoundary<F>) -> Result<Threshold<F>> {
    if boundary.points.len() < 2 {
        return Err(Error::InsufficientData("threshold needs at least two boundary points".into()));
    }
    let ps: Vec<F> = boundary.points.iter().map(|b| b.p).collect();
    let tcs: Vec<F> = boundary.points.iter().map(|b| b.tc).collect();
    let Some(p_c) = crossing_with_nishimori(&ps, &tcs, boundary.j) else {
        return Ok(Threshold::OutsideRange);
    };
    let mut rng = ChaCha8Rng::seed_from_u64(RESAMPLING_SEED);
    let draws: Vec<F> = (0..DEFAULT_RESAMPLES)
        .filter_map(|_| {
            let jittered: Vec<F> = boundary
                .points
                .iter()
                .map(|b| {
                    let e = if b.error.is_finite() { b.error } else { F::zero() };
                    b.tc + e * gaussian::<F>(&mut rng)
                })
                .collect();
            crossing_with_nishimori(&ps, &jittered, boundary.j)
        })
        .collect();
    Ok(Threshold::Found {
        p_c,
        error: spread(&draws),
    })
}

/// `(p, T_N(p))` on an even grid of `n` points in `[p_min, p_max] ⊂ (0, 1/2)`.
pub fn nishimori_curve<F: Real>(p_min: F, p_max: F, n: usize, j: F) -> Result<Vec<(F, F)>> {
    if n < 2 || p_min >= p_max {
        return Err(Error::Domain("Nishimori samples need n ≥ 2 and p_min < p_max".into()));
    }
    (0..n)
        .map(|i| {
            let p = p_min + (p_max - p_min) * F::count(i) / F::count(n - 1);
            nishimori_temperature(p, j).map(|t| (p, t))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn meta() -> CurveMeta {
        CurveMeta {
            p: 0.0,
            q: 0.0,
            l: 6,
            m: 6,
            n_sites: 648,
            n_samples: 2,
        }
    }

    /// Two states per sample: `w = 1` at energy −1, `w = −1` at energy 0
    /// with degeneracy `g`. Counts are the Boltzmann weights at `t`.
    fn two_state(g: f64, t: f64) -> JointCounts {
        let scale = 1e9;
        let (up, down) = ((1.0 / t).exp(), g);
        let cells = [
            crate::observables::JointCell {
                level: 0,
                energy: 0.0,
                count: (scale * down / (up + down)).round() as u64,
            },
            crate::observables::JointCell {
                level: 4,
                energy: -1.0,
                count: (scale * up / (up + down)).round() as u64,
            },
        ];
        JointCounts::from_cells(4, &cells).unwrap()
    }

    /// Disorder-averaged `skew(−w)` of the two-state samples at `t`, exact.
    fn two_state_zeta(gs: &[f64], t: f64) -> f64 {
        let ps: Vec<f64> = gs.iter().map(|g| 1.0 / (1.0 + g * (-1.0 / t).exp())).collect();
        // moments of −w: value −1 with probability p, +1 otherwise
        let n = ps.len() as f64;
        let mu = ps.iter().map(|p| 1.0 - 2.0 * p).sum::<f64>() / n;
        let (mut c2, mut c3) = (0.0, 0.0);
        for p in &ps {
            c2 += p * (-1.0 - mu).powi(2) + (1.0 - p) * (1.0 - mu).powi(2);
            c3 += p * (-1.0 - mu).powi(3) + (1.0 - p) * (1.0 - mu).powi(3);
        }
        (c3 / n) / (c2 / n).powf(1.5)
    }

    #[test]
    fn refined_crossing_finds_the_exact_zero() {
        let gs = [2.2, 2.7, 3.1, 2.5, 2.9];
        let temps = [0.7, 1.4];
        let joint: Vec<Vec<JointCounts>> = temps.iter().map(|&t| gs.iter().map(|&g| two_state(g, t)).collect()).collect();
        // Independent root of the exact curve by bisection.
        let (mut lo, mut hi) = (0.7, 1.4);
        assert!(two_state_zeta(&gs, lo) > 0.0 && two_state_zeta(&gs, hi) < 0.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if two_state_zeta(&gs, mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let coarse = TransitionEstimate {
            tc: 1.05,
            error: 0.1,
            n_sites: 10,
            bracket: (0, 1),
            significant: true,
            crossings: 1,
        };
        let r = refine_crossing(&coarse, &temps, &joint, Orientation::OrderedPositive, 401, 200)
            .unwrap()
            .unwrap();
        assert!((r.estimate.tc - lo).abs() < 2e-3, "{} vs {lo}", r.estimate.tc);
        assert_eq!(r.estimate.bracket, (0, 1));
        assert_eq!(r.resolved, 200);
        assert!(r.estimate.error > 0.0 && r.estimate.error < 0.2, "{}", r.estimate.error);
    }

    fn curve(ts: &[f64], zs: &[f64], es: &[f64]) -> SkewnessCurve<f64> {
        SkewnessCurve::new(meta(), ts.to_vec(), zs.iter().map(|&z| Some(z)).collect(), es.to_vec()).unwrap()
    }

    #[test]
    fn undefined_errors_survive_json() {
        let mut c = SkewnessCurve::new(meta(), vec![1.0, 2.0], vec![None, Some(0.5)], vec![f64::NAN, 0.1]).unwrap();
        c.specific_heat = vec![0.0, 1.0];
        c.mean_w = vec![1.0, 0.0];
        let back: SkewnessCurve<f64> = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert!(back.errors[0].is_nan());
        assert_eq!(back.errors[1], 0.1);
        assert_eq!(back.zeta, c.zeta);
    }

    #[test]
    fn crossing_midpoint() {
        let c = curve(&[1.0, 1.1], &[0.5, -0.5], &[0.01, 0.01]);
        let Crossing::<f64>::Found(e) = find_zero_crossing(&c, None).unwrap() else { panic!() };
        assert!((e.tc - 1.05).abs() < 1e-12);
        assert!(e.significant);
        assert!(e.error > 0.0 && e.error < 0.01);
        assert_eq!(e.n_sites, 648);
    }

    #[test]
    fn no_crossing_is_a_result() {
        let c = curve(&[1.0, 1.1, 1.2], &[-0.5, -0.2, -0.1], &[0.01; 3]);
        assert_eq!(find_zero_crossing(&c, None).unwrap(), Crossing::NoTransition);
        // a − → + change is not a transition either
        let c = curve(&[1.0, 1.1], &[-0.5, 0.5], &[0.01; 2]);
        assert_eq!(find_zero_crossing(&c, None).unwrap(), Crossing::NoTransition);
    }

    #[test]
    fn noisy_crossings_prefer_significant_then_heat_peak() {
        let ts = [1.0, 1.1, 1.2, 1.3, 1.4, 1.5];
        // first change is within errors, the second is clear
        let c = curve(&ts, &[0.05, -0.05, 0.8, -0.8, -0.9, -0.9], &[0.1, 0.1, 0.1, 0.1, 0.1, 0.1]);
        let e = find_zero_crossing(&c, None).unwrap().estimate().cloned().unwrap();
        assert_eq!(e.bracket, (2, 3));
        assert_eq!(e.crossings, 2);
        // no significant change: take the one nearest the heat peak
        let c = curve(&ts, &[0.05, -0.05, 0.05, -0.05, -0.05, -0.05], &[0.1; 6]);
        let e = find_zero_crossing(&c, Some(1.24)).unwrap().estimate().cloned().unwrap();
        assert_eq!(e.bracket, (2, 3));
        assert!(!e.significant);
        let e = find_zero_crossing(&c, None).unwrap().estimate().cloned().unwrap();
        assert_eq!(e.bracket, (0, 1));
    }

    #[test]
    fn undefined_and_zero_points_are_skipped() {
        let c = SkewnessCurve::<f64>::new(
            meta(),
            vec![1.0, 1.05, 1.1],
            vec![Some(0.5), None, Some(-0.5)],
            vec![0.01; 3],
        )
        .unwrap();
        let e = find_zero_crossing(&c, None).unwrap().estimate().cloned().unwrap();
        assert!((e.tc - 1.05).abs() < 1e-12);
        let c = curve(&[1.0, 1.05, 1.1], &[0.5, 0.0, -0.5], &[0.01; 3]);
        let e = find_zero_crossing(&c, None).unwrap().estimate().cloned().unwrap();
        assert!((e.tc - 1.05).abs() < 1e-12);
    }

    #[test]
    fn curve_shape_checks() {
        assert!(SkewnessCurve::<f64>::new(meta(), vec![1.0, 1.0], vec![None, None], vec![0.0, 0.0]).is_err());
        assert!(SkewnessCurve::<f64>::new(meta(), vec![1.0, 2.0], vec![None], vec![0.0, 0.0]).is_err());
    }

    fn estimate(n: usize, tc: f64, err: f64) -> TransitionEstimate<f64> {
        TransitionEstimate {
            tc,
            error: err,
            n_sites: n,
            bracket: (0, 1),
            significant: true,
            crossings: 1,
        }
    }

    #[test]
    fn extrapolation_of_exact_line() {
        let pts: Vec<_> = [648usize, 1944, 4374]
            .iter()
            .map(|&n| estimate(n, 1.3 + 0.5 / n as f64, 0.01))
            .collect();
        let fit = extrapolate_tc(&pts).unwrap();
        assert!((fit.tc - 1.3).abs() < 1e-12);
        assert!((fit.slope - 0.5).abs() < 1e-9);
        assert!(fit.weighted);
        assert!(extrapolate_tc(&pts[..1]).is_err());
    }

    #[test]
    fn extrapolation_weights() {
        // two precise points on a line, one imprecise outlier
        let pts = vec![
            estimate(100, 1.0 + 1.0 / 100.0, 1e-4),
            estimate(200, 1.0 + 1.0 / 200.0, 1e-4),
            estimate(400, 5.0, 1e3),
        ];
        let fit = extrapolate_tc(&pts).unwrap();
        assert!((fit.tc - 1.0).abs() < 1e-3);
        // intercept error of a two-point weighted fit
        let two = extrapolate_tc(&pts[..2]).unwrap();
        let (x1, x2) = (0.01f64, 0.005f64);
        let expect = 1e-4 * (x1 * x1 + x2 * x2).sqrt() / (x1 - x2);
        assert!((two.error - expect).abs() < 1e-9 * expect.max(1.0), "{} vs {expect}", two.error);
    }

    fn hist(mass: &[f64]) -> WilsonHistogram<f64> {
        let t: f64 = mass.iter().sum();
        WilsonHistogram {
            bins: mass.len(),
            mass: mass.iter().map(|m| m / t).collect(),
            count: 1000,
        }
    }

    #[test]
    fn symmetric_double_peak_has_unit_ratio() {
        let h = hist(&[0.0, 1.0, 4.0, 1.0, 0.5, 1.0, 4.0, 1.0, 0.0]);
        let s = split_double_peak(&h, MaxwellOptions::default()).unwrap();
        assert_eq!(s.valley, 4);
        assert!((s.ratio() - 1.0).abs() < 1e-12);
        let fixtures = vec![(1.4, h)];
        assert_eq!(
            maxwell_crosscheck(&fixtures, MaxwellOptions::default()).unwrap(),
            MaxwellResult::Found { tc: 1.4, bracket: (0, 0) }
        );
    }

    #[test]
    fn single_peaks_are_inconclusive() {
        let fixtures: Vec<_> = (0..4)
            .map(|i| (1.0 + 0.1 * i as f64, hist(&[0.0, 1.0, 3.0, 6.0, 3.0, 1.0, 0.0])))
            .collect();
        assert_eq!(
            maxwell_crosscheck(&fixtures, MaxwellOptions::default()).unwrap(),
            MaxwellResult::Inconclusive
        );
        // a faint bump does not count as a second peak
        let h = hist(&[1000.0, 10.0, 1.0, 2.0, 0.0]);
        assert!(split_double_peak(&h, MaxwellOptions::default()).is_none());
    }

    #[test]
    fn maxwell_interpolates_log_ratio() {
        // high-w weight 2x at T=1, 1/2x at T=2 → ln ratio crosses at 1.5
        let a = hist(&[1.0, 2.0, 0.2, 4.0, 2.0]);
        let b = hist(&[2.0, 4.0, 0.2, 2.0, 1.0]);
        let r = maxwell_crosscheck(&[(1.0, a), (2.0, b)], MaxwellOptions::default()).unwrap();
        let MaxwellResult::Found { tc, .. } = r else { panic!("{r:?}") };
        assert!((tc - 1.5).abs() < 1e-12);
    }

    #[test]
    fn heat_peak_of_parabola() {
        let ts: Vec<f64> = (0..9).map(|i| 1.0 + 0.1 * i as f64).collect();
        let c: Vec<f64> = ts.iter().map(|t| 3.0 - 2.0 * (t - 1.4).powi(2)).collect();
        let pk = specific_heat_peak(&ts, &c).unwrap();
        assert!((pk.t_peak - 1.4).abs() < 1e-12);
        assert!((pk.c_peak - 3.0).abs() < 1e-12);
        assert!(!pk.at_boundary);
        // off-grid vertex on an uneven grid
        let ts = [1.0, 1.3, 1.35, 1.6];
        let c: Vec<f64> = ts.iter().map(|t| 1.0 - (t - 1.37f64).powi(2)).collect();
        assert!((specific_heat_peak(&ts, &c).unwrap().t_peak - 1.37).abs() < 1e-12);
        let mono: Vec<f64> = (0..5).map(|i| i as f64).collect();
        assert!(specific_heat_peak(&mono, &mono).unwrap().at_boundary);
    }

    fn tn(p: f64) -> f64 {
        2.0 / ((1.0 - p) / p).ln()
    }

    #[test]
    fn threshold_on_synthetic_boundary() {
        // linear boundary through (0.05, T_N(0.05)), falling faster than T_N rises
        let t5 = tn(0.05);
        let pts: Vec<_> = [0.0, 0.02, 0.04, 0.06, 0.08]
            .iter()
            .map(|&p| BoundaryPoint {
                p,
                tc: t5 - 6.0 * (p - 0.05),
                error: 0.01,
            })
            .collect();
        let b = PhaseBoundary::new(pts, 1.0).unwrap();
        let Threshold::Found { p_c, error } = intersect_nishimori(&b).unwrap() else { panic!() };
        // T_N is curved inside (0.04, 0.06), so the result is exact only up
        // to the piecewise-linear boundary; here the boundary is exactly linear
        assert!((p_c - 0.05).abs() < 1e-12, "{p_c}");
        assert!(error > 0.0 && error < 0.01);
    }

    #[test]
    fn threshold_exact_on_sample_point() {
        let pts = vec![
            BoundaryPoint { p: 0.0, tc: 1.6, error: 0.0 },
            BoundaryPoint { p: 0.05, tc: tn(0.05), error: 0.0 },
            BoundaryPoint { p: 0.1, tc: 0.5, error: 0.0 },
        ];
        let b = PhaseBoundary::new(pts, 1.0).unwrap();
        let r = intersect_nishimori(&b).unwrap();
        let Threshold::Found { p_c, .. } = r else { panic!() };
        assert!((p_c - 0.05).abs() < 1e-15);
    }

    #[test]
    fn threshold_outside_range() {
        let pts = vec![
            BoundaryPoint { p: 0.01, tc: 5.0, error: 0.1 },
            BoundaryPoint { p: 0.03, tc: 4.0, error: 0.1 },
        ];
        let b = PhaseBoundary::new(pts, 1.0).unwrap();
        assert_eq!(intersect_nishimori(&b).unwrap(), Threshold::OutsideRange);
        assert!(PhaseBoundary::new(vec![BoundaryPoint { p: 0.6, tc: 1.0, error: 0.0 }], 1.0).is_err());
        assert!(PhaseBoundary::new(
            vec![
                BoundaryPoint { p: 0.02, tc: 1.0, error: 0.0 },
                BoundaryPoint { p: 0.02, tc: 1.0, error: 0.0 }
            ],
            1.0
        )
        .is_err());
    }

    #[test]
    fn nishimori_samples() {
        let s = nishimori_curve(0.01, 0.4, 40, 1.0).unwrap();
        assert_eq!(s.len(), 40);
        assert!(s.windows(2).all(|w| w[1].1 > w[0].1));
        assert!(nishimori_curve(0.0, 0.4, 40, 1.0).is_err());
    }

    #[test]
    fn curve_from_moments_and_orientation() {
        // ordered-looking samples: mass near 1 with a tail towards 0
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let per: Vec<ThermalMoments<f64>> = (0..8)
            .map(|_| {
                let ws: Vec<f64> = (0..2000)
                    .map(|_| {
                        let e: f64 = rand_distr::Exp1.sample(&mut rng);
                        1.0 - 0.1 * e
                    })
                    .collect();
                ThermalMoments::from_w_series(&ws)
            })
            .collect();
        let meta = meta();
        let pos = skewness_curve(meta.clone(), &[1.0], &[per.clone()], Orientation::OrderedPositive, 200).unwrap();
        let std = skewness_curve(meta, &[1.0], &[per], Orientation::Standard, 200).unwrap();
        let (zp, zs) = (pos.zeta[0].unwrap(), std.zeta[0].unwrap());
        assert!(zp > 1.5 && (zp + zs).abs() < 1e-12);
        assert!(pos.errors[0] > 0.0);
        assert!(pos.mean_w[0] > 0.85);
    }

    proptest! {
        #[test]
        fn crossing_invariant_under_rescaling(
            zs in proptest::collection::vec(-2.0f64..2.0, 2..12),
            scale in 0.01f64..100.0,
        ) {
            let ts: Vec<f64> = (0..zs.len()).map(|i| 1.0 + 0.05 * i as f64).collect();
            let es = vec![0.05; zs.len()];
            let a = find_zero_crossing(&curve(&ts, &zs, &es), None).unwrap();
            let scaled: Vec<f64> = zs.iter().map(|z| z * scale).collect();
            let se: Vec<f64> = es.iter().map(|e| e * scale).collect();
            let b = find_zero_crossing(&curve(&ts, &scaled, &se), None).unwrap();
            match (a, b) {
                (Crossing::Found(x), Crossing::Found(y)) => {
                    prop_assert_eq!(x.bracket, y.bracket);
                    prop_assert!((x.tc - y.tc).abs() < 1e-9);
                    prop_assert!((x.error - y.error).abs() < 1e-9);
                }
                (Crossing::NoTransition, Crossing::NoTransition) => {}
                (x, y) => prop_assert!(false, "{:?} vs {:?}", x, y),
            }
        }

        #[test]
        fn extrapolation_exact_on_affine_data(
            tc in 0.3f64..3.0,
            slope in -50.0f64..50.0,
            sizes in proptest::collection::btree_set(1usize..20, 2..6),
        ) {
            let pts: Vec<_> = sizes
                .iter()
                .map(|&l| {
                    let n = 3 * 9 * l * l * 2;
                    estimate(n, tc + slope / n as f64, 0.01 * l as f64)
                })
                .collect();
            let fit = extrapolate_tc(&pts).unwrap();
            prop_assert!((fit.tc - tc).abs() < 1e-10);
        }

        #[test]
        fn analysis_is_pure(zs in proptest::collection::vec(-1.0f64..1.0, 3..8)) {
            let ts: Vec<f64> = (0..zs.len()).map(|i| 1.0 + 0.1 * i as f64).collect();
            let c = curve(&ts, &zs, &vec![0.1; zs.len()]);
            prop_assert_eq!(find_zero_crossing(&c, Some(1.2)).unwrap(), find_zero_crossing(&c, Some(1.2)).unwrap());
        }
    }
}
