//! Equilibration test by logarithmic binning.
//!
//! Sweep `t ≥ 1` falls into bin `k = ⌊log₂ t⌋ + 1`, i.e. bin `k` covers
//! `[2^{k−1}, 2^k)`. Each bin keeps four equal sub-block sums so that a single
//! sample can still estimate an error bar by batch means. The verdict passes
//! when the last three complete bins agree pairwise within two combined
//! standard errors, for both the energy and the Wilson-loop average.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_BINS: usize = 8;
const SUB_BLOCKS: usize = 4;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LogBin {
    pub count: u64,
    pub energy: [f64; SUB_BLOCKS],
    pub w: [f64; SUB_BLOCKS],
    pub sub_count: [u64; SUB_BLOCKS],
}

impl LogBin {
    fn len_of(k: usize) -> u64 {
        1u64 << (k - 1)
    }

    fn mean(vals: &[f64; SUB_BLOCKS], counts: &[u64; SUB_BLOCKS]) -> f64 {
        vals.iter().sum::<f64>() / counts.iter().sum::<u64>().max(1) as f64
    }

    /// Batch-means standard error from the four sub-blocks.
    fn batch_error(vals: &[f64; SUB_BLOCKS], counts: &[u64; SUB_BLOCKS]) -> f64 {
        if counts.iter().any(|&c| c == 0) {
            return f64::INFINITY;
        }
        let means: Vec<f64> = vals.iter().zip(counts).map(|(v, &c)| v / c as f64).collect();
        let m = means.iter().sum::<f64>() / SUB_BLOCKS as f64;
        let var = means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (SUB_BLOCKS - 1) as f64;
        (var / SUB_BLOCKS as f64).sqrt()
    }
}

/// Logarithmic bins of one temperature slot of one sample.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LogBinnedSeries {
    /// `bins[k - 1]` is bin `k`.
    pub bins: Vec<LogBin>,
}

impl LogBinnedSeries {
    pub fn record(&mut self, sweep: u64, energy: f64, w: f64) {
        assert!(sweep >= 1, "sweeps are counted from 1");
        let k = (63 - sweep.leading_zeros()) as usize + 1;
        if self.bins.len() < k {
            self.bins.resize(k, LogBin::default());
        }
        let start = LogBin::len_of(k);
        let len = LogBin::len_of(k);
        let sub = (((sweep - start) * SUB_BLOCKS as u64) / len) as usize;
        let bin = &mut self.bins[k - 1];
        bin.count += 1;
        bin.energy[sub] += energy;
        bin.w[sub] += w;
        bin.sub_count[sub] += 1;
    }

    /// Number of leading bins that are complete.
    pub fn complete_bins(&self) -> usize {
        self.bins
            .iter()
            .enumerate()
            .take_while(|(i, b)| b.count == LogBin::len_of(i + 1))
            .count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinSummary {
    /// Bin index `k`, covering sweeps `[2^{k−1}, 2^k)`.
    pub k: usize,
    pub energy: f64,
    #[serde(with = "crate::num::nan_as_null")]
    pub energy_err: f64,
    pub w: f64,
    #[serde(with = "crate::num::nan_as_null")]
    pub w_err: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibrationStatus {
    pub slot: usize,
    pub samples: usize,
    pub bins: Vec<BinSummary>,
    pub passed: bool,
    pub failures: Vec<String>,
}

/// Verdict for one slot from the log-binned series of one or more samples.
/// With several samples the error of a bin is the spread of per-sample bin
/// means; a single sample falls back to batch means.
pub fn check_equilibration(series: &[&LogBinnedSeries], slot: usize) -> Result<EquilibrationStatus> {
    if series.is_empty() {
        return Err(Error::InsufficientData("no series to check".into()));
    }
    let bins = series.iter().map(|s| s.complete_bins()).min().unwrap_or(0);
    if bins < MIN_BINS {
        return Err(Error::InsufficientData(format!(
            "equilibration check needs {MIN_BINS} complete logarithmic bins, have {bins}"
        )));
    }
    let n = series.len();
    let summaries: Vec<BinSummary> = (0..bins)
        .map(|i| {
            let per: Vec<(f64, f64)> = series
                .iter()
                .map(|s| {
                    let b = &s.bins[i];
                    (LogBin::mean(&b.energy, &b.sub_count), LogBin::mean(&b.w, &b.sub_count))
                })
                .collect();
            let mean_e = per.iter().map(|p| p.0).sum::<f64>() / n as f64;
            let mean_w = per.iter().map(|p| p.1).sum::<f64>() / n as f64;
            let (err_e, err_w) = if n >= 2 {
                let ve = per.iter().map(|p| (p.0 - mean_e).powi(2)).sum::<f64>() / (n - 1) as f64;
                let vw = per.iter().map(|p| (p.1 - mean_w).powi(2)).sum::<f64>() / (n - 1) as f64;
                ((ve / n as f64).sqrt(), (vw / n as f64).sqrt())
            } else {
                let b = &series[0].bins[i];
                (LogBin::batch_error(&b.energy, &b.sub_count), LogBin::batch_error(&b.w, &b.sub_count))
            };
            BinSummary {
                k: i + 1,
                energy: mean_e,
                energy_err: err_e,
                w: mean_w,
                w_err: err_w,
            }
        })
        .collect();

    let mut failures = Vec::new();
    let last = &summaries[bins - 3..];
    for a in 0..3 {
        for b in a + 1..3 {
            let (x, y) = (&last[a], &last[b]);
            for (name, dx, ex, ey) in [
                ("energy", x.energy - y.energy, x.energy_err, y.energy_err),
                ("w", x.w - y.w, x.w_err, y.w_err),
            ] {
                if dx.abs() > 2.0 * (ex * ex + ey * ey).sqrt() {
                    failures.push(format!(
                        "{name}: bins {} and {} differ by {:.3e} (> 2σ = {:.3e})",
                        x.k,
                        y.k,
                        dx.abs(),
                        2.0 * (ex * ex + ey * ey).sqrt()
                    ));
                }
            }
        }
    }
    Ok(EquilibrationStatus {
        slot,
        samples: n,
        passed: failures.is_empty(),
        bins: summaries,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn synthetic(sweeps: u64, seed: u64, drift: f64) -> LogBinnedSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = LogBinnedSeries::default();
        for t in 1..sweeps {
            let noise: f64 = rng.gen::<f64>() - 0.5;
            let trend = drift * t as f64 / sweeps as f64;
            s.record(t, -100.0 + noise + trend, 0.5 + 0.1 * noise + 0.01 * trend);
        }
        s
    }

    #[test]
    fn bins_partition_sweeps() {
        let s = synthetic(1 << 10, 0, 0.0);
        assert_eq!(s.complete_bins(), 10);
        for (i, b) in s.bins.iter().enumerate() {
            assert_eq!(b.count, 1 << i);
            assert_eq!(b.sub_count.iter().sum::<u64>(), b.count);
        }
    }

    #[test]
    fn stationary_series_passes() {
        let many: Vec<LogBinnedSeries> = (0..16).map(|i| synthetic(1 << 12, i, 0.0)).collect();
        let refs: Vec<&LogBinnedSeries> = many.iter().collect();
        let st = check_equilibration(&refs, 0).unwrap();
        assert!(st.passed, "{:?}", st.failures);
        let single = synthetic(1 << 12, 99, 0.0);
        assert!(check_equilibration(&[&single], 0).unwrap().passed);
    }

    #[test]
    fn drifting_series_fails() {
        let many: Vec<LogBinnedSeries> = (0..16).map(|i| synthetic(1 << 12, i, 5.0)).collect();
        let refs: Vec<&LogBinnedSeries> = many.iter().collect();
        assert!(!check_equilibration(&refs, 0).unwrap().passed);
        let single = synthetic(1 << 12, 3, 5.0);
        assert!(!check_equilibration(&[&single], 0).unwrap().passed);
    }

    #[test]
    fn too_few_bins_is_an_error() {
        let s = synthetic(100, 0, 0.0);
        assert!(matches!(check_equilibration(&[&s], 0), Err(Error::InsufficientData(_))));
    }
}
