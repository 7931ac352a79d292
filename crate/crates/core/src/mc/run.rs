//! One disorder sample from random start to finished measurements.
//!
//! A sweep of the whole ensemble is one Metropolis sweep per slot (slot order
//! `0..N_T`) followed by one exchange attempt. Sweeps are counted from 1.
//! Sweeps `1..=t_eq` equilibrate, with `t_eq = 2^b`; the following
//! `measurement_sweeps` sweeps record `(w, E)` at every slot whenever
//! `(t − t_eq)` is a multiple of the measurement interval. Every sweep also
//! feeds the logarithmic equilibration bins.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{LatticeGeometry, LatticeSpec};
use crate::mc::ensemble::{EnsembleState, ReplicaEnsemble, System};
use crate::mc::equilibration::{check_equilibration, EquilibrationStatus, LogBinnedSeries, MIN_BINS};
use crate::mc::ladder::TemperatureLadder;
use crate::model::{CouplingSet, DisorderRealization};
use crate::num::Scalar;
use crate::observables::{JointCounts, MeasurementRecord, ThermalAccumulator, ThermalMoments};

pub const CHECKPOINT_FORMAT: &str = "tricolor-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Equilibration exponent, `t_eq = 2^b`.
    pub b: u32,
    pub measurement_sweeps: u64,
    pub measurement_interval: u64,
    /// Disorder samples per size (used by the study pipeline).
    pub n_samples: usize,
    pub master_seed: u64,
    /// Sweeps between checkpoints; 0 disables them.
    pub checkpoint_interval: u64,
    /// Sweeps between from-scratch energy checks; 0 disables them.
    pub energy_check_interval: u64,
    /// How many times a failed equilibration check may double `t_eq`.
    pub max_doublings: u32,
    /// Keep every measurement record, not only the accumulated moments.
    pub record_series: bool,
    /// Keep per-slot joint (`w` level, energy) counts for reweighting.
    #[serde(default)]
    pub joint_counts: bool,
}

impl RunConfig {
    /// Defaults: measurement phase as long as equilibration, a record every
    /// 10 sweeps, energy check every 1000 sweeps, no extension.
    pub fn new(b: u32) -> Self {
        Self {
            b,
            measurement_sweeps: 1u64 << b,
            measurement_interval: 10,
            n_samples: 1,
            master_seed: 0,
            checkpoint_interval: 0,
            energy_check_interval: 1000,
            max_doublings: 0,
            record_series: false,
            joint_counts: false,
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.b < 1 || self.b > 40 {
            return Err(Error::Domain(format!("b must lie in [1, 40] (got {})", self.b)));
        }
        if self.measurement_interval < 1 {
            return Err(Error::Domain("measurement interval must be at least 1".into()));
        }
        if self.n_samples < 1 {
            return Err(Error::Domain("need at least one disorder sample".into()));
        }
        Ok(())
    }

    pub fn equilibration_sweeps(&self) -> u64 {
        1u64 << self.b
    }
}

/// Per-slot results of one sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotSeries {
    pub temperature: f64,
    pub accumulator: ThermalAccumulator,
    /// Measurements per Wilson level `k` (`w = −1 + 2k/N_hex`).
    pub level_counts: Vec<u64>,
    /// Metropolis acceptance over the measurement phase.
    pub acceptance: f64,
    /// Exchange acceptance of the pair `(slot, slot + 1)` over the
    /// measurement phase; the top slot repeats the pair below it.
    pub swap_rate: f64,
    /// Joint (bin of `w`, energy) counts, when requested.
    pub joint: Option<JointCounts>,
}

impl SlotSeries {
    pub fn moments(&self) -> ThermalMoments<f64> {
        let n_hex = self.level_counts.len() - 1;
        self.accumulator.moments(n_hex)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct MeasurementSeries<S> {
    pub spec: LatticeSpec,
    pub sample_seed: u64,
    pub n_sites: usize,
    pub n_hexagons: usize,
    pub t_eq: u64,
    pub doublings: u32,
    pub slots: Vec<SlotSeries>,
    /// Logarithmic bins per slot over the whole run.
    pub log_bins: Vec<LogBinnedSeries>,
    /// Verdict at the end of equilibration; `None` when too short to judge.
    pub equilibration: Option<EquilibrationStatus>,
    /// Every record per slot, when requested.
    pub records: Option<Vec<Vec<MeasurementRecord<S>>>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct Checkpoint<S> {
    pub format: String,
    pub version: u32,
    pub spec: LatticeSpec,
    pub disorder_seed: u64,
    pub sample_seed: u64,
    pub couplings: CouplingSet<S>,
    pub config: RunConfig,
    pub temperatures: Vec<f64>,
    pub sweep: u64,
    pub t_eq: u64,
    pub doublings: u32,
    pub ensemble: EnsembleState<S>,
    pub accumulators: Vec<ThermalAccumulator>,
    pub level_counts: Vec<Vec<u64>>,
    pub accepted: Vec<f64>,
    pub measured_sweeps: u64,
    pub swap_baseline: Option<(Vec<u64>, Vec<u64>)>,
    pub log_bins: Vec<LogBinnedSeries>,
    pub equilibration: Option<EquilibrationStatus>,
    pub equilibration_checked: bool,
    pub records: Option<Vec<Vec<MeasurementRecord<S>>>>,
    pub joint: Option<Vec<JointCounts>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Progress {
    Finished,
    Halted,
}

/// Resumable state of one disorder sample.
pub struct SampleRun<'a, S: Scalar> {
    sys: System<'a, S>,
    config: RunConfig,
    temperatures: Vec<f64>,
    sample_seed: u64,
    ensemble: ReplicaEnsemble<S>,
    sweep: u64,
    t_eq: u64,
    doublings: u32,
    accumulators: Vec<ThermalAccumulator>,
    level_counts: Vec<Vec<u64>>,
    accepted: Vec<f64>,
    measured_sweeps: u64,
    swap_baseline: Option<(Vec<u64>, Vec<u64>)>,
    log_bins: Vec<LogBinnedSeries>,
    equilibration: Option<EquilibrationStatus>,
    equilibration_checked: bool,
    records: Option<Vec<Vec<MeasurementRecord<S>>>>,
    joint: Option<Vec<JointCounts>>,
}

impl<'a, S: Scalar> SampleRun<'a, S> {
    pub fn new(sys: System<'a, S>, ladder: &TemperatureLadder, config: RunConfig, sample_seed: u64) -> Result<Self> {
        config.check()?;
        let n = ladder.len();
        let n_hex = sys.geometry.n_hexagons();
        let ensemble = ReplicaEnsemble::new(&sys, ladder.betas(), sample_seed);
        Ok(Self {
            t_eq: config.equilibration_sweeps(),
            records: config.record_series.then(|| vec![Vec::new(); n]),
            joint: config.joint_counts.then(|| vec![JointCounts::new(n_hex); n]),
            sys,
            config,
            temperatures: ladder.temperatures().to_vec(),
            sample_seed,
            ensemble,
            sweep: 0,
            doublings: 0,
            accumulators: vec![ThermalAccumulator::default(); n],
            level_counts: vec![vec![0; n_hex + 1]; n],
            accepted: vec![0.0; n],
            measured_sweeps: 0,
            swap_baseline: None,
            log_bins: vec![LogBinnedSeries::default(); n],
            equilibration: None,
            equilibration_checked: false,
        })
    }

    /// Continue from a checkpoint; every identifying field must match.
    pub fn resume(sys: System<'a, S>, ladder: &TemperatureLadder, config: RunConfig, sample_seed: u64, ck: Checkpoint<S>) -> Result<Self> {
        let mismatch = |what: &str| Err(Error::CheckpointMismatch(format!("{what} differs from the checkpoint")));
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointMismatch(format!("unsupported checkpoint {} v{}", ck.format, ck.version)));
        }
        if ck.spec != sys.geometry.spec() {
            return mismatch("lattice");
        }
        if ck.disorder_seed != sys.disorder.seed {
            return mismatch("disorder seed");
        }
        if ck.sample_seed != sample_seed {
            return mismatch("sample seed");
        }
        if ck.couplings != sys.couplings {
            return mismatch("coupling set");
        }
        // checkpoint cadence does not affect results and may change on resume
        let mut saved = ck.config.clone();
        saved.checkpoint_interval = config.checkpoint_interval;
        if saved != config {
            return mismatch("run configuration");
        }
        if ck.temperatures != ladder.temperatures() {
            return mismatch("temperature ladder");
        }
        let ensemble = ReplicaEnsemble::restore(&sys, ck.ensemble)?;
        Ok(Self {
            sys,
            config,
            temperatures: ck.temperatures,
            sample_seed,
            ensemble,
            sweep: ck.sweep,
            t_eq: ck.t_eq,
            doublings: ck.doublings,
            accumulators: ck.accumulators,
            level_counts: ck.level_counts,
            accepted: ck.accepted,
            measured_sweeps: ck.measured_sweeps,
            swap_baseline: ck.swap_baseline,
            log_bins: ck.log_bins,
            equilibration: ck.equilibration,
            equilibration_checked: ck.equilibration_checked,
            records: ck.records,
            joint: ck.joint,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint<S> {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            spec: self.sys.geometry.spec(),
            disorder_seed: self.sys.disorder.seed,
            sample_seed: self.sample_seed,
            couplings: self.sys.couplings,
            config: self.config.clone(),
            temperatures: self.temperatures.clone(),
            sweep: self.sweep,
            t_eq: self.t_eq,
            doublings: self.doublings,
            ensemble: self.ensemble.state(),
            accumulators: self.accumulators.clone(),
            level_counts: self.level_counts.clone(),
            accepted: self.accepted.clone(),
            measured_sweeps: self.measured_sweeps,
            swap_baseline: self.swap_baseline.clone(),
            log_bins: self.log_bins.clone(),
            equilibration: self.equilibration.clone(),
            equilibration_checked: self.equilibration_checked,
            records: self.records.clone(),
            joint: self.joint.clone(),
        }
    }

    pub fn sweeps_done(&self) -> u64 {
        self.sweep
    }

    pub fn total_sweeps(&self) -> u64 {
        self.t_eq + self.config.measurement_sweeps
    }

    pub fn is_finished(&self) -> bool {
        self.equilibration_checked && self.sweep >= self.total_sweeps()
    }

    pub fn ensemble(&self) -> &ReplicaEnsemble<S> {
        &self.ensemble
    }

    fn step(&mut self) -> Result<()> {
        self.sweep += 1;
        let t = self.sweep;
        let measuring = self.equilibration_checked && t > self.t_eq;
        let n = self.temperatures.len();
        for slot in 0..n {
            let frac = self.ensemble.metropolis_sweep(&self.sys, slot);
            if measuring {
                self.accepted[slot] += frac;
            }
        }
        self.ensemble.pt_exchange();
        let n_hex = self.sys.geometry.n_hexagons() as f64;
        for slot in 0..n {
            let e = self.ensemble.energy(slot).as_f64();
            let w = self.ensemble.plaquette_sum(slot) as f64 / n_hex;
            self.log_bins[slot].record(t, e, w);
        }
        if self.config.energy_check_interval > 0 && t % self.config.energy_check_interval == 0 {
            self.ensemble.verify_energies(&self.sys)?;
        }
        if measuring {
            self.measured_sweeps += 1;
            if (t - self.t_eq) % self.config.measurement_interval == 0 {
                self.record();
            }
        }
        if t == self.t_eq && !self.equilibration_checked {
            self.end_equilibration();
        }
        Ok(())
    }

    fn record(&mut self) {
        let n_hex = self.sys.geometry.n_hexagons() as u32;
        for slot in 0..self.temperatures.len() {
            let rec = MeasurementRecord {
                plaquette_sum: self.ensemble.plaquette_sum(slot),
                n_hexagons: n_hex,
                energy: self.ensemble.energy(slot),
            };
            self.accumulators[slot].push_record(&rec);
            self.level_counts[slot][rec.level()] += 1;
            if let Some(j) = self.joint.as_mut() {
                j[slot].push(&rec);
            }
            if let Some(r) = self.records.as_mut() {
                r[slot].push(rec);
            }
        }
    }

    /// Judge the lowest-temperature slot, the slowest to relax; double the
    /// equilibration time when allowed and the verdict fails.
    fn end_equilibration(&mut self) {
        let status = if self.log_bins[0].complete_bins() >= MIN_BINS {
            check_equilibration(&[&self.log_bins[0]], 0).ok()
        } else {
            None
        };
        let failed = status.as_ref().is_some_and(|s| !s.passed);
        if failed && self.doublings < self.config.max_doublings {
            self.doublings += 1;
            self.t_eq *= 2;
            return;
        }
        if failed {
            warn!(
                "sample seed {}: equilibration check failed after {} sweeps: {}",
                self.sample_seed,
                self.t_eq,
                status.as_ref().map(|s| s.failures.join("; ")).unwrap_or_default()
            );
        }
        self.equilibration = status;
        self.equilibration_checked = true;
        self.swap_baseline = Some((
            self.ensemble.swap_attempts().to_vec(),
            self.ensemble.swap_accepts().to_vec(),
        ));
    }

    /// Run until finished or until `max_sweeps` more sweeps were done.
    /// `on_checkpoint` is called every `checkpoint_interval` sweeps and when
    /// halting early.
    pub fn advance<F>(&mut self, max_sweeps: Option<u64>, mut on_checkpoint: F) -> Result<Progress>
    where
        F: FnMut(&Checkpoint<S>) -> Result<()>,
    {
        let mut done = 0u64;
        while !self.is_finished() {
            if max_sweeps.is_some_and(|m| done >= m) {
                on_checkpoint(&self.checkpoint())?;
                return Ok(Progress::Halted);
            }
            self.step()?;
            done += 1;
            let every = self.config.checkpoint_interval;
            if every > 0 && self.sweep % every == 0 && !self.is_finished() {
                on_checkpoint(&self.checkpoint())?;
            }
        }
        Ok(Progress::Finished)
    }

    pub fn finish(self) -> MeasurementSeries<S> {
        let n = self.temperatures.len();
        let (attempts, accepts) = (self.ensemble.swap_attempts(), self.ensemble.swap_accepts());
        let (base_att, base_acc) = self
            .swap_baseline
            .clone()
            .unwrap_or_else(|| (vec![0; attempts.len()], vec![0; accepts.len()]));
        let pair_rate = |i: usize| {
            let att = attempts[i] - base_att[i];
            if att == 0 {
                0.0
            } else {
                (accepts[i] - base_acc[i]) as f64 / att as f64
            }
        };
        let mut joint = self.joint.map(|j| j.into_iter().map(Some).collect::<Vec<_>>());
        let slots = (0..n)
            .map(|s| SlotSeries {
                joint: joint.as_mut().and_then(|j| j[s].take()),
                temperature: self.temperatures[s],
                accumulator: self.accumulators[s],
                level_counts: self.level_counts[s].clone(),
                acceptance: if self.measured_sweeps > 0 {
                    self.accepted[s] / self.measured_sweeps as f64
                } else {
                    0.0
                },
                swap_rate: if n < 2 { 0.0 } else { pair_rate(s.min(n - 2)) },
            })
            .collect();
        MeasurementSeries {
            spec: self.sys.geometry.spec(),
            sample_seed: self.sample_seed,
            n_sites: self.sys.geometry.n_sites(),
            n_hexagons: self.sys.geometry.n_hexagons(),
            t_eq: self.t_eq,
            doublings: self.doublings,
            slots,
            log_bins: self.log_bins,
            equilibration: self.equilibration,
            records: self.records,
        }
    }
}

/// Random start, `2^b` equilibration sweeps, then the measurement phase.
pub fn run_disorder_sample<S: Scalar>(
    g: &LatticeGeometry,
    disorder: &DisorderRealization,
    couplings: CouplingSet<S>,
    ladder: &TemperatureLadder,
    config: &RunConfig,
    sample_seed: u64,
) -> Result<MeasurementSeries<S>> {
    let sys = System::new(g, disorder, couplings);
    let mut run = SampleRun::new(sys, ladder, config.clone(), sample_seed)?;
    run.advance(None, |_| Ok(()))?;
    Ok(run.finish())
}
