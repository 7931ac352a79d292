//! Parallel-tempering Monte Carlo.

pub mod ensemble;
pub mod equilibration;
pub mod ladder;
pub mod run;

pub use ensemble::{
    metropolis_accept, metropolis_probability, swap_probability, EnsembleState, ExchangeStats, Fault,
    ReplicaEnsemble, System,
};
pub use equilibration::{check_equilibration, BinSummary, EquilibrationStatus, LogBinnedSeries};
pub use ladder::{Spacing, TemperatureLadder};
pub use run::{run_disorder_sample, Checkpoint, MeasurementSeries, Progress, RunConfig, SampleRun, SlotSeries};
