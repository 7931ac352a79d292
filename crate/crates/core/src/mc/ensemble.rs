//! Replica ensemble: single-spin-flip Metropolis sweeps at each ladder slot
//! and replica exchange between neighbouring slots.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::LatticeGeometry;
use crate::model::{energy, CouplingSet, DisorderRealization, SpinConfiguration};
use crate::num::Scalar;
use crate::observables::plaquette_sum;
use crate::rng;

/// Deliberate defects for validating the validators.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Fault {
    /// Metropolis decisions use `−ΔE`.
    DeltaEnergySign,
}

/// Everything a sweep reads but never writes.
#[derive(Clone, Copy, Debug)]
pub struct System<'a, S> {
    pub geometry: &'a LatticeGeometry,
    pub disorder: &'a DisorderRealization,
    pub couplings: CouplingSet<S>,
    pub fault: Option<Fault>,
}

impl<'a, S: Scalar> System<'a, S> {
    pub fn new(geometry: &'a LatticeGeometry, disorder: &'a DisorderRealization, couplings: CouplingSet<S>) -> Self {
        Self {
            geometry,
            disorder,
            couplings,
            fault: None,
        }
    }

    pub fn with_fault(mut self, fault: Fault) -> Self {
        self.fault = Some(fault);
        self
    }
}

const FIVE_RANGE: i32 = 6;
const HEX_RANGE: i32 = 3;
const HEX_WIDTH: usize = (2 * HEX_RANGE + 1) as usize;
const TABLE_LEN: usize = (2 * FIVE_RANGE as usize + 1) * HEX_WIDTH;

#[inline]
fn table_index(five: i32, hex: i32) -> usize {
    debug_assert!(five.abs() <= FIVE_RANGE && hex.abs() <= HEX_RANGE);
    (five + FIVE_RANGE) as usize * HEX_WIDTH + (hex + HEX_RANGE) as usize
}

/// `ΔE = 2J·A + 2K·B` and `min(1, e^{−βΔE})` for every reachable pair of
/// local sums `(A, B)`.
#[derive(Clone, Debug)]
pub(crate) struct AcceptanceTable<S> {
    prob: [f64; TABLE_LEN],
    delta: [S; TABLE_LEN],
}

impl<S: Scalar> AcceptanceTable<S> {
    fn new(beta: f64, couplings: &CouplingSet<S>, fault: Option<Fault>) -> Self {
        let mut prob = [1.0; TABLE_LEN];
        let mut delta = [S::zero(); TABLE_LEN];
        let two = S::one() + S::one();
        for five in -FIVE_RANGE..=FIVE_RANGE {
            for hex in -HEX_RANGE..=HEX_RANGE {
                let i = table_index(five, hex);
                let de = two * (couplings.j * S::from_i64_lossy(five as i64) + couplings.k * S::from_i64_lossy(hex as i64));
                delta[i] = de;
                let seen = match fault {
                    Some(Fault::DeltaEnergySign) => -de.as_f64(),
                    None => de.as_f64(),
                };
                prob[i] = metropolis_probability(beta, seen);
            }
        }
        Self { prob, delta }
    }
}

/// `min(1, e^{−βΔE})`.
#[inline]
pub fn metropolis_probability(beta: f64, delta_e: f64) -> f64 {
    if delta_e <= 0.0 || beta == 0.0 {
        1.0
    } else {
        (-beta * delta_e).exp()
    }
}

/// Accept with probability `prob`; certain moves draw no random number.
#[inline]
pub fn metropolis_accept<R: Rng + ?Sized>(prob: f64, rng: &mut R) -> bool {
    prob >= 1.0 || rng.gen::<f64>() < prob
}

/// `min(1, e^{(β_i − β_j)(E_i − E_j)})` for swapping the replicas at slots
/// `i` and `j`.
#[inline]
pub fn swap_probability(beta_i: f64, beta_j: f64, e_i: f64, e_j: f64) -> f64 {
    let x = (beta_i - beta_j) * (e_i - e_j);
    if x >= 0.0 {
        1.0
    } else {
        x.exp()
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Replica<S> {
    pub(crate) spins: SpinConfiguration,
    /// `γ_t Π σ` per term, unified term order.
    coupled: Vec<i8>,
    pub(crate) energy: S,
    pub(crate) plaquette_sum: i64,
    pub(crate) rng: ChaCha8Rng,
}

impl<S: Scalar> Replica<S> {
    fn new(sys: &System<S>, spins: SpinConfiguration, rng: ChaCha8Rng, energy: Option<S>) -> Self {
        let g = sys.geometry;
        let coupled: Vec<i8> = (0..g.n_terms())
            .map(|t| sys.disorder.sign(t) * spins.product(g.term_sites(t)))
            .collect();
        let energy = energy.unwrap_or_else(|| crate::model::energy(g, sys.disorder, &sys.couplings, &spins));
        Self {
            plaquette_sum: plaquette_sum(g, &spins),
            spins,
            coupled,
            energy,
            rng,
        }
    }
}

/// Serializable replica state; derived caches are rebuilt on restore.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct ReplicaState<S> {
    pub spins: SpinConfiguration,
    pub energy: S,
    pub rng: ChaCha8Rng,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct EnsembleState<S> {
    pub betas: Vec<f64>,
    pub replicas: Vec<ReplicaState<S>>,
    pub slot_to_replica: Vec<usize>,
    pub exchange_rng: ChaCha8Rng,
    pub exchange_calls: u64,
    pub swap_attempts: Vec<u64>,
    pub swap_accepts: Vec<u64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ExchangeStats {
    pub attempted: u64,
    pub accepted: u64,
}

/// `N_T` replicas, one per ladder slot, plus the slot ↔ replica mapping.
#[derive(Clone, Debug)]
pub struct ReplicaEnsemble<S> {
    betas: Vec<f64>,
    replicas: Vec<Replica<S>>,
    slot_to_replica: Vec<usize>,
    tables: Vec<AcceptanceTable<S>>,
    exchange_rng: ChaCha8Rng,
    exchange_calls: u64,
    swap_attempts: Vec<u64>,
    swap_accepts: Vec<u64>,
}

impl<S: Scalar> ReplicaEnsemble<S> {
    /// Uniform random initial spins; replica `k` uses stream `2 + k` of
    /// `seed`, exchanges use stream 1.
    pub fn new(sys: &System<S>, betas: Vec<f64>, seed: u64) -> Self {
        let n = sys.geometry.n_sites();
        let replicas = (0..betas.len())
            .map(|k| {
                let mut r = rng::stream(seed, rng::REPLICA_STREAM_BASE + k as u64);
                let spins = SpinConfiguration::random(n, &mut r);
                Replica::new(sys, spins, r, None)
            })
            .collect();
        Self::assemble(sys, betas, replicas, rng::stream(seed, rng::EXCHANGE_STREAM))
    }

    /// Start every replica from the given configuration.
    pub fn from_spins(sys: &System<S>, betas: Vec<f64>, spins: &SpinConfiguration, seed: u64) -> Self {
        let replicas = (0..betas.len())
            .map(|k| {
                let r = rng::stream(seed, rng::REPLICA_STREAM_BASE + k as u64);
                Replica::new(sys, spins.clone(), r, None)
            })
            .collect();
        Self::assemble(sys, betas, replicas, rng::stream(seed, rng::EXCHANGE_STREAM))
    }

    fn assemble(sys: &System<S>, betas: Vec<f64>, replicas: Vec<Replica<S>>, exchange_rng: ChaCha8Rng) -> Self {
        assert!(!betas.is_empty(), "ensemble needs at least one slot");
        assert!(betas.iter().all(|&b| b >= 0.0), "inverse temperatures must be non-negative");
        let n = betas.len();
        let tables = betas
            .iter()
            .map(|&b| AcceptanceTable::new(b, &sys.couplings, sys.fault))
            .collect();
        Self {
            tables,
            replicas,
            slot_to_replica: (0..n).collect(),
            exchange_rng,
            exchange_calls: 0,
            swap_attempts: vec![0; n.saturating_sub(1)],
            swap_accepts: vec![0; n.saturating_sub(1)],
            betas,
        }
    }

    pub fn n_slots(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn slot_to_replica(&self) -> &[usize] {
        &self.slot_to_replica
    }

    fn at(&self, slot: usize) -> &Replica<S> {
        &self.replicas[self.slot_to_replica[slot]]
    }

    pub fn spins(&self, slot: usize) -> &SpinConfiguration {
        &self.at(slot).spins
    }

    pub fn energy(&self, slot: usize) -> S {
        self.at(slot).energy
    }

    pub fn plaquette_sum(&self, slot: usize) -> i64 {
        self.at(slot).plaquette_sum
    }

    pub fn swap_attempts(&self) -> &[u64] {
        &self.swap_attempts
    }

    pub fn swap_accepts(&self) -> &[u64] {
        &self.swap_accepts
    }

    /// One proposal per site in index order at the slot's temperature.
    /// Returns the accepted fraction.
    pub fn metropolis_sweep(&mut self, sys: &System<S>, slot: usize) -> f64 {
        let g = sys.geometry;
        let table = &self.tables[slot];
        let rep = &mut self.replicas[self.slot_to_replica[slot]];
        let n = g.n_sites();
        let mut accepted = 0usize;
        for site in 0..n {
            let five_terms = g.flip_five(site);
            let hex_terms = g.flip_hex(site);
            let five: i32 = five_terms.iter().map(|&t| rep.coupled[t as usize] as i32).sum();
            let hex: i32 = hex_terms.iter().map(|&t| rep.coupled[t as usize] as i32).sum();
            let i = table_index(five, hex);
            if metropolis_accept(table.prob[i], &mut rep.rng) {
                rep.spins.flip(site);
                for &t in five_terms {
                    rep.coupled[t as usize] = -rep.coupled[t as usize];
                }
                for &t in hex_terms {
                    let t = t as usize;
                    // raw plaquette product before the flip is γ · coupled
                    rep.plaquette_sum -= 2 * (sys.disorder.sign(t) * rep.coupled[t]) as i64;
                    rep.coupled[t] = -rep.coupled[t];
                }
                rep.energy = rep.energy + table.delta[i];
                accepted += 1;
            }
        }
        accepted as f64 / n as f64
    }

    /// Attempt swaps of neighbouring slots: pairs `(0,1), (2,3), …` on even
    /// calls and `(1,2), (3,4), …` on odd calls. Only the mapping changes.
    pub fn pt_exchange(&mut self) -> ExchangeStats {
        let mut stats = ExchangeStats::default();
        let start = (self.exchange_calls % 2) as usize;
        self.exchange_calls += 1;
        let n = self.betas.len();
        let mut i = start;
        while i + 1 < n {
            let (a, b) = (self.slot_to_replica[i], self.slot_to_replica[i + 1]);
            let p = swap_probability(
                self.betas[i],
                self.betas[i + 1],
                self.replicas[a].energy.as_f64(),
                self.replicas[b].energy.as_f64(),
            );
            stats.attempted += 1;
            self.swap_attempts[i] += 1;
            if metropolis_accept(p, &mut self.exchange_rng) {
                self.slot_to_replica.swap(i, i + 1);
                self.swap_accepts[i] += 1;
                stats.accepted += 1;
            }
            i += 2;
        }
        stats
    }

    /// Compare every cached energy with a from-scratch evaluation. Float
    /// scalars are resynchronized after the comparison.
    pub fn verify_energies(&mut self, sys: &System<S>) -> Result<()> {
        for rep in &mut self.replicas {
            let fresh = energy(sys.geometry, sys.disorder, &sys.couplings, &rep.spins);
            if !rep.energy.agrees_with(fresh) {
                return Err(Error::EnergyDrift {
                    cached: rep.energy.to_string(),
                    recomputed: fresh.to_string(),
                });
            }
            rep.energy = fresh;
            debug_assert_eq!(rep.plaquette_sum, plaquette_sum(sys.geometry, &rep.spins));
        }
        Ok(())
    }

    pub fn state(&self) -> EnsembleState<S> {
        EnsembleState {
            betas: self.betas.clone(),
            replicas: self
                .replicas
                .iter()
                .map(|r| ReplicaState {
                    spins: r.spins.clone(),
                    energy: r.energy,
                    rng: r.rng.clone(),
                })
                .collect(),
            slot_to_replica: self.slot_to_replica.clone(),
            exchange_rng: self.exchange_rng.clone(),
            exchange_calls: self.exchange_calls,
            swap_attempts: self.swap_attempts.clone(),
            swap_accepts: self.swap_accepts.clone(),
        }
    }

    pub fn restore(sys: &System<S>, state: EnsembleState<S>) -> Result<Self> {
        let n = state.betas.len();
        let mut seen = vec![false; n];
        let bijective = state.slot_to_replica.len() == n
            && state
                .slot_to_replica
                .iter()
                .all(|&r| r < n && !std::mem::replace(&mut seen[r], true));
        if !bijective || state.replicas.len() != n || state.swap_attempts.len() != n.saturating_sub(1) {
            return Err(Error::CheckpointMismatch("inconsistent ensemble state".into()));
        }
        if state.replicas.iter().any(|r| r.spins.len() != sys.geometry.n_sites()) {
            return Err(Error::CheckpointMismatch("replica size does not match geometry".into()));
        }
        let replicas = state
            .replicas
            .into_iter()
            .map(|r| Replica::new(sys, r.spins, r.rng, Some(r.energy)))
            .collect();
        let mut ens = Self::assemble(sys, state.betas, replicas, state.exchange_rng);
        ens.slot_to_replica = state.slot_to_replica;
        ens.exchange_calls = state.exchange_calls;
        ens.swap_attempts = state.swap_attempts;
        ens.swap_accepts = state.swap_accepts;
        ens.verify_energies(sys)?;
        Ok(ens)
    }
}
