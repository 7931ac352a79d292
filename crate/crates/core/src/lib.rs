//! Monte Carlo engine and analysis pipeline for the disordered tricolored
//! Z2×Z2 lattice gauge theory that describes decoding of color codes under
//! noisy syndrome measurements.
//!
//! The core is generic over the coupling scalar ([`num::Scalar`]) and the
//! analysis over the real type ([`num::Real`]). The aliases below fix the
//! usual choices: integer couplings for exact energies, `f64` for estimates.

pub mod analysis;
pub mod error;
pub mod lattice;
pub mod mc;
pub mod model;
pub mod num;
pub mod observables;
pub mod oracle;
pub mod rng;

pub use error::{Error, Result};
pub use lattice::{build_lattice, validate_geometry, wilson_plaquettes, LatticeGeometry, LatticeSpec};
pub use model::{sample_disorder, DisorderRealization, NoiseParameters, SpinConfiguration};
pub use num::{Real, Scalar};

/// Integer couplings: every energy is exact.
pub type Couplings = model::CouplingSet<i64>;
/// Floating couplings for non-integer `J`, `K`.
pub type RealCouplings = model::CouplingSet<f64>;
pub type Moments = observables::ThermalMoments<f64>;
pub type Histogram = observables::WilsonHistogram<f64>;
pub type Curve = analysis::SkewnessCurve<f64>;
pub type Boundary = analysis::PhaseBoundary<f64>;
pub type Series = mc::MeasurementSeries<i64>;
pub type Ensemble = mc::ReplicaEnsemble<i64>;
