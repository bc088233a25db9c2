//! Simulator for the dynamics of probe particles and clocks near mass
//! configurations held in quantum superposition.
//!
//! The strategy: change into a quantum reference frame in which the mass
//! configuration (and hence the weak-field metric) is definite, evolve with
//! known physics there, and change back. States are finite superpositions of
//! semi-classical branches; the frame-change operators act branchwise and are
//! unitary on their domain.

pub mod clocks;
pub mod compare;
pub mod csv_out;
pub mod geodesic;
pub mod grid;
pub mod phase;
pub mod pipeline;
pub mod potential;
pub mod scenario;
pub mod semiclassical;
pub mod state;
pub mod transforms;
pub mod units;
pub mod validity;

pub use state::{Branch, BranchState, ClockQubit, SystemId, SystemKind, SystemRegistry};
pub use units::UnitSystem;
