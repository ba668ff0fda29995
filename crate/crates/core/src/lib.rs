//! Multi-channel slotted random access with message replicas.
//!
//! Devices arrive as a Poisson stream, and each contender may send `K`
//! identical replicas on distinct channels. A central controller announces the
//! transmit probability `p` and the replica count `K` every slot. The crate
//! provides:
//!
//! * [`occupancy`]: exact per-slot delivery probability and the optimal replica
//!   table `N -> K*`;
//! * [`estimator`]: maximum-likelihood estimate of the contender count from the
//!   idle/single/collision channel counts;
//! * [`policies`]: the controllers `h1`, `hk` (given the true contender count)
//!   and `a1`, `ak`, `ak_mod` (driven by feedback only);
//! * [`engine`]: the slotted Monte Carlo simulator;
//! * [`asymptotics`]: many-channel backlog limits and a Lambert-W evaluator;
//! * [`harness`]: sweeps, table caching, CSV output and the CLI commands.

pub mod asymptotics;
pub mod engine;
pub mod estimator;
pub mod harness;
pub mod numeric;
pub mod occupancy;
pub mod policies;
pub mod stats;

pub use engine::{RunMetrics, SystemConfig};
pub use estimator::SlotObservation;
pub use occupancy::{PolicyTable, SuccessParams};
pub use policies::{Algorithm, ControlDecision, Controller};
