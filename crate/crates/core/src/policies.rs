//! Controllers announcing the per-slot pair `(p, K)`.
//!
//! `h1` and `hk` are told the true number of contenders; `a1`, `ak` and
//! `ak_mod` only see the previous slot's feedback.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::{estimate_backlog, min_consistent_active, EstimatorInputs, SlotObservation};
use crate::occupancy::{OccupancyError, PolicyTable};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("A1 coefficients violate c(e-2) + a + b = 0 or the sign pattern a<0, b>0, c>0: {0:?}")]
    BadCoefficients(A1Coefficients),
    #[error("algorithm {0} requires a policy table")]
    MissingTable(Algorithm),
    #[error(transparent)]
    Table(#[from] OccupancyError),
    #[error("unknown algorithm {0:?}; expected one of h1, hk, a1, ak, ak_mod")]
    UnknownAlgorithm(String),
    #[error("invalid control decision: {0}")]
    InvalidDecision(String),
}

pub type Result<T> = std::result::Result<T, PolicyError>;

/// Transmit probability and replica count for one slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlDecision {
    pub transmit_prob: f64,
    pub replicas: u32,
}

impl ControlDecision {
    pub const ALWAYS_SINGLE: ControlDecision = ControlDecision { transmit_prob: 1.0, replicas: 1 };

    pub fn validate(&self, n_channels: u32) -> Result<()> {
        let p_ok = self.transmit_prob > 0.0 && self.transmit_prob <= 1.0;
        if !p_ok || self.replicas == 0 || self.replicas > n_channels {
            return Err(PolicyError::InvalidDecision(format!("{self:?} with M={n_channels}")));
        }
        Ok(())
    }
}

fn share(n_channels: u32, contenders: f64) -> f64 {
    if contenders <= f64::from(n_channels) {
        1.0
    } else {
        f64::from(n_channels) / contenders
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "h1")]
    H1,
    #[serde(rename = "hk")]
    Hk,
    #[serde(rename = "a1")]
    A1,
    #[serde(rename = "ak")]
    Ak,
    #[serde(rename = "ak_mod")]
    AkModified,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [Algorithm::H1, Algorithm::Hk, Algorithm::A1, Algorithm::Ak, Algorithm::AkModified];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::H1 => "h1",
            Algorithm::Hk => "hk",
            Algorithm::A1 => "a1",
            Algorithm::Ak => "ak",
            Algorithm::AkModified => "ak_mod",
        }
    }

    /// Controllers that are handed the true contender count.
    pub fn is_hypothetical(self) -> bool {
        matches!(self, Algorithm::H1 | Algorithm::Hk)
    }

    pub fn uses_table(self) -> bool {
        matches!(self, Algorithm::Hk | Algorithm::Ak | Algorithm::AkModified)
    }

    pub fn uses_replicas(self) -> bool {
        self.uses_table()
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| PolicyError::UnknownAlgorithm(s.to_owned()))
    }
}

/// The table's `γ` is authoritative here; only the channel count can be checked.
fn check_table(table: &PolicyTable, n_channels: u32) -> Result<()> {
    Ok(table.ensure_matches(n_channels, table.erasure_prob())?)
}

pub fn h1_decide(true_n: u64, n_channels: u32) -> ControlDecision {
    ControlDecision { transmit_prob: share(n_channels, true_n as f64), replicas: 1 }
}

pub fn hk_decide(true_n: u64, n_channels: u32, table: &PolicyTable) -> Result<ControlDecision> {
    check_table(table, n_channels)?;
    Ok(if true_n > u64::from(n_channels) {
        ControlDecision { transmit_prob: f64::from(n_channels) / true_n as f64, replicas: 1 }
    } else if true_n == 0 {
        ControlDecision::ALWAYS_SINGLE
    } else {
        ControlDecision { transmit_prob: 1.0, replicas: table.replicas_for(true_n as u32) }
    })
}

pub fn ak_decide(estimate: u64, n_channels: u32, table: &PolicyTable) -> Result<ControlDecision> {
    check_table(table, n_channels)?;
    let replicas = u32::try_from(estimate).map_or(1, |n| table.replicas_for(n));
    Ok(ControlDecision { transmit_prob: share(n_channels, estimate as f64), replicas })
}

pub fn ak_modified_decide(
    estimate: u64,
    a1: &A1State,
    n_channels: u32,
    table: &PolicyTable,
) -> Result<ControlDecision> {
    check_table(table, n_channels)?;
    Ok(if estimate < u64::from(n_channels) {
        ControlDecision { transmit_prob: 1.0, replicas: table.replicas_for(estimate as u32) }
    } else {
        a1.decide(n_channels)
    })
}

/// Weights of the A1 drift `ΔZ = a·i + b·s + c·c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct A1Coefficients {
    pub idle: f64,
    pub single: f64,
    pub collision: f64,
}

impl A1Coefficients {
    pub fn new(idle: f64, single: f64, collision: f64) -> Result<Self> {
        let coeffs = Self { idle, single, collision };
        let balance = collision * (std::f64::consts::E - 2.0) + idle + single;
        if !(idle < 0.0 && single > 0.0 && collision > 0.0) || balance.abs() > 1e-12 {
            return Err(PolicyError::BadCoefficients(coeffs));
        }
        Ok(coeffs)
    }

    /// Builds a valid set from `b` and `c`, solving the constraint for `a`.
    pub fn from_single_and_collision(single: f64, collision: f64) -> Result<Self> {
        Self::new(-(single + collision * (std::f64::consts::E - 2.0)), single, collision)
    }
}

impl Default for A1Coefficients {
    fn default() -> Self {
        Self::from_single_and_collision(0.5, 1.0).expect("default coefficients are valid")
    }
}

/// Auxiliary process `Z` tracking the contender count from feedback alone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct A1State {
    pub z: f64,
    pub coeffs: A1Coefficients,
}

impl A1State {
    pub fn new(coeffs: A1Coefficients) -> Self {
        Self { z: 1.0, coeffs }
    }

    pub fn update(&self, obs: &SlotObservation) -> A1State {
        let c = &self.coeffs;
        let dz =
            c.idle * f64::from(obs.idle) + c.single * f64::from(obs.singles) + c.collision * f64::from(obs.collisions);
        A1State { z: (self.z + dz).max(1.0), coeffs: self.coeffs }
    }

    pub fn decide(&self, n_channels: u32) -> ControlDecision {
        ControlDecision { transmit_prob: share(n_channels, self.z), replicas: 1 }
    }
}

impl Default for A1State {
    fn default() -> Self {
        Self::new(A1Coefficients::default())
    }
}

/// Mutable controller state for one simulation run.
#[derive(Debug, Clone)]
pub struct Controller {
    algorithm: Algorithm,
    n_channels: u32,
    load_per_channel: f64,
    a1: Option<A1State>,
    table: Option<Arc<PolicyTable>>,
    last_decision: ControlDecision,
    last_estimate: u64,
    estimator_failures: u64,
}

impl Controller {
    /// `table` must be present (and built for the run's `(M, γ)`) for the
    /// replica-using algorithms.
    pub fn new(
        algorithm: Algorithm,
        n_channels: u32,
        erasure_prob: f64,
        load_per_channel: f64,
        table: Option<Arc<PolicyTable>>,
        coeffs: A1Coefficients,
    ) -> Result<Self> {
        let table = if algorithm.uses_table() {
            let t = table.ok_or(PolicyError::MissingTable(algorithm))?;
            t.ensure_matches(n_channels, erasure_prob)?;
            Some(t)
        } else {
            None
        };
        let a1 = matches!(algorithm, Algorithm::A1 | Algorithm::AkModified).then(|| A1State::new(coeffs));
        Ok(Self {
            algorithm,
            n_channels,
            load_per_channel,
            a1,
            table,
            last_decision: ControlDecision::ALWAYS_SINGLE,
            last_estimate: 1,
            estimator_failures: 0,
        })
    }

    pub fn algorithm(&self) -> Algorithm {
        self.algorithm
    }

    pub fn a1_state(&self) -> Option<&A1State> {
        self.a1.as_ref()
    }

    pub fn last_estimate(&self) -> u64 {
        self.last_estimate
    }

    pub fn last_decision(&self) -> ControlDecision {
        self.last_decision
    }

    pub fn estimator_failures(&self) -> u64 {
        self.estimator_failures
    }

    fn table(&self) -> &PolicyTable {
        self.table.as_deref().expect("table presence checked at construction")
    }

    /// Decision for the coming slot. `true_contenders` is only read by the
    /// hypothetical controllers.
    pub fn decide(&mut self, true_contenders: u64) -> Result<ControlDecision> {
        let m = self.n_channels;
        let decision = match self.algorithm {
            Algorithm::H1 => h1_decide(true_contenders, m),
            Algorithm::Hk => hk_decide(true_contenders, m, self.table())?,
            Algorithm::A1 => self.a1.expect("a1 state").decide(m),
            Algorithm::Ak => ak_decide(self.last_estimate, m, self.table())?,
            Algorithm::AkModified => {
                ak_modified_decide(self.last_estimate, self.a1.as_ref().expect("a1 state"), m, self.table())?
            }
        };
        self.last_decision = decision;
        Ok(decision)
    }

    /// Feeds back the outcome of the slot that used the last decision.
    pub fn observe(&mut self, obs: &SlotObservation) {
        if let Some(a1) = self.a1.as_mut() {
            *a1 = a1.update(obs);
        }
        if matches!(self.algorithm, Algorithm::Ak | Algorithm::AkModified) {
            let inputs = EstimatorInputs {
                observation: *obs,
                prev_p: self.last_decision.transmit_prob,
                prev_k: self.last_decision.replicas,
                n_channels: self.n_channels,
                load_per_channel: self.load_per_channel,
            };
            match estimate_backlog(&inputs) {
                Ok(n) => self.last_estimate = n,
                Err(e) => {
                    self.estimator_failures += 1;
                    let floor = min_consistent_active(obs, inputs.prev_p, inputs.prev_k);
                    self.last_estimate = self.last_estimate.max(floor);
                    log::trace!("estimator failed ({e}); estimate held at {}", self.last_estimate);
                }
            }
        }
    }
}
