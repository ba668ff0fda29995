//! Maximum-likelihood estimate of the number of active devices from one slot
//! of base-station feedback.
//!
//! Replica counts per channel are treated as Poisson with mean `μ = NK/M`, so
//! the likelihood of `i` idle, `s` single and `c` collided channels has the shape
//! `g(μ) = μ^s e^{-μM} (e^μ - 1 - μ)^c` (combinatorial constant dropped). The
//! maximiser solves `cμ(e^μ - 1) - (μM - s)(e^μ - 1 - μ) = 0`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::exp_minus_one_minus_x;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("inconsistent observation: {0}")]
    InvalidObservation(String),
    #[error("invalid estimator input: {0}")]
    InvalidInput(String),
    #[error("no likelihood maximum below mu={cap} for observation {observation:?}")]
    Degenerate { observation: SlotObservation, cap: f64 },
}

pub type Result<T> = std::result::Result<T, EstimatorError>;

/// Lower end of the initial root bracket.
pub const MU_BRACKET_LO: f64 = 1e-9;
/// Largest replica intensity per channel considered before giving up.
pub const MU_CAP: f64 = 64.0;
pub const MU_TOLERANCE: f64 = 1e-10;

/// Feedback for one slot: channel outcome counts and delivered devices.
///
/// `singles` counts channels carrying exactly one replica, whether or not the
/// replica was erased.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SlotObservation {
    pub idle: u32,
    pub singles: u32,
    pub collisions: u32,
    pub successes: u32,
}

impl SlotObservation {
    pub fn new(idle: u32, singles: u32, collisions: u32, successes: u32) -> Result<Self> {
        let obs = Self { idle, singles, collisions, successes };
        if successes > singles {
            return Err(EstimatorError::InvalidObservation(format!(
                "{successes} successes exceed {singles} single-replica channels"
            )));
        }
        Ok(obs)
    }

    /// Channel count implied by the observation, `i + s + c`.
    pub fn n_channels(&self) -> u32 {
        self.idle + self.singles + self.collisions
    }

    pub fn validate_for(&self, n_channels: u32) -> Result<()> {
        if self.n_channels() != n_channels {
            return Err(EstimatorError::InvalidObservation(format!(
                "i+s+c = {} but M = {n_channels}",
                self.n_channels()
            )));
        }
        if self.successes > self.singles {
            return Err(EstimatorError::InvalidObservation(format!(
                "{} successes exceed {} single-replica channels",
                self.successes, self.singles
            )));
        }
        Ok(())
    }
}

/// `ln g(μ)`; `-inf` at `μ = 0` unless the observation is all idle.
pub fn log_pseudo_likelihood_mu(obs: &SlotObservation, mu: f64) -> f64 {
    let m = f64::from(obs.n_channels());
    let s = f64::from(obs.singles);
    let c = f64::from(obs.collisions);
    let mut v = -mu * m;
    if obs.singles > 0 {
        v += s * mu.ln();
    }
    if obs.collisions > 0 {
        v += c * exp_minus_one_minus_x(mu).ln();
    }
    v
}

/// Likelihood shape `g(v, N)` at `μ = NK/M`.
pub fn pseudo_likelihood(obs: &SlotObservation, candidate_n: u32, replicas: u32, n_channels: u32) -> f64 {
    let mu = f64::from(candidate_n) * f64::from(replicas) / f64::from(n_channels);
    log_pseudo_likelihood_mu(obs, mu).exp()
}

/// Left-hand side of the zero-gradient equation.
pub fn zero_gradient_residual(obs: &SlotObservation, mu: f64) -> f64 {
    let m = f64::from(obs.n_channels());
    let s = f64::from(obs.singles);
    let c = f64::from(obs.collisions);
    c * mu * mu.exp_m1() - (mu * m - s) * exp_minus_one_minus_x(mu)
}

/// Derivative of `ln g`, written as `s/μ - (i + s) + cμ / (e^μ - 1 - μ)` so
/// that its sign survives rounding at large `μ`.
fn log_likelihood_gradient(obs: &SlotObservation, mu: f64) -> f64 {
    let s = f64::from(obs.singles);
    let c = f64::from(obs.collisions);
    let not_collided = f64::from(obs.idle + obs.singles);
    s / mu - not_collided + c * mu / exp_minus_one_minus_x(mu)
}

/// Replica intensity per channel maximising `g`, for observations with at
/// least one collision.
///
/// Bisection on the sign of the gradient; the upper end of the bracket starts
/// at 1 and doubles up to [`MU_CAP`].
pub fn solve_mu(obs: &SlotObservation) -> Result<f64> {
    if obs.collisions == 0 {
        return Err(EstimatorError::InvalidInput("solve_mu needs at least one collision".into()));
    }
    let mut lo = MU_BRACKET_LO;
    if log_likelihood_gradient(obs, lo) <= 0.0 {
        return Err(EstimatorError::Degenerate { observation: *obs, cap: MU_CAP });
    }
    let mut hi = 1.0;
    while log_likelihood_gradient(obs, hi) > 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > MU_CAP {
            return Err(EstimatorError::Degenerate { observation: *obs, cap: MU_CAP });
        }
    }
    while hi - lo > MU_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        if log_likelihood_gradient(obs, mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Inputs to one backlog estimate: feedback of the previous slot and the
/// control pair that was in force during it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorInputs {
    pub observation: SlotObservation,
    pub prev_p: f64,
    pub prev_k: u32,
    pub n_channels: u32,
    pub load_per_channel: f64,
}

impl EstimatorInputs {
    fn validate(&self) -> Result<()> {
        self.observation.validate_for(self.n_channels)?;
        if !(self.prev_p > 0.0 && self.prev_p <= 1.0) {
            return Err(EstimatorError::InvalidInput(format!("prev_p = {} not in (0, 1]", self.prev_p)));
        }
        if self.prev_k == 0 {
            return Err(EstimatorError::InvalidInput("prev_k must be positive".into()));
        }
        if self.load_per_channel.is_nan() || self.load_per_channel < 0.0 {
            return Err(EstimatorError::InvalidInput(format!(
                "load per channel {} is negative",
                self.load_per_channel
            )));
        }
        Ok(())
    }
}

/// Estimated number of devices that were active in the observed slot, before
/// rounding: `μ* M / (pK)` with collisions, `s / (pK)` without.
pub fn estimate_active(obs: &SlotObservation, prev_p: f64, prev_k: u32) -> Result<f64> {
    let m = f64::from(obs.n_channels());
    let k = f64::from(prev_k);
    let transmitters = if obs.collisions > 0 { solve_mu(obs)? * m / k } else { f64::from(obs.singles) / k };
    Ok(transmitters / prev_p)
}

/// Estimated number of contenders in the coming slot: the active estimate plus
/// expected arrivals, minus the devices that just left; never below 1.
pub fn estimate_backlog(inputs: &EstimatorInputs) -> Result<u64> {
    inputs.validate()?;
    let active = estimate_active(&inputs.observation, inputs.prev_p, inputs.prev_k)?;
    let arrivals = inputs.load_per_channel * f64::from(inputs.n_channels);
    let raw = (active + arrivals).round() - f64::from(inputs.observation.successes);
    Ok(if raw < 1.0 { 1 } else { raw as u64 })
}

/// Smallest active count that could have produced `obs`: every single needs one
/// replica and every collision two, spread over `prev_k` replicas per device
/// and thinned by `prev_p`.
pub fn min_consistent_active(obs: &SlotObservation, prev_p: f64, prev_k: u32) -> u64 {
    let replicas = u64::from(obs.singles) + 2 * u64::from(obs.collisions);
    let transmitters = replicas.div_ceil(u64::from(prev_k.max(1)));
    ((transmitters as f64 / prev_p).ceil() as u64).max(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(i: u32, s: u32, c: u32, ns: u32) -> SlotObservation {
        SlotObservation::new(i, s, c, ns).unwrap()
    }

    /// Maximiser of ln g on a grid of step `h` over `(0, hi]`, then refined by
    /// golden-section search on the neighbouring cells.
    fn grid_argmax(o: &SlotObservation, hi: f64, h: f64) -> f64 {
        let n = (hi / h) as usize;
        let (mut best, mut best_v) = (h, f64::NEG_INFINITY);
        for j in 1..=n {
            let mu = j as f64 * h;
            let v = log_pseudo_likelihood_mu(o, mu);
            if v > best_v {
                best_v = v;
                best = mu;
            }
        }
        let (mut a, mut b) = ((best - h).max(1e-12), best + h);
        let r = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let x1 = b - r * (b - a);
            let x2 = a + r * (b - a);
            if log_pseudo_likelihood_mu(o, x1) < log_pseudo_likelihood_mu(o, x2) {
                a = x1;
            } else {
                b = x2;
            }
        }
        0.5 * (a + b)
    }

    /// Root of the zero-gradient equation in its polynomial form.
    fn bisect_residual(o: &SlotObservation) -> f64 {
        let (mut lo, mut hi) = (1e-6, 60.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if zero_gradient_residual(o, mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn observation_consistency_checks() {
        assert!(SlotObservation::new(1, 2, 3, 3).is_err());
        let o = obs(5, 3, 2, 1);
        assert!(o.validate_for(10).is_ok());
        assert!(o.validate_for(11).is_err());
    }

    #[test]
    fn empty_slot_likelihood_decreases_in_n() {
        let o = obs(10, 0, 0, 0);
        let vals: Vec<f64> = (1..20).map(|n| pseudo_likelihood(&o, n, 1, 10)).collect();
        assert!(vals.windows(2).all(|w| w[1] < w[0]));
        assert!((vals[0] - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn singles_only_peak_at_s_over_m() {
        let o = obs(7, 3, 0, 0);
        let mu = grid_argmax(&o, 5.0, 1e-4);
        assert!((mu - 0.3).abs() < 1e-7);
    }

    #[test]
    fn root_matches_grid_maximum() {
        let o = obs(3, 5, 2, 0);
        let grid = grid_argmax(&o, 10.0, 1e-4);
        let root = solve_mu(&o).unwrap();
        assert!((root - grid).abs() < 1e-6, "{root} vs {grid}");
        assert!((root - bisect_residual(&o)).abs() < 1e-8);
        assert!((root - 0.98).abs() < 0.01);
        let scale = 2.0 * root * root.exp_m1() + (root * 10.0 - 5.0).abs() * exp_minus_one_minus_x(root);
        assert!(zero_gradient_residual(&o, root).abs() <= 1e-8 * scale);
    }

    #[test]
    fn all_collision_slot_has_no_interior_maximum() {
        // With c = M the likelihood shape (1 - e^{-μ}(1+μ))^M increases without bound.
        let o = obs(0, 0, 10, 0);
        assert!(matches!(solve_mu(&o), Err(EstimatorError::Degenerate { .. })));
    }

    #[test]
    fn consistent_floor() {
        assert_eq!(min_consistent_active(&obs(0, 0, 10, 0), 1.0, 10), 2);
        assert_eq!(min_consistent_active(&obs(0, 0, 10, 0), 0.5, 1), 40);
        assert_eq!(min_consistent_active(&obs(7, 3, 0, 3), 1.0, 2), 2);
        assert_eq!(min_consistent_active(&obs(10, 0, 0, 0), 1.0, 1), 1);
    }

    #[test]
    fn root_agrees_with_grid_on_many_observations() {
        for m in [4u32, 10, 25] {
            for c in 1..m {
                for s in 0..=(m - c) {
                    let o = obs(m - c - s, s, c, 0);
                    let root = solve_mu(&o).unwrap();
                    let grid = grid_argmax(&o, 70.0, 1e-3);
                    assert!((root - grid).abs() < 1e-6, "{o:?}: {root} vs {grid}");
                }
            }
        }
    }

    #[test]
    fn backlog_examples() {
        let base = EstimatorInputs {
            observation: obs(4, 6, 0, 5),
            prev_p: 1.0,
            prev_k: 2,
            n_channels: 10,
            load_per_channel: 0.1,
        };
        assert_eq!(estimate_backlog(&base).unwrap(), 1);

        let collided = EstimatorInputs { observation: obs(3, 5, 2, 3), ..base };
        assert_eq!(estimate_backlog(&collided).unwrap(), 3);

        let empty = EstimatorInputs { observation: obs(10, 0, 0, 0), load_per_channel: 0.0, ..base };
        assert_eq!(estimate_backlog(&empty).unwrap(), 1);
    }

    #[test]
    fn backlog_scales_with_inverse_transmit_probability() {
        let inputs = EstimatorInputs {
            observation: obs(2, 6, 2, 0),
            prev_p: 0.25,
            prev_k: 1,
            n_channels: 10,
            load_per_channel: 0.0,
        };
        let at_quarter = estimate_backlog(&inputs).unwrap() as f64;
        let at_one = estimate_backlog(&EstimatorInputs { prev_p: 1.0, ..inputs }).unwrap() as f64;
        assert!((at_quarter / at_one - 4.0).abs() < 0.5);
    }

    #[test]
    fn rejects_bad_inputs() {
        let base = EstimatorInputs {
            observation: obs(4, 6, 0, 5),
            prev_p: 0.0,
            prev_k: 2,
            n_channels: 10,
            load_per_channel: 0.1,
        };
        assert!(estimate_backlog(&base).is_err());
        assert!(estimate_backlog(&EstimatorInputs { prev_p: 1.0, n_channels: 9, ..base }).is_err());
        assert!(estimate_backlog(&EstimatorInputs { prev_p: 1.0, prev_k: 0, ..base }).is_err());
    }
}
