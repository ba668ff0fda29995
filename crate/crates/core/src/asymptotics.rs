//! Backlog limits for a large number of channels.
//!
//! Contenders per channel form a Poisson flow of intensity `η`. With single
//! replicas the flow balance is `η e^{-η} (1-γ) = λ`, solved by the principal
//! Lambert-W branch. With `K` replicas it becomes
//! `λ = η [1 - (1 - (1-γ) e^{-Kη})^K]`, solved numerically per `K`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AsymptoticsError {
    #[error("Lambert W0 is undefined below -1/e (got {0})")]
    LambertDomain(f64),
    #[error("load {load} is outside the stability region (boundary {boundary}) at gamma={erasure_prob}")]
    Unstable { load: f64, erasure_prob: f64, boundary: f64 },
    #[error("no stationary point for K={replicas} at load {load}, gamma={erasure_prob}")]
    NoRoot { replicas: u32, load: f64, erasure_prob: f64 },
    #[error("no feasible replica count in [1, {k_max}] at load {load}, gamma={erasure_prob}")]
    AllInfeasible { k_max: u32, load: f64, erasure_prob: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, AsymptoticsError>;

const INV_E: f64 = 0.367_879_441_171_442_33;
const BISECTION_TOLERANCE: f64 = 1e-13;

/// Limiting backlog per channel and the replica count producing it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymptoteResult {
    /// Backlogged devices per channel, `η - λ`.
    pub eta_star: f64,
    pub k_star: u32,
    /// Total contender intensity per channel `η`, backlog plus new arrivals.
    pub total_intensity: f64,
}

/// How the replica count is chosen among the per-`K` stationary points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KSelection {
    /// Smallest stationary intensity (least backlog).
    #[default]
    MinBacklog,
    /// Largest stationary intensity.
    MaxIntensity,
}

/// Principal branch `W0` of the Lambert function.
pub fn lambert_w0(x: f64) -> Result<f64> {
    if x.is_nan() || x < -INV_E - 1e-15 {
        return Err(AsymptoticsError::LambertDomain(x));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == f64::INFINITY {
        return Ok(f64::INFINITY);
    }
    // Distance to the branch point; tiny values sit on -1 within rounding.
    let q = x + INV_E;
    if q <= 1e-15 {
        return Ok(-1.0);
    }
    let mut w = if q < 0.3 {
        let p = (2.0 * std::f64::consts::E * q).sqrt();
        -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p
    } else if x < 3.0 {
        // Padé-style start, good on [-0.07, 3).
        x * (1.0 + 4.0 / 3.0 * x) / (1.0 + x * (7.0 / 3.0 + 5.0 / 6.0 * x))
    } else {
        let l1 = x.ln();
        let l2 = l1.ln();
        l1 - l2 + l2 / l1
    };
    for _ in 0..64 {
        let ew = w.exp();
        let f = w * ew - x;
        let wp1 = w + 1.0;
        if wp1.abs() < 1e-300 {
            break;
        }
        let step = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1));
        w -= step;
        if step.abs() <= 4.0 * f64::EPSILON * (1.0 + w.abs()) {
            break;
        }
    }
    Ok(w)
}

fn validate_load(load: f64, erasure_prob: f64) -> Result<()> {
    if !(load >= 0.0 && load.is_finite()) {
        return Err(AsymptoticsError::InvalidArgument(format!("load {load} must be finite and >= 0")));
    }
    if !(0.0..1.0).contains(&erasure_prob) {
        return Err(AsymptoticsError::InvalidArgument(format!(
            "erasure probability {erasure_prob} must lie in [0, 1)"
        )));
    }
    Ok(())
}

/// Stability boundary `(1-γ)/e` on the per-channel load.
pub fn stability_boundary(erasure_prob: f64) -> f64 {
    (1.0 - erasure_prob) * INV_E
}

pub fn in_stability_region(load: f64, erasure_prob: f64) -> bool {
    load < stability_boundary(erasure_prob)
}

/// Single-replica limit: `η = -W0(-λ/(1-γ))`, backlog `η - λ`.
pub fn h1_limit(load: f64, erasure_prob: f64) -> Result<AsymptoteResult> {
    validate_load(load, erasure_prob)?;
    if !in_stability_region(load, erasure_prob) {
        return Err(AsymptoticsError::Unstable { load, erasure_prob, boundary: stability_boundary(erasure_prob) });
    }
    let eta = -lambert_w0(-load / (1.0 - erasure_prob))?;
    Ok(AsymptoteResult { eta_star: (eta - load).max(0.0), k_star: 1, total_intensity: eta })
}

/// Delivered flow per channel `η [1 - (1 - (1-γ) e^{-Kη})^K]`.
pub fn replica_throughput(eta: f64, erasure_prob: f64, replicas: u32) -> f64 {
    let k = f64::from(replicas);
    let per_replica = (1.0 - erasure_prob) * (-k * eta).exp();
    // 1 - (1 - q)^K without cancellation for small q.
    let success = -(k * (-per_replica).ln_1p()).exp_m1();
    eta * success
}

/// Smallest `η > 0` with `replica_throughput(η) = λ`.
pub fn hk_fixed_point(load: f64, erasure_prob: f64, replicas: u32) -> Result<f64> {
    validate_load(load, erasure_prob)?;
    if replicas == 0 {
        return Err(AsymptoticsError::InvalidArgument("replicas must be positive".into()));
    }
    if load == 0.0 {
        return Ok(0.0);
    }
    let excess = |eta: f64| replica_throughput(eta, erasure_prob, replicas) - load;
    let no_root = AsymptoticsError::NoRoot { replicas, load, erasure_prob };

    // Walk a geometric grid up from η = λ (where the excess is <= 0) to the
    // first sign change. The flow decays like e^{-Kη} so the scan is bounded.
    let eta_cap = 64.0 / f64::from(replicas) + 2.0 * load + 1.0;
    let growth = 1.01;
    let mut lo = load;
    let mut hi = load;
    let mut best = (lo, excess(lo));
    let bracket = loop {
        hi *= growth;
        if hi > eta_cap {
            break None;
        }
        let v = excess(hi);
        if v >= 0.0 {
            break Some(());
        }
        if v > best.1 {
            best = (hi, v);
        }
        lo = hi;
    };
    if bracket.is_none() {
        // A narrow peak may fall between grid points: refine around the best
        // grid value before declaring the load infeasible.
        let (mut a, mut b) = (best.0 / growth, best.0 * growth);
        let r = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let x1 = b - r * (b - a);
            let x2 = a + r * (b - a);
            if excess(x1) < excess(x2) {
                a = x1;
            } else {
                b = x2;
            }
        }
        let peak = 0.5 * (a + b);
        if excess(peak) < 0.0 {
            return Err(no_root);
        }
        lo = best.0 / growth;
        hi = peak;
        if excess(lo) >= 0.0 {
            lo = load;
        }
    }
    while hi - lo > BISECTION_TOLERANCE * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if excess(mid) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Per-`K` stationary intensities for `K = 1..=k_max`; infeasible `K` map to `None`.
pub fn hk_fixed_points(load: f64, erasure_prob: f64, k_max: u32) -> Result<Vec<Option<f64>>> {
    (1..=k_max)
        .map(|k| match hk_fixed_point(load, erasure_prob, k) {
            Ok(eta) => Ok(Some(eta)),
            Err(AsymptoticsError::NoRoot { .. }) => Ok(None),
            Err(e) => Err(e),
        })
        .collect()
}

/// Multi-replica limit with the replica count chosen by `selection`.
pub fn hk_limit(load: f64, erasure_prob: f64, k_max: u32, selection: KSelection) -> Result<AsymptoteResult> {
    if k_max == 0 {
        return Err(AsymptoticsError::InvalidArgument("k_max must be positive".into()));
    }
    let etas = hk_fixed_points(load, erasure_prob, k_max)?;
    let mut chosen: Option<(u32, f64)> = None;
    for (k, eta) in (1..=k_max).zip(etas) {
        let Some(eta) = eta else { continue };
        let better = match (chosen, selection) {
            (None, _) => true,
            (Some((_, e)), KSelection::MinBacklog) => eta < e,
            (Some((_, e)), KSelection::MaxIntensity) => eta > e,
        };
        if better {
            chosen = Some((k, eta));
        }
    }
    let (k_star, eta) = chosen.ok_or(AsymptoticsError::AllInfeasible { k_max, load, erasure_prob })?;
    Ok(AsymptoteResult { eta_star: (eta - load).max(0.0), k_star, total_intensity: eta })
}
