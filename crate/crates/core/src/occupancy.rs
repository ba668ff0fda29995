//! Per-slot delivery probability of a tagged device that sends `K` replicas on
//! distinct channels while `N - 1` other devices do the same.
//!
//! Two evaluation routes are provided:
//!
//! * the occupancy-problem route ([`prob_all_occupied`], [`prob_exactly_n_empty`],
//!   [`prob_lost_given_empty`], [`prob_success`]) built on inclusion–exclusion
//!   sums, evaluated in the log domain with sign tracking and compensated
//!   summation. These sums cancel heavily once `M` grows past a few dozen; the
//!   functions report [`OccupancyError::NumericalInstability`] instead of
//!   returning a polluted value.
//! * a positive-term recursion ([`SuccessCurve`]) over the number of the tagged
//!   device's channels already hit by other devices. It never cancels and is what
//!   [`build_policy_table`] uses.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{ln_choose, sum_signed_log_terms, NeumaierSum, SeriesSum, SignedLogTerm};

/// Version tag written into policy table cache files.
pub const POLICY_TABLE_VERSION: u32 = 1;

/// Largest out-of-range excursion (or rounding bound) tolerated before a
/// probability is rejected as numerically unreliable.
pub const CLAMP_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OccupancyError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("numerical instability in {context}: raw value {raw}, rounding bound {bound:e}")]
    NumericalInstability { context: String, raw: f64, bound: f64 },
    #[error("policy table evaluation failed at N={n_devices}, K={replicas}: {reason}")]
    TableEvaluation { n_devices: u32, replicas: u32, reason: String },
    #[error(
        "policy table mismatch: expected M={expected_channels}, gamma={expected_gamma}; \
         found M={found_channels}, gamma={found_gamma}"
    )]
    TableMismatch { expected_channels: u32, expected_gamma: f64, found_channels: u32, found_gamma: f64 },
    #[error("malformed policy table: {0}")]
    Malformed(String),
}

pub type Result<T> = std::result::Result<T, OccupancyError>;

/// Parameters of one success-probability evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuccessParams {
    n_devices: u32,
    n_channels: u32,
    erasure_prob: f64,
    replicas: u32,
}

impl SuccessParams {
    pub fn new(n_devices: u32, n_channels: u32, erasure_prob: f64, replicas: u32) -> Result<Self> {
        if n_devices == 0 {
            return Err(OccupancyError::InvalidParams("n_devices must be positive".into()));
        }
        validate_channels_replicas(n_channels, replicas)?;
        validate_erasure(erasure_prob)?;
        Ok(Self { n_devices, n_channels, erasure_prob, replicas })
    }

    pub fn n_devices(&self) -> u32 {
        self.n_devices
    }

    pub fn n_channels(&self) -> u32 {
        self.n_channels
    }

    pub fn erasure_prob(&self) -> f64 {
        self.erasure_prob
    }

    pub fn replicas(&self) -> u32 {
        self.replicas
    }
}

fn validate_channels_replicas(n_channels: u32, replicas: u32) -> Result<()> {
    if n_channels == 0 {
        return Err(OccupancyError::InvalidParams("n_channels must be positive".into()));
    }
    if replicas == 0 || replicas > n_channels {
        return Err(OccupancyError::InvalidParams(format!("replicas must lie in [1, {n_channels}], got {replicas}")));
    }
    Ok(())
}

fn validate_erasure(erasure_prob: f64) -> Result<()> {
    if !(0.0..1.0).contains(&erasure_prob) {
        return Err(OccupancyError::InvalidParams(format!(
            "erasure probability must lie in [0, 1), got {erasure_prob}"
        )));
    }
    Ok(())
}

fn checked_probability(raw: f64, bound: f64, context: impl FnOnce() -> String) -> Result<f64> {
    let excursion = if raw < 0.0 { -raw } else { (raw - 1.0).max(0.0) };
    if !raw.is_finite() || excursion > CLAMP_TOLERANCE || bound > CLAMP_TOLERANCE {
        return Err(OccupancyError::NumericalInstability { context: context(), raw, bound });
    }
    Ok(raw.clamp(0.0, 1.0))
}

/// Inclusion–exclusion sum for `devices` devices covering all `m` channels,
/// with the binomial ratio raised to `devices` in the log domain.
fn all_occupied_series(m: u32, devices: u32, replicas: u32) -> (SeriesSum, usize) {
    if devices == 0 || m < replicas || u64::from(m) > u64::from(replicas) * u64::from(devices) {
        return (SeriesSum { value: 0.0, absolute_mass: 0.0 }, 0);
    }
    let (m, k, d) = (u64::from(m), u64::from(replicas), f64::from(devices));
    let ln_total = ln_choose(m, k);
    let terms: Vec<_> = (0..=m - k)
        .map(|v| {
            let ln_ratio = ln_choose(m - v, k) - ln_total;
            SignedLogTerm::new(v % 2 == 1, ln_choose(m, v) + d * ln_ratio)
        })
        .collect();
    (sum_signed_log_terms(&terms), terms.len())
}

/// Probability that `devices` devices, each picking `replicas` distinct channels
/// uniformly out of `m`, leave no channel empty.
pub fn prob_all_occupied(m: u32, devices: u32, replicas: u32) -> Result<f64> {
    if replicas == 0 || replicas > m {
        return Err(OccupancyError::InvalidParams(format!("replicas must lie in [1, {m}], got {replicas}")));
    }
    let (sum, n_terms) = all_occupied_series(m, devices, replicas);
    checked_probability(sum.value, sum.rounding_bound(n_terms), || {
        format!("prob_all_occupied(m={m}, devices={devices}, K={replicas})")
    })
}

/// Range of `n` (channels left empty by the other `N - 1` devices) with
/// non-zero probability, for `N >= 2`.
fn empty_range(params: &SuccessParams) -> (u32, u32) {
    let others = u64::from(params.n_devices - 1);
    let m = params.n_channels;
    let covered = u64::from(params.replicas) * others;
    let lo = u64::from(m).saturating_sub(covered) as u32;
    (lo, m - params.replicas)
}

fn exactly_n_empty_series(n: u32, params: &SuccessParams) -> (SeriesSum, usize) {
    let zero = (SeriesSum { value: 0.0, absolute_mass: 0.0 }, 0);
    let others = params.n_devices - 1;
    if others == 0 {
        let value = if n == params.n_channels { 1.0 } else { 0.0 };
        return (SeriesSum { value, absolute_mass: value }, 1);
    }
    let (lo, hi) = empty_range(params);
    if n < lo || n > hi {
        return zero;
    }
    let (m, k, n) = (u64::from(params.n_channels), u64::from(params.replicas), u64::from(n));
    let d = f64::from(others);
    let ln_total = ln_choose(m, k);
    let ln_pick_empty = ln_choose(m, n);
    let terms: Vec<_> = (0..=m - n - k)
        .map(|v| {
            let ln_ratio = ln_choose(m - n - v, k) - ln_total;
            SignedLogTerm::new(v % 2 == 1, ln_pick_empty + ln_choose(m - n, v) + d * ln_ratio)
        })
        .collect();
    (sum_signed_log_terms(&terms), terms.len())
}

/// Probability that exactly `n` of the `M` channels carry no replica from the
/// `N - 1` devices other than the tagged one.
///
/// With a single device (`N = 1`) every channel is empty, so the mass sits at
/// `n = M`.
pub fn prob_exactly_n_empty(n: u32, params: &SuccessParams) -> Result<f64> {
    let (sum, n_terms) = exactly_n_empty_series(n, params);
    checked_probability(sum.value, sum.rounding_bound(n_terms), || format!("prob_exactly_n_empty(n={n}, {params:?})"))
}

/// Probability that all `K` replicas of the tagged device are lost when exactly
/// `n` channels are free of other devices' replicas.
///
/// The tagged device's `K` distinct channels split hypergeometrically between
/// the `M - n` occupied channels (collisions) and the `n` free ones; each
/// replica on a free channel is erased independently with probability `γ`.
pub fn prob_lost_given_empty(n: u32, n_channels: u32, replicas: u32, erasure_prob: f64) -> Result<f64> {
    validate_channels_replicas(n_channels, replicas)?;
    validate_erasure(erasure_prob)?;
    if n > n_channels {
        return Err(OccupancyError::InvalidParams(format!("empty channel count {n} exceeds M={n_channels}")));
    }
    let (m, k, n64) = (u64::from(n_channels), u64::from(replicas), u64::from(n));
    let ln_total = ln_choose(m, k);
    let lo = k.saturating_sub(n64);
    let hi = k.min(m - n64);
    let loss: NeumaierSum = (lo..=hi)
        .map(|collided| {
            let ln_w = ln_choose(m - n64, collided) + ln_choose(n64, k - collided) - ln_total;
            ln_w.exp() * erasure_prob.powi((k - collided) as i32)
        })
        .collect();
    Ok(loss.total().clamp(0.0, 1.0))
}

/// Loss probability under independent (with-replacement) replica placement:
/// each replica collides with probability `(M - n) / M`.
///
/// Kept for comparison with [`prob_lost_given_empty`]; it only approximates the
/// distinct-channel model and is not used by the controllers.
pub fn prob_lost_given_empty_with_replacement(
    n: u32,
    n_channels: u32,
    replicas: u32,
    erasure_prob: f64,
) -> Result<f64> {
    validate_channels_replicas(n_channels, replicas)?;
    validate_erasure(erasure_prob)?;
    if n > n_channels {
        return Err(OccupancyError::InvalidParams(format!("empty channel count {n} exceeds M={n_channels}")));
    }
    let m = f64::from(n_channels);
    let occupied = f64::from(n_channels - n) / m;
    let free = f64::from(n) / m;
    let k = u64::from(replicas);
    let loss: NeumaierSum = (k.saturating_sub(u64::from(n))..=k)
        .map(|collided| {
            ln_choose(k, collided).exp()
                * erasure_prob.powi((k - collided) as i32)
                * occupied.powi(collided as i32)
                * free.powi((k - collided) as i32)
        })
        .collect();
    Ok(loss.total().clamp(0.0, 1.0))
}

/// Delivery probability through the occupancy-problem decomposition
/// `1 - Σ_n p_lost|n · p_n(N-1)`.
pub fn prob_success(params: &SuccessParams) -> Result<f64> {
    let k = params.replicas;
    let gamma = params.erasure_prob;
    if params.n_devices == 1 {
        return Ok(1.0 - gamma.powi(k as i32));
    }
    let (lo, hi) = empty_range(params);
    let mut loss = NeumaierSum::default();
    let mut bound = 0.0;
    for n in lo..=hi {
        let (p_n, n_terms) = exactly_n_empty_series(n, params);
        let lost = prob_lost_given_empty(n, params.n_channels, k, gamma)?;
        loss.add(lost * p_n.value);
        bound += lost * p_n.rounding_bound(n_terms);
    }
    checked_probability(1.0 - loss.total(), bound, || format!("prob_success({params:?})"))
}

/// Delivery probability of the tagged device for `N = 1, 2, 3, ...` at fixed
/// `(M, K, γ)`.
///
/// The state is the distribution of how many of the tagged device's `K`
/// channels have been hit by the other devices so far; each further device
/// lands on `x` new tagged channels with a hypergeometric law.
#[derive(Debug, Clone)]
pub struct SuccessCurve {
    replicas: usize,
    /// `transition[j][x]`: probability that one more device hits `x` of the
    /// `K - j` still-untouched tagged channels.
    transition: Vec<Vec<f64>>,
    /// `erasure_pow[j] = γ^(K - j)`.
    erasure_pow: Vec<f64>,
    hit: Vec<f64>,
    next_n: u32,
}

impl SuccessCurve {
    pub fn new(n_channels: u32, erasure_prob: f64, replicas: u32) -> Result<Self> {
        validate_channels_replicas(n_channels, replicas)?;
        validate_erasure(erasure_prob)?;
        let (m, k) = (u64::from(n_channels), u64::from(replicas));
        let ln_total = ln_choose(m, k);
        let transition = (0..=k)
            .map(|j| {
                let untouched = k - j;
                let others = m - untouched;
                let mut row: Vec<f64> = (0..=untouched)
                    .map(|x| (ln_choose(untouched, x) + ln_choose(others, k - x) - ln_total).exp())
                    .collect();
                let total: NeumaierSum = row.iter().copied().collect();
                let total = total.total();
                row.iter_mut().for_each(|p| *p /= total);
                row
            })
            .collect();
        let erasure_pow = (0..=k).map(|j| erasure_prob.powi((k - j) as i32)).collect();
        let mut hit = vec![0.0; replicas as usize + 1];
        hit[0] = 1.0;
        Ok(Self { replicas: replicas as usize, transition, erasure_pow, hit, next_n: 1 })
    }

    /// Device count `N` whose success probability the next call yields.
    pub fn next_n(&self) -> u32 {
        self.next_n
    }

    fn current_loss(&self) -> f64 {
        let loss: NeumaierSum = self.hit.iter().zip(&self.erasure_pow).map(|(p, g)| p * g).collect();
        loss.total()
    }

    fn add_device(&mut self) {
        let k = self.replicas;
        let mut next = vec![0.0; k + 1];
        for (j, &p) in self.hit.iter().enumerate() {
            if p < 1e-300 {
                continue;
            }
            for (x, &t) in self.transition[j].iter().enumerate() {
                next[j + x] += p * t;
            }
        }
        self.hit = next;
    }
}

impl Iterator for SuccessCurve {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        let p_s = (1.0 - self.current_loss()).clamp(0.0, 1.0);
        self.add_device();
        self.next_n += 1;
        Some(p_s)
    }
}

/// Delivery probability through the positive-term recursion of [`SuccessCurve`].
pub fn prob_success_recursive(params: &SuccessParams) -> f64 {
    SuccessCurve::new(params.n_channels, params.erasure_prob, params.replicas)
        .expect("validated params")
        .nth(params.n_devices as usize - 1)
        .expect("infinite iterator")
}

/// `true` when `K` replicas provably cannot beat a single replica at `N` devices.
///
/// Uses `p_s(N, K) <= K ((M-K)/M)^(N-1)` (some tagged channel must stay free of
/// other devices) against the exact single-replica value
/// `(1-γ)((M-1)/M)^(N-1)`. Once true for some `N`, it stays true for all larger `N`.
fn cannot_beat_single(n_devices: u32, n_channels: u32, erasure_prob: f64, replicas: u32) -> bool {
    if replicas == 1 || n_devices == 1 {
        return false;
    }
    let (m, k) = (f64::from(n_channels), f64::from(replicas));
    let others = f64::from(n_devices - 1);
    let ln_bound = k.ln() + others * ((m - k) / m).ln();
    let ln_single = (1.0 - erasure_prob).ln() + others * ((m - 1.0) / m).ln();
    ln_bound < ln_single + (1.0 - 1e-6f64).ln()
}

/// Replica count maximising delivery probability, with the value achieved.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicaChoice {
    pub replicas: u32,
    pub success_prob: f64,
}

/// Smallest `K` in `[1, M]` maximising the delivery probability for `N` devices.
pub fn optimal_replicas(n_devices: u32, n_channels: u32, erasure_prob: f64) -> Result<ReplicaChoice> {
    SuccessParams::new(n_devices, n_channels, erasure_prob, 1)?;
    let mut best = ReplicaChoice { replicas: 0, success_prob: f64::NEG_INFINITY };
    for k in 1..=n_channels {
        if cannot_beat_single(n_devices, n_channels, erasure_prob, k) {
            continue;
        }
        let params = SuccessParams::new(n_devices, n_channels, erasure_prob, k)?;
        let p = prob_success_recursive(&params);
        if !p.is_finite() {
            return Err(OccupancyError::TableEvaluation {
                n_devices,
                replicas: k,
                reason: format!("non-finite success probability {p}"),
            });
        }
        if p > best.success_prob {
            best = ReplicaChoice { replicas: k, success_prob: p };
        }
    }
    Ok(best)
}

/// One row of a [`PolicyTable`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyEntry {
    #[serde(rename = "N")]
    pub n_devices: u32,
    #[serde(rename = "K")]
    pub replicas: u32,
    #[serde(rename = "p_s")]
    pub success_prob: f64,
}

/// Precomputed map `N -> K*` for fixed `(M, γ)`, `N = 1..=n_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    n_channels: u32,
    erasure_prob: f64,
    entries: Vec<PolicyEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyTableFile {
    version: u32,
    #[serde(rename = "M")]
    n_channels: u32,
    gamma: f64,
    n_max: u32,
    entries: Vec<PolicyEntry>,
}

impl PolicyTable {
    pub fn n_channels(&self) -> u32 {
        self.n_channels
    }

    pub fn erasure_prob(&self) -> f64 {
        self.erasure_prob
    }

    pub fn n_max(&self) -> u32 {
        self.entries.len() as u32
    }

    pub fn entries(&self) -> &[PolicyEntry] {
        &self.entries
    }

    pub fn matches(&self, n_channels: u32, erasure_prob: f64) -> bool {
        self.n_channels == n_channels && self.erasure_prob == erasure_prob
    }

    pub fn ensure_matches(&self, n_channels: u32, erasure_prob: f64) -> Result<()> {
        if self.matches(n_channels, erasure_prob) {
            Ok(())
        } else {
            Err(OccupancyError::TableMismatch {
                expected_channels: n_channels,
                expected_gamma: erasure_prob,
                found_channels: self.n_channels,
                found_gamma: self.erasure_prob,
            })
        }
    }

    pub fn entry(&self, n_devices: u32) -> Option<&PolicyEntry> {
        n_devices.checked_sub(1).and_then(|i| self.entries.get(i as usize))
    }

    /// `K*` for `N` devices; falls back to a single replica outside `[1, n_max]`.
    pub fn replicas_for(&self, n_devices: u32) -> u32 {
        self.entry(n_devices).map_or(1, |e| e.replicas)
    }

    pub fn to_json(&self) -> String {
        let file = PolicyTableFile {
            version: POLICY_TABLE_VERSION,
            n_channels: self.n_channels,
            gamma: self.erasure_prob,
            n_max: self.n_max(),
            entries: self.entries.clone(),
        };
        let mut text = serde_json::to_string_pretty(&file).expect("policy table serializes");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: PolicyTableFile = serde_json::from_str(text).map_err(|e| OccupancyError::Malformed(e.to_string()))?;
        if file.version != POLICY_TABLE_VERSION {
            return Err(OccupancyError::Malformed(format!(
                "unsupported version {} (expected {POLICY_TABLE_VERSION})",
                file.version
            )));
        }
        validate_erasure(file.gamma)?;
        if file.n_channels == 0 || file.n_max == 0 {
            return Err(OccupancyError::Malformed("M and n_max must be positive".into()));
        }
        if file.entries.len() != file.n_max as usize {
            return Err(OccupancyError::Malformed(format!(
                "expected {} entries, found {}",
                file.n_max,
                file.entries.len()
            )));
        }
        for (i, e) in file.entries.iter().enumerate() {
            let well_formed = e.n_devices as usize == i + 1
                && (1..=file.n_channels).contains(&e.replicas)
                && (0.0..=1.0).contains(&e.success_prob);
            if !well_formed {
                return Err(OccupancyError::Malformed(format!("bad entry at position {i}: {e:?}")));
            }
        }
        Ok(Self { n_channels: file.n_channels, erasure_prob: file.gamma, entries: file.entries })
    }

    /// Parses a cache file and rejects it unless it was built for `(M, γ)`.
    pub fn from_json_for(text: &str, n_channels: u32, erasure_prob: f64) -> Result<Self> {
        let table = Self::from_json(text)?;
        table.ensure_matches(n_channels, erasure_prob)?;
        Ok(table)
    }
}

/// Default table domain bound, `4M`.
pub fn default_n_max(n_channels: u32) -> u32 {
    n_channels.saturating_mul(4).max(1)
}

/// Per-`K` success probabilities for `N = 1..` until `K` can no longer win.
fn candidate_column(n_channels: u32, erasure_prob: f64, replicas: u32, n_max: u32) -> Result<Vec<f64>> {
    let curve = SuccessCurve::new(n_channels, erasure_prob, replicas)?;
    let mut column = Vec::new();
    for (i, p) in curve.enumerate() {
        let n = i as u32 + 1;
        if n > n_max || cannot_beat_single(n, n_channels, erasure_prob, replicas) {
            break;
        }
        if !p.is_finite() {
            return Err(OccupancyError::TableEvaluation {
                n_devices: n,
                replicas,
                reason: format!("non-finite success probability {p}"),
            });
        }
        column.push(p);
    }
    Ok(column)
}

/// Builds the `N -> K*` table for `N = 1..=n_max`.
pub fn build_policy_table(n_channels: u32, erasure_prob: f64, n_max: u32) -> Result<PolicyTable> {
    if n_max == 0 {
        return Err(OccupancyError::InvalidParams("n_max must be positive".into()));
    }
    SuccessParams::new(1, n_channels, erasure_prob, 1)?;

    let ks: Vec<u32> = (1..=n_channels).collect();
    #[cfg(feature = "parallel")]
    let columns: Vec<Vec<f64>> = {
        use rayon::prelude::*;
        ks.par_iter().map(|&k| candidate_column(n_channels, erasure_prob, k, n_max)).collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let columns: Vec<Vec<f64>> =
        ks.iter().map(|&k| candidate_column(n_channels, erasure_prob, k, n_max)).collect::<Result<_>>()?;

    let entries = (1..=n_max)
        .map(|n| {
            let idx = (n - 1) as usize;
            let mut best = PolicyEntry { n_devices: n, replicas: 1, success_prob: columns[0][idx] };
            for (k, column) in ks.iter().zip(&columns).skip(1) {
                match column.get(idx) {
                    Some(&p) if p > best.success_prob => {
                        best = PolicyEntry { n_devices: n, replicas: *k, success_prob: p };
                    }
                    _ => {}
                }
            }
            best
        })
        .collect();
    Ok(PolicyTable { n_channels, erasure_prob, entries })
}
