//! Slotted Monte Carlo simulator.
//!
//! Each slot: Poisson arrivals join the contenders, every contender transmits
//! with probability `p` on `K` distinct uniformly chosen channels, channels
//! with two or more replicas collide, single replicas are erased with
//! probability `γ`, and a device with at least one delivered replica leaves.
//!
//! Randomness comes from four independent ChaCha streams (arrivals, transmit
//! decisions, channel choice, erasures) so that switching controllers leaves
//! the arrival sample path untouched.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asymptotics::{in_stability_region, stability_boundary};
use crate::estimator::SlotObservation;
use crate::occupancy::PolicyTable;
use crate::policies::{A1Coefficients, Algorithm, ControlDecision, Controller, PolicyError};
use crate::stats::{batch_means_ci95, mean_ci95, Estimate};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("replication {index} failed: {source}")]
    Replication { index: usize, source: Box<EngineError> },
}

pub type Result<T> = std::result::Result<T, EngineError>;

/// Batches used for the within-run backlog confidence interval.
pub const BATCHES: usize = 20;

/// Parameters of one simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub n_channels: u32,
    /// Arrivals per slot per channel, `λ = Λ / M`.
    pub load_per_channel: f64,
    pub erasure_prob: f64,
    pub horizon_slots: u64,
    /// Defaults to 10% of the horizon when absent.
    #[serde(default)]
    pub warmup_slots: Option<u64>,
    pub seed: u64,
    pub algorithm: Algorithm,
    /// Optional cap on the announced replica count.
    #[serde(default)]
    pub k_max: Option<u32>,
    /// Keep the backlog of warm-up slots in `RunMetrics::backlog_series` too.
    #[serde(default)]
    pub record_full_series: bool,
    #[serde(default)]
    pub a1_coefficients: Option<A1Coefficients>,
}

impl SystemConfig {
    pub fn new(n_channels: u32, load_per_channel: f64, erasure_prob: f64, algorithm: Algorithm) -> Self {
        Self {
            n_channels,
            load_per_channel,
            erasure_prob,
            horizon_slots: 100_000,
            warmup_slots: None,
            seed: 1,
            algorithm,
            k_max: None,
            record_full_series: false,
            a1_coefficients: None,
        }
    }

    pub fn with_horizon(mut self, horizon_slots: u64, warmup_slots: u64) -> Self {
        self.horizon_slots = horizon_slots;
        self.warmup_slots = Some(warmup_slots);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn warmup(&self) -> u64 {
        self.warmup_slots.unwrap_or(self.horizon_slots / 10)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(EngineError::Config(msg));
        if self.n_channels == 0 {
            return bad("n_channels must be positive".into());
        }
        if !(self.load_per_channel >= 0.0 && self.load_per_channel.is_finite()) {
            return bad(format!("load_per_channel {} must be finite and >= 0", self.load_per_channel));
        }
        if !(0.0..1.0).contains(&self.erasure_prob) {
            return bad(format!("erasure_prob {} must lie in [0, 1)", self.erasure_prob));
        }
        if self.horizon_slots == 0 {
            return bad("horizon_slots must be positive".into());
        }
        if self.warmup() >= self.horizon_slots {
            return bad(format!("warmup_slots {} must be below horizon_slots {}", self.warmup(), self.horizon_slots));
        }
        if self.k_max == Some(0) {
            return bad("k_max must be positive when given".into());
        }
        if let Some(c) = self.a1_coefficients {
            A1Coefficients::new(c.idle, c.single, c.collision)?;
        }
        if !in_stability_region(self.load_per_channel, self.erasure_prob) {
            log::warn!(
                "load {} is at or beyond the stability boundary {:.6} for gamma={}",
                self.load_per_channel,
                stability_boundary(self.erasure_prob),
                self.erasure_prob
            );
        }
        Ok(())
    }

    pub fn controller(&self, table: Option<Arc<PolicyTable>>) -> Result<Controller> {
        Ok(Controller::new(
            self.algorithm,
            self.n_channels,
            self.erasure_prob,
            self.load_per_channel,
            table,
            self.a1_coefficients.unwrap_or_default(),
        )?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Device {
    pub id: u64,
    pub arrival_slot: u64,
}

/// Outcome of one slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotResult {
    pub slot: u64,
    pub observation: SlotObservation,
    pub departed: Vec<Device>,
    pub arrivals: u64,
    /// Contenders in the slot: backlog carried in plus new arrivals.
    pub contenders: u64,
    pub backlog_after: u64,
    pub decision_used: ControlDecision,
}

/// Independent random streams of one run.
#[derive(Debug, Clone)]
struct Streams {
    arrivals: ChaCha8Rng,
    decisions: ChaCha8Rng,
    channels: ChaCha8Rng,
    erasures: ChaCha8Rng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        let stream = |id: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(id);
            rng
        };
        Self { arrivals: stream(1), decisions: stream(2), channels: stream(3), erasures: stream(4) }
    }
}

/// Simulator state: the contender pool and the random streams.
#[derive(Debug, Clone)]
pub struct Simulator {
    n_channels: u32,
    erasure_prob: f64,
    arrivals: Option<Poisson<f64>>,
    streams: Streams,
    contenders: Vec<Device>,
    pending_arrivals: Option<u64>,
    next_id: u64,
    slot: u64,
    // Scratch buffers reused across slots.
    channel_perm: Vec<u32>,
    load: Vec<u32>,
    picks: Vec<u32>,
    transmitters: Vec<usize>,
}

impl Simulator {
    pub fn new(n_channels: u32, load_per_channel: f64, erasure_prob: f64, seed: u64) -> Self {
        let rate = load_per_channel * f64::from(n_channels);
        Self {
            n_channels,
            erasure_prob,
            arrivals: (rate > 0.0).then(|| Poisson::new(rate).expect("positive finite rate")),
            streams: Streams::new(seed),
            contenders: Vec::new(),
            pending_arrivals: None,
            next_id: 0,
            slot: 0,
            channel_perm: (0..n_channels).collect(),
            load: vec![0; n_channels as usize],
            picks: Vec::new(),
            transmitters: Vec::new(),
        }
    }

    pub fn from_config(config: &SystemConfig) -> Self {
        Self::new(config.n_channels, config.load_per_channel, config.erasure_prob, config.seed)
    }

    pub fn slot(&self) -> u64 {
        self.slot
    }

    pub fn backlog(&self) -> u64 {
        self.contenders.len() as u64
    }

    pub fn contenders(&self) -> &[Device] {
        &self.contenders
    }

    /// Inserts `count` devices arriving in the current slot.
    pub fn inject(&mut self, count: u64) {
        for _ in 0..count {
            self.contenders.push(Device { id: self.next_id, arrival_slot: self.slot });
            self.next_id += 1;
        }
    }

    /// Draws this slot's arrivals and returns the number of contenders.
    /// Idempotent within a slot.
    pub fn admit_arrivals(&mut self) -> u64 {
        if self.pending_arrivals.is_none() {
            let n = match &self.arrivals {
                Some(dist) => dist.sample(&mut self.streams.arrivals) as u64,
                None => 0,
            };
            self.inject(n);
            self.pending_arrivals = Some(n);
        }
        self.contenders.len() as u64
    }

    /// Plays the current slot under `decision` and advances to the next one.
    pub fn transmit(&mut self, decision: ControlDecision) -> SlotResult {
        self.admit_arrivals();
        let arrivals = self.pending_arrivals.take().expect("arrivals admitted");
        let m = self.n_channels as usize;
        let k = decision.replicas.min(self.n_channels) as usize;
        let contenders = self.contenders.len() as u64;

        self.transmitters.clear();
        for idx in 0..self.contenders.len() {
            let sends = decision.transmit_prob >= 1.0 || self.streams.decisions.gen::<f64>() < decision.transmit_prob;
            if sends {
                self.transmitters.push(idx);
            }
        }

        // Partial Fisher-Yates: the first k entries of the permutation form a
        // uniform k-subset.
        self.load.iter_mut().for_each(|l| *l = 0);
        self.picks.clear();
        for _ in 0..self.transmitters.len() {
            for j in 0..k {
                let r = self.streams.channels.gen_range(j..m);
                self.channel_perm.swap(j, r);
                let ch = self.channel_perm[j];
                self.picks.push(ch);
                self.load[ch as usize] += 1;
            }
        }

        let mut idle = 0u32;
        let mut singles = 0u32;
        for &l in &self.load {
            match l {
                0 => idle += 1,
                1 => singles += 1,
                _ => {}
            }
        }
        let collisions = self.n_channels - idle - singles;

        let mut success = vec![false; self.transmitters.len()];
        for (t, ok) in success.iter_mut().enumerate() {
            for &ch in &self.picks[t * k..(t + 1) * k] {
                if self.load[ch as usize] != 1 {
                    continue;
                }
                let erased = self.erasure_prob > 0.0 && self.streams.erasures.gen::<f64>() < self.erasure_prob;
                if !erased {
                    *ok = true;
                }
            }
        }

        let mut departed = Vec::new();
        for (t, &idx) in self.transmitters.iter().enumerate() {
            if success[t] {
                departed.push(self.contenders[idx]);
            }
        }
        if !departed.is_empty() {
            let mut keep = vec![true; self.contenders.len()];
            for (t, &idx) in self.transmitters.iter().enumerate() {
                if success[t] {
                    keep[idx] = false;
                }
            }
            let mut i = 0;
            self.contenders.retain(|_| {
                let k = keep[i];
                i += 1;
                k
            });
        }

        let observation = SlotObservation { idle, singles, collisions, successes: departed.len() as u32 };
        let result = SlotResult {
            slot: self.slot,
            observation,
            departed,
            arrivals,
            contenders,
            backlog_after: self.contenders.len() as u64,
            decision_used: ControlDecision { transmit_prob: decision.transmit_prob, replicas: k as u32 },
        };
        self.slot += 1;
        result
    }

    /// Arrivals followed by transmission, for callers whose decision does not
    /// depend on the contender count.
    pub fn step(&mut self, decision: ControlDecision) -> SlotResult {
        self.admit_arrivals();
        self.transmit(decision)
    }
}

/// Slot-level outcome of a single tagged slot with exactly `transmitters`
/// devices, each sending `replicas` replicas. Used to generate synthetic
/// estimator inputs.
pub fn sample_slot<R: Rng>(
    transmitters: u32,
    replicas: u32,
    n_channels: u32,
    erasure_prob: f64,
    rng: &mut R,
) -> SlotObservation {
    let m = n_channels as usize;
    let k = replicas.min(n_channels) as usize;
    let mut perm: Vec<u32> = (0..n_channels).collect();
    let mut load = vec![0u32; m];
    let mut picks = Vec::with_capacity(transmitters as usize * k);
    for _ in 0..transmitters {
        for j in 0..k {
            let r = rng.gen_range(j..m);
            perm.swap(j, r);
            picks.push(perm[j]);
            load[perm[j] as usize] += 1;
        }
    }
    let idle = load.iter().filter(|&&l| l == 0).count() as u32;
    let singles = load.iter().filter(|&&l| l == 1).count() as u32;
    let mut successes = 0;
    for chunk in picks.chunks(k.max(1)) {
        let delivered = chunk
            .iter()
            .filter(|&&ch| load[ch as usize] == 1)
            .fold(false, |acc, _| acc | (rng.gen::<f64>() >= erasure_prob));
        successes += u32::from(delivered);
    }
    SlotObservation { idle, singles, collisions: n_channels - idle - singles, successes }
}

/// Summary of one run, computed over post-warm-up slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub slots: u64,
    /// Devices carried over to the next slot (failed this slot), per channel.
    pub mean_backlog_per_channel: f64,
    /// Devices contending in a slot (backlog plus new arrivals), per channel.
    pub mean_contenders_per_channel: f64,
    /// Arrival-to-departure time, counting the arrival slot.
    pub mean_delay_slots: f64,
    pub throughput_per_channel: f64,
    /// Replica count announced per slot, averaged over slots.
    pub mean_replicas: f64,
    pub backlog_series: Vec<u32>,
    /// 95% half-width of the mean backlog per channel, by batch means.
    pub ci95_backlog: f64,
    pub departures: u64,
    pub estimator_failures: u64,
}

impl RunMetrics {
    /// Backlog per channel over the first and second halves of the
    /// post-warm-up window, each with a batch-means interval.
    pub fn half_split(&self, n_channels: u32) -> (Estimate, Estimate) {
        let start = self.backlog_series.len() - self.slots as usize;
        let window: Vec<f64> =
            self.backlog_series[start..].iter().map(|&b| f64::from(b) / f64::from(n_channels)).collect();
        let (a, b) = window.split_at(window.len() / 2);
        (batch_means_ci95(a, BATCHES), batch_means_ci95(b, BATCHES))
    }
}

/// Log target for per-slot records, emitted at trace level.
pub const TRACE_TARGET: &str = "replica_access::slots";

/// Runs one simulation. Per-slot records go to [`TRACE_TARGET`] when that
/// target is enabled at trace level.
pub fn run(config: &SystemConfig, controller: &mut Controller) -> Result<RunMetrics> {
    if log::log_enabled!(target: TRACE_TARGET, log::Level::Trace) {
        let seed = config.seed;
        run_with_trace(config, controller, |r| {
            log::trace!(
                target: TRACE_TARGET,
                "seed={seed} slot={} contenders={} backlog={} p={} K={} obs={}/{}/{}/{}",
                r.slot,
                r.contenders,
                r.backlog_after,
                r.decision_used.transmit_prob,
                r.decision_used.replicas,
                r.observation.idle,
                r.observation.singles,
                r.observation.collisions,
                r.observation.successes
            )
        })
    } else {
        run_with_trace(config, controller, |_| {})
    }
}

/// Runs one simulation, passing every slot result to `trace`.
pub fn run_with_trace(
    config: &SystemConfig,
    controller: &mut Controller,
    mut trace: impl FnMut(&SlotResult),
) -> Result<RunMetrics> {
    config.validate()?;
    if controller.algorithm() != config.algorithm {
        return Err(EngineError::Config(format!(
            "controller runs {} but the configuration selects {}",
            controller.algorithm(),
            config.algorithm
        )));
    }
    let m = config.n_channels;
    let warmup = config.warmup();
    let mut sim = Simulator::from_config(config);

    let measured = config.horizon_slots - warmup;
    let mut series =
        Vec::with_capacity(if config.record_full_series { config.horizon_slots as usize } else { measured as usize });
    let mut backlog_sum = 0u64;
    let mut contender_sum = 0u64;
    let mut replica_sum = 0u64;
    let mut departures = 0u64;
    let mut delay_sum = 0u64;

    for slot in 0..config.horizon_slots {
        let contenders = sim.admit_arrivals();
        let mut decision = controller.decide(contenders)?;
        if let Some(cap) = config.k_max {
            decision.replicas = decision.replicas.min(cap);
        }
        decision.validate(m)?;
        let result = sim.transmit(decision);
        controller.observe(&result.observation);
        trace(&result);

        let in_window = slot >= warmup;
        if in_window || config.record_full_series {
            series.push(result.backlog_after as u32);
        }
        if in_window {
            backlog_sum += result.backlog_after;
            contender_sum += result.contenders;
            replica_sum += u64::from(result.decision_used.replicas);
            departures += result.departed.len() as u64;
            delay_sum += result.departed.iter().map(|d| slot - d.arrival_slot + 1).sum::<u64>();
        }
    }

    let per_channel = |total: u64| total as f64 / (measured as f64 * f64::from(m));
    let window_start = series.len() - measured as usize;
    let per_slot: Vec<f64> = series[window_start..].iter().map(|&b| f64::from(b) / f64::from(m)).collect();
    Ok(RunMetrics {
        slots: measured,
        mean_backlog_per_channel: per_channel(backlog_sum),
        mean_contenders_per_channel: per_channel(contender_sum),
        mean_delay_slots: if departures > 0 { delay_sum as f64 / departures as f64 } else { 0.0 },
        throughput_per_channel: per_channel(departures),
        mean_replicas: replica_sum as f64 / measured as f64,
        backlog_series: series,
        ci95_backlog: batch_means_ci95(&per_slot, BATCHES).ci95,
        departures,
        estimator_failures: controller.estimator_failures(),
    })
}

/// Per-replication metrics plus Student-t intervals across replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicatedMetrics {
    pub base_seed: u64,
    pub runs: Vec<RunMetrics>,
    pub mean_backlog_per_channel: f64,
    pub ci95_backlog: f64,
    pub mean_contenders_per_channel: f64,
    pub mean_delay_slots: f64,
    pub ci95_delay: f64,
    pub throughput_per_channel: f64,
    pub mean_replicas: f64,
}

impl ReplicatedMetrics {
    fn aggregate(base_seed: u64, runs: Vec<RunMetrics>) -> Self {
        let col = |f: fn(&RunMetrics) -> f64| runs.iter().map(f).collect::<Vec<_>>();
        let backlog = mean_ci95(&col(|r| r.mean_backlog_per_channel));
        let delay = mean_ci95(&col(|r| r.mean_delay_slots));
        Self {
            base_seed,
            mean_backlog_per_channel: backlog.mean,
            ci95_backlog: backlog.ci95,
            mean_contenders_per_channel: mean_ci95(&col(|r| r.mean_contenders_per_channel)).mean,
            mean_delay_slots: delay.mean,
            ci95_delay: delay.ci95,
            throughput_per_channel: mean_ci95(&col(|r| r.throughput_per_channel)).mean,
            mean_replicas: mean_ci95(&col(|r| r.mean_replicas)).mean,
            runs,
        }
    }

    pub fn backlog_samples(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.mean_backlog_per_channel).collect()
    }
}

/// Runs `n_replications` independent replications; replication `r` uses seed
/// `config.seed + r`.
pub fn run_replicated(
    config: &SystemConfig,
    table: Option<Arc<PolicyTable>>,
    n_replications: usize,
) -> Result<ReplicatedMetrics> {
    if n_replications == 0 {
        return Err(EngineError::Config("n_replications must be at least 1".into()));
    }
    config.validate()?;
    let one = |r: usize| -> Result<RunMetrics> {
        let cfg = config.clone().with_seed(config.seed.wrapping_add(r as u64));
        let mut controller = cfg.controller(table.clone())?;
        run(&cfg, &mut controller).map_err(|e| EngineError::Replication { index: r, source: Box::new(e) })
    };
    #[cfg(feature = "parallel")]
    let runs: Vec<RunMetrics> = {
        use rayon::prelude::*;
        (0..n_replications).into_par_iter().map(one).collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let runs: Vec<RunMetrics> = (0..n_replications).map(one).collect::<Result<_>>()?;
    Ok(ReplicatedMetrics::aggregate(config.seed, runs))
}

#[cfg(test)]
mod tests {
    use super::*;

    const NEVER: ControlDecision = ControlDecision { transmit_prob: f64::MIN_POSITIVE, replicas: 1 };

    #[test]
    fn silent_slot_reports_all_idle() {
        let mut sim = Simulator::new(10, 0.5, 0.0, 3);
        let mut total = 0;
        for _ in 0..50 {
            let before = sim.backlog();
            let r = sim.step(NEVER);
            assert_eq!(r.observation, SlotObservation { idle: 10, singles: 0, collisions: 0, successes: 0 });
            assert_eq!(r.backlog_after, before + r.arrivals);
            total += r.arrivals;
        }
        assert_eq!(sim.backlog(), total);
    }

    #[test]
    fn lone_transmitter_without_erasure_succeeds() {
        let mut sim = Simulator::new(8, 0.0, 0.0, 7);
        sim.inject(1);
        let r = sim.step(ControlDecision { transmit_prob: 1.0, replicas: 3 });
        assert_eq!(r.observation, SlotObservation { idle: 5, singles: 3, collisions: 0, successes: 1 });
        assert_eq!(r.backlog_after, 0);
        assert_eq!(r.departed[0].id, 0);
    }

    #[test]
    fn full_overlap_collides_everywhere() {
        let mut sim = Simulator::new(6, 0.0, 0.0, 11);
        sim.inject(2);
        let r = sim.step(ControlDecision { transmit_prob: 1.0, replicas: 6 });
        assert_eq!(r.observation, SlotObservation { idle: 0, singles: 0, collisions: 6, successes: 0 });
        assert_eq!(r.backlog_after, 2);
    }

    #[test]
    fn per_slot_invariants_hold() {
        let mut sim = Simulator::new(7, 0.3, 0.25, 5);
        let mut seen = std::collections::HashSet::new();
        let mut departed_ids = std::collections::HashSet::new();
        for t in 0..5000u64 {
            let before = sim.backlog();
            let n = sim.admit_arrivals();
            let decision = ControlDecision {
                transmit_prob: if n > 7 { 7.0 / n as f64 } else { 1.0 },
                replicas: 1 + (t % 3) as u32,
            };
            let r = sim.transmit(decision);
            let o = r.observation;
            assert_eq!(o.idle + o.singles + o.collisions, 7);
            assert!(o.successes <= o.singles);
            assert_eq!(before + r.arrivals - r.departed.len() as u64, r.backlog_after);
            for d in &r.departed {
                assert!(departed_ids.insert(d.id));
            }
            for d in sim.contenders() {
                seen.insert(d.id);
                assert!(!departed_ids.contains(&d.id));
            }
        }
    }

    #[test]
    fn without_erasure_successes_equal_singleton_owners() {
        let mut sim = Simulator::new(6, 0.0, 0.0, 9);
        for _ in 0..2000 {
            sim.inject(4u64.saturating_sub(sim.backlog()));
            let r = sim.step(ControlDecision { transmit_prob: 0.8, replicas: 2 });
            let owners = sim.picks.chunks(2).filter(|chunk| chunk.iter().any(|&ch| sim.load[ch as usize] == 1)).count();
            assert_eq!(r.observation.successes as usize, owners);
        }
    }

    #[test]
    fn channel_subsets_are_uniform() {
        // Chi-square over the C(5,2) = 10 subsets chosen by a lone device.
        let mut sim = Simulator::new(5, 0.0, 0.0, 21);
        let mut counts = std::collections::HashMap::new();
        let trials = 20_000;
        for _ in 0..trials {
            sim.inject(1);
            sim.admit_arrivals();
            let k = 2;
            let r = sim.transmit(ControlDecision { transmit_prob: 1.0, replicas: k });
            assert_eq!(r.observation.singles, 2);
            let mut chosen: Vec<u32> = sim.picks.clone();
            chosen.sort_unstable();
            *counts.entry(chosen).or_insert(0u32) += 1;
        }
        assert_eq!(counts.len(), 10);
        let expected = trials as f64 / 10.0;
        let chi2: f64 = counts.values().map(|&c| (f64::from(c) - expected).powi(2) / expected).sum();
        // 99.9% quantile of chi-square with 9 dof.
        assert!(chi2 < 27.88, "chi2 = {chi2}");
    }

    #[test]
    fn zero_load_gives_empty_metrics() {
        let cfg = SystemConfig::new(10, 0.0, 0.0, Algorithm::A1).with_horizon(2000, 200);
        let mut ctl = cfg.controller(None).unwrap();
        let m = run(&cfg, &mut ctl).unwrap();
        assert_eq!(m.mean_backlog_per_channel, 0.0);
        assert_eq!(m.throughput_per_channel, 0.0);
        assert_eq!(m.backlog_series.len(), 1800);
    }

    #[test]
    fn config_validation() {
        let ok = SystemConfig::new(10, 0.1, 0.0, Algorithm::H1).with_horizon(100, 10);
        assert!(ok.validate().is_ok());
        assert!(SystemConfig { warmup_slots: Some(100), ..ok.clone() }.validate().is_err());
        assert!(SystemConfig { n_channels: 0, ..ok.clone() }.validate().is_err());
        assert!(SystemConfig { erasure_prob: 1.0, ..ok.clone() }.validate().is_err());
        assert!(SystemConfig { k_max: Some(0), ..ok.clone() }.validate().is_err());
        assert_eq!(SystemConfig { warmup_slots: None, ..ok }.warmup(), 10);
    }

    #[test]
    fn arrival_path_is_controller_independent() {
        let arrivals = |decision: ControlDecision| {
            let mut sim = Simulator::new(10, 0.2, 0.1, 99);
            (0..500).map(|_| sim.step(decision).arrivals).collect::<Vec<_>>()
        };
        assert_eq!(
            arrivals(ControlDecision::ALWAYS_SINGLE),
            arrivals(ControlDecision { transmit_prob: 0.3, replicas: 4 })
        );
    }

    #[test]
    fn run_is_deterministic() {
        let cfg = SystemConfig::new(10, 0.2, 0.1, Algorithm::A1).with_horizon(5000, 500).with_seed(42);
        let a = run(&cfg, &mut cfg.controller(None).unwrap()).unwrap();
        let b = run(&cfg, &mut cfg.controller(None).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_replication_has_degenerate_interval() {
        let cfg = SystemConfig::new(10, 0.2, 0.0, Algorithm::H1).with_horizon(3000, 300).with_seed(5);
        let rep = run_replicated(&cfg, None, 1).unwrap();
        let single = run(&cfg, &mut cfg.controller(None).unwrap()).unwrap();
        assert_eq!(rep.runs[0], single);
        assert_eq!(rep.mean_backlog_per_channel, single.mean_backlog_per_channel);
        assert_eq!(rep.ci95_backlog, 0.0);
        assert!(run_replicated(&cfg, None, 0).is_err());
    }

    #[test]
    fn mismatched_controller_is_rejected() {
        let cfg = SystemConfig::new(10, 0.2, 0.0, Algorithm::H1).with_horizon(100, 10);
        let other = SystemConfig { algorithm: Algorithm::A1, ..cfg.clone() };
        let mut ctl = other.controller(None).unwrap();
        assert!(matches!(run(&cfg, &mut ctl), Err(EngineError::Config(_))));
    }
}
