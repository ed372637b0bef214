//! Seeded Monte Carlo trajectories.
//!
//! Each trajectory owns four independent ChaCha streams. Per slot the channel
//! stream yields one draw, the policy stream one, the arrival stream one, and
//! the interference stream one per sub-slot, so swapping the policy never
//! shifts the channel or interference sample paths.
//!
//! Seeds: replication `r` of base seed `s` runs with `splitmix64(s ^ r)`, and
//! stream `k` of a trajectory seed `t` with `splitmix64(t ^ STREAM_TAGS[k])`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dp::{PolicyTable, ValueTable};
use crate::error::{Error, Result};
use crate::model::{stage_cost, step, InterferenceChain, State, SystemSpec};
use crate::policy::{Observation, Policy};

const STREAM_TAGS: [u64; 4] = [
    0x6368_616e_6e65_6c00, // channel success
    0x696e_7465_7266_0000, // interference
    0x706f_6c69_6379_0000, // policy
    0x6172_7269_7661_6c00, // arrivals
];

/// One round of the splitmix64 output function.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of replication `r` under `base_seed`.
pub fn replication_seed(base_seed: u64, r: u64) -> u64 {
    splitmix64(base_seed ^ r)
}

struct Streams {
    channel: ChaCha8Rng,
    interference: ChaCha8Rng,
    policy: ChaCha8Rng,
    arrivals: ChaCha8Rng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        let rng = |k: usize| ChaCha8Rng::seed_from_u64(splitmix64(seed ^ STREAM_TAGS[k]));
        Streams {
            channel: rng(0),
            interference: rng(1),
            policy: rng(2),
            arrivals: rng(3),
        }
    }
}

/// Where the interference chain starts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "InitialRepr", into = "InitialRepr")]
pub enum InitialInterference {
    /// Drawn from the chain's stationary distribution.
    #[default]
    Stationary,
    /// Pinned to a 0-based state index (1-based in config files).
    State(usize),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum InitialRepr {
    Named(String),
    OneBased(usize),
}

impl TryFrom<InitialRepr> for InitialInterference {
    type Error = String;

    fn try_from(r: InitialRepr) -> std::result::Result<Self, String> {
        match r {
            InitialRepr::Named(s) if s == "stationary" => Ok(InitialInterference::Stationary),
            InitialRepr::Named(s) => Err(format!(
                "expected \"stationary\" or a 1-based state index, got \"{s}\""
            )),
            InitialRepr::OneBased(0) => Err("state indices are 1-based".into()),
            InitialRepr::OneBased(k) => Ok(InitialInterference::State(k - 1)),
        }
    }
}

impl From<InitialInterference> for InitialRepr {
    fn from(i: InitialInterference) -> Self {
        match i {
            InitialInterference::Stationary => InitialRepr::Named("stationary".into()),
            InitialInterference::State(k) => InitialRepr::OneBased(k + 1),
        }
    }
}

/// Monte Carlo settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub replications: usize,
    pub base_seed: u64,
    /// Defaults to `100 * B * D`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_slots: Option<u64>,
    #[serde(default)]
    pub initial_interference: InitialInterference,
}

impl SimConfig {
    pub fn new(replications: usize, base_seed: u64) -> Self {
        SimConfig {
            replications,
            base_seed,
            max_slots: None,
            initial_interference: InitialInterference::Stationary,
        }
    }

    pub fn max_slots_for(&self, spec: &SystemSpec) -> u64 {
        self.max_slots
            .unwrap_or(100 * spec.backlog as u64 * spec.deadline as u64)
    }

    pub fn validate(&self, spec: &SystemSpec, field: &str) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::invalid(
                format!("{field}.replications"),
                "at least one replication is required",
            ));
        }
        if self.max_slots == Some(0) {
            return Err(Error::invalid(format!("{field}.max_slots"), "must be positive"));
        }
        if let InitialInterference::State(k) = self.initial_interference {
            if k >= spec.num_states() {
                return Err(Error::invalid(
                    format!("{field}.initial_interference"),
                    format!("state {} does not exist", k + 1),
                ));
            }
        }
        Ok(())
    }
}

/// Outcome of a single trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrajectoryRecord {
    pub total_cost: f64,
    pub slots: u64,
    /// Packets that left the buffer, delivered or dropped.
    pub packets_departed: u64,
    pub packets_dropped: u64,
    pub total_power: f64,
    /// The slot cap was hit before the buffer emptied.
    pub truncated: bool,
}

/// One row of the optional per-slot log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotEvent {
    pub slot: u64,
    pub backlog: usize,
    pub residual_deadline: usize,
    /// State index seen at decision time.
    pub interference: usize,
    pub interference_level: f64,
    pub power: f64,
    pub success: bool,
    pub arrival: bool,
    pub stage_cost: f64,
}

/// Run one trajectory from the configured start. `policy` should be fresh.
pub fn run_trajectory(
    spec: &SystemSpec,
    policy: &mut Policy,
    seed: u64,
    max_slots: u64,
    initial: InitialInterference,
    mut log: Option<&mut Vec<SlotEvent>>,
) -> TrajectoryRecord {
    let mut rng = Streams::new(seed);
    let chain: &InterferenceChain = &spec.interference;
    let i0 = match initial {
        InitialInterference::State(k) => k,
        InitialInterference::Stationary => {
            InterferenceChain::sample_from(&chain.stationary(), rng.interference.random())
        }
    };
    let two_timescale = chain.subslots_per_slot() == 2;
    let mut state = spec.start_state(i0);
    let mut rec = TrajectoryRecord::default();

    while !state.is_terminal() {
        if rec.slots >= max_slots {
            rec.truncated = true;
            break;
        }
        let obs = Observation {
            backlog: state.backlog,
            residual_deadline: state.residual_deadline,
            interference: state.interference,
        };
        let pidx = policy.decide(&obs, rng.policy.random());

        let mut current = state.interference;
        let mut level = chain.level(current);
        if two_timescale {
            current = chain.sample_next(current, rng.interference.random());
            level = level.max(chain.level(current));
        }
        let s = spec.success_at_level(pidx, level);
        let success = rng.channel.random::<f64>() < s;

        let cost = stage_cost(spec, &state, pidx, success);
        let power = spec.powers.get(pidx);
        rec.total_cost += cost;
        rec.total_power += power;
        rec.slots += 1;
        if success || state.residual_deadline == 1 {
            rec.packets_departed += 1;
            if !success {
                rec.packets_dropped += 1;
            }
        }

        let arrival = rng.arrivals.random::<f64>() < spec.arrival_prob;
        let next_i = chain.sample_next(current, rng.interference.random());
        if let Some(events) = log.as_deref_mut() {
            events.push(SlotEvent {
                slot: rec.slots - 1,
                backlog: state.backlog,
                residual_deadline: state.residual_deadline,
                interference: state.interference,
                interference_level: chain.level(state.interference),
                power,
                success,
                arrival,
                stage_cost: cost,
            });
        }
        state = step(spec, &state, success, next_i);
        if arrival {
            state = State {
                backlog: state.backlog + 1,
                ..state
            };
        }
    }
    rec
}

/// Pooled Monte Carlo summary.
#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub replications: usize,
    pub mean_total_cost: f64,
    pub stderr_total_cost: f64,
    /// Total dropped over total departed, pooled across replications.
    pub drop_fraction: f64,
    /// Delta-method standard error of the pooled ratio.
    pub drop_fraction_stderr: f64,
    /// Mean of the per-replication drop ratios.
    pub mean_drop_ratio: f64,
    /// Total power over total departed, pooled.
    pub avg_power_per_packet: f64,
    pub avg_power_stderr: f64,
    /// Over non-truncated replications; NaN when all were truncated.
    pub mean_completion_slots: f64,
    pub stderr_completion_slots: f64,
    pub truncated_count: usize,
    pub total_departed: u64,
    pub total_dropped: u64,
}

fn mean_stderr(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.clone().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// `sum(num) / sum(den)` with its delta-method standard error.
fn pooled_ratio(pairs: &[(f64, f64)]) -> (f64, f64) {
    let n = pairs.len() as f64;
    let num: f64 = pairs.iter().map(|p| p.0).sum();
    let den: f64 = pairs.iter().map(|p| p.1).sum();
    if den == 0.0 {
        return (0.0, 0.0);
    }
    let ratio = num / den;
    if pairs.len() < 2 {
        return (ratio, 0.0);
    }
    let mean_den = den / n;
    let ss: f64 = pairs
        .iter()
        .map(|&(x, y)| (x - ratio * y) * (x - ratio * y))
        .sum();
    (ratio, (ss / (n * (n - 1.0))).sqrt() / mean_den)
}

impl SimReport {
    /// Aggregate records in the given order.
    pub fn from_records(records: &[TrajectoryRecord]) -> Self {
        let (mean_total_cost, stderr_total_cost) =
            mean_stderr(records.iter().map(|r| r.total_cost));
        let drops: Vec<(f64, f64)> = records
            .iter()
            .map(|r| (r.packets_dropped as f64, r.packets_departed as f64))
            .collect();
        let powers: Vec<(f64, f64)> = records
            .iter()
            .map(|r| (r.total_power, r.packets_departed as f64))
            .collect();
        let (drop_fraction, drop_fraction_stderr) = pooled_ratio(&drops);
        let (avg_power_per_packet, avg_power_stderr) = pooled_ratio(&powers);
        let (mean_drop_ratio, _) = mean_stderr(
            drops
                .iter()
                .filter(|p| p.1 > 0.0)
                .map(|&(x, y)| x / y),
        );
        let (mean_completion_slots, stderr_completion_slots) = mean_stderr(
            records
                .iter()
                .filter(|r| !r.truncated)
                .map(|r| r.slots as f64),
        );
        SimReport {
            replications: records.len(),
            mean_total_cost,
            stderr_total_cost,
            drop_fraction,
            drop_fraction_stderr,
            mean_drop_ratio,
            avg_power_per_packet,
            avg_power_stderr,
            mean_completion_slots,
            stderr_completion_slots,
            truncated_count: records.iter().filter(|r| r.truncated).count(),
            total_departed: records.iter().map(|r| r.packets_departed).sum(),
            total_dropped: records.iter().map(|r| r.packets_dropped).sum(),
        }
    }
}

/// All replication records, in replication order.
pub fn run_records(spec: &SystemSpec, policy: &Policy, sim: &SimConfig) -> Result<Vec<TrajectoryRecord>> {
    spec.validate()?;
    sim.validate(spec, "sim")?;
    let max_slots = sim.max_slots_for(spec);
    Ok((0..sim.replications as u64)
        .into_par_iter()
        .map(|r| {
            let mut p = policy.clone();
            run_trajectory(
                spec,
                &mut p,
                replication_seed(sim.base_seed, r),
                max_slots,
                sim.initial_interference,
                None,
            )
        })
        .collect())
}

/// Run `sim.replications` independent trajectories and pool them.
pub fn run_batch(spec: &SystemSpec, policy: &Policy, sim: &SimConfig) -> Result<SimReport> {
    Ok(SimReport::from_records(&run_records(spec, policy, sim)?))
}

/// Simulated cost of a DP table against the exact value.
#[derive(Debug, Clone, PartialEq)]
pub struct DpCheck {
    pub expected: f64,
    pub mean: f64,
    pub stderr: f64,
    pub z: f64,
}

/// Compare the simulated cost of `mu` from the configured start with the
/// value table's prediction (averaged over the stationary start when unpinned).
pub fn validate_against_dp(
    spec: &SystemSpec,
    v: &ValueTable,
    mu: &PolicyTable,
    sim: &SimConfig,
) -> Result<DpCheck> {
    if spec.arrival_prob != 0.0 {
        return Err(Error::ArrivalsInDp(spec.arrival_prob));
    }
    if spec.interference.subslots_per_slot() != 1 {
        return Err(Error::Unsupported(
            "DP comparison requires one interference sub-slot per slot".into(),
        ));
    }
    v.check_dims(spec)?;
    let (big_b, big_d) = (spec.backlog, spec.deadline);
    let expected = match sim.initial_interference {
        InitialInterference::State(i) => v.get(big_b, big_d, i),
        InitialInterference::Stationary => spec
            .interference
            .stationary()
            .iter()
            .enumerate()
            .map(|(i, pi)| pi * v.get(big_b, big_d, i))
            .sum(),
    };
    let report = run_batch(spec, &Policy::Table(mu.clone()), sim)?;
    let diff = report.mean_total_cost - expected;
    let z = if report.stderr_total_cost > 0.0 {
        diff / report.stderr_total_cost
    } else if diff.abs() <= 1e-9 * expected.abs().max(1.0) {
        0.0
    } else {
        diff.signum() * f64::INFINITY
    };
    Ok(DpCheck {
        expected,
        mean: report.mean_total_cost,
        stderr: report.stderr_total_cost,
        z,
    })
}
