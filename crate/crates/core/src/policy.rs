//! Transmit-power controllers behind a single `decide` interface.
//!
//! Every controller receives exactly one uniform draw per decision, whether
//! it uses it or not, so the policy stream advances identically for all kinds.

use serde::{Deserialize, Serialize};

use crate::analytics::{deadline_drift, gamma_for_pressure, sgn};
use crate::dp::{solve, PolicyTable};
use crate::error::{Error, Result};
use crate::model::SystemSpec;

/// What the transmitter sees at the start of a slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Observation {
    pub backlog: usize,
    pub residual_deadline: usize,
    /// Index of the interference state visible at decision time.
    pub interference: usize,
}

/// Declarative controller choice, as it appears in scenario files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicyConfig {
    /// Optimal table from the dynamic program.
    #[serde(alias = "table")]
    Dp,
    Min,
    Max,
    /// Minimum power with probability `alpha`, maximum otherwise, redrawn every slot.
    Avg { alpha: f64 },
    Slbpc1 {
        /// Interference level assumed by the backlog map. Defaults to the lowest level.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        i_ref: Option<f64>,
        /// Power-cost slope for the continuous relaxation. Defaults to the spec's slope.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        k_slope: Option<f64>,
    },
    Slbpc2 {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        i_ref: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        k_slope: Option<f64>,
        /// Probability of moving one power level after a failure. Defaults to `1 / (2D)`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        p_change: Option<f64>,
    },
}

impl PolicyConfig {
    pub fn label(&self) -> &'static str {
        match self {
            PolicyConfig::Dp => "dp",
            PolicyConfig::Min => "min",
            PolicyConfig::Max => "max",
            PolicyConfig::Avg { .. } => "avg",
            PolicyConfig::Slbpc1 { .. } => "slbpc1",
            PolicyConfig::Slbpc2 { .. } => "slbpc2",
        }
    }

    pub fn validate(&self, field: &str) -> Result<()> {
        let positive = |name: &str, v: Option<f64>| match v {
            Some(x) if !(x.is_finite() && x > 0.0) => Err(Error::invalid(
                format!("{field}.{name}"),
                "must be finite and positive",
            )),
            _ => Ok(()),
        };
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::invalid(format!("{field}.{name}"), "must lie in [0, 1]"))
            }
        };
        match *self {
            PolicyConfig::Dp | PolicyConfig::Min | PolicyConfig::Max => Ok(()),
            PolicyConfig::Avg { alpha } => unit("alpha", alpha),
            PolicyConfig::Slbpc1 { i_ref, k_slope } => {
                positive("i_ref", i_ref)?;
                positive("k_slope", k_slope)
            }
            PolicyConfig::Slbpc2 {
                i_ref,
                k_slope,
                p_change,
            } => {
                positive("i_ref", i_ref)?;
                positive("k_slope", k_slope)?;
                p_change.map_or(Ok(()), |p| unit("p_change", p))
            }
        }
    }
}

/// `1 / (2D)`.
pub fn default_p_change(deadline: usize) -> f64 {
    1.0 / (2.0 * deadline as f64)
}

/// Power nearest to the continuous relaxation at `d = 2`, ties to the smaller power.
pub fn slbpc1_power(spec: &SystemSpec, b: usize, k_slope: f64, i_ref: f64) -> Result<f64> {
    let idx = slbpc1_index(spec, b, k_slope, i_ref)?;
    Ok(spec.powers.get(idx))
}

fn slbpc1_index(spec: &SystemSpec, b: usize, k_slope: f64, i_ref: f64) -> Result<usize> {
    // sigma(b, 1) = T_b(0)
    let pressure = spec.drop_cost() + deadline_drift(spec, i_ref, b);
    let g = gamma_for_pressure(&spec.success, i_ref, k_slope, pressure)?;
    Ok(spec.powers.nearest_index(g))
}

/// Lazily extended `b -> gamma_hat(b)` lookup.
#[derive(Debug, Clone)]
pub struct BacklogMap {
    spec: SystemSpec,
    i_ref: f64,
    k_slope: f64,
    // cache[b - 1]
    cache: Vec<usize>,
}

impl BacklogMap {
    pub fn new(spec: &SystemSpec, i_ref: Option<f64>, k_slope: Option<f64>) -> Result<Self> {
        let i_ref = i_ref.unwrap_or_else(|| spec.interference.lowest_level());
        let k_slope = k_slope
            .or_else(|| spec.power_slope())
            .ok_or(Error::NonLinearPowerCost)?;
        let mut map = BacklogMap {
            spec: spec.clone(),
            i_ref,
            k_slope,
            cache: Vec::with_capacity(spec.backlog),
        };
        map.extend_to(spec.backlog)?;
        Ok(map)
    }

    fn extend_to(&mut self, b: usize) -> Result<()> {
        while self.cache.len() < b {
            let next = self.cache.len() + 1;
            let idx = slbpc1_index(&self.spec, next, self.k_slope, self.i_ref)?;
            self.cache.push(idx);
        }
        Ok(())
    }

    /// Power index for backlog `b >= 1`.
    pub fn index(&mut self, b: usize) -> usize {
        assert!(b >= 1, "backlog map queried at b = 0");
        // Construction already succeeded for b = 1, and later entries only vary C_b(b).
        self.extend_to(b)
            .expect("backlog map failed past the initial backlog");
        self.cache[b - 1]
    }

    pub fn i_ref(&self) -> f64 {
        self.i_ref
    }

    pub fn k_slope(&self) -> f64 {
        self.k_slope
    }
}

/// A ready-to-run controller. Clone one per trajectory; SLBPC2 carries per-packet state.
#[derive(Debug, Clone)]
pub enum Policy {
    Table(PolicyTable),
    Constant(usize),
    Avg {
        alpha: f64,
        low: usize,
        high: usize,
    },
    Slbpc1(BacklogMap),
    Slbpc2 {
        map: BacklogMap,
        p_change: f64,
        current: Option<usize>,
    },
}

impl Policy {
    /// Build a controller. `Dp` solves the dynamic program, so the spec must have no arrivals.
    pub fn build(config: &PolicyConfig, spec: &SystemSpec) -> Result<Self> {
        config.validate("policy")?;
        Ok(match *config {
            PolicyConfig::Dp => Policy::Table(solve(spec)?.1),
            PolicyConfig::Min => Policy::Constant(spec.powers.min_index()),
            PolicyConfig::Max => Policy::Constant(spec.powers.max_index()),
            PolicyConfig::Avg { alpha } => Policy::Avg {
                alpha,
                low: spec.powers.min_index(),
                high: spec.powers.max_index(),
            },
            PolicyConfig::Slbpc1 { i_ref, k_slope } => {
                Policy::Slbpc1(BacklogMap::new(spec, i_ref, k_slope)?)
            }
            PolicyConfig::Slbpc2 {
                i_ref,
                k_slope,
                p_change,
            } => Policy::Slbpc2 {
                map: BacklogMap::new(spec, i_ref, k_slope)?,
                p_change: p_change.unwrap_or_else(|| default_p_change(spec.deadline)),
                current: None,
            },
        })
    }

    /// Power index for this slot. `u` is a fresh uniform draw on `[0, 1)`.
    pub fn decide(&mut self, obs: &Observation, u: f64) -> usize {
        debug_assert!(obs.backlog >= 1);
        match self {
            Policy::Table(table) => table.action(
                obs.backlog.min(table.backlog()),
                obs.residual_deadline,
                obs.interference,
            ),
            Policy::Constant(idx) => *idx,
            Policy::Avg { alpha, low, high } => {
                if u < *alpha {
                    *low
                } else {
                    *high
                }
            }
            Policy::Slbpc1(map) => map.index(obs.backlog),
            Policy::Slbpc2 {
                map,
                p_change,
                current,
            } => {
                let deadline = map.spec.deadline;
                let idx = match *current {
                    // a full residual deadline means a fresh head-of-line packet
                    Some(prev) if obs.residual_deadline < deadline => {
                        let level = map.spec.interference.level(obs.interference);
                        let drift = deadline_drift(&map.spec, level, obs.backlog);
                        if u < *p_change {
                            shift(prev, sgn(drift), map.spec.powers.len())
                        } else {
                            prev
                        }
                    }
                    _ => map.index(obs.backlog),
                };
                *current = Some(idx);
                idx
            }
        }
    }
}

/// Move one level in direction `dir`, saturating at both ends.
fn shift(idx: usize, dir: i8, len: usize) -> usize {
    if dir > 0 {
        (idx + 1).min(len - 1)
    } else {
        idx.saturating_sub(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BacklogCost, CostModel, InterferenceChain, PowerCost, PowerSet, SuccessFunction};

    fn illustrative(drop: f64) -> SystemSpec {
        SystemSpec {
            backlog: 20,
            deadline: 5,
            powers: PowerSet::new(vec![2.0, 4.0, 6.0]).unwrap(),
            costs: CostModel {
                power: PowerCost::Linear { slope: 1.0 },
                backlog: BacklogCost::Linear { slope: 1.0 },
                drop,
            },
            success: SuccessFunction::Exponential { scale: 1.0 },
            interference: InterferenceChain::fixed(2.0).unwrap(),
            arrival_prob: 0.0,
        }
    }

    fn obs(b: usize, d: usize) -> Observation {
        Observation {
            backlog: b,
            residual_deadline: d,
            interference: 0,
        }
    }

    #[test]
    fn min_max_avg_extremes() {
        let spec = illustrative(10.0);
        let mut min = Policy::build(&PolicyConfig::Min, &spec).unwrap();
        let mut max = Policy::build(&PolicyConfig::Max, &spec).unwrap();
        let mut all_low = Policy::build(&PolicyConfig::Avg { alpha: 1.0 }, &spec).unwrap();
        let mut all_high = Policy::build(&PolicyConfig::Avg { alpha: 0.0 }, &spec).unwrap();
        for k in 0..100 {
            let u = k as f64 / 100.0;
            assert_eq!(min.decide(&obs(3, 2), u), 0);
            assert_eq!(max.decide(&obs(3, 2), u), 2);
            assert_eq!(all_low.decide(&obs(3, 2), u), 0);
            assert_eq!(all_high.decide(&obs(3, 2), u), 2);
        }
    }

    #[test]
    fn slbpc1_rounds_to_nearest_power() {
        // gamma(10, 2) = ln(C_d + sigma(10, 1)) ~ 2.731 at i_ref = 1, K = 1
        let spec = illustrative(10.0);
        assert_eq!(slbpc1_power(&spec, 10, 1.0, 1.0).unwrap(), 2.0);
        // huge drop cost pushes gamma far above the largest power
        assert_eq!(slbpc1_power(&illustrative(1e6), 20, 1.0, 1.0).unwrap(), 6.0);
        // negative pressure clamps gamma to 0
        assert_eq!(slbpc1_power(&illustrative(0.0), 1, 100.0, 1.0).unwrap(), 2.0);
    }

    #[test]
    fn slbpc1_ties_go_low() {
        // Ratio family at i = 1: gamma = sqrt(X / K) - 1, so X = 16 gives exactly 3,
        // midway between 2 and 4. X = C_d + C_b(1) + min_p K p = 0 + 14 + 2.
        let mut spec = illustrative(0.0);
        spec.powers = PowerSet::new(vec![2.0, 4.0]).unwrap();
        spec.success = SuccessFunction::Ratio;
        spec.costs.backlog = BacklogCost::Table { values: vec![14.0] };
        let g = gamma_for_pressure(&spec.success, 1.0, 1.0, 16.0).unwrap();
        assert_eq!(g, 3.0);
        assert_eq!(slbpc1_power(&spec, 1, 1.0, 1.0).unwrap(), 2.0);
    }

    #[test]
    fn slbpc1_ignores_deadline_and_interference() {
        let mut spec = illustrative(10.0);
        spec.interference = InterferenceChain::two_state(1.0, 3.0, 0.5, 0.5).unwrap();
        let mut p = Policy::build(
            &PolicyConfig::Slbpc1 {
                i_ref: None,
                k_slope: None,
            },
            &spec,
        )
        .unwrap();
        for b in 1..=25 {
            let first = p.decide(&obs(b, 5), 0.3);
            for d in 1..=5 {
                for i in 0..2 {
                    let o = Observation {
                        backlog: b,
                        residual_deadline: d,
                        interference: i,
                    };
                    assert_eq!(p.decide(&o, 0.9), first);
                }
            }
        }
    }

    #[test]
    fn default_p_change_is_half_inverse_deadline() {
        assert_eq!(default_p_change(5), 0.1);
        let spec = illustrative(10.0);
        let p = Policy::build(
            &PolicyConfig::Slbpc2 {
                i_ref: None,
                k_slope: None,
                p_change: None,
            },
            &spec,
        )
        .unwrap();
        assert!(matches!(p, Policy::Slbpc2 { p_change, .. } if p_change == 0.1));
    }

    #[test]
    fn slbpc2_resets_then_drifts() {
        // C_d = 10: T_b(0) < 0 for b <= 4, > 0 for b >= 5
        let spec = illustrative(10.0);
        let cfg = PolicyConfig::Slbpc2 {
            i_ref: Some(2.0),
            k_slope: None,
            p_change: Some(1.0),
        };
        let mut p = Policy::build(&cfg, &spec).unwrap();
        let start = p.decide(&obs(20, 5), 0.0);
        assert_eq!(start, 2);
        // upward drift saturates at the top
        assert_eq!(p.decide(&obs(20, 4), 0.0), 2);
        let mut q = Policy::build(&cfg, &spec).unwrap();
        let start = q.decide(&obs(2, 5), 0.0);
        let down = q.decide(&obs(2, 4), 0.0);
        assert_eq!(down, start.saturating_sub(1));
        // draw above p_change leaves power in place
        let mut r = Policy::build(
            &PolicyConfig::Slbpc2 {
                i_ref: Some(2.0),
                k_slope: None,
                p_change: Some(0.5),
            },
            &spec,
        )
        .unwrap();
        let s0 = r.decide(&obs(2, 5), 0.0);
        assert_eq!(r.decide(&obs(2, 4), 0.7), s0);
    }

    #[test]
    fn zero_drift_counts_as_upward() {
        // single state at level 1; C_b(1) = 0, one power with zero cost and no drop cost
        let mut spec = illustrative(0.0);
        spec.powers = PowerSet::new(vec![1.0, 2.0]).unwrap();
        spec.costs.power = PowerCost::Table {
            values: vec![0.0, 0.0],
        };
        spec.costs.backlog = BacklogCost::Table {
            values: vec![0.0],
        };
        assert_eq!(deadline_drift(&spec, 2.0, 1), 0.0);
        let mut p = Policy::Slbpc2 {
            map: BacklogMap::new(&spec, None, Some(1.0)).unwrap(),
            p_change: 1.0,
            current: None,
        };
        let first = p.decide(&obs(1, 5), 0.0);
        assert_eq!(first, 0);
        assert_eq!(p.decide(&obs(1, 4), 0.0), 1);
    }

    #[test]
    fn table_policy_clamps_backlog() {
        let spec = illustrative(10.0);
        let (_, mu) = solve(&spec).unwrap();
        let mut p = Policy::Table(mu.clone());
        assert_eq!(p.decide(&obs(500, 3), 0.5), mu.action(20, 3, 0));
    }

    #[test]
    fn table_cost_without_slope_is_rejected() {
        let mut spec = illustrative(10.0);
        spec.costs.power = PowerCost::Table {
            values: vec![1.0, 2.0, 3.0],
        };
        let cfg = PolicyConfig::Slbpc1 {
            i_ref: None,
            k_slope: None,
        };
        assert!(matches!(
            Policy::build(&cfg, &spec),
            Err(Error::NonLinearPowerCost)
        ));
    }

    #[test]
    fn config_validation() {
        assert!(PolicyConfig::Avg { alpha: 1.5 }.validate("p").is_err());
        let bad = PolicyConfig::Slbpc2 {
            i_ref: Some(-1.0),
            k_slope: None,
            p_change: None,
        };
        assert!(bad.validate("p").is_err());
    }
}
