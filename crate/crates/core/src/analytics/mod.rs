//! Semi-analytic machinery for a fixed interference level.
//!
//! With the interference frozen at level `i`, the optimal policy depends on
//! the cost-to-go only through the cumulative differences
//! `sigma(b, d) = J(b, d) - J(b - 1, D) - C_d`, which obey the scalar
//! recursion `sigma(b, d) = T_b(sigma(b, d - 1))`, `sigma(b, 0) = 0`, with
//!
//! ```text
//! T_b(x) = x + C_b(b) + min_p { C_p(p) - s(p, i) (C_d + x) }.
//! ```
//!
//! The sign of `T_b(0)` decides whether the optimal power rises or falls as
//! the deadline approaches.

mod bounds;
mod envelope;
mod gamma;

pub use bounds::{sigma_bounds, SigmaBounds};
pub use envelope::{concave_envelope, ConcaveEnvelope, ENVELOPE_RESIDUAL_TOLERANCE};
pub use gamma::{gamma, gamma_for_pressure};

use crate::dp::{min_argmin, PolicyTable, ValueTable};
use crate::error::{Error, Result};
use crate::model::SystemSpec;

/// `sgn(x) = 2 * 1{x >= 0} - 1`; zero counts as positive.
pub fn sgn(x: f64) -> i8 {
    if x >= 0.0 {
        1
    } else {
        -1
    }
}

/// `min_p { C_p(p) - s(p, level) * pressure }` and its smallest minimizer.
pub fn min_tradeoff(spec: &SystemSpec, level: f64, pressure: f64) -> (f64, usize) {
    min_argmin(spec.powers.len(), |k| {
        spec.power_cost(k) - spec.success_at_level(k, level) * pressure
    })
}

/// The one-step operator `T_b(x)` at interference `level`.
pub fn t_operator(spec: &SystemSpec, level: f64, b: usize, x: f64) -> f64 {
    x + spec.backlog_cost(b) + min_tradeoff(spec, level, spec.drop_cost() + x).0
}

/// `f_b(i) = T_b(0) = C_b(b) + min_p { C_p(p) - s(p, i) C_d }`.
pub fn deadline_drift(spec: &SystemSpec, level: f64, b: usize) -> f64 {
    spec.backlog_cost(b) + min_tradeoff(spec, level, spec.drop_cost()).0
}

/// `delta`, `sigma` and `T_b(0)` for `b = 1..=B` at a fixed interference level.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaTable {
    backlog: usize,
    deadline: usize,
    level: f64,
    // (b - 1) * D + (d - 1)
    delta: Vec<f64>,
    // (b - 1) * (D + 1) + d
    sigma: Vec<f64>,
    tb0: Vec<f64>,
}

impl SigmaTable {
    pub fn backlog(&self) -> usize {
        self.backlog
    }

    pub fn deadline(&self) -> usize {
        self.deadline
    }

    pub fn level(&self) -> f64 {
        self.level
    }

    pub fn delta(&self, b: usize, d: usize) -> f64 {
        assert!(b >= 1 && d >= 1 && d <= self.deadline);
        self.delta[(b - 1) * self.deadline + (d - 1)]
    }

    pub fn sigma(&self, b: usize, d: usize) -> f64 {
        assert!(b >= 1 && d <= self.deadline);
        self.sigma[(b - 1) * (self.deadline + 1) + d]
    }

    pub fn tb0(&self, b: usize) -> f64 {
        self.tb0[b - 1]
    }

    /// Overwrite one `delta` entry without touching `sigma`. Only useful for
    /// exercising the consistency checks.
    pub fn corrupt_delta(&mut self, b: usize, d: usize, by: f64) {
        self.delta[(b - 1) * self.deadline + (d - 1)] += by;
    }
}

/// Build the `delta`/`sigma` recursion at interference `level`.
pub fn build_sigma(spec: &SystemSpec, level: f64) -> SigmaTable {
    let (big_b, big_d) = (spec.backlog, spec.deadline);
    let mut delta = Vec::with_capacity(big_b * big_d);
    let mut sigma = Vec::with_capacity(big_b * (big_d + 1));
    let mut tb0 = Vec::with_capacity(big_b);
    for b in 1..=big_b {
        let cb = spec.backlog_cost(b);
        tb0.push(deadline_drift(spec, level, b));
        let mut running = 0.0;
        sigma.push(0.0);
        for _d in 1..=big_d {
            let step = cb + min_tradeoff(spec, level, spec.drop_cost() + running).0;
            delta.push(step);
            running += step;
            sigma.push(running);
        }
    }
    SigmaTable {
        backlog: big_b,
        deadline: big_d,
        level,
        delta,
        sigma,
        tb0,
    }
}

/// [`build_sigma`] at the chain's only level.
pub fn build_sigma_fixed(spec: &SystemSpec) -> Result<SigmaTable> {
    if spec.num_states() != 1 {
        return Err(Error::Unsupported(format!(
            "fixed-interference analysis needs a single interference state, found {}",
            spec.num_states()
        )));
    }
    Ok(build_sigma(spec, spec.interference.level(0)))
}

/// `mu(b, d) = min argmin_p { C_p(p) - s(p, i) (C_d + sigma(b, d - 1)) }`,
/// written into a one-state policy table.
pub fn semi_analytic_policy(st: &SigmaTable, spec: &SystemSpec) -> PolicyTable {
    let mut mu = PolicyTable::new(st.backlog, st.deadline, 1, spec.powers.levels());
    for b in 1..=st.backlog {
        for d in 1..=st.deadline {
            let pressure = spec.drop_cost() + st.sigma(b, d - 1);
            mu.set(b, d, 0, min_tradeoff(spec, st.level, pressure).1);
        }
    }
    mu
}

/// Largest violation of `J(b, 1) = C_d + J(b - 1, D) + delta(b, 1)` and
/// `J(b, d) = J(b, d - 1) + delta(b, d)` over all `(b, d)`.
pub fn check_value_differences(spec: &SystemSpec, v: &ValueTable, st: &SigmaTable) -> Result<f64> {
    if v.states() != 1 {
        return Err(Error::Dimension(format!(
            "value table has {} interference states, expected 1",
            v.states()
        )));
    }
    if v.backlog() != st.backlog || v.deadline() != st.deadline {
        return Err(Error::Dimension(format!(
            "value table is {}x{}, sigma table is {}x{}",
            v.backlog(),
            v.deadline(),
            st.backlog,
            st.deadline
        )));
    }
    let big_d = st.deadline;
    let mut worst: f64 = 0.0;
    for b in 1..=st.backlog {
        let first = spec.drop_cost() + v.get(b - 1, big_d, 0) + st.delta(b, 1);
        worst = worst.max((v.get(b, 1, 0) - first).abs());
        for d in 2..=big_d {
            let expected = v.get(b, d - 1, 0) + st.delta(b, d);
            worst = worst.max((v.get(b, d, 0) - expected).abs());
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp::solve;
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

    // m = min over {2, 4, 6} of p - C_d (1 - exp(-p / 2)), evaluated by hand.
    fn direct_m(drop: f64) -> f64 {
        [2.0f64, 4.0, 6.0]
            .iter()
            .map(|p| p - drop * (1.0 - (-p / 2.0).exp()))
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn tb0_sign_change_for_moderate_drop_cost() {
        let m = direct_m(10.0);
        assert!((m - (4.0 - 10.0 * (1.0 - (-2.0f64).exp()))).abs() < 1e-15);
        assert!((m + 4.64665).abs() < 1e-5);
        let st = build_sigma_fixed(&illustrative(10.0)).unwrap();
        for b in 1..=20 {
            assert!((st.tb0(b) - (b as f64 + m)).abs() < 1e-12);
            assert_eq!(st.tb0(b) < 0.0, b <= 4, "b={b}");
        }
    }

    #[test]
    fn tb0_positive_for_low_drop_cost() {
        let m = direct_m(1.0);
        assert!((m - (2.0 - (1.0 - (-1.0f64).exp()))).abs() < 1e-15);
        assert!((m - 1.36788).abs() < 1e-5);
        let st = build_sigma_fixed(&illustrative(1.0)).unwrap();
        assert!((1..=20).all(|b| st.tb0(b) > 0.0));
    }

    #[test]
    fn sigma_recursion_and_sums() {
        let spec = illustrative(10.0);
        let st = build_sigma_fixed(&spec).unwrap();
        for b in 1..=20 {
            assert_eq!(st.sigma(b, 0), 0.0);
            let mut acc = 0.0;
            for d in 1..=5 {
                acc += st.delta(b, d);
                assert!((st.sigma(b, d) - acc).abs() < 1e-12);
                let via_t = t_operator(&spec, 2.0, b, st.sigma(b, d - 1));
                assert!((st.sigma(b, d) - via_t).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn value_difference_identity_and_corruption() {
        for drop in [1.0, 10.0, 100.0] {
            let spec = illustrative(drop);
            let (v, mu) = solve(&spec).unwrap();
            let mut st = build_sigma_fixed(&spec).unwrap();
            assert!(check_value_differences(&spec, &v, &st).unwrap() <= 1e-9);
            assert_eq!(semi_analytic_policy(&st, &spec), mu);
            st.corrupt_delta(3, 2, 1.0);
            assert!(check_value_differences(&spec, &v, &st).unwrap() >= 1.0 - 1e-9);
        }
    }

    #[test]
    fn semi_analytic_deadline_structure_follows_tb0() {
        let spec = illustrative(10.0);
        let st = build_sigma_fixed(&spec).unwrap();
        let mu = semi_analytic_policy(&st, &spec);
        for b in 1..=20 {
            for d in 2..=5 {
                let (prev, cur) = (mu.power(b, d - 1, 0), mu.power(b, d, 0));
                if b <= 4 {
                    assert!(cur <= prev, "b={b} d={d}");
                } else {
                    assert!(cur >= prev, "b={b} d={d}");
                }
            }
        }
    }

    #[test]
    fn singleton_power_everywhere() {
        let mut spec = illustrative(10.0);
        spec.powers = PowerSet::new(vec![5.0]).unwrap();
        let mu = semi_analytic_policy(&build_sigma_fixed(&spec).unwrap(), &spec);
        assert!((1..=20).all(|b| (1..=5).all(|d| mu.power(b, d, 0) == 5.0)));
    }

    #[test]
    fn sgn_of_zero_is_positive() {
        assert_eq!(sgn(0.0), 1);
        assert_eq!(sgn(-0.0), 1);
        assert_eq!(sgn(-1e-300), -1);
    }

    #[test]
    fn multi_state_spec_rejected_by_fixed_builder() {
        let mut spec = illustrative(1.0);
        spec.interference = InterferenceChain::two_state(1.0, 2.0, 0.1, 0.1).unwrap();
        assert!(build_sigma_fixed(&spec).is_err());
    }
}
