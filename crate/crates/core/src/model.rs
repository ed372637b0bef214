//! Problem-instance data: power levels, costs, success-probability families,
//! the Markov interference process and the per-slot dynamics.
//!
//! Interference states are 0-based inside the crate. Configs and CSV output
//! use 1-based state numbers; the conversion happens in [`crate::scenario`]
//! and [`crate::output`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ROW_SUM_TOLERANCE: f64 = 1e-12;

/// The finite, strictly ascending set of transmit powers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PowerSet {
    levels: Vec<f64>,
}

impl PowerSet {
    pub fn new(levels: Vec<f64>) -> Result<Self> {
        let set = PowerSet { levels };
        set.validate("powers")?;
        Ok(set)
    }

    pub(crate) fn validate(&self, field: &str) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::invalid(field, "power set must not be empty"));
        }
        for (k, &p) in self.levels.iter().enumerate() {
            if !p.is_finite() || p < 0.0 {
                return Err(Error::invalid(
                    format!("{field}[{k}]"),
                    format!("power {p} must be finite and non-negative"),
                ));
            }
            if k > 0 && p <= self.levels[k - 1] {
                return Err(Error::invalid(
                    format!("{field}[{k}]"),
                    "powers must be strictly ascending",
                ));
            }
        }
        Ok(())
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn get(&self, idx: usize) -> f64 {
        self.levels[idx]
    }

    pub fn min_index(&self) -> usize {
        0
    }

    pub fn max_index(&self) -> usize {
        self.levels.len() - 1
    }

    /// Index of the level closest to `target`; exact ties go to the smaller level.
    pub fn nearest_index(&self, target: f64) -> usize {
        let mut best = 0;
        let mut best_gap = (self.levels[0] - target).abs();
        for (k, &p) in self.levels.iter().enumerate().skip(1) {
            let gap = (p - target).abs();
            if gap < best_gap {
                best = k;
                best_gap = gap;
            }
        }
        best
    }
}

/// Per-slot cost of transmitting at a given power.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum PowerCost {
    /// `C_p(p) = slope * p`.
    Linear { slope: f64 },
    /// One entry per power level, aligned with the power set.
    Table { values: Vec<f64> },
}

/// Per-slot holding cost as a function of the backlog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum BacklogCost {
    /// `C_b(b) = slope * b`.
    Linear { slope: f64 },
    /// `values[k]` is the cost at backlog `k + 1`. Backlogs past the end of
    /// the table reuse the last entry.
    Table { values: Vec<f64> },
}

impl BacklogCost {
    pub fn eval(&self, backlog: usize) -> f64 {
        if backlog == 0 {
            return 0.0;
        }
        match self {
            BacklogCost::Linear { slope } => slope * backlog as f64,
            BacklogCost::Table { values } => values[(backlog - 1).min(values.len() - 1)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub power: PowerCost,
    pub backlog: BacklogCost,
    pub drop: f64,
}

impl CostModel {
    pub(crate) fn validate(&self, powers: &PowerSet, field: &str) -> Result<()> {
        match &self.power {
            PowerCost::Linear { slope } => {
                if !slope.is_finite() || *slope < 0.0 {
                    return Err(Error::invalid(
                        format!("{field}.power.slope"),
                        "slope must be finite and non-negative",
                    ));
                }
            }
            PowerCost::Table { values } => {
                if values.len() != powers.len() {
                    return Err(Error::invalid(
                        format!("{field}.power.values"),
                        format!(
                            "expected {} entries (one per power level), got {}",
                            powers.len(),
                            values.len()
                        ),
                    ));
                }
                check_non_decreasing(values, &format!("{field}.power.values"))?;
            }
        }
        match &self.backlog {
            BacklogCost::Linear { slope } => {
                if !slope.is_finite() || *slope < 0.0 {
                    return Err(Error::invalid(
                        format!("{field}.backlog.slope"),
                        "slope must be finite and non-negative",
                    ));
                }
            }
            BacklogCost::Table { values } => {
                if values.is_empty() {
                    return Err(Error::invalid(
                        format!("{field}.backlog.values"),
                        "table must not be empty",
                    ));
                }
                check_non_decreasing(values, &format!("{field}.backlog.values"))?;
            }
        }
        if !self.drop.is_finite() || self.drop < 0.0 {
            return Err(Error::invalid(
                format!("{field}.drop"),
                "drop cost must be finite and non-negative",
            ));
        }
        Ok(())
    }
}

fn check_non_decreasing(values: &[f64], field: &str) -> Result<()> {
    for (k, &v) in values.iter().enumerate() {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::invalid(
                format!("{field}[{k}]"),
                "costs must be finite and non-negative",
            ));
        }
        if k > 0 && v < values[k - 1] {
            return Err(Error::invalid(
                format!("{field}[{k}]"),
                "costs must be non-decreasing",
            ));
        }
    }
    Ok(())
}

/// Probability that a transmission at power `p` succeeds under interference `i`.
///
/// Every family is non-decreasing in `p` and maps into `[0, 1]`. Exponents are
/// written with their sign applied here; configs declare positive scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum SuccessFunction {
    /// `p / (p + i)`.
    Ratio,
    /// `1 - exp(-p / (scale * i))`.
    Exponential {
        #[serde(default = "unit_scale")]
        scale: f64,
    },
    /// `(1 - exp(-beta0 * p / i + beta1) / 2) ^ beta2`, with the inner term
    /// floored at zero.
    #[serde(alias = "sigmoidal")]
    Sigmoid { beta0: f64, beta1: f64, beta2: f64 },
}

fn unit_scale() -> f64 {
    1.0
}

impl SuccessFunction {
    pub fn exponential(scale: f64) -> Result<Self> {
        let s = SuccessFunction::Exponential { scale };
        s.validate("success")?;
        Ok(s)
    }

    pub fn sigmoid(beta0: f64, beta1: f64, beta2: f64) -> Result<Self> {
        let s = SuccessFunction::Sigmoid {
            beta0,
            beta1,
            beta2,
        };
        s.validate("success")?;
        Ok(s)
    }

    pub(crate) fn validate(&self, field: &str) -> Result<()> {
        match *self {
            SuccessFunction::Ratio => Ok(()),
            SuccessFunction::Exponential { scale } => {
                if !(scale.is_finite() && scale > 0.0) {
                    return Err(Error::invalid(
                        format!("{field}.scale"),
                        "scale must be finite and positive",
                    ));
                }
                Ok(())
            }
            SuccessFunction::Sigmoid {
                beta0,
                beta1,
                beta2,
            } => {
                for (name, v) in [("beta0", beta0), ("beta1", beta1), ("beta2", beta2)] {
                    if !v.is_finite() || v < 0.0 {
                        return Err(Error::invalid(
                            format!("{field}.{name}"),
                            "sigmoid parameters must be finite and non-negative",
                        ));
                    }
                }
                if beta0 == 0.0 || beta2 == 0.0 {
                    return Err(Error::invalid(
                        field.to_string(),
                        "beta0 and beta2 must be positive",
                    ));
                }
                Ok(())
            }
        }
    }

    /// `s(p, i)`. Requires `p >= 0` and `i > 0`.
    pub fn prob(&self, p: f64, i: f64) -> f64 {
        debug_assert!(p >= 0.0 && i > 0.0);
        match *self {
            SuccessFunction::Ratio => {
                if p == 0.0 {
                    0.0
                } else {
                    p / (p + i)
                }
            }
            SuccessFunction::Exponential { scale } => -(-p / (scale * i)).exp_m1(),
            SuccessFunction::Sigmoid {
                beta0,
                beta1,
                beta2,
            } => {
                let inner = 1.0 - 0.5 * (-beta0 * p / i + beta1).exp();
                if inner <= 0.0 {
                    0.0
                } else {
                    inner.powf(beta2)
                }
            }
        }
    }

    /// `d s(p, i) / dp`.
    pub fn derivative(&self, p: f64, i: f64) -> f64 {
        match *self {
            SuccessFunction::Ratio => i / ((p + i) * (p + i)),
            SuccessFunction::Exponential { scale } => {
                let c = scale * i;
                (-p / c).exp() / c
            }
            SuccessFunction::Sigmoid {
                beta0,
                beta1,
                beta2,
            } => {
                let e = (-beta0 * p / i + beta1).exp();
                let inner = 1.0 - 0.5 * e;
                if inner <= 0.0 {
                    0.0
                } else {
                    beta2 * inner.powf(beta2 - 1.0) * 0.5 * e * beta0 / i
                }
            }
        }
    }
}

/// Finite-state Markov chain driving the interference level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterferenceChain {
    levels: Vec<f64>,
    transition: Vec<Vec<f64>>,
    #[serde(default = "one_subslot")]
    subslots_per_slot: u32,
}

fn one_subslot() -> u32 {
    1
}

impl InterferenceChain {
    pub fn new(levels: Vec<f64>, transition: Vec<Vec<f64>>, subslots_per_slot: u32) -> Result<Self> {
        let chain = InterferenceChain {
            levels,
            transition,
            subslots_per_slot,
        };
        chain.validate("interference")?;
        Ok(chain)
    }

    /// A chain frozen at a single level.
    pub fn fixed(level: f64) -> Result<Self> {
        Self::new(vec![level], vec![vec![1.0]], 1)
    }

    /// Two-state chain with up/down transition probabilities.
    pub fn two_state(low: f64, high: f64, p_up: f64, p_down: f64) -> Result<Self> {
        Self::new(
            vec![low, high],
            vec![vec![1.0 - p_up, p_up], vec![p_down, 1.0 - p_down]],
            1,
        )
    }

    pub(crate) fn validate(&self, field: &str) -> Result<()> {
        let n = self.levels.len();
        if n == 0 {
            return Err(Error::invalid(
                format!("{field}.levels"),
                "at least one interference level is required",
            ));
        }
        for (k, &l) in self.levels.iter().enumerate() {
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::invalid(
                    format!("{field}.levels[{k}]"),
                    "interference levels must be finite and positive",
                ));
            }
        }
        if self.transition.len() != n {
            return Err(Error::invalid(
                format!("{field}.transition"),
                format!("expected {n} rows, got {}", self.transition.len()),
            ));
        }
        for (r, row) in self.transition.iter().enumerate() {
            if row.len() != n {
                return Err(Error::invalid(
                    format!("{field}.transition[{r}]"),
                    format!("expected {n} entries, got {}", row.len()),
                ));
            }
            if row.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
                return Err(Error::invalid(
                    format!("{field}.transition[{r}]"),
                    "entries must lie in [0, 1]",
                ));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::invalid(
                    format!("{field}.transition[{r}]"),
                    format!("row sums to {sum}, expected 1"),
                ));
            }
        }
        if !(1..=2).contains(&self.subslots_per_slot) {
            return Err(Error::invalid(
                format!("{field}.subslots_per_slot"),
                "only 1 or 2 sub-slots per slot are supported",
            ));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn level(&self, idx: usize) -> f64 {
        self.levels[idx]
    }

    pub fn transition(&self) -> &[Vec<f64>] {
        &self.transition
    }

    pub fn prob(&self, from: usize, to: usize) -> f64 {
        self.transition[from][to]
    }

    pub fn subslots_per_slot(&self) -> u32 {
        self.subslots_per_slot
    }

    pub fn lowest_level(&self) -> f64 {
        self.levels.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Next state given a uniform draw `u` in `[0, 1)`, by inverting the row CDF.
    pub fn sample_next(&self, from: usize, u: f64) -> usize {
        let row = &self.transition[from];
        let mut acc = 0.0;
        for (j, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return j;
            }
        }
        // Rounding can leave the CDF a hair below 1; fall back to the last reachable state.
        row.iter().rposition(|&p| p > 0.0).unwrap_or(row.len() - 1)
    }

    /// Draw a state from a probability vector over states.
    pub fn sample_from(dist: &[f64], u: f64) -> usize {
        let mut acc = 0.0;
        for (j, &p) in dist.iter().enumerate() {
            acc += p;
            if u < acc {
                return j;
            }
        }
        dist.iter().rposition(|&p| p > 0.0).unwrap_or(dist.len() - 1)
    }

    /// A stationary distribution of the chain.
    ///
    /// Solves `pi P = pi, sum(pi) = 1`. Reducible chains make that system
    /// singular; those fall back to a Cesaro average of the uniform start.
    pub fn stationary(&self) -> Vec<f64> {
        let n = self.len();
        if n == 1 {
            return vec![1.0];
        }
        let mut a = nalgebra::DMatrix::<f64>::zeros(n, n);
        for r in 0..n {
            for c in 0..n {
                a[(r, c)] = self.transition[c][r] - if r == c { 1.0 } else { 0.0 };
            }
        }
        for c in 0..n {
            a[(n - 1, c)] = 1.0;
        }
        let mut rhs = nalgebra::DVector::<f64>::zeros(n);
        rhs[n - 1] = 1.0;
        if let Some(pi) = a.lu().solve(&rhs) {
            if pi.iter().all(|&x| x.is_finite() && x > -1e-12) {
                let total: f64 = pi.iter().map(|x| x.max(0.0)).sum();
                return pi.iter().map(|x| x.max(0.0) / total).collect();
            }
        }
        let mut current = vec![1.0 / n as f64; n];
        let mut average = vec![0.0; n];
        const STEPS: usize = 10_000;
        for _ in 0..STEPS {
            for (avg, x) in average.iter_mut().zip(&current) {
                *avg += x / STEPS as f64;
            }
            let mut next = vec![0.0; n];
            for (i, &x) in current.iter().enumerate() {
                for (j, nx) in next.iter_mut().enumerate() {
                    *nx += x * self.transition[i][j];
                }
            }
            current = next;
        }
        average
    }
}

/// A complete problem instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    /// Initial backlog `B`.
    pub backlog: usize,
    /// Head-of-line deadline `D`: the number of attempts each packet gets.
    pub deadline: usize,
    pub powers: PowerSet,
    pub costs: CostModel,
    pub success: SuccessFunction,
    pub interference: InterferenceChain,
    #[serde(default)]
    pub arrival_prob: f64,
}

impl SystemSpec {
    pub fn validate(&self) -> Result<()> {
        if self.backlog < 1 {
            return Err(Error::invalid("spec.backlog", "initial backlog must be at least 1"));
        }
        if self.deadline < 1 {
            return Err(Error::invalid("spec.deadline", "deadline must be at least 1"));
        }
        self.powers.validate("spec.powers")?;
        self.costs.validate(&self.powers, "spec.costs")?;
        self.success.validate("spec.success")?;
        self.interference.validate("spec.interference")?;
        if !(0.0..=1.0).contains(&self.arrival_prob) {
            return Err(Error::invalid(
                "spec.arrival_prob",
                "arrival probability must lie in [0, 1]",
            ));
        }
        Ok(())
    }

    pub fn num_states(&self) -> usize {
        self.interference.len()
    }

    pub fn power_cost(&self, idx: usize) -> f64 {
        match &self.costs.power {
            PowerCost::Linear { slope } => slope * self.powers.get(idx),
            PowerCost::Table { values } => values[idx],
        }
    }

    pub fn backlog_cost(&self, backlog: usize) -> f64 {
        self.costs.backlog.eval(backlog)
    }

    pub fn drop_cost(&self) -> f64 {
        self.costs.drop
    }

    /// Slope `K` of a linear power cost.
    pub fn power_slope(&self) -> Option<f64> {
        match self.costs.power {
            PowerCost::Linear { slope } => Some(slope),
            PowerCost::Table { .. } => None,
        }
    }

    /// Success probability of power index `pidx` at interference state `state`.
    pub fn success_at(&self, pidx: usize, state: usize) -> f64 {
        self.success
            .prob(self.powers.get(pidx), self.interference.level(state))
    }

    /// Success probability of power index `pidx` at an arbitrary interference level.
    pub fn success_at_level(&self, pidx: usize, level: f64) -> f64 {
        self.success.prob(self.powers.get(pidx), level)
    }

    pub fn start_state(&self, interference: usize) -> State {
        State {
            backlog: self.backlog,
            residual_deadline: self.deadline,
            interference,
        }
    }
}

/// `(b, d, i)`: backlog, residual deadline of the head-of-line packet and
/// interference state. Backlog zero is terminal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct State {
    pub backlog: usize,
    pub residual_deadline: usize,
    pub interference: usize,
}

impl State {
    pub fn is_terminal(&self) -> bool {
        self.backlog == 0
    }
}

/// Cost of one slot: power plus holding cost, plus the drop cost when the
/// last attempt of a packet fails. Terminal states cost nothing.
pub fn stage_cost(spec: &SystemSpec, state: &State, pidx: usize, success: bool) -> f64 {
    if state.is_terminal() {
        return 0.0;
    }
    let mut cost = spec.power_cost(pidx) + spec.backlog_cost(state.backlog);
    if !success && state.residual_deadline == 1 {
        cost += spec.drop_cost();
    }
    cost
}

/// Head-of-line transition for one attempt. Arrivals are handled by the simulator.
///
/// # Panics
/// If `state` is terminal.
pub fn step(spec: &SystemSpec, state: &State, success: bool, next_interference: usize) -> State {
    assert!(!state.is_terminal(), "cannot step a terminal state");
    if success || state.residual_deadline == 1 {
        State {
            backlog: state.backlog - 1,
            residual_deadline: spec.deadline,
            interference: next_interference,
        }
    } else {
        State {
            backlog: state.backlog,
            residual_deadline: state.residual_deadline - 1,
            interference: next_interference,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_spec(drop: f64) -> SystemSpec {
        SystemSpec {
            backlog: 5,
            deadline: 3,
            powers: PowerSet::new(vec![2.0, 4.0]).unwrap(),
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

    #[test]
    fn success_examples() {
        let exp = SuccessFunction::Exponential { scale: 1.0 };
        assert_eq!(exp.prob(0.0, 2.0), 0.0);
        assert!((exp.prob(2.0, 2.0) - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        assert!((exp.prob(2.0, 2.0) - 0.6321).abs() < 1e-4);
        assert_eq!(SuccessFunction::Ratio.prob(3.0, 3.0), 0.5);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let families = [
            SuccessFunction::Ratio,
            SuccessFunction::Exponential { scale: 2.0 },
            SuccessFunction::Sigmoid {
                beta0: 1.5,
                beta1: 0.3,
                beta2: 6.0,
            },
        ];
        for s in &families {
            for &p in &[0.3, 1.0, 2.5, 7.0] {
                let h = 1e-6;
                let fd = (s.prob(p + h, 1.5) - s.prob(p - h, 1.5)) / (2.0 * h);
                assert!((fd - s.derivative(p, 1.5)).abs() < 1e-7, "{s:?} at {p}");
            }
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(SuccessFunction::exponential(0.0).is_err());
        assert!(SuccessFunction::exponential(-1.0).is_err());
        assert!(SuccessFunction::sigmoid(-1.0, 0.0, 2.0).is_err());
        assert!(PowerSet::new(vec![]).is_err());
        assert!(PowerSet::new(vec![1.0, 1.0]).is_err());
        assert!(PowerSet::new(vec![-1.0]).is_err());
        assert!(InterferenceChain::fixed(0.0).is_err());
        let err = InterferenceChain::new(vec![1.0, 2.0], vec![vec![0.5, 0.4], vec![0.5, 0.5]], 1)
            .unwrap_err();
        assert!(err.to_string().contains("transition[0]"), "{err}");
    }

    #[test]
    fn stage_cost_table_rows() {
        let mut spec = unit_spec(10.0);
        spec.powers = PowerSet::new(vec![2.0]).unwrap();
        let s = |b, d| State {
            backlog: b,
            residual_deadline: d,
            interference: 0,
        };
        assert_eq!(stage_cost(&spec, &s(0, 2), 0, false), 0.0);
        assert_eq!(stage_cost(&spec, &s(3, 1), 0, false), 15.0);
        assert_eq!(stage_cost(&spec, &s(3, 1), 0, true), 5.0);
        assert_eq!(stage_cost(&spec, &s(3, 2), 0, false), 5.0);
    }

    #[test]
    fn step_table_rows() {
        let spec = unit_spec(1.0);
        let s = |b, d| State {
            backlog: b,
            residual_deadline: d,
            interference: 0,
        };
        assert_eq!(step(&spec, &s(5, 3), false, 0), s(5, 2));
        assert_eq!(step(&spec, &s(5, 1), false, 0), s(4, 3));
        assert_eq!(step(&spec, &s(5, 2), true, 0), s(4, 3));
        assert!(step(&spec, &s(1, 2), true, 0).is_terminal());
    }

    #[test]
    #[should_panic]
    fn step_terminal_panics() {
        let spec = unit_spec(1.0);
        let terminal = State {
            backlog: 0,
            residual_deadline: 3,
            interference: 0,
        };
        step(&spec, &terminal, true, 0);
    }

    #[test]
    fn nearest_power_ties_to_smaller() {
        let p = PowerSet::new(vec![2.0, 4.0, 6.0]).unwrap();
        assert_eq!(p.nearest_index(2.731), 0);
        assert_eq!(p.nearest_index(3.0), 0);
        assert_eq!(p.nearest_index(5.0), 1);
        assert_eq!(p.nearest_index(0.0), 0);
        assert_eq!(p.nearest_index(100.0), 2);
    }

    #[test]
    fn stationary_two_state() {
        let chain = InterferenceChain::two_state(1.0, 2.0, 0.1, 0.3).unwrap();
        let pi = chain.stationary();
        assert!((pi[0] - 0.75).abs() < 1e-12);
        assert!((pi[1] - 0.25).abs() < 1e-12);
        // reducible: identity matrix
        let frozen = InterferenceChain::new(
            vec![1.0, 2.0],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            1,
        )
        .unwrap();
        let pi = frozen.stationary();
        assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn backlog_table_extends_with_last_entry() {
        let c = BacklogCost::Table {
            values: vec![1.0, 3.0],
        };
        assert_eq!(c.eval(0), 0.0);
        assert_eq!(c.eval(1), 1.0);
        assert_eq!(c.eval(2), 3.0);
        assert_eq!(c.eval(50), 3.0);
    }
}
