//! Exact cost-to-go and tie-broken optimal policy for the full Markov
//! interference model.
//!
//! Every transition out of `(b, d, i)` lands either on level `b - 1` (with a
//! fresh deadline) or on `(b, d - 1, ·)`. Sweeping `b = 1..B` and, inside it,
//! `d = 1..D` therefore visits each state after all of its successors and a
//! single backward pass solves the Bellman equation exactly.

use crate::error::{Error, Result};
use crate::model::SystemSpec;

/// Objective values closer than this are treated as ties; ties resolve to the
/// smallest power.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Dense cost-to-go table `J(b, d, i)` for `b = 0..=B`, `d = 1..=D`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    backlog: usize,
    deadline: usize,
    states: usize,
    values: Vec<f64>,
}

impl ValueTable {
    pub fn zeros(backlog: usize, deadline: usize, states: usize) -> Self {
        ValueTable {
            backlog,
            deadline,
            states,
            values: vec![0.0; (backlog + 1) * deadline * states],
        }
    }

    fn index(&self, b: usize, d: usize, i: usize) -> usize {
        debug_assert!(b <= self.backlog && (1..=self.deadline).contains(&d) && i < self.states);
        (b * self.deadline + (d - 1)) * self.states + i
    }

    pub fn get(&self, b: usize, d: usize, i: usize) -> f64 {
        self.values[self.index(b, d, i)]
    }

    pub fn set(&mut self, b: usize, d: usize, i: usize, v: f64) {
        let k = self.index(b, d, i);
        self.values[k] = v;
    }

    pub fn backlog(&self) -> usize {
        self.backlog
    }

    pub fn deadline(&self) -> usize {
        self.deadline
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub(crate) fn check_dims(&self, spec: &SystemSpec) -> Result<()> {
        if self.backlog != spec.backlog
            || self.deadline != spec.deadline
            || self.states != spec.num_states()
        {
            return Err(Error::Dimension(format!(
                "table is {}x{}x{}, spec needs {}x{}x{}",
                self.backlog,
                self.deadline,
                self.states,
                spec.backlog,
                spec.deadline,
                spec.num_states()
            )));
        }
        Ok(())
    }
}

/// Power-index table `mu(b, d, i)` for `b = 1..=B`, `d = 1..=D`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    backlog: usize,
    deadline: usize,
    states: usize,
    powers: Vec<f64>,
    actions: Vec<usize>,
}

impl PolicyTable {
    pub(crate) fn new(backlog: usize, deadline: usize, states: usize, powers: &[f64]) -> Self {
        PolicyTable {
            backlog,
            deadline,
            states,
            powers: powers.to_vec(),
            actions: vec![0; backlog * deadline * states],
        }
    }

    fn index(&self, b: usize, d: usize, i: usize) -> usize {
        assert!(
            (1..=self.backlog).contains(&b),
            "backlog {b} outside the solved range 1..={}",
            self.backlog
        );
        debug_assert!((1..=self.deadline).contains(&d) && i < self.states);
        ((b - 1) * self.deadline + (d - 1)) * self.states + i
    }

    /// Index into the power set chosen at `(b, d, i)`.
    pub fn action(&self, b: usize, d: usize, i: usize) -> usize {
        self.actions[self.index(b, d, i)]
    }

    /// Power value chosen at `(b, d, i)`.
    pub fn power(&self, b: usize, d: usize, i: usize) -> f64 {
        self.powers[self.action(b, d, i)]
    }

    pub(crate) fn set(&mut self, b: usize, d: usize, i: usize, action: usize) {
        let k = self.index(b, d, i);
        self.actions[k] = action;
    }

    pub fn backlog(&self) -> usize {
        self.backlog
    }

    pub fn deadline(&self) -> usize {
        self.deadline
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn powers(&self) -> &[f64] {
        &self.powers
    }
}

/// Right-hand side of the Bellman equation at `(b, d, i)` for power index `pidx`.
///
/// Reads `J(b - 1, D, ·)` and, when `d > 1`, `J(b, d - 1, ·)` from `v`.
pub fn q_value(spec: &SystemSpec, v: &ValueTable, b: usize, d: usize, i: usize, pidx: usize) -> f64 {
    let s = spec.success_at(pidx, i);
    let drop = spec.drop_cost();
    let big_d = spec.deadline;
    let mut expected = 0.0;
    for (j, &pij) in spec.interference.transition()[i].iter().enumerate() {
        if pij == 0.0 {
            continue;
        }
        let next_packet = v.get(b - 1, big_d, j);
        let on_failure = if d == 1 {
            drop + next_packet
        } else {
            v.get(b, d - 1, j)
        };
        expected += pij * (s * next_packet + (1.0 - s) * on_failure);
    }
    spec.backlog_cost(b) + spec.power_cost(pidx) + expected
}

/// Minimum over `objective(k)` for `k in 0..n` and the smallest index within
/// [`TIE_TOLERANCE`] of it.
pub fn min_argmin(n: usize, mut objective: impl FnMut(usize) -> f64) -> (f64, usize) {
    let values: Vec<f64> = (0..n).map(&mut objective).collect();
    let best = values.iter().copied().fold(f64::INFINITY, f64::min);
    let arg = values
        .iter()
        .position(|&x| x <= best + TIE_TOLERANCE)
        .expect("non-empty action set");
    (best, arg)
}

/// Solve the Bellman equation by one backward sweep.
pub fn solve(spec: &SystemSpec) -> Result<(ValueTable, PolicyTable)> {
    if spec.arrival_prob > 0.0 {
        return Err(Error::ArrivalsInDp(spec.arrival_prob));
    }
    let states = spec.num_states();
    let mut v = ValueTable::zeros(spec.backlog, spec.deadline, states);
    let mut mu = PolicyTable::new(spec.backlog, spec.deadline, states, spec.powers.levels());
    for b in 1..=spec.backlog {
        for d in 1..=spec.deadline {
            for i in 0..states {
                let (best, arg) = min_argmin(spec.powers.len(), |k| q_value(spec, &v, b, d, i, k));
                v.set(b, d, i, best);
                mu.set(b, d, i, arg);
            }
        }
    }
    Ok((v, mu))
}

/// Largest absolute gap between `v` and one application of the Bellman
/// operator to `v`, including the terminal rows.
pub fn bellman_residual(spec: &SystemSpec, v: &ValueTable) -> Result<f64> {
    v.check_dims(spec)?;
    let mut worst: f64 = 0.0;
    for d in 1..=spec.deadline {
        for i in 0..spec.num_states() {
            worst = worst.max(v.get(0, d, i).abs());
        }
    }
    for b in 1..=spec.backlog {
        for d in 1..=spec.deadline {
            for i in 0..spec.num_states() {
                let (best, _) = min_argmin(spec.powers.len(), |k| q_value(spec, v, b, d, i, k));
                worst = worst.max((best - v.get(b, d, i)).abs());
            }
        }
    }
    Ok(worst)
}

/// Smallest minimizer of the Bellman right-hand side at every state.
pub fn greedy_policy(spec: &SystemSpec, v: &ValueTable) -> Result<PolicyTable> {
    v.check_dims(spec)?;
    let mut mu = PolicyTable::new(
        spec.backlog,
        spec.deadline,
        spec.num_states(),
        spec.powers.levels(),
    );
    for b in 1..=spec.backlog {
        for d in 1..=spec.deadline {
            for i in 0..spec.num_states() {
                let (_, arg) = min_argmin(spec.powers.len(), |k| q_value(spec, v, b, d, i, k));
                mu.set(b, d, i, arg);
            }
        }
    }
    Ok(mu)
}
