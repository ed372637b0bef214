//! Exhaustive policy enumeration for tiny instances.
//!
//! Every deterministic stationary policy is evaluated by solving its linear
//! cost-to-go system directly, so nothing here shares code with the backward
//! sweep in [`crate::dp`].

use nalgebra::{DMatrix, DVector};

use crate::dp::{PolicyTable, ValueTable};
use crate::error::{Error, Result};
use crate::model::SystemSpec;

/// Refuse enumerations larger than this many policies.
pub const MAX_POLICIES: u64 = 1_000_000;

fn state_index(spec: &SystemSpec, b: usize, d: usize, i: usize) -> usize {
    ((b - 1) * spec.deadline + (d - 1)) * spec.num_states() + i
}

/// Cost-to-go of a fixed action assignment; `actions` is indexed like [`state_index`].
fn evaluate(spec: &SystemSpec, actions: &[usize]) -> DVector<f64> {
    let (big_b, big_d, n_i) = (spec.backlog, spec.deadline, spec.num_states());
    let n = big_b * big_d * n_i;
    let mut a = DMatrix::<f64>::identity(n, n);
    let mut g = DVector::<f64>::zeros(n);
    for b in 1..=big_b {
        for d in 1..=big_d {
            for i in 0..n_i {
                let row = state_index(spec, b, d, i);
                let k = actions[row];
                let s = spec.success_at(k, i);
                g[row] = spec.backlog_cost(b) + spec.power_cost(k);
                if d == 1 {
                    g[row] += (1.0 - s) * spec.drop_cost();
                }
                for j in 0..n_i {
                    let pij = spec.interference.prob(i, j);
                    // next head-of-line packet, or the same packet one attempt later
                    let (p_new, p_same) = if d == 1 { (pij, 0.0) } else { (s * pij, (1.0 - s) * pij) };
                    if b > 1 {
                        a[(row, state_index(spec, b - 1, big_d, j))] -= p_new;
                    }
                    if p_same > 0.0 {
                        a[(row, state_index(spec, b, d - 1, j))] -= p_same;
                    }
                }
            }
        }
    }
    a.lu()
        .solve(&g)
        .expect("policy evaluation system is triangular with unit diagonal")
}

/// Exact value of an arbitrary policy table by linear solve.
pub fn evaluate_table(spec: &SystemSpec, mu: &PolicyTable) -> Result<ValueTable> {
    if spec.arrival_prob != 0.0 {
        return Err(Error::ArrivalsInDp(spec.arrival_prob));
    }
    if mu.backlog() != spec.backlog || mu.deadline() != spec.deadline || mu.states() != spec.num_states() {
        return Err(Error::Dimension("policy table does not match the spec".into()));
    }
    let n_i = spec.num_states();
    let mut actions = vec![0; spec.backlog * spec.deadline * n_i];
    for b in 1..=spec.backlog {
        for d in 1..=spec.deadline {
            for i in 0..n_i {
                actions[state_index(spec, b, d, i)] = mu.action(b, d, i);
            }
        }
    }
    let j = evaluate(spec, &actions);
    let mut v = ValueTable::zeros(spec.backlog, spec.deadline, n_i);
    for b in 1..=spec.backlog {
        for d in 1..=spec.deadline {
            for i in 0..n_i {
                v.set(b, d, i, j[state_index(spec, b, d, i)]);
            }
        }
    }
    Ok(v)
}

/// Smallest value of `J(B, D, i)` over every deterministic stationary policy, per `i`.
pub fn brute_force_start_values(spec: &SystemSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    if spec.arrival_prob != 0.0 {
        return Err(Error::ArrivalsInDp(spec.arrival_prob));
    }
    let n_i = spec.num_states();
    let n = spec.backlog * spec.deadline * n_i;
    let m = spec.powers.len();
    let count = (m as u64).checked_pow(n as u32).filter(|&c| c <= MAX_POLICIES);
    let Some(count) = count else {
        return Err(Error::Unsupported(format!(
            "{m}^{n} policies is too many to enumerate"
        )));
    };
    let mut best = vec![f64::INFINITY; n_i];
    let mut actions = vec![0usize; n];
    for _ in 0..count {
        let j = evaluate(spec, &actions);
        for (i, slot) in best.iter_mut().enumerate() {
            *slot = slot.min(j[state_index(spec, spec.backlog, spec.deadline, i)]);
        }
        // odometer increment
        for a in actions.iter_mut() {
            *a += 1;
            if *a < m {
                break;
            }
            *a = 0;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp::solve;
    use crate::model::{BacklogCost, CostModel, InterferenceChain, PowerCost, PowerSet, SuccessFunction};

    fn tiny() -> SystemSpec {
        SystemSpec {
            backlog: 2,
            deadline: 2,
            powers: PowerSet::new(vec![0.5, 1.5, 3.0]).unwrap(),
            costs: CostModel {
                power: PowerCost::Linear { slope: 1.0 },
                backlog: BacklogCost::Linear { slope: 1.0 },
                drop: 6.0,
            },
            success: SuccessFunction::Ratio,
            interference: InterferenceChain::two_state(1.0, 2.0, 0.3, 0.6).unwrap(),
            arrival_prob: 0.0,
        }
    }

    #[test]
    fn single_step_closed_form() {
        let mut spec = tiny();
        spec.backlog = 1;
        spec.deadline = 1;
        spec.interference = InterferenceChain::fixed(1.0).unwrap();
        let best = brute_force_start_values(&spec).unwrap();
        let direct = [0.5f64, 1.5, 3.0]
            .iter()
            .map(|p| 1.0 + p + (1.0 - p / (p + 1.0)) * 6.0)
            .fold(f64::INFINITY, f64::min);
        assert!((best[0] - direct).abs() < 1e-12);
    }

    #[test]
    fn optimal_table_evaluates_to_its_value() {
        let spec = tiny();
        let (v, mu) = solve(&spec).unwrap();
        let w = evaluate_table(&spec, &mu).unwrap();
        for b in 1..=2 {
            for d in 1..=2 {
                for i in 0..2 {
                    assert!((v.get(b, d, i) - w.get(b, d, i)).abs() < 1e-12);
                }
            }
        }
        let best = brute_force_start_values(&spec).unwrap();
        for (i, b) in best.iter().enumerate() {
            assert!((b - v.get(2, 2, i)).abs() < 1e-9);
        }
    }

    #[test]
    fn oversized_enumeration_rejected() {
        let mut spec = tiny();
        spec.backlog = 20;
        assert!(brute_force_start_values(&spec).is_err());
    }
}
