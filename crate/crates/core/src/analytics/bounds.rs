use super::SigmaTable;
use crate::model::SystemSpec;

/// Affine-in-`C_b(b)` envelopes around `sigma(b, d)`.
///
/// With `m`/`M` the min/max over the power set of `C_p(p) - s(p, i) C_d` and
/// `g(q, d) = sum_{k < d} (1 - q)^k`:
///
/// | sign of `T_b(0)` | lower                      | upper                      |
/// |------------------|----------------------------|----------------------------|
/// | `> 0`            | `(C_b + m) g(s_max, d)`    | `(C_b + M) g(s_min, d)`    |
/// | `< 0`            | `(C_b + m) g(s_min, d)`    | `(C_b + M) g(s_max, d)`    |
/// | `= 0`            | `0`                        | `0`                        |
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaBounds {
    pub m: f64,
    pub big_m: f64,
    pub s_min: f64,
    pub s_max: f64,
    backlog: usize,
    deadline: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl SigmaBounds {
    fn index(&self, b: usize, d: usize) -> usize {
        assert!((1..=self.backlog).contains(&b) && (1..=self.deadline).contains(&d));
        (b - 1) * self.deadline + (d - 1)
    }

    pub fn lower(&self, b: usize, d: usize) -> f64 {
        self.lower[self.index(b, d)]
    }

    pub fn upper(&self, b: usize, d: usize) -> f64 {
        self.upper[self.index(b, d)]
    }

    /// Smallest of `sigma - lower` and `upper - sigma` over the whole table.
    /// Negative means a bound is violated.
    pub fn min_slack(&self, st: &SigmaTable) -> f64 {
        let mut slack = f64::INFINITY;
        for b in 1..=self.backlog {
            for d in 1..=self.deadline {
                let s = st.sigma(b, d);
                slack = slack.min(s - self.lower(b, d)).min(self.upper(b, d) - s);
            }
        }
        slack
    }
}

fn geometric(ratio: f64, terms: usize) -> f64 {
    let mut total = 0.0;
    let mut term = 1.0;
    for _ in 0..terms {
        total += term;
        term *= ratio;
    }
    total
}

pub fn sigma_bounds(st: &SigmaTable, spec: &SystemSpec) -> SigmaBounds {
    let level = st.level();
    let drop = spec.drop_cost();
    let tradeoffs: Vec<f64> = (0..spec.powers.len())
        .map(|k| spec.power_cost(k) - spec.success_at_level(k, level) * drop)
        .collect();
    let m = tradeoffs.iter().copied().fold(f64::INFINITY, f64::min);
    let big_m = tradeoffs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s_min = spec.success_at_level(spec.powers.min_index(), level);
    let s_max = spec.success_at_level(spec.powers.max_index(), level);

    let (big_b, big_d) = (st.backlog(), st.deadline());
    let mut lower = Vec::with_capacity(big_b * big_d);
    let mut upper = Vec::with_capacity(big_b * big_d);
    for b in 1..=big_b {
        let cb = spec.backlog_cost(b);
        let tb0 = st.tb0(b);
        for d in 1..=big_d {
            let (lo, hi) = if tb0 > 0.0 {
                (
                    (cb + m) * geometric(1.0 - s_max, d),
                    (cb + big_m) * geometric(1.0 - s_min, d),
                )
            } else if tb0 < 0.0 {
                (
                    (cb + m) * geometric(1.0 - s_min, d),
                    (cb + big_m) * geometric(1.0 - s_max, d),
                )
            } else {
                (0.0, 0.0)
            };
            lower.push(lo);
            upper.push(hi);
        }
    }
    SigmaBounds {
        m,
        big_m,
        s_min,
        s_max,
        backlog: big_b,
        deadline: big_d,
        lower,
        upper,
    }
}
