use crate::error::{Error, Result};
use crate::model::SuccessFunction;

/// Bisection stops once the tangency residual is this small.
pub const ENVELOPE_RESIDUAL_TOLERANCE: f64 = 1e-10;

const BRACKET_LOW: f64 = 1e-9;
const MAX_DOUBLINGS: usize = 200;
const MAX_BISECTIONS: usize = 500;

/// Smallest concave majorant of a sigmoidal `p -> s(p, i)`: the chord from
/// `(0, s(0, i))` tangent to `s` at `p_star`, followed by `s` itself.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcaveEnvelope {
    pub p_star: f64,
    pub k_ccv: f64,
    pub base: SuccessFunction,
    pub level: f64,
    s0: f64,
}

impl ConcaveEnvelope {
    pub fn value(&self, p: f64) -> f64 {
        if p < self.p_star {
            self.k_ccv * p + self.s0
        } else {
            self.base.prob(p, self.level)
        }
    }

    pub fn derivative(&self, p: f64) -> f64 {
        if p < self.p_star {
            self.k_ccv
        } else {
            self.base.derivative(p, self.level)
        }
    }

    /// `s'(p*) p* - (s(p*) - s(0))`, zero at an exact tangency.
    pub fn tangency_residual(&self) -> f64 {
        tangency(&self.base, self.level, self.s0, self.p_star)
    }
}

fn tangency(s: &SuccessFunction, level: f64, s0: f64, p: f64) -> f64 {
    s.derivative(p, level) * p - (s.prob(p, level) - s0)
}

/// Locate the tangency point by bisection on `h(p) = s'(p) p - (s(p) - s(0))`,
/// which is non-negative on the convex stretch and negative once the chord
/// overtakes the curve.
pub fn concave_envelope(s: &SuccessFunction, level: f64) -> Result<ConcaveEnvelope> {
    if !matches!(s, SuccessFunction::Sigmoid { .. }) {
        return Err(Error::NotSigmoidal(format!("{s:?} has no convex stretch")));
    }
    let s0 = s.prob(0.0, level);
    let h = |p: f64| tangency(s, level, s0, p);

    let mut lo = BRACKET_LOW;
    // h itself is below rounding noise this close to 0; the slope trend is not.
    if s.derivative(2.0 * lo, level) < s.derivative(lo, level) {
        return Err(Error::NotSigmoidal(format!(
            "curve is already concave at p = {lo}"
        )));
    }
    let mut hi = level.max(1.0);
    let mut doublings = 0;
    while h(hi) >= 0.0 {
        lo = hi;
        hi *= 2.0;
        doublings += 1;
        if doublings > MAX_DOUBLINGS || !hi.is_finite() {
            return Err(Error::NotSigmoidal(
                "tangency point not bracketed; the curve never turns concave".into(),
            ));
        }
    }

    let mut mid = 0.5 * (lo + hi);
    for _ in 0..MAX_BISECTIONS {
        mid = 0.5 * (lo + hi);
        let r = h(mid);
        if r.abs() <= ENVELOPE_RESIDUAL_TOLERANCE || hi - lo <= f64::EPSILON * hi {
            break;
        }
        if r >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(ConcaveEnvelope {
        p_star: mid,
        k_ccv: s.derivative(mid, level),
        base: s.clone(),
        level,
        s0,
    })
}
