use super::{concave_envelope, SigmaTable};
use crate::error::{Error, Result};
use crate::model::{PowerCost, SuccessFunction, SystemSpec};

/// Continuous relaxation `gamma(b, d) = argmin_{p >= 0} { K p - s(p, i_ref) (C_d + sigma(b, d - 1)) }`.
///
/// Requires a linear power cost; `k_slope` is the slope used in the
/// first-order condition.
pub fn gamma(
    st: &SigmaTable,
    spec: &SystemSpec,
    b: usize,
    d: usize,
    i_ref: f64,
    k_slope: f64,
) -> Result<f64> {
    if !matches!(spec.costs.power, PowerCost::Linear { .. }) {
        return Err(Error::NonLinearPowerCost);
    }
    let pressure = spec.drop_cost() + st.sigma(b, d - 1);
    gamma_for_pressure(&spec.success, i_ref, k_slope, pressure)
}

/// Minimizer over `p >= 0` of `k_slope * p - s(p, i_ref) * pressure`.
///
/// Concave families use their closed-form inverse derivative. Sigmoids use
/// the derivative of their concave envelope, so the first-order condition
/// picks the global minimizer.
pub fn gamma_for_pressure(
    success: &SuccessFunction,
    i_ref: f64,
    k_slope: f64,
    pressure: f64,
) -> Result<f64> {
    if !(k_slope.is_finite() && k_slope > 0.0) {
        return Err(Error::NonLinearPowerCost);
    }
    if pressure <= 0.0 {
        return Ok(0.0);
    }
    // s'(p) = target at the optimum
    let target = k_slope / pressure;
    let p = match *success {
        SuccessFunction::Exponential { scale } => {
            let c = scale * i_ref;
            c * (pressure / (k_slope * c)).ln()
        }
        SuccessFunction::Ratio => (i_ref * pressure / k_slope).sqrt() - i_ref,
        SuccessFunction::Sigmoid { .. } => {
            let env = concave_envelope(success, i_ref)?;
            if target >= env.k_ccv {
                0.0
            } else {
                invert_decreasing(|p| success.derivative(p, i_ref), target, env.p_star)
            }
        }
    };
    Ok(p.max(0.0))
}

/// Solve `f(p) = target` for `f` decreasing on `[start, inf)` with `f(start) > target`.
fn invert_decreasing(f: impl Fn(f64) -> f64, target: f64, start: f64) -> f64 {
    let mut lo = start;
    let mut hi = start.max(1.0) * 2.0;
    while f(hi) > target {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}
