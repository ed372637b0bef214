//! CSV emission with a fixed column order and 12 significant digits.

use std::io::Write;

use crate::analytics::{ConcaveEnvelope, SigmaBounds, SigmaTable};
use crate::dp::{PolicyTable, ValueTable};
use crate::error::Result;
use crate::sim::{SimReport, SlotEvent};

/// `printf("%.12g")`: 12 significant digits, trailing zeros trimmed,
/// scientific notation outside `[1e-4, 1e12)`.
pub fn g12(x: f64) -> String {
    const DIGITS: i32 = 12;
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{:.*e}", (DIGITS - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..DIGITS).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa), exp.abs())
    } else {
        let decimals = (DIGITS - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn write_values<W: Write>(w: W, v: &ValueTable) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["b", "d", "i", "value"])?;
    for b in 0..=v.backlog() {
        for d in 1..=v.deadline() {
            for i in 0..v.states() {
                out.write_record([
                    b.to_string(),
                    d.to_string(),
                    (i + 1).to_string(),
                    g12(v.get(b, d, i)),
                ])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_policy<W: Write>(w: W, mu: &PolicyTable) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["b", "d", "i", "power"])?;
    for b in 1..=mu.backlog() {
        for d in 1..=mu.deadline() {
            for i in 0..mu.states() {
                out.write_record([
                    b.to_string(),
                    d.to_string(),
                    (i + 1).to_string(),
                    g12(mu.power(b, d, i)),
                ])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_sigma<W: Write>(w: W, st: &SigmaTable, bounds: &SigmaBounds) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["b", "d", "delta", "sigma", "tb0", "lower", "upper"])?;
    for b in 1..=st.backlog() {
        for d in 1..=st.deadline() {
            out.write_record([
                b.to_string(),
                d.to_string(),
                g12(st.delta(b, d)),
                g12(st.sigma(b, d)),
                g12(st.tb0(b)),
                g12(bounds.lower(b, d)),
                g12(bounds.upper(b, d)),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Samples `p = k * p_max / (n - 1)` for `k = 0..n`.
pub fn write_envelope<W: Write>(w: W, env: &ConcaveEnvelope, p_max: f64, n: usize) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["p", "success", "envelope"])?;
    for k in 0..n {
        let p = if n > 1 { p_max * k as f64 / (n - 1) as f64 } else { 0.0 };
        out.write_record([g12(p), g12(env.base.prob(p, env.level)), g12(env.value(p))])?;
    }
    out.flush()?;
    Ok(())
}

/// One simulated operating point.
#[derive(Debug, Clone, PartialEq)]
pub struct SimRow {
    pub scenario: String,
    pub policy: String,
    pub parameter: String,
    pub value: Option<f64>,
    pub report: SimReport,
}

pub fn write_sim_rows<W: Write>(w: W, rows: &[SimRow], verbose: bool) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec![
        "scenario",
        "policy",
        "parameter",
        "value",
        "mean_total_cost",
        "stderr_total_cost",
        "drop_fraction",
        "avg_power_per_packet",
        "mean_completion_slots",
        "truncated_count",
    ];
    if verbose {
        header.extend([
            "drop_fraction_stderr",
            "mean_drop_ratio",
            "avg_power_stderr",
            "stderr_completion_slots",
            "replications",
        ]);
    }
    out.write_record(&header)?;
    for row in rows {
        let r = &row.report;
        let mut rec = vec![
            row.scenario.clone(),
            row.policy.clone(),
            row.parameter.clone(),
            row.value.map(g12).unwrap_or_default(),
            g12(r.mean_total_cost),
            g12(r.stderr_total_cost),
            g12(r.drop_fraction),
            g12(r.avg_power_per_packet),
            g12(r.mean_completion_slots),
            r.truncated_count.to_string(),
        ];
        if verbose {
            rec.extend([
                g12(r.drop_fraction_stderr),
                g12(r.mean_drop_ratio),
                g12(r.avg_power_stderr),
                g12(r.stderr_completion_slots),
                r.replications.to_string(),
            ]);
        }
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_events<W: Write>(w: W, events: &[SlotEvent]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "slot",
        "b",
        "d",
        "i_observed",
        "power",
        "success",
        "arrival",
        "stage_cost",
    ])?;
    for e in events {
        out.write_record([
            e.slot.to_string(),
            e.backlog.to_string(),
            e.residual_deadline.to_string(),
            g12(e.interference_level),
            g12(e.power),
            u8::from(e.success).to_string(),
            u8::from(e.arrival).to_string(),
            g12(e.stage_cost),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g12_matches_printf() {
        let cases = [
            (0.0, "0"),
            (1.0, "1"),
            (-2.5, "-2.5"),
            (0.1, "0.1"),
            (1.0 / 3.0, "0.333333333333"),
            (2.0 / 3.0, "0.666666666667"),
            (123456789012.0, "123456789012"),
            (1234567890123.0, "1.23456789012e+12"),
            (0.0001, "0.0001"),
            (0.00001234, "1.234e-05"),
            (5.35335283236613, "5.35335283237"),
            (1e100, "1e+100"),
            (f64::NAN, "nan"),
        ];
        for (x, want) in cases {
            assert_eq!(g12(x), want, "{x}");
        }
    }

    #[test]
    fn rounding_across_a_decade() {
        // 9.9999999999996 rounds up to 10 at 12 digits
        assert_eq!(g12(9.9999999999996), "10");
        assert_eq!(g12(99999.99999999999), "100000");
    }
}
