//! Scenario documents: a system, the controllers to compare, sweeps and
//! Monte Carlo settings, all in one JSON file.

use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};
use crate::model::{PowerCost, SystemSpec};
use crate::policy::PolicyConfig;
use crate::sim::SimConfig;

/// Which scalar a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParameter {
    /// Slope of the linear power cost.
    K,
    /// Low-power probability of the AVG controller.
    #[serde(rename = "alpha")]
    Alpha,
    /// Drop cost.
    Cd,
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::K => "K",
            SweepParameter::Alpha => "alpha",
            SweepParameter::Cd => "Cd",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

impl Sweep {
    fn validate(&self, policy: &PolicyConfig, field: &str) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::invalid(format!("{field}.values"), "sweep has no values"));
        }
        for (k, &v) in self.values.iter().enumerate() {
            let ok = match self.parameter {
                SweepParameter::K => v.is_finite() && v > 0.0,
                SweepParameter::Alpha => (0.0..=1.0).contains(&v),
                SweepParameter::Cd => v.is_finite() && v >= 0.0,
            };
            if !ok {
                return Err(Error::invalid(
                    format!("{field}.values[{k}]"),
                    format!("{v} is out of range for {}", self.parameter.name()),
                ));
            }
        }
        if self.parameter == SweepParameter::Alpha && !matches!(policy, PolicyConfig::Avg { .. }) {
            return Err(Error::invalid(
                format!("{field}.parameter"),
                format!("alpha only applies to avg, not {}", policy.label()),
            ));
        }
        Ok(())
    }

    fn sorted_values(&self) -> Vec<f64> {
        let mut v = self.values.clone();
        v.sort_by(f64::total_cmp);
        v
    }
}

/// One controller and, optionally, the sweep specific to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEntry {
    #[serde(flatten)]
    pub config: PolicyConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Sweep>,
}

impl From<PolicyConfig> for PolicyEntry {
    fn from(config: PolicyConfig) -> Self {
        PolicyEntry { config, sweep: None }
    }
}

fn one_or_many<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<PolicyEntry>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(PolicyEntry),
        Many(Vec<PolicyEntry>),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(p) => vec![p],
        OneOrMany::Many(v) => v,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub spec: SystemSpec,
    /// A single controller object or a list of them.
    #[serde(alias = "policy", deserialize_with = "one_or_many")]
    pub policies: Vec<PolicyEntry>,
    pub sim: SimConfig,
    /// Applies to every controller without its own sweep.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Sweep>,
}

/// A fully resolved simulation point.
#[derive(Debug, Clone, PartialEq)]
pub struct Job {
    pub policy: PolicyConfig,
    pub spec: SystemSpec,
    pub parameter: Option<(SweepParameter, f64)>,
}

impl Scenario {
    /// Parse and validate; errors carry the offending field path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let scenario: Scenario = serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.policies.is_empty() {
            return Err(Error::invalid("policies", "at least one policy is required"));
        }
        for (k, entry) in self.policies.iter().enumerate() {
            let field = format!("policies[{k}]");
            entry.config.validate(&field)?;
            if let Some(sweep) = self.sweep_for(entry) {
                let sweep_field = if entry.sweep.is_some() {
                    format!("{field}.sweep")
                } else {
                    "sweep".to_string()
                };
                sweep.validate(&entry.config, &sweep_field)?;
            }
        }
        self.sim.validate(&self.spec, "sim")
    }

    fn sweep_for<'a>(&'a self, entry: &'a PolicyEntry) -> Option<&'a Sweep> {
        entry.sweep.as_ref().or(self.sweep.as_ref())
    }

    /// Apply command-line overrides.
    pub fn override_sim(&mut self, seed: Option<u64>, replications: Option<usize>) {
        if let Some(s) = seed {
            self.sim.base_seed = s;
        }
        if let Some(r) = replications {
            self.sim.replications = r;
        }
    }

    /// Every (controller, sweep point) in output order: controllers as listed,
    /// sweep values ascending.
    pub fn jobs(&self) -> Vec<Job> {
        let mut jobs = Vec::new();
        for entry in &self.policies {
            match self.sweep_for(entry) {
                None => jobs.push(Job {
                    policy: entry.config.clone(),
                    spec: self.spec.clone(),
                    parameter: None,
                }),
                Some(sweep) => {
                    for v in sweep.sorted_values() {
                        let (spec, policy) = apply(&self.spec, &entry.config, sweep.parameter, v);
                        jobs.push(Job {
                            policy,
                            spec,
                            parameter: Some((sweep.parameter, v)),
                        });
                    }
                }
            }
        }
        jobs
    }
}

/// Spec and controller with one swept parameter substituted.
pub fn apply(
    spec: &SystemSpec,
    policy: &PolicyConfig,
    parameter: SweepParameter,
    value: f64,
) -> (SystemSpec, PolicyConfig) {
    let mut spec = spec.clone();
    let mut policy = policy.clone();
    match parameter {
        SweepParameter::K => spec.costs.power = PowerCost::Linear { slope: value },
        SweepParameter::Cd => spec.costs.drop = value,
        SweepParameter::Alpha => {
            if let PolicyConfig::Avg { alpha } = &mut policy {
                *alpha = value;
            }
        }
    }
    (spec, policy)
}

/// A scenario shipped inside the binary.
#[derive(Debug, Clone, Copy)]
pub struct Canned {
    pub name: &'static str,
    pub summary: &'static str,
    json: &'static str,
}

impl Canned {
    pub fn load(&self) -> Result<Scenario> {
        Scenario::from_json(self.json)
    }

    pub fn json(&self) -> &'static str {
        self.json
    }
}

pub const CANNED: &[Canned] = &[
    Canned {
        name: "illustrative-cd1",
        summary: "fixed interference, P = {2, 4, 6}, C_d = 1: power rises as the deadline nears",
        json: include_str!("../scenarios/illustrative-cd1.json"),
    },
    Canned {
        name: "illustrative-cd10",
        summary: "fixed interference, P = {2, 4, 6}, C_d = 10: behavior flips between b = 4 and b = 5",
        json: include_str!("../scenarios/illustrative-cd10.json"),
    },
    Canned {
        name: "illustrative-cd100",
        summary: "fixed interference, P = {2, 4, 6}, C_d = 100: power falls as the deadline nears",
        json: include_str!("../scenarios/illustrative-cd100.json"),
    },
    Canned {
        name: "slow-fading",
        summary: "two-level interference, p_u = p_d = 0.1, cost versus K for DP, MIN, MAX, SLBPC1, SLBPC2",
        json: include_str!("../scenarios/slow-fading.json"),
    },
    Canned {
        name: "fast-fading",
        summary: "two-level interference, p_u = p_d = 0.9, cost versus K for DP, MIN, MAX, SLBPC1, SLBPC2",
        json: include_str!("../scenarios/fast-fading.json"),
    },
    Canned {
        name: "detailed",
        summary: "B = 100 with arrivals, two sub-slots per slot, SLBPC1/SLBPC2 over K and AVG over alpha",
        json: include_str!("../scenarios/detailed.json"),
    },
];

pub fn find_canned(name: &str) -> Result<&'static Canned> {
    CANNED.iter().find(|c| c.name == name).ok_or_else(|| {
        let names: Vec<&str> = CANNED.iter().map(|c| c.name).collect();
        Error::invalid("canned", format!("unknown scenario `{name}`; known: {}", names.join(", ")))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_canned_scenario_parses_and_round_trips() {
        for c in CANNED {
            let s = c.load().unwrap_or_else(|e| panic!("{}: {e}", c.name));
            assert_eq!(s.name, c.name);
            let again = Scenario::from_json(&s.to_json()).unwrap();
            assert_eq!(s, again);
        }
    }

    #[test]
    fn single_policy_object_is_accepted() {
        let text = r#"{
            "name": "one",
            "spec": {
                "backlog": 2, "deadline": 2, "powers": [1.0, 2.0],
                "costs": {"power": {"form": "linear", "slope": 1.0},
                          "backlog": {"form": "linear", "slope": 1.0}, "drop": 3.0},
                "success": {"family": "ratio"},
                "interference": {"levels": [1.0], "transition": [[1.0]]}
            },
            "policy": {"kind": "avg", "alpha": 0.25},
            "sim": {"replications": 10, "base_seed": 1, "initial_interference": 1}
        }"#;
        let s = Scenario::from_json(text).unwrap();
        assert_eq!(s.policies.len(), 1);
        assert_eq!(s.policies[0].config, PolicyConfig::Avg { alpha: 0.25 });
    }

    #[test]
    fn errors_name_the_field() {
        let bad_row = CANNED[3]
            .json
            .replacen("[0.9, 0.1]", "[0.8, 0.1]", 1);
        match Scenario::from_json(&bad_row) {
            Err(Error::InvalidConfig { field, .. }) => {
                assert!(field.starts_with("spec.interference"), "{field}")
            }
            other => panic!("unexpected {other:?}"),
        }
        let typo = CANNED[0].json.replacen("\"deadline\"", "\"dedline\"", 1);
        match Scenario::from_json(&typo) {
            Err(Error::Parse { path, .. }) => assert!(path.starts_with("spec"), "{path}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn alpha_sweep_requires_avg() {
        let mut s = CANNED[3].load().unwrap();
        s.sweep = Some(Sweep {
            parameter: SweepParameter::Alpha,
            values: vec![0.5],
        });
        s.policies[0].sweep = None;
        assert!(s.validate().is_err());
    }

    #[test]
    fn jobs_sort_sweep_values() {
        let mut s = CANNED[3].load().unwrap();
        s.policies = vec![PolicyConfig::Min.into()];
        s.sweep = Some(Sweep {
            parameter: SweepParameter::K,
            values: vec![3.0, 1.0, 2.0],
        });
        let ks: Vec<f64> = s.jobs().iter().map(|j| j.spec.power_slope().unwrap()).collect();
        assert_eq!(ks, vec![1.0, 2.0, 3.0]);
    }
}
