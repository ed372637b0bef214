use std::process::{Command, Output};

use holpower::scenario::find_canned;

fn holpower(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_holpower"))
        .args(args)
        .env_remove("HOLPOWER_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn list_names_every_canned_scenario() {
    let out = stdout(&holpower(&["list"]));
    for name in ["illustrative-cd1", "illustrative-cd10", "illustrative-cd100", "slow-fading", "fast-fading", "detailed"] {
        assert!(out.contains(name), "{name} missing from\n{out}");
    }
}

#[test]
fn high_drop_cost_policy_is_non_increasing_in_deadline() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    stdout(&holpower(&["solve", "--canned", "illustrative-cd100", "--out", out]));
    let text = std::fs::read_to_string(dir.path().join("policy.csv")).unwrap();
    let mut rows = csv::Reader::from_reader(text.as_bytes());
    let mut last: Option<(usize, f64)> = None;
    for rec in rows.records() {
        let rec = rec.unwrap();
        let b: usize = rec[0].parse().unwrap();
        let p: f64 = rec[3].parse().unwrap();
        if let Some((pb, pp)) = last {
            if pb == b {
                assert!(p <= pp, "b={b}: power rises to {p} from {pp}");
            }
        }
        last = Some((b, p));
    }
}

#[test]
fn bad_config_exits_with_the_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    let text = find_canned("fast-fading").unwrap().json().replacen("[0.1, 0.9]", "[0.1, 0.8]", 1);
    std::fs::write(&path, text).unwrap();
    let o = holpower(&["solve", "--scenario", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("spec.interference.transition[0]"), "{err}");
}

#[test]
fn event_log_requires_verbose() {
    let o = holpower(&["simulate", "--canned", "slow-fading", "--event-log", "x.csv"]);
    assert!(!o.status.success());
}

#[test]
fn event_log_rows_cover_the_first_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("events.csv");
    let rows = dir.path().join("rows.csv");
    stdout(&holpower(&[
        "simulate",
        "--canned",
        "illustrative-cd10",
        "--replications",
        "5",
        "--verbose",
        "--out",
        rows.to_str().unwrap(),
        "--event-log",
        log.to_str().unwrap(),
    ]));
    let text = std::fs::read_to_string(&log).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("slot,b,d,i_observed,power,success,arrival,stage_cost"));
    assert!(lines.count() >= 20);
}

#[test]
fn verify_passes_on_a_canned_scenario() {
    let out = stdout(&holpower(&["verify", "--canned", "illustrative-cd10"]));
    assert!(out.trim_end().ends_with("0 failed"), "{out}");
}

#[test]
fn sigma_needs_a_state_on_multi_state_chains() {
    let o = holpower(&["sigma", "--canned", "slow-fading"]);
    assert_eq!(o.status.code(), Some(2));
    let out = stdout(&holpower(&["sigma", "--canned", "slow-fading", "--interference", "2"]));
    assert!(out.starts_with("b,d,delta,sigma,tb0,lower,upper"));
}
