use scol_learn::attack::AttackReport;
use scol_learn::data::{synthetic_splits, SplitSpec, SyntheticParams};
use scol_learn::protocol::run_scenario;
use scol_learn::report::*;
use scol_learn::{Method, ModelConfig, ScenarioConfig};

fn run(method: Method, secure: bool) -> scol_learn::ScenarioResult {
    let spec = SplitSpec::synthetic().scaled(0.003);
    let splits = synthetic_splits(&spec, &SyntheticParams::default(), 1).unwrap();
    let mut c = ScenarioConfig::new(method, ModelConfig::fcn(784, 10), 7);
    c.train.epochs = 1;
    c.secure = secure;
    run_scenario(&c, &splits).unwrap()
}

#[test]
fn metrics_have_one_record_per_party_and_label() {
    let csv = metrics_csv(&[run(Method::Nc, false)]).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], METRICS_HEADER.join(","));
    assert_eq!(lines.len(), 1 + 2 * 10);
    assert!(lines[1].starts_with("nc,7,1,0,"));
    assert!(lines[20].starts_with("nc,7,2,9,"));
}

#[test]
fn traffic_is_reported_only_for_secure_runs() {
    assert!(traffic_csv(&[run(Method::Ctfe, false)]).unwrap().is_none());
    let csv = traffic_csv(&[run(Method::Sfe, true)]).unwrap().unwrap();
    let phases: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(2).unwrap()).collect();
    assert_eq!(phases, ["SECURE_TRAIN", "OPEN", "RANDOMNESS"]);
}

#[test]
fn timing_lists_every_phase() {
    let csv = timing_csv(&[run(Method::Ltfe, false)]).unwrap();
    let phases: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(2).unwrap()).collect();
    assert_eq!(phases, ["feature_extractor", "collaborative", "evaluate"]);
}

#[test]
fn attack_exports_follow_the_reports() {
    let r = AttackReport::from_scores(vec![0.9, 0.7], vec![0.2]).unwrap();
    let roc = roc_csv(&[("ctfe", 3, &r)]).unwrap();
    assert_eq!(roc.lines().count(), 1 + r.roc.len());
    let hist = hist_csv(&[("ctfe", 3, &r)]).unwrap();
    assert_eq!(hist.lines().count(), 21);
    assert!(hist.lines().any(|l| l == "ctfe,3,0.90,0.95,1,0"));
}
