//! Delimited-text exports of scenario and attack results.

use scol_mpc::{Phase, TrafficStats};

use crate::attack::AttackReport;
use crate::error::{LearnError, Result};
use crate::protocol::ScenarioResult;

fn writer() -> csv::Writer<Vec<u8>> {
    csv::Writer::from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| LearnError::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| LearnError::Format(e.to_string()))
}

fn csv_err(e: csv::Error) -> LearnError {
    LearnError::Format(e.to_string())
}

pub const METRICS_HEADER: [&str; 8] = ["method", "seed", "party", "label", "accuracy", "precision", "recall", "f1"];

/// One record per (run, party, label); parties are numbered from 1.
pub fn metrics_csv(results: &[ScenarioResult]) -> Result<String> {
    let mut w = writer();
    w.write_record(METRICS_HEADER).map_err(csv_err)?;
    for r in results {
        for (i, p) in r.parties.iter().enumerate() {
            for m in &p.evaluation.per_label {
                w.write_record([
                    r.method.name().to_string(),
                    r.seed.to_string(),
                    (i + 1).to_string(),
                    m.label.to_string(),
                    format!("{:.4}", m.accuracy),
                    format!("{:.4}", m.precision),
                    format!("{:.4}", m.recall),
                    format!("{:.4}", m.f1),
                ])
                .map_err(csv_err)?;
            }
        }
    }
    finish(w)
}

/// One record per phase with traffic, for every run that used MPC. `None`
/// when no run did.
pub fn traffic_csv(results: &[ScenarioResult]) -> Result<Option<String>> {
    let secure: Vec<(&ScenarioResult, &TrafficStats)> =
        results.iter().filter_map(|r| r.traffic.as_ref().map(|t| (r, t))).collect();
    if secure.is_empty() {
        return Ok(None);
    }
    let mut w = writer();
    w.write_record(["method", "seed", "phase", "bytes_out", "bytes_in", "messages_out", "rounds"])
        .map_err(csv_err)?;
    for (r, t) in secure {
        for phase in Phase::ALL {
            let s = t.phase(phase);
            if s.bytes_out + s.bytes_in + s.rounds == 0 {
                continue;
            }
            w.write_record([
                r.method.name().to_string(),
                r.seed.to_string(),
                phase.name().to_string(),
                s.bytes_out.to_string(),
                s.bytes_in.to_string(),
                s.messages_out.to_string(),
                s.rounds.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    finish(w).map(Some)
}

/// One record per timed phase of each run.
pub fn timing_csv(results: &[ScenarioResult]) -> Result<String> {
    let mut w = writer();
    w.write_record(["method", "seed", "phase", "secure", "seconds"]).map_err(csv_err)?;
    for r in results {
        for t in &r.timings {
            w.write_record([
                r.method.name().to_string(),
                r.seed.to_string(),
                t.phase.to_string(),
                t.secure.to_string(),
                format!("{:.6}", t.elapsed.as_secs_f64()),
            ])
            .map_err(csv_err)?;
        }
    }
    finish(w)
}

/// ROC points of labelled attack reports: `(name, seed, report)`.
pub fn roc_csv(reports: &[(&str, u64, &AttackReport)]) -> Result<String> {
    let mut w = writer();
    w.write_record(["method", "seed", "threshold", "tpr", "fpr"]).map_err(csv_err)?;
    for (name, seed, r) in reports {
        for p in &r.roc {
            w.write_record([
                name.to_string(),
                seed.to_string(),
                format!("{:.6}", p.threshold),
                format!("{:.6}", p.tpr),
                format!("{:.6}", p.fpr),
            ])
            .map_err(csv_err)?;
        }
    }
    finish(w)
}

pub fn hist_csv(reports: &[(&str, u64, &AttackReport)]) -> Result<String> {
    let mut w = writer();
    w.write_record(["method", "seed", "bin_low", "bin_high", "member_count", "nonmember_count"])
        .map_err(csv_err)?;
    for (name, seed, r) in reports {
        for b in &r.histogram {
            w.write_record([
                name.to_string(),
                seed.to_string(),
                format!("{:.2}", b.low),
                format!("{:.2}", b.high),
                b.members.to_string(),
                b.nonmembers.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    finish(w)
}
