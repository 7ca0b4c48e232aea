//! Error metrics for estimated load traces: absolute and signed errors,
//! accuracy, ergonomic sensitivity, and report pooling across sessions.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::LevelAnnotation;
use crate::model::{LvlTrace, Side, TruthStream};

/// Centimeters of vertical-location error that move the lifting-equation
/// height multiplier by one percent.
pub const VERTICAL_MULTIPLIER_CM_PER_PCT: f64 = 3.3;

/// Errors raised while computing metrics.
#[derive(Debug, Error)]
pub enum EvalError {
    #[error("eval::accuracy_pct: truth {truth_cm} cm is not positive")]
    NonPositiveTruth { truth_cm: f64 },
}

/// Sufficient statistics of a set of signed errors. Merging two stat sets
/// gives exactly the stats of the concatenated samples, so reports from
/// separate sessions pool without re-reading the traces.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorStats {
    pub n: u64,
    pub sum_err: f64,
    pub sum_abs_err: f64,
    pub sum_sq_err: f64,
}

impl ErrorStats {
    pub fn push(&mut self, err_cm: f64) {
        self.n += 1;
        self.sum_err += err_cm;
        self.sum_abs_err += err_cm.abs();
        self.sum_sq_err += err_cm * err_cm;
    }

    pub fn merge(&mut self, other: &ErrorStats) {
        self.n += other.n;
        self.sum_err += other.sum_err;
        self.sum_abs_err += other.sum_abs_err;
        self.sum_sq_err += other.sum_sq_err;
    }

    pub fn from_errors(errors: &[f64]) -> Self {
        let mut stats = ErrorStats::default();
        for &e in errors {
            stats.push(e);
        }
        stats
    }

    /// Mean absolute error, cm.
    pub fn mae(&self) -> Option<f64> {
        (self.n > 0).then(|| self.sum_abs_err / self.n as f64)
    }

    /// Mean signed error, cm.
    pub fn mean_error(&self) -> Option<f64> {
        (self.n > 0).then(|| self.sum_err / self.n as f64)
    }

    /// Population standard deviation of the signed errors, cm.
    pub fn std_error(&self) -> Option<f64> {
        if self.n == 0 {
            return None;
        }
        let n = self.n as f64;
        let mean = self.sum_err / n;
        Some((self.sum_sq_err / n - mean * mean).max(0.0).sqrt())
    }
}

/// Stats for one group of samples sharing a label (typically one shelf
/// level).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub label: String,
    pub stats: ErrorStats,
}

/// Error summary for one trace: overall stats plus a per-label breakdown.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorReport {
    pub overall: ErrorStats,
    pub groups: Vec<GroupStats>,
}

impl ErrorReport {
    fn group_mut(&mut self, label: &str) -> &mut ErrorStats {
        if let Some(pos) = self.groups.iter().position(|g| g.label == label) {
            return &mut self.groups[pos].stats;
        }
        self.groups.push(GroupStats {
            label: label.to_string(),
            stats: ErrorStats::default(),
        });
        &mut self.groups.last_mut().unwrap().stats
    }

    pub fn push(&mut self, label: &str, err_cm: f64) {
        self.overall.push(err_cm);
        self.group_mut(label).push(err_cm);
    }

    pub fn merge(&mut self, other: &ErrorReport) {
        self.overall.merge(&other.overall);
        for g in &other.groups {
            self.group_mut(&g.label).merge(&g.stats);
        }
    }
}

/// Accuracy of one estimate against a positive true height, percent.
pub fn accuracy_pct(estimate_cm: f64, truth_cm: f64) -> Result<f64, EvalError> {
    if truth_cm.is_nan() || truth_cm <= 0.0 {
        return Err(EvalError::NonPositiveTruth { truth_cm });
    }
    Ok(100.0 * (1.0 - (estimate_cm - truth_cm).abs() / truth_cm))
}

/// How far a given MAE can move the lifting-equation height multiplier,
/// percent.
pub fn rnle_sensitivity_pct(mae_cm: f64) -> f64 {
    mae_cm / VERTICAL_MULTIPLIER_CM_PER_PCT
}

/// Scores a trace against annotated level windows: every sample inside a
/// window contributes `estimate - level`, grouped by the window label.
pub fn score_against_levels(trace: &LvlTrace, levels: &[LevelAnnotation]) -> ErrorReport {
    let mut report = ErrorReport::default();
    for s in &trace.samples {
        let t = s.t.seconds();
        for ann in levels {
            if t >= ann.start_s && t <= ann.end_s {
                report.push(&ann.label, s.lvl_cm - ann.level_cm);
                break;
            }
        }
    }
    report
}

/// Linear interpolation of the truth wrist height at `t`; `None` outside
/// the truth span.
fn truth_height_at(truth: &TruthStream, t: f64) -> Option<f64> {
    let samples = &truth.samples;
    if samples.is_empty() {
        return None;
    }
    let idx = samples.partition_point(|s| s.t.seconds() <= t);
    if idx == 0 {
        return (samples[0].t.seconds() == t).then(|| samples[0].wrist_height_cm);
    }
    let a = &samples[idx - 1];
    if idx == samples.len() {
        return (a.t.seconds() == t).then_some(a.wrist_height_cm);
    }
    let b = &samples[idx];
    let span = b.t.seconds() - a.t.seconds();
    let w = if span > 0.0 { (t - a.t.seconds()) / span } else { 0.0 };
    Some(a.wrist_height_cm + w * (b.wrist_height_cm - a.wrist_height_cm))
}

/// Scores a trace against the truth wrist height over its whole span.
pub fn score_against_truth(trace: &LvlTrace, truth: &TruthStream) -> ErrorReport {
    let mut report = ErrorReport::default();
    for s in &trace.samples {
        if let Some(h) = truth_height_at(truth, s.t.seconds()) {
            report.push("wrist", s.lvl_cm - h);
        }
    }
    report
}

/// Mean of the per-report overall MAEs; `None` when no report has samples.
pub fn mean_of_maes(reports: &[ErrorReport]) -> Option<f64> {
    let maes: Vec<f64> = reports.iter().filter_map(|r| r.overall.mae()).collect();
    if maes.is_empty() {
        return None;
    }
    Some(maes.iter().sum::<f64>() / maes.len() as f64)
}

/// Pools reports into one by exact sufficient-statistic merging.
pub fn merge_reports(reports: &[ErrorReport]) -> ErrorReport {
    let mut merged = ErrorReport::default();
    for r in reports {
        merged.merge(r);
    }
    merged
}

const TRACE_COMPARE_HEADER: [&str; 5] = ["t", "raw_cm", "realtime_cm", "corrected_cm", "truth_cm"];

/// Writes aligned raw/realtime/corrected traces with interpolated truth.
/// Rows cover timestamps present in all three traces; the truth column is
/// blank outside the truth span or when no truth is given.
pub fn write_trace_compare_csv(
    mut w: impl Write,
    raw: &LvlTrace,
    realtime: &LvlTrace,
    corrected: &LvlTrace,
    truth: Option<&TruthStream>,
) -> std::io::Result<()> {
    writeln!(w, "{}", TRACE_COMPARE_HEADER.join(","))?;
    let mut ri = raw.samples.iter().peekable();
    let mut ci = corrected.samples.iter().peekable();
    for s in &realtime.samples {
        while ri.peek().is_some_and(|r| r.t < s.t) {
            ri.next();
        }
        while ci.peek().is_some_and(|c| c.t < s.t) {
            ci.next();
        }
        let (Some(r), Some(c)) = (ri.peek(), ci.peek()) else {
            break;
        };
        if r.t != s.t || c.t != s.t {
            continue;
        }
        let truth_cell = truth
            .and_then(|tr| truth_height_at(tr, s.t.seconds()))
            .map(|h| h.to_string())
            .unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{}",
            s.t, r.lvl_cm, s.lvl_cm, c.lvl_cm, truth_cell
        )?;
    }
    Ok(())
}

/// One detection-rate row: cycles of `foot` scored against anchors from
/// that foot's detector on `wrist`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRateRow {
    pub label: String,
    pub foot: Side,
    pub wrist: Side,
    pub total_cycles: usize,
    pub cycles_with_point: usize,
}

/// Detection rates for one wrist: an `all` row per foot over every cycle,
/// plus one row per walking span label covering the cycles whose midpoint
/// falls inside a span with that label.
pub fn detection_rows_for_wrist(
    cycles: &[crate::gait::GaitCycle],
    points: &[crate::model::KvluPoint],
    wrist: Side,
    spans: &[crate::ingest::AtomSpan],
) -> Vec<DetectionRateRow> {
    let mut rows = Vec::new();
    let mut push = |label: &str, subset: &[crate::gait::GaitCycle]| {
        for foot in [Side::Left, Side::Right] {
            let (total, hit) = crate::kvlu::kvlu_detection_counts(subset, points, wrist, foot);
            rows.push(DetectionRateRow {
                label: label.to_string(),
                foot,
                wrist,
                total_cycles: total,
                cycles_with_point: hit,
            });
        }
    };
    push("all", cycles);
    let mut labels: Vec<&str> = Vec::new();
    for span in spans {
        if span.label.starts_with("walk") && !labels.contains(&span.label.as_str()) {
            labels.push(&span.label);
        }
    }
    for label in labels {
        let subset: Vec<crate::gait::GaitCycle> = cycles
            .iter()
            .filter(|c| {
                let mid = c.interval.midpoint();
                spans
                    .iter()
                    .any(|s| s.label == label && s.start_s <= mid && mid <= s.end_s)
            })
            .cloned()
            .collect();
        push(label, &subset);
    }
    rows
}

impl DetectionRateRow {
    pub fn rate_pct(&self) -> Option<f64> {
        (self.total_cycles > 0)
            .then(|| 100.0 * self.cycles_with_point as f64 / self.total_cycles as f64)
    }
}

const DETECTION_HEADER: [&str; 6] = [
    "label",
    "foot",
    "wrist",
    "total_cycles",
    "cycles_with_point",
    "rate_pct",
];

/// Writes detection-rate rows; the rate column is blank when a row scored
/// no cycles.
pub fn write_detection_rates_csv(
    mut w: impl Write,
    rows: &[DetectionRateRow],
) -> std::io::Result<()> {
    writeln!(w, "{}", DETECTION_HEADER.join(","))?;
    for row in rows {
        let rate = row.rate_pct().map(|r| r.to_string()).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{}",
            row.label,
            row.foot.letter(),
            row.wrist.letter(),
            row.total_cycles,
            row.cycles_with_point,
            rate
        )?;
    }
    Ok(())
}
