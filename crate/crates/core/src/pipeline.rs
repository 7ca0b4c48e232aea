//! End-to-end session processing: validation, gait segmentation, anchor
//! detection, and the raw/realtime/corrected load-height traces.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::DetectionRateRow;
use crate::gait::{self, GaitConfig, GaitCycle, GaitError};
use crate::ingest::{self, IngestError};
use crate::kvlu::{self, AngleThreshold, KvluError, MIN_PITCH_SAMPLES};
use crate::lvl::{self, LvlError, RealtimeEstimate, DEFAULT_MAX_ANCHOR_JUMP_CM};
use crate::model::{
    IntervalLabel, KvluPoint, LvlTrace, ModelError, PhaseLabel, PressureHeightModel, Session,
    Side, TraceMode, ValidationReport, WristStream,
};

/// How the pitch gate for anchor detection is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdPolicy {
    /// Fit the gate from the pitch observed during the quiet stand that
    /// opens the session, falling back to the cohort default when too few
    /// samples qualify.
    Auto { calibration_window_s: f64 },
    /// Use the given gate directly.
    Fixed { threshold_deg: f64 },
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        ThresholdPolicy::Auto {
            calibration_window_s: 5.0,
        }
    }
}

/// Where the effective pitch gate came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdProvenance {
    FittedFromCalibration { samples: usize },
    CohortFallback,
    Fixed,
}

/// Tunables for one pipeline run. Deserializes with every missing field
/// taking its default, so a config file may override any subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub gait: GaitConfig,
    pub threshold: ThresholdPolicy,
    /// Moving-average window applied to wrist pressure, in samples (odd).
    pub smooth_window: usize,
    pub model: PressureHeightModel,
    pub max_anchor_jump_cm: f64,
    /// Sensor-dropout gaps longer than this are reported as warnings.
    pub max_gap_s: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            gait: GaitConfig::default(),
            threshold: ThresholdPolicy::default(),
            smooth_window: ingest::DEFAULT_SMOOTH_WINDOW,
            model: PressureHeightModel::physics_default(),
            max_anchor_jump_cm: DEFAULT_MAX_ANCHOR_JUMP_CM,
            max_gap_s: ingest::DEFAULT_MAX_GAP_S,
        }
    }
}

/// Errors from any pipeline stage.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("pipeline: {0}")]
    Model(#[from] ModelError),
    #[error("pipeline: {0}")]
    Gait(#[from] GaitError),
    #[error("pipeline: {0}")]
    Kvlu(#[from] KvluError),
    #[error("pipeline: {0}")]
    Lvl(#[from] LvlError),
    #[error("pipeline: {0}")]
    Ingest(#[from] IngestError),
}

/// Gait-level products shared by both wrists.
#[derive(Debug, Clone)]
pub struct GaitProducts {
    /// Swing windows for both feet.
    pub swings: Vec<IntervalLabel>,
    /// Foot-flat windows for both feet.
    pub foot_flats: Vec<IntervalLabel>,
    /// Standing/walking/unknown tiling of the session.
    pub activity: Vec<IntervalLabel>,
    /// Gait cycles for both feet.
    pub cycles: Vec<GaitCycle>,
}

/// Estimation products for one wrist.
#[derive(Debug, Clone)]
pub struct WristResult {
    pub side: Side,
    /// Anchors the detectors produced, before the estimator's jump gate.
    pub anchors: Vec<KvluPoint>,
    pub realtime: RealtimeEstimate,
    pub corrected: LvlTrace,
    pub raw: LvlTrace,
}

/// Everything one pipeline run produces.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub validation: ValidationReport,
    pub gait: GaitProducts,
    pub threshold: AngleThreshold,
    pub threshold_provenance: ThresholdProvenance,
    pub wrists: Vec<WristResult>,
    /// Whole-session anchor detection rates per wrist and foot.
    pub detection: Vec<DetectionRateRow>,
    pub warnings: Vec<String>,
}

/// Picks the pitch gate per the policy. Auto fits over wrist samples that
/// fall inside standing activity within the calibration window at the
/// start of the first standing interval.
fn resolve_threshold(
    policy: ThresholdPolicy,
    wrists: &[WristStream],
    activity: &[IntervalLabel],
    warnings: &mut Vec<String>,
) -> (AngleThreshold, ThresholdProvenance) {
    let window_s = match policy {
        ThresholdPolicy::Fixed { threshold_deg } => {
            return (AngleThreshold::fixed(threshold_deg), ThresholdProvenance::Fixed)
        }
        ThresholdPolicy::Auto {
            calibration_window_s,
        } => calibration_window_s,
    };
    let standing: Vec<&IntervalLabel> = activity
        .iter()
        .filter(|a| a.label == PhaseLabel::Standing)
        .collect();
    let mut pitches = Vec::new();
    if let Some(first) = standing.first() {
        let t0 = first.interval.start().seconds();
        for wrist in wrists {
            pitches.extend(
                wrist
                    .samples
                    .iter()
                    .filter(|s| {
                        s.t.seconds() < t0 + window_s
                            && standing.iter().any(|iv| iv.interval.contains_closed(s.t))
                    })
                    .map(|s| s.pitch_deg),
            );
        }
    }
    match AngleThreshold::from_samples(&pitches) {
        Some(threshold) if pitches.len() >= MIN_PITCH_SAMPLES => (
            threshold,
            ThresholdProvenance::FittedFromCalibration {
                samples: pitches.len(),
            },
        ),
        _ => {
            warnings.push(format!(
                "pipeline: {} pitch samples in the calibration window (need {}); using the cohort default gate",
                pitches.len(),
                MIN_PITCH_SAMPLES
            ));
            (
                AngleThreshold::cohort_default(),
                ThresholdProvenance::CohortFallback,
            )
        }
    }
}

/// Foot-flat detection that degrades to empty when the session contains
/// too little swing data to calibrate force thresholds (no walking).
fn foot_flats_or_empty(
    stream: &crate::model::InsoleStream,
    swings: &[IntervalLabel],
    config: &GaitConfig,
    warnings: &mut Vec<String>,
) -> Result<Vec<IntervalLabel>, GaitError> {
    match gait::region_thresholds(stream, swings, config) {
        Ok(thresholds) => Ok(gait::detect_foot_flat(stream, &thresholds, config)),
        Err(GaitError::InsufficientSwingSamples { found, required }) => {
            warnings.push(format!(
                "pipeline: {} insole: {found} swing samples (need {required}); skipping foot-flat detection",
                stream.side
            ));
            Ok(Vec::new())
        }
        Err(e) => Err(e),
    }
}

/// Products of processing one gap-free stretch of a session.
struct SegmentRun {
    gait: GaitProducts,
    threshold: AngleThreshold,
    threshold_provenance: ThresholdProvenance,
    wrists: Vec<WristResult>,
    detection: Vec<DetectionRateRow>,
}

/// Runs the full pipeline over one session. Recording gaps longer than
/// `max_gap_s` split the session; each stretch is processed independently
/// (no detector window or anchor spans a gap) and the products are
/// concatenated, with the pitch gate fitted once on the first stretch.
pub fn run(session: Session, config: &PipelineConfig) -> Result<PipelineOutput, PipelineError> {
    let (session, validation) = crate::model::validate_session(session)?;
    let mut warnings = validation.warnings.clone();

    let cuts = ingest::gap_cut_points(&session, config.max_gap_s);
    for cut in &cuts {
        warnings.push(format!(
            "pipeline: data gap near t={cut} exceeds {} s; the session is processed in independent stretches around it",
            config.max_gap_s
        ));
    }

    let segments = if cuts.is_empty() {
        vec![session]
    } else {
        ingest::split_session(&session, config.max_gap_s)
    };
    let mut runs = Vec::with_capacity(segments.len());
    let mut gate: Option<(AngleThreshold, ThresholdProvenance)> = None;
    for segment in &segments {
        let run = process_segment(segment, config, gate, &mut warnings)?;
        gate.get_or_insert((run.threshold, run.threshold_provenance));
        runs.push(run);
    }
    let merged = merge_segments(runs);

    Ok(PipelineOutput {
        validation,
        gait: merged.gait,
        threshold: merged.threshold,
        threshold_provenance: merged.threshold_provenance,
        wrists: merged.wrists,
        detection: merged.detection,
        warnings,
    })
}

/// Concatenates per-stretch products in time order; detection counts sum
/// per (label, foot, wrist) and per-wrist traces append end to end.
fn merge_segments(mut runs: Vec<SegmentRun>) -> SegmentRun {
    let mut merged = runs.remove(0);
    for run in runs {
        merged.gait.swings.extend(run.gait.swings);
        merged.gait.foot_flats.extend(run.gait.foot_flats);
        merged.gait.activity.extend(run.gait.activity);
        merged.gait.cycles.extend(run.gait.cycles);
        for row in run.detection {
            match merged
                .detection
                .iter_mut()
                .find(|r| r.label == row.label && r.foot == row.foot && r.wrist == row.wrist)
            {
                Some(r) => {
                    r.total_cycles += row.total_cycles;
                    r.cycles_with_point += row.cycles_with_point;
                }
                None => merged.detection.push(row),
            }
        }
        for wrist in run.wrists {
            match merged.wrists.iter_mut().find(|w| w.side == wrist.side) {
                Some(w) => {
                    w.anchors.extend(wrist.anchors);
                    w.realtime.trace.samples.extend(wrist.realtime.trace.samples);
                    w.realtime.accepted_anchors.extend(wrist.realtime.accepted_anchors);
                    w.realtime.skipped_anchors.extend(wrist.realtime.skipped_anchors);
                    w.realtime.leading_omitted += wrist.realtime.leading_omitted;
                    w.realtime.warnings.extend(wrist.realtime.warnings);
                    w.corrected.samples.extend(wrist.corrected.samples);
                    w.raw.samples.extend(wrist.raw.samples);
                }
                None => merged.wrists.push(wrist),
            }
        }
    }
    merged.gait.cycles.sort_by_key(|c| c.interval.start());
    merged.wrists.sort_by_key(|w| w.side);
    merged
}

/// Processes one gap-free stretch of an already-validated session.
fn process_segment(
    session: &Session,
    config: &PipelineConfig,
    gate: Option<(AngleThreshold, ThresholdProvenance)>,
    warnings: &mut Vec<String>,
) -> Result<SegmentRun, PipelineError> {
    // Gait segmentation from the insoles.
    let swing_left = gait::detect_swing(&session.insole_left, &config.gait)?;
    let swing_right = gait::detect_swing(&session.insole_right, &config.gait)?;
    warnings.extend(swing_left.warnings);
    warnings.extend(swing_right.warnings);
    let ff_left = foot_flats_or_empty(
        &session.insole_left,
        &swing_left.intervals,
        &config.gait,
        warnings,
    )?;
    let ff_right = foot_flats_or_empty(
        &session.insole_right,
        &swing_right.intervals,
        &config.gait,
        warnings,
    )?;
    let activity = gait::classify_activity(
        &session.insole_left,
        &session.insole_right,
        &swing_left.intervals,
        &swing_right.intervals,
        &config.gait,
    );
    let mut cycles = gait::segment_cycles(
        Side::Left,
        &swing_left.intervals,
        &ff_left,
        &activity,
        &config.gait,
    );
    cycles.extend(gait::segment_cycles(
        Side::Right,
        &swing_right.intervals,
        &ff_right,
        &activity,
        &config.gait,
    ));
    cycles.sort_by_key(|c| c.interval.start());

    // Smooth the pressure channel, then pick the pitch gate (pitch is
    // untouched by smoothing).
    let mut smoothed = Vec::with_capacity(session.wrists.len());
    for wrist in &session.wrists {
        smoothed.push(ingest::smooth_pressure(wrist, config.smooth_window)?);
    }
    let (threshold, threshold_provenance) = match gate {
        Some(carried) => carried,
        None => resolve_threshold(config.threshold, &smoothed, &activity, warnings),
    };

    // Anchor detection and the three traces, per wrist.
    let mut wrists = Vec::new();
    let mut detection = Vec::new();
    for wrist in &smoothed {
        let standing_points =
            kvlu::detect_kvlu_standing(wrist, &activity, threshold, &session.anthropometry);
        let walking_points =
            kvlu::detect_kvlu_walking(wrist, &cycles, threshold, &session.anthropometry);
        let anchors = kvlu::merge_points(vec![standing_points, walking_points]);
        detection.extend(crate::eval::detection_rows_for_wrist(
            &cycles,
            &anchors,
            wrist.side,
            &[],
        ));
        if anchors.is_empty() {
            warnings.push(format!(
                "pipeline: no anchors detected on the {} wrist; no estimate produced",
                wrist.side
            ));
            continue;
        }

        let realtime =
            lvl::estimate_lvl_realtime(wrist, &anchors, config.model, config.max_anchor_jump_cm)?;
        warnings.extend(realtime.warnings.iter().cloned());
        let corrected = if realtime.accepted_anchors.len() >= 2 {
            lvl::correct_drift_retrospective(&realtime)?
        } else {
            warnings.push(format!(
                "pipeline: single anchor on the {} wrist; drift correction is the identity",
                wrist.side
            ));
            LvlTrace {
                mode: TraceMode::Corrected,
                ..realtime.trace.clone()
            }
        };
        let raw = lvl::estimate_lvl_raw(wrist, &anchors, config.model)?.trace;

        wrists.push(WristResult {
            side: wrist.side,
            anchors,
            corrected: lvl::wrist_height_as_lvl(&corrected),
            raw: lvl::wrist_height_as_lvl(&raw),
            realtime,
        });
    }

    Ok(SegmentRun {
        gait: GaitProducts {
            swings: [swing_left.intervals, swing_right.intervals].concat(),
            foot_flats: [ff_left, ff_right].concat(),
            activity,
            cycles,
        },
        threshold,
        threshold_provenance,
        wrists,
        detection,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval;
    use crate::sim::{self, default_lift_script, NoiseConfig, ScriptAtom, SimConfig, WalkSpeed};

    fn fixed(threshold_deg: f64) -> ThresholdPolicy {
        ThresholdPolicy::Fixed { threshold_deg }
    }

    #[test]
    fn noiseless_lift_session_recovers_truth() {
        let out = sim::simulate(&SimConfig {
            script: default_lift_script(),
            ..SimConfig::default()
        })
        .unwrap();
        let config = PipelineConfig {
            threshold: fixed(58.5),
            smooth_window: 1,
            ..PipelineConfig::default()
        };
        let result = run(out.session.clone(), &config).unwrap();
        assert_eq!(result.wrists.len(), 2);
        let truth = out.session.truth.as_ref().unwrap();
        for wrist in &result.wrists {
            assert!(wrist.realtime.accepted_anchors.len() >= 2);
            let report = eval::score_against_truth(&wrist.corrected, truth);
            assert!(report.overall.n > 0);
            let mae = report.overall.mae().unwrap();
            assert!(mae < 1e-9, "corrected mae {mae}");
        }
    }

    #[test]
    fn walking_session_anchors_both_wrists() {
        let out = sim::simulate(&SimConfig {
            script: vec![
                ScriptAtom::Stand { duration_s: 3.0 },
                ScriptAtom::Walk {
                    speed: WalkSpeed::Normal,
                    duration_s: 20.0,
                },
                ScriptAtom::Stand { duration_s: 3.0 },
            ],
            ..SimConfig::default()
        })
        .unwrap();
        let config = PipelineConfig {
            threshold: fixed(58.5),
            smooth_window: 1,
            ..PipelineConfig::default()
        };
        let result = run(out.session, &config).unwrap();
        assert!(!result.gait.cycles.is_empty());
        for wrist in &result.wrists {
            let walking_anchors = wrist
                .anchors
                .iter()
                .filter(|p| p.source != crate::model::KvluSource::Standing)
                .count();
            assert!(walking_anchors > 0, "{} wrist", wrist.side);
        }
        // Every wrist/foot pair scored some cycles.
        for row in &result.detection {
            assert!(row.total_cycles > 0);
        }
    }

    #[test]
    fn auto_threshold_fits_the_calibration_stand() {
        let out = sim::simulate(&SimConfig {
            script: default_lift_script(),
            noise: NoiseConfig {
                pressure_sigma_pa: 2.0,
                pitch_sigma_deg: 2.0,
                cell_sigma_n: 0.05,
            },
            ..SimConfig::default()
        })
        .unwrap();
        let result = run(out.session, &PipelineConfig::default()).unwrap();
        assert!(matches!(
            result.threshold_provenance,
            ThresholdProvenance::FittedFromCalibration { samples } if samples >= MIN_PITCH_SAMPLES
        ));
        // Standing pitch is 75 with sigma 2, so the gate lands near 69.
        let gate = result.threshold.degrees();
        assert!((gate - 69.0).abs() < 3.0, "gate {gate}");
    }

    #[test]
    fn walk_only_session_falls_back_to_cohort_gate() {
        let out = sim::simulate(&SimConfig {
            script: vec![ScriptAtom::Walk {
                speed: WalkSpeed::Normal,
                duration_s: 15.0,
            }],
            ..SimConfig::default()
        })
        .unwrap();
        let result = run(out.session, &PipelineConfig::default()).unwrap();
        assert_eq!(
            result.threshold_provenance,
            ThresholdProvenance::CohortFallback
        );
        assert_eq!(
            result.threshold.degrees(),
            crate::kvlu::DEFAULT_ANGLE_THRESHOLD_DEG
        );
        assert!(result.warnings.iter().any(|w| w.contains("cohort")));
    }

    #[test]
    fn single_anchor_correction_is_identity() {
        let out = sim::simulate(&SimConfig {
            script: vec![ScriptAtom::Stand { duration_s: 3.0 }],
            ..SimConfig::default()
        })
        .unwrap();
        let config = PipelineConfig {
            threshold: fixed(58.5),
            smooth_window: 1,
            ..PipelineConfig::default()
        };
        let result = run(out.session, &config).unwrap();
        let wrist = &result.wrists[0];
        assert_eq!(wrist.realtime.accepted_anchors.len(), 1);
        assert_eq!(wrist.corrected.mode, TraceMode::Corrected);
        assert_eq!(
            wrist.corrected.samples.len(),
            wrist.realtime.trace.samples.len()
        );
        assert!(result
            .warnings
            .iter()
            .any(|w| w.contains("drift correction is the identity")));
    }

    #[test]
    fn dropout_gap_is_reported() {
        let mut out = sim::simulate(&SimConfig {
            script: vec![ScriptAtom::Stand { duration_s: 10.0 }],
            ..SimConfig::default()
        })
        .unwrap();
        let cut = |t: f64| !(4.0..6.0).contains(&t);
        for wrist in &mut out.session.wrists {
            wrist.samples.retain(|s| cut(s.t.seconds()));
        }
        out.session.insole_left.samples.retain(|s| cut(s.t.seconds()));
        out.session
            .insole_right
            .samples
            .retain(|s| cut(s.t.seconds()));
        if let Some(truth) = &mut out.session.truth {
            truth.samples.retain(|s| cut(s.t.seconds()));
        }
        let config = PipelineConfig {
            threshold: fixed(58.5),
            smooth_window: 1,
            ..PipelineConfig::default()
        };
        let result = run(out.session, &config).unwrap();
        assert!(result.warnings.iter().any(|w| w.contains("data gap")));
        // Both stretches around the gap are estimated, each from its own
        // anchor, and nothing is interpolated across the gap itself.
        assert_eq!(result.wrists.len(), 2);
        for wrist in &result.wrists {
            assert_eq!(wrist.realtime.accepted_anchors.len(), 2);
            assert!(wrist
                .corrected
                .samples
                .iter()
                .all(|s| !(4.0..6.0).contains(&s.t.seconds())));
            assert!(wrist.corrected.samples.iter().any(|s| s.t.seconds() < 4.0));
            assert!(wrist.corrected.samples.iter().any(|s| s.t.seconds() >= 6.0));
        }
    }
}
