//! Known-height anchor detection: finds instants where the wrist sits at a
//! predictable height (arms hanging during standing or mid foot-flat while
//! walking) and captures the barometric pressure there for calibration.

use thiserror::Error;

use crate::gait::GaitCycle;
use crate::model::{
    Anthropometry, IntervalLabel, KvluPoint, KvluSource, PhaseLabel, Side, WristSample,
    WristStream,
};
use crate::stats::{mean, population_std};

/// Cohort fallback for the hanging-arm pitch threshold, degrees.
pub const DEFAULT_ANGLE_THRESHOLD_DEG: f64 = 58.5;

/// Minimum standing pitch samples needed to fit a per-subject threshold.
pub const MIN_PITCH_SAMPLES: usize = 10;

/// Shortest qualifying standing run that yields an anchor, seconds.
pub const MIN_STANDING_RUN_S: f64 = 0.5;

/// Errors raised during anchor detection.
#[derive(Debug, Error)]
pub enum KvluError {
    #[error("kvlu::compute_angle_threshold: {found} standing pitch samples, need at least {required}")]
    TooFewSamples { found: usize, required: usize },
    #[error("kvlu::detection_rate: no gait cycles to score against")]
    NoCycles,
}

/// Pitch threshold above which the arm counts as hanging vertically,
/// together with how it was obtained.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AngleThreshold {
    value_deg: f64,
    /// Standing pitch samples the threshold was fitted on; zero when the
    /// value was supplied rather than fitted.
    sample_count: usize,
    /// Population spread of those samples, degrees; zero when supplied.
    sigma_deg: f64,
}

impl AngleThreshold {
    /// Wraps an explicit threshold in degrees.
    pub fn fixed(degrees: f64) -> Self {
        AngleThreshold {
            value_deg: degrees,
            sample_count: 0,
            sigma_deg: 0.0,
        }
    }

    /// The cohort fallback threshold.
    pub fn cohort_default() -> Self {
        AngleThreshold::fixed(DEFAULT_ANGLE_THRESHOLD_DEG)
    }

    /// Mean minus three population standard deviations of standing pitch.
    /// `None` when `pitch_deg` is empty; callers impose their own sample
    /// floor on top.
    pub fn from_samples(pitch_deg: &[f64]) -> Option<Self> {
        if pitch_deg.is_empty() {
            return None;
        }
        let sigma = population_std(pitch_deg);
        Some(AngleThreshold {
            value_deg: mean(pitch_deg) - 3.0 * sigma,
            sample_count: pitch_deg.len(),
            sigma_deg: sigma,
        })
    }

    pub fn degrees(self) -> f64 {
        self.value_deg
    }

    pub fn sample_count(self) -> usize {
        self.sample_count
    }

    pub fn sigma_deg(self) -> f64 {
        self.sigma_deg
    }
}

/// Per-subject threshold from standing pitch samples, requiring at least
/// [`MIN_PITCH_SAMPLES`] observations.
pub fn compute_angle_threshold(pitch_deg: &[f64]) -> Result<AngleThreshold, KvluError> {
    if pitch_deg.len() < MIN_PITCH_SAMPLES {
        return Err(KvluError::TooFewSamples {
            found: pitch_deg.len(),
            required: MIN_PITCH_SAMPLES,
        });
    }
    Ok(AngleThreshold::from_samples(pitch_deg).unwrap())
}

/// Expected hanging-wrist height above ground, centimeters.
pub fn estimate_wrist_height(anthropometry: &Anthropometry) -> f64 {
    anthropometry.wrist_ratio * anthropometry.body_height_cm
}

/// Refits the hanging-wrist ratio from measured (wrist height cm, body
/// height cm) pairs as the mean of the per-subject ratios. `None` when
/// `pairs` is empty or any body height is non-positive.
pub fn fit_wrist_ratio(pairs: &[(f64, f64)]) -> Option<f64> {
    if pairs.is_empty() || pairs.iter().any(|&(_, body)| body <= 0.0) {
        return None;
    }
    let ratios: Vec<f64> = pairs.iter().map(|&(wrist, body)| wrist / body).collect();
    Some(mean(&ratios))
}

fn qualifies(sample: &WristSample, threshold: AngleThreshold) -> bool {
    sample.pitch_deg > threshold.degrees()
}

/// Index in `run` of the sample nearest `target` time; ties pick the
/// earlier sample.
fn nearest_in_run(run: &[&WristSample], target: f64) -> usize {
    let mut best = 0usize;
    for (i, sample) in run.iter().enumerate() {
        let d = (sample.t.seconds() - target).abs();
        let best_d = (run[best].t.seconds() - target).abs();
        if d < best_d {
            best = i;
        }
    }
    best
}

fn point_from(sample: &WristSample, wrist_side: Side, source: KvluSource, height_cm: f64) -> KvluPoint {
    KvluPoint {
        t: sample.t,
        wrist_side,
        source,
        anchor_pressure_pa: sample.pressure_pa,
        known_height_cm: height_cm,
    }
}

/// Detects standing anchors on a smoothed wrist stream: one point per
/// contiguous run of above-threshold pitch inside a standing interval, at
/// the sample nearest the run midpoint. Runs shorter than
/// [`MIN_STANDING_RUN_S`] are discarded.
pub fn detect_kvlu_standing(
    wrist: &WristStream,
    activity: &[IntervalLabel],
    threshold: AngleThreshold,
    anthropometry: &Anthropometry,
) -> Vec<KvluPoint> {
    let height = estimate_wrist_height(anthropometry);
    let mut points = Vec::new();
    for standing in activity.iter().filter(|a| a.label == PhaseLabel::Standing) {
        let in_interval: Vec<&WristSample> = wrist
            .samples
            .iter()
            .filter(|s| standing.interval.contains_closed(s.t))
            .collect();
        let mut run: Vec<&WristSample> = Vec::new();
        for i in 0..=in_interval.len() {
            let on = i < in_interval.len() && qualifies(in_interval[i], threshold);
            if on {
                run.push(in_interval[i]);
            } else if !run.is_empty() {
                let span = run.last().unwrap().t.seconds() - run[0].t.seconds();
                if span >= MIN_STANDING_RUN_S {
                    let mid = 0.5 * (run[0].t.seconds() + run.last().unwrap().t.seconds());
                    let pick = nearest_in_run(&run, mid);
                    points.push(point_from(
                        run[pick],
                        wrist.side,
                        KvluSource::Standing,
                        height,
                    ));
                }
                run.clear();
            }
        }
    }
    points
}

/// Detects walking anchors on a smoothed wrist stream: per gait cycle with
/// a foot-flat phase, the first and last above-threshold samples inside
/// foot-flat compete and the one nearer the foot-flat midpoint wins (ties
/// pick the earlier). At most one point per cycle per wrist.
pub fn detect_kvlu_walking(
    wrist: &WristStream,
    cycles: &[GaitCycle],
    threshold: AngleThreshold,
    anthropometry: &Anthropometry,
) -> Vec<KvluPoint> {
    let height = estimate_wrist_height(anthropometry);
    let mut points = Vec::new();
    for cycle in cycles {
        let Some(ff) = cycle.foot_flat else {
            continue;
        };
        let qualifying: Vec<&WristSample> = wrist
            .samples
            .iter()
            .filter(|s| ff.interval.contains_closed(s.t) && qualifies(s, threshold))
            .collect();
        let (Some(first), Some(last)) = (qualifying.first(), qualifying.last()) else {
            continue;
        };
        let mid = ff.interval.midpoint();
        let d_first = (first.t.seconds() - mid).abs();
        let d_last = (last.t.seconds() - mid).abs();
        let pick = if d_first <= d_last { first } else { last };
        let source = match cycle.side {
            Side::Left => KvluSource::LeftFoot,
            Side::Right => KvluSource::RightFoot,
        };
        points.push(point_from(pick, wrist.side, source, height));
    }
    points
}

/// Concatenates detector outputs into one time-ordered anchor list.
pub fn merge_points(groups: Vec<Vec<KvluPoint>>) -> Vec<KvluPoint> {
    let mut all: Vec<KvluPoint> = groups.into_iter().flatten().collect();
    all.sort_by_key(|p| p.t);
    all
}

/// Counts cycles of the given foot and how many of them hold at least one
/// anchor from that foot's detector on the given wrist.
pub fn kvlu_detection_counts(
    cycles: &[GaitCycle],
    points: &[KvluPoint],
    wrist_side: Side,
    foot: Side,
) -> (usize, usize) {
    let source = match foot {
        Side::Left => KvluSource::LeftFoot,
        Side::Right => KvluSource::RightFoot,
    };
    let scored: Vec<&GaitCycle> = cycles.iter().filter(|c| c.side == foot).collect();
    let hit = scored
        .iter()
        .filter(|c| {
            points.iter().any(|p| {
                p.wrist_side == wrist_side
                    && p.source == source
                    && c.interval.contains_closed(p.t)
            })
        })
        .count();
    (scored.len(), hit)
}

/// Percentage of cycles that produced at least one anchor from the given
/// foot detector on the given wrist.
pub fn kvlu_detection_rate(
    cycles: &[GaitCycle],
    points: &[KvluPoint],
    wrist_side: Side,
    foot: Side,
) -> Result<f64, KvluError> {
    let (total, hit) = kvlu_detection_counts(cycles, points, wrist_side, foot);
    if total == 0 {
        return Err(KvluError::NoCycles);
    }
    Ok(100.0 * hit as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Interval, IntervalSide, Timestamp};
    use approx::assert_abs_diff_eq;

    fn ts(s: f64) -> Timestamp {
        Timestamp::new(s)
    }

    fn wrist(side: Side, rate_hz: f64, duration_s: f64, pitch: impl Fn(f64) -> f64) -> WristStream {
        let n = (duration_s * rate_hz) as usize + 1;
        WristStream {
            side,
            samples: (0..n)
                .map(|i| {
                    let t = i as f64 / rate_hz;
                    WristSample {
                        t: ts(t),
                        pressure_pa: 101_325.0 - t,
                        pitch_deg: pitch(t),
                    }
                })
                .collect(),
        }
    }

    fn standing_interval(start: f64, end: f64) -> IntervalLabel {
        IntervalLabel::new(
            Interval::new(ts(start), ts(end)).unwrap(),
            IntervalSide::Both,
            PhaseLabel::Standing,
        )
    }

    fn anthro() -> Anthropometry {
        Anthropometry::new(171.0)
    }

    #[test]
    fn threshold_oracle_three_samples() {
        let thr = AngleThreshold::from_samples(&[60.0, 70.0, 80.0]).unwrap();
        assert_abs_diff_eq!(thr.degrees(), 45.50510257216822, epsilon = 1e-12);
    }

    #[test]
    fn threshold_of_constant_samples_is_the_mean() {
        let thr = AngleThreshold::from_samples(&[75.0; 40]).unwrap();
        assert_abs_diff_eq!(thr.degrees(), 75.0, epsilon = 1e-12);
        assert!(AngleThreshold::from_samples(&[]).is_none());
    }

    #[test]
    fn compute_threshold_enforces_sample_floor() {
        assert!(matches!(
            compute_angle_threshold(&[70.0; 9]),
            Err(KvluError::TooFewSamples {
                found: 9,
                required: 10
            })
        ));
        assert!(compute_angle_threshold(&[70.0; 10]).is_ok());
    }

    #[test]
    fn wrist_height_from_anthropometry() {
        let h = estimate_wrist_height(&Anthropometry::new(169.0));
        assert_abs_diff_eq!(h, 83.655, epsilon = 1e-12);
        assert_abs_diff_eq!(estimate_wrist_height(&anthro()), 84.645, epsilon = 1e-12);
    }

    #[test]
    fn standing_run_yields_midpoint_anchor() {
        let stream = wrist(Side::Right, 10.0, 10.0, |_| 75.0);
        let points = detect_kvlu_standing(
            &stream,
            &[standing_interval(0.0, 10.0)],
            AngleThreshold::cohort_default(),
            &anthro(),
        );
        assert_eq!(points.len(), 1);
        let p = points[0];
        assert_eq!(p.t, ts(5.0));
        assert_eq!(p.source, KvluSource::Standing);
        assert_eq!(p.wrist_side, Side::Right);
        assert_abs_diff_eq!(p.known_height_cm, 84.645, epsilon = 1e-12);
        assert_abs_diff_eq!(p.anchor_pressure_pa, 101_320.0, epsilon = 1e-12);
    }

    #[test]
    fn pitch_dip_splits_the_run() {
        let stream = wrist(Side::Left, 10.0, 10.0, |t| {
            if (4.0..6.0).contains(&t) {
                20.0
            } else {
                75.0
            }
        });
        let points = detect_kvlu_standing(
            &stream,
            &[standing_interval(0.0, 10.0)],
            AngleThreshold::cohort_default(),
            &anthro(),
        );
        assert_eq!(points.len(), 2);
        // First run spans [0, 3.9]; its midpoint 1.95 sits between samples,
        // so the anchor lands within half a sample of it.
        assert!((points[0].t.seconds() - 1.95).abs() <= 0.05 + 1e-9);
        assert_abs_diff_eq!(points[1].t.seconds(), 8.0, epsilon = 1e-9);
    }

    #[test]
    fn short_run_is_discarded() {
        // Only three qualifying samples at 10 Hz: a 0.2 s run, under the floor.
        let stream = wrist(Side::Left, 10.0, 10.0, |t| {
            if (5.0..=5.2).contains(&t) {
                75.0
            } else {
                20.0
            }
        });
        let points = detect_kvlu_standing(
            &stream,
            &[standing_interval(0.0, 10.0)],
            AngleThreshold::cohort_default(),
            &anthro(),
        );
        assert!(points.is_empty());
    }

    #[test]
    fn no_anchor_outside_standing() {
        let stream = wrist(Side::Left, 10.0, 10.0, |_| 75.0);
        let points = detect_kvlu_standing(
            &stream,
            &[standing_interval(20.0, 30.0)],
            AngleThreshold::cohort_default(),
            &anthro(),
        );
        assert!(points.is_empty());
    }

    fn cycle_with_ff(side: Side, start: f64, end: f64, ff: (f64, f64)) -> GaitCycle {
        let swing = IntervalLabel::new(
            Interval::new(ts(end - 0.4), ts(end)).unwrap(),
            side.into(),
            PhaseLabel::Swing,
        );
        GaitCycle {
            side,
            interval: Interval::new(ts(start), ts(end)).unwrap(),
            swing,
            foot_flat: Some(IntervalLabel::new(
                Interval::new(ts(ff.0), ts(ff.1)).unwrap(),
                side.into(),
                PhaseLabel::FootFlat,
            )),
        }
    }

    #[test]
    fn walking_anchor_prefers_sample_nearer_midpoint() {
        // Foot flat [2.0, 2.5], midpoint 2.25; qualifying at 2.1 and 2.3.
        let stream = wrist(Side::Right, 10.0, 5.0, |t| {
            if (2.05..=2.35).contains(&t) {
                75.0
            } else {
                20.0
            }
        });
        let cycles = [cycle_with_ff(Side::Left, 1.5, 2.6, (2.0, 2.5))];
        let points = detect_kvlu_walking(
            &stream,
            &cycles,
            AngleThreshold::cohort_default(),
            &anthro(),
        );
        assert_eq!(points.len(), 1);
        assert_abs_diff_eq!(points[0].t.seconds(), 2.3, epsilon = 1e-9);
        assert_eq!(points[0].source, KvluSource::LeftFoot);
    }

    #[test]
    fn walking_anchor_tie_picks_earlier() {
        // Qualifying at 2.1 and 2.4, both 0.15 s from the 2.25 midpoint.
        let stream = wrist(Side::Right, 10.0, 5.0, |t| {
            let near = |a: f64| (t - a).abs() < 1e-9;
            if near(2.1) || near(2.4) {
                75.0
            } else {
                20.0
            }
        });
        let cycles = [cycle_with_ff(Side::Right, 1.5, 2.6, (2.0, 2.5))];
        let points = detect_kvlu_walking(
            &stream,
            &cycles,
            AngleThreshold::cohort_default(),
            &anthro(),
        );
        assert_eq!(points.len(), 1);
        assert_abs_diff_eq!(points[0].t.seconds(), 2.1, epsilon = 1e-9);
        assert_eq!(points[0].source, KvluSource::RightFoot);
    }

    #[test]
    fn cycle_without_qualifying_samples_yields_nothing() {
        let stream = wrist(Side::Right, 10.0, 5.0, |_| 20.0);
        let cycles = [cycle_with_ff(Side::Left, 1.5, 2.6, (2.0, 2.5))];
        let points = detect_kvlu_walking(
            &stream,
            &cycles,
            AngleThreshold::cohort_default(),
            &anthro(),
        );
        assert!(points.is_empty());
    }

    #[test]
    fn detection_rate_counts_hit_cycles() {
        let cycles: Vec<GaitCycle> = (0..10)
            .map(|i| {
                let start = i as f64 * 1.1;
                cycle_with_ff(Side::Left, start, start + 1.1, (start + 0.2, start + 0.6))
            })
            .collect();
        // Anchors in 9 of the 10 cycles.
        let points: Vec<KvluPoint> = (0..9)
            .map(|i| KvluPoint {
                t: ts(i as f64 * 1.1 + 0.4),
                wrist_side: Side::Right,
                source: KvluSource::LeftFoot,
                anchor_pressure_pa: 101_325.0,
                known_height_cm: 84.645,
            })
            .collect();
        let rate = kvlu_detection_rate(&cycles, &points, Side::Right, Side::Left).unwrap();
        assert_abs_diff_eq!(rate, 90.0, epsilon = 1e-9);
        // A wrist that produced no anchors scores zero.
        let none = kvlu_detection_rate(&cycles, &points, Side::Left, Side::Left).unwrap();
        assert_eq!(none, 0.0);
        assert!(matches!(
            kvlu_detection_rate(&[], &points, Side::Right, Side::Left),
            Err(KvluError::NoCycles)
        ));
    }

    #[test]
    fn merge_orders_by_time() {
        let a = KvluPoint {
            t: ts(5.0),
            wrist_side: Side::Left,
            source: KvluSource::Standing,
            anchor_pressure_pa: 101_325.0,
            known_height_cm: 84.645,
        };
        let b = KvluPoint { t: ts(2.0), ..a };
        let merged = merge_points(vec![vec![a], vec![b]]);
        assert_eq!(merged.len(), 2);
        assert!(merged[0].t < merged[1].t);
    }

    #[test]
    fn threshold_records_its_fit() {
        let fitted = AngleThreshold::from_samples(&[60.0, 70.0, 80.0]).unwrap();
        assert_eq!(fitted.sample_count(), 3);
        assert_abs_diff_eq!(fitted.sigma_deg(), 8.164965809277259, epsilon = 1e-12);
        let fixed = AngleThreshold::fixed(58.5);
        assert_eq!(fixed.sample_count(), 0);
        assert_eq!(fixed.sigma_deg(), 0.0);
    }

    #[test]
    fn wrist_ratio_refit_averages_subject_ratios() {
        assert_abs_diff_eq!(
            fit_wrist_ratio(&[(90.0, 180.0), (82.5, 165.0)]).unwrap(),
            0.5,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            fit_wrist_ratio(&[(96.0, 200.0), (96.0, 192.0)]).unwrap(),
            0.49,
            epsilon = 1e-12
        );
        assert!(fit_wrist_ratio(&[]).is_none());
        assert!(fit_wrist_ratio(&[(90.0, 0.0)]).is_none());
    }

    proptest::proptest! {
        // Per cycle the walking detector emits one point or none, and a
        // sample that fails a low gate also fails every higher one, so
        // raising the gate never adds points.
        #[test]
        fn raising_gate_never_adds_walking_points(
            pitches in proptest::collection::vec(0.0f64..90.0, 50),
            low in 20.0f64..70.0,
            lift in 0.0f64..20.0,
        ) {
            let stream = wrist(Side::Right, 10.0, 4.9, |t| {
                pitches[(t * 10.0).round() as usize]
            });
            let cycles = [
                cycle_with_ff(Side::Left, 0.0, 2.4, (0.3, 1.1)),
                cycle_with_ff(Side::Left, 2.4, 4.8, (2.7, 3.5)),
            ];
            let count = |gate: f64| {
                detect_kvlu_walking(
                    &stream,
                    &cycles,
                    AngleThreshold::fixed(gate),
                    &anthro(),
                )
                .len()
            };
            proptest::prop_assert!(count(low + lift) <= count(low));
        }
    }
}
