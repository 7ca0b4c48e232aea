//! Gait segmentation from insole ground reaction force: swing detection,
//! per-region contact thresholds, foot-flat detection, activity
//! classification, and gait-cycle assembly.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    region_grf, GrfRegion, InsoleStream, Interval, IntervalLabel, IntervalSide, PhaseLabel, Side,
    Timestamp,
};
use crate::stats::{mean, population_std};

/// Minimum number of swing samples required to fit contact thresholds.
pub const MIN_SWING_SAMPLES: usize = 10;

/// Errors raised during gait segmentation.
#[derive(Debug, Error)]
pub enum GaitError {
    #[error(
        "gait::detect_swing: stream spans {span_s:.3} s, need at least {required_s:.3} s"
    )]
    StreamTooShort { span_s: f64, required_s: f64 },
    #[error(
        "gait::region_thresholds: {found} swing samples, need at least {required}"
    )]
    InsufficientSwingSamples { found: usize, required: usize },
}

/// Tunable gait detection parameters. Missing fields deserialize to their
/// defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaitConfig {
    /// Swing when total GRF falls below this fraction of the rolling peak.
    pub swing_fraction: f64,
    /// Shortest accepted swing interval, seconds.
    pub min_swing_duration_s: f64,
    /// Shortest accepted foot-flat interval, seconds.
    pub min_foot_flat_duration_s: f64,
    /// Width of the rolling-peak window, seconds.
    pub rolling_peak_window_s: f64,
    /// A foot bearing at least this force counts as loaded, newtons.
    pub standing_load_min_n: f64,
    /// Shortest accepted standing interval, seconds.
    pub standing_min_duration_s: f64,
    /// Accepted gait cycle period range, seconds.
    pub min_cycle_period_s: f64,
    pub max_cycle_period_s: f64,
}

impl Default for GaitConfig {
    fn default() -> Self {
        GaitConfig {
            swing_fraction: 0.05,
            min_swing_duration_s: 0.1,
            min_foot_flat_duration_s: 0.1,
            rolling_peak_window_s: 2.0,
            standing_load_min_n: 100.0,
            standing_min_duration_s: 1.0,
            min_cycle_period_s: 0.6,
            max_cycle_period_s: 2.5,
        }
    }
}

/// Detector output plus any non-fatal warnings.
#[derive(Debug, Clone, Default)]
pub struct Detection {
    pub intervals: Vec<IntervalLabel>,
    pub warnings: Vec<String>,
}

/// Per-region swing-noise thresholds fitted from swing samples.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionThresholds {
    pub heel_n: f64,
    pub forefoot_n: f64,
    /// Number of swing samples the thresholds were fitted on.
    pub sample_count: usize,
    /// The swing windows the samples came from.
    pub computed_from: Vec<IntervalLabel>,
}

/// One gait cycle, heel strike to heel strike.
#[derive(Debug, Clone, PartialEq)]
pub struct GaitCycle {
    pub side: Side,
    pub interval: Interval,
    /// The swing phase that terminates this cycle.
    pub swing: IntervalLabel,
    /// Longest foot-flat phase inside the cycle, when one exists.
    pub foot_flat: Option<IntervalLabel>,
}

/// Mean plus three population standard deviations; `None` when empty.
pub fn grf_threshold(samples: &[f64]) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    Some(mean(samples) + 3.0 * population_std(samples))
}

/// Sliding maximum of `values` over a centered time window.
fn rolling_peak(times: &[f64], values: &[f64], window_s: f64) -> Vec<f64> {
    let half = window_s / 2.0;
    let n = values.len();
    let mut peaks = vec![0.0; n];
    let mut deque: VecDeque<usize> = VecDeque::new();
    let mut hi = 0usize;
    for i in 0..n {
        while hi < n && times[hi] <= times[i] + half {
            while let Some(&back) = deque.back() {
                if values[back] <= values[hi] {
                    deque.pop_back();
                } else {
                    break;
                }
            }
            deque.push_back(hi);
            hi += 1;
        }
        while let Some(&front) = deque.front() {
            if times[front] < times[i] - half {
                deque.pop_front();
            } else {
                break;
            }
        }
        peaks[i] = deque.front().map(|&f| values[f]).unwrap_or(0.0);
    }
    peaks
}

/// Collapses a boolean per-sample mask into intervals spanning first to
/// last sample of each run, keeping runs at least `min_duration_s` long.
fn mask_to_intervals(
    times: &[f64],
    mask: &[bool],
    min_duration_s: f64,
    side: IntervalSide,
    label: PhaseLabel,
) -> Vec<IntervalLabel> {
    let mut intervals = Vec::new();
    let mut run_start: Option<usize> = None;
    for i in 0..=mask.len() {
        let on = i < mask.len() && mask[i];
        match (run_start, on) {
            (None, true) => run_start = Some(i),
            (Some(s), false) => {
                let e = i - 1;
                if times[e] - times[s] >= min_duration_s - 1e-9 {
                    if let Some(interval) =
                        Interval::new(Timestamp::new(times[s]), Timestamp::new(times[e]))
                    {
                        intervals.push(IntervalLabel::new(interval, side, label));
                    }
                }
                run_start = None;
            }
            _ => {}
        }
    }
    intervals
}

/// Detects swing phases: spans where total GRF drops below
/// `swing_fraction` of the rolling per-cycle peak.
pub fn detect_swing(stream: &InsoleStream, config: &GaitConfig) -> Result<Detection, GaitError> {
    let span_s = stream.span().map(|s| s.duration()).unwrap_or(0.0);
    if span_s < config.rolling_peak_window_s {
        return Err(GaitError::StreamTooShort {
            span_s,
            required_s: config.rolling_peak_window_s,
        });
    }
    let times: Vec<f64> = stream.samples.iter().map(|s| s.t.seconds()).collect();
    let totals: Vec<f64> = stream
        .samples
        .iter()
        .map(|s| region_grf(s, &stream.region_map, GrfRegion::Total))
        .collect();

    let mut detection = Detection::default();
    if totals.iter().all(|&v| v == 0.0) {
        let msg = format!(
            "gait::detect_swing: {} insole carries zero force everywhere; no swing detected",
            stream.side
        );
        log::warn!("{msg}");
        detection.warnings.push(msg);
        return Ok(detection);
    }

    let peaks = rolling_peak(&times, &totals, config.rolling_peak_window_s);
    let mask: Vec<bool> = totals
        .iter()
        .zip(&peaks)
        .map(|(&v, &p)| p > 0.0 && v < config.swing_fraction * p)
        .collect();
    detection.intervals = mask_to_intervals(
        &times,
        &mask,
        config.min_swing_duration_s,
        stream.side.into(),
        PhaseLabel::Swing,
    );
    Ok(detection)
}

/// Fits heel and forefoot contact thresholds from GRF observed during
/// swing: mean plus three population standard deviations per region.
pub fn region_thresholds(
    stream: &InsoleStream,
    swings: &[IntervalLabel],
    _config: &GaitConfig,
) -> Result<RegionThresholds, GaitError> {
    let mut heel = Vec::new();
    let mut fore = Vec::new();
    for sample in &stream.samples {
        if swings.iter().any(|s| s.interval.contains_closed(sample.t)) {
            heel.push(region_grf(sample, &stream.region_map, GrfRegion::Heel));
            fore.push(region_grf(sample, &stream.region_map, GrfRegion::Forefoot));
        }
    }
    if heel.len() < MIN_SWING_SAMPLES {
        return Err(GaitError::InsufficientSwingSamples {
            found: heel.len(),
            required: MIN_SWING_SAMPLES,
        });
    }
    Ok(RegionThresholds {
        heel_n: grf_threshold(&heel).unwrap(),
        forefoot_n: grf_threshold(&fore).unwrap(),
        sample_count: heel.len(),
        computed_from: swings.to_vec(),
    })
}

/// Detects foot-flat phases: heel and forefoot simultaneously above their
/// contact thresholds for at least the configured duration.
pub fn detect_foot_flat(
    stream: &InsoleStream,
    thresholds: &RegionThresholds,
    config: &GaitConfig,
) -> Vec<IntervalLabel> {
    let times: Vec<f64> = stream.samples.iter().map(|s| s.t.seconds()).collect();
    let mask: Vec<bool> = stream
        .samples
        .iter()
        .map(|s| {
            region_grf(s, &stream.region_map, GrfRegion::Heel) > thresholds.heel_n
                && region_grf(s, &stream.region_map, GrfRegion::Forefoot) > thresholds.forefoot_n
        })
        .collect();
    mask_to_intervals(
        &times,
        &mask,
        config.min_foot_flat_duration_s,
        stream.side.into(),
        PhaseLabel::FootFlat,
    )
}

/// Walking spans derived from alternating-side swing chains whose
/// same-side periods stay inside the configured cycle range.
fn walking_spans(
    swings_left: &[IntervalLabel],
    swings_right: &[IntervalLabel],
    config: &GaitConfig,
) -> Vec<Interval> {
    let mut merged: Vec<&IntervalLabel> = swings_left.iter().chain(swings_right).collect();
    merged.sort_by_key(|s| s.interval.start());

    let mut spans = Vec::new();
    let mut chain: Vec<&IntervalLabel> = Vec::new();
    let mut flush = |chain: &mut Vec<&IntervalLabel>| {
        if chain.len() >= 3 {
            if let Some(span) = Interval::new(
                chain[0].interval.start(),
                chain.last().unwrap().interval.end(),
            ) {
                spans.push(span);
            }
        }
        chain.clear();
    };
    for swing in merged {
        let extends = match chain.len() {
            0 => true,
            _ => {
                let last = chain.last().unwrap();
                let alternates = swing.side != last.side;
                let period_ok = if chain.len() >= 2 {
                    let same_side = chain[chain.len() - 2];
                    let period =
                        swing.interval.start().seconds() - same_side.interval.start().seconds();
                    period >= config.min_cycle_period_s && period <= config.max_cycle_period_s
                } else {
                    let half = swing.interval.start().seconds() - last.interval.start().seconds();
                    half <= config.max_cycle_period_s
                };
                alternates && period_ok
            }
        };
        if extends {
            chain.push(swing);
        } else {
            flush(&mut chain);
            chain.push(swing);
        }
    }
    flush(&mut chain);
    spans
}

fn nearest_total(times: &[f64], totals: &[f64], t: f64) -> f64 {
    match times.binary_search_by(|probe| probe.total_cmp(&t)) {
        Ok(i) => totals[i],
        Err(i) => {
            let candidates = [i.checked_sub(1), (i < times.len()).then_some(i)];
            candidates
                .into_iter()
                .flatten()
                .min_by(|&a, &b| {
                    (times[a] - t).abs().total_cmp(&(times[b] - t).abs())
                })
                .map(|j| totals[j])
                .unwrap_or(0.0)
        }
    }
}

/// Classifies every instant of the session as standing, walking, or
/// unknown. The returned intervals are ordered, disjoint, and tile the
/// left insole's span.
pub fn classify_activity(
    left: &InsoleStream,
    right: &InsoleStream,
    swings_left: &[IntervalLabel],
    swings_right: &[IntervalLabel],
    config: &GaitConfig,
) -> Vec<IntervalLabel> {
    if left.samples.is_empty() {
        return Vec::new();
    }
    let times: Vec<f64> = left.samples.iter().map(|s| s.t.seconds()).collect();
    let left_totals: Vec<f64> = left
        .samples
        .iter()
        .map(|s| region_grf(s, &left.region_map, GrfRegion::Total))
        .collect();
    let right_times: Vec<f64> = right.samples.iter().map(|s| s.t.seconds()).collect();
    let right_totals: Vec<f64> = right
        .samples
        .iter()
        .map(|s| region_grf(s, &right.region_map, GrfRegion::Total))
        .collect();

    let spans = walking_spans(swings_left, swings_right, config);
    let in_any = |intervals: &[IntervalLabel], t: Timestamp| {
        intervals.iter().any(|s| s.interval.contains_closed(t))
    };

    #[derive(Clone, Copy, PartialEq)]
    enum Class {
        Standing,
        Walking,
        Unknown,
    }
    let mut classes: Vec<Class> = Vec::with_capacity(times.len());
    for (i, &t) in times.iter().enumerate() {
        let stamp = Timestamp::new(t);
        let walking = spans.iter().any(|s| s.contains_closed(stamp));
        if walking {
            classes.push(Class::Walking);
            continue;
        }
        let loaded = left_totals[i] > config.standing_load_min_n
            && nearest_total(&right_times, &right_totals, t) > config.standing_load_min_n;
        let swinging = in_any(swings_left, stamp) || in_any(swings_right, stamp);
        if loaded && !swinging {
            classes.push(Class::Standing);
        } else {
            classes.push(Class::Unknown);
        }
    }

    // Standing runs shorter than the minimum demote to unknown.
    let mut i = 0;
    while i < classes.len() {
        if classes[i] == Class::Standing {
            let mut j = i;
            while j + 1 < classes.len() && classes[j + 1] == Class::Standing {
                j += 1;
            }
            if times[j] - times[i] < config.standing_min_duration_s {
                for c in classes[i..=j].iter_mut() {
                    *c = Class::Unknown;
                }
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }

    // Compress into a tiling: each interval runs to the next run's start.
    let mut out = Vec::new();
    let mut start = 0usize;
    for i in 1..=classes.len() {
        if i == classes.len() || classes[i] != classes[start] {
            let end_t = if i == classes.len() {
                times[classes.len() - 1]
            } else {
                times[i]
            };
            let label = match classes[start] {
                Class::Standing => PhaseLabel::Standing,
                Class::Walking => PhaseLabel::Walking,
                Class::Unknown => PhaseLabel::Unknown,
            };
            if let Some(interval) =
                Interval::new(Timestamp::new(times[start]), Timestamp::new(end_t))
            {
                out.push(IntervalLabel::new(interval, IntervalSide::Both, label));
            }
            start = i;
        }
    }
    out
}

/// Builds gait cycles for one foot: consecutive swing pairs inside walking
/// spans, bounded heel strike (swing end) to heel strike.
pub fn segment_cycles(
    side: Side,
    swings: &[IntervalLabel],
    foot_flats: &[IntervalLabel],
    activity: &[IntervalLabel],
    config: &GaitConfig,
) -> Vec<GaitCycle> {
    let walking: Vec<&IntervalLabel> = activity
        .iter()
        .filter(|a| a.label == PhaseLabel::Walking)
        .collect();
    let in_walking: Vec<&IntervalLabel> = swings
        .iter()
        .filter(|s| {
            walking
                .iter()
                .any(|w| w.interval.contains_closed(s.interval.start()))
        })
        .collect();

    let mut cycles = Vec::new();
    for pair in in_walking.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let period = b.interval.end().seconds() - a.interval.end().seconds();
        if period < config.min_cycle_period_s || period > config.max_cycle_period_s {
            continue;
        }
        let Some(interval) = Interval::new(a.interval.end(), b.interval.end()) else {
            continue;
        };
        let foot_flat = foot_flats
            .iter()
            .filter(|f| {
                f.interval.start() >= interval.start() && f.interval.end() <= interval.end()
            })
            .max_by(|x, y| x.interval.duration().total_cmp(&y.interval.duration()))
            .copied();
        cycles.push(GaitCycle {
            side,
            interval,
            swing: *b,
            foot_flat,
        });
    }
    cycles
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{InsoleSample, Region, RegionMap, INSOLE_CELLS};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    /// Builds an insole stream from per-region force profiles (heel,
    /// midfoot, forefoot) sampled at `rate_hz`.
    fn stream_from_profile(
        side: Side,
        rate_hz: f64,
        duration_s: f64,
        profile: impl Fn(f64) -> (f64, f64, f64),
    ) -> InsoleStream {
        let map = RegionMap::default();
        let n = (duration_s * rate_hz) as usize;
        let counts = (
            map.cells_in(Region::Heel).count() as f64,
            map.cells_in(Region::Midfoot).count() as f64,
            map.cells_in(Region::Forefoot).count() as f64,
        );
        let samples = (0..n)
            .map(|i| {
                let t = i as f64 / rate_hz;
                let (heel, mid, fore) = profile(t);
                let mut cells = [0.0; INSOLE_CELLS];
                for (c, cell) in cells.iter_mut().enumerate() {
                    *cell = match map.region_of(c) {
                        Region::Heel => heel / counts.0,
                        Region::Midfoot => mid / counts.1,
                        Region::Forefoot => fore / counts.2,
                    };
                }
                InsoleSample {
                    t: Timestamp::new(t),
                    cells,
                }
            })
            .collect();
        InsoleStream {
            side,
            samples,
            region_map: map,
        }
    }

    fn square_wave_stream() -> InsoleStream {
        // 600 N stance for 0.6 s, 1 N swing for 0.4 s, repeated.
        stream_from_profile(Side::Left, 40.0, 10.0, |t| {
            let phase = t % 1.0;
            if phase < 0.6 {
                (300.0, 0.0, 300.0)
            } else {
                (0.5, 0.0, 0.5)
            }
        })
    }

    #[test]
    fn constant_load_has_no_swing() {
        let stream = stream_from_profile(Side::Left, 40.0, 5.0, |_| (300.0, 0.0, 300.0));
        let detection = detect_swing(&stream, &GaitConfig::default()).unwrap();
        assert!(detection.intervals.is_empty());
        assert!(detection.warnings.is_empty());
    }

    #[test]
    fn square_wave_swings_detected() {
        let detection = detect_swing(&square_wave_stream(), &GaitConfig::default()).unwrap();
        assert_eq!(detection.intervals.len(), 10);
        for interval in &detection.intervals {
            let start = interval.interval.start().seconds() % 1.0;
            assert_abs_diff_eq!(start, 0.6, epsilon = 0.026);
            assert_abs_diff_eq!(interval.interval.duration(), 0.375, epsilon = 0.026);
            assert_eq!(interval.label, PhaseLabel::Swing);
        }
    }

    #[test]
    fn zero_stream_warns_without_intervals() {
        let stream = stream_from_profile(Side::Right, 40.0, 5.0, |_| (0.0, 0.0, 0.0));
        let detection = detect_swing(&stream, &GaitConfig::default()).unwrap();
        assert!(detection.intervals.is_empty());
        assert_eq!(detection.warnings.len(), 1);
    }

    #[test]
    fn short_stream_is_an_error() {
        let stream = stream_from_profile(Side::Left, 40.0, 1.5, |_| (300.0, 0.0, 300.0));
        assert!(matches!(
            detect_swing(&stream, &GaitConfig::default()),
            Err(GaitError::StreamTooShort { .. })
        ));
    }

    #[test]
    fn grf_threshold_oracle() {
        let thr = grf_threshold(&[0.1, 0.2, 0.3]).unwrap();
        assert_abs_diff_eq!(thr, 0.4449489742783178, epsilon = 1e-12);
        assert_abs_diff_eq!(grf_threshold(&[0.5; 20]).unwrap(), 0.5, epsilon = 1e-12);
        assert_eq!(grf_threshold(&[0.0; 10]).unwrap(), 0.0);
    }

    #[test]
    fn thresholds_require_enough_samples() {
        let stream = square_wave_stream();
        let one_swing = vec![IntervalLabel::new(
            Interval::new(Timestamp::new(0.6), Timestamp::new(0.65)).unwrap(),
            IntervalSide::Left,
            PhaseLabel::Swing,
        )];
        assert!(matches!(
            region_thresholds(&stream, &one_swing, &GaitConfig::default()),
            Err(GaitError::InsufficientSwingSamples { .. })
        ));
    }

    #[test]
    fn thresholds_from_square_wave_swings() {
        let stream = square_wave_stream();
        let config = GaitConfig::default();
        let swings = detect_swing(&stream, &config).unwrap().intervals;
        let thr = region_thresholds(&stream, &swings, &config).unwrap();
        // Swing regions carry a constant 0.5 N per side, so sigma is 0.
        assert_abs_diff_eq!(thr.heel_n, 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(thr.forefoot_n, 0.5, epsilon = 1e-9);
        assert!(thr.sample_count >= MIN_SWING_SAMPLES);
    }

    #[test]
    fn foot_flat_requires_both_regions() {
        let config = GaitConfig::default();
        let thr = RegionThresholds {
            heel_n: 1.0,
            forefoot_n: 1.0,
            sample_count: 100,
            computed_from: Vec::new(),
        };
        let heel_only = stream_from_profile(Side::Left, 40.0, 3.0, |_| (10.0, 0.0, 0.0));
        assert!(detect_foot_flat(&heel_only, &thr, &config).is_empty());

        let both = stream_from_profile(Side::Left, 40.0, 3.0, |t| {
            if (1.0..1.5).contains(&t) {
                (10.0, 0.0, 10.0)
            } else {
                (10.0, 0.0, 0.0)
            }
        });
        let flats = detect_foot_flat(&both, &thr, &config);
        assert_eq!(flats.len(), 1);
        assert_abs_diff_eq!(flats[0].interval.start().seconds(), 1.0, epsilon = 0.026);
        assert_abs_diff_eq!(flats[0].interval.duration(), 0.475, epsilon = 0.026);
    }

    fn walking_pair(duration_s: f64, cycle_s: f64) -> (InsoleStream, InsoleStream) {
        let gait = move |t: f64, offset: f64| {
            let phase = ((t / cycle_s) + offset).rem_euclid(1.0);
            if phase < 0.6 {
                (300.0, 20.0, 300.0)
            } else {
                (0.5, 0.2, 0.5)
            }
        };
        let left = stream_from_profile(Side::Left, 40.0, duration_s, move |t| gait(t, 0.0));
        let right = stream_from_profile(Side::Right, 40.0, duration_s, move |t| gait(t, 0.5));
        (left, right)
    }

    #[test]
    fn standing_session_classified() {
        let config = GaitConfig::default();
        let left = stream_from_profile(Side::Left, 40.0, 30.0, |_| (150.0, 30.0, 120.0));
        let right = stream_from_profile(Side::Right, 40.0, 30.0, |_| (150.0, 30.0, 120.0));
        let activity = classify_activity(&left, &right, &[], &[], &config);
        assert_eq!(activity.len(), 1);
        assert_eq!(activity[0].label, PhaseLabel::Standing);
        assert_abs_diff_eq!(activity[0].interval.duration(), 29.975, epsilon = 1e-6);
    }

    #[test]
    fn alternating_swings_classified_walking() {
        let config = GaitConfig::default();
        let (left, right) = walking_pair(11.0, 1.1);
        let swings_l = detect_swing(&left, &config).unwrap().intervals;
        let swings_r = detect_swing(&right, &config).unwrap().intervals;
        assert!(swings_l.len() >= 8 && swings_r.len() >= 8);
        let activity = classify_activity(&left, &right, &swings_l, &swings_r, &config);
        let walking_time: f64 = activity
            .iter()
            .filter(|a| a.label == PhaseLabel::Walking)
            .map(|a| a.interval.duration())
            .sum();
        assert!(walking_time > 8.0, "walking_time = {walking_time}");
    }

    #[test]
    fn unloaded_foot_is_unknown() {
        let config = GaitConfig::default();
        let left = stream_from_profile(Side::Left, 40.0, 10.0, |_| (150.0, 30.0, 120.0));
        let right = stream_from_profile(Side::Right, 40.0, 10.0, |_| (0.0, 0.0, 0.0));
        let activity = classify_activity(&left, &right, &[], &[], &config);
        assert_eq!(activity.len(), 1);
        assert_eq!(activity[0].label, PhaseLabel::Unknown);
    }

    #[test]
    fn activity_tiles_stream_span() {
        let config = GaitConfig::default();
        let (left, right) = walking_pair(8.0, 1.0);
        let swings_l = detect_swing(&left, &config).unwrap().intervals;
        let swings_r = detect_swing(&right, &config).unwrap().intervals;
        let activity = classify_activity(&left, &right, &swings_l, &swings_r, &config);
        let total: f64 = activity.iter().map(|a| a.interval.duration()).sum();
        let span = left.span().unwrap().duration();
        assert_abs_diff_eq!(total, span, epsilon = 1e-9);
        for pair in activity.windows(2) {
            assert_eq!(pair[0].interval.end(), pair[1].interval.start());
        }
    }

    #[test]
    fn sixty_second_walk_yields_expected_cycles() {
        let config = GaitConfig::default();
        let (left, right) = walking_pair(60.0, 1.0);
        let swings_l = detect_swing(&left, &config).unwrap().intervals;
        let swings_r = detect_swing(&right, &config).unwrap().intervals;
        let activity = classify_activity(&left, &right, &swings_l, &swings_r, &config);
        let thresholds = region_thresholds(&left, &swings_l, &config).unwrap();
        let flats = detect_foot_flat(&left, &thresholds, &config);
        let cycles = segment_cycles(Side::Left, &swings_l, &flats, &activity, &config);
        assert!(
            (59..=60).contains(&cycles.len()),
            "cycles = {}",
            cycles.len()
        );
        for cycle in &cycles {
            assert!(cycle.foot_flat.is_some());
            let ff = cycle.foot_flat.unwrap();
            assert!(ff.interval.start() >= cycle.interval.start());
            assert!(ff.interval.end() <= cycle.interval.end());
        }
    }

    #[test]
    fn single_swing_yields_no_cycles() {
        let config = GaitConfig::default();
        let swing = IntervalLabel::new(
            Interval::new(Timestamp::new(1.0), Timestamp::new(1.4)).unwrap(),
            IntervalSide::Left,
            PhaseLabel::Swing,
        );
        let walking = IntervalLabel::new(
            Interval::new(Timestamp::new(0.0), Timestamp::new(10.0)).unwrap(),
            IntervalSide::Both,
            PhaseLabel::Walking,
        );
        let cycles = segment_cycles(Side::Left, &[swing], &[], &[walking], &config);
        assert!(cycles.is_empty());
    }

    #[test]
    fn swing_and_foot_flat_disjoint_on_walking_data() {
        let config = GaitConfig::default();
        let (left, _) = walking_pair(20.0, 1.1);
        let swings = detect_swing(&left, &config).unwrap().intervals;
        let thresholds = region_thresholds(&left, &swings, &config).unwrap();
        let flats = detect_foot_flat(&left, &thresholds, &config);
        assert!(!flats.is_empty());
        for s in &swings {
            for f in &flats {
                assert!(!s.interval.overlaps(&f.interval));
            }
        }
    }

    proptest! {
        #[test]
        fn threshold_translates_with_offset(
            samples in prop::collection::vec(0.0f64..50.0, 10..60),
            offset in -20.0f64..20.0,
        ) {
            let base = grf_threshold(&samples).unwrap();
            let shifted: Vec<f64> = samples.iter().map(|v| v + offset).collect();
            let moved = grf_threshold(&shifted).unwrap();
            prop_assert!((moved - (base + offset)).abs() < 1e-9);
        }

        #[test]
        fn threshold_is_at_least_mean(
            samples in prop::collection::vec(0.0f64..50.0, 10..60),
        ) {
            let thr = grf_threshold(&samples).unwrap();
            let m = samples.iter().sum::<f64>() / samples.len() as f64;
            prop_assert!(thr >= m - 1e-12);
        }
    }
}
