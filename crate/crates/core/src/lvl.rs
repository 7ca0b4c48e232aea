//! Vertical-location estimation from smoothed wrist pressure: realtime
//! anchor-relative estimates, a raw single-anchor baseline, and
//! retrospective inter-anchor drift removal.

use thiserror::Error;

use crate::model::{
    KvluPoint, LvlSample, LvlTrace, PressureHeightModel, Side, TraceMode, WristStream,
};

/// Largest height step a new anchor may imply before it is rejected, cm.
pub const DEFAULT_MAX_ANCHOR_JUMP_CM: f64 = 30.0;

/// Errors raised during estimation.
#[derive(Debug, Error)]
pub enum LvlError {
    #[error("lvl::estimate_realtime: no calibration anchor for wrist `{side}`")]
    NoAnchor { side: Side },
    #[error("lvl::correct_drift: {found} accepted anchor(s), need at least 2")]
    FewerThanTwoAnchors { found: usize },
    #[error("lvl::fit_model: {found} calibration pair(s), need at least 2")]
    TooFewPairs { found: usize },
    #[error("lvl::fit_model: pressure has zero variance across calibration pairs")]
    ZeroPressureVariance,
}

/// A realtime estimate plus the anchor bookkeeping needed downstream.
#[derive(Debug, Clone)]
pub struct RealtimeEstimate {
    pub trace: LvlTrace,
    /// Anchors actually applied, in time order.
    pub accepted_anchors: Vec<KvluPoint>,
    /// Anchors rejected by the jump gate.
    pub skipped_anchors: Vec<KvluPoint>,
    /// Wrist samples before the first anchor, which produce no estimate.
    pub leading_omitted: usize,
    pub warnings: Vec<String>,
}

/// Fits the pressure-to-height slope by least squares over
/// `(pressure_pa, height_cm)` pairs. The constant term is supplied by
/// anchoring, so the returned intercept is zero; set it explicitly to
/// model a known bias.
pub fn fit_pressure_height_model(
    pairs: &[(f64, f64)],
) -> Result<PressureHeightModel, LvlError> {
    if pairs.len() < 2 {
        return Err(LvlError::TooFewPairs {
            found: pairs.len(),
        });
    }
    let n = pairs.len() as f64;
    let mean_p = pairs.iter().map(|(p, _)| p).sum::<f64>() / n;
    let mean_h = pairs.iter().map(|(_, h)| h).sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var = 0.0;
    for (p, h) in pairs {
        cov += (p - mean_p) * (h - mean_h);
        var += (p - mean_p) * (p - mean_p);
    }
    if var == 0.0 {
        return Err(LvlError::ZeroPressureVariance);
    }
    Ok(PressureHeightModel {
        slope_cm_per_pa: cov / var,
        intercept_cm: 0.0,
    })
}

fn estimate(
    wrist: &WristStream,
    anchors: &[KvluPoint],
    model: PressureHeightModel,
    max_anchor_jump_cm: f64,
    reanchor: bool,
) -> Result<RealtimeEstimate, LvlError> {
    let mut mine: Vec<KvluPoint> = anchors
        .iter()
        .filter(|p| p.wrist_side == wrist.side)
        .copied()
        .collect();
    mine.sort_by_key(|p| p.t);
    if mine.is_empty() {
        return Err(LvlError::NoAnchor { side: wrist.side });
    }

    let mut accepted = vec![mine[0]];
    let mut skipped = Vec::new();
    let mut warnings = Vec::new();
    if reanchor {
        for candidate in &mine[1..] {
            let current = accepted.last().unwrap();
            if candidate.t <= current.t {
                skipped.push(*candidate);
                warnings.push(format!(
                    "lvl::estimate_realtime: anchor at t={} does not advance time; skipped",
                    candidate.t
                ));
                continue;
            }
            let predicted = model.slope_cm_per_pa
                * (candidate.anchor_pressure_pa - current.anchor_pressure_pa)
                + current.known_height_cm;
            let jump = (candidate.known_height_cm - predicted).abs();
            if jump > max_anchor_jump_cm {
                skipped.push(*candidate);
                let msg = format!(
                    "lvl::estimate_realtime: anchor at t={} implies a {jump:.1} cm step (limit {max_anchor_jump_cm:.1}); skipped",
                    candidate.t
                );
                log::warn!("{msg}");
                warnings.push(msg);
            } else {
                accepted.push(*candidate);
            }
        }
    }

    let mut samples = Vec::new();
    let mut leading_omitted = 0usize;
    let mut ai = 0usize;
    for s in &wrist.samples {
        if s.t < accepted[0].t {
            leading_omitted += 1;
            continue;
        }
        while ai + 1 < accepted.len() && accepted[ai + 1].t <= s.t {
            ai += 1;
        }
        let anchor = &accepted[ai];
        samples.push(LvlSample {
            t: s.t,
            lvl_cm: model.height_at(s.pressure_pa, anchor),
            anchor_t: anchor.t,
        });
    }

    Ok(RealtimeEstimate {
        trace: LvlTrace {
            wrist_side: wrist.side,
            mode: if reanchor {
                TraceMode::Realtime
            } else {
                TraceMode::Raw
            },
            load_proxy: false,
            model,
            samples,
        },
        accepted_anchors: accepted,
        skipped_anchors: skipped,
        leading_omitted,
        warnings,
    })
}

/// Realtime estimation: re-anchors at every accepted anchor as it arrives.
/// Anchors for other wrists are ignored; an anchor whose implied height
/// step exceeds `max_anchor_jump_cm` is skipped with a warning.
pub fn estimate_lvl_realtime(
    wrist: &WristStream,
    anchors: &[KvluPoint],
    model: PressureHeightModel,
    max_anchor_jump_cm: f64,
) -> Result<RealtimeEstimate, LvlError> {
    estimate(wrist, anchors, model, max_anchor_jump_cm, true)
}

/// Uncalibrated baseline: anchors once at the first anchor and never
/// updates, so barometer drift accumulates unchecked.
pub fn estimate_lvl_raw(
    wrist: &WristStream,
    anchors: &[KvluPoint],
    model: PressureHeightModel,
) -> Result<RealtimeEstimate, LvlError> {
    estimate(wrist, anchors, model, f64::INFINITY, false)
}

/// Retrospective drift removal: inside each consecutive accepted-anchor
/// pair, the residual the old anchor's prediction leaves at the new anchor
/// is bled off linearly in time, pinning the trace to every anchor.
/// Samples after the last anchor pass through unchanged.
pub fn correct_drift_retrospective(
    estimate: &RealtimeEstimate,
) -> Result<LvlTrace, LvlError> {
    let anchors = &estimate.accepted_anchors;
    if anchors.len() < 2 {
        return Err(LvlError::FewerThanTwoAnchors {
            found: anchors.len(),
        });
    }
    let slope = estimate.trace.model.slope_cm_per_pa;
    let residuals: Vec<f64> = anchors
        .windows(2)
        .map(|pair| {
            slope * (pair[1].anchor_pressure_pa - pair[0].anchor_pressure_pa)
                + pair[0].known_height_cm
                - pair[1].known_height_cm
        })
        .collect();

    let mut seg = 0usize;
    let samples = estimate
        .trace
        .samples
        .iter()
        .map(|s| {
            while seg + 1 < anchors.len() && anchors[seg + 1].t <= s.t {
                seg += 1;
            }
            if seg + 1 >= anchors.len() {
                // At or past the last anchor: nothing to interpolate toward.
                return *s;
            }
            let (a, b) = (&anchors[seg], &anchors[seg + 1]);
            let frac =
                (s.t.seconds() - a.t.seconds()) / (b.t.seconds() - a.t.seconds());
            LvlSample {
                t: s.t,
                lvl_cm: s.lvl_cm - residuals[seg] * frac,
                anchor_t: s.anchor_t,
            }
        })
        .collect();

    Ok(LvlTrace {
        wrist_side: estimate.trace.wrist_side,
        mode: TraceMode::Corrected,
        load_proxy: estimate.trace.load_proxy,
        model: estimate.trace.model,
        samples,
    })
}

/// Reinterprets a wrist-height trace as the load's vertical location, the
/// proxy used while the subject carries the load.
pub fn wrist_height_as_lvl(trace: &LvlTrace) -> LvlTrace {
    LvlTrace {
        load_proxy: true,
        ..trace.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{KvluSource, Timestamp, WristSample};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn ts(s: f64) -> Timestamp {
        Timestamp::new(s)
    }

    fn anchor(t: f64, p: f64, h: f64, side: Side) -> KvluPoint {
        KvluPoint {
            t: ts(t),
            wrist_side: side,
            source: KvluSource::Standing,
            anchor_pressure_pa: p,
            known_height_cm: h,
        }
    }

    fn stream(side: Side, points: &[(f64, f64)]) -> WristStream {
        WristStream {
            side,
            samples: points
                .iter()
                .map(|&(t, p)| WristSample {
                    t: ts(t),
                    pressure_pa: p,
                    pitch_deg: 75.0,
                })
                .collect(),
        }
    }

    #[test]
    fn anchored_estimates_track_pressure_excursions() {
        let model = PressureHeightModel {
            slope_cm_per_pa: -8.324,
            intercept_cm: 0.0,
        };
        let wrist = stream(
            Side::Right,
            &[(0.0, 101_325.0), (1.0, 101_319.0), (2.0, 101_328.0)],
        );
        let anchors = [anchor(0.0, 101_325.0, 84.75, Side::Right)];
        let est = estimate_lvl_realtime(&wrist, &anchors, model, 30.0).unwrap();
        assert_eq!(est.trace.samples.len(), 3);
        assert_abs_diff_eq!(est.trace.samples[0].lvl_cm, 84.75, epsilon = 1e-9);
        assert_abs_diff_eq!(est.trace.samples[1].lvl_cm, 134.694, epsilon = 1e-9);
        assert_abs_diff_eq!(est.trace.samples[2].lvl_cm, 59.778, epsilon = 1e-9);
    }

    #[test]
    fn missing_anchor_is_an_error() {
        let wrist = stream(Side::Right, &[(0.0, 101_325.0)]);
        let anchors = [anchor(0.0, 101_325.0, 84.75, Side::Left)];
        assert!(matches!(
            estimate_lvl_realtime(&wrist, &anchors, PressureHeightModel::default(), 30.0),
            Err(LvlError::NoAnchor { side: Side::Right })
        ));
    }

    #[test]
    fn samples_before_first_anchor_are_omitted() {
        let wrist = stream(
            Side::Left,
            &[(0.0, 1000.0), (1.0, 1000.0), (2.0, 1000.0), (3.0, 1000.0)],
        );
        let anchors = [anchor(2.0, 1000.0, 90.0, Side::Left)];
        let est =
            estimate_lvl_realtime(&wrist, &anchors, PressureHeightModel::default(), 30.0).unwrap();
        assert_eq!(est.leading_omitted, 2);
        assert_eq!(est.trace.samples.len(), 2);
        assert_eq!(est.trace.samples[0].t, ts(2.0));
    }

    #[test]
    fn raw_ignores_later_anchors() {
        let model = PressureHeightModel {
            slope_cm_per_pa: -1.0,
            intercept_cm: 0.0,
        };
        // Pressure rises 1 Pa/s purely from drift while the wrist stays put.
        let wrist = stream(
            Side::Left,
            &[(0.0, 1000.0), (5.0, 1005.0), (10.0, 1010.0), (15.0, 1015.0)],
        );
        let anchors = [
            anchor(0.0, 1000.0, 100.0, Side::Left),
            anchor(10.0, 1010.0, 100.0, Side::Left),
        ];
        let raw = estimate_lvl_raw(&wrist, &anchors, model).unwrap();
        let realtime = estimate_lvl_realtime(&wrist, &anchors, model, 30.0).unwrap();
        assert_eq!(raw.trace.mode, TraceMode::Raw);
        // Raw keeps drifting: -1 * 15 Pa = -15 cm by the end.
        assert_abs_diff_eq!(raw.trace.samples[3].lvl_cm, 85.0, epsilon = 1e-12);
        // Realtime snaps back to 100 at the second anchor.
        assert_abs_diff_eq!(realtime.trace.samples[2].lvl_cm, 100.0, epsilon = 1e-12);
        assert_abs_diff_eq!(realtime.trace.samples[3].lvl_cm, 95.0, epsilon = 1e-12);
    }

    #[test]
    fn implausible_anchor_is_gated() {
        let model = PressureHeightModel {
            slope_cm_per_pa: -1.0,
            intercept_cm: 0.0,
        };
        let wrist = stream(Side::Left, &[(0.0, 1000.0), (10.0, 1000.0), (20.0, 1000.0)]);
        let anchors = [
            anchor(0.0, 1000.0, 100.0, Side::Left),
            // Same pressure yet 40 cm lower: a 40 cm implied step.
            anchor(10.0, 1000.0, 60.0, Side::Left),
            // 10 cm step: acceptable.
            anchor(20.0, 1000.0, 90.0, Side::Left),
        ];
        let est = estimate_lvl_realtime(&wrist, &anchors, model, 30.0).unwrap();
        assert_eq!(est.accepted_anchors.len(), 2);
        assert_eq!(est.skipped_anchors.len(), 1);
        assert_eq!(est.skipped_anchors[0].t, ts(10.0));
        assert_eq!(est.warnings.len(), 1);
        assert_abs_diff_eq!(est.trace.samples[1].lvl_cm, 100.0, epsilon = 1e-12);
        assert_abs_diff_eq!(est.trace.samples[2].lvl_cm, 90.0, epsilon = 1e-12);
    }

    #[test]
    fn linear_drift_cancels_exactly_between_anchors() {
        let model = PressureHeightModel {
            slope_cm_per_pa: -1.0,
            intercept_cm: 0.0,
        };
        // True height constant at 100 cm; pressure drifts +1 Pa/s.
        let points: Vec<(f64, f64)> = (0..=15).map(|i| (i as f64, 1000.0 + i as f64)).collect();
        let wrist = stream(Side::Left, &points);
        let anchors = [
            anchor(0.0, 1000.0, 100.0, Side::Left),
            anchor(10.0, 1010.0, 100.0, Side::Left),
        ];
        let est = estimate_lvl_realtime(&wrist, &anchors, model, 30.0).unwrap();
        // Realtime sags to 95 mid-segment.
        assert_abs_diff_eq!(est.trace.samples[5].lvl_cm, 95.0, epsilon = 1e-12);
        let corrected = correct_drift_retrospective(&est).unwrap();
        assert_eq!(corrected.mode, TraceMode::Corrected);
        for s in corrected.samples.iter().take(11) {
            assert_abs_diff_eq!(s.lvl_cm, 100.0, epsilon = 1e-12);
        }
        // Past the last anchor the realtime values pass through untouched.
        for (c, r) in corrected.samples[11..].iter().zip(&est.trace.samples[11..]) {
            assert_eq!(c.lvl_cm, r.lvl_cm);
        }
    }

    #[test]
    fn correction_needs_two_anchors() {
        let wrist = stream(Side::Left, &[(0.0, 1000.0), (1.0, 1000.0)]);
        let anchors = [anchor(0.0, 1000.0, 100.0, Side::Left)];
        let est =
            estimate_lvl_realtime(&wrist, &anchors, PressureHeightModel::default(), 30.0).unwrap();
        assert!(matches!(
            correct_drift_retrospective(&est),
            Err(LvlError::FewerThanTwoAnchors { found: 1 })
        ));
    }

    #[test]
    fn intercept_shifts_estimates_but_not_correction() {
        let model = PressureHeightModel {
            slope_cm_per_pa: -1.0,
            intercept_cm: 4.0,
        };
        let points: Vec<(f64, f64)> = (0..=10).map(|i| (i as f64, 1000.0 + i as f64)).collect();
        let wrist = stream(Side::Left, &points);
        let anchors = [
            anchor(0.0, 1000.0, 100.0, Side::Left),
            anchor(10.0, 1010.0, 100.0, Side::Left),
        ];
        let est = estimate_lvl_realtime(&wrist, &anchors, model, 30.0).unwrap();
        let corrected = correct_drift_retrospective(&est).unwrap();
        for s in &corrected.samples {
            assert_abs_diff_eq!(s.lvl_cm, 104.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn fit_recovers_line_slope() {
        let pairs: Vec<(f64, f64)> = (0..20)
            .map(|i| {
                let p = 101_000.0 + i as f64;
                (p, -8.0 * p + 900_000.0)
            })
            .collect();
        let model = fit_pressure_height_model(&pairs).unwrap();
        assert_abs_diff_eq!(model.slope_cm_per_pa, -8.0, epsilon = 1e-9);
        assert_eq!(model.intercept_cm, 0.0);
    }

    #[test]
    fn fit_rejects_degenerate_inputs() {
        assert!(matches!(
            fit_pressure_height_model(&[(1000.0, 90.0)]),
            Err(LvlError::TooFewPairs { found: 1 })
        ));
        assert!(matches!(
            fit_pressure_height_model(&[(1000.0, 90.0), (1000.0, 95.0)]),
            Err(LvlError::ZeroPressureVariance)
        ));
    }

    #[test]
    fn proxy_flag_marks_trace() {
        let wrist = stream(Side::Left, &[(0.0, 1000.0), (1.0, 1000.0)]);
        let anchors = [anchor(0.0, 1000.0, 100.0, Side::Left)];
        let est =
            estimate_lvl_realtime(&wrist, &anchors, PressureHeightModel::default(), 30.0).unwrap();
        let proxy = wrist_height_as_lvl(&est.trace);
        assert!(proxy.load_proxy);
        assert_eq!(proxy.samples, est.trace.samples);
    }

    proptest! {
        #[test]
        fn corrected_trace_pins_anchor_heights(
            drift_rate in -0.5f64..0.5,
            gap_one in 5.0f64..30.0,
            gap_two in 5.0f64..30.0,
            height in 50.0f64..150.0,
        ) {
            let model = PressureHeightModel { slope_cm_per_pa: -8.0, intercept_cm: 0.0 };
            let t_anchors = [0.0, gap_one, gap_one + gap_two];
            let pressure = |t: f64| 1000.0 - height / 8.0 + drift_rate * t;
            let points: Vec<(f64, f64)> = (0..=((gap_one + gap_two) as usize))
                .map(|i| (i as f64, pressure(i as f64)))
                .chain(t_anchors.iter().map(|&t| (t, pressure(t))))
                .collect();
            let mut sorted = points;
            sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
            sorted.dedup_by(|a, b| a.0 == b.0);
            let wrist = stream(Side::Left, &sorted);
            let anchors: Vec<KvluPoint> = t_anchors
                .iter()
                .map(|&t| anchor(t, pressure(t), height, Side::Left))
                .collect();
            let est = estimate_lvl_realtime(&wrist, &anchors, model, f64::INFINITY).unwrap();
            prop_assume!(est.accepted_anchors.len() == 3);
            let corrected = correct_drift_retrospective(&est).unwrap();
            for a in &est.accepted_anchors {
                let s = corrected.samples.iter().find(|s| s.t == a.t).unwrap();
                prop_assert!((s.lvl_cm - height).abs() < 1e-9);
            }
        }

        // The slope is negative, so falling pressure must read as rising
        // height between anchor updates.
        #[test]
        fn falling_pressure_reads_as_rising_height(
            steps in proptest::collection::vec(0.01f64..2.0, 1..30),
            start_pa in 990.0f64..1010.0,
        ) {
            let mut pressures = vec![start_pa];
            for step in &steps {
                pressures.push(pressures.last().unwrap() - step);
            }
            let points: Vec<(f64, f64)> = pressures
                .iter()
                .enumerate()
                .map(|(i, &p)| (i as f64, p))
                .collect();
            let wrist = stream(Side::Left, &points);
            let anchors = [anchor(0.0, start_pa, 84.645, Side::Left)];
            let est = estimate_lvl_realtime(
                &wrist,
                &anchors,
                PressureHeightModel::physics_default(),
                f64::INFINITY,
            )
            .unwrap();
            for pair in est.trace.samples.windows(2) {
                prop_assert!(pair[1].lvl_cm > pair[0].lvl_cm);
            }
        }
    }
}
