//! Deterministic session simulator: generates wrist barometer/pitch
//! streams, insole force streams, and ground truth for scripted sequences
//! of standing, walking, and lifting, with configurable sensor noise and
//! barometer drift.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{self, AtomSpan, IngestError, LevelAnnotation, SessionManifest};
use crate::model::{
    Anthropometry, InsoleSample, InsoleStream, Interval, IntervalLabel, IntervalSide, PhaseLabel,
    PressureHeightModel, Region, Session, Side, Timestamp, TruthSample, TruthStream, WristSample,
    WristStream, DEFAULT_WRIST_RATIO, INSOLE_CELLS,
};

/// Pitch while standing with arms hanging, degrees.
const STANDING_PITCH_DEG: f64 = 75.0;
/// Pitch while the arm is extended toward a load or raised, degrees.
const EXTENDED_PITCH_DEG: f64 = 15.0;
/// Mean wrist pitch while walking, degrees.
const WALK_PITCH_MEAN_DEG: f64 = 55.0;
/// Opposite-foot cycle phase at which the arm swing peaks.
const PITCH_PHASE_CENTER: f64 = 0.275;
/// Arm-swing amplitude at normal pace, degrees.
pub const DEFAULT_ARM_SWING_DEG: f64 = 25.0;
/// Wrist raise above hanging height during a raise block, cm.
const RAISE_OFFSET_CM: f64 = 30.0;
/// Ramp time for a raise block, seconds.
const RAISE_RAMP_S: f64 = 0.5;
/// Residual per-region force while the foot is unloaded, newtons.
const SWING_BASELINE_N: f64 = 0.5;
/// Stance-phase windows of the gait cycle, as cycle-phase fractions.
const HEEL_CONTACT: (f64, f64) = (0.0, 0.45);
const FORE_CONTACT: (f64, f64) = (0.10, 0.60);
/// True swing and foot-flat windows, as cycle-phase fractions.
const TRUE_SWING: (f64, f64) = (0.60, 1.0);
const TRUE_FOOT_FLAT: (f64, f64) = (0.10, 0.45);
/// Minimum share of body weight carried somewhere on the foot throughout
/// stance. Midfoot picks up whatever heel and forefoot drop, so total GRF
/// collapses only at the true swing boundary.
const MIDFOOT_STANCE_FRACTION: f64 = 0.15;
/// Hold and ramp used when a lift set is expanded, seconds.
const LIFT_HOLD_S: f64 = 3.0;
const LIFT_RAMP_S: f64 = 1.0;
/// Recovery stand after each expanded lift, seconds.
const INTER_LIFT_STAND_S: f64 = 5.0;
/// Shelf heights of the standard protocol, cm.
pub const DEFAULT_LIFT_LEVELS_CM: [f64; 4] = [0.0, 50.8, 101.6, 139.7];
/// Trim applied to each end of a lift hold when annotating it, seconds.
const HOLD_ANNOTATION_MARGIN_S: f64 = 0.5;

/// Errors raised while validating a simulation config.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("sim::simulate: script is empty")]
    EmptyScript,
    #[error("sim::simulate: {which} rate {rate_hz} Hz is not positive")]
    InvalidRate { which: &'static str, rate_hz: f64 },
    #[error("sim::simulate: script atom {index}: {message}")]
    BadAtom { index: usize, message: String },
}

/// Walking pace presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WalkSpeed {
    Slow,
    Normal,
    Fast,
}

impl WalkSpeed {
    pub fn cycle_period_s(self) -> f64 {
        match self {
            WalkSpeed::Slow => 1.6,
            WalkSpeed::Normal => 1.1,
            WalkSpeed::Fast => 0.85,
        }
    }

    /// Arm swing grows with pace; scales the configured amplitude.
    pub fn amplitude_factor(self) -> f64 {
        match self {
            WalkSpeed::Slow => 0.32,
            WalkSpeed::Normal => 1.0,
            WalkSpeed::Fast => 1.4,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            WalkSpeed::Slow => "walk_slow",
            WalkSpeed::Normal => "walk_normal",
            WalkSpeed::Fast => "walk_fast",
        }
    }
}

fn default_lift_hold_s() -> f64 {
    LIFT_HOLD_S
}

fn default_lift_ramp_s() -> f64 {
    LIFT_RAMP_S
}

fn default_repetitions() -> usize {
    1
}

/// One scripted activity block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptAtom {
    /// Quiet standing, arms hanging.
    Stand { duration_s: f64 },
    /// Standing with the wrist raised and the arm extended: same feet as
    /// standing, but no hanging-arm anchors can form.
    Raise { duration_s: f64 },
    Walk { speed: WalkSpeed, duration_s: f64 },
    /// One lift: raise the load to a shelf, hold, and bring it back.
    /// The wrist sits `wrist_offset_cm` above the load during the hold.
    Lift {
        level_cm: f64,
        #[serde(default)]
        wrist_offset_cm: f64,
        #[serde(default = "default_lift_hold_s")]
        hold_s: f64,
        #[serde(default = "default_lift_ramp_s")]
        ramp_s: f64,
    },
    /// Repeated lifts to one shelf height, each holding 3 s and followed
    /// by a 5 s recovery stand. The wrist offset comes from the
    /// per-level table in the config.
    LiftSet {
        level_cm: f64,
        #[serde(default = "default_repetitions")]
        repetitions: usize,
    },
}

impl ScriptAtom {
    pub fn duration_s(&self) -> f64 {
        match self {
            ScriptAtom::Stand { duration_s }
            | ScriptAtom::Raise { duration_s }
            | ScriptAtom::Walk { duration_s, .. } => *duration_s,
            ScriptAtom::Lift { hold_s, ramp_s, .. } => 2.0 * ramp_s + hold_s,
            ScriptAtom::LiftSet { repetitions, .. } => {
                *repetitions as f64 * (2.0 * LIFT_RAMP_S + LIFT_HOLD_S + INTER_LIFT_STAND_S)
            }
        }
    }

    fn label(&self) -> String {
        match self {
            ScriptAtom::Stand { .. } => "stand".to_string(),
            ScriptAtom::Raise { .. } => "raise".to_string(),
            ScriptAtom::Walk { speed, .. } => speed.label().to_string(),
            ScriptAtom::Lift { level_cm, .. } | ScriptAtom::LiftSet { level_cm, .. } => {
                format!("lift_{level_cm}")
            }
        }
    }
}

/// Gaussian sensor noise levels; zero everywhere means a noiseless run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub pressure_sigma_pa: f64,
    pub pitch_sigma_deg: f64,
    /// Per-cell insole force noise.
    pub cell_sigma_n: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            pressure_sigma_pa: 0.0,
            pitch_sigma_deg: 0.0,
            cell_sigma_n: 0.0,
        }
    }
}

/// Barometer drift injected per wrist: linear trend, a slow sinusoid, and
/// a random walk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriftConfig {
    pub linear_pa_per_s: f64,
    pub sin_amplitude_pa: f64,
    pub sin_period_s: f64,
    pub random_walk_pa_per_sqrt_s: f64,
}

impl Default for DriftConfig {
    fn default() -> Self {
        DriftConfig {
            linear_pa_per_s: 0.0,
            sin_amplitude_pa: 0.0,
            sin_period_s: 0.0,
            random_walk_pa_per_sqrt_s: 0.0,
        }
    }
}

/// Wrist height above the load while holding at one shelf level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelOffset {
    pub level_cm: f64,
    pub wrist_offset_cm: f64,
}

/// Shelf-height offsets mirroring how grip height shifts with the shelf:
/// well above the load at the ground, near it at the waist, slightly
/// below at the shoulder.
pub fn default_wrist_offsets() -> Vec<LevelOffset> {
    [(0.0, 5.0), (50.8, 4.0), (101.6, 0.0), (139.7, -2.0)]
        .iter()
        .map(|&(level_cm, wrist_offset_cm)| LevelOffset {
            level_cm,
            wrist_offset_cm,
        })
        .collect()
}

/// Full description of one simulated session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub subject_id: String,
    pub seed: u64,
    pub body_height_cm: f64,
    pub wrist_ratio: f64,
    pub body_weight_n: f64,
    pub wrist_rate_hz: f64,
    pub insole_rate_hz: f64,
    pub base_pressure_pa: f64,
    /// True pressure-to-height slope of the simulated atmosphere, cm/Pa.
    pub true_slope_cm_per_pa: f64,
    /// Arm-swing pitch amplitude at normal pace, degrees; slower and
    /// faster paces scale it down and up.
    pub arm_swing_deg: f64,
    /// Wrist-above-load offset applied per shelf level; lift sets look up
    /// the entry nearest their level.
    pub wrist_offsets: Vec<LevelOffset>,
    pub script: Vec<ScriptAtom>,
    pub noise: NoiseConfig,
    pub drift: DriftConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            subject_id: "sim".to_string(),
            seed: 7,
            body_height_cm: 171.0,
            wrist_ratio: DEFAULT_WRIST_RATIO,
            body_weight_n: 735.0,
            wrist_rate_hz: 25.0,
            insole_rate_hz: 40.0,
            base_pressure_pa: 101_325.0,
            true_slope_cm_per_pa: PressureHeightModel::physics_default().slope_cm_per_pa,
            arm_swing_deg: DEFAULT_ARM_SWING_DEG,
            wrist_offsets: default_wrist_offsets(),
            script: vec![
                ScriptAtom::Stand { duration_s: 5.0 },
                ScriptAtom::Walk {
                    speed: WalkSpeed::Normal,
                    duration_s: 30.0,
                },
                ScriptAtom::Stand { duration_s: 5.0 },
            ],
            noise: NoiseConfig::default(),
            drift: DriftConfig::default(),
        }
    }
}

/// The standard lifting protocol: a calibration stand, then one lift to
/// each shelf height with a recovery stand after each.
pub fn default_lift_script() -> Vec<ScriptAtom> {
    let mut script = vec![ScriptAtom::Stand { duration_s: 5.0 }];
    script.extend(DEFAULT_LIFT_LEVELS_CM.iter().map(|&level_cm| ScriptAtom::LiftSet {
        level_cm,
        repetitions: 1,
    }));
    script
}

/// A simulated session plus its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub session: Session,
    /// True phase labels: standing/walking blocks plus per-foot swing and
    /// foot-flat windows.
    pub intervals: Vec<IntervalLabel>,
    /// Windows in which a wrist hangs at calibration height with its
    /// pitch high enough to anchor: standing blocks for both wrists, and
    /// the opposite foot's flat windows while walking. `side` names the
    /// wrist, not a foot.
    pub kvlu_eligible: Vec<IntervalLabel>,
    /// Lift-hold windows with the true load level.
    pub levels: Vec<LevelAnnotation>,
    /// Script blocks with their time spans.
    pub atoms: Vec<AtomSpan>,
}

struct Placed<'a> {
    atom: &'a ScriptAtom,
    start: f64,
    end: f64,
}

fn place_script(script: &[ScriptAtom]) -> Vec<Placed<'_>> {
    let mut placed = Vec::with_capacity(script.len());
    let mut t = 0.0;
    for atom in script {
        let d = atom.duration_s();
        placed.push(Placed {
            atom,
            start: t,
            end: t + d,
        });
        t += d;
    }
    placed
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

fn fract(x: f64) -> f64 {
    x.rem_euclid(1.0)
}

/// Offset for the table entry nearest `level_cm`; zero with no table.
fn offset_for(level_cm: f64, offsets: &[LevelOffset]) -> f64 {
    offsets
        .iter()
        .min_by(|a, b| {
            (a.level_cm - level_cm)
                .abs()
                .total_cmp(&(b.level_cm - level_cm).abs())
        })
        .map(|o| o.wrist_offset_cm)
        .unwrap_or(0.0)
}

/// Resolves every lift set into its concrete lift/stand sequence.
pub fn expand_script(script: &[ScriptAtom], offsets: &[LevelOffset]) -> Vec<ScriptAtom> {
    let mut expanded = Vec::with_capacity(script.len());
    for atom in script {
        match atom {
            ScriptAtom::LiftSet {
                level_cm,
                repetitions,
            } => {
                for _ in 0..*repetitions {
                    expanded.push(ScriptAtom::Lift {
                        level_cm: *level_cm,
                        wrist_offset_cm: offset_for(*level_cm, offsets),
                        hold_s: LIFT_HOLD_S,
                        ramp_s: LIFT_RAMP_S,
                    });
                    expanded.push(ScriptAtom::Stand {
                        duration_s: INTER_LIFT_STAND_S,
                    });
                }
            }
            other => expanded.push(other.clone()),
        }
    }
    expanded
}

/// True wrist height at local atom time, cm.
fn wrist_height(atom: &ScriptAtom, local: f64, hanging_cm: f64) -> f64 {
    match atom {
        ScriptAtom::Stand { .. } | ScriptAtom::Walk { .. } | ScriptAtom::LiftSet { .. } => {
            hanging_cm
        }
        ScriptAtom::Raise { duration_s } => {
            let ramp = RAISE_RAMP_S.min(duration_s / 4.0);
            let up = smoothstep(local / ramp);
            let down = smoothstep((duration_s - local) / ramp);
            hanging_cm + RAISE_OFFSET_CM * up.min(down)
        }
        ScriptAtom::Lift {
            level_cm,
            wrist_offset_cm,
            hold_s,
            ramp_s,
        } => {
            let target = level_cm + wrist_offset_cm;
            if local < *ramp_s {
                hanging_cm + (target - hanging_cm) * smoothstep(local / ramp_s)
            } else if local < ramp_s + hold_s {
                target
            } else {
                target + (hanging_cm - target) * smoothstep((local - ramp_s - hold_s) / ramp_s)
            }
        }
    }
}

/// True wrist pitch at local atom time, degrees.
fn wrist_pitch(atom: &ScriptAtom, local: f64, side: Side, arm_swing_deg: f64) -> f64 {
    match atom {
        ScriptAtom::Stand { .. } | ScriptAtom::LiftSet { .. } => STANDING_PITCH_DEG,
        ScriptAtom::Raise { .. } | ScriptAtom::Lift { .. } => EXTENDED_PITCH_DEG,
        ScriptAtom::Walk { speed, .. } => {
            let cycle = speed.cycle_period_s();
            // The arm swings against the opposite leg, peaking mid
            // foot-flat of the opposite foot.
            let opposite_phase = match side {
                Side::Right => fract(local / cycle),
                Side::Left => fract(local / cycle + 0.5),
            };
            WALK_PITCH_MEAN_DEG
                + arm_swing_deg
                    * speed.amplitude_factor()
                    * (std::f64::consts::TAU * (opposite_phase - PITCH_PHASE_CENTER)).cos()
        }
    }
}

/// True per-region foot forces (heel, midfoot, forefoot) at local atom
/// time, newtons, excluding the swing baseline.
fn foot_forces(atom: &ScriptAtom, local: f64, side: Side, weight_n: f64) -> (f64, f64, f64) {
    match atom {
        ScriptAtom::Stand { .. }
        | ScriptAtom::Raise { .. }
        | ScriptAtom::Lift { .. }
        | ScriptAtom::LiftSet { .. } => {
            let half = weight_n / 2.0;
            (0.45 * half, 0.20 * half, 0.35 * half)
        }
        ScriptAtom::Walk { speed, .. } => {
            let cycle = speed.cycle_period_s();
            let phase = match side {
                Side::Left => fract(local / cycle),
                Side::Right => fract(local / cycle + 0.5),
            };
            let heel = if phase < HEEL_CONTACT.1 {
                let x = (phase - HEEL_CONTACT.0) / (HEEL_CONTACT.1 - HEEL_CONTACT.0);
                0.75 * weight_n * (std::f64::consts::PI * x).sin().powi(2)
            } else {
                0.0
            };
            let fore = if (FORE_CONTACT.0..FORE_CONTACT.1).contains(&phase) {
                let x = (phase - FORE_CONTACT.0) / (FORE_CONTACT.1 - FORE_CONTACT.0);
                0.85 * weight_n * (std::f64::consts::PI * x).sin().powi(2)
            } else {
                0.0
            };
            // Keep the foot loaded through stance so total GRF collapses
            // exactly at the swing boundary, not where the bumps taper.
            let mid = if phase < TRUE_SWING.0 {
                (MIDFOOT_STANCE_FRACTION * weight_n - heel - fore).max(0.0)
            } else {
                0.0
            };
            (heel, mid, fore)
        }
    }
}

fn validate(config: &SimConfig) -> Result<(), SimError> {
    if config.script.is_empty() {
        return Err(SimError::EmptyScript);
    }
    for (which, rate) in [
        ("wrist", config.wrist_rate_hz),
        ("insole", config.insole_rate_hz),
    ] {
        if !rate.is_finite() || rate <= 0.0 {
            return Err(SimError::InvalidRate {
                which,
                rate_hz: rate,
            });
        }
    }
    for (index, atom) in config.script.iter().enumerate() {
        let bad = |message: &str| SimError::BadAtom {
            index,
            message: message.to_string(),
        };
        match atom {
            ScriptAtom::Stand { duration_s }
            | ScriptAtom::Raise { duration_s }
            | ScriptAtom::Walk { duration_s, .. } => {
                if !duration_s.is_finite() || *duration_s <= 0.0 {
                    return Err(bad("duration must be positive and finite"));
                }
            }
            ScriptAtom::Lift { hold_s, ramp_s, .. } => {
                if !ramp_s.is_finite() || *ramp_s <= 0.0 {
                    return Err(bad("ramp must be positive and finite"));
                }
                if !hold_s.is_finite() || *hold_s < 0.0 {
                    return Err(bad("hold must be non-negative and finite"));
                }
            }
            ScriptAtom::LiftSet { repetitions, .. } => {
                if *repetitions < 1 {
                    return Err(bad("repetitions must be at least 1"));
                }
            }
        }
    }
    Ok(())
}

/// Per-sample drift: linear trend plus sinusoid plus a random walk that
/// starts at zero and steps once per sample interval.
fn drift_values(times: &[f64], drift: &DriftConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut random_walk = 0.0;
    let mut prev_t: Option<f64> = None;
    times
        .iter()
        .map(|&t| {
            if drift.random_walk_pa_per_sqrt_s > 0.0 {
                if let Some(prev) = prev_t {
                    let z: f64 = rng.sample(StandardNormal);
                    random_walk += z * drift.random_walk_pa_per_sqrt_s * (t - prev).max(0.0).sqrt();
                }
                prev_t = Some(t);
            }
            let mut d = drift.linear_pa_per_s * t + random_walk;
            if drift.sin_period_s > 0.0 {
                d += drift.sin_amplitude_pa
                    * (std::f64::consts::TAU * t / drift.sin_period_s).sin();
            }
            d
        })
        .collect()
}

/// Adds drift on top of an existing pressure stream and returns the
/// per-sample drift offsets alongside, for use as an oracle. Stochastic
/// drift is seeded independently of any session.
pub fn inject_drift(
    stream: &WristStream,
    drift: &DriftConfig,
    seed: u64,
) -> (WristStream, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let times: Vec<f64> = stream.samples.iter().map(|s| s.t.seconds()).collect();
    let offsets = drift_values(&times, drift, &mut rng);
    let samples = stream
        .samples
        .iter()
        .zip(&offsets)
        .map(|(s, &d)| WristSample {
            pressure_pa: s.pressure_pa + d,
            ..*s
        })
        .collect();
    (
        WristStream {
            side: stream.side,
            samples,
        },
        offsets,
    )
}

/// Index of the placed atom covering `t`; the final atom also covers its
/// own end instant.
fn atom_at<'a>(placed: &'a [Placed<'a>], t: f64) -> &'a Placed<'a> {
    placed
        .iter()
        .find(|p| t >= p.start && t < p.end)
        .unwrap_or_else(|| placed.last().unwrap())
}

/// Runs the simulation. The same config always produces the identical
/// session, bit for bit.
pub fn simulate(config: &SimConfig) -> Result<SimOutput, SimError> {
    validate(config)?;
    let script = expand_script(&config.script, &config.wrist_offsets);
    let placed = place_script(&script);
    let total = placed.last().unwrap().end;
    let hanging = config.wrist_ratio * config.body_height_cm;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let draw = |sigma: f64, rng: &mut ChaCha8Rng| -> f64 {
        if sigma > 0.0 {
            let z: f64 = rng.sample(StandardNormal);
            z * sigma
        } else {
            0.0
        }
    };

    // Wrist streams, one per side, all sharing the wrist-rate timeline.
    let wrist_n = (total * config.wrist_rate_hz).round() as usize;
    let wrist_times: Vec<f64> = (0..wrist_n)
        .map(|k| k as f64 / config.wrist_rate_hz)
        .collect();
    let mut wrists = Vec::new();
    for side in [Side::Left, Side::Right] {
        let drifts = drift_values(&wrist_times, &config.drift, &mut rng);
        let samples = wrist_times
            .iter()
            .zip(&drifts)
            .map(|(&t, &drift)| {
                let p = atom_at(&placed, t);
                let local = t - p.start;
                let h = wrist_height(p.atom, local, hanging);
                WristSample {
                    t: Timestamp::new(t),
                    pressure_pa: config.base_pressure_pa + h / config.true_slope_cm_per_pa + drift
                        + draw(config.noise.pressure_sigma_pa, &mut rng),
                    pitch_deg: wrist_pitch(p.atom, local, side, config.arm_swing_deg)
                        + draw(config.noise.pitch_sigma_deg, &mut rng),
                }
            })
            .collect();
        wrists.push(WristStream { side, samples });
    }

    // Insole streams on their own timeline.
    let insole_n = (total * config.insole_rate_hz).round() as usize;
    let mut insoles = Vec::new();
    for side in [Side::Left, Side::Right] {
        let stream = InsoleStream {
            side,
            samples: Vec::with_capacity(insole_n),
            region_map: Default::default(),
        };
        let counts = [
            stream.region_map.cells_in(Region::Heel).count() as f64,
            stream.region_map.cells_in(Region::Midfoot).count() as f64,
            stream.region_map.cells_in(Region::Forefoot).count() as f64,
        ];
        let mut samples = Vec::with_capacity(insole_n);
        for k in 0..insole_n {
            let t = k as f64 / config.insole_rate_hz;
            let p = atom_at(&placed, t);
            let (heel, mid, fore) = foot_forces(p.atom, t - p.start, side, config.body_weight_n);
            let shares = [
                (heel + SWING_BASELINE_N) / counts[0],
                (mid + SWING_BASELINE_N) / counts[1],
                (fore + SWING_BASELINE_N) / counts[2],
            ];
            let mut cells = [0.0; INSOLE_CELLS];
            for (c, cell) in cells.iter_mut().enumerate() {
                let share = match stream.region_map.region_of(c) {
                    Region::Heel => shares[0],
                    Region::Midfoot => shares[1],
                    Region::Forefoot => shares[2],
                };
                *cell = (share + draw(config.noise.cell_sigma_n, &mut rng)).max(0.0);
            }
            samples.push(InsoleSample {
                t: Timestamp::new(t),
                cells,
            });
        }
        insoles.push(InsoleStream {
            samples,
            ..stream
        });
    }
    let mut insoles = insoles.into_iter();
    let insole_left = insoles.next().unwrap();
    let insole_right = insoles.next().unwrap();

    // Ground truth on the wrist timeline.
    let truth_samples: Vec<TruthSample> = wrist_times
        .iter()
        .map(|&t| {
            let p = atom_at(&placed, t);
            let local = t - p.start;
            let h = wrist_height(p.atom, local, hanging);
            let load = match p.atom {
                ScriptAtom::Lift {
                    wrist_offset_cm, ..
                } => Some(h - wrist_offset_cm),
                _ => None,
            };
            TruthSample {
                t: Timestamp::new(t),
                wrist_height_cm: h,
                load_height_cm: load,
            }
        })
        .collect();

    // True intervals, anchor eligibility, annotations, and atom spans.
    let mut intervals = Vec::new();
    let mut eligible = Vec::new();
    let mut levels = Vec::new();
    let mut atoms = Vec::new();
    for p in &placed {
        atoms.push(AtomSpan {
            label: p.atom.label(),
            start_s: p.start,
            end_s: p.end,
        });
        let push_span = |intervals: &mut Vec<IntervalLabel>, lo: f64, hi: f64, side, label| {
            let lo = lo.max(p.start);
            let hi = hi.min(p.end);
            if let Some(iv) = Interval::new(Timestamp::new(lo), Timestamp::new(hi)) {
                intervals.push(IntervalLabel::new(iv, side, label));
            }
        };
        match p.atom {
            ScriptAtom::Stand { .. } => {
                push_span(
                    &mut intervals,
                    p.start,
                    p.end,
                    IntervalSide::Both,
                    PhaseLabel::Standing,
                );
                push_span(
                    &mut eligible,
                    p.start,
                    p.end,
                    IntervalSide::Both,
                    PhaseLabel::Standing,
                );
            }
            ScriptAtom::Raise { .. } => {
                push_span(
                    &mut intervals,
                    p.start,
                    p.end,
                    IntervalSide::Both,
                    PhaseLabel::Standing,
                );
            }
            ScriptAtom::Lift {
                level_cm,
                hold_s,
                ramp_s,
                ..
            } => {
                push_span(
                    &mut intervals,
                    p.start,
                    p.end,
                    IntervalSide::Both,
                    PhaseLabel::Standing,
                );
                let margin = HOLD_ANNOTATION_MARGIN_S.min(hold_s / 4.0);
                let start_s = p.start + ramp_s + margin;
                let end_s = p.start + ramp_s + hold_s - margin;
                if end_s > start_s {
                    levels.push(LevelAnnotation {
                        start_s,
                        end_s,
                        level_cm: *level_cm,
                        label: p.atom.label(),
                    });
                }
            }
            // Lift sets are expanded before placement.
            ScriptAtom::LiftSet { .. } => unreachable!("script expanded before placement"),
            ScriptAtom::Walk { speed, .. } => {
                push_span(
                    &mut intervals,
                    p.start,
                    p.end,
                    IntervalSide::Both,
                    PhaseLabel::Walking,
                );
                let cycle = speed.cycle_period_s();
                let mut k = 0.0;
                while p.start + k * cycle < p.end {
                    // Right-foot windows sit half a cycle after left
                    // ones; each wrist can anchor while the opposite
                    // foot is flat.
                    for (foot, wrist, shift) in [
                        (IntervalSide::Left, IntervalSide::Right, 0.0),
                        (IntervalSide::Right, IntervalSide::Left, 0.5),
                    ] {
                        for (window, label) in [
                            (TRUE_SWING, PhaseLabel::Swing),
                            (TRUE_FOOT_FLAT, PhaseLabel::FootFlat),
                        ] {
                            let lo = p.start + (k + window.0 - shift) * cycle;
                            let hi = p.start + (k + window.1 - shift) * cycle;
                            push_span(&mut intervals, lo, hi, foot, label);
                            if label == PhaseLabel::FootFlat {
                                push_span(&mut eligible, lo, hi, wrist, label);
                            }
                        }
                    }
                    k += 1.0;
                }
            }
        }
    }

    Ok(SimOutput {
        session: Session {
            subject_id: config.subject_id.clone(),
            anthropometry: Anthropometry {
                body_height_cm: config.body_height_cm,
                wrist_ratio: config.wrist_ratio,
            },
            wrists,
            insole_left,
            insole_right,
            truth: Some(TruthStream {
                samples: truth_samples,
            }),
        },
        intervals,
        kvlu_eligible: eligible,
        levels,
        atoms,
    })
}

/// Writes a simulated session to `dir` as CSV streams plus a manifest,
/// and returns the manifest with the path it was saved to.
pub fn write_session(
    output: &SimOutput,
    dir: &Path,
) -> Result<(SessionManifest, PathBuf), IngestError> {
    std::fs::create_dir_all(dir)?;
    let file = |name: &str| -> Result<std::io::BufWriter<std::fs::File>, IngestError> {
        Ok(std::io::BufWriter::new(std::fs::File::create(
            dir.join(name),
        )?))
    };
    for wrist in &output.session.wrists {
        let name = format!("wrist_{}.csv", wrist.side);
        ingest::write_wrist_csv(file(&name)?, wrist)?;
    }
    ingest::write_insole_csv(file("insole_left.csv")?, &output.session.insole_left)?;
    ingest::write_insole_csv(file("insole_right.csv")?, &output.session.insole_right)?;
    if let Some(truth) = &output.session.truth {
        ingest::write_truth_csv(file("truth.csv")?, truth)?;
    }
    ingest::write_intervals_csv(file("true_intervals.csv")?, &output.intervals)?;
    ingest::write_intervals_csv(file("kvlu_eligible.csv")?, &output.kvlu_eligible)?;

    let manifest = SessionManifest {
        subject_id: output.session.subject_id.clone(),
        body_height_cm: output.session.anthropometry.body_height_cm,
        wrist_ratio: Some(output.session.anthropometry.wrist_ratio),
        wrist_left: Some("wrist_left.csv".to_string()),
        wrist_right: Some("wrist_right.csv".to_string()),
        insole_left: "insole_left.csv".to_string(),
        insole_right: "insole_right.csv".to_string(),
        truth: output.session.truth.as_ref().map(|_| "truth.csv".to_string()),
        region_map: None,
        speed: None,
        levels: output.levels.clone(),
        atoms: output.atoms.clone(),
    };
    let path = dir.join("manifest.json");
    manifest.save(&path)?;
    Ok((manifest, path))
}
