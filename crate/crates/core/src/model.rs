//! Core domain types shared by every stage of the pipeline: timestamps,
//! sensor samples, labeled intervals, calibration anchors, and traces.
//!
//! Units are fixed across the crate: pressure in pascals, heights in
//! centimeters, time in seconds, angles in degrees, force in newtons.

use std::cmp::Ordering;
use std::fmt;

use thiserror::Error;

/// Default wrist-height ratio applied to body height.
pub const DEFAULT_WRIST_RATIO: f64 = 0.495;

/// Number of pressure cells in one insole sheet.
pub const INSOLE_CELLS: usize = 96;

/// Errors raised while assembling or validating a session.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model::validate_session: stream `{stream}` is empty or missing")]
    EmptyStream { stream: String },
    #[error(
        "model::validate_session: stream `{stream}` time goes backwards at sample index {index}"
    )]
    NonMonotonicTime { stream: String, index: usize },
    #[error("model::validate_session: anthropometry missing or invalid (body height and wrist ratio must be positive and finite)")]
    MissingAnthropometry,
}

/// A point in session time, seconds from the session origin.
///
/// Timestamps are always finite; parsing and validation reject non-finite
/// values, which lets this type carry a total order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Timestamp(f64);

impl Timestamp {
    pub fn new(seconds: f64) -> Self {
        debug_assert!(seconds.is_finite(), "timestamps must be finite");
        Timestamp(seconds)
    }

    pub fn seconds(self) -> f64 {
        self.0
    }
}

impl Eq for Timestamp {}

impl PartialOrd for Timestamp {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Timestamp {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Body side of a sensor.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn letter(self) -> &'static str {
        match self {
            Side::Left => "L",
            Side::Right => "R",
        }
    }

    pub fn opposite(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Side::Left => write!(f, "left"),
            Side::Right => write!(f, "right"),
        }
    }
}

/// Side attribution for a labeled interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntervalSide {
    Left,
    Right,
    Both,
}

impl From<Side> for IntervalSide {
    fn from(side: Side) -> Self {
        match side {
            Side::Left => IntervalSide::Left,
            Side::Right => IntervalSide::Right,
        }
    }
}

impl fmt::Display for IntervalSide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IntervalSide::Left => write!(f, "left"),
            IntervalSide::Right => write!(f, "right"),
            IntervalSide::Both => write!(f, "both"),
        }
    }
}

/// What a labeled interval describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseLabel {
    Swing,
    FootFlat,
    StanceOther,
    Standing,
    Walking,
    Unknown,
}

impl fmt::Display for PhaseLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PhaseLabel::Swing => "swing",
            PhaseLabel::FootFlat => "foot_flat",
            PhaseLabel::StanceOther => "stance_other",
            PhaseLabel::Standing => "standing",
            PhaseLabel::Walking => "walking",
            PhaseLabel::Unknown => "unknown",
        };
        write!(f, "{s}")
    }
}

/// Half-open time span `[start, end)` with `start < end`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    start: Timestamp,
    end: Timestamp,
}

impl Interval {
    /// Returns `None` unless `start < end`.
    pub fn new(start: Timestamp, end: Timestamp) -> Option<Self> {
        (start < end).then_some(Interval { start, end })
    }

    pub fn start(&self) -> Timestamp {
        self.start
    }

    pub fn end(&self) -> Timestamp {
        self.end
    }

    pub fn duration(&self) -> f64 {
        self.end.seconds() - self.start.seconds()
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.start.seconds() + self.end.seconds())
    }

    /// Half-open containment: `start <= t < end`.
    pub fn contains(&self, t: Timestamp) -> bool {
        self.start <= t && t < self.end
    }

    /// Closed containment: `start <= t <= end`.
    pub fn contains_closed(&self, t: Timestamp) -> bool {
        self.start <= t && t <= self.end
    }

    pub fn overlaps(&self, other: &Interval) -> bool {
        self.start < other.end && other.start < self.end
    }
}

/// An interval tagged with the side and phase it describes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalLabel {
    pub interval: Interval,
    pub side: IntervalSide,
    pub label: PhaseLabel,
}

impl IntervalLabel {
    pub fn new(interval: Interval, side: IntervalSide, label: PhaseLabel) -> Self {
        IntervalLabel {
            interval,
            side,
            label,
        }
    }
}

/// True when no two intervals in the slice overlap.
pub fn intervals_disjoint(intervals: &[IntervalLabel]) -> bool {
    for (i, a) in intervals.iter().enumerate() {
        for b in &intervals[i + 1..] {
            if a.interval.overlaps(&b.interval) {
                return false;
            }
        }
    }
    true
}

/// One wrist sensor reading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WristSample {
    pub t: Timestamp,
    pub pressure_pa: f64,
    pub pitch_deg: f64,
}

/// A wrist stream: one wristband's samples in time order.
#[derive(Debug, Clone, PartialEq)]
pub struct WristStream {
    pub side: Side,
    pub samples: Vec<WristSample>,
}

impl WristStream {
    pub fn span(&self) -> Option<Interval> {
        let first = self.samples.first()?.t;
        let last = self.samples.last()?.t;
        Interval::new(first, last)
    }
}

/// Anatomical region of an insole cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Heel,
    Midfoot,
    Forefoot,
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Region::Heel => write!(f, "heel"),
            Region::Midfoot => write!(f, "midfoot"),
            Region::Forefoot => write!(f, "forefoot"),
        }
    }
}

/// Region selector for ground reaction force sums.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrfRegion {
    Heel,
    Midfoot,
    Forefoot,
    Total,
}

/// Assignment of each insole cell to exactly one region.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionMap {
    labels: [Region; INSOLE_CELLS],
}

impl RegionMap {
    /// Builds a map from explicit per-cell labels.
    pub fn from_labels(labels: [Region; INSOLE_CELLS]) -> Self {
        RegionMap { labels }
    }

    pub fn labels(&self) -> &[Region; INSOLE_CELLS] {
        &self.labels
    }

    pub fn region_of(&self, cell: usize) -> Region {
        self.labels[cell]
    }

    /// Cell indices belonging to `region`.
    pub fn cells_in(&self, region: Region) -> impl Iterator<Item = usize> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter(move |(_, r)| **r == region)
            .map(|(i, _)| i)
    }
}

impl Default for RegionMap {
    /// Longitudinal partition with cell 0 at the heel end: rear 30% heel,
    /// front 40% forefoot, the rest midfoot.
    fn default() -> Self {
        let mut labels = [Region::Midfoot; INSOLE_CELLS];
        for (i, label) in labels.iter_mut().enumerate() {
            let pos = (i as f64 + 0.5) / INSOLE_CELLS as f64;
            *label = if pos < 0.30 {
                Region::Heel
            } else if pos >= 0.60 {
                Region::Forefoot
            } else {
                Region::Midfoot
            };
        }
        RegionMap { labels }
    }
}

/// One insole pressure frame: per-cell vertical force in newtons.
#[derive(Debug, Clone, PartialEq)]
pub struct InsoleSample {
    pub t: Timestamp,
    pub cells: [f64; INSOLE_CELLS],
}

/// An insole stream: one foot's frames in time order plus its region map.
#[derive(Debug, Clone, PartialEq)]
pub struct InsoleStream {
    pub side: Side,
    pub samples: Vec<InsoleSample>,
    pub region_map: RegionMap,
}

impl InsoleStream {
    pub fn span(&self) -> Option<Interval> {
        let first = self.samples.first()?.t;
        let last = self.samples.last()?.t;
        Interval::new(first, last)
    }
}

/// Sum of cell forces over a region of one insole frame.
pub fn region_grf(sample: &InsoleSample, map: &RegionMap, region: GrfRegion) -> f64 {
    match region {
        GrfRegion::Total => sample.cells.iter().sum(),
        GrfRegion::Heel => sum_region(sample, map, Region::Heel),
        GrfRegion::Midfoot => sum_region(sample, map, Region::Midfoot),
        GrfRegion::Forefoot => sum_region(sample, map, Region::Forefoot),
    }
}

fn sum_region(sample: &InsoleSample, map: &RegionMap, region: Region) -> f64 {
    map.cells_in(region).map(|i| sample.cells[i]).sum()
}

/// Subject anthropometry used for known-height calibration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anthropometry {
    pub body_height_cm: f64,
    pub wrist_ratio: f64,
}

impl Anthropometry {
    pub fn new(body_height_cm: f64) -> Self {
        Anthropometry {
            body_height_cm,
            wrist_ratio: DEFAULT_WRIST_RATIO,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.body_height_cm.is_finite()
            && self.body_height_cm > 0.0
            && self.wrist_ratio.is_finite()
            && self.wrist_ratio > 0.0
    }
}

/// Which detector produced a calibration anchor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KvluSource {
    Standing,
    LeftFoot,
    RightFoot,
}

impl fmt::Display for KvluSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KvluSource::Standing => write!(f, "standing"),
            KvluSource::LeftFoot => write!(f, "lf"),
            KvluSource::RightFoot => write!(f, "rf"),
        }
    }
}

/// A calibration anchor: an instant where the wrist height is known and the
/// smoothed pressure there was captured.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KvluPoint {
    pub t: Timestamp,
    pub wrist_side: Side,
    pub source: KvluSource,
    pub anchor_pressure_pa: f64,
    pub known_height_cm: f64,
}

/// Affine pressure-to-height model: `height = slope * (p - p_anchor) +
/// h_anchor + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PressureHeightModel {
    /// Slope in cm per pascal; physically negative.
    pub slope_cm_per_pa: f64,
    /// Constant offset in cm; zero keeps anchors exact.
    pub intercept_cm: f64,
}

/// Air density used by the hydrostatic default slope, kg/m^3.
pub const AIR_DENSITY_KG_M3: f64 = 1.225;
/// Standard gravity, m/s^2.
pub const GRAVITY_M_S2: f64 = 9.80665;

impl PressureHeightModel {
    /// Hydrostatic slope -1/(rho*g), converted to cm/Pa, zero intercept.
    pub fn physics_default() -> Self {
        PressureHeightModel {
            slope_cm_per_pa: -100.0 / (AIR_DENSITY_KG_M3 * GRAVITY_M_S2),
            intercept_cm: 0.0,
        }
    }

    /// Height implied by pressure `p` relative to an anchor.
    pub fn height_at(&self, pressure_pa: f64, anchor: &KvluPoint) -> f64 {
        self.slope_cm_per_pa * (pressure_pa - anchor.anchor_pressure_pa)
            + anchor.known_height_cm
            + self.intercept_cm
    }
}

impl Default for PressureHeightModel {
    fn default() -> Self {
        Self::physics_default()
    }
}

/// How a trace was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceMode {
    /// Anchored once at the first anchor, never updated.
    Raw,
    /// Re-anchored at every accepted anchor as it arrives.
    Realtime,
    /// Realtime plus retrospective inter-anchor drift removal.
    Corrected,
}

impl fmt::Display for TraceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceMode::Raw => write!(f, "raw"),
            TraceMode::Realtime => write!(f, "realtime"),
            TraceMode::Corrected => write!(f, "corrected"),
        }
    }
}

/// One estimated height sample and the anchor in effect when it was made.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LvlSample {
    pub t: Timestamp,
    pub lvl_cm: f64,
    pub anchor_t: Timestamp,
}

/// An estimated vertical-location trace for one wrist.
#[derive(Debug, Clone, PartialEq)]
pub struct LvlTrace {
    pub wrist_side: Side,
    pub mode: TraceMode,
    /// True when the wrist height is being read as the load height.
    pub load_proxy: bool,
    pub model: PressureHeightModel,
    pub samples: Vec<LvlSample>,
}

/// The raw material of one recorded session.
#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub subject_id: String,
    pub anthropometry: Anthropometry,
    pub wrists: Vec<WristStream>,
    pub insole_left: InsoleStream,
    pub insole_right: InsoleStream,
    pub truth: Option<TruthStream>,
}

/// One ground-truth reading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthSample {
    pub t: Timestamp,
    pub wrist_height_cm: f64,
    pub load_height_cm: Option<f64>,
}

/// Reference trace recorded alongside the sensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TruthStream {
    pub samples: Vec<TruthSample>,
}

/// Per-stream statistics from validation.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamStats {
    pub stream: String,
    pub samples: usize,
    pub dropped_duplicates: usize,
    /// Mean sample rate in Hz; `None` for fewer than two samples.
    pub rate_hz: Option<f64>,
}

/// Outcome of `validate_session`: counts, rates, and non-fatal warnings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub streams: Vec<StreamStats>,
    pub warnings: Vec<String>,
}

/// Checks stream integrity and drops exact-duplicate timestamps.
///
/// Duplicate timestamps are removed with a warning (the first sample wins);
/// a timestamp that moves backwards is an error. Validating an already
/// validated session returns it unchanged.
pub fn validate_session(
    mut session: Session,
) -> Result<(Session, ValidationReport), ModelError> {
    if !session.anthropometry.is_valid() {
        return Err(ModelError::MissingAnthropometry);
    }
    if session.wrists.is_empty() {
        return Err(ModelError::EmptyStream {
            stream: "wrist".into(),
        });
    }

    let mut report = ValidationReport::default();

    let mut wrists = std::mem::take(&mut session.wrists);
    for stream in &mut wrists {
        let name = format!("wrist_{}", stream.side);
        let dropped = clean_timestamps(&name, &mut stream.samples, |s| s.t, &mut report)?;
        push_stats(&name, &stream.samples, |s| s.t, dropped, &mut report);
    }
    session.wrists = wrists;

    for side in [Side::Left, Side::Right] {
        let name = format!("insole_{side}");
        let stream = match side {
            Side::Left => &mut session.insole_left,
            Side::Right => &mut session.insole_right,
        };
        let dropped = clean_timestamps(&name, &mut stream.samples, |s| s.t, &mut report)?;
        push_stats(&name, &stream.samples, |s| s.t, dropped, &mut report);
    }

    if let Some(truth) = session.truth.as_mut() {
        let dropped = clean_timestamps("truth", &mut truth.samples, |s| s.t, &mut report)?;
        push_stats("truth", &truth.samples, |s| s.t, dropped, &mut report);
    }

    Ok((session, report))
}

fn clean_timestamps<T: Clone>(
    name: &str,
    samples: &mut Vec<T>,
    t_of: impl Fn(&T) -> Timestamp,
    report: &mut ValidationReport,
) -> Result<usize, ModelError> {
    if samples.is_empty() {
        return Err(ModelError::EmptyStream {
            stream: name.to_string(),
        });
    }
    for (i, pair) in samples.windows(2).enumerate() {
        if t_of(&pair[1]) < t_of(&pair[0]) {
            return Err(ModelError::NonMonotonicTime {
                stream: name.to_string(),
                index: i + 1,
            });
        }
    }
    let before = samples.len();
    let mut last: Option<Timestamp> = None;
    samples.retain(|s| {
        let t = t_of(s);
        let keep = last != Some(t);
        last = Some(t);
        keep
    });
    let dropped = before - samples.len();
    if dropped > 0 {
        let msg = format!("stream `{name}`: dropped {dropped} duplicate timestamp(s)");
        log::warn!("{msg}");
        report.warnings.push(msg);
    }
    Ok(dropped)
}

fn push_stats<T>(
    name: &str,
    samples: &[T],
    t_of: impl Fn(&T) -> Timestamp,
    dropped: usize,
    report: &mut ValidationReport,
) {
    let rate_hz = if samples.len() >= 2 {
        let span = t_of(samples.last().unwrap()).seconds() - t_of(&samples[0]).seconds();
        (span > 0.0).then(|| (samples.len() - 1) as f64 / span)
    } else {
        None
    };
    report.streams.push(StreamStats {
        stream: name.to_string(),
        samples: samples.len(),
        dropped_duplicates: dropped,
        rate_hz,
    });
}
