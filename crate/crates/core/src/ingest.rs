//! Session ingestion: manifest loading, CSV stream parsing and writing,
//! temporal alignment, pressure smoothing, and gap handling.
//!
//! CSV schemas:
//! - wrist:  `t,pressure_pa,pitch_deg,side`
//! - insole: `t,side,c00..c95`
//! - truth:  `t,wrist_height_cm[,load_height_cm]`
//!
//! Floats are written with the shortest representation that parses back to
//! the identical value, so write-then-parse is lossless.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    Anthropometry, InsoleSample, InsoleStream, Interval, IntervalLabel, KvluPoint, KvluSource,
    LvlSample, LvlTrace, PressureHeightModel, Region, RegionMap, Session, Side, Timestamp,
    TraceMode, TruthSample, TruthStream, WristSample, WristStream, DEFAULT_WRIST_RATIO,
    INSOLE_CELLS,
};

/// Gaps longer than this split a session into independent segments, seconds.
pub const DEFAULT_MAX_GAP_S: f64 = 1.0;

/// Default smoothing window for wrist pressure, samples (odd).
pub const DEFAULT_SMOOTH_WINDOW: usize = 41;

/// Errors raised while loading or transforming session data.
#[derive(Debug, Error)]
pub enum IngestError {
    #[error("ingest::parse_stream: malformed header, expected `{expected}`, found `{found}`")]
    MalformedHeader { expected: String, found: String },
    #[error("ingest::parse_stream: line {line} has {found} fields, expected {expected}")]
    BadFieldCount {
        line: u64,
        expected: usize,
        found: usize,
    },
    #[error("ingest::parse_stream: line {line}, column `{column}`: value cannot be parsed")]
    NonNumericValue { line: u64, column: String },
    #[error("ingest::align: streams share no time overlap")]
    NoTemporalOverlap,
    #[error("ingest::align: reference rate {rate_hz} Hz is not positive")]
    InvalidRate { rate_hz: f64 },
    #[error("ingest::smooth_pressure: window {window} must be odd")]
    EvenWindow { window: usize },
    #[error("ingest::parse_stream: line {line}: {message}")]
    InconsistentTrace { line: u64, message: String },
    #[error("ingest::parse_lvl_trace: file has no samples")]
    EmptyTrace,
    #[error("ingest::load_session: {message}")]
    Manifest { message: String },
    #[error("ingest: i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("ingest: manifest JSON failure: {0}")]
    Json(#[from] serde_json::Error),
}

/// A labeled time window during which the load rests at a known level.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LevelAnnotation {
    pub start_s: f64,
    pub end_s: f64,
    pub level_cm: f64,
    pub label: String,
}

/// One scripted activity block of a recorded or simulated session.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AtomSpan {
    pub label: String,
    pub start_s: f64,
    pub end_s: f64,
}

/// Manifest describing one recorded session; stream paths are relative to
/// the manifest file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SessionManifest {
    pub subject_id: String,
    pub body_height_cm: f64,
    #[serde(default)]
    pub wrist_ratio: Option<f64>,
    #[serde(default)]
    pub wrist_left: Option<String>,
    #[serde(default)]
    pub wrist_right: Option<String>,
    pub insole_left: String,
    pub insole_right: String,
    #[serde(default)]
    pub truth: Option<String>,
    #[serde(default)]
    pub region_map: Option<String>,
    #[serde(default)]
    pub speed: Option<String>,
    #[serde(default)]
    pub levels: Vec<LevelAnnotation>,
    #[serde(default)]
    pub atoms: Vec<AtomSpan>,
}

impl SessionManifest {
    pub fn load(path: &Path) -> Result<Self, IngestError> {
        let mut text = String::new();
        File::open(path)?.read_to_string(&mut text)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), IngestError> {
        let mut file = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut file, self)?;
        file.write_all(b"\n")?;
        Ok(())
    }
}

const WRIST_HEADER: [&str; 4] = ["t", "pressure_pa", "pitch_deg", "side"];
const TRUTH_HEADER_SHORT: [&str; 2] = ["t", "wrist_height_cm"];
const TRUTH_HEADER_FULL: [&str; 3] = ["t", "wrist_height_cm", "load_height_cm"];

fn insole_header() -> Vec<String> {
    let mut h = vec!["t".to_string(), "side".to_string()];
    h.extend((0..INSOLE_CELLS).map(|i| format!("c{i:02}")));
    h
}

fn header_mismatch(expected: &[String], found: &csv::StringRecord) -> IngestError {
    IngestError::MalformedHeader {
        expected: expected.join(","),
        found: found.iter().collect::<Vec<_>>().join(","),
    }
}

fn record_line(record: &csv::StringRecord, index: usize) -> u64 {
    record
        .position()
        .map(|p| p.line())
        .unwrap_or(index as u64 + 2)
}

fn parse_field(record: &csv::StringRecord, idx: usize, column: &str, line: u64) -> Result<f64, IngestError> {
    let raw = record.get(idx).unwrap_or("").trim();
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(IngestError::NonNumericValue {
            line,
            column: column.to_string(),
        }),
    }
}

fn parse_side(record: &csv::StringRecord, idx: usize, line: u64) -> Result<Side, IngestError> {
    match record.get(idx).unwrap_or("").trim() {
        "L" => Ok(Side::Left),
        "R" => Ok(Side::Right),
        _ => Err(IngestError::NonNumericValue {
            line,
            column: "side".to_string(),
        }),
    }
}

/// Parses a wrist CSV; returns one stream per side present, left first.
pub fn parse_wrist_csv(reader: impl Read) -> Result<Vec<WristStream>, IngestError> {
    let mut csv = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let header = csv.headers().map_err(|_| IngestError::MalformedHeader {
        expected: WRIST_HEADER.join(","),
        found: String::new(),
    })?;
    let expected: Vec<String> = WRIST_HEADER.iter().map(|s| s.to_string()).collect();
    if header.iter().collect::<Vec<_>>() != WRIST_HEADER {
        return Err(header_mismatch(&expected, header));
    }

    let mut left = Vec::new();
    let mut right = Vec::new();
    for (i, record) in csv.records().enumerate() {
        let record = record.map_err(|e| IngestError::Io(std::io::Error::other(e)))?;
        let line = record_line(&record, i);
        if record.len() != WRIST_HEADER.len() {
            return Err(IngestError::BadFieldCount {
                line,
                expected: WRIST_HEADER.len(),
                found: record.len(),
            });
        }
        let sample = WristSample {
            t: Timestamp::new(parse_field(&record, 0, "t", line)?),
            pressure_pa: parse_field(&record, 1, "pressure_pa", line)?,
            pitch_deg: parse_field(&record, 2, "pitch_deg", line)?,
        };
        match parse_side(&record, 3, line)? {
            Side::Left => left.push(sample),
            Side::Right => right.push(sample),
        }
    }

    let mut streams = Vec::new();
    if !left.is_empty() {
        streams.push(WristStream {
            side: Side::Left,
            samples: left,
        });
    }
    if !right.is_empty() {
        streams.push(WristStream {
            side: Side::Right,
            samples: right,
        });
    }
    Ok(streams)
}

/// Parses an insole CSV; returns one stream per side present, left first.
/// Streams carry the default region map; callers may replace it.
pub fn parse_insole_csv(reader: impl Read) -> Result<Vec<InsoleStream>, IngestError> {
    let expected = insole_header();
    let mut csv = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let header = csv.headers().map_err(|_| IngestError::MalformedHeader {
        expected: expected.join(","),
        found: String::new(),
    })?;
    if header.iter().collect::<Vec<_>>() != expected.iter().map(String::as_str).collect::<Vec<_>>()
    {
        return Err(header_mismatch(&expected, header));
    }

    let mut left = Vec::new();
    let mut right = Vec::new();
    for (i, record) in csv.records().enumerate() {
        let record = record.map_err(|e| IngestError::Io(std::io::Error::other(e)))?;
        let line = record_line(&record, i);
        if record.len() != expected.len() {
            return Err(IngestError::BadFieldCount {
                line,
                expected: expected.len(),
                found: record.len(),
            });
        }
        let t = Timestamp::new(parse_field(&record, 0, "t", line)?);
        let side = parse_side(&record, 1, line)?;
        let mut cells = [0.0; INSOLE_CELLS];
        for (c, cell) in cells.iter_mut().enumerate() {
            *cell = parse_field(&record, c + 2, &expected[c + 2], line)?;
        }
        let sample = InsoleSample { t, cells };
        match side {
            Side::Left => left.push(sample),
            Side::Right => right.push(sample),
        }
    }

    let mut streams = Vec::new();
    for (side, samples) in [(Side::Left, left), (Side::Right, right)] {
        if !samples.is_empty() {
            streams.push(InsoleStream {
                side,
                samples,
                region_map: RegionMap::default(),
            });
        }
    }
    Ok(streams)
}

/// Parses a ground-truth CSV; the load column is optional.
pub fn parse_truth_csv(reader: impl Read) -> Result<TruthStream, IngestError> {
    let mut csv = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let header = csv.headers().map_err(|_| IngestError::MalformedHeader {
        expected: TRUTH_HEADER_FULL.join(","),
        found: String::new(),
    })?;
    let cols: Vec<&str> = header.iter().collect();
    let has_load = if cols == TRUTH_HEADER_FULL {
        true
    } else if cols == TRUTH_HEADER_SHORT {
        false
    } else {
        return Err(IngestError::MalformedHeader {
            expected: TRUTH_HEADER_FULL.join(","),
            found: cols.join(","),
        });
    };
    let expected_len = if has_load { 3 } else { 2 };

    let mut samples = Vec::new();
    for (i, record) in csv.records().enumerate() {
        let record = record.map_err(|e| IngestError::Io(std::io::Error::other(e)))?;
        let line = record_line(&record, i);
        if record.len() != expected_len {
            return Err(IngestError::BadFieldCount {
                line,
                expected: expected_len,
                found: record.len(),
            });
        }
        let t = Timestamp::new(parse_field(&record, 0, "t", line)?);
        let wrist_height_cm = parse_field(&record, 1, "wrist_height_cm", line)?;
        let load_height_cm = if has_load && !record.get(2).unwrap_or("").trim().is_empty() {
            Some(parse_field(&record, 2, "load_height_cm", line)?)
        } else {
            None
        };
        samples.push(TruthSample {
            t,
            wrist_height_cm,
            load_height_cm,
        });
    }
    Ok(TruthStream { samples })
}

/// Writes one wrist stream in the wrist CSV schema.
pub fn write_wrist_csv(mut w: impl Write, stream: &WristStream) -> Result<(), IngestError> {
    writeln!(w, "{}", WRIST_HEADER.join(","))?;
    for s in &stream.samples {
        writeln!(
            w,
            "{},{},{},{}",
            s.t,
            s.pressure_pa,
            s.pitch_deg,
            stream.side.letter()
        )?;
    }
    Ok(())
}

/// Writes one insole stream in the insole CSV schema.
pub fn write_insole_csv(mut w: impl Write, stream: &InsoleStream) -> Result<(), IngestError> {
    writeln!(w, "{}", insole_header().join(","))?;
    let mut line = String::new();
    for s in &stream.samples {
        line.clear();
        line.push_str(&format!("{},{}", s.t, stream.side.letter()));
        for c in &s.cells {
            line.push(',');
            line.push_str(&format!("{c}"));
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Writes a ground-truth stream, always including the load column.
pub fn write_truth_csv(mut w: impl Write, stream: &TruthStream) -> Result<(), IngestError> {
    writeln!(w, "{}", TRUTH_HEADER_FULL.join(","))?;
    for s in &stream.samples {
        match s.load_height_cm {
            Some(load) => writeln!(w, "{},{},{}", s.t, s.wrist_height_cm, load)?,
            None => writeln!(w, "{},{},", s.t, s.wrist_height_cm)?,
        }
    }
    Ok(())
}

const KVLU_HEADER: [&str; 5] = [
    "t",
    "wrist_side",
    "source",
    "anchor_pressure_pa",
    "known_height_cm",
];

/// Writes calibration anchors in the anchor CSV schema.
pub fn write_kvlu_csv(mut w: impl Write, points: &[KvluPoint]) -> Result<(), IngestError> {
    writeln!(w, "{}", KVLU_HEADER.join(","))?;
    for p in points {
        writeln!(
            w,
            "{},{},{},{},{}",
            p.t,
            p.wrist_side.letter(),
            p.source,
            p.anchor_pressure_pa,
            p.known_height_cm
        )?;
    }
    Ok(())
}

/// Parses calibration anchors written by [`write_kvlu_csv`].
pub fn parse_kvlu_csv(reader: impl Read) -> Result<Vec<KvluPoint>, IngestError> {
    let expected: Vec<String> = KVLU_HEADER.iter().map(|s| s.to_string()).collect();
    let mut csv = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let header = csv.headers().map_err(|_| IngestError::MalformedHeader {
        expected: expected.join(","),
        found: String::new(),
    })?;
    if header.iter().collect::<Vec<_>>() != KVLU_HEADER {
        return Err(header_mismatch(&expected, header));
    }

    let mut points = Vec::new();
    for (i, record) in csv.records().enumerate() {
        let record = record.map_err(|e| IngestError::Io(std::io::Error::other(e)))?;
        let line = record_line(&record, i);
        if record.len() != KVLU_HEADER.len() {
            return Err(IngestError::BadFieldCount {
                line,
                expected: KVLU_HEADER.len(),
                found: record.len(),
            });
        }
        let source = match record.get(2).unwrap_or("").trim() {
            "standing" => KvluSource::Standing,
            "lf" => KvluSource::LeftFoot,
            "rf" => KvluSource::RightFoot,
            _ => {
                return Err(IngestError::NonNumericValue {
                    line,
                    column: "source".to_string(),
                })
            }
        };
        points.push(KvluPoint {
            t: Timestamp::new(parse_field(&record, 0, "t", line)?),
            wrist_side: parse_side(&record, 1, line)?,
            source,
            anchor_pressure_pa: parse_field(&record, 3, "anchor_pressure_pa", line)?,
            known_height_cm: parse_field(&record, 4, "known_height_cm", line)?,
        });
    }
    Ok(points)
}

const TRACE_HEADER: [&str; 8] = [
    "t",
    "lvl_cm",
    "anchor_t",
    "side",
    "mode",
    "load_proxy",
    "slope_cm_per_pa",
    "intercept_cm",
];

/// Writes one estimated trace in the trace CSV schema. The per-trace
/// constants (side, mode, proxy flag, model) repeat on every row so the
/// file is self-contained.
pub fn write_lvl_trace_csv(mut w: impl Write, trace: &LvlTrace) -> Result<(), IngestError> {
    writeln!(w, "{}", TRACE_HEADER.join(","))?;
    for s in &trace.samples {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            s.t,
            s.lvl_cm,
            s.anchor_t,
            trace.wrist_side.letter(),
            trace.mode,
            trace.load_proxy,
            trace.model.slope_cm_per_pa,
            trace.model.intercept_cm
        )?;
    }
    Ok(())
}

/// Parses a trace written by [`write_lvl_trace_csv`], checking that the
/// per-trace constants agree across rows.
pub fn parse_lvl_trace_csv(reader: impl Read) -> Result<LvlTrace, IngestError> {
    let expected: Vec<String> = TRACE_HEADER.iter().map(|s| s.to_string()).collect();
    let mut csv = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let header = csv.headers().map_err(|_| IngestError::MalformedHeader {
        expected: expected.join(","),
        found: String::new(),
    })?;
    if header.iter().collect::<Vec<_>>() != TRACE_HEADER {
        return Err(header_mismatch(&expected, header));
    }

    let mut trace: Option<LvlTrace> = None;
    for (i, record) in csv.records().enumerate() {
        let record = record.map_err(|e| IngestError::Io(std::io::Error::other(e)))?;
        let line = record_line(&record, i);
        if record.len() != TRACE_HEADER.len() {
            return Err(IngestError::BadFieldCount {
                line,
                expected: TRACE_HEADER.len(),
                found: record.len(),
            });
        }
        let sample = LvlSample {
            t: Timestamp::new(parse_field(&record, 0, "t", line)?),
            lvl_cm: parse_field(&record, 1, "lvl_cm", line)?,
            anchor_t: Timestamp::new(parse_field(&record, 2, "anchor_t", line)?),
        };
        let side = parse_side(&record, 3, line)?;
        let mode = match record.get(4).unwrap_or("").trim() {
            "raw" => TraceMode::Raw,
            "realtime" => TraceMode::Realtime,
            "corrected" => TraceMode::Corrected,
            _ => {
                return Err(IngestError::NonNumericValue {
                    line,
                    column: "mode".to_string(),
                })
            }
        };
        let load_proxy = match record.get(5).unwrap_or("").trim() {
            "true" => true,
            "false" => false,
            _ => {
                return Err(IngestError::NonNumericValue {
                    line,
                    column: "load_proxy".to_string(),
                })
            }
        };
        let model = PressureHeightModel {
            slope_cm_per_pa: parse_field(&record, 6, "slope_cm_per_pa", line)?,
            intercept_cm: parse_field(&record, 7, "intercept_cm", line)?,
        };
        match trace.as_mut() {
            None => {
                trace = Some(LvlTrace {
                    wrist_side: side,
                    mode,
                    load_proxy,
                    model,
                    samples: vec![sample],
                })
            }
            Some(t) => {
                if t.wrist_side != side || t.mode != mode || t.load_proxy != load_proxy
                    || t.model != model
                {
                    return Err(IngestError::InconsistentTrace {
                        line,
                        message: "per-trace constants changed mid-file".to_string(),
                    });
                }
                t.samples.push(sample);
            }
        }
    }
    trace.ok_or(IngestError::EmptyTrace)
}

const INTERVALS_HEADER: [&str; 4] = ["start", "end", "side", "label"];

/// Writes labeled intervals in the intervals CSV schema.
pub fn write_intervals_csv(
    mut w: impl Write,
    intervals: &[IntervalLabel],
) -> Result<(), IngestError> {
    writeln!(w, "{}", INTERVALS_HEADER.join(","))?;
    for iv in intervals {
        writeln!(
            w,
            "{},{},{},{}",
            iv.interval.start(),
            iv.interval.end(),
            iv.side,
            iv.label
        )?;
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct RegionMapFile {
    labels: Vec<String>,
}

/// Loads a region map from a JSON label array file.
pub fn load_region_map(path: &Path) -> Result<RegionMap, IngestError> {
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    let file: RegionMapFile = serde_json::from_str(&text)?;
    if file.labels.len() != INSOLE_CELLS {
        return Err(IngestError::Manifest {
            message: format!(
                "region map `{}` has {} labels, expected {INSOLE_CELLS}",
                path.display(),
                file.labels.len()
            ),
        });
    }
    let mut labels = [Region::Midfoot; INSOLE_CELLS];
    for (i, raw) in file.labels.iter().enumerate() {
        labels[i] = match raw.as_str() {
            "heel" => Region::Heel,
            "midfoot" => Region::Midfoot,
            "forefoot" => Region::Forefoot,
            other => {
                return Err(IngestError::Manifest {
                    message: format!("region map cell {i}: unknown region `{other}`"),
                })
            }
        };
    }
    Ok(RegionMap::from_labels(labels))
}

fn resolve(base: &Path, rel: &str) -> PathBuf {
    base.join(rel)
}

fn open(base: &Path, rel: &str) -> Result<File, IngestError> {
    let path = resolve(base, rel);
    File::open(&path).map_err(|e| IngestError::Manifest {
        message: format!("cannot open `{}`: {e}", path.display()),
    })
}

/// Loads all streams referenced by a manifest into a session.
///
/// `base` is the directory paths are relative to, normally the manifest's
/// parent directory.
pub fn load_session(manifest: &SessionManifest, base: &Path) -> Result<Session, IngestError> {
    let region_map = match &manifest.region_map {
        Some(rel) => Some(load_region_map(&resolve(base, rel))?),
        None => None,
    };

    let mut wrists = Vec::new();
    for (slot, side) in [
        (&manifest.wrist_left, Side::Left),
        (&manifest.wrist_right, Side::Right),
    ] {
        let Some(rel) = slot else { continue };
        let streams = parse_wrist_csv(open(base, rel)?)?;
        match streams.into_iter().find(|s| s.side == side) {
            Some(stream) => wrists.push(stream),
            None => {
                return Err(IngestError::Manifest {
                    message: format!("`{rel}` contains no {side}-side wrist samples"),
                })
            }
        }
    }

    let load_insole = |rel: &str, side: Side| -> Result<InsoleStream, IngestError> {
        let streams = parse_insole_csv(open(base, rel)?)?;
        let mut stream = streams
            .into_iter()
            .find(|s| s.side == side)
            .ok_or_else(|| IngestError::Manifest {
                message: format!("`{rel}` contains no {side}-side insole samples"),
            })?;
        if let Some(map) = &region_map {
            stream.region_map = map.clone();
        }
        Ok(stream)
    };
    let insole_left = load_insole(&manifest.insole_left, Side::Left)?;
    let insole_right = load_insole(&manifest.insole_right, Side::Right)?;

    let truth = match &manifest.truth {
        Some(rel) => Some(parse_truth_csv(open(base, rel)?)?),
        None => None,
    };

    Ok(Session {
        subject_id: manifest.subject_id.clone(),
        anthropometry: Anthropometry {
            body_height_cm: manifest.body_height_cm,
            wrist_ratio: manifest.wrist_ratio.unwrap_or(DEFAULT_WRIST_RATIO),
        },
        wrists,
        insole_left,
        insole_right,
        truth,
    })
}

/// Largest nearest-neighbor distance accepted when aligning to a grid of
/// the given rate.
pub fn default_gap_tolerance(rate_hz: f64) -> f64 {
    0.5 / rate_hz
}

/// Uniform reference timeline over the overlap of the given spans.
///
/// The grid starts at the latest span start and steps by `1/rate_hz` while
/// inside the earliest span end.
pub fn overlap_timeline(spans: &[Interval], rate_hz: f64) -> Result<Vec<Timestamp>, IngestError> {
    if !rate_hz.is_finite() || rate_hz <= 0.0 {
        return Err(IngestError::InvalidRate { rate_hz });
    }
    let start = spans
        .iter()
        .map(|s| s.start())
        .max()
        .ok_or(IngestError::NoTemporalOverlap)?;
    let end = spans
        .iter()
        .map(|s| s.end())
        .min()
        .ok_or(IngestError::NoTemporalOverlap)?;
    if start >= end {
        return Err(IngestError::NoTemporalOverlap);
    }
    let step = 1.0 / rate_hz;
    let n = ((end.seconds() - start.seconds()) * rate_hz + 1e-9).floor() as usize;
    Ok((0..=n)
        .map(|k| Timestamp::new(start.seconds() + k as f64 * step))
        .collect())
}

/// Resamples `samples` onto `timeline` by nearest neighbor in time.
///
/// A grid point with no sample within `max_gap_s` yields `None`. Ties
/// between equidistant neighbors resolve to the earlier sample. Output
/// order follows the timeline; no timestamps are invented.
pub fn align<T: Clone>(
    samples: &[T],
    t_of: impl Fn(&T) -> Timestamp,
    timeline: &[Timestamp],
    max_gap_s: f64,
) -> Vec<Option<T>> {
    let mut out = Vec::with_capacity(timeline.len());
    let mut j = 0usize;
    for &t in timeline {
        while j + 1 < samples.len() {
            let here = (t_of(&samples[j]).seconds() - t.seconds()).abs();
            let next = (t_of(&samples[j + 1]).seconds() - t.seconds()).abs();
            if next < here {
                j += 1;
            } else {
                break;
            }
        }
        match samples.get(j) {
            Some(s) if (t_of(s).seconds() - t.seconds()).abs() <= max_gap_s => {
                out.push(Some(s.clone()))
            }
            _ => out.push(None),
        }
    }
    out
}

/// Centered moving average with clipped edge windows.
///
/// `window` must be odd; 1 is the identity. Edge samples average over the
/// part of the window that exists.
pub fn moving_average(values: &[f64], window: usize) -> Result<Vec<f64>, IngestError> {
    if window.is_multiple_of(2) {
        return Err(IngestError::EvenWindow { window });
    }
    let radius = window / 2;
    let n = values.len();
    let out = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(radius);
            let hi = (i + radius).min(n.saturating_sub(1));
            let slice = &values[lo..=hi];
            slice.iter().sum::<f64>() / slice.len() as f64
        })
        .collect();
    Ok(out)
}

/// Smooths a wrist stream's pressure channel; pitch and time are untouched.
pub fn smooth_pressure(stream: &WristStream, window: usize) -> Result<WristStream, IngestError> {
    let pressures: Vec<f64> = stream.samples.iter().map(|s| s.pressure_pa).collect();
    let smoothed = moving_average(&pressures, window)?;
    Ok(WristStream {
        side: stream.side,
        samples: stream
            .samples
            .iter()
            .zip(smoothed)
            .map(|(s, p)| WristSample {
                pressure_pa: p,
                ..*s
            })
            .collect(),
    })
}

fn stream_gap_cuts<T>(samples: &[T], t_of: impl Fn(&T) -> Timestamp, max_gap_s: f64) -> Vec<f64> {
    samples
        .windows(2)
        .filter(|p| t_of(&p[1]).seconds() - t_of(&p[0]).seconds() > max_gap_s)
        .map(|p| 0.5 * (t_of(&p[0]).seconds() + t_of(&p[1]).seconds()))
        .collect()
}

/// Midpoints of every gap longer than `max_gap_s` in any stream.
pub fn gap_cut_points(session: &Session, max_gap_s: f64) -> Vec<f64> {
    let mut cuts = Vec::new();
    for w in &session.wrists {
        cuts.extend(stream_gap_cuts(&w.samples, |s| s.t, max_gap_s));
    }
    cuts.extend(stream_gap_cuts(
        &session.insole_left.samples,
        |s| s.t,
        max_gap_s,
    ));
    cuts.extend(stream_gap_cuts(
        &session.insole_right.samples,
        |s| s.t,
        max_gap_s,
    ));
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    cuts
}

/// Splits a session at recording gaps longer than `max_gap_s`.
///
/// Each returned segment holds every stream restricted to one contiguous
/// window. Segments in which a required stream has no samples are dropped.
pub fn split_session(session: &Session, max_gap_s: f64) -> Vec<Session> {
    let cuts = gap_cut_points(session, max_gap_s);
    if cuts.is_empty() {
        return vec![session.clone()];
    }
    let mut bounds = vec![f64::NEG_INFINITY];
    bounds.extend(&cuts);
    bounds.push(f64::INFINITY);

    let mut segments = Vec::new();
    for pair in bounds.windows(2) {
        let (lo, hi) = (pair[0], pair[1]);
        let in_window = |t: Timestamp| t.seconds() >= lo && t.seconds() < hi;
        let wrists: Vec<WristStream> = session
            .wrists
            .iter()
            .map(|w| WristStream {
                side: w.side,
                samples: w.samples.iter().filter(|s| in_window(s.t)).copied().collect(),
            })
            .filter(|w| !w.samples.is_empty())
            .collect();
        let slice_insole = |stream: &InsoleStream| InsoleStream {
            side: stream.side,
            samples: stream
                .samples
                .iter()
                .filter(|s| in_window(s.t))
                .cloned()
                .collect(),
            region_map: stream.region_map.clone(),
        };
        let insole_left = slice_insole(&session.insole_left);
        let insole_right = slice_insole(&session.insole_right);
        if wrists.is_empty() || insole_left.samples.is_empty() || insole_right.samples.is_empty() {
            continue;
        }
        let truth = session.truth.as_ref().map(|t| TruthStream {
            samples: t.samples.iter().filter(|s| in_window(s.t)).copied().collect(),
        });
        segments.push(Session {
            subject_id: session.subject_id.clone(),
            anthropometry: session.anthropometry,
            wrists,
            insole_left,
            insole_right,
            truth,
        });
    }
    segments
}
