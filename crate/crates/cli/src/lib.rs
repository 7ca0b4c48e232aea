//! Command-line wiring for the load-vertical-location pipeline: simulate
//! sessions, detect calibration anchors, estimate height traces, score
//! them, and pool reports across sessions.

use std::fs::{self, File};
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use kvlu_core::eval::{self, DetectionRateRow, ErrorReport};
use kvlu_core::ingest::{self, LevelAnnotation, SessionManifest};
use kvlu_core::kvlu::AngleThreshold;
use kvlu_core::lvl;
use kvlu_core::model::{IntervalLabel, Side, TruthStream};
use kvlu_core::pipeline::{
    self, PipelineConfig, PipelineOutput, ThresholdPolicy, ThresholdProvenance,
};
use kvlu_core::sim::{self, SimConfig};

/// Load-vertical-location estimation from wrist barometer and insole
/// pressure streams.
#[derive(Debug, Parser)]
#[command(name = "kvlu", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a simulated session with ground truth.
    Simulate(SimulateArgs),
    /// Detect calibration anchors; write anchor, gait, and rate artifacts.
    DetectKvlu(PipelineArgs),
    /// Estimate raw, real-time, and drift-corrected height traces.
    EstimateLvl(PipelineArgs),
    /// Score traces against truth and level annotations; write report.json.
    Evaluate(PipelineArgs),
    /// Pool previously written report.json files into one.
    Report(ReportArgs),
    /// detect-kvlu, estimate-lvl, and evaluate in one pass.
    All(PipelineArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Simulator configuration JSON; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory to write the session files into.
    #[arg(long)]
    pub out: PathBuf,
    /// Override the simulator seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// Session manifest; repeat the flag for a batch.
    #[arg(long, required = true)]
    pub manifest: Vec<PathBuf>,
    /// Pipeline configuration JSON; missing fields take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory; batches write one subdirectory per session.
    #[arg(long)]
    pub out: PathBuf,
    /// Override the hanging wrist-to-body height ratio.
    #[arg(long)]
    pub ratio: Option<f64>,
    /// Force a fixed anchor pitch gate, degrees.
    #[arg(long)]
    pub angle_threshold: Option<f64>,
    /// Pressure smoothing window, samples (odd).
    #[arg(long)]
    pub smooth_window: Option<usize>,
    /// Override the pressure-to-height slope, cm per Pa.
    #[arg(long)]
    pub model_a: Option<f64>,
    /// Override the pressure-to-height intercept, cm.
    #[arg(long)]
    pub model_b: Option<f64>,
    /// Worker threads for batch processing.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// report.json files to pool.
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
    /// Directory to write the pooled report.json into.
    #[arg(long)]
    pub out: PathBuf,
}

/// Which artifact families a pipeline subcommand writes.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Stage {
    DetectKvlu,
    EstimateLvl,
    Evaluate,
    All,
}

impl Stage {
    fn writes_anchors(self) -> bool {
        matches!(self, Stage::DetectKvlu | Stage::All)
    }

    fn writes_rates(self) -> bool {
        matches!(self, Stage::DetectKvlu | Stage::Evaluate | Stage::All)
    }

    fn writes_traces(self) -> bool {
        matches!(self, Stage::EstimateLvl | Stage::All)
    }

    fn writes_report(self) -> bool {
        matches!(self, Stage::Evaluate | Stage::All)
    }
}

/// Everything that influenced one run, echoed so no default stays silent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub manifest: PathBuf,
    pub body_height_cm: f64,
    /// Effective ratio after any override.
    pub wrist_ratio: f64,
    /// The complete effective pipeline configuration.
    pub config: PipelineConfig,
    /// Command-line flags that overrode the config file or defaults.
    pub overrides: Vec<String>,
}

/// Error summaries for one wrist, each `None` when its reference data is
/// absent from the session.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WristReport {
    pub side: Side,
    pub anchors_detected: usize,
    pub anchors_accepted: usize,
    pub anchors_skipped: usize,
    pub corrected_vs_truth: Option<ErrorReport>,
    pub realtime_vs_truth: Option<ErrorReport>,
    pub raw_vs_truth: Option<ErrorReport>,
    pub corrected_vs_levels: Option<ErrorReport>,
    pub raw_vs_levels: Option<ErrorReport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionReport {
    pub subject_id: String,
    pub provenance: Provenance,
    pub threshold: AngleThreshold,
    pub threshold_provenance: ThresholdProvenance,
    pub wrists: Vec<WristReport>,
    pub detection: Vec<DetectionRateRow>,
    /// Lifting-equation sensitivity of this session's calibrated MAE.
    pub rnle_sensitivity_pct: Option<f64>,
    pub warnings: Vec<String>,
}

/// Cross-session aggregates. `pooled_mae_cm` merges every sample exactly
/// via sufficient statistics; `mean_of_session_maes_cm` averages the
/// per-session MAEs, and both are reported to keep the distinction
/// visible.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PooledStats {
    pub corrected_vs_levels: Option<ErrorReport>,
    pub raw_vs_levels: Option<ErrorReport>,
    pub corrected_vs_truth: Option<ErrorReport>,
    pub realtime_vs_truth: Option<ErrorReport>,
    pub raw_vs_truth: Option<ErrorReport>,
    pub pooled_mae_cm: Option<f64>,
    pub mean_of_session_maes_cm: Option<f64>,
    pub rnle_sensitivity_pct: Option<f64>,
}

/// The report.json payload: per-session entries plus pooled rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub sessions: Vec<SessionReport>,
    pub pooled: PooledStats,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(args) => run_simulate(args),
        Command::DetectKvlu(args) => run_pipeline(Stage::DetectKvlu, args),
        Command::EstimateLvl(args) => run_pipeline(Stage::EstimateLvl, args),
        Command::Evaluate(args) => run_pipeline(Stage::Evaluate, args),
        Command::Report(args) => run_report(args),
        Command::All(args) => run_pipeline(Stage::All, args),
    }
}

fn run_simulate(args: SimulateArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading simulator config {}", path.display()))?;
            serde_json::from_str::<SimConfig>(&text)
                .with_context(|| format!("parsing simulator config {}", path.display()))?
        }
        None => SimConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let output = sim::simulate(&config)?;
    let (_, manifest_path) = sim::write_session(&output, &args.out)?;
    log::info!(
        "simulate: subject `{}`, seed {}, wrote {}",
        config.subject_id,
        config.seed,
        manifest_path.display()
    );
    println!("{}", manifest_path.display());
    Ok(())
}

/// Applies the flag > config file > default precedence and records which
/// flags overrode anything.
fn effective_config(args: &PipelineArgs) -> Result<(PipelineConfig, Vec<String>)> {
    let mut config = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading pipeline config {}", path.display()))?;
            serde_json::from_str::<PipelineConfig>(&text)
                .with_context(|| format!("parsing pipeline config {}", path.display()))?
        }
        None => PipelineConfig::default(),
    };
    let mut overrides = Vec::new();
    if let Some(deg) = args.angle_threshold {
        config.threshold = ThresholdPolicy::Fixed { threshold_deg: deg };
        overrides.push(format!("--angle-threshold {deg}"));
    }
    if let Some(window) = args.smooth_window {
        config.smooth_window = window;
        overrides.push(format!("--smooth-window {window}"));
    }
    if let Some(slope) = args.model_a {
        config.model.slope_cm_per_pa = slope;
        overrides.push(format!("--model-a {slope}"));
    }
    if let Some(intercept) = args.model_b {
        config.model.intercept_cm = intercept;
        overrides.push(format!("--model-b {intercept}"));
    }
    if let Some(ratio) = args.ratio {
        overrides.push(format!("--ratio {ratio}"));
    }
    Ok((config, overrides))
}

fn run_pipeline(stage: Stage, args: PipelineArgs) -> Result<()> {
    let (config, overrides) = effective_config(&args)?;
    let multi = args.manifest.len() > 1;
    let sessions = process_batch(stage, &args, &config, &overrides)?;
    if stage.writes_report() && multi {
        let report = Report {
            pooled: pool_sessions(&sessions),
            sessions,
        };
        write_report(&args.out.join("report.json"), &report)?;
    }
    Ok(())
}

/// Runs every manifest through `process_one`, at most `--jobs` at a time,
/// returning the session reports in manifest order.
fn process_batch(
    stage: Stage,
    args: &PipelineArgs,
    config: &PipelineConfig,
    overrides: &[String],
) -> Result<Vec<SessionReport>> {
    let n = args.manifest.len();
    let multi = n > 1;
    let dirs: Vec<PathBuf> = args
        .manifest
        .iter()
        .enumerate()
        .map(|(i, path)| {
            if multi {
                let stem = path
                    .parent()
                    .and_then(|p| p.file_name())
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "session".to_string());
                args.out.join(format!("{:02}_{stem}", i + 1))
            } else {
                args.out.clone()
            }
        })
        .collect();

    let jobs = args.jobs.clamp(1, n);
    let slots: Vec<Mutex<Option<Result<SessionReport>>>> =
        (0..n).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let outcome = process_one(stage, &args.manifest[i], &dirs[i], config, args.ratio, overrides);
                *slots[i].lock().unwrap() = Some(outcome);
            });
        }
    });

    slots
        .into_iter()
        .zip(&args.manifest)
        .map(|(slot, path)| {
            slot.into_inner()
                .unwrap()
                .expect("every session slot is filled")
                .with_context(|| format!("processing {}", path.display()))
        })
        .collect()
}

/// Loads one session, runs the pipeline, writes this stage's artifacts,
/// and summarizes the outcome.
fn process_one(
    stage: Stage,
    manifest_path: &Path,
    dir: &Path,
    config: &PipelineConfig,
    ratio: Option<f64>,
    overrides: &[String],
) -> Result<SessionReport> {
    let manifest = SessionManifest::load(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut session = ingest::load_session(&manifest, base)?;
    if let Some(ratio) = ratio {
        session.anthropometry.wrist_ratio = ratio;
    }
    let provenance = Provenance {
        manifest: manifest_path.to_path_buf(),
        body_height_cm: session.anthropometry.body_height_cm,
        wrist_ratio: session.anthropometry.wrist_ratio,
        config: config.clone(),
        overrides: overrides.to_vec(),
    };
    log::info!(
        "effective configuration for {}: {}",
        manifest_path.display(),
        serde_json::to_string(&provenance)?
    );

    let subject_id = session.subject_id.clone();
    let truth = session.truth.clone();
    let levels = manifest.levels.clone();
    let output = pipeline::run(session, config)?;

    fs::create_dir_all(dir)?;
    write_json(&dir.join("provenance.json"), &provenance)?;
    if stage.writes_anchors() {
        write_anchor_artifacts(dir, &output)?;
    }
    if stage.writes_rates() {
        let file = artifact(dir, "detection_rates.csv")?;
        eval::write_detection_rates_csv(file, &output.detection)?;
    }
    if stage.writes_traces() {
        write_trace_artifacts(dir, &output)?;
    }

    let report = summarize_session(subject_id, provenance, &output, truth.as_ref(), &levels);
    if stage.writes_report() {
        write_compare_artifacts(dir, &output, truth.as_ref())?;
        let single = Report {
            pooled: pool_sessions(std::slice::from_ref(&report)),
            sessions: vec![report.clone()],
        };
        write_report(&dir.join("report.json"), &single)?;
    }
    Ok(report)
}

fn artifact(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    log::info!("writing {}", path.display());
    Ok(BufWriter::new(file))
}

fn write_anchor_artifacts(dir: &Path, output: &PipelineOutput) -> Result<()> {
    let mut anchors: Vec<_> = output
        .wrists
        .iter()
        .flat_map(|w| w.anchors.iter().copied())
        .collect();
    anchors.sort_by(|a, b| a.t.cmp(&b.t).then(a.wrist_side.cmp(&b.wrist_side)));
    ingest::write_kvlu_csv(artifact(dir, "anchors.csv")?, &anchors)?;

    let mut intervals: Vec<IntervalLabel> = Vec::new();
    intervals.extend(output.gait.swings.iter().cloned());
    intervals.extend(output.gait.foot_flats.iter().cloned());
    intervals.extend(output.gait.activity.iter().cloned());
    intervals.sort_by(|a, b| {
        a.interval
            .start()
            .cmp(&b.interval.start())
            .then(a.interval.end().cmp(&b.interval.end()))
    });
    ingest::write_intervals_csv(artifact(dir, "gait_intervals.csv")?, &intervals)?;
    Ok(())
}

fn write_trace_artifacts(dir: &Path, output: &PipelineOutput) -> Result<()> {
    for wrist in &output.wrists {
        for (label, trace) in [
            ("raw", &wrist.raw),
            ("realtime", &wrist.realtime.trace),
            ("corrected", &wrist.corrected),
        ] {
            let name = format!("lvl_{}_{label}.csv", wrist.side);
            ingest::write_lvl_trace_csv(artifact(dir, &name)?, trace)?;
        }
    }
    Ok(())
}

fn write_compare_artifacts(
    dir: &Path,
    output: &PipelineOutput,
    truth: Option<&TruthStream>,
) -> Result<()> {
    for wrist in &output.wrists {
        let name = format!("trace_compare_{}.csv", wrist.side);
        eval::write_trace_compare_csv(
            artifact(dir, &name)?,
            &wrist.raw,
            &wrist.realtime.trace,
            &wrist.corrected,
            truth,
        )?;
    }
    Ok(())
}

fn summarize_session(
    subject_id: String,
    provenance: Provenance,
    output: &PipelineOutput,
    truth: Option<&TruthStream>,
    levels: &[LevelAnnotation],
) -> SessionReport {
    let wrists: Vec<WristReport> = output
        .wrists
        .iter()
        .map(|w| {
            let against_levels = |trace| {
                (!levels.is_empty())
                    .then(|| eval::score_against_levels(&lvl::wrist_height_as_lvl(trace), levels))
            };
            WristReport {
                side: w.side,
                anchors_detected: w.anchors.len(),
                anchors_accepted: w.realtime.accepted_anchors.len(),
                anchors_skipped: w.realtime.skipped_anchors.len(),
                corrected_vs_truth: truth.map(|t| eval::score_against_truth(&w.corrected, t)),
                realtime_vs_truth: truth.map(|t| eval::score_against_truth(&w.realtime.trace, t)),
                raw_vs_truth: truth.map(|t| eval::score_against_truth(&w.raw, t)),
                corrected_vs_levels: against_levels(&w.corrected),
                raw_vs_levels: against_levels(&w.raw),
            }
        })
        .collect();

    let calibrated_mae = session_calibrated_mae(&wrists);
    SessionReport {
        subject_id,
        provenance,
        threshold: output.threshold,
        threshold_provenance: output.threshold_provenance,
        wrists,
        detection: output.detection.clone(),
        rnle_sensitivity_pct: calibrated_mae.map(eval::rnle_sensitivity_pct),
        warnings: output.warnings.clone(),
    }
}

/// The session's calibrated MAE: level-scored when annotations exist,
/// truth-scored otherwise, pooled over both wrists.
fn session_calibrated_mae(wrists: &[WristReport]) -> Option<f64> {
    let levels: Vec<&ErrorReport> = wrists
        .iter()
        .filter_map(|w| w.corrected_vs_levels.as_ref())
        .collect();
    let basis: Vec<&ErrorReport> = if levels.is_empty() {
        wrists
            .iter()
            .filter_map(|w| w.corrected_vs_truth.as_ref())
            .collect()
    } else {
        levels
    };
    merge_refs(&basis).and_then(|r| r.overall.mae())
}

fn merge_refs(reports: &[&ErrorReport]) -> Option<ErrorReport> {
    if reports.is_empty() {
        return None;
    }
    let mut merged = ErrorReport::default();
    for r in reports {
        merged.merge(r);
    }
    Some(merged)
}

fn pool_sessions(sessions: &[SessionReport]) -> PooledStats {
    let collect = |pick: fn(&WristReport) -> Option<&ErrorReport>| -> Option<ErrorReport> {
        let refs: Vec<&ErrorReport> = sessions
            .iter()
            .flat_map(|s| s.wrists.iter())
            .filter_map(pick)
            .collect();
        merge_refs(&refs)
    };
    let corrected_vs_levels = collect(|w| w.corrected_vs_levels.as_ref());
    let corrected_vs_truth = collect(|w| w.corrected_vs_truth.as_ref());
    let pooled_mae_cm = corrected_vs_levels
        .as_ref()
        .or(corrected_vs_truth.as_ref())
        .and_then(|r| r.overall.mae());
    let session_maes: Vec<f64> = sessions
        .iter()
        .filter_map(|s| session_calibrated_mae(&s.wrists))
        .collect();
    PooledStats {
        raw_vs_levels: collect(|w| w.raw_vs_levels.as_ref()),
        realtime_vs_truth: collect(|w| w.realtime_vs_truth.as_ref()),
        raw_vs_truth: collect(|w| w.raw_vs_truth.as_ref()),
        corrected_vs_levels,
        corrected_vs_truth,
        pooled_mae_cm,
        mean_of_session_maes_cm: (!session_maes.is_empty())
            .then(|| session_maes.iter().sum::<f64>() / session_maes.len() as f64),
        rnle_sensitivity_pct: pooled_mae_cm.map(eval::rnle_sensitivity_pct),
    }
}

fn run_report(args: ReportArgs) -> Result<()> {
    let mut sessions = Vec::new();
    for path in &args.reports {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading report {}", path.display()))?;
        let report: Report = serde_json::from_str(&text)
            .with_context(|| format!("parsing report {}", path.display()))?;
        sessions.extend(report.sessions);
    }
    let report = Report {
        pooled: pool_sessions(&sessions),
        sessions,
    };
    write_report(&args.out.join("report.json"), &report)
}

fn write_report(path: &Path, report: &Report) -> Result<()> {
    write_json(path, report)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut file = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut file, value)?;
    file.write_all(b"\n")?;
    log::info!("writing {}", path.display());
    Ok(())
}
