//! Command implementations behind the `monoball` binary.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::sync::mpsc::sync_channel;
use std::thread;
use std::time::Instant;

use anyhow::{Context, Result};
use monoball::beam_filter::{FilterError, TrajectoryRecord, Tracker};
use monoball::evaluation::{evaluate, latency_frames, AccuracyOptions, EvalError, EvalReport, DEFAULT_THRESHOLDS};
use monoball::io::{write_ground_truth_frame, write_trajectory_record, ConfigError, FrameReader, FrameWriter, IoError};
use monoball::simulator::{GroundTruth, SimConfig, SimError, Simulation};
use monoball::state_model::{ModelError, ModelParams};
use monoball::transition_gen::FrameObservations;

/// Frames buffered between pipeline stages.
const QUEUE: usize = 64;

pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_EXTINCT: u8 = 3;

/// Exit status for an error returned by one of the commands.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<IoError>() {
            if e.line().is_some() {
                return EXIT_INPUT;
            }
        }
        if cause.is::<ConfigError>() || cause.is::<EvalError>() || cause.is::<ModelError>() {
            return EXIT_INPUT;
        }
        if let Some(SimError::ConfigInvalid(_)) = cause.downcast_ref::<SimError>() {
            return EXIT_INPUT;
        }
        if let Some(FilterError::EmptyFrame { .. } | FilterError::BeamExtinct { .. }) = cause.downcast_ref() {
            return EXIT_EXTINCT;
        }
    }
    EXIT_FAILURE
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrackSummary {
    pub frames: u64,
    pub records: u64,
    /// Frames where the beam died and the filter started over.
    pub reseeds: usize,
}

/// Streams `input` through the filter at `params.lag` and writes one record
/// per frame to `output`.
///
/// Reading, filtering and writing run on their own threads joined by bounded
/// queues, so memory does not grow with the length of the stream. Records are
/// written as soon as they are final; the last `lag` frames follow at the end
/// of the stream, marked soft.
pub fn track<R, W>(input: R, mut output: W, params: ModelParams) -> Result<TrackSummary>
where
    R: BufRead + Send,
    W: Write,
{
    params.validate()?;
    let (frame_tx, frame_rx) = sync_channel::<Result<FrameObservations, IoError>>(QUEUE);
    let (rec_tx, rec_rx) = sync_channel::<Vec<TrajectoryRecord>>(QUEUE);
    thread::scope(|s| {
        s.spawn(move || {
            for item in FrameReader::new(input) {
                let failed = item.is_err();
                if frame_tx.send(item).is_err() || failed {
                    break;
                }
            }
        });
        let filter = s.spawn(move || -> Result<(u64, usize)> {
            let mut tracker = Tracker::new(params, &[params.lag]);
            let mut frames = 0;
            for item in frame_rx {
                let obs = item?;
                let mut out = tracker.process(&obs)?;
                frames += 1;
                if rec_tx.send(out.swap_remove(0)).is_err() {
                    return Ok((frames, tracker.discontinuities().len()));
                }
            }
            let _ = rec_tx.send(tracker.finish().swap_remove(0));
            Ok((frames, tracker.discontinuities().len()))
        });
        let mut records = 0;
        let mut written = Ok(());
        for batch in rec_rx {
            written = batch.iter().try_for_each(|r| write_trajectory_record(&mut output, r));
            if written.is_err() {
                break;
            }
            records += batch.len() as u64;
        }
        let (frames, reseeds) = filter.join().expect("filter thread panicked")?;
        written?;
        output.flush()?;
        Ok(TrackSummary { frames, records, reseeds })
    })
}

/// Runs the simulator, writing the frame stream and the ground-truth sidecar
/// one frame at a time. Returns the number of frames.
pub fn simulate_to<W1: Write, W2: Write>(cfg: &SimConfig, stream: W1, mut sidecar: W2) -> Result<u64> {
    let mut writer = FrameWriter::new(stream);
    let mut n = 0;
    for (gt, obs) in Simulation::new(cfg.clone())? {
        writer.write(&obs)?;
        write_ground_truth_frame(&mut sidecar, &gt)?;
        n += 1;
    }
    writer.into_inner().flush()?;
    sidecar.flush()?;
    Ok(n)
}

/// Filters a clip already in memory, like [`track`] without the threads.
pub fn track_frames(frames: &[FrameObservations], params: ModelParams) -> Result<Vec<TrajectoryRecord>> {
    let mut tracker = Tracker::new(params, &[params.lag]);
    let mut out = Vec::with_capacity(frames.len());
    for obs in frames {
        out.append(&mut tracker.process(obs)?[0]);
    }
    out.append(&mut tracker.finish()[0]);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub lag: usize,
    pub report: EvalReport,
}

/// Tracks the clip once per lag and evaluates each run. With `timing` the
/// reports carry the measured throughput.
pub fn sweep(
    frames: &[FrameObservations],
    gt: &GroundTruth,
    params: ModelParams,
    lags: &[usize],
    window: u64,
    timing: bool,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(lags.len());
    for &lag in lags {
        let p = ModelParams { lag, ..params };
        p.validate()?;
        let start = Instant::now();
        let pred = track_frames(frames, p).with_context(|| format!("tracking at lag {lag}"))?;
        let elapsed = start.elapsed().as_secs_f64();
        let mut report = evaluate(&pred, gt, window, AccuracyOptions::default())?;
        report.latency_frames = Some(latency_frames(lag));
        if timing {
            report.throughput_fps = Some(frames.len() as f64 / elapsed.max(f64::MIN_POSITIVE));
        }
        log::info!("lag {lag}: accuracy@0.5 {:.4}", report.accuracy(0.5).unwrap_or(0.0));
        rows.push(SweepRow { lag, report });
    }
    Ok(rows)
}

fn sweep_columns(rows: &[SweepRow]) -> Vec<String> {
    let mut cols = vec!["lag".to_string()];
    cols.extend(DEFAULT_THRESHOLDS.iter().map(|d| format!("acc@{d}")));
    cols.extend(["f1_kick", "f1_oop", "latency_frames"].map(String::from));
    if rows.iter().any(|r| r.report.throughput_fps.is_some()) {
        cols.push("fps".into());
    }
    cols
}

fn sweep_cells(row: &SweepRow, with_fps: bool) -> Vec<String> {
    let r = &row.report;
    let mut cells = vec![row.lag.to_string()];
    cells.extend(r.accuracy_at.iter().map(|(_, a)| format!("{a:.4}")));
    cells.push(format!("{:.4}", r.f1_kick));
    cells.push(format!("{:.4}", r.f1_oop));
    cells.push(r.latency_frames.map_or(String::new(), |l| l.to_string()));
    if with_fps {
        cells.push(r.throughput_fps.map_or(String::new(), |f| format!("{f:.1}")));
    }
    cells
}

/// One row per lag, columns aligned.
pub fn sweep_table(rows: &[SweepRow]) -> String {
    let cols = sweep_columns(rows);
    let with_fps = cols.last().is_some_and(|c| c == "fps");
    let body: Vec<Vec<String>> = rows.iter().map(|r| sweep_cells(r, with_fps)).collect();
    let width: Vec<usize> = (0..cols.len())
        .map(|i| body.iter().map(|r| r[i].len()).chain([cols[i].len()]).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for line in std::iter::once(&cols).chain(&body) {
        let cells: Vec<String> = line.iter().zip(&width).map(|(c, w)| format!("{c:>w$}")).collect();
        let _ = writeln!(out, "{}", cells.join("  "));
    }
    out
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let cols = sweep_columns(rows);
    let with_fps = cols.last().is_some_and(|c| c == "fps");
    let mut out = cols.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&sweep_cells(r, with_fps).join(","));
        out.push('\n');
    }
    out
}
