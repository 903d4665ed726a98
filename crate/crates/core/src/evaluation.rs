//! Trajectory and event metrics.

use std::collections::{HashMap, VecDeque};
use std::fmt::Write as _;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::beam_filter::{FilterError, TrajectoryRecord, Tracker};
use crate::simulator::{EventKind, GroundTruth};
use crate::state_model::{FrameIndex, Mode, ModelParams};
use crate::transition_gen::FrameObservations;

pub const DEFAULT_THRESHOLDS: [f64; 5] = [0.5, 1.0, 2.0, 4.0, 8.0];
pub const DEFAULT_WINDOW: u64 = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("prediction for frame {frame} lies outside the ground-truth range")]
    RangeMismatch { frame: FrameIndex },
    #[error("two predictions for frame {frame}")]
    DuplicateFrame { frame: FrameIndex },
}

/// Which ground-truth frames count towards Accuracy@d.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccuracyOptions {
    /// Skip frames where the ball is out of play.
    pub exclude_out_of_play: bool,
    /// Skip frames without a ball detection.
    pub exclude_occluded: bool,
}

impl Default for AccuracyOptions {
    fn default() -> Self {
        Self { exclude_out_of_play: true, exclude_occluded: false }
    }
}

fn index_predictions<'a>(
    pred: &'a [TrajectoryRecord],
    gt: &GroundTruth,
) -> Result<HashMap<FrameIndex, &'a TrajectoryRecord>, EvalError> {
    let (first, last) = match (gt.frames.first(), gt.frames.last()) {
        (Some(a), Some(b)) => (a.frame, b.frame),
        _ => (1, 0),
    };
    let mut map = HashMap::with_capacity(pred.len());
    for r in pred {
        if r.frame < first || r.frame > last {
            return Err(EvalError::RangeMismatch { frame: r.frame });
        }
        if map.insert(r.frame, r).is_some() {
            return Err(EvalError::DuplicateFrame { frame: r.frame });
        }
    }
    Ok(map)
}

/// Accuracy at several thresholds in one pass.
pub fn accuracy_curve(
    pred: &[TrajectoryRecord],
    gt: &GroundTruth,
    thresholds: &[f64],
    opts: AccuracyOptions,
) -> Result<Vec<f64>, EvalError> {
    let map = index_predictions(pred, gt)?;
    let mut hits = vec![0usize; thresholds.len()];
    let mut total = 0usize;
    for g in &gt.frames {
        if (opts.exclude_out_of_play && g.mode == Mode::O) || (opts.exclude_occluded && !g.visible) {
            continue;
        }
        total += 1;
        let Some(p) = map.get(&g.frame) else { continue };
        let err = (p.position - g.position).norm();
        for (h, d) in hits.iter_mut().zip(thresholds) {
            if err <= *d {
                *h += 1;
            }
        }
    }
    Ok(hits.into_iter().map(|h| if total == 0 { 1.0 } else { h as f64 / total as f64 }).collect())
}

/// Fraction of ground-truth frames whose prediction is within `d` meters.
/// Frames without a prediction count as misses; out-of-play frames are
/// skipped.
pub fn accuracy_at(pred: &[TrajectoryRecord], gt: &GroundTruth, d: f64) -> Result<f64, EvalError> {
    Ok(accuracy_curve(pred, gt, &[d], AccuracyOptions::default())?[0])
}

/// Number of one-to-one matches between `pred` and `gt` within `±window`,
/// taking predictions in frame order, each claiming the earliest free match.
pub fn match_events(pred: &[FrameIndex], gt: &[FrameIndex], window: u64) -> usize {
    let mut pred = pred.to_vec();
    let mut gt = gt.to_vec();
    pred.sort_unstable();
    gt.sort_unstable();
    let mut next = 0usize;
    let mut matched = 0;
    for p in pred {
        // Ground-truth events too early for this prediction are too early for
        // every later one as well.
        while next < gt.len() && gt[next] + window < p {
            next += 1;
        }
        if next < gt.len() && gt[next] <= p + window {
            matched += 1;
            next += 1;
        }
    }
    matched
}

/// F1 of event detection with a `±window` frame tolerance; 1 when both lists
/// are empty.
pub fn event_f1(pred: &[FrameIndex], gt: &[FrameIndex], window: u64) -> f64 {
    if pred.is_empty() && gt.is_empty() {
        return 1.0;
    }
    let tp = match_events(pred, gt, window) as f64;
    if tp == 0.0 {
        return 0.0;
    }
    let p = tp / pred.len() as f64;
    let r = tp / gt.len() as f64;
    2.0 * p * r / (p + r)
}

/// Kick frames (first W after P) and out-of-pitch frames (first O after J).
pub fn extract_pred_events(pred: &[TrajectoryRecord]) -> (Vec<FrameIndex>, Vec<FrameIndex>) {
    let mut kicks = Vec::new();
    let mut oops = Vec::new();
    for w in pred.windows(2) {
        match (w[0].mode, w[1].mode) {
            (Mode::P, Mode::W) => kicks.push(w[1].frame),
            (Mode::J, Mode::O) => oops.push(w[1].frame),
            _ => {}
        }
    }
    (kicks, oops)
}

/// Source of wall-clock time, injectable for tests.
pub trait Clock {
    fn now(&mut self) -> Duration;
}

pub struct SystemClock(Instant);

impl SystemClock {
    pub fn new() -> Self {
        Self(Instant::now())
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now(&mut self) -> Duration {
        self.0.elapsed()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Throughput {
    pub fps: f64,
    /// Frames between a frame's arrival and its finalized estimate.
    pub latency_frames: u64,
    /// Mean wall time from starting on a frame to finalizing it.
    pub mean_latency_seconds: f64,
}

/// Frames of delay before a frame's estimate is final with lag `lag`. Lag 0
/// still needs the frame itself, so the delay is never below one.
pub fn latency_frames(lag: usize) -> u64 {
    lag.max(1) as u64
}

/// Runs the filter over `frames` and times it with `clock`.
pub fn measure_throughput_latency(
    frames: &[FrameObservations],
    params: &ModelParams,
    clock: &mut dyn Clock,
) -> Result<Throughput, FilterError> {
    let mut tracker = Tracker::new(*params, &[params.lag]);
    let mut arrivals: VecDeque<(FrameIndex, Duration)> = VecDeque::new();
    let mut latency_sum = 0.0;
    let mut finalized = 0usize;
    let start = clock.now();
    for obs in frames {
        arrivals.push_back((obs.frame, clock.now()));
        let out = tracker.process(obs)?;
        let done = clock.now();
        for rec in &out[0] {
            while let Some(&(f, at)) = arrivals.front() {
                if f > rec.frame {
                    break;
                }
                arrivals.pop_front();
                if f == rec.frame {
                    latency_sum += (done - at).as_secs_f64();
                    finalized += 1;
                }
            }
        }
    }
    let elapsed = (clock.now() - start).as_secs_f64();
    Ok(Throughput {
        fps: if elapsed > 0.0 { frames.len() as f64 / elapsed } else { f64::INFINITY },
        latency_frames: latency_frames(params.lag),
        mean_latency_seconds: if finalized > 0 { latency_sum / finalized as f64 } else { 0.0 },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `(threshold meters, fraction)` pairs, ascending thresholds.
    pub accuracy_at: Vec<(f64, f64)>,
    pub f1_kick: f64,
    pub f1_oop: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub throughput_fps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latency_frames: Option<u64>,
}

impl EvalReport {
    pub fn accuracy(&self, d: f64) -> Option<f64> {
        self.accuracy_at.iter().find(|(t, _)| *t == d).map(|(_, a)| *a)
    }

    /// `key value` lines.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        for (d, a) in &self.accuracy_at {
            let _ = writeln!(s, "accuracy@{d} {a:.4}");
        }
        let _ = writeln!(s, "f1_kick {:.4}", self.f1_kick);
        let _ = writeln!(s, "f1_oop {:.4}", self.f1_oop);
        if let Some(fps) = self.throughput_fps {
            let _ = writeln!(s, "throughput_fps {fps:.1}");
        }
        if let Some(l) = self.latency_frames {
            let _ = writeln!(s, "latency_frames {l}");
        }
        s
    }
}

pub fn evaluate(
    pred: &[TrajectoryRecord],
    gt: &GroundTruth,
    window: u64,
    opts: AccuracyOptions,
) -> Result<EvalReport, EvalError> {
    let acc = accuracy_curve(pred, gt, &DEFAULT_THRESHOLDS, opts)?;
    let (kicks, oops) = extract_pred_events(pred);
    Ok(EvalReport {
        accuracy_at: DEFAULT_THRESHOLDS.iter().copied().zip(acc).collect(),
        f1_kick: event_f1(&kicks, &gt.events(EventKind::Kick), window),
        f1_oop: event_f1(&oops, &gt.events(EventKind::OutOfPitch), window),
        throughput_fps: None,
        latency_frames: None,
    })
}
