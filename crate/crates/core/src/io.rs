//! Line-delimited JSON formats and the TOML configuration file.
//!
//! Frame stream, one object per line:
//! `{"frame":0,"detections":[[u,v]],"players":[[x,y]],"calib":{"K":[..9],"R":[..9],"T":[..3]}}`.
//! `calib` may be left out on any frame but the first and then means
//! "unchanged".
//!
//! Trajectory: `{"frame":0,"x":..,"y":..,"z":..,"mode":"J","log_weight":..,"finalized":true}`.
//!
//! Ground truth: `{"frame":0,"x":..,"y":..,"z":..,"mode":"P","visible":false,"events":["kick"]}`.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::beam_filter::TrajectoryRecord;
use crate::dynamics::PhysicsParams;
use crate::geometry::{CalibrationRecord, CameraCalibration, PitchGeometry, Pixel, Vec3};
use crate::simulator::{EventKind, GroundTruth, GroundTruthFrame, SimConfig, SimError};
use crate::state_model::{FrameIndex, Mode, ModelParams};
use crate::transition_gen::{FrameObservations, PitchPoint};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl IoError {
    pub fn line(&self) -> Option<usize> {
        match self {
            IoError::Parse { line, .. } => Some(*line),
            IoError::Io(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    pub frame: FrameIndex,
    #[serde(default)]
    pub detections: Vec<[f64; 2]>,
    #[serde(default)]
    pub players: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calib: Option<CalibrationRecord>,
}

/// Parses a frame stream, filling in omitted calibrations and checking that
/// frame indices advance by one.
pub struct FrameReader<R> {
    lines: std::io::Lines<R>,
    line: usize,
    calib: Option<CameraCalibration>,
    last_frame: Option<FrameIndex>,
}

impl<R: BufRead> FrameReader<R> {
    pub fn new(reader: R) -> Self {
        Self { lines: reader.lines(), line: 0, calib: None, last_frame: None }
    }

    fn parse(&mut self, text: &str) -> Result<FrameObservations, IoError> {
        let line = self.line;
        let err = |message: String| IoError::Parse { line, message };
        let rec: FrameRecord = serde_json::from_str(text).map_err(|e| err(e.to_string()))?;
        if let Some(prev) = self.last_frame {
            if rec.frame != prev + 1 {
                return Err(err(format!("frame {} does not follow frame {prev}", rec.frame)));
            }
        }
        if let Some(c) = rec.calib {
            self.calib = Some(CameraCalibration::try_from(c).map_err(|e| err(e.to_string()))?);
        }
        let calib = self.calib.clone().ok_or_else(|| err("first frame carries no calibration".into()))?;
        let finite = |v: &[f64; 2]| v.iter().all(|x| x.is_finite());
        if !rec.detections.iter().all(finite) || !rec.players.iter().all(finite) {
            return Err(err("non-finite coordinate".into()));
        }
        self.last_frame = Some(rec.frame);
        Ok(FrameObservations {
            frame: rec.frame,
            detections: rec.detections.iter().map(|d| Pixel::new(d[0], d[1])).collect(),
            players: rec.players.iter().map(|p| PitchPoint::new(p[0], p[1])).collect(),
            calib,
        })
    }
}

impl<R: BufRead> Iterator for FrameReader<R> {
    type Item = Result<FrameObservations, IoError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let text = match self.lines.next()? {
                Ok(t) => t,
                Err(e) => return Some(Err(e.into())),
            };
            self.line += 1;
            if text.trim().is_empty() {
                continue;
            }
            return Some(self.parse(&text));
        }
    }
}

/// Writes a frame stream, leaving out calibrations equal to the previous one.
pub struct FrameWriter<W> {
    inner: W,
    last: Option<CalibrationRecord>,
}

impl<W: Write> FrameWriter<W> {
    pub fn new(inner: W) -> Self {
        Self { inner, last: None }
    }

    pub fn write(&mut self, obs: &FrameObservations) -> Result<(), IoError> {
        let calib = CalibrationRecord::from(&obs.calib);
        let rec = FrameRecord {
            frame: obs.frame,
            detections: obs.detections.iter().map(|d| [d.x, d.y]).collect(),
            players: obs.players.iter().map(|p| [p.x, p.y]).collect(),
            calib: (self.last != Some(calib)).then_some(calib),
        };
        self.last = Some(calib);
        write_json_line(&mut self.inner, &rec)
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

fn write_json_line<W: Write, T: Serialize>(w: &mut W, value: &T) -> Result<(), IoError> {
    serde_json::to_writer(&mut *w, value).map_err(std::io::Error::from)?;
    w.write_all(b"\n")?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrajectoryLine {
    frame: FrameIndex,
    x: f64,
    y: f64,
    z: f64,
    mode: Mode,
    log_weight: f64,
    finalized: bool,
}

pub fn write_trajectory_record<W: Write>(w: &mut W, rec: &TrajectoryRecord) -> Result<(), IoError> {
    let line = TrajectoryLine {
        frame: rec.frame,
        x: rec.position.x,
        y: rec.position.y,
        z: rec.position.z,
        mode: rec.mode,
        log_weight: rec.log_weight,
        finalized: rec.finalized,
    };
    write_json_line(w, &line)
}

pub fn read_trajectory<R: BufRead>(reader: R) -> Result<Vec<TrajectoryRecord>, IoError> {
    read_lines(reader, |l: TrajectoryLine| TrajectoryRecord {
        frame: l.frame,
        position: Vec3::new(l.x, l.y, l.z),
        mode: l.mode,
        log_weight: l.log_weight,
        finalized: l.finalized,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GroundTruthLine {
    frame: FrameIndex,
    x: f64,
    y: f64,
    z: f64,
    mode: Mode,
    visible: bool,
    #[serde(default)]
    events: Vec<EventKind>,
}

pub fn write_ground_truth_frame<W: Write>(w: &mut W, f: &GroundTruthFrame) -> Result<(), IoError> {
    let line = GroundTruthLine {
        frame: f.frame,
        x: f.position.x,
        y: f.position.y,
        z: f.position.z,
        mode: f.mode,
        visible: f.visible,
        events: f.events.clone(),
    };
    write_json_line(w, &line)
}

pub fn read_ground_truth<R: BufRead>(reader: R) -> Result<GroundTruth, IoError> {
    let frames = read_lines(reader, |l: GroundTruthLine| GroundTruthFrame {
        frame: l.frame,
        position: Vec3::new(l.x, l.y, l.z),
        mode: l.mode,
        visible: l.visible,
        events: l.events,
    })?;
    Ok(GroundTruth { frames })
}

fn read_lines<R: BufRead, L: for<'de> Deserialize<'de>, T>(reader: R, f: impl Fn(L) -> T) -> Result<Vec<T>, IoError> {
    let mut out = Vec::new();
    for (i, text) in reader.lines().enumerate() {
        let text = text?;
        if text.trim().is_empty() {
            continue;
        }
        let l: L = serde_json::from_str(&text).map_err(|e| IoError::Parse { line: i + 1, message: e.to_string() })?;
        out.push(f(l));
    }
    Ok(out)
}

/// Writes the observations as a frame stream and the ground truth as a
/// sidecar, one line per frame each.
pub fn replay_to_stream<W1: Write, W2: Write>(
    gt: &GroundTruth,
    obs: &[FrameObservations],
    stream: W1,
    sidecar: &mut W2,
) -> Result<W1, SimError> {
    if gt.len() != obs.len() {
        return Err(SimError::LengthMismatch { gt: gt.len(), obs: obs.len() });
    }
    let mut writer = FrameWriter::new(stream);
    for (g, o) in gt.frames.iter().zip(obs) {
        writer.write(o).map_err(into_sim)?;
        write_ground_truth_frame(sidecar, g).map_err(into_sim)?;
    }
    Ok(writer.into_inner())
}

fn into_sim(e: IoError) -> SimError {
    match e {
        IoError::Io(e) => SimError::Io(e),
        IoError::Parse { message, .. } => SimError::Io(std::io::Error::other(message)),
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    Invalid(String),
}

/// Contents of a configuration file. Every table and key is optional and
/// falls back to the defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub model: ModelParams,
    pub physics: PhysicsParams,
    pub pitch: PitchGeometry,
    pub sim: SimConfig,
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Config = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.display().to_string(), source })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model_params().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.sim_config().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    /// Filter parameters with the shared physics and pitch filled in.
    pub fn model_params(&self) -> ModelParams {
        ModelParams { physics: self.physics, pitch: self.pitch, ..self.model }
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig { physics: self.physics, pitch: self.pitch, ..self.sim.clone() }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }
}
