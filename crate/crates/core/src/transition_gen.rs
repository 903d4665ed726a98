//! Descendant generation and scoring.
//!
//! Every retained hypothesis expands into children for the next frame, one
//! family of children per edge of the mode graph. A child's score increment
//! is the transition log-probability plus, for flight children, the dynamics
//! and observation terms.
//!
//! Generation is written against [`CandidateSink`] so that the beam can reject
//! children below its current admission floor without materializing them.
//! [`generate_all`] uses a sink with no floor and returns every candidate.

use std::f64::consts::PI;

use nalgebra::Vector2;
use thiserror::Error;

use crate::dynamics::{self, DynamicsError, KinematicState};
use crate::geometry::{self, CameraCalibration, Pixel, Vec3};
use crate::state_model::{FrameIndex, Hypothesis, LatentState, Mode, ModelParams};

/// Player location on the pitch plane, meters.
pub type PitchPoint = Vector2<f64>;

/// Gaussian log terms are clamped here (the `exp` underflow boundary) so an
/// implausible match stays finite and ordered instead of becoming −∞.
pub const LOG_DENSITY_FLOOR: f64 = -745.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransitionError {
    #[error("edge {from}->{to} cannot be generated by inheritance")]
    IllegalEdge { from: Mode, to: Mode },
    #[error("hypothesis is in mode {found}, expected {expected}")]
    WrongMode { expected: Mode, found: Mode },
    #[error("kick frame {kick_frame} is after the current frame {now}")]
    KickInFuture { kick_frame: FrameIndex, now: FrameIndex },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// Everything observed in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameObservations {
    pub frame: FrameIndex,
    /// Ball detections, pixels.
    pub detections: Vec<Pixel>,
    pub players: Vec<PitchPoint>,
    pub calib: CameraCalibration,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredCandidate {
    /// The child; `log_weight` is already the parent's plus `delta_logl` and
    /// `parent` is left for the beam to fill in.
    pub hypothesis: Hypothesis,
    pub delta_logl: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct RaySegment {
    start: usize,
    count: usize,
    ground: Vec3,
    /// Unit vector from the ground hit toward the camera.
    up: Vec3,
}

/// Candidate ball centers along every detection's viewing ray, computed once
/// per frame and shared by all hypotheses.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RayPositions {
    points: Vec<Vec3>,
    segments: Vec<RaySegment>,
    step: f64,
}

impl RayPositions {
    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Number of detections that produced samples.
    pub fn ray_count(&self) -> usize {
        self.segments.len()
    }
}

pub fn gen_ray_positions(obs: &FrameObservations, params: &ModelParams) -> RayPositions {
    let mut out = RayPositions { step: params.ray_step, ..Default::default() };
    for (i, u) in obs.detections.iter().enumerate() {
        let samples = geometry::backproject_ray(u, &obs.calib)
            .and_then(|ray| geometry::discretize_ray(&ray, params.ray_step).map(|pts| (ray, pts)));
        match samples {
            Ok((ray, pts)) => {
                out.segments.push(RaySegment {
                    start: out.points.len(),
                    count: pts.len(),
                    ground: pts[0],
                    up: -ray.direction,
                });
                out.points.extend(pts);
            }
            Err(e) => log::debug!("frame {}: skipping detection {i}: {e}", obs.frame),
        }
    }
    out
}

/// Receiver of generated children.
pub trait CandidateSink {
    /// Children of mode `mode` whose log-weight falls below this are not
    /// pushed.
    fn floor(&self, _mode: Mode) -> f64 {
        f64::NEG_INFINITY
    }

    fn push(&mut self, parent: &Hypothesis, position: Vec3, latent: LatentState, delta: f64);
}

/// Pushes the child if it can still enter the beam; reports whether it did.
#[inline]
fn emit<S: CandidateSink + ?Sized>(
    sink: &mut S,
    parent: &Hypothesis,
    position: Vec3,
    latent: LatentState,
    delta: f64,
) -> bool {
    if delta == f64::NEG_INFINITY || parent.log_weight + delta < sink.floor(latent.mode()) {
        return false;
    }
    sink.push(parent, position, latent, delta);
    true
}

struct VecSink {
    frame: FrameIndex,
    out: Vec<ScoredCandidate>,
}

impl CandidateSink for VecSink {
    fn push(&mut self, parent: &Hypothesis, position: Vec3, latent: LatentState, delta: f64) {
        self.out.push(ScoredCandidate {
            hypothesis: Hypothesis {
                frame: self.frame,
                position,
                latent,
                log_weight: parent.log_weight + delta,
                parent: None,
            },
            delta_logl: delta,
        });
    }
}

/// Log-density of an isotropic 3D Gaussian, clamped at [`LOG_DENSITY_FLOOR`].
pub fn isotropic_log_density(dist_sq: f64, variance: f64) -> f64 {
    let v = -1.5 * (2.0 * PI * variance).ln() - dist_sq / (2.0 * variance);
    v.max(LOG_DENSITY_FLOOR)
}

fn inherited_latent(h: &Hypothesis, to: Mode) -> Result<LatentState, TransitionError> {
    let from = h.mode();
    match (from, to) {
        (Mode::O, Mode::O) | (Mode::J, Mode::O) => Ok(LatentState::O),
        (Mode::W, Mode::W) => Ok(h.latent),
        (Mode::P, Mode::W) => Ok(LatentState::W {
            kick_frame: h.frame,
            kicker_position: [h.position.x, h.position.y],
        }),
        _ => Err(TransitionError::IllegalEdge { from, to }),
    }
}

fn inherit_into<S: CandidateSink + ?Sized>(
    h: &Hypothesis,
    to: Mode,
    params: &ModelParams,
    sink: &mut S,
) -> Result<(), TransitionError> {
    let latent = inherited_latent(h, to)?;
    if h.mode() == Mode::J && params.pitch.contains(&h.position) {
        return Ok(());
    }
    emit(sink, h, h.position, latent, params.transition.logp(h.mode(), to));
    Ok(())
}

/// Children that keep the parent's position: O→O, W→W, J→O and P→W.
///
/// A P→W child records the parent frame as the kick frame and the possessing
/// player's coordinates as the kick origin. Returns `None` for J→O while the
/// ball is still inside the pitch.
pub fn gen_inherit(
    h: &Hypothesis,
    to: Mode,
    params: &ModelParams,
) -> Result<Option<ScoredCandidate>, TransitionError> {
    let mut sink = VecSink { frame: h.frame + 1, out: Vec::with_capacity(1) };
    inherit_into(h, to, params, &mut sink)?;
    Ok(sink.out.pop())
}

fn possession_into<S: CandidateSink + ?Sized>(
    h: &Hypothesis,
    obs: &FrameObservations,
    params: &ModelParams,
    sink: &mut S,
) {
    let from = h.mode();
    let delta = params.transition.logp(from, Mode::P);
    if delta == f64::NEG_INFINITY || h.log_weight + delta < sink.floor(Mode::P) {
        return;
    }
    let z = params.physics.ball_radius;
    let thr_sq = params.possession_threshold * params.possession_threshold;
    let held = match h.latent {
        LatentState::P { player_index } => Some(player_index as usize),
        _ => None,
    };
    for (i, g) in obs.players.iter().enumerate() {
        let child = Vec3::new(g.x, g.y, z);
        let d = child - h.position;
        // An out-of-pitch ball re-enters near where it left, whatever its
        // height was when it crossed the line.
        let dist_sq = if from == Mode::O { d.x * d.x + d.y * d.y } else { d.norm_squared() };
        if dist_sq < thr_sq || held == Some(i) {
            emit(sink, h, child, LatentState::P { player_index: i as u32 }, delta);
        }
    }
}

/// Possession children, one per player close enough to the parent's ball.
///
/// A P parent always keeps its own player when that player is still listed.
pub fn gen_possession(h: &Hypothesis, obs: &FrameObservations, params: &ModelParams) -> Vec<ScoredCandidate> {
    let mut sink = VecSink { frame: obs.frame, out: Vec::new() };
    possession_into(h, obs, params, &mut sink);
    sink.out
}

fn jump_from_jump_into<S: CandidateSink + ?Sized>(
    h: &Hypothesis,
    rays: &RayPositions,
    params: &ModelParams,
    sink: &mut S,
) -> Result<(), TransitionError> {
    let LatentState::J { velocity, variance, .. } = h.latent else {
        return Err(TransitionError::WrongMode { expected: Mode::J, found: h.mode() });
    };
    let stay = params.transition.logp(Mode::J, Mode::J);
    if stay == f64::NEG_INFINITY {
        return Ok(());
    }
    let dt = params.dt();
    let pred = dynamics::extrapolate(&KinematicState::new(h.position, velocity), dt, &params.physics)?;
    let var = dynamics::propagate_variance(variance, dt, params.sigma_v)?;

    emit(
        sink,
        h,
        pred.position,
        LatentState::J { velocity: pred.velocity, variance: var, visible: false },
        stay + params.logp_invisible,
    );

    let visible = LatentState::J { velocity: pred.velocity, variance: 0.0, visible: true };
    let norm = -1.5 * (2.0 * PI * var).ln();
    let inv = 1.0 / (2.0 * var);
    let base = stay;
    if h.log_weight + base + norm < sink.floor(Mode::J) {
        return Ok(());
    }
    let points = rays.points();
    for seg in &rays.segments {
        // Scan outward from the sample nearest the prediction; the density
        // only decreases from there, so each side stops at the first reject.
        let along = (pred.position - seg.ground).dot(&seg.up) / rays.step;
        let k0 = along.round().clamp(0.0, (seg.count - 1) as f64) as usize;
        let score = |k: usize| {
            let d2 = (points[seg.start + k] - pred.position).norm_squared();
            base + (norm - d2 * inv).max(LOG_DENSITY_FLOOR)
        };
        for k in k0..seg.count {
            if !emit(sink, h, points[seg.start + k], visible, score(k)) {
                break;
            }
        }
        for k in (0..k0).rev() {
            if !emit(sink, h, points[seg.start + k], visible, score(k)) {
                break;
            }
        }
    }
    Ok(())
}

/// Flight continuation: one invisible child at the extrapolated position and
/// one visible child per ray sample, scored by the Gaussian density of the
/// sample around the prediction.
pub fn gen_jump_from_jump(
    h: &Hypothesis,
    obs: &FrameObservations,
    ray_positions: &RayPositions,
    params: &ModelParams,
) -> Result<Vec<ScoredCandidate>, TransitionError> {
    let mut sink = VecSink { frame: obs.frame, out: Vec::new() };
    jump_from_jump_into(h, ray_positions, params, &mut sink)?;
    Ok(sink.out)
}

/// Seconds of unobserved flight between the kick and `now`; at least one frame.
pub fn flight_time(kick_frame: FrameIndex, now: FrameIndex, fps: f64) -> Result<f64, TransitionError> {
    if kick_frame > now {
        return Err(TransitionError::KickInFuture { kick_frame, now });
    }
    Ok((now - kick_frame).max(1) as f64 / fps)
}

fn jump_from_wait_into<S: CandidateSink + ?Sized>(
    h: &Hypothesis,
    rays: &RayPositions,
    params: &ModelParams,
    now: FrameIndex,
    sink: &mut S,
) -> Result<(), TransitionError> {
    let LatentState::W { kick_frame, kicker_position } = h.latent else {
        return Err(TransitionError::WrongMode { expected: Mode::W, found: h.mode() });
    };
    let delta = params.transition.logp(Mode::W, Mode::J);
    if rays.is_empty() || delta == f64::NEG_INFINITY || h.log_weight + delta < sink.floor(Mode::J) {
        return Ok(());
    }
    let t = flight_time(kick_frame, now, params.fps)?;
    let origin = Vec3::new(kicker_position[0], kicker_position[1], params.physics.ball_radius);
    let max_sq = params.max_kick_speed * params.max_kick_speed;
    let fall = params.physics.gravity * t;
    for r in rays.points() {
        let launch = dynamics::kick_velocity(&origin, r, t, &params.physics)?;
        if launch.norm_squared() > max_sq {
            continue;
        }
        // The child sits at the detection, so it carries the arrival velocity.
        let velocity = Vec3::new(launch.x, launch.y, launch.z - fall);
        let latent = LatentState::J { velocity, variance: params.sigma_g, visible: true };
        if !emit(sink, h, *r, latent, delta) {
            // Every sample of this family scores the same.
            break;
        }
    }
    Ok(())
}

/// Flight initialization after a kick: one J child per ray sample whose
/// implied launch speed is plausible, all scored by the W→J transition alone.
pub fn gen_jump_from_wait(
    h: &Hypothesis,
    obs: &FrameObservations,
    ray_positions: &RayPositions,
    params: &ModelParams,
    t_now: FrameIndex,
) -> Result<Vec<ScoredCandidate>, TransitionError> {
    let mut sink = VecSink { frame: obs.frame, out: Vec::new() };
    jump_from_wait_into(h, ray_positions, params, t_now, &mut sink)?;
    Ok(sink.out)
}

/// Expands `h` into every legal child for `obs.frame`.
pub fn expand_into<S: CandidateSink + ?Sized>(
    h: &Hypothesis,
    obs: &FrameObservations,
    rays: &RayPositions,
    params: &ModelParams,
    sink: &mut S,
) -> Result<(), TransitionError> {
    match h.mode() {
        Mode::J => {
            jump_from_jump_into(h, rays, params, sink)?;
            possession_into(h, obs, params, sink);
            inherit_into(h, Mode::O, params, sink)?;
        }
        Mode::P => {
            possession_into(h, obs, params, sink);
            inherit_into(h, Mode::W, params, sink)?;
        }
        Mode::W => {
            inherit_into(h, Mode::W, params, sink)?;
            jump_from_wait_into(h, rays, params, obs.frame, sink)?;
        }
        Mode::O => {
            inherit_into(h, Mode::O, params, sink)?;
            possession_into(h, obs, params, sink);
        }
    }
    Ok(())
}

/// Every legal child of `h`, in a fixed order.
pub fn generate_all(
    h: &Hypothesis,
    obs: &FrameObservations,
    ray_positions: &RayPositions,
    params: &ModelParams,
) -> Result<Vec<ScoredCandidate>, TransitionError> {
    let mut sink = VecSink { frame: obs.frame, out: Vec::new() };
    expand_into(h, obs, ray_positions, params, &mut sink)?;
    Ok(sink.out)
}
