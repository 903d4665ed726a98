//! Synthetic matches with known ground truth.
//!
//! Players random-walk over the pitch. The ball alternates between possession
//! spells, kicks, ballistic flight with bounces, and out-of-play pauses ended
//! by a throw-in. Frames are rendered through the camera with i.i.d. dropout,
//! occlusion by player silhouettes, pixel noise and spurious detections.

use nalgebra::{Matrix3, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{self, KinematicState, PhysicsParams};
use crate::geometry::{self, CameraCalibration, PitchGeometry, Pixel, Vec3};
use crate::state_model::{FrameIndex, Mode};
use crate::transition_gen::{FrameObservations, PitchPoint};

/// Player silhouette used for occlusion, meters.
const PLAYER_HALF_WIDTH: f64 = 0.3;
const PLAYER_HEIGHT: f64 = 1.8;
/// Frames after a kick during which nobody can take the ball.
const CAPTURE_COOLDOWN: FrameIndex = 10;
const PLAYER_MAX_SPEED: f64 = 7.0;
const OUT_OF_PLAY_FRAMES: (u64, u64) = (25, 75);
const KICK_SPEED: (f64, f64) = (8.0, 30.0);
const KICK_ANGLE_DEG: (f64, f64) = (10.0, 45.0);

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulator config: {0}")]
    ConfigInvalid(String),
    #[error("ground truth has {gt} frames but there are {obs} observation frames")]
    LengthMismatch { gt: usize, obs: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Wide broadcast camera high behind the near touchline.
pub fn broadcast_camera() -> CameraCalibration {
    let k = Matrix3::new(1800.0, 0.0, 3072.0, 0.0, 1800.0, 1620.0, 0.0, 0.0, 1.0);
    CameraCalibration::look_at(k, Vec3::new(0.0, -60.0, 25.0), Vec3::zeros())
        .expect("fixed camera is valid")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    /// Frames.
    pub duration: u64,
    pub fps: f64,
    pub calib: CameraCalibration,
    #[serde(skip)]
    pub pitch: PitchGeometry,
    #[serde(skip)]
    pub physics: PhysicsParams,
    pub n_players: usize,
    /// Per-frame probability of dropping a visible ball detection.
    pub occlusion_prob: f64,
    pub pixel_noise_sigma: f64,
    /// Kicks per minute of possession once the minimum dwell has passed.
    pub kick_rate: f64,
    /// Minimum length of a possession spell, frames.
    pub possession_dwell: f64,
    pub out_of_play_prob: f64,
    /// Mean spurious detections per frame.
    pub false_positive_rate: f64,
    /// A flying ball this close to a player is taken into possession, meters.
    pub capture_radius: f64,
    pub occlude_by_players: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            duration: 2500,
            fps: 25.0,
            calib: broadcast_camera(),
            pitch: PitchGeometry::default(),
            physics: PhysicsParams::default(),
            n_players: 22,
            occlusion_prob: 0.1,
            pixel_noise_sigma: 1.0,
            kick_rate: 12.0,
            possession_dwell: 25.0,
            out_of_play_prob: 0.1,
            false_positive_rate: 0.0,
            capture_radius: 1.0,
            occlude_by_players: true,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::ConfigInvalid(m));
        for (name, p) in [("occlusion_prob", self.occlusion_prob), ("out_of_play_prob", self.out_of_play_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must be in [0, 1], got {p}"));
            }
        }
        if self.duration < 1 {
            return bad("duration must be at least 1 frame".into());
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return bad(format!("fps must be positive, got {}", self.fps));
        }
        if self.n_players < 1 {
            return bad("at least one player is required".into());
        }
        for (name, v) in [
            ("pixel_noise_sigma", self.pixel_noise_sigma),
            ("kick_rate", self.kick_rate),
            ("false_positive_rate", self.false_positive_rate),
            ("capture_radius", self.capture_radius),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if !(self.possession_dwell >= 1.0 && self.possession_dwell.is_finite()) {
            return bad(format!("possession_dwell must be at least 1, got {}", self.possession_dwell));
        }
        self.pitch.validate().map_err(|e| SimError::ConfigInvalid(e.to_string()))?;
        self.physics.validate().map_err(|e| SimError::ConfigInvalid(e.to_string()))?;
        Ok(())
    }

    fn image_size(&self) -> (f64, f64) {
        let k = self.calib.intrinsics();
        (2.0 * k[(0, 2)], 2.0 * k[(1, 2)])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Kick,
    OutOfPitch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthFrame {
    pub frame: FrameIndex,
    pub position: Vec3,
    pub mode: Mode,
    /// The ball produced a detection this frame.
    pub visible: bool,
    pub events: Vec<EventKind>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    pub frames: Vec<GroundTruthFrame>,
}

impl GroundTruth {
    /// Frames stamped with `kind`, ascending.
    pub fn events(&self, kind: EventKind) -> Vec<FrameIndex> {
        self.frames.iter().filter(|f| f.events.contains(&kind)).map(|f| f.frame).collect()
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
enum Ball {
    Held { player: usize, since: FrameIndex },
    Flight { state: KinematicState, kicker: usize, kick_frame: FrameIndex, seen: bool },
    Out { position: Vec3, until: FrameIndex },
}

/// Frame-by-frame generator; memory does not grow with the clip length.
#[derive(Debug, Clone)]
pub struct Simulation {
    cfg: SimConfig,
    rng: ChaCha8Rng,
    t: FrameIndex,
    players: Vec<Vector2<f64>>,
    velocities: Vec<Vector2<f64>>,
    ball: Ball,
    pending: Vec<EventKind>,
    kick_hazard: f64,
    /// Set pieces (the opening kick-off and restarts after out of play) are
    /// taken as soon as the dwell has passed.
    set_piece: bool,
}

impl Simulation {
    pub fn new(cfg: SimConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let (hl, hw) = (cfg.pitch.length / 2.0, cfg.pitch.width / 2.0);
        let players = (0..cfg.n_players)
            .map(|_| Vector2::new(rng.random_range(-0.9 * hl..0.9 * hl), rng.random_range(-0.9 * hw..0.9 * hw)))
            .collect();
        let velocities = vec![Vector2::zeros(); cfg.n_players];
        let ball = Ball::Held { player: rng.random_range(0..cfg.n_players), since: 0 };
        let kick_hazard = (cfg.kick_rate / (60.0 * cfg.fps)).min(1.0);
        Ok(Self { cfg, rng, t: 0, players, velocities, ball, pending: Vec::new(), kick_hazard, set_piece: true })
    }

    fn ball_position(&self) -> Vec3 {
        match self.ball {
            Ball::Held { player, .. } => {
                let p = self.players[player];
                Vec3::new(p.x, p.y, self.cfg.physics.ball_radius)
            }
            Ball::Flight { state, .. } => state.position,
            Ball::Out { position, .. } => position,
        }
    }

    fn occluded_by_player(&self, ball: &Vec3, pixel: &Pixel) -> bool {
        let calib = &self.cfg.calib;
        let depth = |p: &Vec3| (calib.rotation() * p + calib.translation()).z;
        let ball_depth = depth(ball);
        let f = calib.intrinsics()[(0, 0)];
        self.players.iter().any(|g| {
            let foot = Vec3::new(g.x, g.y, 0.0);
            let head = Vec3::new(g.x, g.y, PLAYER_HEIGHT);
            let d = depth(&foot);
            if d > ball_depth || d <= 0.0 {
                return false;
            }
            let (Ok(uf), Ok(uh)) = (geometry::project(&foot, calib), geometry::project(&head, calib)) else {
                return false;
            };
            let half = PLAYER_HALF_WIDTH * f / d;
            (pixel.x - uf.x).abs() <= half && pixel.y <= uf.y.max(uh.y) && pixel.y >= uf.y.min(uh.y)
        })
    }

    fn render(&mut self, mode: Mode, position: &Vec3) -> (Vec<Pixel>, bool) {
        let (w, h) = self.cfg.image_size();
        // Always draw, so the random stream does not depend on the ball's mode.
        let dropped = self.rng.random::<f64>() < self.cfg.occlusion_prob;
        let noise = (self.rng.random::<f64>(), self.rng.random::<f64>());
        let mut detections = Vec::new();
        let mut visible = false;
        if matches!(mode, Mode::J | Mode::W) && !dropped {
            if let Ok(px) = geometry::project(position, &self.cfg.calib) {
                let inside = (0.0..=w).contains(&px.x) && (0.0..=h).contains(&px.y);
                if inside && !(self.cfg.occlude_by_players && self.occluded_by_player(position, &px)) {
                    visible = true;
                    let mut u = px;
                    if self.cfg.pixel_noise_sigma > 0.0 {
                        u += box_muller(noise) * self.cfg.pixel_noise_sigma;
                    }
                    detections.push(u);
                }
            }
        }
        if self.cfg.false_positive_rate > 0.0 {
            let n = Poisson::new(self.cfg.false_positive_rate).expect("positive rate").sample(&mut self.rng) as usize;
            for _ in 0..n {
                detections.push(Pixel::new(self.rng.random_range(0.0..w), self.rng.random_range(0.0..h)));
            }
        }
        (detections, visible)
    }

    fn move_players(&mut self) {
        let dt = 1.0 / self.cfg.fps;
        let (hl, hw) = (self.cfg.pitch.length / 2.0, self.cfg.pitch.width / 2.0);
        let accel = Normal::new(0.0, 0.4).expect("valid sigma");
        for (p, v) in self.players.iter_mut().zip(self.velocities.iter_mut()) {
            *v = *v * 0.95 + Vector2::new(accel.sample(&mut self.rng), accel.sample(&mut self.rng));
            let speed = v.norm();
            if speed > PLAYER_MAX_SPEED {
                *v *= PLAYER_MAX_SPEED / speed;
            }
            if p.x.abs() >= hl {
                v.x = -v.x.abs() * p.x.signum();
            }
            if p.y.abs() >= hw {
                v.y = -v.y.abs() * p.y.signum();
            }
            *p += *v * dt;
            p.x = p.x.clamp(-hl, hl);
            p.y = p.y.clamp(-hw, hw);
        }
    }

    /// Set pieces are always played into the pitch.
    fn kick(&mut self, player: usize, set_piece: bool) -> KinematicState {
        let (hl, hw) = (self.cfg.pitch.length / 2.0, self.cfg.pitch.width / 2.0);
        let from = self.players[player];
        let wide = self.rng.random::<f64>() < self.cfg.out_of_play_prob;
        let target = if wide && !set_piece {
            // A point beyond a random touchline or goal line.
            let margin = self.rng.random_range(5.0..15.0);
            match self.rng.random_range(0..4) {
                0 => Vector2::new(hl + margin, self.rng.random_range(-hw..hw)),
                1 => Vector2::new(-hl - margin, self.rng.random_range(-hw..hw)),
                2 => Vector2::new(self.rng.random_range(-hl..hl), hw + margin),
                _ => Vector2::new(self.rng.random_range(-hl..hl), -hw - margin),
            }
        } else {
            Vector2::new(self.rng.random_range(-hl..hl), self.rng.random_range(-hw..hw))
        };
        let dir = (target - from).try_normalize(1e-9).unwrap_or_else(|| {
            let a = self.rng.random_range(0.0..std::f64::consts::TAU);
            Vector2::new(a.cos(), a.sin())
        });
        let speed = self.rng.random_range(KICK_SPEED.0..KICK_SPEED.1);
        let angle = self.rng.random_range(KICK_ANGLE_DEG.0..KICK_ANGLE_DEG.1).to_radians();
        let horiz = dir * speed * angle.cos();
        KinematicState::new(
            Vec3::new(from.x, from.y, self.cfg.physics.ball_radius),
            Vec3::new(horiz.x, horiz.y, speed * angle.sin()),
        )
    }

    /// Moves the world from frame `t` to `t + 1`.
    fn advance(&mut self, mode_now: Mode) {
        let t = self.t;
        let dt = 1.0 / self.cfg.fps;
        let ball_now = self.ball_position();
        // A kick leaves from the player's frame-t position, before anyone moves.
        if let Ball::Held { player, since } = self.ball {
            let spell = (t - since + 1) as f64;
            let draw = self.rng.random::<f64>();
            if spell >= self.cfg.possession_dwell && (self.set_piece || draw < self.kick_hazard) {
                let set_piece = std::mem::take(&mut self.set_piece);
                let launch = self.kick(player, set_piece);
                let state = dynamics::extrapolate(&launch, dt, &self.cfg.physics).expect("dt > 0");
                self.pending.push(EventKind::Kick);
                self.ball = Ball::Flight { state, kicker: player, kick_frame: t, seen: false };
                self.move_players();
                self.t = t + 1;
                return;
            }
        }
        self.move_players();
        self.ball = match self.ball {
            Ball::Flight { state, kicker, kick_frame, seen } => {
                if let Some(j) =
                    (mode_now == Mode::J && t + 1 - kick_frame > CAPTURE_COOLDOWN).then(|| self.catcher(&ball_now)).flatten()
                {
                    Ball::Held { player: j, since: t + 1 }
                } else {
                    let state = dynamics::extrapolate(&state, dt, &self.cfg.physics).expect("dt > 0");
                    Ball::Flight { state, kicker, kick_frame, seen }
                }
            }
            Ball::Out { position, until } if t + 1 >= until => {
                // Restart on the line where the ball went out.
                let (hl, hw) = (self.cfg.pitch.length / 2.0, self.cfg.pitch.width / 2.0);
                let j = self.rng.random_range(0..self.cfg.n_players);
                self.players[j] = Vector2::new(position.x.clamp(-hl, hl), position.y.clamp(-hw, hw));
                self.velocities[j] = Vector2::zeros();
                self.set_piece = true;
                Ball::Held { player: j, since: t + 1 }
            }
            other => other,
        };
        self.t = t + 1;
    }

    /// Nearest player within the capture radius of the ball.
    fn catcher(&self, ball: &Vec3) -> Option<usize> {
        let r = self.cfg.physics.ball_radius;
        self.players
            .iter()
            .enumerate()
            .map(|(j, g)| (j, (Vec3::new(g.x, g.y, r) - ball).norm()))
            .filter(|&(_, d)| d < self.cfg.capture_radius)
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(j, _)| j)
    }
}

fn box_muller((a, b): (f64, f64)) -> Pixel {
    let r = (-2.0 * (1.0 - a).ln()).sqrt();
    let th = std::f64::consts::TAU * b;
    Pixel::new(r * th.cos(), r * th.sin())
}

impl Iterator for Simulation {
    type Item = (GroundTruthFrame, FrameObservations);

    fn next(&mut self) -> Option<Self::Item> {
        if self.t >= self.cfg.duration {
            return None;
        }
        let t = self.t;
        if let Ball::Flight { state, seen: true, .. } = self.ball {
            if !self.cfg.pitch.contains(&state.position) {
                self.pending.push(EventKind::OutOfPitch);
                let pause = self.rng.random_range(OUT_OF_PLAY_FRAMES.0..=OUT_OF_PLAY_FRAMES.1);
                self.ball = Ball::Out { position: state.position, until: t + pause };
            }
        }
        let position = self.ball_position();
        let provisional = match self.ball {
            Ball::Held { .. } => Mode::P,
            Ball::Flight { seen: true, .. } => Mode::J,
            Ball::Flight { .. } => Mode::W,
            Ball::Out { .. } => Mode::O,
        };
        // The frame right after a kick the ball is still at the kicker's foot
        // and goes undetected, like in possession.
        let at_foot = matches!(self.ball, Ball::Flight { kick_frame, .. } if t < kick_frame + 2);
        let (detections, visible) = self.render(if at_foot { Mode::P } else { provisional }, &position);
        let mut mode = provisional;
        if let Ball::Flight { seen, .. } = &mut self.ball {
            // Flight counts as waiting until the first sighting.
            if !*seen && visible {
                *seen = true;
                mode = Mode::J;
            }
        }
        let gt = GroundTruthFrame { frame: t, position, mode, visible, events: std::mem::take(&mut self.pending) };
        let obs = FrameObservations {
            frame: t,
            detections,
            players: self.players.iter().map(|p| PitchPoint::new(p.x, p.y)).collect(),
            calib: self.cfg.calib.clone(),
        };
        self.advance(mode);
        Some((gt, obs))
    }
}

/// Runs a whole simulation in memory.
pub fn simulate(config: &SimConfig) -> Result<(GroundTruth, Vec<FrameObservations>), SimError> {
    let mut gt = GroundTruth::default();
    let mut frames = Vec::with_capacity(config.duration as usize);
    for (g, o) in Simulation::new(config.clone())? {
        gt.frames.push(g);
        frames.push(o);
    }
    Ok((gt, frames))
}
