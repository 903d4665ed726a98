//! Ballistic motion of the ball center under gravity with ground bounces.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec3;

/// Rebound speeds below this are treated as coming to rest on the turf
/// (apex under 2 mm); it keeps the bounce sequence finite.
pub const REST_SPEED: f64 = 0.2;

const CONTACT_EPS: f64 = 1e-12;
const MAX_BOUNCES_PER_STEP: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("time step must be positive, got {0}")]
    NonPositiveDt(f64),
    #[error("flight time must be positive, got {0}")]
    NonPositiveFlightTime(f64),
    #[error("negative input: {0}")]
    NegativeInput(&'static str),
    #[error("invalid physics parameters: {0}")]
    InvalidPhysics(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KinematicState {
    pub position: Vec3,
    pub velocity: Vec3,
}

impl KinematicState {
    pub fn new(position: Vec3, velocity: Vec3) -> Self {
        Self { position, velocity }
    }

    /// Kinetic plus potential energy per unit mass.
    pub fn specific_energy(&self, gravity: f64) -> f64 {
        0.5 * self.velocity.norm_squared() + gravity * self.position.z
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicsParams {
    /// m/s², acting along −z.
    pub gravity: f64,
    /// Vertical speed ratio after/before a ground bounce.
    pub restitution: f64,
    /// Horizontal velocity multiplier applied at each bounce.
    pub ground_friction: f64,
    /// Ground contact height of the ball center, meters.
    pub ball_radius: f64,
}

impl Default for PhysicsParams {
    fn default() -> Self {
        Self { gravity: 9.81, restitution: 0.7, ground_friction: 0.85, ball_radius: 0.11 }
    }
}

impl PhysicsParams {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        if !(self.gravity > 0.0 && self.gravity.is_finite()) {
            return Err(DynamicsError::InvalidPhysics(format!("gravity must be positive, got {}", self.gravity)));
        }
        for (name, v) in [("restitution", self.restitution), ("ground_friction", self.ground_friction)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(DynamicsError::InvalidPhysics(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        if !(self.ball_radius >= 0.0 && self.ball_radius.is_finite()) {
            return Err(DynamicsError::InvalidPhysics(format!(
                "ball_radius must be non-negative, got {}",
                self.ball_radius
            )));
        }
        Ok(())
    }
}

/// Closed-form projectile step ignoring the ground.
pub fn free_flight(state: &KinematicState, dt: f64, gravity: f64) -> KinematicState {
    let mut position = state.position + state.velocity * dt;
    position.z -= 0.5 * gravity * dt * dt;
    let mut velocity = state.velocity;
    velocity.z -= gravity * dt;
    KinematicState { position, velocity }
}

fn bounce(velocity: &mut Vec3, phys: &PhysicsParams) {
    velocity.x *= phys.ground_friction;
    velocity.y *= phys.ground_friction;
    velocity.z = -phys.restitution * velocity.z;
    if velocity.z < REST_SPEED {
        velocity.z = 0.0;
    }
}

/// Advances the ball by `dt` seconds, splitting the step at every ground
/// impact. A ball that starts below contact height is lifted to it first.
pub fn extrapolate(
    state: &KinematicState,
    dt: f64,
    phys: &PhysicsParams,
) -> Result<KinematicState, DynamicsError> {
    if !(dt > 0.0) {
        return Err(DynamicsError::NonPositiveDt(dt));
    }
    let r = phys.ball_radius;
    let g = phys.gravity;
    let mut s = *state;
    if s.position.z < r {
        s.position.z = r;
    }
    let mut remaining = dt;
    for _ in 0..MAX_BOUNCES_PER_STEP {
        let height = s.position.z - r;
        let vz = s.velocity.z;
        if height <= CONTACT_EPS {
            if vz < 0.0 {
                s.position.z = r;
                bounce(&mut s.velocity, phys);
                continue;
            }
            if vz == 0.0 {
                // Rolling: no vertical motion, constant horizontal velocity.
                s.position.x += s.velocity.x * remaining;
                s.position.y += s.velocity.y * remaining;
                s.position.z = r;
                return Ok(s);
            }
        }
        let t_hit = (vz + (vz * vz + 2.0 * g * height.max(0.0)).sqrt()) / g;
        if t_hit >= remaining {
            return Ok(free_flight(&s, remaining, g));
        }
        s = free_flight(&s, t_hit, g);
        s.position.z = r;
        bounce(&mut s.velocity, phys);
        remaining -= t_hit;
        if remaining <= 0.0 {
            return Ok(s);
        }
    }
    // Only reachable with restitution ≈ 1 and absurd step lengths.
    Ok(s)
}

/// Launch velocity of the unique bounce-free arc from `start` to `end` in
/// `flight_time` seconds.
pub fn kick_velocity(
    start: &Vec3,
    end: &Vec3,
    flight_time: f64,
    phys: &PhysicsParams,
) -> Result<Vec3, DynamicsError> {
    if !(flight_time > 0.0) {
        return Err(DynamicsError::NonPositiveFlightTime(flight_time));
    }
    let mut v = (end - start) / flight_time;
    v.z += 0.5 * phys.gravity * flight_time;
    Ok(v)
}

/// Isotropic position variance after `dt` seconds of process noise.
pub fn propagate_variance(sigma: f64, dt: f64, sigma_v: f64) -> Result<f64, DynamicsError> {
    if sigma < 0.0 {
        return Err(DynamicsError::NegativeInput("sigma"));
    }
    if sigma_v < 0.0 {
        return Err(DynamicsError::NegativeInput("sigma_v"));
    }
    if !(dt > 0.0) {
        return Err(DynamicsError::NonPositiveDt(dt));
    }
    Ok(sigma + dt * sigma_v)
}
