#![allow(dead_code)]

use monoball::geometry::{CameraCalibration, Pixel, Vec3};
use monoball::state_model::{default_params, ModelParams};
use monoball::transition_gen::{FrameObservations, PitchPoint};
use nalgebra::Matrix3;

/// Low camera behind the touchline, looking at the center spot.
pub fn low_camera() -> CameraCalibration {
    let k = Matrix3::new(800.0, 0.0, 640.0, 0.0, 800.0, 360.0, 0.0, 0.0, 1.0);
    CameraCalibration::look_at(k, Vec3::new(0.0, -12.0, 3.0), Vec3::zeros()).unwrap()
}

pub fn coarse_params() -> ModelParams {
    ModelParams { ray_step: 0.5, ..default_params() }
}

pub fn frame(frame: u64, detections: &[(f64, f64)], players: &[(f64, f64)]) -> FrameObservations {
    FrameObservations {
        frame,
        detections: detections.iter().map(|&(u, v)| Pixel::new(u, v)).collect(),
        players: players.iter().map(|&(x, y)| PitchPoint::new(x, y)).collect(),
        calib: low_camera(),
    }
}

/// Pixel of a world point in [`low_camera`].
pub fn pixel_of(p: Vec3) -> (f64, f64) {
    let u = monoball::geometry::project(&p, &low_camera()).unwrap();
    (u.x, u.y)
}
