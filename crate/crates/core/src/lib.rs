//! Ball trajectory reconstruction from a single calibrated camera.

pub mod dynamics;
pub mod geometry;
pub mod state_model;
pub mod transition_gen;
pub mod beam_filter;
pub mod simulator;
pub mod evaluation;
pub mod io;
