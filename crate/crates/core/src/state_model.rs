//! Hybrid discrete/continuous ball state.
//!
//! A hypothesis is a ball position plus a discrete [`Mode`] and the latent
//! variables that mode carries. Transitions between modes are restricted to
//! the graph encoded in [`Mode::allows`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::PhysicsParams;
use crate::geometry::{PitchGeometry, Vec3};

pub type FrameIndex = u64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid transition matrix: {0}")]
    InvalidTransition(String),
    #[error("invalid model parameter: {0}")]
    InvalidParam(String),
}

/// Discrete ball mode. The derived order (J < P < W < O) is the tie-break
/// order used when ranking hypotheses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// Free flight under gravity, possibly bouncing.
    J,
    /// Attached to a player.
    P,
    /// Kicked but not yet re-detected.
    W,
    /// Out of the pitch.
    O,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::J, Mode::P, Mode::W, Mode::O];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Edges of the mode transition graph.
    pub fn allows(self, to: Mode) -> bool {
        use Mode::*;
        matches!(
            (self, to),
            (J, J) | (J, O) | (J, P) | (O, O) | (O, P) | (P, P) | (P, W) | (W, W) | (W, J)
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::J => "J",
            Mode::P => "P",
            Mode::W => "W",
            Mode::O => "O",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "J" => Ok(Mode::J),
            "P" => Ok(Mode::P),
            "W" => Ok(Mode::W),
            "O" => Ok(Mode::O),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

/// Mode plus the latent variables that only that mode carries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", deny_unknown_fields)]
pub enum LatentState {
    J {
        /// m/s
        velocity: Vec3,
        /// Isotropic position variance, m².
        variance: f64,
        visible: bool,
    },
    P {
        /// Index into the frame's player list.
        player_index: u32,
    },
    W {
        kick_frame: FrameIndex,
        /// Kicker's pitch coordinates at the kick frame.
        kicker_position: [f64; 2],
    },
    O,
}

impl LatentState {
    pub fn mode(&self) -> Mode {
        match self {
            LatentState::J { .. } => Mode::J,
            LatentState::P { .. } => Mode::P,
            LatentState::W { .. } => Mode::W,
            LatentState::O => Mode::O,
        }
    }
}

/// Bitwise identity of a hypothesis' full state (position and every latent
/// field). Two hypotheses with equal keys have identical futures, so a beam
/// may keep only the heavier of the two.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateKey(pub [u64; 8]);

impl StateKey {
    pub fn new(position: &Vec3, latent: &LatentState) -> Self {
        let mut w = [0u64; 8];
        w[1] = position.x.to_bits();
        w[2] = position.y.to_bits();
        w[3] = position.z.to_bits();
        match *latent {
            LatentState::J { velocity, variance, visible } => {
                w[0] = Mode::J as u64 | (u64::from(visible) << 8);
                w[4] = velocity.x.to_bits();
                w[5] = velocity.y.to_bits();
                w[6] = velocity.z.to_bits();
                w[7] = variance.to_bits();
            }
            LatentState::P { player_index } => {
                w[0] = Mode::P as u64;
                w[4] = u64::from(player_index);
            }
            LatentState::W { kick_frame, kicker_position } => {
                w[0] = Mode::W as u64;
                w[4] = kick_frame;
                w[5] = kicker_position[0].to_bits();
                w[6] = kicker_position[1].to_bits();
            }
            LatentState::O => w[0] = Mode::O as u64,
        }
        StateKey(w)
    }

    /// Mode, position, and the player index or visibility flag; velocity,
    /// variance and kick data are ignored.
    pub fn coarse(position: &Vec3, latent: &LatentState) -> Self {
        let mut w = [0u64; 8];
        w[0] = latent.mode() as u64;
        w[1] = position.x.to_bits();
        w[2] = position.y.to_bits();
        w[3] = position.z.to_bits();
        match *latent {
            LatentState::J { visible, .. } => w[0] |= u64::from(visible) << 8,
            LatentState::P { player_index } => w[4] = u64::from(player_index),
            _ => {}
        }
        StateKey(w)
    }
}

/// What makes two beam candidates the same hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dedup {
    /// Mode, position and player/visibility ([`StateKey::coarse`]). Flight
    /// states reaching the same ray sample from different parents merge and
    /// only the best velocity survives.
    Position,
    /// Full state ([`StateKey::new`]). Merged states have identical futures,
    /// so a wide enough beam finds the exact best chain.
    #[default]
    State,
}

impl Dedup {
    pub fn key(self, position: &Vec3, latent: &LatentState) -> StateKey {
        match self {
            Dedup::Position => StateKey::coarse(position, latent),
            Dedup::State => StateKey::new(position, latent),
        }
    }
}

/// One beam entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hypothesis {
    pub frame: FrameIndex,
    pub position: Vec3,
    pub latent: LatentState,
    /// Accumulated log-posterior of the chain ending here.
    pub log_weight: f64,
    /// Index of the parent within the previous frame's beam.
    pub parent: Option<u32>,
}

impl Hypothesis {
    pub fn mode(&self) -> Mode {
        self.latent.mode()
    }

    pub fn key(&self) -> StateKey {
        StateKey::new(&self.position, &self.latent)
    }
}

/// Log-probabilities of mode transitions, indexed `[from][to]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionMatrix {
    logp: [[f64; 4]; 4],
}

impl TransitionMatrix {
    /// Builds the matrix from probabilities. Disallowed edges must be zero and
    /// each row must sum to one.
    pub fn from_probabilities(p: [[f64; 4]; 4]) -> Result<Self, ModelError> {
        let mut logp = [[f64::NEG_INFINITY; 4]; 4];
        for from in Mode::ALL {
            let row = &p[from.index()];
            let mut sum = 0.0;
            for to in Mode::ALL {
                let v = row[to.index()];
                if !(0.0..=1.0).contains(&v) {
                    return Err(ModelError::InvalidTransition(format!(
                        "p({from}->{to}) = {v} is not a probability"
                    )));
                }
                if !from.allows(to) && v != 0.0 {
                    return Err(ModelError::InvalidTransition(format!(
                        "edge {from}->{to} is not allowed but has probability {v}"
                    )));
                }
                sum += v;
                logp[from.index()][to.index()] = v.ln();
            }
            if (sum - 1.0).abs() > 1e-9 {
                return Err(ModelError::InvalidTransition(format!("row {from} sums to {sum}")));
            }
        }
        Ok(Self { logp })
    }

    /// Self-loop probability per mode (in J, P, W, O order); the remaining
    /// mass of each row is split evenly over its allowed exits.
    pub fn with_self_loops(self_loops: [f64; 4]) -> Result<Self, ModelError> {
        let mut p = [[0.0; 4]; 4];
        for from in Mode::ALL {
            let stay = self_loops[from.index()];
            let exits: Vec<Mode> = Mode::ALL.into_iter().filter(|&to| to != from && from.allows(to)).collect();
            p[from.index()][from.index()] = stay;
            for to in &exits {
                p[from.index()][to.index()] = (1.0 - stay) / exits.len() as f64;
            }
        }
        Self::from_probabilities(p)
    }

    pub fn logp(&self, from: Mode, to: Mode) -> f64 {
        self.logp[from.index()][to.index()]
    }

    pub fn probabilities(&self) -> [[f64; 4]; 4] {
        self.logp.map(|row| row.map(f64::exp))
    }

    /// Largest finite entry; bounds the per-frame transition term.
    pub fn max_logp(&self) -> f64 {
        self.logp.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

impl Default for TransitionMatrix {
    fn default() -> Self {
        Self::with_self_loops(DEFAULT_SELF_LOOPS).expect("default transition matrix is valid")
    }
}

/// Table lookup; −∞ for edges outside the transition graph.
pub fn transition_logp(matrix: &TransitionMatrix, from: Mode, to: Mode) -> f64 {
    matrix.logp(from, to)
}

/// Config representation: one table of outgoing probabilities per mode.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionRow {
    #[serde(rename = "J", default, skip_serializing_if = "is_zero")]
    pub j: f64,
    #[serde(rename = "P", default, skip_serializing_if = "is_zero")]
    pub p: f64,
    #[serde(rename = "W", default, skip_serializing_if = "is_zero")]
    pub w: f64,
    #[serde(rename = "O", default, skip_serializing_if = "is_zero")]
    pub o: f64,
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionRows {
    #[serde(rename = "J")]
    pub j: TransitionRow,
    #[serde(rename = "P")]
    pub p: TransitionRow,
    #[serde(rename = "W")]
    pub w: TransitionRow,
    #[serde(rename = "O")]
    pub o: TransitionRow,
}

impl From<TransitionMatrix> for TransitionRows {
    fn from(m: TransitionMatrix) -> Self {
        let p = m.probabilities();
        let row = |r: [f64; 4]| TransitionRow { j: r[0], p: r[1], w: r[2], o: r[3] };
        TransitionRows { j: row(p[0]), p: row(p[1]), w: row(p[2]), o: row(p[3]) }
    }
}

impl TryFrom<TransitionRows> for TransitionMatrix {
    type Error = ModelError;

    fn try_from(rows: TransitionRows) -> Result<Self, Self::Error> {
        let row = |r: TransitionRow| [r.j, r.p, r.w, r.o];
        TransitionMatrix::from_probabilities([row(rows.j), row(rows.p), row(rows.w), row(rows.o)])
    }
}

impl Serialize for TransitionMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        TransitionRows::from(*self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for TransitionMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let rows = TransitionRows::deserialize(d)?;
        TransitionMatrix::try_from(rows).map_err(serde::de::Error::custom)
    }
}

/// Self-loop probabilities (J, P, W, O) of the default transition matrix.
/// A kicked ball is normally seen within a few frames, and a ball out of play
/// goes back in as soon as a player reaches it.
pub const DEFAULT_SELF_LOOPS: [f64; 4] = [0.95, 0.95, 0.5, 0.9];

/// Every tunable constant of the filter.
///
/// `physics` and `pitch` live in their own config tables, so they are skipped
/// when (de)serializing this struct.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelParams {
    pub transition: TransitionMatrix,
    /// Maximum ball displacement for a transition into possession, meters.
    pub possession_threshold: f64,
    /// Position variance growth rate, m²/s.
    pub sigma_v: f64,
    /// Position variance assigned to a freshly initialized flight, m².
    pub sigma_g: f64,
    /// Log-penalty for a flight frame without a detection.
    pub logp_invisible: f64,
    /// Spacing of candidate positions along a viewing ray, meters.
    pub ray_step: f64,
    pub beam_width: usize,
    /// Frames kept soft before output is committed.
    pub lag: usize,
    pub fps: f64,
    /// Launch speeds above this are not considered when a flight is
    /// initialized from a kick, m/s. Infinity disables the gate.
    pub max_kick_speed: f64,
    pub dedup: Dedup,
    /// Slots of the beam reserved for the best hypotheses of each mode, so a
    /// mode change is not crowded out by near-identical states of the current
    /// mode. Capped at a quarter of the beam width; 0 disables it.
    pub mode_quota: usize,
    #[serde(skip)]
    pub physics: PhysicsParams,
    #[serde(skip)]
    pub pitch: PitchGeometry,
}

impl Default for ModelParams {
    fn default() -> Self {
        default_params()
    }
}

pub fn default_params() -> ModelParams {
    ModelParams {
        transition: TransitionMatrix::default(),
        possession_threshold: 1.5,
        sigma_v: 0.5,
        sigma_g: 0.02,
        logp_invisible: 0.2f64.ln(),
        ray_step: 0.03,
        beam_width: 1000,
        lag: 50,
        fps: 25.0,
        max_kick_speed: 40.0,
        dedup: Dedup::State,
        mode_quota: 20,
        physics: PhysicsParams::default(),
        pitch: PitchGeometry::default(),
    }
}

impl ModelParams {
    /// Reserved slots per mode actually used for this beam width.
    pub fn effective_quota(&self) -> usize {
        self.mode_quota.min(self.beam_width / 4)
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.fps
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidParam(msg));
        if self.beam_width < 1 {
            return bad("beam_width must be at least 1".into());
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return bad(format!("fps must be positive, got {}", self.fps));
        }
        for (name, v) in [
            ("possession_threshold", self.possession_threshold),
            ("sigma_v", self.sigma_v),
            ("sigma_g", self.sigma_g),
            ("ray_step", self.ray_step),
            ("max_kick_speed", self.max_kick_speed),
        ] {
            if !(v > 0.0) || v.is_nan() {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.logp_invisible <= 0.0) {
            return bad(format!("logp_invisible must be a log-probability, got {}", self.logp_invisible));
        }
        self.physics.validate().map_err(|e| ModelError::InvalidParam(e.to_string()))?;
        self.pitch.validate().map_err(|e| ModelError::InvalidParam(e.to_string()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn edges_match_transition_graph() {
        let allowed: Vec<(Mode, Mode)> = Mode::ALL
            .into_iter()
            .flat_map(|a| Mode::ALL.into_iter().map(move |b| (a, b)))
            .filter(|(a, b)| a.allows(*b))
            .collect();
        use Mode::*;
        assert_eq!(allowed, vec![(J, J), (J, P), (J, O), (P, P), (P, W), (W, J), (W, W), (O, P), (O, O)]);
    }

    #[test]
    fn lookup_examples() {
        let m = TransitionMatrix::default();
        assert_eq!(transition_logp(&m, Mode::W, Mode::P), f64::NEG_INFINITY);
        assert!(transition_logp(&m, Mode::P, Mode::W).is_finite());
        let row: f64 = Mode::ALL.iter().map(|&to| transition_logp(&m, Mode::J, to).exp()).sum();
        assert!((row - 1.0).abs() < 1e-9);
        assert!(transition_logp(&m, Mode::J, Mode::J).is_finite());
    }

    #[test]
    fn default_rows_normalize() {
        let m = TransitionMatrix::default();
        for from in Mode::ALL {
            let s: f64 = Mode::ALL.iter().map(|&to| m.logp(from, to).exp()).sum();
            assert!((s - 1.0).abs() < 1e-9, "row {from} sums to {s}");
            for to in Mode::ALL {
                assert_eq!(m.logp(from, to).is_finite(), from.allows(to), "{from}->{to}");
            }
        }
    }

    #[test]
    fn defaults() {
        let p = default_params();
        assert_eq!(p.ray_step, 0.03);
        assert_eq!(p.beam_width, 1000);
        assert_eq!(p.fps, 25.0);
        assert_eq!(p.lag, 50);
        assert_eq!(p.possession_threshold, 1.5);
        assert_eq!(p.sigma_v, 0.5);
        assert_eq!(p.sigma_g, 0.02);
        assert_eq!(p.logp_invisible, 0.2f64.ln());
        assert!(p.validate().is_ok());
    }

    #[test]
    fn rejects_disallowed_edge_and_bad_rows() {
        let mut p = TransitionMatrix::default().probabilities();
        p[Mode::W.index()][Mode::P.index()] = 0.01;
        p[Mode::W.index()][Mode::W.index()] -= 0.01;
        assert!(TransitionMatrix::from_probabilities(p).is_err());
        let mut p = TransitionMatrix::default().probabilities();
        p[0][0] = 0.5;
        assert!(TransitionMatrix::from_probabilities(p).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(ModelParams { beam_width: 0, ..default_params() }.validate().is_err());
        assert!(ModelParams { fps: 0.0, ..default_params() }.validate().is_err());
        assert!(ModelParams { sigma_g: 0.0, ..default_params() }.validate().is_err());
        assert!(ModelParams { ray_step: -1.0, ..default_params() }.validate().is_err());
        assert!(ModelParams { logp_invisible: 0.5, ..default_params() }.validate().is_err());
        assert!(ModelParams { max_kick_speed: f64::INFINITY, ..default_params() }.validate().is_ok());
    }

    #[test]
    fn transition_matrix_serde_roundtrip() {
        let m = TransitionMatrix::with_self_loops([0.9, 0.98, 0.8, 0.97]).unwrap();
        let text = serde_json::to_string(&m).unwrap();
        let back: TransitionMatrix = serde_json::from_str(&text).unwrap();
        for from in Mode::ALL {
            for to in Mode::ALL {
                let (a, b) = (m.logp(from, to), back.logp(from, to));
                assert!(a == b || (a - b).abs() < 1e-12, "{from}->{to}: {a} vs {b}");
            }
        }
        assert!(serde_json::from_str::<TransitionMatrix>(r#"{"J":{"J":1.0},"P":{"P":1.0},"W":{"W":0.5,"P":0.5},"O":{"O":1.0}}"#).is_err());
    }

    #[test]
    fn state_key_separates_latents() {
        let pos = Vec3::new(1.0, 2.0, 0.11);
        let a = StateKey::new(&pos, &LatentState::W { kick_frame: 3, kicker_position: [1.0, 2.0] });
        let b = StateKey::new(&pos, &LatentState::W { kick_frame: 4, kicker_position: [1.0, 2.0] });
        assert_ne!(a, b);
        let j = |visible| LatentState::J { velocity: Vec3::zeros(), variance: 0.0, visible };
        assert_ne!(StateKey::new(&pos, &j(true)), StateKey::new(&pos, &j(false)));
        assert_eq!(StateKey::new(&pos, &LatentState::O), StateKey::new(&pos, &LatentState::O));
    }

    fn finite() -> impl Strategy<Value = f64> {
        prop_oneof![-1e6..1e6f64, Just(0.0), Just(-0.0), Just(1e-300), Just(f64::MAX)]
    }

    fn latent() -> impl Strategy<Value = LatentState> {
        prop_oneof![
            (finite(), finite(), finite(), 0.0..100.0f64, any::<bool>()).prop_map(|(a, b, c, variance, visible)| {
                LatentState::J { velocity: Vec3::new(a, b, c), variance, visible }
            }),
            any::<u32>().prop_map(|player_index| LatentState::P { player_index }),
            (any::<u64>(), finite(), finite())
                .prop_map(|(kick_frame, x, y)| LatentState::W { kick_frame, kicker_position: [x, y] }),
            Just(LatentState::O),
        ]
    }

    proptest! {
        #[test]
        fn hypothesis_json_is_lossless(
            frame in any::<u64>(), x in finite(), y in finite(), z in finite(),
            latent in latent(), log_weight in finite(), parent in proptest::option::of(any::<u32>()),
        ) {
            let h = Hypothesis { frame, position: Vec3::new(x, y, z), latent, log_weight, parent };
            let text = serde_json::to_string(&h).unwrap();
            let back: Hypothesis = serde_json::from_str(&text).unwrap();
            prop_assert_eq!(back.key(), h.key());
            prop_assert_eq!(back.log_weight.to_bits(), h.log_weight.to_bits());
            prop_assert_eq!(back, h);
        }
    }
}
