//! Per-frame beam search over hypotheses and fixed-lag trajectory extraction.

use std::cmp::Ordering;
use std::collections::VecDeque;
use std::f64::consts::PI;

use rustc_hash::FxHashMap;
use thiserror::Error;

use crate::geometry::Vec3;
use crate::state_model::{Dedup, FrameIndex, Hypothesis, LatentState, Mode, ModelParams, StateKey};
use crate::transition_gen::{self, CandidateSink, FrameObservations, TransitionError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("frame {frame}: no seed hypotheses")]
    EmptyFrame { frame: FrameIndex },
    #[error("frame {frame}: every candidate has zero probability")]
    BeamExtinct { frame: FrameIndex },
    #[error("expected frame {expected}, got {found}")]
    FrameGap { expected: FrameIndex, found: FrameIndex },
    #[error("no frames")]
    EmptyInput,
    #[error("frame {frame}: {source}")]
    Transition {
        frame: FrameIndex,
        #[source]
        source: TransitionError,
    },
}

/// Hypotheses alive at one frame, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct Beam {
    pub frame: FrameIndex,
    pub hypotheses: Vec<Hypothesis>,
}

impl Beam {
    pub fn best(&self) -> Option<&Hypothesis> {
        self.hypotheses.first()
    }

    pub fn len(&self) -> usize {
        self.hypotheses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hypotheses.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRecord {
    pub frame: FrameIndex,
    pub position: Vec3,
    pub mode: Mode,
    pub log_weight: f64,
    pub finalized: bool,
}

/// Total order used for ranking: higher log-weight first, then mode order,
/// then position (height first, so ground-level samples win ties), then the
/// rest of the state.
pub fn rank_order(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    rank_order_keyed(a, &a.key(), b, &b.key())
}

fn rank_order_keyed(a: &Hypothesis, ka: &StateKey, b: &Hypothesis, kb: &StateKey) -> Ordering {
    b.log_weight
        .total_cmp(&a.log_weight)
        .then_with(|| a.mode().cmp(&b.mode()))
        .then_with(|| a.position.z.total_cmp(&b.position.z))
        .then_with(|| a.position.x.total_cmp(&b.position.x))
        .then_with(|| a.position.y.total_cmp(&b.position.y))
        .then_with(|| ka.cmp(kb))
}

/// Seeds a beam from a single frame: a resting flight state on every ray
/// sample, possession by every player, or out-of-play at the center spot when
/// the frame is empty.
pub fn init_beam(obs: &FrameObservations, params: &ModelParams) -> Result<Beam, FilterError> {
    let rays = transition_gen::gen_ray_positions(obs, params);
    let r = params.physics.ball_radius;
    let seed = |position: Vec3, latent: LatentState| Hypothesis {
        frame: obs.frame,
        position,
        latent,
        log_weight: 0.0,
        parent: None,
    };
    let mut hypotheses: Vec<Hypothesis> = rays
        .points()
        .iter()
        .map(|p| seed(*p, LatentState::J { velocity: Vec3::zeros(), variance: params.sigma_g, visible: true }))
        .collect();
    hypotheses.extend(
        obs.players
            .iter()
            .enumerate()
            .map(|(i, g)| seed(Vec3::new(g.x, g.y, r), LatentState::P { player_index: i as u32 })),
    );
    if obs.detections.is_empty() && obs.players.is_empty() {
        hypotheses.push(seed(Vec3::new(0.0, 0.0, r), LatentState::O));
    }
    if hypotheses.is_empty() {
        return Err(FilterError::EmptyFrame { frame: obs.frame });
    }
    hypotheses.sort_by(rank_order);
    hypotheses.dedup_by_key(|h| params.dedup.key(&h.position, &h.latent));
    let mut slots: Vec<Slot> =
        hypotheses.into_iter().map(|hyp| Slot { hyp, key: params.dedup.key(&hyp.position, &hyp.latent) }).collect();
    select(&mut slots, params.beam_width, params.effective_quota());
    Ok(Beam { frame: obs.frame, hypotheses: slots.into_iter().map(|s| s.hyp).collect() })
}

#[derive(Clone, Copy)]
struct Slot {
    hyp: Hypothesis,
    key: StateKey,
}

fn slot_order(a: &Slot, b: &Slot) -> Ordering {
    rank_order_keyed(&a.hyp, &a.key, &b.hyp, &b.key)
}

/// Admission test of one part of the selection.
#[derive(Clone, Copy)]
enum Gate {
    Open,
    Closed,
    /// Only candidates ranked before this one get in.
    Above(Slot),
}

impl Gate {
    fn admits(&self, s: &Slot) -> bool {
        match self {
            Gate::Open => true,
            Gate::Closed => false,
            Gate::Above(cut) => slot_order(s, cut) == Ordering::Less,
        }
    }

    fn floor(&self) -> f64 {
        match self {
            Gate::Open => f64::NEG_INFINITY,
            Gate::Closed => f64::INFINITY,
            Gate::Above(cut) => cut.hyp.log_weight,
        }
    }
}

/// Picks the beam from deduplicated candidates: the best `quota` of each mode,
/// then the best of the rest up to `k` in total. Returns the survivors in rank
/// order together with the gates a later candidate must pass to displace one.
fn select(slots: &mut Vec<Slot>, k: usize, quota: usize) -> ([Gate; 4], Gate) {
    slots.sort_unstable_by(slot_order);
    let mut per_mode = [0usize; 4];
    let mut reserved = vec![false; slots.len()];
    let mut mode_gate = [if quota == 0 { Gate::Closed } else { Gate::Open }; 4];
    for (i, s) in slots.iter().enumerate() {
        let m = s.hyp.mode().index();
        if per_mode[m] < quota {
            per_mode[m] += 1;
            reserved[i] = true;
            if per_mode[m] == quota {
                mode_gate[m] = Gate::Above(*s);
            }
        }
    }
    let fill = k - per_mode.iter().sum::<usize>();
    let mut taken = 0;
    let mut last_fill = None;
    let mut i = 0;
    slots.retain(|s| {
        let keep = reserved[i] || taken < fill;
        if keep && !reserved[i] {
            taken += 1;
            last_fill = Some(*s);
        }
        i += 1;
        keep
    });
    let fill_gate = match (fill, last_fill) {
        (0, _) => Gate::Closed,
        (_, Some(cut)) if taken == fill => Gate::Above(cut),
        _ => Gate::Open,
    };
    (mode_gate, fill_gate)
}

/// Collects children with per-key max. Whenever enough distinct states pile
/// up, the current selection is made and everything outside it dropped; the
/// gates then turn away any later candidate that could not displace a
/// survivor.
struct BeamSink {
    k: usize,
    quota: usize,
    dedup: Dedup,
    parent: u32,
    frame: FrameIndex,
    mode_gate: [Gate; 4],
    fill_gate: Gate,
    floors: [f64; 4],
    slots: Vec<Slot>,
    index: FxHashMap<StateKey, u32>,
}

impl BeamSink {
    fn new(params: &ModelParams, frame: FrameIndex) -> Self {
        Self {
            k: params.beam_width,
            quota: params.effective_quota(),
            dedup: params.dedup,
            parent: 0,
            frame,
            mode_gate: [Gate::Open; 4],
            fill_gate: Gate::Open,
            floors: [f64::NEG_INFINITY; 4],
            slots: Vec::new(),
            index: FxHashMap::default(),
        }
    }

    fn prune(&mut self) {
        let (mode_gate, fill_gate) = select(&mut self.slots, self.k, self.quota);
        self.mode_gate = mode_gate;
        self.fill_gate = fill_gate;
        for m in 0..4 {
            self.floors[m] = mode_gate[m].floor().min(fill_gate.floor());
        }
        self.index.clear();
        for (i, s) in self.slots.iter().enumerate() {
            self.index.insert(s.key, i as u32);
        }
    }

    /// Lowest log-weight any child could still enter with.
    fn min_floor(&self) -> f64 {
        self.floors.iter().copied().fold(f64::INFINITY, f64::min)
    }

    fn finish(mut self) -> Vec<Hypothesis> {
        select(&mut self.slots, self.k, self.quota);
        self.slots.into_iter().map(|s| s.hyp).collect()
    }
}

impl CandidateSink for BeamSink {
    #[inline]
    fn floor(&self, mode: Mode) -> f64 {
        self.floors[mode.index()]
    }

    fn push(&mut self, parent: &Hypothesis, position: Vec3, latent: LatentState, delta: f64) {
        let hyp = Hypothesis {
            frame: self.frame,
            position,
            latent,
            log_weight: parent.log_weight + delta,
            parent: Some(self.parent),
        };
        let slot = Slot { hyp, key: self.dedup.key(&position, &latent) };
        if !self.fill_gate.admits(&slot) && !self.mode_gate[latent.mode().index()].admits(&slot) {
            return;
        }
        match self.index.get(&slot.key) {
            Some(&i) => {
                let held = &mut self.slots[i as usize];
                // Strictly greater: on a tie the earlier (better-ranked) parent stays.
                if hyp.log_weight > held.hyp.log_weight {
                    held.hyp = hyp;
                }
            }
            None => {
                self.index.insert(slot.key, self.slots.len() as u32);
                self.slots.push(slot);
                if self.slots.len() >= 2 * self.k.max(64) {
                    self.prune();
                }
            }
        }
    }
}

/// Largest score increment any child can receive in one frame.
fn max_delta(params: &ModelParams) -> f64 {
    let peak = -1.5 * (2.0 * PI * params.dt() * params.sigma_v).ln();
    params.transition.max_logp() + peak.max(params.logp_invisible).max(0.0)
}

/// Advances the beam by one frame.
///
/// Children of all parents are merged with one survivor per distinct state
/// and ranked by [`rank_order`]. The best `mode_quota` states of each mode are
/// kept, the rest of the beam is filled in rank order. The result equals a
/// full enumeration followed by the same selection; children that provably
/// cannot be selected are skipped without being built.
pub fn step(beam: &Beam, obs: &FrameObservations, params: &ModelParams) -> Result<Beam, FilterError> {
    if obs.frame != beam.frame + 1 {
        return Err(FilterError::FrameGap { expected: beam.frame + 1, found: obs.frame });
    }
    let rays = transition_gen::gen_ray_positions(obs, params);
    let bound = max_delta(params);
    let mut sink = BeamSink::new(params, obs.frame);
    for (i, parent) in beam.hypotheses.iter().enumerate() {
        if parent.log_weight + bound < sink.min_floor() {
            // Parents are sorted, so no later one can contribute either.
            break;
        }
        sink.parent = i as u32;
        transition_gen::expand_into(parent, obs, &rays, params, &mut sink)
            .map_err(|source| FilterError::Transition { frame: obs.frame, source })?;
    }
    let hypotheses = sink.finish();
    if hypotheses.is_empty() {
        return Err(FilterError::BeamExtinct { frame: obs.frame });
    }
    Ok(Beam { frame: obs.frame, hypotheses })
}

#[derive(Debug, Clone, Copy)]
struct Trace {
    position: Vec3,
    mode: Mode,
    log_weight: f64,
    parent: u32,
}

/// Recent beams reduced to what a backtrace needs.
#[derive(Debug, Clone)]
struct History {
    frames: VecDeque<Vec<Trace>>,
    last_frame: FrameIndex,
    capacity: usize,
    spare: Vec<Vec<Trace>>,
}

impl History {
    fn new(capacity: usize) -> Self {
        Self { frames: VecDeque::new(), last_frame: 0, capacity: capacity.max(1), spare: Vec::new() }
    }

    fn clear(&mut self) {
        self.spare.extend(self.frames.drain(..));
    }

    fn first_frame(&self) -> FrameIndex {
        self.last_frame + 1 - self.frames.len() as FrameIndex
    }

    fn push(&mut self, beam: &Beam) {
        if self.frames.len() == self.capacity {
            let old = self.frames.pop_front().expect("capacity is at least one");
            self.spare.push(old);
        }
        let mut traces = self.spare.pop().unwrap_or_default();
        traces.clear();
        traces.extend(beam.hypotheses.iter().map(|h| Trace {
            position: h.position,
            mode: h.mode(),
            log_weight: h.log_weight,
            parent: h.parent.unwrap_or(0),
        }));
        self.frames.push_back(traces);
        self.last_frame = beam.frame;
    }

    /// Best chain for frames `from..=last_frame`, oldest first.
    fn chain(&self, from: FrameIndex, finalized_through: Option<FrameIndex>) -> Vec<TrajectoryRecord> {
        if self.frames.is_empty() || from > self.last_frame {
            return Vec::new();
        }
        debug_assert!(from >= self.first_frame());
        let n = (self.last_frame - from + 1) as usize;
        let mut out = Vec::with_capacity(n);
        let mut idx = 0usize;
        for back in 0..n {
            let traces = &self.frames[self.frames.len() - 1 - back];
            let t = traces[idx];
            let frame = self.last_frame - back as FrameIndex;
            out.push(TrajectoryRecord {
                frame,
                position: t.position,
                mode: t.mode,
                log_weight: t.log_weight,
                finalized: finalized_through.is_some_and(|f| frame <= f),
            });
            idx = t.parent as usize;
        }
        out.reverse();
        out
    }
}

#[derive(Debug, Clone, Copy)]
struct LagState {
    lag: usize,
    /// First frame not yet handed out as finalized.
    next: Option<FrameIndex>,
}

/// Streaming filter with fixed-lag output for one or more lags.
///
/// A record for frame f is finalized once frame f + L has been processed and
/// is never revised afterwards; the last L frames stay soft. All lags share
/// one filter pass, so their outputs are the same as separate runs.
#[derive(Debug, Clone)]
pub struct Tracker {
    params: ModelParams,
    beam: Option<Beam>,
    history: History,
    lags: Vec<LagState>,
    discontinuities: Vec<FrameIndex>,
}

impl Tracker {
    pub fn new(params: ModelParams, lags: &[usize]) -> Self {
        let keep = lags.iter().copied().max().unwrap_or(0) + 1;
        Self::with_history(params, lags, keep)
    }

    /// Keeps every frame so that [`Tracker::best_chain`] can trace the whole run.
    pub fn unbounded(params: ModelParams, lags: &[usize]) -> Self {
        Self::with_history(params, lags, usize::MAX)
    }

    fn with_history(params: ModelParams, lags: &[usize], keep: usize) -> Self {
        Self {
            params,
            beam: None,
            history: History::new(keep),
            lags: lags.iter().map(|&lag| LagState { lag, next: None }).collect(),
            discontinuities: Vec::new(),
        }
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn beam(&self) -> Option<&Beam> {
        self.beam.as_ref()
    }

    pub fn lags(&self) -> Vec<usize> {
        self.lags.iter().map(|l| l.lag).collect()
    }

    /// Frames at which the beam died and was reseeded.
    pub fn discontinuities(&self) -> &[FrameIndex] {
        &self.discontinuities
    }

    /// Consumes one frame; returns the newly finalized records for each lag.
    pub fn process(&mut self, obs: &FrameObservations) -> Result<Vec<Vec<TrajectoryRecord>>, FilterError> {
        let mut out = vec![Vec::new(); self.lags.len()];
        let next = match &self.beam {
            None => init_beam(obs, &self.params)?,
            Some(beam) => match step(beam, obs, &self.params) {
                Ok(b) => b,
                Err(FilterError::BeamExtinct { frame }) => {
                    log::warn!("frame {frame}: beam extinct, reseeding");
                    let prev = self.history.last_frame;
                    for (slot, o) in out.iter_mut().enumerate() {
                        o.extend(self.commit(slot, prev));
                    }
                    self.history.clear();
                    self.discontinuities.push(frame);
                    init_beam(obs, &self.params)?
                }
                Err(e) => return Err(e),
            },
        };
        self.history.push(&next);
        self.beam = Some(next);
        let now = obs.frame;
        for (slot, o) in out.iter_mut().enumerate() {
            let lag = self.lags[slot].lag as FrameIndex;
            if let Some(through) = now.checked_sub(lag) {
                o.extend(self.commit(slot, through));
            }
        }
        Ok(out)
    }

    fn commit(&mut self, slot: usize, through: FrameIndex) -> Vec<TrajectoryRecord> {
        if self.history.frames.is_empty() {
            return Vec::new();
        }
        let from = self.lags[slot].next.unwrap_or(0).max(self.history.first_frame());
        if through < from {
            return Vec::new();
        }
        let mut recs = self.history.chain(from, Some(through));
        recs.truncate((through - from + 1) as usize);
        self.lags[slot].next = Some(through + 1);
        recs
    }

    /// Current best guess for the frames of lag slot `slot` not yet finalized.
    pub fn soft(&self, slot: usize) -> Vec<TrajectoryRecord> {
        if self.history.frames.is_empty() {
            return Vec::new();
        }
        let from = self.lags[slot].next.unwrap_or(0).max(self.history.first_frame());
        self.history.chain(from, None)
    }

    /// Flushes the soft window of every lag, marked not finalized.
    pub fn finish(&mut self) -> Vec<Vec<TrajectoryRecord>> {
        (0..self.lags.len())
            .map(|slot| {
                let recs = self.soft(slot);
                if let Some(last) = recs.last() {
                    self.lags[slot].next = Some(last.frame + 1);
                }
                recs
            })
            .collect()
    }

    /// Best chain over all retained frames, all marked finalized.
    pub fn best_chain(&self) -> Vec<TrajectoryRecord> {
        if self.history.frames.is_empty() {
            return Vec::new();
        }
        self.history.chain(self.history.first_frame(), Some(self.history.last_frame))
    }
}

/// Filters a whole clip and returns the best chain at the last frame.
///
/// If the beam dies mid-clip, the chain up to the break is kept and the rest
/// comes from the reseeded run.
pub fn run_offline(frames: &[FrameObservations], params: &ModelParams) -> Result<Vec<TrajectoryRecord>, FilterError> {
    if frames.is_empty() {
        return Err(FilterError::EmptyInput);
    }
    let mut tracker = Tracker::unbounded(*params, &[usize::MAX]);
    let mut out = Vec::with_capacity(frames.len());
    for obs in frames {
        out.extend(tracker.process(obs)?.swap_remove(0));
    }
    out.extend(tracker.finish().swap_remove(0));
    for r in &mut out {
        r.finalized = true;
    }
    Ok(out)
}
