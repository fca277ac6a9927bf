use rand::Rng;

use super::multistep::{extendable, joined, reducible};
use super::{directions, log_direction, mh_accept, Branch, MoveKind, MoveOutcome, LN_HALF};
use crate::dynamics::{log_transition, sample_transition, BackwardConditional};
use crate::model::{ModelParams, TargetState, Track};
use crate::state::{ChainState, Proposal};

/// log-density of the single state added on the given side of `track`.
pub fn onestep_density(track: &Track, x: &TargetState, forward: bool, params: &ModelParams) -> f64 {
    if forward {
        log_transition(track.last(), x, params)
    } else {
        BackwardConditional::new(track.first(), params).log_density(x)
    }
}

/// Extends a track by one frame from the model dynamics, or removes its
/// first or last state.
pub fn onestep_move<R: Rng + ?Sized>(state: &mut ChainState, rng: &mut R) -> MoveOutcome {
    let n = state.params.frames();
    let (branch, idx, prop, log_ratio) = if rng.random::<bool>() {
        let eligible = extendable(&state.tracks);
        if eligible.is_empty() {
            return MoveOutcome::noop(MoveKind::OneStep, Branch::Extend);
        }
        let idx = eligible[rng.random_range(0..eligible.len())];
        let track = state.tracks.get(idx);
        let forward = match directions(track.birth, track.end(), n) {
            (true, true) => rng.random::<bool>(),
            (f, _) => f,
        };
        let x = if forward {
            sample_transition(track.last(), &state.params, rng)
        } else {
            BackwardConditional::new(track.first(), &state.params).sample(rng)
        };
        let (prop, lr) = onestep_extension_log_ratio(state, idx, x, forward);
        (Branch::Extend, idx, prop, lr)
    } else {
        let eligible = reducible(&state.tracks);
        if eligible.is_empty() {
            return MoveOutcome::noop(MoveKind::OneStep, Branch::Reduce);
        }
        let idx = eligible[rng.random_range(0..eligible.len())];
        let forward = rng.random::<bool>();
        let (prop, lr) = onestep_reduction_log_ratio(state, idx, forward);
        (Branch::Reduce, idx, prop, lr)
    };
    let frame = Some(state.tracks.get(idx).birth);
    let accepted = mh_accept(log_ratio, rng);
    if accepted {
        state.commit(prop);
    }
    MoveOutcome { kind: MoveKind::OneStep, branch, log_ratio, accepted, target: Some(idx), frame }
}

/// log probability of the reverse one-step reduction in `prop`.
fn log_reduce_select(count: usize) -> f64 {
    LN_HALF - (count as f64).ln() + LN_HALF
}

pub fn onestep_extension_log_ratio(state: &ChainState, idx: usize, x: TargetState, forward: bool) -> (Proposal, f64) {
    let n = state.params.frames();
    let track = state.tracks.get(idx);
    let log_qe = LN_HALF - (extendable(&state.tracks).len() as f64).ln()
        + log_direction(track.birth, track.end(), n, forward)
        + onestep_density(track, &x, forward, &state.params);
    let prop = state.propose(&[idx], vec![joined(track, &[x], forward)]);
    let lr = state.log_ratio(&prop) + log_reduce_select(reducible(&prop.tracks).len()) - log_qe;
    (prop, lr)
}

pub fn onestep_reduction_log_ratio(state: &ChainState, idx: usize, forward: bool) -> (Proposal, f64) {
    let n = state.params.frames();
    let track = state.tracks.get(idx);
    let log_qr = log_reduce_select(reducible(&state.tracks).len());
    let (kept, x) = if forward {
        (Track::new(track.birth, track.states[..track.len() - 1].to_vec()), *track.last())
    } else {
        (Track::new(track.birth + 1, track.states[1..].to_vec()), *track.first())
    };
    let log_qe_tail = onestep_density(&kept, &x, forward, &state.params);
    let prop = state.propose(&[idx], vec![kept.clone()]);
    let log_qe = LN_HALF - (extendable(&prop.tracks).len() as f64).ln()
        + log_direction(kept.birth, kept.end(), n, forward)
        + log_qe_tail;
    let lr = state.log_ratio(&prop) + log_qe - log_qr;
    (prop, lr)
}
