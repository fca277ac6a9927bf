use rand::Rng;

use super::{directions, log_direction, mh_accept, Branch, MoveKind, MoveOutcome, LN_HALF};
use crate::birth::{extension_density, sample_extension, BirthConfig, ProposalContext};
use crate::model::{TargetState, Track};
use crate::representation::TrackSet;
use crate::state::{ChainState, Proposal};

pub(crate) fn extendable(tracks: &TrackSet) -> Vec<usize> {
    let n = tracks.frames();
    (0..tracks.len()).filter(|&i| tracks.get(i).len() < n).collect()
}

pub(crate) fn reducible(tracks: &TrackSet) -> Vec<usize> {
    (0..tracks.len()).filter(|&i| tracks.get(i).len() > 1).collect()
}

/// Joins a segment onto a track on the given side.
pub(crate) fn joined(track: &Track, segment: &[TargetState], forward: bool) -> Track {
    if forward {
        let mut states = track.states.clone();
        states.extend_from_slice(segment);
        Track::new(track.birth, states)
    } else {
        let mut states = segment.to_vec();
        states.extend_from_slice(&track.states);
        Track::new(track.birth - segment.len(), states)
    }
}

/// Splits `track` at `cut`. A forward cut keeps frames before `cut`; a
/// backward cut keeps frames after it. Returns (kept, discarded).
pub(crate) fn split(track: &Track, cut: usize, forward: bool) -> (Track, Vec<TargetState>) {
    let k = if forward { cut - track.birth } else { cut + 1 - track.birth };
    let (head, tail) = track.states.split_at(k);
    if forward {
        (Track::new(track.birth, head.to_vec()), tail.to_vec())
    } else {
        (Track::new(cut + 1, tail.to_vec()), head.to_vec())
    }
}

fn restore_of(segment: &[TargetState], first_frame: usize) -> Vec<(usize, TargetState)> {
    segment.iter().enumerate().map(|(i, x)| (first_frame + i, *x)).collect()
}

/// Extends a track by several frames using the data-driven construction, or
/// cuts it at a uniformly chosen point.
pub fn multistep_move<R: Rng + ?Sized>(state: &mut ChainState, cfg: &BirthConfig, rng: &mut R) -> MoveOutcome {
    let n = state.params.frames();
    if rng.random::<bool>() {
        let eligible = extendable(&state.tracks);
        if eligible.is_empty() {
            return MoveOutcome::noop(MoveKind::MultiStep, Branch::Extend);
        }
        let idx = eligible[rng.random_range(0..eligible.len())];
        let track = state.tracks.get(idx).clone();
        let forward = match directions(track.birth, track.end(), n) {
            (true, true) => rng.random::<bool>(),
            (f, _) => f,
        };
        let ctx = ProposalContext {
            tracks: &state.tracks,
            params: &state.params,
            scene: &state.scene,
            restore: &[],
            cfg,
        };
        let Some((segment, log_seg)) = sample_extension(&ctx, &track, forward, rng) else {
            return MoveOutcome::noop(MoveKind::MultiStep, Branch::Extend);
        };
        let log_qe = LN_HALF - (eligible.len() as f64).ln() + log_direction(track.birth, track.end(), n, forward) + log_seg;
        let (prop, log_ratio) = extension_log_ratio(state, idx, &segment, forward, log_qe);
        finish(state, prop, log_ratio, Branch::Extend, idx, rng)
    } else {
        let eligible = reducible(&state.tracks);
        if eligible.is_empty() {
            return MoveOutcome::noop(MoveKind::MultiStep, Branch::Reduce);
        }
        let idx = eligible[rng.random_range(0..eligible.len())];
        let track = state.tracks.get(idx);
        let forward = rng.random::<bool>();
        let cut = if forward {
            rng.random_range(track.birth + 1..track.end())
        } else {
            rng.random_range(track.birth..track.end() - 1)
        };
        let (prop, log_ratio) = reduction_log_ratio(state, idx, cut, forward, cfg);
        finish(state, prop, log_ratio, Branch::Reduce, idx, rng)
    }
}

fn finish<R: Rng + ?Sized>(
    state: &mut ChainState,
    prop: Proposal,
    log_ratio: f64,
    branch: Branch,
    idx: usize,
    rng: &mut R,
) -> MoveOutcome {
    let frame = Some(state.tracks.get(idx).birth);
    let accepted = mh_accept(log_ratio, rng);
    if accepted {
        state.commit(prop);
    }
    MoveOutcome { kind: MoveKind::MultiStep, branch, log_ratio, accepted, target: Some(idx), frame }
}

/// log reverse-reduction probability of picking `track` in `tracks` and
/// cutting exactly where the segment was joined.
fn log_reduce_select(tracks: &TrackSet, track: &Track) -> f64 {
    LN_HALF - (reducible(tracks).len() as f64).ln() + LN_HALF - ((track.len() - 1) as f64).ln()
}

/// log r₂ of extending the track at `idx` by `segment`, given the full
/// forward proposal density `log_qe`.
pub fn extension_log_ratio(
    state: &ChainState,
    idx: usize,
    segment: &[TargetState],
    forward: bool,
    log_qe: f64,
) -> (Proposal, f64) {
    let new = joined(state.tracks.get(idx), segment, forward);
    let prop = state.propose(&[idx], vec![new.clone()]);
    let lr = state.log_ratio(&prop) + log_reduce_select(&prop.tracks, &new) - log_qe;
    (prop, lr)
}

/// log r₂ of cutting the track at `idx` at frame `cut`.
pub fn reduction_log_ratio(
    state: &ChainState,
    idx: usize,
    cut: usize,
    forward: bool,
    cfg: &BirthConfig,
) -> (Proposal, f64) {
    let n = state.params.frames();
    let track = state.tracks.get(idx);
    let log_qr = log_reduce_select(&state.tracks, track);
    let (kept, discarded) = split(track, cut, forward);
    let first_discarded = if forward { kept.end() } else { track.birth };
    let prop = state.propose(&[idx], vec![kept.clone()]);
    let restore = restore_of(&discarded, first_discarded);
    let ctx = ProposalContext {
        tracks: &prop.tracks,
        params: &state.params,
        scene: &state.scene,
        restore: &restore,
        cfg,
    };
    let log_qe = LN_HALF - (extendable(&prop.tracks).len() as f64).ln()
        + log_direction(kept.birth, kept.end(), n, forward)
        + extension_density(&ctx, &kept, &discarded, forward);
    let lr = state.log_ratio(&prop) + log_qe - log_qr;
    (prop, lr)
}
