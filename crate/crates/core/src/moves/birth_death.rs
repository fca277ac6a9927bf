use rand::Rng;

use super::{mh_accept, Branch, MoveKind, MoveOutcome};
use crate::birth::{birth_density, sample_birth_track, BirthConfig, BirthOutcome, ProposalContext};
use crate::model::{TargetState, Track};
use crate::state::{ChainState, Proposal};

/// Birth of a new track or death of a uniformly chosen one, each with
/// probability ½.
pub fn birth_death_move<R: Rng + ?Sized>(state: &mut ChainState, cfg: &BirthConfig, rng: &mut R) -> MoveOutcome {
    if rng.random::<bool>() {
        let ctx = ProposalContext {
            tracks: &state.tracks,
            params: &state.params,
            scene: &state.scene,
            restore: &[],
            cfg,
        };
        let rec = match sample_birth_track(&ctx, rng, None) {
            BirthOutcome::Proposed(rec) => rec,
            BirthOutcome::Rejected(_) => return MoveOutcome::noop(MoveKind::BirthDeath, Branch::Birth),
        };
        let frame = Some(rec.track.birth);
        let (prop, log_ratio) = birth_log_ratio(state, rec.track, rec.log_density);
        let accepted = mh_accept(log_ratio, rng);
        if accepted {
            state.commit(prop);
        }
        MoveOutcome { kind: MoveKind::BirthDeath, branch: Branch::Birth, log_ratio, accepted, target: None, frame }
    } else {
        if state.tracks.is_empty() {
            return MoveOutcome::noop(MoveKind::BirthDeath, Branch::Death);
        }
        let idx = rng.random_range(0..state.tracks.len());
        let frame = Some(state.tracks.get(idx).birth);
        let (prop, log_ratio) = death_log_ratio(state, idx, cfg);
        let accepted = mh_accept(log_ratio, rng);
        if accepted {
            state.commit(prop);
        }
        MoveOutcome {
            kind: MoveKind::BirthDeath,
            branch: Branch::Death,
            log_ratio,
            accepted,
            target: Some(idx),
            frame,
        }
    }
}

/// log r₁ for adding `track`, proposed with log-density `log_qb`.
pub fn birth_log_ratio(state: &ChainState, track: Track, log_qb: f64) -> (Proposal, f64) {
    let prop = state.propose(&[], vec![track]);
    let log_qd = -(prop.tracks.len() as f64).ln();
    let lr = state.log_ratio(&prop) + log_qd - log_qb;
    (prop, lr)
}

/// log r₁ for deleting the track at `idx`.
pub fn death_log_ratio(state: &ChainState, idx: usize, cfg: &BirthConfig) -> (Proposal, f64) {
    let track = state.tracks.get(idx);
    let log_qd = -(state.tracks.len() as f64).ln();
    let prop = state.propose(&[idx], vec![]);
    let restore: Vec<(usize, TargetState)> =
        track.states.iter().enumerate().map(|(i, x)| (track.birth + i, *x)).collect();
    let ctx = ProposalContext {
        tracks: &prop.tracks,
        params: &state.params,
        scene: &state.scene,
        restore: &restore,
        cfg,
    };
    let log_qb = birth_density(track, &ctx);
    let lr = state.log_ratio(&prop) + log_qb - log_qd;
    (prop, lr)
}
