//! Reversible-jump moves over target configurations.
//!
//! Every move draws a proposal, evaluates the log acceptance ratio and
//! commits on acceptance. Frame-boundary cases are excluded from eligibility
//! rather than clamped.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::birth::BirthConfig;
use crate::state::{ChainState, Counter};

pub mod birth_death;
pub mod multistep;
pub mod onestep;
pub mod swap;

pub use birth_death::{birth_death_move, birth_log_ratio, death_log_ratio};
pub use multistep::multistep_move;
pub use onestep::onestep_move;
pub use swap::{state_swap_move, swap_log_ratio};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MoveKind {
    BirthDeath,
    MultiStep,
    OneStep,
    Swap,
}

impl MoveKind {
    pub const ALL: [MoveKind; 4] = [MoveKind::BirthDeath, MoveKind::MultiStep, MoveKind::OneStep, MoveKind::Swap];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Birth,
    Death,
    Extend,
    Reduce,
    Swap,
}

/// Result of one move attempt.
#[derive(Debug, Clone, PartialEq)]
pub struct MoveOutcome {
    pub kind: MoveKind,
    pub branch: Branch,
    /// −∞ for no-ops and aborted proposals.
    pub log_ratio: f64,
    pub accepted: bool,
    /// Index of the selected track in the pre-move configuration.
    pub target: Option<usize>,
    pub frame: Option<usize>,
}

impl MoveOutcome {
    pub(crate) fn noop(kind: MoveKind, branch: Branch) -> Self {
        Self { kind, branch, log_ratio: f64::NEG_INFINITY, accepted: false, target: None, frame: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MoveConfig {
    /// Probabilities of birth/death, multi-step, one-step and swap moves.
    pub probs: [f64; 4],
    pub birth: BirthConfig,
}

impl Default for MoveConfig {
    fn default() -> Self {
        Self { probs: [0.25; 4], birth: BirthConfig::default() }
    }
}

/// Metropolis–Hastings accept step on the log scale.
pub(crate) fn mh_accept<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    if log_ratio.is_nan() {
        return false;
    }
    log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio
}

pub(crate) const LN_HALF: f64 = -std::f64::consts::LN_2;

/// Eligible directions for extending a track: (forward, backward).
pub(crate) fn directions(birth: usize, end: usize, n: usize) -> (bool, bool) {
    (end < n, birth > 0)
}

/// log probability of choosing `forward` among the eligible directions.
pub(crate) fn log_direction(birth: usize, end: usize, n: usize, forward: bool) -> f64 {
    match directions(birth, end, n) {
        (true, true) => LN_HALF,
        (f, b) if (forward && f) || (!forward && b) => 0.0,
        _ => f64::NEG_INFINITY,
    }
}

/// Runs one move chosen from `cfg.probs` and updates the counters.
pub fn sweep<R: Rng + ?Sized>(state: &mut ChainState, cfg: &MoveConfig, rng: &mut R) -> MoveOutcome {
    let total: f64 = cfg.probs.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut kind = MoveKind::ALL
        .iter()
        .zip(cfg.probs)
        .filter(|(_, p)| *p > 0.0)
        .map(|(k, _)| *k)
        .last()
        .unwrap_or(MoveKind::BirthDeath);
    for (k, p) in MoveKind::ALL.iter().zip(cfg.probs) {
        if u < p {
            kind = *k;
            break;
        }
        u -= p;
    }
    let out = match kind {
        MoveKind::BirthDeath => birth_death_move(state, &cfg.birth, rng),
        MoveKind::MultiStep => multistep_move(state, &cfg.birth, rng),
        MoveKind::OneStep => onestep_move(state, rng),
        MoveKind::Swap => state_swap_move(state, rng),
    };
    let c: &mut Counter = match kind {
        MoveKind::BirthDeath => &mut state.stats.birth_death,
        MoveKind::MultiStep => &mut state.stats.multistep,
        MoveKind::OneStep => &mut state.stats.onestep,
        MoveKind::Swap => &mut state.stats.swap,
    };
    c.attempted += 1;
    c.accepted += out.accepted as u64;
    state.sweeps += 1;
    out
}
