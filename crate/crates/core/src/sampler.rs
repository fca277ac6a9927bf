//! Outer loop: n₁ reversible-jump moves, n₂ particle Gibbs passes and n₃
//! parameter updates per iteration.

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ImageStack, ModelParams};
use crate::moves::{sweep, MoveConfig};
use crate::params::{gibbs_update, mh_update, LearnConfig, MhConfig, PriorConfig};
use crate::pgibbs::{refresh_all, CsmcConfig};
use crate::representation::TrackSet;
use crate::state::ChainState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub n1: usize,
    pub n2: usize,
    pub n3: usize,
    pub iterations: usize,
    /// Leading iterations that skip the parameter loop, so θ is first
    /// updated from tracks found under θ⁰ rather than from an empty state.
    pub warmup: usize,
    /// Fraction of iterations discarded as burn-in by downstream summaries.
    pub burn_in: f64,
    pub moves: MoveConfig,
    pub csmc: CsmcConfig,
    pub learn: LearnConfig,
    pub prior: PriorConfig,
    /// Optional random-walk MH on θ after the Gibbs update; zero steps skip it.
    pub mh: MhConfig,
    /// Iterations between full recomputations of the cached log-joint.
    pub check_every: usize,
    pub drift_tolerance: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n1: 30,
            n2: 1,
            n3: 0,
            iterations: 1000,
            warmup: 0,
            burn_in: 0.25,
            moves: MoveConfig::default(),
            csmc: CsmcConfig::default(),
            learn: LearnConfig::default(),
            prior: PriorConfig::default(),
            mh: MhConfig::default(),
            check_every: 50,
            drift_tolerance: 1e-6,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.csmc.particles == 0 {
            return Err(Error::InvalidParams("particle count must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.burn_in) {
            return Err(Error::InvalidParams("burn-in fraction must lie in [0, 1)".into()));
        }
        if self.moves.probs.iter().any(|p| !(*p >= 0.0)) || self.moves.probs.iter().sum::<f64>() <= 0.0 {
            return Err(Error::InvalidParams("move probabilities must be non-negative and not all zero".into()));
        }
        self.prior.validate()
    }

    /// Number of leading iterations treated as burn-in.
    pub fn burn_in_iterations(&self) -> usize {
        (self.burn_in * self.iterations as f64).floor() as usize
    }
}

/// Acceptance rates of the four move families.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Acceptance {
    pub bd: f64,
    pub ms: f64,
    pub os: f64,
    pub ss: f64,
}

/// Per-iteration diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub iter: usize,
    pub log_joint: f64,
    #[serde(rename = "K")]
    pub k: usize,
    pub acc: Acceptance,
    pub counts: Vec<usize>,
}

/// One emitted sample.
#[derive(Debug, Clone)]
pub struct Sample {
    pub tracks: TrackSet,
    pub params: ModelParams,
    pub diagnostics: Diagnostics,
}

/// Empty track set under θ⁰.
pub fn init_chain(y: &ImageStack, theta0: ModelParams) -> Result<ChainState> {
    ChainState::new(TrackSet::empty(theta0.frames()), theta0, y)
}

fn diagnostics(state: &ChainState, iter: usize) -> Diagnostics {
    let s = &state.stats;
    let n = state.params.frames();
    Diagnostics {
        iter,
        log_joint: state.log_joint(),
        k: state.tracks.len(),
        acc: Acceptance {
            bd: s.birth_death.rate(),
            ms: s.multistep.rate(),
            os: s.onestep.rate(),
            ss: s.swap.rate(),
        },
        counts: (0..n).map(|t| state.tracks.count_at(t)).collect(),
    }
}

/// Runs one outer iteration; `learn` gates the parameter loop.
pub fn iterate<R: Rng + ?Sized>(
    state: &mut ChainState,
    y: &ImageStack,
    cfg: &SamplerConfig,
    learn: bool,
    rng: &mut R,
) -> Result<()> {
    for _ in 0..cfg.n1 {
        sweep(state, &cfg.moves, rng);
    }
    for _ in 0..cfg.n2 {
        refresh_all(state, &cfg.csmc, rng)?;
    }
    for _ in 0..if learn { cfg.n3 } else { 0 } {
        gibbs_update(state, y, &cfg.prior, &cfg.learn, rng);
        if cfg.mh != MhConfig::default() {
            mh_update(state, y, &cfg.prior, cfg.learn.observation_model, &cfg.mh, rng)?;
        }
    }
    Ok(())
}

/// Runs `cfg.iterations` outer iterations, passing every sample to `sink`.
pub fn run_chain<R: Rng + ?Sized>(
    y: &ImageStack,
    mut state: ChainState,
    cfg: &SamplerConfig,
    rng: &mut R,
    mut sink: impl FnMut(&Sample) -> Result<()>,
) -> Result<ChainState> {
    cfg.validate()?;
    for iter in 0..cfg.iterations {
        iterate(&mut state, y, cfg, iter >= cfg.warmup, rng)?;
        if cfg.check_every > 0 && (iter + 1) % cfg.check_every == 0 {
            let drift = state.cache_drift(y)?;
            if !drift.is_finite() {
                return Err(Error::Numerical(format!("log-joint is not finite at iteration {iter}")));
            }
            if drift > cfg.drift_tolerance {
                warn!("cached log-joint drifted by {drift:.3e} at iteration {iter}; rebuilding");
            }
            state.rebuild(y);
        }
        let lj = state.log_joint();
        if !lj.is_finite() {
            return Err(Error::Numerical(format!("log-joint is {lj} at iteration {iter}")));
        }
        sink(&Sample { tracks: state.tracks.clone(), params: state.params.clone(), diagnostics: diagnostics(&state, iter) })?;
    }
    Ok(state)
}

/// Convenience wrapper collecting every sample.
pub fn run_collect<R: Rng + ?Sized>(
    y: &ImageStack,
    state: ChainState,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<(Vec<Sample>, ChainState)> {
    let mut out = Vec::with_capacity(cfg.iterations);
    let state = run_chain(y, state, cfg, rng, |s| {
        out.push(s.clone());
        Ok(())
    })?;
    Ok((out, state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{log_joint, sample_images, DynamicsParams, Geometry, TargetState, Track};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (ImageStack, ModelParams) {
        let p = ModelParams::uniform(
            DynamicsParams::from_array([30.0, 6.0, 6.0, 4.0, 4.0, 0.5, 0.5, 0.2, 0.2]),
            0.9,
            0.3,
            0.0,
            1.0,
            3,
            Geometry::new(12, 12, 1.0, 1.0, 5),
            1.0,
        );
        let truth = vec![Track::new(0, vec![TargetState::new(30.0, [5.0, 5.0], [0.5, 0.0]); 3])];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        (sample_images(&truth, &p, &mut rng), p)
    }

    fn small() -> SamplerConfig {
        SamplerConfig { n1: 5, iterations: 20, check_every: 5, ..Default::default() }
    }

    #[test]
    fn empty_init_matches_closed_form() {
        let (y, p) = setup();
        let s = init_chain(&y, p.clone()).unwrap();
        assert!((s.log_joint() - log_joint(&[], &p, &y).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn invalid_theta_rejected() {
        let (y, mut p) = setup();
        p.psi.var_i = 0.0;
        assert!(init_chain(&y, p).is_err());
    }

    #[test]
    fn tracker_mode_keeps_theta() {
        let (y, p) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (samples, _) = run_collect(&y, init_chain(&y, p.clone()).unwrap(), &small(), &mut rng).unwrap();
        assert_eq!(samples.len(), 20);
        assert!(samples.iter().all(|s| s.params == p));
    }

    #[test]
    fn same_seed_same_stream() {
        let (y, p) = setup();
        let cfg = SamplerConfig { n3: 1, ..small() };
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            run_collect(&y, init_chain(&y, p.clone()).unwrap(), &cfg, &mut rng).unwrap().0
        };
        let (a, b) = (run(9), run(9));
        for (x, z) in a.iter().zip(&b) {
            assert_eq!(x.tracks, z.tracks);
            assert_eq!(x.params, z.params);
            assert_eq!(x.diagnostics, z.diagnostics);
        }
    }

    #[test]
    fn counters_match_sweeps() {
        let (y, p) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = small();
        let (_, state) = run_collect(&y, init_chain(&y, p).unwrap(), &cfg, &mut rng).unwrap();
        let s = &state.stats;
        let attempted = s.birth_death.attempted + s.multistep.attempted + s.onestep.attempted + s.swap.attempted;
        assert_eq!(attempted, (cfg.n1 * cfg.iterations) as u64);
        assert_eq!(state.sweeps, attempted);
    }

    #[test]
    fn warmup_holds_theta() {
        let (y, p) = setup();
        let cfg = SamplerConfig { n3: 1, warmup: 10, ..small() };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (samples, _) = run_collect(&y, init_chain(&y, p.clone()).unwrap(), &cfg, &mut rng).unwrap();
        assert!(samples[..10].iter().all(|s| s.params == p));
        assert!(samples[10..].iter().all(|s| s.params != p));
    }

    #[test]
    fn default_sweep_sizes() {
        let c = SamplerConfig::default();
        assert_eq!((c.n1, c.n2, c.csmc.particles), (30, 1, 15));
    }
}
