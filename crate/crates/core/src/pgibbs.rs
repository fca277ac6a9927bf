//! Conditional SMC refresh of one target's trajectory with the others held
//! fixed.
//!
//! The track keeps its birth frame and length. Particles are proposed from
//! the model dynamics and weighted by the residual image likelihood, so the
//! kernel leaves the full conditional of the track invariant.

use log::warn;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{log_transition, sample_initial, sample_transition};
use crate::error::{Error, Result};
use crate::filtering::{residual_frame, ResidualFrame};
use crate::model::{states_at, ImageStack, ModelParams, TargetState, Track};
use crate::state::ChainState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resampling {
    #[default]
    Multinomial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetOrder {
    /// Canonical label order at the start of the sweep.
    Fixed,
    /// A fresh uniform permutation every sweep.
    #[default]
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsmcConfig {
    pub particles: usize,
    pub resampling: Resampling,
    pub ancestor_sampling: bool,
    pub order: TargetOrder,
}

impl Default for CsmcConfig {
    fn default() -> Self {
        Self { particles: 15, resampling: Resampling::Multinomial, ancestor_sampling: true, order: TargetOrder::Random }
    }
}

/// Change in frame log-likelihood from adding `x` to residual `res`.
fn log_weight(res: &ResidualFrame, x: &TargetState, params: &ModelParams) -> f64 {
    let var = params.noise_var[res.t];
    let mut acc = 0.0;
    params.geometry.for_each_footprint(x.s, |i, h| {
        let m = x.a * h;
        acc += m * (2.0 * res.values[i] - m);
    });
    acc / (2.0 * var)
}

/// Draws an index proportional to `exp(logw)`; `None` if every weight
/// vanishes.
fn draw<R: Rng + ?Sized>(logw: &[f64], rng: &mut R) -> Option<usize> {
    let m = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return None;
    }
    let w: Vec<f64> = logw.iter().map(|l| (l - m).exp()).collect();
    WeightedIndex::new(&w).ok().map(|d| d.sample(rng))
}

/// Conditional SMC over the frames of `reference`, given residual frames
/// (one per frame of the track, the track itself removed).
pub fn csmc_core<R: Rng + ?Sized>(
    reference: &Track,
    residual: &[ResidualFrame],
    params: &ModelParams,
    cfg: &CsmcConfig,
    rng: &mut R,
) -> Result<Track> {
    let n = cfg.particles;
    if n == 0 {
        return Err(Error::InvalidParams("particle count must be at least 1".into()));
    }
    if residual.len() != reference.len() {
        return Err(Error::Dimension("one residual frame per track frame".into()));
    }
    if n == 1 {
        return Ok(reference.clone());
    }
    let r = n - 1;
    let len = reference.len();
    let mut particles: Vec<Vec<TargetState>> = Vec::with_capacity(len);
    let mut ancestors: Vec<Vec<usize>> = Vec::with_capacity(len);
    let mut logw: Vec<f64>;

    let mut first: Vec<TargetState> = (0..r).map(|_| sample_initial(&params.psi, rng)).collect();
    first.push(reference.states[0]);
    logw = first.iter().map(|x| log_weight(&residual[0], x, params)).collect();
    particles.push(first);
    ancestors.push((0..n).collect());

    for k in 1..len {
        let prev = &particles[k - 1];
        let Some(dist) = WeightedIndex::new(normalised(&logw)).ok() else {
            warn!("particle weights degenerate; keeping the reference trajectory");
            return Ok(reference.clone());
        };
        let mut anc: Vec<usize> = (0..r).map(|_| dist.sample(rng)).collect();
        let x_ref = reference.states[k];
        let a_ref = if cfg.ancestor_sampling {
            let la: Vec<f64> = prev.iter().zip(&logw).map(|(p, w)| w + log_transition(p, &x_ref, params)).collect();
            draw(&la, rng).unwrap_or(r)
        } else {
            r
        };
        anc.push(a_ref);
        let mut cur: Vec<TargetState> = anc[..r].iter().map(|&a| sample_transition(&prev[a], params, rng)).collect();
        cur.push(x_ref);
        logw = cur.iter().map(|x| log_weight(&residual[k], x, params)).collect();
        particles.push(cur);
        ancestors.push(anc);
    }

    let Some(mut b) = draw(&logw, rng) else {
        warn!("particle weights degenerate; keeping the reference trajectory");
        return Ok(reference.clone());
    };
    let mut states = vec![reference.states[0]; len];
    for k in (0..len).rev() {
        states[k] = particles[k][b];
        b = ancestors[k][b];
    }
    Ok(Track::new(reference.birth, states))
}

fn normalised(logw: &[f64]) -> Vec<f64> {
    let m = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return vec![0.0; logw.len()];
    }
    logw.iter().map(|l| (l - m).exp()).collect()
}

/// Refreshes `track` given the other tracks and the data.
pub fn csmc_refresh<R: Rng + ?Sized>(
    track: &Track,
    others: &[Track],
    y: &ImageStack,
    params: &ModelParams,
    cfg: &CsmcConfig,
    rng: &mut R,
) -> Result<Track> {
    y.check_compatible(params)?;
    if track.end() > params.frames() {
        return Err(Error::Dimension("track extends past the last frame".into()));
    }
    let residual: Vec<ResidualFrame> = (track.birth..track.end())
        .map(|t| residual_frame(y.frame(t), &states_at(others, t), t, params))
        .collect();
    csmc_core(track, &residual, params, cfg, rng)
}

/// One particle Gibbs pass over every target of the chain.
pub fn refresh_all<R: Rng + ?Sized>(state: &mut ChainState, cfg: &CsmcConfig, rng: &mut R) -> Result<()> {
    let mut order: Vec<Track> = state.tracks.tracks().to_vec();
    if cfg.order == TargetOrder::Random {
        order.shuffle(rng);
    }
    for reference in order {
        let idx = state
            .tracks
            .find_at(reference.birth, reference.first().s)
            .ok_or_else(|| Error::Invariant("track vanished during refresh".into()))?;
        let residual: Vec<ResidualFrame> = (reference.birth..reference.end())
            .map(|t| state.scene.residual_frame(t, reference.state_at(t)))
            .collect();
        let fresh = csmc_core(&reference, &residual, &state.params, cfg, rng)?;
        if fresh != reference {
            let prop = state.propose(&[idx], vec![fresh]);
            state.commit(prop);
        }
    }
    Ok(())
}
