use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{log_prior, ImageStack, ModelParams, Track};
use crate::representation::TrackSet;
use crate::scene::{track_changes, Scene, SceneDelta};

/// Attempt and acceptance counts of one move family.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Counter {
    pub attempted: u64,
    pub accepted: u64,
}

impl Counter {
    pub fn rate(&self) -> f64 {
        if self.attempted == 0 {
            0.0
        } else {
            self.accepted as f64 / self.attempted as f64
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MoveStats {
    pub birth_death: Counter,
    pub multistep: Counter,
    pub onestep: Counter,
    pub swap: Counter,
}

/// One chain's current sample with cached likelihood pieces.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub tracks: TrackSet,
    pub params: ModelParams,
    pub scene: Scene,
    pub log_prior: f64,
    pub sweeps: u64,
    pub stats: MoveStats,
}

/// A candidate edit with its evaluated joint-density change.
#[derive(Debug, Clone)]
pub struct Proposal {
    pub tracks: TrackSet,
    pub log_prior: f64,
    pub delta: SceneDelta,
}

impl ChainState {
    pub fn new(tracks: TrackSet, params: ModelParams, y: &ImageStack) -> Result<Self> {
        params.validate()?;
        y.check_compatible(&params)?;
        let scene = Scene::new(tracks.tracks(), &params, y);
        let log_prior = log_prior(tracks.tracks(), &params);
        Ok(Self { tracks, params, scene, log_prior, sweeps: 0, stats: MoveStats::default() })
    }

    pub fn log_joint(&self) -> f64 {
        self.log_prior + self.scene.log_likelihood()
    }

    /// Evaluates removing the tracks at `remove` and inserting `add`.
    pub fn propose(&self, remove: &[usize], add: Vec<Track>) -> Proposal {
        let removed: Vec<&Track> = remove.iter().map(|&i| self.tracks.get(i)).collect();
        let delta = self.scene.delta(&track_changes(&removed, &add), &self.params);
        let tracks = self.tracks.edited(remove, add);
        let log_prior = log_prior(tracks.tracks(), &self.params);
        Proposal { tracks, log_prior, delta }
    }

    /// log π(proposal) − log π(current).
    pub fn log_ratio(&self, p: &Proposal) -> f64 {
        if p.log_prior == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        p.log_prior - self.log_prior + p.delta.log_likelihood
    }

    pub fn commit(&mut self, p: Proposal) {
        self.scene.apply(&p.delta);
        self.tracks = p.tracks;
        self.log_prior = p.log_prior;
    }

    /// Replaces the parameters and rebuilds every cached quantity.
    pub fn set_params(&mut self, params: ModelParams, y: &ImageStack) {
        self.params = params;
        self.rebuild(y);
    }

    pub fn rebuild(&mut self, y: &ImageStack) {
        self.scene = Scene::new(self.tracks.tracks(), &self.params, y);
        self.log_prior = log_prior(self.tracks.tracks(), &self.params);
    }

    /// Absolute difference between the cached and a fully recomputed log-joint.
    pub fn cache_drift(&self, y: &ImageStack) -> Result<f64> {
        let full = crate::model::log_joint(self.tracks.tracks(), &self.params, y)?;
        Ok((full - self.log_joint()).abs())
    }
}
