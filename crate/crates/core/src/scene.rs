//! Incremental image likelihood.
//!
//! The scene keeps the residual image `y − b − Σ h(x)` of every frame and the
//! per-frame log-likelihood. Adding or removing a target touches only its
//! truncation square, so a move costs O(l²) per changed state.

use std::cell::OnceCell;

use crate::filtering::{match_filter, FilteredFrame, ResidualFrame};
use crate::gaussian::LN_2PI;
use crate::model::{log_likelihood_frame, states_at, Geometry, ImageStack, ModelParams, TargetState, Track};

/// A state entering (`added = true`) or leaving the hypothesis at frame `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateChange {
    pub t: usize,
    pub state: TargetState,
    pub added: bool,
}

/// Residual changes and log-likelihood differences of a candidate edit.
#[derive(Debug, Clone, Default)]
pub struct SceneDelta {
    frames: Vec<(usize, Vec<(usize, f64)>, f64)>,
    pub log_likelihood: f64,
}

#[derive(Debug, Clone)]
pub struct Scene {
    geometry: Geometry,
    frames: usize,
    residual: Vec<f64>,
    loglik: Vec<f64>,
    filtered: Vec<OnceCell<FilteredFrame>>,
}

impl Scene {
    pub fn new(tracks: &[Track], params: &ModelParams, y: &ImageStack) -> Self {
        let g = params.geometry;
        let n = params.frames();
        let m = g.pixels();
        let mut residual = Vec::with_capacity(n * m);
        let mut loglik = Vec::with_capacity(n);
        for t in 0..n {
            let b = params.background[t];
            let start = residual.len();
            residual.extend(y.frame(t).iter().map(|v| v - b));
            let frame = &mut residual[start..];
            for x in states_at(tracks, t) {
                g.for_each_footprint(x.s, |i, h| frame[i] -= x.a * h);
            }
            let zeros = vec![0.0; m];
            loglik.push(log_likelihood_frame(frame, &zeros, params.noise_var[t]));
        }
        Self { geometry: g, frames: n, residual, loglik, filtered: (0..n).map(|_| OnceCell::new()).collect() }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn residual(&self, t: usize) -> &[f64] {
        let m = self.geometry.pixels();
        &self.residual[t * m..(t + 1) * m]
    }

    /// Residual of frame `t` with the `restore` states removed from the
    /// hypothesis (their contribution added back).
    pub fn residual_frame<'a>(&self, t: usize, restore: impl IntoIterator<Item = &'a TargetState>) -> ResidualFrame {
        let mut res = ResidualFrame {
            t,
            rows: self.geometry.rows,
            cols: self.geometry.cols,
            values: self.residual(t).to_vec(),
        };
        for x in restore {
            res.add_target(x, &self.geometry);
        }
        res
    }

    /// Cached full-frame matched filter of the current residual.
    pub fn filtered(&self, t: usize, params: &ModelParams) -> &FilteredFrame {
        self.filtered[t].get_or_init(|| match_filter(&self.residual_frame(t, []), params))
    }

    pub fn frame_log_likelihood(&self, t: usize) -> f64 {
        self.loglik[t]
    }

    pub fn log_likelihood(&self) -> f64 {
        self.loglik.iter().sum()
    }

    pub fn delta(&self, changes: &[StateChange], params: &ModelParams) -> SceneDelta {
        let mut touched: Vec<usize> = changes.iter().map(|c| c.t).collect();
        touched.sort_unstable();
        touched.dedup();
        let mut out = SceneDelta::default();
        for t in touched {
            let mut d: Vec<(usize, f64)> = Vec::new();
            for c in changes.iter().filter(|c| c.t == t) {
                let sign = if c.added { -c.state.a } else { c.state.a };
                self.geometry.for_each_footprint(c.state.s, |i, h| d.push((i, sign * h)));
            }
            d.sort_by_key(|p| p.0);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(d.len());
            for (i, v) in d {
                match merged.last_mut() {
                    Some(last) if last.0 == i => last.1 += v,
                    _ => merged.push((i, v)),
                }
            }
            let r = self.residual(t);
            let inv = 0.5 / params.noise_var[t];
            let dll: f64 = merged.iter().map(|&(i, v)| -(v * (2.0 * r[i] + v)) * inv).sum();
            out.log_likelihood += dll;
            out.frames.push((t, merged, dll));
        }
        out
    }

    pub fn apply(&mut self, delta: &SceneDelta) {
        let m = self.geometry.pixels();
        for (t, d, dll) in &delta.frames {
            let frame = &mut self.residual[t * m..(t + 1) * m];
            for &(i, v) in d {
                frame[i] += v;
            }
            self.loglik[*t] += dll;
            self.filtered[*t] = OnceCell::new();
        }
    }

    /// Recomputes every frame's log-likelihood from the stored residuals and
    /// returns the largest absolute correction.
    pub fn resync_likelihood(&mut self, params: &ModelParams) -> f64 {
        let mut worst: f64 = 0.0;
        for t in 0..self.frames {
            let r = self.residual(t);
            let ss: f64 = r.iter().map(|v| v * v).sum();
            let var = params.noise_var[t];
            let fresh = -0.5 * r.len() as f64 * (LN_2PI + var.ln()) - 0.5 * ss / var;
            worst = worst.max((fresh - self.loglik[t]).abs());
            self.loglik[t] = fresh;
        }
        worst
    }
}

/// Changes turning `removed` tracks into `added` tracks.
pub fn track_changes(removed: &[&Track], added: &[Track]) -> Vec<StateChange> {
    let mut out = Vec::new();
    for k in removed {
        for (i, x) in k.states.iter().enumerate() {
            out.push(StateChange { t: k.birth + i, state: *x, added: false });
        }
    }
    for k in added {
        for (i, x) in k.states.iter().enumerate() {
            out.push(StateChange { t: k.birth + i, state: *x, added: true });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{log_likelihood, sample_images, sample_prior_tracks, DynamicsParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params() -> ModelParams {
        let psi = DynamicsParams {
            mu_bi: 20.0,
            mu_bx: 6.0,
            mu_by: 6.0,
            var_bi: 4.0,
            var_bp: 6.0,
            var_bv: 1.0,
            var_i: 0.5,
            var_x: 0.3,
            var_y: 0.3,
        };
        ModelParams::uniform(psi, 0.8, 1.0, 1.5, 2.0, 4, Geometry::new(12, 12, 1.0, 1.0, 5), 1.0)
    }

    #[test]
    fn incremental_matches_full() {
        let p = params();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            let old = sample_prior_tracks(&p, &mut rng);
            let new = sample_prior_tracks(&p, &mut rng);
            let y = sample_images(&old, &p, &mut rng);
            let mut scene = Scene::new(&old, &p, &y);
            let full_old = log_likelihood(&old, &p, &y).unwrap();
            assert!((scene.log_likelihood() - full_old).abs() < 1e-9 * full_old.abs());
            let removed: Vec<&Track> = old.iter().collect();
            let delta = scene.delta(&track_changes(&removed, &new), &p);
            let full_new = log_likelihood(&new, &p, &y).unwrap();
            let inc = full_old + delta.log_likelihood;
            assert!((inc - full_new).abs() < 1e-9 * full_new.abs(), "{inc} vs {full_new}");
            scene.apply(&delta);
            assert!(scene.resync_likelihood(&p) < 1e-9 * full_new.abs());
            let fresh = Scene::new(&new, &p, &y);
            for t in 0..4 {
                for (a, b) in scene.residual(t).iter().zip(fresh.residual(t)) {
                    assert!((a - b).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn restore_adds_contributions_back() {
        let p = params();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let tracks = sample_prior_tracks(&p, &mut rng);
        let y = sample_images(&tracks, &p, &mut rng);
        let scene = Scene::new(&tracks, &p, &y);
        let t = 1;
        let at_t = states_at(&tracks, t);
        let res = scene.residual_frame(t, at_t.iter());
        let empty = Scene::new(&[], &p, &y);
        for (a, b) in res.values.iter().zip(empty.residual(t)) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}
