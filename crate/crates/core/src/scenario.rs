//! Desk-scale synthetic experiment: a small image sequence with a handful of
//! targets drawn from the model, one pair of which crosses.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{sample_images, sample_prior_tracks, DynamicsParams, Geometry, ImageStack, ModelParams, Track};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub rows: usize,
    pub cols: usize,
    pub frames: usize,
    pub targets: usize,
    /// Minimum distance from the image border of every true position.
    pub margin: f64,
    /// A crossing pair must come closer than this at some frame.
    pub crossing_distance: f64,
    pub max_attempts: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self { rows: 64, cols: 64, frames: 20, targets: 5, margin: 2.0, crossing_distance: 1.5, max_attempts: 1_000_000 }
    }
}

/// True parameters of the scaled experiment. The birth position mean sits
/// at the image centre so births land inside the smaller image.
pub fn true_params(cfg: &ScenarioConfig) -> ModelParams {
    let psi = DynamicsParams::from_array([
        30.0,
        cfg.rows as f64 / 2.0,
        cfg.cols as f64 / 2.0,
        4.0,
        25.0,
        3.0,
        0.5,
        0.3,
        0.7,
    ]);
    ModelParams::uniform(psi, 0.95, 0.25, 0.0, 1.0, cfg.frames, Geometry::new(cfg.rows, cfg.cols, 1.0, 1.0, 5), 1.0)
}

/// Deliberately wrong starting point for parameter learning: every
/// component moved the way the full-scale experiment perturbs it.
pub fn perturbed_params(truth: &ModelParams) -> ModelParams {
    let mut p = truth.clone();
    p.psi = DynamicsParams {
        mu_bi: 45.0,
        mu_bx: truth.psi.mu_bx + 10.0,
        mu_by: truth.psi.mu_by + 5.0,
        var_bi: 8.0,
        var_bp: 50.0,
        var_bv: 6.0,
        var_i: 3.0,
        var_x: 1.0,
        var_y: 1.5,
    };
    p.survival = 0.6;
    p.birth_rate = 1.0;
    p.noise_var = vec![4.0; truth.frames()];
    p
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub params: ModelParams,
    pub truth: Vec<Track>,
    pub y: ImageStack,
    /// Prior draws rejected before one met the constraints.
    pub attempts: usize,
}

/// Whether two tracks swap sides along some axis between consecutive frames
/// while passing within `d` of each other.
pub fn crosses(a: &Track, b: &Track, d: f64) -> bool {
    let lo = a.birth.max(b.birth);
    let hi = a.end().min(b.end());
    if hi <= lo + 1 {
        return false;
    }
    let close = (lo..hi).any(|t| {
        let (x, y) = (a.state_at(t).unwrap().s, b.state_at(t).unwrap().s);
        ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)).sqrt() < d
    });
    let swapped = (0..2).any(|ax| {
        let sign = |t: usize| (a.state_at(t).unwrap().s[ax] - b.state_at(t).unwrap().s[ax]).signum();
        sign(lo) != sign(hi - 1)
    });
    close && swapped
}

fn in_bounds(k: &Track, p: &ModelParams, margin: f64) -> bool {
    let g = &p.geometry;
    let (hr, hc) = (g.pixel_size * (g.rows - 1) as f64 - margin, g.pixel_size * (g.cols - 1) as f64 - margin);
    k.states.iter().all(|x| x.s[0] >= margin && x.s[0] <= hr && x.s[1] >= margin && x.s[1] <= hc)
}

/// Draws track sets from the prior until one has exactly `cfg.targets`
/// tracks, all inside the margin, with at least one crossing pair.
pub fn crossing_scenario(seed: u64, cfg: &ScenarioConfig) -> Option<Scenario> {
    let params = true_params(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for attempt in 0..cfg.max_attempts {
        let truth = sample_prior_tracks(&params, &mut rng);
        if truth.len() != cfg.targets || !truth.iter().all(|k| in_bounds(k, &params, cfg.margin)) {
            continue;
        }
        let crossing = (0..truth.len())
            .any(|i| (i + 1..truth.len()).any(|j| crosses(&truth[i], &truth[j], cfg.crossing_distance)));
        if crossing {
            let y = sample_images(&truth, &params, &mut rng);
            return Some(Scenario { params, truth, y, attempts: attempt + 1 });
        }
    }
    None
}
