//! Shared oracles for the integration suites.
#![allow(dead_code)]

use mtt_core::filtering::GammaRule;
use mtt_core::model::{
    log_likelihood, render_frame, sample_images, sample_prior_tracks, states_at, DynamicsParams, Geometry, ImageStack,
    ModelParams, TargetState, Track,
};
use mtt_core::dynamics::{sample_initial, sample_transition};
use mtt_core::moves::MoveConfig;
use mtt_core::params::{
    sample_prior_theta, BetaPrior, GammaPrior, InvGamma, LearnConfig, MeanPrior, ObservationModel, PriorConfig,
};
use mtt_core::pgibbs::{refresh_all, CsmcConfig};
use mtt_core::representation::TrackSet;
use mtt_core::sampler::{init_chain, iterate, SamplerConfig};
use mtt_core::state::ChainState;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::function::erf::erfc;

pub const TOY_SIDE: usize = 4;
pub const TOY_CENTRE: f64 = (TOY_SIDE - 1) as f64 / 2.0;

/// Two-frame model small enough for direct integration.
pub fn toy_params() -> ModelParams {
    ModelParams::uniform(
        DynamicsParams::from_array([8.0, TOY_CENTRE, TOY_CENTRE, 1.0, 1.0, 0.25, 0.25, 0.1, 0.1]),
        0.7,
        0.3,
        0.0,
        1.0,
        2,
        Geometry::new(TOY_SIDE, TOY_SIDE, 1.0, 1.0, 5),
        1.0,
    )
}

/// Images of one target drifting across the toy frame.
pub fn toy_data(seed: u64) -> ImageStack {
    let p = toy_params();
    let a = p.psi.mu_bi;
    let s0 = [TOY_CENTRE - 0.4, TOY_CENTRE - 0.2];
    let truth = vec![Track::new(
        0,
        vec![TargetState::new(a, s0, [0.5, 0.0]), TargetState::new(a, [s0[0] + 0.5, s0[1]], [0.5, 0.0])],
    )];
    sample_images(&truth, &p, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Every local maximum is a birth candidate, so births are possible from
/// any state and the chain is irreducible on the toy.
pub fn toy_moves() -> MoveConfig {
    let mut m = MoveConfig::default();
    m.birth.gamma_rule = GammaRule::Fixed(-1e300);
    m
}

pub const TOY_CELLS: usize = 72;

/// Discrete summary: per-frame counts (capped at 2), whether any track spans
/// both frames, and the quadrant of the brightest target in the first
/// occupied frame.
pub fn toy_cell(tracks: &[Track]) -> usize {
    let count = |t: usize| tracks.iter().filter(|k| k.alive_at(t)).count().min(2);
    let (c0, c1) = (count(0), count(1));
    let surv = tracks.iter().any(|k| k.len() == 2) as usize;
    let frame = if c0 > 0 { Some(0) } else if c1 > 0 { Some(1) } else { None };
    let quad = frame.map_or(0, |t| {
        let x = tracks
            .iter()
            .filter_map(|k| k.state_at(t))
            .max_by(|a, b| a.a.total_cmp(&b.a))
            .expect("occupied frame");
        (x.s[0] > TOY_CENTRE) as usize * 2 + (x.s[1] > TOY_CENTRE) as usize
    });
    ((c0 * 3 + c1) * 2 + surv) * 4 + quad
}

/// Posterior over the toy cells by self-normalised importance sampling with
/// the prior as proposal.
pub fn toy_oracle(y: &ImageStack, p: &ModelParams, draws: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lw = Vec::with_capacity(draws);
    let mut cells = Vec::with_capacity(draws);
    for _ in 0..draws {
        let tracks = sample_prior_tracks(p, &mut rng);
        lw.push(log_likelihood(&tracks, p, y).unwrap());
        cells.push(toy_cell(&tracks));
    }
    let m = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out = vec![0.0; TOY_CELLS];
    for (l, c) in lw.iter().zip(cells) {
        out[c] += (l - m).exp();
    }
    normalise(out)
}

pub fn normalise(mut v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    v
}

/// Empirical cell frequencies of a move-only chain started empty.
pub fn toy_chain(y: &ImageStack, p: &ModelParams, moves: &MoveConfig, sweeps: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = init_chain(y, p.clone()).unwrap();
    let mut out = vec![0.0; TOY_CELLS];
    for _ in 0..sweeps / 10 {
        mtt_core::moves::sweep(&mut state, moves, &mut rng);
    }
    for _ in 0..sweeps {
        mtt_core::moves::sweep(&mut state, moves, &mut rng);
        out[toy_cell(state.tracks.tracks())] += 1.0;
    }
    normalise(out)
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Kolmogorov–Smirnov statistic of `xs` against `cdf` and its asymptotic
/// p-value.
pub fn ks_test(xs: &mut [f64], cdf: impl Fn(f64) -> f64) -> (f64, f64) {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max);
    (d, kolmogorov_sf((n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d))
}

/// Survival function of the Kolmogorov distribution.
pub fn kolmogorov_sf(x: f64) -> f64 {
    if x < 0.2 {
        return 1.0;
    }
    let s: f64 = (1..=100).map(|k| (-1f64).powi(k - 1) * (-2.0 * (k * k) as f64 * x * x).exp()).sum();
    (2.0 * s).clamp(0.0, 1.0)
}

/// Three 8×8 frames; θ in the template is overwritten by prior draws.
pub fn geweke_template() -> ModelParams {
    let mut p = toy_params();
    p.geometry = Geometry::new(8, 8, 1.0, 1.0, 5);
    p.background = vec![0.0; 3];
    p.noise_var = vec![1.0; 3];
    p
}

/// Proper priors concentrated on targets that stay inside the 8×8 field.
pub fn geweke_prior() -> PriorConfig {
    let ig = |mean: f64| InvGamma { alpha: 10.0, beta: 9.0 * mean };
    PriorConfig {
        var_bi: ig(1.0),
        var_bp: ig(1.0),
        var_bv: ig(0.04),
        var_i: ig(0.25),
        var_x: ig(0.01),
        var_y: ig(0.01),
        noise_var: ig(1.0),
        mu_bi: MeanPrior { mu0: 10.0, n0: 1.0 },
        mu_bx: MeanPrior { mu0: 3.5, n0: 2.0 },
        mu_by: MeanPrior { mu0: 3.5, n0: 2.0 },
        background: MeanPrior { mu0: 0.0, n0: 1.0 },
        survival: BetaPrior { a: 6.0, b: 2.0 },
        birth_rate: GammaPrior { alpha: 4.0, beta: 0.1 },
    }
}

/// One draw of (θ, tracks, images) from the joint prior.
pub fn joint_draw(prior: &PriorConfig, model: ObservationModel, rng: &mut ChaCha8Rng) -> (ModelParams, Vec<Track>, ImageStack) {
    let p = sample_prior_theta(&geweke_template(), prior, model, rng);
    let tracks = sample_prior_tracks(&p, rng);
    let y = sample_images(&tracks, &p, rng);
    (p, tracks, y)
}

/// Marginal-conditional simulator: independent joint draws.
pub fn marginal_draws<const D: usize>(
    n: usize,
    seed: u64,
    mut draw: impl FnMut(&mut ChaCha8Rng) -> (ModelParams, Vec<Track>, ImageStack),
    stat: impl Fn(&ModelParams, &[Track]) -> [f64; D],
) -> Vec<[f64; D]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let (p, tracks, _) = draw(&mut rng);
            stat(&p, &tracks)
        })
        .collect()
}

/// Successive-conditional simulator: alternate a posterior kernel with fresh
/// images drawn given the current state.
pub fn successive_draws<const D: usize>(
    n: usize,
    seed: u64,
    init: (ModelParams, Vec<Track>, ImageStack),
    mut kernel: impl FnMut(&mut ChainState, &ImageStack, &mut ChaCha8Rng),
    stat: impl Fn(&ModelParams, &[Track]) -> [f64; D],
) -> Vec<[f64; D]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (p, tracks, mut y) = init;
    let frames = p.frames();
    let mut state = ChainState::new(TrackSet::from_tracks(tracks, frames).unwrap(), p, &y).unwrap();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        kernel(&mut state, &y, &mut rng);
        y = sample_images(state.tracks.tracks(), &state.params, &mut rng);
        state.rebuild(&y);
        out.push(stat(&state.params, state.tracks.tracks()));
    }
    out
}

/// Two-sided p-values of the difference in means per statistic. The
/// successive sample's variance uses batch means to absorb autocorrelation.
pub fn geweke_pvalues<const D: usize>(marginal: &[[f64; D]], successive: &[[f64; D]], batches: usize) -> [f64; D] {
    std::array::from_fn(|d| {
        let m: Vec<f64> = marginal.iter().map(|x| x[d]).collect();
        let s: Vec<f64> = successive.iter().map(|x| x[d]).collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let var = |v: &[f64]| {
            let mu = mean(v);
            v.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (v.len() - 1) as f64
        };
        let size = s.len() / batches;
        let bm: Vec<f64> = s.chunks_exact(size).map(mean).collect();
        let se2 = var(&m) / m.len() as f64 + var(&bm) / bm.len() as f64;
        let z = (mean(&m) - mean(&s)) / se2.sqrt();
        if se2 == 0.0 {
            return if z.is_nan() { 1.0 } else { 0.0 };
        }
        erfc(z.abs() / std::f64::consts::SQRT_2)
    })
}

/// All three loops of the outer iteration, learning every block of θ.
pub fn geweke_sampler() -> SamplerConfig {
    SamplerConfig {
        n1: 10,
        n2: 1,
        n3: 1,
        prior: geweke_prior(),
        moves: toy_moves(),
        learn: LearnConfig { observation_model: ObservationModel::PerFrame, ..Default::default() },
        ..Default::default()
    }
}

/// K, p_s, λ_b and the mean birth intensity μ_bi.
pub fn sampler_stats(p: &ModelParams, tracks: &[Track]) -> [f64; 4] {
    [tracks.len() as f64, p.survival, p.birth_rate, p.psi.mu_bi]
}

/// Geweke p-values of `cfg` against draws from `prior`, which should be
/// the prior `cfg` targets for a correct kernel.
pub fn sampler_geweke(n: usize, prior: &PriorConfig, cfg: &SamplerConfig) -> [f64; 4] {
    let model = cfg.learn.observation_model;
    let m = marginal_draws(n, 1, |r| joint_draw(prior, model, r), sampler_stats);
    let init = joint_draw(prior, model, &mut ChaCha8Rng::seed_from_u64(2));
    let s = successive_draws(n, 3, init, |st, y, r| iterate(st, y, cfg, true, r).unwrap(), sampler_stats);
    geweke_pvalues(&m, &s, 50)
}

/// Fixed θ on the 8×8 field for the trajectory-only tests.
pub fn pgibbs_params() -> ModelParams {
    let mut p = geweke_template();
    p.psi = DynamicsParams::from_array([6.0, 3.5, 3.5, 1.0, 1.0, 0.04, 0.25, 0.01, 0.01]);
    p
}

/// Tracks with a fixed birth/death pattern (frames 0..3 and 1..3) and
/// states drawn from the dynamics, plus images.
pub fn fixed_pattern_draw(p: &ModelParams, rng: &mut ChaCha8Rng) -> (ModelParams, Vec<Track>, ImageStack) {
    let mut track = |birth: usize, len: usize| {
        let mut states = vec![sample_initial(&p.psi, rng)];
        while states.len() < len {
            let next = sample_transition(states.last().unwrap(), p, rng);
            states.push(next);
        }
        Track::new(birth, states)
    };
    let tracks = vec![track(0, 3), track(1, 2)];
    let y = sample_images(&tracks, p, rng);
    (p.clone(), tracks, y)
}

/// Mean intensity, mean position per axis and mean x-velocity over all
/// target states.
pub fn trajectory_stats(_: &ModelParams, tracks: &[Track]) -> [f64; 4] {
    let states: Vec<&TargetState> = tracks.iter().flat_map(|k| k.states.iter()).collect();
    let n = states.len() as f64;
    let mean = |f: &dyn Fn(&TargetState) -> f64| states.iter().map(|x| f(x)).sum::<f64>() / n;
    [mean(&|x| x.a), mean(&|x| x.s[0]), mean(&|x| x.s[1]), mean(&|x| x.v[0])]
}

/// Geweke p-values of the particle Gibbs pass with θ and the pattern fixed.
pub fn pgibbs_geweke(n: usize, cfg: &CsmcConfig) -> [f64; 4] {
    let p = pgibbs_params();
    let m = marginal_draws(n, 4, |r| fixed_pattern_draw(&p, r), trajectory_stats);
    let init = fixed_pattern_draw(&p, &mut ChaCha8Rng::seed_from_u64(5));
    let s = successive_draws(n, 6, init, |st, _, r| refresh_all(st, cfg, r).unwrap(), trajectory_stats);
    geweke_pvalues(&m, &s, 50)
}

/// Bonferroni-corrected pass at level `alpha`.
pub fn geweke_pass(p: &[f64], alpha: f64) -> bool {
    p.iter().all(|&x| x * p.len() as f64 > alpha)
}

pub fn still(birth: usize, len: usize) -> Track {
    let x = TargetState::new(5.0, [2.0, 2.0], [0.0, 0.0]);
    Track::new(birth, vec![x; len])
}

/// Five survivals, two deaths and three births over six frames.
pub fn counted_tracks() -> Vec<Track> {
    vec![still(0, 4), still(2, 3), still(5, 1)]
}

pub fn informative_prior() -> PriorConfig {
    PriorConfig {
        var_bi: InvGamma { alpha: 2.0, beta: 3.0 },
        var_bp: InvGamma { alpha: 3.0, beta: 1.0 },
        var_bv: InvGamma { alpha: 1.5, beta: 0.2 },
        var_i: InvGamma { alpha: 2.5, beta: 0.5 },
        var_x: InvGamma { alpha: 3.0, beta: 0.1 },
        var_y: InvGamma { alpha: 4.0, beta: 0.2 },
        noise_var: InvGamma { alpha: 2.0, beta: 2.0 },
        mu_bi: MeanPrior { mu0: 20.0, n0: 0.5 },
        mu_bx: MeanPrior { mu0: 3.0, n0: 1.0 },
        mu_by: MeanPrior { mu0: 4.0, n0: 2.0 },
        background: MeanPrior { mu0: 1.0, n0: 0.3 },
        survival: BetaPrior { a: 1.0, b: 1.0 },
        birth_rate: GammaPrior { alpha: 0.01, beta: 100.0 },
    }
}

pub fn observation_setup() -> (ModelParams, Vec<Track>, ImageStack) {
    let mut p = pgibbs_params();
    p.geometry = Geometry::new(6, 6, 1.0, 1.0, 5);
    p.background = vec![2.0, -1.0, 0.5];
    p.noise_var = vec![1.5, 0.7, 1.0];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (_, tracks, _) = fixed_pattern_draw(&p, &mut rng);
    let y = sample_images(&tracks, &p, &mut rng);
    (p, tracks, y)
}

/// `y − Σh` for frame `t`, which is background plus noise.
pub fn target_free(y: &ImageStack, tracks: &[Track], p: &ModelParams, t: usize) -> Vec<f64> {
    let mean = render_frame(&states_at(tracks, t), t, p);
    y.frame(t).iter().zip(mean).map(|(a, m)| a - (m - p.background[t])).collect()
}

pub fn dynamics_tracks(psi: [f64; 9], delta: f64, count: usize, len: usize, seed: u64) -> (ModelParams, Vec<Track>) {
    let mut p = pgibbs_params();
    p.psi = DynamicsParams::from_array(psi);
    p.delta = delta;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tracks = (0..count)
        .map(|_| {
            let mut states = vec![sample_initial(&p.psi, &mut rng)];
            while states.len() < len {
                let next = sample_transition(states.last().unwrap(), &p, &mut rng);
                states.push(next);
            }
            Track::new(0, states)
        })
        .collect();
    (p, tracks)
}
