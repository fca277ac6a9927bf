//! Parameter learning: conjugate Gibbs updates, a random-walk
//! Metropolis–Hastings fallback and the surrogate MLE used as a reference.

use std::collections::BTreeMap;

use nalgebra::{Matrix2, Vector2};
use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::dynamics::motion_cov;
use crate::error::{Error, Result};
use crate::filtering::residual_frame;
use crate::metrics::theta_names;
use crate::model::{log_joint, states_at, track_counts, DynamicsParams, ImageStack, ModelParams, Track};
use crate::state::ChainState;

/// Inverse-gamma prior with shape `alpha` and scale `beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InvGamma {
    pub alpha: f64,
    pub beta: f64,
}

impl InvGamma {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        1.0 / Gamma::new(self.alpha, 1.0 / self.beta).expect("valid inverse-gamma").sample(rng)
    }

    pub fn log_density(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return f64::NEG_INFINITY;
        }
        self.alpha * self.beta.ln() - ln_gamma(self.alpha) - (self.alpha + 1.0) * x.ln() - self.beta / x
    }
}

/// Normal prior on a mean conditional on its group variance: `N(mu0, σ²/n0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanPrior {
    pub mu0: f64,
    pub n0: f64,
}

/// Gamma prior with shape `alpha` and scale `beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaPrior {
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaPrior {
    pub a: f64,
    pub b: f64,
}

/// Hyperparameters of every prior on θ. Each variance group has its own
/// inverse-gamma prior; the defaults are the same diffuse choice for all.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorConfig {
    pub var_bi: InvGamma,
    pub var_bp: InvGamma,
    pub var_bv: InvGamma,
    pub var_i: InvGamma,
    pub var_x: InvGamma,
    pub var_y: InvGamma,
    pub noise_var: InvGamma,
    pub mu_bi: MeanPrior,
    pub mu_bx: MeanPrior,
    pub mu_by: MeanPrior,
    pub background: MeanPrior,
    pub survival: BetaPrior,
    pub birth_rate: GammaPrior,
}

impl Default for PriorConfig {
    fn default() -> Self {
        let ig = InvGamma { alpha: 0.01, beta: 0.01 };
        let mean = MeanPrior { mu0: 0.0, n0: 0.01 };
        Self {
            var_bi: ig,
            var_bp: ig,
            var_bv: ig,
            var_i: ig,
            var_x: ig,
            var_y: ig,
            noise_var: ig,
            mu_bi: mean,
            mu_bx: mean,
            mu_by: mean,
            background: mean,
            survival: BetaPrior { a: 1.0, b: 1.0 },
            birth_rate: GammaPrior { alpha: 0.01, beta: 100.0 },
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        let igs = [self.var_bi, self.var_bp, self.var_bv, self.var_i, self.var_x, self.var_y, self.noise_var];
        let means = [self.mu_bi, self.mu_bx, self.mu_by, self.background];
        let ok = igs.iter().all(|p| p.alpha > 0.0 && p.beta > 0.0)
            && means.iter().all(|m| m.n0 > 0.0 && m.mu0.is_finite())
            && self.survival.a > 0.0
            && self.survival.b > 0.0
            && self.birth_rate.alpha > 0.0
            && self.birth_rate.beta > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParams("prior hyperparameters must be positive".into()))
        }
    }
}

/// How background and noise variance are tied across frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationModel {
    /// Independent (b_t, σ²_t) per frame.
    #[default]
    PerFrame,
    /// One (b, σ²) shared by every frame.
    Pooled,
    /// Backgrounds held fixed; one shared σ².
    NoiseOnly,
}

/// Which parts of θ the Gibbs step refreshes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnConfig {
    pub discrete: bool,
    pub observation: bool,
    pub dynamics: bool,
    pub observation_model: ObservationModel,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self { discrete: true, observation: true, dynamics: true, observation_model: ObservationModel::PerFrame }
    }
}

/// Normal–inverse-gamma posterior over `(μ, σ²)` for iid normal data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NigPosterior {
    pub mean: f64,
    pub n: f64,
    pub ig: InvGamma,
}

/// Sufficient statistics `(count, sum, centred sum of squares)` of a sample.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub m: f64,
    pub sum: f64,
    pub css: f64,
}

impl Moments {
    pub fn of(xs: impl IntoIterator<Item = f64>) -> Self {
        // Welford accumulation keeps the centred sum accurate.
        let (mut m, mut mean, mut css) = (0.0, 0.0, 0.0);
        for x in xs {
            m += 1.0;
            let d = x - mean;
            mean += d / m;
            css += d * (x - mean);
        }
        Self { m, sum: mean * m, css }
    }

    pub fn mean(&self) -> f64 {
        self.sum / self.m
    }

    pub fn merge(&self, o: &Moments) -> Moments {
        if self.m == 0.0 {
            return *o;
        }
        if o.m == 0.0 {
            return *self;
        }
        let m = self.m + o.m;
        let d = o.mean() - self.mean();
        Moments { m, sum: self.sum + o.sum, css: self.css + o.css + d * d * self.m * o.m / m }
    }
}

/// Posterior of a normal group with NIG prior `(prior_mean, prior_ig)`.
pub fn nig_posterior(data: &Moments, mean: MeanPrior, ig: InvGamma) -> NigPosterior {
    let n = mean.n0 + data.m;
    if data.m == 0.0 {
        return NigPosterior { mean: mean.mu0, n, ig };
    }
    let xbar = data.mean();
    NigPosterior {
        mean: (mean.n0 * mean.mu0 + data.sum) / n,
        n,
        ig: InvGamma {
            alpha: ig.alpha + 0.5 * data.m,
            beta: ig.beta + 0.5 * data.css + 0.5 * mean.n0 * data.m * (xbar - mean.mu0).powi(2) / n,
        },
    }
}

impl NigPosterior {
    /// Draws `(μ, σ²)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        let var = self.ig.sample(rng);
        let mu = Normal::new(self.mean, (var / self.n).sqrt()).expect("finite").sample(rng);
        (mu, var)
    }
}

/// Statistics of a track set entering the dynamics updates.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrackStats {
    pub init_a: Moments,
    pub init_x: Moments,
    pub init_y: Moments,
    /// Number of tracks and Σ(v_x² + v_y²) at birth.
    pub init_v: (f64, f64),
    /// Number of intensity increments and their sum of squares.
    pub increments: (f64, f64),
    /// Number of transitions and the whitened innovation sums per axis.
    pub innovations: (f64, [f64; 2]),
}

/// `Σ uᵀ S⁻¹ u` over innovation pairs `u = (position, velocity)`.
pub fn whitened_sum(u: &[[f64; 2]], s: &Matrix2<f64>) -> f64 {
    let inv = s.try_inverse().expect("positive definite");
    u.iter()
        .map(|w| {
            let v = Vector2::new(w[0], w[1]);
            v.dot(&(inv * v))
        })
        .sum()
}

/// Per-axis innovations `(s_t − s_{t−1} − δ v_{t−1}, v_t − v_{t−1})`.
pub fn innovations(tracks: &[Track], delta: f64) -> [Vec<[f64; 2]>; 2] {
    let mut out = [Vec::new(), Vec::new()];
    for k in tracks {
        for w in k.states.windows(2) {
            for (d, o) in out.iter_mut().enumerate() {
                o.push([w[1].s[d] - w[0].s[d] - delta * w[0].v[d], w[1].v[d] - w[0].v[d]]);
            }
        }
    }
    out
}

impl TrackStats {
    pub fn of(tracks: &[Track], delta: f64) -> Self {
        let sigma = motion_cov(1.0, delta);
        let [ux, uy] = innovations(tracks, delta);
        let (mut nd, mut sd) = (0.0, 0.0);
        for k in tracks {
            for w in k.states.windows(2) {
                nd += 1.0;
                sd += (w[1].a - w[0].a).powi(2);
            }
        }
        Self {
            init_a: Moments::of(tracks.iter().map(|k| k.first().a)),
            init_x: Moments::of(tracks.iter().map(|k| k.first().s[0])),
            init_y: Moments::of(tracks.iter().map(|k| k.first().s[1])),
            init_v: (
                tracks.len() as f64,
                tracks.iter().map(|k| k.first().v[0].powi(2) + k.first().v[1].powi(2)).sum(),
            ),
            increments: (nd, sd),
            innovations: (ux.len() as f64, [whitened_sum(&ux, &sigma), whitened_sum(&uy, &sigma)]),
        }
    }
}

/// Draws (p_s, λ_b) from their conjugate posteriors.
pub fn update_discrete_params<R: Rng + ?Sized>(
    tracks: &[Track],
    frames: usize,
    prior: &PriorConfig,
    rng: &mut R,
) -> (f64, f64) {
    let (births, survivals, deaths) = track_counts(tracks, frames);
    let kb: usize = births.iter().sum();
    let ps = Beta::new(prior.survival.a + survivals as f64, prior.survival.b + deaths as f64)
        .expect("valid beta")
        .sample(rng);
    let rate = birth_rate_posterior(kb, frames, prior.birth_rate);
    let lambda = Gamma::new(rate.alpha, rate.beta).expect("valid gamma").sample(rng);
    (ps, lambda)
}

/// Gamma posterior (shape, scale) of λ_b after `kb` births in `frames` frames.
pub fn birth_rate_posterior(kb: usize, frames: usize, prior: GammaPrior) -> GammaPrior {
    GammaPrior { alpha: prior.alpha + kb as f64, beta: 1.0 / (1.0 / prior.beta + frames as f64) }
}

/// Per-frame moments of `y − Σh(x)` (background not removed).
fn observation_moments(tracks: &[Track], y: &ImageStack, params: &ModelParams) -> Vec<Moments> {
    (0..params.frames())
        .map(|t| {
            let res = residual_frame(y.frame(t), &states_at(tracks, t), t, params);
            let b = params.background[t];
            Moments::of(res.values.iter().map(|r| r + b))
        })
        .collect()
}

/// Draws backgrounds and noise variances from their conditionals.
pub fn update_observation_params<R: Rng + ?Sized>(
    tracks: &[Track],
    y: &ImageStack,
    params: &ModelParams,
    prior: &PriorConfig,
    model: ObservationModel,
    rng: &mut R,
) -> (Vec<f64>, Vec<f64>) {
    let moments = observation_moments(tracks, y, params);
    let n = params.frames();
    match model {
        ObservationModel::PerFrame => moments
            .iter()
            .map(|m| nig_posterior(m, prior.background, prior.noise_var).sample(rng))
            .unzip(),
        ObservationModel::Pooled => {
            let all = moments.iter().fold(Moments::default(), |a, m| a.merge(m));
            let (b, v) = nig_posterior(&all, prior.background, prior.noise_var).sample(rng);
            (vec![b; n], vec![v; n])
        }
        ObservationModel::NoiseOnly => {
            let (mut m, mut ss) = (0.0, 0.0);
            for (t, mo) in moments.iter().enumerate() {
                let d = mo.mean() - params.background[t];
                m += mo.m;
                ss += mo.css + mo.m * d * d;
            }
            let ig = InvGamma { alpha: prior.noise_var.alpha + 0.5 * m, beta: prior.noise_var.beta + 0.5 * ss };
            (params.background.clone(), vec![ig.sample(rng); n])
        }
    }
}

/// Draws ψ from its conjugate conditionals given the tracks.
pub fn update_dynamics_params<R: Rng + ?Sized>(
    tracks: &[Track],
    delta: f64,
    prior: &PriorConfig,
    rng: &mut R,
) -> DynamicsParams {
    let st = TrackStats::of(tracks, delta);
    let (mu_bi, var_bi) = nig_posterior(&st.init_a, prior.mu_bi, prior.var_bi).sample(rng);
    // Shared σ_bp²: both axes contribute to one inverse gamma, then each mean
    // is drawn from its own normal conditional.
    let px = nig_posterior(&st.init_x, prior.mu_bx, prior.var_bp);
    let py = nig_posterior(&st.init_y, prior.mu_by, prior.var_bp);
    let var_bp = InvGamma {
        alpha: prior.var_bp.alpha + 0.5 * (st.init_x.m + st.init_y.m),
        beta: prior.var_bp.beta + (px.ig.beta - prior.var_bp.beta) + (py.ig.beta - prior.var_bp.beta),
    }
    .sample(rng);
    let mu_bx = Normal::new(px.mean, (var_bp / px.n).sqrt()).unwrap().sample(rng);
    let mu_by = Normal::new(py.mean, (var_bp / py.n).sqrt()).unwrap().sample(rng);
    let ig = |p: InvGamma, count: f64, ss: f64| InvGamma { alpha: p.alpha + 0.5 * count, beta: p.beta + 0.5 * ss };
    let var_bv = ig(prior.var_bv, 2.0 * st.init_v.0, st.init_v.1).sample(rng);
    let var_i = ig(prior.var_i, st.increments.0, st.increments.1).sample(rng);
    let (m, [wx, wy]) = st.innovations;
    let var_x = ig(prior.var_x, 2.0 * m, wx).sample(rng);
    let var_y = ig(prior.var_y, 2.0 * m, wy).sample(rng);
    DynamicsParams { mu_bi, mu_bx, mu_by, var_bi, var_bp, var_bv, var_i, var_x, var_y }
}

/// One Gibbs pass over the parameter blocks enabled in `cfg`.
pub fn gibbs_update<R: Rng + ?Sized>(
    state: &mut ChainState,
    y: &ImageStack,
    prior: &PriorConfig,
    cfg: &LearnConfig,
    rng: &mut R,
) {
    let mut p = state.params.clone();
    let tracks = state.tracks.tracks();
    if cfg.discrete {
        (p.survival, p.birth_rate) = update_discrete_params(tracks, p.frames(), prior, rng);
    }
    if cfg.observation {
        (p.background, p.noise_var) = update_observation_params(tracks, y, &p, prior, cfg.observation_model, rng);
    }
    if cfg.dynamics {
        p.psi = update_dynamics_params(tracks, p.delta, prior, rng);
    }
    state.set_params(p, y);
}

/// Log prior density of θ, over the blocks tied according to `model`.
pub fn log_prior_theta(params: &ModelParams, prior: &PriorConfig, model: ObservationModel) -> f64 {
    let psi = &params.psi;
    let normal = |x: f64, m: MeanPrior, var: f64| crate::gaussian::log_normal(x, m.mu0, var / m.n0);
    let mut lp = prior.var_bi.log_density(psi.var_bi)
        + prior.var_bp.log_density(psi.var_bp)
        + prior.var_bv.log_density(psi.var_bv)
        + prior.var_i.log_density(psi.var_i)
        + prior.var_x.log_density(psi.var_x)
        + prior.var_y.log_density(psi.var_y)
        + normal(psi.mu_bi, prior.mu_bi, psi.var_bi)
        + normal(psi.mu_bx, prior.mu_bx, psi.var_bp)
        + normal(psi.mu_by, prior.mu_by, psi.var_bp);
    let (a, b) = (prior.survival.a, prior.survival.b);
    lp += if (0.0..=1.0).contains(&params.survival) {
        (a - 1.0) * params.survival.ln() + (b - 1.0) * (1.0 - params.survival).ln() + ln_gamma(a + b)
            - ln_gamma(a)
            - ln_gamma(b)
    } else {
        f64::NEG_INFINITY
    };
    let g = prior.birth_rate;
    lp += (g.alpha - 1.0) * params.birth_rate.ln() - params.birth_rate / g.beta - ln_gamma(g.alpha) - g.alpha * g.beta.ln();
    let frames = match model {
        ObservationModel::PerFrame => params.frames(),
        ObservationModel::Pooled | ObservationModel::NoiseOnly => 1,
    };
    for t in 0..frames {
        lp += prior.noise_var.log_density(params.noise_var[t]);
        if model != ObservationModel::NoiseOnly {
            lp += normal(params.background[t], prior.background, params.noise_var[t]);
        }
    }
    lp
}

/// Draws θ from the prior. Geometry, δ and frame count come from `template`,
/// as do the backgrounds when they are held fixed.
pub fn sample_prior_theta<R: Rng + ?Sized>(
    template: &ModelParams,
    prior: &PriorConfig,
    model: ObservationModel,
    rng: &mut R,
) -> ModelParams {
    fn normal<R: Rng + ?Sized>(m: MeanPrior, var: f64, rng: &mut R) -> f64 {
        Normal::new(m.mu0, (var / m.n0).sqrt()).expect("finite").sample(rng)
    }
    let mut p = template.clone();
    let var_bi = prior.var_bi.sample(rng);
    let mu_bi = normal(prior.mu_bi, var_bi, rng);
    let var_bp = prior.var_bp.sample(rng);
    let mu_bx = normal(prior.mu_bx, var_bp, rng);
    let mu_by = normal(prior.mu_by, var_bp, rng);
    p.psi = DynamicsParams {
        mu_bi,
        mu_bx,
        mu_by,
        var_bi,
        var_bp,
        var_bv: prior.var_bv.sample(rng),
        var_i: prior.var_i.sample(rng),
        var_x: prior.var_x.sample(rng),
        var_y: prior.var_y.sample(rng),
    };
    p.survival = Beta::new(prior.survival.a, prior.survival.b).expect("valid beta").sample(rng);
    p.birth_rate = Gamma::new(prior.birth_rate.alpha, prior.birth_rate.beta).expect("valid gamma").sample(rng);
    let n = p.frames();
    let draw = |rng: &mut R| {
        let v = prior.noise_var.sample(rng);
        (normal(prior.background, v, rng), v)
    };
    match model {
        ObservationModel::PerFrame => (p.background, p.noise_var) = (0..n).map(|_| draw(rng)).unzip(),
        ObservationModel::Pooled => {
            let (b, v) = draw(rng);
            (p.background, p.noise_var) = (vec![b; n], vec![v; n]);
        }
        ObservationModel::NoiseOnly => p.noise_var = vec![prior.noise_var.sample(rng); n],
    }
    p
}

/// Scale on which a random-walk proposal acts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Identity,
    Log,
    Logit,
}

impl Scale {
    fn forward(self, x: f64) -> f64 {
        match self {
            Scale::Identity => x,
            Scale::Log => x.ln(),
            Scale::Logit => (x / (1.0 - x)).ln(),
        }
    }

    fn inverse(self, u: f64) -> f64 {
        match self {
            Scale::Identity => u,
            Scale::Log => u.exp(),
            Scale::Logit => 1.0 / (1.0 + (-u).exp()),
        }
    }

    /// log |dx/du| at `x`.
    fn log_jacobian(self, x: f64) -> f64 {
        match self {
            Scale::Identity => 0.0,
            Scale::Log => x.ln(),
            Scale::Logit => x.ln() + (1.0 - x).ln(),
        }
    }
}

/// One Gaussian random-walk MH step on a transformed scale, with the
/// Jacobian included. Returns the new value and whether it was accepted.
pub fn mh_step<R: Rng + ?Sized>(
    x: f64,
    step: f64,
    scale: Scale,
    log_target: impl Fn(f64) -> f64,
    rng: &mut R,
) -> (f64, bool) {
    if step == 0.0 {
        return (x, true);
    }
    let u = scale.forward(x) + step * crate::gaussian::std_normal(rng);
    let x_new = scale.inverse(u);
    let lr = log_target(x_new) + scale.log_jacobian(x_new) - log_target(x) - scale.log_jacobian(x);
    if !lr.is_nan() && (lr >= 0.0 || rng.random::<f64>().ln() < lr) {
        (x_new, true)
    } else {
        (x, false)
    }
}

/// Random-walk step sizes for the MH parameter update; zero disables a
/// component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MhConfig {
    /// Steps for the nine ψ components (identity scale for means, log scale
    /// for variances).
    pub psi: [f64; 9],
    pub survival: f64,
    pub birth_rate: f64,
    /// Log-scale step for the shared or per-frame noise variance.
    pub noise_var: f64,
}

impl Default for MhConfig {
    fn default() -> Self {
        Self { psi: [0.0; 9], survival: 0.0, birth_rate: 0.0, noise_var: 0.0 }
    }
}

/// Component-wise random-walk MH on θ targeting its full conditional.
pub fn mh_update<R: Rng + ?Sized>(
    state: &mut ChainState,
    y: &ImageStack,
    prior: &PriorConfig,
    model: ObservationModel,
    cfg: &MhConfig,
    rng: &mut R,
) -> Result<usize> {
    let tracks = state.tracks.tracks().to_vec();
    let target = |p: &ModelParams| -> f64 {
        if p.validate().is_err() {
            return f64::NEG_INFINITY;
        }
        log_prior_theta(p, prior, model) + log_joint(&tracks, p, y).unwrap_or(f64::NEG_INFINITY)
    };
    let mut p = state.params.clone();
    let mut accepted = 0;
    for (i, &step) in cfg.psi.iter().enumerate() {
        if step == 0.0 {
            continue;
        }
        let scale = if i < 3 { Scale::Identity } else { Scale::Log };
        let base = p.clone();
        let set = |v: f64| {
            let mut q = base.clone();
            let mut a = q.psi.to_array();
            a[i] = v;
            q.psi = DynamicsParams::from_array(a);
            q
        };
        let (v, ok) = mh_step(base.psi.to_array()[i], step, scale, |v| target(&set(v)), rng);
        p = set(v);
        accepted += ok as usize;
    }
    if cfg.survival > 0.0 {
        let base = p.clone();
        let set = |v: f64| ModelParams { survival: v, ..base.clone() };
        let (v, ok) = mh_step(base.survival, cfg.survival, Scale::Logit, |v| target(&set(v)), rng);
        p = set(v);
        accepted += ok as usize;
    }
    if cfg.birth_rate > 0.0 {
        let base = p.clone();
        let set = |v: f64| ModelParams { birth_rate: v, ..base.clone() };
        let (v, ok) = mh_step(base.birth_rate, cfg.birth_rate, Scale::Log, |v| target(&set(v)), rng);
        p = set(v);
        accepted += ok as usize;
    }
    if cfg.noise_var > 0.0 && model != ObservationModel::PerFrame {
        let base = p.clone();
        let n = base.frames();
        let set = |v: f64| ModelParams { noise_var: vec![v; n], ..base.clone() };
        let (v, ok) = mh_step(base.noise_var[0], cfg.noise_var, Scale::Log, |v| target(&set(v)), rng);
        p = set(v);
        accepted += ok as usize;
    }
    state.set_params(p, y);
    Ok(accepted)
}

/// A surrogate-MLE component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimate {
    Value(f64),
    /// Empty denominator: no data informs the component.
    Undefined,
    /// The maximiser is a variance at its zero boundary.
    ZeroLimit,
}

impl Estimate {
    pub fn value(&self) -> Option<f64> {
        match self {
            Estimate::Value(v) => Some(*v),
            _ => None,
        }
    }

    fn ratio(num: f64, den: f64) -> Self {
        if den == 0.0 {
            Estimate::Undefined
        } else {
            Estimate::Value(num / den)
        }
    }

    fn variance(ss: f64, den: f64) -> Self {
        if den == 0.0 {
            Estimate::Undefined
        } else if ss <= f64::EPSILON * den {
            Estimate::ZeroLimit
        } else {
            Estimate::Value(ss / den)
        }
    }
}

/// Maximisers of p(z*), p(x*|z*) and p(y|x*, z*) taken separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateMle {
    pub psi: [Estimate; 9],
    pub survival: Estimate,
    pub birth_rate: Estimate,
    /// One entry per frame, or a single shared entry; empty when the
    /// backgrounds are held fixed.
    pub background: Vec<Estimate>,
    pub noise_var: Vec<Estimate>,
}

impl SurrogateMle {
    /// Estimates keyed by θ column name. Components held fixed under `model`
    /// are absent.
    pub fn by_name(&self, frames: usize, model: ObservationModel) -> BTreeMap<String, Estimate> {
        let names = theta_names(frames);
        let mut out = BTreeMap::new();
        for (name, e) in names.iter().zip(self.psi.iter().chain([&self.survival, &self.birth_rate])) {
            out.insert(name.clone(), *e);
        }
        for t in 0..frames {
            let pick = |v: &[Estimate]| if v.len() == frames { v.get(t).copied() } else { v.first().copied() };
            if model != ObservationModel::NoiseOnly {
                if let Some(e) = pick(&self.background) {
                    out.insert(format!("background_{}", t + 1), e);
                }
            }
            if let Some(e) = pick(&self.noise_var) {
                out.insert(format!("noise_var_{}", t + 1), e);
            }
        }
        out
    }
}

pub fn surrogate_mle(
    tracks: &[Track],
    y: &ImageStack,
    params: &ModelParams,
    model: ObservationModel,
) -> SurrogateMle {
    let n = params.frames();
    let (births, survivals, deaths) = track_counts(tracks, n);
    let kb: usize = births.iter().sum();
    let st = TrackStats::of(tracks, params.delta);
    let k = tracks.len() as f64;
    let (m, [wx, wy]) = st.innovations;
    let psi = [
        Estimate::ratio(st.init_a.sum, k),
        Estimate::ratio(st.init_x.sum, k),
        Estimate::ratio(st.init_y.sum, k),
        Estimate::variance(st.init_a.css, k),
        Estimate::variance(st.init_x.css + st.init_y.css, 2.0 * k),
        Estimate::variance(st.init_v.1, 2.0 * k),
        Estimate::variance(st.increments.1, st.increments.0),
        Estimate::variance(wx, 2.0 * m),
        Estimate::variance(wy, 2.0 * m),
    ];
    let moments = observation_moments(tracks, y, params);
    let (background, noise_var) = match model {
        ObservationModel::PerFrame => moments
            .iter()
            .map(|mo| (Estimate::ratio(mo.sum, mo.m), Estimate::variance(mo.css, mo.m)))
            .unzip(),
        ObservationModel::Pooled => {
            let all = moments.iter().fold(Moments::default(), |a, m| a.merge(m));
            (vec![Estimate::ratio(all.sum, all.m)], vec![Estimate::variance(all.css, all.m)])
        }
        ObservationModel::NoiseOnly => {
            let (mut cnt, mut ss) = (0.0, 0.0);
            for (t, mo) in moments.iter().enumerate() {
                let d = mo.mean() - params.background[t];
                cnt += mo.m;
                ss += mo.css + mo.m * d * d;
            }
            (Vec::new(), vec![Estimate::variance(ss, cnt)])
        }
    };
    SurrogateMle {
        psi,
        survival: Estimate::ratio(survivals as f64, (survivals + deaths) as f64),
        birth_rate: Estimate::ratio(kb as f64, n as f64),
        background,
        noise_var,
    }
}
